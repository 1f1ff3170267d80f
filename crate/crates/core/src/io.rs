//! On-disk JSON formats: instances, allocations and eating traces.
//!
//! All numbers are accepted either as JSON numbers or as decimal strings
//! (`"0.1"`, `"1e-4"`) or fractions (`"2/3"`); they are parsed into exact
//! rationals and converted to the scalar of the run, so exact-mode runs
//! see the literal values with no binary rounding.

use std::collections::BTreeMap;

use num_rational::BigRational;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::model::{
    Allocation, CardinalInstance, LaminarGroup, Mode, OrdinalInstance, Provenance,
    SubmodularOracle,
};
use crate::scalar::{parse_rational, Scalar};
use crate::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

/// Raw number wrapper: holds the exact rational parsed from the source.
#[derive(Debug, Clone, PartialEq)]
pub struct Num(pub BigRational);

impl Serialize for Num {
    fn serialize<Ser: serde::Serializer>(&self, s: Ser) -> std::result::Result<Ser::Ok, Ser::Error> {
        Scalar::to_json(&self.0).serialize(s)
    }
}

impl<'de> Deserialize<'de> for Num {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let v = Value::deserialize(d)?;
        let r = match &v {
            Value::Number(n) => parse_rational(&n.to_string()),
            Value::String(s) => parse_rational(s),
            other => Err(Error::Parse(format!("expected number, got {other}"))),
        }
        .map_err(serde::de::Error::custom)?;
        Ok(Num(r))
    }
}

impl Num {
    pub fn to_scalar<S: Scalar>(&self) -> S {
        S::from_rational(&self.0)
    }

    pub fn from_scalar<S: Scalar>(v: &S) -> Result<Num> {
        let json = v.to_json();
        let r = match &json {
            Value::Number(n) => parse_rational(&n.to_string())?,
            Value::String(s) => parse_rational(s)?,
            other => return Err(Error::Parse(format!("non-numeric scalar {other}"))),
        };
        Ok(Num(r))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum RhoFile {
    Cardinality,
    Capacities {
        s: Vec<Num>,
    },
    Coverage {
        covers: Vec<Vec<usize>>,
    },
    Table {
        sets: BTreeMap<String, Num>,
    },
    Laminar {
        #[serde(default)]
        item_caps: Option<Vec<Num>>,
        groups: Vec<GroupFile>,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroupFile {
    pub members: Vec<usize>,
    pub cap: Num,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeTag {
    Goods,
    Chores,
    Ordinal,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InstanceFile {
    #[serde(default = "schema_default")]
    pub schema: u32,
    pub mode: ModeTag,
    pub agents: usize,
    pub items: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub values: Option<Vec<Vec<Num>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub orders: Option<Vec<Vec<usize>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<RhoFile>,
}

fn schema_default() -> u32 {
    SCHEMA_VERSION
}

pub fn schema_default_pub() -> u32 {
    SCHEMA_VERSION
}

impl InstanceFile {
    pub fn parse(text: &str) -> Result<InstanceFile> {
        let file: InstanceFile =
            serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        file.check_shape()?;
        Ok(file)
    }

    fn check_shape(&self) -> Result<()> {
        match self.mode {
            ModeTag::Ordinal => {
                let orders = self
                    .orders
                    .as_ref()
                    .ok_or_else(|| Error::Invalid("ordinal instance needs `orders`".into()))?;
                if orders.len() != self.agents {
                    return Err(Error::Invalid("`orders` row count != agents".into()));
                }
            }
            _ => {
                let values = self
                    .values
                    .as_ref()
                    .ok_or_else(|| Error::Invalid("cardinal instance needs `values`".into()))?;
                if values.len() != self.agents {
                    return Err(Error::Invalid("`values` row count != agents".into()));
                }
                if values.iter().any(|r| r.len() != self.items) {
                    return Err(Error::Invalid("`values` row length != items".into()));
                }
            }
        }
        Ok(())
    }

    pub fn rho_oracle<S: Scalar>(&self) -> Result<SubmodularOracle<S>> {
        rho_from_file(self.rho.as_ref(), self.items)
    }

    pub fn cardinal<S: Scalar>(&self) -> Result<CardinalInstance<S>> {
        let mode = match self.mode {
            ModeTag::Goods => Mode::Goods,
            ModeTag::Chores => Mode::Chores,
            ModeTag::Ordinal => {
                return Err(Error::Invalid(
                    "ordinal instance has no cardinal values".into(),
                ))
            }
        };
        let values = self
            .values
            .as_ref()
            .ok_or_else(|| Error::Invalid("missing `values`".into()))?
            .iter()
            .map(|row| row.iter().map(Num::to_scalar).collect())
            .collect();
        CardinalInstance::new(mode, values, Some(self.rho_oracle()?))
    }

    pub fn ordinal(&self) -> Result<OrdinalInstance> {
        match (&self.orders, &self.values) {
            (Some(orders), _) => Ok(OrdinalInstance {
                n_items: self.items,
                orders: orders.clone(),
            }),
            (None, Some(_)) => {
                // Cardinal instances induce their ordinal counterpart.
                let inst: CardinalInstance<BigRational> = self.cardinal()?;
                Ok(inst.induced_ordinal())
            }
            (None, None) => Err(Error::Invalid("instance has neither orders nor values".into())),
        }
    }
}

pub fn rho_from_file<S: Scalar>(rho: Option<&RhoFile>, n_items: usize) -> Result<SubmodularOracle<S>> {
    let oracle = match rho {
        None | Some(RhoFile::Cardinality) => SubmodularOracle::cardinality(n_items),
        Some(RhoFile::Capacities { s }) => {
            if s.len() != n_items {
                return Err(Error::Invalid("capacities length != items".into()));
            }
            SubmodularOracle::capacities(s.iter().map(Num::to_scalar).collect())
        }
        Some(RhoFile::Coverage { covers }) => {
            if covers.len() != n_items {
                return Err(Error::Invalid("coverage needs one cover per item".into()));
            }
            let mut masks = Vec::with_capacity(covers.len());
            for cover in covers {
                if cover.iter().any(|&p| p >= 64) {
                    return Err(Error::Invalid("coverage universe points must be < 64".into()));
                }
                masks.push(cover.iter().fold(0u64, |m, &p| m | (1 << p)));
            }
            SubmodularOracle::Coverage {
                n_items,
                covers: masks,
            }
        }
        Some(RhoFile::Table { sets }) => {
            if n_items > 20 {
                return Err(Error::UnsupportedOracle(
                    "explicit table over more than 20 items".into(),
                ));
            }
            let size = 1usize << n_items;
            let mut values = vec![None; size];
            values[0] = Some(S::zero());
            for (key, num) in sets {
                let mask: usize = key
                    .parse()
                    .map_err(|_| Error::Parse(format!("bad set mask {key:?}")))?;
                if mask >= size {
                    return Err(Error::Invalid(format!("set mask {mask} out of range")));
                }
                values[mask] = Some(num.to_scalar());
            }
            let values: Vec<S> = values
                .into_iter()
                .enumerate()
                .map(|(mask, v)| v.ok_or(Error::Invalid(format!("table misses mask {mask}"))))
                .collect::<Result<_>>()?;
            SubmodularOracle::table(n_items, values)?
        }
        Some(RhoFile::Laminar { item_caps, groups }) => {
            let caps = match item_caps {
                Some(caps) => {
                    if caps.len() != n_items {
                        return Err(Error::Invalid("item_caps length != items".into()));
                    }
                    caps.iter().map(Num::to_scalar).collect()
                }
                None => vec![S::one(); n_items],
            };
            SubmodularOracle::laminar(
                caps,
                groups
                    .iter()
                    .map(|g| LaminarGroup {
                        members: g.members.clone(),
                        cap: g.cap.to_scalar(),
                    })
                    .collect(),
            )?
        }
    };
    Ok(oracle)
}

pub fn rho_to_file<S: Scalar>(rho: &SubmodularOracle<S>) -> Result<RhoFile> {
    Ok(match rho {
        SubmodularOracle::Cardinality { .. } => RhoFile::Cardinality,
        SubmodularOracle::Capacities { s } => RhoFile::Capacities {
            s: s.iter().map(Num::from_scalar).collect::<Result<_>>()?,
        },
        SubmodularOracle::Coverage { covers, .. } => RhoFile::Coverage {
            covers: covers
                .iter()
                .map(|mask| (0..64).filter(|p| mask & (1 << p) != 0).collect())
                .collect(),
        },
        SubmodularOracle::Table { n_items, values } => {
            let mut sets = BTreeMap::new();
            for (mask, v) in values.iter().enumerate().skip(1) {
                sets.insert(mask.to_string(), Num::from_scalar(v)?);
            }
            let _ = n_items;
            RhoFile::Table { sets }
        }
        SubmodularOracle::Laminar { item_caps, groups } => RhoFile::Laminar {
            item_caps: Some(item_caps.iter().map(Num::from_scalar).collect::<Result<_>>()?),
            groups: groups
                .iter()
                .map(|g| {
                    Ok(GroupFile {
                        members: g.members.clone(),
                        cap: Num::from_scalar(&g.cap)?,
                    })
                })
                .collect::<Result<_>>()?,
        },
    })
}

pub fn cardinal_to_file<S: Scalar>(inst: &CardinalInstance<S>) -> Result<InstanceFile> {
    Ok(InstanceFile {
        schema: SCHEMA_VERSION,
        mode: match inst.mode {
            Mode::Goods => ModeTag::Goods,
            Mode::Chores => ModeTag::Chores,
        },
        agents: inst.n_agents(),
        items: inst.n_items(),
        values: Some(
            inst.values
                .iter()
                .map(|row| row.iter().map(Num::from_scalar).collect::<Result<_>>())
                .collect::<Result<_>>()?,
        ),
        orders: None,
        rho: Some(rho_to_file(&inst.rho)?),
    })
}

pub fn ordinal_to_file(inst: &OrdinalInstance, rho: Option<RhoFile>) -> InstanceFile {
    InstanceFile {
        schema: SCHEMA_VERSION,
        mode: ModeTag::Ordinal,
        agents: inst.n_agents(),
        items: inst.n_items,
        values: None,
        orders: Some(inst.orders.clone()),
        rho,
    }
}

pub fn to_json_string<T: Serialize>(value: &T) -> Result<String> {
    serde_json::to_string_pretty(value).map_err(|e| Error::Parse(e.to_string()))
}

/// Allocation file: `x` matrix plus provenance.
pub fn allocation_to_json<S: Scalar>(alloc: &Allocation<S>) -> Value {
    serde_json::json!({
        "schema": SCHEMA_VERSION,
        "x": alloc.x.iter().map(|row| row.iter().map(Scalar::to_json).collect::<Vec<_>>()).collect::<Vec<_>>(),
        "provenance": serde_json::to_value(&alloc.provenance).unwrap_or(Value::Null),
    })
}

pub fn allocation_from_json<S: Scalar>(v: &Value) -> Result<Allocation<S>> {
    let rows = v
        .get("x")
        .and_then(Value::as_array)
        .ok_or_else(|| Error::Parse("allocation file misses `x`".into()))?;
    let mut x = Vec::with_capacity(rows.len());
    for row in rows {
        let row = row
            .as_array()
            .ok_or_else(|| Error::Parse("`x` must be a matrix".into()))?;
        x.push(row.iter().map(S::from_json).collect::<Result<Vec<_>>>()?);
    }
    let provenance = match v.get("provenance") {
        Some(p) => serde_json::from_value(p.clone()).map_err(|e| Error::Parse(e.to_string()))?,
        None => Provenance {
            mechanism: "unknown".into(),
            params: Value::Null,
        },
    };
    Ok(Allocation { x, provenance })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Rational;

    const GOODS: &str = r#"{
        "mode": "goods", "agents": 2, "items": 2,
        "values": [["0.1", 2], [1, "1/3"]],
        "rho": {"kind": "capacities", "s": [1, "1.5"]}
    }"#;

    #[test]
    fn parses_numbers_exactly_and_round_trips() {
        let file = InstanceFile::parse(GOODS).unwrap();
        let inst: CardinalInstance<Rational> = file.cardinal().unwrap();
        assert_eq!(inst.values[0][0], Rational::ratio(1, 10));
        assert_eq!(inst.values[1][1], Rational::ratio(1, 3));

        let serialized = to_json_string(&cardinal_to_file(&inst).unwrap()).unwrap();
        let reparsed: CardinalInstance<Rational> =
            InstanceFile::parse(&serialized).unwrap().cardinal().unwrap();
        assert_eq!(reparsed.values, inst.values);
        assert_eq!(reparsed.rho, inst.rho);
        assert_eq!(reparsed.mode, inst.mode);
    }

    #[test]
    fn json_number_decimals_do_not_go_through_binary() {
        // 0.1 as a bare JSON number must still parse to exactly 1/10.
        let file = InstanceFile::parse(
            r#"{"mode":"goods","agents":1,"items":1,"values":[[0.1]]}"#,
        )
        .unwrap();
        let inst: CardinalInstance<Rational> = file.cardinal().unwrap();
        assert_eq!(inst.values[0][0], Rational::ratio(1, 10));
    }

    #[test]
    fn table_oracle_parses_from_masks() {
        let file = InstanceFile::parse(
            r#"{"mode":"goods","agents":1,"items":2,
                "values":[[1,1]],
                "rho":{"kind":"table","sets":{"1":1,"2":1,"3":"1.5"}}}"#,
        )
        .unwrap();
        let rho: SubmodularOracle<Rational> = file.rho_oracle().unwrap();
        assert_eq!(rho.eval(0b11), Rational::ratio(3, 2));
    }

    #[test]
    fn ordinal_instances_parse_and_validate() {
        let file = InstanceFile::parse(
            r#"{"mode":"ordinal","agents":2,"items":2,"orders":[[0,1],[1,0]]}"#,
        )
        .unwrap();
        let inst = file.ordinal().unwrap();
        assert!(inst.validate().is_valid());
    }

    #[test]
    fn allocation_round_trip() {
        let alloc: Allocation<Rational> = Allocation::new(
            vec![vec![Rational::ratio(1, 2), Rational::ratio(1, 2)]],
            "test",
        );
        let json = allocation_to_json(&alloc);
        let back: Allocation<Rational> = allocation_from_json(&json).unwrap();
        assert_eq!(back.x, alloc.x);
    }
}
