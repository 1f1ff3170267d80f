//! Instance model: cardinal and ordinal instances, submodular feasibility
//! oracles, allocations and lotteries.
//!
//! Everything here is immutable after construction and safe to share
//! across threads. Validation is report-based: [`ValidationReport`] lists
//! every violated invariant instead of failing on the first one.

use serde::{Deserialize, Serialize};

use crate::scalar::{sum, Scalar};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Goods,
    Chores,
}

/// Monotone submodular set function over the items, evaluated by query.
///
/// Sets are passed as bit masks over item indices; the ground set must
/// have at most 64 items.
#[derive(Debug, Clone, PartialEq)]
pub enum SubmodularOracle<S> {
    /// `rho(S) = |S|`: the unit counting function (classic assignment).
    Cardinality { n_items: usize },
    /// `rho(S) = sum_{j in S} s_j`: per-item supplies.
    Capacities { s: Vec<S> },
    /// `rho(S) = |union of cover sets|` over a point universe of up to 64 points.
    Coverage { n_items: usize, covers: Vec<u64> },
    /// Explicit table of all `2^m` values.
    Table { n_items: usize, values: Vec<S> },
    /// Hierarchy capacities: per-item caps plus caps on nested groups.
    Laminar {
        item_caps: Vec<S>,
        groups: Vec<LaminarGroup<S>>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct LaminarGroup<S> {
    pub members: Vec<usize>,
    pub cap: S,
}

impl<S: Scalar> SubmodularOracle<S> {
    pub fn cardinality(n_items: usize) -> Self {
        SubmodularOracle::Cardinality { n_items }
    }

    pub fn capacities(s: Vec<S>) -> Self {
        SubmodularOracle::Capacities { s }
    }

    pub fn unit_capacities(n_items: usize) -> Self {
        SubmodularOracle::Capacities {
            s: vec![S::one(); n_items],
        }
    }

    /// Builds an explicit-table oracle, checking normalization, monotonicity
    /// and submodularity exhaustively (the latter two only for `m <= 12`).
    pub fn table(n_items: usize, values: Vec<S>) -> Result<Self> {
        if n_items > 20 {
            return Err(Error::UnsupportedOracle(format!(
                "explicit table over {n_items} items is too large"
            )));
        }
        if values.len() != 1 << n_items {
            return Err(Error::Invalid(format!(
                "table needs {} entries, got {}",
                1usize << n_items,
                values.len()
            )));
        }
        let oracle = SubmodularOracle::Table { n_items, values };
        let report = oracle.validate();
        if !report.errors.is_empty() {
            return Err(Error::Invalid(report.errors.join("; ")));
        }
        Ok(oracle)
    }

    pub fn laminar(item_caps: Vec<S>, groups: Vec<LaminarGroup<S>>) -> Result<Self> {
        let oracle = SubmodularOracle::Laminar { item_caps, groups };
        let report = oracle.validate();
        if !report.errors.is_empty() {
            return Err(Error::Invalid(report.errors.join("; ")));
        }
        Ok(oracle)
    }

    pub fn n_items(&self) -> usize {
        match self {
            SubmodularOracle::Cardinality { n_items } => *n_items,
            SubmodularOracle::Capacities { s } => s.len(),
            SubmodularOracle::Coverage { n_items, .. } => *n_items,
            SubmodularOracle::Table { n_items, .. } => *n_items,
            SubmodularOracle::Laminar { item_caps, .. } => item_caps.len(),
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            SubmodularOracle::Cardinality { .. } => "cardinality",
            SubmodularOracle::Capacities { .. } => "capacities",
            SubmodularOracle::Coverage { .. } => "coverage",
            SubmodularOracle::Table { .. } => "table",
            SubmodularOracle::Laminar { .. } => "laminar",
        }
    }

    /// True when the polyhedron is a box product, i.e. the function is
    /// modular and singleton constraints imply all others.
    pub fn is_modular(&self) -> bool {
        matches!(
            self,
            SubmodularOracle::Cardinality { .. } | SubmodularOracle::Capacities { .. }
        )
    }

    pub fn eval(&self, mask: u64) -> S {
        match self {
            SubmodularOracle::Cardinality { .. } => S::from_int(mask.count_ones() as i64),
            SubmodularOracle::Capacities { s } => sum(
                mask_items(mask, s.len())
                    .into_iter()
                    .map(|j| s[j].clone()),
            ),
            SubmodularOracle::Coverage { covers, n_items } => {
                let mut union = 0u64;
                for j in mask_items(mask, *n_items) {
                    union |= covers[j];
                }
                S::from_int(union.count_ones() as i64)
            }
            SubmodularOracle::Table { values, .. } => values[mask as usize].clone(),
            SubmodularOracle::Laminar { item_caps, groups } => {
                laminar_eval(item_caps, groups, mask)
            }
        }
    }

    pub fn eval_items(&self, items: &[usize]) -> S {
        self.eval(items_mask(items))
    }

    pub fn ground_value(&self) -> S {
        self.eval(full_mask(self.n_items()))
    }

    /// `rho({j}) >= 1` for every item: the assumption under which the
    /// eating mechanism's Nash-welfare guarantee applies.
    pub fn unit_singletons(&self) -> bool {
        (0..self.n_items()).all(|j| self.eval(1 << j) >= S::one())
    }

    /// Structural validation; for explicit tables with at most 12 items the
    /// monotonicity and submodularity checks are exhaustive.
    pub fn validate(&self) -> ValidationReport {
        let mut report = ValidationReport::default();
        let m = self.n_items();
        if m == 0 {
            report.errors.push("oracle has no items".into());
            return report;
        }
        if m > 64 {
            report.errors.push("more than 64 items unsupported".into());
            return report;
        }
        match self {
            SubmodularOracle::Cardinality { .. } => {}
            SubmodularOracle::Capacities { s } => {
                for (j, v) in s.iter().enumerate() {
                    if *v < S::zero() {
                        report.errors.push(format!("capacity of item {j} is negative"));
                    }
                }
            }
            SubmodularOracle::Coverage { covers, n_items } => {
                if covers.len() != *n_items {
                    report
                        .errors
                        .push("coverage oracle needs one cover set per item".into());
                }
            }
            SubmodularOracle::Table { n_items, values } => {
                if values.len() != 1 << n_items {
                    report.errors.push("table size is not 2^m".into());
                    return report;
                }
                if !values[0].is_zero() {
                    report.errors.push("table value of the empty set must be 0".into());
                }
                for (mask, v) in values.iter().enumerate() {
                    if *v < S::zero() {
                        report
                            .errors
                            .push(format!("table value of mask {mask} is negative"));
                        break;
                    }
                }
                if *n_items <= 12 {
                    self.check_monotone_submodular(&mut report);
                }
            }
            SubmodularOracle::Laminar { item_caps, groups } => {
                for (j, v) in item_caps.iter().enumerate() {
                    if *v < S::zero() {
                        report.errors.push(format!("item cap {j} is negative"));
                    }
                }
                for (gi, g) in groups.iter().enumerate() {
                    if g.cap < S::zero() {
                        report.errors.push(format!("group {gi} cap is negative"));
                    }
                    if g.members.is_empty() {
                        report.errors.push(format!("group {gi} is empty"));
                    }
                    if g.members.iter().any(|&j| j >= m) {
                        report
                            .errors
                            .push(format!("group {gi} references an unknown item"));
                    }
                }
                let masks: Vec<u64> = groups.iter().map(|g| items_mask(&g.members)).collect();
                for i in 0..masks.len() {
                    for k in (i + 1)..masks.len() {
                        let inter = masks[i] & masks[k];
                        if inter != 0 && inter != masks[i] && inter != masks[k] {
                            report.errors.push(format!(
                                "groups {i} and {k} overlap without nesting"
                            ));
                        }
                    }
                }
            }
        }
        report.flags.unit_singletons =
            report.errors.is_empty() && self.unit_singletons();
        report
    }

    fn check_monotone_submodular(&self, report: &mut ValidationReport) {
        let m = self.n_items();
        let size = 1u64 << m;
        for mask in 0..size {
            let base = self.eval(mask);
            for j in 0..m {
                if mask & (1 << j) != 0 {
                    continue;
                }
                let with_j = self.eval(mask | (1 << j));
                if with_j < base {
                    report.errors.push(format!(
                        "not monotone: adding item {j} to mask {mask} decreases the value"
                    ));
                    return;
                }
                let marginal_j = with_j.clone() - base.clone();
                for k in 0..m {
                    if k == j || mask & (1 << k) != 0 {
                        continue;
                    }
                    let with_k = self.eval(mask | (1 << k));
                    let with_jk = self.eval(mask | (1 << j) | (1 << k));
                    if with_jk - with_k > marginal_j.clone() + S::tol() {
                        report.errors.push(format!(
                            "not submodular at mask {mask} with items {j}, {k}"
                        ));
                        return;
                    }
                }
            }
        }
    }
}

fn laminar_eval<S: Scalar>(item_caps: &[S], groups: &[LaminarGroup<S>], mask: u64) -> S {
    let g = groups.len();
    let masks: Vec<u64> = groups.iter().map(|grp| items_mask(&grp.members)).collect();
    // parent = smallest group strictly containing this one
    let mut order: Vec<usize> = (0..g).collect();
    order.sort_by_key(|&i| masks[i].count_ones());
    let mut parent: Vec<Option<usize>> = vec![None; g];
    for (pos, &i) in order.iter().enumerate() {
        for &cand in &order[pos + 1..] {
            if masks[i] & masks[cand] == masks[i] && masks[i] != masks[cand] {
                parent[i] = Some(cand);
                break;
            }
        }
    }
    let mut amount = vec![S::zero(); g];
    let mut grouped: u64 = 0;
    for &i in &order {
        let mut child_mask = 0u64;
        let mut acc = S::zero();
        for (k, p) in parent.iter().enumerate() {
            if *p == Some(i) {
                acc = acc + amount[k].clone();
                child_mask |= masks[k];
            }
        }
        for j in mask_items(masks[i] & !child_mask & mask, item_caps.len()) {
            acc = acc + item_caps[j].clone();
        }
        amount[i] = acc.min_val(groups[i].cap.clone());
        grouped |= masks[i];
    }
    let mut total = S::zero();
    for (i, p) in parent.iter().enumerate() {
        if p.is_none() {
            total = total + amount[i].clone();
        }
    }
    for j in mask_items(mask & !grouped, item_caps.len()) {
        total = total + item_caps[j].clone();
    }
    total
}

pub fn items_mask(items: &[usize]) -> u64 {
    items.iter().fold(0u64, |m, &j| m | (1 << j))
}

pub fn mask_items(mask: u64, n_items: usize) -> Vec<usize> {
    (0..n_items).filter(|j| mask & (1 << j) != 0).collect()
}

pub fn full_mask(n_items: usize) -> u64 {
    if n_items == 64 {
        u64::MAX
    } else {
        (1u64 << n_items) - 1
    }
}

/// Cardinal instance: a utility (goods) or disutility (chores) matrix plus
/// a feasibility oracle. The oracle defaults to unit counting.
#[derive(Debug, Clone)]
pub struct CardinalInstance<S> {
    pub mode: Mode,
    pub values: Vec<Vec<S>>,
    pub rho: SubmodularOracle<S>,
}

impl<S: Scalar> CardinalInstance<S> {
    pub fn new(mode: Mode, values: Vec<Vec<S>>, rho: Option<SubmodularOracle<S>>) -> Result<Self> {
        let n_items = values.first().map(|r| r.len()).unwrap_or(0);
        let rho = rho.unwrap_or_else(|| SubmodularOracle::cardinality(n_items));
        if rho.n_items() != n_items {
            return Err(Error::Invalid(format!(
                "oracle covers {} items but the matrix has {n_items}",
                rho.n_items()
            )));
        }
        Ok(CardinalInstance { mode, values, rho })
    }

    pub fn n_agents(&self) -> usize {
        self.values.len()
    }

    pub fn n_items(&self) -> usize {
        self.values.first().map(|r| r.len()).unwrap_or(0)
    }

    pub fn validate(&self) -> ValidationReport {
        let mut report = self.rho.validate();
        if self.n_agents() == 0 {
            report.errors.push("instance has no agents".into());
        }
        if self.n_items() == 0 {
            report.errors.push("instance has no items".into());
        }
        for (i, row) in self.values.iter().enumerate() {
            if row.len() != self.n_items() {
                report.errors.push(format!("row {i} has wrong length"));
            }
            for (j, v) in row.iter().enumerate() {
                if *v < S::zero() {
                    report
                        .errors
                        .push(format!("value of agent {i} for item {j} is negative"));
                }
                if !v.is_finite_val() {
                    report
                        .errors
                        .push(format!("value of agent {i} for item {j} is not finite"));
                }
            }
        }
        report.flags.positive_disutilities = self.mode == Mode::Chores
            && self
                .values
                .iter()
                .all(|row| row.iter().all(|v| *v > S::zero()));
        if self.mode == Mode::Chores && !report.flags.positive_disutilities {
            report
                .warnings
                .push("positive disutility assumption violated".into());
        }
        report
    }

    /// The strict order this agent's values induce, most preferred first.
    /// Goods sort by descending value, chores by ascending disutility;
    /// ties break by ascending item index.
    pub fn induced_order(&self, agent: usize) -> Vec<usize> {
        induced_order(&self.values[agent], self.mode)
    }

    pub fn induced_ordinal(&self) -> OrdinalInstance {
        OrdinalInstance {
            n_items: self.n_items(),
            orders: (0..self.n_agents()).map(|i| self.induced_order(i)).collect(),
        }
    }

    pub fn utility(&self, agent: usize, bundle: &[S]) -> S {
        crate::scalar::dot(&self.values[agent], bundle)
    }
}

pub fn induced_order<S: Scalar>(row: &[S], mode: Mode) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..row.len()).collect();
    idx.sort_by(|&a, &b| {
        let cmp = row[a]
            .partial_cmp(&row[b])
            .unwrap_or(std::cmp::Ordering::Equal);
        let primary = match mode {
            Mode::Goods => cmp.reverse(),
            Mode::Chores => cmp,
        };
        primary.then(a.cmp(&b))
    });
    idx
}

/// Ordinal instance: a strict total order over all items per agent,
/// most preferred first.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OrdinalInstance {
    pub n_items: usize,
    pub orders: Vec<Vec<usize>>,
}

impl OrdinalInstance {
    pub fn n_agents(&self) -> usize {
        self.orders.len()
    }

    pub fn validate(&self) -> ValidationReport {
        let mut report = ValidationReport::default();
        if self.orders.is_empty() {
            report.errors.push("instance has no agents".into());
        }
        if self.n_items == 0 {
            report.errors.push("instance has no items".into());
        }
        for (i, order) in self.orders.iter().enumerate() {
            let mut seen = vec![false; self.n_items];
            let mut ok = order.len() == self.n_items;
            for &j in order {
                if j >= self.n_items || seen[j] {
                    ok = false;
                    break;
                }
                seen[j] = true;
            }
            if !ok {
                report
                    .errors
                    .push(format!("order of agent {i} is not a permutation"));
            }
        }
        report
    }

    /// Rank of each item in the agent's order (0 = most preferred).
    pub fn ranks(&self, agent: usize) -> Vec<usize> {
        let mut rank = vec![0usize; self.n_items];
        for (pos, &j) in self.orders[agent].iter().enumerate() {
            rank[j] = pos;
        }
        rank
    }
}

/// Fractional allocation: agent-by-item nonnegative matrix together with
/// the mechanism that produced it.
#[derive(Debug, Clone)]
pub struct Allocation<S> {
    pub x: Vec<Vec<S>>,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Provenance {
    pub mechanism: String,
    #[serde(default)]
    pub params: serde_json::Value,
}

impl<S: Scalar> Allocation<S> {
    pub fn new(x: Vec<Vec<S>>, mechanism: impl Into<String>) -> Self {
        Allocation {
            x,
            provenance: Provenance {
                mechanism: mechanism.into(),
                params: serde_json::Value::Null,
            },
        }
    }

    pub fn n_agents(&self) -> usize {
        self.x.len()
    }

    pub fn n_items(&self) -> usize {
        self.x.first().map(|r| r.len()).unwrap_or(0)
    }

    pub fn row_sum(&self, agent: usize) -> S {
        sum(self.x[agent].iter().cloned())
    }

    /// Aggregate consumption vector `z = sum_i x_i`.
    pub fn consumption(&self) -> Vec<S> {
        let mut z = vec![S::zero(); self.n_items()];
        for row in &self.x {
            for (j, v) in row.iter().enumerate() {
                z[j] = z[j].clone() + v.clone();
            }
        }
        z
    }

    pub fn total(&self) -> S {
        sum(self.consumption())
    }

    pub fn map<T: Scalar>(&self, f: impl Fn(&S) -> T) -> Allocation<T> {
        Allocation {
            x: self.x.iter().map(|row| row.iter().map(&f).collect()).collect(),
            provenance: self.provenance.clone(),
        }
    }
}

/// Lottery over independent assignments; each entry maps every agent to at
/// most one item.
#[derive(Debug, Clone)]
pub struct Lottery<S> {
    pub entries: Vec<LotteryEntry<S>>,
}

#[derive(Debug, Clone)]
pub struct LotteryEntry<S> {
    pub assignment: Vec<Option<usize>>,
    pub probability: S,
}

impl<S: Scalar> Lottery<S> {
    pub fn total_probability(&self) -> S {
        sum(self.entries.iter().map(|e| e.probability.clone()))
    }

    pub fn marginals(&self, n_items: usize) -> Vec<Vec<S>> {
        let n_agents = self
            .entries
            .first()
            .map(|e| e.assignment.len())
            .unwrap_or(0);
        let mut x = vec![vec![S::zero(); n_items]; n_agents];
        for entry in &self.entries {
            for (i, assigned) in entry.assignment.iter().enumerate() {
                if let Some(j) = assigned {
                    x[i][*j] = x[i][*j].clone() + entry.probability.clone();
                }
            }
        }
        x
    }
}

/// Assumption flags consumed by the audit layer: theorem-level checks only
/// fire when their hypotheses hold.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct AssumptionFlags {
    pub positive_disutilities: bool,
    pub unit_singletons: bool,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ValidationReport {
    pub errors: Vec<String>,
    pub warnings: Vec<String>,
    pub flags: AssumptionFlags,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.errors.is_empty()
    }

    pub fn into_result(self) -> Result<Self> {
        if self.is_valid() {
            Ok(self)
        } else {
            Err(Error::Invalid(self.errors.join("; ")))
        }
    }
}

/// Bundle-utility evaluation shared by the audit checks: linear matrices
/// and concave Fisher utilities both implement it.
pub trait UtilityModel<S: Scalar> {
    fn n_agents(&self) -> usize;
    fn n_items(&self) -> usize;
    fn value(&self, agent: usize, bundle: &[S]) -> S;
}

impl<S: Scalar> UtilityModel<S> for CardinalInstance<S> {
    fn n_agents(&self) -> usize {
        self.n_agents()
    }

    fn n_items(&self) -> usize {
        self.n_items()
    }

    fn value(&self, agent: usize, bundle: &[S]) -> S {
        self.utility(agent, bundle)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Rational;
    use num_rational::BigRational;

    fn rat(n: i64, d: i64) -> Rational {
        BigRational::ratio(n, d)
    }

    #[test]
    fn induced_order_tie_breaks_by_index() {
        let row = vec![5.0, 5.0, 1.0];
        assert_eq!(induced_order(&row, Mode::Goods), vec![0, 1, 2]);
        let row = vec![1.0, 3.0, 2.0];
        assert_eq!(induced_order(&row, Mode::Goods), vec![1, 2, 0]);
        let row = vec![2.0, 1.0];
        assert_eq!(induced_order(&row, Mode::Chores), vec![1, 0]);
    }

    #[test]
    fn induced_order_is_always_a_valid_permutation() {
        let inst = CardinalInstance::new(
            Mode::Goods,
            vec![vec![rat(1, 2), rat(1, 2), rat(0, 1)], vec![rat(3, 1), rat(1, 7), rat(1, 7)]],
            None,
        )
        .unwrap();
        let ordinal = inst.induced_ordinal();
        assert!(ordinal.validate().is_valid());
        // consistency: j before j' implies value at least as large
        for i in 0..inst.n_agents() {
            let order = &ordinal.orders[i];
            for w in order.windows(2) {
                assert!(inst.values[i][w[0]] >= inst.values[i][w[1]]);
            }
        }
    }

    #[test]
    fn validation_flags_and_errors() {
        let valid = CardinalInstance::new(
            Mode::Goods,
            vec![vec![1.0, 2.0], vec![0.5, 0.0]],
            None,
        )
        .unwrap();
        assert!(valid.validate().is_valid());

        let chores = CardinalInstance::new(
            Mode::Chores,
            vec![vec![0.0, 1.0], vec![0.5, 2.0]],
            None,
        )
        .unwrap();
        let report = chores.validate();
        assert!(report.is_valid());
        assert!(!report.flags.positive_disutilities);
        assert!(report
            .warnings
            .iter()
            .any(|w| w.contains("positive disutility")));

        let bad_order = OrdinalInstance {
            n_items: 3,
            orders: vec![vec![1, 1, 2]],
        };
        let report = bad_order.validate();
        assert!(!report.is_valid());
        assert!(report.errors[0].contains("not a permutation"));
    }

    #[test]
    fn coverage_is_monotone_submodular() {
        let oracle: SubmodularOracle<f64> = SubmodularOracle::Coverage {
            n_items: 3,
            covers: vec![0b011, 0b110, 0b100],
        };
        let mut report = ValidationReport::default();
        oracle.check_monotone_submodular(&mut report);
        assert!(report.errors.is_empty());
        assert_eq!(oracle.eval(0b111), 3.0);
        assert_eq!(oracle.eval(0b101), 3.0);
    }

    #[test]
    fn table_oracle_rejects_non_submodular() {
        // f({0}) = f({1}) = 0, f({0,1}) = 1 is supermodular.
        let result = SubmodularOracle::table(2, vec![0.0, 0.0, 0.0, 1.0]);
        assert!(result.is_err());
        // The unit counting table is fine.
        let ok = SubmodularOracle::table(2, vec![0.0, 1.0, 1.0, 2.0]);
        assert!(ok.is_ok());
    }

    #[test]
    fn laminar_eval_caps_groups() {
        // Two items capped at 1 each, jointly capped at 1.5.
        let oracle: SubmodularOracle<f64> = SubmodularOracle::laminar(
            vec![1.0, 1.0, 1.0],
            vec![LaminarGroup {
                members: vec![0, 1],
                cap: 1.5,
            }],
        )
        .unwrap();
        assert_eq!(oracle.eval(0b001), 1.0);
        assert_eq!(oracle.eval(0b011), 1.5);
        assert_eq!(oracle.eval(0b111), 2.5);
        let mut report = ValidationReport::default();
        oracle.check_monotone_submodular(&mut report);
        assert!(report.errors.is_empty());
    }

    #[test]
    fn lottery_marginals_accumulate() {
        let lottery = Lottery {
            entries: vec![
                LotteryEntry {
                    assignment: vec![Some(0), Some(1)],
                    probability: rat(1, 2),
                },
                LotteryEntry {
                    assignment: vec![Some(1), Some(0)],
                    probability: rat(1, 2),
                },
            ],
        };
        assert_eq!(lottery.total_probability(), rat(1, 1));
        let x = lottery.marginals(2);
        assert_eq!(x[0][0], rat(1, 2));
        assert_eq!(x[1][1], rat(1, 2));
    }
}
