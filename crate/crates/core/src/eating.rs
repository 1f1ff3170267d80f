//! Simultaneous eating mechanisms.
//!
//! [`submodular_eat`] runs the constrained eating loop: every agent eats
//! its most preferred active item at unit rate, a step advances until a
//! new set becomes tight or every agent is fed, and the run records a
//! trace of breakpoints and tight sets. [`ps`] is the classic per-item
//! supply special case and is cross-checked against an independent
//! event-driven implementation on every call. [`chores_eat`] reuses the
//! same engine with preferences ordered by ascending disutility.

use serde_json::{json, Value};

use crate::model::{
    items_mask, Allocation, CardinalInstance, Mode, OrdinalInstance, SubmodularOracle,
};
use crate::polymatroid::{self, SfmBackend};
use crate::scalar::{sum, Scalar};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    /// Every agent consumed a full unit.
    AllFed,
    /// The ground set became tight before all agents were fed.
    GroundSetTight,
}

impl Termination {
    pub fn as_str(&self) -> &'static str {
        match self {
            Termination::AllFed => "all-fed",
            Termination::GroundSetTight => "ground-set-tight",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Breakpoint<S> {
    /// Time extent of the step.
    pub alpha: S,
    /// Item chosen by each agent (`None` once an agent is fed).
    pub choices: Vec<Option<usize>>,
    /// Number of agents eating each item during the step.
    pub gamma: Vec<u32>,
    /// Maximal tight set after the step.
    pub tight_set: Vec<usize>,
    /// Oracle value of that tight set.
    pub rho_tight: S,
}

#[derive(Debug, Clone)]
pub struct EatingTrace<S> {
    pub n_agents: usize,
    pub n_items: usize,
    pub breakpoints: Vec<Breakpoint<S>>,
    pub final_z: Vec<S>,
    pub termination: Termination,
}

impl<S: Scalar> EatingTrace<S> {
    pub fn total(&self) -> S {
        sum(self.final_z.iter().cloned())
    }

    /// Tight sets must form a chain with nondecreasing oracle values.
    pub fn tight_chain_ok(&self) -> bool {
        let mut prev_mask = 0u64;
        let mut prev_rho = S::zero();
        for bp in &self.breakpoints {
            let mask = items_mask(&bp.tight_set);
            if mask & prev_mask != prev_mask {
                return false;
            }
            if bp.rho_tight < prev_rho.clone() - S::tol() {
                return false;
            }
            prev_mask = mask;
            prev_rho = bp.rho_tight.clone();
        }
        true
    }

    /// Consumption threshold per item: the total eaten when the item left
    /// the active set, or `n` for items active until the end.
    pub fn theta(&self) -> Vec<S> {
        let mut theta = vec![S::from_int(self.n_agents as i64); self.n_items];
        let mut seen = 0u64;
        for bp in &self.breakpoints {
            let mask = items_mask(&bp.tight_set);
            let fresh = mask & !seen;
            for j in 0..self.n_items {
                if fresh & (1 << j) != 0 {
                    theta[j] = bp.rho_tight.clone();
                }
            }
            seen |= fresh;
        }
        theta
    }

    pub fn to_json(&self) -> Value {
        json!({
            "schema": crate::io::SCHEMA_VERSION,
            "agents": self.n_agents,
            "items": self.n_items,
            "termination": self.termination.as_str(),
            "final_z": self.final_z.iter().map(Scalar::to_json).collect::<Vec<_>>(),
            "breakpoints": self.breakpoints.iter().map(|bp| json!({
                "alpha": bp.alpha.to_json(),
                "choices": bp.choices,
                "gamma": bp.gamma,
                "tight_set": bp.tight_set,
                "rho_tight": bp.rho_tight.to_json(),
            })).collect::<Vec<_>>(),
        })
    }
}

/// Runs the submodular eating loop on ordinal preferences.
pub fn submodular_eat<S: Scalar>(
    inst: &OrdinalInstance,
    rho: &SubmodularOracle<S>,
) -> Result<(Allocation<S>, EatingTrace<S>)> {
    inst.validate().into_result()?;
    rho.validate().into_result()?;
    if rho.n_items() != inst.n_items {
        return Err(Error::Invalid("oracle does not cover the items".into()));
    }

    let n = inst.n_agents();
    let m = inst.n_items;
    let n_scalar = S::from_int(n as i64);
    let backend = SfmBackend::Auto;
    let tol = S::tol() * S::from_int((n + m) as i64);

    let mut x = vec![vec![S::zero(); m]; n];
    let mut z = vec![S::zero(); m];
    let mut consumed = vec![S::zero(); n];
    let mut breakpoints = Vec::new();

    let mut tight = polymatroid::max_tight_set(&z, rho, backend)?;
    let mut termination = None;

    for _round in 0..(2 * (n + m) + 4) {
        let total = sum(z.iter().cloned());
        if total >= n_scalar.clone() - tol.clone() {
            termination = Some(Termination::AllFed);
            break;
        }
        if tight.set.len() == m {
            termination = Some(Termination::GroundSetTight);
            break;
        }

        let tight_mask = items_mask(&tight.set);
        let mut choices: Vec<Option<usize>> = vec![None; n];
        let mut gamma_counts = vec![0u32; m];
        let mut min_remaining: Option<S> = None;
        for i in 0..n {
            if consumed[i] >= S::one() - tol.clone() {
                continue;
            }
            let choice = inst.orders[i]
                .iter()
                .copied()
                .find(|&j| tight_mask & (1 << j) == 0)
                .ok_or_else(|| {
                    Error::OracleInconsistent("no active item left for an unfed agent".into())
                })?;
            choices[i] = Some(choice);
            gamma_counts[choice] += 1;
            let remaining = S::one() - consumed[i].clone();
            min_remaining = Some(match min_remaining {
                Some(r) if r <= remaining => r,
                _ => remaining,
            });
        }
        let Some(demand_cap) = min_remaining else {
            termination = Some(Termination::AllFed);
            break;
        };

        let gamma: Vec<S> = gamma_counts
            .iter()
            .map(|&c| S::from_int(c as i64))
            .collect();
        let step = polymatroid::max_step(&z, &gamma, rho, backend)?;
        if step.alpha <= S::zero() {
            return Err(Error::OracleInconsistent(
                "non-positive step on active items".into(),
            ));
        }
        let alpha = step.alpha.min_val(demand_cap);

        for i in 0..n {
            if let Some(j) = choices[i] {
                x[i][j] = x[i][j].clone() + alpha.clone();
                consumed[i] = consumed[i].clone() + alpha.clone();
                z[j] = z[j].clone() + alpha.clone();
            }
        }

        tight = polymatroid::max_tight_set(&z, rho, backend)?;
        breakpoints.push(Breakpoint {
            alpha,
            choices,
            gamma: gamma_counts,
            tight_set: tight.set.clone(),
            rho_tight: rho.eval(items_mask(&tight.set)),
        });
    }

    let termination = termination
        .ok_or_else(|| Error::OracleInconsistent("eating loop failed to terminate".into()))?;

    let trace = EatingTrace {
        n_agents: n,
        n_items: m,
        breakpoints,
        final_z: z,
        termination,
    };
    let mut alloc = Allocation::new(x, "submodular-eating");
    alloc.provenance.params = json!({ "oracle": rho.kind_name() });
    Ok((alloc, trace))
}

/// Classic probabilistic serial: unit (or given) supplies per item. The
/// output of the polymatroid engine is asserted against an independent
/// event-driven simulation rather than assumed equal.
pub fn ps<S: Scalar>(
    inst: &OrdinalInstance,
    supplies: Option<&[S]>,
) -> Result<(Allocation<S>, EatingTrace<S>)> {
    let s: Vec<S> = match supplies {
        Some(s) => s.to_vec(),
        None => vec![S::one(); inst.n_items],
    };
    if s.len() != inst.n_items {
        return Err(Error::Invalid("supplies length != items".into()));
    }
    let rho = SubmodularOracle::capacities(s.clone());
    let (mut alloc, trace) = submodular_eat(inst, &rho)?;
    alloc.provenance.mechanism = "probabilistic-serial".into();

    let reference = classic::ps_event_driven(inst, &s);
    let tol = S::tol() * S::from_int((inst.n_agents() + inst.n_items) as i64);
    for i in 0..inst.n_agents() {
        for j in 0..inst.n_items {
            let diff = (alloc.x[i][j].clone() - reference[i][j].clone()).abs_val();
            if diff > tol {
                return Err(Error::InvariantViolation(format!(
                    "eating engine and event-driven serial disagree at ({i},{j})"
                )));
            }
        }
    }
    Ok((alloc, trace))
}

/// Input accepted by the chores variant: a cardinal chores instance (orders
/// induced by ascending disutility) or explicit chores orders.
pub enum ChoresInput<'a, S> {
    Cardinal(&'a CardinalInstance<S>),
    Ordinal(&'a OrdinalInstance, Option<&'a SubmodularOracle<S>>),
}

/// Eating with chores: identical engine, preference direction reversed.
pub fn chores_eat<S: Scalar>(
    input: ChoresInput<'_, S>,
) -> Result<(Allocation<S>, EatingTrace<S>)> {
    let (ordinal, rho) = match input {
        ChoresInput::Cardinal(inst) => {
            if inst.mode != Mode::Chores {
                return Err(Error::Invalid("cardinal input must be a chores instance".into()));
            }
            (inst.induced_ordinal(), inst.rho.clone())
        }
        ChoresInput::Ordinal(inst, rho) => (
            inst.clone(),
            rho.cloned()
                .unwrap_or_else(|| SubmodularOracle::cardinality(inst.n_items)),
        ),
    };
    let (mut alloc, trace) = submodular_eat(&ordinal, &rho)?;
    alloc.provenance.mechanism = "chores-eating".into();
    Ok((alloc, trace))
}

pub mod classic {
    //! Event-driven serial eating over per-item supplies; independent of
    //! the polymatroid machinery and used to cross-check it.

    use super::*;

    pub fn ps_event_driven<S: Scalar>(inst: &OrdinalInstance, supplies: &[S]) -> Vec<Vec<S>> {
        let n = inst.n_agents();
        let m = inst.n_items;
        let tol = S::tol();
        let mut remaining = supplies.to_vec();
        let mut consumed = vec![S::zero(); n];
        let mut x = vec![vec![S::zero(); m]; n];

        for _ in 0..(n + m + 2) {
            let mut eaters = vec![0u32; m];
            let mut tops = vec![None; n];
            for i in 0..n {
                if consumed[i] >= S::one() - tol.clone() {
                    continue;
                }
                if let Some(&j) = inst.orders[i]
                    .iter()
                    .find(|&&j| remaining[j] > tol.clone())
                {
                    tops[i] = Some(j);
                    eaters[j] += 1;
                }
            }
            if tops.iter().all(Option::is_none) {
                break;
            }

            let mut dt: Option<S> = None;
            for j in 0..m {
                if eaters[j] > 0 {
                    let t = remaining[j].clone() / S::from_int(eaters[j] as i64);
                    dt = Some(match dt {
                        Some(old) if old <= t => old,
                        _ => t,
                    });
                }
            }
            for i in 0..n {
                if tops[i].is_some() {
                    let t = S::one() - consumed[i].clone();
                    dt = Some(match dt {
                        Some(old) if old <= t.clone() => old,
                        _ => t,
                    });
                }
            }
            let dt = dt.expect("some agent is eating");

            for i in 0..n {
                if let Some(j) = tops[i] {
                    x[i][j] = x[i][j].clone() + dt.clone();
                    consumed[i] = consumed[i].clone() + dt.clone();
                    remaining[j] = (remaining[j].clone()
                        - dt.clone() * S::from_int(eaters[j] as i64))
                    .max_val(S::zero());
                }
            }
        }
        x
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Rational;

    fn rat(n: i64, d: i64) -> Rational {
        Rational::ratio(n, d)
    }

    fn ord(orders: Vec<Vec<usize>>, n_items: usize) -> OrdinalInstance {
        OrdinalInstance { n_items, orders }
    }

    #[test]
    fn two_agents_sharing_preferences_split_everything() {
        let inst = ord(vec![vec![0, 1], vec![0, 1]], 2);
        let rho = SubmodularOracle::cardinality(2);
        let (alloc, trace) = submodular_eat::<Rational>(&inst, &rho).unwrap();
        let half = rat(1, 2);
        assert_eq!(alloc.x, vec![vec![half.clone(), half.clone()], vec![half.clone(), half]]);
        assert_eq!(trace.termination, Termination::AllFed);
        assert_eq!(trace.total(), rat(2, 1));
    }

    #[test]
    fn single_agent_single_item() {
        let inst = ord(vec![vec![0]], 1);
        let rho = SubmodularOracle::capacities(vec![rat(1, 1)]);
        let (alloc, _) = submodular_eat(&inst, &rho).unwrap();
        assert_eq!(alloc.x, vec![vec![rat(1, 1)]]);
    }

    #[test]
    fn identical_orders_give_equal_split() {
        let n = 4;
        let inst = ord(vec![vec![0, 1, 2, 3]; n], n);
        let rho = SubmodularOracle::cardinality(n);
        let (alloc, trace) = submodular_eat::<Rational>(&inst, &rho).unwrap();
        for row in &alloc.x {
            for v in row {
                assert_eq!(*v, rat(1, 4));
            }
        }
        assert!(trace.tight_chain_ok());
    }

    #[test]
    fn opposite_orders_separate() {
        let inst = ord(vec![vec![0, 1], vec![1, 0]], 2);
        let (alloc, _) = ps::<Rational>(&inst, None).unwrap();
        assert_eq!(alloc.x[0], vec![rat(1, 1), rat(0, 1)]);
        assert_eq!(alloc.x[1], vec![rat(0, 1), rat(1, 1)]);
    }

    #[test]
    fn three_agents_two_items_regression() {
        // Agents 0,1 favor item 0, agent 2 favors item 1. Item 0 saturates
        // at step 1/2, everyone then shares item 1 until it is gone.
        let inst = ord(vec![vec![0, 1], vec![0, 1], vec![1, 0]], 2);
        let (alloc, trace) = ps::<Rational>(&inst, None).unwrap();
        assert_eq!(alloc.x[0], vec![rat(1, 2), rat(1, 6)]);
        assert_eq!(alloc.x[1], vec![rat(1, 2), rat(1, 6)]);
        assert_eq!(alloc.x[2], vec![rat(0, 1), rat(2, 3)]);
        assert_eq!(trace.termination, Termination::GroundSetTight);
        // Total assigned equals min{n, rho(E)} = 2.
        assert_eq!(trace.total(), rat(2, 1));
    }

    #[test]
    fn equal_rate_property_at_breakpoints() {
        let inst = ord(vec![vec![0, 1, 2], vec![1, 0, 2], vec![1, 2, 0]], 3);
        let rho = SubmodularOracle::capacities(vec![rat(1, 1), rat(1, 2), rat(2, 1)]);
        let (_, trace) = submodular_eat::<Rational>(&inst, &rho).unwrap();
        let mut consumed = vec![rat(0, 1); 3];
        for bp in &trace.breakpoints {
            for (i, choice) in bp.choices.iter().enumerate() {
                if choice.is_some() {
                    consumed[i] = consumed[i].clone() + bp.alpha.clone();
                }
            }
            let active: Vec<_> = bp
                .choices
                .iter()
                .enumerate()
                .filter(|(_, c)| c.is_some())
                .map(|(i, _)| consumed[i].clone())
                .collect();
            for w in active.windows(2) {
                assert_eq!(w[0], w[1]);
            }
        }
    }

    #[test]
    fn chores_zero_example() {
        // Two chores, both agents eat chore 0 first; agent 0 carries 0.5
        // disutility while agent 1 carries none.
        let inst = CardinalInstance::new(
            Mode::Chores,
            vec![vec![rat(0, 1), rat(1, 1)], vec![rat(0, 1), rat(0, 1)]],
            None,
        )
        .unwrap();
        let (alloc, _) = chores_eat(ChoresInput::Cardinal(&inst)).unwrap();
        let half = rat(1, 2);
        assert_eq!(
            alloc.x,
            vec![vec![half.clone(), half.clone()], vec![half.clone(), half]]
        );
        let d0 = inst.utility(0, &alloc.x[0]);
        let d1 = inst.utility(1, &alloc.x[1]);
        assert_eq!(d0, rat(1, 2));
        assert_eq!(d1, rat(0, 1));
    }

    #[test]
    fn prop3_total_is_min_of_n_and_ground_value() {
        // rho(E) = 1.5 < n = 2: termination by ground-set tightness.
        let inst = ord(vec![vec![0, 1], vec![1, 0]], 2);
        let rho = SubmodularOracle::capacities(vec![rat(1, 1), rat(1, 2)]);
        let (_, trace) = submodular_eat::<Rational>(&inst, &rho).unwrap();
        assert_eq!(trace.termination, Termination::GroundSetTight);
        assert_eq!(trace.total(), rat(3, 2));
    }

    #[test]
    fn theta_reconstruction_marks_survivors_with_n() {
        let inst = ord(vec![vec![0, 1], vec![0, 1]], 2);
        let rho = SubmodularOracle::capacities(vec![rat(1, 2), rat(4, 1)]);
        let (_, trace) = submodular_eat::<Rational>(&inst, &rho).unwrap();
        let theta = trace.theta();
        // item 0 leaves at consumption rho({0}) = 1/2, item 1 never leaves
        assert_eq!(theta[0], rat(1, 2));
        assert_eq!(theta[1], rat(2, 1));
    }
}
