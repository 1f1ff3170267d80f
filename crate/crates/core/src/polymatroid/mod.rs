//! Submodular-polyhedron computations: membership, maximal tight set,
//! active items and the max-step line search of the eating mechanism.
//!
//! Minimization of `rho(S) - z(S)` is exhaustive over bit masks for small
//! ground sets and falls back to the Fujishige–Wolfe minimum-norm-point
//! algorithm above [`EXHAUSTIVE_LIMIT`] items.

pub mod wolfe;

use crate::model::{full_mask, mask_items, Allocation, SubmodularOracle};
use crate::scalar::{sum, Scalar};
use crate::{Error, Result};

/// Largest ground set minimized by direct enumeration.
pub const EXHAUSTIVE_LIMIT: usize = 20;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum SfmBackend {
    #[default]
    Auto,
    Exhaustive,
    MinNormPoint,
}

impl SfmBackend {
    fn resolve(self, m: usize) -> SfmBackend {
        match self {
            SfmBackend::Auto => {
                if m <= EXHAUSTIVE_LIMIT {
                    SfmBackend::Exhaustive
                } else {
                    SfmBackend::MinNormPoint
                }
            }
            other => other,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Membership<S> {
    pub member: bool,
    /// `min_S (rho(S) - z(S))` over nonempty sets.
    pub slack_min: S,
    /// The minimizing set when the vector is outside the polyhedron.
    pub most_violated: Option<Vec<usize>>,
}

#[derive(Debug, Clone)]
pub struct TightSetResult<S> {
    /// The unique maximal tight set; empty when the minimum slack is positive.
    pub set: Vec<usize>,
    pub slack_min: S,
    /// The minimizing set itself (equals `set` when slack is zero).
    pub certificate: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct StepResult<S> {
    pub alpha: S,
    /// A set achieving the minimum of `(rho(S) - z(S)) / gamma(S)`.
    pub bottleneck: Vec<usize>,
}

struct Shifted<'a, S> {
    rho: &'a SubmodularOracle<S>,
    z: &'a [S],
}

impl<S: Scalar> Shifted<'_, S> {
    fn eval(&self, mask: u64) -> S {
        let lin = sum(
            mask_items(mask, self.z.len())
                .into_iter()
                .map(|j| self.z[j].clone()),
        );
        self.rho.eval(mask) - lin
    }
}

/// Minimizes `rho(S) - z(S)` over nonempty `S`, returning the minimum and
/// the maximal minimizer (the union of all minimizers, by uncrossing).
fn sfm_shifted<S: Scalar>(
    rho: &SubmodularOracle<S>,
    z: &[S],
    backend: SfmBackend,
) -> Result<(S, u64)> {
    let m = rho.n_items();
    let shifted = Shifted { rho, z };
    match backend.resolve(m) {
        SfmBackend::Exhaustive => {
            let mut best = shifted.eval(1);
            let mut union = 1u64;
            for mask in 2..=full_mask(m) {
                let v = shifted.eval(mask);
                if v < best {
                    best = v;
                    union = mask;
                } else if v == best {
                    union |= mask;
                }
            }
            Ok((best, union))
        }
        SfmBackend::MinNormPoint => {
            let f = |mask: u64| shifted.eval(mask);
            let (value, set) = wolfe::minimize(&f, m)?;
            if set == 0 {
                // The overall minimizer is the empty set (value 0); report
                // the best nonempty set instead.
                let mut best = shifted.eval(1);
                let mut best_mask = 1u64;
                for j in 1..m {
                    let v = shifted.eval(1 << j);
                    if v < best {
                        best = v;
                        best_mask = 1 << j;
                    }
                }
                return Ok((best, best_mask));
            }
            Ok((value, set))
        }
        SfmBackend::Auto => unreachable!(),
    }
}

/// Membership of a nonnegative vector in the submodular polyhedron.
/// In float mode, slacks within tolerance of zero count as feasible.
pub fn is_member<S: Scalar>(
    z: &[S],
    rho: &SubmodularOracle<S>,
    backend: SfmBackend,
) -> Result<Membership<S>> {
    check_shape(z, rho)?;
    let (slack_min, set) = sfm_shifted(rho, z, backend)?;
    let scale = rho.ground_value().abs_val().max_val(S::one());
    let member = slack_min >= -(S::tol() * scale);
    Ok(Membership {
        member,
        most_violated: if member {
            None
        } else {
            Some(mask_items(set, rho.n_items()))
        },
        slack_min,
    })
}

/// The unique maximal tight set `T_z`: the maximal minimizer of
/// `rho(S) - z(S)`, or the empty set when the minimum is positive.
pub fn max_tight_set<S: Scalar>(
    z: &[S],
    rho: &SubmodularOracle<S>,
    backend: SfmBackend,
) -> Result<TightSetResult<S>> {
    check_shape(z, rho)?;
    let (slack_min, set) = sfm_shifted(rho, z, backend)?;
    let scale = rho.ground_value().abs_val().max_val(S::one());
    let tol = S::tol() * scale;
    if slack_min < -tol.clone() {
        return Err(Error::NotInPolyhedron {
            set: mask_items(set, rho.n_items()),
            slack: slack_min.to_f64(),
        });
    }
    let certificate = mask_items(set, rho.n_items());
    let tight = if slack_min.abs_val() <= tol {
        certificate.clone()
    } else {
        Vec::new()
    };
    Ok(TightSetResult {
        set: tight,
        slack_min,
        certificate,
    })
}

/// Items whose consumption can still grow: the complement of the maximal
/// tight set of the aggregate consumption vector.
pub fn active_items<S: Scalar>(
    alloc: &Allocation<S>,
    rho: &SubmodularOracle<S>,
    backend: SfmBackend,
) -> Result<Vec<usize>> {
    active_items_of(&alloc.consumption(), rho, backend)
}

pub fn active_items_of<S: Scalar>(
    z: &[S],
    rho: &SubmodularOracle<S>,
    backend: SfmBackend,
) -> Result<Vec<usize>> {
    let tight = max_tight_set(z, rho, backend)?;
    let mask = crate::model::items_mask(&tight.set);
    Ok((0..rho.n_items()).filter(|j| mask & (1 << j) == 0).collect())
}

/// Largest `alpha` with `z + alpha * gamma` still in the polyhedron:
/// `min (rho(S) - z(S)) / gamma(S)` over sets with `gamma(S) > 0`.
///
/// The direction must be supported outside the current tight set, otherwise
/// no positive step exists and the call fails.
pub fn max_step<S: Scalar>(
    z: &[S],
    gamma: &[S],
    rho: &SubmodularOracle<S>,
    backend: SfmBackend,
) -> Result<StepResult<S>> {
    check_shape(z, rho)?;
    if gamma.len() != z.len() {
        return Err(Error::Invalid("direction length mismatch".into()));
    }
    if gamma.iter().any(|g| *g < S::zero()) {
        return Err(Error::Invalid("direction must be nonnegative".into()));
    }
    let support: Vec<usize> = (0..gamma.len()).filter(|&j| gamma[j] > S::zero()).collect();
    if support.is_empty() {
        return Err(Error::Invalid("direction is zero".into()));
    }
    let tight = max_tight_set(z, rho, backend)?;
    let tight_mask = crate::model::items_mask(&tight.set);
    let blocked: Vec<usize> = support
        .iter()
        .copied()
        .filter(|&j| tight_mask & (1 << j) != 0)
        .collect();
    if !blocked.is_empty() {
        return Err(Error::DirectionBlocked(blocked));
    }

    let m = rho.n_items();
    match backend.resolve(m) {
        SfmBackend::Exhaustive => {
            let shifted = Shifted { rho, z };
            let mut best: Option<(S, u64)> = None;
            for mask in 1..=full_mask(m) {
                let gsum = sum(
                    mask_items(mask, m)
                        .into_iter()
                        .map(|j| gamma[j].clone()),
                );
                if gsum <= S::zero() {
                    continue;
                }
                let ratio = shifted.eval(mask) / gsum;
                match &best {
                    Some((b, _)) if ratio >= *b => {}
                    _ => best = Some((ratio, mask)),
                }
            }
            let (alpha, mask) =
                best.ok_or_else(|| Error::Invalid("no set meets the direction".into()))?;
            Ok(StepResult {
                alpha: alpha.max_val(S::zero()),
                bottleneck: mask_items(mask, m),
            })
        }
        SfmBackend::MinNormPoint => discrete_newton_step(z, gamma, rho, &support),
        SfmBackend::Auto => unreachable!(),
    }
}

/// Discrete Newton iteration on `alpha`: each step minimizes
/// `rho(S) - z(S) - alpha * gamma(S)` and tightens the estimate. Starts
/// from the singleton bound, which is always an upper bound.
fn discrete_newton_step<S: Scalar>(
    z: &[S],
    gamma: &[S],
    rho: &SubmodularOracle<S>,
    support: &[usize],
) -> Result<StepResult<S>> {
    let m = rho.n_items();
    let shifted = Shifted { rho, z };
    let mut alpha = support
        .iter()
        .map(|&j| shifted.eval(1 << j) / gamma[j].clone())
        .fold(None::<S>, |acc, v| {
            Some(match acc {
                Some(a) if a <= v => a,
                _ => v,
            })
        })
        .expect("nonempty support");
    let mut bottleneck = vec![support[0]];
    let scale = rho.ground_value().abs_val().max_val(S::one());
    let tol = S::tol() * scale;

    for _ in 0..(4 * m + 16) {
        let a = alpha.clone();
        let f = |mask: u64| {
            let gsum = sum(
                mask_items(mask, m)
                    .into_iter()
                    .map(|j| gamma[j].clone()),
            );
            shifted.eval(mask) - a.clone() * gsum
        };
        let (value, set) = wolfe::minimize(&f, m)?;
        if value >= -tol.clone() || set == 0 {
            return Ok(StepResult {
                alpha: alpha.max_val(S::zero()),
                bottleneck,
            });
        }
        let gsum = sum(
            mask_items(set, m)
                .into_iter()
                .map(|j| gamma[j].clone()),
        );
        if gsum <= S::zero() {
            return Err(Error::OracleInconsistent(
                "negative slack on a direction-free set".into(),
            ));
        }
        alpha = shifted.eval(set) / gsum;
        bottleneck = mask_items(set, m);
    }
    Err(Error::NoConvergence("discrete Newton did not settle".into()))
}

fn check_shape<S: Scalar>(z: &[S], rho: &SubmodularOracle<S>) -> Result<()> {
    if z.len() != rho.n_items() {
        return Err(Error::Invalid(format!(
            "vector has {} entries, oracle covers {} items",
            z.len(),
            rho.n_items()
        )));
    }
    if z.iter().any(|v| *v < -S::tol()) {
        return Err(Error::Invalid("vector must be nonnegative".into()));
    }
    Ok(())
}

/// Linear description of the polyhedron restricted to the given items:
/// singleton bounds when the function is modular, otherwise every nonempty
/// subset up to `limit` items. `None` when enumeration would be too large;
/// callers then grow cuts by separation.
pub fn polytope_cuts<S: Scalar>(
    rho: &SubmodularOracle<S>,
    items: &[usize],
    limit: usize,
) -> Option<Vec<(Vec<usize>, S)>> {
    if rho.is_modular() {
        return Some(
            items
                .iter()
                .map(|&j| (vec![j], rho.eval(1 << j)))
                .collect(),
        );
    }
    if items.len() > limit {
        return None;
    }
    let mut cuts = Vec::with_capacity((1usize << items.len()) - 1);
    for bits in 1u64..=full_mask(items.len()) {
        let set: Vec<usize> = items
            .iter()
            .enumerate()
            .filter(|(pos, _)| bits & (1 << pos) != 0)
            .map(|(_, &j)| j)
            .collect();
        let bound = rho.eval(crate::model::items_mask(&set));
        cuts.push((set, bound));
    }
    Some(cuts)
}

/// Feasibility of a full allocation: row sums at most one and aggregate
/// consumption inside the polyhedron.
pub fn check_allocation<S: Scalar>(
    alloc: &Allocation<S>,
    rho: &SubmodularOracle<S>,
) -> Result<()> {
    let one_plus = S::one() + S::tol();
    for i in 0..alloc.n_agents() {
        if alloc.row_sum(i) > one_plus {
            return Err(Error::Invalid(format!("agent {i} holds more than one unit")));
        }
        if alloc.x[i].iter().any(|v| *v < -S::tol()) {
            return Err(Error::Invalid(format!("agent {i} holds a negative amount")));
        }
    }
    let verdict = is_member(&alloc.consumption(), rho, SfmBackend::Auto)?;
    if !verdict.member {
        return Err(Error::NotInPolyhedron {
            set: verdict.most_violated.unwrap_or_default(),
            slack: verdict.slack_min.to_f64(),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::SubmodularOracle;
    use crate::Rational;
    use num_traits::Zero;

    fn rat(n: i64, d: i64) -> Rational {
        Rational::ratio(n, d)
    }

    #[test]
    fn membership_on_cardinality() {
        let rho = SubmodularOracle::cardinality(2);
        let member = is_member(&[0.5, 0.5], &rho, SfmBackend::Auto).unwrap();
        assert!(member.member);
        let member = is_member(&[0.6, 0.6], &rho, SfmBackend::Auto).unwrap();
        assert!(member.member);
    }

    #[test]
    fn membership_violation_names_the_set() {
        let rho = SubmodularOracle::capacities(vec![1.0, 1.0]);
        let verdict = is_member(&[1.2, 0.0], &rho, SfmBackend::Auto).unwrap();
        assert!(!verdict.member);
        assert_eq!(verdict.most_violated, Some(vec![0]));
    }

    #[test]
    fn tight_set_of_saturated_singleton() {
        let rho = SubmodularOracle::cardinality(3);
        let t = max_tight_set(&[1.0, 0.0, 0.0], &rho, SfmBackend::Auto).unwrap();
        assert_eq!(t.set, vec![0]);

        let rho = SubmodularOracle::capacities(vec![rat(2, 1), rat(1, 1)]);
        let t = max_tight_set(&[rat(2, 1), rat(1, 1)], &rho, SfmBackend::Auto).unwrap();
        assert_eq!(t.set, vec![0, 1]);
        assert!(t.slack_min.is_zero());
    }

    #[test]
    fn tight_set_rejects_outside_vectors() {
        let rho = SubmodularOracle::cardinality(2);
        let err = max_tight_set(&[1.5, 0.0], &rho, SfmBackend::Auto);
        assert!(matches!(err, Err(Error::NotInPolyhedron { .. })));
    }

    #[test]
    fn active_items_drop_saturated() {
        let rho = SubmodularOracle::cardinality(2);
        let alloc = Allocation::new(vec![vec![1.0, 0.3]], "test");
        assert_eq!(active_items(&alloc, &rho, SfmBackend::Auto).unwrap(), vec![1]);

        let zero = Allocation::new(vec![vec![0.0, 0.0]], "test");
        assert_eq!(
            active_items(&zero, &rho, SfmBackend::Auto).unwrap(),
            vec![0, 1]
        );
    }

    #[test]
    fn max_step_examples() {
        let rho = SubmodularOracle::cardinality(2);
        let step = max_step(
            &[rat(0, 1), rat(0, 1)],
            &[rat(2, 1), rat(0, 1)],
            &rho,
            SfmBackend::Auto,
        )
        .unwrap();
        assert_eq!(step.alpha, rat(1, 2));

        let rho = SubmodularOracle::capacities(vec![rat(3, 1), rat(1, 1)]);
        let step = max_step(
            &[rat(0, 1), rat(0, 1)],
            &[rat(1, 1), rat(1, 1)],
            &rho,
            SfmBackend::Auto,
        )
        .unwrap();
        assert_eq!(step.alpha, rat(1, 1));
        assert_eq!(step.bottleneck, vec![1]);
    }

    #[test]
    fn max_step_blocked_direction() {
        let rho = SubmodularOracle::cardinality(2);
        let err = max_step(&[1.0, 0.0], &[1.0, 0.0], &rho, SfmBackend::Auto);
        assert!(matches!(err, Err(Error::DirectionBlocked(_))));
    }

    #[test]
    fn newton_step_agrees_with_exhaustive() {
        let rho: SubmodularOracle<f64> = SubmodularOracle::Coverage {
            n_items: 5,
            covers: vec![0b00011, 0b00110, 0b01100, 0b11000, 0b10001],
        };
        let z = vec![0.2, 0.3, 0.1, 0.4, 0.0];
        let gamma = vec![1.0, 0.0, 2.0, 1.0, 1.0];
        let a = max_step(&z, &gamma, &rho, SfmBackend::Exhaustive).unwrap();
        let b = max_step(&z, &gamma, &rho, SfmBackend::MinNormPoint).unwrap();
        assert!((a.alpha - b.alpha).abs() < 1e-9);
    }

    #[test]
    fn min_norm_backend_matches_exhaustive_tight_sets() {
        let rho: SubmodularOracle<f64> = SubmodularOracle::Coverage {
            n_items: 4,
            covers: vec![0b0011, 0b0110, 0b1100, 0b1001],
        };
        // saturate {0,1}: rho({0,1}) = |{0,1,2}| = 3
        let z = vec![1.5, 1.5, 0.0, 0.0];
        let a = max_tight_set(&z, &rho, SfmBackend::Exhaustive).unwrap();
        let b = max_tight_set(&z, &rho, SfmBackend::MinNormPoint).unwrap();
        assert_eq!(a.set, b.set);
    }
}
