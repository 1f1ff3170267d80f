//! Log-barrier interior-point maximizer for sum-of-logs objectives over a
//! polyhedron, with optional linear equality constraints.
//!
//! The problem solved is
//!   maximize   sum_k log(w_k . v)
//!   subject to a_r . v <= b_r,  c_e . v = d_e,
//! which covers every Nash-welfare program in this crate. Always `f64`:
//! logarithms have no exact-rational arithmetic.

use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

#[derive(Debug, Clone, Default)]
pub struct LogProgram {
    pub n_vars: usize,
    /// Weight vectors of the log terms.
    pub terms: Vec<Vec<f64>>,
    /// Inequalities `a . v <= b`.
    pub ineq: Vec<(Vec<f64>, f64)>,
    /// Equalities `c . v = d`.
    pub eq: Vec<(Vec<f64>, f64)>,
}

#[derive(Debug, Clone)]
pub struct BarrierOutcome {
    pub v: Vec<f64>,
    /// `sum_k log(w_k . v)` at the final iterate.
    pub objective: f64,
    /// Duality-gap certificate of the final centering step.
    pub gap: f64,
    pub newton_steps: usize,
}

const MU: f64 = 20.0;
const MAX_NEWTON_PER_STAGE: usize = 200;

// Imperfect centering costs about `decrement / (2t)` in objective, so the
// tolerance scales with `t`; this also clears the f64 cancellation floor
// of the decrement at huge `t`.
fn newton_tol(t: f64) -> f64 {
    (1e-12 * t).max(1e-9)
}

pub fn maximize(p: &LogProgram, start: &[f64], eps_gap: f64) -> Result<BarrierOutcome> {
    if p.terms.is_empty() {
        // Nothing to optimize; the start point is as good as any.
        return Ok(BarrierOutcome {
            v: start.to_vec(),
            objective: 0.0,
            gap: 0.0,
            newton_steps: 0,
        });
    }
    let n = p.n_vars;
    // Equality rows may repeat or cancel (e.g. forced envy pairs); keep an
    // independent subset so the KKT system stays nonsingular.
    let reduced = LogProgram {
        n_vars: p.n_vars,
        terms: p.terms.clone(),
        ineq: p.ineq.clone(),
        eq: independent_rows(&p.eq)?,
    };
    let p = &reduced;
    let ne = p.eq.len();
    let mut v = DVector::from_column_slice(start);
    check_strict(p, v.as_slice())?;

    let m_ineq = p.ineq.len().max(1) as f64;
    let mut t = 1.0;
    let t_final = m_ineq / eps_gap;
    let mut newton_steps = 0usize;
    let mut last_decrement = 0.0f64;

    loop {
        // Centering: Newton with equality-constrained steps.
        let mut converged = false;
        for _ in 0..MAX_NEWTON_PER_STAGE {
            let (grad, hess) = grad_hess(p, v.as_slice(), t);
            let kkt_dim = n + ne;
            let mut kkt = DMatrix::zeros(kkt_dim, kkt_dim);
            kkt.view_mut((0, 0), (n, n)).copy_from(&hess);
            for (e, (c, _)) in p.eq.iter().enumerate() {
                for (j, cj) in c.iter().enumerate() {
                    kkt[(j, n + e)] = *cj;
                    kkt[(n + e, j)] = *cj;
                }
            }
            let mut rhs = DVector::zeros(kkt_dim);
            for j in 0..n {
                rhs[j] = -grad[j];
            }
            let solution = kkt
                .clone()
                .lu()
                .solve(&rhs)
                .or_else(|| {
                    // Regularize a near-singular Hessian block and retry.
                    let mut reg = kkt;
                    for j in 0..n {
                        reg[(j, j)] += 1e-10 * (1.0 + reg[(j, j)].abs());
                    }
                    reg.lu().solve(&rhs)
                })
                .ok_or_else(|| Error::NoConvergence("singular KKT system".into()))?;
            let dv = solution.rows(0, n).into_owned();
            let decrement = (&hess * &dv).dot(&dv);
            newton_steps += 1;
            if !decrement.is_finite() {
                return Err(Error::NoConvergence("non-finite Newton decrement".into()));
            }
            if decrement / 2.0 <= newton_tol(t) {
                last_decrement = decrement;
                converged = true;
                break;
            }

            match line_search(p, &v, &dv, t, decrement) {
                Ok(step) => v += step * dv,
                Err(_) if decrement / 2.0 <= 1e-4 => {
                    // Progress is blocked by roundoff but the point is
                    // already close to the central path.
                    last_decrement = decrement;
                    converged = true;
                    break;
                }
                Err(e) => return Err(e),
            }
        }
        if !converged {
            return Err(Error::NoConvergence("Newton stage did not center".into()));
        }
        if t >= t_final {
            break;
        }
        t = (t * MU).min(t_final);
    }

    let objective = objective_value(p, v.as_slice());
    // Residual centering error widens the certificate by ~sqrt(m) * lambda.
    let m = p.ineq.len() as f64;
    let gap = (m + (m * last_decrement).sqrt()) / t;
    Ok(BarrierOutcome {
        v: v.as_slice().to_vec(),
        objective,
        gap,
        newton_steps,
    })
}

pub fn objective_value(p: &LogProgram, v: &[f64]) -> f64 {
    p.terms.iter().map(|w| dot(w, v).ln()).sum()
}

fn barrier_value(p: &LogProgram, v: &[f64], t: f64) -> f64 {
    let mut phi = 0.0;
    for w in &p.terms {
        let u = dot(w, v);
        if u <= 0.0 {
            return f64::INFINITY;
        }
        phi -= t * u.ln();
    }
    for (a, b) in &p.ineq {
        let s = b - dot(a, v);
        if s <= 0.0 {
            return f64::INFINITY;
        }
        phi -= s.ln();
    }
    phi
}

fn grad_hess(p: &LogProgram, v: &[f64], t: f64) -> (DVector<f64>, DMatrix<f64>) {
    let n = p.n_vars;
    let mut grad = DVector::zeros(n);
    let mut hess = DMatrix::zeros(n, n);
    for w in &p.terms {
        let u = dot(w, v);
        rank_one(&mut grad, &mut hess, w, -t / u, t / (u * u));
    }
    for (a, b) in &p.ineq {
        let s = b - dot(a, v);
        rank_one(&mut grad, &mut hess, a, 1.0 / s, 1.0 / (s * s));
    }
    (grad, hess)
}

fn rank_one(grad: &mut DVector<f64>, hess: &mut DMatrix<f64>, w: &[f64], g: f64, h: f64) {
    for (j, wj) in w.iter().enumerate() {
        if *wj == 0.0 {
            continue;
        }
        grad[j] += g * wj;
        for (k, wk) in w.iter().enumerate().skip(j) {
            if *wk == 0.0 {
                continue;
            }
            let val = h * wj * wk;
            hess[(j, k)] += val;
            if k != j {
                hess[(k, j)] += val;
            }
        }
    }
}

fn line_search(
    p: &LogProgram,
    v: &DVector<f64>,
    dv: &DVector<f64>,
    t: f64,
    decrement: f64,
) -> Result<f64> {
    // Largest step keeping every log argument strictly positive.
    let mut step_max = 1.0f64;
    for w in &p.terms {
        let u = dot(w, v.as_slice());
        let du = dot(w, dv.as_slice());
        if du < 0.0 {
            step_max = step_max.min(-u / du * 0.99);
        }
    }
    for (a, b) in &p.ineq {
        let s = b - dot(a, v.as_slice());
        let ds = -dot(a, dv.as_slice());
        if ds < 0.0 {
            step_max = step_max.min(-s / ds * 0.99);
        }
    }
    if !(step_max > 0.0) {
        return Err(Error::NoConvergence("line search pinned at the boundary".into()));
    }

    let phi0 = barrier_value(p, v.as_slice(), t);
    let mut step = step_max.min(1.0);
    for _ in 0..80 {
        let cand = v + dv * step;
        let phi = barrier_value(p, cand.as_slice(), t);
        if phi <= phi0 - 0.25 * step * decrement {
            return Ok(step);
        }
        step *= 0.5;
    }
    Err(Error::NoConvergence("backtracking line search stalled".into()))
}

/// Keeps a maximal linearly independent subset of the given equality rows,
/// failing on inconsistent dependents. Echelon rows carry their pivot
/// column; every new row is eliminated against all of them in order.
fn independent_rows(rows: &[(Vec<f64>, f64)]) -> Result<Vec<(Vec<f64>, f64)>> {
    let mut kept: Vec<(Vec<f64>, f64)> = Vec::new();
    let mut echelon: Vec<(Vec<f64>, f64, usize)> = Vec::new();
    for (a, b) in rows {
        let mut ra = a.clone();
        let mut rb = *b;
        for (ka, kb, pivot) in &echelon {
            let factor = ra[*pivot] / ka[*pivot];
            if factor != 0.0 {
                for j in 0..ra.len() {
                    ra[j] -= factor * ka[j];
                }
                rb -= factor * kb;
            }
        }
        let (pivot, norm) = ra
            .iter()
            .enumerate()
            .map(|(j, v)| (j, v.abs()))
            .max_by(|(_, x), (_, y)| x.total_cmp(y))
            .unwrap_or((0, 0.0));
        if norm > 1e-9 {
            kept.push((a.clone(), *b));
            echelon.push((ra, rb, pivot));
        } else if rb.abs() > 1e-7 {
            return Err(Error::Infeasible("inconsistent equality rows".into()));
        }
    }
    Ok(kept)
}

fn check_strict(p: &LogProgram, v: &[f64]) -> Result<()> {
    for (k, w) in p.terms.iter().enumerate() {
        if dot(w, v) <= 0.0 {
            return Err(Error::NoConvergence(format!(
                "start point has non-positive log term {k}"
            )));
        }
    }
    for (r, (a, b)) in p.ineq.iter().enumerate() {
        if b - dot(a, v) <= 0.0 {
            return Err(Error::NoConvergence(format!(
                "start point violates inequality {r}"
            )));
        }
    }
    Ok(())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splits_a_unit_between_two_logs() {
        // max log(x) + log(y) s.t. x + y <= 1 -> x = y = 1/2
        let p = LogProgram {
            n_vars: 2,
            terms: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            ineq: vec![
                (vec![1.0, 1.0], 1.0),
                (vec![-1.0, 0.0], 0.0),
                (vec![0.0, -1.0], 0.0),
            ],
            eq: vec![],
        };
        let out = maximize(&p, &[0.3, 0.3], 1e-10).unwrap();
        assert!((out.v[0] - 0.5).abs() < 1e-7);
        assert!((out.v[1] - 0.5).abs() < 1e-7);
        assert!(out.gap <= 1e-9);
    }

    #[test]
    fn respects_equality_constraints() {
        // max log(x) + log(y) s.t. x + 2y = 1 -> x = 1/2, y = 1/4
        let p = LogProgram {
            n_vars: 2,
            terms: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            ineq: vec![(vec![-1.0, 0.0], 0.0), (vec![0.0, -1.0], 0.0)],
            eq: vec![(vec![1.0, 2.0], 1.0)],
        };
        let out = maximize(&p, &[0.4, 0.3], 1e-10).unwrap();
        assert!((out.v[0] - 0.5).abs() < 1e-7);
        assert!((out.v[1] - 0.25).abs() < 1e-7);
    }

    #[test]
    fn weighted_terms_tilt_the_split() {
        // max log(2x) + log(y) over the simplex: argmax unchanged by the
        // inner scaling, still x = y = 1/2.
        let p = LogProgram {
            n_vars: 2,
            terms: vec![vec![2.0, 0.0], vec![0.0, 1.0]],
            ineq: vec![
                (vec![1.0, 1.0], 1.0),
                (vec![-1.0, 0.0], 0.0),
                (vec![0.0, -1.0], 0.0),
            ],
            eq: vec![],
        };
        let out = maximize(&p, &[0.2, 0.6], 1e-10).unwrap();
        assert!((out.v[0] - 0.5).abs() < 1e-7);
        assert!((out.objective - (1.0f64.ln() + 0.5f64.ln())).abs() < 1e-7);
    }
}
