//! Fujishige–Wolfe minimum-norm-point algorithm over the base polytope of
//! a submodular function, used as the submodular-minimization backend when
//! the ground set is too large to enumerate.
//!
//! Works over any [`Scalar`]; with rationals every comparison is exact and
//! the algorithm terminates with the true minimum-norm point.

use crate::scalar::{dot, sum, Scalar};
use crate::{Error, Result};

/// Evaluates `f` greedily along the permutation induced by ascending `x`,
/// producing the vertex of the base polytope minimizing `<x, q>`.
fn greedy_vertex<S: Scalar>(f: &dyn Fn(u64) -> S, m: usize, x: &[S]) -> Vec<S> {
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| {
        x[a].partial_cmp(&x[b])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut q = vec![S::zero(); m];
    let mut mask = 0u64;
    let mut prev = S::zero();
    for &j in &order {
        mask |= 1 << j;
        let val = f(mask);
        q[j] = val.clone() - prev;
        prev = val;
    }
    q
}

/// Solves `min ||sum_i w_i q_i||` over affine weights (`sum w_i = 1`) for the
/// corral `points`, via the bordered Gram system.
fn affine_minimizer<S: Scalar>(points: &[Vec<S>]) -> Result<Vec<S>> {
    let k = points.len();
    let n = k + 1;
    // rows: [0, 1...1 | 1], [1, G | 0]
    let mut a = vec![vec![S::zero(); n + 1]; n];
    for i in 0..k {
        a[0][i + 1] = S::one();
        a[i + 1][0] = S::one();
        for j in 0..k {
            a[i + 1][j + 1] = dot(&points[i], &points[j]);
        }
    }
    a[0][n] = S::one();
    gaussian_solve(&mut a).map(|sol| sol[1..].to_vec())
}

/// Dense Gaussian elimination with partial pivoting on an augmented matrix.
fn gaussian_solve<S: Scalar>(a: &mut [Vec<S>]) -> Result<Vec<S>> {
    let n = a.len();
    for col in 0..n {
        let mut pivot = col;
        for row in col + 1..n {
            if a[row][col].abs_val() > a[pivot][col].abs_val() {
                pivot = row;
            }
        }
        if a[pivot][col].is_zero() {
            return Err(Error::NoConvergence("singular system in norm minimization".into()));
        }
        a.swap(col, pivot);
        for row in 0..n {
            if row == col || a[row][col].is_zero() {
                continue;
            }
            let factor = a[row][col].clone() / a[col][col].clone();
            for j in col..=n {
                let delta = factor.clone() * a[col][j].clone();
                a[row][j] = a[row][j].clone() - delta;
            }
        }
    }
    Ok((0..n).map(|i| a[i][n].clone() / a[i][i].clone()).collect())
}

/// Minimum-norm point in the base polytope of the submodular function `f`
/// with `f(empty) = 0` over `m` elements.
pub fn min_norm_point<S: Scalar>(f: &dyn Fn(u64) -> S, m: usize) -> Result<Vec<S>> {
    let eps = S::tol();
    let x0 = greedy_vertex(f, m, &vec![S::zero(); m]);
    let mut corral: Vec<Vec<S>> = vec![x0.clone()];
    let mut lambda: Vec<S> = vec![S::one()];
    let mut x = x0;

    let scale = {
        let ground = f(crate::model::full_mask(m)).abs_val();
        ground.max_val(S::one())
    };
    let major_tol = eps.clone() * scale.clone();

    let max_major = 40 * (m + 2) * (m + 2);
    for _ in 0..max_major {
        let q = greedy_vertex(f, m, &x);
        let xx = dot(&x, &x);
        let xq = dot(&x, &q);
        if xx <= xq + major_tol.clone() {
            return Ok(x);
        }
        if corral.iter().any(|p| p == &q) {
            // Duplicate vertex: no progress is possible beyond tolerance.
            return Ok(x);
        }
        corral.push(q);
        lambda.push(S::zero());

        loop {
            let mu = affine_minimizer(&corral)?;
            if mu.iter().all(|w| *w > eps.clone()) {
                x = combine(&corral, &mu);
                lambda = mu;
                break;
            }
            // Step from lambda toward mu until the first coefficient vanishes.
            let mut theta = S::one();
            for i in 0..corral.len() {
                if mu[i] <= eps.clone() {
                    let denom = lambda[i].clone() - mu[i].clone();
                    if denom > S::zero() {
                        let cand = lambda[i].clone() / denom;
                        if cand < theta {
                            theta = cand;
                        }
                    }
                }
            }
            let mut next_lambda = Vec::with_capacity(corral.len());
            for i in 0..corral.len() {
                let w = theta.clone() * mu[i].clone()
                    + (S::one() - theta.clone()) * lambda[i].clone();
                next_lambda.push(w);
            }
            let keep: Vec<bool> = next_lambda.iter().map(|w| *w > eps.clone()).collect();
            let mut new_corral = Vec::new();
            let mut new_lambda = Vec::new();
            for i in 0..corral.len() {
                if keep[i] {
                    new_corral.push(corral[i].clone());
                    new_lambda.push(next_lambda[i].clone());
                }
            }
            if new_corral.is_empty() {
                return Err(Error::NoConvergence("corral collapsed".into()));
            }
            // Renormalize the surviving weights.
            let total = sum(new_lambda.iter().cloned());
            for w in &mut new_lambda {
                *w = w.clone() / total.clone();
            }
            corral = new_corral;
            lambda = new_lambda;
            x = combine(&corral, &lambda);
            if corral.len() == 1 {
                break;
            }
        }
    }
    Err(Error::NoConvergence("norm-point iteration limit".into()))
}

fn combine<S: Scalar>(points: &[Vec<S>], weights: &[S]) -> Vec<S> {
    let m = points[0].len();
    let mut x = vec![S::zero(); m];
    for (p, w) in points.iter().zip(weights) {
        for j in 0..m {
            x[j] = x[j].clone() + w.clone() * p[j].clone();
        }
    }
    x
}

/// Minimizes `f` via the minimum-norm point: negative coordinates span the
/// minimal minimizer and nonpositive ones the maximal minimizer. Both are
/// then corrected by saturation probing against the oracle.
pub fn minimize<S: Scalar>(f: &dyn Fn(u64) -> S, m: usize) -> Result<(S, u64)> {
    let w = min_norm_point(f, m)?;
    let eps = S::tol();
    let mut minimal = 0u64;
    let mut maximal = 0u64;
    for j in 0..m {
        if w[j] < -eps.clone() {
            minimal |= 1 << j;
        }
        if w[j] <= eps.clone() {
            maximal |= 1 << j;
        }
    }
    let mut best = f(minimal);
    let mut best_set = minimal;
    let max_val = f(maximal);
    if max_val <= best.clone() + eps.clone() * best.abs_val().max_val(S::one()) {
        if max_val < best {
            best = max_val;
        }
        best_set = maximal;
    }
    // Saturation probing: grow toward the maximal minimizer one element at
    // a time; submodularity makes single-element closure sufficient.
    let probe_tol = eps * best.abs_val().max_val(S::one());
    let mut grown = true;
    while grown {
        grown = false;
        for j in 0..m {
            if best_set & (1 << j) != 0 {
                continue;
            }
            let cand = best_set | (1 << j);
            let v = f(cand);
            if v <= best.clone() + probe_tol.clone() {
                if v < best {
                    best = v;
                }
                best_set = cand;
                grown = true;
            }
        }
    }
    Ok((best, best_set))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{full_mask, SubmodularOracle};
    use crate::Rational;

    fn brute_force_min<S: Scalar>(f: &dyn Fn(u64) -> S, m: usize) -> (S, u64) {
        let mut best = f(0);
        let mut union = 0u64;
        for mask in 0..=full_mask(m) {
            let v = f(mask);
            if v < best {
                best = v;
                union = mask;
            } else if v == best {
                union |= mask;
            }
        }
        // union of minimizers is the maximal minimizer
        (best, union)
    }

    #[test]
    fn matches_brute_force_on_shifted_coverage() {
        let oracle: SubmodularOracle<f64> = SubmodularOracle::Coverage {
            n_items: 4,
            covers: vec![0b0011, 0b0110, 0b1100, 0b0101],
        };
        let z = [0.5, 1.8, 0.2, 1.1];
        let f = |mask: u64| {
            let mut lin = 0.0;
            for j in 0..4 {
                if mask & (1 << j) != 0 {
                    lin += z[j];
                }
            }
            oracle.eval(mask) - lin
        };
        let (value, set) = minimize(&f, 4).unwrap();
        let (bf_value, bf_set) = brute_force_min(&f, 4);
        assert!((value - bf_value).abs() < 1e-9);
        assert_eq!(set, bf_set);
    }

    #[test]
    fn exact_over_rationals() {
        let caps = [Rational::ratio(3, 2), Rational::ratio(1, 1), Rational::ratio(2, 1)];
        let z = [Rational::ratio(2, 1), Rational::ratio(1, 2), Rational::ratio(1, 3)];
        let f = |mask: u64| {
            let mut acc = Rational::from_int(0);
            for j in 0..3 {
                if mask & (1 << j) != 0 {
                    acc = acc + caps[j].clone() - z[j].clone();
                }
            }
            acc
        };
        let (value, set) = minimize(&f, 3).unwrap();
        let (bf_value, bf_set) = brute_force_min(&f, 3);
        assert_eq!(value, bf_value);
        assert_eq!(set, bf_set);
    }
}
