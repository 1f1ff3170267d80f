//! Dense two-phase simplex over any [`Scalar`].
//!
//! Desk-scale problems only: the audit layer solves witness programs with
//! a few hundred rows at most. Bland's rule keeps the pivoting cycle-free,
//! and over rationals every verdict (optimal/infeasible/unbounded) is
//! exact.

use crate::scalar::Scalar;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rel {
    Le,
    Ge,
    Eq,
}

/// Maximize `c . x` subject to `rows`, `x >= 0`.
#[derive(Debug, Clone)]
pub struct LinProg<S> {
    pub n_vars: usize,
    pub objective: Vec<S>,
    rows: Vec<(Vec<S>, Rel, S)>,
}

#[derive(Debug, Clone)]
pub enum LpOutcome<S> {
    Optimal { x: Vec<S>, value: S },
    Infeasible,
    Unbounded,
}

impl<S: Scalar> LpOutcome<S> {
    pub fn optimal(&self) -> Option<(&[S], &S)> {
        match self {
            LpOutcome::Optimal { x, value } => Some((x, value)),
            _ => None,
        }
    }
}

impl<S: Scalar> LinProg<S> {
    pub fn new(n_vars: usize) -> Self {
        LinProg {
            n_vars,
            objective: vec![S::zero(); n_vars],
            rows: Vec::new(),
        }
    }

    pub fn set_objective(&mut self, c: Vec<S>) {
        assert_eq!(c.len(), self.n_vars);
        self.objective = c;
    }

    pub fn add_row(&mut self, coeffs: Vec<S>, rel: Rel, rhs: S) {
        assert_eq!(coeffs.len(), self.n_vars);
        self.rows.push((coeffs, rel, rhs));
    }

    pub fn add_sparse_row(&mut self, entries: &[(usize, S)], rel: Rel, rhs: S) {
        let mut coeffs = vec![S::zero(); self.n_vars];
        for (idx, v) in entries {
            coeffs[*idx] = v.clone();
        }
        self.add_row(coeffs, rel, rhs);
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn solve(&self) -> Result<LpOutcome<S>> {
        Tableau::build(self)?.solve()
    }
}

struct Tableau<S> {
    // rows x (cols + 1); last column is the rhs
    a: Vec<Vec<S>>,
    basis: Vec<usize>,
    cols: usize,
    n_vars: usize,
    objective: Vec<S>,
    artificials: Vec<usize>,
    eps: S,
}

impl<S: Scalar> Tableau<S> {
    fn build(lp: &LinProg<S>) -> Result<Tableau<S>> {
        let m = lp.rows.len();
        // slack/surplus for every inequality, artificial for Ge/Eq
        let n_slack = lp.rows.iter().filter(|(_, rel, _)| *rel != Rel::Eq).count();
        let n_art = lp
            .rows
            .iter()
            .filter(|(_, rel, rhs)| needs_artificial(*rel, rhs))
            .count();
        let cols = lp.n_vars + n_slack + n_art;
        let mut a = vec![vec![S::zero(); cols + 1]; m];
        let mut basis = vec![usize::MAX; m];
        let mut artificials = Vec::with_capacity(n_art);

        let mut slack_at = lp.n_vars;
        let mut art_at = lp.n_vars + n_slack;
        for (r, (coeffs, rel, rhs)) in lp.rows.iter().enumerate() {
            let flip = *rhs < S::zero();
            let (rel, rhs) = if flip {
                for (j, c) in coeffs.iter().enumerate() {
                    a[r][j] = -c.clone();
                }
                let rel = match rel {
                    Rel::Le => Rel::Ge,
                    Rel::Ge => Rel::Le,
                    Rel::Eq => Rel::Eq,
                };
                (rel, -rhs.clone())
            } else {
                for (j, c) in coeffs.iter().enumerate() {
                    a[r][j] = c.clone();
                }
                (*rel, rhs.clone())
            };
            a[r][cols] = rhs;
            match rel {
                Rel::Le => {
                    a[r][slack_at] = S::one();
                    basis[r] = slack_at;
                    slack_at += 1;
                }
                Rel::Ge => {
                    a[r][slack_at] = -S::one();
                    slack_at += 1;
                    a[r][art_at] = S::one();
                    basis[r] = art_at;
                    artificials.push(art_at);
                    art_at += 1;
                }
                Rel::Eq => {
                    a[r][art_at] = S::one();
                    basis[r] = art_at;
                    artificials.push(art_at);
                    art_at += 1;
                }
            }
        }

        Ok(Tableau {
            a,
            basis,
            cols,
            n_vars: lp.n_vars,
            objective: lp.objective.clone(),
            artificials,
            eps: S::tol(),
        })
    }

    fn solve(mut self) -> Result<LpOutcome<S>> {
        if !self.artificials.is_empty() {
            // Phase 1: minimize the artificial total.
            let mut cost = vec![S::zero(); self.cols];
            for &j in &self.artificials {
                cost[j] = -S::one();
            }
            match self.optimize(&cost)? {
                PhaseEnd::Unbounded => {
                    return Err(Error::InvariantViolation(
                        "phase-1 objective is bounded by construction".into(),
                    ))
                }
                PhaseEnd::Optimal(value) => {
                    if value < -self.eps.clone() - self.eps.clone() {
                        return Ok(LpOutcome::Infeasible);
                    }
                }
            }
            self.evict_artificials();
        }

        let mut cost = vec![S::zero(); self.cols];
        // caller objective lives on the original variables only
        cost[..self.n_vars].clone_from_slice(&self.objective.clone());
        match self.optimize(&cost)? {
            PhaseEnd::Unbounded => Ok(LpOutcome::Unbounded),
            PhaseEnd::Optimal(value) => {
                let mut x = vec![S::zero(); self.n_vars];
                for (r, &b) in self.basis.iter().enumerate() {
                    if b < self.n_vars {
                        x[b] = self.a[r][self.cols].clone();
                    }
                }
                Ok(LpOutcome::Optimal { x, value })
            }
        }
    }

    /// Removes artificial columns after phase 1. Artificials that are still
    /// basic at value zero are pivoted out; redundant rows are zeroed.
    fn evict_artificials(&mut self) {
        for r in 0..self.a.len() {
            let b = self.basis[r];
            if !self.artificials.contains(&b) {
                continue;
            }
            let pivot_col = (0..self.n_vars + self.n_slack_total())
                .find(|&j| self.a[r][j].abs_val() > self.eps.clone());
            if let Some(col) = pivot_col {
                self.pivot(r, col);
            }
            // If no pivot column exists the row is redundant (all zero).
        }
        for &j in &self.artificials {
            for row in &mut self.a {
                row[j] = S::zero();
            }
        }
        self.artificials.clear();
    }

    fn n_slack_total(&self) -> usize {
        self.cols - self.n_vars - self.artificials.len()
    }

    fn optimize(&mut self, cost: &[S]) -> Result<PhaseEnd<S>> {
        let rows = self.a.len();
        let max_iter = 2000 + 200 * (rows + self.cols);
        for _ in 0..max_iter {
            // reduced costs r_j = c_j - c_B . B^-1 A_j
            let mut entering = None;
            for j in 0..self.cols {
                if self.basis.contains(&j) {
                    continue;
                }
                if self.artificials.contains(&j) && cost[j].is_zero() {
                    continue;
                }
                let mut reduced = cost[j].clone();
                for r in 0..rows {
                    let cb = cost[self.basis[r]].clone();
                    if !cb.is_zero() {
                        reduced = reduced - cb * self.a[r][j].clone();
                    }
                }
                if reduced > self.eps.clone() {
                    entering = Some(j);
                    break; // Bland: lowest index
                }
            }
            let Some(enter) = entering else {
                let mut value = S::zero();
                for r in 0..rows {
                    let cb = cost[self.basis[r]].clone();
                    if !cb.is_zero() {
                        value = value + cb * self.a[r][self.cols].clone();
                    }
                }
                return Ok(PhaseEnd::Optimal(value));
            };

            let mut leave: Option<(usize, S)> = None;
            for r in 0..rows {
                let coef = self.a[r][enter].clone();
                if coef > self.eps.clone() {
                    let ratio = self.a[r][self.cols].clone() / coef;
                    match &leave {
                        Some((lr, best)) => {
                            if ratio < *best
                                || (ratio == *best && self.basis[r] < self.basis[*lr])
                            {
                                leave = Some((r, ratio));
                            }
                        }
                        None => leave = Some((r, ratio)),
                    }
                }
            }
            let Some((leave_row, _)) = leave else {
                return Ok(PhaseEnd::Unbounded);
            };
            self.pivot(leave_row, enter);
        }
        Err(Error::NoConvergence("simplex iteration limit".into()))
    }

    fn pivot(&mut self, row: usize, col: usize) {
        let pivot = self.a[row][col].clone();
        for j in 0..=self.cols {
            self.a[row][j] = self.a[row][j].clone() / pivot.clone();
        }
        for r in 0..self.a.len() {
            if r == row {
                continue;
            }
            let factor = self.a[r][col].clone();
            if factor.is_zero() {
                continue;
            }
            for j in 0..=self.cols {
                let delta = factor.clone() * self.a[row][j].clone();
                self.a[r][j] = self.a[r][j].clone() - delta;
            }
        }
        self.basis[row] = col;
    }
}

enum PhaseEnd<S> {
    Optimal(S),
    Unbounded,
}

fn needs_artificial<S: Scalar>(rel: Rel, rhs: &S) -> bool {
    let flipped = *rhs < S::zero();
    match (rel, flipped) {
        (Rel::Eq, _) => true,
        (Rel::Ge, false) => true,
        (Rel::Le, true) => true,
        _ => false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Rational;

    fn rat(n: i64, d: i64) -> Rational {
        Rational::ratio(n, d)
    }

    #[test]
    fn maximizes_a_small_program() {
        // max x + y s.t. x + 2y <= 4, 3x + y <= 6
        let mut lp = LinProg::new(2);
        lp.set_objective(vec![1.0, 1.0]);
        lp.add_row(vec![1.0, 2.0], Rel::Le, 4.0);
        lp.add_row(vec![3.0, 1.0], Rel::Le, 6.0);
        let out = lp.solve().unwrap();
        let (x, value) = out.optimal().unwrap();
        assert!((value - 2.8).abs() < 1e-9);
        assert!((x[0] - 1.6).abs() < 1e-9);
        assert!((x[1] - 1.2).abs() < 1e-9);
    }

    #[test]
    fn exact_rational_optimum() {
        let mut lp = LinProg::new(2);
        lp.set_objective(vec![rat(1, 1), rat(1, 1)]);
        lp.add_row(vec![rat(1, 1), rat(2, 1)], Rel::Le, rat(4, 1));
        lp.add_row(vec![rat(3, 1), rat(1, 1)], Rel::Le, rat(6, 1));
        let out = lp.solve().unwrap();
        let (x, value) = out.optimal().unwrap();
        assert_eq!(*value, rat(14, 5));
        assert_eq!(x[0], rat(8, 5));
        assert_eq!(x[1], rat(6, 5));
    }

    #[test]
    fn detects_infeasible() {
        let mut lp = LinProg::new(1);
        lp.set_objective(vec![rat(1, 1)]);
        lp.add_row(vec![rat(1, 1)], Rel::Ge, rat(2, 1));
        lp.add_row(vec![rat(1, 1)], Rel::Le, rat(1, 1));
        assert!(matches!(lp.solve().unwrap(), LpOutcome::Infeasible));
    }

    #[test]
    fn detects_unbounded() {
        let mut lp = LinProg::new(2);
        lp.set_objective(vec![rat(1, 1), rat(0, 1)]);
        lp.add_row(vec![rat(-1, 1), rat(1, 1)], Rel::Le, rat(1, 1));
        assert!(matches!(lp.solve().unwrap(), LpOutcome::Unbounded));
    }

    #[test]
    fn equalities_and_negative_rhs() {
        // max y s.t. x + y = 1, -x <= -0.25  => x >= 1/4, optimum y = 3/4
        let mut lp = LinProg::new(2);
        lp.set_objective(vec![rat(0, 1), rat(1, 1)]);
        lp.add_row(vec![rat(1, 1), rat(1, 1)], Rel::Eq, rat(1, 1));
        lp.add_row(vec![rat(-1, 1), rat(0, 1)], Rel::Le, rat(-1, 4));
        let out = lp.solve().unwrap();
        let (x, value) = out.optimal().unwrap();
        assert_eq!(*value, rat(3, 4));
        assert_eq!(x[0], rat(1, 4));
    }
}
