//! Nash-welfare convex programs over the assignment polytope.
//!
//! Three programs share one barrier solver: the plain maximum-Nash-welfare
//! program, its envy-free-constrained variant, and the restricted-supply
//! variant with per-item caps. Agents whose achievable utility is zero are
//! dropped from the objective and receive the zero bundle; feasibility
//! faces forced by the constraints (e.g. envy equalities between identical
//! agents) are detected with a phase-I linear program and moved into the
//! equality system so the barrier always starts strictly interior.

pub mod barrier;

use serde::Serialize;
use serde_json::json;

use crate::linprog::{LinProg, LpOutcome, Rel};
use crate::model::{
    full_mask, items_mask, mask_items, Allocation, CardinalInstance, Mode, SubmodularOracle,
};
use crate::polymatroid::{self, SfmBackend};
use crate::scalar::Scalar;
use crate::{Error, Result};

use barrier::LogProgram;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowMode {
    /// `sum_j x_ij <= 1` per agent.
    LeqOne,
    /// `sum_j x_ij = 1` per agent (envy-free program only).
    EqOne,
    /// No per-agent constraint (Fisher markets).
    Unconstrained,
}

#[derive(Debug, Clone)]
pub struct NswOptions {
    /// Target duality gap of the barrier solve.
    pub eps_gap: f64,
    /// Violation threshold for lazily separated polymatroid cuts.
    pub cut_tol: f64,
    pub max_cut_rounds: usize,
}

impl Default for NswOptions {
    fn default() -> Self {
        NswOptions {
            eps_gap: 1e-9,
            cut_tol: 1e-8,
            max_cut_rounds: 64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveStatus {
    Optimal,
    Infeasible,
}

#[derive(Debug, Clone, Serialize)]
pub struct ActiveConstraint {
    pub label: String,
    pub slack: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SolveResult {
    pub x: Vec<Vec<f64>>,
    /// `sum_i log u_i(x_i)` over agents in the objective, original scale.
    pub objective: f64,
    /// Geometric mean of the included agents' utilities.
    pub nsw: f64,
    /// Duality-gap certificate from the barrier solve.
    pub gap: f64,
    pub iterations: usize,
    pub status: SolveStatus,
    pub excluded_agents: Vec<usize>,
    pub active_constraints: Vec<ActiveConstraint>,
}

impl SolveResult {
    pub fn to_allocation(&self, mechanism: &str) -> Allocation<f64> {
        let mut alloc = Allocation::new(self.x.clone(), mechanism);
        alloc.provenance.params = json!({
            "objective": self.objective,
            "gap": self.gap,
            "iterations": self.iterations,
        });
        alloc
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).unwrap_or(serde_json::Value::Null)
    }

    fn empty(n: usize, m: usize) -> SolveResult {
        SolveResult {
            x: vec![vec![0.0; m]; n],
            objective: 0.0,
            nsw: 0.0,
            gap: 0.0,
            iterations: 0,
            status: SolveStatus::Optimal,
            excluded_agents: (0..n).collect(),
            active_constraints: Vec::new(),
        }
    }
}

/// Maximum Nash welfare over the feasible polytope.
pub fn max_nsw<S: Scalar>(inst: &CardinalInstance<S>, opts: &NswOptions) -> Result<SolveResult> {
    require_goods(inst)?;
    let u = matrix_f64(&inst.values);
    let rho = oracle_f64(&inst.rho);
    solve_program(&u, RowMode::LeqOne, Supply::Polymatroid(&rho), false, opts)
}

/// Maximum Nash welfare subject to exact envy-freeness constraints.
pub fn max_nsw_ef<S: Scalar>(
    inst: &CardinalInstance<S>,
    row_mode: RowMode,
    opts: &NswOptions,
) -> Result<SolveResult> {
    require_goods(inst)?;
    let u = matrix_f64(&inst.values);
    let rho = oracle_f64(&inst.rho);
    solve_program(&u, row_mode, Supply::Polymatroid(&rho), true, opts)
}

/// Maximum Nash welfare with the polymatroid replaced by per-item caps.
pub fn max_nsw_restricted<S: Scalar>(
    inst: &CardinalInstance<S>,
    supply_cap: &[S],
    opts: &NswOptions,
) -> Result<SolveResult> {
    require_goods(inst)?;
    if supply_cap.len() != inst.n_items() {
        return Err(Error::Invalid("supply cap length != items".into()));
    }
    let u = matrix_f64(&inst.values);
    let caps: Vec<f64> = supply_cap.iter().map(Scalar::to_f64).collect();
    solve_program(&u, RowMode::LeqOne, Supply::Caps(&caps), false, opts)
}

/// Fisher-market Nash welfare for linear utilities: supply caps only, no
/// per-agent row constraint.
pub fn max_nsw_fisher_linear(
    weights: &[Vec<f64>],
    supplies: &[f64],
    opts: &NswOptions,
) -> Result<SolveResult> {
    solve_program(weights, RowMode::Unconstrained, Supply::Caps(supplies), false, opts)
}

fn require_goods<S: Scalar>(inst: &CardinalInstance<S>) -> Result<()> {
    if inst.mode != Mode::Goods {
        return Err(Error::Invalid(
            "Nash-welfare programs are defined for goods instances".into(),
        ));
    }
    inst.validate().into_result()?;
    Ok(())
}

pub fn matrix_f64<S: Scalar>(values: &[Vec<S>]) -> Vec<Vec<f64>> {
    values
        .iter()
        .map(|row| row.iter().map(Scalar::to_f64).collect())
        .collect()
}

pub fn oracle_f64<S: Scalar>(rho: &SubmodularOracle<S>) -> SubmodularOracle<f64> {
    match rho {
        SubmodularOracle::Cardinality { n_items } => SubmodularOracle::Cardinality {
            n_items: *n_items,
        },
        SubmodularOracle::Capacities { s } => SubmodularOracle::Capacities {
            s: s.iter().map(Scalar::to_f64).collect(),
        },
        SubmodularOracle::Coverage { n_items, covers } => SubmodularOracle::Coverage {
            n_items: *n_items,
            covers: covers.clone(),
        },
        SubmodularOracle::Table { n_items, values } => SubmodularOracle::Table {
            n_items: *n_items,
            values: values.iter().map(Scalar::to_f64).collect(),
        },
        SubmodularOracle::Laminar { item_caps, groups } => SubmodularOracle::Laminar {
            item_caps: item_caps.iter().map(Scalar::to_f64).collect(),
            groups: groups
                .iter()
                .map(|g| crate::model::LaminarGroup {
                    members: g.members.clone(),
                    cap: g.cap.to_f64(),
                })
                .collect(),
        },
    }
}

enum Supply<'a> {
    Polymatroid(&'a SubmodularOracle<f64>),
    Caps(&'a [f64]),
}

/// Ground sets enumerated fully; larger ones grow cuts by separation.
const MATERIALIZE_LIMIT: usize = 12;

struct VarMap {
    index: Vec<Vec<Option<usize>>>,
    list: Vec<(usize, usize)>,
}

impl VarMap {
    fn new(n: usize, m: usize, included: &[usize], active: &[usize]) -> VarMap {
        let mut index = vec![vec![None; m]; n];
        let mut list = Vec::new();
        for &i in included {
            for &j in active {
                index[i][j] = Some(list.len());
                list.push((i, j));
            }
        }
        VarMap { index, list }
    }

    fn n_vars(&self) -> usize {
        self.list.len()
    }
}

fn solve_program(
    u: &[Vec<f64>],
    row_mode: RowMode,
    supply: Supply<'_>,
    ef: bool,
    opts: &NswOptions,
) -> Result<SolveResult> {
    let n = u.len();
    let m = u.first().map(|r| r.len()).unwrap_or(0);
    if n == 0 || m == 0 {
        return Err(Error::Invalid("empty utility matrix".into()));
    }

    let active: Vec<usize> = match &supply {
        Supply::Polymatroid(rho) => (0..m).filter(|&j| rho.eval(1 << j) > 0.0).collect(),
        Supply::Caps(caps) => (0..m).filter(|&j| caps[j] > 0.0).collect(),
    };
    let included: Vec<usize> = (0..n)
        .filter(|&i| active.iter().any(|&j| u[i][j] > 0.0))
        .collect();
    if included.is_empty() || active.is_empty() {
        return Ok(SolveResult::empty(n, m));
    }

    // Per-agent normalization: the argmax is invariant, the objective is
    // shifted back at the end.
    let scale: Vec<f64> = (0..n)
        .map(|i| {
            active
                .iter()
                .map(|&j| u[i][j])
                .fold(0.0f64, f64::max)
                .max(f64::MIN_POSITIVE)
        })
        .collect();

    let (mut cuts, lazy) = match &supply {
        Supply::Caps(caps) => (
            active.iter().map(|&j| (vec![j], caps[j])).collect::<Vec<_>>(),
            false,
        ),
        Supply::Polymatroid(rho) => {
            if rho.is_modular() {
                (
                    active.iter().map(|&j| (vec![j], rho.eval(1 << j))).collect(),
                    false,
                )
            } else if active.len() <= MATERIALIZE_LIMIT {
                let mut cuts = Vec::with_capacity((1usize << active.len()) - 1);
                for bits in 1u64..=full_mask(active.len()) {
                    let set: Vec<usize> = active
                        .iter()
                        .enumerate()
                        .filter(|(pos, _)| bits & (1 << pos) != 0)
                        .map(|(_, &j)| j)
                        .collect();
                    let bound = rho.eval(items_mask(&set));
                    cuts.push((set, bound));
                }
                (cuts, false)
            } else {
                let mut cuts: Vec<(Vec<usize>, f64)> = active
                    .iter()
                    .map(|&j| (vec![j], rho.eval(1 << j)))
                    .collect();
                cuts.push((active.clone(), rho.eval(items_mask(&active))));
                (cuts, true)
            }
        }
    };

    let vars = VarMap::new(n, m, &included, &active);
    let mut rounds = 0usize;
    loop {
        let outcome = solve_once(u, &scale, &vars, &included, &active, row_mode, &cuts, ef, opts)?;
        let Some(result) = outcome else {
            return Ok(infeasible_result(n, m));
        };
        if !lazy {
            return Ok(result);
        }
        let Supply::Polymatroid(rho) = &supply else {
            return Ok(result);
        };
        let mut z = vec![0.0; m];
        for row in &result.x {
            for (j, v) in row.iter().enumerate() {
                z[j] += *v;
            }
        }
        let verdict = polymatroid::is_member(&z, rho, SfmBackend::Auto)?;
        let scale_rho = rho.ground_value().abs().max(1.0);
        if verdict.slack_min.to_f64() >= -opts.cut_tol * scale_rho {
            return Ok(result);
        }
        let set = verdict.most_violated.unwrap_or_else(|| active.clone());
        let bound = rho.eval(items_mask(&set));
        if cuts.iter().any(|(s, _)| *s == set) {
            return Ok(result);
        }
        cuts.push((set, bound));
        rounds += 1;
        if rounds > opts.max_cut_rounds {
            return Err(Error::NoConvergence("cut separation did not close".into()));
        }
    }
}

fn infeasible_result(n: usize, m: usize) -> SolveResult {
    SolveResult {
        status: SolveStatus::Infeasible,
        ..SolveResult::empty(n, m)
    }
}

#[allow(clippy::too_many_arguments)]
fn solve_once(
    u: &[Vec<f64>],
    scale: &[f64],
    vars: &VarMap,
    included: &[usize],
    active: &[usize],
    row_mode: RowMode,
    cuts: &[(Vec<usize>, f64)],
    ef: bool,
    opts: &NswOptions,
) -> Result<Option<SolveResult>> {
    let n = u.len();
    let m = u.first().map(|r| r.len()).unwrap_or(0);
    let nv = vars.n_vars();

    // Objective terms: scaled utility row per included agent.
    let mut terms = Vec::with_capacity(included.len());
    for &i in included {
        let mut w = vec![0.0; nv];
        for &j in active {
            if let Some(v) = vars.index[i][j] {
                w[v] = u[i][j] / scale[i];
            }
        }
        terms.push(w);
    }

    let mut ineq: Vec<(Vec<f64>, f64)> = Vec::new();
    let mut labels: Vec<String> = Vec::new();
    let mut eq: Vec<(Vec<f64>, f64)> = Vec::new();

    for v in 0..nv {
        let mut a = vec![0.0; nv];
        a[v] = -1.0;
        let (i, j) = vars.list[v];
        ineq.push((a, 0.0));
        labels.push(format!("nonneg[{i},{j}]"));
    }
    for (t, &i) in included.iter().enumerate() {
        let mut a = vec![0.0; nv];
        for &j in active {
            if let Some(v) = vars.index[i][j] {
                a[v] = 1.0;
            }
        }
        match row_mode {
            RowMode::LeqOne => {
                ineq.push((a, 1.0));
                labels.push(format!("row[{i}]"));
            }
            RowMode::EqOne => eq.push((a, 1.0)),
            RowMode::Unconstrained => {}
        }
        let _ = t;
    }
    for (set, bound) in cuts {
        let mut a = vec![0.0; nv];
        for &i in included {
            for &j in set {
                if let Some(v) = vars.index[i][j] {
                    a[v] = 1.0;
                }
            }
        }
        ineq.push((a, *bound));
        labels.push(format!("cut{set:?}"));
    }
    if ef {
        for (ti, &i) in included.iter().enumerate() {
            for &k in included {
                if i == k {
                    continue;
                }
                // u_i . x_k - u_i . x_i <= 0  (scaled by agent i)
                let mut a = vec![0.0; nv];
                for &j in active {
                    let w = u[i][j] / scale[i];
                    if let Some(v) = vars.index[k][j] {
                        a[v] += w;
                    }
                    if let Some(v) = vars.index[i][j] {
                        a[v] -= w;
                    }
                }
                ineq.push((a, 0.0));
                labels.push(format!("envy[{i},{k}]"));
                let _ = ti;
            }
        }
    }

    // Interior start: analytic for the plain inequality-only programs,
    // phase-I face detection otherwise.
    let needs_phase_one = ef || row_mode == RowMode::EqOne;
    let (start, forced) = if needs_phase_one {
        match phase_one(nv, &ineq, &labels, &eq, &terms)? {
            Some(r) => r,
            None => return Ok(None),
        }
    } else {
        (analytic_start(nv, cuts, vars, included, active, row_mode), Vec::new())
    };

    let mut program = LogProgram {
        n_vars: nv,
        terms,
        ineq: Vec::new(),
        eq,
    };
    let mut kept_labels = Vec::new();
    for (idx, (a, b)) in ineq.iter().enumerate() {
        if forced.contains(&idx) {
            program.eq.push((a.clone(), *b));
        } else {
            program.ineq.push((a.clone(), *b));
            kept_labels.push(labels[idx].clone());
        }
    }

    let out = barrier::maximize(&program, &start, opts.eps_gap)?;

    let mut x = vec![vec![0.0; m]; n];
    for (v, &(i, j)) in vars.list.iter().enumerate() {
        x[i][j] = out.v[v].max(0.0);
    }
    let mut objective = 0.0;
    for &i in included {
        let bundle: f64 = (0..m).map(|j| u[i][j] * x[i][j]).sum();
        objective += bundle.ln();
    }
    let mut active_constraints: Vec<ActiveConstraint> = program
        .ineq
        .iter()
        .zip(&kept_labels)
        .filter_map(|((a, b), label)| {
            let slack = b - dot(a, &out.v);
            (slack.abs() <= 1e-6 * b.abs().max(1.0)).then(|| ActiveConstraint {
                label: label.clone(),
                slack,
            })
        })
        .collect();
    for idx in &forced {
        active_constraints.push(ActiveConstraint {
            label: format!("{} (forced equality)", labels[*idx]),
            slack: 0.0,
        });
    }

    Ok(Some(SolveResult {
        x,
        objective,
        nsw: (objective / included.len() as f64).exp(),
        gap: out.gap,
        iterations: out.newton_steps,
        status: SolveStatus::Optimal,
        excluded_agents: (0..n).filter(|i| !included.contains(i)).collect(),
        active_constraints,
    }))
}

fn analytic_start(
    nv: usize,
    cuts: &[(Vec<usize>, f64)],
    vars: &VarMap,
    included: &[usize],
    active: &[usize],
    row_mode: RowMode,
) -> Vec<f64> {
    let n_inc = included.len() as f64;
    let mut theta = match row_mode {
        RowMode::Unconstrained => f64::INFINITY,
        _ => 0.5 / active.len() as f64,
    };
    for (set, bound) in cuts {
        let cap = bound / (n_inc * set.len() as f64);
        theta = theta.min(0.5 * cap);
    }
    let _ = vars;
    vec![theta; nv]
}

type PhaseOne = (Vec<f64>, Vec<usize>);

/// Finds a strictly interior start for the barrier, detecting inequality
/// constraints that hold with equality on the whole feasible set (the
/// forced face) and reporting them for promotion into the equality system.
/// Returns `None` when the program is infeasible.
fn phase_one(
    nv: usize,
    ineq: &[(Vec<f64>, f64)],
    labels: &[String],
    eq: &[(Vec<f64>, f64)],
    terms: &[Vec<f64>],
) -> Result<Option<PhaseOne>> {
    let t_var = nv;
    let mut forced: Vec<usize> = Vec::new();
    let t_floor = 1e-7;

    for _round in 0..(ineq.len() + 2) {
        let mut lp = LinProg::new(nv + 1);
        let mut c = vec![0.0; nv + 1];
        c[t_var] = 1.0;
        lp.set_objective(c);
        for (idx, (a, b)) in ineq.iter().enumerate() {
            let mut row = a.clone();
            if forced.contains(&idx) {
                row.push(0.0);
                lp.add_row(row, Rel::Eq, *b);
            } else {
                row.push(row_scale(a));
                lp.add_row(row, Rel::Le, *b);
            }
        }
        for (ca, d) in eq {
            let mut row = ca.clone();
            row.push(0.0);
            lp.add_row(row, Rel::Eq, *d);
        }
        for w in terms {
            // Objective logs need strictly positive arguments as well.
            let mut row: Vec<f64> = w.iter().map(|v| -v).collect();
            row.push(row_scale(w));
            lp.add_row(row, Rel::Le, 0.0);
        }
        let mut cap = vec![0.0; nv + 1];
        cap[t_var] = 1.0;
        lp.add_row(cap, Rel::Le, 1.0);

        let (point, t_opt) = match lp.solve()? {
            LpOutcome::Optimal { x, value } => (x, value),
            LpOutcome::Infeasible => return Ok(None),
            LpOutcome::Unbounded => {
                return Err(Error::InvariantViolation("phase-I is bounded".into()))
            }
        };
        if t_opt > t_floor {
            return Ok(Some((point[..nv].to_vec(), forced)));
        }

        // Tight candidates at the max-t point; each is probed with its own
        // slack-maximization program.
        let mut progressed = false;
        for (idx, (a, b)) in ineq.iter().enumerate() {
            if forced.contains(&idx) {
                continue;
            }
            let slack = b - dot(a, &point[..nv]);
            if slack > 1e-8 * b.abs().max(1.0) {
                continue;
            }
            let mut probe = LinProg::new(nv);
            probe.set_objective(a.iter().map(|v| -v).collect());
            for (jdx, (pa, pb)) in ineq.iter().enumerate() {
                let rel = if forced.contains(&jdx) { Rel::Eq } else { Rel::Le };
                probe.add_row(pa.clone(), rel, *pb);
            }
            for (ca, d) in eq {
                probe.add_row(ca.clone(), Rel::Eq, *d);
            }
            match probe.solve()? {
                LpOutcome::Optimal { value, .. } => {
                    let max_slack = b + value;
                    if max_slack <= 1e-7 * b.abs().max(1.0) {
                        forced.push(idx);
                        progressed = true;
                    }
                }
                LpOutcome::Infeasible => return Ok(None),
                LpOutcome::Unbounded => {}
            }
        }
        if !progressed {
            // Check whether a log term is pinned at zero: the objective
            // would be unbounded below, i.e. the program has no optimum.
            for (k, w) in terms.iter().enumerate() {
                let mut probe = LinProg::new(nv);
                probe.set_objective(w.clone());
                for (jdx, (pa, pb)) in ineq.iter().enumerate() {
                    let rel = if forced.contains(&jdx) { Rel::Eq } else { Rel::Le };
                    probe.add_row(pa.clone(), rel, *pb);
                }
                for (ca, d) in eq {
                    probe.add_row(ca.clone(), Rel::Eq, *d);
                }
                if let LpOutcome::Optimal { value, .. } = probe.solve()? {
                    if value <= 1e-9 {
                        return Err(Error::Infeasible(format!(
                            "agent term {k} is pinned at zero utility"
                        )));
                    }
                }
            }
            return Err(Error::NoConvergence(format!(
                "face detection stalled with {} forced rows ({:?})",
                forced.len(),
                forced.iter().map(|&i| labels[i].clone()).collect::<Vec<_>>()
            )));
        }
    }
    Err(Error::NoConvergence("face detection looped".into()))
}

fn row_scale(a: &[f64]) -> f64 {
    a.iter().fold(0.0f64, |acc, v| acc.max(v.abs())).max(1e-12)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Mode;

    fn goods(values: Vec<Vec<f64>>, rho: Option<SubmodularOracle<f64>>) -> CardinalInstance<f64> {
        CardinalInstance::new(Mode::Goods, values, rho).unwrap()
    }

    #[test]
    fn single_agent_takes_the_item() {
        let inst = goods(vec![vec![1.0]], None);
        let r = max_nsw(&inst, &NswOptions::default()).unwrap();
        assert!((r.x[0][0] - 1.0).abs() < 1e-6);
        assert!((r.nsw - 1.0).abs() < 1e-6);
    }

    #[test]
    fn disjoint_optima_separate() {
        let inst = goods(vec![vec![1.0, 0.0], vec![0.0, 1.0]], None);
        let r = max_nsw(&inst, &NswOptions::default()).unwrap();
        assert!((r.x[0][0] - 1.0).abs() < 1e-6);
        assert!((r.x[1][1] - 1.0).abs() < 1e-6);
        assert!((r.nsw - 1.0).abs() < 1e-6);
    }

    #[test]
    fn identical_agents_split_under_capacities() {
        let inst = goods(
            vec![vec![2.0, 1.0], vec![2.0, 1.0]],
            Some(SubmodularOracle::capacities(vec![1.0, 1.0])),
        );
        let r = max_nsw(&inst, &NswOptions::default()).unwrap();
        for i in 0..2 {
            assert!((r.x[i][0] - 0.5).abs() < 1e-5, "x = {:?}", r.x);
            assert!((r.x[i][1] - 0.5).abs() < 1e-5);
        }
        assert!((r.nsw - 1.5).abs() < 1e-5);
        assert!(r.gap <= 1e-7);
    }

    #[test]
    fn grid_search_oracle_confirms_the_two_by_two_optimum() {
        // Exhaustive 1e-3 grid over the two free coordinates; the inner
        // bundle of agent 1 is maximized greedily.
        let u = [[2.0, 1.0], [2.0, 1.0]];
        let mut best = f64::NEG_INFINITY;
        let steps = 1000;
        for ai in 0..=steps {
            for bi in 0..=steps - ai {
                let a = ai as f64 / steps as f64;
                let b = bi as f64 / steps as f64;
                let x20 = (1.0 - a).min(1.0);
                let x21 = (1.0 - b).min(1.0 - x20);
                let u1 = u[0][0] * a + u[0][1] * b;
                let u2 = u[1][0] * x20 + u[1][1] * x21.max(0.0);
                if u1 > 0.0 && u2 > 0.0 {
                    best = best.max((u1 * u2).sqrt());
                }
            }
        }
        let inst = goods(
            vec![vec![2.0, 1.0], vec![2.0, 1.0]],
            Some(SubmodularOracle::capacities(vec![1.0, 1.0])),
        );
        let r = max_nsw(&inst, &NswOptions::default()).unwrap();
        assert!((r.nsw - best).abs() < 1e-5, "solver {} vs grid {}", r.nsw, best);
    }

    #[test]
    fn scaling_a_row_leaves_the_argmax_unchanged() {
        let base = goods(
            vec![vec![3.0, 1.0, 0.5], vec![1.0, 2.0, 2.0]],
            None,
        );
        let scaled = goods(
            vec![vec![30.0, 10.0, 5.0], vec![1.0, 2.0, 2.0]],
            None,
        );
        let a = max_nsw(&base, &NswOptions::default()).unwrap();
        let b = max_nsw(&scaled, &NswOptions::default()).unwrap();
        for i in 0..2 {
            for j in 0..3 {
                assert!((a.x[i][j] - b.x[i][j]).abs() < 1e-5);
            }
        }
        // objective shifts by log 10
        assert!((b.objective - a.objective - 10.0f64.ln()).abs() < 1e-5);
    }

    #[test]
    fn zero_utility_agent_is_excluded() {
        let inst = goods(vec![vec![1.0, 1.0], vec![0.0, 0.0]], None);
        let r = max_nsw(&inst, &NswOptions::default()).unwrap();
        assert_eq!(r.excluded_agents, vec![1]);
        assert!(r.x[1].iter().all(|v| *v == 0.0));
    }

    #[test]
    fn ef_program_handles_identical_agents() {
        // Identical agents force envy equalities; the solver must detect
        // the face and still return the symmetric split.
        let inst = goods(
            vec![vec![2.0, 1.0], vec![2.0, 1.0]],
            Some(SubmodularOracle::capacities(vec![1.0, 1.0])),
        );
        let r = max_nsw_ef(&inst, RowMode::LeqOne, &NswOptions::default()).unwrap();
        assert_eq!(r.status, SolveStatus::Optimal);
        for i in 0..2 {
            assert!((r.x[i][0] - 0.5).abs() < 1e-5, "x = {:?}", r.x);
            assert!((r.x[i][1] - 0.5).abs() < 1e-5);
        }
    }

    #[test]
    fn ef_program_on_disjoint_utilities_is_identity() {
        let inst = goods(vec![vec![1.0, 0.0], vec![0.0, 1.0]], None);
        let r = max_nsw_ef(&inst, RowMode::LeqOne, &NswOptions::default()).unwrap();
        assert!((r.x[0][0] - 1.0).abs() < 1e-5);
        assert!((r.x[1][1] - 1.0).abs() < 1e-5);
    }

    #[test]
    fn eq_rows_against_short_supply_are_infeasible() {
        let inst = goods(
            vec![vec![1.0, 1.0], vec![1.0, 1.0]],
            Some(SubmodularOracle::capacities(vec![0.5, 0.5])),
        );
        let r = max_nsw_ef(&inst, RowMode::EqOne, &NswOptions::default()).unwrap();
        assert_eq!(r.status, SolveStatus::Infeasible);
    }

    #[test]
    fn restricted_supply_with_unit_caps_matches_plain_nsw() {
        let inst = goods(vec![vec![2.0, 1.0], vec![1.0, 3.0]], None);
        let caps = vec![1.0, 1.0];
        let a = max_nsw(&inst, &NswOptions::default()).unwrap();
        let b = max_nsw_restricted(&inst, &caps, &NswOptions::default()).unwrap();
        assert!((a.objective - b.objective).abs() < 1e-6);
    }

    #[test]
    fn zero_caps_empty_the_market() {
        let inst = goods(vec![vec![1.0]], None);
        let r = max_nsw_restricted(&inst, &[0.0], &NswOptions::default()).unwrap();
        assert_eq!(r.excluded_agents, vec![0]);
        assert_eq!(r.x[0][0], 0.0);
    }

    #[test]
    fn coverage_oracle_constrains_the_solution() {
        // Both items cover the same single point: total consumption <= 1.
        let rho = SubmodularOracle::Coverage {
            n_items: 2,
            covers: vec![0b1, 0b1],
        };
        let inst = goods(vec![vec![1.0, 1.0], vec![1.0, 1.0]], Some(rho));
        let r = max_nsw(&inst, &NswOptions::default()).unwrap();
        let total: f64 = r.x.iter().flatten().sum();
        assert!(total <= 1.0 + 1e-6);
        assert!((total - 1.0).abs() < 1e-5);
    }
}
