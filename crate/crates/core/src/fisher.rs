//! Fisher-market machinery: concave utilities, the bundle-scaling oracle,
//! the two-stage approximately-envy-free allocation procedure, and the
//! envy-graph cycle elimination it relies on.
//!
//! Stage one starts from a Nash-welfare maximizing allocation and lets
//! agents repeatedly swap their bundle for the largest leftover portion
//! nobody envies beyond `1 + eps`. Stage two completes the allocation by
//! feeding leftover supply to currently unenvied agents, rotating bundles
//! along envy cycles whenever they appear. Both stages are exact over
//! rationals because all utilities here are piecewise linear.

use serde::{Deserialize, Serialize};

use crate::io::Num;
use crate::model::UtilityModel;
use crate::nswopt::{self, barrier, NswOptions, SolveResult};
use crate::scalar::{sum, Scalar};
use crate::{Error, Result};

/// Separable monotone concave utility: linear weights or per-item concave
/// piecewise-linear curves.
#[derive(Debug, Clone, PartialEq)]
pub enum ConcaveUtility<S> {
    Linear { w: Vec<S> },
    Pwl { items: Vec<PwlCurve<S>> },
}

/// One concave curve: `slopes[k]` applies between `breaks[k-1]` and
/// `breaks[k]`; the last slope extends without bound.
#[derive(Debug, Clone, PartialEq)]
pub struct PwlCurve<S> {
    pub breaks: Vec<S>,
    pub slopes: Vec<S>,
}

impl<S: Scalar> PwlCurve<S> {
    pub fn linear(slope: S) -> Self {
        PwlCurve {
            breaks: Vec::new(),
            slopes: vec![slope],
        }
    }

    pub fn eval(&self, amount: &S) -> S {
        let mut value = S::zero();
        let mut prev = S::zero();
        for (k, slope) in self.slopes.iter().enumerate() {
            let span_end = match self.breaks.get(k) {
                Some(b) => b.clone().min_val(amount.clone()),
                None => amount.clone(),
            };
            if span_end > prev {
                value = value + slope.clone() * (span_end.clone() - prev.clone());
                prev = span_end;
            }
            if &prev >= amount {
                break;
            }
        }
        value
    }

    fn validate(&self, who: &str, errors: &mut Vec<String>) {
        if self.slopes.len() != self.breaks.len() + 1 {
            errors.push(format!("{who}: needs one more slope than breaks"));
            return;
        }
        for w in self.slopes.windows(2) {
            if w[1] > w[0] {
                errors.push(format!("{who}: slopes must be nonincreasing"));
            }
        }
        if self.slopes.iter().any(|s| *s < S::zero()) {
            errors.push(format!("{who}: slopes must be nonnegative"));
        }
        let mut prev = S::zero();
        for b in &self.breaks {
            if *b <= prev {
                errors.push(format!(
                    "{who}: breaks must be strictly increasing and positive"
                ));
                break;
            }
            prev = b.clone();
        }
    }
}

impl<S: Scalar> ConcaveUtility<S> {
    pub fn n_items(&self) -> usize {
        match self {
            ConcaveUtility::Linear { w } => w.len(),
            ConcaveUtility::Pwl { items } => items.len(),
        }
    }

    pub fn eval(&self, bundle: &[S]) -> S {
        match self {
            ConcaveUtility::Linear { w } => crate::scalar::dot(w, bundle),
            ConcaveUtility::Pwl { items } => sum(
                items
                    .iter()
                    .zip(bundle)
                    .map(|(curve, amount)| curve.eval(amount)),
            ),
        }
    }

    /// Uniform representation as per-item curves.
    pub fn curves(&self) -> Vec<PwlCurve<S>> {
        match self {
            ConcaveUtility::Linear { w } => {
                w.iter().map(|s| PwlCurve::linear(s.clone())).collect()
            }
            ConcaveUtility::Pwl { items } => items.clone(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct FisherInstance<S> {
    pub utilities: Vec<ConcaveUtility<S>>,
    pub supplies: Vec<S>,
}

impl<S: Scalar> FisherInstance<S> {
    pub fn new(utilities: Vec<ConcaveUtility<S>>, supplies: Vec<S>) -> Result<Self> {
        let inst = FisherInstance { utilities, supplies };
        inst.validate()?;
        Ok(inst)
    }

    pub fn unit_supplies(utilities: Vec<ConcaveUtility<S>>) -> Result<Self> {
        let m = utilities.first().map(ConcaveUtility::n_items).unwrap_or(0);
        Self::new(utilities, vec![S::one(); m])
    }

    pub fn n_agents(&self) -> usize {
        self.utilities.len()
    }

    pub fn n_items(&self) -> usize {
        self.supplies.len()
    }

    fn validate(&self) -> Result<()> {
        let mut errors = Vec::new();
        if self.utilities.is_empty() {
            errors.push("no agents".to_string());
        }
        if self.supplies.is_empty() {
            errors.push("no items".to_string());
        }
        if self.supplies.iter().any(|s| *s <= S::zero()) {
            errors.push("supplies must be positive".to_string());
        }
        for (i, u) in self.utilities.iter().enumerate() {
            if u.n_items() != self.supplies.len() {
                errors.push(format!("agent {i} utility covers the wrong number of items"));
                continue;
            }
            for (j, curve) in u.curves().iter().enumerate() {
                curve.validate(&format!("agent {i} item {j}"), &mut errors);
            }
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(Error::Invalid(errors.join("; ")))
        }
    }

    /// Utility of the full supply; zero identifies agents that never envy.
    pub fn full_value(&self, agent: usize) -> S {
        self.utilities[agent].eval(&self.supplies)
    }
}

impl<S: Scalar> UtilityModel<S> for FisherInstance<S> {
    fn n_agents(&self) -> usize {
        self.n_agents()
    }

    fn n_items(&self) -> usize {
        self.n_items()
    }

    fn value(&self, agent: usize, bundle: &[S]) -> S {
        self.utilities[agent].eval(bundle)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum OracleAnswer<S> {
    Reached(S),
    Unreachable,
}

impl<S: Scalar> OracleAnswer<S> {
    pub fn reached(self) -> Option<S> {
        match self {
            OracleAnswer::Reached(a) => Some(a),
            OracleAnswer::Unreachable => None,
        }
    }
}

/// Smallest `alpha >= 0` with `u(base + alpha * dir) >= target`; exact
/// segment arithmetic, no numerical search.
pub fn oracle_alpha<S: Scalar>(
    u: &ConcaveUtility<S>,
    base: &[S],
    dir: &[S],
    target: &S,
) -> Result<OracleAnswer<S>> {
    if base.len() != u.n_items() || dir.len() != u.n_items() {
        return Err(Error::Invalid("bundle length mismatch".into()));
    }
    if dir.iter().any(|v| *v < S::zero()) || base.iter().any(|v| *v < S::zero()) {
        return Err(Error::Invalid("bundles must be nonnegative".into()));
    }
    let g = |alpha: &S| -> S {
        let point: Vec<S> = base
            .iter()
            .zip(dir)
            .map(|(b, d)| b.clone() + alpha.clone() * d.clone())
            .collect();
        u.eval(&point)
    };
    if g(&S::zero()) >= *target {
        return Ok(OracleAnswer::Reached(S::zero()));
    }

    // Kinks of alpha -> u(base + alpha dir): crossings of per-item breaks.
    let curves = u.curves();
    let mut kinks: Vec<S> = Vec::new();
    for j in 0..dir.len() {
        if dir[j] <= S::zero() {
            continue;
        }
        for b in &curves[j].breaks {
            if *b > base[j] {
                kinks.push((b.clone() - base[j].clone()) / dir[j].clone());
            }
        }
    }
    kinks.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    kinks.dedup();

    let mut prev_alpha = S::zero();
    let mut prev_val = g(&S::zero());
    for kink in kinks {
        let val = g(&kink);
        if val >= *target {
            let rise = val.clone() - prev_val.clone();
            if rise <= S::zero() {
                return Ok(OracleAnswer::Reached(kink));
            }
            let alpha = prev_alpha.clone()
                + (target.clone() - prev_val.clone()) * (kink.clone() - prev_alpha.clone()) / rise;
            return Ok(OracleAnswer::Reached(alpha));
        }
        prev_alpha = kink;
        prev_val = val;
    }

    // Final ray: aggregate slope beyond the last kink.
    let final_slope = sum((0..dir.len()).map(|j| {
        dir[j].clone() * curves[j].slopes.last().cloned().unwrap_or_else(S::zero)
    }));
    if final_slope <= S::zero() {
        return Ok(OracleAnswer::Unreachable);
    }
    Ok(OracleAnswer::Reached(
        prev_alpha + (target.clone() - prev_val) / final_slope,
    ))
}

/// Stage-one state: agent bundles, leftover portions of the original
/// bundles, and the source-bundle map.
#[derive(Debug, Clone)]
pub struct PartialState<S> {
    pub x: Vec<Vec<S>>,
    pub y: Vec<Vec<S>>,
    pub h: Vec<usize>,
    pub epsilon: S,
    pub iterations: usize,
}

impl<S: Scalar> PartialState<S> {
    /// Conservation: agent bundles plus leftovers reproduce the original
    /// allocation (exactly in rational mode).
    pub fn conservation_residual(&self, x_star: &[Vec<S>]) -> S {
        let m = self.y.first().map(Vec::len).unwrap_or(0);
        let mut residual = S::zero();
        for j in 0..m {
            let held = sum(self.x.iter().filter(|r| !r.is_empty()).map(|row| row[j].clone()))
                + sum(self.y.iter().map(|row| row[j].clone()));
            let source = sum(x_star.iter().map(|row| row[j].clone()));
            residual = residual + (held - source).abs_val();
        }
        residual
    }
}

fn iteration_bound<S: Scalar>(n: usize, eps: &S, power: u32) -> usize {
    let eps = eps.to_f64().max(1e-12);
    ((n as f64).powi(power as i32) / eps).ceil() as usize + 1
}

/// Stage one: swap leftover portions until no agent prefers any leftover
/// bundle by more than `1 + eps`.
pub fn partial_allocation<S: Scalar>(
    fisher: &FisherInstance<S>,
    x_star: &[Vec<S>],
    eps: &S,
) -> Result<PartialState<S>> {
    fisher.validate()?;
    if *eps <= S::zero() {
        return Err(Error::Invalid("eps must be positive".into()));
    }
    let n = fisher.n_agents();
    let m = fisher.n_items();
    if x_star.len() != n || x_star.iter().any(|r| r.len() != m) {
        return Err(Error::Invalid("allocation shape mismatch".into()));
    }
    let x_star = sanitize(x_star, &fisher.supplies);
    let one_plus = S::one() + eps.clone();
    let n_scalar = S::from_int(n as i64);

    let participating: Vec<bool> = (0..n).map(|i| fisher.full_value(i) > S::zero()).collect();

    let mut y = x_star.clone();
    let mut x = vec![vec![S::zero(); m]; n];
    let mut h: Vec<usize> = (0..n).collect();
    // Everyone picks their favorite 1/n portion of the original bundles.
    let mut claims = vec![0usize; n];
    for i in 0..n {
        if !participating[i] {
            continue;
        }
        // Argmax ties resolve to the agent's own source bundle first, so a
        // balanced allocation is already a fixed point; remaining ties go
        // by ascending index.
        let mut best: Option<(S, usize)> = None;
        for (k, bundle) in y.iter().enumerate() {
            let portion: Vec<S> = bundle.iter().map(|v| v.clone() / n_scalar.clone()).collect();
            let val = fisher.utilities[i].eval(&portion);
            let better = match &best {
                Some((bv, bk)) => val > *bv || (val == *bv && k == i && *bk != i),
                None => true,
            };
            if better {
                best = Some((val, k));
            }
        }
        let (_, k) = best.expect("nonempty bundle list");
        h[i] = k;
        claims[k] += 1;
        x[i] = y[k].iter().map(|v| v.clone() / n_scalar.clone()).collect();
    }
    for (k, bundle) in y.iter_mut().enumerate() {
        let keep = S::one() - S::from_int(claims[k] as i64) / n_scalar.clone();
        for v in bundle.iter_mut() {
            *v = v.clone() * keep.clone();
        }
    }

    let bound = iteration_bound(n, eps, 3);
    let tol = S::tol() * S::from_int((n * m) as i64 + 1);
    for iteration in 0..=bound {
        // Lowest-index leftover bundle some agent still prefers.
        let mut target_l = None;
        'scan: for (l, bundle) in y.iter().enumerate() {
            for i in 0..n {
                if participating[i]
                    && fisher.utilities[i].eval(bundle)
                        > one_plus.clone() * fisher.utilities[i].eval(&x[i])
                {
                    target_l = Some(l);
                    break 'scan;
                }
            }
        }
        let Some(l) = target_l else {
            return Ok(PartialState {
                x,
                y,
                h,
                epsilon: eps.clone(),
                iterations: iteration,
            });
        };
        if iteration == bound {
            break;
        }

        // The largest portion of y_l nobody values beyond (1+eps) of their
        // own bundle goes to the agent whose threshold binds first.
        let zero_base = vec![S::zero(); m];
        let mut best: Option<(S, usize)> = None;
        for i in 0..n {
            if !participating[i] {
                continue;
            }
            let target = one_plus.clone() * fisher.utilities[i].eval(&x[i]);
            let answer = oracle_alpha(&fisher.utilities[i], &zero_base, &y[l], &target)?;
            if let Some(alpha) = answer.reached() {
                if alpha <= S::one() {
                    match &best {
                        Some((ba, _)) if *ba <= alpha => {}
                        _ => best = Some((alpha, i)),
                    }
                }
            }
        }
        let Some((alpha, k)) = best else {
            return Err(Error::InvariantViolation(
                "an envied leftover bundle admits no feasible portion".into(),
            ));
        };

        let old_value = fisher.utilities[k].eval(&x[k]);
        // Return k's bundle to its source, hand over the portion.
        let old_bundle = std::mem::take(&mut x[k]);
        for (v, o) in y[h[k]].iter_mut().zip(&old_bundle) {
            *v = v.clone() + o.clone();
        }
        x[k] = y[l].iter().map(|v| alpha.clone() * v.clone()).collect();
        let keep = S::one() - alpha.clone();
        for v in y[l].iter_mut() {
            *v = v.clone() * keep.clone();
        }
        h[k] = l;

        let new_value = fisher.utilities[k].eval(&x[k]);
        if new_value.clone() + tol.clone() < one_plus.clone() * old_value.clone() {
            return Err(Error::InvariantViolation(
                "swap failed to raise the claimant's utility by the envy factor".into(),
            ));
        }
    }
    Err(Error::InvariantViolation(format!(
        "stage one exceeded its iteration bound ({bound})"
    )))
}

fn sanitize<S: Scalar>(x: &[Vec<S>], supplies: &[S]) -> Vec<Vec<S>> {
    let mut x: Vec<Vec<S>> = x
        .iter()
        .map(|row| row.iter().map(|v| v.clone().max_val(S::zero())).collect())
        .collect();
    for j in 0..supplies.len() {
        let total = sum(x.iter().map(|row| row[j].clone()));
        if total > supplies[j] {
            let factor = supplies[j].clone() / total;
            for row in x.iter_mut() {
                row[j] = row[j].clone() * factor.clone();
            }
        }
    }
    x
}

#[derive(Debug, Clone, Default)]
pub struct EnvyGraph {
    pub edges: Vec<(usize, usize)>,
}

impl EnvyGraph {
    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn in_degree_zero(&self, n: usize) -> Vec<usize> {
        let mut envied = vec![false; n];
        for &(_, j) in &self.edges {
            envied[j] = true;
        }
        (0..n).filter(|&i| !envied[i]).collect()
    }

    fn find_cycle(&self, n: usize) -> Option<Vec<usize>> {
        let mut adj = vec![Vec::new(); n];
        for &(i, j) in &self.edges {
            adj[i].push(j);
        }
        let mut color = vec![0u8; n]; // 0 fresh, 1 on stack, 2 done
        let mut parent = vec![usize::MAX; n];
        for start in 0..n {
            if color[start] != 0 {
                continue;
            }
            let mut stack = vec![(start, 0usize)];
            color[start] = 1;
            while let Some(&mut (node, ref mut idx)) = stack.last_mut() {
                if *idx < adj[node].len() {
                    let next = adj[node][*idx];
                    *idx += 1;
                    match color[next] {
                        0 => {
                            color[next] = 1;
                            parent[next] = node;
                            stack.push((next, 0));
                        }
                        1 => {
                            let mut cycle = vec![node];
                            let mut cur = node;
                            while cur != next {
                                cur = parent[cur];
                                cycle.push(cur);
                            }
                            cycle.reverse();
                            return Some(cycle);
                        }
                        _ => {}
                    }
                } else {
                    color[node] = 2;
                    stack.pop();
                }
            }
        }
        None
    }
}

/// Strict-envy digraph of the current bundles.
pub fn envy_graph<S: Scalar>(x: &[Vec<S>], fisher: &FisherInstance<S>) -> EnvyGraph {
    let n = fisher.n_agents();
    let mut edges = Vec::new();
    for i in 0..n {
        let own = fisher.utilities[i].eval(&x[i]);
        for j in 0..n {
            if i != j && fisher.utilities[i].eval(&x[j]) > own {
                edges.push((i, j));
            }
        }
    }
    EnvyGraph { edges }
}

/// Rotates bundles along envy cycles until the graph is acyclic. Every
/// rotation strictly reduces the edge count and never lowers a utility.
pub fn eliminate_cycles<S: Scalar>(
    x: &mut Vec<Vec<S>>,
    fisher: &FisherInstance<S>,
) -> Result<usize> {
    let n = fisher.n_agents();
    let mut rotations = 0usize;
    let mut graph = envy_graph(x, fisher);
    let guard = graph.edges.len() + 1;
    for _ in 0..guard {
        let Some(cycle) = graph.find_cycle(n) else {
            return Ok(rotations);
        };
        let before: Vec<S> = cycle
            .iter()
            .map(|&i| fisher.utilities[i].eval(&x[i]))
            .collect();
        // each agent takes the bundle it envies: the next one on the cycle
        let first = x[cycle[0]].clone();
        for w in 0..cycle.len() {
            let next = if w + 1 < cycle.len() {
                x[cycle[w + 1]].clone()
            } else {
                first.clone()
            };
            x[cycle[w]] = next;
        }
        rotations += 1;
        for (pos, &i) in cycle.iter().enumerate() {
            if fisher.utilities[i].eval(&x[i]) < before[pos] {
                return Err(Error::InvariantViolation(
                    "cycle rotation lowered a utility".into(),
                ));
            }
        }
        let next_graph = envy_graph(x, fisher);
        if next_graph.edges.len() >= graph.edges.len() {
            return Err(Error::InvariantViolation(
                "cycle rotation did not reduce the envy graph".into(),
            ));
        }
        graph = next_graph;
    }
    Err(Error::InvariantViolation("cycle elimination looped".into()))
}

#[derive(Debug, Clone)]
pub struct CompleteOutcome<S> {
    pub x: Vec<Vec<S>>,
    pub outer_iterations: usize,
    pub rotations: usize,
}

/// Stage two: allocate the remaining supply while keeping `(1+eps)`
/// envy-freeness. Feeds leftover items in index order to the lowest
/// unenvied agent, stopping a feed exactly when some agent's envy toward
/// it reaches the `1 + eps` threshold.
pub fn complete_allocation<S: Scalar>(
    fisher: &FisherInstance<S>,
    partial: &PartialState<S>,
    eps: &S,
) -> Result<CompleteOutcome<S>> {
    let n = fisher.n_agents();
    let m = fisher.n_items();
    let one_plus = S::one() + eps.clone();
    let tol = S::tol() * S::from_int((n * m) as i64 + 1);

    let mut x = partial.x.clone();
    let mut remaining: Vec<S> = (0..m)
        .map(|j| {
            (fisher.supplies[j].clone() - sum(x.iter().map(|row| row[j].clone())))
                .max_val(S::zero())
        })
        .collect();

    let participating: Vec<bool> = (0..n).map(|i| fisher.full_value(i) > S::zero()).collect();
    for i in 0..n {
        if participating[i] && fisher.utilities[i].eval(&x[i]) <= S::zero() {
            return Err(Error::Invalid(
                "every agent with nonzero utility needs a positive-value bundle".into(),
            ));
        }
    }

    let bound = iteration_bound(n, eps, 4);
    let mut rotations = 0usize;
    let mut potential = potential_value(fisher, &x);

    for outer in 0..=bound {
        if remaining.iter().all(|r| *r <= tol.clone()) {
            return Ok(CompleteOutcome {
                x,
                outer_iterations: outer,
                rotations,
            });
        }
        if outer == bound {
            break;
        }

        rotations += eliminate_cycles(&mut x, fisher)?;
        let graph = envy_graph(&x, fisher);
        let target = *graph
            .in_degree_zero(n)
            .first()
            .ok_or_else(|| Error::InvariantViolation("acyclic graph has no source".into()))?;

        // Feed remaining items to the chosen agent until someone's envy
        // reaches the threshold or the pool runs dry.
        let mut stopped_by: Option<usize> = None;
        for j in 0..m {
            if remaining[j] <= tol.clone() {
                continue;
            }
            let mut dir = vec![S::zero(); m];
            dir[j] = S::one();
            let mut stop: Option<(S, usize)> = None;
            for k in 0..n {
                if k == target || !participating[k] {
                    continue;
                }
                let threshold = one_plus.clone() * fisher.utilities[k].eval(&x[k]);
                if let Some(alpha) =
                    oracle_alpha(&fisher.utilities[k], &x[target], &dir, &threshold)?.reached()
                {
                    match &stop {
                        Some((sa, _)) if *sa <= alpha => {}
                        _ => stop = Some((alpha, k)),
                    }
                }
            }
            let feed = match &stop {
                Some((alpha, _)) => alpha.clone().min_val(remaining[j].clone()),
                None => remaining[j].clone(),
            };
            if feed <= S::zero() {
                return Err(Error::InvariantViolation(
                    "an unenvied agent admits no positive feed".into(),
                ));
            }
            x[target][j] = x[target][j].clone() + feed.clone();
            remaining[j] = remaining[j].clone() - feed.clone();
            if let Some((alpha, k)) = stop {
                if alpha <= feed {
                    stopped_by = Some(k);
                    break;
                }
            }
        }

        let new_potential = potential_value(fisher, &x);
        if let Some(k) = stopped_by {
            // Envy-stop: the stopping agent's view of the fed bundle rose
            // from at most u_k(x_k) to (1+eps) u_k(x_k).
            let gain_floor =
                eps.clone() * fisher.utilities[k].eval(&x[k]) / fisher.full_value(k);
            if new_potential.clone() + tol.clone() < potential.clone() + gain_floor {
                return Err(Error::InvariantViolation(
                    "stage-two potential failed to rise by the envy margin".into(),
                ));
            }
        }
        if new_potential.clone() + tol.clone() < potential {
            return Err(Error::InvariantViolation(
                "stage-two potential decreased".into(),
            ));
        }
        potential = new_potential;
    }
    Err(Error::InvariantViolation(format!(
        "stage two exceeded its iteration bound ({bound})"
    )))
}

fn potential_value<S: Scalar>(fisher: &FisherInstance<S>, x: &[Vec<S>]) -> S {
    let n = fisher.n_agents();
    let mut total = S::zero();
    for i in 0..n {
        let full = fisher.full_value(i);
        if full <= S::zero() {
            continue;
        }
        for bundle in x {
            total = total + fisher.utilities[i].eval(bundle) / full.clone();
        }
    }
    total
}

/// Both stages plus the Nash-welfare reference solve.
#[derive(Debug, Clone)]
pub struct FisherRun<S> {
    pub x: Vec<Vec<S>>,
    pub x_star: Vec<Vec<S>>,
    pub stage_one_iterations: usize,
    pub stage_two_iterations: usize,
    pub rotations: usize,
    pub reference: SolveResult,
}

pub fn solve_fisher<S: Scalar>(
    fisher: &FisherInstance<S>,
    eps: &S,
    opts: &NswOptions,
) -> Result<FisherRun<S>> {
    let reference = max_nsw_concave(fisher, opts)?;
    let x_star: Vec<Vec<S>> = reference
        .x
        .iter()
        .map(|row| row.iter().map(|v| S::from_f64(*v)).collect())
        .collect();
    let partial = partial_allocation(fisher, &x_star, eps)?;
    let complete = complete_allocation(fisher, &partial, eps)?;
    Ok(FisherRun {
        x: complete.x,
        x_star,
        stage_one_iterations: partial.iterations,
        stage_two_iterations: complete.outer_iterations,
        rotations: complete.rotations,
        reference,
    })
}

/// Nash-welfare maximization for separable concave utilities: every curve
/// segment becomes a capped variable weighted by the segment's slope.
pub fn max_nsw_concave<S: Scalar>(
    fisher: &FisherInstance<S>,
    opts: &NswOptions,
) -> Result<SolveResult> {
    fisher.validate()?;
    let n = fisher.n_agents();
    let m = fisher.n_items();
    let supplies: Vec<f64> = fisher.supplies.iter().map(Scalar::to_f64).collect();
    let included: Vec<usize> = (0..n)
        .filter(|&i| fisher.full_value(i) > S::zero())
        .collect();
    if included.is_empty() {
        return Ok(SolveResult {
            x: vec![vec![0.0; m]; n],
            objective: 0.0,
            nsw: 0.0,
            gap: 0.0,
            iterations: 0,
            status: nswopt::SolveStatus::Optimal,
            excluded_agents: (0..n).collect(),
            active_constraints: Vec::new(),
        });
    }

    // Segment variables per (agent, item, segment).
    struct Seg {
        agent: usize,
        item: usize,
        slope: f64,
        cap: f64,
    }
    let mut segs: Vec<Seg> = Vec::new();
    for &i in &included {
        for (j, curve) in fisher.utilities[i].curves().iter().enumerate() {
            let mut prev = 0.0f64;
            for (k, slope) in curve.slopes.iter().enumerate() {
                let upper = curve
                    .breaks
                    .get(k)
                    .map(Scalar::to_f64)
                    .unwrap_or(supplies[j])
                    .min(supplies[j]);
                let cap = upper - prev;
                if cap > 0.0 {
                    segs.push(Seg {
                        agent: i,
                        item: j,
                        slope: slope.to_f64(),
                        cap,
                    });
                }
                prev = prev.max(upper);
                if prev >= supplies[j] {
                    break;
                }
            }
        }
    }
    let nv = segs.len();
    let mut program = barrier::LogProgram {
        n_vars: nv,
        ..Default::default()
    };
    for &i in &included {
        let mut w = vec![0.0; nv];
        for (v, seg) in segs.iter().enumerate() {
            if seg.agent == i {
                w[v] = seg.slope;
            }
        }
        program.terms.push(w);
    }
    for (v, seg) in segs.iter().enumerate() {
        let mut low = vec![0.0; nv];
        low[v] = -1.0;
        program.ineq.push((low, 0.0));
        let mut up = vec![0.0; nv];
        up[v] = 1.0;
        program.ineq.push((up, seg.cap));
    }
    for j in 0..m {
        let mut a = vec![0.0; nv];
        for (v, seg) in segs.iter().enumerate() {
            if seg.item == j {
                a[v] = 1.0;
            }
        }
        program.ineq.push((a, supplies[j]));
    }

    let min_cap = segs.iter().map(|s| s.cap).fold(f64::INFINITY, f64::min);
    let min_share = (0..m)
        .map(|j| supplies[j] / segs.iter().filter(|s| s.item == j).count().max(1) as f64)
        .fold(f64::INFINITY, f64::min);
    let start = vec![0.5 * min_cap.min(min_share); nv];

    let out = barrier::maximize(&program, &start, opts.eps_gap)?;

    let mut x = vec![vec![0.0; m]; n];
    for (v, seg) in segs.iter().enumerate() {
        x[seg.agent][seg.item] += out.v[v].max(0.0);
    }
    // True utilities of the reconstructed bundles: concave evaluation fills
    // segments in order, never below the program's linearization.
    let mut objective = 0.0;
    for &i in &included {
        let bundle: Vec<S> = x[i].iter().map(|v| S::from_f64(*v)).collect();
        objective += fisher.utilities[i].eval(&bundle).to_f64().ln();
    }
    Ok(SolveResult {
        x,
        objective,
        nsw: (objective / included.len() as f64).exp(),
        gap: out.gap,
        iterations: out.newton_steps,
        status: nswopt::SolveStatus::Optimal,
        excluded_agents: (0..n).filter(|i| !included.contains(i)).collect(),
        active_constraints: Vec::new(),
    })
}

// ---------------------------------------------------------------------
// On-disk format

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FisherFile {
    #[serde(default = "crate::io::schema_default_pub")]
    pub schema: u32,
    pub agents: usize,
    pub items: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub supplies: Option<Vec<Num>>,
    pub utilities: Vec<UtilityFile>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "lowercase")]
pub enum UtilityFile {
    Linear { w: Vec<Num> },
    Pwl { items: Vec<CurveFile> },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CurveFile {
    pub breaks: Vec<Num>,
    pub slopes: Vec<Num>,
}

impl FisherFile {
    pub fn parse(text: &str) -> Result<FisherFile> {
        serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn instance<S: Scalar>(&self) -> Result<FisherInstance<S>> {
        if self.utilities.len() != self.agents {
            return Err(Error::Invalid("utilities count != agents".into()));
        }
        let supplies = match &self.supplies {
            Some(s) => {
                if s.len() != self.items {
                    return Err(Error::Invalid("supplies length != items".into()));
                }
                s.iter().map(Num::to_scalar).collect()
            }
            None => vec![S::one(); self.items],
        };
        let utilities = self
            .utilities
            .iter()
            .map(|u| match u {
                UtilityFile::Linear { w } => ConcaveUtility::Linear {
                    w: w.iter().map(Num::to_scalar).collect(),
                },
                UtilityFile::Pwl { items } => ConcaveUtility::Pwl {
                    items: items
                        .iter()
                        .map(|c| PwlCurve {
                            breaks: c.breaks.iter().map(Num::to_scalar).collect(),
                            slopes: c.slopes.iter().map(Num::to_scalar).collect(),
                        })
                        .collect(),
                },
            })
            .collect();
        FisherInstance::new(utilities, supplies)
    }
}

pub fn fisher_to_file<S: Scalar>(inst: &FisherInstance<S>) -> Result<FisherFile> {
    Ok(FisherFile {
        schema: crate::io::SCHEMA_VERSION,
        agents: inst.n_agents(),
        items: inst.n_items(),
        supplies: Some(
            inst.supplies
                .iter()
                .map(Num::from_scalar)
                .collect::<Result<_>>()?,
        ),
        utilities: inst
            .utilities
            .iter()
            .map(|u| {
                Ok(match u {
                    ConcaveUtility::Linear { w } => UtilityFile::Linear {
                        w: w.iter().map(Num::from_scalar).collect::<Result<_>>()?,
                    },
                    ConcaveUtility::Pwl { items } => UtilityFile::Pwl {
                        items: items
                            .iter()
                            .map(|c| {
                                Ok(CurveFile {
                                    breaks: c
                                        .breaks
                                        .iter()
                                        .map(Num::from_scalar)
                                        .collect::<Result<_>>()?,
                                    slopes: c
                                        .slopes
                                        .iter()
                                        .map(Num::from_scalar)
                                        .collect::<Result<_>>()?,
                                })
                            })
                            .collect::<Result<_>>()?,
                    },
                })
            })
            .collect::<Result<_>>()?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Rational;
    use num_traits::Zero;

    fn rat(n: i64, d: i64) -> Rational {
        Rational::ratio(n, d)
    }

    fn kink_utility(alpha: i64) -> ConcaveUtility<Rational> {
        let beta = rat(alpha - 1, alpha - 2);
        ConcaveUtility::Pwl {
            items: vec![PwlCurve {
                breaks: vec![rat(1, alpha)],
                slopes: vec![rat(alpha, 1), beta],
            }],
        }
    }

    #[test]
    fn oracle_alpha_linear() {
        let u = ConcaveUtility::Linear { w: vec![rat(1, 1)] };
        let a = oracle_alpha(&u, &[rat(0, 1)], &[rat(1, 1)], &rat(1, 2)).unwrap();
        assert_eq!(a, OracleAnswer::Reached(rat(1, 2)));
        let a = oracle_alpha(&u, &[rat(0, 1)], &[rat(1, 1)], &rat(0, 1)).unwrap();
        assert_eq!(a, OracleAnswer::Reached(rat(0, 1)));
    }

    #[test]
    fn oracle_alpha_crosses_the_kink() {
        let u = kink_utility(10);
        // value 1 is reached exactly at the kink 1/10
        let a = oracle_alpha(&u, &[rat(0, 1)], &[rat(1, 1)], &rat(1, 1)).unwrap();
        assert_eq!(a, OracleAnswer::Reached(rat(1, 10)));
        // beyond the kink the slope drops to 9/8: reaching 1 + 1/16 takes
        // another (1/16)/(9/8) = 1/18
        let a = oracle_alpha(&u, &[rat(0, 1)], &[rat(1, 1)], &rat(17, 16)).unwrap();
        assert_eq!(a, OracleAnswer::Reached(rat(1, 10) + rat(1, 18)));
    }

    #[test]
    fn oracle_alpha_detects_saturation() {
        let u = ConcaveUtility::Pwl {
            items: vec![PwlCurve {
                breaks: vec![rat(1, 1)],
                slopes: vec![rat(1, 1), rat(0, 1)],
            }],
        };
        let a = oracle_alpha(&u, &[rat(0, 1)], &[rat(1, 1)], &rat(2, 1)).unwrap();
        assert_eq!(a, OracleAnswer::Unreachable);
    }

    #[test]
    fn envy_graph_matches_pairwise_predicate() {
        let fisher = FisherInstance::unit_supplies(vec![
            ConcaveUtility::Linear {
                w: vec![rat(1, 1), rat(0, 1)],
            },
            ConcaveUtility::Linear {
                w: vec![rat(1, 1), rat(1, 1)],
            },
        ])
        .unwrap();
        let x = vec![vec![rat(0, 1), rat(0, 1)], vec![rat(1, 1), rat(1, 1)]];
        let g = envy_graph(&x, &fisher);
        assert_eq!(g.edges, vec![(0, 1)]);
        let x = vec![vec![rat(1, 1), rat(0, 1)], vec![rat(0, 1), rat(1, 1)]];
        assert!(envy_graph(&x, &fisher).is_empty());
    }

    #[test]
    fn two_cycle_swap_raises_both() {
        let fisher = FisherInstance::unit_supplies(vec![
            ConcaveUtility::Linear {
                w: vec![rat(0, 1), rat(1, 1)],
            },
            ConcaveUtility::Linear {
                w: vec![rat(1, 1), rat(0, 1)],
            },
        ])
        .unwrap();
        let mut x = vec![vec![rat(1, 1), rat(0, 1)], vec![rat(0, 1), rat(1, 1)]];
        let rotations = eliminate_cycles(&mut x, &fisher).unwrap();
        assert_eq!(rotations, 1);
        assert_eq!(x[0], vec![rat(0, 1), rat(1, 1)]);
        assert_eq!(x[1], vec![rat(1, 1), rat(0, 1)]);
        assert!(envy_graph(&x, &fisher).is_empty());
    }

    #[test]
    fn single_agent_run_takes_everything() {
        let fisher = FisherInstance::unit_supplies(vec![ConcaveUtility::Linear {
            w: vec![rat(1, 1), rat(2, 1)],
        }])
        .unwrap();
        let eps = rat(1, 10);
        let x_star = vec![vec![rat(1, 1), rat(1, 1)]];
        let partial = partial_allocation(&fisher, &x_star, &eps).unwrap();
        assert!(partial.conservation_residual(&x_star).is_zero());
        let complete = complete_allocation(&fisher, &partial, &eps).unwrap();
        assert_eq!(complete.x[0], vec![rat(1, 1), rat(1, 1)]);
    }

    #[test]
    fn identical_agents_with_even_split_never_swap() {
        let fisher = FisherInstance::unit_supplies(vec![
            ConcaveUtility::Linear {
                w: vec![rat(1, 1), rat(1, 1)],
            },
            ConcaveUtility::Linear {
                w: vec![rat(1, 1), rat(1, 1)],
            },
        ])
        .unwrap();
        let eps = rat(1, 10);
        let half = rat(1, 2);
        let x_star = vec![vec![half.clone(), half.clone()], vec![half.clone(), half]];
        let partial = partial_allocation(&fisher, &x_star, &eps).unwrap();
        assert_eq!(partial.iterations, 0);
        for l in 0..2 {
            for i in 0..2 {
                let lhs = fisher.utilities[i].eval(&partial.y[l]);
                let rhs = rat(11, 10) * fisher.utilities[i].eval(&partial.x[i]);
                assert!(lhs <= rhs);
            }
        }
    }

    #[test]
    fn remark_instance_two_stage_run_is_envy_free_up_to_eps() {
        let fisher = FisherInstance::unit_supplies(vec![
            ConcaveUtility::Linear { w: vec![rat(1, 1)] },
            kink_utility(10),
        ])
        .unwrap();
        let eps = rat(1, 10);
        let x_star = vec![vec![rat(9, 10)], vec![rat(1, 10)]];
        let partial = partial_allocation(&fisher, &x_star, &eps).unwrap();
        assert!(partial.conservation_residual(&x_star).is_zero());
        let complete = complete_allocation(&fisher, &partial, &eps).unwrap();
        let one_plus = rat(11, 10);
        for i in 0..2 {
            let own = fisher.utilities[i].eval(&complete.x[i]);
            for k in 0..2 {
                let other = fisher.utilities[i].eval(&complete.x[k]);
                assert!(other <= one_plus.clone() * own.clone());
            }
        }
        let total = complete.x[0][0].clone() + complete.x[1][0].clone();
        assert_eq!(total, rat(1, 1));
    }

    #[test]
    fn concave_nsw_solver_matches_the_kink_calculus() {
        // With beta = (1 - 1/a)/(1 - 2/a) the optimum of
        // log(1 - t) + log(1 + beta (t - 1/a)) sits at
        // t = (2a - 1) / (2a(a - 1)); the kink split (1 - 1/a, 1/a) is only
        // asymptotically optimal.
        let alpha = 10i64;
        let fisher: FisherInstance<f64> = FisherInstance::unit_supplies(vec![
            ConcaveUtility::Linear { w: vec![1.0] },
            ConcaveUtility::Pwl {
                items: vec![PwlCurve {
                    breaks: vec![0.1],
                    slopes: vec![10.0, 1.125],
                }],
            },
        ])
        .unwrap();
        let r = max_nsw_concave(&fisher, &NswOptions::default()).unwrap();
        let t = (2 * alpha - 1) as f64 / (2 * alpha * (alpha - 1)) as f64;
        assert!((r.x[1][0] - t).abs() < 1e-6, "x2 = {}, want {t}", r.x[1][0]);
        assert!((r.x[0][0] - (1.0 - t)).abs() < 1e-6);
        let near = (0.9f64.ln() + 1.0f64.ln()) / 2.0;
        assert!((r.objective / 2.0 - near).abs() < 1e-3);
    }

    #[test]
    fn full_run_beats_half_the_reference_nash_welfare() {
        let fisher: FisherInstance<Rational> = FisherInstance::unit_supplies(vec![
            ConcaveUtility::Linear {
                w: vec![rat(3, 1), rat(1, 1), rat(1, 2)],
            },
            ConcaveUtility::Linear {
                w: vec![rat(1, 1), rat(2, 1), rat(1, 1)],
            },
        ])
        .unwrap();
        let eps = rat(1, 10);
        let run = solve_fisher(&fisher, &eps, &NswOptions::default()).unwrap();
        // complete
        for j in 0..3 {
            let total = run.x[0][j].clone() + run.x[1][j].clone();
            assert!((total.to_f64() - 1.0).abs() < 1e-7);
        }
        // (1+eps)-EF
        for i in 0..2 {
            let own = fisher.utilities[i].eval(&run.x[i]);
            for k in 0..2 {
                let other = fisher.utilities[i].eval(&run.x[k]);
                assert!(other.to_f64() <= 1.1 * own.to_f64() + 1e-9);
            }
        }
        // Nash welfare within 2(1+eps) of the reference
        let nsw = (fisher.utilities[0].eval(&run.x[0]).to_f64()
            * fisher.utilities[1].eval(&run.x[1]).to_f64())
        .sqrt();
        assert!(nsw >= run.reference.nsw / 2.2 - 1e-6);
    }

    #[test]
    fn fisher_file_round_trip() {
        let fisher: FisherInstance<Rational> = FisherInstance::unit_supplies(vec![
            ConcaveUtility::Linear { w: vec![rat(1, 1)] },
            kink_utility(10),
        ])
        .unwrap();
        let file = fisher_to_file(&fisher).unwrap();
        let text = serde_json::to_string(&file).unwrap();
        let back: FisherInstance<Rational> =
            FisherFile::parse(&text).unwrap().instance().unwrap();
        assert_eq!(back.utilities, fisher.utilities);
        assert_eq!(back.supplies, fisher.supplies);
    }
}
