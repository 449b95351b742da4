//! Trajectory-independent envelopes of coupled multi-state systems.
//!
//! Two constructions share the response of the states to one joule drawn
//! `m` steps earlier, `G_m = Ad^{m-1} Bpd / dt`, which for the exact
//! discretization is the average of `exp(A s) B_p` over `s` in
//! `[(m-1) dt, m dt]`:
//!
//! - the distributed box gives every load its own energy interval, as the
//!   widest log-volume box inside the polytope of jointly safe energies;
//! - the centralized envelope bounds the total energy of the pool when a
//!   fixed dispatch plan splits the pooled power among the loads.

use std::path::Path;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assembly::{add_trajectory, pooled_bounds, Dispatch, Scaling, TrajectoryBlock};
use crate::envelope::{EnvelopeKind, EnvelopeSeries};
use crate::error::{Error, Result};
use crate::model::{DiscreteSystem, Trajectory};
use crate::opt::{max_min_gap, solve_log_box, solve_lp, ConcaveLogProgram, LinearProgram, SolveStatus};

/// Response weights on the grid, `k = 0..=k_max`.
#[derive(Debug, Clone)]
pub struct WeightTensors {
    pub dt: f64,
    /// One-step state map `Ad`.
    pub step: DMatrix<f64>,
    /// `response[m] = G_m` for `m ≥ 1`; `response[0] = B_p`, the limit of
    /// zero age.
    pub response: Vec<DMatrix<f64>>,
    /// `alpha[k] = max_{1 ≤ m ≤ k} G_m`, entrywise (`B_p` at `k = 0`).
    pub alpha: Vec<DMatrix<f64>>,
    /// `beta[k] = min_{1 ≤ m ≤ k} G_m`, entrywise (`B_p` at `k = 0`).
    pub beta: Vec<DMatrix<f64>>,
}

impl WeightTensors {
    /// Map from the power of step `l` to its share of the state at lead
    /// time `k`, `l < k`.
    pub fn mu(&self, k: usize, l: usize) -> DMatrix<f64> {
        &self.response[k - l] * self.dt
    }

    pub fn k_max(&self) -> usize {
        self.response.len() - 1
    }
}

pub fn compute_weight_tensors(dsys: &DiscreteSystem, k_max: usize) -> Result<WeightTensors> {
    let sys = &dsys.source;
    if dsys.dt <= 0.0 {
        return Err(Error::InvalidArgument(format!("step length must be positive, got {}", dsys.dt)));
    }
    let step = dsys.ad.clone();
    let mut response = Vec::with_capacity(k_max + 1);
    response.push(sys.b_p.clone());
    let mut g = &dsys.bpd / dsys.dt;
    for m in 1..=k_max {
        if m > 1 {
            g = &step * &g;
        }
        response.push(g.clone());
    }
    let mut alpha = vec![sys.b_p.clone()];
    let mut beta = vec![sys.b_p.clone()];
    if k_max >= 1 {
        let mut hi = response[1].clone();
        let mut lo = response[1].clone();
        for r in &response[1..] {
            hi.zip_apply(r, |a, b| *a = a.max(b));
            lo.zip_apply(r, |a, b| *a = a.min(b));
            alpha.push(hi.clone());
            beta.push(lo.clone());
        }
    }
    Ok(WeightTensors { dt: dsys.dt, step, response, alpha, beta })
}

/// Shares of the pooled power per step and load.
#[derive(Debug, Clone, PartialEq)]
pub struct DispatchPlan {
    pub delta: DMatrix<f64>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum DispatchDocument {
    Wrapped { delta: Vec<Vec<f64>> },
    Rows(Vec<Vec<f64>>),
}

#[derive(Serialize)]
struct DispatchOut<'a> {
    delta: &'a [Vec<f64>],
}

/// Allowed deviation of a row sum from one.
const SHARE_SUM_TOL: f64 = 1e-9;

impl DispatchPlan {
    pub fn new(delta: DMatrix<f64>) -> Result<Self> {
        let plan = Self { delta };
        plan.validate()?;
        Ok(plan)
    }

    pub fn uniform(steps: usize, loads: usize) -> Self {
        Self { delta: DMatrix::from_element(steps, loads, 1.0 / loads as f64) }
    }

    /// All power goes to load `j`.
    pub fn indicator(steps: usize, loads: usize, j: usize) -> Self {
        Self { delta: DMatrix::from_fn(steps, loads, |_, c| if c == j { 1.0 } else { 0.0 }) }
    }

    /// Time-constant shares proportional to `weights`.
    pub fn proportional(steps: usize, weights: &[f64]) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) || weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::InvalidArgument("dispatch weights must be nonnegative with a positive sum".into()));
        }
        Self::new(DMatrix::from_fn(steps, weights.len(), |_, j| weights[j] / total))
    }

    pub fn steps(&self) -> usize {
        self.delta.nrows()
    }

    pub fn loads(&self) -> usize {
        self.delta.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        for (l, row) in self.delta.row_iter().enumerate() {
            if row.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(Error::InvalidArgument(format!("dispatch row {l} has a negative or non-finite share")));
            }
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > SHARE_SUM_TOL {
                return Err(Error::InvalidArgument(format!("dispatch row {l} sums to {s}, not 1")));
            }
        }
        Ok(())
    }

    /// Shares during step `l`; past the end the last row is repeated.
    pub fn row(&self, l: usize) -> Vec<f64> {
        let r = l.min(self.steps().saturating_sub(1));
        self.delta.row(r).iter().copied().collect()
    }

    /// Plan with exactly `steps` rows.
    pub fn fitted(&self, steps: usize) -> DispatchPlan {
        DispatchPlan { delta: DMatrix::from_fn(steps, self.loads(), |l, j| self.row(l)[j]) }
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let doc: DispatchDocument =
            serde_json::from_str(&text).map_err(|e| Error::Schema { path: path.to_path_buf(), msg: e.to_string() })?;
        let rows = match doc {
            DispatchDocument::Wrapped { delta } | DispatchDocument::Rows(delta) => delta,
        };
        let cols = rows.first().map_or(0, |r| r.len());
        if rows.is_empty() || cols == 0 || rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Schema { path: path.to_path_buf(), msg: "dispatch plan must be a nonempty K x N matrix".into() });
        }
        Self::new(DMatrix::from_fn(rows.len(), cols, |l, j| rows[l][j]))
    }

    pub fn to_json(&self) -> String {
        let rows: Vec<Vec<f64>> = self.delta.row_iter().map(|r| r.iter().copied().collect()).collect();
        serde_json::to_string_pretty(&DispatchOut { delta: &rows }).expect("plain numbers serialize")
    }
}

/// `(γ_+, γ_-)` at lead time `k ≥ 1`: entrywise max and min over
/// `l = 0..k` of `Σ_j G_{k-l,ij} δ_{l,j}`.
pub fn compute_gamma(tensors: &WeightTensors, plan: &DispatchPlan, k: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if k > tensors.k_max() {
        return Err(Error::InvalidArgument(format!("lead time {k} beyond the weight horizon {}", tensors.k_max())));
    }
    let n = tensors.response[0].nrows();
    if plan.loads() != tensors.response[0].ncols() {
        return Err(Error::Dimension(format!(
            "dispatch plan has {} loads, system has {}",
            plan.loads(),
            tensors.response[0].ncols()
        )));
    }
    if k == 0 {
        return Err(Error::InvalidArgument("lead time must be at least one step".into()));
    }
    let mut plus = vec![f64::NEG_INFINITY; n];
    let mut minus = vec![f64::INFINITY; n];
    for l in 0..k {
        let shares = plan.row(l);
        let r = &tensors.response[k - l];
        for i in 0..n {
            let v: f64 = shares.iter().enumerate().map(|(j, s)| r[(i, j)] * s).sum();
            plus[i] = plus[i].max(v);
            minus[i] = minus[i].min(v);
        }
    }
    Ok((plus, minus))
}

/// Per-load energy boxes with their comparison trajectories.
#[derive(Debug, Clone)]
pub struct BoxEnvelope {
    /// One envelope per load, kind TI_distributed_per_load.
    pub loads: Vec<EnvelopeSeries>,
    pub p_plus: Trajectory,
    pub p_minus: Trajectory,
    /// Longest prefix on which the box program has an interior point.
    pub horizon: usize,
    /// First lead time without an interior point, if any.
    pub infeasible_from: Option<usize>,
    /// `(lead time, load)` of the gap that closes first past the horizon.
    pub closing_gap: Option<(usize, usize)>,
    /// Worst violation of the safe-energy polytope by a box corner.
    pub polytope_residual: f64,
    pub objective: f64,
    pub solve_time_s: f64,
}

struct BoxProgram {
    clp: ConcaveLogProgram,
    plus: TrajectoryBlock,
    minus: TrajectoryBlock,
    /// `e_plus[k-1][j]`, `e_minus[k-1][j]` for `k = 1..=h`.
    e_plus: Vec<Vec<usize>>,
    e_minus: Vec<Vec<usize>>,
    b_plus: Vec<Vec<usize>>,
    b_minus: Vec<Vec<usize>>,
    scaling: Scaling,
}


/// Adds `b[k]` for `k = 1..=h` (stored at index `k - 1`) with
/// `b[1] = Bpd p_0` and `b[k+1] = Ad b[k] + Bpd p_k`, the forced part of the
/// state at step `k`.
fn add_response(lp: &mut LinearProgram, block: &TrajectoryBlock, tensors: &WeightTensors, scaling: Scaling) -> Vec<Vec<usize>> {
    let n = tensors.step.nrows();
    let m = tensors.response[0].ncols();
    let input = &tensors.response[1];
    let mut b: Vec<Vec<usize>> = Vec::with_capacity(block.steps);
    for l in 0..block.steps {
        let row: Vec<usize> = (0..n).map(|_| lp.add_var(f64::NEG_INFINITY, f64::INFINITY)).collect();
        for i in 0..n {
            let mut terms = vec![(row[i], 1.0)];
            if l > 0 {
                for q in 0..n {
                    let c = tensors.step[(i, q)];
                    if c != 0.0 {
                        terms.push((b[l - 1][q], -c));
                    }
                }
            }
            for j in 0..m {
                let c = input[(i, j)] * tensors.dt * scaling.power;
                if c != 0.0 {
                    for &(v, s) in &block.power[l][j] {
                        terms.push((v, -c * s));
                    }
                }
            }
            lp.add_eq(crate::assembly::merge(terms), 0.0);
        }
        b.push(row);
    }
    b
}

fn build_box_program(dsys: &DiscreteSystem, d: &Trajectory, tensors: &WeightTensors, h: usize) -> Result<BoxProgram> {
    let sys = &dsys.source;
    let n = sys.state_dim();
    let m = sys.power_dim();
    let scaling = Scaling::for_system(dsys);
    let mut lp = LinearProgram::new();
    let plus = add_trajectory(&mut lp, dsys, d, h, scaling, Dispatch::Free)?;
    let minus = add_trajectory(&mut lp, dsys, d, h, scaling, Dispatch::Free)?;
    let b_plus = add_response(&mut lp, &plus, tensors, scaling);
    let b_minus = add_response(&mut lp, &minus, tensors, scaling);
    let mut e_plus = Vec::with_capacity(h);
    let mut e_minus = Vec::with_capacity(h);
    for k in 1..=h {
        // energies outside what k steps of admissible power can deliver are never needed
        let reach_lo: Vec<f64> = (0..m).map(|j| k as f64 * sys.p_min[j] / scaling.power).collect();
        let reach_hi: Vec<f64> = (0..m).map(|j| k as f64 * sys.p_max[j] / scaling.power).collect();
        let ep: Vec<usize> = (0..m).map(|j| lp.add_var(reach_lo[j], reach_hi[j])).collect();
        let em: Vec<usize> = (0..m).map(|j| lp.add_var(reach_lo[j], reach_hi[j])).collect();
        let alpha = &tensors.alpha[k];
        let beta = &tensors.beta[k];
        for i in 0..n {
            let mut up: Vec<(usize, f64)> = (0..m)
                .filter(|&j| alpha[(i, j)] != 0.0)
                .map(|j| (ep[j], alpha[(i, j)] * scaling.energy()))
                .collect();
            up.push((b_plus[k - 1][i], -1.0));
            lp.add_le(up, 0.0);
            let mut down: Vec<(usize, f64)> = (0..m)
                .filter(|&j| beta[(i, j)] != 0.0)
                .map(|j| (em[j], beta[(i, j)] * scaling.energy()))
                .collect();
            down.push((b_minus[k - 1][i], -1.0));
            lp.add_ge(down, 0.0);
        }
        e_plus.push(ep);
        e_minus.push(em);
    }
    let mut clp = ConcaveLogProgram::new(lp);
    for k in 0..h {
        for j in 0..m {
            clp.add_gap(vec![(e_plus[k][j], 1.0), (e_minus[k][j], -1.0)], 0.0);
        }
    }
    Ok(BoxProgram { clp, plus, minus, e_plus, e_minus, b_plus, b_minus, scaling })
}

/// Lead times given up when the solve at the bisected horizon stalls.
const MAX_HORIZON_BACKOFF: usize = 4;

/// Smallest gap, in energy units, that counts as an interior point.
const INTERIOR_MARGIN: f64 = 1e-7;

/// Whether the first `h` lead times admit a box with positive width everywhere.
fn box_has_interior(dsys: &DiscreteSystem, d: &Trajectory, tensors: &WeightTensors, h: usize) -> Result<bool> {
    if h == 0 {
        return Ok(true);
    }
    let prog = build_box_program(dsys, d, tensors, h)?;
    let (res, margin) = max_min_gap(&prog.clp);
    match res.status {
        SolveStatus::Optimal => Ok(margin > INTERIOR_MARGIN),
        SolveStatus::Infeasible => Ok(false),
        other => Err(Error::Solver(format!("box interior check at horizon {h}: {other:?}"))),
    }
}

/// Widest log-volume per-load boxes over the longest horizon that admits
/// one, found by bisection when the full horizon has no interior point.
pub fn compute_distributed_box(dsys: &DiscreteSystem, d: &Trajectory) -> Result<BoxEnvelope> {
    let steps = dsys.steps;
    let tensors = compute_weight_tensors(dsys, steps)?;
    let start = std::time::Instant::now();
    let mut horizon = steps;
    let mut prog = build_box_program(dsys, d, &tensors, horizon)?;
    let mut res = solve_log_box(&prog.clp);
    let mut infeasible_from = None;
    let mut closing_gap = None;
    if res.status != SolveStatus::Optimal {
        if res.status != SolveStatus::Infeasible && box_has_interior(dsys, d, &tensors, steps)? {
            return Err(Error::Solver(format!("box program: {:?} ({})", res.status, res.stats.solver_status)));
        }
        if let Some(term) = res.infeasible_term {
            closing_gap = Some((term / dsys.power_dim() + 1, term % dsys.power_dim()));
        }
        let (mut good, mut bad) = (0, steps);
        while bad - good > 1 {
            let mid = (good + bad) / 2;
            if box_has_interior(dsys, d, &tensors, mid)? {
                good = mid;
            } else {
                bad = mid;
            }
        }
        infeasible_from = Some(bad);
        // right at the horizon the smallest gap is nearly closed; step back a
        // little when the interior-point method stalls on that sliver
        horizon = good;
        loop {
            prog = build_box_program(dsys, d, &tensors, horizon)?;
            res = solve_log_box(&prog.clp);
            if horizon == 0 || res.status == SolveStatus::Optimal {
                break;
            }
            if good - horizon >= MAX_HORIZON_BACKOFF {
                return Err(Error::Solver(format!(
                    "box program on horizon {horizon}: {:?} ({})",
                    res.status, res.stats.solver_status
                )));
            }
            horizon -= 1;
        }
    }
    let m = dsys.power_dim();
    let n = dsys.state_dim();
    let eu = prog.scaling.energy();
    let z = &res.z;
    let mut loads = Vec::with_capacity(m);
    for j in 0..m {
        let mut e_down = vec![0.0];
        let mut e_up = vec![0.0];
        for k in 1..=steps {
            if k <= horizon {
                e_down.push(z[prog.e_minus[k - 1][j]] * eu);
                e_up.push(z[prog.e_plus[k - 1][j]] * eu);
            } else {
                e_down.push(f64::NAN);
                e_up.push(f64::NAN);
            }
        }
        let mut env = EnvelopeSeries::new(EnvelopeKind::TiDistributed, dsys.dt, e_down, e_up)?
            .with_label(dsys.source.power_labels.get(j).cloned().unwrap_or_else(|| format!("load{j}")));
        env.defined_up_to = env.defined_up_to.min(horizon);
        env.infeasible_from = infeasible_from;
        loads.push(env);
    }
    let mut residual = 0.0f64;
    for k in 1..=horizon {
        for i in 0..n {
            let up: f64 = (0..m).map(|j| tensors.alpha[k][(i, j)] * z[prog.e_plus[k - 1][j]] * eu).sum();
            let down: f64 = (0..m).map(|j| tensors.beta[k][(i, j)] * z[prog.e_minus[k - 1][j]] * eu).sum();
            residual = residual.max(up - z[prog.b_plus[k - 1][i]]).max(z[prog.b_minus[k - 1][i]] - down);
        }
    }
    let (p_plus, p_minus) = if horizon > 0 {
        (prog.plus.extract(z, prog.scaling), prog.minus.extract(z, prog.scaling))
    } else {
        (Trajectory::zeros(dsys.dt, 0, m), Trajectory::zeros(dsys.dt, 0, m))
    };
    Ok(BoxEnvelope {
        loads,
        p_plus,
        p_minus,
        horizon,
        infeasible_from,
        closing_gap,
        polytope_residual: residual,
        objective: if horizon > 0 { res.objective } else { 0.0 },
        solve_time_s: start.elapsed().as_secs_f64(),
    })
}

/// Pooled TI envelope under a fixed dispatch plan.
#[derive(Debug, Clone)]
pub struct CentralizedEnvelope {
    pub envelope: EnvelopeSeries,
    pub plan: DispatchPlan,
    /// Pooled comparison trajectories per lead time (index `k - 1`).
    pub high: Vec<Trajectory>,
    pub low: Vec<Trajectory>,
    pub solve_time_s: f64,
}

enum LeadTimeOutcome {
    Solved { value: f64, pooled: Trajectory, time: f64 },
    Infeasible,
}

fn centralized_lead_time(
    dsys: &DiscreteSystem,
    d: &Trajectory,
    tensors: &WeightTensors,
    plan: &DispatchPlan,
    k: usize,
    upper: bool,
) -> Result<LeadTimeOutcome> {
    let n = dsys.state_dim();
    let m = dsys.power_dim();
    let scaling = Scaling::for_system(dsys);
    let mut lp = LinearProgram::new();
    let block = match add_trajectory(&mut lp, dsys, d, k, scaling, Dispatch::Shares(&plan.delta)) {
        Ok(b) => b,
        Err(Error::Infeasible { .. }) => return Ok(LeadTimeOutcome::Infeasible),
        Err(e) => return Err(e),
    };
    let pooled = block.pooled.clone().expect("dispatched block has pooled variables");
    let (mut reach_lo, mut reach_hi) = (0.0, 0.0);
    for l in 0..k {
        let (lo, hi) = pooled_bounds(dsys, &plan.row(l));
        reach_lo += lo / scaling.power;
        reach_hi += hi / scaling.power;
    }
    let e = lp.add_var(reach_lo, reach_hi);
    let (gp, gm) = compute_gamma(tensors, plan, k)?;
    for i in 0..n {
        // response of state i to the pooled trajectory, in energy units
        let mut terms: Vec<(usize, f64)> = Vec::with_capacity(k + 1);
        for (l, &v) in pooled.iter().enumerate() {
            let r = &tensors.response[k - l];
            let shares = plan.row(l);
            let c: f64 = (0..m).map(|j| r[(i, j)] * shares[j]).sum();
            if c != 0.0 {
                terms.push((v, -c));
            }
        }
        if upper {
            terms.push((e, gp[i]));
            lp.add_le(terms, 0.0);
        } else {
            terms.push((e, gm[i]));
            lp.add_ge(terms, 0.0);
        }
    }
    lp.set_objective(e, if upper { 1.0 } else { -1.0 });
    let res = solve_lp(&lp);
    match res.status {
        SolveStatus::Optimal => {
            let values = DMatrix::from_fn(k, 1, |l, _| res.z[pooled[l]] * scaling.power);
            Ok(LeadTimeOutcome::Solved {
                value: res.z[e] * scaling.energy(),
                pooled: Trajectory { dt: dsys.dt, values },
                time: res.stats.solve_time_s,
            })
        }
        SolveStatus::Infeasible => Ok(LeadTimeOutcome::Infeasible),
        other => Err(Error::Solver(format!("centralized lead time {k}: {other:?} ({})", res.stats.solver_status))),
    }
}

/// Per-lead-time pooled bounds: the largest `Ē` with `Ē γ_+ ≤ b_+` and the
/// smallest with `Ē γ_- ≥ b_-`, each over dispatched trajectories that keep
/// all states within bounds.
pub fn compute_centralized_envelope(dsys: &DiscreteSystem, d: &Trajectory, plan: &DispatchPlan) -> Result<CentralizedEnvelope> {
    plan.validate()?;
    if plan.loads() != dsys.power_dim() {
        return Err(Error::Dimension(format!(
            "dispatch plan has {} loads, system has {}",
            plan.loads(),
            dsys.power_dim()
        )));
    }
    let steps = dsys.steps;
    let plan = plan.fitted(steps.max(1));
    let tensors = compute_weight_tensors(dsys, steps)?;
    let solved: Vec<Result<(LeadTimeOutcome, LeadTimeOutcome)>> = (1..=steps)
        .into_par_iter()
        .map(|k| {
            Ok((
                centralized_lead_time(dsys, d, &tensors, &plan, k, true)?,
                centralized_lead_time(dsys, d, &tensors, &plan, k, false)?,
            ))
        })
        .collect();
    let mut e_up = vec![0.0];
    let mut e_down = vec![0.0];
    let mut high = Vec::new();
    let mut low = Vec::new();
    let mut infeasible_from = None;
    let mut time = 0.0;
    for (idx, r) in solved.into_iter().enumerate() {
        let k = idx + 1;
        match (r?, infeasible_from) {
            (
                (LeadTimeOutcome::Solved { value: up, pooled: hp, time: t1 }, LeadTimeOutcome::Solved { value: down, pooled: lp_, time: t2 }),
                None,
            ) => {
                e_up.push(up);
                e_down.push(down);
                high.push(hp);
                low.push(lp_);
                time += t1 + t2;
            }
            _ => {
                infeasible_from.get_or_insert(k);
                e_up.push(f64::NAN);
                e_down.push(f64::NAN);
            }
        }
    }
    let mut envelope = EnvelopeSeries::new(EnvelopeKind::TiCentralized, dsys.dt, e_down, e_up)?.with_label("pool");
    envelope.infeasible_from = infeasible_from;
    Ok(CentralizedEnvelope { envelope, plan, high, low, solve_time_s: time })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{discretize, LinearLossySystem, Scheme};
    use crate::ti_scalar::compute_ti_scalar_envelope;
    use nalgebra::DVector;

    fn diagonal_rooms(rates: &[f64], gains: &[f64], steps: usize) -> (DiscreteSystem, Trajectory) {
        let n = rates.len();
        let sys = LinearLossySystem::new(
            DMatrix::from_diagonal(&DVector::from_row_slice(rates)),
            DMatrix::from_diagonal(&DVector::from_row_slice(gains)),
            DMatrix::from_fn(n, 1, |i, _| -rates[i]),
            DVector::zeros(n),
            DVector::from_element(n, 1000.0),
            DVector::from_element(n, 22.0),
            DVector::from_element(n, 24.0),
            DVector::from_element(n, 23.0),
        )
        .unwrap();
        (discretize(&sys, 900.0, steps, Scheme::ExactZoh).unwrap(), Trajectory::constant(900.0, steps, &[10.0]))
    }

    fn coupled_pair(steps: usize, insulated: f64) -> (DiscreteSystem, Trajectory) {
        let (g_amb, g_wall, c) = (40.0, 60.0 / insulated, 8e6);
        let a = DMatrix::from_row_slice(2, 2, &[-(g_amb + g_wall) / c, g_wall / c, g_wall / c, -(g_amb + g_wall) / c]);
        let sys = LinearLossySystem::new(
            a,
            DMatrix::from_diagonal_element(2, 2, 1.0 / c),
            DMatrix::from_element(2, 1, g_amb / c),
            DVector::zeros(2),
            DVector::from_element(2, 1000.0),
            DVector::from_element(2, 22.0),
            DVector::from_element(2, 24.0),
            DVector::from_element(2, 23.0),
        )
        .unwrap();
        (discretize(&sys, 900.0, steps, Scheme::ExactZoh).unwrap(), Trajectory::constant(900.0, steps, &[8.0]))
    }

    /// `G_m` of a decaying scalar under the exact discretization.
    fn scalar_response(a: f64, b: f64, m: usize) -> f64 {
        b * ((a * 900.0).exp() - 1.0) / (a * 900.0) * (a * 900.0 * (m - 1) as f64).exp()
    }

    #[test]
    fn decoupled_weights() {
        let (dsys, _) = diagonal_rooms(&[-2e-6, -5e-6], &[5e-8, 1e-7], 8);
        let w = compute_weight_tensors(&dsys, 8).unwrap();
        assert_eq!(w.alpha[0], dsys.source.b_p);
        for k in 1..=8 {
            assert!((w.alpha[k][(0, 0)] - scalar_response(-2e-6, 5e-8, 1)).abs() < 1e-12 * 5e-8);
            assert!((w.beta[k][(1, 1)] - scalar_response(-5e-6, 1e-7, k)).abs() < 1e-12 * 1e-7);
            assert!(w.alpha[k][(0, 0)] < 5e-8);
            assert_eq!(w.alpha[k][(0, 1)], 0.0);
            assert_eq!(w.beta[k][(1, 0)], 0.0);
        }
    }

    #[test]
    fn coupling_grows_with_age() {
        let a = DMatrix::from_row_slice(2, 2, &[-1e-4, 1e-4, 1e-4, -1e-4]);
        let sys = LinearLossySystem::new(
            a,
            DMatrix::identity(2, 2),
            DMatrix::zeros(2, 1),
            DVector::zeros(2),
            DVector::from_element(2, 1.0),
            DVector::zeros(2),
            DVector::from_element(2, 1.0),
            DVector::zeros(2),
        )
        .unwrap();
        let dsys = discretize(&sys, 900.0, 4, Scheme::ExactZoh).unwrap();
        let w = compute_weight_tensors(&dsys, 4).unwrap();
        // exp(A s)_{12} = (1 - e^{-2e-4 s}) / 2, averaged over each step
        let avg = |s0: f64, s1: f64| 0.5 * (1.0 - ((-2e-4 * s0).exp() - (-2e-4 * s1).exp()) / (2e-4 * (s1 - s0)));
        assert!((w.alpha[4][(0, 1)] - avg(2700.0, 3600.0)).abs() < 1e-9);
        assert!((w.beta[4][(0, 1)] - avg(0.0, 900.0)).abs() < 1e-9);
        assert!((avg(2700.0, 3600.0) - 0.23334).abs() < 1e-5);
        // grid value at the end of the hour bounds the last step's average
        assert!(w.alpha[4][(0, 1)] < 0.5 * (1.0 - (-0.72f64).exp()));
        for k in 0..=4 {
            assert!(w.beta[k].iter().zip(w.alpha[k].iter()).all(|(b, a)| 0.0 <= *b && b <= a));
        }
    }

    #[test]
    fn gamma_reductions() {
        let (dsys, _) = diagonal_rooms(&[-2.5e-6], &[5e-8], 12);
        let w = compute_weight_tensors(&dsys, 12).unwrap();
        let (gp, gm) = compute_gamma(&w, &DispatchPlan::uniform(12, 1), 12).unwrap();
        assert!((gp[0] - scalar_response(-2.5e-6, 5e-8, 1)).abs() < 1e-20);
        assert!((gm[0] - scalar_response(-2.5e-6, 5e-8, 12)).abs() < 1e-20);

        let (dsys, _) = diagonal_rooms(&[-2e-6, -4e-6, -1e-6], &[5e-8, 6e-8, 7e-8], 6);
        let w = compute_weight_tensors(&dsys, 6).unwrap();
        let plan = DispatchPlan::proportional(6, &[1.0, 2.0, 1.0]).unwrap();
        let (gp, gm) = compute_gamma(&w, &plan, 6).unwrap();
        let shares = [0.25, 0.5, 0.25];
        let rates = [-2e-6, -4e-6, -1e-6];
        let gains = [5e-8, 6e-8, 7e-8];
        for i in 0..3 {
            assert!((gp[i] - scalar_response(rates[i], gains[i], 1) * shares[i]).abs() < 1e-20);
            assert!(gm[i] <= gp[i]);
        }
        assert!(compute_gamma(&w, &plan, 7).is_err());
        assert!(compute_gamma(&w, &plan, 0).is_err());
    }

    #[test]
    fn dispatch_plan_validation_and_json() {
        assert!(DispatchPlan::new(DMatrix::from_row_slice(1, 2, &[0.7, 0.2])).is_err());
        assert!(DispatchPlan::new(DMatrix::from_row_slice(1, 2, &[1.2, -0.2])).is_err());
        let plan = DispatchPlan::new(DMatrix::from_row_slice(2, 2, &[0.5, 0.5, 0.25, 0.75])).unwrap();
        assert_eq!(plan.row(5), vec![0.25, 0.75]);
        assert_eq!(plan.fitted(3).delta.nrows(), 3);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("delta.json");
        std::fs::write(&path, plan.to_json()).unwrap();
        assert_eq!(DispatchPlan::from_json_file(&path).unwrap(), plan);
        std::fs::write(&path, "[[1.0, 0.0], [0.0, 1.0]]").unwrap();
        assert_eq!(DispatchPlan::from_json_file(&path).unwrap().loads(), 2);
        std::fs::write(&path, "[[1.0, 0.0], [1.0]]").unwrap();
        assert!(matches!(DispatchPlan::from_json_file(&path), Err(Error::Schema { .. })));
    }

    /// Relative comparison floored at one step of full power.
    fn rel_close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * a.abs().max(b.abs()).max(1000.0 * 900.0)
    }

    #[test]
    fn decoupled_box_matches_scalar() {
        let rates = [-2.5e-6, -4e-6];
        let gains = [5e-8, 8e-8];
        let (dsys, d) = diagonal_rooms(&rates, &gains, 24);
        let boxes = compute_distributed_box(&dsys, &d).unwrap();
        assert_eq!(boxes.horizon, 24);
        assert!(boxes.polytope_residual <= 1e-6 * 1e6);
        for j in 0..2 {
            let (one, d1) = diagonal_rooms(&rates[j..=j], &gains[j..=j], 24);
            let ti = compute_ti_scalar_envelope(&one, &d1).unwrap();
            for k in 0..=24 {
                assert!(rel_close(boxes.loads[j].e_up[k], ti.envelope.e_up[k], 1e-4), "load {j} k {k} {} {}", boxes.loads[j].e_up[k], ti.envelope.e_up[k]);
                assert!(rel_close(boxes.loads[j].e_down[k], ti.envelope.e_down[k], 1e-4), "load {j} k {k} {} {}", boxes.loads[j].e_down[k], ti.envelope.e_down[k]);
            }
        }
    }

    #[test]
    fn indicator_centralized_matches_scalar() {
        let rates = [-2.5e-6, -4e-6];
        let gains = [5e-8, 8e-8];
        let (dsys, d) = diagonal_rooms(&rates, &gains, 16);
        let (one, d1) = diagonal_rooms(&rates[1..], &gains[1..], 16);
        let ti = compute_ti_scalar_envelope(&one, &d1).unwrap();
        let cent = compute_centralized_envelope(&dsys, &d, &DispatchPlan::indicator(16, 2, 1)).unwrap();
        assert!(cent.envelope.infeasible_from.is_none());
        for k in 0..=16 {
            assert!(rel_close(cent.envelope.e_up[k], ti.envelope.e_up[k], 1e-4));
            assert!(rel_close(cent.envelope.e_down[k], ti.envelope.e_down[k], 1e-4));
        }
    }

    #[test]
    fn symmetric_pair_has_identical_boxes() {
        let (dsys, d) = coupled_pair(16, 1.0);
        let boxes = compute_distributed_box(&dsys, &d).unwrap();
        for k in 0..=boxes.horizon {
            assert!(rel_close(boxes.loads[0].e_up[k], boxes.loads[1].e_up[k], 1e-5));
            assert!(rel_close(boxes.loads[0].e_down[k], boxes.loads[1].e_down[k], 1e-5));
            assert!(boxes.loads[0].e_down[k] <= boxes.loads[0].e_up[k] + 1e-6);
        }
        assert!(boxes.polytope_residual <= 1e-6);
    }

    #[test]
    fn single_load_centralized_is_scalar() {
        let (dsys, d) = diagonal_rooms(&[-2.5e-6], &[5e-8], 12);
        let ti = compute_ti_scalar_envelope(&dsys, &d).unwrap();
        let cent = compute_centralized_envelope(&dsys, &d, &DispatchPlan::uniform(12, 1)).unwrap();
        for k in 0..=12 {
            assert!(rel_close(cent.envelope.e_up[k], ti.envelope.e_up[k], 1e-6));
            assert!(rel_close(cent.envelope.e_down[k], ti.envelope.e_down[k], 1e-6), "{k} {} {}", cent.envelope.e_down[k], ti.envelope.e_down[k]);
        }
    }

    #[test]
    fn wrong_plan_size_rejected() {
        let (dsys, d) = coupled_pair(4, 1.0);
        assert!(matches!(
            compute_centralized_envelope(&dsys, &d, &DispatchPlan::uniform(4, 3)),
            Err(Error::Dimension(_))
        ));
    }
}
