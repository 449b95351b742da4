//! Checking envelopes against simulation: corridor samplers, extremal
//! corridor trajectories, an exhaustive oracle on small instances, and the
//! area / MFPH / discomfort metrics.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::assembly::pooled_bounds;
use crate::envelope::{EnvelopeKind, EnvelopeSeries};
use crate::error::{Error, Result};
use crate::model::{check_state_feasibility, simulate, DiscreteSystem, LinearLossySystem, Trajectory};
use crate::ti_multi::DispatchPlan;

/// Comfort slack used by the soundness suites, in state units (°C).
pub const SOUNDNESS_TOL: f64 = 0.01;

/// Largest number of gridded trajectories the oracle will enumerate.
pub const ORACLE_BUDGET: f64 = 1e7;

/// Relative slack when testing corridor membership of computed energies.
const CORRIDOR_SLACK: f64 = 1e-9;

/// Cumulative-energy corridor `[e_down(k), e_up(k)]`, `k = 0..=K`, with the
/// power interval `[p_lo(l), p_hi(l)]` of each step.
#[derive(Debug, Clone, PartialEq)]
pub struct Corridor {
    pub dt: f64,
    pub e_down: Vec<f64>,
    pub e_up: Vec<f64>,
    pub p_lo: Vec<f64>,
    pub p_hi: Vec<f64>,
}

/// How a sampler picks a power inside the admissible interval of a step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SampleStyle {
    #[default]
    Uniform,
    /// One of the two interval ends, each with probability one half.
    BangBang,
}

/// Greedy corridor trajectories.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ExtremeMode {
    /// Highest power allowed at every step.
    EarliestMax,
    /// Least power early, ending on the upper bound.
    LatestMax,
    /// Highest power early, ending on the lower bound.
    EarliestThenMin,
    /// Least power allowed at every step.
    LatestMin,
}

impl ExtremeMode {
    pub const ALL: [ExtremeMode; 4] =
        [ExtremeMode::EarliestMax, ExtremeMode::LatestMax, ExtremeMode::EarliestThenMin, ExtremeMode::LatestMin];
}

impl Corridor {
    pub fn new(dt: f64, e_down: Vec<f64>, e_up: Vec<f64>, p_lo: Vec<f64>, p_hi: Vec<f64>) -> Result<Self> {
        let steps = p_lo.len();
        if e_down.len() != steps + 1 || e_up.len() != steps + 1 || p_hi.len() != steps {
            return Err(Error::Dimension(format!(
                "corridor with {} power intervals needs {} energy points, got {} and {}",
                steps,
                steps + 1,
                e_down.len(),
                e_up.len()
            )));
        }
        if !(dt > 0.0) {
            return Err(Error::InvalidArgument(format!("step length must be positive, got {dt}")));
        }
        Ok(Self { dt, e_down, e_up, p_lo, p_hi })
    }

    /// Corridor of `env` up to its last defined step, with constant power bounds.
    pub fn from_envelope(env: &EnvelopeSeries, p_lo: f64, p_hi: f64) -> Result<Self> {
        let h = env.defined_up_to;
        Self::new(env.dt, env.e_down[..=h].to_vec(), env.e_up[..=h].to_vec(), vec![p_lo; h], vec![p_hi; h])
    }

    pub fn steps(&self) -> usize {
        self.p_lo.len()
    }

    fn slack(&self, k: usize) -> f64 {
        CORRIDOR_SLACK * self.e_up[k].abs().max(self.e_down[k].abs()).max(self.p_hi.iter().fold(1.0f64, |m, v| m.max(v.abs())) * self.dt)
    }

    /// Whether `powers` respects the power bounds and keeps its plain
    /// cumulative energy inside the corridor at every step.
    pub fn contains(&self, powers: &[f64]) -> bool {
        if powers.len() < self.steps() {
            return false;
        }
        let mut e = 0.0;
        for l in 0..self.steps() {
            let p = powers[l];
            let ptol = CORRIDOR_SLACK * self.p_hi[l].abs().max(1.0);
            if p < self.p_lo[l] - ptol || p > self.p_hi[l] + ptol {
                return false;
            }
            e += p * self.dt;
            let s = self.slack(l + 1);
            if e < self.e_down[l + 1] - s || e > self.e_up[l + 1] + s {
                return false;
            }
        }
        true
    }

    /// Energies reachable at each step from which the end of the corridor
    /// (or `terminal`) can still be met. Errors with the first empty step.
    fn tightened(&self, terminal: Option<(f64, f64)>) -> Result<(Vec<f64>, Vec<f64>)> {
        let h = self.steps();
        let mut lo = self.e_down.clone();
        let mut hi = self.e_up.clone();
        if let Some((a, b)) = terminal {
            lo[h] = a;
            hi[h] = b;
        }
        for l in (0..h).rev() {
            if self.p_lo[l] > self.p_hi[l] {
                return Err(Error::DeadEnd(l));
            }
            hi[l] = hi[l].min(hi[l + 1] - self.p_lo[l] * self.dt);
            lo[l] = lo[l].max(lo[l + 1] - self.p_hi[l] * self.dt);
        }
        for k in 0..=h {
            if lo[k] > hi[k] + self.slack(k) {
                return Err(Error::DeadEnd(k));
            }
        }
        if lo[0] > self.slack(0) || hi[0] < -self.slack(0) {
            return Err(Error::DeadEnd(0));
        }
        Ok((lo, hi))
    }

    /// Walks forward, letting `pick(lo, hi)` choose each power from the
    /// interval that keeps the tightened corridor reachable.
    fn walk(&self, terminal: Option<(f64, f64)>, mut pick: impl FnMut(f64, f64) -> f64) -> Result<Vec<f64>> {
        let (lo, hi) = self.tightened(terminal)?;
        let mut e = 0.0;
        let mut out = Vec::with_capacity(self.steps());
        for l in 0..self.steps() {
            let a = self.p_lo[l].max((lo[l + 1] - e) / self.dt);
            let b = self.p_hi[l].min((hi[l + 1] - e) / self.dt);
            // rounding can cross the ends by a hair; the tightening guarantees a point
            let (a, b) = if a > b { (b, b) } else { (a, b) };
            let p = pick(a, b).clamp(self.p_lo[l], self.p_hi[l]);
            e += p * self.dt;
            out.push(p);
        }
        Ok(out)
    }

    /// A random corridor trajectory. Never dead-ends once the corridor is
    /// nonempty after backward tightening.
    pub fn sample(&self, rng: &mut impl Rng, style: SampleStyle) -> Result<Vec<f64>> {
        self.walk(None, |a, b| {
            if b <= a {
                return a;
            }
            match style {
                SampleStyle::Uniform => rng.gen_range(a..=b),
                SampleStyle::BangBang => {
                    if rng.gen_bool(0.5) {
                        a
                    } else {
                        b
                    }
                }
            }
        })
    }

    pub fn extreme(&self, mode: ExtremeMode) -> Result<Vec<f64>> {
        let h = self.steps();
        match mode {
            ExtremeMode::EarliestMax => self.walk(None, |_, b| b),
            ExtremeMode::LatestMin => self.walk(None, |a, _| a),
            ExtremeMode::EarliestThenMin => {
                let (lo, _) = self.tightened(None)?;
                self.walk(Some((lo[h], lo[h])), |_, b| b)
            }
            ExtremeMode::LatestMax => {
                let (_, hi) = self.tightened(None)?;
                self.walk(Some((hi[h], hi[h])), |a, _| a)
            }
        }
    }
}

/// Splits a total power among the loads in proportion to their ranges.
pub fn split_total(sys: &LinearLossySystem, total: &[f64], dt: f64) -> Trajectory {
    let m = sys.power_dim();
    let base: f64 = sys.p_min.iter().sum();
    let span: f64 = sys.p_max.iter().zip(sys.p_min.iter()).map(|(a, b)| a - b).sum();
    let values = nalgebra::DMatrix::from_fn(total.len(), m, |l, j| {
        let share = if span > 0.0 { (sys.p_max[j] - sys.p_min[j]) / span } else { 1.0 / m as f64 };
        sys.p_min[j] + (total[l] - base) * share
    });
    Trajectory { dt, values }
}

/// Corridor of the total energy of all loads.
pub fn total_corridor(env: &EnvelopeSeries, sys: &LinearLossySystem) -> Result<Corridor> {
    Corridor::from_envelope(env, sys.p_min.iter().sum(), sys.p_max.iter().sum())
}

/// Corridor of the pooled energy under a dispatch plan.
pub fn pooled_corridor(env: &EnvelopeSeries, dsys: &DiscreteSystem, plan: &DispatchPlan) -> Result<Corridor> {
    let h = env.defined_up_to;
    let (lo, hi): (Vec<f64>, Vec<f64>) = (0..h).map(|l| pooled_bounds(dsys, &plan.row(l))).unzip();
    Corridor::new(env.dt, env.e_down[..=h].to_vec(), env.e_up[..=h].to_vec(), lo, hi)
}

/// Seeded uniform draw inside the total-energy corridor of `env`, split
/// among the loads in proportion to their power ranges.
pub fn sample_in_envelope(env: &EnvelopeSeries, sys: &LinearLossySystem, seed: u64) -> Result<Trajectory> {
    sample_in_envelope_with(env, sys, seed, SampleStyle::Uniform)
}

pub fn sample_in_envelope_with(env: &EnvelopeSeries, sys: &LinearLossySystem, seed: u64, style: SampleStyle) -> Result<Trajectory> {
    if env.defined_up_to == 0 {
        return Err(Error::InvalidArgument("envelope has no defined step to sample".into()));
    }
    let corridor = total_corridor(env, sys)?;
    let total = corridor.sample(&mut ChaCha8Rng::seed_from_u64(seed), style)?;
    Ok(split_total(sys, &total, env.dt))
}

/// Independent draws inside each load's own corridor, truncated to the
/// shortest defined horizon.
pub fn sample_per_load(loads: &[EnvelopeSeries], sys: &LinearLossySystem, seed: u64, style: SampleStyle) -> Result<Trajectory> {
    if loads.len() != sys.power_dim() {
        return Err(Error::Dimension(format!("{} per-load envelopes for {} loads", loads.len(), sys.power_dim())));
    }
    let h = loads.iter().map(|e| e.defined_up_to).min().unwrap_or(0);
    if h == 0 {
        return Err(Error::InvalidArgument("per-load envelopes have no defined step to sample".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dt = loads[0].dt;
    let mut values = nalgebra::DMatrix::zeros(h, loads.len());
    for (j, env) in loads.iter().enumerate() {
        let corridor = Corridor::from_envelope(&env.truncated(h), sys.p_min[j], sys.p_max[j])?;
        let p = corridor.sample(&mut rng, style)?;
        values.set_column(j, &nalgebra::DVector::from_vec(p));
    }
    Ok(Trajectory { dt, values })
}

/// Pooled draw inside a centralized envelope, dispatched by `plan`.
pub fn sample_pooled(env: &EnvelopeSeries, dsys: &DiscreteSystem, plan: &DispatchPlan, seed: u64, style: SampleStyle) -> Result<Trajectory> {
    if env.defined_up_to == 0 {
        return Err(Error::InvalidArgument("pooled envelope has no defined step to sample".into()));
    }
    let corridor = pooled_corridor(env, dsys, plan)?;
    let pooled = corridor.sample(&mut ChaCha8Rng::seed_from_u64(seed), style)?;
    Ok(dispatch(plan, &pooled, env.dt))
}

/// Individual powers `δ_l p_l`.
pub fn dispatch(plan: &DispatchPlan, pooled: &[f64], dt: f64) -> Trajectory {
    let values = nalgebra::DMatrix::from_fn(pooled.len(), plan.loads(), |l, j| plan.row(l)[j] * pooled[l]);
    Trajectory { dt, values }
}

/// Extremal corridor trajectory of the total energy of `env`.
pub fn extreme_trajectory(env: &EnvelopeSeries, sys: &LinearLossySystem, mode: ExtremeMode) -> Result<Trajectory> {
    let total = total_corridor(env, sys)?.extreme(mode)?;
    Ok(split_total(sys, &total, env.dt))
}

/// One comfort breach found by a soundness suite.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    /// Seed of the sample, or the trajectory's ordinal for enumerations.
    pub seed: u64,
    pub step: usize,
    pub state: usize,
    /// Positive distance outside the comfort band, state units.
    pub excess: f64,
    pub above: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SoundnessReport {
    pub kind: EnvelopeKind,
    pub label: String,
    pub samples: usize,
    pub dead_ends: usize,
    pub tolerance: f64,
    /// Largest `x - x_max` seen, clipped at zero.
    pub worst_above: f64,
    /// Largest `x_min - x` seen, clipped at zero.
    pub worst_below: f64,
    pub violations: Vec<Violation>,
}

impl SoundnessReport {
    pub fn is_sound(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Worst excursion of a simulated trajectory, as a violation if beyond `tol`.
fn excursion(dsys: &DiscreteSystem, d: &Trajectory, p: &Trajectory, seed: u64, tol: f64) -> Result<(f64, f64, Option<Violation>)> {
    let xs = simulate(dsys, p, d)?;
    let sys = &dsys.source;
    let verdict = check_state_feasibility(&xs, sys, tol)?;
    let (above, below) = (verdict.max_over().max(0.0), verdict.max_under().max(0.0));
    if verdict.feasible {
        return Ok((above, below, None));
    }
    let mut worst = Violation { seed, step: 0, state: 0, excess: 0.0, above: true };
    for (k, row) in xs.values.row_iter().enumerate() {
        for i in 0..sys.state_dim() {
            let over = row[i] - sys.x_max[i];
            let under = sys.x_min[i] - row[i];
            if over > worst.excess {
                worst = Violation { seed, step: k, state: i, excess: over, above: true };
            }
            if under > worst.excess {
                worst = Violation { seed, step: k, state: i, excess: under, above: false };
            }
        }
    }
    Ok((above, below, Some(worst)))
}

/// Style used for seed `s` by the suites: uniform draws for even seeds,
/// bang-bang draws for odd ones.
pub fn style_for_seed(seed: u64) -> SampleStyle {
    if seed.is_multiple_of(2) {
        SampleStyle::Uniform
    } else {
        SampleStyle::BangBang
    }
}

fn run_suite(
    dsys: &DiscreteSystem,
    d: &Trajectory,
    kind: EnvelopeKind,
    label: &str,
    seeds: &[u64],
    tol: f64,
    draw: impl Fn(u64) -> Result<Trajectory> + Sync,
) -> Result<SoundnessReport> {
    let outcomes: Vec<Result<Option<(f64, f64, Option<Violation>)>>> = seeds
        .par_iter()
        .map(|&s| match draw(s) {
            Ok(p) => excursion(dsys, d, &p, s, tol).map(Some),
            Err(Error::DeadEnd(_)) => Ok(None),
            Err(e) => Err(e),
        })
        .collect();
    let mut report = SoundnessReport {
        kind,
        label: label.to_string(),
        samples: 0,
        dead_ends: 0,
        tolerance: tol,
        worst_above: 0.0,
        worst_below: 0.0,
        violations: Vec::new(),
    };
    for o in outcomes {
        match o? {
            None => report.dead_ends += 1,
            Some((above, below, v)) => {
                report.samples += 1;
                report.worst_above = report.worst_above.max(above);
                report.worst_below = report.worst_below.max(below);
                report.violations.extend(v);
            }
        }
    }
    Ok(report)
}

/// Samples the total-energy corridor of a TD or scalar TI envelope.
pub fn check_envelope_soundness(dsys: &DiscreteSystem, d: &Trajectory, env: &EnvelopeSeries, seeds: &[u64], tol: f64) -> Result<SoundnessReport> {
    run_suite(dsys, d, env.kind, &env.label, seeds, tol, |s| sample_in_envelope_with(env, &dsys.source, s, style_for_seed(s)))
}

/// Samples every load inside its own distributed corridor at once.
pub fn check_distributed_soundness(dsys: &DiscreteSystem, d: &Trajectory, loads: &[EnvelopeSeries], seeds: &[u64], tol: f64) -> Result<SoundnessReport> {
    run_suite(dsys, d, EnvelopeKind::TiDistributed, "all loads", seeds, tol, |s| {
        sample_per_load(loads, &dsys.source, s, style_for_seed(s))
    })
}

/// Samples the pooled corridor and dispatches the draws by `plan`.
pub fn check_centralized_soundness(
    dsys: &DiscreteSystem,
    d: &Trajectory,
    env: &EnvelopeSeries,
    plan: &DispatchPlan,
    seeds: &[u64],
    tol: f64,
) -> Result<SoundnessReport> {
    run_suite(dsys, d, EnvelopeKind::TiCentralized, &env.label, seeds, tol, |s| {
        sample_pooled(env, dsys, plan, s, style_for_seed(s))
    })
}

/// Peak comfort deviations of the two extremal corridor trajectories.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiscomfortReport {
    /// Largest `T - T_max`, °C, clipped at zero.
    pub worst_above: f64,
    /// Largest `T_min - T`, °C, clipped at zero.
    pub worst_below: f64,
    /// Late heating up to the upper bound.
    #[serde(skip)]
    pub above_trajectory: Trajectory,
    /// Early heating followed by the least consumption.
    #[serde(skip)]
    pub below_trajectory: Trajectory,
}

/// Simulates the latest-max and earliest-then-min corridor trajectories of a
/// one-state envelope and reports their comfort deviations.
pub fn worst_discomfort(dsys: &DiscreteSystem, d: &Trajectory, env: &EnvelopeSeries) -> Result<DiscomfortReport> {
    let sys = &dsys.source;
    if sys.state_dim() != 1 {
        return Err(Error::Dimension(format!("discomfort metric needs one state, system has {}", sys.state_dim())));
    }
    let above_trajectory = extreme_trajectory(env, sys, ExtremeMode::LatestMax)?;
    let below_trajectory = extreme_trajectory(env, sys, ExtremeMode::EarliestThenMin)?;
    let hot = check_state_feasibility(&simulate(dsys, &above_trajectory, d)?, sys, 0.0)?;
    let cold = check_state_feasibility(&simulate(dsys, &below_trajectory, d)?, sys, 0.0)?;
    Ok(DiscomfortReport {
        worst_above: hot.max_over().max(0.0),
        worst_below: cold.max_under().max(0.0),
        above_trajectory,
        below_trajectory,
    })
}

/// `Σ_{l ≤ k} (E_up - E_down)(l) dt`, joule-seconds; undefined steps count as zero width.
pub fn envelope_area(env: &EnvelopeSeries, k: usize) -> f64 {
    (0..=k.min(env.steps())).map(|l| env.width(l) * env.dt).sum()
}

/// `1 - area_ti / area_td` at lead time `k`; `None` when the TD area vanishes.
pub fn area_reduction(ti: &EnvelopeSeries, td: &EnvelopeSeries, k: usize) -> Option<f64> {
    let base = envelope_area(td, k);
    if base > 0.0 {
        Some(1.0 - envelope_area(ti, k) / base)
    } else {
        None
    }
}

/// Time of the first step whose upper bound drops below the lower one,
/// seconds, or the full horizon when the bounds never cross.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Mfph {
    pub seconds: f64,
    pub full_horizon: bool,
}

pub fn mfph(ti: &EnvelopeSeries) -> Mfph {
    match ti.first_crossing() {
        Some(k) => Mfph { seconds: k as f64 * ti.dt, full_horizon: false },
        None => Mfph { seconds: ti.steps() as f64 * ti.dt, full_horizon: true },
    }
}

/// MFPH of the envelope seen only up to lead time `k`.
pub fn mfph_within(ti: &EnvelopeSeries, k: usize) -> Mfph {
    mfph(&ti.truncated(k))
}

/// One line of the archetype sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsRow {
    pub archetype: String,
    pub horizon_steps: usize,
    pub horizon_s: f64,
    pub area_td: f64,
    pub area_ti: f64,
    pub reduction: Option<f64>,
    pub mfph_s: f64,
    pub mfph_full_horizon: bool,
    pub worst_above_c: f64,
    pub worst_below_c: f64,
}

/// Metrics of one archetype at lead time `k` from envelopes computed on a
/// horizon of at least `k` steps.
pub fn metrics_row(
    archetype: &str,
    dsys: &DiscreteSystem,
    d: &Trajectory,
    td: &EnvelopeSeries,
    ti: &EnvelopeSeries,
    k: usize,
) -> Result<MetricsRow> {
    let td_k = td.truncated(k);
    let disc = worst_discomfort(dsys, d, &td_k)?;
    let m = mfph_within(ti, k);
    Ok(MetricsRow {
        archetype: archetype.to_string(),
        horizon_steps: k,
        horizon_s: k as f64 * td.dt,
        area_td: envelope_area(td, k),
        area_ti: envelope_area(ti, k),
        reduction: area_reduction(ti, td, k),
        mfph_s: m.seconds,
        mfph_full_horizon: m.full_horizon,
        worst_above_c: disc.worst_above,
        worst_below_c: disc.worst_below,
    })
}

/// Exhaustive enumeration of gridded power trajectories.
///
/// Every step chooses one level per channel. Channels are the loads
/// themselves, or one pooled channel split by a dispatch plan.
#[derive(Debug, Clone)]
pub struct BruteForceOracle<'a> {
    dsys: &'a DiscreteSystem,
    d: &'a Trajectory,
    /// `levels[l][c]`: admissible values of channel `c` during step `l`.
    levels: Vec<Vec<Vec<f64>>>,
    plan: Option<DispatchPlan>,
    pub k_max: usize,
}

/// Feasible-energy range of the gridded trajectories per lead time.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleTable {
    /// Largest total energy of a gridded prefix feasible on steps `1..=k`.
    pub max_feasible: Vec<Option<f64>>,
    pub min_feasible: Vec<Option<f64>>,
    /// Largest energy step between neighbouring levels, joules.
    pub grid_increment: f64,
    pub enumerated: u64,
}

/// Outcome of enumerating every gridded trajectory inside a corridor.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleSoundness {
    pub horizon: usize,
    /// Gridded trajectories that stay in the corridor on every step.
    pub inside: u64,
    pub worst_excess: f64,
    pub violations: Vec<Violation>,
}

impl OracleSoundness {
    pub fn is_sound(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn is_vacuous(&self) -> bool {
        self.inside == 0
    }
}

/// Which corridor the enumerated trajectories are tested against.
#[derive(Debug, Clone, Copy)]
pub enum CorridorTest<'e> {
    /// Total energy of all loads.
    Total(&'e EnvelopeSeries),
    /// Each load against its own envelope.
    PerLoad(&'e [EnvelopeSeries]),
}

fn uniform_levels(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count <= 1 || hi <= lo {
        return vec![lo];
    }
    (0..count).map(|i| lo + (hi - lo) * i as f64 / (count - 1) as f64).collect()
}

impl<'a> BruteForceOracle<'a> {
    /// Every load independently on `power_levels` uniform levels of
    /// `[p_min, p_max]`.
    pub fn new(dsys: &'a DiscreteSystem, d: &'a Trajectory, power_levels: usize, k_max: usize) -> Result<Self> {
        let sys = &dsys.source;
        let per_step: Vec<Vec<f64>> = (0..sys.power_dim()).map(|j| uniform_levels(sys.p_min[j], sys.p_max[j], power_levels)).collect();
        Self::build(dsys, d, vec![per_step; k_max], None, k_max)
    }

    /// One pooled channel on `power_levels` uniform levels of the pooled
    /// interval of each step, dispatched by `plan`.
    pub fn dispatched(dsys: &'a DiscreteSystem, d: &'a Trajectory, plan: &DispatchPlan, power_levels: usize, k_max: usize) -> Result<Self> {
        if plan.loads() != dsys.power_dim() {
            return Err(Error::Dimension(format!("dispatch plan has {} loads, system has {}", plan.loads(), dsys.power_dim())));
        }
        let mut levels = Vec::with_capacity(k_max);
        for l in 0..k_max {
            let (lo, hi) = pooled_bounds(dsys, &plan.row(l));
            if lo > hi {
                return Err(Error::Infeasible { step: l, what: "dispatch shares incompatible with the power bounds".into() });
            }
            levels.push(vec![uniform_levels(lo, hi, power_levels)]);
        }
        Self::build(dsys, d, levels, Some(plan.clone()), k_max)
    }

    fn build(dsys: &'a DiscreteSystem, d: &'a Trajectory, levels: Vec<Vec<Vec<f64>>>, plan: Option<DispatchPlan>, k_max: usize) -> Result<Self> {
        let count: f64 = levels.iter().flat_map(|step| step.iter().map(|c| c.len() as f64)).product();
        if count > ORACLE_BUDGET {
            return Err(Error::Budget { count, budget: ORACLE_BUDGET });
        }
        if d.steps() < k_max {
            return Err(Error::Dimension(format!("disturbance covers {} steps, oracle needs {k_max}", d.steps())));
        }
        Ok(Self { dsys, d, levels, plan, k_max })
    }

    /// Individual powers for one choice of channel levels at step `l`.
    fn powers(&self, l: usize, choice: &[f64]) -> Vec<f64> {
        match &self.plan {
            Some(plan) => plan.row(l).iter().map(|s| s * choice[0]).collect(),
            None => choice.to_vec(),
        }
    }

    /// All level combinations of step `l`, as individual power vectors.
    fn step_options(&self, l: usize) -> Vec<Vec<f64>> {
        let mut combos: Vec<Vec<f64>> = vec![Vec::new()];
        for channel in &self.levels[l] {
            combos = combos
                .into_iter()
                .flat_map(|prefix| {
                    channel.iter().map(move |&v| {
                        let mut next = prefix.clone();
                        next.push(v);
                        next
                    })
                })
                .collect();
        }
        combos.into_iter().map(|c| self.powers(l, &c)).collect()
    }

    fn next_state(&self, x: &nalgebra::DVector<f64>, p: &[f64], l: usize) -> nalgebra::DVector<f64> {
        let mut next = &self.dsys.ad * x + &self.dsys.bpd * nalgebra::DVector::from_column_slice(p);
        if self.d.dim() > 0 {
            next += &self.dsys.bdd * self.d.values.row(l).transpose();
        }
        next
    }

    fn within(&self, x: &nalgebra::DVector<f64>, tol: f64) -> f64 {
        let sys = &self.dsys.source;
        (0..x.len()).fold(f64::NEG_INFINITY, |m, i| m.max(x[i] - sys.x_max[i]).max(sys.x_min[i] - x[i])) - tol
    }

    /// Largest energy step between neighbouring levels in one step, joules.
    pub fn grid_increment(&self) -> f64 {
        let mut inc = 0.0f64;
        for (l, step) in self.levels.iter().enumerate() {
            for (c, channel) in step.iter().enumerate() {
                let gap = channel.windows(2).fold(0.0f64, |m, w| m.max(w[1] - w[0]));
                let scale = match &self.plan {
                    Some(plan) => plan.row(l).iter().sum::<f64>(),
                    None => if c < self.dsys.power_dim() { 1.0 } else { 0.0 },
                };
                inc = inc.max(gap * scale * self.dsys.dt);
            }
        }
        inc
    }

    /// Max and min total energy over gridded prefixes feasible at every
    /// grid point `1..=k`, for `k = 0..=k_max`.
    pub fn td_table(&self) -> OracleTable {
        let mut table = OracleTable {
            max_feasible: vec![None; self.k_max + 1],
            min_feasible: vec![None; self.k_max + 1],
            grid_increment: self.grid_increment(),
            enumerated: 0,
        };
        table.max_feasible[0] = Some(0.0);
        table.min_feasible[0] = Some(0.0);
        let options: Vec<Vec<Vec<f64>>> = (0..self.k_max).map(|l| self.step_options(l)).collect();
        let x0 = self.dsys.source.x0.clone();
        self.descend_feasible(0, &x0, 0.0, &options, &mut table);
        table
    }

    fn descend_feasible(&self, l: usize, x: &nalgebra::DVector<f64>, e: f64, options: &[Vec<Vec<f64>>], table: &mut OracleTable) {
        if l == self.k_max {
            table.enumerated += 1;
            return;
        }
        for p in &options[l] {
            let next = self.next_state(x, p, l);
            if self.within(&next, 0.0) > 0.0 {
                continue;
            }
            let e_next = e + p.iter().sum::<f64>() * self.dsys.dt;
            let k = l + 1;
            table.max_feasible[k] = Some(table.max_feasible[k].map_or(e_next, |v: f64| v.max(e_next)));
            table.min_feasible[k] = Some(table.min_feasible[k].map_or(e_next, |v: f64| v.min(e_next)));
            self.descend_feasible(k, &next, e_next, options, table);
        }
    }

    /// Enumerates every gridded trajectory that stays in the corridor up to
    /// the corridor's defined horizon and simulates it.
    pub fn check_corridor(&self, test: CorridorTest<'_>, tol: f64) -> Result<OracleSoundness> {
        let m = self.dsys.power_dim();
        let horizon = match test {
            CorridorTest::Total(env) => env.defined_up_to,
            CorridorTest::PerLoad(loads) => {
                if loads.len() != m {
                    return Err(Error::Dimension(format!("{} per-load envelopes for {m} loads", loads.len())));
                }
                loads.iter().map(|e| e.defined_up_to).min().unwrap_or(0)
            }
        }
        .min(self.k_max);
        let options: Vec<Vec<Vec<f64>>> = (0..horizon).map(|l| self.step_options(l)).collect();
        let mut out = OracleSoundness { horizon, inside: 0, worst_excess: 0.0, violations: Vec::new() };
        let x0 = self.dsys.source.x0.clone();
        let mut walk = CorridorWalk { test, tol, horizon, options: &options, out: &mut out, worst_on_path: Vec::new() };
        self.descend_corridor(0, &x0, &vec![0.0; m], &mut walk);
        Ok(out)
    }

    fn in_corridor(test: CorridorTest<'_>, k: usize, energies: &[f64]) -> bool {
        let inside = |env: &EnvelopeSeries, e: f64| {
            let s = CORRIDOR_SLACK * env.e_up[k].abs().max(env.e_down[k].abs()).max(1.0);
            e >= env.e_down[k] - s && e <= env.e_up[k] + s
        };
        match test {
            CorridorTest::Total(env) => inside(env, energies.iter().sum()),
            CorridorTest::PerLoad(loads) => loads.iter().zip(energies).all(|(env, &e)| inside(env, e)),
        }
    }

    fn descend_corridor(&self, l: usize, x: &nalgebra::DVector<f64>, energies: &[f64], walk: &mut CorridorWalk<'_, '_>) {
        if l == walk.horizon {
            let ordinal = walk.out.inside;
            walk.out.inside += 1;
            // worst excursion along the path, recorded on the way down
            if let Some(&(excess, step, state, above)) = walk.worst_on_path.iter().max_by(|a, b| a.0.total_cmp(&b.0)) {
                walk.out.worst_excess = walk.out.worst_excess.max(excess);
                if excess > walk.tol {
                    walk.out.violations.push(Violation { seed: ordinal, step, state, excess, above });
                }
            }
            return;
        }
        let sys = &self.dsys.source;
        for p in &walk.options[l].clone() {
            let e_next: Vec<f64> = energies.iter().zip(p).map(|(e, q)| e + q * self.dsys.dt).collect();
            if !Self::in_corridor(walk.test, l + 1, &e_next) {
                continue;
            }
            let next = self.next_state(x, p, l);
            let mut worst = (0.0f64, l + 1, 0usize, true);
            for i in 0..next.len() {
                let over = next[i] - sys.x_max[i];
                let under = sys.x_min[i] - next[i];
                if over > worst.0 {
                    worst = (over, l + 1, i, true);
                }
                if under > worst.0 {
                    worst = (under, l + 1, i, false);
                }
            }
            walk.worst_on_path.push(worst);
            self.descend_corridor(l + 1, &next, &e_next, walk);
            walk.worst_on_path.pop();
        }
    }
}

struct CorridorWalk<'t, 'o> {
    test: CorridorTest<'t>,
    tol: f64,
    horizon: usize,
    options: &'o [Vec<Vec<f64>>],
    out: &'o mut OracleSoundness,
    worst_on_path: Vec<(f64, usize, usize, bool)>,
}

/// Whether the TD bounds enclose the oracle range at every lead time and
/// exceed it by at most one grid increment.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleEnclosure {
    pub encloses: bool,
    pub within_increment: bool,
    /// Largest `E_up - oracle_max` and `oracle_min - E_down`, joules.
    pub upper_gap: f64,
    pub lower_gap: f64,
    pub grid_increment: f64,
}

/// Compares a TD envelope with the oracle's feasible-energy range.
pub fn compare_td_with_oracle(td: &EnvelopeSeries, table: &OracleTable) -> OracleEnclosure {
    let mut out = OracleEnclosure {
        encloses: true,
        within_increment: true,
        upper_gap: 0.0,
        lower_gap: 0.0,
        grid_increment: table.grid_increment,
    };
    let slack = 1e-6 * td.e_up.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    for k in 0..table.max_feasible.len().min(td.e_up.len()) {
        if let (Some(hi), Some(lo)) = (table.max_feasible[k], table.min_feasible[k]) {
            let up = td.e_up[k] - hi;
            let down = lo - td.e_down[k];
            out.upper_gap = out.upper_gap.max(up);
            out.lower_gap = out.lower_gap.max(down);
            if up < -slack || down < -slack {
                out.encloses = false;
            }
            if up > table.grid_increment + slack || down > table.grid_increment + slack {
                out.within_increment = false;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{discretize, Scheme};
    use crate::td::compute_td_envelope;
    use crate::ti_scalar::compute_ti_scalar_envelope;

    fn swiss(steps: usize, dt: f64) -> (DiscreteSystem, Trajectory) {
        let sys = LinearLossySystem::scalar(-2.5e-6, 5e-8, 2.5e-6, 0.0, 1000.0, 22.0, 24.0, 23.0).unwrap();
        (discretize(&sys, dt, steps, Scheme::ExactZoh).unwrap(), Trajectory::constant(dt, steps, &[10.0]))
    }

    #[test]
    fn free_corridor_accepts_any_power() {
        let steps = 6;
        let up: Vec<f64> = (0..=steps).map(|k| 1000.0 * 900.0 * k as f64).collect();
        let c = Corridor::new(900.0, vec![0.0; steps + 1], up, vec![0.0; steps], vec![1000.0; steps]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let p = c.sample(&mut rng, SampleStyle::Uniform).unwrap();
            assert!(c.contains(&p));
        }
        assert_eq!(c.extreme(ExtremeMode::EarliestMax).unwrap(), vec![1000.0; steps]);
        assert_eq!(c.extreme(ExtremeMode::LatestMin).unwrap(), vec![0.0; steps]);
    }

    #[test]
    fn zero_width_corridor_is_unique() {
        let e: Vec<f64> = [0.0, 1.0, 3.0, 3.5].iter().map(|v| v * 900.0 * 100.0).collect();
        let c = Corridor::new(900.0, e.clone(), e, vec![0.0; 3], vec![1000.0; 3]).unwrap();
        for seed in 0..5 {
            let p = c.sample(&mut ChaCha8Rng::seed_from_u64(seed), SampleStyle::BangBang).unwrap();
            for (got, want) in p.iter().zip([100.0, 200.0, 50.0]) {
                assert!((got - want).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn unreachable_corridor_dead_ends() {
        // needs 2 kW on average but the device caps at 1 kW
        let c = Corridor::new(900.0, vec![0.0, 0.0, 3.6e6], vec![0.0, 1e7, 1e7], vec![0.0; 2], vec![1000.0; 2]).unwrap();
        assert!(matches!(c.sample(&mut ChaCha8Rng::seed_from_u64(0), SampleStyle::Uniform), Err(Error::DeadEnd(_))));
    }

    #[test]
    fn sampling_is_reproducible() {
        let (dsys, d) = swiss(32, 900.0);
        let ti = compute_ti_scalar_envelope(&dsys, &d).unwrap();
        let a = sample_in_envelope(&ti.envelope, &dsys.source, 11).unwrap();
        let b = sample_in_envelope(&ti.envelope, &dsys.source, 11).unwrap();
        let c = sample_in_envelope(&ti.envelope, &dsys.source, 12).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(total_corridor(&ti.envelope, &dsys.source).unwrap().contains(a.values.as_slice()));
    }

    #[test]
    fn scenario_b_breaks_td_but_not_ti() {
        let (dsys, d) = swiss(96, 900.0);
        let td = compute_td_envelope(&dsys, &d).unwrap().envelope;
        let sys = &dsys.source;
        let b = extreme_trajectory(&td, sys, ExtremeMode::EarliestThenMin).unwrap();
        let xs = simulate(&dsys, &b, &d).unwrap();
        let cold = check_state_feasibility(&xs, sys, 0.0).unwrap();
        assert!(cold.max_under() > 0.05, "{cold:?}");
        let a = extreme_trajectory(&td, sys, ExtremeMode::LatestMin).unwrap();
        assert!(check_state_feasibility(&simulate(&dsys, &a, &d).unwrap(), sys, 1e-6).unwrap().feasible);
        assert!((a.cumulative_total()[96] - b.cumulative_total()[96]).abs() < 1.0);

        let ti = compute_ti_scalar_envelope(&dsys, &d).unwrap().envelope;
        for mode in ExtremeMode::ALL {
            let p = extreme_trajectory(&ti, sys, mode).unwrap();
            let v = check_state_feasibility(&simulate(&dsys, &p, &d).unwrap(), sys, 1e-6).unwrap();
            assert!(v.feasible, "{mode:?}: {v:?}");
        }
    }

    #[test]
    fn lossless_has_no_discomfort() {
        let sys = LinearLossySystem::scalar(0.0, 1e-7, 0.0, 0.0, 800.0, 20.0, 21.0, 20.5).unwrap();
        let dsys = discretize(&sys, 900.0, 24, Scheme::ExactZoh).unwrap();
        let d = Trajectory::zeros(900.0, 24, 1);
        let td = compute_td_envelope(&dsys, &d).unwrap().envelope;
        let r = worst_discomfort(&dsys, &d, &td).unwrap();
        assert!(r.worst_above < 1e-6 && r.worst_below < 1e-6, "{r:?}");
    }

    #[test]
    fn swiss_house_discomfort_is_small() {
        let (dsys, d) = swiss(96, 900.0);
        let td = compute_td_envelope(&dsys, &d).unwrap().envelope;
        let r = worst_discomfort(&dsys, &d, &td).unwrap();
        assert!(r.worst_below > 0.05 && r.worst_below < 0.5, "{r:?}");
        assert!(r.worst_above < 0.5, "{r:?}");
    }

    #[test]
    fn area_and_mfph_definitions() {
        let env = EnvelopeSeries::new(EnvelopeKind::Td, 900.0, vec![0.0; 9], (0..9).map(|k| k as f64).collect()).unwrap();
        assert_eq!(area_reduction(&env, &env, 8), Some(0.0));
        assert_eq!(envelope_area(&env, 2), 3.0 * 900.0);
        let mut up: Vec<f64> = vec![10.0; 9];
        for v in &mut up[5..] {
            *v = -1.0;
        }
        let ti = EnvelopeSeries::new(EnvelopeKind::TiScalar, 900.0, vec![0.0; 9], up).unwrap();
        assert_eq!(mfph(&ti), Mfph { seconds: 4500.0, full_horizon: false });
        assert_eq!(mfph(&env), Mfph { seconds: 7200.0, full_horizon: true });
        assert_eq!(mfph_within(&ti, 4), Mfph { seconds: 3600.0, full_horizon: true });
        let flat = EnvelopeSeries::new(EnvelopeKind::Td, 900.0, vec![0.0; 3], vec![0.0; 3]).unwrap();
        assert_eq!(area_reduction(&flat, &flat, 2), None);
    }

    #[test]
    fn oracle_budget_is_enforced() {
        let (dsys, d) = swiss(12, 900.0);
        assert!(matches!(BruteForceOracle::new(&dsys, &d, 5, 12), Err(Error::Budget { .. })));
    }

    #[test]
    fn oracle_encloses_single_room() {
        let (dsys, d) = swiss(4, 7200.0);
        let td = compute_td_envelope(&dsys, &d).unwrap().envelope;
        let oracle = BruteForceOracle::new(&dsys, &d, 5, 4).unwrap();
        let table = oracle.td_table();
        assert_eq!(table.enumerated, 625);
        let cmp = compare_td_with_oracle(&td, &table);
        assert!(cmp.encloses && cmp.within_increment, "{cmp:?}");
        let ti = compute_ti_scalar_envelope(&dsys, &d).unwrap().envelope;
        let sound = oracle.check_corridor(CorridorTest::Total(&ti), SOUNDNESS_TOL).unwrap();
        assert!(sound.is_sound() && !sound.is_vacuous(), "{sound:?}");
    }

    #[test]
    fn oracle_finds_td_witness() {
        let (dsys, d) = swiss(4, 7200.0);
        let td = compute_td_envelope(&dsys, &d).unwrap().envelope;
        let oracle = BruteForceOracle::new(&dsys, &d, 5, 4).unwrap();
        let sound = oracle.check_corridor(CorridorTest::Total(&td), 0.0).unwrap();
        assert!(sound.inside > 0);
        // the tight comfort band is not reached from 23 degC within eight hours
        assert!(sound.worst_excess >= 0.0);
    }
}
