//! Trajectory-dependent envelopes: the largest and smallest energy a feasible
//! trajectory can have consumed by each lead time.

use rayon::prelude::*;

use crate::assembly::{add_trajectory, Dispatch, Scaling};
use crate::envelope::{EnvelopeKind, EnvelopeSeries};
use crate::error::{Error, Result};
use crate::model::{DiscreteSystem, Trajectory};
use crate::opt::{solve_lp, LinearProgram, SolveStatus};

/// Which way a per-lead-time objective is pushed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Max,
    Min,
}

#[derive(Debug, Clone)]
pub struct TdEnvelope {
    pub envelope: EnvelopeSeries,
    /// Maximizer at the full horizon.
    pub argmax: Trajectory,
    /// Minimizer at the full horizon.
    pub argmin: Trajectory,
    pub solve_time_s: f64,
}

/// Solution of one weighted per-lead-time LP.
#[derive(Debug, Clone)]
pub(crate) struct LeadTimeSolution {
    /// Objective in joules.
    pub value: f64,
    pub trajectory: Trajectory,
    pub solve_time_s: f64,
}

/// Optimizes `Σ_{l<k} Σ_j w(l) p_{l,j} dt` over trajectories feasible on
/// steps `0..k`. `weight(l)` multiplies the plain energy of step `l`.
pub(crate) fn solve_weighted_lead_time(
    dsys: &DiscreteSystem,
    d: &Trajectory,
    k: usize,
    sense: Sense,
    weight: impl Fn(usize) -> f64,
) -> Result<LeadTimeSolution> {
    let scaling = Scaling::for_system(dsys);
    let mut lp = LinearProgram::new();
    let block = add_trajectory(&mut lp, dsys, d, k, scaling, Dispatch::Free)?;
    let sign = if sense == Sense::Max { 1.0 } else { -1.0 };
    for l in 0..k {
        let w = weight(l);
        for terms in &block.power[l] {
            for &(v, c) in terms {
                lp.objective[v] += sign * w * c;
            }
        }
    }
    let res = solve_lp(&lp);
    match res.status {
        SolveStatus::Optimal => Ok(LeadTimeSolution {
            value: sign * res.objective * scaling.energy(),
            trajectory: block.extract(&res.z, scaling),
            solve_time_s: res.stats.solve_time_s,
        }),
        SolveStatus::Infeasible => Err(Error::Infeasible {
            step: k,
            what: "no power trajectory keeps the states within bounds".into(),
        }),
        other => Err(Error::Solver(format!("lead time {k}: {other:?} ({})", res.stats.solver_status))),
    }
}

/// Per-lead-time TD envelope on the full grid of `dsys`.
pub fn compute_td_envelope(dsys: &DiscreteSystem, d: &Trajectory) -> Result<TdEnvelope> {
    let steps = dsys.steps;
    let solved: Vec<Result<(LeadTimeSolution, LeadTimeSolution)>> = (1..=steps)
        .into_par_iter()
        .map(|k| {
            let up = solve_weighted_lead_time(dsys, d, k, Sense::Max, |_| 1.0)?;
            let down = solve_weighted_lead_time(dsys, d, k, Sense::Min, |_| 1.0)?;
            Ok((up, down))
        })
        .collect();
    let mut e_up = vec![0.0];
    let mut e_down = vec![0.0];
    let mut time = 0.0;
    let mut last = None;
    for r in solved {
        let (up, down) = r?;
        e_up.push(up.value);
        e_down.push(down.value);
        time += up.solve_time_s + down.solve_time_s;
        last = Some((up.trajectory, down.trajectory));
    }
    let m = dsys.power_dim();
    let (argmax, argmin) = last.unwrap_or_else(|| (Trajectory::zeros(dsys.dt, 0, m), Trajectory::zeros(dsys.dt, 0, m)));
    let envelope = EnvelopeSeries::new(EnvelopeKind::Td, dsys.dt, e_down, e_up)?;
    Ok(TdEnvelope { envelope, argmax, argmin, solve_time_s: time })
}

/// Largest relative deviation between the LP bounds and the greedy
/// trajectories (full power while the upper state bound allows, least power
/// while the lower bound allows).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GreedyDeviation {
    pub upper: f64,
    pub lower: f64,
}

/// Greedy cumulative energies `(upper, lower)` of a one-state system, length K+1.
pub fn greedy_td_bounds(dsys: &DiscreteSystem, d: &Trajectory) -> Result<(Vec<f64>, Vec<f64>)> {
    let sys = &dsys.source;
    if sys.state_dim() != 1 {
        return Err(Error::Dimension(format!(
            "greedy check needs one state, system has {}",
            sys.state_dim()
        )));
    }
    let m = sys.power_dim();
    let run = |upper: bool| -> Result<Vec<f64>> {
        let mut x = sys.x0[0];
        let mut cum = vec![0.0];
        for l in 0..dsys.steps {
            let free = dsys.ad[(0, 0)] * x
                + (0..d.dim()).map(|r| dsys.bdd[(0, r)] * d.values[(l, r)]).sum::<f64>();
            // serve the most effective inputs first
            let mut order: Vec<usize> = (0..m).collect();
            order.sort_by(|&a, &b| dsys.bpd[(0, b)].total_cmp(&dsys.bpd[(0, a)]));
            if !upper {
                order.reverse();
            }
            let mut p: Vec<f64> = if upper { sys.p_min.iter().copied().collect() } else { sys.p_max.iter().copied().collect() };
            let mut next = free + (0..m).map(|j| dsys.bpd[(0, j)] * p[j]).sum::<f64>();
            for &j in &order {
                let b = dsys.bpd[(0, j)];
                let span = sys.p_max[j] - sys.p_min[j];
                if upper {
                    let room = if b > 0.0 { (sys.x_max[0] - next) / b } else { f64::INFINITY };
                    let add = room.clamp(0.0, span);
                    p[j] += add;
                    next += b * add;
                } else {
                    let room = if b > 0.0 { (next - sys.x_min[0]) / b } else { f64::INFINITY };
                    let cut = room.clamp(0.0, span);
                    p[j] -= cut;
                    next -= b * cut;
                }
            }
            if next > sys.x_max[0] + 1e-9 || next < sys.x_min[0] - 1e-9 {
                return Err(Error::Infeasible { step: l + 1, what: "greedy trajectory leaves the state bounds".into() });
            }
            x = next;
            cum.push(cum[l] + p.iter().sum::<f64>() * dsys.dt);
        }
        Ok(cum)
    };
    Ok((run(true)?, run(false)?))
}

/// Compares the per-lead-time LP envelope with the greedy trajectories.
pub fn greedy_td_check(dsys: &DiscreteSystem, d: &Trajectory) -> Result<GreedyDeviation> {
    let (g_up, g_down) = greedy_td_bounds(dsys, d)?;
    let td = compute_td_envelope(dsys, d)?;
    let env = &td.envelope;
    let scale = env.e_up.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let dev = |a: &[f64], b: &[f64]| a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs() / scale));
    Ok(GreedyDeviation { upper: dev(&env.e_up, &g_up), lower: dev(&env.e_down, &g_down) })
}
