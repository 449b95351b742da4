//! Trajectory-independent envelopes of one-state systems.
//!
//! Power drawn during step `l` reaches the state at step `k` attenuated by
//! `ad^{k-l-1}`, where `ad` is the one-step decay of the discretized system.
//! A trajectory that consumed `E(k)` by step `k` therefore stays feasible when
//! `E` lies between `Σ_{l<k} ad^{-l} p_l dt` of a feasible low trajectory and
//! `Σ_{l<k} ad^{k-l-1} p_l dt` of a feasible high trajectory.

use rayon::prelude::*;

use crate::envelope::{EnvelopeKind, EnvelopeSeries};
use crate::error::{Error, Result};
use crate::model::{DiscreteSystem, Trajectory};
use crate::td::{solve_weighted_lead_time, Sense, TdEnvelope};

/// Discount weights of one decaying state on a fixed grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightedEnergyKernel {
    /// Fraction of the state surviving one step, in `(0, 1]`.
    pub decay: f64,
    pub dt: f64,
}

impl WeightedEnergyKernel {
    /// Kernel of the exact discretization of `dx/dt = a x`, `a ≤ 0`.
    pub fn new(a: f64, dt: f64) -> Self {
        Self { decay: (a * dt).exp(), dt }
    }

    /// Kernel matching the one-step map of `dsys`, whatever its scheme.
    pub fn for_system(dsys: &DiscreteSystem) -> Result<Self> {
        scalar_rate(&dsys.source.a)?;
        Ok(Self { decay: dsys.ad[(0, 0)], dt: dsys.dt })
    }

    /// Weight of step `l` in the upper bound at lead time `k`, `l < k`.
    /// The age `k - l - 1` is counted from the end of the step.
    pub fn upper(&self, k: usize, l: usize) -> f64 {
        self.decay.powi((k - l - 1) as i32)
    }

    /// Weight of step `l` in the lower bound, age counted from its start.
    pub fn lower(&self, l: usize) -> f64 {
        self.decay.powi(-(l as i32))
    }

    pub fn upper_energy(&self, p: &Trajectory, k: usize) -> Result<f64> {
        check_step(p, k)?;
        Ok((0..k).map(|l| self.upper(k, l) * p.values.row(l).sum() * p.dt).sum())
    }

    pub fn lower_energy(&self, p: &Trajectory, k: usize) -> Result<f64> {
        check_step(p, k)?;
        Ok((0..k).map(|l| self.lower(l) * p.values.row(l).sum() * p.dt).sum())
    }
}

fn scalar_rate(a: &nalgebra::DMatrix<f64>) -> Result<f64> {
    if a.nrows() != 1 || a.ncols() != 1 {
        return Err(Error::Dimension(format!("scalar envelope needs a 1x1 system matrix, got {}x{}", a.nrows(), a.ncols())));
    }
    Ok(a[(0, 0)])
}

fn check_step(p: &Trajectory, k: usize) -> Result<()> {
    if k > p.steps() {
        return Err(Error::InvalidArgument(format!("lead time {k} beyond the {} steps of the trajectory", p.steps())));
    }
    Ok(())
}

/// `Σ_{l<k} e^{a dt (k-l-1)} Σ_j p_{l,j} dt`, joules.
pub fn weighted_energy_upper(p: &Trajectory, a: f64, k: usize) -> Result<f64> {
    WeightedEnergyKernel::new(a, p.dt).upper_energy(p, k)
}

/// `Σ_{l<k} e^{-a dt l} Σ_j p_{l,j} dt`, joules.
pub fn weighted_energy_lower(p: &Trajectory, a: f64, k: usize) -> Result<f64> {
    WeightedEnergyKernel::new(a, p.dt).lower_energy(p, k)
}

/// How the comparison trajectories are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ComparisonMode {
    /// One optimized high and low trajectory per lead time.
    #[default]
    PerLeadTime,
    /// The TD argmax/argmin at the full horizon, reused for every lead time.
    FromTd,
}

#[derive(Debug, Clone)]
pub struct TiScalarEnvelope {
    pub envelope: EnvelopeSeries,
    /// Comparison trajectories per lead time `k = 1..=K` (index `k - 1`).
    pub high: Vec<Trajectory>,
    pub low: Vec<Trajectory>,
    pub solve_time_s: f64,
}

/// Scalar TI envelope with one weighted LP per lead time and bound.
pub fn compute_ti_scalar_envelope(dsys: &DiscreteSystem, d: &Trajectory) -> Result<TiScalarEnvelope> {
    let kernel = WeightedEnergyKernel::for_system(dsys)?;
    let solved: Vec<Result<_>> = (1..=dsys.steps)
        .into_par_iter()
        .map(|k| {
            let up = solve_weighted_lead_time(dsys, d, k, Sense::Max, |l| kernel.upper(k, l))?;
            let down = solve_weighted_lead_time(dsys, d, k, Sense::Min, |l| kernel.lower(l))?;
            Ok((up, down))
        })
        .collect();
    let mut e_up = vec![0.0];
    let mut e_down = vec![0.0];
    let mut high = Vec::with_capacity(dsys.steps);
    let mut low = Vec::with_capacity(dsys.steps);
    let mut time = 0.0;
    for r in solved {
        let (up, down) = r?;
        e_up.push(up.value);
        e_down.push(down.value);
        time += up.solve_time_s + down.solve_time_s;
        high.push(up.trajectory);
        low.push(down.trajectory);
    }
    let envelope = EnvelopeSeries::new(EnvelopeKind::TiScalar, dsys.dt, e_down, e_up)?;
    Ok(TiScalarEnvelope { envelope, high, low, solve_time_s: time })
}

/// Scalar TI envelope built from the TD extreme trajectories instead of
/// dedicated optimizations. Valid but usually narrower.
pub fn ti_scalar_from_td(dsys: &DiscreteSystem, td: &TdEnvelope) -> Result<TiScalarEnvelope> {
    let kernel = WeightedEnergyKernel::for_system(dsys)?;
    let steps = td.argmax.steps();
    let mut e_up = Vec::with_capacity(steps + 1);
    let mut e_down = Vec::with_capacity(steps + 1);
    for k in 0..=steps {
        e_up.push(kernel.upper_energy(&td.argmax, k)?);
        e_down.push(kernel.lower_energy(&td.argmin, k)?);
    }
    let envelope = EnvelopeSeries::new(EnvelopeKind::TiScalar, dsys.dt, e_down, e_up)?;
    Ok(TiScalarEnvelope {
        envelope,
        high: (1..=steps).map(|k| td.argmax.prefix(k)).collect(),
        low: (1..=steps).map(|k| td.argmin.prefix(k)).collect(),
        solve_time_s: 0.0,
    })
}

/// Dispatches on [`ComparisonMode`].
pub fn compute_ti_scalar_with(dsys: &DiscreteSystem, d: &Trajectory, mode: ComparisonMode) -> Result<TiScalarEnvelope> {
    match mode {
        ComparisonMode::PerLeadTime => compute_ti_scalar_envelope(dsys, d),
        ComparisonMode::FromTd => ti_scalar_from_td(dsys, &crate::td::compute_td_envelope(dsys, d)?),
    }
}
