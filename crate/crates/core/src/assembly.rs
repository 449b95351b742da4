//! Shared LP blocks: a power trajectory driving the discretized dynamics with
//! grid-point state bounds.
//!
//! Powers are carried in units of the largest power cap and energies in
//! units of that power times `dt`, so coefficients stay near one.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::model::{DiscreteSystem, Trajectory};
use crate::opt::LinearProgram;

#[derive(Debug, Clone, Copy)]
pub(crate) struct Scaling {
    /// Watts per unit power variable.
    pub power: f64,
    pub dt: f64,
}

impl Scaling {
    pub fn for_system(dsys: &DiscreteSystem) -> Self {
        let pmax = dsys.source.p_max.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
        Self { power: if pmax > 0.0 { pmax } else { 1.0 }, dt: dsys.dt }
    }

    /// Joules per unit energy variable.
    pub fn energy(&self) -> f64 {
        self.power * self.dt
    }
}

/// How individual powers are tied to decision variables.
#[derive(Debug, Clone, Copy)]
pub(crate) enum Dispatch<'a> {
    /// One variable per load and step.
    Free,
    /// One pooled variable per step, split by the rows of `delta`.
    Shares(&'a DMatrix<f64>),
}

#[derive(Debug, Clone)]
pub(crate) struct TrajectoryBlock {
    pub steps: usize,
    /// `power[l][j]`: scaled power of load `j` during step `l` as a sparse
    /// combination of variables.
    pub power: Vec<Vec<Vec<(usize, f64)>>>,
    /// Pooled variable per step when dispatched.
    pub pooled: Option<Vec<usize>>,
    /// `state[k][i]` for `k = 0..=steps`; `state[0]` is fixed at `x0`.
    #[allow(dead_code)]
    pub state: Vec<Vec<usize>>,
}

impl TrajectoryBlock {
    pub fn extract(&self, z: &[f64], scaling: Scaling) -> Trajectory {
        let m = self.power.first().map_or(0, |r| r.len());
        let values = DMatrix::from_fn(self.steps, m, |l, j| {
            scaling.power * self.power[l][j].iter().map(|&(v, c)| c * z[v]).sum::<f64>()
        });
        Trajectory { dt: scaling.dt, values }
    }
}

/// Sums coefficients of repeated variables.
pub(crate) fn merge(terms: impl IntoIterator<Item = (usize, f64)>) -> Vec<(usize, f64)> {
    let mut out: Vec<(usize, f64)> = Vec::new();
    for (v, c) in terms {
        match out.iter_mut().find(|(w, _)| *w == v) {
            Some(slot) => slot.1 += c,
            None => out.push((v, c)),
        }
    }
    out
}

/// Interval of pooled power compatible with every load's bounds under the
/// shares of one step.
pub(crate) fn pooled_bounds(dsys: &DiscreteSystem, shares: &[f64]) -> (f64, f64) {
    let sys = &dsys.source;
    let mut lo = 0.0f64;
    let mut hi = f64::INFINITY;
    for (j, &s) in shares.iter().enumerate() {
        if s > 0.0 {
            lo = lo.max(sys.p_min[j] / s);
            hi = hi.min(sys.p_max[j] / s);
        } else if sys.p_min[j] > 0.0 {
            hi = f64::NEG_INFINITY;
        }
    }
    (lo, hi)
}

/// Adds power variables, state variables, the dynamics `x_{l+1} = Ad x_l +
/// Bpd p_l + Bdd d_l` and the state bounds at steps `1..=steps`.
pub(crate) fn add_trajectory(
    lp: &mut LinearProgram,
    dsys: &DiscreteSystem,
    d: &Trajectory,
    steps: usize,
    scaling: Scaling,
    dispatch: Dispatch<'_>,
) -> Result<TrajectoryBlock> {
    let sys = &dsys.source;
    let n = sys.state_dim();
    let m = sys.power_dim();
    if d.steps() < steps || d.dim() != dsys.bdd.ncols() {
        return Err(Error::Dimension(format!(
            "disturbance has {} steps of dim {}, need {steps} of dim {}",
            d.steps(),
            d.dim(),
            dsys.bdd.ncols()
        )));
    }
    let mut power = Vec::with_capacity(steps);
    let mut pooled = None;
    match dispatch {
        Dispatch::Free => {
            for _ in 0..steps {
                let row: Vec<Vec<(usize, f64)>> = (0..m)
                    .map(|j| vec![(lp.add_var(sys.p_min[j] / scaling.power, sys.p_max[j] / scaling.power), 1.0)])
                    .collect();
                power.push(row);
            }
        }
        Dispatch::Shares(delta) => {
            if delta.ncols() != m || delta.nrows() < steps {
                return Err(Error::Dimension(format!(
                    "dispatch plan is {}x{}, need at least {steps}x{m}",
                    delta.nrows(),
                    delta.ncols()
                )));
            }
            let mut vars = Vec::with_capacity(steps);
            for l in 0..steps {
                let shares: Vec<f64> = delta.row(l).iter().copied().collect();
                let (lo, hi) = pooled_bounds(dsys, &shares);
                if lo > hi {
                    return Err(Error::Infeasible {
                        step: l,
                        what: "dispatch shares incompatible with the power bounds".into(),
                    });
                }
                let v = lp.add_var(lo / scaling.power, hi / scaling.power);
                vars.push(v);
                power.push(shares.iter().map(|&s| if s != 0.0 { vec![(v, s)] } else { vec![] }).collect());
            }
            pooled = Some(vars);
        }
    }
    let mut state = Vec::with_capacity(steps + 1);
    state.push((0..n).map(|i| lp.add_var(sys.x0[i], sys.x0[i])).collect::<Vec<_>>());
    for _ in 0..steps {
        state.push((0..n).map(|i| lp.add_var(sys.x_min[i], sys.x_max[i])).collect());
    }
    for l in 0..steps {
        for i in 0..n {
            let mut terms = vec![(state[l + 1][i], 1.0)];
            for q in 0..n {
                let a = dsys.ad[(i, q)];
                if a != 0.0 {
                    terms.push((state[l][q], -a));
                }
            }
            for j in 0..m {
                let b = dsys.bpd[(i, j)] * scaling.power;
                if b != 0.0 {
                    for &(v, c) in &power[l][j] {
                        terms.push((v, -b * c));
                    }
                }
            }
            let rhs: f64 = (0..d.dim()).map(|r| dsys.bdd[(i, r)] * d.values[(l, r)]).sum();
            lp.add_eq(merge(terms), rhs);
        }
    }
    Ok(TrajectoryBlock { steps, power, pooled, state })
}
