//! Continuous and discretized lossy linear systems, simulation and
//! state-feasibility checks.

use std::fmt;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expm::zoh_integral;

/// Default tolerance (state units) for feasibility checks.
pub const DEFAULT_STATE_TOL: f64 = 1e-6;

/// `dx/dt = A x + B_p p + B_d d` with box bounds on power and state.
///
/// The class of interest has a nonpositive diagonal in `A` (state-dependent
/// losses), nonnegative off-diagonal entries (Metzler) and `B_p >= 0`.
/// Construction only checks shapes; see [`LinearLossySystem::validate`].
#[derive(Debug, Clone, PartialEq)]
pub struct LinearLossySystem {
    pub a: DMatrix<f64>,
    pub b_p: DMatrix<f64>,
    pub b_d: DMatrix<f64>,
    pub p_min: DVector<f64>,
    pub p_max: DVector<f64>,
    pub x_min: DVector<f64>,
    pub x_max: DVector<f64>,
    pub x0: DVector<f64>,
    pub state_labels: Vec<String>,
    pub power_labels: Vec<String>,
}

/// One violated structural invariant.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    PositiveDiagonal { i: usize, value: f64 },
    NegativeOffDiagonal { i: usize, j: usize, value: f64 },
    NegativeInputGain { i: usize, j: usize, value: f64 },
    PowerBounds { j: usize, p_min: f64, p_max: f64 },
    StateBounds { i: usize, x_min: f64, x_max: f64 },
    InitialState { i: usize, x0: f64 },
    NonFinite { what: String },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::PositiveDiagonal { i, value } => {
                write!(f, "diagonal positive at ({i},{i}): {value}")
            }
            Violation::NegativeOffDiagonal { i, j, value } => {
                write!(f, "off-diagonal negative at ({i},{j}): {value}")
            }
            Violation::NegativeInputGain { i, j, value } => {
                write!(f, "power input gain negative at ({i},{j}): {value}")
            }
            Violation::PowerBounds { j, p_min, p_max } => {
                write!(f, "power bounds need 0 <= p_min <= p_max at {j}: [{p_min}, {p_max}]")
            }
            Violation::StateBounds { i, x_min, x_max } => {
                write!(f, "state bounds inverted at {i}: [{x_min}, {x_max}]")
            }
            Violation::InitialState { i, x0 } => write!(f, "initial state outside bounds at {i}: {x0}"),
            Violation::NonFinite { what } => write!(f, "non-finite entries in {what}"),
        }
    }
}

/// Result of [`LinearLossySystem::validate`]; empty means the system is in the
/// supported class.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            return write!(f, "valid");
        }
        let lines: Vec<String> = self.violations.iter().map(|v| v.to_string()).collect();
        write!(f, "{}", lines.join("; "))
    }
}

impl LinearLossySystem {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        a: DMatrix<f64>,
        b_p: DMatrix<f64>,
        b_d: DMatrix<f64>,
        p_min: DVector<f64>,
        p_max: DVector<f64>,
        x_min: DVector<f64>,
        x_max: DVector<f64>,
        x0: DVector<f64>,
    ) -> Result<Self> {
        let n = a.nrows();
        let m = b_p.ncols();
        let dim = |what: &str, got: (usize, usize), want: (usize, usize)| -> Result<()> {
            if got != want {
                return Err(Error::Dimension(format!(
                    "{what} is {}x{}, expected {}x{}",
                    got.0, got.1, want.0, want.1
                )));
            }
            Ok(())
        };
        dim("A", a.shape(), (n, n))?;
        dim("B_p", b_p.shape(), (n, m))?;
        if b_d.nrows() != n {
            return Err(Error::Dimension(format!("B_d has {} rows, expected {n}", b_d.nrows())));
        }
        dim("p_min", p_min.shape(), (m, 1))?;
        dim("p_max", p_max.shape(), (m, 1))?;
        dim("x_min", x_min.shape(), (n, 1))?;
        dim("x_max", x_max.shape(), (n, 1))?;
        dim("x0", x0.shape(), (n, 1))?;
        Ok(Self {
            a,
            b_p,
            b_d,
            p_min,
            p_max,
            x_min,
            x_max,
            x0,
            state_labels: (0..n).map(|i| format!("x{i}")).collect(),
            power_labels: (0..m).map(|j| format!("p{j}")).collect(),
        })
    }

    /// Single-state system; `b_d` multiplies a single disturbance channel.
    #[allow(clippy::too_many_arguments)]
    pub fn scalar(
        a: f64,
        b_p: f64,
        b_d: f64,
        p_min: f64,
        p_max: f64,
        x_min: f64,
        x_max: f64,
        x0: f64,
    ) -> Result<Self> {
        Self::new(
            DMatrix::from_element(1, 1, a),
            DMatrix::from_element(1, 1, b_p),
            DMatrix::from_element(1, 1, b_d),
            DVector::from_element(1, p_min),
            DVector::from_element(1, p_max),
            DVector::from_element(1, x_min),
            DVector::from_element(1, x_max),
            DVector::from_element(1, x0),
        )
    }

    pub fn with_labels(mut self, states: Vec<String>, powers: Vec<String>) -> Result<Self> {
        if states.len() != self.state_dim() || powers.len() != self.power_dim() {
            return Err(Error::Dimension("label counts do not match dimensions".into()));
        }
        self.state_labels = states;
        self.power_labels = powers;
        Ok(self)
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn power_dim(&self) -> usize {
        self.b_p.ncols()
    }

    pub fn dist_dim(&self) -> usize {
        self.b_d.ncols()
    }

    /// Every violated structural invariant, with indices.
    pub fn validate(&self) -> ValidationReport {
        let mut violations = Vec::new();
        for (what, finite) in [
            ("A", self.a.iter().all(|v| v.is_finite())),
            ("B_p", self.b_p.iter().all(|v| v.is_finite())),
            ("B_d", self.b_d.iter().all(|v| v.is_finite())),
            ("power bounds", self.p_min.iter().chain(self.p_max.iter()).all(|v| v.is_finite())),
            (
                "state bounds",
                self.x_min.iter().chain(self.x_max.iter()).chain(self.x0.iter()).all(|v| v.is_finite()),
            ),
        ] {
            if !finite {
                violations.push(Violation::NonFinite { what: what.into() });
            }
        }
        let n = self.state_dim();
        for i in 0..n {
            for j in 0..n {
                let v = self.a[(i, j)];
                if i == j && v > 0.0 {
                    violations.push(Violation::PositiveDiagonal { i, value: v });
                } else if i != j && v < 0.0 {
                    violations.push(Violation::NegativeOffDiagonal { i, j, value: v });
                }
            }
        }
        for i in 0..n {
            for j in 0..self.power_dim() {
                let v = self.b_p[(i, j)];
                if v < 0.0 {
                    violations.push(Violation::NegativeInputGain { i, j, value: v });
                }
            }
        }
        for j in 0..self.power_dim() {
            let (lo, hi) = (self.p_min[j], self.p_max[j]);
            if !(0.0 <= lo && lo <= hi) {
                violations.push(Violation::PowerBounds { j, p_min: lo, p_max: hi });
            }
        }
        for i in 0..n {
            let (lo, hi) = (self.x_min[i], self.x_max[i]);
            if lo > hi {
                violations.push(Violation::StateBounds { i, x_min: lo, x_max: hi });
            } else if !(lo <= self.x0[i] && self.x0[i] <= hi) {
                violations.push(Violation::InitialState { i, x0: self.x0[i] });
            }
        }
        ValidationReport { violations }
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let doc: SystemDocument = serde_json::from_str(&text).map_err(|e| Error::Schema {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })?;
        doc.into_system().map_err(|e| Error::Schema { path: path.to_path_buf(), msg: e.to_string() })
    }

    pub fn to_document(&self) -> SystemDocument {
        SystemDocument::from_system(self)
    }
}

/// Declared units of a model file. Temperatures may be kelvin or celsius as
/// long as one file is consistent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Units {
    pub time: String,
    pub power: String,
    pub energy: String,
    pub state: String,
}

impl Default for Units {
    fn default() -> Self {
        Self { time: "s".into(), power: "W".into(), energy: "J".into(), state: "degC".into() }
    }
}

/// JSON form of [`LinearLossySystem`]; matrices are lists of rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemDocument {
    pub units: Units,
    pub a: Vec<Vec<f64>>,
    pub b_p: Vec<Vec<f64>>,
    #[serde(default)]
    pub b_d: Vec<Vec<f64>>,
    pub p_min: Vec<f64>,
    pub p_max: Vec<f64>,
    pub x_min: Vec<f64>,
    pub x_max: Vec<f64>,
    pub x0: Vec<f64>,
    #[serde(default)]
    pub state_labels: Vec<String>,
    #[serde(default)]
    pub power_labels: Vec<String>,
}

fn rows_to_matrix(name: &str, rows: &[Vec<f64>], nrows: usize) -> Result<DMatrix<f64>> {
    if rows.len() != nrows {
        return Err(Error::Dimension(format!("{name} has {} rows, expected {nrows}", rows.len())));
    }
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Dimension(format!("{name} rows have different lengths")));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

impl SystemDocument {
    pub fn into_system(self) -> Result<LinearLossySystem> {
        let n = self.a.len();
        let a = rows_to_matrix("a", &self.a, n)?;
        let b_p = rows_to_matrix("b_p", &self.b_p, n)?;
        let b_d = if self.b_d.is_empty() {
            DMatrix::zeros(n, 0)
        } else {
            rows_to_matrix("b_d", &self.b_d, n)?
        };
        let mut sys = LinearLossySystem::new(
            a,
            b_p,
            b_d,
            DVector::from_vec(self.p_min),
            DVector::from_vec(self.p_max),
            DVector::from_vec(self.x_min),
            DVector::from_vec(self.x_max),
            DVector::from_vec(self.x0),
        )?;
        if !self.state_labels.is_empty() || !self.power_labels.is_empty() {
            let states = if self.state_labels.is_empty() { sys.state_labels.clone() } else { self.state_labels };
            let powers = if self.power_labels.is_empty() { sys.power_labels.clone() } else { self.power_labels };
            sys = sys.with_labels(states, powers)?;
        }
        Ok(sys)
    }

    pub fn from_system(sys: &LinearLossySystem) -> Self {
        Self {
            units: Units::default(),
            a: matrix_to_rows(&sys.a),
            b_p: matrix_to_rows(&sys.b_p),
            b_d: matrix_to_rows(&sys.b_d),
            p_min: sys.p_min.iter().copied().collect(),
            p_max: sys.p_max.iter().copied().collect(),
            x_min: sys.x_min.iter().copied().collect(),
            x_max: sys.x_max.iter().copied().collect(),
            x0: sys.x0.iter().copied().collect(),
            state_labels: sys.state_labels.clone(),
            power_labels: sys.power_labels.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// `Ad = I + dt A`, `Bd = dt B`.
    ForwardEuler,
    /// `Ad = exp(A dt)`, `Bd = ∫_0^dt exp(A s) ds B`.
    #[default]
    ExactZoh,
}

impl std::str::FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "forward_euler" | "euler" => Ok(Scheme::ForwardEuler),
            "exact_zoh" | "zoh" => Ok(Scheme::ExactZoh),
            other => Err(Error::InvalidArgument(format!("unknown scheme {other:?}"))),
        }
    }
}

/// Time-stepped counterpart of a [`LinearLossySystem`] on a uniform grid of
/// `steps` intervals.
#[derive(Debug, Clone)]
pub struct DiscreteSystem {
    pub source: LinearLossySystem,
    pub dt: f64,
    pub steps: usize,
    pub scheme: Scheme,
    pub ad: DMatrix<f64>,
    pub bpd: DMatrix<f64>,
    pub bdd: DMatrix<f64>,
}

impl DiscreteSystem {
    pub fn state_dim(&self) -> usize {
        self.source.state_dim()
    }

    pub fn power_dim(&self) -> usize {
        self.source.power_dim()
    }

    /// Same model and grid with a different horizon.
    pub fn with_steps(&self, steps: usize) -> Self {
        Self { steps, ..self.clone() }
    }
}

pub fn discretize(sys: &LinearLossySystem, dt: f64, steps: usize, scheme: Scheme) -> Result<DiscreteSystem> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidArgument(format!("dt must be positive, got {dt}")));
    }
    let n = sys.state_dim();
    let (ad, bpd, bdd) = match scheme {
        Scheme::ForwardEuler => {
            let worst = (0..n).map(|i| sys.a[(i, i)].abs()).fold(0.0, f64::max);
            if worst > 0.0 && dt * worst >= 1.0 {
                return Err(Error::Stability { dt, max_dt: 1.0 / worst });
            }
            (DMatrix::identity(n, n) + &sys.a * dt, &sys.b_p * dt, &sys.b_d * dt)
        }
        Scheme::ExactZoh => {
            let (ad, integral) = zoh_integral(&sys.a, dt)?;
            let bpd = &integral * &sys.b_p;
            let bdd = &integral * &sys.b_d;
            (ad, bpd, bdd)
        }
    };
    Ok(DiscreteSystem { source: sys.clone(), dt, steps, scheme, ad, bpd, bdd })
}

/// Piecewise-constant signal: row `l` holds the value on `[l dt, (l+1) dt)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub dt: f64,
    pub values: DMatrix<f64>,
}

impl Trajectory {
    pub fn new(dt: f64, values: DMatrix<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("trajectory has non-finite entries".into()));
        }
        Ok(Self { dt, values })
    }

    pub fn constant(dt: f64, steps: usize, value: &[f64]) -> Self {
        Self { dt, values: DMatrix::from_fn(steps, value.len(), |_, j| value[j]) }
    }

    pub fn zeros(dt: f64, steps: usize, dim: usize) -> Self {
        Self { dt, values: DMatrix::zeros(steps, dim) }
    }

    /// Single-channel trajectory from a series.
    pub fn from_series(dt: f64, series: &[f64]) -> Self {
        Self { dt, values: DMatrix::from_column_slice(series.len(), 1, series) }
    }

    pub fn steps(&self) -> usize {
        self.values.nrows()
    }

    pub fn dim(&self) -> usize {
        self.values.ncols()
    }

    /// First `steps` rows.
    pub fn prefix(&self, steps: usize) -> Self {
        Self { dt: self.dt, values: self.values.rows(0, steps.min(self.steps())).into_owned() }
    }

    /// Cumulative energy of channel `j` after each step, starting with 0.
    pub fn cumulative(&self, j: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.steps() + 1);
        let mut acc = 0.0;
        out.push(acc);
        for l in 0..self.steps() {
            acc += self.values[(l, j)] * self.dt;
            out.push(acc);
        }
        out
    }

    /// Cumulative energy summed over channels.
    pub fn cumulative_total(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.steps() + 1);
        let mut acc = 0.0;
        out.push(acc);
        for l in 0..self.steps() {
            acc += self.values.row(l).sum() * self.dt;
            out.push(acc);
        }
        out
    }

    pub fn within_bounds(&self, lo: &DVector<f64>, hi: &DVector<f64>, tol: f64) -> bool {
        self.values
            .row_iter()
            .all(|r| r.iter().enumerate().all(|(j, &v)| v >= lo[j] - tol && v <= hi[j] + tol))
    }
}

/// States on the grid points `0..=K`; row 0 is the initial state.
#[derive(Debug, Clone, PartialEq)]
pub struct StateTrajectory {
    pub dt: f64,
    pub values: DMatrix<f64>,
}

impl StateTrajectory {
    pub fn final_state(&self) -> DVector<f64> {
        self.values.row(self.values.nrows() - 1).transpose()
    }
}

/// `x_{k+1} = Ad x_k + Bpd p_k + Bdd d_k` for every step of `p`.
pub fn simulate(dsys: &DiscreteSystem, p: &Trajectory, d: &Trajectory) -> Result<StateTrajectory> {
    let sys = &dsys.source;
    if p.dim() != sys.power_dim() {
        return Err(Error::Dimension(format!("power trajectory has {} channels, expected {}", p.dim(), sys.power_dim())));
    }
    if d.dim() != sys.dist_dim() {
        return Err(Error::Dimension(format!(
            "disturbance trajectory has {} channels, expected {}",
            d.dim(),
            sys.dist_dim()
        )));
    }
    let same_dt = |t: &Trajectory| (t.dt - dsys.dt).abs() <= 1e-9 * dsys.dt;
    if !same_dt(p) || (sys.dist_dim() > 0 && !same_dt(d)) {
        return Err(Error::Dimension(format!("grid mismatch: trajectories must use dt = {}", dsys.dt)));
    }
    if sys.dist_dim() > 0 && d.steps() < p.steps() {
        return Err(Error::Dimension(format!(
            "grid mismatch: disturbance covers {} steps, power {}",
            d.steps(),
            p.steps()
        )));
    }
    let k = p.steps();
    let n = sys.state_dim();
    let mut values = DMatrix::zeros(k + 1, n);
    values.set_row(0, &sys.x0.transpose());
    let mut x = sys.x0.clone();
    for l in 0..k {
        let mut next = &dsys.ad * &x + &dsys.bpd * p.values.row(l).transpose();
        if sys.dist_dim() > 0 {
            next += &dsys.bdd * d.values.row(l).transpose();
        }
        x = next;
        values.set_row(l + 1, &x.transpose());
    }
    Ok(StateTrajectory { dt: dsys.dt, values })
}

/// Per-trajectory feasibility report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectoryVerdict {
    pub feasible: bool,
    /// `max_k (x_k - x_max)` per state, clipped at zero.
    pub worst_over: Vec<f64>,
    /// `max_k (x_min - x_k)` per state, clipped at zero.
    pub worst_under: Vec<f64>,
    pub first_violation_step: Option<usize>,
}

impl TrajectoryVerdict {
    pub fn max_over(&self) -> f64 {
        self.worst_over.iter().copied().fold(0.0, f64::max)
    }

    pub fn max_under(&self) -> f64 {
        self.worst_under.iter().copied().fold(0.0, f64::max)
    }
}

/// Checks `x_min - tol <= x_k <= x_max + tol` at every grid point. Deviations
/// are reported unclipped by `tol`; only the verdict uses it.
pub fn check_state_feasibility(xs: &StateTrajectory, sys: &LinearLossySystem, tol: f64) -> Result<TrajectoryVerdict> {
    let n = sys.state_dim();
    if xs.values.ncols() != n {
        return Err(Error::Dimension(format!("state trajectory has {} columns, expected {n}", xs.values.ncols())));
    }
    let mut worst_over = vec![0.0f64; n];
    let mut worst_under = vec![0.0f64; n];
    let mut first = None;
    for (k, row) in xs.values.row_iter().enumerate() {
        for i in 0..n {
            let over = row[i] - sys.x_max[i];
            let under = sys.x_min[i] - row[i];
            worst_over[i] = worst_over[i].max(over);
            worst_under[i] = worst_under[i].max(under);
            // a deviation of exactly `tol` passes despite rounding in the subtraction
            let limit = tol + 8.0 * f64::EPSILON * sys.x_max[i].abs().max(sys.x_min[i].abs()).max(1.0);
            if first.is_none() && (over > limit || under > limit) {
                first = Some(k);
            }
        }
    }
    Ok(TrajectoryVerdict { feasible: first.is_none(), worst_over, worst_under, first_violation_step: first })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn swiss_house() -> LinearLossySystem {
        // C = 20 MJ/K, 1/R = 50 W/K, ambient enters through B_d.
        LinearLossySystem::scalar(-2.5e-6, 5e-8, 2.5e-6, 0.0, 1000.0, 22.0, 24.0, 23.0).unwrap()
    }

    #[test]
    fn swiss_house_is_valid() {
        assert!(swiss_house().validate().is_valid());
    }

    #[test]
    fn reports_positive_diagonal() {
        let sys = LinearLossySystem::scalar(1.0, 1.0, 0.0, 0.0, 1.0, 0.0, 1.0, 0.5).unwrap();
        let report = sys.validate();
        assert_eq!(report.violations, vec![Violation::PositiveDiagonal { i: 0, value: 1.0 }]);
        assert!(report.to_string().contains("diagonal positive at (0,0)"));
    }

    #[test]
    fn reports_negative_off_diagonal() {
        let sys = LinearLossySystem::new(
            DMatrix::from_row_slice(2, 2, &[-1.0, -0.1, 0.2, -1.0]),
            DMatrix::identity(2, 2),
            DMatrix::zeros(2, 0),
            DVector::zeros(2),
            DVector::from_element(2, 1.0),
            DVector::zeros(2),
            DVector::from_element(2, 1.0),
            DVector::from_element(2, 0.5),
        )
        .unwrap();
        let report = sys.validate();
        assert_eq!(report.violations.len(), 1);
        assert!(report.to_string().contains("off-diagonal negative at (0,1)"));
    }

    #[test]
    fn dimension_mismatch_is_structural() {
        let r = LinearLossySystem::new(
            DMatrix::zeros(2, 2),
            DMatrix::zeros(3, 1),
            DMatrix::zeros(2, 0),
            DVector::zeros(1),
            DVector::zeros(1),
            DVector::zeros(2),
            DVector::zeros(2),
            DVector::zeros(2),
        );
        assert!(matches!(r, Err(Error::Dimension(_))));
    }

    #[test]
    fn euler_swiss_house() {
        let d = discretize(&swiss_house(), 900.0, 96, Scheme::ForwardEuler).unwrap();
        assert!((d.ad[(0, 0)] - 0.99775).abs() < 1e-15);
        assert!((d.bpd[(0, 0)] - 4.5e-5).abs() < 1e-18);
    }

    #[test]
    fn zoh_swiss_house() {
        let d = discretize(&swiss_house(), 900.0, 96, Scheme::ExactZoh).unwrap();
        assert!((d.ad[(0, 0)] - 0.9977525).abs() < 1e-7);
    }

    #[test]
    fn lossless_limit_both_schemes() {
        let sys = LinearLossySystem::scalar(0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 10.0, 0.0).unwrap();
        for scheme in [Scheme::ForwardEuler, Scheme::ExactZoh] {
            let d = discretize(&sys, 60.0, 10, scheme).unwrap();
            assert!((d.ad[(0, 0)] - 1.0).abs() < 1e-15);
            assert!((d.bpd[(0, 0)] - 60.0).abs() < 1e-12);
        }
    }

    #[test]
    fn euler_stability_guard() {
        let sys = LinearLossySystem::scalar(-1e-3, 1.0, 0.0, 0.0, 1.0, 0.0, 1.0, 0.0).unwrap();
        match discretize(&sys, 1000.0, 1, Scheme::ForwardEuler) {
            Err(Error::Stability { max_dt, .. }) => assert!((max_dt - 1000.0).abs() < 1e-9),
            other => panic!("expected stability error, got {other:?}"),
        }
        assert!(discretize(&sys, 999.0, 1, Scheme::ForwardEuler).is_ok());
    }

    #[test]
    fn free_cooling_crosses_lower_bound() {
        // T(t) = 10 + 13 exp(-t / 4e5) crosses 22 at t = 4e5 ln(13/12) ~ 32,017 s
        let sys = swiss_house();
        let d = discretize(&sys, 900.0, 96, Scheme::ExactZoh).unwrap();
        let xs = simulate(&d, &Trajectory::zeros(900.0, 96, 1), &Trajectory::constant(900.0, 96, &[10.0])).unwrap();
        let crossing = 4e5 * (13.0f64 / 12.0).ln();
        let step = (0..=96).find(|&k| xs.values[(k, 0)] < 22.0).unwrap();
        assert!((step as f64 * 900.0 - crossing).abs() <= 900.0);
        for k in 0..=96 {
            let t = k as f64 * 900.0;
            assert!((xs.values[(k, 0)] - (10.0 + 13.0 * (-t / 4e5).exp())).abs() < 1e-9);
        }
    }

    #[test]
    fn steady_state_hold() {
        let mut sys = swiss_house();
        sys.x0[0] = 22.0;
        let d = discretize(&sys, 900.0, 96, Scheme::ExactZoh).unwrap();
        let xs = simulate(&d, &Trajectory::constant(900.0, 96, &[600.0]), &Trajectory::constant(900.0, 96, &[10.0])).unwrap();
        assert!(xs.values.iter().all(|&t| (t - 22.0).abs() < 1e-9));
    }

    #[test]
    fn pure_integrator_grows_linearly() {
        let sys = LinearLossySystem::scalar(0.0, 1.0, 0.0, 0.0, 5.0, 0.0, 1e6, 0.0).unwrap();
        let d = discretize(&sys, 10.0, 5, Scheme::ExactZoh).unwrap();
        let xs = simulate(&d, &Trajectory::constant(10.0, 5, &[3.0]), &Trajectory::zeros(10.0, 5, 1)).unwrap();
        for k in 0..=5 {
            assert!((xs.values[(k, 0)] - 30.0 * k as f64).abs() < 1e-9);
        }
    }

    #[test]
    fn simulate_rejects_grid_mismatch() {
        let d = discretize(&swiss_house(), 900.0, 4, Scheme::ExactZoh).unwrap();
        let p = Trajectory::zeros(900.0, 4, 1);
        assert!(simulate(&d, &p, &Trajectory::constant(600.0, 4, &[10.0])).is_err());
        assert!(simulate(&d, &p, &Trajectory::constant(900.0, 3, &[10.0])).is_err());
    }

    #[test]
    fn feasibility_boundaries() {
        let sys = swiss_house();
        let at_min = StateTrajectory { dt: 900.0, values: DMatrix::from_element(5, 1, 22.0) };
        assert!(check_state_feasibility(&at_min, &sys, DEFAULT_STATE_TOL).unwrap().feasible);

        let tol = 1e-3;
        let mut vals = DMatrix::from_element(3, 1, 23.0);
        vals[(2, 0)] = 24.0 + tol;
        let v = check_state_feasibility(&StateTrajectory { dt: 900.0, values: vals.clone() }, &sys, tol).unwrap();
        assert!(v.feasible);
        vals[(2, 0)] = 24.0 + 2.0 * tol;
        let v = check_state_feasibility(&StateTrajectory { dt: 900.0, values: vals }, &sys, tol).unwrap();
        assert!(!v.feasible);
        assert_eq!(v.first_violation_step, Some(2));
        assert!((v.worst_over[0] - 2.0 * tol).abs() < 1e-12);
    }

    #[test]
    fn json_round_trip() {
        let sys = swiss_house();
        let text = serde_json::to_string(&sys.to_document()).unwrap();
        let back: SystemDocument = serde_json::from_str(&text).unwrap();
        assert_eq!(back.into_system().unwrap(), sys);
    }
}
