//! Linear programs and concave log-gap programs over linear constraints.
//!
//! Both shapes are handed to the Clarabel interior-point solver. Problems are
//! stated as maximizations; every constraint row is normalized by its largest
//! coefficient before solving and the multipliers are mapped back afterwards.

use std::time::Instant;

use clarabel::algebra::CscMatrix;
use clarabel::solver::{DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus, SupportedConeT};
use serde::Serialize;

/// Sparse affine row `Σ coef·z[idx]`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Row {
    pub terms: Vec<(usize, f64)>,
}

impl Row {
    pub fn new(terms: Vec<(usize, f64)>) -> Self {
        Self { terms }
    }

    pub fn eval(&self, z: &[f64]) -> f64 {
        self.terms.iter().map(|&(j, c)| c * z[j]).sum()
    }

    fn max_abs(&self) -> f64 {
        self.terms.iter().fold(0.0, |m, &(_, c)| m.max(c.abs()))
    }
}

/// `maximize c·z` subject to `G z ≤ h`, `F z = g`, `lo ≤ z ≤ hi`.
#[derive(Debug, Clone, Default)]
pub struct LinearProgram {
    pub objective: Vec<f64>,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub ineq: Vec<(Row, f64)>,
    pub eq: Vec<(Row, f64)>,
}

impl LinearProgram {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    /// Adds a variable with bounds (infinite allowed) and returns its index.
    pub fn add_var(&mut self, lo: f64, hi: f64) -> usize {
        self.objective.push(0.0);
        self.lo.push(lo);
        self.hi.push(hi);
        self.objective.len() - 1
    }

    pub fn add_vars(&mut self, count: usize, lo: f64, hi: f64) -> Vec<usize> {
        (0..count).map(|_| self.add_var(lo, hi)).collect()
    }

    pub fn set_objective(&mut self, var: usize, coef: f64) {
        self.objective[var] = coef;
    }

    /// `row ≤ rhs`; returns the row index among inequalities.
    pub fn add_le(&mut self, terms: Vec<(usize, f64)>, rhs: f64) -> usize {
        self.ineq.push((Row::new(terms), rhs));
        self.ineq.len() - 1
    }

    /// `row ≥ rhs`, stored as `-row ≤ -rhs`.
    pub fn add_ge(&mut self, terms: Vec<(usize, f64)>, rhs: f64) -> usize {
        let neg = terms.into_iter().map(|(j, c)| (j, -c)).collect();
        self.add_le(neg, -rhs)
    }

    pub fn add_eq(&mut self, terms: Vec<(usize, f64)>, rhs: f64) -> usize {
        self.eq.push((Row::new(terms), rhs));
        self.eq.len() - 1
    }

    fn check(&self) -> Result<(), String> {
        let n = self.num_vars();
        if self.lo.len() != n || self.hi.len() != n {
            return Err("bound vectors do not match the variable count".into());
        }
        for j in 0..n {
            if !self.objective[j].is_finite() {
                return Err(format!("objective coefficient {j} is not finite"));
            }
            if self.lo[j].is_nan() || self.hi[j].is_nan() || self.lo[j] > self.hi[j] {
                return Err(format!("variable {j} has bounds [{}, {}]", self.lo[j], self.hi[j]));
            }
        }
        for (row, rhs) in self.ineq.iter().chain(&self.eq) {
            if !rhs.is_finite() {
                return Err("constraint right-hand side is not finite".into());
            }
            for &(j, c) in &row.terms {
                if j >= n || !c.is_finite() {
                    return Err(format!("constraint term ({j}, {c}) is invalid"));
                }
            }
        }
        Ok(())
    }

    /// Largest violation of any constraint or bound at `z`, each row measured
    /// after normalization by its largest coefficient.
    pub fn max_residual(&self, z: &[f64]) -> f64 {
        let mut worst = 0.0f64;
        for (row, rhs) in &self.ineq {
            let s = row.max_abs().max(f64::MIN_POSITIVE);
            worst = worst.max((row.eval(z) - rhs) / s);
        }
        for (row, rhs) in &self.eq {
            let s = row.max_abs().max(f64::MIN_POSITIVE);
            worst = worst.max((row.eval(z) - rhs).abs() / s);
        }
        for j in 0..self.num_vars() {
            worst = worst.max(self.lo[j] - z[j]).max(z[j] - self.hi[j]);
        }
        worst
    }
}

/// Affine gap `a·z + offset` whose logarithm enters the objective.
#[derive(Debug, Clone, PartialEq)]
pub struct GapTerm {
    pub row: Row,
    pub offset: f64,
}

impl GapTerm {
    pub fn new(terms: Vec<(usize, f64)>, offset: f64) -> Self {
        Self { row: Row::new(terms), offset }
    }

    pub fn eval(&self, z: &[f64]) -> f64 {
        self.row.eval(z) + self.offset
    }
}

/// `maximize Σ_s ln(gap_s(z)) + c·z` over the constraints of `lp`.
#[derive(Debug, Clone, Default)]
pub struct ConcaveLogProgram {
    pub lp: LinearProgram,
    pub gaps: Vec<GapTerm>,
}

impl ConcaveLogProgram {
    pub fn new(lp: LinearProgram) -> Self {
        Self { lp, gaps: Vec::new() }
    }

    pub fn add_gap(&mut self, terms: Vec<(usize, f64)>, offset: f64) -> usize {
        self.gaps.push(GapTerm::new(terms, offset));
        self.gaps.len() - 1
    }

    pub fn log_objective(&self, z: &[f64]) -> f64 {
        self.gaps.iter().map(|g| g.eval(z).ln()).sum::<f64>()
            + self.lp.objective.iter().zip(z).map(|(c, v)| c * v).sum::<f64>()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    Unbounded,
    NumericFailure,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct SolveStats {
    pub iterations: u32,
    pub solve_time_s: f64,
    pub primal_residual: f64,
    pub dual_objective: f64,
    pub solver_status: String,
}

/// Lagrange multipliers in the sign convention of a maximization:
/// `c = Gᵀ y + Fᵀ ν - λ_lo + λ_hi` with `y, λ ≥ 0`.
#[derive(Debug, Clone, Default)]
pub struct Duals {
    pub ineq: Vec<f64>,
    pub eq: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct SolveResult {
    pub status: SolveStatus,
    pub z: Vec<f64>,
    pub objective: f64,
    pub duals: Duals,
    pub stats: SolveStats,
    /// For an infeasible log program: the gap term that cannot be made positive.
    pub infeasible_term: Option<usize>,
}

impl SolveResult {
    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal
    }

    fn failed(status: SolveStatus, msg: String) -> Self {
        Self {
            status,
            z: Vec::new(),
            objective: f64::NAN,
            duals: Duals::default(),
            stats: SolveStats { solver_status: msg, ..Default::default() },
            infeasible_term: None,
        }
    }
}

/// Accepted scaled feasibility residual for an optimal point.
pub const FEASIBILITY_TOL: f64 = 1e-7;

struct Assembled {
    rows_i: Vec<usize>,
    rows_j: Vec<usize>,
    rows_v: Vec<f64>,
    b: Vec<f64>,
    cones: Vec<SupportedConeT<f64>>,
    /// Per-row scale divisor, in cone order.
    scale: Vec<f64>,
    n_eq: usize,
    n_ineq: usize,
    lower_rows: Vec<(usize, usize)>,
    upper_rows: Vec<(usize, usize)>,
    fixed_rows: Vec<(usize, usize)>,
}

impl Assembled {
    fn push_row(&mut self, terms: &[(usize, f64)], rhs: f64, normalize: bool) -> usize {
        let r = self.b.len();
        let s = if normalize {
            terms.iter().fold(0.0f64, |m, &(_, c)| m.max(c.abs())).max(f64::MIN_POSITIVE)
        } else {
            1.0
        };
        for &(j, c) in terms {
            if c != 0.0 {
                self.rows_i.push(r);
                self.rows_j.push(j);
                self.rows_v.push(c / s);
            }
        }
        self.b.push(rhs / s);
        self.scale.push(s);
        r
    }
}

fn assemble(lp: &LinearProgram) -> Assembled {
    let mut asm = Assembled {
        rows_i: Vec::new(),
        rows_j: Vec::new(),
        rows_v: Vec::new(),
        b: Vec::new(),
        cones: Vec::new(),
        scale: Vec::new(),
        n_eq: 0,
        n_ineq: 0,
        lower_rows: Vec::new(),
        upper_rows: Vec::new(),
        fixed_rows: Vec::new(),
    };
    for (row, rhs) in &lp.eq {
        asm.push_row(&row.terms, *rhs, true);
    }
    for j in 0..lp.num_vars() {
        if lp.lo[j] == lp.hi[j] {
            let r = asm.push_row(&[(j, 1.0)], lp.lo[j], false);
            asm.fixed_rows.push((j, r));
        }
    }
    asm.n_eq = asm.b.len();
    if asm.n_eq > 0 {
        asm.cones.push(SupportedConeT::ZeroConeT(asm.n_eq));
    }
    for (row, rhs) in &lp.ineq {
        asm.push_row(&row.terms, *rhs, true);
    }
    for j in 0..lp.num_vars() {
        if lp.lo[j] == lp.hi[j] {
            continue;
        }
        if lp.lo[j].is_finite() {
            let r = asm.push_row(&[(j, -1.0)], -lp.lo[j], false);
            asm.lower_rows.push((j, r));
        }
        if lp.hi[j].is_finite() {
            let r = asm.push_row(&[(j, 1.0)], lp.hi[j], false);
            asm.upper_rows.push((j, r));
        }
    }
    asm.n_ineq = asm.b.len() - asm.n_eq;
    if asm.n_ineq > 0 {
        asm.cones.push(SupportedConeT::NonnegativeConeT(asm.n_ineq));
    }
    asm
}

fn run(asm: Assembled, n: usize, q: Vec<f64>, lp: &LinearProgram) -> (SolveStatus, Vec<f64>, Duals, SolveStats) {
    let m = asm.b.len();
    let a = CscMatrix::new_from_triplets(m, n, asm.rows_i, asm.rows_j, asm.rows_v);
    let p = CscMatrix::zeros((n, n));
    let settings = DefaultSettingsBuilder::default()
        .verbose(false)
        .max_iter(400)
        .tol_gap_abs(1e-10)
        .tol_gap_rel(1e-10)
        .tol_feas(1e-10)
        .max_threads(1)
        .build()
        .expect("static solver settings are valid");
    let start = Instant::now();
    let mut solver = match DefaultSolver::new(&p, &q, &a, &asm.b, &asm.cones, settings) {
        Ok(s) => s,
        Err(e) => {
            let stats = SolveStats { solver_status: format!("setup error: {e}"), ..Default::default() };
            return (SolveStatus::NumericFailure, Vec::new(), Duals::default(), stats);
        }
    };
    solver.solve();
    let sol = &solver.solution;
    let status = match sol.status {
        SolverStatus::Solved | SolverStatus::AlmostSolved => SolveStatus::Optimal,
        SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => SolveStatus::Infeasible,
        SolverStatus::DualInfeasible | SolverStatus::AlmostDualInfeasible => SolveStatus::Unbounded,
        _ => SolveStatus::NumericFailure,
    };
    let z = sol.x.clone();
    let unscale = |r: usize| sol.z[r] / asm.scale[r];
    // Clarabel minimizes -c·z; its multipliers carry over unchanged in sign.
    let mut duals = Duals {
        ineq: (0..lp.ineq.len()).map(|r| unscale(asm.n_eq + r)).collect(),
        eq: (0..lp.eq.len()).map(&unscale).collect(),
        lower: vec![0.0; n],
        upper: vec![0.0; n],
    };
    for &(j, r) in &asm.lower_rows {
        duals.lower[j] = sol.z[r];
    }
    for &(j, r) in &asm.upper_rows {
        duals.upper[j] = sol.z[r];
    }
    for &(j, r) in &asm.fixed_rows {
        let v = sol.z[r];
        if v >= 0.0 {
            duals.upper[j] = v;
        } else {
            duals.lower[j] = -v;
        }
    }
    let stats = SolveStats {
        iterations: sol.iterations,
        solve_time_s: start.elapsed().as_secs_f64(),
        primal_residual: if z.len() == n { lp.max_residual(&z) } else { f64::NAN },
        dual_objective: -sol.obj_val_dual,
        solver_status: format!("{:?}", sol.status),
    };
    (status, z, duals, stats)
}

/// Distance, relative to the bound, under which an interior-point value is
/// moved onto its variable bound.
const BOUND_SNAP: f64 = 1e-9;

/// Moves values that sit on a bound up to solver tolerance exactly onto it.
fn polish_bounds(lp: &LinearProgram, z: &mut [f64]) {
    for (j, v) in z.iter_mut().enumerate() {
        let (lo, hi) = (lp.lo[j], lp.hi[j]);
        if lo.is_finite() && (*v - lo).abs() <= BOUND_SNAP * lo.abs().max(1.0) {
            *v = lo;
        } else if hi.is_finite() && (*v - hi).abs() <= BOUND_SNAP * hi.abs().max(1.0) {
            *v = hi;
        }
    }
}

/// Solves `lp`. Infeasible and unbounded problems come back as statuses.
pub fn solve_lp(lp: &LinearProgram) -> SolveResult {
    if let Err(msg) = lp.check() {
        return SolveResult::failed(SolveStatus::NumericFailure, msg);
    }
    let n = lp.num_vars();
    let asm = assemble(lp);
    let q: Vec<f64> = lp.objective.iter().map(|c| -c).collect();
    let (mut status, mut z, duals, mut stats) = run(asm, n, q, lp);
    if status == SolveStatus::Optimal && z.len() == n {
        polish_bounds(lp, &mut z);
        stats.primal_residual = lp.max_residual(&z);
    }
    if status == SolveStatus::Optimal && !(stats.primal_residual <= FEASIBILITY_TOL) {
        status = SolveStatus::NumericFailure;
    }
    let objective = if status == SolveStatus::Optimal {
        lp.objective.iter().zip(&z).map(|(c, v)| c * v).sum()
    } else {
        f64::NAN
    };
    SolveResult { status, z, objective, duals, stats, infeasible_term: None }
}

/// Maximizes the smallest gap over the constraints of `clp`: the phase-1
/// problem of [`solve_log_box`]. Returns the result and the optimal margin.
pub fn max_min_gap(clp: &ConcaveLogProgram) -> (SolveResult, f64) {
    let mut lp = clp.lp.clone();
    lp.objective.iter_mut().for_each(|c| *c = 0.0);
    let t = lp.add_var(f64::NEG_INFINITY, f64::INFINITY);
    lp.set_objective(t, 1.0);
    // keep the problem bounded when every gap can grow without limit
    lp.hi[t] = 1.0;
    for gap in &clp.gaps {
        let mut terms: Vec<(usize, f64)> = gap.row.terms.iter().map(|&(j, c)| (j, -c)).collect();
        terms.push((t, 1.0));
        lp.add_le(terms, gap.offset);
    }
    let res = solve_lp(&lp);
    let margin = if res.is_optimal() { res.z[t] } else { f64::NAN };
    (res, margin)
}

/// Solves the concave log program. Every gap must be strictly positive at
/// some feasible point; otherwise the result is `Infeasible` and names the
/// smallest gap at the max-min point.
pub fn solve_log_box(clp: &ConcaveLogProgram) -> SolveResult {
    let lp = &clp.lp;
    if let Err(msg) = lp.check() {
        return SolveResult::failed(SolveStatus::NumericFailure, msg);
    }
    if clp.gaps.is_empty() {
        return solve_lp(lp);
    }
    let n0 = lp.num_vars();
    let ng = clp.gaps.len();
    let n = n0 + ng;
    let mut asm = assemble(lp);
    for (s, gap) in clp.gaps.iter().enumerate() {
        let t = n0 + s;
        let sg = gap.row.max_abs().max(gap.offset.abs()).max(f64::MIN_POSITIVE);
        // (t, 1, gap/sg) in the exponential cone: t ≤ ln(gap) - ln(sg)
        asm.push_row(&[(t, -1.0)], 0.0, false);
        asm.b.push(1.0);
        asm.scale.push(1.0);
        let terms: Vec<(usize, f64)> = gap.row.terms.iter().map(|&(j, c)| (j, -c / sg)).collect();
        asm.push_row(&terms, gap.offset / sg, false);
        asm.cones.push(SupportedConeT::ExponentialConeT());
    }
    let mut q: Vec<f64> = lp.objective.iter().map(|c| -c).collect();
    q.extend(std::iter::repeat_n(-1.0, ng));
    let mut ext = lp.clone();
    ext.objective.extend(std::iter::repeat_n(0.0, ng));
    ext.lo.extend(std::iter::repeat_n(f64::NEG_INFINITY, ng));
    ext.hi.extend(std::iter::repeat_n(f64::INFINITY, ng));
    let (mut status, mut z, mut duals, stats) = run(asm, n, q, &ext);
    if status == SolveStatus::Optimal {
        z.truncate(n0);
        let gaps_ok = clp.gaps.iter().all(|g| g.eval(&z) > 0.0);
        if !(lp.max_residual(&z) <= FEASIBILITY_TOL) || !gaps_ok {
            status = SolveStatus::NumericFailure;
        }
    }
    duals.lower.truncate(n0);
    duals.upper.truncate(n0);
    let mut infeasible_term = None;
    if status == SolveStatus::Infeasible || status == SolveStatus::NumericFailure {
        let (phase1, margin) = max_min_gap(clp);
        if phase1.status == SolveStatus::Infeasible || (phase1.is_optimal() && margin <= 0.0) {
            status = SolveStatus::Infeasible;
            if phase1.is_optimal() {
                infeasible_term = clp
                    .gaps
                    .iter()
                    .enumerate()
                    .min_by(|a, b| a.1.eval(&phase1.z).total_cmp(&b.1.eval(&phase1.z)))
                    .map(|(s, _)| s);
            }
        }
    }
    let objective = if status == SolveStatus::Optimal { clp.log_objective(&z) } else { f64::NAN };
    SolveResult { status, z, objective, duals, stats, infeasible_term }
}
