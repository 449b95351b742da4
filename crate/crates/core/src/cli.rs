//! Batch front end: loads a run configuration, computes and verifies
//! envelopes, and writes plot-ready CSV and JSON.
//!
//! Exit codes: 0 success (infeasible lead times are results, not failures),
//! 2 configuration or schema error, 3 model invariant violated, 4 solver
//! failure, 5 a trajectory-independent envelope admitted a comfort violation.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::envelope::{EnvelopeKind, EnvelopeSeries};
use crate::error::{Error, Result};
use crate::model::{check_state_feasibility, discretize, simulate, DiscreteSystem, LinearLossySystem, Scheme, SystemDocument, Trajectory};
use crate::rc::{ambient_from_csv, nine_room_builder, swiss_house, synth_ambient, AmbientSeries, NineRoomParams, RcNetwork};
use crate::study::{archetype_sweep, check_orderings, exposure_dispatch, OrderingVerdict, SWEEP_AMBIENT_C, SWEEP_HORIZONS_S};
use crate::td::compute_td_envelope;
use crate::ti_multi::{compute_centralized_envelope, compute_distributed_box, DispatchPlan};
use crate::ti_scalar::compute_ti_scalar_envelope;
use crate::verify::{
    check_centralized_soundness, check_distributed_soundness, check_envelope_soundness, dispatch, envelope_area, mfph,
    pooled_corridor, split_total, total_corridor, BruteForceOracle, Corridor, CorridorTest, ExtremeMode, MetricsRow, OracleSoundness,
    SoundnessReport, SOUNDNESS_TOL,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_INVARIANT: i32 = 3;
pub const EXIT_SOLVER: i32 = 4;
pub const EXIT_UNSOUND: i32 = 5;

/// Columns of the sweep's metrics file.
pub const METRICS_HEADER: [&str; 8] =
    ["archetype", "horizon_s", "area_td", "area_ti", "reduction", "mfph_s", "worst_above_C", "worst_below_C"];

#[derive(Debug, Parser)]
#[command(name = "flexenv", version, about = "Energy-flexibility envelopes of lossy linear systems")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Load, compile and check the model against the supported class.
    Validate(CommonArgs),
    /// Compute the requested envelope kinds and write one CSV per envelope.
    Envelope(CommonArgs),
    /// Run extremal scenarios, seeded corridor samples and small exhaustive
    /// checks against the requested envelopes.
    Verify(CommonArgs),
    /// Metrics of the twelve one-zone archetypes at several lead times.
    Sweep(CommonArgs),
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// Run configuration (JSON).
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory; overrides `out_dir` of the configuration.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads (default: one per core).
    #[arg(long)]
    pub workers: Option<usize>,
    /// First sample seed; overrides `seeds.start`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// `exact_zoh` or `forward_euler`.
    #[arg(long)]
    pub scheme: Option<String>,
    /// Comma-separated envelope kinds, e.g. `TD,TI_scalar`.
    #[arg(long, value_delimiter = ',')]
    pub kinds: Option<Vec<String>>,
}

/// Units declared by a configuration. Only SI with °C is accepted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigUnits {
    pub time: String,
    pub power: String,
    pub energy: String,
    pub temperature: String,
}

impl Default for ConfigUnits {
    fn default() -> Self {
        Self { time: "s".into(), power: "W".into(), energy: "J".into(), temperature: "degC".into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BuiltinModel {
    SwissHouse,
    NineRoom,
    NineRoomInsulated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModelSource {
    /// System JSON or RC-network JSON, relative to the configuration file.
    Path(PathBuf),
    Builtin { builtin: BuiltinModel },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum AmbientSource {
    Constant {
        #[serde(rename = "value_C")]
        value_c: f64,
    },
    /// `timestamp_s,temp_C` CSV, relative to the configuration file.
    File { path: PathBuf },
    Synthetic {
        #[serde(rename = "mean_C")]
        mean_c: f64,
        #[serde(rename = "amplitude_C")]
        amplitude_c: f64,
        period_s: f64,
    },
}

impl Default for AmbientSource {
    fn default() -> Self {
        AmbientSource::Constant { value_c: SWEEP_AMBIENT_C }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedRange {
    pub start: u64,
    pub count: u64,
}

impl Default for SeedRange {
    fn default() -> Self {
        Self { start: 0, count: 100 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub floor_area_m2: f64,
    pub power_density_w_per_m2: f64,
    pub horizons_s: Vec<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            floor_area_m2: crate::rc::DEFAULT_ARCHETYPE_AREA,
            power_density_w_per_m2: crate::rc::DEFAULT_POWER_DENSITY,
            horizons_s: SWEEP_HORIZONS_S.to_vec(),
        }
    }
}

fn default_kinds() -> Vec<EnvelopeKind> {
    vec![EnvelopeKind::Td, EnvelopeKind::TiScalar]
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_oracle_steps() -> usize {
    4
}

/// One run. Paths are resolved against the directory of the configuration
/// file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub units: ConfigUnits,
    #[serde(default)]
    pub model: Option<ModelSource>,
    #[serde(default)]
    pub ambient: AmbientSource,
    pub dt_s: f64,
    #[serde(default)]
    pub horizon_s: Option<f64>,
    #[serde(default)]
    pub scheme: Scheme,
    #[serde(default = "default_kinds")]
    pub kinds: Vec<EnvelopeKind>,
    /// `"uniform"`, `"exposure"` (RC networks only) or a plan file.
    #[serde(default)]
    pub dispatch: Option<String>,
    #[serde(default)]
    pub seeds: SeedRange,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    /// Read envelopes written by `envelope` from here instead of computing them.
    #[serde(default)]
    pub envelope_dir: Option<PathBuf>,
    /// Longest enumeration of the exhaustive check, steps.
    #[serde(default = "default_oracle_steps")]
    pub oracle_max_steps: usize,
    #[serde(default)]
    pub sweep: SweepConfig,
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let mut cfg: RunConfig =
            serde_json::from_str(&text).map_err(|e| Error::Schema { path: path.to_path_buf(), msg: e.to_string() })?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        cfg.check_units()?;
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let join = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(ModelSource::Path(p)) = &mut self.model {
            join(p);
        }
        if let AmbientSource::File { path } = &mut self.ambient {
            join(path);
        }
        if let Some(d) = &mut self.dispatch {
            if d != "uniform" && d != "exposure" && Path::new(d.as_str()).is_relative() {
                *d = base.join(d.as_str()).display().to_string();
            }
        }
        if let Some(p) = &mut self.envelope_dir {
            join(p);
        }
        join(&mut self.out_dir);
    }

    fn check_units(&self) -> Result<()> {
        if self.units != ConfigUnits::default() {
            return Err(Error::InvalidArgument(format!(
                "unsupported units {:?}; use s, W, J and degC",
                self.units
            )));
        }
        Ok(())
    }

    fn apply(&mut self, args: &CommonArgs) -> Result<()> {
        if let Some(out) = &args.out {
            self.out_dir = out.clone();
        }
        if let Some(seed) = args.seed {
            self.seeds.start = seed;
        }
        if let Some(s) = &args.scheme {
            self.scheme = s.parse()?;
        }
        if let Some(kinds) = &args.kinds {
            self.kinds = kinds.iter().map(|k| k.trim().parse()).collect::<Result<_>>()?;
        }
        if !(self.dt_s > 0.0 && self.dt_s.is_finite()) {
            return Err(Error::InvalidArgument(format!("dt_s = {} must be positive", self.dt_s)));
        }
        Ok(())
    }

    /// Horizon in steps; it must be a positive multiple of `dt`.
    pub fn steps(&self) -> Result<usize> {
        let h = self.horizon_s.ok_or_else(|| Error::InvalidArgument("horizon_s is required".into()))?;
        horizon_steps(h, self.dt_s)
    }

    pub fn seed_list(&self) -> Vec<u64> {
        (self.seeds.start..self.seeds.start.saturating_add(self.seeds.count)).collect()
    }
}

fn horizon_steps(horizon_s: f64, dt: f64) -> Result<usize> {
    let k = (horizon_s / dt).round();
    if !(k >= 1.0) || (k * dt - horizon_s).abs() > 1e-9 * horizon_s.abs().max(dt) {
        return Err(Error::InvalidArgument(format!("horizon {horizon_s} s is not a positive multiple of dt = {dt} s")));
    }
    Ok(k as usize)
}

/// Maps an error to the process exit code.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Invariant(_) | Error::Network(_) => EXIT_INVARIANT,
        Error::Solver(_) => EXIT_SOLVER,
        _ => EXIT_CONFIG,
    }
}

/// A loaded model: either an RC network or a plain system.
#[derive(Debug, Clone)]
pub enum LoadedModel {
    Network(RcNetwork),
    System(LinearLossySystem),
}

#[derive(Debug, Clone)]
pub struct ModelInput {
    pub label: String,
    pub model: LoadedModel,
}

pub fn load_model(source: &ModelSource) -> Result<ModelInput> {
    match source {
        ModelSource::Builtin { builtin } => {
            let (label, rc) = match builtin {
                BuiltinModel::SwissHouse => ("swiss_house", swiss_house()),
                BuiltinModel::NineRoom => ("nine_room", nine_room_builder(&NineRoomParams::default())),
                BuiltinModel::NineRoomInsulated => (
                    "nine_room_insulated",
                    nine_room_builder(&NineRoomParams { with_indoor_insulation: true, ..NineRoomParams::default() }),
                ),
            };
            Ok(ModelInput { label: label.into(), model: LoadedModel::Network(rc) })
        }
        ModelSource::Path(path) => {
            let text = fs::read_to_string(path)?;
            let schema = |msg: String| Error::Schema { path: path.clone(), msg };
            let value: serde_json::Value = serde_json::from_str(&text).map_err(|e| schema(e.to_string()))?;
            let label = path.file_stem().map_or_else(|| "model".into(), |s| s.to_string_lossy().replace(',', "_"));
            let model = if value.get("rooms").is_some() {
                LoadedModel::Network(serde_json::from_value(value).map_err(|e| schema(e.to_string()))?)
            } else {
                let doc: SystemDocument = serde_json::from_value(value).map_err(|e| schema(e.to_string()))?;
                LoadedModel::System(doc.into_system().map_err(|e| schema(e.to_string()))?)
            };
            Ok(ModelInput { label, model })
        }
    }
}

fn load_ambient(source: &AmbientSource, dt: f64, steps: usize) -> Result<AmbientSeries> {
    match source {
        AmbientSource::Constant { value_c } => Ok(AmbientSeries::constant(*value_c, dt, steps)),
        AmbientSource::File { path } => ambient_from_csv(path)?.resample(dt, steps),
        AmbientSource::Synthetic { mean_c, amplitude_c, period_s } => synth_ambient(*mean_c, *amplitude_c, *period_s, dt, steps),
    }
}

/// Everything a computation needs: the discretized system, the disturbance
/// and the originating network if any.
pub struct Prepared {
    pub label: String,
    pub network: Option<RcNetwork>,
    pub dsys: DiscreteSystem,
    pub d: Trajectory,
}

fn compile(input: &ModelInput, cfg: &RunConfig, steps: usize) -> Result<(LinearLossySystem, Trajectory, Option<RcNetwork>)> {
    match &input.model {
        LoadedModel::Network(rc) => {
            rc.validate()?;
            let ambient = load_ambient(&cfg.ambient, cfg.dt_s, steps)?;
            let (sys, d) = rc.compile(&ambient, steps)?;
            Ok((sys, d, Some(rc.clone())))
        }
        LoadedModel::System(sys) => {
            let d = match sys.dist_dim() {
                0 => Trajectory::zeros(cfg.dt_s, steps, 0),
                1 => {
                    let ambient = load_ambient(&cfg.ambient, cfg.dt_s, steps)?;
                    Trajectory::from_series(cfg.dt_s, &ambient.values)
                }
                q => {
                    return Err(Error::InvalidArgument(format!(
                        "system has {q} disturbance channels; a configuration supplies only the ambient temperature"
                    )))
                }
            };
            Ok((sys.clone(), d, None))
        }
    }
}

fn prepare(cfg: &RunConfig) -> Result<Prepared> {
    let source = cfg.model.as_ref().ok_or_else(|| Error::InvalidArgument("configuration has no model".into()))?;
    let input = load_model(source)?;
    let steps = cfg.steps()?;
    let (sys, d, network) = compile(&input, cfg, steps)?;
    let report = sys.validate();
    if !report.is_valid() {
        return Err(Error::Invariant(report.to_string()));
    }
    if cfg.kinds.contains(&EnvelopeKind::TiScalar) && sys.state_dim() != 1 {
        return Err(Error::InvalidArgument(format!(
            "TI_scalar needs a one-state model; this one has {} states",
            sys.state_dim()
        )));
    }
    if cfg.kinds.is_empty() {
        return Err(Error::InvalidArgument("no envelope kinds requested".into()));
    }
    let dsys = discretize(&sys, cfg.dt_s, steps, cfg.scheme)?;
    Ok(Prepared { label: input.label, network, dsys, d })
}

fn dispatch_plan(cfg: &RunConfig, prep: &Prepared) -> Result<DispatchPlan> {
    let steps = prep.dsys.steps;
    let loads = prep.dsys.power_dim();
    match cfg.dispatch.as_deref() {
        None | Some("uniform") => Ok(DispatchPlan::uniform(steps, loads)),
        Some("exposure") => match &prep.network {
            Some(rc) => exposure_dispatch(rc, steps),
            None => Err(Error::InvalidArgument("exposure dispatch needs an RC-network model".into())),
        },
        Some(path) => {
            let plan = DispatchPlan::from_json_file(Path::new(path))?;
            if plan.loads() != loads {
                return Err(Error::InvalidArgument(format!("dispatch plan has {} loads, model has {loads}", plan.loads())));
            }
            Ok(plan.fitted(steps))
        }
    }
}

/// Runs `compute` over the full grid; when a lead time has no feasible
/// trajectory, recomputes on the feasible prefix and pads with NaN.
fn with_feasible_prefix(
    dsys: &DiscreteSystem,
    compute: impl Fn(&DiscreteSystem) -> Result<(EnvelopeSeries, f64)>,
) -> Result<(EnvelopeSeries, f64)> {
    match compute(dsys) {
        Err(Error::Infeasible { step, .. }) if step >= 1 && step <= dsys.steps => {
            let (mut env, time) = if step > 1 {
                compute(&dsys.with_steps(step - 1))?
            } else {
                (EnvelopeSeries::new(EnvelopeKind::Td, dsys.dt, vec![0.0], vec![0.0])?, 0.0)
            };
            env.e_down.resize(dsys.steps + 1, f64::NAN);
            env.e_up.resize(dsys.steps + 1, f64::NAN);
            env.defined_up_to = env.defined_up_to.min(step - 1);
            env.infeasible_from = Some(step);
            Ok((env, time))
        }
        other => other,
    }
}

/// Envelopes of one run, in the order of [`EnvelopeKind::ALL`].
pub struct Computed {
    pub td: Option<EnvelopeSeries>,
    pub ti_scalar: Option<EnvelopeSeries>,
    pub distributed: Option<Vec<EnvelopeSeries>>,
    pub centralized: Option<(EnvelopeSeries, DispatchPlan)>,
    pub timings: Vec<(String, f64)>,
}

fn compute_all(cfg: &RunConfig, prep: &Prepared) -> Result<Computed> {
    let (dsys, d) = (&prep.dsys, &prep.d);
    let mut out = Computed { td: None, ti_scalar: None, distributed: None, centralized: None, timings: Vec::new() };
    for kind in EnvelopeKind::ALL {
        if !cfg.kinds.contains(&kind) {
            continue;
        }
        match kind {
            EnvelopeKind::Td => {
                let (env, t) = with_feasible_prefix(dsys, |ds| {
                    let r = compute_td_envelope(ds, &d.prefix(ds.steps))?;
                    Ok((r.envelope, r.solve_time_s))
                })?;
                out.td = Some(EnvelopeSeries { kind, ..env }.with_label(prep.label.clone()));
                out.timings.push((kind.to_string(), t));
            }
            EnvelopeKind::TiScalar => {
                let (env, t) = with_feasible_prefix(dsys, |ds| {
                    let r = compute_ti_scalar_envelope(ds, &d.prefix(ds.steps))?;
                    Ok((r.envelope, r.solve_time_s))
                })?;
                out.ti_scalar = Some(EnvelopeSeries { kind, ..env }.with_label(prep.label.clone()));
                out.timings.push((kind.to_string(), t));
            }
            EnvelopeKind::TiDistributed => {
                let boxes = compute_distributed_box(dsys, d)?;
                out.timings.push((kind.to_string(), boxes.solve_time_s));
                out.distributed = Some(boxes.loads);
            }
            EnvelopeKind::TiCentralized => {
                let plan = dispatch_plan(cfg, prep)?;
                let cent = compute_centralized_envelope(dsys, d, &plan)?;
                out.timings.push((kind.to_string(), cent.solve_time_s));
                out.centralized = Some((cent.envelope, cent.plan));
            }
        }
    }
    Ok(out)
}

fn file_stem(kind: EnvelopeKind) -> &'static str {
    match kind {
        EnvelopeKind::Td => "td",
        EnvelopeKind::TiScalar => "ti_scalar",
        EnvelopeKind::TiDistributed => "ti_distributed",
        EnvelopeKind::TiCentralized => "ti_centralized",
    }
}

fn load_file_name(index: usize, label: &str) -> String {
    let clean: String = label.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect();
    format!("ti_distributed_{index:02}_{clean}.csv")
}

#[derive(Debug, Clone, Serialize)]
pub struct EnvelopeSummary {
    pub kind: EnvelopeKind,
    pub label: String,
    pub file: String,
    pub defined_up_to: usize,
    pub infeasible_from: Option<usize>,
    /// Area between the bounds up to `defined_up_to`, J·s.
    pub area_j_s: f64,
    pub mfph_s: f64,
    pub mfph_full_horizon: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub model: String,
    pub dt_s: f64,
    pub horizon_s: f64,
    pub steps: usize,
    pub scheme: Scheme,
    pub envelopes: Vec<EnvelopeSummary>,
    pub dispatch_plan: Option<String>,
}

fn summarize(env: &EnvelopeSeries, file: String) -> EnvelopeSummary {
    let m = mfph(env);
    EnvelopeSummary {
        kind: env.kind,
        label: env.label.clone(),
        file,
        defined_up_to: env.defined_up_to,
        infeasible_from: env.infeasible_from,
        area_j_s: envelope_area(env, env.defined_up_to),
        mfph_s: m.seconds,
        mfph_full_horizon: m.full_horizon,
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn cmd_validate(cfg: &RunConfig) -> Result<i32> {
    #[derive(Serialize)]
    struct Report {
        model: String,
        valid: bool,
        states: usize,
        loads: usize,
        messages: Vec<String>,
        violations: Vec<crate::model::Violation>,
    }
    let source = cfg.model.as_ref().ok_or_else(|| Error::InvalidArgument("configuration has no model".into()))?;
    let input = load_model(source)?;
    let (sys, _, _) = compile(&input, cfg, 1)?;
    let v = sys.validate();
    let report = Report {
        model: input.label,
        valid: v.is_valid(),
        states: sys.state_dim(),
        loads: sys.power_dim(),
        messages: v.violations.iter().map(|x| x.to_string()).collect(),
        violations: v.violations,
    };
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(if report.valid { EXIT_OK } else { EXIT_INVARIANT })
}

pub fn cmd_envelope(cfg: &RunConfig) -> Result<i32> {
    let prep = prepare(cfg)?;
    let computed = compute_all(cfg, &prep)?;
    fs::create_dir_all(&cfg.out_dir)?;
    let mut envelopes = Vec::new();
    for env in [&computed.td, &computed.ti_scalar].into_iter().flatten() {
        let file = format!("{}.csv", file_stem(env.kind));
        env.to_csv_file(&cfg.out_dir.join(&file))?;
        envelopes.push(summarize(env, file));
    }
    if let Some(loads) = &computed.distributed {
        for (j, env) in loads.iter().enumerate() {
            let file = load_file_name(j, &env.label);
            env.to_csv_file(&cfg.out_dir.join(&file))?;
            envelopes.push(summarize(env, file));
        }
    }
    let mut dispatch_plan = None;
    if let Some((env, plan)) = &computed.centralized {
        let file = format!("{}.csv", file_stem(env.kind));
        env.to_csv_file(&cfg.out_dir.join(&file))?;
        envelopes.push(summarize(env, file));
        fs::write(cfg.out_dir.join("dispatch_plan.json"), plan.to_json() + "\n")?;
        dispatch_plan = Some("dispatch_plan.json".to_string());
    }
    let summary = RunSummary {
        model: prep.label.clone(),
        dt_s: cfg.dt_s,
        horizon_s: prep.dsys.steps as f64 * cfg.dt_s,
        steps: prep.dsys.steps,
        scheme: cfg.scheme,
        envelopes,
        dispatch_plan,
    };
    write_json(&cfg.out_dir.join("summary.json"), &summary)?;
    // wall-clock times vary between runs, so they live apart from the summary
    let timings: serde_json::Map<String, serde_json::Value> =
        computed.timings.iter().map(|(k, t)| (k.clone(), serde_json::json!(t))).collect();
    write_json(&cfg.out_dir.join("timings.json"), &timings)?;
    Ok(EXIT_OK)
}

/// One extremal corridor trajectory and its comfort outcome.
#[derive(Debug, Clone, Serialize)]
pub struct ScenarioOutcome {
    pub name: String,
    pub mode: ExtremeMode,
    pub steps: usize,
    pub feasible: bool,
    #[serde(rename = "worst_above_C")]
    pub worst_above_c: f64,
    #[serde(rename = "worst_below_C")]
    pub worst_below_c: f64,
    pub final_energy_j: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct KindVerdict {
    pub kind: EnvelopeKind,
    pub trajectory_independent: bool,
    pub scenarios: Vec<ScenarioOutcome>,
    pub sampling: SoundnessReport,
    pub oracle: Option<OracleSoundness>,
    pub violation_count: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyVerdict {
    pub model: String,
    pub dt_s: f64,
    pub steps: usize,
    pub scheme: Scheme,
    pub seeds: SeedRange,
    #[serde(rename = "tolerance_C")]
    pub tolerance_c: f64,
    pub kinds: Vec<KindVerdict>,
    /// No trajectory-independent envelope admitted a violation.
    pub ti_sound: bool,
}

/// Scenario A defers heating as long as the lower bound allows; scenario B
/// heats early and then draws as little as the envelope permits.
const SCENARIOS: [(&str, ExtremeMode); 2] = [("A", ExtremeMode::LatestMin), ("B", ExtremeMode::EarliestThenMin)];

fn scenario(prep: &Prepared, name: &str, mode: ExtremeMode, p: &Trajectory) -> Result<ScenarioOutcome> {
    let xs = simulate(&prep.dsys, p, &prep.d)?;
    let v = check_state_feasibility(&xs, &prep.dsys.source, SOUNDNESS_TOL)?;
    Ok(ScenarioOutcome {
        name: name.into(),
        mode,
        steps: p.steps(),
        feasible: v.feasible,
        worst_above_c: v.max_over(),
        worst_below_c: v.max_under(),
        final_energy_j: p.cumulative_total().last().copied().unwrap_or(0.0),
    })
}

/// Levels per load and the longest enumeration that stays cheap.
fn oracle_size(prep: &Prepared, channels: usize, max_steps: usize) -> (usize, usize) {
    const CHEAP: f64 = 1e5;
    let levels = if channels == 1 { 5 } else { 3 };
    let mut k = 0;
    while k < max_steps.min(prep.dsys.steps) && (levels as f64).powi((channels * (k + 1)) as i32) <= CHEAP {
        k += 1;
    }
    (levels, k)
}

fn verify_kind(cfg: &RunConfig, prep: &Prepared, computed: &Computed, kind: EnvelopeKind, seeds: &[u64]) -> Result<Option<KindVerdict>> {
    let (dsys, d) = (&prep.dsys, &prep.d);
    let sys = &dsys.source;
    let m = sys.power_dim();
    let mut scenarios = Vec::new();
    let (sampling, oracle) = match kind {
        EnvelopeKind::Td | EnvelopeKind::TiScalar => {
            let env = match kind {
                EnvelopeKind::Td => computed.td.as_ref(),
                _ => computed.ti_scalar.as_ref(),
            };
            let Some(env) = env else { return Ok(None) };
            if env.defined_up_to > 0 {
                let corridor = total_corridor(env, sys)?;
                for (name, mode) in SCENARIOS {
                    let total = corridor.extreme(mode)?;
                    let p = split_total(sys, &total, env.dt);
                    scenarios.push(scenario(prep, name, mode, &p)?);
                }
            }
            let sampling = check_envelope_soundness(dsys, d, env, seeds, SOUNDNESS_TOL)?;
            let (levels, k) = oracle_size(prep, m, cfg.oracle_max_steps.min(env.defined_up_to));
            let oracle = if k > 0 {
                Some(BruteForceOracle::new(dsys, d, levels, k)?.check_corridor(CorridorTest::Total(env), SOUNDNESS_TOL)?)
            } else {
                None
            };
            (sampling, oracle)
        }
        EnvelopeKind::TiDistributed => {
            let Some(loads) = computed.distributed.as_ref() else { return Ok(None) };
            let h = loads.iter().map(|e| e.defined_up_to).min().unwrap_or(0);
            if h > 0 {
                for (name, mode) in SCENARIOS {
                    let mut values = nalgebra::DMatrix::zeros(h, m);
                    for (j, env) in loads.iter().enumerate() {
                        let p = Corridor::from_envelope(&env.truncated(h), sys.p_min[j], sys.p_max[j])?.extreme(mode)?;
                        values.set_column(j, &nalgebra::DVector::from_vec(p));
                    }
                    scenarios.push(scenario(prep, name, mode, &Trajectory { dt: dsys.dt, values })?);
                }
            }
            let sampling = check_distributed_soundness(dsys, d, loads, seeds, SOUNDNESS_TOL)?;
            let (levels, k) = oracle_size(prep, m, cfg.oracle_max_steps.min(h));
            let oracle = if k > 0 {
                Some(BruteForceOracle::new(dsys, d, levels, k)?.check_corridor(CorridorTest::PerLoad(loads), SOUNDNESS_TOL)?)
            } else {
                None
            };
            (sampling, oracle)
        }
        EnvelopeKind::TiCentralized => {
            let Some((env, plan)) = computed.centralized.as_ref() else { return Ok(None) };
            if env.defined_up_to > 0 {
                let corridor = pooled_corridor(env, dsys, plan)?;
                for (name, mode) in SCENARIOS {
                    let p = dispatch(plan, &corridor.extreme(mode)?, env.dt);
                    scenarios.push(scenario(prep, name, mode, &p)?);
                }
            }
            let sampling = check_centralized_soundness(dsys, d, env, plan, seeds, SOUNDNESS_TOL)?;
            let (levels, k) = oracle_size(prep, 1, cfg.oracle_max_steps.min(env.defined_up_to));
            let oracle = if k > 0 {
                Some(BruteForceOracle::dispatched(dsys, d, plan, levels, k)?.check_corridor(CorridorTest::Total(env), SOUNDNESS_TOL)?)
            } else {
                None
            };
            (sampling, oracle)
        }
    };
    let violation_count = scenarios.iter().filter(|s| !s.feasible).count()
        + sampling.violations.len()
        + oracle.as_ref().map_or(0, |o| o.violations.len());
    Ok(Some(KindVerdict {
        kind,
        trajectory_independent: kind.is_trajectory_independent(),
        scenarios,
        sampling,
        oracle,
        violation_count,
    }))
}

fn read_envelopes(cfg: &RunConfig, dir: &Path, prep: &Prepared) -> Result<Computed> {
    let mut out = Computed { td: None, ti_scalar: None, distributed: None, centralized: None, timings: Vec::new() };
    let read = |stem: &str| EnvelopeSeries::from_csv_file(&dir.join(format!("{stem}.csv")));
    for kind in EnvelopeKind::ALL {
        if !cfg.kinds.contains(&kind) {
            continue;
        }
        match kind {
            EnvelopeKind::Td => out.td = Some(read(file_stem(kind))?),
            EnvelopeKind::TiScalar => out.ti_scalar = Some(read(file_stem(kind))?),
            EnvelopeKind::TiDistributed => {
                let mut names: Vec<PathBuf> = fs::read_dir(dir)?
                    .filter_map(|e| e.ok().map(|e| e.path()))
                    .filter(|p| p.file_name().is_some_and(|n| n.to_string_lossy().starts_with("ti_distributed_")))
                    .collect();
                names.sort();
                if names.len() != prep.dsys.power_dim() {
                    return Err(Error::InvalidArgument(format!(
                        "{} per-load envelopes in {}, model has {} loads",
                        names.len(),
                        dir.display(),
                        prep.dsys.power_dim()
                    )));
                }
                out.distributed = Some(names.iter().map(|p| EnvelopeSeries::from_csv_file(p)).collect::<Result<_>>()?);
            }
            EnvelopeKind::TiCentralized => {
                let plan = DispatchPlan::from_json_file(&dir.join("dispatch_plan.json"))?.fitted(prep.dsys.steps);
                out.centralized = Some((read(file_stem(kind))?, plan));
            }
        }
    }
    for env in [&out.td, &out.ti_scalar].into_iter().flatten() {
        if (env.dt - prep.dsys.dt).abs() > 1e-9 * prep.dsys.dt || env.steps() != prep.dsys.steps {
            return Err(Error::InvalidArgument(format!(
                "stored {} envelope has dt {} s and {} steps, configuration asks for {} s and {}",
                env.kind,
                env.dt,
                env.steps(),
                prep.dsys.dt,
                prep.dsys.steps
            )));
        }
    }
    Ok(out)
}

pub fn cmd_verify(cfg: &RunConfig) -> Result<i32> {
    let prep = prepare(cfg)?;
    let computed = match &cfg.envelope_dir {
        Some(dir) => read_envelopes(cfg, dir, &prep)?,
        None => compute_all(cfg, &prep)?,
    };
    let seeds = cfg.seed_list();
    let mut kinds = Vec::new();
    for kind in EnvelopeKind::ALL {
        if cfg.kinds.contains(&kind) {
            kinds.extend(verify_kind(cfg, &prep, &computed, kind, &seeds)?);
        }
    }
    let ti_sound = kinds.iter().filter(|k| k.trajectory_independent).all(|k| k.violation_count == 0);
    let verdict = VerifyVerdict {
        model: prep.label.clone(),
        dt_s: cfg.dt_s,
        steps: prep.dsys.steps,
        scheme: cfg.scheme,
        seeds: cfg.seeds,
        tolerance_c: SOUNDNESS_TOL,
        kinds,
        ti_sound,
    };
    fs::create_dir_all(&cfg.out_dir)?;
    write_json(&cfg.out_dir.join("verdict.json"), &verdict)?;
    for k in &verdict.kinds {
        eprintln!(
            "{}: {} violations ({} samples, {} scenarios, oracle {})",
            k.kind,
            k.violation_count,
            k.sampling.samples,
            k.scenarios.len(),
            k.oracle.as_ref().map_or("skipped".to_string(), |o| format!("{} trajectories inside", o.inside))
        );
    }
    Ok(if ti_sound { EXIT_OK } else { EXIT_UNSOUND })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

/// Writes the metrics rows with the header of [`METRICS_HEADER`].
pub fn write_metrics_csv(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(METRICS_HEADER)?;
    for r in rows {
        w.write_record([
            r.archetype.clone(),
            r.horizon_s.to_string(),
            r.area_td.to_string(),
            r.area_ti.to_string(),
            fmt_opt(r.reduction),
            r.mfph_s.to_string(),
            r.worst_above_c.to_string(),
            r.worst_below_c.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn cmd_sweep(cfg: &RunConfig) -> Result<i32> {
    let horizons = &cfg.sweep.horizons_s;
    let longest = horizons.iter().map(|&h| horizon_steps(h, cfg.dt_s)).collect::<Result<Vec<_>>>()?;
    let steps = longest.into_iter().max().ok_or_else(|| Error::InvalidArgument("sweep needs at least one horizon".into()))?;
    let ambient = load_ambient(&cfg.ambient, cfg.dt_s, steps)?;
    let results = archetype_sweep(cfg.sweep.floor_area_m2, cfg.sweep.power_density_w_per_m2, &ambient, cfg.dt_s, horizons, cfg.scheme)?;
    let rows: Vec<MetricsRow> = results.iter().flat_map(|r| r.rows.iter().cloned()).collect();
    fs::create_dir_all(&cfg.out_dir)?;
    write_metrics_csv(&cfg.out_dir.join("metrics.csv"), &rows)?;
    let verdicts: Vec<OrderingVerdict> = horizons.iter().map(|&h| check_orderings(&results, h)).collect::<Result<_>>()?;
    write_json(&cfg.out_dir.join("orderings.json"), &verdicts)?;
    for v in &verdicts {
        eprintln!("orderings at {} s: {}", v.horizon_s, if v.holds() { "hold" } else { "broken" });
    }
    Ok(EXIT_OK)
}

fn dispatch_command(cli: Cli) -> Result<i32> {
    let (args, run): (CommonArgs, fn(&RunConfig) -> Result<i32>) = match cli.command {
        Command::Validate(a) => (a, cmd_validate),
        Command::Envelope(a) => (a, cmd_envelope),
        Command::Verify(a) => (a, cmd_verify),
        Command::Sweep(a) => (a, cmd_sweep),
    };
    let mut cfg = RunConfig::from_file(&args.config)?;
    cfg.apply(&args)?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(w) = args.workers {
        if w == 0 {
            return Err(Error::InvalidArgument("--workers must be at least 1".into()));
        }
        pool = pool.num_threads(w);
    }
    let pool = pool.build().map_err(|e| Error::InvalidArgument(e.to_string()))?;
    pool.install(|| run(&cfg))
}

/// Parses `args` (program name first), runs the command and returns the
/// exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match dispatch_command(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
