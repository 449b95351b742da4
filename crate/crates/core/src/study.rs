//! Composite workflows: the archetype sweep with its ordering checks, and the
//! coupled nine-room comparison of distributed, centralized and adiabatic
//! envelopes.

use rayon::prelude::*;
use serde::Serialize;

use crate::envelope::{EnvelopeKind, EnvelopeSeries};
use crate::error::{Error, Result};
use crate::model::{discretize, Scheme};
use crate::rc::{
    archetype_catalog, exterior_conductances, nine_room_builder, synth_ambient, AmbientSeries, ArchetypeSpec,
    Construction, Insulation, NineRoomParams, RcNetwork,
};
use crate::td::compute_td_envelope;
use crate::ti_multi::{compute_centralized_envelope, compute_distributed_box, DispatchPlan};
use crate::ti_scalar::compute_ti_scalar_envelope;
use crate::verify::{envelope_area, metrics_row, MetricsRow};

/// Lead times reported by the sweep, seconds.
pub const SWEEP_HORIZONS_S: [f64; 4] = [3600.0, 4.0 * 3600.0, 12.0 * 3600.0, 24.0 * 3600.0];

/// Constant outdoor temperature of the sweep, °C.
pub const SWEEP_AMBIENT_C: f64 = 10.0;

/// Envelopes and metrics of one archetype.
#[derive(Debug, Clone)]
pub struct ArchetypeResult {
    pub spec: ArchetypeSpec,
    pub td: EnvelopeSeries,
    pub ti: EnvelopeSeries,
    pub rows: Vec<MetricsRow>,
}

/// Computes TD and scalar TI envelopes of one archetype over the longest
/// horizon and reports the metrics at each requested lead time.
pub fn archetype_metrics(spec: &ArchetypeSpec, ambient: &AmbientSeries, dt: f64, horizons_s: &[f64], scheme: Scheme) -> Result<ArchetypeResult> {
    let steps_of = |h: f64| -> Result<usize> {
        let k = (h / dt).round();
        if k < 1.0 || (k * dt - h).abs() > 1e-6 * dt {
            return Err(Error::InvalidArgument(format!("horizon {h} s is not a positive multiple of dt = {dt} s")));
        }
        Ok(k as usize)
    };
    let lead: Vec<usize> = horizons_s.iter().map(|&h| steps_of(h)).collect::<Result<_>>()?;
    let steps = lead.iter().copied().max().unwrap_or(0);
    let rc = spec.network()?;
    let (sys, d) = rc.compile(&ambient.resample(dt, steps)?, steps)?;
    let dsys = discretize(&sys, dt, steps, scheme)?;
    let td = compute_td_envelope(&dsys, &d)?.envelope.with_label(spec.name());
    let ti = compute_ti_scalar_envelope(&dsys, &d)?.envelope.with_label(spec.name());
    let rows = lead
        .iter()
        .map(|&k| metrics_row(&spec.name(), &dsys, &d, &td, &ti, k))
        .collect::<Result<Vec<_>>>()?;
    Ok(ArchetypeResult { spec: *spec, td, ti, rows })
}

/// Runs [`archetype_metrics`] for every archetype of the catalog, in catalog order.
pub fn archetype_sweep(floor_area: f64, power_density: f64, ambient: &AmbientSeries, dt: f64, horizons_s: &[f64], scheme: Scheme) -> Result<Vec<ArchetypeResult>> {
    archetype_catalog(floor_area, power_density)?
        .par_iter()
        .map(|spec| archetype_metrics(spec, ambient, dt, horizons_s, scheme))
        .collect()
}

/// One failed ordering between two archetypes.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OrderingBreach {
    pub metric: String,
    pub first: String,
    pub second: String,
    pub first_value: f64,
    pub second_value: f64,
}

/// Qualitative orderings of the sweep at one lead time.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OrderingVerdict {
    pub horizon_s: f64,
    /// Reduction nondecreasing from better to worse insulation.
    pub reduction_vs_insulation: bool,
    /// Reduction nonincreasing from light to heavy construction.
    pub reduction_vs_construction: bool,
    /// MFPH nonincreasing from better to worse insulation.
    pub mfph_vs_insulation: bool,
    pub breaches: Vec<OrderingBreach>,
}

impl OrderingVerdict {
    pub fn holds(&self) -> bool {
        self.reduction_vs_insulation && self.reduction_vs_construction && self.mfph_vs_insulation
    }
}

/// Slack for the ordering comparisons: reductions are fractions, MFPH seconds.
const REDUCTION_SLACK: f64 = 1e-9;
const MFPH_SLACK_S: f64 = 1e-6;

fn row_at(results: &[ArchetypeResult], c: Construction, i: Insulation, horizon_s: f64) -> Result<&MetricsRow> {
    results
        .iter()
        .find(|r| r.spec.construction == c && r.spec.insulation == i)
        .and_then(|r| r.rows.iter().find(|row| (row.horizon_s - horizon_s).abs() < 1e-6))
        .ok_or_else(|| Error::InvalidArgument(format!("sweep has no {c:?}-{i:?} row at {horizon_s} s")))
}

/// Checks the orderings across the 3 × 4 grid at one lead time.
pub fn check_orderings(results: &[ArchetypeResult], horizon_s: f64) -> Result<OrderingVerdict> {
    let mut v = OrderingVerdict {
        horizon_s,
        reduction_vs_insulation: true,
        reduction_vs_construction: true,
        mfph_vs_insulation: true,
        breaches: Vec::new(),
    };
    let red = |r: &MetricsRow| r.reduction.unwrap_or(f64::NAN);
    for c in Construction::ALL {
        for w in Insulation::ALL.windows(2) {
            let (a, b) = (row_at(results, c, w[0], horizon_s)?, row_at(results, c, w[1], horizon_s)?);
            if !(red(b) >= red(a) - REDUCTION_SLACK) {
                v.reduction_vs_insulation = false;
                v.breaches.push(breach("reduction", a, b, red(a), red(b)));
            }
            if !(b.mfph_s <= a.mfph_s + MFPH_SLACK_S) {
                v.mfph_vs_insulation = false;
                v.breaches.push(breach("mfph_s", a, b, a.mfph_s, b.mfph_s));
            }
        }
    }
    for i in Insulation::ALL {
        for w in Construction::ALL.windows(2) {
            let (a, b) = (row_at(results, w[0], i, horizon_s)?, row_at(results, w[1], i, horizon_s)?);
            if !(red(b) <= red(a) + REDUCTION_SLACK) {
                v.reduction_vs_construction = false;
                v.breaches.push(breach("reduction", a, b, red(a), red(b)));
            }
        }
    }
    Ok(v)
}

fn breach(metric: &str, a: &MetricsRow, b: &MetricsRow, va: f64, vb: f64) -> OrderingBreach {
    OrderingBreach {
        metric: metric.into(),
        first: a.archetype.clone(),
        second: b.archetype.clone(),
        first_value: va,
        second_value: vb,
    }
}

/// Outdoor temperature of the nine-room studies: a 24 h cycle of ±10 °C
/// around 5 °C.
pub fn nine_room_ambient(dt: f64, steps: usize) -> Result<AmbientSeries> {
    synth_ambient(5.0, 10.0, 86400.0, dt, steps)
}

/// Time-constant shares proportional to each heated room's conductance to
/// ambient, so that every room receives power in proportion to its losses.
pub fn exposure_dispatch(rc: &RcNetwork, steps: usize) -> Result<DispatchPlan> {
    let g = exterior_conductances(rc);
    let heated = rc.heated_rooms();
    let weights: Vec<f64> = heated.iter().map(|&i| g[i]).collect();
    DispatchPlan::proportional(steps.max(1), &weights)
}

/// Areas of the nine-room comparison at the full horizon, joule-seconds.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CouplingReport {
    pub with_indoor_insulation: bool,
    pub steps: usize,
    pub dt: f64,
    pub area_sum_adiabatic: f64,
    pub area_sum_distributed: f64,
    pub area_centralized: f64,
    /// `(max - min) / max` over the three areas.
    pub spread: f64,
    /// Room whose envelopes are compared individually.
    pub room: usize,
    pub room_area_adiabatic: f64,
    pub room_area_distributed: f64,
    pub box_horizon: usize,
    pub centralized_defined_up_to: usize,
    pub polytope_residual: f64,
    #[serde(skip)]
    pub adiabatic: Vec<EnvelopeSeries>,
    #[serde(skip)]
    pub distributed: Vec<EnvelopeSeries>,
    #[serde(skip)]
    pub centralized: EnvelopeSeries,
}

/// Compares, for one building, the per-room envelopes obtained with
/// adiabatic neighbours, the distributed box, and the centralized envelope
/// under `plan` (exposure shares when `None`).
pub fn coupling_study(rc: &RcNetwork, ambient: &AmbientSeries, dt: f64, steps: usize, plan: Option<&DispatchPlan>, room: usize) -> Result<CouplingReport> {
    let ambient = ambient.resample(dt, steps)?;
    let (sys, d) = rc.compile(&ambient, steps)?;
    let dsys = discretize(&sys, dt, steps, Scheme::ExactZoh)?;
    let adiabatic = (0..rc.rooms.len())
        .into_par_iter()
        .map(|i| -> Result<EnvelopeSeries> {
            let (s1, d1) = rc.adiabatic_room(i)?.compile(&ambient, steps)?;
            let ds1 = discretize(&s1, dt, steps, Scheme::ExactZoh)?;
            Ok(compute_ti_scalar_envelope(&ds1, &d1)?.envelope.with_label(rc.rooms[i].label.clone()))
        })
        .collect::<Result<Vec<_>>>()?;
    let boxes = compute_distributed_box(&dsys, &d)?;
    let plan = match plan {
        Some(p) => p.clone(),
        None => exposure_dispatch(rc, steps)?,
    };
    let cent = compute_centralized_envelope(&dsys, &d, &plan)?;
    let sum_adi = EnvelopeSeries::sum(EnvelopeKind::TiScalar, &adiabatic)?;
    let sum_dist = EnvelopeSeries::sum(EnvelopeKind::TiDistributed, &boxes.loads)?;
    let areas = [envelope_area(&sum_adi, steps), envelope_area(&sum_dist, steps), envelope_area(&cent.envelope, steps)];
    let hi = areas.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = areas.iter().copied().fold(f64::INFINITY, f64::min);
    if room >= boxes.loads.len() {
        return Err(Error::InvalidArgument(format!("room {room} out of range")));
    }
    Ok(CouplingReport {
        with_indoor_insulation: false,
        steps,
        dt,
        area_sum_adiabatic: areas[0],
        area_sum_distributed: areas[1],
        area_centralized: areas[2],
        spread: if hi > 0.0 { (hi - lo) / hi } else { 0.0 },
        room,
        room_area_adiabatic: envelope_area(&adiabatic[room], steps),
        room_area_distributed: envelope_area(&boxes.loads[room], steps),
        box_horizon: boxes.horizon,
        centralized_defined_up_to: cent.envelope.defined_up_to,
        polytope_residual: boxes.polytope_residual,
        adiabatic,
        distributed: boxes.loads,
        centralized: cent.envelope,
    })
}

/// [`coupling_study`] on the nine-room building with its default ambient,
/// comparing the top-floor corner room.
pub fn nine_room_study(params: &NineRoomParams, dt: f64, steps: usize) -> Result<CouplingReport> {
    let rc = nine_room_builder(params);
    let mut report = coupling_study(&rc, &nine_room_ambient(dt, steps)?, dt, steps, None, crate::rc::nine_room_index(2, 2))?;
    report.with_indoor_insulation = params.with_indoor_insulation;
    Ok(report)
}
