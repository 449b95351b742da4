//! Resistance-capacitance thermal networks.
//!
//! Each room obeys
//! `C_i dT_i/dt = -(T_i - T_a)/R_i - Σ_j (T_i - T_j)/R_ij + p_i + d_i`,
//! which compiles to a Metzler `A` with the ambient temperature as the single
//! disturbance channel.

use std::collections::HashSet;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{LinearLossySystem, Trajectory};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Room {
    pub label: String,
    /// Heat capacity, J/K.
    pub capacitance: f64,
    /// Resistance to ambient, K/W. `None` means adiabatic to the outside.
    #[serde(default)]
    pub r_amb: Option<f64>,
    #[serde(default = "default_true")]
    pub heated: bool,
    /// Heating power cap, W.
    #[serde(default)]
    pub p_max: f64,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub i: usize,
    pub j: usize,
    /// K/W.
    pub r: f64,
}

/// Admissible temperature band, °C.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Comfort {
    pub t_min: f64,
    pub t_max: f64,
}

impl Default for Comfort {
    fn default() -> Self {
        Self { t_min: 22.0, t_max: 24.0 }
    }
}

/// Default initial temperature, °C.
pub const DEFAULT_T0: f64 = 23.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RcNetwork {
    pub rooms: Vec<Room>,
    #[serde(default)]
    pub edges: Vec<Edge>,
    #[serde(default)]
    pub comfort: Comfort,
    #[serde(default = "default_t0")]
    pub t0: f64,
}

fn default_t0() -> f64 {
    DEFAULT_T0
}

impl RcNetwork {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Schema { path: path.to_path_buf(), msg: e.to_string() })
    }

    pub fn validate(&self) -> Result<()> {
        if self.rooms.is_empty() {
            return Err(Error::Network("no rooms".into()));
        }
        for (i, room) in self.rooms.iter().enumerate() {
            if !(room.capacitance > 0.0 && room.capacitance.is_finite()) {
                return Err(Error::Network(format!("room {i} ({}) needs C > 0", room.label)));
            }
            if let Some(r) = room.r_amb {
                if !(r > 0.0 && r.is_finite()) {
                    return Err(Error::Network(format!("room {i} ({}) needs R_amb > 0", room.label)));
                }
            }
            if room.heated && !(room.p_max >= 0.0 && room.p_max.is_finite()) {
                return Err(Error::Network(format!("room {i} ({}) needs a finite p_max >= 0", room.label)));
            }
        }
        let mut seen = HashSet::new();
        for e in &self.edges {
            if e.i >= self.rooms.len() || e.j >= self.rooms.len() {
                return Err(Error::Network(format!("edge ({}, {}) references a missing room", e.i, e.j)));
            }
            if e.i == e.j {
                return Err(Error::Network(format!("self-loop on room {}", e.i)));
            }
            if !(e.r > 0.0 && e.r.is_finite()) {
                return Err(Error::Network(format!("edge ({}, {}) needs R > 0", e.i, e.j)));
            }
            if !seen.insert((e.i.min(e.j), e.i.max(e.j))) {
                return Err(Error::Network(format!("duplicate edge ({}, {})", e.i, e.j)));
            }
        }
        if !(self.comfort.t_min <= self.comfort.t_max) {
            return Err(Error::Network("comfort band inverted".into()));
        }
        if !(self.comfort.t_min <= self.t0 && self.t0 <= self.comfort.t_max) {
            return Err(Error::Network(format!("T0 = {} outside the comfort band", self.t0)));
        }
        Ok(())
    }

    /// Indices of heated rooms, in power-channel order.
    pub fn heated_rooms(&self) -> Vec<usize> {
        self.rooms.iter().enumerate().filter(|(_, r)| r.heated).map(|(i, _)| i).collect()
    }

    /// Total conductance from room `i` to ambient and neighbours, W/K.
    fn conductances(&self) -> (Vec<f64>, DMatrix<f64>) {
        let n = self.rooms.len();
        let amb = self.rooms.iter().map(|r| r.r_amb.map_or(0.0, |r| 1.0 / r)).collect();
        let mut g = DMatrix::zeros(n, n);
        for e in &self.edges {
            g[(e.i, e.j)] += 1.0 / e.r;
            g[(e.j, e.i)] += 1.0 / e.r;
        }
        (amb, g)
    }

    /// State-space model plus the ambient disturbance over `steps` intervals.
    pub fn compile(&self, ambient: &AmbientSeries, steps: usize) -> Result<(LinearLossySystem, Trajectory)> {
        self.validate()?;
        if ambient.values.len() < steps {
            return Err(Error::Ambient(format!(
                "series has {} values, horizon needs {steps}",
                ambient.values.len()
            )));
        }
        let n = self.rooms.len();
        let (g_amb, g) = self.conductances();
        for i in 0..n {
            if g_amb[i] == 0.0 && g.row(i).sum() == 0.0 {
                return Err(Error::Network(format!(
                    "room {i} ({}) is thermally disconnected",
                    self.rooms[i].label
                )));
            }
        }
        let heated = self.heated_rooms();
        let m = heated.len();
        let mut a = DMatrix::zeros(n, n);
        for i in 0..n {
            let c = self.rooms[i].capacitance;
            a[(i, i)] = -(g_amb[i] + g.row(i).sum()) / c;
            for j in 0..n {
                if j != i && g[(i, j)] > 0.0 {
                    a[(i, j)] = g[(i, j)] / c;
                }
            }
        }
        let mut b_p = DMatrix::zeros(n, m);
        for (col, &i) in heated.iter().enumerate() {
            b_p[(i, col)] = 1.0 / self.rooms[i].capacitance;
        }
        let b_d = DMatrix::from_fn(n, 1, |i, _| g_amb[i] / self.rooms[i].capacitance);
        let sys = LinearLossySystem::new(
            a,
            b_p,
            b_d,
            DVector::zeros(m),
            DVector::from_iterator(m, heated.iter().map(|&i| self.rooms[i].p_max)),
            DVector::from_element(n, self.comfort.t_min),
            DVector::from_element(n, self.comfort.t_max),
            DVector::from_element(n, self.t0),
        )?
        .with_labels(
            self.rooms.iter().map(|r| r.label.clone()).collect(),
            heated.iter().map(|&i| self.rooms[i].label.clone()).collect(),
        )?;
        let report = sys.validate();
        if !report.is_valid() {
            return Err(Error::Invariant(report.to_string()));
        }
        let d = Trajectory::from_series(ambient.dt, &ambient.values[..steps]);
        Ok((sys, d))
    }

    /// Room `i` alone: neighbours removed, ambient link kept. This is the
    /// "adjacent rooms follow the same temperature" approximation.
    pub fn adiabatic_room(&self, i: usize) -> Result<RcNetwork> {
        let room = self.rooms.get(i).ok_or_else(|| Error::Network(format!("no room {i}")))?;
        Ok(RcNetwork { rooms: vec![room.clone()], edges: vec![], comfort: self.comfort, t0: self.t0 })
    }
}

/// The one-zone SwissHouse: C = 20 MJ/K, 1/R = 50 W/K, 1 kW heating,
/// comfort [22, 24] °C from 23 °C.
pub fn swiss_house() -> RcNetwork {
    RcNetwork {
        rooms: vec![Room {
            label: "SwissHouse".into(),
            capacitance: 20e6,
            r_amb: Some(1.0 / 50.0),
            heated: true,
            p_max: 1000.0,
        }],
        edges: vec![],
        comfort: Comfort::default(),
        t0: DEFAULT_T0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Construction {
    Light,
    Medium,
    Heavy,
}

impl Construction {
    pub const ALL: [Construction; 3] = [Construction::Light, Construction::Medium, Construction::Heavy];

    /// Heat capacity per floor area, J/(m² K).
    pub fn capacity_per_m2(self) -> f64 {
        match self {
            Construction::Light => 0.1e6,
            Construction::Medium => 0.3e6,
            Construction::Heavy => 0.5e6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Insulation {
    VeryWell,
    Well,
    Medium,
    Poor,
}

impl Insulation {
    pub const ALL: [Insulation; 4] = [Insulation::VeryWell, Insulation::Well, Insulation::Medium, Insulation::Poor];

    /// Conductance to ambient per floor area, W/(m² K).
    pub fn conductance_per_m2(self) -> f64 {
        match self {
            Insulation::VeryWell => 0.34,
            Insulation::Well => 0.86,
            Insulation::Medium => 1.14,
            Insulation::Poor => 1.71,
        }
    }
}

/// Default floor area of a one-zone archetype, m².
pub const DEFAULT_ARCHETYPE_AREA: f64 = 100.0;
/// Default heating power density, W/m². Enough to hold 22 °C in the
/// poorly insulated archetypes down to about -5 °C outside.
pub const DEFAULT_POWER_DENSITY: f64 = 50.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArchetypeSpec {
    pub construction: Construction,
    pub insulation: Insulation,
    pub floor_area: f64,
    pub power_density: f64,
}

impl ArchetypeSpec {
    pub fn name(&self) -> String {
        format!("{:?}-{:?}", self.construction, self.insulation)
    }

    pub fn network(&self) -> Result<RcNetwork> {
        if !(self.floor_area > 0.0) || !(self.power_density > 0.0) {
            return Err(Error::InvalidArgument("archetype area and power density must be positive".into()));
        }
        Ok(RcNetwork {
            rooms: vec![Room {
                label: self.name(),
                capacitance: self.construction.capacity_per_m2() * self.floor_area,
                r_amb: Some(1.0 / (self.insulation.conductance_per_m2() * self.floor_area)),
                heated: true,
                p_max: self.power_density * self.floor_area,
            }],
            edges: vec![],
            comfort: Comfort::default(),
            t0: DEFAULT_T0,
        })
    }
}

/// All 3 × 4 construction/insulation combinations, light to heavy, best to
/// worst insulated.
pub fn archetype_catalog(floor_area: f64, power_density: f64) -> Result<Vec<ArchetypeSpec>> {
    if !(floor_area > 0.0) || !(power_density > 0.0) {
        return Err(Error::InvalidArgument("archetype area and power density must be positive".into()));
    }
    Ok(Construction::ALL
        .iter()
        .flat_map(|&construction| {
            Insulation::ALL.iter().map(move |&insulation| ArchetypeSpec {
                construction,
                insulation,
                floor_area,
                power_density,
            })
        })
        .collect())
}

/// Parameters of the three-floor, three-column building. Conductances are
/// W/K per room surface.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NineRoomParams {
    pub with_indoor_insulation: bool,
    /// Heat capacity of a room, J/K.
    pub room_capacitance: f64,
    /// Extra heat capacity per exterior surface, J/K.
    pub capacitance_per_exterior_surface: f64,
    pub facade_conductance: f64,
    /// Gable wall of the end rooms.
    pub side_conductance: f64,
    pub roof_conductance: f64,
    pub ground_conductance: f64,
    /// Uninsulated partition between neighbouring rooms on one floor.
    pub wall_conductance: f64,
    /// Uninsulated floor/ceiling slab between stacked rooms.
    pub slab_conductance: f64,
    /// Indoor resistances are multiplied by this factor when insulated.
    pub insulation_factor: f64,
    pub room_p_max: f64,
    pub comfort: Comfort,
    pub t0: f64,
}

impl Default for NineRoomParams {
    fn default() -> Self {
        // 20 m² rooms of medium construction (0.3 MJ/m²K); glazed front and
        // back facades dominate the envelope, roof and ground slab are well
        // insulated, partitions are bare masonry and timber slabs.
        Self {
            with_indoor_insulation: false,
            room_capacitance: 6.0e6,
            capacitance_per_exterior_surface: 0.0,
            facade_conductance: 12.0,
            side_conductance: 1.0,
            roof_conductance: 1.5,
            ground_conductance: 1.0,
            wall_conductance: 6.0,
            slab_conductance: 10.0,
            insulation_factor: 10.0,
            room_p_max: 1000.0,
            comfort: Comfort::default(),
            t0: DEFAULT_T0,
        }
    }
}

/// Row-major room index of floor `f` (0 = ground) and column `c`.
pub fn nine_room_index(floor: usize, column: usize) -> usize {
    floor * 3 + column
}

/// Conductance of every room to ambient, W/K, in room order.
pub fn exterior_conductances(rc: &RcNetwork) -> Vec<f64> {
    rc.rooms.iter().map(|r| r.r_amb.map_or(0.0, |r| 1.0 / r)).collect()
}

/// Three floors of three rooms side by side. Every room has a front and a back
/// facade, end rooms a side facade, top rooms a roof and ground rooms a slab
/// on grade.
pub fn nine_room_builder(params: &NineRoomParams) -> RcNetwork {
    let indoor = if params.with_indoor_insulation { params.insulation_factor } else { 1.0 };
    let mut rooms = Vec::with_capacity(9);
    for floor in 0..3 {
        for column in 0..3 {
            let mut g = 2.0 * params.facade_conductance;
            let mut surfaces = 2.0;
            if column != 1 {
                g += params.side_conductance;
                surfaces += 1.0;
            }
            if floor == 2 {
                g += params.roof_conductance;
                surfaces += 1.0;
            }
            if floor == 0 {
                g += params.ground_conductance;
                surfaces += 1.0;
            }
            rooms.push(Room {
                label: format!("F{floor}C{column}"),
                capacitance: params.room_capacitance + surfaces * params.capacitance_per_exterior_surface,
                r_amb: Some(1.0 / g),
                heated: true,
                p_max: params.room_p_max,
            });
        }
    }
    let mut edges = Vec::new();
    for floor in 0..3 {
        for column in 0..3 {
            let i = nine_room_index(floor, column);
            if column < 2 {
                edges.push(Edge { i, j: nine_room_index(floor, column + 1), r: indoor / params.wall_conductance });
            }
            if floor < 2 {
                edges.push(Edge { i, j: nine_room_index(floor + 1, column), r: indoor / params.slab_conductance });
            }
        }
    }
    RcNetwork { rooms, edges, comfort: params.comfort, t0: params.t0 }
}

/// Ambient temperature per step, °C.
#[derive(Debug, Clone, PartialEq)]
pub struct AmbientSeries {
    pub dt: f64,
    pub values: Vec<f64>,
    pub source: String,
}

impl AmbientSeries {
    pub fn constant(value: f64, dt: f64, steps: usize) -> Self {
        Self { dt, values: vec![value; steps], source: format!("constant {value} degC") }
    }

    /// Values at the start of each requested step, linearly interpolated.
    pub fn resample(&self, dt: f64, steps: usize) -> Result<AmbientSeries> {
        if self.values.is_empty() {
            return Err(Error::Ambient("empty series".into()));
        }
        let last_t = (self.values.len() - 1) as f64 * self.dt;
        let values = (0..steps)
            .map(|l| {
                let t = l as f64 * dt;
                if t > last_t + 1e-9 {
                    return Err(Error::Ambient(format!("series ends at {last_t} s, need {t} s")));
                }
                let pos = t / self.dt;
                let i = (pos.floor() as usize).min(self.values.len() - 1);
                let frac = pos - i as f64;
                Ok(if i + 1 < self.values.len() {
                    self.values[i] * (1.0 - frac) + self.values[i + 1] * frac
                } else {
                    self.values[i]
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(AmbientSeries { dt, values, source: self.source.clone() })
    }
}

/// Reads `timestamp_s,temp_C` rows on a uniform, strictly increasing grid.
pub fn ambient_from_csv(path: &Path) -> Result<AmbientSeries> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_path(path)?;
    let mut times = Vec::new();
    let mut values = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        let field = |i: usize| -> Result<f64> {
            record
                .get(i)
                .filter(|s| !s.is_empty())
                .ok_or_else(|| Error::Ambient(format!("row {}: missing value", line + 1)))?
                .parse::<f64>()
                .map_err(|e| Error::Ambient(format!("row {}: {e}", line + 1)))
        };
        let (t, v) = (field(0)?, field(1)?);
        if !t.is_finite() || !v.is_finite() {
            return Err(Error::Ambient(format!("row {}: non-finite value", line + 1)));
        }
        times.push(t);
        values.push(v);
    }
    if values.is_empty() {
        return Err(Error::Ambient(format!("{} has no data rows", path.display())));
    }
    let dt = if times.len() > 1 { times[1] - times[0] } else { 0.0 };
    if times.len() > 1 {
        if !(dt > 0.0) {
            return Err(Error::Ambient("timestamps must be strictly increasing".into()));
        }
        for w in times.windows(2) {
            if ((w[1] - w[0]) - dt).abs() > 1e-6 * dt {
                return Err(Error::Ambient(format!("non-uniform grid at t = {} s", w[1])));
            }
        }
    }
    Ok(AmbientSeries { dt, values, source: path.display().to_string() })
}

/// `mean + amplitude sin(2π t / period)` sampled at the start of each step.
pub fn synth_ambient(mean: f64, amplitude: f64, period: f64, dt: f64, steps: usize) -> Result<AmbientSeries> {
    if ![mean, amplitude, period, dt].iter().all(|v| v.is_finite()) || period <= 0.0 || dt <= 0.0 {
        return Err(Error::Ambient("synthetic parameters must be finite with positive period and dt".into()));
    }
    let values = (0..steps)
        .map(|l| mean + amplitude * (2.0 * std::f64::consts::PI * l as f64 * dt / period).sin())
        .collect();
    Ok(AmbientSeries {
        dt,
        values,
        source: format!("synthetic mean={mean} amplitude={amplitude} period={period}"),
    })
}
