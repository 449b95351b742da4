//! Cumulative-energy envelopes and their CSV form.

use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EnvelopeKind {
    #[serde(rename = "TD", alias = "td")]
    Td,
    #[serde(rename = "TI_scalar", alias = "ti_scalar")]
    TiScalar,
    #[serde(rename = "TI_distributed_per_load", alias = "TI_distributed", alias = "ti_distributed")]
    TiDistributed,
    #[serde(rename = "TI_centralized", alias = "ti_centralized")]
    TiCentralized,
}

impl EnvelopeKind {
    pub const ALL: [EnvelopeKind; 4] =
        [EnvelopeKind::Td, EnvelopeKind::TiScalar, EnvelopeKind::TiDistributed, EnvelopeKind::TiCentralized];

    pub fn as_str(self) -> &'static str {
        match self {
            EnvelopeKind::Td => "TD",
            EnvelopeKind::TiScalar => "TI_scalar",
            EnvelopeKind::TiDistributed => "TI_distributed_per_load",
            EnvelopeKind::TiCentralized => "TI_centralized",
        }
    }

    pub fn is_trajectory_independent(self) -> bool {
        self != EnvelopeKind::Td
    }
}

impl fmt::Display for EnvelopeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EnvelopeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "TD" | "td" => Ok(EnvelopeKind::Td),
            "TI_scalar" | "ti_scalar" => Ok(EnvelopeKind::TiScalar),
            "TI_distributed_per_load" | "TI_distributed" | "ti_distributed" => Ok(EnvelopeKind::TiDistributed),
            "TI_centralized" | "ti_centralized" => Ok(EnvelopeKind::TiCentralized),
            other => Err(Error::InvalidArgument(format!("unknown envelope kind {other:?}"))),
        }
    }
}

/// Lower and upper cumulative-energy bounds on the grid `k·dt`, `k = 0..=K`.
///
/// Beyond `defined_up_to` the bounds carry no guarantee (the upper bound has
/// dropped below the lower one somewhere before).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeSeries {
    pub kind: EnvelopeKind,
    pub dt: f64,
    /// Joules.
    pub e_down: Vec<f64>,
    /// Joules.
    pub e_up: Vec<f64>,
    pub defined_up_to: usize,
    /// Lead time whose optimization had no feasible point, if any.
    #[serde(default)]
    pub infeasible_from: Option<usize>,
    #[serde(default)]
    pub label: String,
}

/// Slack for the ordering of the two bounds, joules.
pub const ORDER_TOL: f64 = 1e-6;

impl EnvelopeSeries {
    pub fn new(kind: EnvelopeKind, dt: f64, e_down: Vec<f64>, e_up: Vec<f64>) -> Result<Self> {
        if e_down.len() != e_up.len() || e_down.is_empty() {
            return Err(Error::Dimension(format!(
                "envelope bounds have lengths {} and {}",
                e_down.len(),
                e_up.len()
            )));
        }
        let mut env = Self {
            kind,
            dt,
            e_down,
            e_up,
            defined_up_to: 0,
            infeasible_from: None,
            label: String::new(),
        };
        env.defined_up_to = env.first_crossing().map_or(env.steps(), |k| k - 1);
        Ok(env)
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    /// Number of steps K; the series holds K + 1 points.
    pub fn steps(&self) -> usize {
        self.e_up.len() - 1
    }

    /// First step whose upper bound lies below its lower bound.
    pub fn first_crossing(&self) -> Option<usize> {
        (0..self.e_up.len()).find(|&k| !(self.e_up[k] >= self.e_down[k] - ORDER_TOL))
    }

    pub fn width(&self, k: usize) -> f64 {
        if k > self.defined_up_to {
            0.0
        } else {
            (self.e_up[k] - self.e_down[k]).max(0.0)
        }
    }

    /// Keeps steps `0..=steps`.
    pub fn truncated(&self, steps: usize) -> EnvelopeSeries {
        let n = steps.min(self.steps());
        EnvelopeSeries {
            kind: self.kind,
            dt: self.dt,
            e_down: self.e_down[..=n].to_vec(),
            e_up: self.e_up[..=n].to_vec(),
            defined_up_to: self.defined_up_to.min(n),
            infeasible_from: self.infeasible_from.filter(|&k| k <= n),
            label: self.label.clone(),
        }
    }

    /// Element-wise sum of envelopes on a common grid.
    pub fn sum(kind: EnvelopeKind, parts: &[EnvelopeSeries]) -> Result<EnvelopeSeries> {
        let first = parts.first().ok_or_else(|| Error::InvalidArgument("nothing to sum".into()))?;
        let len = first.e_up.len();
        if parts.iter().any(|p| p.e_up.len() != len || p.dt != first.dt) {
            return Err(Error::Dimension("envelopes to sum live on different grids".into()));
        }
        let e_down = (0..len).map(|k| parts.iter().map(|p| p.e_down[k]).sum()).collect();
        let e_up = (0..len).map(|k| parts.iter().map(|p| p.e_up[k]).sum()).collect();
        let mut env = EnvelopeSeries::new(kind, first.dt, e_down, e_up)?;
        env.defined_up_to = parts.iter().map(|p| p.defined_up_to).min().unwrap_or(0);
        Ok(env)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(
            out,
            "# kind={},dt_s={},defined_up_to={}{}",
            self.kind,
            self.dt,
            self.defined_up_to,
            if self.label.is_empty() { String::new() } else { format!(",label={}", self.label) }
        )?;
        writeln!(out, "step,time_s,E_down_J,E_up_J")?;
        for k in 0..self.e_up.len() {
            writeln!(out, "{},{},{:.6},{:.6}", k, k as f64 * self.dt, self.e_down[k], self.e_up[k])?;
        }
        Ok(())
    }

    pub fn to_csv_file(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(file))
    }

    pub fn read_csv<R: BufRead>(input: R, source: &Path) -> Result<EnvelopeSeries> {
        let schema = |msg: String| Error::Schema { path: source.to_path_buf(), msg };
        let mut lines = input.lines();
        let header = lines.next().ok_or_else(|| schema("empty file".into()))??;
        let meta = header
            .strip_prefix("# ")
            .ok_or_else(|| schema("missing '# kind=..,dt_s=..' header".into()))?;
        let mut kind = None;
        let mut dt = None;
        let mut defined = None;
        let mut label = String::new();
        for part in meta.split(',') {
            let (key, value) = part.split_once('=').ok_or_else(|| schema(format!("bad header field {part:?}")))?;
            match key.trim() {
                "kind" => kind = Some(value.trim().parse::<EnvelopeKind>()?),
                "dt_s" => dt = Some(value.trim().parse::<f64>().map_err(|e| schema(e.to_string()))?),
                "defined_up_to" => defined = Some(value.trim().parse::<usize>().map_err(|e| schema(e.to_string()))?),
                "label" => label = value.trim().to_string(),
                _ => {}
            }
        }
        let columns = lines.next().ok_or_else(|| schema("missing column header".into()))??;
        if columns.trim() != "step,time_s,E_down_J,E_up_J" {
            return Err(schema(format!("unexpected columns {columns:?}")));
        }
        let mut e_down = Vec::new();
        let mut e_up = Vec::new();
        for (i, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 4 {
                return Err(schema(format!("row {i} has {} fields", fields.len())));
            }
            let num = |s: &str| s.trim().parse::<f64>().map_err(|e| schema(format!("row {i}: {e}")));
            e_down.push(num(fields[2])?);
            e_up.push(num(fields[3])?);
        }
        let mut env = EnvelopeSeries::new(
            kind.ok_or_else(|| schema("header lacks kind".into()))?,
            dt.ok_or_else(|| schema("header lacks dt_s".into()))?,
            e_down,
            e_up,
        )?;
        if let Some(d) = defined {
            env.defined_up_to = d.min(env.steps());
        }
        env.label = label;
        Ok(env)
    }

    pub fn from_csv_file(path: &Path) -> Result<EnvelopeSeries> {
        let file = std::fs::File::open(path)?;
        Self::read_csv(std::io::BufReader::new(file), path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defined_up_to_stops_before_crossing() {
        let env = EnvelopeSeries::new(
            EnvelopeKind::TiScalar,
            900.0,
            vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0],
            vec![0.0, 2.0, 3.0, 3.5, 4.0, 4.5, 4.7],
        )
        .unwrap();
        assert_eq!(env.first_crossing(), Some(5));
        assert_eq!(env.defined_up_to, 4);
        assert_eq!(env.width(5), 0.0);
    }

    #[test]
    fn csv_round_trip() {
        let env = EnvelopeSeries::new(EnvelopeKind::Td, 900.0, vec![0.0, 0.5, 1.25], vec![0.0, 9e5, 1.8e6])
            .unwrap()
            .with_label("room0");
        let mut buf = Vec::new();
        env.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("# kind=TD,dt_s=900,defined_up_to=2,label=room0\nstep,time_s,E_down_J,E_up_J\n"));
        let back = EnvelopeSeries::read_csv(&buf[..], Path::new("mem")).unwrap();
        assert_eq!(back, env);
    }

    #[test]
    fn kind_names() {
        for kind in EnvelopeKind::ALL {
            assert_eq!(kind.as_str().parse::<EnvelopeKind>().unwrap(), kind);
        }
        assert!("TX".parse::<EnvelopeKind>().is_err());
    }
}
