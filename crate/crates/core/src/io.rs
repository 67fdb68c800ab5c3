//! File formats: CSV for matrices and tables, JSON for reports.

use std::fs;
use std::path::Path;

use nalgebra::DMatrix;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::design::DesignPoint;
use crate::error::{NliError, Result};
use crate::sim::HomPoint;

/// Corner label of matrix CSVs: rows are signal wavelengths, columns idler wavelengths.
pub const MATRIX_CORNER: &str = "signal_nm\\idler_nm";

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

/// Wavelength-labelled real matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelledMatrix {
    pub signal_nm: Vec<f64>,
    pub idler_nm: Vec<f64>,
    pub values: DMatrix<f64>,
}

pub fn write_matrix_csv(path: &Path, m: &LabelledMatrix) -> Result<()> {
    if m.values.nrows() != m.signal_nm.len() || m.values.ncols() != m.idler_nm.len() {
        return Err(NliError::GridMismatch("matrix labels do not match its shape".into()));
    }
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec![MATRIX_CORNER.to_string()];
    header.extend(m.idler_nm.iter().map(|x| x.to_string()));
    w.write_record(&header)?;
    for (r, s) in m.signal_nm.iter().enumerate() {
        let mut row = vec![s.to_string()];
        row.extend(m.values.row(r).iter().map(|x| x.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn parse_f64(s: &str) -> Result<f64> {
    s.trim()
        .parse()
        .map_err(|_| NliError::Parse(format!("not a number: {s:?}")))
}

pub fn read_matrix_csv(path: &Path) -> Result<LabelledMatrix> {
    let mut r = csv::ReaderBuilder::new().has_headers(false).from_path(path)?;
    let mut records = r.records();
    let header = records
        .next()
        .ok_or_else(|| NliError::Parse("empty matrix file".into()))??;
    let idler_nm = header.iter().skip(1).map(parse_f64).collect::<Result<Vec<_>>>()?;
    let mut signal_nm = Vec::new();
    let mut data = Vec::new();
    for rec in records {
        let rec = rec?;
        if rec.len() != idler_nm.len() + 1 {
            return Err(NliError::Parse("ragged matrix row".into()));
        }
        signal_nm.push(parse_f64(&rec[0])?);
        for v in rec.iter().skip(1) {
            data.push(parse_f64(v)?);
        }
    }
    let values = DMatrix::from_row_slice(signal_nm.len(), idler_nm.len(), &data);
    Ok(LabelledMatrix {
        signal_nm,
        idler_nm,
        values,
    })
}

pub fn write_hom_csv(path: &Path, points: &[HomPoint]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for p in points {
        w.serialize(HomRow::from(p))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_hom_csv(path: &Path) -> Result<Vec<HomPoint>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize::<HomRow>()
        .map(|row| Ok(row?.into()))
        .collect()
}

/// Column order of the HOM scan CSV.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct HomRow {
    delay_s: f64,
    fourfold: u64,
    n_pulses: u64,
    overlap: f64,
    rate: f64,
    rate_stderr: f64,
}

impl From<&HomPoint> for HomRow {
    fn from(p: &HomPoint) -> Self {
        Self {
            delay_s: p.delay_s,
            fourfold: p.fourfold,
            n_pulses: p.n_pulses,
            overlap: p.overlap,
            rate: p.rate,
            rate_stderr: p.rate_stderr,
        }
    }
}

impl From<HomRow> for HomPoint {
    fn from(r: HomRow) -> Self {
        Self {
            delay_s: r.delay_s,
            overlap: r.overlap,
            rate: r.rate,
            rate_stderr: r.rate_stderr,
            fourfold: r.fourfold,
            n_pulses: r.n_pulses,
        }
    }
}

/// Flat sweep row; empty cells where no island was scored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SweepRow {
    pump_fwhm_nm: f64,
    smf_length_m: f64,
    stages: u32,
    island_index: Option<usize>,
    island_order: Option<f64>,
    roundness: Option<f64>,
    signal_center_nm: Option<f64>,
    idler_center_nm: Option<f64>,
    bandwidth_nm: Option<f64>,
    mode_number: Option<f64>,
    h_s: Option<f64>,
    h_i: Option<f64>,
    brightness: Option<f64>,
    composite: Option<f64>,
}

pub fn write_sweep_csv(path: &Path, rows: &[DesignPoint]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for p in rows {
        w.serialize(SweepRow {
            pump_fwhm_nm: p.pump_fwhm_nm,
            smf_length_m: p.smf_length_m,
            stages: p.stages,
            island_index: p.island_index,
            island_order: p.island_order,
            roundness: p.roundness,
            signal_center_nm: p.filter.map(|f| f.signal_center_nm),
            idler_center_nm: p.filter.map(|f| f.idler_center_nm),
            bandwidth_nm: p.filter.map(|f| f.signal_bandwidth_nm),
            mode_number: p.scores.map(|s| s.mode_number),
            h_s: p.scores.map(|s| s.h_s),
            h_i: p.scores.map(|s| s.h_i),
            brightness: p.scores.map(|s| s.brightness),
            composite: p.scores.map(|s| s.composite),
        })?;
    }
    w.flush()?;
    Ok(())
}

/// Per-job index of outputs. `created_unix_s` is the only field that varies between identical runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: u64,
    pub created_unix_s: u64,
    pub files: Vec<String>,
    /// Resolved configuration.
    pub config: serde_json::Value,
}

impl Manifest {
    pub fn new(command: &str, seed: u64, config: &impl Serialize, files: Vec<String>) -> Result<Self> {
        let created_unix_s = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        Ok(Self {
            tool: "nli".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            seed,
            created_unix_s,
            files,
            config: serde_json::to_value(config)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmp(name: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join(format!("nli-io-{}-{name}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        dir.join(name)
    }

    #[test]
    fn matrix_round_trip() {
        let m = LabelledMatrix {
            signal_nm: vec![1550.0, 1550.1],
            idler_nm: vec![1540.0, 1540.05, 1540.1],
            values: DMatrix::from_row_slice(2, 3, &[1.0, 0.1 + 0.2, 1e-300, 3.0, f64::MIN_POSITIVE, 2.5e12]),
        };
        let p = tmp("m.csv");
        write_matrix_csv(&p, &m).unwrap();
        assert_eq!(read_matrix_csv(&p).unwrap(), m);
    }

    #[test]
    fn hom_round_trip() {
        let pts = vec![HomPoint {
            delay_s: -1.5e-12,
            overlap: 0.3,
            rate: 1.234e-9,
            rate_stderr: 1e-12,
            fourfold: 42,
            n_pulses: 1_000_000,
        }];
        let p = tmp("h.csv");
        write_hom_csv(&p, &pts).unwrap();
        assert_eq!(read_hom_csv(&p).unwrap(), pts);
        let head = fs::read_to_string(&p).unwrap();
        assert!(head.starts_with("delay_s,fourfold,n_pulses"));
    }

    #[test]
    fn malformed_matrix() {
        let p = tmp("bad.csv");
        fs::write(&p, "x,1,2\n1,2\n").unwrap();
        assert!(read_matrix_csv(&p).is_err());
    }
}
