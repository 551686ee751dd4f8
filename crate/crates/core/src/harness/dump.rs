//! Result files: mapping JSON + CSV, annealing telemetry, sweep table, summary.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::annealer::TempRecord;
use crate::codebook::{AffineModel, DecoderTable, GridEncoder, RandomizedEncoder};
use crate::error::{Error, Result};

use super::run::RunResult;

/// One encoder as written to `mapping.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderDump {
    pub grid: Vec<f64>,
    /// Deterministic channel input per grid node.
    pub hardened: Vec<f64>,
    /// Local models and `assoc[i * k + m]`; absent for unstructured encoders.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub models: Option<Vec<AffineModel>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub assoc: Option<Vec<f64>>,
}

impl EncoderDump {
    pub fn from_grid(enc: &GridEncoder) -> Self {
        EncoderDump {
            grid: enc.grid.clone(),
            hardened: enc.values.clone(),
            models: None,
            assoc: None,
        }
    }

    /// Final deterministic values plus the annealed model structure.
    pub fn with_models(enc: &GridEncoder, annealed: &RandomizedEncoder) -> Self {
        EncoderDump {
            models: Some(annealed.models.clone()),
            assoc: Some(annealed.assoc.clone()),
            ..Self::from_grid(enc)
        }
    }

    pub fn grid_encoder(&self) -> GridEncoder {
        GridEncoder::new(self.grid.clone(), self.hardened.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MappingDump {
    pub encoder1: EncoderDump,
    pub encoder2: EncoderDump,
    pub decoder: DecoderTable,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    w.write_all(b"\n").and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Writes `mapping.json` at `json` and the hardened `(x, g1, g2)` table at `csv`.
pub fn dump_mapping(mapping: &MappingDump, json: &Path, csv: &Path) -> Result<()> {
    write_json(json, mapping)?;
    write_mapping_csv(mapping, csv)
}

pub fn load_mapping(path: &Path) -> Result<MappingDump> {
    read_json(path)
}

/// Hardened encoders, one row per source grid node. The two encoders share a
/// row index; their grids are written separately when they differ.
pub fn write_mapping_csv(mapping: &MappingDump, path: &Path) -> Result<()> {
    let w = create(path)?;
    write_mapping_csv_to(mapping, w).map_err(|e| csv_err(path, e))
}

pub fn write_mapping_csv_to<W: Write>(mapping: &MappingDump, out: W) -> std::result::Result<(), csv::Error> {
    let (e1, e2) = (&mapping.encoder1, &mapping.encoder2);
    if e1.grid.len() != e2.grid.len() || e1.hardened.len() != e1.grid.len() || e2.hardened.len() != e2.grid.len() {
        return Err(std::io::Error::new(std::io::ErrorKind::InvalidData, "encoder grid and value lengths differ").into());
    }
    let mut w = csv::Writer::from_writer(out);
    let shared = e1.grid == e2.grid;
    let header: &[&str] = if shared { &["x", "g1", "g2"] } else { &["x1", "g1", "x2", "g2"] };
    w.write_record(header)?;
    for i in 0..e1.grid.len() {
        let row: Vec<String> = if shared {
            vec![e1.grid[i].to_string(), e1.hardened[i].to_string(), e2.hardened[i].to_string()]
        } else {
            vec![
                e1.grid[i].to_string(),
                e1.hardened[i].to_string(),
                e2.grid[i].to_string(),
                e2.hardened[i].to_string(),
            ]
        };
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Streaming writer for `anneal.csv`.
pub struct AnnealCsv {
    path: std::path::PathBuf,
    w: csv::Writer<BufWriter<File>>,
}

pub const ANNEAL_COLUMNS: [&str; 10] = ["T", "D", "P1", "P2", "H", "J", "F", "clusters1", "clusters2", "inner_iters"];

impl AnnealCsv {
    pub fn create(path: &Path) -> Result<Self> {
        let mut w = csv::Writer::from_writer(create(path)?);
        w.write_record(ANNEAL_COLUMNS).map_err(|e| csv_err(path, e))?;
        Ok(AnnealCsv {
            path: path.to_path_buf(),
            w,
        })
    }

    pub fn push(&mut self, r: &TempRecord) -> Result<()> {
        let row = [
            r.t.to_string(),
            r.d.to_string(),
            r.p1.to_string(),
            r.p2.to_string(),
            r.h.to_string(),
            r.j.to_string(),
            r.f.to_string(),
            r.clusters1.to_string(),
            r.clusters2.to_string(),
            r.inner_iters.to_string(),
        ];
        self.w.write_record(&row).map_err(|e| csv_err(&self.path, e))?;
        // progress is visible while long runs are going
        self.w.flush().map_err(|e| Error::io(&self.path, e))
    }
}

pub fn write_anneal_csv(path: &Path, records: &[TempRecord]) -> Result<()> {
    let mut w = AnnealCsv::create(path)?;
    records.iter().try_for_each(|r| w.push(r))
}

pub const SWEEP_COLUMNS: [&str; 8] = ["lambda1", "lambda2", "P1", "P2", "CSNR_dB", "SNR_dB", "method", "flagged"];

pub fn write_sweep_csv(path: &Path, rows: &[RunResult]) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(SWEEP_COLUMNS).map_err(|e| csv_err(path, e))?;
    for r in rows {
        let row = [
            r.lambda1.to_string(),
            r.lambda2.to_string(),
            r.p1.to_string(),
            r.p2.to_string(),
            r.csnr_db.to_string(),
            r.snr_db.to_string(),
            r.method.to_string(),
            r.flagged.to_string(),
        ];
        w.write_record(&row).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads any of the CSV outputs back as header plus string rows.
pub fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let header = r
        .headers()
        .map_err(|e| csv_err(path, e))?
        .iter()
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        rows.push(rec.map_err(|e| csv_err(path, e))?.iter().map(str::to_string).collect());
    }
    Ok((header, rows))
}
