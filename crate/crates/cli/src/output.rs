//! Result files and the reproducibility manifest.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use sbvqe::hilbert::DensityOperator;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

/// Writes files into one directory and remembers their hashes.
pub struct OutputDir {
    dir: PathBuf,
    hashes: BTreeMap<String, String>,
}

impl OutputDir {
    pub fn create(dir: &Path) -> CliResult<Self> {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        Ok(Self { dir: dir.to_path_buf(), hashes: BTreeMap::new() })
    }

    pub fn path(&self) -> &Path {
        &self.dir
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> CliResult<()> {
        let path = self.dir.join(name);
        fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))?;
        self.hashes.insert(name.to_string(), sha256_hex(bytes));
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> CliResult<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    pub fn write_jsonl<T: Serialize>(&mut self, name: &str, items: &[T]) -> CliResult<()> {
        let mut text = String::new();
        for item in items {
            text.push_str(&serde_json::to_string(item)?);
            text.push('\n');
        }
        self.write(name, text.as_bytes())
    }

    pub fn write_csv<T: Serialize>(&mut self, name: &str, rows: &[T]) -> CliResult<()> {
        let bytes = csv_bytes(rows)?;
        self.write(name, &bytes)
    }

    /// Writes `manifest.json` covering everything written so far.
    pub fn finish(mut self, command: &str, cfg: &ExperimentConfig) -> CliResult<Manifest> {
        let mut cfg = cfg.clone();
        cfg.output.out_dir = PathBuf::from(".");
        let manifest = Manifest {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed: cfg.seed,
            config_sha256: sha256_hex(cfg.canonical_json().as_bytes()),
            config: cfg,
            outputs: std::mem::take(&mut self.hashes),
        };
        self.write_json("manifest.json", &manifest)?;
        Ok(manifest)
    }
}

pub fn csv_bytes<T: Serialize>(rows: &[T]) -> CliResult<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner().map_err(|e| CliError::io("csv buffer", e.into_error()))
}

pub fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<Vec<T>> {
    let file = std::fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut r = csv::Reader::from_reader(file);
    r.deserialize().collect::<Result<Vec<T>, _>>().map_err(CliError::from)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub seed: Option<u64>,
    pub config_sha256: String,
    pub config: ExperimentConfig,
    /// File name → SHA-256 of its bytes.
    pub outputs: BTreeMap<String, String>,
}

/// Row-major `[re, im]` pairs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityJson {
    pub label: String,
    pub sites: Vec<usize>,
    pub dim: usize,
    pub data: Vec<[f64; 2]>,
}

impl DensityJson {
    pub fn new(label: impl Into<String>, rho: &DensityOperator) -> Self {
        let m = rho.matrix();
        let mut data = Vec::with_capacity(m.len());
        for r in 0..m.nrows() {
            for c in 0..m.ncols() {
                data.push([m[(r, c)].re, m[(r, c)].im]);
            }
        }
        Self { label: label.into(), sites: rho.sites().to_vec(), dim: m.nrows(), data }
    }
}

/// One line of the sweep CSV. Angles are in units of π, space separated.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub t_minus: f64,
    pub delta: f64,
    pub source: String,
    pub z_r: Option<f64>,
    pub z_r_err: Option<f64>,
    pub z_t: Option<f64>,
    pub z_t_err: Option<f64>,
    pub energy: Option<f64>,
    pub energy_err: Option<f64>,
    pub rel_error: Option<f64>,
    pub e_exact: Option<f64>,
    pub z_r_exact: Option<f64>,
    pub z_t_exact: Option<f64>,
    pub theta_opt: String,
    pub error: String,
}

pub fn format_theta(theta: &[f64]) -> String {
    theta.iter().map(|t| t.to_string()).collect::<Vec<_>>().join(" ")
}

pub fn parse_theta(s: &str) -> CliResult<Vec<f64>> {
    s.split_whitespace()
        .map(|t| t.parse::<f64>().map_err(|_| CliError::Config(format!("bad angle {t:?}"))))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sweep_csv_round_trips() {
        let row = SweepRow {
            t_minus: -0.333,
            delta: 4.0,
            source: "circuit-sim".into(),
            z_r: Some(0.1 + 0.2),
            z_r_err: None,
            z_t: Some(-1e-17),
            z_t_err: None,
            energy: Some(-9.517540966287),
            energy_err: Some(0.01),
            rel_error: Some(0.0),
            e_exact: Some(-9.5),
            z_r_exact: Some(1.0),
            z_t_exact: None,
            theta_opt: format_theta(&[0.25, -1.0 / 3.0]),
            error: String::new(),
        };
        let bytes = csv_bytes(&[row.clone()]).unwrap();
        let mut r = csv::Reader::from_reader(bytes.as_slice());
        let back: Vec<SweepRow> = r.deserialize().collect::<Result<_, _>>().unwrap();
        assert_eq!(back, vec![row]);
        assert_eq!(csv_bytes(&back).unwrap(), bytes);
        assert_eq!(parse_theta(&back[0].theta_opt).unwrap(), vec![0.25, -1.0 / 3.0]);
    }
}
