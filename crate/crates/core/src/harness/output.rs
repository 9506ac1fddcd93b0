//! Result tables: `results.csv`, `summary.csv` and `config.lock.json`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{config_hash, ExperimentConfig, TrialResult};
use crate::error::{Error, Result};
use crate::simulation::Split;

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Config(format!("csv: {other:?}")),
    }
}

pub fn write_results_csv(path: &Path, rows: &[TrialResult]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_results_csv(path: &Path) -> Result<Vec<TrialResult>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    r.deserialize().map(|row| row.map_err(csv_err)).collect()
}

/// Mean and standard error over seeds for one `(estimator, split, metric, K, κ)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub estimator: String,
    pub split: Split,
    pub metric: String,
    #[serde(rename = "K")]
    pub k: usize,
    pub kappa: f64,
    /// Seeds with a finite value.
    pub n: usize,
    /// Seeds whose row was NaN.
    pub n_failed: usize,
    pub mean: f64,
    /// Sample standard deviation over `sqrt(n)`; 0 when `n = 1`.
    pub stderr: f64,
    pub single_seed: bool,
}

/// Groups rows in first-seen order and summarizes each group.
pub fn aggregate(rows: &[TrialResult]) -> Vec<SummaryRow> {
    let mut groups: Vec<(&TrialResult, Vec<f64>, usize)> = Vec::new();
    for r in rows {
        let pos = groups.iter().position(|(g, _, _)| {
            g.estimator == r.estimator && g.split == r.split && g.metric == r.metric && g.k == r.k && g.kappa == r.kappa
        });
        let pos = pos.unwrap_or_else(|| {
            groups.push((r, Vec::new(), 0));
            groups.len() - 1
        });
        if r.value.is_nan() {
            groups[pos].2 += 1;
        } else {
            groups[pos].1.push(r.value);
        }
    }
    groups
        .into_iter()
        .map(|(g, vals, failed)| {
            let n = vals.len();
            let mean = if n == 0 { f64::NAN } else { vals.iter().sum::<f64>() / n as f64 };
            let stderr = if n < 2 {
                0.0
            } else {
                let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
                (var / n as f64).sqrt()
            };
            SummaryRow {
                estimator: g.estimator.clone(),
                split: g.split,
                metric: g.metric.clone(),
                k: g.k,
                kappa: g.kappa,
                n,
                n_failed: failed,
                mean,
                stderr,
                single_seed: n == 1,
            }
        })
        .collect()
}

pub fn write_summary_csv(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Fully resolved configuration and the seeds it ran with.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfigLock {
    pub crate_version: String,
    pub config_hash: String,
    pub config: ExperimentConfig,
    pub seeds: Vec<u64>,
    pub kappas: Vec<f64>,
    /// Propensity weights are used as-is in WPEHE, not renormalized within the top K.
    pub wpehe_weights: String,
}

impl ConfigLock {
    pub fn new(config: &ExperimentConfig, kappas: &[f64]) -> Result<Self> {
        Ok(Self {
            crate_version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: config_hash(config)?,
            config: config.clone(),
            seeds: config.seeds(),
            kappas: kappas.to_vec(),
            wpehe_weights: "raw".into(),
        })
    }
}

pub fn write_config_lock(path: &Path, lock: &ConfigLock) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(lock)? + "\n")?;
    Ok(())
}
