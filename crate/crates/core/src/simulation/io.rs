//! JSON-lines dataset files.
//!
//! Line 1 is a metadata object, line 2 is the treatment catalog, and every
//! following line is one unit `{"x": [...], "t": int, "y": float}`. The oracle
//! (outcome model and propensity) lives in a separate `ground_truth.json` so
//! that loading a dataset never exposes it.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graphs::Graph;
use crate::nn::Tensor;
use crate::simulation::{
    Benchmark, Dataset, FeatureScaling, GroundTruth, PropensityModel, SimConfig, Split,
};

pub const DATASET_FORMAT_VERSION: u32 = 1;
pub const GROUND_TRUTH_FILE: &str = "ground_truth.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub format_version: u32,
    pub config: SimConfig,
    pub split: Split,
    pub n_units: usize,
    /// Node features: degree divided by `n - 1`.
    pub degree_centrality: String,
    /// Stored node features are `(raw - mean) / std` per column.
    pub node_feature_scaling: FeatureScaling,
    /// `"synthetic"` for Small-World, `"surrogate"` for the molecular stand-in.
    pub data_source: String,
}

#[derive(Serialize, Deserialize)]
struct UnitLine {
    x: Vec<f64>,
    t: usize,
    y: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthFile {
    pub format_version: u32,
    pub config: SimConfig,
    pub ground_truth: GroundTruth,
    pub propensity: PropensityModel,
}

pub fn dataset_meta(config: &SimConfig, scaling: &FeatureScaling, ds: &Dataset) -> DatasetMeta {
    use crate::simulation::BenchmarkKind;
    DatasetMeta {
        format_version: DATASET_FORMAT_VERSION,
        config: config.clone(),
        split: ds.split,
        n_units: ds.len(),
        degree_centrality: "normalized".into(),
        node_feature_scaling: scaling.clone(),
        data_source: match config.benchmark {
            BenchmarkKind::SmallWorld => "synthetic".into(),
            BenchmarkKind::MolecularSurrogate => "surrogate".into(),
        },
    }
}

pub fn write_dataset(path: &Path, meta: &DatasetMeta, ds: &Dataset) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer(&mut w, meta)?;
    w.write_all(b"\n")?;
    serde_json::to_writer(&mut w, ds.catalog.as_ref())?;
    w.write_all(b"\n")?;
    for i in 0..ds.len() {
        let unit = UnitLine {
            x: ds.covariates.row(i).to_vec(),
            t: ds.treatments[i],
            y: ds.outcomes[i],
        };
        serde_json::to_writer(&mut w, &unit)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<(DatasetMeta, Dataset)> {
    let mut lines = BufReader::new(File::open(path)?).lines();
    let mut next = |what: &str| -> Result<String> {
        lines
            .next()
            .ok_or_else(|| Error::Config(format!("{}: missing {what} line", path.display())))?
            .map_err(Error::from)
    };
    let meta: DatasetMeta = serde_json::from_str(&next("metadata")?)?;
    if meta.format_version != DATASET_FORMAT_VERSION {
        return Err(Error::Config(format!(
            "unsupported dataset format version {}",
            meta.format_version
        )));
    }
    let catalog: Vec<Graph> = serde_json::from_str(&next("catalog")?)?;
    let mut rows = Vec::with_capacity(meta.n_units);
    let mut treatments = Vec::with_capacity(meta.n_units);
    let mut outcomes = Vec::with_capacity(meta.n_units);
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let u: UnitLine = serde_json::from_str(&line)?;
        rows.push(u.x);
        treatments.push(u.t);
        outcomes.push(u.y);
    }
    if rows.len() != meta.n_units {
        return Err(Error::Config(format!(
            "metadata declares {} units, file has {}",
            meta.n_units,
            rows.len()
        )));
    }
    let covariates = if rows.is_empty() {
        Tensor::zeros(0, meta.config.d_x)
    } else {
        Tensor::from_rows(&rows)?
    };
    let ds = Dataset::new(covariates, Arc::new(catalog), treatments, outcomes, meta.split)?;
    Ok((meta, ds))
}

pub fn write_ground_truth(path: &Path, b: &Benchmark) -> Result<()> {
    let file = GroundTruthFile {
        format_version: DATASET_FORMAT_VERSION,
        config: b.config.clone(),
        ground_truth: b.ground_truth.clone(),
        propensity: b.propensity.clone(),
    };
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer(&mut w, &file)?;
    w.flush()?;
    Ok(())
}

pub fn read_ground_truth(path: &Path) -> Result<GroundTruthFile> {
    Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
}

pub fn split_path(dir: &Path, split: Split) -> PathBuf {
    dir.join(format!("{}.jsonl", split.as_str()))
}

/// Writes `in_sample.jsonl`, `out_sample.jsonl` and `ground_truth.json` into `dir`.
pub fn write_benchmark(dir: &Path, b: &Benchmark) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for split in [Split::InSample, Split::OutSample] {
        let ds = b.split(split);
        write_dataset(&split_path(dir, split), &dataset_meta(&b.config, &b.node_scaling, ds), ds)?;
    }
    write_ground_truth(&dir.join(GROUND_TRUTH_FILE), b)
}

/// Inverse of [`write_benchmark`].
pub fn read_benchmark(dir: &Path) -> Result<Benchmark> {
    let (meta, in_sample) = read_dataset(&split_path(dir, Split::InSample))?;
    let (_, mut out_sample) = read_dataset(&split_path(dir, Split::OutSample))?;
    out_sample.catalog = in_sample.catalog.clone();
    let gt = read_ground_truth(&dir.join(GROUND_TRUTH_FILE))?;
    Ok(Benchmark {
        config: gt.config,
        in_sample,
        out_sample,
        ground_truth: gt.ground_truth,
        propensity: gt.propensity,
        node_scaling: meta.node_feature_scaling,
    })
}
