//! Experiment runner: trials over seeds and bias strengths, random-search
//! HPO, aggregation and result files.
//!
//! Every `(κ, seed)` cell builds a fresh benchmark from its seed, trains the
//! requested estimators on the in-sample split and scores UPEHE/WPEHE@K on
//! both splits. Cells are independent and run in parallel; rows come back in
//! cell order, so output files do not depend on the thread count.

mod hpo;
mod output;

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::estimators::{
    train_cat, train_gnn_regression, train_graphite, train_sin, CateEstimator, CatModel, Checkpoint, EstimatorKind,
    GnnRegression, GraphiteModel, SinModel, TrainConfig, ZeroEstimator,
};
use crate::metrics::evaluate_grid;
use crate::nn::Tensor;
use crate::par::{self, Execution};
use crate::rng::derive_seed;
use crate::simulation::{build_benchmark, Benchmark, Dataset, SimConfig, Split};

pub use hpo::{random_search_hpo, validation_split, HpoOutcome, SearchSpace};
pub use output::{
    aggregate, read_results_csv, write_config_lock, write_results_csv, write_summary_csv, ConfigLock, SummaryRow,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HpoConfig {
    pub enabled: bool,
    pub n_trials: usize,
    /// Fraction of in-sample units held out for scoring.
    pub validation_fraction: f64,
    pub space: SearchSpace,
}

impl Default for HpoConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            n_trials: 10,
            validation_fraction: 0.2,
            space: SearchSpace::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub sim: SimConfig,
    pub estimators: Vec<EstimatorKind>,
    pub train: TrainConfig,
    pub hpo: HpoConfig,
    pub eval_ks: Vec<usize>,
    /// Bias strengths for `sweep-kappa`; `run` uses `sim.kappa`.
    pub kappas: Vec<f64>,
    pub n_seeds: usize,
    pub first_seed: u64,
    /// Directory for result files when none is given on the command line.
    pub out_dir: Option<String>,
    pub save_checkpoints: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            sim: SimConfig::small_world(0),
            estimators: EstimatorKind::ALL.to_vec(),
            train: TrainConfig::default(),
            hpo: HpoConfig::default(),
            eval_ks: (2..=10).collect(),
            kappas: vec![0.0, 1.0, 10.0, 100.0],
            n_seeds: 10,
            first_seed: 0,
            out_dir: None,
            save_checkpoints: false,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.sim.validate()?;
        self.train.validate()?;
        if self.n_seeds == 0 {
            return Err(Error::Config("n_seeds must be >= 1".into()));
        }
        if self.estimators.is_empty() {
            return Err(Error::Config("no estimators requested".into()));
        }
        if self.eval_ks.is_empty() {
            return Err(Error::Config("eval_ks must not be empty".into()));
        }
        if let Some(&k) = self.eval_ks.iter().find(|&&k| k < 2 || k > self.sim.n_treatments) {
            return Err(Error::Config(format!(
                "K = {k} outside [2, {}]",
                self.sim.n_treatments
            )));
        }
        if self.hpo.enabled {
            self.hpo.space.validate()?;
            if self.hpo.n_trials == 0 {
                return Err(Error::Config("HPO needs at least one trial".into()));
            }
            if !(self.hpo.validation_fraction > 0.0 && self.hpo.validation_fraction < 1.0) {
                return Err(Error::Config("validation_fraction must lie in (0, 1)".into()));
            }
        }
        Ok(())
    }

    pub fn seeds(&self) -> Vec<u64> {
        (0..self.n_seeds as u64).map(|i| self.first_seed + i).collect()
    }

    /// Copy with the bias strength replaced.
    pub fn at_kappa(&self, kappa: f64) -> Self {
        let mut c = self.clone();
        c.sim.kappa = kappa;
        c
    }
}

/// Hex SHA-256 prefix of the canonical JSON form of `cfg`.
pub fn config_hash(cfg: &ExperimentConfig) -> Result<String> {
    let bytes = serde_json::to_vec(cfg)?;
    let digest = Sha256::digest(&bytes);
    Ok(digest.iter().take(8).map(|b| format!("{b:02x}")).collect())
}

/// One metric value for one `(estimator, split, K, κ, seed)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub estimator: String,
    pub split: Split,
    pub metric: String,
    #[serde(rename = "K")]
    pub k: usize,
    pub kappa: f64,
    pub seed: u64,
    pub value: f64,
    /// Training plus evaluation wall time; excluded from reproducibility checks.
    pub seconds: f64,
    pub config_hash: String,
    pub error: Option<String>,
}

/// A trained model of any kind.
#[derive(Clone, Debug)]
pub enum Trained {
    Zero,
    Cat(CatModel),
    Gnn(GnnRegression),
    Graphite(GraphiteModel),
    Sin(Box<SinModel>),
}

impl Trained {
    pub fn kind(&self) -> EstimatorKind {
        match self {
            Trained::Zero => EstimatorKind::Zero,
            Trained::Cat(_) => EstimatorKind::Cat,
            Trained::Gnn(_) => EstimatorKind::Gnn,
            Trained::Graphite(_) => EstimatorKind::Graphite,
            Trained::Sin(_) => EstimatorKind::Sin,
        }
    }

    pub fn estimator(&self) -> &dyn CateEstimator {
        match self {
            Trained::Zero => &ZeroEstimator,
            Trained::Cat(m) => m,
            Trained::Gnn(m) => m,
            Trained::Graphite(m) => m,
            Trained::Sin(m) => m.as_ref(),
        }
    }

    /// Outcome predictions for observed `(x_i, t_i)`; Zero has no outcome model.
    pub fn predict_outcomes(&self, x: &Tensor, treatments: &[usize]) -> Result<Vec<f64>> {
        match self {
            Trained::Zero => Err(Error::Config("the zero baseline does not predict outcomes".into())),
            Trained::Cat(m) => m.predict_outcomes(x, treatments),
            Trained::Gnn(m) => m.model.predict_outcomes(x, treatments),
            Trained::Graphite(m) => m.model.predict_outcomes(x, treatments),
            Trained::Sin(m) => m.predict_outcomes(x, treatments),
        }
    }

    pub fn checkpoint(&self) -> Result<Checkpoint> {
        match self {
            Trained::Zero => Checkpoint::new(EstimatorKind::Zero, &ZeroEstimator),
            Trained::Cat(m) => Checkpoint::new(EstimatorKind::Cat, m),
            Trained::Gnn(m) => Checkpoint::new(EstimatorKind::Gnn, m),
            Trained::Graphite(m) => Checkpoint::new(EstimatorKind::Graphite, m),
            Trained::Sin(m) => Checkpoint::new(EstimatorKind::Sin, m.as_ref()),
        }
    }
}

/// Trains `kind` on `data`. CAT maps unseen treatments through `reference`
/// embeddings; without one, a GNN baseline is trained on `data` first.
pub fn train_estimator(kind: EstimatorKind, data: &Dataset, cfg: &TrainConfig, reference: Option<&Tensor>) -> Result<Trained> {
    Ok(match kind {
        EstimatorKind::Zero => Trained::Zero,
        EstimatorKind::Gnn => Trained::Gnn(train_gnn_regression(data, cfg)?),
        EstimatorKind::Graphite => Trained::Graphite(train_graphite(data, cfg)?),
        EstimatorKind::Sin => Trained::Sin(Box::new(train_sin(data, cfg)?)),
        EstimatorKind::Cat => match reference {
            Some(r) => Trained::Cat(train_cat(data, cfg, r)?),
            None => {
                let gnn = train_gnn_regression(data, cfg)?;
                Trained::Cat(train_cat(data, cfg, gnn.embedding_table())?)
            }
        },
    })
}

/// Training seed for `kind` in the trial with evaluation seed `seed`.
pub fn train_seed(seed: u64, kind: EstimatorKind) -> u64 {
    derive_seed(seed, "train", kind as u64)
}

/// Seed of the HPO stream, disjoint from training and data streams.
pub fn hpo_seed(seed: u64, kind: EstimatorKind) -> u64 {
    derive_seed(seed, "hpo", kind as u64)
}

/// Hyper-parameters for `kind` in one trial: the base config, or the HPO
/// winner on a validation split of the in-sample data.
pub fn resolve_config(cfg: &ExperimentConfig, kind: EstimatorKind, data: &Dataset, seed: u64) -> Result<TrainConfig> {
    let mut base = cfg.train.clone();
    base.seed = train_seed(seed, kind);
    if !cfg.hpo.enabled || kind == EstimatorKind::Zero {
        return Ok(base);
    }
    let out = random_search_hpo(
        kind,
        &base,
        &cfg.hpo.space,
        data,
        cfg.hpo.n_trials,
        cfg.hpo.validation_fraction,
        hpo_seed(seed, kind),
    )?;
    Ok(out.best)
}

fn metric_rows(
    est_name: &str,
    cfg: &ExperimentConfig,
    seed: u64,
    hash: &str,
    outcome: std::result::Result<Vec<crate::metrics::PeheResult>, String>,
    seconds: f64,
) -> Vec<TrialResult> {
    let mut rows = Vec::new();
    match outcome {
        Ok(results) => {
            for r in results {
                rows.push(TrialResult {
                    estimator: est_name.to_string(),
                    split: r.config.split,
                    metric: r.config.metric_name().to_string(),
                    k: r.config.k,
                    kappa: cfg.sim.kappa,
                    seed,
                    value: r.value,
                    seconds,
                    config_hash: hash.to_string(),
                    error: None,
                });
            }
        }
        Err(msg) => {
            for split in [Split::InSample, Split::OutSample] {
                for &k in &cfg.eval_ks {
                    for metric in ["upehe", "wpehe"] {
                        rows.push(TrialResult {
                            estimator: est_name.to_string(),
                            split,
                            metric: metric.to_string(),
                            k,
                            kappa: cfg.sim.kappa,
                            seed,
                            value: f64::NAN,
                            seconds,
                            config_hash: hash.to_string(),
                            error: Some(msg.clone()),
                        });
                    }
                }
            }
        }
    }
    rows
}

fn evaluate(est: &dyn CateEstimator, bench: &Benchmark, ks: &[usize]) -> Result<Vec<crate::metrics::PeheResult>> {
    let mut out = Vec::new();
    for split in [Split::InSample, Split::OutSample] {
        out.extend(evaluate_grid(
            est,
            bench.split(split),
            &bench.ground_truth,
            &bench.propensity,
            ks,
            Execution::available(),
        )?);
    }
    Ok(out)
}

/// Output of one trial: metric rows plus the models that trained.
pub struct TrialOutput {
    pub rows: Vec<TrialResult>,
    pub models: Vec<Trained>,
}

/// Builds the benchmark for `seed` (fresh `W`, graphs and units), trains every
/// requested estimator and evaluates it. A failing estimator yields NaN rows
/// carrying the error message; the remaining estimators still run.
pub fn run_trial_full(cfg: &ExperimentConfig, seed: u64) -> Result<TrialOutput> {
    cfg.validate()?;
    let hash = config_hash(cfg)?;
    let sim = SimConfig {
        master_seed: seed,
        ..cfg.sim.clone()
    };
    let bench = build_benchmark(&sim)?;
    let data = &bench.in_sample;
    let mut rows = Vec::new();
    let mut models = Vec::new();
    // CAT borrows the GNN baseline's embedding table
    let mut gnn_table: Option<std::result::Result<Tensor, String>> = None;
    let mut order = cfg.estimators.clone();
    if let (Some(c), Some(g)) = (
        order.iter().position(|&k| k == EstimatorKind::Cat),
        order.iter().position(|&k| k == EstimatorKind::Gnn),
    ) {
        if g > c {
            order.swap(c, g);
        }
    }
    let mut results: Vec<(EstimatorKind, Vec<TrialResult>)> = Vec::new();
    for kind in order {
        let start = Instant::now();
        let trained = (|| -> Result<Trained> {
            let tc = resolve_config(cfg, kind, data, seed)?;
            if kind == EstimatorKind::Cat {
                let table = match gnn_table.take() {
                    Some(t) => t,
                    None => {
                        let gcfg = resolve_config(cfg, EstimatorKind::Gnn, data, seed)?;
                        train_gnn_regression(data, &gcfg)
                            .map(|g| g.embedding_table().clone())
                            .map_err(|e| e.to_string())
                    }
                };
                gnn_table = Some(table.clone());
                let table = table.map_err(|e| Error::Training(format!("reference GNN for CAT failed: {e}")))?;
                return train_estimator(kind, data, &tc, Some(&table));
            }
            let t = train_estimator(kind, data, &tc, None);
            if kind == EstimatorKind::Gnn {
                gnn_table = Some(match &t {
                    Ok(Trained::Gnn(g)) => Ok(g.embedding_table().clone()),
                    Ok(_) => unreachable!("GNN trainer returns a GNN model"),
                    Err(e) => Err(e.to_string()),
                });
            }
            t
        })();
        let outcome = trained.and_then(|t| {
            let r = evaluate(t.estimator(), &bench, &cfg.eval_ks)?;
            Ok((t, r))
        });
        let seconds = start.elapsed().as_secs_f64();
        let outcome = match outcome {
            Ok((t, r)) => {
                models.push(t);
                Ok(r)
            }
            Err(e) => {
                log::warn!("seed {seed}: {} failed: {e}", kind.as_str());
                Err(e.to_string())
            }
        };
        results.push((kind, metric_rows(kind.as_str(), cfg, seed, &hash, outcome, seconds)));
    }
    // rows follow the requested estimator order
    for kind in &cfg.estimators {
        if let Some(pos) = results.iter().position(|(k, _)| k == kind) {
            rows.extend(results.remove(pos).1);
        }
    }
    Ok(TrialOutput { rows, models })
}

/// [`run_trial_full`] without the trained models.
pub fn run_trial(cfg: &ExperimentConfig, seed: u64) -> Result<Vec<TrialResult>> {
    Ok(run_trial_full(cfg, seed)?.rows)
}

/// Runs every `(κ, seed)` cell, in parallel when `exec` allows; rows are
/// ordered by κ, then seed. With `checkpoint_dir`, each cell writes one
/// checkpoint file per trained model.
pub fn run_cells(
    cfg: &ExperimentConfig,
    kappas: &[f64],
    exec: Execution,
    checkpoint_dir: Option<&Path>,
) -> Result<Vec<TrialResult>> {
    cfg.validate()?;
    let cells: Vec<(f64, u64)> = kappas
        .iter()
        .flat_map(|&k| cfg.seeds().into_iter().map(move |s| (k, s)))
        .collect();
    let per_cell = par::map_slice(exec, &cells, |&(kappa, seed)| -> Result<Vec<TrialResult>> {
        let out = run_trial_full(&cfg.at_kappa(kappa), seed)?;
        if let Some(dir) = checkpoint_dir {
            for m in &out.models {
                let name = format!("{}_kappa{kappa}_seed{seed}.json", m.kind().as_str());
                m.checkpoint()?.save(&dir.join(name))?;
            }
        }
        Ok(out.rows)
    });
    let mut rows = Vec::new();
    for r in per_cell {
        rows.extend(r?);
    }
    Ok(rows)
}

/// All seeds at the configured bias strength.
pub fn run_experiment(cfg: &ExperimentConfig, exec: Execution) -> Result<Vec<TrialResult>> {
    run_cells(cfg, &[cfg.sim.kappa], exec, None)
}

/// All seeds at every bias strength in `kappas`; `κ = 0` is the randomized
/// control.
pub fn kappa_sweep(cfg: &ExperimentConfig, kappas: &[f64], exec: Execution) -> Result<Vec<TrialResult>> {
    if kappas.is_empty() {
        return Err(Error::Config("kappa sweep needs at least one κ".into()));
    }
    run_cells(cfg, kappas, exec, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::OptimConfig;
    use crate::metrics::{pehe_at_k, EvalConfig};

    pub(crate) fn tiny_config() -> ExperimentConfig {
        let opt = OptimConfig {
            epochs: 2,
            lr: 1e-3,
            batch_size: 32,
            patience: 5,
            min_delta: 1e-4,
            weight_decay: 0.0,
        };
        ExperimentConfig {
            sim: SimConfig {
                n_in: 40,
                n_out: 20,
                n_treatments: 6,
                d_x: 4,
                ..SimConfig::small_world(0)
            },
            train: TrainConfig {
                hidden_dim: 8,
                embed_dim: 3,
                encoder_hidden: 4,
                stage1: opt.clone(),
                stage2: opt.clone(),
                regression: opt,
                inner_steps: 2,
                ..TrainConfig::default()
            },
            eval_ks: vec![2, 4],
            n_seeds: 2,
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn zero_rows_match_metric_module() {
        let cfg = ExperimentConfig {
            estimators: vec![EstimatorKind::Zero],
            ..tiny_config()
        };
        let rows = run_trial(&cfg, 3).unwrap();
        assert_eq!(rows.len(), 2 * 2 * 2);
        let bench = build_benchmark(&SimConfig {
            master_seed: 3,
            ..cfg.sim.clone()
        })
        .unwrap();
        for r in &rows {
            let want = pehe_at_k(
                &ZeroEstimator,
                bench.split(r.split),
                &bench.ground_truth,
                &bench.propensity,
                EvalConfig {
                    k: r.k,
                    weighted: r.metric == "wpehe",
                    split: r.split,
                },
            )
            .unwrap();
            assert_eq!(r.value, want.value);
            assert!(r.error.is_none());
        }
    }

    #[test]
    fn failing_estimator_yields_nan_rows() {
        let mut cfg = ExperimentConfig {
            estimators: vec![EstimatorKind::Gnn, EstimatorKind::Zero],
            ..tiny_config()
        };
        // a learning rate this large diverges
        cfg.train.regression.lr = 1e300;
        cfg.train.regression.epochs = 5;
        let rows = run_trial(&cfg, 0).unwrap();
        let gnn: Vec<&TrialResult> = rows.iter().filter(|r| r.estimator == "gnn").collect();
        assert_eq!(gnn.len(), 8);
        assert!(gnn.iter().all(|r| r.value.is_nan() && r.error.is_some()));
        assert!(rows.iter().filter(|r| r.estimator == "zero").all(|r| r.value.is_finite()));
    }

    #[test]
    fn all_estimators_run_and_order_is_kept() {
        let cfg = ExperimentConfig {
            estimators: vec![EstimatorKind::Cat, EstimatorKind::Sin, EstimatorKind::Gnn],
            n_seeds: 1,
            ..tiny_config()
        };
        let out = run_trial_full(&cfg, 1).unwrap();
        let names: Vec<&str> = out.rows.iter().map(|r| r.estimator.as_str()).collect();
        assert_eq!(names[0], "cat");
        assert_eq!(names[8], "sin");
        assert_eq!(names[16], "gnn");
        assert!(out.rows.iter().all(|r| r.error.is_none()), "{:?}", out.rows.iter().find(|r| r.error.is_some()));
        assert_eq!(out.models.len(), 3);
    }

    #[test]
    fn sweep_cells_are_ordered_and_match_single_trials() {
        let cfg = ExperimentConfig {
            estimators: vec![EstimatorKind::Zero],
            ..tiny_config()
        };
        let rows = kappa_sweep(&cfg, &[0.0, 5.0], Execution::Parallel).unwrap();
        assert_eq!(rows.len(), 2 * 2 * 8);
        assert_eq!((rows[0].kappa, rows[0].seed), (0.0, 0));
        assert_eq!((rows[8].kappa, rows[8].seed), (0.0, 1));
        assert_eq!((rows[16].kappa, rows[16].seed), (5.0, 0));
        let untimed = |rs: &[TrialResult]| -> Vec<TrialResult> {
            rs.iter().cloned().map(|r| TrialResult { seconds: 0.0, ..r }).collect()
        };
        let single = run_trial(&cfg.at_kappa(5.0), 1).unwrap();
        assert_eq!(untimed(&rows[24..]), untimed(&single));
        assert!(kappa_sweep(&cfg, &[], Execution::Sequential).is_err());
    }

    #[test]
    fn config_validation() {
        let mut cfg = tiny_config();
        assert!(cfg.validate().is_ok());
        cfg.n_seeds = 0;
        assert!(cfg.validate().is_err());
        let mut cfg = tiny_config();
        cfg.eval_ks = vec![7];
        assert!(cfg.validate().is_err());
        let a = config_hash(&tiny_config()).unwrap();
        assert_eq!(a.len(), 16);
        assert_ne!(a, config_hash(&tiny_config().at_kappa(1.0)).unwrap());
    }

    #[test]
    fn config_json_roundtrip_with_defaults() {
        let cfg: ExperimentConfig = serde_json::from_str(r#"{"n_seeds": 3, "estimators": ["zero", "sin"]}"#).unwrap();
        assert_eq!(cfg.n_seeds, 3);
        assert_eq!(cfg.estimators, vec![EstimatorKind::Zero, EstimatorKind::Sin]);
        assert_eq!(cfg.sim, SimConfig::small_world(0));
        let back: ExperimentConfig = serde_json::from_str(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(back, cfg);
    }
}
