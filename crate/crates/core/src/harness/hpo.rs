//! Random-search hyper-parameter optimization scored on held-out outcome MSE.

use rand::seq::{IndexedRandom, SliceRandom};
use serde::{Deserialize, Serialize};

use super::train_estimator;
use crate::error::{Error, Result};
use crate::estimators::{EstimatorKind, TrainConfig};
use crate::rng::{self, derive_seed, Rng};
use crate::simulation::Dataset;

/// Discrete choices per hyper-parameter. An empty list keeps the base value.
/// Fields that do not apply to an estimator are drawn but ignored, so every
/// trial consumes the same random numbers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchSpace {
    pub hidden_layers: Vec<usize>,
    pub hidden_dim: Vec<usize>,
    pub embed_dim: Vec<usize>,
    /// SIN only.
    pub inner_steps: Vec<usize>,
    /// SIN's `m̂` patience.
    pub patience_m: Vec<usize>,
    /// SIN's `g`, `h`, `e` patience.
    pub patience_ghe: Vec<usize>,
    /// `lr_g`/`lr_h` for SIN, the regression rate for the other models.
    pub lr: Vec<f64>,
    /// GraphITE only.
    pub hsic_weight: Vec<f64>,
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self {
            hidden_layers: vec![2, 3, 4],
            hidden_dim: vec![64, 128, 256],
            embed_dim: vec![8, 16, 32, 64],
            inner_steps: vec![10, 15, 20],
            patience_m: vec![5, 10],
            patience_ghe: vec![1, 5],
            lr: vec![5e-4, 1e-3],
            hsic_weight: vec![0.001, 0.01, 1.0, 10.0, 100.0, 1000.0],
        }
    }
}

fn pick<T: Copy>(rng: &mut Rng, choices: &[T], base: T) -> T {
    choices.choose(rng).copied().unwrap_or(base)
}

impl SearchSpace {
    pub fn validate(&self) -> Result<()> {
        let bad_int = |v: &[usize]| v.contains(&0);
        if bad_int(&self.hidden_dim) || bad_int(&self.embed_dim) || bad_int(&self.inner_steps) {
            return Err(Error::Config("search space widths and K must be positive".into()));
        }
        if self.lr.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::Config("search space learning rates must be positive".into()));
        }
        if self.hsic_weight.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(Error::Config("HSIC weights must be >= 0".into()));
        }
        Ok(())
    }

    /// Draws one configuration for `kind` around `base`.
    pub fn sample(&self, kind: EstimatorKind, base: &TrainConfig, rng: &mut Rng) -> TrainConfig {
        let mut c = base.clone();
        let layers = pick(rng, &self.hidden_layers, base.hidden_layers);
        let width = pick(rng, &self.hidden_dim, base.hidden_dim);
        let embed = pick(rng, &self.embed_dim, base.embed_dim);
        let k = pick(rng, &self.inner_steps, base.inner_steps);
        let pm = pick(rng, &self.patience_m, base.stage1.patience);
        let pghe = pick(rng, &self.patience_ghe, base.stage2.patience);
        let lr_sin = pick(rng, &self.lr, base.lr_g);
        let lr_reg = pick(rng, &self.lr, base.regression.lr);
        let hsic = pick(rng, &self.hsic_weight, base.hsic_weight);
        c.hidden_layers = layers;
        c.hidden_dim = width;
        c.embed_dim = embed;
        match kind {
            EstimatorKind::Sin => {
                c.inner_steps = k;
                c.stage1.patience = pm;
                c.stage2.patience = pghe;
                c.lr_g = lr_sin;
                c.lr_h = lr_sin;
            }
            EstimatorKind::Graphite => {
                c.regression.lr = lr_reg;
                c.hsic_weight = hsic;
            }
            EstimatorKind::Gnn | EstimatorKind::Cat => c.regression.lr = lr_reg,
            EstimatorKind::Zero => {}
        }
        c
    }
}

/// Shuffled `(train, validation)` index sets with `round(fraction · n)`
/// validation units, at least one on each side.
pub fn validation_split(n: usize, fraction: f64, rng: &mut Rng) -> Result<(Vec<usize>, Vec<usize>)> {
    if n < 2 {
        return Err(Error::Config("validation split needs at least two units".into()));
    }
    let n_val = ((fraction * n as f64).round() as usize).clamp(1, n - 1);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    let val = idx.split_off(n - n_val);
    Ok((idx, val))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HpoOutcome {
    pub best: TrainConfig,
    pub best_trial: usize,
    /// Validation MSE per trial; NaN for trials that failed.
    pub scores: Vec<f64>,
}

/// Samples `n_trials` configurations, trains each on the training part of a
/// validation split of `data` and scores it by outcome MSE on the held-out
/// part. Returns the first configuration with the lowest score, carrying the
/// base seed.
pub fn random_search_hpo(
    kind: EstimatorKind,
    base: &TrainConfig,
    space: &SearchSpace,
    data: &Dataset,
    n_trials: usize,
    validation_fraction: f64,
    seed: u64,
) -> Result<HpoOutcome> {
    space.validate()?;
    if kind == EstimatorKind::Zero {
        return Ok(HpoOutcome {
            best: base.clone(),
            best_trial: 0,
            scores: Vec::new(),
        });
    }
    let (tr, va) = validation_split(data.len(), validation_fraction, &mut rng::stream(seed, "hpo/split", 0))?;
    let (train, val) = (data.subset(&tr), data.subset(&va));
    let mut draw = rng::stream(seed, "hpo/space", 0);
    let mut scores = Vec::with_capacity(n_trials);
    let mut best: Option<(usize, f64, TrainConfig)> = None;
    for i in 0..n_trials {
        let mut cfg = space.sample(kind, base, &mut draw);
        cfg.seed = derive_seed(seed, "hpo/train", i as u64);
        let score = train_estimator(kind, &train, &cfg, None)
            .and_then(|m| m.predict_outcomes(&val.covariates, &val.treatments))
            .map(|pred| pred.iter().zip(&val.outcomes).map(|(p, y)| (p - y) * (p - y)).sum::<f64>() / val.len() as f64);
        let score = match score {
            Ok(s) if s.is_finite() => s,
            Ok(_) => f64::NAN,
            Err(e) => {
                log::debug!("hpo {} trial {i} failed: {e}", kind.as_str());
                f64::NAN
            }
        };
        scores.push(score);
        if score.is_finite() && best.as_ref().is_none_or(|b| score < b.1) {
            best = Some((i, score, cfg));
        }
    }
    let Some((best_trial, _, mut cfg)) = best else {
        return Err(Error::Training(format!("all {n_trials} HPO trials for {} failed", kind.as_str())));
    };
    cfg.seed = base.seed;
    Ok(HpoOutcome {
        best: cfg,
        best_trial,
        scores,
    })
}
