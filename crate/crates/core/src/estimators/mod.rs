//! CATE estimators for graph-valued treatments.
//!
//! Every estimator scores `(x, t)` pairs and predicts
//! `τ̂(t', t, x) = s(x, t') − s(x, t)`, so `τ̂(t, t, x) = 0` and antisymmetry
//! hold by construction. Trainers only ever see a [`Dataset`], which carries
//! no ground truth.

mod cat;
mod checkpoint;
mod gnn;
mod hsic;
mod sin;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use nalgebra::{DMatrix, DVector};

use crate::error::{shape_err, Error, Result};
use crate::graphs::{EncoderConfig, Graph, GraphBatch};
use crate::nn::{MlpConfig, Tensor};
use crate::rng::Rng;
use crate::simulation::{Dataset, GroundTruth};

pub use cat::{map_to_seen, train_cat, CatModel};
pub use checkpoint::{Checkpoint, CHECKPOINT_SCHEMA_VERSION};
pub use gnn::{
    graphite_loss_on, train_gnn_regression, train_graphite, GnnRegression, GraphiteModel,
    HsicPenalty, JointNet, RegressionBatch, TrainedJoint,
};
pub use hsic::{hsic_normalized, hsic_normalized_on, median_bandwidth};
pub use sin::{
    e_loss_on, gh_loss_on, stage1_loss_on, train_sin, train_stage1, train_stage2, MeanOutcomeModel, Stage2Batch,
    sin_predict_cate, SinModel, Stage2Models,
};

/// Common prediction contract.
pub trait CateEstimator: Send + Sync {
    fn name(&self) -> &'static str;

    /// Scores `s(x_i, t)` for every `t` in `candidates[i]`.
    fn treatment_scores(&self, x: &Tensor, candidates: &[Vec<usize>]) -> Result<Vec<Vec<f64>>>;

    /// `τ̂(t', t, x)`.
    fn predict_cate(&self, x: &[f64], t_prime: usize, t: usize) -> Result<f64> {
        let xt = Tensor::from_vec(1, x.len(), x.to_vec())?;
        let s = self.treatment_scores(&xt, &[vec![t_prime, t]])?;
        Ok(s[0][0] - s[0][1])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    Zero,
    Cat,
    Gnn,
    Graphite,
    Sin,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 5] = [
        EstimatorKind::Zero,
        EstimatorKind::Cat,
        EstimatorKind::Gnn,
        EstimatorKind::Graphite,
        EstimatorKind::Sin,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EstimatorKind::Zero => "zero",
            EstimatorKind::Cat => "cat",
            EstimatorKind::Gnn => "gnn",
            EstimatorKind::Graphite => "graphite",
            EstimatorKind::Sin => "sin",
        }
    }
}

/// Predicts no effect for any pair.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ZeroEstimator;

impl CateEstimator for ZeroEstimator {
    fn name(&self) -> &'static str {
        "zero"
    }

    fn treatment_scores(&self, _x: &Tensor, candidates: &[Vec<usize>]) -> Result<Vec<Vec<f64>>> {
        Ok(candidates.iter().map(|c| vec![0.0; c.len()]).collect())
    }

    fn predict_cate(&self, _x: &[f64], _t_prime: usize, _t: usize) -> Result<f64> {
        Ok(0.0)
    }
}

/// `0` for every input.
pub fn zero_predict(_x: &[f64], _t_prime: usize, _t: usize) -> f64 {
    0.0
}

/// Scores with the true noiseless outcome. For evaluation checks only.
#[derive(Clone, Debug)]
pub struct OracleEstimator {
    pub ground_truth: GroundTruth,
}

impl CateEstimator for OracleEstimator {
    fn name(&self) -> &'static str {
        "oracle"
    }

    fn treatment_scores(&self, x: &Tensor, candidates: &[Vec<usize>]) -> Result<Vec<Vec<f64>>> {
        candidates
            .iter()
            .enumerate()
            .map(|(i, ts)| {
                ts.iter()
                    .map(|&t| self.ground_truth.noiseless_outcome(x.row(i), t))
                    .collect()
            })
            .collect()
    }

    fn predict_cate(&self, x: &[f64], t_prime: usize, t: usize) -> Result<f64> {
        self.ground_truth.true_cate(x, t_prime, t)
    }
}

/// Minibatch Adam schedule with early stopping on the training loss.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub patience: usize,
    /// Relative improvement that resets the patience counter.
    #[serde(default = "default_min_delta")]
    pub min_delta: f64,
    /// Coefficient of the `½‖θ‖²` penalty.
    #[serde(default)]
    pub weight_decay: f64,
}

fn default_min_delta() -> f64 {
    1e-4
}

impl OptimConfig {
    pub fn validate(&self, what: &str) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config(format!("{what}: epochs and batch size must be positive")));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("{what}: learning rate must be > 0")));
        }
        Ok(())
    }
}

/// Hyper-parameters shared by all trainers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Width of hidden layers in covariate networks.
    pub hidden_dim: usize,
    /// Number of hidden layers in covariate networks.
    pub hidden_layers: usize,
    /// Output width `d` of `g`, `h` and `e`.
    pub embed_dim: usize,
    pub encoder_hidden: usize,
    pub encoder_rounds: usize,
    /// Mean-outcome model `m̂`.
    pub stage1: OptimConfig,
    /// Outer loop of the second stage; its `lr` and `weight_decay` are
    /// superseded by the per-network values below.
    pub stage2: OptimConfig,
    pub lr_g: f64,
    pub lr_h: f64,
    pub lr_e: f64,
    pub wd_g: f64,
    pub wd_h: f64,
    pub wd_e: f64,
    /// Steps on `J_{g,h}` per minibatch before each `J_e` step.
    pub inner_steps: usize,
    /// Remove a least-squares linear trend in `x` from every outcome target.
    pub linear_trend: bool,
    /// GNN, GraphITE and CAT regressions.
    pub regression: OptimConfig,
    pub hsic_weight: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden_dim: 64,
            hidden_layers: 2,
            embed_dim: 16,
            encoder_hidden: 16,
            encoder_rounds: 2,
            stage1: OptimConfig {
                epochs: 300,
                lr: 3e-3,
                batch_size: 64,
                patience: 10,
                min_delta: 1e-4,
                weight_decay: 0.1,
            },
            stage2: OptimConfig {
                epochs: 40,
                lr: 3e-3,
                batch_size: 250,
                patience: 5,
                min_delta: 1e-4,
                weight_decay: 0.0,
            },
            lr_g: 3e-3,
            lr_h: 3e-3,
            lr_e: 1e-3,
            wd_g: 1e-2,
            wd_h: 1e-3,
            wd_e: 0.0,
            inner_steps: 20,
            linear_trend: true,
            regression: OptimConfig {
                epochs: 300,
                lr: 5e-4,
                batch_size: 64,
                patience: 10,
                min_delta: 1e-4,
                weight_decay: 1e-2,
            },
            hsic_weight: 1.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.inner_steps == 0 {
            return Err(Error::Config("inner_steps K must be >= 1".into()));
        }
        if self.hidden_dim == 0 || self.embed_dim == 0 || self.encoder_hidden == 0 {
            return Err(Error::Config("network widths must be positive".into()));
        }
        for (name, lr) in [("lr_g", self.lr_g), ("lr_h", self.lr_h), ("lr_e", self.lr_e)] {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(Error::Config(format!("{name} must be > 0")));
            }
        }
        for (name, wd) in [("wd_g", self.wd_g), ("wd_h", self.wd_h), ("wd_e", self.wd_e)] {
            if !(wd >= 0.0 && wd.is_finite()) {
                return Err(Error::Config(format!("{name} must be >= 0")));
            }
        }
        if !(self.hsic_weight >= 0.0 && self.hsic_weight.is_finite()) {
            return Err(Error::Config("hsic_weight must be >= 0".into()));
        }
        self.stage1.validate("stage1")?;
        self.stage2.validate("stage2")?;
        self.regression.validate("regression")
    }

    pub(crate) fn covariate_dims(&self, input: usize, output: usize) -> Vec<usize> {
        let mut dims = vec![input];
        dims.extend(std::iter::repeat_n(self.hidden_dim, self.hidden_layers));
        dims.push(output);
        dims
    }

    pub(crate) fn covariate_net(&self, input: usize, output: usize, seed: u64) -> MlpConfig {
        MlpConfig::new(self.covariate_dims(input, output), seed)
    }

    pub(crate) fn encoder_config(&self, node_dim: usize, seed: u64) -> EncoderConfig {
        EncoderConfig {
            node_dim,
            hidden_dim: self.encoder_hidden,
            out_dim: self.embed_dim,
            n_rounds: self.encoder_rounds,
            seed,
        }
    }
}

/// Outcome target transform: `(y − a − βᵀx) / s`, with the linear trend
/// `a + βᵀx` fitted by least squares (or just the mean when `linear_trend` is
/// off) and `s` the residual standard deviation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutcomeScaler {
    pub intercept: f64,
    pub coef: Vec<f64>,
    pub scale: f64,
}

impl OutcomeScaler {
    pub fn fit(x: &Tensor, y: &[f64], linear_trend: bool) -> Result<Self> {
        if x.rows() != y.len() {
            return Err(shape_err("OutcomeScaler::fit", "one outcome per covariate row"));
        }
        let n = y.len().max(1) as f64;
        let mean = y.iter().sum::<f64>() / n;
        let mut out = Self {
            intercept: mean,
            coef: vec![0.0; x.cols()],
            scale: 1.0,
        };
        if linear_trend && y.len() > x.cols() + 1 {
            let a = DMatrix::from_fn(y.len(), x.cols() + 1, |i, j| if j == 0 { 1.0 } else { x.row(i)[j - 1] });
            let beta = a
                .svd(true, true)
                .solve(&DVector::from_column_slice(y), 1e-10)
                .map_err(|e| Error::Training(format!("linear trend: {e}")))?;
            out.intercept = beta[0];
            out.coef = beta.iter().skip(1).copied().collect();
        }
        let var = (0..y.len())
            .map(|i| (y[i] - out.trend(x.row(i))).powi(2))
            .sum::<f64>()
            / n;
        out.scale = if var > 1e-24 { var.sqrt() } else { 1.0 };
        Ok(out)
    }

    pub fn trend(&self, x: &[f64]) -> f64 {
        self.intercept + self.coef.iter().zip(x).map(|(b, v)| b * v).sum::<f64>()
    }

    pub fn forward(&self, x: &[f64], y: f64) -> f64 {
        (y - self.trend(x)) / self.scale
    }

    pub fn inverse(&self, x: &[f64], v: f64) -> f64 {
        v * self.scale + self.trend(x)
    }

    /// Standardized targets for every row of `x`.
    pub(crate) fn targets(&self, x: &Tensor, y: &[f64]) -> Vec<f64> {
        y.iter().enumerate().map(|(i, &v)| self.forward(x.row(i), v)).collect()
    }
}

/// Shuffled minibatches of `0..n`.
pub(crate) fn minibatches(rng: &mut Rng, n: usize, batch_size: usize) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect()
}

/// Patience-based stopping on a loss that should decrease.
#[derive(Clone, Debug)]
pub(crate) struct EarlyStopping {
    patience: usize,
    min_delta: f64,
    best: f64,
    stale: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize, min_delta: f64) -> Self {
        Self {
            patience,
            min_delta,
            best: f64::INFINITY,
            stale: 0,
        }
    }

    /// Records an epoch loss; returns `true` if it is a new best.
    pub fn observe(&mut self, loss: f64) -> bool {
        if loss < self.best - self.min_delta * self.best.abs().min(1e300) {
            self.best = loss;
            self.stale = 0;
            true
        } else {
            self.stale += 1;
            false
        }
    }

    pub fn should_stop(&self) -> bool {
        self.stale > self.patience
    }

    pub fn best(&self) -> f64 {
        self.best
    }
}

pub(crate) fn check_loss(what: &str, epoch: usize, loss: f64) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::Training(format!("{what}: loss became {loss} at epoch {epoch}")))
    }
}

/// A fixed subset of the catalog prepared for message passing, with a map
/// from catalog id to row of the encoded table.
#[derive(Clone, Debug)]
pub(crate) struct TreatmentTable {
    pub batch: GraphBatch,
    pub row_of: Vec<Option<usize>>,
}

impl TreatmentTable {
    pub fn new(catalog: &[Graph], ids: &[usize]) -> Result<Self> {
        let mut row_of = vec![None; catalog.len()];
        let mut graphs = Vec::with_capacity(ids.len());
        for (r, &t) in ids.iter().enumerate() {
            let g = catalog.get(t).ok_or(Error::UnknownTreatment(t))?;
            row_of[t] = Some(r);
            graphs.push(g);
        }
        Ok(Self {
            batch: GraphBatch::new(&graphs)?,
            row_of,
        })
    }

    pub fn full(catalog: &[Graph]) -> Result<Self> {
        let ids: Vec<usize> = (0..catalog.len()).collect();
        Self::new(catalog, &ids)
    }

    pub fn rows(&self, treatments: &[usize]) -> Result<Vec<usize>> {
        treatments
            .iter()
            .map(|&t| {
                self.row_of
                    .get(t)
                    .copied()
                    .flatten()
                    .ok_or(Error::UnknownTreatment(t))
            })
            .collect()
    }
}

pub(crate) fn column(values: &[f64]) -> Tensor {
    Tensor::from_vec(values.len(), 1, values.to_vec()).expect("column vector")
}

pub(crate) fn require_data(data: &Dataset) -> Result<()> {
    if data.is_empty() {
        Err(Error::Config("training data is empty".into()))
    } else {
        Ok(())
    }
}

pub(crate) fn check_candidates(candidates: &[Vec<usize>], x: &Tensor, n_treatments: usize) -> Result<()> {
    if candidates.len() != x.rows() {
        return Err(crate::error::shape_err(
            "treatment_scores",
            format!("{} candidate lists for {} rows", candidates.len(), x.rows()),
        ));
    }
    if let Some(&t) = candidates.iter().flatten().find(|&&t| t >= n_treatments) {
        return Err(Error::UnknownTreatment(t));
    }
    Ok(())
}

#[cfg(test)]
pub(crate) fn test_config(seed: u64) -> TrainConfig {
    let opt = OptimConfig {
        epochs: 3,
        lr: 1e-3,
        batch_size: 32,
        patience: 5,
        min_delta: 1e-4,
        weight_decay: 0.0,
    };
    TrainConfig {
        hidden_dim: 16,
        embed_dim: 4,
        encoder_hidden: 8,
        stage1: opt.clone(),
        stage2: opt.clone(),
        regression: opt,
        inner_steps: 2,
        seed,
        ..TrainConfig::default()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_is_zero() {
        assert_eq!(ZeroEstimator.predict_cate(&[1.0, 2.0], 3, 1).unwrap(), 0.0);
        assert_eq!(zero_predict(&[0.5], 0, 9), 0.0);
        let s = ZeroEstimator
            .treatment_scores(&Tensor::zeros(2, 1), &[vec![0, 1], vec![2]])
            .unwrap();
        assert_eq!(s, vec![vec![0.0, 0.0], vec![0.0]]);
    }

    #[test]
    fn outcome_scaler_removes_linear_trend() {
        let x = Tensor::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0], vec![2.0, 2.0], vec![3.0, -1.0], vec![-1.0, 0.5]])
            .unwrap();
        let y: Vec<f64> = (0..5).map(|i| 4.0 + 2.0 * x.row(i)[0] - 3.0 * x.row(i)[1] + [0.1, -0.1, 0.0, 0.05, -0.05][i]).collect();
        let s = OutcomeScaler::fit(&x, &y, true).unwrap();
        assert!((s.coef[0] - 2.0).abs() < 0.1 && (s.coef[1] + 3.0).abs() < 0.1);
        let z = s.targets(&x, &y);
        assert!(z.iter().sum::<f64>().abs() < 1e-9);
        assert!((z.iter().map(|v| v * v).sum::<f64>() / 5.0 - 1.0).abs() < 1e-9);
        for i in 0..5 {
            assert!((s.inverse(x.row(i), z[i]) - y[i]).abs() < 1e-9);
        }
        let plain = OutcomeScaler::fit(&x, &[1.0, 2.0, 3.0, 6.0, 3.0], false).unwrap();
        assert!((plain.intercept - 3.0).abs() < 1e-12);
        assert_eq!(plain.coef, vec![0.0, 0.0]);
        assert_eq!(OutcomeScaler::fit(&x, &[4.0; 5], false).unwrap().scale, 1.0);
    }

    #[test]
    fn early_stopping_patience() {
        let mut es = EarlyStopping::new(2, 0.0);
        assert!(es.observe(3.0));
        assert!(es.observe(2.0));
        assert!(!es.observe(2.5));
        assert!(!es.observe(2.1));
        assert!(!es.should_stop());
        assert!(!es.observe(2.0));
        assert!(es.should_stop());
        assert_eq!(es.best(), 2.0);
    }

    #[test]
    fn minibatches_cover_everything() {
        let mut r = crate::rng::from_seed(1);
        let b = minibatches(&mut r, 10, 3);
        assert_eq!(b.len(), 4);
        let mut all: Vec<usize> = b.concat();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let c = TrainConfig {
            inner_steps: 0,
            ..TrainConfig::default()
        };
        assert!(c.validate().is_err());
        let mut c = TrainConfig::default();
        c.lr_h = 0.0;
        assert!(c.validate().is_err());
    }
}
