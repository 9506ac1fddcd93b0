//! Synthetic benchmarks with full ground truth.
//!
//! Two data-generating processes are provided:
//!
//! * **Small-World (SW)**: covariates `X ~ U(-1, 1)^d`, treatments are
//!   connected Watts–Strogatz graphs, and
//!   `Y = 100 v0'x + 0.2 ν(G)^2 v_ν'x + l(G) v_l'x + ε`.
//! * **Molecular surrogate**: correlated low-rank covariates standing in for
//!   gene-expression data, small random graphs standing in for molecules, each
//!   carrying an 8-dimensional property vector `z`, and
//!   `Y = 10 v0'x + 0.01 z'x_pca + ε`.
//!
//! Treatment assignment follows `p(T | x) = softmax(κ W φ(x))` with
//! `φ(x) = x²` for SW and `φ(x) = x` for the surrogate.

mod benchmark;
pub mod io;
mod pca;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::graphs::GraphStats;
use crate::nn::Tensor;
use crate::rng::Rng;

pub use benchmark::{
    build_benchmark, molecular_catalog, standardize_node_features, sw_catalog, Benchmark,
    BenchmarkKind, Dataset, FeatureScaling, SimConfig, Split,
};
pub use pca::{pca_project, Pca};

/// Length of the molecular property vectors and of the covariate PCA projection.
pub const PROPERTY_DIM: usize = 8;

/// `u ~ U(0, 1)^d`, returned as `u / |u|`.
pub fn sample_unit_vector(rng: &mut Rng, d: usize) -> Vec<f64> {
    assert!(d >= 1, "dimension must be positive");
    loop {
        let u: Vec<f64> = (0..d).map(|_| rng.random::<f64>()).collect();
        let norm = u.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            return u.into_iter().map(|v| v / norm).collect();
        }
    }
}

/// `[n, d]` with i.i.d. `U(-1, 1)` entries.
pub fn sample_covariates(rng: &mut Rng, n: usize, d: usize) -> Tensor {
    let data = (0..n * d).map(|_| rng.random_range(-1.0..=1.0)).collect();
    Tensor::from_vec(n, d, data).expect("n * d values")
}

pub fn standard_normal(rng: &mut Rng) -> f64 {
    StandardNormal.sample(rng)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovariateTransform {
    Identity,
    ElementwiseSquare,
}

impl CovariateTransform {
    fn apply(self, v: f64) -> f64 {
        match self {
            CovariateTransform::Identity => v,
            CovariateTransform::ElementwiseSquare => v * v,
        }
    }
}

/// `p(T | x) = softmax(κ W φ(x))`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PropensityModel {
    /// `[|T|, d_x]`, entries drawn from `U[0, 1]`.
    pub weights: Tensor,
    pub kappa: f64,
    pub transform: CovariateTransform,
}

impl PropensityModel {
    pub fn sample(
        rng: &mut Rng,
        n_treatments: usize,
        d_x: usize,
        kappa: f64,
        transform: CovariateTransform,
    ) -> Result<Self> {
        if kappa < 0.0 || !kappa.is_finite() {
            return Err(Error::Config(format!("kappa must be finite and >= 0, got {kappa}")));
        }
        let data = (0..n_treatments * d_x).map(|_| rng.random::<f64>()).collect();
        Ok(Self {
            weights: Tensor::from_vec(n_treatments, d_x, data)?,
            kappa,
            transform,
        })
    }

    pub fn n_treatments(&self) -> usize {
        self.weights.rows()
    }

    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.weights.cols() {
            return Err(shape_err(
                "propensity_distribution",
                format!("x has {} entries, W has {} columns", x.len(), self.weights.cols()),
            ));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("propensity covariates".into()));
        }
        let phi: Vec<f64> = x.iter().map(|&v| self.transform.apply(v)).collect();
        Ok((0..self.n_treatments())
            .map(|t| {
                let dot: f64 = self.weights.row(t).iter().zip(&phi).map(|(w, p)| w * p).sum();
                self.kappa * dot
            })
            .collect())
    }

    /// Max-subtracted softmax over treatments.
    pub fn distribution(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(softmax(&self.logits(x)?))
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Free-function form of [`PropensityModel::distribution`].
pub fn propensity_distribution(pm: &PropensityModel, x: &[f64]) -> Result<Vec<f64>> {
    pm.distribution(x)
}

/// One categorical draw per row (inverse-CDF).
pub fn assign_treatments(rng: &mut Rng, propensities: &[Vec<f64>]) -> Vec<usize> {
    propensities
        .iter()
        .map(|row| {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            for (i, p) in row.iter().enumerate() {
                acc += p;
                if u < acc {
                    return i;
                }
            }
            // rounding: fall back to the last index with positive mass
            row.iter().rposition(|&p| p > 0.0).unwrap_or(0)
        })
        .collect()
}

/// Treatment-dependent part of the outcome model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OutcomeModel {
    SmallWorld {
        v_nu: Vec<f64>,
        v_l: Vec<f64>,
        /// ν(G) and l(G) of every catalog graph.
        treatment_stats: Vec<GraphStats>,
    },
    MolecularSurrogate {
        /// `z_t ∈ R^8` per catalog entry.
        properties: Vec<Vec<f64>>,
        pca: Pca,
    },
}

/// Everything needed to compute true outcomes and effects. Never handed to trainers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub v0: Vec<f64>,
    pub noise_std: f64,
    pub model: OutcomeModel,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `100 v0'x + 0.2 ν² v_ν'x + l v_l'x (+ ε)`.
pub fn sw_outcome(
    x: &[f64],
    stats: &GraphStats,
    v0: &[f64],
    v_nu: &[f64],
    v_l: &[f64],
    noise: Option<&mut Rng>,
) -> f64 {
    let nu = stats.connectivity as f64;
    let mean = 100.0 * dot(v0, x) + 0.2 * nu * nu * dot(v_nu, x) + stats.avg_shortest_path * dot(v_l, x);
    mean + noise.map_or(0.0, standard_normal)
}

/// `10 v0'x + 0.01 z'x_pca (+ ε)`.
pub fn molecular_surrogate_outcome(
    x: &[f64],
    x_pca: &[f64],
    z: &[f64],
    v0: &[f64],
    noise: Option<&mut Rng>,
) -> f64 {
    10.0 * dot(v0, x) + 0.01 * dot(z, x_pca) + noise.map_or(0.0, standard_normal)
}

impl GroundTruth {
    pub fn n_treatments(&self) -> usize {
        match &self.model {
            OutcomeModel::SmallWorld { treatment_stats, .. } => treatment_stats.len(),
            OutcomeModel::MolecularSurrogate { properties, .. } => properties.len(),
        }
    }

    fn check_t(&self, t: usize) -> Result<()> {
        if t < self.n_treatments() {
            Ok(())
        } else {
            Err(Error::UnknownTreatment(t))
        }
    }

    /// Outcome for covariates `x` under treatment `t`, with optional noise.
    pub fn outcome(&self, x: &[f64], t: usize, noise: Option<&mut Rng>) -> Result<f64> {
        self.check_t(t)?;
        if x.len() != self.v0.len() {
            return Err(shape_err("outcome", "covariate width"));
        }
        let noise = noise.map(|r| {
            let e = standard_normal(r);
            e * self.noise_std
        });
        let mean = match &self.model {
            OutcomeModel::SmallWorld {
                v_nu,
                v_l,
                treatment_stats,
            } => sw_outcome(x, &treatment_stats[t], &self.v0, v_nu, v_l, None),
            OutcomeModel::MolecularSurrogate { properties, pca } => {
                molecular_surrogate_outcome(x, &pca.project_row(x), &properties[t], &self.v0, None)
            }
        };
        Ok(mean + noise.unwrap_or(0.0))
    }

    pub fn noiseless_outcome(&self, x: &[f64], t: usize) -> Result<f64> {
        self.outcome(x, t, None)
    }

    /// Closed-form τ(t', t, x).
    pub fn true_cate(&self, x: &[f64], t_prime: usize, t: usize) -> Result<f64> {
        self.check_t(t_prime)?;
        self.check_t(t)?;
        if x.len() != self.v0.len() {
            return Err(shape_err("true_cate", "covariate width"));
        }
        Ok(match &self.model {
            OutcomeModel::SmallWorld {
                v_nu,
                v_l,
                treatment_stats,
            } => {
                let (a, b) = (&treatment_stats[t_prime], &treatment_stats[t]);
                let (nu_a, nu_b) = (a.connectivity as f64, b.connectivity as f64);
                0.2 * (nu_a * nu_a - nu_b * nu_b) * dot(v_nu, x)
                    + (a.avg_shortest_path - b.avg_shortest_path) * dot(v_l, x)
            }
            OutcomeModel::MolecularSurrogate { properties, pca } => {
                let xp = pca.project_row(x);
                let diff: Vec<f64> = properties[t_prime]
                    .iter()
                    .zip(&properties[t])
                    .map(|(a, b)| a - b)
                    .collect();
                0.01 * dot(&diff, &xp)
            }
        })
    }
}

/// Free-function form of [`GroundTruth::true_cate`].
pub fn true_cate(gt: &GroundTruth, x: &[f64], t_prime: usize, t: usize) -> Result<f64> {
    gt.true_cate(x, t_prime, t)
}
