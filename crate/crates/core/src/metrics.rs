//! UPEHE@K and WPEHE@K.
//!
//! For each unit the treatments are ranked by true propensity (ties to the
//! lower id) and the `C(K, 2)` pairs among the top `K` are scored by
//! `(τ̂ − τ)²`, weighted by `p(t | x) p(t' | x)` for WPEHE and by 1 for UPEHE.
//! The per-unit value is the mean over pairs; the metric is the mean over
//! units. Weights are the raw propensities, not renormalized within the top K.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::CateEstimator;
use crate::par::{self, Execution};
use crate::simulation::{Dataset, GroundTruth, PropensityModel, Split};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalConfig {
    pub k: usize,
    pub weighted: bool,
    pub split: Split,
}

impl EvalConfig {
    pub fn metric_name(&self) -> &'static str {
        if self.weighted {
            "wpehe"
        } else {
            "upehe"
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PeheResult {
    pub value: f64,
    pub n_units: usize,
    pub n_pairs: usize,
    pub config: EvalConfig,
}

/// Ids of the `k` largest entries of `p`, descending, ties to the lower id.
pub fn top_k_from_probs(p: &[f64], k: usize) -> Vec<usize> {
    let mut ids: Vec<usize> = (0..p.len()).collect();
    ids.sort_by(|&a, &b| p[b].total_cmp(&p[a]).then(a.cmp(&b)));
    ids.truncate(k);
    ids
}

pub fn top_k_treatments(pm: &PropensityModel, x: &[f64], k: usize) -> Result<Vec<usize>> {
    check_k(k, pm.n_treatments())?;
    Ok(top_k_from_probs(&pm.distribution(x)?, k))
}

fn check_k(k: usize, n_treatments: usize) -> Result<()> {
    if k < 2 || k > n_treatments {
        return Err(Error::Config(format!(
            "K must lie in [2, {n_treatments}], got {k}"
        )));
    }
    Ok(())
}

/// Per-unit ingredients shared by every `(K, weighted)` combination.
struct UnitEval {
    /// Top-`K_max` ids with their propensities.
    ids: Vec<usize>,
    probs: Vec<f64>,
    scores: Vec<f64>,
    truth: Vec<f64>,
}

impl UnitEval {
    /// Mean weighted squared error over pairs among the first `k` ids.
    fn pair_mean(&self, k: usize, weighted: bool) -> f64 {
        let mut sum = 0.0;
        let mut count = 0usize;
        for a in 0..k {
            for b in (a + 1)..k {
                let est = self.scores[b] - self.scores[a];
                let tru = self.truth[b] - self.truth[a];
                let w = if weighted { self.probs[a] * self.probs[b] } else { 1.0 };
                sum += w * (est - tru) * (est - tru);
                count += 1;
            }
        }
        sum / count as f64
    }
}

fn prepare(
    est: &dyn CateEstimator,
    data: &Dataset,
    gt: &GroundTruth,
    pm: &PropensityModel,
    k_max: usize,
    exec: Execution,
) -> Result<Vec<UnitEval>> {
    check_k(k_max, pm.n_treatments())?;
    if gt.n_treatments() != pm.n_treatments() || data.n_treatments() != pm.n_treatments() {
        return Err(Error::Config("ground truth, propensity and catalog sizes differ".into()));
    }
    let x = &data.covariates;
    let ranked = par::map_range(exec, data.len(), |i| -> Result<(Vec<usize>, Vec<f64>)> {
        let p = pm.distribution(x.row(i))?;
        let ids = top_k_from_probs(&p, k_max);
        let probs = ids.iter().map(|&t| p[t]).collect();
        Ok((ids, probs))
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let candidates: Vec<Vec<usize>> = ranked.iter().map(|(ids, _)| ids.clone()).collect();
    let scores = est.treatment_scores(x, &candidates)?;
    ranked
        .into_iter()
        .zip(scores)
        .enumerate()
        .map(|(i, ((ids, probs), scores))| {
            // true CATEs relative to the top-ranked treatment; pair effects are differences
            let truth = ids
                .iter()
                .map(|&t| gt.true_cate(x.row(i), t, ids[0]))
                .collect::<Result<Vec<_>>>()?;
            if scores.iter().any(|s| !s.is_finite()) {
                return Err(Error::NonFinite(format!("{} predictions", est.name())));
            }
            Ok(UnitEval {
                ids,
                probs,
                scores,
                truth,
            })
        })
        .collect()
}

/// PEHE@K of `est` on `data`.
pub fn pehe_at_k(
    est: &dyn CateEstimator,
    data: &Dataset,
    gt: &GroundTruth,
    pm: &PropensityModel,
    cfg: EvalConfig,
) -> Result<PeheResult> {
    let units = prepare(est, data, gt, pm, cfg.k, Execution::available())?;
    Ok(summarize(&units, cfg))
}

fn summarize(units: &[UnitEval], cfg: EvalConfig) -> PeheResult {
    let total: f64 = units.iter().map(|u| u.pair_mean(cfg.k, cfg.weighted)).sum();
    PeheResult {
        value: if units.is_empty() { 0.0 } else { total / units.len() as f64 },
        n_units: units.len(),
        n_pairs: cfg.k * (cfg.k - 1) / 2,
        config: cfg,
    }
}

/// UPEHE and WPEHE for every `k` in `ks`, scoring the estimator once.
pub fn evaluate_grid(
    est: &dyn CateEstimator,
    data: &Dataset,
    gt: &GroundTruth,
    pm: &PropensityModel,
    ks: &[usize],
    exec: Execution,
) -> Result<Vec<PeheResult>> {
    let Some(&k_max) = ks.iter().max() else {
        return Ok(Vec::new());
    };
    for &k in ks {
        check_k(k, pm.n_treatments())?;
    }
    let units = prepare(est, data, gt, pm, k_max, exec)?;
    let mut out = Vec::with_capacity(ks.len() * 2);
    for &k in ks {
        for weighted in [false, true] {
            out.push(summarize(
                &units,
                EvalConfig {
                    k,
                    weighted,
                    split: data.split,
                },
            ));
        }
    }
    debug_assert!(units.iter().all(|u| u.ids.len() == k_max));
    Ok(out)
}
