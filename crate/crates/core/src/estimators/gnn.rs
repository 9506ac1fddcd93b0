//! Joint regression baselines: `f̂(x, t) = head([cov(x) | enc(t)])`.
//!
//! The GNN baseline minimizes the outcome MSE; GraphITE adds
//! `λ · HSIC(enc(t), cov(x))` computed per minibatch. With `λ = 0` the two
//! trainers follow the same trajectory.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::estimators::{
    check_candidates, check_loss, column, hsic_normalized_on, median_bandwidth, minibatches,
    require_data, CateEstimator, EarlyStopping, OutcomeScaler, TrainConfig, TreatmentTable,
};
use crate::graphs::{GraphBatch, GraphEncoder};
use crate::nn::{AdamState, Mlp, MlpConfig, Parameterized, Tape, Tensor, Var};
use crate::rng::{self, derive_seed};
use crate::simulation::Dataset;

/// Covariate network, graph encoder and joint head.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointNet {
    pub cov: Mlp,
    pub enc: GraphEncoder,
    pub head: Mlp,
}

impl JointNet {
    pub fn new(cfg: &TrainConfig, d_x: usize, node_dim: usize) -> Result<Self> {
        let rep = cfg.hidden_dim;
        let cov = Mlp::new(cfg.covariate_net(d_x, rep, derive_seed(cfg.seed, "joint/cov", 0)))?;
        let enc = GraphEncoder::new(cfg.encoder_config(node_dim, derive_seed(cfg.seed, "joint/enc", 0)))?;
        let head = Mlp::new(
            MlpConfig::new(vec![rep + cfg.embed_dim, rep, 1], derive_seed(cfg.seed, "joint/head", 0)),
        )?;
        Ok(Self { cov, enc, head })
    }

    fn split<'a>(&self, vars: &'a [Var]) -> (&'a [Var], &'a [Var], &'a [Var]) {
        let a = self.cov.parameters().len();
        let b = a + self.enc.parameters().len();
        (&vars[..a], &vars[a..b], &vars[b..])
    }
}

impl Parameterized for JointNet {
    fn parameters(&self) -> Vec<&Tensor> {
        let mut p = self.cov.parameters();
        p.extend(self.enc.parameters());
        p.extend(self.head.parameters());
        p
    }

    fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        let mut p = self.cov.parameters_mut();
        p.extend(self.enc.parameters_mut());
        p.extend(self.head.parameters_mut());
        p
    }
}

/// One minibatch of the joint regression.
#[derive(Clone, Debug)]
pub struct RegressionBatch<'a> {
    pub x: &'a Tensor,
    /// `[n, 1]` standardized outcomes.
    pub y: &'a Tensor,
    pub graphs: &'a GraphBatch,
    pub rows: Arc<Vec<usize>>,
}

/// HSIC term of the GraphITE objective.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HsicPenalty {
    pub weight: f64,
    /// Kernel bandwidths for (embeddings, covariate representation). When
    /// `None`, the median heuristic is applied to the current values; either
    /// way they are constants for differentiation.
    pub bandwidths: Option<(f64, f64)>,
}

/// MSE of `f̂(x, t)` plus, if given, the weighted normalized HSIC between the
/// treatment embeddings and covariate representations of the batch.
pub fn graphite_loss_on(
    tape: &mut Tape,
    net: &JointNet,
    vars: &[Var],
    batch: &RegressionBatch<'_>,
    penalty: Option<HsicPenalty>,
) -> Result<Var> {
    let n = batch.x.rows();
    if batch.rows.len() != n || batch.y.rows() != n {
        return Err(shape_err("graphite_loss", "batch components disagree on the number of units"));
    }
    let (cv, ev, hv) = net.split(vars);
    let xv = tape.constant(batch.x.clone());
    let yv = tape.constant(batch.y.clone());
    let rep = net.cov.forward_on(tape, xv, cv)?;
    let table = net.enc.forward_on(tape, batch.graphs, ev)?;
    let emb = tape.gather_rows(table, batch.rows.clone())?;
    let joint = tape.concat_cols(rep, emb)?;
    let pred = net.head.forward_on(tape, joint, hv)?;
    let mse = tape.mse(pred, yv)?;
    let Some(p) = penalty.filter(|p| p.weight > 0.0 && n >= 4) else {
        return Ok(mse);
    };
    let bw = match p.bandwidths {
        Some(bw) => Some(bw),
        None => median_bandwidth(tape.value(emb)).zip(median_bandwidth(tape.value(rep))),
    };
    let Some((bw_emb, bw_rep)) = bw else {
        return Ok(mse);
    };
    match hsic_normalized_on(tape, emb, rep, bw_emb, bw_rep)? {
        Some(h) => {
            let h = tape.scale(h, p.weight);
            tape.add(mse, h)
        }
        None => Ok(mse),
    }
}

/// Scores `f̂(x_i, t)` (standardized) for every candidate of every row.
fn joint_scores(net: &JointNet, embeddings: &Tensor, x: &Tensor, candidates: &[Vec<usize>]) -> Result<Vec<Vec<f64>>> {
    check_candidates(candidates, x, embeddings.rows())?;
    let rep = net.cov.forward(x)?;
    let total: usize = candidates.iter().map(Vec::len).sum();
    let (r, d) = (rep.cols(), embeddings.cols());
    let mut joint = Vec::with_capacity(total * (r + d));
    for (i, ts) in candidates.iter().enumerate() {
        for &t in ts {
            joint.extend_from_slice(rep.row(i));
            joint.extend_from_slice(embeddings.row(t));
        }
    }
    let out = net.head.forward(&Tensor::from_vec(total, r + d, joint)?)?;
    let mut k = 0;
    Ok(candidates
        .iter()
        .map(|ts| {
            let s = out.data()[k..k + ts.len()].to_vec();
            k += ts.len();
            s
        })
        .collect())
}

/// Trained joint network plus its catalog embedding table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainedJoint {
    pub net: JointNet,
    pub y_scale: OutcomeScaler,
    /// `enc(t)` for every catalog entry, `[|T|, d]`.
    pub embeddings: Tensor,
    pub losses: Vec<f64>,
}

impl TrainedJoint {
    fn scores(&self, x: &Tensor, candidates: &[Vec<usize>]) -> Result<Vec<Vec<f64>>> {
        let s = joint_scores(&self.net, &self.embeddings, x, candidates)?;
        Ok(s.into_iter()
            .map(|v| v.into_iter().map(|s| s * self.y_scale.scale).collect())
            .collect())
    }

    /// Outcome predictions `f̂(x_i, t_i)` in original units.
    pub fn predict_outcomes(&self, x: &Tensor, treatments: &[usize]) -> Result<Vec<f64>> {
        let cands: Vec<Vec<usize>> = treatments.iter().map(|&t| vec![t]).collect();
        let s = joint_scores(&self.net, &self.embeddings, x, &cands)?;
        Ok(s.into_iter()
            .enumerate()
            .map(|(i, v)| self.y_scale.inverse(x.row(i), v[0]))
            .collect())
    }
}

fn train_joint(data: &Dataset, cfg: &TrainConfig, hsic_weight: f64, what: &str) -> Result<TrainedJoint> {
    require_data(data)?;
    cfg.validate()?;
    if !(hsic_weight >= 0.0 && hsic_weight.is_finite()) {
        return Err(Error::Config(format!("HSIC weight must be >= 0, got {hsic_weight}")));
    }
    let oc = &cfg.regression;
    let y_scale = OutcomeScaler::fit(&data.covariates, &data.outcomes, cfg.linear_trend)?;
    let y = y_scale.targets(&data.covariates, &data.outcomes);
    let table = TreatmentTable::new(&data.catalog, &data.observed_treatments())?;
    let unit_rows = table.rows(&data.treatments)?;
    let mut net = JointNet::new(cfg, data.d_x(), data.catalog[0].feature_dim())?;
    let mut opt = AdamState::new(oc.lr).with_weight_decay(oc.weight_decay);
    let mut order = rng::stream(cfg.seed, "joint/batches", 0);
    let mut stop = EarlyStopping::new(oc.patience, oc.min_delta);
    let mut best = net.clone();
    let mut losses = Vec::new();
    let penalty = (hsic_weight > 0.0).then_some(HsicPenalty {
        weight: hsic_weight,
        bandwidths: None,
    });
    for epoch in 0..oc.epochs {
        let mut total = 0.0;
        for b in minibatches(&mut order, data.len(), oc.batch_size) {
            let xb = data.covariates.select_rows(&b);
            let yb = column(&b.iter().map(|&i| y[i]).collect::<Vec<_>>());
            let batch = RegressionBatch {
                x: &xb,
                y: &yb,
                graphs: &table.batch,
                rows: Arc::new(b.iter().map(|&i| unit_rows[i]).collect()),
            };
            let mut tape = Tape::new();
            let vars = net.register(&mut tape, true);
            let loss = graphite_loss_on(&mut tape, &net, &vars, &batch, penalty)?;
            let grads = tape.backward(loss).map_err(|e| Error::Training(format!("{what}: {e}")))?;
            total += tape.value(loss).item() * b.len() as f64;
            opt.step(net.parameters_mut(), &grads.wrt_all(&vars))?;
        }
        let epoch_loss = total / data.len() as f64;
        check_loss(what, epoch, epoch_loss)?;
        losses.push(epoch_loss);
        if stop.observe(epoch_loss) {
            best = net.clone();
        }
        if stop.should_stop() {
            break;
        }
    }
    log::debug!("{what}: {} epochs, best loss {:.4}", losses.len(), stop.best());
    let embeddings = best.enc.encode_batch(&TreatmentTable::full(&data.catalog)?.batch)?;
    Ok(TrainedJoint {
        net: best,
        y_scale,
        embeddings,
        losses,
    })
}

/// GNN regression baseline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GnnRegression {
    pub model: TrainedJoint,
}

impl GnnRegression {
    /// Catalog embeddings used by CAT to map unseen treatments.
    pub fn embedding_table(&self) -> &Tensor {
        &self.model.embeddings
    }
}

pub fn train_gnn_regression(data: &Dataset, cfg: &TrainConfig) -> Result<GnnRegression> {
    Ok(GnnRegression {
        model: train_joint(data, cfg, 0.0, "gnn")?,
    })
}

impl CateEstimator for GnnRegression {
    fn name(&self) -> &'static str {
        "gnn"
    }

    fn treatment_scores(&self, x: &Tensor, candidates: &[Vec<usize>]) -> Result<Vec<Vec<f64>>> {
        self.model.scores(x, candidates)
    }
}

/// GraphITE: GNN regression with an HSIC independence penalty.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphiteModel {
    pub model: TrainedJoint,
    pub hsic_weight: f64,
}

pub fn train_graphite(data: &Dataset, cfg: &TrainConfig) -> Result<GraphiteModel> {
    Ok(GraphiteModel {
        model: train_joint(data, cfg, cfg.hsic_weight, "graphite")?,
        hsic_weight: cfg.hsic_weight,
    })
}

impl CateEstimator for GraphiteModel {
    fn name(&self) -> &'static str {
        "graphite"
    }

    fn treatment_scores(&self, x: &Tensor, candidates: &[Vec<usize>]) -> Result<Vec<Vec<f64>>> {
        self.model.scores(x, candidates)
    }
}
