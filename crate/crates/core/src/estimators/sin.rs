//! Structured intervention networks.
//!
//! Stage 1 fits the mean outcome `m̂(x)`. Stage 2 alternates, per minibatch,
//! `K` Adam steps on
//! `J_{g,h} = mean (ỹ − ĝ(x)ᵀ(ĥ(t) − ê(x)))²` with `ỹ = y − m̂(x)` and `ê`
//! frozen, followed by one step on `J_e = mean ‖ĥ(t) − ê(x)‖²` with `ĥ`
//! frozen. Effects are `τ̂(t', t, x) = ĝ(x)ᵀ(ĥ(t') − ĥ(t))`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::estimators::{
    check_candidates, check_loss, column, minibatches, require_data, CateEstimator, EarlyStopping,
    OutcomeScaler, TrainConfig, TreatmentTable,
};
use crate::graphs::{GraphBatch, GraphEncoder};
use crate::nn::{AdamState, Mlp, Parameterized, Tape, Tensor, Var};
use crate::rng::{self, derive_seed};
use crate::simulation::Dataset;

/// `m̂(x)`, trained on standardized outcomes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanOutcomeModel {
    pub net: Mlp,
    pub y_scale: OutcomeScaler,
    /// Training loss per epoch, in standardized units.
    pub losses: Vec<f64>,
}

impl MeanOutcomeModel {
    pub fn predict(&self, x: &Tensor) -> Result<Vec<f64>> {
        let out = self.net.forward(x)?;
        Ok(out
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| self.y_scale.inverse(x.row(i), v))
            .collect())
    }
}

/// `J_m = mean (y − m̂(x))²` on a minibatch.
pub fn stage1_loss_on(tape: &mut Tape, m: &Mlp, vars: &[Var], x: &Tensor, y: &Tensor) -> Result<Var> {
    let xv = tape.constant(x.clone());
    let yv = tape.constant(y.clone());
    let pred = m.forward_on(tape, xv, vars)?;
    tape.mse(pred, yv)
}

pub fn train_stage1(data: &Dataset, cfg: &TrainConfig) -> Result<MeanOutcomeModel> {
    require_data(data)?;
    cfg.validate()?;
    let oc = &cfg.stage1;
    let y_scale = OutcomeScaler::fit(&data.covariates, &data.outcomes, cfg.linear_trend)?;
    let y = y_scale.targets(&data.covariates, &data.outcomes);
    let mut net = Mlp::new(cfg.covariate_net(data.d_x(), 1, derive_seed(cfg.seed, "sin/m", 0)))?;
    let mut opt = AdamState::new(oc.lr).with_weight_decay(oc.weight_decay);
    let mut order = rng::stream(cfg.seed, "sin/m/batches", 0);
    let mut stop = EarlyStopping::new(oc.patience, oc.min_delta);
    let mut best = net.clone();
    let mut losses = Vec::new();
    for epoch in 0..oc.epochs {
        let mut total = 0.0;
        for b in minibatches(&mut order, data.len(), oc.batch_size) {
            let xb = data.covariates.select_rows(&b);
            let yb = column(&b.iter().map(|&i| y[i]).collect::<Vec<_>>());
            let mut tape = Tape::new();
            let vars = net.register(&mut tape, true);
            let loss = stage1_loss_on(&mut tape, &net, &vars, &xb, &yb)?;
            let grads = tape.backward(loss).map_err(|e| Error::Training(format!("stage 1: {e}")))?;
            total += tape.value(loss).item() * b.len() as f64;
            opt.step(net.parameters_mut(), &grads.wrt_all(&vars))?;
        }
        let epoch_loss = total / data.len() as f64;
        check_loss("stage 1", epoch, epoch_loss)?;
        losses.push(epoch_loss);
        if stop.observe(epoch_loss) {
            best = net.clone();
        }
        if stop.should_stop() {
            break;
        }
    }
    log::debug!("stage 1: {} epochs, best loss {:.4}", losses.len(), stop.best());
    Ok(MeanOutcomeModel {
        net: best,
        y_scale,
        losses,
    })
}

/// Inputs of one `J_{g,h}` evaluation.
#[derive(Clone, Debug)]
pub struct Stage2Batch<'a> {
    pub x: &'a Tensor,
    /// `[n, 1]` outcome residuals `ỹ`.
    pub residual: &'a Tensor,
    /// `[n, d]` propensity features, treated as constants.
    pub e_hat: &'a Tensor,
    pub graphs: &'a GraphBatch,
    /// Row of `graphs` holding each unit's treatment.
    pub rows: Arc<Vec<usize>>,
}

/// `J_{g,h}` recorded on `tape`. `ê` enters as a constant, so no gradient
/// reaches `θ_e`.
pub fn gh_loss_on(
    tape: &mut Tape,
    g: &Mlp,
    g_vars: &[Var],
    h: &GraphEncoder,
    h_vars: &[Var],
    batch: &Stage2Batch<'_>,
) -> Result<Var> {
    let n = batch.x.rows();
    if batch.rows.len() != n || batch.residual.rows() != n || batch.e_hat.rows() != n {
        return Err(shape_err("gh_loss", "batch components disagree on the number of units"));
    }
    let xv = tape.constant(batch.x.clone());
    let yv = tape.constant(batch.residual.clone());
    let ev = tape.constant(batch.e_hat.clone());
    let gx = g.forward_on(tape, xv, g_vars)?;
    let table = h.forward_on(tape, batch.graphs, h_vars)?;
    let ht = tape.gather_rows(table, batch.rows.clone())?;
    let centered = tape.sub(ht, ev)?;
    let prod = tape.mul(gx, centered)?;
    let pred = tape.row_sum(prod);
    tape.mse(pred, yv)
}

/// `J_e = mean ‖ĥ(t) − ê(x)‖²` (averaged over entries) with a constant target.
pub fn e_loss_on(tape: &mut Tape, e: &Mlp, vars: &[Var], x: &Tensor, h_target: &Tensor) -> Result<Var> {
    let xv = tape.constant(x.clone());
    let tv = tape.constant(h_target.clone());
    let pred = e.forward_on(tape, xv, vars)?;
    tape.mse(pred, tv)
}

/// Second-stage networks and their training traces.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stage2Models {
    pub g: Mlp,
    pub h: GraphEncoder,
    pub e: Mlp,
    /// Residuals are divided by this before training; `ĝ` is rescaled by it.
    pub residual_scale: f64,
    /// Mean `J_{g,h}` at the first inner step of each minibatch, per epoch.
    pub gh_losses: Vec<f64>,
    pub e_losses: Vec<f64>,
    /// `J_{g,h}` of the returned networks on the full training set.
    pub final_gh_loss: f64,
}

fn gh_full_loss(
    g: &Mlp,
    h: &GraphEncoder,
    e: &Mlp,
    data: &Dataset,
    residual: &[f64],
    table: &TreatmentTable,
) -> Result<f64> {
    let x = &data.covariates;
    let e_hat = e.forward(x)?;
    let r = column(residual);
    let batch = Stage2Batch {
        x,
        residual: &r,
        e_hat: &e_hat,
        graphs: &table.batch,
        rows: Arc::new(table.rows(&data.treatments)?),
    };
    let mut tape = Tape::new();
    let gv = g.register(&mut tape, false);
    let hv = h.register(&mut tape, false);
    let loss = gh_loss_on(&mut tape, g, &gv, h, &hv, &batch)?;
    Ok(tape.value(loss).item())
}

pub fn train_stage2(data: &Dataset, m: &MeanOutcomeModel, cfg: &TrainConfig) -> Result<Stage2Models> {
    require_data(data)?;
    cfg.validate()?;
    let oc = &cfg.stage2;
    let d = cfg.embed_dim;
    let m_hat = m.predict(&data.covariates)?;
    let raw: Vec<f64> = data.outcomes.iter().zip(&m_hat).map(|(y, m)| y - m).collect();
    let rms = (raw.iter().map(|v| v * v).sum::<f64>() / raw.len() as f64).sqrt();
    let residual_scale = if rms > 1e-12 { rms } else { 1.0 };
    let residual: Vec<f64> = raw.iter().map(|v| v / residual_scale).collect();

    let table = TreatmentTable::new(&data.catalog, &data.observed_treatments())?;
    let unit_rows = table.rows(&data.treatments)?;
    let node_dim = data.catalog[0].feature_dim();

    let mut g = Mlp::new(cfg.covariate_net(data.d_x(), d, derive_seed(cfg.seed, "sin/g", 0)))?;
    let mut h = GraphEncoder::new(cfg.encoder_config(node_dim, derive_seed(cfg.seed, "sin/h", 0)))?;
    let mut e = Mlp::new(cfg.covariate_net(data.d_x(), d, derive_seed(cfg.seed, "sin/e", 0)))?;
    let (mut opt_g, mut opt_h, mut opt_e) =
        (
        AdamState::new(cfg.lr_g).with_weight_decay(cfg.wd_g),
        AdamState::new(cfg.lr_h).with_weight_decay(cfg.wd_h),
        AdamState::new(cfg.lr_e).with_weight_decay(cfg.wd_e),
    );
    let n_g = g.parameters().len();

    let mut order = rng::stream(cfg.seed, "sin/stage2/batches", 0);
    let mut stop = EarlyStopping::new(oc.patience, oc.min_delta);
    let mut best = (g.clone(), h.clone(), e.clone());
    let (mut gh_losses, mut e_losses) = (Vec::new(), Vec::new());

    for epoch in 0..oc.epochs {
        let (mut gh_total, mut e_total) = (0.0, 0.0);
        for b in minibatches(&mut order, data.len(), oc.batch_size) {
            let xb = data.covariates.select_rows(&b);
            let rb = column(&b.iter().map(|&i| residual[i]).collect::<Vec<_>>());
            let rows = Arc::new(b.iter().map(|&i| unit_rows[i]).collect::<Vec<_>>());
            let e_hat = e.forward(&xb)?;
            let batch = Stage2Batch {
                x: &xb,
                residual: &rb,
                e_hat: &e_hat,
                graphs: &table.batch,
                rows: rows.clone(),
            };
            for k in 0..cfg.inner_steps {
                let mut tape = Tape::new();
                let gv = g.register(&mut tape, true);
                let hv = h.register(&mut tape, true);
                let loss = gh_loss_on(&mut tape, &g, &gv, &h, &hv, &batch)?;
                let grads = tape.backward(loss).map_err(|e| Error::Training(format!("J_gh: {e}")))?;
                if k == 0 {
                    gh_total += tape.value(loss).item() * b.len() as f64;
                }
                let all: Vec<Var> = gv.iter().chain(&hv).copied().collect();
                let mut gr = grads.wrt_all(&all);
                let gr_h = gr.split_off(n_g);
                opt_g.step(g.parameters_mut(), &gr)?;
                opt_h.step(h.parameters_mut(), &gr_h)?;
            }
            let target = h.encode_batch(&table.batch)?.select_rows(&rows);
            let mut tape = Tape::new();
            let ev = e.register(&mut tape, true);
            let loss = e_loss_on(&mut tape, &e, &ev, &xb, &target)?;
            let grads = tape.backward(loss).map_err(|e| Error::Training(format!("J_e: {e}")))?;
            e_total += tape.value(loss).item() * b.len() as f64;
            opt_e.step(e.parameters_mut(), &grads.wrt_all(&ev))?;
        }
        let gh = gh_total / data.len() as f64;
        check_loss("stage 2", epoch, gh)?;
        gh_losses.push(gh);
        e_losses.push(e_total / data.len() as f64);
        if stop.observe(gh) {
            best = (g.clone(), h.clone(), e.clone());
        }
        if stop.should_stop() {
            break;
        }
    }
    let (g, h, e) = best;
    let final_gh_loss = gh_full_loss(&g, &h, &e, data, &residual, &table)?;
    log::debug!("stage 2: {} epochs, final J_gh {:.4}", gh_losses.len(), final_gh_loss);
    Ok(Stage2Models {
        g,
        h,
        e,
        residual_scale,
        gh_losses,
        e_losses,
        final_gh_loss,
    })
}

/// A trained SIN estimator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SinModel {
    pub config: TrainConfig,
    pub m: MeanOutcomeModel,
    pub stage2: Stage2Models,
    /// `ĥ(t)` for every catalog entry, `[|T|, d]`.
    pub embeddings: Tensor,
}

impl SinModel {
    /// `ĝ(x)` rescaled to outcome units, `[n, d]`.
    pub fn g_features(&self, x: &Tensor) -> Result<Tensor> {
        let s = self.stage2.residual_scale;
        Ok(self.stage2.g.forward(x)?.map(|v| v * s))
    }

    pub fn propensity_features(&self, x: &Tensor) -> Result<Tensor> {
        self.stage2.e.forward(x)
    }

    /// `m̂(x) + ĝ(x)ᵀ(ĥ(t) − ê(x))` in outcome units.
    pub fn predict_outcomes(&self, x: &Tensor, treatments: &[usize]) -> Result<Vec<f64>> {
        if treatments.len() != x.rows() {
            return Err(shape_err("SinModel::predict_outcomes", "one treatment per row"));
        }
        let m = self.m.predict(x)?;
        let g = self.g_features(x)?;
        let e = self.propensity_features(x)?;
        treatments
            .iter()
            .enumerate()
            .map(|(i, &t)| {
                let h = self.embedding(t)?;
                Ok(m[i] + (0..h.len()).map(|k| g.row(i)[k] * (h[k] - e.row(i)[k])).sum::<f64>())
            })
            .collect()
    }

    fn embedding(&self, t: usize) -> Result<&[f64]> {
        if t >= self.embeddings.rows() {
            return Err(Error::UnknownTreatment(t));
        }
        Ok(self.embeddings.row(t))
    }
}

/// `ĝ(x)ᵀ(ĥ(t') − ĥ(t))`.
pub fn sin_predict_cate(model: &SinModel, x: &[f64], t_prime: usize, t: usize) -> Result<f64> {
    let xt = Tensor::from_vec(1, x.len(), x.to_vec())?;
    let g = model.g_features(&xt)?;
    let (a, b) = (model.embedding(t_prime)?, model.embedding(t)?);
    Ok(g.row(0).iter().zip(a.iter().zip(b)).map(|(g, (a, b))| g * (a - b)).sum())
}

impl CateEstimator for SinModel {
    fn name(&self) -> &'static str {
        "sin"
    }

    fn treatment_scores(&self, x: &Tensor, candidates: &[Vec<usize>]) -> Result<Vec<Vec<f64>>> {
        check_candidates(candidates, x, self.embeddings.rows())?;
        let g = self.g_features(x)?;
        Ok(candidates
            .iter()
            .enumerate()
            .map(|(i, ts)| {
                ts.iter()
                    .map(|&t| g.row(i).iter().zip(self.embeddings.row(t)).map(|(a, b)| a * b).sum())
                    .collect()
            })
            .collect())
    }

    fn predict_cate(&self, x: &[f64], t_prime: usize, t: usize) -> Result<f64> {
        sin_predict_cate(self, x, t_prime, t)
    }
}

/// Both stages of SIN training.
pub fn train_sin(data: &Dataset, cfg: &TrainConfig) -> Result<SinModel> {
    let m = train_stage1(data, cfg)?;
    let stage2 = train_stage2(data, &m, cfg)?;
    let embeddings = stage2.h.encode_batch(&TreatmentTable::full(&data.catalog)?.batch)?;
    if !embeddings.is_finite() {
        return Err(Error::NonFinite("treatment embeddings".into()));
    }
    Ok(SinModel {
        config: cfg.clone(),
        m,
        stage2,
        embeddings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::test_config as quick_config;
    use crate::simulation::{build_benchmark, SimConfig};
    use crate::nn::MlpConfig;

    fn tiny_data() -> Dataset {
        let cfg = SimConfig {
            n_in: 64,
            n_out: 10,
            n_treatments: 6,
            d_x: 5,
            ..SimConfig::small_world(4)
        };
        build_benchmark(&cfg).unwrap().in_sample
    }

    #[test]
    fn prediction_contract() {
        let data = tiny_data();
        let model = train_sin(&data, &quick_config(1)).unwrap();
        let x = data.covariates.row(3);
        assert_eq!(model.predict_cate(x, 2, 2).unwrap(), 0.0);
        let a = model.predict_cate(x, 1, 4).unwrap();
        assert_eq!(a, -model.predict_cate(x, 4, 1).unwrap());
        let sum = model.predict_cate(x, 5, 2).unwrap() + model.predict_cate(x, 2, 0).unwrap();
        assert!((model.predict_cate(x, 5, 0).unwrap() - sum).abs() < 1e-10);
        assert!(matches!(model.predict_cate(x, 6, 0), Err(Error::UnknownTreatment(6))));
        assert!(model.predict_cate(&[0.0; 3], 1, 0).is_err());
    }

    #[test]
    fn deterministic_per_seed() {
        let data = tiny_data();
        let a = train_sin(&data, &quick_config(2)).unwrap();
        let b = train_sin(&data, &quick_config(2)).unwrap();
        assert_eq!(a, b);
        let c = train_sin(&data, &quick_config(3)).unwrap();
        assert_ne!(a.embeddings, c.embeddings);
    }

    #[test]
    fn e_receives_no_gradient_from_gh() {
        let data = tiny_data();
        let cfg = quick_config(0);
        let table = TreatmentTable::full(&data.catalog).unwrap();
        let g = Mlp::new(MlpConfig::new(vec![5, 8, 4], 1)).unwrap();
        let e = Mlp::new(MlpConfig::new(vec![5, 8, 4], 2)).unwrap();
        let h = GraphEncoder::new(cfg.encoder_config(1, 3)).unwrap();
        let r = column(&data.outcomes);
        let mut tape = Tape::new();
        let gv = g.register(&mut tape, true);
        let hv = h.register(&mut tape, true);
        let ev = e.register(&mut tape, true);
        let xv = tape.constant(data.covariates.clone());
        let e_out = e.forward_on(&mut tape, xv, &ev).unwrap();
        let e_hat = tape.value(e_out).clone();
        let batch = Stage2Batch {
            x: &data.covariates,
            residual: &r,
            e_hat: &e_hat,
            graphs: &table.batch,
            rows: Arc::new(table.rows(&data.treatments).unwrap()),
        };
        let loss = gh_loss_on(&mut tape, &g, &gv, &h, &hv, &batch).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert!(grads.wrt_all(&ev).iter().all(|t| t.data().iter().all(|&v| v == 0.0)));
        assert!(grads.wrt_all(&gv).iter().any(|t| t.data().iter().any(|&v| v != 0.0)));
    }

    #[test]
    fn empty_data_rejected() {
        let data = tiny_data().subset(&[]);
        assert!(train_stage1(&data, &quick_config(0)).is_err());
    }
}
