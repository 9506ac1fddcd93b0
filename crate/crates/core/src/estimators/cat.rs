//! CAT baseline: regression on `[x | onehot(t)]` over the treatments seen in
//! training. An unseen treatment is replaced by the seen treatment closest to
//! it in a reference embedding space (the trained GNN baseline's).

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::estimators::{
    check_candidates, check_loss, column, minibatches, require_data, CateEstimator, EarlyStopping,
    OutcomeScaler, TrainConfig,
};
use crate::nn::{AdamState, Mlp, Parameterized, Tape, Tensor};
use crate::rng::{self, derive_seed};
use crate::simulation::Dataset;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CatModel {
    pub net: Mlp,
    pub y_scale: OutcomeScaler,
    /// Catalog ids of the one-hot columns, ascending.
    pub seen: Vec<usize>,
    /// One-hot column used for every catalog id.
    pub column_of: Vec<usize>,
    pub losses: Vec<f64>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// One-hot column for each catalog entry: its own if seen, otherwise the
/// nearest seen entry (ties to the lower id).
pub fn map_to_seen(reference: &Tensor, seen: &[usize]) -> Result<Vec<usize>> {
    if seen.is_empty() {
        return Err(Error::Config("CAT needs at least one training treatment".into()));
    }
    if let Some(&t) = seen.iter().find(|&&t| t >= reference.rows()) {
        return Err(Error::UnknownTreatment(t));
    }
    Ok((0..reference.rows())
        .map(|t| {
            if let Ok(c) = seen.binary_search(&t) {
                return c;
            }
            let mut best = (0, f64::INFINITY);
            for (c, &s) in seen.iter().enumerate() {
                let d = sq_dist(reference.row(t), reference.row(s));
                if d < best.1 {
                    best = (c, d);
                }
            }
            best.0
        })
        .collect())
}

impl CatModel {
    fn onehot_inputs(&self, x: &Tensor, pairs: &[(usize, usize)]) -> Result<Tensor> {
        let (d, w) = (x.cols(), self.seen.len());
        let mut data = vec![0.0; pairs.len() * (d + w)];
        for (r, &(i, t)) in pairs.iter().enumerate() {
            let row = &mut data[r * (d + w)..(r + 1) * (d + w)];
            row[..d].copy_from_slice(x.row(i));
            row[d + self.column_of[t]] = 1.0;
        }
        Tensor::from_vec(pairs.len(), d + w, data)
    }

    /// Outcome predictions `f̂(x_i, t_i)` in original units.
    pub fn predict_outcomes(&self, x: &Tensor, treatments: &[usize]) -> Result<Vec<f64>> {
        if treatments.len() != x.rows() {
            return Err(shape_err("CatModel::predict_outcomes", "one treatment per row"));
        }
        if let Some(&t) = treatments.iter().find(|&&t| t >= self.column_of.len()) {
            return Err(Error::UnknownTreatment(t));
        }
        let pairs: Vec<(usize, usize)> = treatments.iter().copied().enumerate().collect();
        let out = self.net.forward(&self.onehot_inputs(x, &pairs)?)?;
        Ok(out
            .data()
            .iter()
            .enumerate()
            .map(|(i, &v)| self.y_scale.inverse(x.row(i), v))
            .collect())
    }
}

/// Trains CAT on `data`; `reference` holds one embedding row per catalog entry.
pub fn train_cat(data: &Dataset, cfg: &TrainConfig, reference: &Tensor) -> Result<CatModel> {
    require_data(data)?;
    cfg.validate()?;
    if reference.rows() != data.n_treatments() {
        return Err(shape_err(
            "train_cat",
            format!("{} reference embeddings for {} treatments", reference.rows(), data.n_treatments()),
        ));
    }
    let seen = data.observed_treatments();
    let column_of = map_to_seen(reference, &seen)?;
    let oc = &cfg.regression;
    let y_scale = OutcomeScaler::fit(&data.covariates, &data.outcomes, cfg.linear_trend)?;
    let y = y_scale.targets(&data.covariates, &data.outcomes);
    let net = Mlp::new(cfg.covariate_net(data.d_x() + seen.len(), 1, derive_seed(cfg.seed, "cat/net", 0)))?;
    let mut model = CatModel {
        net,
        y_scale,
        seen,
        column_of,
        losses: Vec::new(),
    };
    let mut opt = AdamState::new(oc.lr).with_weight_decay(oc.weight_decay);
    let mut order = rng::stream(cfg.seed, "cat/batches", 0);
    let mut stop = EarlyStopping::new(oc.patience, oc.min_delta);
    let mut best = model.net.clone();
    for epoch in 0..oc.epochs {
        let mut total = 0.0;
        for b in minibatches(&mut order, data.len(), oc.batch_size) {
            let pairs: Vec<(usize, usize)> = b.iter().map(|&i| (i, data.treatments[i])).collect();
            let input = model.onehot_inputs(&data.covariates, &pairs)?;
            let yb = column(&b.iter().map(|&i| y[i]).collect::<Vec<_>>());
            let mut tape = Tape::new();
            let vars = model.net.register(&mut tape, true);
            let xv = tape.constant(input);
            let yv = tape.constant(yb);
            let pred = model.net.forward_on(&mut tape, xv, &vars)?;
            let loss = tape.mse(pred, yv)?;
            let grads = tape.backward(loss).map_err(|e| Error::Training(format!("cat: {e}")))?;
            total += tape.value(loss).item() * b.len() as f64;
            opt.step(model.net.parameters_mut(), &grads.wrt_all(&vars))?;
        }
        let epoch_loss = total / data.len() as f64;
        check_loss("cat", epoch, epoch_loss)?;
        model.losses.push(epoch_loss);
        if stop.observe(epoch_loss) {
            best = model.net.clone();
        }
        if stop.should_stop() {
            break;
        }
    }
    model.net = best;
    Ok(model)
}

impl CateEstimator for CatModel {
    fn name(&self) -> &'static str {
        "cat"
    }

    fn treatment_scores(&self, x: &Tensor, candidates: &[Vec<usize>]) -> Result<Vec<Vec<f64>>> {
        check_candidates(candidates, x, self.column_of.len())?;
        let pairs: Vec<(usize, usize)> = candidates
            .iter()
            .enumerate()
            .flat_map(|(i, ts)| ts.iter().map(move |&t| (i, t)))
            .collect();
        let out = self.net.forward(&self.onehot_inputs(x, &pairs)?)?;
        let mut k = 0;
        Ok(candidates
            .iter()
            .map(|ts| {
                let s = out.data()[k..k + ts.len()].iter().map(|v| v * self.y_scale.scale).collect();
                k += ts.len();
                s
            })
            .collect())
    }

    fn predict_cate(&self, x: &[f64], t_prime: usize, t: usize) -> Result<f64> {
        let n = self.column_of.len();
        if t_prime >= n || t >= n {
            return Err(Error::UnknownTreatment(t_prime.max(t)));
        }
        if self.column_of[t_prime] == self.column_of[t] {
            return Ok(0.0);
        }
        let xt = Tensor::from_vec(1, x.len(), x.to_vec())?;
        let s = self.treatment_scores(&xt, &[vec![t_prime, t]])?;
        Ok(s[0][0] - s[0][1])
    }
}
