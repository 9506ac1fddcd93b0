use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Result};
use crate::graphs::Graph;
use crate::nn::{CsrMatrix, Mlp, MlpConfig, Parameterized, Tape, Tensor, Var};
use crate::rng::derive_seed;

/// Disjoint union of graphs prepared for message passing.
#[derive(Clone, Debug)]
pub struct GraphBatch {
    features: Tensor,
    /// Row `v` averages the states of `v`'s neighbours.
    neighbor_mean: Arc<CsrMatrix>,
    /// Row `g` averages the node states of graph `g`.
    pool: Arc<CsrMatrix>,
}

impl GraphBatch {
    pub fn new(graphs: &[&Graph]) -> Result<Self> {
        let total: usize = graphs.iter().map(|g| g.n_nodes()).sum();
        let d = graphs.first().map_or(0, |g| g.feature_dim());
        let mut features = Vec::with_capacity(total * d);
        let mut agg_rows = Vec::with_capacity(total);
        let mut pool_rows = Vec::with_capacity(graphs.len());
        let mut offset = 0;
        for g in graphs {
            if g.feature_dim() != d {
                return Err(shape_err("GraphBatch", "node feature widths differ"));
            }
            features.extend_from_slice(g.node_features().data());
            for v in 0..g.n_nodes() {
                let nb = g.neighbors(v);
                let w = 1.0 / nb.len().max(1) as f64;
                agg_rows.push(nb.iter().map(|&u| (offset + u, w)).collect());
            }
            let w = 1.0 / g.n_nodes() as f64;
            pool_rows.push((0..g.n_nodes()).map(|v| (offset + v, w)).collect());
            offset += g.n_nodes();
        }
        Ok(Self {
            features: Tensor::from_vec(total, d, features)?,
            neighbor_mean: Arc::new(CsrMatrix::from_rows(total, agg_rows)?),
            pool: Arc::new(CsrMatrix::from_rows(total, pool_rows)?),
        })
    }

    pub fn n_graphs(&self) -> usize {
        self.pool.rows()
    }

    pub fn n_nodes(&self) -> usize {
        self.features.rows()
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub node_dim: usize,
    pub hidden_dim: usize,
    pub out_dim: usize,
    pub n_rounds: usize,
    pub seed: u64,
}

impl EncoderConfig {
    pub fn new(node_dim: usize, hidden_dim: usize, out_dim: usize, seed: u64) -> Self {
        Self {
            node_dim,
            hidden_dim,
            out_dim,
            n_rounds: 2,
            seed,
        }
    }
}

/// Mean-aggregation message passing network with a mean readout.
///
/// Each round computes `m = msg(h)`, `a = mean_{u ~ v} m_u`, `h' = upd([h | a])`;
/// the graph embedding is `out(mean_v h_v)`. Both aggregations are means,
/// so the embedding does not depend on node order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphEncoder {
    config: EncoderConfig,
    message: Vec<Mlp>,
    update: Vec<Mlp>,
    readout: Mlp,
}

impl GraphEncoder {
    pub fn new(config: EncoderConfig) -> Result<Self> {
        let h = config.hidden_dim;
        let mut message = Vec::with_capacity(config.n_rounds);
        let mut update = Vec::with_capacity(config.n_rounds);
        for r in 0..config.n_rounds {
            let input = if r == 0 { config.node_dim } else { h };
            let mut m = MlpConfig::new(vec![input, h, h], derive_seed(config.seed, "msg", r as u64));
            m.activate_output = true;
            let mut u =
                MlpConfig::new(vec![input + h, h, h], derive_seed(config.seed, "upd", r as u64));
            u.activate_output = true;
            message.push(Mlp::new(m)?);
            update.push(Mlp::new(u)?);
        }
        let last = if config.n_rounds == 0 { config.node_dim } else { h };
        let readout = Mlp::new(MlpConfig::new(
            vec![last, h, config.out_dim],
            derive_seed(config.seed, "readout", 0),
        ))?;
        Ok(Self {
            config,
            message,
            update,
            readout,
        })
    }

    /// Assembles an encoder from explicit sub-networks.
    pub fn from_parts(config: EncoderConfig, message: Vec<Mlp>, update: Vec<Mlp>, readout: Mlp) -> Self {
        Self {
            config,
            message,
            update,
            readout,
        }
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn out_dim(&self) -> usize {
        self.config.out_dim
    }

    fn submodules(&self) -> Vec<&Mlp> {
        let mut out = Vec::new();
        for (m, u) in self.message.iter().zip(&self.update) {
            out.push(m);
            out.push(u);
        }
        out.push(&self.readout);
        out
    }

    /// Embeddings `[n_graphs, out_dim]` recorded on `tape`.
    pub fn forward_on(&self, tape: &mut Tape, batch: &GraphBatch, vars: &[Var]) -> Result<Var> {
        if batch.feature_dim() != self.config.node_dim {
            return Err(shape_err(
                "encode_graph",
                format!(
                    "node features have width {}, encoder expects {}",
                    batch.feature_dim(),
                    self.config.node_dim
                ),
            ));
        }
        let mut offset = 0;
        let mut take = |m: &Mlp| {
            let k = m.parameters().len();
            let s = &vars[offset..offset + k];
            offset += k;
            s.to_vec()
        };
        let mut h = tape.constant(batch.features.clone());
        for (msg, upd) in self.message.iter().zip(&self.update) {
            let mv = take(msg);
            let uv = take(upd);
            let m = msg.forward_on(tape, h, &mv)?;
            let a = tape.sp_matmul(batch.neighbor_mean.clone(), m)?;
            let cat = tape.concat_cols(h, a)?;
            h = upd.forward_on(tape, cat, &uv)?;
        }
        let pooled = tape.sp_matmul(batch.pool.clone(), h)?;
        let rv = take(&self.readout);
        self.readout.forward_on(tape, pooled, &rv)
    }

    /// Inference-only batch encoding.
    pub fn encode_batch(&self, batch: &GraphBatch) -> Result<Tensor> {
        let mut tape = Tape::new();
        let vars = self.register(&mut tape, false);
        let out = self.forward_on(&mut tape, batch, &vars)?;
        Ok(tape.value(out).clone())
    }

    pub fn encode(&self, g: &Graph) -> Result<Vec<f64>> {
        Ok(self.encode_batch(&GraphBatch::new(&[g])?)?.into_data())
    }
}

impl Parameterized for GraphEncoder {
    fn parameters(&self) -> Vec<&Tensor> {
        self.submodules().into_iter().flat_map(|m| m.parameters()).collect()
    }

    fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for (m, u) in self.message.iter_mut().zip(self.update.iter_mut()) {
            out.extend(m.parameters_mut());
            out.extend(u.parameters_mut());
        }
        out.extend(self.readout.parameters_mut());
        out
    }
}

/// Free-function form of [`GraphEncoder::encode`].
pub fn encode_graph(enc: &GraphEncoder, g: &Graph) -> Result<Vec<f64>> {
    enc.encode(g)
}
