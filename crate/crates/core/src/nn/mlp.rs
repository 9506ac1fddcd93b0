use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::nn::{Parameterized, Tape, Tensor, Var};
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
        }
    }

    fn on_tape(self, tape: &mut Tape, v: Var) -> Var {
        match self {
            Activation::Relu => tape.relu(v),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    /// Input, hidden..., output widths.
    pub layer_dims: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
    /// Apply the activation after the last layer as well.
    #[serde(default)]
    pub activate_output: bool,
    pub seed: u64,
}

impl MlpConfig {
    pub fn new(layer_dims: Vec<usize>, seed: u64) -> Self {
        Self {
            layer_dims,
            activation: Activation::Relu,
            activate_output: false,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_dims.len() < 2 {
            return Err(Error::Config("an MLP needs at least input and output widths".into()));
        }
        if self.layer_dims.contains(&0) {
            return Err(Error::Config("MLP layer widths must be positive".into()));
        }
        Ok(())
    }
}

/// Fully connected ReLU network. Parameters are stored as
/// `[W_0, b_0, W_1, b_1, ...]` with `W_l: [dims[l], dims[l+1]]`, `b_l: [1, dims[l+1]]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    config: MlpConfig,
    params: Vec<Tensor>,
}

impl Mlp {
    /// Glorot-uniform weights, zero biases.
    pub fn new(config: MlpConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = rng::from_seed(config.seed);
        let mut params = Vec::with_capacity(2 * (config.layer_dims.len() - 1));
        for w in config.layer_dims.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let data = (0..fan_in * fan_out)
                .map(|_| rng.random_range(-limit..limit))
                .collect();
            params.push(Tensor::from_vec(fan_in, fan_out, data)?);
            params.push(Tensor::zeros(1, fan_out));
        }
        Ok(Self { config, params })
    }

    /// Builds a network from explicit parameters (checked against the widths).
    pub fn from_params(config: MlpConfig, params: Vec<Tensor>) -> Result<Self> {
        config.validate()?;
        let layers = config.layer_dims.len() - 1;
        if params.len() != 2 * layers {
            return Err(shape_err(
                "Mlp::from_params",
                format!("expected {} tensors, got {}", 2 * layers, params.len()),
            ));
        }
        for (l, w) in config.layer_dims.windows(2).enumerate() {
            let (wt, bt) = (&params[2 * l], &params[2 * l + 1]);
            if wt.rows() != w[0] || wt.cols() != w[1] || bt.rows() != 1 || bt.cols() != w[1] {
                return Err(shape_err("Mlp::from_params", format!("layer {l} has wrong shape")));
            }
        }
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &MlpConfig {
        &self.config
    }

    pub fn input_dim(&self) -> usize {
        self.config.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.config.layer_dims.last().expect("validated")
    }

    pub fn n_layers(&self) -> usize {
        self.config.layer_dims.len() - 1
    }

    /// Inference pass without recording a tape.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        if x.cols() != self.input_dim() {
            return Err(shape_err(
                "mlp_forward",
                format!("input has {} columns, network expects {}", x.cols(), self.input_dim()),
            ));
        }
        let last = self.n_layers() - 1;
        let mut h = x.clone();
        for l in 0..self.n_layers() {
            let mut z = h.matmul(&self.params[2 * l])?;
            let bias = self.params[2 * l + 1].data();
            let m = bias.len();
            let act = self.config.activation;
            let activate = l < last || self.config.activate_output;
            for (i, v) in z.data_mut().iter_mut().enumerate() {
                *v += bias[i % m];
                if activate {
                    *v = act.apply(*v);
                }
            }
            h = z;
        }
        Ok(h)
    }

    /// Recorded forward pass; `vars` are this network's parameters on `tape`.
    pub fn forward_on(&self, tape: &mut Tape, x: Var, vars: &[Var]) -> Result<Var> {
        if vars.len() != self.params.len() {
            return Err(shape_err("Mlp::forward_on", "parameter handle count"));
        }
        if tape.value(x).cols() != self.input_dim() {
            return Err(shape_err(
                "mlp_forward",
                format!(
                    "input has {} columns, network expects {}",
                    tape.value(x).cols(),
                    self.input_dim()
                ),
            ));
        }
        let last = self.n_layers() - 1;
        let mut h = x;
        for l in 0..self.n_layers() {
            let z = tape.matmul(h, vars[2 * l])?;
            let z = tape.add_bias(z, vars[2 * l + 1])?;
            h = if l < last || self.config.activate_output {
                self.config.activation.on_tape(tape, z)
            } else {
                z
            };
        }
        Ok(h)
    }
}

impl Parameterized for Mlp {
    fn parameters(&self) -> Vec<&Tensor> {
        self.params.iter().collect()
    }

    fn parameters_mut(&mut self) -> Vec<&mut Tensor> {
        self.params.iter_mut().collect()
    }
}

/// Free-function form of [`Mlp::forward`].
pub fn mlp_forward(mlp: &Mlp, x: &Tensor) -> Result<Tensor> {
    mlp.forward(x)
}
