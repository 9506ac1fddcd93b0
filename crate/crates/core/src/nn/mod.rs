//! Minimal differentiable feed-forward core: tensors, a reverse-mode tape,
//! ReLU MLPs and Adam.

mod adam;
mod mlp;
mod sparse;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamState};
pub use mlp::{mlp_forward, Activation, Mlp, MlpConfig};
pub use sparse::CsrMatrix;
pub use tape::{loss_gradients, Gradients, Tape, Var};
pub use tensor::Tensor;

/// Anything that owns an ordered list of trainable tensors.
pub trait Parameterized {
    fn parameters(&self) -> Vec<&Tensor>;
    fn parameters_mut(&mut self) -> Vec<&mut Tensor>;

    /// Registers all parameters on `tape`, trainable or frozen.
    fn register(&self, tape: &mut Tape, trainable: bool) -> Vec<Var> {
        self.parameters()
            .into_iter()
            .map(|p| {
                if trainable {
                    tape.var(p.clone())
                } else {
                    tape.constant(p.clone())
                }
            })
            .collect()
    }

    fn parameter_count(&self) -> usize {
        self.parameters().iter().map(|p| p.len()).sum()
    }
}

/// Central finite-difference gradient of `f` at `params`, for checking the tape.
pub fn finite_difference<F>(params: &[Tensor], eps: f64, mut f: F) -> crate::Result<Vec<Tensor>>
where
    F: FnMut(&[Tensor]) -> crate::Result<f64>,
{
    let mut work: Vec<Tensor> = params.to_vec();
    let mut out = Vec::with_capacity(params.len());
    for i in 0..params.len() {
        let mut g = Tensor::zeros(params[i].rows(), params[i].cols());
        for j in 0..params[i].len() {
            let orig = work[i].data()[j];
            work[i].data_mut()[j] = orig + eps;
            let up = f(&work)?;
            work[i].data_mut()[j] = orig - eps;
            let down = f(&work)?;
            work[i].data_mut()[j] = orig;
            g.data_mut()[j] = (up - down) / (2.0 * eps);
        }
        out.push(g);
    }
    Ok(out)
}

/// Max over entries of `|a - b| / max(|a|, |b|, floor)`.
pub fn max_relative_error(a: &[Tensor], b: &[Tensor], floor: f64) -> f64 {
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| x.data().iter().zip(y.data()))
        .map(|(&x, &y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}
