//! Reverse-mode differentiation over a small set of matrix primitives.
//!
//! A [`Tape`] records every intermediate value in evaluation order; calling
//! [`Tape::backward`] walks the records in reverse and accumulates adjoints.
//! Leaves created with [`Tape::constant`] never receive gradients, which is
//! how stop-gradient is expressed.
use std::sync::Arc;

use crate::error::{shape_err, Error, Result};
use crate::nn::tensor::{matmul_nt_into, matmul_tn_into};
use crate::nn::{CsrMatrix, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Relu(Var),
    Scale(Var, f64),
    Square(Var),
    Sqrt(Var),
    Sum(Var),
    Mean(Var),
    RowSum(Var),
    ConcatCols(Var, Var),
    GatherRows(Var, Arc<Vec<usize>>),
    SpMatMul(Arc<CsrMatrix>, Var),
    GaussianGram(Var, f64),
    DoubleCenter(Var),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient with respect to `v`; zeros when `v` does not influence the loss.
    pub fn wrt(&self, v: Var) -> Tensor {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[v.0];
                Tensor::zeros(r, c)
            }
        }
    }

    pub fn wrt_all(&self, vars: &[Var]) -> Vec<Tensor> {
        vars.iter().map(|&v| self.wrt(v)).collect()
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.same_shape(b) {
        Ok(())
    } else {
        Err(shape_err(
            op,
            format!("[{}, {}] vs [{}, {}]", a.rows(), a.cols(), b.rows(), b.cols()),
        ))
    }
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::from_vec(a.rows(), a.cols(), data).expect("shapes checked by caller")
}

fn add_into(acc: &mut Option<Tensor>, delta: Tensor) {
    match acc {
        Some(t) => {
            for (x, d) in t.data_mut().iter_mut().zip(delta.data()) {
                *x += d;
            }
        }
        None => *acc = Some(delta),
    }
}

/// `H K H` with `H = I - 11^T / n`.
fn double_center(k: &Tensor) -> Tensor {
    let n = k.rows();
    let mut row_mean = vec![0.0; n];
    let mut col_mean = vec![0.0; n];
    for i in 0..n {
        for j in 0..n {
            let v = k.get(i, j);
            row_mean[i] += v;
            col_mean[j] += v;
        }
    }
    let nf = n as f64;
    let grand = row_mean.iter().sum::<f64>() / (nf * nf);
    for v in row_mean.iter_mut().chain(col_mean.iter_mut()) {
        *v /= nf;
    }
    let mut out = Tensor::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            out.set(i, j, k.get(i, j) - row_mean[i] - col_mean[j] + grand);
        }
    }
    out
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Trainable leaf.
    pub fn var(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf excluded from differentiation.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    /// `a[n, m] + bias[1, m]` broadcast over rows.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(bias));
        if bv.rows() != 1 || bv.cols() != av.cols() {
            return Err(shape_err(
                "add_bias",
                format!("[{}, {}] + [{}, {}]", av.rows(), av.cols(), bv.rows(), bv.cols()),
            ));
        }
        let m = av.cols();
        let mut out = av.clone();
        for (i, x) in out.data_mut().iter_mut().enumerate() {
            *x += bv.data()[i % m];
        }
        let rg = self.rg(a) || self.rg(bias);
        Ok(self.push(out, Op::AddBias(a, bias), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("add", self.value(a), self.value(b))?;
        let out = zip_map(self.value(a), self.value(b), |x, y| x + y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("sub", self.value(a), self.value(b))?;
        let out = zip_map(self.value(a), self.value(b), |x, y| x - y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Sub(a, b), rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("mul", self.value(a), self.value(b))?;
        let out = zip_map(self.value(a), self.value(b), |x, y| x * y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    /// Elementwise quotient.
    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("div", self.value(a), self.value(b))?;
        let out = zip_map(self.value(a), self.value(b), |x, y| x / y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Div(a, b), rg))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.max(0.0));
        let rg = self.rg(a);
        self.push(out, Op::Relu(a), rg)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).map(|x| c * x);
        let rg = self.rg(a);
        self.push(out, Op::Scale(a, c), rg)
    }

    pub fn square(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x * x);
        let rg = self.rg(a);
        self.push(out, Op::Square(a), rg)
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::sqrt);
        let rg = self.rg(a);
        self.push(out, Op::Sqrt(a), rg)
    }

    /// Sum of all entries, as a `[1, 1]` tensor.
    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sum());
        let rg = self.rg(a);
        self.push(out, Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).mean());
        let rg = self.rg(a);
        self.push(out, Op::Mean(a), rg)
    }

    /// `[n, m] -> [n, 1]`
    pub fn row_sum(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let data = (0..av.rows()).map(|i| av.row(i).iter().sum()).collect();
        let out = Tensor::from_vec(av.rows(), 1, data).expect("row count");
        let rg = self.rg(a);
        self.push(out, Op::RowSum(a), rg)
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).concat_cols(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::ConcatCols(a, b), rg))
    }

    /// Output row `r` is input row `idx[r]`.
    pub fn gather_rows(&mut self, a: Var, idx: Arc<Vec<usize>>) -> Result<Var> {
        let av = self.value(a);
        if let Some(&bad) = idx.iter().find(|&&i| i >= av.rows()) {
            return Err(shape_err("gather_rows", format!("row {bad} >= {}", av.rows())));
        }
        let out = av.select_rows(&idx);
        let rg = self.rg(a);
        Ok(self.push(out, Op::GatherRows(a, idx), rg))
    }

    /// Constant sparse matrix times a dense value.
    pub fn sp_matmul(&mut self, s: Arc<CsrMatrix>, a: Var) -> Result<Var> {
        let out = s.matmul(self.value(a))?;
        let rg = self.rg(a);
        Ok(self.push(out, Op::SpMatMul(s, a), rg))
    }

    /// Gaussian-kernel Gram matrix `K_ij = exp(-|a_i - a_j|^2 / (2 bw^2))`.
    pub fn gaussian_gram(&mut self, a: Var, bandwidth: f64) -> Result<Var> {
        if !(bandwidth > 0.0 && bandwidth.is_finite()) {
            return Err(Error::Config(format!("kernel bandwidth must be > 0, got {bandwidth}")));
        }
        let av = self.value(a);
        let n = av.rows();
        let mut out = Tensor::zeros(n, n);
        let denom = 2.0 * bandwidth * bandwidth;
        for i in 0..n {
            out.set(i, i, 1.0);
            for j in (i + 1)..n {
                let d2: f64 = av
                    .row(i)
                    .iter()
                    .zip(av.row(j))
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum();
                let k = (-d2 / denom).exp();
                out.set(i, j, k);
                out.set(j, i, k);
            }
        }
        let rg = self.rg(a);
        Ok(self.push(out, Op::GaussianGram(a, bandwidth), rg))
    }

    /// `H K H` for a square `K`, with `H` the centering matrix.
    pub fn double_center(&mut self, k: Var) -> Result<Var> {
        let kv = self.value(k);
        if kv.rows() != kv.cols() {
            return Err(shape_err("double_center", "matrix must be square"));
        }
        let out = double_center(kv);
        let rg = self.rg(k);
        Ok(self.push(out, Op::DoubleCenter(k), rg))
    }

    /// Mean squared error between two same-shape values.
    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var> {
        let d = self.sub(pred, target)?;
        let sq = self.square(d);
        Ok(self.mean(sq))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(shape_err("backward", "loss must be a scalar"));
        }
        if !lv.item().is_finite() {
            return Err(Error::NonFinite(format!("loss = {}", lv.item())));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        let shapes = self
            .nodes
            .iter()
            .map(|n| (n.value.rows(), n.value.cols()))
            .collect();
        grads.resize(self.nodes.len(), None);
        Ok(Gradients { grads, shapes })
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let val = |v: Var| &self.nodes[v.0].value;
        let wants = |v: Var| self.nodes[v.0].requires_grad;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let (n, k, m) = (av.rows(), av.cols(), bv.cols());
                if wants(*a) {
                    let mut ga = vec![0.0; n * k];
                    matmul_nt_into(g.data(), bv.data(), &mut ga, n, m, k);
                    add_into(&mut grads[a.0], Tensor::from_vec(n, k, ga).unwrap());
                }
                if wants(*b) {
                    let mut gb = vec![0.0; k * m];
                    matmul_tn_into(av.data(), g.data(), &mut gb, n, k, m);
                    add_into(&mut grads[b.0], Tensor::from_vec(k, m, gb).unwrap());
                }
            }
            Op::AddBias(a, b) => {
                if wants(*a) {
                    add_into(&mut grads[a.0], g.clone());
                }
                if wants(*b) {
                    let m = g.cols();
                    let mut gb = vec![0.0; m];
                    for (i, x) in g.data().iter().enumerate() {
                        gb[i % m] += x;
                    }
                    add_into(&mut grads[b.0], Tensor::from_vec(1, m, gb).unwrap());
                }
            }
            Op::Add(a, b) => {
                if wants(*a) {
                    add_into(&mut grads[a.0], g.clone());
                }
                if wants(*b) {
                    add_into(&mut grads[b.0], g.clone());
                }
            }
            Op::Sub(a, b) => {
                if wants(*a) {
                    add_into(&mut grads[a.0], g.clone());
                }
                if wants(*b) {
                    add_into(&mut grads[b.0], g.map(|x| -x));
                }
            }
            Op::Mul(a, b) => {
                if wants(*a) {
                    add_into(&mut grads[a.0], zip_map(g, val(*b), |x, y| x * y));
                }
                if wants(*b) {
                    add_into(&mut grads[b.0], zip_map(g, val(*a), |x, y| x * y));
                }
            }
            Op::Div(a, b) => {
                let bv = val(*b);
                if wants(*a) {
                    add_into(&mut grads[a.0], zip_map(g, bv, |x, y| x / y));
                }
                if wants(*b) {
                    let q = zip_map(val(*a), bv, |x, y| -x / (y * y));
                    add_into(&mut grads[b.0], zip_map(g, &q, |x, y| x * y));
                }
            }
            Op::Relu(a) => {
                let ga = zip_map(g, val(*a), |x, y| if y > 0.0 { x } else { 0.0 });
                add_into(&mut grads[a.0], ga);
            }
            Op::Scale(a, c) => add_into(&mut grads[a.0], g.map(|x| c * x)),
            Op::Square(a) => {
                add_into(&mut grads[a.0], zip_map(g, val(*a), |x, y| 2.0 * x * y));
            }
            Op::Sqrt(a) => {
                let ga = zip_map(g, &node.value, |x, s| if s > 0.0 { x / (2.0 * s) } else { 0.0 });
                add_into(&mut grads[a.0], ga);
            }
            Op::Sum(a) => {
                let av = val(*a);
                add_into(&mut grads[a.0], Tensor::filled(av.rows(), av.cols(), g.item()));
            }
            Op::Mean(a) => {
                let av = val(*a);
                let s = g.item() / av.len().max(1) as f64;
                add_into(&mut grads[a.0], Tensor::filled(av.rows(), av.cols(), s));
            }
            Op::RowSum(a) => {
                let av = val(*a);
                let m = av.cols();
                let data = (0..av.len()).map(|i| g.data()[i / m]).collect();
                add_into(&mut grads[a.0], Tensor::from_vec(av.rows(), m, data).unwrap());
            }
            Op::ConcatCols(a, b) => {
                let (ca, cb) = (val(*a).cols(), val(*b).cols());
                let n = g.rows();
                if wants(*a) {
                    let mut ga = Vec::with_capacity(n * ca);
                    for i in 0..n {
                        ga.extend_from_slice(&g.row(i)[..ca]);
                    }
                    add_into(&mut grads[a.0], Tensor::from_vec(n, ca, ga).unwrap());
                }
                if wants(*b) {
                    let mut gb = Vec::with_capacity(n * cb);
                    for i in 0..n {
                        gb.extend_from_slice(&g.row(i)[ca..]);
                    }
                    add_into(&mut grads[b.0], Tensor::from_vec(n, cb, gb).unwrap());
                }
            }
            Op::GatherRows(a, idx) => {
                let av = val(*a);
                let m = av.cols();
                let mut ga = Tensor::zeros(av.rows(), m);
                let dst = ga.data_mut();
                for (r, &src) in idx.iter().enumerate() {
                    for (d, x) in dst[src * m..(src + 1) * m].iter_mut().zip(g.row(r)) {
                        *d += x;
                    }
                }
                add_into(&mut grads[a.0], ga);
            }
            Op::SpMatMul(s, a) => {
                let av = val(*a);
                let mut ga = Tensor::zeros(av.rows(), av.cols());
                s.matmul_t_acc(g, &mut ga);
                add_into(&mut grads[a.0], ga);
            }
            Op::GaussianGram(a, bw) => {
                let av = val(*a);
                let k = &node.value;
                let (n, d) = (av.rows(), av.cols());
                let inv = 1.0 / (bw * bw);
                let mut ga = Tensor::zeros(n, d);
                for i in 0..n {
                    for j in 0..n {
                        if i == j {
                            continue;
                        }
                        let w = (g.get(i, j) + g.get(j, i)) * k.get(i, j) * inv;
                        if w == 0.0 {
                            continue;
                        }
                        for c in 0..d {
                            let diff = av.get(i, c) - av.get(j, c);
                            let cur = ga.get(i, c);
                            ga.set(i, c, cur - w * diff);
                        }
                    }
                }
                add_into(&mut grads[a.0], ga);
            }
            Op::DoubleCenter(k) => add_into(&mut grads[k.0], double_center(g)),
        }
    }
}

/// Runs `loss_fn` on a fresh tape with `params` registered as trainable
/// leaves, returning the loss value and one gradient per parameter.
pub fn loss_gradients<F>(params: &[Tensor], loss_fn: F) -> Result<(f64, Vec<Tensor>)>
where
    F: FnOnce(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.var(p.clone())).collect();
    let loss = loss_fn(&mut tape, &vars)?;
    let grads = tape.backward(loss)?;
    Ok((tape.value(loss).item(), grads.wrt_all(&vars)))
}
