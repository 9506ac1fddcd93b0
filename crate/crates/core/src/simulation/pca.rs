use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Tensor;

/// Principal axes of a covariate matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pca {
    /// Column means used for centering.
    pub mean: Vec<f64>,
    /// `[d, k]`, orthonormal columns ordered by decreasing variance.
    pub basis: Tensor,
    /// All `d` eigenvalues of the (1/n) covariance, descending.
    pub eigenvalues: Vec<f64>,
}

impl Pca {
    pub fn k(&self) -> usize {
        self.basis.cols()
    }

    /// Projection of one covariate row.
    pub fn project_row(&self, x: &[f64]) -> Vec<f64> {
        let (d, k) = (self.basis.rows(), self.basis.cols());
        let mut out = vec![0.0; k];
        for i in 0..d {
            let c = x[i] - self.mean[i];
            for (j, o) in out.iter_mut().enumerate() {
                *o += c * self.basis.get(i, j);
            }
        }
        out
    }

    pub fn project(&self, x: &Tensor) -> Tensor {
        let k = self.k();
        let mut data = Vec::with_capacity(x.rows() * k);
        for r in 0..x.rows() {
            data.extend(self.project_row(x.row(r)));
        }
        Tensor::from_vec(x.rows(), k, data).expect("projection shape")
    }
}

/// Top-`k` principal components of `x` and the projected rows.
pub fn pca_project(x: &Tensor, k: usize) -> Result<(Pca, Tensor)> {
    let (n, d) = (x.rows(), x.cols());
    if k > d {
        return Err(Error::Config(format!("cannot take {k} components of {d}-dim data")));
    }
    if n <= k {
        return Err(Error::Config(format!("PCA with k = {k} needs more than {k} rows, got {n}")));
    }
    let mut mean = vec![0.0; d];
    for r in 0..n {
        for (m, v) in mean.iter_mut().zip(x.row(r)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);

    let centered = DMatrix::from_fn(n, d, |r, c| x.get(r, c) - mean[c]);
    let cov = centered.transpose() * &centered / n as f64;
    let eig = SymmetricEigen::new(cov);

    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let eigenvalues: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();

    let mut basis = Tensor::zeros(d, k);
    for (j, &col) in order.iter().take(k).enumerate() {
        let v = eig.eigenvectors.column(col);
        // sign convention: largest-magnitude entry positive
        let pivot = v.iter().copied().fold(0.0f64, |a, b| if b.abs() > a.abs() { b } else { a });
        let s = if pivot < 0.0 { -1.0 } else { 1.0 };
        for i in 0..d {
            basis.set(i, j, s * v[i]);
        }
    }
    let pca = Pca {
        mean,
        basis,
        eigenvalues,
    };
    let projected = pca.project(x);
    Ok((pca, projected))
}
