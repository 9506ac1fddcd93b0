use crate::error::{shape_err, Result};
use crate::nn::Tensor;

/// Compressed-sparse-row matrix with constant entries.
///
/// Used for neighbour aggregation and per-graph pooling in the graph encoder.
#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    rows: usize,
    cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Builds from per-row `(col, value)` lists.
    pub fn from_rows(cols: usize, rows: Vec<Vec<(usize, f64)>>) -> Result<Self> {
        let mut indptr = Vec::with_capacity(rows.len() + 1);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        indptr.push(0);
        for r in &rows {
            for &(c, v) in r {
                if c >= cols {
                    return Err(shape_err("CsrMatrix", format!("column {c} >= {cols}")));
                }
                indices.push(c);
                values.push(v);
            }
            indptr.push(indices.len());
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            indptr,
            indices,
            values,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// `self * dense`
    pub fn matmul(&self, dense: &Tensor) -> Result<Tensor> {
        if dense.rows() != self.cols {
            return Err(shape_err(
                "spmm",
                format!("[{}, {}] x [{}, {}]", self.rows, self.cols, dense.rows(), dense.cols()),
            ));
        }
        let m = dense.cols();
        let mut out = Tensor::zeros(self.rows, m);
        let src = dense.data();
        let dst = out.data_mut();
        for r in 0..self.rows {
            let orow = &mut dst[r * m..(r + 1) * m];
            for p in self.indptr[r]..self.indptr[r + 1] {
                let (c, v) = (self.indices[p], self.values[p]);
                for (o, &s) in orow.iter_mut().zip(&src[c * m..(c + 1) * m]) {
                    *o += v * s;
                }
            }
        }
        Ok(out)
    }

    /// `out += self^T * dense`
    pub(crate) fn matmul_t_acc(&self, dense: &Tensor, out: &mut Tensor) {
        let m = dense.cols();
        let src = dense.data();
        let dst = out.data_mut();
        for r in 0..self.rows {
            let srow = &src[r * m..(r + 1) * m];
            for p in self.indptr[r]..self.indptr[r + 1] {
                let (c, v) = (self.indices[p], self.values[p]);
                for (o, &s) in dst[c * m..(c + 1) * m].iter_mut().zip(srow) {
                    *o += v * s;
                }
            }
        }
    }
}
