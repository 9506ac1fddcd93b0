//! Normalized Hilbert–Schmidt independence criterion.
//!
//! `HSIC(A, B) = tr(K̃ L̃) / (n − 1)²` with Gaussian-kernel Gram matrices
//! `K`, `L` and `K̃ = H K H`; the normalized value is
//! `HSIC(A, B) / sqrt(HSIC(A, A) HSIC(B, B))`. Bandwidths follow the median
//! pairwise-distance heuristic.

use crate::error::{shape_err, Result};
use crate::nn::{Tape, Tensor, Var};

/// Median pairwise Euclidean distance between rows, falling back to the
/// median of the non-zero distances. `None` when all rows coincide.
pub fn median_bandwidth(a: &Tensor) -> Option<f64> {
    let n = a.rows();
    let mut d = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            let s: f64 = a.row(i).iter().zip(a.row(j)).map(|(x, y)| (x - y) * (x - y)).sum();
            d.push(s.sqrt());
        }
    }
    let median = |v: &mut Vec<f64>| -> Option<f64> {
        if v.is_empty() {
            return None;
        }
        v.sort_by(f64::total_cmp);
        let m = v.len() / 2;
        Some(if v.len() % 2 == 1 { v[m] } else { 0.5 * (v[m - 1] + v[m]) })
    };
    match median(&mut d) {
        Some(m) if m > 0.0 => Some(m),
        _ => {
            let mut pos: Vec<f64> = d.into_iter().filter(|&v| v > 0.0).collect();
            median(&mut pos)
        }
    }
}

fn check_rows(a: &Tensor, b: &Tensor) -> Result<()> {
    if a.rows() != b.rows() {
        return Err(shape_err("hsic_normalized", "A and B need the same number of rows"));
    }
    if a.rows() < 4 {
        return Err(shape_err("hsic_normalized", "at least 4 samples are required"));
    }
    Ok(())
}

/// Normalized HSIC in `[0, 1]`. Degenerate (constant) inputs give 0.
pub fn hsic_normalized(a: &Tensor, b: &Tensor) -> Result<f64> {
    check_rows(a, b)?;
    let (Some(bw_a), Some(bw_b)) = (median_bandwidth(a), median_bandwidth(b)) else {
        log::warn!("hsic_normalized: constant input, returning 0");
        return Ok(0.0);
    };
    let mut tape = Tape::new();
    let av = tape.constant(a.clone());
    let bv = tape.constant(b.clone());
    match hsic_normalized_on(&mut tape, av, bv, bw_a, bw_b)? {
        Some(v) => Ok(tape.value(v).item()),
        None => {
            log::warn!("hsic_normalized: vanishing self-dependence, returning 0");
            Ok(0.0)
        }
    }
}

/// Recorded normalized HSIC with fixed bandwidths. `None` when either
/// self-dependence term vanishes.
pub fn hsic_normalized_on(
    tape: &mut Tape,
    a: Var,
    b: Var,
    bandwidth_a: f64,
    bandwidth_b: f64,
) -> Result<Option<Var>> {
    let n = tape.value(a).rows();
    check_rows(tape.value(a), tape.value(b))?;
    let c = 1.0 / ((n - 1) as f64).powi(2);
    let ka = tape.gaussian_gram(a, bandwidth_a)?;
    let ka = tape.double_center(ka)?;
    let kb = tape.gaussian_gram(b, bandwidth_b)?;
    let kb = tape.double_center(kb)?;
    let hsic = |tape: &mut Tape, x: Var, y: Var| -> Result<Var> {
        let p = tape.mul(x, y)?;
        let s = tape.sum(p);
        Ok(tape.scale(s, c))
    };
    let hab = hsic(tape, ka, kb)?;
    let haa = hsic(tape, ka, ka)?;
    let hbb = hsic(tape, kb, kb)?;
    if tape.value(haa).item() <= 1e-300 || tape.value(hbb).item() <= 1e-300 {
        return Ok(None);
    }
    let denom = tape.mul(haa, hbb)?;
    let denom = tape.sqrt(denom);
    Ok(Some(tape.div(hab, denom)?))
}
