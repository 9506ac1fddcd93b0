//! Orthonormal Legendre features and Gauss–Legendre quadrature.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `P_0..P_{k-1}` at `u` by the three-term recurrence.
pub fn legendre(u: f64, k: usize) -> Vec<f64> {
    let mut p = Vec::with_capacity(k);
    if k == 0 {
        return p;
    }
    p.push(1.0);
    if k == 1 {
        return p;
    }
    p.push(u);
    for j in 2..k {
        let jf = j as f64;
        let next = ((2.0 * jf - 1.0) * u * p[j - 1] - (jf - 1.0) * p[j - 2]) / jf;
        p.push(next);
    }
    p
}

/// Legendre polynomials scaled by `sqrt(2j + 1)`: orthonormal under the
/// uniform distribution on `[-1, 1]`.
pub fn normalized_legendre(u: f64, k: usize) -> Vec<f64> {
    let mut p = legendre(u, k);
    for (j, v) in p.iter_mut().enumerate() {
        *v *= (2.0 * j as f64 + 1.0).sqrt();
    }
    p
}

/// Nodes and weights of the `n`-point Gauss–Legendre rule on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        // Chebyshev initial guess, then Newton on P_n
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for j in 2..=n {
                let jf = j as f64;
                let p2 = ((2.0 * jf - 1.0) * z * p1 - (jf - 1.0) * p0) / jf;
                p0 = p1;
                p1 = p2;
            }
            // p1 = P_n(z), p0 = P_{n-1}(z)
            dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-15 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - z * z) * dp * dp);
        nodes[i] = -z;
        nodes[n - 1 - i] = z;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

/// Feature maps `α(x)` (Legendre degrees `0..d_α` in the first covariate) and
/// `β(t)` (degrees `1..=d_β` in the scalar treatment), both orthonormal under
/// `U[-1, 1]`. `β` has no constant: `β₀(T) − E[β₀(T) | x]` vanishes, so its
/// coefficients are not identified.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BasisSpec {
    pub d_alpha: usize,
    pub d_beta: usize,
}

impl Default for BasisSpec {
    fn default() -> Self {
        Self { d_alpha: 6, d_beta: 6 }
    }
}

impl BasisSpec {
    pub fn validate(&self) -> Result<()> {
        if self.d_alpha == 0 || self.d_beta == 0 {
            return Err(Error::Config("basis sizes must be positive".into()));
        }
        Ok(())
    }

    pub fn alpha(&self, x: &[f64]) -> Vec<f64> {
        normalized_legendre(x[0], self.d_alpha)
    }

    pub fn beta(&self, t: f64) -> Vec<f64> {
        let mut b = normalized_legendre(t, self.d_beta + 1);
        b.remove(0);
        b
    }

    /// Sup-norm bound over `[-1, 1]` of every feature: `sqrt(2k + 1)` for the
    /// largest degree `k`.
    pub fn sup_bound(&self) -> f64 {
        (2.0 * (self.d_alpha - 1).max(self.d_beta) as f64 + 1.0).sqrt()
    }

    /// Distribution under which both bases are orthonormal.
    pub fn domain(&self) -> &'static str {
        "uniform on [-1, 1]"
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn low_order_polynomials() {
        let p = legendre(0.5, 4);
        assert_eq!(p[0], 1.0);
        assert_eq!(p[1], 0.5);
        assert!((p[2] - (1.5 * 0.25 - 0.5)).abs() < 1e-15);
        assert!((p[3] - (2.5 * 0.125 - 1.5 * 0.5)).abs() < 1e-15);
        assert!(legendre(0.3, 0).is_empty());
    }

    #[test]
    fn quadrature_integrates_polynomials_exactly() {
        let (x, w) = gauss_legendre(64);
        assert!((w.iter().sum::<f64>() - 2.0).abs() < 1e-13);
        // ∫ u^126 du = 2 / 127, the highest degree the rule is exact for
        let v: f64 = x.iter().zip(&w).map(|(u, w)| w * u.powi(126)).sum();
        assert!((v - 2.0 / 127.0).abs() < 1e-13);
        let (x3, w3) = gauss_legendre(3);
        assert!((x3[2] - 0.6f64.sqrt()).abs() < 1e-14);
        assert!((w3[1] - 8.0 / 9.0).abs() < 1e-14);
    }

    #[test]
    fn normalized_legendre_is_orthonormal() {
        let (x, w) = gauss_legendre(32);
        for i in 0..6 {
            for j in 0..6 {
                let g: f64 = x
                    .iter()
                    .zip(&w)
                    .map(|(&u, &w)| 0.5 * w * normalized_legendre(u, 6)[i] * normalized_legendre(u, 6)[j])
                    .sum();
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((g - want).abs() < 1e-12, "({i}, {j}) {g}");
            }
        }
    }

    #[test]
    fn sup_bound_holds_at_endpoints() {
        let b = BasisSpec::default();
        for u in [-1.0, -0.3, 0.0, 0.9, 1.0] {
            assert!(b.beta(u).iter().all(|v| v.abs() <= b.sup_bound() + 1e-12));
        }
        assert!((b.beta(1.0)[5] - b.sup_bound()).abs() < 1e-12);
        assert_eq!(b.beta(0.3).len(), 6);
        assert_eq!(b.alpha(&[0.3, 0.0])[0], 1.0);
    }
}
