//! Fixed-basis penalized regression on the generalized Robinson
//! decomposition.
//!
//! The effect is `f(x, t) = α(x)ᵀ Θ β(t)` for known orthonormal features, so
//! with pseudo-outcomes `y − m̂(x)` and regressors `α(x) ⊗ (β(t) − ê(x))`
//! estimating `Θ` is a ridge problem. [`experiment`] compares the regret of
//! fits that use corrupted nuisances against fits that use the true ones.

mod basis;
pub mod experiment;

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::rng::Rng;

pub use basis::{gauss_legendre, legendre, normalized_legendre, BasisSpec};
pub use experiment::{
    loglog_slope, quasi_oracle_experiment, summarize_regret, tune_penalty_constant, write_regret_csv,
    QuasiOracleConfig, RegretRow,
    RegretSummary,
};

/// Coefficient matrix `Θ ∈ ℝ^{d_α × d_β}`, row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThetaMatrix {
    pub d_alpha: usize,
    pub d_beta: usize,
    pub values: Vec<f64>,
    pub frobenius: f64,
    pub spectral: f64,
}

impl ThetaMatrix {
    pub fn new(d_alpha: usize, d_beta: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != d_alpha * d_beta {
            return Err(shape_err("ThetaMatrix::new", format!("{} values for {d_alpha}x{d_beta}", values.len())));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("theta".into()));
        }
        let frobenius = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        let spectral = DMatrix::from_row_slice(d_alpha, d_beta, &values)
            .singular_values()
            .max();
        Ok(Self {
            d_alpha,
            d_beta,
            values,
            frobenius,
            spectral,
        })
    }

    pub fn zeros(d_alpha: usize, d_beta: usize) -> Self {
        Self::new(d_alpha, d_beta, vec![0.0; d_alpha * d_beta]).expect("finite")
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.d_beta + j]
    }

    /// `aᵀ Θ b`.
    pub fn bilinear(&self, a: &[f64], b: &[f64]) -> f64 {
        a.iter()
            .enumerate()
            .map(|(i, &ai)| ai * self.values[i * self.d_beta..(i + 1) * self.d_beta].iter().zip(b).map(|(t, bj)| t * bj).sum::<f64>())
            .sum()
    }

    pub fn distance(&self, other: &ThetaMatrix) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()
    }
}

/// Data-generating process with a known decomposition:
///
/// * `x ~ U[-1, 1]^2`,
/// * `T | x` normal with mean `μ(x) = 0.5 x₀ + 0.3 x₁` and sd `0.5`,
///   truncated to `[-1, 1]`,
/// * `Y = μ₀(x) + α(x)ᵀ Θ* β(T) + ε`, `μ₀(x) = sin(π x₀) + x₁²`, `ε ~ N(0, σ²)`.
///
/// `e(x) = E[β(T) | x]` is computed by 64-point Gauss–Legendre quadrature.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrdDesign {
    pub basis: BasisSpec,
    pub theta_star: ThetaMatrix,
    pub noise_std: f64,
    pub t_std: f64,
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

pub const DESIGN_DX: usize = 2;

/// Draws from [`GrdDesign`]; `y` carries noise unless the sample was drawn
/// noiseless.
#[derive(Clone, Debug, PartialEq)]
pub struct RlSample {
    pub x: Vec<[f64; DESIGN_DX]>,
    pub t: Vec<f64>,
    pub y: Vec<f64>,
}

impl RlSample {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }
}

impl GrdDesign {
    pub fn new(basis: BasisSpec, theta_star: ThetaMatrix, noise_std: f64) -> Result<Self> {
        basis.validate()?;
        if theta_star.d_alpha != basis.d_alpha || theta_star.d_beta != basis.d_beta {
            return Err(shape_err("GrdDesign::new", "theta shape differs from the basis sizes"));
        }
        let (nodes, weights) = gauss_legendre(64);
        Ok(Self {
            basis,
            theta_star,
            noise_std,
            t_std: 0.5,
            nodes,
            weights,
        })
    }

    /// `Θ*` with i.i.d. `N(0, 0.5²)` entries.
    pub fn random(basis: BasisSpec, noise_std: f64, rng: &mut Rng) -> Result<Self> {
        let normal = Normal::new(0.0, 0.5).expect("valid sd");
        let values = (0..basis.d_alpha * basis.d_beta).map(|_| normal.sample(rng)).collect();
        Self::new(basis, ThetaMatrix::new(basis.d_alpha, basis.d_beta, values)?, noise_std)
    }

    pub fn t_mean(&self, x: &[f64]) -> f64 {
        0.5 * x[0] + 0.3 * x[1]
    }

    pub fn baseline(&self, x: &[f64]) -> f64 {
        (std::f64::consts::PI * x[0]).sin() + x[1] * x[1]
    }

    /// `e(x) = E[β(T) | x]`.
    pub fn propensity_features(&self, x: &[f64]) -> Vec<f64> {
        let mu = self.t_mean(x);
        let mut acc = vec![0.0; self.basis.d_beta];
        let mut mass = 0.0;
        for (&u, &w) in self.nodes.iter().zip(&self.weights) {
            let z = (u - mu) / self.t_std;
            let dens = w * (-0.5 * z * z).exp();
            mass += dens;
            for (a, b) in acc.iter_mut().zip(self.basis.beta(u)) {
                *a += dens * b;
            }
        }
        acc.iter().map(|a| a / mass).collect()
    }

    /// `m(x) = E[Y | x] = μ₀(x) + α(x)ᵀ Θ* e(x)`.
    pub fn mean_outcome(&self, x: &[f64]) -> f64 {
        self.baseline(x) + self.theta_star.bilinear(&self.basis.alpha(x), &self.propensity_features(x))
    }

    pub fn outcome(&self, x: &[f64], t: f64) -> f64 {
        self.baseline(x) + self.theta_star.bilinear(&self.basis.alpha(x), &self.basis.beta(t))
    }

    fn sample_t(&self, x: &[f64], rng: &mut Rng) -> f64 {
        let normal = Normal::new(self.t_mean(x), self.t_std).expect("valid sd");
        loop {
            let t: f64 = normal.sample(rng);
            if (-1.0..=1.0).contains(&t) {
                return t;
            }
        }
    }

    pub fn sample(&self, n: usize, noiseless: bool, rng: &mut Rng) -> RlSample {
        let noise = Normal::new(0.0, self.noise_std.max(0.0)).expect("valid sd");
        let mut s = RlSample {
            x: Vec::with_capacity(n),
            t: Vec::with_capacity(n),
            y: Vec::with_capacity(n),
        };
        for _ in 0..n {
            let x = [rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0)];
            let t = self.sample_t(&x, rng);
            let eps = if noiseless { 0.0 } else { noise.sample(rng) };
            s.y.push(self.outcome(&x, t) + eps);
            s.x.push(x);
            s.t.push(t);
        }
        s
    }
}

/// Smooth random function `ℝ² → ℝ^k` with sup-norm at most 1:
/// `ξ_c(x) = Σ_j a_cj cos(ω_cjᵀ x + φ_cj) / Σ_j |a_cj|`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CosineField {
    /// Per output: `(a, ω₀, ω₁, φ)` per term.
    terms: Vec<Vec<[f64; 4]>>,
}

impl CosineField {
    pub fn random(outputs: usize, n_terms: usize, rng: &mut Rng) -> Self {
        let freq = Normal::new(0.0, 2.0).expect("valid sd");
        let terms = (0..outputs)
            .map(|_| {
                (0..n_terms)
                    .map(|_| {
                        [
                            rng.random_range(-1.0..1.0),
                            freq.sample(rng),
                            freq.sample(rng),
                            rng.random_range(0.0..std::f64::consts::TAU),
                        ]
                    })
                    .collect()
            })
            .collect();
        Self { terms }
    }

    pub fn outputs(&self) -> usize {
        self.terms.len()
    }

    pub fn eval(&self, x: &[f64]) -> Vec<f64> {
        self.terms
            .iter()
            .map(|terms| {
                let norm: f64 = terms.iter().map(|t| t[0].abs()).sum();
                if norm == 0.0 {
                    return 0.0;
                }
                terms.iter().map(|t| t[0] * (t[1] * x[0] + t[2] * x[1] + t[3]).cos()).sum::<f64>() / norm
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Corruption {
    Oracle,
    /// Both nuisances are off by `n^{-kappa_rate} ξ(x)`.
    Rate { kappa_rate: f64, n: usize },
}

impl Corruption {
    pub fn scale(&self) -> f64 {
        match *self {
            Corruption::Oracle => 0.0,
            Corruption::Rate { kappa_rate, n } => (n.max(1) as f64).powf(-kappa_rate),
        }
    }
}

/// `m̂ = m + s ξ_m`, `ê = e + s ξ_e` with `s` from the corruption descriptor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NuisancePair {
    pub corruption: Corruption,
    pub xi_m: CosineField,
    pub xi_e: CosineField,
}

impl NuisancePair {
    pub fn oracle(d_beta: usize) -> Self {
        Self {
            corruption: Corruption::Oracle,
            xi_m: CosineField { terms: vec![Vec::new()] },
            xi_e: CosineField {
                terms: vec![Vec::new(); d_beta],
            },
        }
    }

    pub fn m_hat(&self, design: &GrdDesign, x: &[f64]) -> f64 {
        let s = self.corruption.scale();
        let base = design.mean_outcome(x);
        if s == 0.0 {
            base
        } else {
            base + s * self.xi_m.eval(x)[0]
        }
    }

    pub fn e_hat(&self, design: &GrdDesign, x: &[f64]) -> Vec<f64> {
        let s = self.corruption.scale();
        let mut e = design.propensity_features(x);
        if s != 0.0 {
            for (v, xi) in e.iter_mut().zip(self.xi_e.eval(x)) {
                *v += s * xi;
            }
        }
        e
    }
}

/// Pseudo-outcomes `y − m̂(x)` and regressors `vec(α(x) (β(t) − ê(x))ᵀ)`,
/// row-major in `(i, j)`.
pub fn regression_design(sample: &RlSample, design: &GrdDesign, nuis: &NuisancePair) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let b = design.basis;
    if nuis.xi_e.outputs() != b.d_beta {
        return Err(shape_err("regression_design", "ξ_e width differs from d_β"));
    }
    let p = b.d_alpha * b.d_beta;
    let mut z = DMatrix::zeros(sample.len(), p);
    let mut r = DVector::zeros(sample.len());
    for i in 0..sample.len() {
        let x = &sample.x[i];
        let a = b.alpha(x);
        let e = nuis.e_hat(design, x);
        let centered: Vec<f64> = b.beta(sample.t[i]).iter().zip(&e).map(|(bt, e)| bt - e).collect();
        for (ia, av) in a.iter().enumerate() {
            for (jb, cv) in centered.iter().enumerate() {
                z[(i, ia * b.d_beta + jb)] = av * cv;
            }
        }
        r[i] = sample.y[i] - nuis.m_hat(design, x);
    }
    Ok((z, r))
}

/// `(1/n) Σ [(y − m̂(x)) − α(x)ᵀ Θ (β(t) − ê(x))]²`.
pub fn feasible_loss(theta: &ThetaMatrix, sample: &RlSample, design: &GrdDesign, nuis: &NuisancePair) -> Result<f64> {
    if sample.is_empty() {
        return Ok(0.0);
    }
    let (z, r) = regression_design(sample, design, nuis)?;
    let th = DVector::from_row_slice(&theta.values);
    let resid = r - z * th;
    Ok(resid.norm_squared() / sample.len() as f64)
}

/// Normal equations of the penalized objective: `(ZᵀZ/n + λI) θ = Zᵀr/n`.
fn normal_equations(z: &DMatrix<f64>, r: &DVector<f64>, lambda: f64) -> (DMatrix<f64>, DVector<f64>) {
    let n = z.nrows().max(1) as f64;
    let mut g = z.tr_mul(z) / n;
    for k in 0..g.nrows() {
        g[(k, k)] += lambda;
    }
    (g, z.tr_mul(r) / n)
}

fn check_penalty(lambda: f64) -> Result<()> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::Config(format!("penalty must be finite and >= 0, got {lambda}")));
    }
    Ok(())
}

/// Closed-form ridge estimate of `Θ` minimizing `L̂_n(Θ) + λ‖Θ‖²_F`.
pub fn fit_theta(sample: &RlSample, design: &GrdDesign, nuis: &NuisancePair, lambda: f64) -> Result<ThetaMatrix> {
    check_penalty(lambda)?;
    if sample.is_empty() {
        return Err(Error::Config("fit_theta needs at least one observation".into()));
    }
    let (z, r) = regression_design(sample, design, nuis)?;
    let (g, rhs) = normal_equations(&z, &r, lambda);
    let Some(chol) = g.cholesky() else {
        return Err(Error::Singular(format!(
            "ridge system is not positive definite at λ = {lambda}; use λ > 0"
        )));
    };
    let theta = chol.solve(&rhs);
    ThetaMatrix::new(design.basis.d_alpha, design.basis.d_beta, theta.iter().copied().collect())
}

/// Same objective as [`fit_theta`] by gradient descent with step `1/L`,
/// stopping when the gradient norm drops below `tol`.
pub fn fit_theta_gd(
    sample: &RlSample,
    design: &GrdDesign,
    nuis: &NuisancePair,
    lambda: f64,
    tol: f64,
    max_iters: usize,
) -> Result<ThetaMatrix> {
    check_penalty(lambda)?;
    if sample.is_empty() {
        return Err(Error::Config("fit_theta_gd needs at least one observation".into()));
    }
    let (z, r) = regression_design(sample, design, nuis)?;
    let (g, rhs) = normal_equations(&z, &r, lambda);
    // gradient of the objective is 2 (Gθ − b); its Lipschitz constant is 2 λ_max(G)
    let lmax = g.clone().symmetric_eigen().eigenvalues.max();
    if lmax <= 0.0 {
        return Err(Error::Singular("zero design".into()));
    }
    let step = 1.0 / (2.0 * lmax);
    let mut theta = DVector::zeros(rhs.len());
    for _ in 0..max_iters {
        let grad = (&g * &theta - &rhs) * 2.0;
        if grad.norm() < tol {
            return ThetaMatrix::new(design.basis.d_alpha, design.basis.d_beta, theta.iter().copied().collect());
        }
        theta -= grad * step;
    }
    Err(Error::Training(format!("gradient descent did not reach tolerance {tol} in {max_iters} steps")))
}

/// Excess risk `L(Θ̂) − L(Θ*)` estimated on `eval`, which should be a large
/// noiseless sample; oracle nuisances are used.
pub fn regret(theta_hat: &ThetaMatrix, design: &GrdDesign, eval: &RlSample) -> Result<f64> {
    let oracle = NuisancePair::oracle(design.basis.d_beta);
    Ok(feasible_loss(theta_hat, eval, design, &oracle)? - feasible_loss(&design.theta_star, eval, design, &oracle)?)
}

/// Precomputed second moment `M = E[z zᵀ]` of the oracle regressors, so that
/// `regret(Θ) = vec(Θ − Θ*)ᵀ M vec(Θ − Θ*)` for noiseless evaluation samples.
#[derive(Clone, Debug)]
pub struct RegretEvaluator {
    moment: DMatrix<f64>,
    theta_star: DVector<f64>,
}

impl RegretEvaluator {
    pub fn new(design: &GrdDesign, eval: &RlSample) -> Result<Self> {
        let oracle = NuisancePair::oracle(design.basis.d_beta);
        let (z, _) = regression_design(eval, design, &oracle)?;
        let n = eval.len().max(1) as f64;
        Ok(Self {
            moment: z.tr_mul(&z) / n,
            theta_star: DVector::from_row_slice(&design.theta_star.values),
        })
    }

    pub fn regret(&self, theta: &ThetaMatrix) -> f64 {
        let d = DVector::from_row_slice(&theta.values) - &self.theta_star;
        (d.transpose() * &self.moment * &d)[(0, 0)]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn design(seed: u64, noise: f64) -> GrdDesign {
        GrdDesign::random(BasisSpec::default(), noise, &mut rng::from_seed(seed)).unwrap()
    }

    #[test]
    fn decomposition_identity_noiseless() {
        let d = design(1, 0.0);
        let s = d.sample(500, true, &mut rng::from_seed(2));
        let oracle = NuisancePair::oracle(6);
        assert!(feasible_loss(&d.theta_star, &s, &d, &oracle).unwrap() < 1e-24);
    }

    #[test]
    fn zero_theta_gives_residual_variance() {
        let d = design(3, 1.0);
        let s = d.sample(200, false, &mut rng::from_seed(4));
        let oracle = NuisancePair::oracle(6);
        let want = (0..s.len()).map(|i| (s.y[i] - d.mean_outcome(&s.x[i])).powi(2)).sum::<f64>() / 200.0;
        let got = feasible_loss(&ThetaMatrix::zeros(6, 6), &s, &d, &oracle).unwrap();
        assert!((got - want).abs() < 1e-12);
    }

    #[test]
    fn propensity_features_match_monte_carlo() {
        let d = design(5, 1.0);
        let x = [0.4, -0.7];
        let e = d.propensity_features(&x);
        let mut r = rng::from_seed(6);
        let n = 200_000;
        let mut acc = [0.0; 6];
        for _ in 0..n {
            let t = d.sample_t(&x, &mut r);
            for (a, b) in acc.iter_mut().zip(d.basis.beta(t)) {
                *a += b / n as f64;
            }
        }
        for j in 0..6 {
            assert!((acc[j] - e[j]).abs() < 0.02, "{j}: {} vs {}", acc[j], e[j]);
        }
    }

    #[test]
    fn planted_recovery_and_solver_agreement() {
        let d = design(7, 0.0);
        let s = d.sample(5000, true, &mut rng::from_seed(8));
        let oracle = NuisancePair::oracle(6);
        let th = fit_theta(&s, &d, &oracle, 1e-8).unwrap();
        assert!(th.distance(&d.theta_star) / d.theta_star.frobenius < 1e-3);

        let noisy = design(7, 1.0);
        let s = noisy.sample(2000, false, &mut rng::from_seed(9));
        let closed = fit_theta(&s, &noisy, &oracle, 1e-2).unwrap();
        let gd = fit_theta_gd(&s, &noisy, &oracle, 1e-2, 1e-8, 2_000_000).unwrap();
        assert!(closed.distance(&gd) < 1e-6, "{}", closed.distance(&gd));
    }

    #[test]
    fn huge_penalty_shrinks_to_zero() {
        let d = design(10, 1.0);
        let s = d.sample(300, false, &mut rng::from_seed(11));
        let th = fit_theta(&s, &d, &NuisancePair::oracle(6), 1e12).unwrap();
        assert!(th.frobenius < 1e-6);
    }

    #[test]
    fn unpenalized_singular_system_is_an_error() {
        let d = design(12, 1.0);
        let s = d.sample(10, false, &mut rng::from_seed(13));
        let err = fit_theta(&s, &d, &NuisancePair::oracle(6), 0.0).unwrap_err();
        assert!(err.to_string().contains("λ > 0"), "{err}");
        assert!(fit_theta(&s, &d, &NuisancePair::oracle(6), -1.0).is_err());
    }

    #[test]
    fn regret_forms_agree() {
        let d = design(14, 1.0);
        let eval = d.sample(5000, true, &mut rng::from_seed(15));
        let ev = RegretEvaluator::new(&d, &eval).unwrap();
        assert!(regret(&d.theta_star, &d, &eval).unwrap().abs() < 1e-20);
        let zero = ThetaMatrix::zeros(6, 6);
        let direct = regret(&zero, &d, &eval).unwrap();
        assert!((ev.regret(&zero) - direct).abs() < 1e-9 * direct);
        let oracle = NuisancePair::oracle(6);
        let (z, _) = regression_design(&eval, &d, &oracle).unwrap();
        let th = DVector::from_row_slice(&d.theta_star.values);
        let effect = (z * th).norm_squared() / 5000.0;
        assert!((direct - effect).abs() < 1e-9 * effect);
    }

    #[test]
    fn cosine_field_bounded() {
        let f = CosineField::random(3, 4, &mut rng::from_seed(16));
        let mut r = rng::from_seed(17);
        for _ in 0..1000 {
            let x = [r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)];
            assert!(f.eval(&x).iter().all(|v| v.abs() <= 1.0));
        }
    }

    #[test]
    fn theta_norms() {
        let th = ThetaMatrix::new(2, 2, vec![3.0, 0.0, 0.0, 4.0]).unwrap();
        assert_eq!(th.frobenius, 5.0);
        assert!((th.spectral - 4.0).abs() < 1e-12);
        assert!(ThetaMatrix::new(2, 2, vec![1.0]).is_err());
        assert!(ThetaMatrix::new(1, 1, vec![f64::NAN]).is_err());
    }
}
