//! Regret decay of oracle and feasible fits over a grid of sample sizes.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{fit_theta, BasisSpec, CosineField, Corruption, GrdDesign, NuisancePair, RegretEvaluator};
use crate::error::{Error, Result};
use crate::par::{self, Execution};
use crate::rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QuasiOracleConfig {
    pub n_grid: Vec<usize>,
    pub kappa_rate: f64,
    pub seeds: Vec<u64>,
    pub basis: BasisSpec,
    pub noise_std: f64,
    /// `λ_n = penalty_c · n^{-1/2}`.
    pub penalty_c: f64,
    pub eval_size: usize,
    /// Cosine terms per corruption field.
    pub field_terms: usize,
}

impl Default for QuasiOracleConfig {
    fn default() -> Self {
        Self {
            n_grid: vec![500, 2000, 8000, 32000],
            kappa_rate: 0.3,
            seeds: (0..10).collect(),
            basis: BasisSpec::default(),
            noise_std: 1.0,
            penalty_c: 0.1,
            eval_size: 50_000,
            field_terms: 4,
        }
    }
}

impl QuasiOracleConfig {
    pub fn validate(&self) -> Result<()> {
        self.basis.validate()?;
        if self.n_grid.is_empty() || self.n_grid.contains(&0) {
            return Err(Error::Config("n grid must be non-empty with positive sizes".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        if !(self.kappa_rate >= 0.0 && self.kappa_rate.is_finite()) {
            return Err(Error::Config(format!("kappa_rate must be >= 0, got {}", self.kappa_rate)));
        }
        if !(self.penalty_c > 0.0 && self.penalty_c.is_finite()) {
            return Err(Error::Config("penalty_c must be positive".into()));
        }
        if self.eval_size == 0 || self.field_terms == 0 {
            return Err(Error::Config("eval_size and field_terms must be positive".into()));
        }
        Ok(())
    }

    pub fn penalty(&self, n: usize) -> f64 {
        self.penalty_c / (n as f64).sqrt()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegretRow {
    pub n: usize,
    pub seed: u64,
    pub kappa_rate: f64,
    pub regret_oracle: f64,
    pub regret_feasible: f64,
}

/// Per-seed state shared by every `n`: design, corruption fields and the
/// regret evaluator on a noiseless held-out sample.
struct SeedSetup {
    design: GrdDesign,
    xi_m: CosineField,
    xi_e: CosineField,
    evaluator: RegretEvaluator,
}

fn seed_setup(cfg: &QuasiOracleConfig, seed: u64) -> Result<SeedSetup> {
    let design = GrdDesign::random(cfg.basis, cfg.noise_std, &mut rng::stream(seed, "qo/theta", 0))?;
    let mut fr = rng::stream(seed, "qo/fields", 0);
    let xi_m = CosineField::random(1, cfg.field_terms, &mut fr);
    let xi_e = CosineField::random(cfg.basis.d_beta, cfg.field_terms, &mut fr);
    let eval = design.sample(cfg.eval_size, true, &mut rng::stream(seed, "qo/eval", 0));
    let evaluator = RegretEvaluator::new(&design, &eval)?;
    Ok(SeedSetup {
        design,
        xi_m,
        xi_e,
        evaluator,
    })
}

fn run_cell(cfg: &QuasiOracleConfig, setup: &SeedSetup, seed: u64, n: usize) -> Result<RegretRow> {
    let d = &setup.design;
    let data = d.sample(n, false, &mut rng::stream(seed, "qo/train", n as u64));
    let lambda = cfg.penalty(n);
    let oracle = fit_theta(&data, d, &NuisancePair::oracle(cfg.basis.d_beta), lambda)?;
    let corrupted = NuisancePair {
        corruption: Corruption::Rate {
            kappa_rate: cfg.kappa_rate,
            n,
        },
        xi_m: setup.xi_m.clone(),
        xi_e: setup.xi_e.clone(),
    };
    let feasible = fit_theta(&data, d, &corrupted, lambda)?;
    Ok(RegretRow {
        n,
        seed,
        kappa_rate: cfg.kappa_rate,
        regret_oracle: setup.evaluator.regret(&oracle),
        regret_feasible: setup.evaluator.regret(&feasible),
    })
}

/// One row per `(seed, n)`, ordered by seed then by position in the grid.
pub fn quasi_oracle_experiment(cfg: &QuasiOracleConfig, exec: Execution) -> Result<Vec<RegretRow>> {
    cfg.validate()?;
    let setups = par::map_slice(exec, &cfg.seeds, |&s| seed_setup(cfg, s))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let cells: Vec<(usize, usize)> = (0..cfg.seeds.len())
        .flat_map(|s| (0..cfg.n_grid.len()).map(move |j| (s, j)))
        .collect();
    par::map_slice(exec, &cells, |&(s, j)| run_cell(cfg, &setups[s], cfg.seeds[s], cfg.n_grid[j]))
        .into_iter()
        .collect()
}

/// Picks the penalty constant from `candidates` that minimizes the summed
/// oracle regret over the grid for a single pilot seed.
pub fn tune_penalty_constant(cfg: &QuasiOracleConfig, pilot_seed: u64, candidates: &[f64], exec: Execution) -> Result<f64> {
    let mut best = (f64::NAN, f64::INFINITY);
    for &c in candidates {
        let trial = QuasiOracleConfig {
            penalty_c: c,
            seeds: vec![pilot_seed],
            ..cfg.clone()
        };
        let total: f64 = quasi_oracle_experiment(&trial, exec)?.iter().map(|r| r.regret_oracle).sum();
        if total < best.1 {
            best = (c, total);
        }
    }
    if best.0.is_nan() {
        return Err(Error::Config("no penalty candidates".into()));
    }
    Ok(best.0)
}

pub fn write_regret_csv(rows: &[RegretRow], path: &Path) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(f, "n,seed,kappa_rate,regret_oracle,regret_feasible")?;
    for r in rows {
        writeln!(f, "{},{},{},{:e},{:e}", r.n, r.seed, r.kappa_rate, r.regret_oracle, r.regret_feasible)?;
    }
    f.flush()?;
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegretSummary {
    pub n: usize,
    pub median_oracle: f64,
    pub median_feasible: f64,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 0 {
        0.5 * (v[m - 1] + v[m])
    } else {
        v[m]
    }
}

/// Medians over seeds for each `n`, ascending in `n`.
pub fn summarize_regret(rows: &[RegretRow]) -> Vec<RegretSummary> {
    let mut ns: Vec<usize> = rows.iter().map(|r| r.n).collect();
    ns.sort_unstable();
    ns.dedup();
    ns.into_iter()
        .map(|n| {
            let at: Vec<&RegretRow> = rows.iter().filter(|r| r.n == n).collect();
            RegretSummary {
                n,
                median_oracle: median(at.iter().map(|r| r.regret_oracle).collect()),
                median_feasible: median(at.iter().map(|r| r.regret_feasible).collect()),
            }
        })
        .collect()
}

/// Least-squares slope of `ln y` on `ln n`.
pub fn loglog_slope(n: &[f64], y: &[f64]) -> Result<f64> {
    if n.len() != y.len() || n.len() < 2 {
        return Err(Error::Config("slope needs at least two matched points".into()));
    }
    if n.iter().chain(y).any(|v| !(*v > 0.0)) {
        return Err(Error::Config("log-log slope needs positive values".into()));
    }
    let lx: Vec<f64> = n.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let k = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / k, ly.iter().sum::<f64>() / k);
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::Config("slope needs at least two distinct n".into()));
    }
    Ok(sxy / sxx)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> QuasiOracleConfig {
        QuasiOracleConfig {
            n_grid: vec![200, 800],
            seeds: vec![0, 1],
            eval_size: 4000,
            ..Default::default()
        }
    }

    #[test]
    fn slope_of_power_law() {
        let n = [10.0, 100.0, 1000.0];
        let y: Vec<f64> = n.iter().map(|v: &f64| 3.0 * v.powf(-0.8)).collect();
        assert!((loglog_slope(&n, &y).unwrap() + 0.8).abs() < 1e-12);
        assert!(loglog_slope(&[1.0], &[1.0]).is_err());
        assert!(loglog_slope(&[1.0, 2.0], &[0.0, 1.0]).is_err());
    }

    #[test]
    fn experiment_is_deterministic_across_execution_modes() {
        let cfg = small();
        let a = quasi_oracle_experiment(&cfg, Execution::Sequential).unwrap();
        let b = quasi_oracle_experiment(&cfg, Execution::Parallel).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 4);
        assert_eq!((a[1].seed, a[1].n), (0, 800));
        assert!(a.iter().all(|r| r.regret_oracle > 0.0 && r.regret_feasible > 0.0));
    }

    #[test]
    fn csv_header_and_rows() {
        let rows = quasi_oracle_experiment(&small(), Execution::Sequential).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("regret.csv");
        write_regret_csv(&rows, &p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "n,seed,kappa_rate,regret_oracle,regret_feasible");
        let first: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(first[0], "200");
        assert_eq!(first[3].parse::<f64>().unwrap(), rows[0].regret_oracle);
        assert_eq!(text.lines().count(), 5);
    }

    #[test]
    fn medians_per_n() {
        let rows: Vec<RegretRow> = (0..3)
            .map(|s| RegretRow {
                n: 10,
                seed: s,
                kappa_rate: 0.3,
                regret_oracle: s as f64,
                regret_feasible: 2.0 * s as f64,
            })
            .collect();
        let s = summarize_regret(&rows);
        assert_eq!(s.len(), 1);
        assert_eq!((s[0].median_oracle, s[0].median_feasible), (1.0, 2.0));
    }
}
