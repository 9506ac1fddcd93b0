use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use grd_cate::basis_rlearner::{
    loglog_slope, quasi_oracle_experiment, summarize_regret, tune_penalty_constant, write_regret_csv,
    QuasiOracleConfig,
};
use grd_cate::harness::{
    aggregate, run_cells, write_config_lock, write_results_csv, write_summary_csv, ConfigLock, ExperimentConfig,
};
use grd_cate::par::Execution;
use grd_cate::simulation::{build_benchmark, io::write_benchmark, SimConfig};

const THREADS_ENV: &str = "GRD_CATE_THREADS";

#[derive(Parser)]
#[command(name = "grd-cate", version, about = "CATE estimation for graph-valued treatments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ExperimentArgs {
    /// JSON experiment config; missing fields take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// First evaluation seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Number of seeds, overriding the config.
    #[arg(long)]
    n_seeds: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Train and evaluate every configured estimator over the seeds.
    Run(ExperimentArgs),
    /// Repeat `run` for each bias strength.
    SweepKappa {
        #[command(flatten)]
        exp: ExperimentArgs,
        /// Comma-separated bias strengths, overriding the config.
        #[arg(long, value_delimiter = ',')]
        kappas: Option<Vec<f64>>,
    },
    /// Regret decay of the fixed-basis R-learner with corrupted nuisances.
    QuasiOracle {
        /// JSON config; missing fields take their defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        kappa_rate: Option<f64>,
        #[arg(long)]
        n_seeds: Option<u64>,
        #[arg(long, value_delimiter = ',')]
        n_grid: Option<Vec<usize>>,
        /// Re-tune the penalty constant on this pilot seed first.
        #[arg(long)]
        pilot_seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a benchmark as JSON-lines splits plus a ground-truth file.
    GenData {
        /// JSON experiment config; only its `sim` section is used.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn read_json<T: serde::de::DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))
        }
    }
}

fn init_threads() -> Result<()> {
    let Ok(v) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = v.trim().parse().with_context(|| format!("{THREADS_ENV}={v} is not a count"))?;
    if n == 0 {
        bail!("{THREADS_ENV} must be >= 1");
    }
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    Ok(())
}

fn resolve(exp: &ExperimentArgs) -> Result<(ExperimentConfig, PathBuf)> {
    let mut cfg: ExperimentConfig = read_json(exp.config.as_deref())?;
    if let Some(s) = exp.seed {
        cfg.first_seed = s;
    }
    if let Some(n) = exp.n_seeds {
        cfg.n_seeds = n;
    }
    let out = match (&exp.out, &cfg.out_dir) {
        (Some(o), _) => o.clone(),
        (None, Some(o)) => PathBuf::from(o),
        (None, None) => bail!("no output directory: pass --out or set out_dir in the config"),
    };
    cfg.validate()?;
    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    Ok((cfg, out))
}

fn run_and_write(cfg: &ExperimentConfig, kappas: &[f64], out: &Path) -> Result<()> {
    let ckpt = if cfg.save_checkpoints {
        let d = out.join("checkpoints");
        std::fs::create_dir_all(&d)?;
        Some(d)
    } else {
        None
    };
    log::info!(
        "{} seeds x {} kappas x {} estimators",
        cfg.n_seeds,
        kappas.len(),
        cfg.estimators.len()
    );
    let rows = run_cells(cfg, kappas, Execution::available(), ckpt.as_deref())?;
    write_results_csv(&out.join("results.csv"), &rows)?;
    let summary = aggregate(&rows);
    write_summary_csv(&out.join("summary.csv"), &summary)?;
    write_config_lock(&out.join("config.lock.json"), &ConfigLock::new(cfg, kappas)?)?;
    let failed = rows.iter().filter(|r| r.error.is_some()).count();
    if failed > 0 {
        log::warn!("{failed} result rows carry errors");
    }
    for s in summary.iter().filter(|s| s.metric == "wpehe" && s.k == 6.min(cfg.sim.n_treatments)) {
        println!(
            "{:<9} {:<10} kappa {:<6} WPEHE@{} {:.4} ± {:.4} (n = {})",
            s.estimator,
            s.split.as_str(),
            s.kappa,
            s.k,
            s.mean,
            s.stderr,
            s.n
        );
    }
    println!("wrote {}", out.display());
    Ok(())
}

fn quasi_oracle(
    config: Option<&Path>,
    kappa_rate: Option<f64>,
    n_seeds: Option<u64>,
    n_grid: Option<Vec<usize>>,
    pilot_seed: Option<u64>,
    out: &Path,
) -> Result<()> {
    let mut cfg: QuasiOracleConfig = read_json(config)?;
    if let Some(k) = kappa_rate {
        cfg.kappa_rate = k;
    }
    if let Some(n) = n_seeds {
        cfg.seeds = (0..n).collect();
    }
    if let Some(g) = n_grid {
        cfg.n_grid = g;
    }
    cfg.validate()?;
    if cfg.kappa_rate <= 0.25 {
        log::warn!("kappa_rate {} does not exceed 1/4; no quasi-oracle guarantee applies", cfg.kappa_rate);
    }
    if let Some(p) = pilot_seed {
        cfg.penalty_c = tune_penalty_constant(&cfg, p, &[1e-3, 1e-2, 1e-1, 1.0, 10.0], Execution::available())?;
        log::info!("penalty constant {} from pilot seed {p}", cfg.penalty_c);
    }
    std::fs::create_dir_all(out)?;
    let rows = quasi_oracle_experiment(&cfg, Execution::available())?;
    write_regret_csv(&rows, &out.join("regret.csv"))?;
    std::fs::write(out.join("config.lock.json"), serde_json::to_string_pretty(&cfg)? + "\n")?;
    let summary = summarize_regret(&rows);
    for s in &summary {
        println!(
            "n {:>6}  median regret oracle {:.3e}  feasible {:.3e}  ratio {:.3}",
            s.n,
            s.median_oracle,
            s.median_feasible,
            s.median_feasible / s.median_oracle
        );
    }
    if summary.len() >= 2 {
        let ns: Vec<f64> = summary.iter().map(|s| s.n as f64).collect();
        let o: Vec<f64> = summary.iter().map(|s| s.median_oracle).collect();
        let f: Vec<f64> = summary.iter().map(|s| s.median_feasible).collect();
        println!(
            "log-log slope: oracle {:.3}, feasible {:.3}",
            loglog_slope(&ns, &o)?,
            loglog_slope(&ns, &f)?
        );
    }
    println!("wrote {}", out.display());
    Ok(())
}

fn gen_data(config: Option<&Path>, seed: u64, out: &Path) -> Result<()> {
    let cfg: ExperimentConfig = read_json(config)?;
    let sim = SimConfig {
        master_seed: seed,
        ..cfg.sim
    };
    let bench = build_benchmark(&sim)?;
    std::fs::create_dir_all(out)?;
    write_benchmark(out, &bench)?;
    println!(
        "wrote {} in-sample and {} out-sample units over {} treatments to {}",
        bench.in_sample.len(),
        bench.out_sample.len(),
        sim.n_treatments,
        out.display()
    );
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    init_threads()?;
    match Cli::parse().command {
        Command::Run(exp) => {
            let (cfg, out) = resolve(&exp)?;
            run_and_write(&cfg, &[cfg.sim.kappa], &out)
        }
        Command::SweepKappa { exp, kappas } => {
            let (cfg, out) = resolve(&exp)?;
            let kappas = kappas.unwrap_or_else(|| cfg.kappas.clone());
            if kappas.is_empty() {
                bail!("no bias strengths to sweep");
            }
            run_and_write(&cfg, &kappas, &out)
        }
        Command::QuasiOracle {
            config,
            kappa_rate,
            n_seeds,
            n_grid,
            pilot_seed,
            out,
        } => quasi_oracle(config.as_deref(), kappa_rate, n_seeds, n_grid, pilot_seed, &out),
        Command::GenData { config, seed, out } => gen_data(config.as_deref(), seed, &out),
    }
}
