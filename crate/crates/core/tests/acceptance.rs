//! Acceptance runner: one PASS/FAIL line per criterion and a summary line.

mod common;

use std::time::Instant;

use grd_cate::basis_rlearner::{
    feasible_loss, loglog_slope, quasi_oracle_experiment, summarize_regret, BasisSpec, GrdDesign, NuisancePair,
    QuasiOracleConfig,
};
use grd_cate::estimators::{hsic_normalized, EstimatorKind, OptimConfig, TrainConfig, ZeroEstimator};
use grd_cate::harness::{run_cells, run_trial, write_results_csv, ExperimentConfig, TrialResult};
use grd_cate::metrics::{pehe_at_k, top_k_from_probs, EvalConfig};
use grd_cate::par::Execution;
use grd_cate::rng;
use grd_cate::simulation::{build_benchmark, SimConfig, Split};
use grd_cate::Result;

type Outcome = Result<(bool, String)>;

fn c1_grd_identity() -> Outcome {
    let n = 10_000;
    let design = GrdDesign::random(BasisSpec::default(), 1.0, &mut rng::from_seed(1))?;
    let oracle = NuisancePair::oracle(design.basis.d_beta);
    let clean = design.sample(n, true, &mut rng::from_seed(2));
    let mut rss = 0.0;
    for i in 0..n {
        let x = clean.x[i];
        let a = design.basis.alpha(&x);
        let b = design.basis.beta(clean.t[i]);
        let e = design.propensity_features(&x);
        let mut fit = 0.0;
        for (p, ap) in a.iter().enumerate() {
            for q in 0..b.len() {
                fit += design.theta_star.get(p, q) * ap * (b[q] - e[q]);
            }
        }
        rss += (clean.y[i] - design.mean_outcome(&x) - fit).powi(2);
    }
    let noisy = design.sample(n, false, &mut rng::from_seed(3));
    let loss = feasible_loss(&design.theta_star, &noisy, &design, &oracle)?;
    Ok((
        rss < 1e-12 && (0.95..=1.05).contains(&loss),
        format!("noiseless RSS {rss:.2e}, noisy loss at truth {loss:.4}"),
    ))
}

fn c2_gradients() -> Outcome {
    let checks: [(&str, fn(u64) -> f64); 4] = [
        ("J_m", common::fd_stage1),
        ("J_gh", common::fd_gh),
        ("J_e", common::fd_e),
        ("GraphITE", common::fd_graphite),
    ];
    let mut worst = Vec::new();
    let mut ok = true;
    for (name, f) in checks {
        let e = (0..20).map(f).fold(0.0, f64::max);
        ok &= e < 1e-4;
        worst.push(format!("{name} {e:.1e}"));
    }
    Ok((ok, format!("max relative error over 20 instances: {}", worst.join(", "))))
}

fn c3_zero_closed_form() -> Outcome {
    let b = build_benchmark(&SimConfig::small_world(5))?;
    let mut worst: f64 = 0.0;
    for data in [&b.in_sample, &b.out_sample] {
        for k in [2, 6, 10] {
            let got = pehe_at_k(&ZeroEstimator, data, &b.ground_truth, &b.propensity, EvalConfig { k, weighted: false, split: data.split })?
                .value;
            let mut want = 0.0;
            for i in 0..data.len() {
                let x = data.covariates.row(i);
                let ids = top_k_from_probs(&b.propensity.distribution(x)?, k);
                let mut s = 0.0;
                for a in 0..k {
                    for c in (a + 1)..k {
                        s += b.ground_truth.true_cate(x, ids[c], ids[a])?.powi(2);
                    }
                }
                want += s / (k * (k - 1) / 2) as f64;
            }
            want /= data.len() as f64;
            worst = worst.max((got - want).abs());
        }
    }
    Ok((worst <= 1e-10, format!("max |UPEHE(zero) − mean τ²| = {worst:.1e}")))
}

fn wpehe6(rows: &[TrialResult], est: &str, split: Split, kappa: f64, seed: u64) -> f64 {
    rows.iter()
        .find(|r| r.estimator == est && r.split == split && r.metric == "wpehe" && r.k == 6 && r.kappa == kappa && r.seed == seed)
        .map_or(f64::NAN, |r| r.value)
}

fn desk_config(n_seeds: usize) -> ExperimentConfig {
    ExperimentConfig {
        estimators: vec![EstimatorKind::Sin, EstimatorKind::Gnn, EstimatorKind::Zero],
        eval_ks: vec![6],
        n_seeds,
        ..ExperimentConfig::default()
    }
}

fn c4_ordering(rows: &[TrialResult]) -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for split in [Split::InSample, Split::OutSample] {
        let mut wins = 0;
        let mut misses = Vec::new();
        let mut means = [0.0; 3];
        for seed in 0..10 {
            let v = ["sin", "gnn", "zero"].map(|e| wpehe6(rows, e, split, 10.0, seed));
            if v[0] < v[1] && v[0] < v[2] {
                wins += 1;
            } else {
                misses.push(format!("seed {seed} sin/zero {:.3} gnn/zero {:.3}", v[0] / v[2], v[1] / v[2]));
            }
            for (m, x) in means.iter_mut().zip(v) {
                *m += x / 10.0;
            }
        }
        ok &= wins >= 8;
        parts.push(format!(
            "{}: SIN best in {wins}/10 seeds (mean WPEHE@6 sin {:.3e}, gnn {:.3e}, zero {:.3e}){}",
            split.as_str(),
            means[0],
            means[1],
            means[2],
            if misses.is_empty() { String::new() } else { format!(" [misses: {}]", misses.join(", ")) }
        ));
    }
    Ok((ok, parts.join("; ")))
}

fn c5_quasi_oracle() -> Outcome {
    let cfg = QuasiOracleConfig::default();
    let rows = quasi_oracle_experiment(&cfg, Execution::available())?;
    let s = summarize_regret(&rows);
    let ns: Vec<f64> = s.iter().map(|r| r.n as f64).collect();
    let slope = loglog_slope(&ns, &s.iter().map(|r| r.median_oracle).collect::<Vec<_>>())?;
    let last = s.last().expect("non-empty grid");
    let ratio = last.median_feasible / last.median_oracle;

    let control = QuasiOracleConfig {
        kappa_rate: 0.0,
        ..cfg
    };
    let cs = summarize_regret(&quasi_oracle_experiment(&control, Execution::available())?);
    let tail = &cs[cs.len() - 2..];
    let tail_slope = loglog_slope(
        &tail.iter().map(|r| r.n as f64).collect::<Vec<_>>(),
        &tail.iter().map(|r| r.median_feasible).collect::<Vec<_>>(),
    )?;
    // a plateau: feasible regret stops decaying over the last doubling pair
    let plateau = tail_slope > -0.25;
    Ok((
        ratio <= 2.0 && (-1.3..=-0.7).contains(&slope) && plateau,
        format!(
            "feasible/oracle at n={} {ratio:.3}, oracle slope {slope:.3}, control tail slope {tail_slope:.3}",
            last.n
        ),
    ))
}

fn c6_graph_oracles() -> Outcome {
    use grd_cate::graphs::{generate_watts_strogatz, graph_statistics, Graph, WsParams};
    let mut compared = 0;
    let mut mismatches = 0;
    let mut check = |n: usize, edges: Vec<(usize, usize)>| -> Result<()> {
        let g = Graph::with_degree_centrality(n, edges.clone())?;
        if !g.is_connected() {
            return Ok(());
        }
        let s = graph_statistics(&g)?;
        compared += 1;
        if s.connectivity != common::naive_connectivity(n, &edges)
            || (s.avg_shortest_path - common::naive_avg_path(n, &edges)).abs() > 1e-12
        {
            mismatches += 1;
        }
        Ok(())
    };
    for n in 2..=6 {
        for mask in 0u64..(1 << (n * (n - 1) / 2)) {
            check(n, common::graph_from_mask(n, mask))?;
        }
    }
    let mut r = rng::from_seed(8);
    for i in 0..200 {
        let n = 7 + i % 2;
        check(n, common::random_connected(&mut r, n, 0.35))?;
    }
    let mut ws_bad = 0;
    for _ in 0..500 {
        let p = WsParams::sample(&mut r);
        let g = generate_watts_strogatz(&mut r, &p)?;
        if !g.is_connected() || g.n_edges() != p.lattice_edge_count() {
            ws_bad += 1;
        }
    }
    Ok((
        mismatches == 0 && ws_bad == 0,
        format!("{mismatches} mismatches over {compared} graphs; {ws_bad}/500 bad WS draws"),
    ))
}

fn c7_hsic() -> Outcome {
    let a = common::gaussian_sample(21, 200, 3);
    let b = common::gaussian_sample(22, 200, 3);
    let self_dep = hsic_normalized(&a, &a)?;
    let (stat, q95) = common::hsic_with_null(&a, &b, 500, 23);
    Ok((
        (self_dep - 1.0).abs() <= 1e-10 && stat < q95,
        format!("HSIC(A,A) = {self_dep:.12}; independent {stat:.4} vs null q95 {q95:.4}"),
    ))
}

fn c8_metric_equivalence() -> Outcome {
    let make = |kappa| {
        build_benchmark(&SimConfig {
            n_in: 100,
            n_out: 50,
            n_treatments: 5,
            d_x: 6,
            kappa,
            ..SimConfig::small_world(6)
        })
    };
    let b = make(10.0)?;
    let mut worst: f64 = 0.0;
    for data in [&b.in_sample, &b.out_sample] {
        for weighted in [false, true] {
            let got = pehe_at_k(&common::HashedEstimator, data, &b.ground_truth, &b.propensity, EvalConfig { k: 5, weighted, split: data.split })?
                .value;
            let want = common::naive_pehe(&common::HashedEstimator, data, &b.ground_truth, &b.propensity, 5, weighted);
            worst = worst.max((got - want).abs());
        }
    }
    let u = make(0.0)?;
    let cfg = |weighted| EvalConfig { k: 5, weighted, split: Split::InSample };
    let up = pehe_at_k(&common::HashedEstimator, &u.in_sample, &u.ground_truth, &u.propensity, cfg(false))?.value;
    let wp = pehe_at_k(&common::HashedEstimator, &u.in_sample, &u.ground_truth, &u.propensity, cfg(true))?.value;
    let gap = (wp - up / 25.0).abs();
    Ok((
        worst <= 1e-12 && gap <= 1e-15 * up.max(1.0),
        format!("max |fast − naive| = {worst:.1e}; uniform |WPEHE − UPEHE/25| = {gap:.1e}"),
    ))
}

fn c9_determinism() -> Outcome {
    let opt = OptimConfig {
        epochs: 3,
        lr: 1e-3,
        batch_size: 32,
        patience: 5,
        min_delta: 1e-4,
        weight_decay: 0.0,
    };
    let cfg = ExperimentConfig {
        sim: SimConfig {
            n_in: 60,
            n_out: 30,
            n_treatments: 8,
            d_x: 5,
            ..SimConfig::small_world(0)
        },
        train: TrainConfig {
            hidden_dim: 16,
            embed_dim: 4,
            encoder_hidden: 8,
            inner_steps: 2,
            stage1: opt.clone(),
            stage2: opt.clone(),
            regression: opt,
            ..TrainConfig::default()
        },
        eval_ks: vec![2, 4],
        n_seeds: 1,
        ..ExperimentConfig::default()
    };
    let dir = tempfile::tempdir()?;
    let mut texts = Vec::new();
    for run in 0..2 {
        let rows = run_trial(&cfg, 7)?;
        let path = dir.path().join(format!("results{run}.csv"));
        write_results_csv(&path, &rows)?;
        let text = std::fs::read_to_string(&path)?;
        let header: Vec<&str> = text.lines().next().unwrap_or_default().split(',').collect();
        let col = header.iter().position(|h| *h == "seconds").expect("seconds column");
        let untimed: Vec<String> = text
            .lines()
            .map(|l| {
                let mut f: Vec<&str> = l.split(',').collect();
                f.remove(col);
                f.join(",")
            })
            .collect();
        texts.push(untimed);
    }
    let failed = texts[0].iter().filter(|l| !l.ends_with(',')).count() - 1;
    Ok((
        texts[0] == texts[1],
        format!("{} rows over five estimators identical across runs ({failed} with errors)", texts[0].len() - 1),
    ))
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

fn c10_bias_sweep(desk_rows: &[TrialResult]) -> Outcome {
    let cfg = desk_config(5);
    let mut rows = run_cells(&cfg, &[0.0, 1.0, 100.0], Execution::available(), None)?;
    rows.extend(desk_rows.iter().filter(|r| r.seed < 5).cloned());
    let mut ok = true;
    let mut parts = Vec::new();
    for split in [Split::InSample, Split::OutSample] {
        let mut wins = 0;
        let mut cells = Vec::new();
        for kappa in [0.0, 1.0, 10.0, 100.0] {
            let med = |e| median((0..5).map(|s| wpehe6(&rows, e, split, kappa, s)).collect());
            let (s, g) = (med("sin"), med("gnn"));
            if s < g {
                wins += 1;
            }
            cells.push(format!("κ={kappa}: {s:.2e} vs {g:.2e}"));
        }
        ok &= wins >= 3;
        parts.push(format!("{} {wins}/4 ({})", split.as_str(), cells.join(", ")));
    }
    Ok((ok, parts.join("; ")))
}

fn report(id: usize, name: &str, outcome: Outcome, started: Instant, failures: &mut usize) {
    let secs = started.elapsed().as_secs_f64();
    let (pass, detail) = outcome.unwrap_or_else(|e| (false, format!("error: {e}")));
    if !pass {
        *failures += 1;
    }
    println!("{} [{id:>2}] {name}: {detail} ({secs:.1} s)", if pass { "PASS" } else { "FAIL" });
}

fn main() {
    let mut failures = 0;
    let t = Instant::now();
    report(1, "GRD identity", c1_grd_identity(), t, &mut failures);
    let t = Instant::now();
    report(2, "gradient correctness", c2_gradients(), t, &mut failures);
    let t = Instant::now();
    report(3, "zero-baseline closed form", c3_zero_closed_form(), t, &mut failures);

    let t = Instant::now();
    let desk = run_cells(&desk_config(10), &[10.0], Execution::available(), None);
    let desk_rows = desk.as_ref().map(Vec::clone).unwrap_or_default();
    let c4 = match desk {
        Ok(rows) => c4_ordering(&rows),
        Err(e) => Err(e),
    };
    report(4, "relative ordering on desk SW", c4, t, &mut failures);

    let t = Instant::now();
    report(5, "quasi-oracle regret", c5_quasi_oracle(), t, &mut failures);
    let t = Instant::now();
    report(6, "graph-statistic oracles", c6_graph_oracles(), t, &mut failures);
    let t = Instant::now();
    report(7, "HSIC calibration", c7_hsic(), t, &mut failures);
    let t = Instant::now();
    report(8, "metric brute-force equivalence", c8_metric_equivalence(), t, &mut failures);
    let t = Instant::now();
    report(9, "determinism", c9_determinism(), t, &mut failures);
    let t = Instant::now();
    report(10, "bias-sweep direction", c10_bias_sweep(&desk_rows), t, &mut failures);

    println!("{} of 10 criteria passed", 10 - failures);
    // a failing run still exits 0 by default so `cargo test` goes on to the
    // remaining targets; set GRD_CATE_STRICT_ACCEPTANCE=1 to fail the process
    if failures > 0 && std::env::var_os("GRD_CATE_STRICT_ACCEPTANCE").is_some() {
        std::process::exit(1);
    }
}
