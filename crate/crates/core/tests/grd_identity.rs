//! The small-world outcome model admits an exact decomposition with
//! `h(T) = (0.2 ν², l)`, `g(x) = (v_ν'x, v_l'x)` and `e(x) = E[h(T) | x]`.

use grd_cate::simulation::{build_benchmark, OutcomeModel, SimConfig};

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[test]
fn residual_equals_g_times_centered_h() {
    let b = build_benchmark(&SimConfig {
        n_in: 60,
        n_out: 10,
        n_treatments: 10,
        d_x: 6,
        ..SimConfig::small_world(2)
    })
    .unwrap();
    let OutcomeModel::SmallWorld { v_nu, v_l, treatment_stats } = &b.ground_truth.model else {
        panic!("expected small-world model");
    };
    let h: Vec<[f64; 2]> = treatment_stats
        .iter()
        .map(|s| [0.2 * (s.connectivity * s.connectivity) as f64, s.avg_shortest_path])
        .collect();
    let data = &b.in_sample;
    for i in 0..data.len() {
        let x = data.covariates.row(i);
        let p = b.propensity.distribution(x).unwrap();
        let g = [dot(v_nu, x), dot(v_l, x)];
        let e = [0, 1].map(|j| p.iter().zip(&h).map(|(pt, ht)| pt * ht[j]).sum::<f64>());
        let m: f64 = p
            .iter()
            .enumerate()
            .map(|(t, pt)| pt * b.ground_truth.noiseless_outcome(x, t).unwrap())
            .sum();
        let mut weighted_resid = 0.0;
        for t in 0..h.len() {
            let y = b.ground_truth.noiseless_outcome(x, t).unwrap();
            let rhs = g[0] * (h[t][0] - e[0]) + g[1] * (h[t][1] - e[1]);
            assert!((y - m - rhs).abs() < 1e-9 * (1.0 + y.abs()), "unit {i} t {t}");
            weighted_resid += p[t] * (y - m);
            for tp in 0..h.len() {
                let tau = g[0] * (h[tp][0] - h[t][0]) + g[1] * (h[tp][1] - h[t][1]);
                assert!((tau - b.ground_truth.true_cate(x, tp, t).unwrap()).abs() < 1e-9);
            }
        }
        assert!(weighted_resid.abs() < 1e-9);
    }
}
