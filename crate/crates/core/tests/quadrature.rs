mod common;

use std::f64::consts::PI;

use ptglmm::distribution::{pt_log_pmf, PtParams};
use ptglmm::glmm::{posterior_modes, ThetaFull};
use ptglmm::quadrature::{adapt, aghq_log_integral, gh_rule, AdaptOptions, AdaptiveState};

fn normal_log_density(v: f64, mean: f64, var: f64) -> f64 {
    -0.5 * (2.0 * PI * var).ln() - 0.5 * (v - mean).powi(2) / var
}

/// `E[v^j]` for `v ~ N(0, s2)`.
fn gaussian_moment(j: u32, s2: f64) -> f64 {
    if j % 2 == 1 {
        return 0.0;
    }
    (1..j).step_by(2).map(|i| i as f64).product::<f64>() * s2.powi(j as i32 / 2)
}

#[test]
fn small_rules() {
    let r1 = gh_rule(1).unwrap();
    assert_eq!(r1.nodes(), &[0.0]);
    assert!((r1.weights()[0] - PI.sqrt()).abs() < 1e-14);
    let r2 = gh_rule(2).unwrap();
    let mut n = r2.nodes().to_vec();
    n.sort_by(f64::total_cmp);
    assert!((n[0] + 0.5f64.sqrt()).abs() < 1e-14 && (n[1] - 0.5f64.sqrt()).abs() < 1e-14);
    for w in r2.weights() {
        assert!((w - PI.sqrt() / 2.0).abs() < 1e-14);
    }
    assert!(gh_rule(0).is_err() && gh_rule(101).is_err());
}

#[test]
fn fourth_moment_with_ten_nodes() {
    let r = gh_rule(10).unwrap();
    assert!((r.integrate(|v| v.powi(4)) - 0.75 * PI.sqrt()).abs() < 1e-10);
}

#[test]
fn polynomial_times_gaussian_exact_to_degree_2k_minus_1() {
    let s2: f64 = 0.7;
    for k in [2usize, 5, 10] {
        let rule = gh_rule(k).unwrap();
        let state = AdaptiveState::new(0.0, s2.sqrt()).unwrap();
        for j in 0..(2 * k as u32) {
            let want = gaussian_moment(j, s2);
            let raw = rule.integrate(|x| ((2.0 * s2).sqrt() * x).powi(j as i32)) / PI.sqrt();
            assert!((raw - want).abs() < 1e-10 * want.max(1.0), "k {k} j {j}: {raw} vs {want}");
            if j % 2 == 0 {
                // Through the adaptive path the log needs a positive integrand.
                let h = |v: f64| normal_log_density(v, 0.0, s2) + (1.0 + v.powi(j as i32)).ln();
                let got = aghq_log_integral(&h, &rule, &state).unwrap().exp();
                assert!((got - 1.0 - want).abs() < 1e-10 * (1.0 + want), "k {k} j {j}: {got}");
            }
        }
    }
}

#[test]
fn gaussian_adaptation_and_exactness() {
    let h = |v: f64| normal_log_density(v, 1.5, 0.25);
    let s = adapt(&h, 0.0, &AdaptOptions::default()).unwrap();
    assert!((s.mode - 1.5).abs() < 1e-6 && (s.scale - 0.5).abs() < 1e-6);
    let sym = |v: f64| normal_log_density(v, 0.0, 2.0);
    assert!(adapt(&sym, 0.3, &AdaptOptions::default()).unwrap().mode.abs() < 1e-8);
    for k in [1, 2, 5, 20] {
        let st = adapt(&sym, 0.0, &AdaptOptions::default()).unwrap();
        assert!(aghq_log_integral(&sym, &gh_rule(k).unwrap(), &st).unwrap().abs() < 1e-10);
    }
}

#[test]
fn one_node_rule_is_the_laplace_approximation() {
    let y = [3u64, 7, 0];
    let h = |v: f64| {
        normal_log_density(v, 0.0, 0.6)
            + y.iter().map(|&k| pt_log_pmf(k, &PtParams::new((1.1 + v).exp(), 2.0, -1.0).unwrap()).unwrap()).sum::<f64>()
    };
    let s = adapt(&h, 0.0, &AdaptOptions::default()).unwrap();
    let laplace = h(s.mode) + 0.5 * (2.0 * PI * s.scale * s.scale).ln();
    let k1 = aghq_log_integral(&h, &gh_rule(1).unwrap(), &s).unwrap();
    assert!((k1 - laplace).abs() < 1e-12);
}

#[test]
fn posterior_mode_matches_dense_grid() {
    let data = common::tiny_dataset(&mut common::rng(5), 3, 3, 20);
    let theta = ThetaFull::new(vec![1.5, 0.1], 2.5, 0.5, 0.7).unwrap();
    let modes = posterior_modes(&theta, &data).unwrap();
    let eta = data.linear_predictor(&theta.beta);
    for (i, obs) in data.subject_obs().iter().enumerate() {
        let log_post = |v: f64| {
            -0.5 * v * v / theta.sigma2
                + obs
                    .iter()
                    .map(|&j| pt_log_pmf(data.y()[j], &PtParams::new((eta[j] + v).exp(), 2.5, 0.5).unwrap()).unwrap())
                    .sum::<f64>()
        };
        let grid_best = (-4000..=4000).map(|g| g as f64 * 1e-3).max_by(|a, b| log_post(*a).total_cmp(&log_post(*b))).unwrap();
        assert!((modes[i] - grid_best).abs() <= 1e-3, "subject {i}: {} vs {grid_best}", modes[i]);
    }
}
