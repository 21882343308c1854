//! Independent reference computations shared by the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use ptglmm::distribution::{pt_log_pmf, PtParams};
use ptglmm::glmm::{LongitudinalDataset, ThetaFull};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Adaptive Simpson quadrature to absolute tolerance `tol`.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    fn step<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            left + right + delta / 15.0
        } else {
            step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) + step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
        }
    }
    let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    step(f, a, b, fa, fm, fb, whole, tol, 50)
}

/// Marginal log-likelihood by direct integration of every subject over
/// `[-10 sigma, 10 sigma]`.
pub fn brute_marginal_loglik(theta: &ThetaFull, data: &LongitudinalDataset) -> f64 {
    let eta = data.linear_predictor(&theta.beta);
    let sd = theta.sigma2.sqrt();
    let mut total = 0.0;
    for obs in data.subject_obs() {
        // Scale by the value at the conditional maximum on a coarse grid so
        // the integrand is O(1) and the absolute tolerance is meaningful.
        let log_h = |v: f64| {
            let mut s = -0.5 * v * v / theta.sigma2 - 0.5 * (2.0 * std::f64::consts::PI * theta.sigma2).ln();
            for &i in obs {
                let p = PtParams::new((eta[i] + v).exp(), theta.dispersion, theta.power).unwrap();
                s += pt_log_pmf(data.y()[i], &p).unwrap();
            }
            s
        };
        let peak = (0..=400).map(|j| log_h(-10.0 * sd + j as f64 * sd / 20.0)).fold(f64::NEG_INFINITY, f64::max);
        // Panels of width sd / 20 so a narrow peak cannot slip between the
        // first Simpson nodes.
        let integral: f64 = (0..400)
            .map(|j| {
                let a = -10.0 * sd + j as f64 * sd / 20.0;
                adaptive_simpson(&|v| (log_h(v) - peak).exp(), a, a + sd / 20.0, 1e-14)
            })
            .sum();
        total += peak + integral.ln();
    }
    total
}

/// Small random-intercept dataset with `n` subjects and `m` occasions.
pub fn tiny_dataset(rng: &mut ChaCha8Rng, n: usize, m: usize, max_count: u64) -> LongitudinalDataset {
    let mut y = Vec::new();
    let mut subject = Vec::new();
    let mut x = Vec::new();
    for i in 0..n {
        for j in 0..m {
            y.push(rng.random_range(0..=max_count));
            subject.push(i);
            x.extend_from_slice(&[1.0, j as f64]);
        }
    }
    if y.iter().all(|&v| v == 0) {
        y[0] = 1;
    }
    let rows = n * m;
    let (x, names) = if m >= 2 {
        (DMatrix::from_row_slice(rows, 2, &x), vec!["(Intercept)".into(), "time".into()])
    } else {
        (DMatrix::from_element(rows, 1, 1.0), vec!["(Intercept)".into()])
    };
    LongitudinalDataset::new(y, x, subject, vec![0.0; rows], names).unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// NB log-likelihood with variance `D mu` (size `mu / (D - 1)`).
pub fn nb_loglik(y: &[u64], eta: &[f64], d: f64) -> f64 {
    y.iter()
        .zip(eta)
        .map(|(&y, &e)| {
            let mu = e.exp();
            let r = mu / (d - 1.0);
            let y = y as f64;
            statrs::function::gamma::ln_gamma(y + r) - statrs::function::gamma::ln_gamma(r) - statrs::function::gamma::ln_gamma(y + 1.0)
                + r * (1.0 / d).ln()
                + y * ((d - 1.0) / d).ln()
        })
        .sum()
}

/// `(d l / d eta, -d^2 l / d eta^2)` for one NB observation with variance
/// `D mu`, using the finite digamma and trigamma differences.
pub fn nb_eta_derivs(y: u64, eta: f64, d: f64) -> (f64, f64) {
    let mu = eta.exp();
    let r = mu / (d - 1.0);
    let (mut s1, mut s2) = (0.0, 0.0);
    for j in 0..y {
        let t = r + j as f64;
        s1 += 1.0 / t;
        s2 += 1.0 / (t * t);
    }
    let g = r * (s1 - d.ln());
    let h = g - r * r * s2;
    (g, -h)
}

/// Negative-binomial regression by Newton steps on the coefficients nested
/// in a golden-section search on `log(D - 1)`.
pub fn nb_glm_oracle(data: &LongitudinalDataset) -> (Vec<f64>, f64) {
    let x = data.x();
    let p = x.ncols();
    let y = data.y();
    let beta_given = |d: f64, start: &DVector<f64>| -> DVector<f64> {
        let mut b = start.clone();
        for _ in 0..200 {
            let eta: Vec<f64> = (x * &b).iter().zip(data.offset()).map(|(a, o)| a + o).collect();
            let mut grad = DVector::<f64>::zeros(p);
            let mut info = DMatrix::<f64>::zeros(p, p);
            for i in 0..y.len() {
                let (g, w) = nb_eta_derivs(y[i], eta[i], d);
                let row = x.row(i).transpose();
                grad += &row * g;
                info += &row * row.transpose() * w;
            }
            let step = info.cholesky().expect("positive information").solve(&grad);
            b += &step;
            if step.amax() < 1e-13 {
                break;
            }
        }
        b
    };
    let mut start = DVector::zeros(p);
    start[0] = (y.iter().sum::<u64>() as f64 / y.len() as f64).ln();
    let profile = |ld: f64, start: &DVector<f64>| {
        let d = 1.0 + ld.exp();
        let b = beta_given(d, start);
        let eta: Vec<f64> = (x * &b).iter().zip(data.offset()).map(|(a, o)| a + o).collect();
        (nb_loglik(y, &eta, d), b)
    };
    let (mut lo, mut hi) = (-8.0f64, 6.0f64);
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..120 {
        let a = hi - phi * (hi - lo);
        let b = lo + phi * (hi - lo);
        if profile(a, &start).0 > profile(b, &start).0 {
            hi = b;
        } else {
            lo = a;
        }
    }
    let ld = 0.5 * (lo + hi);
    let (_, b) = profile(ld, &start);
    (b.iter().copied().collect(), 1.0 + ld.exp())
}
