//! Derivative-free minimization (Nelder-Mead) and quasi-Newton BFGS with
//! central-difference gradients, plus finite-difference Hessians.
//!
//! Objectives are minimized; a non-finite value is treated as `+inf`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// Something that can be minimized.
pub trait Objective {
    fn eval(&mut self, x: &[f64]) -> f64;

    /// Called at the start of every optimizer iteration.
    fn on_iteration(&mut self, _iteration: usize) {}
}

impl<F: FnMut(&[f64]) -> f64> Objective for F {
    fn eval(&mut self, x: &[f64]) -> f64 {
        self(x)
    }
}

fn eval_clean<O: Objective + ?Sized>(f: &mut O, x: &[f64], evals: &mut usize) -> f64 {
    *evals += 1;
    let v = f.eval(x);
    if v.is_finite() {
        v
    } else {
        f64::INFINITY
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct OptimOutcome {
    pub x: Vec<f64>,
    pub value: f64,
    pub converged: bool,
    pub iterations: usize,
    pub evaluations: usize,
    pub message: String,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct NelderMeadOptions {
    pub max_iter: usize,
    pub max_evals: usize,
    /// Relative spread of function values across the simplex at convergence.
    pub ftol: f64,
    /// Initial simplex edge as a fraction of `max(|x_i|, 1)`.
    pub step: f64,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        Self { max_iter: 2000, max_evals: usize::MAX, ftol: 1e-8, step: 0.1 }
    }
}

/// Nelder-Mead with standard coefficients (reflection 1, expansion 2,
/// contraction 1/2, shrink 1/2).
pub fn nelder_mead<O: Objective + ?Sized>(f: &mut O, x0: &[f64], opts: &NelderMeadOptions) -> OptimOutcome {
    let n = x0.len();
    let mut evals = 0usize;
    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    simplex.push(x0.to_vec());
    for i in 0..n {
        let mut v = x0.to_vec();
        v[i] += opts.step * x0[i].abs().max(1.0);
        simplex.push(v);
    }
    f.on_iteration(0);
    let mut values: Vec<f64> = simplex.iter().map(|x| eval_clean(f, x, &mut evals)).collect();
    if n == 0 {
        return OptimOutcome {
            x: Vec::new(),
            value: values[0],
            converged: values[0].is_finite(),
            iterations: 0,
            evaluations: evals,
            message: "no free parameters".into(),
        };
    }

    let mut order: Vec<usize> = (0..=n).collect();
    let mut iterations = 0;
    let mut message = String::from("iteration limit reached");
    let mut converged = false;
    while iterations < opts.max_iter {
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        let best = order[0];
        let worst = order[n];
        let second_worst = order[n - 1];
        let (fb, fw) = (values[best], values[worst]);
        if !fb.is_finite() {
            message = "non-finite objective at every vertex".into();
            break;
        }
        if fw.is_finite() && (fw - fb) <= opts.ftol * (fb.abs() + opts.ftol) {
            converged = true;
            message = "relative simplex spread below tolerance".into();
            break;
        }
        if evals >= opts.max_evals {
            message = "evaluation budget exhausted".into();
            break;
        }
        iterations += 1;
        f.on_iteration(iterations);

        let mut centroid = vec![0.0; n];
        for &i in order.iter().take(n) {
            for (c, x) in centroid.iter_mut().zip(&simplex[i]) {
                *c += x / n as f64;
            }
        }
        let along = |t: f64| -> Vec<f64> {
            centroid.iter().zip(&simplex[worst]).map(|(c, w)| c + t * (c - w)).collect()
        };
        let xr = along(1.0);
        let fr = eval_clean(f, &xr, &mut evals);
        if fr < fb {
            let xe = along(2.0);
            let fe = eval_clean(f, &xe, &mut evals);
            if fe < fr {
                simplex[worst] = xe;
                values[worst] = fe;
            } else {
                simplex[worst] = xr;
                values[worst] = fr;
            }
            continue;
        }
        if fr < values[second_worst] {
            simplex[worst] = xr;
            values[worst] = fr;
            continue;
        }
        let (xc, fc, accept) = if fr < fw {
            let xc = along(0.5);
            let fc = eval_clean(f, &xc, &mut evals);
            let ok = fc <= fr;
            (xc, fc, ok)
        } else {
            let xc = along(-0.5);
            let fc = eval_clean(f, &xc, &mut evals);
            let ok = fc < fw;
            (xc, fc, ok)
        };
        if accept {
            simplex[worst] = xc;
            values[worst] = fc;
            continue;
        }
        let xb = simplex[best].clone();
        for &i in order.iter().skip(1) {
            let shrunk: Vec<f64> = xb.iter().zip(&simplex[i]).map(|(b, x)| b + 0.5 * (x - b)).collect();
            values[i] = eval_clean(f, &shrunk, &mut evals);
            simplex[i] = shrunk;
        }
    }
    let best = (0..=n).min_by(|&a, &b| values[a].total_cmp(&values[b])).unwrap();
    OptimOutcome {
        x: simplex[best].clone(),
        value: values[best],
        converged: converged && values[best].is_finite(),
        iterations,
        evaluations: evals,
        message,
    }
}

/// Central-difference step `max(1e-4, 1e-4 |x|)`.
#[inline]
pub fn fd_step(x: f64) -> f64 {
    (1e-4 * x.abs()).max(1e-4)
}

pub fn numeric_gradient<O: Objective + ?Sized>(f: &mut O, x: &[f64]) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|j| {
            let h = fd_step(x[j]);
            probe[j] = x[j] + h;
            let fp = f.eval(&probe);
            probe[j] = x[j] - h;
            let fm = f.eval(&probe);
            probe[j] = x[j];
            (fp - fm) / (2.0 * h)
        })
        .collect()
}

/// Symmetric central-difference Hessian with steps from `steps`.
pub fn numeric_hessian<O: Objective + ?Sized>(f: &mut O, x: &[f64], steps: &[f64]) -> DMatrix<f64> {
    let n = x.len();
    let mut h = DMatrix::zeros(n, n);
    let mut probe = x.to_vec();
    let f0 = f.eval(x);
    for i in 0..n {
        let hi = steps[i];
        probe[i] = x[i] + hi;
        let fp = f.eval(&probe);
        probe[i] = x[i] - hi;
        let fm = f.eval(&probe);
        probe[i] = x[i];
        h[(i, i)] = (fp - 2.0 * f0 + fm) / (hi * hi);
        for j in 0..i {
            let hj = steps[j];
            let mut corner = |si: f64, sj: f64| {
                probe[i] = x[i] + si * hi;
                probe[j] = x[j] + sj * hj;
                let v = f.eval(&probe);
                probe[i] = x[i];
                probe[j] = x[j];
                v
            };
            let v = (corner(1.0, 1.0) - corner(1.0, -1.0) - corner(-1.0, 1.0) + corner(-1.0, -1.0)) / (4.0 * hi * hj);
            h[(i, j)] = v;
            h[(j, i)] = v;
        }
    }
    h
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct BfgsOptions {
    pub max_iter: usize,
    pub ftol: f64,
    pub gtol: f64,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        Self { max_iter: 200, ftol: 1e-8, gtol: 1e-6 }
    }
}

/// BFGS with central-difference gradients and a backtracking Armijo search.
pub fn bfgs<O: Objective + ?Sized>(f: &mut O, x0: &[f64], opts: &BfgsOptions) -> OptimOutcome {
    let n = x0.len();
    let mut evals = 0usize;
    let mut x = DVector::from_column_slice(x0);
    f.on_iteration(0);
    let mut fx = eval_clean(f, x.as_slice(), &mut evals);
    if !fx.is_finite() {
        return OptimOutcome {
            x: x0.to_vec(),
            value: fx,
            converged: false,
            iterations: 0,
            evaluations: evals,
            message: "non-finite objective at start".into(),
        };
    }
    let grad = |f: &mut O, x: &DVector<f64>, evals: &mut usize| {
        *evals += 2 * n;
        DVector::from_vec(numeric_gradient(f, x.as_slice()))
    };
    let mut g = grad(f, &x, &mut evals);
    let mut hinv = DMatrix::<f64>::identity(n, n);
    let gnorm0 = g.amax();
    if gnorm0 > 0.0 {
        hinv /= gnorm0.max(1.0);
    }
    let mut message = String::from("iteration limit reached");
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iter {
        if !g.iter().all(|v| v.is_finite()) {
            message = "non-finite gradient".into();
            break;
        }
        if g.amax() < opts.gtol {
            converged = true;
            message = "gradient below tolerance".into();
            break;
        }
        iterations += 1;
        f.on_iteration(iterations);
        let mut dir = -(&hinv * &g);
        let mut slope = g.dot(&dir);
        if slope >= 0.0 {
            hinv = DMatrix::identity(n, n);
            dir = -g.clone();
            slope = g.dot(&dir);
        }
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let cand = &x + t * &dir;
            let fc = eval_clean(f, cand.as_slice(), &mut evals);
            if fc <= fx + 1e-4 * t * slope {
                accepted = Some((cand, fc));
                break;
            }
            t *= 0.5;
        }
        let Some((xn, fnew)) = accepted else {
            // No descent along the quasi-Newton direction: treat as stationary
            // only if the gradient is already small relative to the objective.
            if g.amax() < 1e-4 * fx.abs().max(1.0) {
                converged = true;
                message = "line search stalled at a near-stationary point".into();
            } else {
                message = "line search failed".into();
            }
            break;
        };
        let gn = grad(f, &xn, &mut evals);
        let s = &xn - &x;
        let yv = &gn - &g;
        let sy = s.dot(&yv);
        let rel_change = (fx - fnew).abs() / (fx.abs() + opts.ftol);
        x = xn;
        fx = fnew;
        g = gn;
        if sy > 1e-12 * s.norm() * yv.norm() {
            let rho = 1.0 / sy;
            let eye = DMatrix::<f64>::identity(n, n);
            let left = &eye - rho * &s * yv.transpose();
            let right = &eye - rho * &yv * s.transpose();
            hinv = &left * &hinv * &right + rho * &s * s.transpose();
        }
        if rel_change < opts.ftol {
            converged = true;
            message = "relative objective change below tolerance".into();
            break;
        }
    }
    OptimOutcome { x: x.as_slice().to_vec(), value: fx, converged, iterations, evaluations: evals, message }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rosenbrock(x: &[f64]) -> f64 {
        (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2)
    }

    #[test]
    fn nelder_mead_finds_quadratic_minimum() {
        let mut f = |x: &[f64]| (x[0] - 1.0).powi(2) + 3.0 * (x[1] + 2.0).powi(2) + 1.0;
        let out = nelder_mead(&mut f, &[0.0, 0.0], &NelderMeadOptions::default());
        assert!(out.converged, "{}", out.message);
        assert!((out.x[0] - 1.0).abs() < 1e-3);
        assert!((out.x[1] + 2.0).abs() < 1e-3);
    }

    #[test]
    fn nelder_mead_reports_iteration_limit() {
        let mut f = rosenbrock;
        let opts = NelderMeadOptions { max_iter: 5, ..Default::default() };
        let out = nelder_mead(&mut f, &[-1.2, 1.0], &opts);
        assert!(!out.converged);
        assert_eq!(out.iterations, 5);
    }

    #[test]
    fn nelder_mead_never_worse_than_start() {
        let mut f = |x: &[f64]| if x[0] > 0.5 { f64::NAN } else { (x[0] + 1.0).powi(2) + x[1].abs() };
        let out = nelder_mead(&mut f, &[0.0, 0.3], &NelderMeadOptions::default());
        assert!(out.value <= 1.3);
    }

    #[test]
    fn bfgs_solves_rosenbrock() {
        let mut f = rosenbrock;
        let out = bfgs(&mut f, &[-1.2, 1.0], &BfgsOptions { max_iter: 500, ftol: 1e-14, gtol: 1e-7 });
        assert!(out.converged, "{}", out.message);
        assert!((out.x[0] - 1.0).abs() < 1e-3 && (out.x[1] - 1.0).abs() < 1e-3, "{:?}", out.x);
    }

    #[test]
    fn hessian_of_quadratic_form() {
        let a = [[4.0, 1.0, 0.5], [1.0, 3.0, -0.2], [0.5, -0.2, 2.0]];
        let mut f = |x: &[f64]| {
            let mut s = 0.0;
            for i in 0..3 {
                for j in 0..3 {
                    s += 0.5 * x[i] * a[i][j] * x[j];
                }
            }
            s
        };
        let x = [0.3, -0.7, 1.1];
        let steps: Vec<f64> = x.iter().map(|&v| fd_step(v)).collect();
        let h = numeric_hessian(&mut f, &x, &steps);
        for i in 0..3 {
            for j in 0..3 {
                assert!((h[(i, j)] - a[i][j]).abs() < 1e-6);
                assert_eq!(h[(i, j)], h[(j, i)]);
            }
        }
    }
}
