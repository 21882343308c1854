//! Gauss-Hermite rules and adaptive Gauss-Hermite quadrature (AGHQ) for
//! one-dimensional integrals `int h(v) dv` of positive integrands given on
//! the log scale.
//!
//! The adaptive rule recenters the nodes at the mode `v_hat` of `log h` and
//! rescales them by `s_hat = (-d^2 log h / dv^2)^(-1/2)`:
//!
//! ```text
//! int h(v) dv ~= s_hat sqrt(2) sum_r w_r exp(u_r^2) h(v_hat + s_hat sqrt(2) u_r)
//! ```
//!
//! With one node this is the Laplace approximation.

use std::f64::consts::{PI, SQRT_2};

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MAX_NODES: usize = 100;
/// Default floor on the adaptive scale.
pub const DEFAULT_SCALE_FLOOR: f64 = 1e-4;
/// Mode estimates beyond this magnitude are treated as divergence.
pub const MODE_ESCAPE: f64 = 50.0;

/// Nodes and weights for `int f(v) exp(-v^2) dv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadratureRule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
    // ln(w_r) + u_r^2, the per-node constant of the adaptive sum.
    log_factors: Vec<f64>,
}

impl QuadratureRule {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Plain (non-adaptive) rule applied to `f`, i.e. `sum_r w_r f(u_r)`.
    pub fn integrate<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&x, &w)| w * f(x)).sum()
    }
}

/// Gauss-Hermite rule with `k` nodes via the Golub-Welsch eigenvalue
/// construction, polished by Newton steps on the orthonormal recurrence.
pub fn gh_rule(k: usize) -> Result<QuadratureRule> {
    if !(1..=MAX_NODES).contains(&k) {
        return Err(Error::Quadrature(format!("node count must lie in 1..={MAX_NODES}, got {k}")));
    }
    if k == 1 {
        return Ok(build_rule(vec![0.0], vec![PI.sqrt()]));
    }
    let mut jacobi = DMatrix::<f64>::zeros(k, k);
    for i in 1..k {
        let off = (i as f64 / 2.0).sqrt();
        jacobi[(i - 1, i)] = off;
        jacobi[(i, i - 1)] = off;
    }
    let eig = SymmetricEigen::new(jacobi);
    let mut nodes: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    nodes.sort_by(|a, b| a.partial_cmp(b).unwrap());

    for x in nodes.iter_mut() {
        for _ in 0..3 {
            let (pk, dpk, _) = orthonormal_hermite(k, *x);
            if dpk != 0.0 {
                *x -= pk / dpk;
            }
        }
    }
    // Enforce exact symmetry.
    for i in 0..k / 2 {
        let x = 0.5 * (nodes[k - 1 - i] - nodes[i]);
        nodes[i] = -x;
        nodes[k - 1 - i] = x;
    }
    if k % 2 == 1 {
        nodes[k / 2] = 0.0;
    }
    let mut weights: Vec<f64> = nodes.iter().map(|&x| 1.0 / orthonormal_hermite(k, x).2).collect();
    for i in 0..k / 2 {
        let w = 0.5 * (weights[i] + weights[k - 1 - i]);
        weights[i] = w;
        weights[k - 1 - i] = w;
    }
    Ok(build_rule(nodes, weights))
}

fn build_rule(nodes: Vec<f64>, weights: Vec<f64>) -> QuadratureRule {
    let log_factors = nodes.iter().zip(&weights).map(|(&x, &w)| w.ln() + x * x).collect();
    QuadratureRule { nodes, weights, log_factors }
}

// Returns (p_k(x), p_k'(x), sum_{j<k} p_j(x)^2) for the polynomials
// orthonormal under exp(-x^2).
fn orthonormal_hermite(k: usize, x: f64) -> (f64, f64, f64) {
    let mut prev = 0.0;
    let mut cur = PI.powf(-0.25);
    let mut christoffel = 0.0;
    for j in 0..k {
        christoffel += cur * cur;
        let jf = j as f64;
        let next = (2.0 / (jf + 1.0)).sqrt() * x * cur - (jf / (jf + 1.0)).sqrt() * prev;
        prev = cur;
        cur = next;
    }
    // p_k' = sqrt(2k) p_{k-1}
    (cur, (2.0 * k as f64).sqrt() * prev, christoffel)
}

/// Per-subject adaptive centre and scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveState {
    pub mode: f64,
    pub scale: f64,
}

impl AdaptiveState {
    pub fn new(mode: f64, scale: f64) -> Result<Self> {
        if !mode.is_finite() || !(scale.is_finite() && scale > 0.0) {
            return Err(Error::Adaptation(format!("invalid state (mode {mode}, scale {scale})")));
        }
        Ok(Self { mode, scale })
    }
}

/// A log-integrand `log h(v)`.
pub trait LogIntegrand {
    fn log_value(&self, v: f64) -> Result<f64>;

    /// `(log h, d log h / dv, d^2 log h / dv^2)`. The default uses central
    /// differences with step `step`.
    fn log_value_derivs(&self, v: f64, step: f64) -> Result<(f64, f64, f64)> {
        let f0 = self.log_value(v)?;
        let fp = self.log_value(v + step)?;
        let fm = self.log_value(v - step)?;
        Ok((f0, (fp - fm) / (2.0 * step), (fp - 2.0 * f0 + fm) / (step * step)))
    }

    /// Whether [`log_value_derivs`](Self::log_value_derivs) is exact.
    fn analytic_derivs(&self) -> bool {
        false
    }
}

impl<F: Fn(f64) -> f64> LogIntegrand for F {
    fn log_value(&self, v: f64) -> Result<f64> {
        Ok(self(v))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdaptOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub scale_floor: f64,
}

impl Default for AdaptOptions {
    fn default() -> Self {
        Self { tol: 1e-8, max_iter: 50, scale_floor: DEFAULT_SCALE_FLOOR }
    }
}

/// Locate the mode of `log h` by safeguarded Newton from `init` and return
/// the adaptive centre and scale.
pub fn adapt<H: LogIntegrand + ?Sized>(h: &H, init: f64, opts: &AdaptOptions) -> Result<AdaptiveState> {
    let analytic = h.analytic_derivs();
    let mut v = if init.is_finite() { init } else { 0.0 };
    let mut step_fd = 1e-3;
    let (mut f, mut g, mut curv) = h.log_value_derivs(v, step_fd)?;
    if !f.is_finite() {
        // Retry from the origin before giving up.
        v = 0.0;
        (f, g, curv) = h.log_value_derivs(v, step_fd)?;
        if !f.is_finite() {
            return Err(Error::Adaptation(format!("log-integrand not finite at start ({f})")));
        }
    }
    let mut converged = false;
    for _ in 0..opts.max_iter {
        let mut delta = if curv < 0.0 && curv.is_finite() { -g / curv } else { g.signum() * g.abs().min(1.0) };
        if !delta.is_finite() {
            return Err(Error::Adaptation("non-finite Newton step".into()));
        }
        delta = delta.clamp(-5.0, 5.0);
        let mut accepted = false;
        for _ in 0..40 {
            let cand = v + delta;
            let fc = h.log_value(cand)?;
            if fc.is_finite() && fc >= f - 1e-12 * f.abs().max(1.0) {
                v = cand;
                accepted = true;
                break;
            }
            delta *= 0.5;
        }
        if v.abs() > MODE_ESCAPE {
            return Err(Error::Adaptation(format!("mode escaped to {v}")));
        }
        if !analytic && curv < 0.0 {
            step_fd = (1e-2 * (-1.0 / curv).sqrt()).clamp(1e-6, 1e-2);
        }
        (f, g, curv) = h.log_value_derivs(v, step_fd)?;
        if !accepted || delta.abs() < opts.tol {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::Adaptation(format!("Newton did not converge in {} iterations", opts.max_iter)));
    }
    if !curv.is_finite() || curv >= 0.0 {
        return Err(Error::Adaptation(format!("non-negative or non-finite curvature {curv} at mode {v}")));
    }
    let scale = (-1.0 / curv).sqrt().max(opts.scale_floor);
    AdaptiveState::new(v, scale)
}

/// `log int h(v) dv` by the adaptive rule.
pub fn aghq_log_integral<H: LogIntegrand + ?Sized>(h: &H, rule: &QuadratureRule, state: &AdaptiveState) -> Result<f64> {
    let spread = state.scale * SQRT_2;
    let mut terms = [0.0f64; MAX_NODES];
    let mut max = f64::NEG_INFINITY;
    for (r, (&u, &lf)) in rule.nodes.iter().zip(&rule.log_factors).enumerate() {
        let lh = h.log_value(state.mode + spread * u)?;
        if lh.is_nan() {
            return Err(Error::Integration(format!("NaN integrand at node {r}")));
        }
        let t = lf + lh;
        terms[r] = t;
        max = max.max(t);
    }
    if max == f64::NEG_INFINITY {
        return Err(Error::Integration("integrand is zero at every node".into()));
    }
    let s: f64 = terms[..rule.len()].iter().map(|t| (t - max).exp()).sum();
    Ok(spread.ln() + max + s.ln())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::special::normal_log_density;
    use approx::assert_relative_eq;

    #[test]
    fn one_and_two_node_rules() {
        let r1 = gh_rule(1).unwrap();
        assert_eq!(r1.nodes(), &[0.0]);
        assert_relative_eq!(r1.weights()[0], PI.sqrt(), max_relative = 1e-15);
        let r2 = gh_rule(2).unwrap();
        assert_relative_eq!(r2.nodes()[1], 1.0 / SQRT_2, max_relative = 1e-14);
        assert_relative_eq!(r2.nodes()[0], -1.0 / SQRT_2, max_relative = 1e-14);
        assert_relative_eq!(r2.weights()[0], PI.sqrt() / 2.0, max_relative = 1e-14);
    }

    #[test]
    fn out_of_range_rejected() {
        assert!(gh_rule(0).is_err());
        assert!(gh_rule(101).is_err());
        assert!(gh_rule(100).is_ok());
    }

    #[test]
    fn fourth_moment_with_ten_nodes() {
        let r = gh_rule(10).unwrap();
        assert_relative_eq!(r.integrate(|v| v.powi(4)), 0.75 * PI.sqrt(), max_relative = 1e-10);
    }

    #[test]
    fn weights_sum_and_symmetry() {
        for k in [1, 2, 3, 7, 20, 50, 100] {
            let r = gh_rule(k).unwrap();
            let s: f64 = r.weights().iter().sum();
            assert!((s - PI.sqrt()).abs() < 1e-12, "k={k}: {s}");
            for i in 0..k {
                assert_eq!(r.nodes()[i], -r.nodes()[k - 1 - i]);
                assert_eq!(r.weights()[i], r.weights()[k - 1 - i]);
                assert!(r.weights()[i] > 0.0);
            }
        }
    }

    #[test]
    fn gaussian_mode_and_scale() {
        let h = |v: f64| normal_log_density(v, 1.5, 0.25);
        let st = adapt(&h, 0.0, &AdaptOptions::default()).unwrap();
        assert!((st.mode - 1.5).abs() < 1e-6);
        assert!((st.scale - 0.5).abs() < 1e-6);
        let h0 = |v: f64| normal_log_density(v, 0.0, 3.0);
        let st0 = adapt(&h0, 0.7, &AdaptOptions::default()).unwrap();
        assert!(st0.mode.abs() < 1e-8);
    }

    #[test]
    fn escaping_mode_is_an_error() {
        let h = |v: f64| v; // unbounded increase
        assert!(matches!(adapt(&h, 0.0, &AdaptOptions::default()), Err(Error::Adaptation(_))));
    }

    #[test]
    fn gaussian_integrates_to_one_for_every_rule() {
        for &var in &[0.3, 1.0, 2.0] {
            let h = |v: f64| normal_log_density(v, 0.0, var);
            let st = adapt(&h, 0.4, &AdaptOptions::default()).unwrap();
            for k in [1, 2, 3, 5, 10, 25] {
                let r = gh_rule(k).unwrap();
                let li = aghq_log_integral(&h, &r, &st).unwrap();
                assert!(li.abs() < 1e-10, "var={var} k={k}: {li}");
            }
        }
    }

    #[test]
    fn all_zero_integrand_is_an_error() {
        let r = gh_rule(3).unwrap();
        let st = AdaptiveState::new(0.0, 1.0).unwrap();
        let h = |_v: f64| f64::NEG_INFINITY;
        assert!(matches!(aghq_log_integral(&h, &r, &st), Err(Error::Integration(_))));
    }
}
