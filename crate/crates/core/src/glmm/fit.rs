use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::distribution::{POWER_GRID, POWER_MIN};
use crate::error::{Error, Result};
use crate::optim::{bfgs, fd_step, nelder_mead, numeric_hessian, BfgsOptions, NelderMeadOptions, Objective, OptimOutcome};
use crate::quadrature::{gh_rule, AdaptiveState, QuadratureRule, MAX_NODES};

use super::data::LongitudinalDataset;
use super::glm::poisson_irls;
use super::likelihood::{conditional_loglik, marginal_loglik, posterior_modes};
use super::{ModelKind, ThetaFull};

/// Starting variances below this drop the random intercept.
pub const SIGMA2_COLLAPSE: f64 = 1e-3;

// Box on the unconstrained scale. Beyond it the likelihood is flat to
// working precision.
const LOG_DELTA_RANGE: (f64, f64) = (-20.0, 15.0);
const LOG_ONE_MINUS_A_RANGE: (f64, f64) = (-20.0, 3.931_825_632_724_325); // ln 51, i.e. a >= -50
const LOG_SIGMA2_RANGE: (f64, f64) = (-30.0, 10.0);

const DISPERSION_START_RANGE: (f64, f64) = (1.0 + 1e-3, 1e3);

/// How the first optimizer point is chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub enum StartStrategy {
    /// Coefficients, variance and dispersion from a budgeted NB-GLMM fit,
    /// power by profiling.
    #[default]
    Default,
    /// As `Default`, but the dispersion is the Pearson moment estimate given
    /// the NB-GLMM random-effect predictions.
    Moments,
    /// Coefficients, variance and dispersion from a fully converged NB-GLMM,
    /// power by profiling.
    NbGlmm,
    Given(ThetaFull),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    /// Gauss-Hermite nodes per subject; 1 is the Laplace approximation.
    pub quad_points: usize,
    pub max_iter: usize,
    /// Relative convergence tolerance of the optimizers.
    pub tol: f64,
    /// Re-adapt the quadrature at the first evaluation of every `freeze`-th
    /// optimizer iteration; 0 re-adapts at every evaluation.
    pub freeze: usize,
    pub start: StartStrategy,
    pub sigma2_collapse: f64,
    /// Likelihood evaluations allowed for each warm-start fit.
    pub warm_start_budget: usize,
    pub bfgs_max_iter: usize,
    /// Cap on likelihood evaluations of the main optimizer.
    pub max_evals: Option<usize>,
    pub keep_trace: bool,
    /// Compute the observed information and covariance.
    pub information: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            quad_points: 5,
            max_iter: 2000,
            tol: 1e-8,
            freeze: 0,
            start: StartStrategy::Default,
            sigma2_collapse: SIGMA2_COLLAPSE,
            warm_start_budget: 500,
            bfgs_max_iter: 200,
            max_evals: None,
            keep_trace: false,
            information: true,
        }
    }
}

impl FitOptions {
    pub fn validate(&self) -> Result<()> {
        if !(1..=MAX_NODES).contains(&self.quad_points) {
            return Err(Error::Domain(format!("quadrature points must lie in 1..={MAX_NODES}")));
        }
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return Err(Error::Domain(format!("tolerance must be positive, got {}", self.tol)));
        }
        if self.max_iter == 0 {
            return Err(Error::Domain("max_iter must be at least 1".into()));
        }
        if !(self.sigma2_collapse >= 0.0) {
            return Err(Error::Domain("collapse threshold must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StartSource {
    NbGlmm,
    PoissonGlmm,
    Moments,
    Fallback,
    Given,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StartValues {
    pub theta: ThetaFull,
    pub source: StartSource,
    /// Both warm-start fits failed.
    pub flagged: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VcovStatus {
    Available,
    /// Available after adding a ridge to an indefinite information matrix.
    RidgeRepaired,
    /// Estimate too close to a parameter bound.
    Boundary,
    Singular,
    NotComputed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub model: ModelKind,
    pub theta: ThetaFull,
    pub loglik: f64,
    pub coef_names: Vec<String>,
    /// Names of the free parameters on the natural scale, in `vcov` order.
    pub param_names: Vec<String>,
    pub vcov: Option<Vec<Vec<f64>>>,
    pub vcov_status: VcovStatus,
    pub converged: bool,
    pub optimizer: String,
    pub message: String,
    pub iterations: usize,
    pub n_loglik_evals: usize,
    pub quad_points: usize,
    pub start: ThetaFull,
    pub start_source: StartSource,
    pub start_loglik: f64,
    pub blup: Option<Vec<f64>>,
    pub optimizer_trace: Option<Vec<f64>>,
    pub warnings: Vec<String>,
}

impl FitResult {
    pub fn n_params(&self) -> usize {
        self.param_names.len()
    }

    pub fn vcov_matrix(&self) -> Option<DMatrix<f64>> {
        let v = self.vcov.as_ref()?;
        let n = v.len();
        Some(DMatrix::from_fn(n, n, |i, j| v[i][j]))
    }

    /// Covariance block of the regression coefficients.
    pub fn beta_vcov(&self) -> Option<DMatrix<f64>> {
        let p = self.theta.beta.len();
        self.vcov_matrix().map(|m| m.view((0, 0), (p, p)).into_owned())
    }

    pub fn std_errors(&self) -> Option<Vec<f64>> {
        let m = self.vcov_matrix()?;
        Some((0..m.nrows()).map(|i| m[(i, i)].max(0.0).sqrt()).collect())
    }
}

/// Observed information on the natural scale.
#[derive(Debug, Clone, PartialEq)]
pub struct Information {
    pub matrix: DMatrix<f64>,
    /// Ridge added to restore positive definiteness, if any.
    pub ridge: Option<f64>,
}

#[derive(Debug, Clone, Copy)]
struct Layout {
    kind: ModelKind,
    p: usize,
}

impl Layout {
    fn pack(&self, t: &ThetaFull) -> Vec<f64> {
        let mut x = t.beta.clone();
        if self.kind.free_dispersion() {
            x.push((t.dispersion - 1.0).max(1e-300).ln().clamp(LOG_DELTA_RANGE.0, LOG_DELTA_RANGE.1));
        }
        if self.kind.free_power() {
            x.push((1.0 - t.power).max(1e-300).ln().clamp(LOG_ONE_MINUS_A_RANGE.0, LOG_ONE_MINUS_A_RANGE.1));
        }
        if self.kind.has_random_intercept() {
            x.push(t.sigma2.max(1e-300).ln().clamp(LOG_SIGMA2_RANGE.0, LOG_SIGMA2_RANGE.1));
        }
        x
    }

    fn unpack(&self, x: &[f64]) -> ThetaFull {
        let mut k = self.p;
        let mut next = |range: (f64, f64)| {
            let v = x[k].clamp(range.0, range.1);
            k += 1;
            v.exp()
        };
        let dispersion = if self.kind.free_dispersion() { 1.0 + next(LOG_DELTA_RANGE) } else { 1.0 };
        let power = if self.kind.free_power() {
            (1.0 - next(LOG_ONE_MINUS_A_RANGE)).max(POWER_MIN)
        } else if self.kind == ModelKind::PoissonGlmm {
            1.0
        } else {
            0.0
        };
        let sigma2 = if self.kind.has_random_intercept() { next(LOG_SIGMA2_RANGE) } else { 0.0 };
        ThetaFull { beta: x[..self.p].to_vec(), dispersion, power, sigma2 }
    }

    fn natural(&self, t: &ThetaFull) -> Vec<f64> {
        let mut v = t.beta.clone();
        if self.kind.free_dispersion() {
            v.push(t.dispersion);
        }
        if self.kind.free_power() {
            v.push(t.power);
        }
        if self.kind.has_random_intercept() {
            v.push(t.sigma2);
        }
        v
    }

    fn from_natural(&self, v: &[f64]) -> ThetaFull {
        let mut k = self.p;
        let mut next = || {
            k += 1;
            v[k - 1]
        };
        let dispersion = if self.kind.free_dispersion() { next() } else { 1.0 };
        let power = if self.kind.free_power() {
            next()
        } else if self.kind == ModelKind::PoissonGlmm {
            1.0
        } else {
            0.0
        };
        let sigma2 = if self.kind.has_random_intercept() { next() } else { 0.0 };
        ThetaFull { beta: v[..self.p].to_vec(), dispersion, power, sigma2 }
    }

    fn names(&self, coef_names: &[String]) -> Vec<String> {
        let mut n = coef_names.to_vec();
        if self.kind.free_dispersion() {
            n.push("D".into());
        }
        if self.kind.free_power() {
            n.push("a".into());
        }
        if self.kind.has_random_intercept() {
            n.push("sigma2".into());
        }
        n
    }

    /// Whether any free parameter sits within one difference step of a bound.
    fn near_boundary(&self, t: &ThetaFull) -> bool {
        (self.kind.free_dispersion() && t.dispersion - 1.0 <= fd_step(t.dispersion))
            || (self.kind.free_power() && (1.0 - t.power <= fd_step(t.power) || t.power - POWER_MIN <= fd_step(t.power)))
            || (self.kind.has_random_intercept() && t.sigma2 <= fd_step(t.sigma2))
    }
}

/// Log-likelihood evaluator that owns the quadrature states of one fit.
struct Evaluator<'a> {
    data: &'a LongitudinalDataset,
    kind: ModelKind,
    rule: QuadratureRule,
    states: Vec<AdaptiveState>,
    evals: usize,
}

impl<'a> Evaluator<'a> {
    fn new(data: &'a LongitudinalDataset, kind: ModelKind, quad_points: usize) -> Result<Self> {
        Ok(Self { data, kind, rule: gh_rule(quad_points)?, states: Vec::new(), evals: 0 })
    }

    fn loglik(&mut self, theta: &ThetaFull, refresh: bool) -> Result<f64> {
        self.evals += 1;
        if self.kind.has_random_intercept() {
            marginal_loglik(theta, self.data, &self.rule, &mut self.states, refresh)
        } else {
            conditional_loglik(theta, self.data)
        }
    }
}

struct FitObjective<'e, 'a> {
    ev: &'e mut Evaluator<'a>,
    layout: Layout,
    freeze: usize,
    refresh_pending: bool,
    best: f64,
    trace: Option<Vec<f64>>,
}

impl Objective for FitObjective<'_, '_> {
    fn eval(&mut self, x: &[f64]) -> f64 {
        let theta = self.layout.unpack(x);
        match self.ev.loglik(&theta, self.freeze == 0 || self.refresh_pending) {
            Ok(ll) if ll.is_finite() => {
                self.refresh_pending = false;
                self.best = self.best.max(ll);
                -ll
            }
            _ => f64::INFINITY,
        }
    }

    fn on_iteration(&mut self, iteration: usize) {
        if self.freeze > 0 && iteration % self.freeze == 0 {
            self.refresh_pending = true;
        }
        if let Some(t) = self.trace.as_mut() {
            t.push(self.best);
        }
    }
}

fn check_response(data: &LongitudinalDataset) -> Result<()> {
    if data.y().iter().all(|&y| y == 0) {
        return Err(Error::DegenerateResponse("all counts are zero".into()));
    }
    Ok(())
}

/// Fit `kind` to `data`.
///
/// Optimization failure is not an error: the result then carries
/// `converged = false` and the best point found.
pub fn fit_model(data: &LongitudinalDataset, kind: ModelKind, opts: &FitOptions) -> Result<FitResult> {
    opts.validate()?;
    check_response(data)?;
    let start = match &opts.start {
        StartStrategy::Given(t) => {
            t.validate(data.n_coef())?;
            StartValues { theta: t.clone(), source: StartSource::Given, flagged: false }
        }
        _ => starting_values(data, kind, opts)?,
    };
    let mut warnings = Vec::new();
    if start.flagged {
        warnings.push("warm-start fits failed; using flat starting values".to_string());
    }
    let mut kind_eff = kind;
    if kind.has_random_intercept() && start.theta.sigma2 < opts.sigma2_collapse {
        if let Some(k) = kind.without_random_intercept() {
            warnings.push(format!(
                "starting variance {:.3e} below {:.0e}; random intercept dropped",
                start.theta.sigma2, opts.sigma2_collapse
            ));
            kind_eff = k;
        }
    }
    optimize(data, kind_eff, start, opts, warnings)
}

pub fn fit_ptmixed(data: &LongitudinalDataset, opts: &FitOptions) -> Result<FitResult> {
    fit_model(data, ModelKind::PtGlmm, opts)
}

pub fn fit_nbmixed(data: &LongitudinalDataset, opts: &FitOptions) -> Result<FitResult> {
    fit_model(data, ModelKind::NbGlmm, opts)
}

pub fn fit_ptglm(data: &LongitudinalDataset, opts: &FitOptions) -> Result<FitResult> {
    fit_model(data, ModelKind::PtGlm, opts)
}

pub fn fit_nbglm(data: &LongitudinalDataset, opts: &FitOptions) -> Result<FitResult> {
    fit_model(data, ModelKind::NbGlm, opts)
}

pub fn fit_poisson_glmm(data: &LongitudinalDataset, opts: &FitOptions) -> Result<FitResult> {
    fit_model(data, ModelKind::PoissonGlmm, opts)
}

fn optimize(
    data: &LongitudinalDataset,
    kind: ModelKind,
    start: StartValues,
    opts: &FitOptions,
    mut warnings: Vec<String>,
) -> Result<FitResult> {
    let layout = Layout { kind, p: data.n_coef() };
    let x0 = layout.pack(&start.theta);
    let theta0 = layout.unpack(&x0);
    let mut ev = Evaluator::new(data, kind, opts.quad_points)?;
    let start_loglik = ev.loglik(&theta0, true).unwrap_or(f64::NEG_INFINITY);

    let mut obj = FitObjective {
        ev: &mut ev,
        layout,
        freeze: opts.freeze,
        refresh_pending: true,
        best: start_loglik,
        trace: opts.keep_trace.then(Vec::new),
    };
    let nm_opts = NelderMeadOptions {
        max_iter: opts.max_iter,
        max_evals: opts.max_evals.unwrap_or(usize::MAX),
        ftol: opts.tol,
        ..NelderMeadOptions::default()
    };
    let nm = nelder_mead(&mut obj, &x0, &nm_opts);
    let budget_limited = opts.max_evals.is_some_and(|m| nm.evaluations >= m);
    let (outcome, optimizer): (OptimOutcome, &str) = if nm.converged || budget_limited || !nm.value.is_finite() {
        (nm, "nelder-mead")
    } else {
        let bf_opts = BfgsOptions { max_iter: opts.bfgs_max_iter.min(opts.max_iter), ftol: opts.tol, ..BfgsOptions::default() };
        obj.refresh_pending = true;
        let bf = bfgs(&mut obj, &nm.x, &bf_opts);
        let converged = bf.converged;
        let mut best = if bf.value <= nm.value { bf.clone() } else { nm.clone() };
        best.converged = converged;
        best.iterations = nm.iterations + bf.iterations;
        best.evaluations = nm.evaluations + bf.evaluations;
        best.message = format!("nelder-mead: {}; bfgs: {}", nm.message, bf.message);
        (best, "nelder-mead+bfgs")
    };
    let trace = obj.trace.take();

    let mut theta_hat = layout.unpack(&outcome.x);
    let mut loglik = ev.loglik(&theta_hat, true).unwrap_or(f64::NEG_INFINITY);
    if !(loglik >= start_loglik) {
        // Re-adapted value at the optimum fell below the start: keep the start.
        if start_loglik.is_finite() {
            theta_hat = theta0.clone();
            loglik = ev.loglik(&theta_hat, true)?;
        }
    }
    let converged = outcome.converged && loglik.is_finite();
    if !converged {
        warnings.push(format!("optimizer did not converge: {}", outcome.message));
    }
    let blup = if kind.has_random_intercept() && loglik.is_finite() {
        Some(ev.states.iter().map(|s| s.mode).collect())
    } else {
        None
    };

    let (vcov, vcov_status) = if !opts.information || !loglik.is_finite() {
        (None, VcovStatus::NotComputed)
    } else if layout.near_boundary(&theta_hat) {
        (None, VcovStatus::Boundary)
    } else {
        match observed_information(&theta_hat, data, kind, opts.quad_points) {
            Ok(info) => match invert_spd(&info.matrix) {
                Some(v) => {
                    if let Some(r) = info.ridge {
                        warnings.push(format!("information matrix not positive definite; ridge {r:.3e} added"));
                    }
                    let status = if info.ridge.is_some() { VcovStatus::RidgeRepaired } else { VcovStatus::Available };
                    (Some(to_rows(&v)), status)
                }
                None => (None, VcovStatus::Singular),
            },
            Err(e) => {
                warnings.push(format!("observed information failed: {e}"));
                (None, VcovStatus::Singular)
            }
        }
    };

    Ok(FitResult {
        model: kind,
        theta: theta_hat,
        loglik,
        coef_names: data.coef_names().to_vec(),
        param_names: layout.names(data.coef_names()),
        vcov,
        vcov_status,
        converged,
        optimizer: optimizer.to_string(),
        message: outcome.message,
        iterations: outcome.iterations,
        n_loglik_evals: ev.evals,
        quad_points: opts.quad_points,
        start: theta0,
        start_source: start.source,
        start_loglik,
        blup,
        optimizer_trace: trace,
        warnings,
    })
}

fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect()).collect()
}

fn invert_spd(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let inv = m.clone().cholesky()?.inverse();
    if inv.iter().all(|v| v.is_finite()) {
        Some((&inv + inv.transpose()) * 0.5)
    } else {
        None
    }
}

/// Negative Hessian of the log-likelihood at `theta` on the natural scale
/// `(beta, D, a, sigma2)` restricted to the free parameters of `kind`, by
/// central differences with steps `max(1e-4, 1e-4 |theta_j|)`.
///
/// An indefinite result is repaired by adding `(|lambda_min| + 1e-8) I`.
pub fn observed_information(
    theta: &ThetaFull,
    data: &LongitudinalDataset,
    kind: ModelKind,
    quad_points: usize,
) -> Result<Information> {
    let layout = Layout { kind, p: data.n_coef() };
    let mut ev = Evaluator::new(data, kind, quad_points)?;
    ev.loglik(theta, true)?;
    let base_states = ev.states.clone();
    let centre = layout.natural(theta);
    let steps: Vec<f64> = centre.iter().map(|&v| fd_step(v)).collect();
    let mut failure = None;
    let mut neg_loglik = |v: &[f64]| -> f64 {
        let t = layout.from_natural(v);
        ev.states.clone_from(&base_states);
        match ev.loglik(&t, true) {
            Ok(ll) => -ll,
            Err(e) => {
                failure.get_or_insert(e);
                f64::NAN
            }
        }
    };
    let h = numeric_hessian(&mut neg_loglik, &centre, &steps);
    if let Some(e) = failure {
        return Err(e);
    }
    let sym = (&h + h.transpose()) * 0.5;
    if sym.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("non-finite information matrix".into()));
    }
    let min_eig = SymmetricEigen::new(sym.clone()).eigenvalues.min();
    if min_eig > 0.0 {
        return Ok(Information { matrix: sym, ridge: None });
    }
    let ridge = min_eig.abs() + 1e-8;
    let n = sym.nrows();
    Ok(Information { matrix: sym + DMatrix::identity(n, n) * ridge, ridge: Some(ridge) })
}

/// Posterior modes of the random intercepts at the fitted parameters.
pub fn ranef_blup(fit: &FitResult, data: &LongitudinalDataset) -> Result<Vec<f64>> {
    if !fit.model.has_random_intercept() {
        return Err(Error::NotApplicable(format!("{} has no random effects", fit.model)));
    }
    posterior_modes(&fit.theta, data)
}

// Flat coefficients: log mean rate for the intercept, zeros elsewhere.
fn flat_beta(data: &LongitudinalDataset) -> Vec<f64> {
    let n = data.n_obs() as f64;
    let mean_y = data.y().iter().map(|&y| y as f64).sum::<f64>() / n;
    let mean_off = data.offset().iter().sum::<f64>() / n;
    let mut b = vec![0.0; data.n_coef()];
    b[0] = (mean_y.max(1e-3)).ln() - mean_off;
    b
}

struct MomentGuess {
    dispersion: f64,
    sigma2: f64,
}

// Crude moment guesses for D and sigma2 around a Poisson fit: subject-level
// log ratios of observed to fitted totals give sigma2 after removing their
// sampling noise; Pearson residuals given those ratios give D.
fn moment_guess(data: &LongitudinalDataset, beta: &[f64]) -> MomentGuess {
    let eta = data.linear_predictor(beta);
    let mu: Vec<f64> = eta.iter().map(|e| e.exp()).collect();
    let y = data.y();
    let n = data.n_subjects();
    let mut ratios = Vec::with_capacity(n);
    let mut fitted = Vec::with_capacity(n);
    let mut pearson = 0.0;
    for obs in data.subject_obs() {
        let s: f64 = obs.iter().map(|&i| y[i] as f64).sum();
        let m: f64 = obs.iter().map(|&i| mu[i]).sum();
        let scale = (s + 0.5) / (m + 0.5);
        for &i in obs {
            let mt = mu[i] * scale;
            pearson += (y[i] as f64 - mt).powi(2) / mt;
        }
        ratios.push(scale.ln());
        fitted.push(m + 0.5);
    }
    let dof = (data.n_obs() as f64 - data.n_coef() as f64 - n as f64 + 1.0).max(1.0);
    let dispersion = (pearson / dof).clamp(1.05, 100.0);
    let sigma2 = if n >= 2 {
        let mean = ratios.iter().sum::<f64>() / n as f64;
        let var = ratios.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
        let noise = fitted.iter().map(|m| dispersion / m).sum::<f64>() / n as f64;
        (var - noise).clamp(0.01, 5.0)
    } else {
        0.1
    };
    MomentGuess { dispersion, sigma2 }
}

/// Pearson dispersion `sum (y - mu)^2 / mu / (N - p)` given log-means.
fn pearson_dispersion(data: &LongitudinalDataset, eta: &[f64]) -> f64 {
    let dof = (data.n_obs() as f64 - data.n_coef() as f64).max(1.0);
    let x2: f64 = data
        .y()
        .iter()
        .zip(eta)
        .map(|(&y, &e)| {
            let m = e.exp();
            (y as f64 - m).powi(2) / m
        })
        .sum();
    (x2 / dof).clamp(DISPERSION_START_RANGE.0, DISPERSION_START_RANGE.1)
}

fn profile_power(data: &LongitudinalDataset, base: &ThetaFull, mixed: bool, quad_points: usize) -> Result<f64> {
    let rule = gh_rule(quad_points)?;
    let mut states = Vec::new();
    let mut best = (f64::NEG_INFINITY, 0.0);
    for &a in POWER_GRID.iter() {
        let t = ThetaFull { power: a, ..base.clone() };
        let ll = if mixed {
            marginal_loglik(&t, data, &rule, &mut states, true)
        } else {
            conditional_loglik(&t, data)
        };
        if let Ok(ll) = ll {
            if ll > best.0 {
                best = (ll, a);
            }
        }
    }
    Ok(best.1)
}

fn warm_start_fit(data: &LongitudinalDataset, kind: ModelKind, theta: ThetaFull, opts: &FitOptions, budget: Option<usize>) -> Option<FitResult> {
    let sub = FitOptions {
        start: StartStrategy::Given(theta.clone()),
        sigma2_collapse: 0.0,
        max_evals: budget,
        keep_trace: false,
        information: false,
        ..opts.clone()
    };
    let start = StartValues { theta, source: StartSource::Moments, flagged: false };
    optimize(data, kind, start, &sub, Vec::new()).ok().filter(|f| f.loglik.is_finite())
}

/// Starting values for fitting `kind`.
///
/// For the PT mixed model the coefficients and variance come from an NB
/// mixed fit (or a Poisson mixed fit when that fails), the dispersion from
/// that fit or a Pearson moment estimate, and the power from profiling the
/// likelihood over [`POWER_GRID`].
pub fn starting_values(data: &LongitudinalDataset, kind: ModelKind, opts: &FitOptions) -> Result<StartValues> {
    check_response(data)?;
    if let StartStrategy::Given(t) = &opts.start {
        t.validate(data.n_coef())?;
        return Ok(StartValues { theta: t.clone(), source: StartSource::Given, flagged: false });
    }
    let beta_p = poisson_irls(data).unwrap_or_else(|_| flat_beta(data));
    let guess = moment_guess(data, &beta_p);
    let moments = |beta: Vec<f64>, dispersion: f64, power: f64, sigma2: f64| StartValues {
        theta: ThetaFull { beta, dispersion, power, sigma2 },
        source: StartSource::Moments,
        flagged: false,
    };
    match kind {
        ModelKind::PtGlm | ModelKind::NbGlm => {
            let d0 = pearson_dispersion(data, &data.linear_predictor(&beta_p));
            let mut t = ThetaFull { beta: beta_p, dispersion: d0, power: 0.0, sigma2: 0.0 };
            if kind == ModelKind::PtGlm {
                t.power = profile_power(data, &t, false, 1)?;
            }
            Ok(StartValues { theta: t, source: StartSource::Moments, flagged: false })
        }
        ModelKind::PoissonGlmm => Ok(moments(beta_p, 1.0, 1.0, guess.sigma2)),
        ModelKind::NbGlmm => Ok(moments(beta_p, guess.dispersion, 0.0, guess.sigma2)),
        ModelKind::PtGlmm => {
            let nb_start = ThetaFull { beta: beta_p.clone(), dispersion: guess.dispersion, power: 0.0, sigma2: guess.sigma2 };
            let budget = match opts.start {
                StartStrategy::NbGlmm => None,
                _ => Some(opts.warm_start_budget),
            };
            let (base, source) = if let Some(f) = warm_start_fit(data, ModelKind::NbGlmm, nb_start, opts, budget) {
                (f.theta, StartSource::NbGlmm)
            } else {
                let pois_start = ThetaFull { beta: beta_p, dispersion: 1.0, power: 1.0, sigma2: guess.sigma2 };
                match warm_start_fit(data, ModelKind::PoissonGlmm, pois_start, opts, Some(opts.warm_start_budget)) {
                    Some(f) => (ThetaFull { dispersion: guess.dispersion, power: 0.0, ..f.theta }, StartSource::PoissonGlmm),
                    None => {
                        let eta = data.linear_predictor(&flat_beta(data));
                        let theta = ThetaFull {
                            beta: flat_beta(data),
                            dispersion: pearson_dispersion(data, &eta),
                            power: 0.0,
                            sigma2: 0.1,
                        };
                        return Ok(StartValues { theta, source: StartSource::Fallback, flagged: true });
                    }
                }
            };
            let mut theta = base;
            if opts.start == StartStrategy::Moments {
                let modes = posterior_modes(&theta, data)?;
                let eta: Vec<f64> = data
                    .linear_predictor(&theta.beta)
                    .iter()
                    .zip(data.subject())
                    .map(|(e, &s)| e + modes[s])
                    .collect();
                theta.dispersion = pearson_dispersion(data, &eta);
            }
            theta.dispersion = theta.dispersion.clamp(DISPERSION_START_RANGE.0, DISPERSION_START_RANGE.1);
            let mixed = theta.sigma2 >= opts.sigma2_collapse;
            theta.power = profile_power(data, &theta, mixed, opts.quad_points)?;
            Ok(StartValues { theta, source, flagged: false })
        }
    }
}
