use std::cell::RefCell;

use crate::distribution::PtKernel;
use crate::error::{Error, Result};
use crate::quadrature::{adapt, aghq_log_integral, AdaptOptions, AdaptiveState, LogIntegrand, QuadratureRule};
use crate::special::normal_log_density;

use super::data::LongitudinalDataset;
use super::ThetaFull;

/// Kernel for `theta`'s shape with tables covering the data.
pub(crate) fn prepared_kernel(theta: &ThetaFull, data: &LongitudinalDataset, derivatives: bool) -> Result<PtKernel> {
    let mut kernel = PtKernel::new(theta.dispersion, theta.power)?;
    let max_y = data.max_count() as usize;
    if derivatives {
        kernel.reserve_derivatives(max_y);
    } else {
        kernel.reserve(max_y);
    }
    Ok(kernel)
}

// Means that overflow make the observation impossible rather than an error,
// so trial points far in the tail are simply rejected.
#[inline]
fn log_pmf_at(kernel: &PtKernel, y: u64, eta: f64, scratch: &mut Vec<f64>) -> Result<f64> {
    let mu = eta.exp();
    if !mu.is_finite() {
        return Ok(f64::NEG_INFINITY);
    }
    kernel.log_pmf_prepared(y, mu.max(f64::MIN_POSITIVE), scratch)
}

/// `log h(v) = log N(v; 0, sigma2) + sum_j log p(y_j | exp(eta_j + v))` for
/// one subject.
pub struct SubjectIntegrand<'a> {
    pub(crate) subject: usize,
    pub(crate) obs: &'a [usize],
    pub(crate) y: &'a [u64],
    pub(crate) eta: &'a [f64],
    pub(crate) sigma2: f64,
    pub(crate) kernel: &'a PtKernel,
    pub(crate) scratch: &'a RefCell<Vec<f64>>,
}

impl SubjectIntegrand<'_> {
    fn annotate(&self, observation: usize, source: Error) -> Error {
        Error::Likelihood { subject: self.subject, observation, source: Box::new(source) }
    }
}

impl LogIntegrand for SubjectIntegrand<'_> {
    fn log_value(&self, v: f64) -> Result<f64> {
        let mut scratch = self.scratch.borrow_mut();
        let mut total = normal_log_density(v, 0.0, self.sigma2);
        for &i in self.obs {
            let lp = log_pmf_at(self.kernel, self.y[i], self.eta[i] + v, &mut scratch)
                .map_err(|e| self.annotate(i, e))?;
            total += lp;
        }
        Ok(total)
    }

    fn log_value_derivs(&self, v: f64, _step: f64) -> Result<(f64, f64, f64)> {
        let mut scratch = self.scratch.borrow_mut();
        let mut f = normal_log_density(v, 0.0, self.sigma2);
        let mut g = -v / self.sigma2;
        let mut h = -1.0 / self.sigma2;
        for &i in self.obs {
            let mu = (self.eta[i] + v).exp();
            if !mu.is_finite() {
                return Ok((f64::NEG_INFINITY, f64::NAN, f64::NAN));
            }
            let d = self
                .kernel
                .log_pmf_derivs(self.y[i], mu.max(f64::MIN_POSITIVE), &mut scratch)
                .map_err(|e| self.annotate(i, e))?;
            f += d.value;
            g += d.d1;
            h += d.d2;
        }
        Ok((f, g, h))
    }

    fn analytic_derivs(&self) -> bool {
        true
    }
}

/// Scale floor for the adaptive rule, proportional to the prior sd so the
/// rule stays accurate as `sigma2` shrinks.
pub(crate) fn scale_floor(sigma2: f64) -> f64 {
    (1e-3 * sigma2.sqrt()).min(crate::quadrature::DEFAULT_SCALE_FLOOR)
}

/// Marginal log-likelihood of the random-intercept model by adaptive
/// Gauss-Hermite quadrature.
///
/// When `refresh` is set, or `states` does not hold one state per subject,
/// the per-subject modes and scales are recomputed (warm-started from any
/// existing states) and written back to `states`. Otherwise the given
/// states are used as-is.
pub fn marginal_loglik(
    theta: &ThetaFull,
    data: &LongitudinalDataset,
    rule: &QuadratureRule,
    states: &mut Vec<AdaptiveState>,
    refresh: bool,
) -> Result<f64> {
    theta.validate(data.n_coef())?;
    if !(theta.sigma2 > 0.0) {
        return Err(Error::Domain(format!("random-intercept variance must be positive, got {}", theta.sigma2)));
    }
    let kernel = prepared_kernel(theta, data, true)?;
    let eta = data.linear_predictor(&theta.beta);
    let scratch = RefCell::new(Vec::with_capacity(data.max_count() as usize + 1));
    let n = data.n_subjects();
    let refresh = refresh || states.len() != n;
    if states.len() != n {
        states.clear();
    }
    let opts = AdaptOptions { scale_floor: scale_floor(theta.sigma2), ..AdaptOptions::default() };
    let sd = theta.sigma2.sqrt();
    let mut total = 0.0;
    for (i, obs) in data.subject_obs().iter().enumerate() {
        let h = SubjectIntegrand {
            subject: i,
            obs,
            y: data.y(),
            eta: &eta,
            sigma2: theta.sigma2,
            kernel: &kernel,
            scratch: &scratch,
        };
        if refresh {
            let previous = states.get(i).copied();
            let init = previous.map_or(0.0, |s| s.mode);
            let state = match adapt(&h, init, &opts).or_else(|e| match e {
                Error::Adaptation(_) if init != 0.0 => adapt(&h, 0.0, &opts),
                e => Err(e),
            }) {
                Ok(s) => s,
                Err(Error::Adaptation(_)) => match previous {
                    Some(s) => s,
                    None => AdaptiveState::new(0.0, sd.max(opts.scale_floor))?,
                },
                Err(e) => return Err(e),
            };
            if i < states.len() {
                states[i] = state;
            } else {
                states.push(state);
            }
        }
        total += aghq_log_integral(&h, rule, &states[i])?;
    }
    Ok(total)
}

/// Log-likelihood with every random intercept set to zero (the GLM
/// likelihood when `theta` carries no random effect).
pub fn conditional_loglik(theta: &ThetaFull, data: &LongitudinalDataset) -> Result<f64> {
    theta.validate(data.n_coef())?;
    let kernel = prepared_kernel(theta, data, false)?;
    let eta = data.linear_predictor(&theta.beta);
    let mut scratch = Vec::with_capacity(data.max_count() as usize + 1);
    let mut total = 0.0;
    for (i, (&y, &e)) in data.y().iter().zip(&eta).enumerate() {
        let lp = log_pmf_at(&kernel, y, e, &mut scratch)
            .map_err(|err| Error::Likelihood { subject: data.subject()[i], observation: i, source: Box::new(err) })?;
        total += lp;
    }
    Ok(total)
}

/// Posterior modes of the random intercepts at `theta`.
pub fn posterior_modes(theta: &ThetaFull, data: &LongitudinalDataset) -> Result<Vec<f64>> {
    let rule = crate::quadrature::gh_rule(1)?;
    let mut states = Vec::new();
    marginal_loglik(theta, data, &rule, &mut states, true)?;
    Ok(states.iter().map(|s| s.mode).collect())
}
