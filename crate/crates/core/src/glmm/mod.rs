//! Random-intercept Poisson-Tweedie regression for longitudinal counts.
//!
//! For subject `i` and occasion `j`,
//!
//! ```text
//! y_ij | v_i ~ PT(mu_ij, D, a),   log mu_ij = x_ij' beta + v_i + o_ij,   v_i ~ N(0, sigma2)
//! ```
//!
//! The marginal likelihood integrates each `v_i` out by adaptive
//! Gauss-Hermite quadrature. Fits maximize it on the unconstrained scale
//! `(beta, log(D - 1), log(1 - a), log sigma2)`.

mod data;
mod fit;
mod glm;
mod likelihood;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use data::{check_full_rank, LongitudinalDataset};
pub use fit::{
    fit_model, fit_nbglm, fit_nbmixed, fit_poisson_glmm, fit_ptglm, fit_ptmixed, observed_information, ranef_blup,
    starting_values, FitOptions, FitResult, Information, StartSource, StartStrategy, StartValues, VcovStatus,
    SIGMA2_COLLAPSE,
};
pub use glm::poisson_irls;
pub use likelihood::{conditional_loglik, marginal_loglik, posterior_modes, SubjectIntegrand};

/// Full parameter vector of the mixed model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaFull {
    pub beta: Vec<f64>,
    pub dispersion: f64,
    pub power: f64,
    pub sigma2: f64,
}

impl ThetaFull {
    pub fn new(beta: Vec<f64>, dispersion: f64, power: f64, sigma2: f64) -> Result<Self> {
        let t = Self { beta, dispersion, power, sigma2 };
        t.validate(t.beta.len())?;
        Ok(t)
    }

    pub fn validate(&self, n_coef: usize) -> Result<()> {
        if self.beta.len() != n_coef {
            return Err(Error::Domain(format!("expected {} coefficients, got {}", n_coef, self.beta.len())));
        }
        if self.beta.iter().any(|b| !b.is_finite()) {
            return Err(Error::Domain("non-finite coefficient".into()));
        }
        if !(self.dispersion.is_finite() && self.dispersion >= 1.0) {
            return Err(Error::Domain(format!("dispersion must be >= 1, got {}", self.dispersion)));
        }
        if !(self.power.is_finite() && self.power <= 1.0) {
            return Err(Error::Domain(format!("power must be <= 1, got {}", self.power)));
        }
        if !(self.sigma2.is_finite() && self.sigma2 >= 0.0) {
            return Err(Error::Domain(format!("variance must be >= 0, got {}", self.sigma2)));
        }
        Ok(())
    }
}

/// Which model a fit refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(rename = "PT-GLMM")]
    PtGlmm,
    #[serde(rename = "NB-GLMM")]
    NbGlmm,
    #[serde(rename = "PT-GLM")]
    PtGlm,
    #[serde(rename = "NB-GLM")]
    NbGlm,
    #[serde(rename = "Poisson-GLMM")]
    PoissonGlmm,
}

impl ModelKind {
    pub fn tag(self) -> &'static str {
        match self {
            ModelKind::PtGlmm => "PT-GLMM",
            ModelKind::NbGlmm => "NB-GLMM",
            ModelKind::PtGlm => "PT-GLM",
            ModelKind::NbGlm => "NB-GLM",
            ModelKind::PoissonGlmm => "Poisson-GLMM",
        }
    }

    pub fn has_random_intercept(self) -> bool {
        matches!(self, ModelKind::PtGlmm | ModelKind::NbGlmm | ModelKind::PoissonGlmm)
    }

    pub fn free_dispersion(self) -> bool {
        self != ModelKind::PoissonGlmm
    }

    pub fn free_power(self) -> bool {
        matches!(self, ModelKind::PtGlmm | ModelKind::PtGlm)
    }

    /// The same family without the random intercept.
    pub fn without_random_intercept(self) -> Option<ModelKind> {
        match self {
            ModelKind::PtGlmm => Some(ModelKind::PtGlm),
            ModelKind::NbGlmm => Some(ModelKind::NbGlm),
            _ => None,
        }
    }

    /// Number of free parameters for `p` coefficients.
    pub fn n_params(self, p: usize) -> usize {
        p + usize::from(self.free_dispersion()) + usize::from(self.free_power()) + usize::from(self.has_random_intercept())
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.tag())
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pt-glmm" | "ptglmm" | "ptmixed" => Ok(ModelKind::PtGlmm),
            "nb-glmm" | "nbglmm" | "nbmixed" => Ok(ModelKind::NbGlmm),
            "pt-glm" | "ptglm" => Ok(ModelKind::PtGlm),
            "nb-glm" | "nbglm" => Ok(ModelKind::NbGlm),
            "poisson-glmm" | "poissonglmm" => Ok(ModelKind::PoissonGlmm),
            other => Err(Error::Parse(format!("unknown model '{other}'"))),
        }
    }
}
