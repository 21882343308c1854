//! Wald and likelihood-ratio tests on fitted models, and Benjamini-Hochberg
//! adjustment.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::glmm::FitResult;
use crate::special::chi2_sf;

/// Negative LRT statistics down to this value are rounding noise.
pub const LRT_NEGATIVE_TOLERANCE: f64 = 1e-6;
/// Weight on the lower-df component of the boundary mixture.
pub const DEFAULT_BOUNDARY_WEIGHT: f64 = 0.5;

/// `H0: K beta = K b0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisSpec {
    k: DMatrix<f64>,
    b0: DVector<f64>,
}

impl HypothesisSpec {
    /// `b0` defaults to zeros.
    pub fn new(k: DMatrix<f64>, b0: Option<Vec<f64>>) -> Result<Self> {
        let (d, p) = k.shape();
        if d == 0 || p == 0 {
            return Err(Error::Test("contrast matrix is empty".into()));
        }
        if k.iter().any(|v| !v.is_finite()) {
            return Err(Error::Test("contrast matrix has non-finite entries".into()));
        }
        let b0 = match b0 {
            Some(b) if b.len() != p => {
                return Err(Error::Test(format!("target has {} entries for {} coefficients", b.len(), p)));
            }
            Some(b) => DVector::from_vec(b),
            None => DVector::zeros(p),
        };
        if d > p {
            return Err(Error::Test(format!("{d} restrictions on {p} coefficients")));
        }
        let sv = k.clone().svd(false, false).singular_values;
        if sv.min() <= 1e-10 * sv.max() {
            return Err(Error::Test("contrast matrix is not of full row rank".into()));
        }
        Ok(Self { k, b0 })
    }

    /// `beta_j = 0` for each listed coefficient.
    pub fn coefficients(p: usize, which: &[usize]) -> Result<Self> {
        if let Some(&j) = which.iter().find(|&&j| j >= p) {
            return Err(Error::Test(format!("coefficient {j} out of range for {p} coefficients")));
        }
        let mut k = DMatrix::zeros(which.len(), p);
        for (r, &j) in which.iter().enumerate() {
            k[(r, j)] = 1.0;
        }
        Self::new(k, None)
    }

    pub fn k(&self) -> &DMatrix<f64> {
        &self.k
    }

    pub fn b0(&self) -> &DVector<f64> {
        &self.b0
    }

    pub fn restrictions(&self) -> usize {
        self.k.nrows()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TestKind {
    Wald,
    #[serde(rename = "LRT")]
    Lrt,
    #[serde(rename = "LRT-boundary")]
    LrtBoundary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub kind: TestKind,
    pub statistic: f64,
    pub df: usize,
    /// Weight on the `chi^2_{df-1}` component for boundary tests.
    pub boundary_weight: Option<f64>,
    pub p_value: f64,
    pub warnings: Vec<String>,
}

/// Wald test from an estimate and its covariance.
pub fn wald_statistic(beta: &[f64], vcov: &DMatrix<f64>, hyp: &HypothesisSpec) -> Result<TestResult> {
    let p = beta.len();
    if hyp.k.ncols() != p || vcov.shape() != (p, p) {
        return Err(Error::Test(format!(
            "dimension mismatch: {} coefficients, contrast with {} columns, covariance {:?}",
            p,
            hyp.k.ncols(),
            vcov.shape()
        )));
    }
    let diff = &hyp.k * (DVector::from_column_slice(beta) - &hyp.b0);
    let middle = &hyp.k * vcov * hyp.k.transpose();
    let middle = (&middle + middle.transpose()) * 0.5;
    let chol = middle
        .cholesky()
        .ok_or_else(|| Error::Test("K Var(beta) K' is singular or not positive definite".into()))?;
    let w = diff.dot(&chol.solve(&diff)).max(0.0);
    let df = hyp.restrictions();
    Ok(TestResult { kind: TestKind::Wald, statistic: w, df, boundary_weight: None, p_value: chi2_sf(w, df as f64), warnings: Vec::new() })
}

/// Wald test on a fitted model, using the coefficient block of its inverse
/// observed information.
pub fn wald_test(fit: &FitResult, hyp: &HypothesisSpec) -> Result<TestResult> {
    if !fit.converged {
        return Err(Error::Test("fit did not converge".into()));
    }
    let vcov = fit
        .beta_vcov()
        .ok_or_else(|| Error::Test(format!("covariance unavailable ({:?})", fit.vcov_status)))?;
    wald_statistic(&fit.theta.beta, &vcov, hyp)
}

/// Upper-tail p-value of `t` under `chi^2_df`, or under the mixture
/// `w chi^2_{df-1} + (1 - w) chi^2_df` when `boundary_weight` is `Some(w)`.
pub fn lrt_p_value(t: f64, df: usize, boundary_weight: Option<f64>) -> f64 {
    let upper = chi2_sf(t, df as f64);
    match boundary_weight {
        None => upper,
        Some(w) => {
            let lower = if df == 1 {
                if t > 0.0 { 0.0 } else { 1.0 }
            } else {
                chi2_sf(t, (df - 1) as f64)
            };
            (w * lower + (1.0 - w) * upper).clamp(0.0, 1.0)
        }
    }
}

/// LRT from two log-likelihoods.
pub fn lr_statistic(loglik_full: f64, loglik_null: f64, df: usize, boundary: bool) -> Result<TestResult> {
    if df == 0 {
        return Err(Error::Test("LRT needs at least one degree of freedom".into()));
    }
    if !(loglik_full.is_finite() && loglik_null.is_finite()) {
        return Err(Error::Test("non-finite log-likelihood".into()));
    }
    let raw = 2.0 * (loglik_full - loglik_null);
    let mut warnings = Vec::new();
    if raw < -LRT_NEGATIVE_TOLERANCE {
        warnings.push(format!("negative statistic {raw:.3e}: null fit is better than the full fit; models may not be nested or a fit failed"));
    }
    let t = raw.max(0.0);
    let weight = boundary.then_some(DEFAULT_BOUNDARY_WEIGHT);
    Ok(TestResult {
        kind: if boundary { TestKind::LrtBoundary } else { TestKind::Lrt },
        statistic: t,
        df,
        boundary_weight: weight,
        p_value: lrt_p_value(t, df, weight),
        warnings,
    })
}

/// LRT of `null` against `full`. Set `boundary` when the restriction puts a
/// variance on the edge of its space (e.g. `sigma2 = 0`).
pub fn lr_test(full: &FitResult, null: &FitResult, df: usize, boundary: bool) -> Result<TestResult> {
    if !full.converged || !null.converged {
        return Err(Error::Test("both fits must converge".into()));
    }
    if null.n_params() > full.n_params() {
        return Err(Error::Test(format!(
            "null model has more parameters ({}) than the full model ({})",
            null.n_params(),
            full.n_params()
        )));
    }
    lr_statistic(full.loglik, null.loglik, df, boundary)
}

/// Benjamini-Hochberg adjusted p-values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BhAdjusted {
    pub adjusted: Vec<f64>,
    /// Number of NaN inputs, which stay NaN and do not count towards `m`.
    pub n_nan: usize,
}

pub fn bh_adjust(p: &[f64]) -> Result<BhAdjusted> {
    if let Some(bad) = p.iter().find(|v| !v.is_nan() && !(0.0..=1.0).contains(*v)) {
        return Err(Error::Test(format!("p-value {bad} outside [0, 1]")));
    }
    let mut idx: Vec<usize> = (0..p.len()).filter(|&i| !p[i].is_nan()).collect();
    let m = idx.len();
    idx.sort_by(|&a, &b| p[a].total_cmp(&p[b]));
    let mut adjusted = vec![f64::NAN; p.len()];
    let mut running = 1.0f64;
    for (rank, &i) in idx.iter().enumerate().rev() {
        running = running.min(p[i] * (m as f64 / (rank + 1) as f64));
        adjusted[i] = running;
    }
    Ok(BhAdjusted { adjusted, n_nan: p.len() - m })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn scalar(beta: f64, var: f64, b0: f64) -> TestResult {
        let hyp = HypothesisSpec::new(DMatrix::from_element(1, 1, 1.0), Some(vec![b0])).unwrap();
        wald_statistic(&[beta], &DMatrix::from_element(1, 1, var), &hyp).unwrap()
    }

    #[test]
    fn scalar_wald() {
        let r = scalar(2.0, 4.0, 0.0);
        assert_relative_eq!(r.statistic, 1.0, max_relative = 1e-14);
        assert_eq!(r.df, 1);
        assert!((r.p_value - 0.31731).abs() < 1e-4);
        let r0 = scalar(2.0, 4.0, 2.0);
        assert_eq!(r0.statistic, 0.0);
        assert_eq!(r0.p_value, 1.0);
    }

    #[test]
    fn row_scaling_invariance() {
        let beta = [0.4, -0.3, 1.2];
        let v = DMatrix::from_row_slice(3, 3, &[0.5, 0.1, 0.0, 0.1, 0.3, 0.05, 0.0, 0.05, 0.2]);
        let k = DMatrix::from_row_slice(2, 3, &[0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        let k2 = DMatrix::from_row_slice(2, 3, &[0.0, -3.0, 0.0, 0.0, 0.0, 0.25]);
        let a = wald_statistic(&beta, &v, &HypothesisSpec::new(k, None).unwrap()).unwrap();
        let b = wald_statistic(&beta, &v, &HypothesisSpec::new(k2, None).unwrap()).unwrap();
        assert_relative_eq!(a.statistic, b.statistic, max_relative = 1e-12);
    }

    #[test]
    fn rank_deficient_contrast_rejected() {
        let k = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 2.0, 2.0]);
        assert!(HypothesisSpec::new(k, None).is_err());
    }

    #[test]
    fn lrt_reference_points() {
        let same = lr_statistic(-100.0, -100.0, 1, false).unwrap();
        assert_eq!((same.statistic, same.p_value), (0.0, 1.0));
        let r = lr_statistic(3.841 / 2.0, 0.0, 1, false).unwrap();
        assert!((r.p_value - 0.05).abs() < 1e-4);
        let b = lr_statistic(2.706 / 2.0, 0.0, 1, true).unwrap();
        assert!((b.p_value - 0.05).abs() < 1e-4);
        assert_eq!(lr_statistic(0.0, 0.0, 1, true).unwrap().p_value, 1.0);
    }

    #[test]
    fn negative_lrt_is_flagged() {
        let r = lr_statistic(-10.0, -9.0, 1, false).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.warnings.len(), 1);
        assert!(lr_statistic(-10.0, -10.0 + 1e-8, 1, false).unwrap().warnings.is_empty());
    }

    #[test]
    fn bh_examples() {
        let r = bh_adjust(&[0.01, 0.02, 0.03, 0.04]).unwrap();
        for v in r.adjusted {
            assert_relative_eq!(v, 0.04, max_relative = 1e-14);
        }
        assert_eq!(bh_adjust(&[0.3]).unwrap().adjusted, vec![0.3]);
        let r = bh_adjust(&[0.2, f64::NAN, 0.01]).unwrap();
        assert_eq!(r.n_nan, 1);
        assert!(r.adjusted[1].is_nan());
        assert_relative_eq!(r.adjusted[2], 0.02);
        assert!(bh_adjust(&[1.5]).is_err());
    }
}
