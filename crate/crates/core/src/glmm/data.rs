use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Long-format longitudinal counts for one response (gene).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LongitudinalDataset {
    y: Vec<u64>,
    x: DMatrix<f64>,
    subject: Vec<usize>,
    offset: Vec<f64>,
    coef_names: Vec<String>,
    /// Observation indices per subject.
    subject_obs: Vec<Vec<usize>>,
    pub time: Option<Vec<f64>>,
    pub group: Option<Vec<f64>>,
}

impl LongitudinalDataset {
    /// `x` has one row per observation; its first column is the intercept.
    pub fn new(
        y: Vec<u64>,
        x: DMatrix<f64>,
        subject: Vec<usize>,
        offset: Vec<f64>,
        coef_names: Vec<String>,
    ) -> Result<Self> {
        let n_obs = y.len();
        if n_obs == 0 {
            return Err(Error::Data("no observations".into()));
        }
        if x.nrows() != n_obs || subject.len() != n_obs || offset.len() != n_obs {
            return Err(Error::Data(format!(
                "length mismatch: {} responses, {} design rows, {} subject labels, {} offsets",
                n_obs,
                x.nrows(),
                subject.len(),
                offset.len()
            )));
        }
        if coef_names.len() != x.ncols() {
            return Err(Error::Data(format!("{} coefficient names for {} design columns", coef_names.len(), x.ncols())));
        }
        if let Some(i) = offset.iter().position(|o| !o.is_finite()) {
            return Err(Error::Data(format!("offset of observation {i} is not finite")));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("design matrix contains non-finite entries".into()));
        }
        let n_subjects = subject.iter().copied().max().map_or(0, |m| m + 1);
        let mut subject_obs = vec![Vec::new(); n_subjects];
        for (i, &s) in subject.iter().enumerate() {
            subject_obs[s].push(i);
        }
        if let Some(s) = subject_obs.iter().position(Vec::is_empty) {
            return Err(Error::Data(format!("subject indices must be contiguous; subject {s} has no observations")));
        }
        check_full_rank(&x)?;
        Ok(Self { y, x, subject, offset, coef_names, subject_obs, time: None, group: None })
    }

    pub fn with_time(mut self, time: Vec<f64>) -> Self {
        self.time = Some(time);
        self
    }

    pub fn with_group(mut self, group: Vec<f64>) -> Self {
        self.group = Some(group);
        self
    }

    pub fn y(&self) -> &[u64] {
        &self.y
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn subject(&self) -> &[usize] {
        &self.subject
    }

    pub fn offset(&self) -> &[f64] {
        &self.offset
    }

    pub fn coef_names(&self) -> &[String] {
        &self.coef_names
    }

    pub fn subject_obs(&self) -> &[Vec<usize>] {
        &self.subject_obs
    }

    pub fn n_obs(&self) -> usize {
        self.y.len()
    }

    pub fn n_subjects(&self) -> usize {
        self.subject_obs.len()
    }

    pub fn n_coef(&self) -> usize {
        self.x.ncols()
    }

    pub fn max_count(&self) -> u64 {
        self.y.iter().copied().max().unwrap_or(0)
    }

    /// `X beta + offset`.
    pub fn linear_predictor(&self, beta: &[f64]) -> Vec<f64> {
        let b = DVector::from_column_slice(beta);
        let eta = &self.x * b;
        eta.iter().zip(&self.offset).map(|(e, o)| e + o).collect()
    }

    /// Same design with a different response.
    pub fn with_response(&self, y: Vec<u64>) -> Result<Self> {
        if y.len() != self.y.len() {
            return Err(Error::Data(format!("expected {} responses, got {}", self.y.len(), y.len())));
        }
        let mut out = self.clone();
        out.y = y;
        Ok(out)
    }

    /// Same data without the listed design columns (for nested null models).
    pub fn drop_columns(&self, cols: &[usize]) -> Result<Self> {
        if cols.iter().any(|&c| c == 0 || c >= self.n_coef()) {
            return Err(Error::Data("can only drop non-intercept columns that exist".into()));
        }
        let keep: Vec<usize> = (0..self.n_coef()).filter(|c| !cols.contains(c)).collect();
        let x = self.x.select_columns(&keep);
        let names = keep.iter().map(|&c| self.coef_names[c].clone()).collect();
        let mut out = Self::new(self.y.clone(), x, self.subject.clone(), self.offset.clone(), names)?;
        out.time = self.time.clone();
        out.group = self.group.clone();
        Ok(out)
    }
}

/// Rejects designs whose columns are numerically dependent.
pub fn check_full_rank(x: &DMatrix<f64>) -> Result<()> {
    let p = x.ncols();
    if p == 0 {
        return Err(Error::Rank("design has no columns".into()));
    }
    if x.nrows() < p {
        return Err(Error::Rank(format!("{} observations for {} coefficients", x.nrows(), p)));
    }
    let sv = x.clone().svd(false, false).singular_values;
    let max = sv.max();
    let min = sv.min();
    if !(max > 0.0) || min <= 1e-10 * max {
        return Err(Error::Rank(format!("condition ratio {:.3e}", if max > 0.0 { min / max } else { 0.0 })));
    }
    Ok(())
}
