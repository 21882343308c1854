use std::collections::BTreeSet;
use std::io::Read;
use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::HypothesisSpec;

use super::table::{ColumnValues, SampleSheet, TIME_COL};

pub const INTERCEPT: &str = "(Intercept)";

/// Fixed-effect formula such as `~ group + time + group:time`.
///
/// Terms are covariate names from the sample sheet (`time` included) or
/// `:`-joined interactions; `a*b` expands to `a + b + a:b`. An intercept is
/// always present. Categorical covariates get treatment coding against their
/// alphabetically first level, with columns named `<covariate><level>`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DesignSpec {
    pub terms: Vec<Vec<String>>,
}

impl DesignSpec {
    pub fn parse(formula: &str) -> Result<Self> {
        let body = formula.trim().trim_start_matches('~').trim();
        let mut terms: Vec<Vec<String>> = Vec::new();
        let mut push = |t: Vec<String>| {
            if !terms.contains(&t) {
                terms.push(t);
            }
        };
        for raw in body.split('+').map(str::trim) {
            if raw.is_empty() {
                return Err(Error::Parse(format!("empty term in formula '{formula}'")));
            }
            if raw == "1" {
                continue;
            }
            if raw == "0" || raw == "-1" || raw.contains('-') {
                return Err(Error::Parse("the intercept cannot be removed".into()));
            }
            let factors: Vec<&str> = raw.split('*').map(str::trim).collect();
            if factors.len() > 1 {
                let n = factors.len();
                for mask in 1u32..(1 << n) {
                    let t: Vec<String> = (0..n).filter(|i| mask & (1 << i) != 0).map(|i| factors[i].to_string()).collect();
                    push(t);
                }
            } else {
                let parts: Vec<String> = raw.split(':').map(|s| s.trim().to_string()).collect();
                if parts.iter().any(|p| p.is_empty() || !p.chars().all(|c| c.is_alphanumeric() || c == '_' || c == '.')) {
                    return Err(Error::Parse(format!("bad term '{raw}'")));
                }
                push(parts);
            }
        }
        terms.sort_by_key(Vec::len);
        Ok(Self { terms })
    }

    /// Design matrix over the sheet's rows and its column names.
    pub fn build(&self, sheet: &SampleSheet) -> Result<(DMatrix<f64>, Vec<String>)> {
        let n = sheet.n_samples();
        let mut cols: Vec<(String, Vec<f64>)> = vec![(INTERCEPT.to_string(), vec![1.0; n])];
        for term in &self.terms {
            let mut acc: Vec<(String, Vec<f64>)> = vec![(String::new(), vec![1.0; n])];
            for var in term {
                let parts = covariate_columns(sheet, var)?;
                let mut next = Vec::new();
                for (an, av) in &acc {
                    for (bn, bv) in &parts {
                        let name = if an.is_empty() { bn.clone() } else { format!("{an}:{bn}") };
                        next.push((name, av.iter().zip(bv).map(|(a, b)| a * b).collect()));
                    }
                }
                acc = next;
            }
            cols.extend(acc);
        }
        let names: Vec<String> = cols.iter().map(|(n, _)| n.clone()).collect();
        let x = DMatrix::from_fn(n, cols.len(), |i, j| cols[j].1[i]);
        Ok((x, names))
    }
}

fn covariate_columns(sheet: &SampleSheet, var: &str) -> Result<Vec<(String, Vec<f64>)>> {
    if var == TIME_COL {
        return Ok(vec![(var.to_string(), sheet.time.clone())]);
    }
    match sheet.column(var) {
        Some(ColumnValues::Numeric(v)) => Ok(vec![(var.to_string(), v.clone())]),
        Some(ColumnValues::Categorical(v)) => {
            let levels: BTreeSet<&str> = v.iter().map(String::as_str).collect();
            if levels.len() < 2 {
                return Err(Error::Data(format!("covariate '{var}' has a single level")));
            }
            Ok(levels
                .iter()
                .skip(1)
                .map(|l| (format!("{var}{l}"), v.iter().map(|x| f64::from(u8::from(x == l))).collect()))
                .collect())
        }
        None => Err(Error::Data(format!("formula term '{var}' is not a sample sheet column"))),
    }
}

/// A named hypothesis on the coefficients of a design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedHypothesis {
    pub name: String,
    pub spec: HypothesisSpec,
    /// Coefficients set to zero, when the hypothesis is of that form.
    pub coefficients: Option<Vec<usize>>,
}

/// Joint test that the listed coefficients are zero, e.g. `group,group:time`.
pub fn parse_shorthand(text: &str, coef_names: &[String]) -> Result<NamedHypothesis> {
    let mut which = Vec::new();
    for name in text.split(',').map(str::trim) {
        let j = coef_names
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::Test(format!("'{name}' is not a coefficient; available: {}", coef_names.join(", "))))?;
        if which.contains(&j) {
            return Err(Error::Test(format!("coefficient '{name}' listed twice")));
        }
        which.push(j);
    }
    Ok(NamedHypothesis {
        name: text.split(',').map(str::trim).collect::<Vec<_>>().join(","),
        spec: HypothesisSpec::coefficients(coef_names.len(), &which)?,
        coefficients: Some(which),
    })
}

/// Contrast matrix from a TSV whose header names coefficients (in any
/// order, absent ones are zero). Each row is a restriction; an optional row
/// whose first cell is `b0` gives the target coefficient vector.
pub fn read_hypothesis_matrix<R: Read>(name: &str, r: R, coef_names: &[String]) -> Result<NamedHypothesis> {
    let mut rdr = csv::ReaderBuilder::new().delimiter(b'\t').from_reader(r);
    let header: Vec<String> = rdr.headers().map_err(|e| Error::Parse(e.to_string()))?.iter().map(str::to_string).collect();
    let mut map = Vec::new();
    for h in header.iter().skip(1) {
        let j = coef_names
            .iter()
            .position(|c| c == h)
            .ok_or_else(|| Error::Test(format!("hypothesis column '{h}' is not a coefficient")))?;
        map.push(j);
    }
    let p = coef_names.len();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut b0 = None;
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Parse(e.to_string()))?;
        let mut row = vec![0.0; p];
        for (cell, &j) in rec.iter().skip(1).zip(&map) {
            row[j] = cell.trim().parse::<f64>().map_err(|_| Error::Parse(format!("'{cell}' is not a number")))?;
        }
        if rec.get(0) == Some("b0") {
            b0 = Some(row);
        } else {
            rows.push(row);
        }
    }
    let k = DMatrix::from_fn(rows.len(), p, |i, j| rows[i][j]);
    Ok(NamedHypothesis { name: name.to_string(), spec: HypothesisSpec::new(k, b0)?, coefficients: None })
}

pub fn hypothesis_from_path(path: &Path, coef_names: &[String]) -> Result<NamedHypothesis> {
    let f = std::fs::File::open(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    read_hypothesis_matrix(&name, std::io::BufReader::new(f), coef_names)
}
