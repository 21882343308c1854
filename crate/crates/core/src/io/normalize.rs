use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::table::CountsTable;

/// Outcome of [`cpm_filter`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterReport {
    pub table: CountsTable,
    /// Indices of the retained genes in the input table.
    pub kept: Vec<usize>,
    pub warnings: Vec<String>,
}

/// Keep genes whose counts per million reach `threshold_cpm` in at least
/// `min_fraction` of the samples. Library sizes are column totals of the
/// input table.
pub fn cpm_filter(counts: &CountsTable, threshold_cpm: f64, min_fraction: f64) -> Result<FilterReport> {
    if !(threshold_cpm.is_finite() && threshold_cpm >= 0.0) || !(0.0..=1.0).contains(&min_fraction) {
        return Err(Error::Domain(format!("cpm_filter(threshold = {threshold_cpm}, min_fraction = {min_fraction})")));
    }
    let lib = counts.library_sizes();
    if let Some(s) = lib.iter().position(|&l| l <= 0.0) {
        return Err(Error::Data(format!("sample '{}' has library size 0", counts.sample_ids[s])));
    }
    let needed = min_fraction * counts.n_samples() as f64;
    let kept: Vec<usize> = (0..counts.n_genes())
        .filter(|&g| {
            let hits = counts.counts[g].iter().zip(&lib).filter(|(&c, &l)| c as f64 * 1e6 / l >= threshold_cpm).count();
            hits as f64 >= needed
        })
        .collect();
    let mut warnings = Vec::new();
    if kept.is_empty() {
        warnings.push(format!("no gene passes {threshold_cpm} CPM in {min_fraction} of samples"));
    }
    Ok(FilterReport { table: counts.subset_genes(&kept), kept, warnings })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TmmOptions {
    /// Fraction trimmed from each end of the log-ratios.
    pub trim_m: f64,
    /// Fraction trimmed from each end of the mean log-expressions.
    pub trim_a: f64,
    /// Reference sample; by default the one whose upper-quartile scaled
    /// count is closest to the average.
    pub reference: Option<usize>,
}

impl Default for TmmOptions {
    fn default() -> Self {
        Self { trim_m: 0.30, trim_a: 0.05, reference: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TmmResult {
    pub reference: usize,
    pub library_sizes: Vec<f64>,
    /// Normalization factors, geometric mean 1.
    pub factors: Vec<f64>,
    /// `ln(library_size * factor)`.
    pub offsets: Vec<f64>,
}

/// Type-7 sample quantile of sorted data.
fn quantile_sorted(v: &[f64], q: f64) -> f64 {
    let h = (v.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(v.len() - 1);
    v[lo] + (h - lo as f64) * (v[hi] - v[lo])
}

/// 1-based ranks with ties averaged.
fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

fn tmm_log2_factor(obs: &[f64], refr: &[f64], n_obs: f64, n_ref: f64, opts: &TmmOptions) -> Option<f64> {
    let mut m = Vec::new();
    let mut a = Vec::new();
    let mut v = Vec::new();
    for (&o, &r) in obs.iter().zip(refr) {
        if o > 0.0 && r > 0.0 {
            let (lo, lr) = ((o / n_obs).log2(), (r / n_ref).log2());
            m.push(lo - lr);
            a.push(0.5 * (lo + lr));
            v.push((n_obs - o) / n_obs / o + (n_ref - r) / n_ref / r);
        }
    }
    if m.is_empty() {
        return None;
    }
    if m.iter().all(|x| x.abs() < 1e-6) {
        return Some(0.0);
    }
    let n = m.len() as f64;
    let lo_m = (n * opts.trim_m).floor() + 1.0;
    let hi_m = n + 1.0 - lo_m;
    let lo_a = (n * opts.trim_a).floor() + 1.0;
    let hi_a = n + 1.0 - lo_a;
    let (rm, ra) = (average_ranks(&m), average_ranks(&a));
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..m.len() {
        if rm[i] >= lo_m && rm[i] <= hi_m && ra[i] >= lo_a && ra[i] <= hi_a {
            num += m[i] / v[i];
            den += 1.0 / v[i];
        }
    }
    let f = num / den;
    Some(if f.is_finite() { f } else { 0.0 })
}

/// Trimmed mean of M-values normalization.
pub fn tmm_offsets(counts: &CountsTable, opts: &TmmOptions) -> Result<TmmResult> {
    let s = counts.n_samples();
    if s < 2 {
        return Err(Error::Data("TMM needs at least two samples".into()));
    }
    if !(0.0..0.5).contains(&opts.trim_m) || !(0.0..0.5).contains(&opts.trim_a) {
        return Err(Error::Domain(format!("trim fractions ({}, {}) must lie in [0, 0.5)", opts.trim_m, opts.trim_a)));
    }
    let lib = counts.library_sizes();
    if let Some(j) = lib.iter().position(|&l| l <= 0.0) {
        return Err(Error::Data(format!("sample '{}' has library size 0", counts.sample_ids[j])));
    }
    let column = |j: usize| -> Vec<f64> { counts.counts.iter().map(|r| r[j] as f64).collect() };
    let reference = match opts.reference {
        Some(r) if r >= s => return Err(Error::Domain(format!("reference sample {r} out of range for {s} samples"))),
        Some(r) => r,
        None => {
            let f75: Vec<f64> = (0..s)
                .map(|j| {
                    let mut c = column(j);
                    c.sort_by(f64::total_cmp);
                    quantile_sorted(&c, 0.75) / lib[j]
                })
                .collect();
            let mean = f75.iter().sum::<f64>() / s as f64;
            (0..s).min_by(|&a, &b| (f75[a] - mean).abs().total_cmp(&(f75[b] - mean).abs())).expect("s >= 2")
        }
    };
    let refr = column(reference);
    let mut log2f = Vec::with_capacity(s);
    for j in 0..s {
        let f = tmm_log2_factor(&column(j), &refr, lib[j], lib[reference], opts).ok_or_else(|| {
            Error::Data(format!(
                "sample '{}' shares no expressed genes with reference '{}'",
                counts.sample_ids[j], counts.sample_ids[reference]
            ))
        })?;
        log2f.push(f);
    }
    let centre = log2f.iter().sum::<f64>() / s as f64;
    let factors: Vec<f64> = log2f.iter().map(|f| (f - centre).exp2()).collect();
    let offsets = lib.iter().zip(&factors).map(|(l, f)| (l * f).ln()).collect();
    Ok(TmmResult { reference, library_sizes: lib, factors, offsets })
}
