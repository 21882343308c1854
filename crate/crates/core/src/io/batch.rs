use std::io::Write;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::glmm::{fit_model, FitOptions, FitResult, LongitudinalDataset, ModelKind, StartStrategy};
use crate::inference::{bh_adjust, lr_test, wald_test, TestResult};

use super::design::{DesignSpec, NamedHypothesis};
use super::fmt_f64;
use super::normalize::{tmm_offsets, TmmOptions};
use super::table::{CountsTable, SampleSheet};

/// Where per-sample offsets come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OffsetSource {
    /// The sheet's `offset` column when present, TMM otherwise.
    #[default]
    Auto,
    Sheet,
    Tmm,
    None,
}

impl std::str::FromStr for OffsetSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "auto" => Ok(Self::Auto),
            "sheet" => Ok(Self::Sheet),
            "tmm" => Ok(Self::Tmm),
            "none" => Ok(Self::None),
            _ => Err(Error::Parse(format!("unknown offset source '{s}' (auto, sheet, tmm, none)"))),
        }
    }
}

/// Validated inputs shared by all genes of a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub gene_ids: Vec<String>,
    pub counts: Vec<Vec<u64>>,
    pub x: DMatrix<f64>,
    pub coef_names: Vec<String>,
    pub subject: Vec<usize>,
    pub offset: Vec<f64>,
    pub time: Vec<f64>,
}

impl Batch {
    /// Aligns the sheet to the counts columns, builds the design and the
    /// offsets, and checks the design rank. Nothing is fitted.
    pub fn new(
        counts: &CountsTable,
        sheet: &SampleSheet,
        design: &DesignSpec,
        offsets: OffsetSource,
        tmm: &TmmOptions,
    ) -> Result<Self> {
        let sheet = sheet.reorder(&sheet.align_to(&counts.sample_ids)?);
        let (x, coef_names) = design.build(&sheet)?;
        let offset = match (offsets, &sheet.offset) {
            (OffsetSource::Auto | OffsetSource::Sheet, Some(o)) => o.clone(),
            (OffsetSource::Sheet, None) => return Err(Error::Data("sample sheet has no offset column".into())),
            (OffsetSource::Auto | OffsetSource::Tmm, _) => tmm_offsets(counts, tmm)?.offsets,
            (OffsetSource::None, _) => vec![0.0; counts.n_samples()],
        };
        let batch = Self {
            gene_ids: counts.gene_ids.clone(),
            counts: counts.counts.clone(),
            x,
            coef_names,
            subject: sheet.subject_indices(),
            offset,
            time: sheet.time.clone(),
        };
        LongitudinalDataset::new(vec![0; batch.offset.len()], batch.x.clone(), batch.subject.clone(), batch.offset.clone(), batch.coef_names.clone())?;
        Ok(batch)
    }

    pub fn n_genes(&self) -> usize {
        self.gene_ids.len()
    }

    pub fn dataset(&self, gene: usize) -> Result<LongitudinalDataset> {
        Ok(LongitudinalDataset::new(
            self.counts[gene].clone(),
            self.x.clone(),
            self.subject.clone(),
            self.offset.clone(),
            self.coef_names.clone(),
        )?
        .with_time(self.time.clone()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitAllOptions {
    pub fit: FitOptions,
    /// Also run likelihood-ratio tests for hypotheses that zero out
    /// coefficients.
    pub lrt: bool,
}

impl Default for FitAllOptions {
    fn default() -> Self {
        Self { fit: FitOptions::default(), lrt: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attempt {
    pub model: ModelKind,
    pub start: String,
    pub outcome: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneResult {
    pub gene: String,
    pub failed: bool,
    pub attempts: Vec<Attempt>,
    pub fit: Option<FitResult>,
    pub wald: Vec<Option<TestResult>>,
    pub lrt: Vec<Option<TestResult>>,
    pub wald_adjusted: Vec<f64>,
    pub lrt_adjusted: Vec<f64>,
}

impl GeneResult {
    pub fn model_tag(&self) -> &'static str {
        match &self.fit {
            Some(f) if !self.failed => f.model.tag(),
            _ => "failed",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitAllResults {
    pub coef_names: Vec<String>,
    pub hypotheses: Vec<String>,
    pub lrt: bool,
    pub genes: Vec<GeneResult>,
}

impl FitAllResults {
    pub fn n_failed(&self) -> usize {
        self.genes.iter().filter(|g| g.failed).count()
    }

    /// One row per gene; missing values are `NA`.
    pub fn write_tsv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::WriterBuilder::new().delimiter(b'\t').from_writer(w);
        let mut header: Vec<String> = ["gene", "model", "converged", "loglik"].iter().map(|s| s.to_string()).collect();
        header.extend(self.coef_names.iter().map(|c| format!("beta:{c}")));
        header.extend(self.coef_names.iter().map(|c| format!("se:{c}")));
        header.extend(["D", "a", "sigma2", "vcov", "evals"].iter().map(|s| s.to_string()));
        for h in &self.hypotheses {
            header.push(format!("p:{h}"));
            header.push(format!("padj:{h}"));
            if self.lrt {
                header.push(format!("p_lrt:{h}"));
                header.push(format!("padj_lrt:{h}"));
            }
        }
        wtr.write_record(&header).map_err(|e| Error::Io(e.to_string()))?;
        let p = self.coef_names.len();
        let na = || "NA".to_string();
        let pval = |t: &Option<TestResult>| t.as_ref().map_or_else(na, |t| fmt_f64(t.p_value));
        for g in &self.genes {
            let mut rec = vec![g.gene.clone(), g.model_tag().to_string()];
            match &g.fit {
                Some(f) => {
                    rec.push(f.converged.to_string());
                    rec.push(fmt_f64(f.loglik));
                    rec.extend(f.theta.beta.iter().map(|&b| fmt_f64(b)));
                    let se = f.std_errors();
                    rec.extend((0..p).map(|j| se.as_ref().map_or_else(na, |s| fmt_f64(s[j]))));
                    rec.push(fmt_f64(f.theta.dispersion));
                    rec.push(fmt_f64(f.theta.power));
                    rec.push(fmt_f64(f.theta.sigma2));
                    rec.push(format!("{:?}", f.vcov_status));
                    rec.push(f.n_loglik_evals.to_string());
                }
                None => {
                    rec.push("false".into());
                    rec.extend(std::iter::repeat_with(na).take(2 * p + 5));
                    rec.push("0".into());
                }
            }
            for h in 0..self.hypotheses.len() {
                rec.push(pval(&g.wald[h]));
                rec.push(fmt_f64(g.wald_adjusted[h]));
                if self.lrt {
                    rec.push(pval(&g.lrt[h]));
                    rec.push(fmt_f64(g.lrt_adjusted[h]));
                }
            }
            wtr.write_record(&rec).map_err(|e| Error::Io(e.to_string()))?;
        }
        wtr.flush()?;
        Ok(())
    }

    /// Full diagnostics for every gene.
    pub fn write_json<W: Write>(&self, w: W) -> Result<()> {
        serde_json::to_writer_pretty(w, self).map_err(|e| Error::Io(e.to_string()))
    }
}

fn attempt_ok(r: &Result<FitResult>, need_vcov: bool) -> std::result::Result<(), String> {
    match r {
        Err(e) => Err(e.to_string()),
        Ok(f) if !f.converged => Err(format!("not converged: {}", f.message)),
        Ok(f) if need_vcov && f.vcov.is_none() => Err(format!("covariance unavailable ({:?})", f.vcov_status)),
        Ok(_) => Ok(()),
    }
}

/// PT-GLMM from the default start, then from an NB-GLMM start, then
/// NB-GLMM. A PT fit counts as failed when it does not converge or has no
/// usable covariance.
pub fn fit_with_fallback(data: &LongitudinalDataset, opts: &FitOptions) -> (Option<FitResult>, Vec<Attempt>, bool) {
    let plan = [
        (ModelKind::PtGlmm, StartStrategy::Default, true),
        (ModelKind::PtGlmm, StartStrategy::NbGlmm, true),
        (ModelKind::NbGlmm, StartStrategy::Default, false),
    ];
    let mut attempts = Vec::new();
    let mut last = None;
    for (model, start, need_vcov) in plan {
        let label = format!("{start:?}");
        let o = FitOptions { start, ..opts.clone() };
        let r = fit_model(data, model, &o);
        let verdict = attempt_ok(&r, need_vcov);
        attempts.push(Attempt { model, start: label, outcome: verdict.clone().err().unwrap_or_else(|| "ok".into()) });
        match (verdict, r) {
            (Ok(()), Ok(f)) => return (Some(f), attempts, false),
            (_, Ok(f)) => last = Some(f),
            _ => {}
        }
    }
    (last, attempts, true)
}

fn gene_tests(
    data: &LongitudinalDataset,
    fit: &FitResult,
    hypotheses: &[NamedHypothesis],
    opts: &FitAllOptions,
) -> (Vec<Option<TestResult>>, Vec<Option<TestResult>>) {
    let wald = hypotheses.iter().map(|h| wald_test(fit, &h.spec).ok()).collect();
    let lrt = hypotheses
        .iter()
        .map(|h| {
            let cols = h.coefficients.as_ref().filter(|_| opts.lrt)?;
            let reduced = data.drop_columns(cols).ok()?;
            let o = FitOptions { information: false, ..opts.fit.clone() };
            let null = fit_model(&reduced, fit.model, &o).ok()?;
            lr_test(fit, &null, cols.len(), false).ok()
        })
        .collect();
    (wald, lrt)
}

/// Fits every gene with the PT-GLMM cascade and tests each hypothesis.
/// Genes run in parallel on the current rayon pool; the output does not
/// depend on the pool size.
pub fn run_fit_all(batch: &Batch, hypotheses: &[NamedHypothesis], opts: &FitAllOptions) -> Result<FitAllResults> {
    opts.fit.validate()?;
    let p = batch.coef_names.len();
    if let Some(h) = hypotheses.iter().find(|h| h.spec.k().ncols() != p) {
        return Err(Error::Test(format!("hypothesis '{}' has {} columns for {} coefficients", h.name, h.spec.k().ncols(), p)));
    }
    let mut genes: Vec<GeneResult> = (0..batch.n_genes())
        .into_par_iter()
        .map(|g| {
            let empty = |attempts, fit, failed| GeneResult {
                gene: batch.gene_ids[g].clone(),
                failed,
                attempts,
                fit,
                wald: vec![None; hypotheses.len()],
                lrt: vec![None; hypotheses.len()],
                wald_adjusted: Vec::new(),
                lrt_adjusted: Vec::new(),
            };
            let data = match batch.dataset(g) {
                Ok(d) => d,
                Err(e) => {
                    let a = Attempt { model: ModelKind::PtGlmm, start: "-".into(), outcome: e.to_string() };
                    return empty(vec![a], None, true);
                }
            };
            let (fit, attempts, failed) = fit_with_fallback(&data, &opts.fit);
            let mut out = empty(attempts, fit, failed);
            if let (false, Some(f)) = (failed, &out.fit) {
                (out.wald, out.lrt) = gene_tests(&data, f, hypotheses, opts);
            }
            out
        })
        .collect();
    for h in 0..hypotheses.len() {
        let pv = |t: &Option<TestResult>| t.as_ref().map_or(f64::NAN, |t| t.p_value);
        let wald = bh_adjust(&genes.iter().map(|g| pv(&g.wald[h])).collect::<Vec<_>>())?.adjusted;
        let lrt = bh_adjust(&genes.iter().map(|g| pv(&g.lrt[h])).collect::<Vec<_>>())?.adjusted;
        for ((g, w), l) in genes.iter_mut().zip(wald).zip(lrt) {
            g.wald_adjusted.push(w);
            g.lrt_adjusted.push(l);
        }
    }
    Ok(FitAllResults {
        coef_names: batch.coef_names.clone(),
        hypotheses: hypotheses.iter().map(|h| h.name.clone()).collect(),
        lrt: opts.lrt,
        genes,
    })
}
