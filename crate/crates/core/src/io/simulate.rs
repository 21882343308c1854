use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::glmm::{FitOptions, ModelKind};
use crate::sim::{gen_sim_cd, SimBatch, run_batch_study, run_single_study, score_batches, Scenario, ScoreReport, SimDesign, StudyOptions, TestChoice, UnitOutcome};

use super::fmt_f64;
use super::table::{Column, ColumnValues, CountsTable, SampleSheet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationRequest {
    pub scenario: Scenario,
    pub n_subjects: usize,
    /// Power parameter for scenarios A and B.
    pub power: Option<f64>,
    /// Genes per batch for scenarios C and D.
    pub n_genes: Option<usize>,
    pub replicates: usize,
    pub seed: u64,
    pub alpha: f64,
    pub model: ModelKind,
    pub lrt: bool,
    pub fit: FitOptions,
}

impl SimulationRequest {
    pub fn design(&self) -> Result<SimDesign> {
        if self.replicates == 0 {
            return Err(Error::Domain("need at least one replicate".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Domain(format!("alpha = {} outside (0, 1)", self.alpha)));
        }
        if self.scenario.is_batch() {
            if self.power.is_some() {
                return Err(Error::Domain("--a applies to scenarios A and B only".into()));
            }
            SimDesign::batch(self.scenario, self.n_subjects, self.n_genes.unwrap_or(500), self.seed)
        } else {
            if self.n_genes.is_some() {
                return Err(Error::Domain("--genes applies to scenarios C and D only".into()));
            }
            let power = self.power.ok_or_else(|| Error::Domain("scenarios A and B need a power parameter".into()))?;
            SimDesign::single(self.scenario, self.n_subjects, power, self.seed)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationOutput {
    pub request: SimulationRequest,
    pub design: SimDesign,
    pub reports: Vec<ScoreReport>,
    /// Outcomes per replicate; single-response scenarios have one unit per
    /// replicate.
    pub outcomes: Vec<Vec<UnitOutcome>>,
}

pub fn run_simulation(req: &SimulationRequest) -> Result<SimulationOutput> {
    let design = req.design()?;
    req.fit.validate()?;
    let study = StudyOptions { model: req.model, fit: req.fit.clone(), wald: true, lrt: req.lrt };
    let outcomes: Vec<Vec<UnitOutcome>> = if design.scenario.is_batch() {
        (0..req.replicates as u64)
            .map(|r| run_batch_study(&gen_sim_cd(&design, r)?, &study))
            .collect::<Result<_>>()?
    } else {
        run_single_study(&design, req.replicates, &study)?.into_iter().map(|o| vec![o]).collect()
    };
    let mut tests = vec![TestChoice::Wald];
    if req.lrt {
        tests.push(TestChoice::Lrt);
    }
    let mut reports = Vec::new();
    for &t in &tests {
        reports.push(score_batches(&outcomes, t, req.alpha, false)?);
        if design.scenario.is_batch() {
            reports.push(score_batches(&outcomes, t, req.alpha, true)?);
        }
    }
    Ok(SimulationOutput { request: req.clone(), design, reports, outcomes })
}

impl SimulationOutput {
    pub fn write_report_tsv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::WriterBuilder::new().delimiter(b'\t').from_writer(w);
        let p = self.reports.first().map_or(0, |r| r.rmse.len());
        let mut header: Vec<String> =
            ["test", "adjusted", "alpha", "n_units", "n_converged", "convergence_rate", "n_null_tested", "n_de_tested", "fpr", "tpr"]
                .iter()
                .map(|s| s.to_string())
                .collect();
        header.extend((0..p).map(|j| format!("rmse:beta{j}")));
        header.extend((0..p).map(|j| format!("bias:beta{j}")));
        wtr.write_record(&header).map_err(|e| Error::Io(e.to_string()))?;
        for r in &self.reports {
            let mut rec = vec![
                format!("{:?}", r.test),
                r.adjusted.to_string(),
                fmt_f64(r.alpha),
                r.n_units.to_string(),
                r.n_converged.to_string(),
                fmt_f64(r.convergence_rate),
                r.n_null_tested.to_string(),
                r.n_de_tested.to_string(),
                fmt_f64(r.fpr),
                fmt_f64(r.tpr),
            ];
            rec.extend(r.rmse.iter().chain(&r.bias).map(|&v| fmt_f64(v)));
            wtr.write_record(&rec).map_err(|e| Error::Io(e.to_string()))?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn write_units_tsv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::WriterBuilder::new().delimiter(b'\t').from_writer(w);
        wtr.write_record(["replicate", "unit", "model", "converged", "null", "beta0", "beta1", "beta2", "D", "a", "sigma2", "p_wald", "p_lrt", "error"])
            .map_err(|e| Error::Io(e.to_string()))?;
        for (r, batch) in self.outcomes.iter().enumerate() {
            for o in batch {
                let mut rec = vec![
                    r.to_string(),
                    o.unit.to_string(),
                    o.model.map_or("NA", |m| m.tag()).to_string(),
                    o.converged.to_string(),
                    o.null.to_string(),
                ];
                match &o.theta {
                    Some(t) => {
                        rec.extend(t.beta.iter().map(|&b| fmt_f64(b)));
                        rec.extend([t.dispersion, t.power, t.sigma2].map(fmt_f64));
                    }
                    None => rec.extend(std::iter::repeat_n("NA".to_string(), 6)),
                }
                rec.push(o.p_wald.map_or("NA".into(), fmt_f64));
                rec.push(o.p_lrt.map_or("NA".into(), fmt_f64));
                rec.push(o.error.clone().unwrap_or_default());
                wtr.write_record(&rec).map_err(|e| Error::Io(e.to_string()))?;
            }
        }
        wtr.flush()?;
        Ok(())
    }

    /// Request, design echo and reports.
    pub fn report_json(&self) -> Result<String> {
        let v = serde_json::json!({ "request": self.request, "design": self.design, "reports": self.reports });
        serde_json::to_string_pretty(&v).map_err(|e| Error::Io(e.to_string()))
    }

    /// Writes `report.tsv`, `report.json`, `design.json` and `units.tsv`.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let create = |name: &str| std::fs::File::create(dir.join(name)).map(std::io::BufWriter::new);
        self.write_report_tsv(create("report.tsv")?)?;
        self.write_units_tsv(create("units.tsv")?)?;
        std::fs::write(dir.join("report.json"), self.report_json()?)?;
        let design = serde_json::to_string_pretty(&self.design).map_err(|e| Error::Io(e.to_string()))?;
        std::fs::write(dir.join("design.json"), design)?;
        Ok(())
    }
}

/// Counts table and sample sheet for a simulated batch. The sheet carries the
/// numeric `group` covariate and the simulated offsets.
pub fn batch_tables(batch: &SimBatch) -> Result<(CountsTable, SampleSheet)> {
    let base = &batch.base;
    let n = base.n_obs();
    let sample_ids: Vec<String> = (0..n).map(|i| format!("s{i}")).collect();
    let gene_ids = (0..batch.counts.len()).map(|g| format!("gene{g}")).collect();
    let counts = CountsTable::new(gene_ids, sample_ids.clone(), batch.counts.clone())?;
    let group = base.group.clone().ok_or_else(|| Error::Data("batch has no group labels".into()))?;
    let sheet = SampleSheet {
        sample_ids,
        subjects: base.subject().iter().map(|s| format!("m{s}")).collect(),
        time: base.time.clone().ok_or_else(|| Error::Data("batch has no time values".into()))?,
        offset: Some(base.offset().to_vec()),
        columns: vec![Column { name: "group".into(), values: ColumnValues::Numeric(group) }],
    };
    Ok((counts, sheet))
}
