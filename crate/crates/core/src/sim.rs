//! Simulation designs for single-response studies (scenarios A and B) and
//! gene batches (scenarios C and D), replicate runners and scoring.
//!
//! Every design splits subjects into two groups (equal when `n` is even)
//! observed at times `0..m`, with
//! `log mu_ij = beta_0 + beta_1 d_i + beta_2 t_ij + o_ij + v_i`.
//!
//! Datasets are reproducible: replicate `r` of a design with seed `s` draws
//! from ChaCha8 seeded with `s` on stream `r`, independently of how
//! replicates are scheduled across threads.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, Normal, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distribution::{sample_one, PtParams};
use crate::error::{Error, Result};
use crate::glmm::{fit_model, FitOptions, FitResult, LongitudinalDataset, ModelKind, ThetaFull};
use crate::inference::{bh_adjust, lr_test, wald_test, HypothesisSpec};

pub const COEF_NAMES: [&str; 3] = ["(Intercept)", "group", "time"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scenario {
    A,
    B,
    C,
    D,
}

impl Scenario {
    /// Index of the coefficient under test.
    pub fn tested_coefficient(self) -> usize {
        match self {
            Scenario::A | Scenario::C => 2,
            Scenario::B | Scenario::D => 1,
        }
    }

    pub fn is_batch(self) -> bool {
        matches!(self, Scenario::C | Scenario::D)
    }
}

impl std::str::FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "A" => Ok(Scenario::A),
            "B" => Ok(Scenario::B),
            "C" => Ok(Scenario::C),
            "D" => Ok(Scenario::D),
            other => Err(Error::Parse(format!("unknown scenario '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimDesign {
    pub scenario: Scenario,
    pub n_subjects: usize,
    pub n_times: usize,
    pub n_genes: usize,
    /// Single-response scenarios only.
    pub beta: Vec<f64>,
    pub dispersion: f64,
    pub power: f64,
    pub sigma2: f64,
    pub seed: u64,
}

impl SimDesign {
    /// Scenario A (`beta = (2.5, 0.3, 0)`) or B (`beta = (2.5, 0, 0.2)`) with
    /// `D = 3` (1 when `power = 1`) and `sigma2 = 0.5`.
    pub fn single(scenario: Scenario, n_subjects: usize, power: f64, seed: u64) -> Result<Self> {
        let beta = match scenario {
            Scenario::A => vec![2.5, 0.3, 0.0],
            Scenario::B => vec![2.5, 0.0, 0.2],
            _ => return Err(Error::Domain("scenarios C and D are gene batches".into())),
        };
        let dispersion = if power == 1.0 { 1.0 } else { 3.0 };
        let d = Self { scenario, n_subjects, n_times: 5, n_genes: 1, beta, dispersion, power, sigma2: 0.5, seed };
        d.validate()?;
        Ok(d)
    }

    /// Scenario C or D with `n_genes` genes.
    pub fn batch(scenario: Scenario, n_subjects: usize, n_genes: usize, seed: u64) -> Result<Self> {
        if !scenario.is_batch() {
            return Err(Error::Domain("scenarios A and B are single-response designs".into()));
        }
        let d = Self {
            scenario,
            n_subjects,
            n_times: 5,
            n_genes,
            beta: Vec::new(),
            dispersion: f64::NAN,
            power: f64::NAN,
            sigma2: f64::NAN,
            seed,
        };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_subjects < 2 {
            return Err(Error::Domain(format!("need at least 2 subjects, got {}", self.n_subjects)));
        }
        if self.n_times == 0 {
            return Err(Error::Domain("need at least one time point".into()));
        }
        if self.scenario.is_batch() {
            if self.n_genes == 0 {
                return Err(Error::Domain("need at least one gene".into()));
            }
        } else {
            if self.beta.len() != 3 || self.beta.iter().any(|b| !b.is_finite()) {
                return Err(Error::Domain("need three finite coefficients".into()));
            }
            PtParams::new(1.0, self.dispersion, self.power)?;
            if !(self.sigma2 >= 0.0 && self.sigma2.is_finite()) {
                return Err(Error::Domain(format!("invalid variance {}", self.sigma2)));
            }
        }
        Ok(())
    }

    pub fn n_obs(&self) -> usize {
        self.n_subjects * self.n_times
    }

    /// Group indicator of subject `i`: the first `floor(n / 2)` subjects are
    /// group 0.
    pub fn group_of(&self, subject: usize) -> f64 {
        if subject < self.n_subjects / 2 { 0.0 } else { 1.0 }
    }

    fn rng(&self, replicate: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(replicate);
        rng
    }

    /// Dataset skeleton (design, subjects, offsets) with zero counts.
    fn skeleton(&self, offsets: Vec<f64>) -> Result<LongitudinalDataset> {
        let n = self.n_obs();
        let mut subject = Vec::with_capacity(n);
        let mut time = Vec::with_capacity(n);
        let mut group = Vec::with_capacity(n);
        for i in 0..self.n_subjects {
            for t in 0..self.n_times {
                subject.push(i);
                time.push(t as f64);
                group.push(self.group_of(i));
            }
        }
        let x = DMatrix::from_fn(n, 3, |r, c| match c {
            0 => 1.0,
            1 => group[r],
            _ => time[r],
        });
        let names = COEF_NAMES.iter().map(|s| s.to_string()).collect();
        let mut y = vec![0u64; n];
        y[0] = 1; // placeholder so the skeleton is a valid dataset
        Ok(LongitudinalDataset::new(y, x, subject, offsets, names)?.with_time(time).with_group(group))
    }
}

fn draw_counts<R: Rng + ?Sized>(
    base: &LongitudinalDataset,
    theta: &ThetaFull,
    rng: &mut R,
) -> Result<Vec<u64>> {
    let normal = Normal::new(0.0, theta.sigma2.sqrt()).map_err(|e| Error::Sampling(e.to_string()))?;
    let v: Vec<f64> = (0..base.n_subjects()).map(|_| normal.sample(rng)).collect();
    let eta = base.linear_predictor(&theta.beta);
    eta.iter()
        .zip(base.subject())
        .map(|(e, &s)| {
            let params = PtParams::new((e + v[s]).exp(), theta.dispersion, theta.power)?;
            sample_one(&params, rng)
        })
        .collect()
}

/// Replicate `replicate` of a single-response design.
pub fn gen_sim_ab(design: &SimDesign, replicate: u64) -> Result<LongitudinalDataset> {
    if design.scenario.is_batch() {
        return Err(Error::Domain("gen_sim_ab needs scenario A or B".into()));
    }
    design.validate()?;
    let mut rng = design.rng(replicate);
    let base = design.skeleton(vec![0.0; design.n_obs()])?;
    let theta = ThetaFull {
        beta: design.beta.clone(),
        dispersion: design.dispersion,
        power: design.power,
        sigma2: design.sigma2,
    };
    let y = draw_counts(&base, &theta, &mut rng)?;
    base.with_response(y)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ShapeClass {
    NegativeBinomial,
    ZeroInflated,
    HeavyTailed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneTruth {
    pub gene: usize,
    pub theta: ThetaFull,
    pub shape: ShapeClass,
    /// Whether the tested coefficient is non-zero.
    pub de: bool,
}

/// Simulated gene batch sharing one design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimBatch {
    pub design: SimDesign,
    pub base: LongitudinalDataset,
    /// One count vector per gene, in observation order.
    pub counts: Vec<Vec<u64>>,
    pub truth: Vec<GeneTruth>,
}

impl SimBatch {
    pub fn dataset(&self, gene: usize) -> Result<LongitudinalDataset> {
        self.base.with_response(self.counts[gene].clone())
    }

    pub fn datasets(&self) -> Result<Vec<LongitudinalDataset>> {
        (0..self.counts.len()).map(|g| self.dataset(g)).collect()
    }
}

// Class sizes in proportions 3/5, 1/5, 1/5 (shape) or 4/5, 1/10, 1/10
// (null, up, down), rounded so they sum to g.
fn split(g: usize, fractions: [f64; 3]) -> [usize; 3] {
    let b = (g as f64 * fractions[1]).round() as usize;
    let c = ((g as f64 * fractions[2]).round() as usize).min(g - b.min(g));
    let b = b.min(g);
    [g - b - c, b, c]
}

fn uniform(lo: f64, hi: f64) -> Uniform<f64> {
    Uniform::new(lo, hi).expect("valid uniform bounds")
}

/// Replicate `replicate` of a gene-batch design, with its truth table.
pub fn gen_sim_cd(design: &SimDesign, replicate: u64) -> Result<SimBatch> {
    if !design.scenario.is_batch() {
        return Err(Error::Domain("gen_sim_cd needs scenario C or D".into()));
    }
    design.validate()?;
    let mut rng = design.rng(replicate);
    let g = design.n_genes;
    let offset_dist = Normal::new(0.0, 0.5).expect("valid normal");
    let offsets: Vec<f64> = (0..design.n_obs()).map(|_| offset_dist.sample(&mut rng)).collect();
    let base = design.skeleton(offsets)?;

    let [n_nb, n_zi, _] = split(g, [0.6, 0.2, 0.2]);
    let shapes: Vec<ShapeClass> = (0..g)
        .map(|i| {
            if i < n_nb {
                ShapeClass::NegativeBinomial
            } else if i < n_nb + n_zi {
                ShapeClass::ZeroInflated
            } else {
                ShapeClass::HeavyTailed
            }
        })
        .collect();
    let [n_null, n_up, _] = split(g, [0.8, 0.1, 0.1]);
    let mut direction: Vec<i8> = (0..g)
        .map(|i| if i < n_null { 0 } else if i < n_null + n_up { 1 } else { -1 })
        .collect();
    direction.shuffle(&mut rng);

    let beta0 = Normal::new(3.0, 0.5).expect("valid normal");
    let sigma2 = uniform(0.2, 0.8);
    let excess = Gamma::new(2.0, 1.0).expect("valid gamma");
    let group_effect = Normal::new(0.0, 0.3).expect("valid normal");
    let (effect_lo, effect_hi) = if design.scenario == Scenario::C { (0.1, 0.5) } else { (0.5, 1.0) };
    let tested = design.scenario.tested_coefficient();

    let mut counts = Vec::with_capacity(g);
    let mut truth = Vec::with_capacity(g);
    for gene in 0..g {
        let power = match shapes[gene] {
            ShapeClass::NegativeBinomial => 0.0,
            ShapeClass::ZeroInflated => uniform(-10.0, -1.0).sample(&mut rng),
            ShapeClass::HeavyTailed => uniform(0.3, 0.7).sample(&mut rng),
        };
        let mut beta = vec![beta0.sample(&mut rng), 0.0, 0.0];
        beta[3 - tested] = match design.scenario {
            Scenario::C => group_effect.sample(&mut rng),
            _ => uniform(-0.1, 0.1).sample(&mut rng),
        };
        beta[tested] = match direction[gene] {
            0 => 0.0,
            d => d as f64 * uniform(effect_lo, effect_hi).sample(&mut rng),
        };
        let theta = ThetaFull {
            beta,
            dispersion: 1.0 + excess.sample(&mut rng),
            power,
            sigma2: sigma2.sample(&mut rng),
        };
        counts.push(draw_counts(&base, &theta, &mut rng)?);
        truth.push(GeneTruth { gene, theta, shape: shapes[gene], de: direction[gene] != 0 });
    }
    Ok(SimBatch { design: design.clone(), base, counts, truth })
}

/// Result of fitting and testing one simulated unit (replicate or gene).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitOutcome {
    pub unit: usize,
    pub converged: bool,
    pub model: Option<ModelKind>,
    pub theta: Option<ThetaFull>,
    /// True coefficients.
    pub truth: Vec<f64>,
    /// Whether the tested coefficient is truly zero.
    pub null: bool,
    pub p_wald: Option<f64>,
    pub p_lrt: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TestChoice {
    Wald,
    Lrt,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub test: TestChoice,
    pub alpha: f64,
    pub adjusted: bool,
    pub n_units: usize,
    pub n_converged: usize,
    pub convergence_rate: f64,
    /// Root mean square error per coefficient over converged units.
    pub rmse: Vec<f64>,
    /// Mean estimate minus truth per coefficient over converged units.
    pub bias: Vec<f64>,
    pub n_null_tested: usize,
    pub n_de_tested: usize,
    pub fpr: f64,
    pub tpr: f64,
}

/// Summarize unit outcomes. Rejections use raw p-values, or BH-adjusted
/// ones across all units when `adjust` is set. Units without a p-value are
/// left out of the rate denominators.
pub fn score(outcomes: &[UnitOutcome], test: TestChoice, alpha: f64, adjust: bool) -> Result<ScoreReport> {
    let converged: Vec<&UnitOutcome> = outcomes.iter().filter(|o| o.converged && o.theta.is_some()).collect();
    if converged.is_empty() {
        return Err(Error::EmptyReport(format!("none of {} units converged", outcomes.len())));
    }
    let p_dim = converged[0].truth.len();
    let mut sq = vec![0.0; p_dim];
    let mut dev = vec![0.0; p_dim];
    for o in &converged {
        let est = &o.theta.as_ref().expect("filtered").beta;
        for j in 0..p_dim.min(est.len()) {
            let d = est[j] - o.truth[j];
            sq[j] += d * d;
            dev[j] += d;
        }
    }
    let nc = converged.len() as f64;
    let raw: Vec<f64> = outcomes
        .iter()
        .map(|o| match test {
            TestChoice::Wald => o.p_wald,
            TestChoice::Lrt => o.p_lrt,
        }
        .unwrap_or(f64::NAN))
        .collect();
    let p = if adjust { bh_adjust(&raw)?.adjusted } else { raw };
    let (mut null_n, mut null_rej, mut de_n, mut de_rej) = (0usize, 0usize, 0usize, 0usize);
    for (o, &pv) in outcomes.iter().zip(&p) {
        if pv.is_nan() {
            continue;
        }
        let reject = pv <= alpha;
        if o.null {
            null_n += 1;
            null_rej += usize::from(reject);
        } else {
            de_n += 1;
            de_rej += usize::from(reject);
        }
    }
    let rate = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    Ok(ScoreReport {
        test,
        alpha,
        adjusted: adjust,
        n_units: outcomes.len(),
        n_converged: converged.len(),
        convergence_rate: rate(converged.len(), outcomes.len()),
        rmse: sq.iter().map(|s| (s / nc).sqrt()).collect(),
        bias: dev.iter().map(|s| s / nc).collect(),
        n_null_tested: null_n,
        n_de_tested: de_n,
        fpr: rate(null_rej, null_n),
        tpr: rate(de_rej, de_n),
    })
}

/// Summarize several batches, BH-adjusting within each batch when `adjust`
/// is set and pooling the rates over batches.
pub fn score_batches(batches: &[Vec<UnitOutcome>], test: TestChoice, alpha: f64, adjust: bool) -> Result<ScoreReport> {
    let mut pooled = Vec::new();
    for batch in batches {
        let raw: Vec<f64> = batch
            .iter()
            .map(|o| match test {
                TestChoice::Wald => o.p_wald,
                TestChoice::Lrt => o.p_lrt,
            }
            .unwrap_or(f64::NAN))
            .collect();
        let p = if adjust { bh_adjust(&raw)?.adjusted } else { raw };
        for (o, pv) in batch.iter().zip(p) {
            let pv = (!pv.is_nan()).then_some(pv);
            let mut o = o.clone();
            match test {
                TestChoice::Wald => o.p_wald = pv,
                TestChoice::Lrt => o.p_lrt = pv,
            }
            pooled.push(o);
        }
    }
    let mut report = score(&pooled, test, alpha, false)?;
    report.adjusted = adjust;
    Ok(report)
}

/// What to run on each simulated unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyOptions {
    pub model: ModelKind,
    pub fit: FitOptions,
    pub wald: bool,
    pub lrt: bool,
}

impl Default for StudyOptions {
    fn default() -> Self {
        Self { model: ModelKind::PtGlmm, fit: FitOptions::default(), wald: true, lrt: false }
    }
}

/// Fit one dataset and test `coefficient = 0`.
pub fn analyze_unit(
    unit: usize,
    data: &LongitudinalDataset,
    coefficient: usize,
    truth: Vec<f64>,
    opts: &StudyOptions,
) -> UnitOutcome {
    let null = truth.get(coefficient).is_some_and(|&b| b == 0.0);
    let mut out = UnitOutcome {
        unit,
        converged: false,
        model: None,
        theta: None,
        truth,
        null,
        p_wald: None,
        p_lrt: None,
        error: None,
    };
    let fit = match fit_model(data, opts.model, &opts.fit) {
        Ok(f) => f,
        Err(e) => {
            out.error = Some(e.to_string());
            return out;
        }
    };
    out.converged = fit.converged;
    out.model = Some(fit.model);
    out.theta = Some(fit.theta.clone());
    if !fit.converged {
        return out;
    }
    if opts.wald {
        if let Ok(t) = HypothesisSpec::coefficients(data.n_coef(), &[coefficient]).and_then(|h| wald_test(&fit, &h)) {
            out.p_wald = Some(t.p_value);
        }
    }
    if opts.lrt {
        out.p_lrt = null_fit(data, &fit, coefficient, &opts.fit)
            .and_then(|nf| lr_test(&fit, &nf, 1, false))
            .map(|t| t.p_value)
            .ok();
    }
    out
}

/// Fit of the same model family without `coefficient`.
pub fn null_fit(data: &LongitudinalDataset, full: &FitResult, coefficient: usize, opts: &FitOptions) -> Result<FitResult> {
    let reduced = data.drop_columns(&[coefficient])?;
    let opts = FitOptions { information: false, ..opts.clone() };
    fit_model(&reduced, full.model, &opts)
}

/// Analyze `replicates` replicates of a single-response design in parallel.
/// Results are in replicate order whatever the thread count.
pub fn run_single_study(design: &SimDesign, replicates: usize, opts: &StudyOptions) -> Result<Vec<UnitOutcome>> {
    design.validate()?;
    let coefficient = design.scenario.tested_coefficient();
    (0..replicates)
        .into_par_iter()
        .map(|r| {
            let data = gen_sim_ab(design, r as u64)?;
            Ok(analyze_unit(r, &data, coefficient, design.beta.clone(), opts))
        })
        .collect()
}

/// Analyze every gene of a simulated batch in parallel.
pub fn run_batch_study(batch: &SimBatch, opts: &StudyOptions) -> Result<Vec<UnitOutcome>> {
    let coefficient = batch.design.scenario.tested_coefficient();
    (0..batch.counts.len())
        .into_par_iter()
        .map(|g| {
            let data = batch.dataset(g)?;
            Ok(analyze_unit(g, &data, coefficient, batch.truth[g].theta.beta.clone(), opts))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn class_split_matches_full_size() {
        assert_eq!(split(500, [0.6, 0.2, 0.2]), [300, 100, 100]);
        assert_eq!(split(500, [0.8, 0.1, 0.1]), [400, 50, 50]);
        assert_eq!(split(100, [0.8, 0.1, 0.1]), [80, 10, 10]);
        let s = split(7, [0.6, 0.2, 0.2]);
        assert_eq!(s.iter().sum::<usize>(), 7);
    }

    #[test]
    fn balanced_groups_and_times() {
        let d = SimDesign::single(Scenario::A, 10, 0.0, 1).unwrap();
        let data = gen_sim_ab(&d, 0).unwrap();
        let g = data.group.as_ref().unwrap();
        assert_eq!(g.iter().filter(|&&v| v == 1.0).count(), 25);
        assert_eq!(data.time.as_ref().unwrap()[..5], [0.0, 1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn odd_subject_count_splits_floor_ceil() {
        let d = SimDesign::single(Scenario::A, 25, 0.0, 1).unwrap();
        assert_eq!((0..25).filter(|&i| d.group_of(i) == 0.0).count(), 12);
        assert!(SimDesign::single(Scenario::A, 1, 0.0, 1).is_err());
        assert!(SimDesign::single(Scenario::C, 10, 0.0, 1).is_err());
    }

    #[test]
    fn all_ones_and_oracle_p_values() {
        let mk = |null: bool, p: f64| UnitOutcome {
            unit: 0,
            converged: true,
            model: Some(ModelKind::PtGlmm),
            theta: Some(ThetaFull { beta: vec![0.0], dispersion: 2.0, power: 0.0, sigma2: 0.5 }),
            truth: vec![0.0],
            null,
            p_wald: Some(p),
            p_lrt: None,
            error: None,
        };
        let ones = vec![mk(true, 1.0), mk(false, 1.0)];
        let r = score(&ones, TestChoice::Wald, 0.05, false).unwrap();
        assert_eq!((r.fpr, r.tpr), (0.0, 0.0));
        let oracle = vec![mk(true, 1.0), mk(false, 0.0), mk(false, 0.0)];
        let r = score(&oracle, TestChoice::Wald, 0.05, true).unwrap();
        assert_eq!((r.fpr, r.tpr), (0.0, 1.0));
        let mut failed = mk(true, 1.0);
        failed.converged = false;
        assert!(matches!(score(&[failed], TestChoice::Wald, 0.05, false), Err(Error::EmptyReport(_))));
    }
}
