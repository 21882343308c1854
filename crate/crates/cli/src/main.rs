//! `ptglmm` command-line driver.
//!
//! Exit status is 0 on success, 2 on invalid input or configuration and 3
//! when a batch finished with some genes failed.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use nalgebra::DMatrix;
use serde::Deserialize;

use ptglmm::distribution::{PmfTable, PtParams};
use ptglmm::glmm::{fit_model, FitOptions, FitResult, LongitudinalDataset, ModelKind, StartStrategy};
use ptglmm::inference::{lr_test, wald_test};
use ptglmm::io::{
    cpm_filter, fmt_f64, hypothesis_from_path, parse_shorthand, run_fit_all, run_simulation, tmm_offsets, Batch, CountsTable,
    DesignSpec, FitAllOptions, NamedHypothesis, OffsetSource, SampleSheet, SimulationRequest, TmmOptions,
};
use ptglmm::sim::Scenario;

const EXIT_INVALID: u8 = 2;
const EXIT_PARTIAL: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "ptglmm", version, about = "Poisson-Tweedie mixed models for longitudinal counts")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default)]
struct GlobalArgs {
    /// Random seed [default: 1]
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads [default: all cores]
    #[arg(long, global = true, env = "PTGLMM_THREADS")]
    threads: Option<usize>,
    /// Gauss-Hermite points per subject [default: 5]
    #[arg(long, global = true)]
    quad_points: Option<usize>,
    /// Optimizer iteration limit [default: 2000]
    #[arg(long, global = true)]
    max_iter: Option<usize>,
    /// Relative optimizer tolerance [default: 1e-8]
    #[arg(long, global = true)]
    tol: Option<f64>,
    /// TOML file whose keys are the names of these flags
    #[arg(long, global = true)]
    config: Option<PathBuf>,
}

#[derive(Deserialize, Debug, Default)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
struct ConfigFile {
    seed: Option<u64>,
    threads: Option<usize>,
    quad_points: Option<usize>,
    max_iter: Option<usize>,
    tol: Option<f64>,
}

struct Settings {
    seed: u64,
    threads: Option<usize>,
    fit: FitOptions,
}

impl GlobalArgs {
    /// Command line and environment first, then the config file, then
    /// defaults.
    fn resolve(&self) -> Result<Settings> {
        let cfg: ConfigFile = match &self.config {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                toml::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
            }
            None => ConfigFile::default(),
        };
        let defaults = FitOptions::default();
        let fit = FitOptions {
            quad_points: self.quad_points.or(cfg.quad_points).unwrap_or(defaults.quad_points),
            max_iter: self.max_iter.or(cfg.max_iter).unwrap_or(defaults.max_iter),
            tol: self.tol.or(cfg.tol).unwrap_or(defaults.tol),
            ..defaults
        };
        fit.validate()?;
        let threads = self.threads.or(cfg.threads);
        if threads == Some(0) {
            bail!("--threads must be at least 1");
        }
        Ok(Settings { seed: self.seed.or(cfg.seed).unwrap_or(1), threads, fit })
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Drop genes with low counts per million
    Filter(FilterArgs),
    /// TMM normalization factors and log offsets per sample
    Normalize(NormalizeArgs),
    /// Fit one gene
    Fit(FitArgs),
    /// Fit and test every gene of a counts table
    FitAll(FitAllArgs),
    /// Wald or likelihood-ratio test from saved fits
    Test(TestArgs),
    /// Run a simulation study
    Simulate(SimulateArgs),
    /// Observed versus fitted frequencies, or a pmf table for given parameters
    Pmf(PmfArgs),
}

#[derive(Args, Debug)]
struct FilterArgs {
    #[arg(long)]
    counts: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    threshold_cpm: f64,
    #[arg(long, default_value_t = 0.5)]
    min_fraction: f64,
    /// Output file [default: stdout]
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct NormalizeArgs {
    #[arg(long)]
    counts: PathBuf,
    #[arg(long, default_value_t = 0.30)]
    trim_m: f64,
    #[arg(long, default_value_t = 0.05)]
    trim_a: f64,
    /// Reference sample id
    #[arg(long)]
    reference: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct DataArgs {
    #[arg(long)]
    counts: PathBuf,
    /// Sample sheet with sample, subject and time columns
    #[arg(long)]
    samples: PathBuf,
    /// Fixed effects, e.g. "~ group*time"
    #[arg(long)]
    formula: String,
    /// auto, sheet, tmm or none
    #[arg(long, default_value = "auto")]
    offsets: String,
}

impl DataArgs {
    fn batch(&self) -> Result<Batch> {
        let counts = CountsTable::from_path(&self.counts)?;
        let sheet = SampleSheet::from_path(&self.samples)?;
        let design = DesignSpec::parse(&self.formula)?;
        let source: OffsetSource = self.offsets.parse()?;
        Ok(Batch::new(&counts, &sheet, &design, source, &TmmOptions::default())?)
    }
}

#[derive(Args, Debug)]
struct FitArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    gene: String,
    #[arg(long, default_value = "PT-GLMM")]
    model: String,
    /// default, moments or nb
    #[arg(long, default_value = "default")]
    start: String,
    /// JSON output [default: stdout]
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct FitAllArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Coefficients tested jointly at zero, e.g. "groupmdx,groupmdx:time"
    #[arg(long = "test")]
    tests: Vec<String>,
    /// Contrast matrix file
    #[arg(long = "test-matrix")]
    matrices: Vec<PathBuf>,
    /// Also run likelihood-ratio tests for coefficient hypotheses
    #[arg(long)]
    lrt: bool,
    /// Results table [default: stdout]
    #[arg(long)]
    out: Option<PathBuf>,
    /// JSON file with full fit diagnostics
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TestArgs {
    /// Fit JSON written by `fit`
    #[arg(long)]
    fit: PathBuf,
    /// Coefficients tested jointly at zero
    #[arg(long, conflicts_with_all = ["matrix", "null"])]
    hypothesis: Option<String>,
    #[arg(long, conflicts_with = "null")]
    matrix: Option<PathBuf>,
    /// Null-model fit JSON for a likelihood-ratio test
    #[arg(long)]
    null: Option<PathBuf>,
    /// LRT degrees of freedom [default: difference in parameter counts]
    #[arg(long)]
    df: Option<usize>,
    /// Use the boundary mixture for a variance tested at zero
    #[arg(long)]
    boundary: bool,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(long)]
    scenario: String,
    /// Power parameter (scenarios A and B)
    #[arg(long = "a", allow_hyphen_values = true)]
    power: Option<f64>,
    /// Subjects per dataset
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 100)]
    reps: usize,
    /// Genes per batch (scenarios C and D) [default: 500]
    #[arg(long)]
    genes: Option<usize>,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, default_value = "PT-GLMM")]
    model: String,
    #[arg(long)]
    lrt: bool,
    /// Output directory for report.tsv, report.json, design.json, units.tsv
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PmfArgs {
    /// Counts table; with --gene, fits the gene's counts
    #[arg(long, requires = "gene")]
    counts: Option<PathBuf>,
    #[arg(long)]
    gene: Option<String>,
    #[arg(long, conflicts_with = "counts")]
    mu: Option<f64>,
    #[arg(long, conflicts_with = "counts")]
    dispersion: Option<f64>,
    #[arg(long = "a", allow_hyphen_values = true, conflicts_with = "counts")]
    power: Option<f64>,
    /// Largest count listed [default: the sample maximum, or the 0.999 quantile]
    #[arg(long)]
    max_k: Option<u64>,
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => Box::new(BufWriter::new(std::io::stdout().lock())),
    })
}

fn cmd_filter(a: &FilterArgs) -> Result<u8> {
    let counts = CountsTable::from_path(&a.counts)?;
    let r = cpm_filter(&counts, a.threshold_cpm, a.min_fraction)?;
    for w in &r.warnings {
        eprintln!("warning: {w}");
    }
    eprintln!("kept {} of {} genes", r.kept.len(), counts.n_genes());
    let mut out = output(a.out.as_deref())?;
    r.table.write_tsv(&mut out)?;
    out.flush()?;
    Ok(0)
}

fn cmd_normalize(a: &NormalizeArgs) -> Result<u8> {
    let counts = CountsTable::from_path(&a.counts)?;
    let reference = match &a.reference {
        Some(id) => Some(counts.sample_ids.iter().position(|s| s == id).with_context(|| format!("unknown reference sample '{id}'"))?),
        None => None,
    };
    let r = tmm_offsets(&counts, &TmmOptions { trim_m: a.trim_m, trim_a: a.trim_a, reference })?;
    let mut out = output(a.out.as_deref())?;
    writeln!(out, "sample\tlibrary_size\tnorm_factor\toffset")?;
    for (j, s) in counts.sample_ids.iter().enumerate() {
        writeln!(out, "{s}\t{}\t{}\t{}", fmt_f64(r.library_sizes[j]), fmt_f64(r.factors[j]), fmt_f64(r.offsets[j]))?;
    }
    out.flush()?;
    eprintln!("reference sample: {}", counts.sample_ids[r.reference]);
    Ok(0)
}

fn parse_start(s: &str) -> Result<StartStrategy> {
    Ok(match s {
        "default" => StartStrategy::Default,
        "moments" => StartStrategy::Moments,
        "nb" | "nb-glmm" => StartStrategy::NbGlmm,
        _ => bail!("unknown start strategy '{s}' (default, moments, nb)"),
    })
}

fn cmd_fit(a: &FitArgs, s: &Settings) -> Result<u8> {
    let batch = a.data.batch()?;
    let g = batch.gene_ids.iter().position(|id| *id == a.gene).with_context(|| format!("unknown gene '{}'", a.gene))?;
    let model: ModelKind = a.model.parse()?;
    let opts = FitOptions { start: parse_start(&a.start)?, ..s.fit.clone() };
    let fit = fit_model(&batch.dataset(g)?, model, &opts)?;
    let mut out = output(a.out.as_deref())?;
    serde_json::to_writer_pretty(&mut out, &fit)?;
    writeln!(out)?;
    out.flush()?;
    Ok(if fit.converged { 0 } else { EXIT_PARTIAL })
}

fn cmd_fit_all(a: &FitAllArgs, s: &Settings) -> Result<u8> {
    let batch = a.data.batch()?;
    let mut hyps: Vec<NamedHypothesis> = Vec::new();
    for t in &a.tests {
        hyps.push(parse_shorthand(t, &batch.coef_names)?);
    }
    for m in &a.matrices {
        hyps.push(hypothesis_from_path(m, &batch.coef_names)?);
    }
    let opts = FitAllOptions { fit: s.fit.clone(), lrt: a.lrt };
    let res = run_fit_all(&batch, &hyps, &opts)?;
    let mut out = output(a.out.as_deref())?;
    res.write_tsv(&mut out)?;
    out.flush()?;
    if let Some(p) = &a.json {
        res.write_json(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?))?;
    }
    let failed = res.n_failed();
    if failed > 0 {
        eprintln!("{failed} of {} genes failed", res.genes.len());
        return Ok(EXIT_PARTIAL);
    }
    Ok(0)
}

fn read_fit(p: &Path) -> Result<FitResult> {
    let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing fit {}", p.display()))
}

fn cmd_test(a: &TestArgs) -> Result<u8> {
    let fit = read_fit(&a.fit)?;
    let result = if let Some(null) = &a.null {
        let null = read_fit(null)?;
        let df = a.df.unwrap_or(fit.n_params().saturating_sub(null.n_params()));
        lr_test(&fit, &null, df, a.boundary)?
    } else {
        let hyp = match (&a.hypothesis, &a.matrix) {
            (Some(h), None) => parse_shorthand(h, &fit.coef_names)?,
            (None, Some(m)) => hypothesis_from_path(m, &fit.coef_names)?,
            _ => bail!("give one of --hypothesis, --matrix or --null"),
        };
        wald_test(&fit, &hyp.spec)?
    };
    for w in &result.warnings {
        eprintln!("warning: {w}");
    }
    println!("{}", serde_json::to_string_pretty(&result)?);
    Ok(0)
}

fn cmd_simulate(a: &SimulateArgs, s: &Settings) -> Result<u8> {
    let scenario: Scenario = a.scenario.parse()?;
    let req = SimulationRequest {
        scenario,
        n_subjects: a.n,
        power: a.power,
        n_genes: a.genes,
        replicates: a.reps,
        seed: s.seed,
        alpha: a.alpha,
        model: a.model.parse()?,
        lrt: a.lrt,
        fit: s.fit.clone(),
    };
    req.design()?;
    let out = run_simulation(&req)?;
    if let Some(dir) = &a.out {
        out.write_dir(dir)?;
    }
    let mut stdout = std::io::stdout().lock();
    out.write_report_tsv(&mut stdout)?;
    Ok(0)
}

fn cmd_pmf(a: &PmfArgs, s: &Settings) -> Result<u8> {
    let mut out = output(None)?;
    if let (Some(path), Some(gene)) = (&a.counts, &a.gene) {
        let counts = CountsTable::from_path(path)?;
        let g = counts.gene_index(gene).with_context(|| format!("unknown gene '{gene}'"))?;
        let y = counts.counts[g].clone();
        let n = y.len();
        let data = LongitudinalDataset::new(y.clone(), DMatrix::from_element(n, 1, 1.0), (0..n).collect(), vec![0.0; n], vec!["(Intercept)".into()])?;
        let fit = fit_model(&data, ModelKind::PtGlm, &s.fit)?;
        let t = &fit.theta;
        let params = PtParams::new(t.beta[0].exp(), t.dispersion, t.power)?;
        eprintln!("mu = {}, D = {}, a = {}", fmt_f64(params.mu), fmt_f64(t.dispersion), fmt_f64(t.power));
        let max_k = a.max_k.unwrap_or_else(|| y.iter().copied().max().unwrap_or(0));
        let mut table = PmfTable::new(&params)?;
        table.extend_to(max_k)?;
        writeln!(out, "k\tobserved\tempirical\tfitted\texpected")?;
        for k in 0..=max_k {
            let obs = y.iter().filter(|&&v| v == k).count();
            let p = table.pmf()[k as usize];
            writeln!(out, "{k}\t{obs}\t{}\t{}\t{}", fmt_f64(obs as f64 / n as f64), fmt_f64(p), fmt_f64(p * n as f64))?;
        }
    } else {
        let (Some(mu), Some(d), Some(pw)) = (a.mu, a.dispersion, a.power) else {
            bail!("give --counts with --gene, or all of --mu, --dispersion and --a");
        };
        let params = PtParams::new(mu, d, pw)?;
        let mut table = PmfTable::new(&params)?;
        let max_k = match a.max_k {
            Some(k) => k,
            None => table.quantile(0.999)?,
        };
        table.extend_to(max_k)?;
        writeln!(out, "k\tpmf\tcdf")?;
        for k in 0..=max_k as usize {
            writeln!(out, "{k}\t{}\t{}", fmt_f64(table.pmf()[k]), fmt_f64(table.cdf()[k]))?;
        }
    }
    out.flush()?;
    Ok(0)
}

fn run(cli: &Cli) -> Result<u8> {
    let settings = cli.global.resolve()?;
    if let Some(n) = settings.threads {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    match &cli.command {
        Command::Filter(a) => cmd_filter(a),
        Command::Normalize(a) => cmd_normalize(a),
        Command::Fit(a) => cmd_fit(a, &settings),
        Command::FitAll(a) => cmd_fit_all(a, &settings),
        Command::Test(a) => cmd_test(a),
        Command::Simulate(a) => cmd_simulate(a, &settings),
        Command::Pmf(a) => cmd_pmf(a, &settings),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_INVALID)
        }
    }
}
