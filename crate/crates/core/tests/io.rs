use ptglmm::distribution::{pt_sample, PtParams};
use ptglmm::glmm::{FitOptions, ModelKind};
use ptglmm::inference::bh_adjust;
use ptglmm::io::{
    batch_tables, cpm_filter, parse_shorthand, read_hypothesis_matrix, run_fit_all, run_simulation, tmm_offsets, Batch, CountsTable,
    DesignSpec, FitAllOptions, OffsetSource, SampleSheet, SimulationRequest, TmmOptions,
};
use ptglmm::sim::{gen_sim_cd, Scenario, SimDesign};

fn table(counts: Vec<Vec<u64>>) -> CountsTable {
    let n = counts[0].len();
    CountsTable::new(
        (0..counts.len()).map(|g| format!("g{g}")).collect(),
        (0..n).map(|s| format!("s{s}")).collect(),
        counts,
    )
    .unwrap()
}

fn pseudo_counts(genes: usize, samples: usize, seed: u64) -> CountsTable {
    let rows = (0..genes)
        .map(|g| pt_sample(&PtParams::new(5.0 + (g % 17) as f64 * 10.0, 2.0, 0.0).unwrap(), samples, seed + g as u64).unwrap())
        .collect();
    table(rows)
}

#[test]
fn identical_samples_have_unit_factors() {
    let base = pseudo_counts(200, 1, 3);
    let rows = base.counts.iter().map(|r| vec![r[0]; 4]).collect();
    let t = tmm_offsets(&table(rows), &TmmOptions::default()).unwrap();
    for f in &t.factors {
        assert!((f - 1.0).abs() < 1e-12);
    }
}

#[test]
fn doubled_sample_has_unit_factor_and_shifted_offset() {
    let base = pseudo_counts(200, 1, 8);
    let rows = base.counts.iter().map(|r| vec![r[0], 2 * r[0]]).collect();
    let t = tmm_offsets(&table(rows), &TmmOptions::default()).unwrap();
    assert!((t.factors[1] / t.factors[0] - 1.0).abs() < 1e-10);
    assert!((t.offsets[1] - t.offsets[0] - 2f64.ln()).abs() < 1e-10);
}

#[test]
fn factors_have_unit_geometric_mean() {
    let t = tmm_offsets(&pseudo_counts(300, 7, 11), &TmmOptions::default()).unwrap();
    let log_mean = t.factors.iter().map(|f| f.ln()).sum::<f64>() / t.factors.len() as f64;
    assert!(log_mean.abs() < 1e-10);
    for (o, (l, f)) in t.offsets.iter().zip(t.library_sizes.iter().zip(&t.factors)) {
        assert!((o - (l * f).ln()).abs() < 1e-12);
    }
}

#[test]
fn cpm_threshold_is_inclusive() {
    // Every library is exactly one million reads.
    let counts = vec![vec![999_999, 999_999, 1_000_000, 1_000_000], vec![1, 1, 0, 0]];
    let r = cpm_filter(&table(counts.clone()), 1.0, 0.5).unwrap();
    assert_eq!(r.kept, vec![0, 1]);
    let r = cpm_filter(&table(counts), 1.0, 0.75).unwrap();
    assert_eq!(r.kept, vec![0]);
    let none = cpm_filter(&table(vec![vec![1, 1]]), 2e6, 1.0).unwrap();
    assert!(none.kept.is_empty() && !none.warnings.is_empty());
    assert!(cpm_filter(&table(vec![vec![0, 1]]), 1.0, 0.5).is_err());
}

#[test]
fn tables_round_trip() {
    let t = pseudo_counts(5, 6, 2);
    let mut buf = Vec::new();
    t.write_tsv(&mut buf).unwrap();
    assert_eq!(CountsTable::read_tsv(buf.as_slice()).unwrap(), t);

    let text = "sample\tsubject\ttime\tgroup\tdose\noffset_free\tm1\t0\twt\t0.5\nb\tm1\t1\twt\t1e-7\nc\tm2\t0\tmdx\t3\n";
    let sheet = SampleSheet::read_tsv(text.as_bytes()).unwrap();
    let mut out = Vec::new();
    sheet.write_tsv(&mut out).unwrap();
    assert_eq!(SampleSheet::read_tsv(out.as_slice()).unwrap(), sheet);
    assert!(CountsTable::read_tsv("gene\ta\tb\nx\t1\t-2\n".as_bytes()).is_err());
}

#[test]
fn sheet_offsets_pass_through_unchanged() {
    let counts = pseudo_counts(3, 4, 6);
    let text = "sample\tsubject\ttime\toffset\ns3\tm2\t1\t0.25\ns0\tm1\t0\t-1.5\ns1\tm1\t1\t2\ns2\tm2\t0\t0.125\n";
    let sheet = SampleSheet::read_tsv(text.as_bytes()).unwrap();
    let b = Batch::new(&counts, &sheet, &DesignSpec::parse("~ time").unwrap(), OffsetSource::Auto, &TmmOptions::default()).unwrap();
    assert_eq!(b.offset, vec![-1.5, 2.0, 0.125, 0.25]);
    assert_eq!(b.subject, vec![0, 0, 1, 1]);
    let none = Batch::new(&counts, &sheet, &DesignSpec::parse("~ time").unwrap(), OffsetSource::None, &TmmOptions::default()).unwrap();
    assert_eq!(none.offset, vec![0.0; 4]);
}

#[test]
fn matrix_and_shorthand_hypotheses_agree() {
    let names: Vec<String> = ["(Intercept)", "group", "time"].iter().map(|s| s.to_string()).collect();
    let short = parse_shorthand("group,time", &names).unwrap();
    let m = read_hypothesis_matrix("h", "(Intercept)\tgroup\ttime\n0\t1\t0\n0\t0\t1\n".as_bytes(), &names).unwrap();
    assert_eq!(short.spec, m.spec);
    assert!(parse_shorthand("dose", &names).is_err());
}

#[test]
fn fit_all_on_a_simulated_batch() {
    let batch = gen_sim_cd(&SimDesign::batch(Scenario::D, 10, 20, 4).unwrap(), 0).unwrap();
    let (mut counts, sheet) = batch_tables(&batch).unwrap();
    // Poisson counts without subject heterogeneity.
    counts.counts[0] = pt_sample(&PtParams::poisson(20.0).unwrap(), counts.n_samples(), 99).unwrap();
    let b = Batch::new(&counts, &sheet, &DesignSpec::parse("~ group + time").unwrap(), OffsetSource::Sheet, &TmmOptions::default()).unwrap();
    let h = parse_shorthand("group", &b.coef_names).unwrap();
    let res = run_fit_all(&b, &[h], &FitAllOptions { fit: FitOptions::default(), lrt: false }).unwrap();

    let mut tsv = Vec::new();
    res.write_tsv(&mut tsv).unwrap();
    let text = String::from_utf8(tsv).unwrap();
    assert_eq!(text.lines().count(), 21);
    assert!(text.lines().next().unwrap().starts_with("gene\tmodel\t"));

    let raw: Vec<f64> = res.genes.iter().map(|g| g.wald[0].as_ref().map_or(f64::NAN, |t| t.p_value)).collect();
    let adj = bh_adjust(&raw).unwrap().adjusted;
    for (g, a) in res.genes.iter().zip(adj) {
        assert!(g.wald_adjusted[0].to_bits() == a.to_bits());
    }
    let tag = res.genes[0].model_tag();
    assert!(matches!(tag, "NB-GLMM" | "NB-GLM" | "failed"), "adversarial gene ended as {tag}");
    let pt = res.genes.iter().filter(|g| g.model_tag() == ModelKind::PtGlmm.tag()).count();
    assert!(pt >= 10, "only {pt} genes kept the PT fit");
}

#[test]
fn simulation_reports_are_reproducible() {
    let req = SimulationRequest {
        scenario: Scenario::A,
        n_subjects: 6,
        power: Some(0.0),
        n_genes: None,
        replicates: 3,
        seed: 12,
        alpha: 0.05,
        model: ModelKind::NbGlmm,
        lrt: false,
        fit: FitOptions::default(),
    };
    let a = run_simulation(&req).unwrap().report_json().unwrap();
    let b = run_simulation(&req).unwrap().report_json().unwrap();
    assert_eq!(a, b);
    let bad = SimulationRequest { power: None, ..req };
    assert!(run_simulation(&bad).is_err());
}
