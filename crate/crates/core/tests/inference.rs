use nalgebra::DMatrix;
use ptglmm::inference::{bh_adjust, lr_statistic, lrt_p_value, wald_statistic, HypothesisSpec, TestKind};
use statrs::distribution::{ChiSquared, ContinuousCDF};

/// `d' M^{-1} d` for a 2x2 `M` by the adjugate.
fn quad_form_2x2(d: [f64; 2], m: [[f64; 2]; 2]) -> f64 {
    let det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
    (d[0] * d[0] * m[1][1] - d[0] * d[1] * (m[0][1] + m[1][0]) + d[1] * d[1] * m[0][0]) / det
}

#[test]
fn two_restriction_wald_matches_hand_computation() {
    let beta = [1.2, -0.4, 0.7];
    let v = DMatrix::from_row_slice(3, 3, &[0.30, 0.05, -0.02, 0.05, 0.20, 0.01, -0.02, 0.01, 0.10]);
    let k = DMatrix::from_row_slice(2, 3, &[0.0, 1.0, 0.0, 0.0, 1.0, -1.0]);
    let b0 = vec![0.0, 0.1, 0.0];
    let r = wald_statistic(&beta, &v, &HypothesisSpec::new(k.clone(), Some(b0.clone())).unwrap()).unwrap();

    let diff: Vec<f64> = beta.iter().zip(&b0).map(|(b, z)| b - z).collect();
    let d = [diff[1], diff[1] - diff[2]];
    let kvk = &k * &v * k.transpose();
    let want = quad_form_2x2(d, [[kvk[(0, 0)], kvk[(0, 1)]], [kvk[(1, 0)], kvk[(1, 1)]]]);
    assert!((r.statistic - want).abs() < 1e-12 * want);
    assert_eq!(r.df, 2);
    // Two degrees of freedom: the survival function is exp(-w / 2).
    assert!((r.p_value - (-want / 2.0).exp()).abs() < 1e-12);
}

#[test]
fn scalar_wald_against_chi_square_reference() {
    let hyp = HypothesisSpec::coefficients(2, &[1]).unwrap();
    let v = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.25]);
    let r = wald_statistic(&[0.0, 0.9], &v, &hyp).unwrap();
    assert!((r.statistic - 3.24).abs() < 1e-12);
    let sf = 1.0 - ChiSquared::new(1.0).unwrap().cdf(3.24);
    assert!((r.p_value - sf).abs() < 1e-12);
}

#[test]
fn invalid_hypotheses() {
    assert!(HypothesisSpec::new(DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 2.0, 2.0]), None).is_err());
    assert!(HypothesisSpec::coefficients(2, &[2]).is_err());
    let hyp = HypothesisSpec::coefficients(3, &[0]).unwrap();
    assert!(wald_statistic(&[1.0, 2.0], &DMatrix::identity(2, 2), &hyp).is_err());
    assert!(wald_statistic(&[1.0, 2.0, 3.0], &DMatrix::zeros(3, 3), &hyp).is_err());
}

#[test]
fn likelihood_ratio_tail_probabilities() {
    let r = lr_statistic(-100.0, -101.355, 1, false).unwrap();
    assert_eq!(r.kind, TestKind::Lrt);
    assert!((r.statistic - 2.71).abs() < 1e-9);
    let sf = 1.0 - ChiSquared::new(1.0).unwrap().cdf(2.71);
    assert!((r.p_value - sf).abs() < 1e-12);
    let b = lr_statistic(-100.0, -101.355, 1, true).unwrap();
    assert!((b.p_value - 0.5 * sf).abs() < 1e-12);
    assert_eq!(lrt_p_value(0.0, 1, Some(0.5)), 1.0);
    let two = lrt_p_value(3.0, 2, Some(0.5));
    let want = 0.5 * (1.0 - ChiSquared::new(1.0).unwrap().cdf(3.0)) + 0.5 * (-1.5f64).exp();
    assert!((two - want).abs() < 1e-12);

    let neg = lr_statistic(-101.0, -100.0, 1, false).unwrap();
    assert_eq!(neg.statistic, 0.0);
    assert_eq!(neg.p_value, 1.0);
    assert!(!neg.warnings.is_empty());
    assert!(lr_statistic(-1.0, -2.0, 0, false).is_err());
}

#[test]
fn benjamini_hochberg_example() {
    let p = [0.005, 0.011, 0.02, 0.22, 0.7];
    let got = bh_adjust(&p).unwrap().adjusted;
    let want = [0.025, 0.0275, 0.02 * 5.0 / 3.0, 0.275, 0.7];
    for (g, w) in got.iter().zip(want) {
        assert!((g - w).abs() < 1e-15, "{got:?}");
    }
}

#[test]
fn benjamini_hochberg_skips_missing_values() {
    let out = bh_adjust(&[0.01, f64::NAN, 0.04]).unwrap();
    assert_eq!(out.n_nan, 1);
    assert!(out.adjusted[1].is_nan());
    assert!((out.adjusted[0] - 0.02).abs() < 1e-15 && (out.adjusted[2] - 0.04).abs() < 1e-15);
    assert!(bh_adjust(&[1.2]).is_err());
    assert!(bh_adjust(&[]).unwrap().adjusted.is_empty());
}
