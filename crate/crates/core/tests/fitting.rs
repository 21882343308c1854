mod common;

use ptglmm::distribution::{pt_log_pmf, PtParams};
use ptglmm::error::Error;
use ptglmm::glmm::{
    fit_model, marginal_loglik, observed_information, posterior_modes, ranef_blup, starting_values, FitOptions, LongitudinalDataset,
    ModelKind, StartStrategy, ThetaFull, VcovStatus,
};
use ptglmm::quadrature::gh_rule;
use ptglmm::sim::{gen_sim_ab, Scenario, SimDesign};

use common::{nb_eta_derivs, nb_glm_oracle};

fn scenario_a(n: usize, power: f64, replicate: u64) -> LongitudinalDataset {
    gen_sim_ab(&SimDesign::single(Scenario::A, n, power, 17).unwrap(), replicate).unwrap()
}

fn tight() -> FitOptions {
    FitOptions { tol: 1e-12, ..FitOptions::default() }
}

#[test]
fn nb_glm_matches_reference_regression() {
    for rep in 0..3 {
        let data = scenario_a(20, 0.0, rep);
        let fit = fit_model(&data, ModelKind::NbGlm, &tight()).unwrap();
        assert!(fit.converged);
        let (beta, d) = nb_glm_oracle(&data);
        for (got, want) in fit.theta.beta.iter().zip(&beta) {
            assert!((got - want).abs() < 1e-4, "beta {got} vs {want}");
        }
        assert!((fit.theta.dispersion - d).abs() < 1e-3 * d, "D {} vs {d}", fit.theta.dispersion);
    }
}

#[test]
fn coefficient_information_matches_closed_form() {
    let data = scenario_a(10, 0.0, 4);
    let fit = fit_model(&data, ModelKind::NbGlm, &tight()).unwrap();
    let info = observed_information(&fit.theta, &data, ModelKind::NbGlm, 5).unwrap();
    assert!(info.ridge.is_none());
    let eta = data.linear_predictor(&fit.theta.beta);
    let p = data.n_coef();
    let x = data.x();
    for a in 0..p {
        for b in 0..p {
            let want: f64 = (0..data.n_obs()).map(|i| nb_eta_derivs(data.y()[i], eta[i], fit.theta.dispersion).1 * x[(i, a)] * x[(i, b)]).sum();
            let got = info.matrix[(a, b)];
            assert!((got - want).abs() < 1e-4 * want.abs().max(1.0), "({a},{b}): {got} vs {want}");
        }
    }
}

#[test]
fn tiny_starting_variance_drops_the_random_intercept() {
    let mut design = SimDesign::single(Scenario::A, 10, 0.0, 3).unwrap();
    design.sigma2 = 0.0;
    let data = gen_sim_ab(&design, 0).unwrap();
    let start = ThetaFull::new(vec![2.5, 0.0, 0.0], 2.0, 0.0, 1e-5).unwrap();
    let opts = FitOptions { start: StartStrategy::Given(start), ..FitOptions::default() };
    let fit = fit_model(&data, ModelKind::PtGlmm, &opts).unwrap();
    assert_eq!(fit.model, ModelKind::PtGlm);
    assert!(!fit.warnings.is_empty());
    assert!(matches!(ranef_blup(&fit, &data), Err(Error::NotApplicable(_))));
}

#[test]
fn fitted_likelihood_dominates_the_truth() {
    let design = SimDesign::single(Scenario::A, 20, 0.0, 29).unwrap();
    let truth = ThetaFull::new(design.beta.clone(), design.dispersion, design.power, design.sigma2).unwrap();
    for rep in 0..2 {
        let data = gen_sim_ab(&design, rep).unwrap();
        let fit = fit_model(&data, ModelKind::PtGlmm, &FitOptions::default()).unwrap();
        assert!(fit.converged);
        let mut states = Vec::new();
        let at_truth = marginal_loglik(&truth, &data, &gh_rule(5).unwrap(), &mut states, true).unwrap();
        assert!(fit.loglik >= at_truth - 1e-8, "{} < {at_truth}", fit.loglik);
        assert!(matches!(fit.vcov_status, VcovStatus::Available | VcovStatus::RidgeRepaired | VcovStatus::Boundary));
    }
}

#[test]
fn all_zero_response_is_rejected() {
    let data = scenario_a(4, 0.0, 0);
    let zeros = data.with_response(vec![0; data.n_obs()]).unwrap();
    for kind in [ModelKind::PtGlmm, ModelKind::NbGlm] {
        assert!(matches!(starting_values(&zeros, kind, &FitOptions::default()), Err(Error::DegenerateResponse(_))));
        assert!(matches!(fit_model(&zeros, kind, &FitOptions::default()), Err(Error::DegenerateResponse(_))));
    }
}

#[test]
fn random_effect_predictions_match_grid_maximum() {
    let data = scenario_a(8, 0.5, 2);
    let fit = fit_model(&data, ModelKind::PtGlmm, &FitOptions::default()).unwrap();
    let blup = ranef_blup(&fit, &data).unwrap();
    let t = &fit.theta;
    let eta = data.linear_predictor(&t.beta);
    for (i, obs) in data.subject_obs().iter().enumerate() {
        let post = |v: f64| {
            -0.5 * v * v / t.sigma2
                + obs.iter().map(|&j| pt_log_pmf(data.y()[j], &PtParams::new((eta[j] + v).exp(), t.dispersion, t.power).unwrap()).unwrap()).sum::<f64>()
        };
        let best = (-5000..=5000).map(|g| g as f64 * 1e-3).max_by(|a, b| post(*a).total_cmp(&post(*b))).unwrap();
        assert!((blup[i] - best).abs() <= 1e-3, "subject {i}: {} vs {best}", blup[i]);
    }
}

#[test]
fn doubling_a_subjects_counts_raises_its_prediction() {
    let data = scenario_a(6, 0.0, 1);
    let theta = ThetaFull::new(vec![2.5, 0.3, 0.0], 3.0, 0.0, 0.5).unwrap();
    let before = posterior_modes(&theta, &data).unwrap();
    let mut y = data.y().to_vec();
    for &j in &data.subject_obs()[0] {
        y[j] *= 2;
    }
    let after = posterior_modes(&theta, &data.with_response(y).unwrap()).unwrap();
    assert!(after[0] > before[0]);
    for i in 1..before.len() {
        assert!((after[i] - before[i]).abs() < 1e-12);
    }
}
