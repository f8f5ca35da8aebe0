mod common;

use common::{expected_loss_check, small_fit};
use fosr::dss::{build_dss_problem, run_selection, solve_group_lasso, SolverSettings};
use fosr::linalg::orthonormality_error;

#[test]
fn reduced_loss_matches_predictive_loss_with_known_loadings() {
    let (_, archive) = small_fit(true, 4);
    let check = expected_loss_check(&archive, 10, 40);
    assert!(
        check.range() < 4.0 * check.max_se(),
        "range {} vs se {}: {:?}",
        check.range(),
        check.max_se(),
        check.offsets
    );
}

#[test]
fn reduced_loss_matches_predictive_loss_with_sampled_loadings() {
    let (_, archive) = small_fit(false, 5);
    assert!(archive.draws.iter().all(|d| orthonormality_error(&d.f) < 1e-8));
    let check = expected_loss_check(&archive, 10, 41);
    assert!(
        check.range() < 4.0 * check.max_se(),
        "range {} vs se {}: {:?}",
        check.range(),
        check.max_se(),
        check.offsets
    );
}

#[test]
fn path_on_posterior_is_certified() {
    let (_, archive) = small_fit(false, 6);
    let prob = build_dss_problem(&archive, None).unwrap();
    let path = run_selection(&prob, &archive, 40).unwrap();
    assert!(path.max_kkt_residual() <= 1e-6);
    assert_eq!(path.model_size[0], 0);
    assert!(path.rho2_lambda[0].mean < path.rho2_full.mean);
    let zero = solve_group_lasso(&prob, 0.0, None, &SolverSettings::default());
    assert!((&zero.delta - &prob.a_bar).amax() < 1e-8);
    assert!((&zero.delta0 - &prob.mu_bar).amax() < 1e-8);
    // Support is monotone along this path (an empirical property).
    assert!(path.model_size.windows(2).all(|w| w[1] >= w[0]), "{:?}", path.model_size);
}

#[test]
fn constant_draws_give_exact_means() {
    let (_, mut archive) = small_fit(true, 7);
    let first = archive.draws[0].clone();
    for d in &mut archive.draws {
        d.a = first.a.clone();
        d.mu = first.mu.clone();
    }
    let prob = build_dss_problem(&archive, None).unwrap();
    // Averaging identical values is exact up to summation rounding.
    assert!((&prob.a_bar - &first.a).amax() <= 1e-13 * first.a.amax());
    assert!((&prob.mu_bar - &first.mu).amax() <= 1e-13 * first.mu.amax());
    let mut doubled = archive.clone();
    for d in &mut doubled.draws {
        d.a.column_mut(0).scale_mut(2.0);
    }
    let prob2 = build_dss_problem(&doubled, None).unwrap();
    assert_eq!(prob2.weights[0], prob.weights[0] / 2.0);
}
