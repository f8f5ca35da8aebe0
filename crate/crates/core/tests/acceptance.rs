//! Acceptance suite. Prints one PASS/FAIL line per criterion and a tally.
//! Failures are reported, not fatal, unless `FOSR_ACCEPTANCE_STRICT=1`.

mod common;

use std::time::Instant;

use fosr::archive::DrawArchive;
use fosr::data::McmcConfig;
use fosr::dss::{build_dss_problem, run_selection, solve_group_lasso, SolverSettings};
use fosr::gibbs::{log_likelihood_full, log_likelihood_working, project, run_gibbs, sample_regression_block};
use fosr::linalg::{orthonormalize_columns, orthonormality_error};
use fosr::samplers::{sample_gaussian_cholesky, sample_gaussian_fast, RegressionDrawProblem};
use fosr::sim::{generate_dataset, inject_missing, run_study, SimSettings, StudyConfig};
use fosr::stats;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

struct Report {
    passed: usize,
    failed: Vec<String>,
}

impl Report {
    fn record(&mut self, id: &str, name: &str, ok: bool, detail: String) {
        println!("{} [{id}] {name}: {detail}", if ok { "PASS" } else { "FAIL" });
        if ok {
            self.passed += 1;
        } else {
            self.failed.push(id.to_string());
        }
    }
}

/// Archives produced along the way, checked for orthonormality at the end.
struct Archives(Vec<(String, DrawArchive)>);

fn criterion_1(r: &mut Report) {
    let t = Instant::now();
    let b = common::block_instance(6, 2, 101);
    let (mean, cov) = common::dense_block_posterior(&b);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let draws: Vec<DVector<f64>> = (0..100_000)
        .map(|_| {
            let (c, g) =
                sample_regression_block(&b.design, &b.y, b.sigma_eps, &b.sigma_gamma, &b.prior_var, &mut rng)
                    .unwrap();
            DVector::from_iterator(c.len() + g.len(), c.iter().chain(g.iter()).copied())
        })
        .collect();
    let (zm, zv) = common::moment_z_scores(&draws, &mean, &cov);
    let secs = t.elapsed().as_secs_f64();
    r.record(
        "1",
        "regression block vs dense conjugate oracle",
        zm < 3.0 && zv < 3.0 && secs < 60.0,
        format!("max |z| mean {zm:.2}, variance {zv:.2} (< 3); {secs:.1}s (< 60s)"),
    );
}

fn criterion_2(r: &mut Report) {
    let (n, p) = (6, 8);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut x = DMatrix::from_fn(n, p, |_, _| rng.sample::<f64, _>(StandardNormal));
    x.column_mut(0).fill(1.0);
    let prob = RegressionDrawProblem {
        x: &x,
        sigma_y_diag: DVector::from_fn(n, |i, _| 0.5 + 0.2 * i as f64),
        sigma_alpha_diag: DVector::from_fn(p, |j, _| 0.3 + 0.4 * j as f64),
        y: DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal)),
    };
    let n_draws = 100_000;
    let chol: Vec<DVector<f64>> = (0..n_draws).map(|_| sample_gaussian_cholesky(&prob, &mut rng).unwrap()).collect();
    let fast: Vec<DVector<f64>> = (0..n_draws).map(|_| sample_gaussian_fast(&prob, &mut rng).unwrap()).collect();
    let mut worst_z = 0.0_f64;
    let mut worst_ks = 0.0_f64;
    for j in 0..p {
        let a: Vec<f64> = chol.iter().map(|v| v[j]).collect();
        let b: Vec<f64> = fast.iter().map(|v| v[j]).collect();
        let se = (stats::variance(&a, 1) / n_draws as f64 + stats::variance(&b, 1) / n_draws as f64).sqrt();
        worst_z = worst_z.max((stats::mean(&a) - stats::mean(&b)).abs() / se);
        // Second moments about the exact mean.
        let mean = prob.posterior_mean().unwrap()[j];
        let sa: Vec<f64> = a.iter().map(|v| (v - mean).powi(2)).collect();
        let sb: Vec<f64> = b.iter().map(|v| (v - mean).powi(2)).collect();
        let se2 = (stats::variance(&sa, 1) / n_draws as f64 + stats::variance(&sb, 1) / n_draws as f64).sqrt();
        worst_z = worst_z.max((stats::mean(&sa) - stats::mean(&sb)).abs() / se2);
        worst_ks = worst_ks.max(stats::ks_two_sample(&a, &b));
    }
    r.record(
        "2",
        "Cholesky and data-augmentation samplers agree in law",
        worst_z < 3.0 && worst_ks < 0.01,
        format!("max |z| {worst_z:.2} (< 3), max KS {worst_ks:.4} (< 0.01)"),
    );
}

fn criterion_3(r: &mut Report) {
    let (n, m, k) = (7, 15, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let f = orthonormalize_columns(&DMatrix::from_fn(m, k, |_, _| rng.sample::<f64, _>(StandardNormal))).unwrap();
    let y = DMatrix::from_fn(n, m, |_, _| rng.sample::<f64, _>(StandardNormal));
    let y_proj = project(&f, &y);
    let sigma = 0.8;
    let diffs: Vec<f64> = (0..50)
        .map(|_| {
            let beta = DMatrix::from_fn(k, n, |_, _| 3.0 * rng.sample::<f64, _>(StandardNormal));
            log_likelihood_full(&y, &f, &beta, sigma) - log_likelihood_working(&y_proj, &beta, sigma)
        })
        .collect();
    let spread = diffs.iter().copied().fold(f64::MIN, f64::max) - diffs.iter().copied().fold(f64::MAX, f64::min);
    r.record(
        "3",
        "full minus working log-likelihood is constant in beta",
        spread < 1e-8,
        format!("spread {spread:.2e} over 50 draws (< 1e-8)"),
    );
}

fn criterion_4(r: &mut Report, archives: &Archives) {
    let mut worst = 0.0_f64;
    let mut count = 0;
    for (_, a) in &archives.0 {
        for d in &a.draws {
            worst = worst.max(orthonormality_error(&d.f));
            count += 1;
        }
    }
    r.record(
        "4",
        "every retained loading matrix is orthonormal",
        worst < 1e-8 && count > 0,
        format!("max |F'F - I| {worst:.2e} over {count} draws in {} archives (< 1e-8)", archives.0.len()),
    );
}

fn criterion_5(r: &mut Report, archives: &mut Archives) {
    for (fix, label) in [(true, "known"), (false, "sampled")] {
        let (_, archive) = common::small_fit(fix, 50 + fix as u64);
        let check = common::expected_loss_check(&archive, 10, 55);
        let (range, se) = (check.range(), check.max_se());
        r.record(
            if fix { "5a" } else { "5b" },
            &format!("predictive expected loss equals reduced loss up to a constant ({label} loadings)"),
            range < 4.0 * se,
            format!("range {range:.3e} vs 4 SE {:.3e}", 4.0 * se),
        );
        archives.0.push((format!("loss-check {label}"), archive));
    }
}

fn criterion_6(r: &mut Report, archive: &DrawArchive) {
    let prob = build_dss_problem(archive, None).unwrap();
    let path = run_selection(&prob, archive, fosr::dss::DEFAULT_GRID_SIZE).unwrap();
    let kkt = path.max_kkt_residual();
    let zero = solve_group_lasso(&prob, 0.0, None, &SolverSettings::default());
    let err = (&zero.delta - &prob.a_bar).amax().max((&zero.delta0 - &prob.mu_bar).amax());
    let crit = solve_group_lasso(&prob, prob.critical_lambda() * (1.0 + 1e-9), None, &SolverSettings::default());
    r.record(
        "6",
        "group lasso path is certified",
        kkt <= 1e-6 && err < 1e-8 && crit.model_size() == 0 && path.model_size[0] == 0,
        format!(
            "max KKT {kkt:.2e} (<= 1e-6), zero-penalty error {err:.2e} (< 1e-8), critical-penalty size {}",
            crit.model_size()
        ),
    );
}

fn criterion_7(r: &mut Report) {
    let t = Instant::now();
    let config = StudyConfig::default();
    let out = run_study(&config).unwrap();
    let secs = t.elapsed().as_secs_f64();
    let cov = out.method_mean("fosr", |m| m.coverage).unwrap();
    let rmse_full = out.method_mean("fosr", |m| Some(m.rmse)).unwrap();
    let rmse_fixed = out.method_mean("basis-spline", |m| Some(m.rmse)).unwrap();
    let rmse_dss = out.method_mean("fosr-dss", |m| Some(m.rmse)).unwrap();
    let (auc_dss, auc_gbpv) = (out.mean_auc(true), out.mean_auc(false));
    r.record(
        "7a",
        "pointwise 95% interval coverage",
        (0.90..=0.99).contains(&cov),
        format!("mean coverage {cov:.3} in [0.90, 0.99]"),
    );
    r.record(
        "7b",
        "sampled loadings beat the fixed spline basis",
        rmse_full < rmse_fixed,
        format!("mean RMSE {rmse_full:.4} vs {rmse_fixed:.4} (fixed basis); selected-model RMSE {rmse_dss:.4}"),
    );
    r.record(
        "7c",
        "selection ROC area at least the band-based ROC area",
        auc_dss >= auc_gbpv,
        format!("mean AUC {auc_dss:.4} vs {auc_gbpv:.4}; study took {secs:.0}s"),
    );
    let paired = |f: &dyn Fn(&fosr::sim::ReplicateOutcome) -> f64| {
        let d: Vec<f64> = out.replicates.iter().map(f).collect();
        (stats::mean(&d), stats::mc_standard_error(&d))
    };
    let (d_rmse, se_rmse) = paired(&|o| {
        let get = |m: &str| o.results.iter().find(|r| r.method == m).unwrap().rmse;
        get("fosr") - get("basis-spline")
    });
    let (d_auc, se_auc) = paired(&|o| fosr::sim::roc_auc(&o.dss_roc) - fosr::sim::roc_auc(&o.gbpv_roc));
    println!("INFO [7] paired differences: RMSE full - fixed {d_rmse:.4} (se {se_rmse:.4}); AUC dss - gbpv {d_auc:.4} (se {se_auc:.4})");
    let in_range = out.replicates.iter().filter(|o| (6..=14).contains(&o.dss_selected_size)).count();
    let sizes: Vec<usize> = out.replicates.iter().map(|o| o.dss_selected_size).collect();
    println!(
        "INFO [7] selected model sizes {sizes:?}: {in_range}/{} within [6, 14]",
        out.replicates.len()
    );
}

fn median_seconds_per_1000(n: usize, p: usize, iters: usize) -> f64 {
    let settings = SimSettings {
        n,
        p,
        p1: 10.min(p),
        ..SimSettings::default()
    };
    let (data, _) = generate_dataset(&settings, 80 + p as u64 + n as u64).unwrap();
    let cfg = McmcConfig {
        n_iter: iters,
        burn_in: iters - 1,
        thin: 1,
        seed: 8,
        ..McmcConfig::default()
    };
    let archive = run_gibbs(&data, &cfg).unwrap();
    // Skip the first iterations, which include cache warm-up.
    let mut secs = archive.iteration_seconds[iters / 10..].to_vec();
    secs.sort_by(f64::total_cmp);
    stats::quantile_sorted(&secs, 0.5) * 1000.0
}

fn criterion_8(r: &mut Report) {
    let iters = 1500;
    let by_p: Vec<(usize, f64)> = [25, 50, 100, 200].iter().map(|&p| (p, median_seconds_per_1000(100, p, iters))).collect();
    let by_n: Vec<(usize, f64)> = [100, 200, 400].iter().map(|&n| (n, median_seconds_per_1000(n, 20, iters))).collect();
    let ratios = |v: &[(usize, f64)]| v.windows(2).map(|w| w[1].1 / w[0].1).collect::<Vec<f64>>();
    let rp = ratios(&by_p);
    let rn = ratios(&by_n);
    let fmt = |v: &[(usize, f64)]| v.iter().map(|(d, s)| format!("{d}:{s:.3}s")).collect::<Vec<_>>().join(" ");
    let fr = |v: &[f64]| v.iter().map(|x| format!("{x:.2}")).collect::<Vec<_>>().join(", ");
    r.record(
        "8a",
        "time per iteration at most 2.6x when p doubles",
        rp.iter().all(|x| *x <= 2.6),
        format!("per 1000 iterations {}; ratios {}", fmt(&by_p), fr(&rp)),
    );
    r.record(
        "8b",
        "time per iteration at most 2.6x when n doubles",
        rn.iter().all(|x| *x <= 2.6),
        format!("per 1000 iterations {}; ratios {}", fmt(&by_n), fr(&rn)),
    );
    let bench = median_seconds_per_1000(100, 95, 1000);
    r.record(
        "8c",
        "p = 95, n = 100, K = 6 under 60s per 1000 iterations",
        bench < 60.0,
        format!("{bench:.2}s"),
    );
}

fn criterion_9(r: &mut Report, archives: &mut Archives) {
    let mut ratios = Vec::new();
    for rep in 0..5u64 {
        let (mut data, truth) = generate_dataset(&SimSettings::default(), 900 + rep).unwrap();
        let full = data.y.clone();
        let cells = inject_missing(&mut data, 0.06, &mut ChaCha8Rng::seed_from_u64(910 + rep)).unwrap();
        let cfg = McmcConfig {
            n_iter: 3000,
            burn_in: 1000,
            thin: 2,
            seed: 920 + rep,
            ..McmcConfig::default()
        };
        let archive = run_gibbs(&data, &cfg).unwrap();
        let s = archive.draws.len() as f64;
        let sq: f64 = cells
            .iter()
            .enumerate()
            .map(|(c, &(i, l))| {
                let est = archive.draws.iter().map(|d| d.y_imputed[c]).sum::<f64>() / s;
                (est - full[(i, l)]).powi(2)
            })
            .sum();
        ratios.push((sq / cells.len() as f64).sqrt() / truth.sigma_star);
        archives.0.push((format!("imputation {rep}"), archive));
    }
    let mean = stats::mean(&ratios);
    r.record(
        "9",
        "posterior-mean imputation of 6% masked cells",
        mean <= 2.0,
        format!(
            "mean RMSE / sigma* = {mean:.3} (<= 2); per replicate {}",
            ratios.iter().map(|x| format!("{x:.2}")).collect::<Vec<_>>().join(", ")
        ),
    );
}

fn criterion_10(r: &mut Report, archives: &mut Archives) {
    let (data, _) = generate_dataset(&SimSettings::default(), 1000).unwrap();
    let cfg = McmcConfig {
        n_iter: 1500,
        burn_in: 500,
        thin: 2,
        seed: 1001,
        ..McmcConfig::default()
    };
    let a = run_gibbs(&data, &cfg).unwrap();
    let b = run_gibbs(&data, &cfg).unwrap();
    let same_archive = a.same_draws(&b);
    let dir = tempfile::tempdir().unwrap();
    let csv = |arch: &DrawArchive, name: &str| {
        let prob = build_dss_problem(arch, None).unwrap();
        let path = run_selection(&prob, arch, 100).unwrap();
        let file = dir.path().join(name);
        path.write_csv(&file, arch.manifest.p).unwrap();
        (path, std::fs::read(file).unwrap())
    };
    let (pa, ca) = csv(&a, "a.csv");
    let (pb, cb) = csv(&b, "b.csv");
    let ok = same_archive && pa == pb && ca == cb;
    r.record(
        "10",
        "identical seeds give identical archives and selections",
        ok,
        format!("archives bit-identical: {same_archive}; selection path equal: {}; CSV bytes equal: {}", pa == pb, ca == cb),
    );
    archives.0.push(("determinism".into(), a));
}

fn main() {
    // `cargo test` passes harness flags such as `--quiet`; a filter argument
    // selects criteria by id prefix.
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let wanted = |id: &str| filter.is_empty() || filter.iter().any(|f| id.starts_with(f.as_str()));
    let start = Instant::now();
    let mut r = Report {
        passed: 0,
        failed: Vec::new(),
    };
    let mut archives = Archives(Vec::new());

    if wanted("1") {
        criterion_1(&mut r);
    }
    if wanted("2") {
        criterion_2(&mut r);
    }
    if wanted("3") {
        criterion_3(&mut r);
    }
    if wanted("5") || wanted("4") {
        criterion_5(&mut r, &mut archives);
    }
    if wanted("6") || wanted("4") {
        let (data, _) = generate_dataset(&SimSettings::default(), 600).unwrap();
        let cfg = McmcConfig {
            n_iter: 3000,
            burn_in: 1000,
            thin: 2,
            seed: 601,
            ..McmcConfig::default()
        };
        let archive = run_gibbs(&data, &cfg).unwrap();
        if wanted("6") {
            criterion_6(&mut r, &archive);
        }
        archives.0.push(("default simulation".into(), archive));
    }
    if wanted("7") {
        criterion_7(&mut r);
    }
    if wanted("8") {
        criterion_8(&mut r);
    }
    if wanted("9") || wanted("4") {
        criterion_9(&mut r, &mut archives);
    }
    if wanted("10") || wanted("4") {
        criterion_10(&mut r, &mut archives);
    }
    if wanted("4") {
        criterion_4(&mut r, &archives);
    }

    println!(
        "acceptance: {} passed, {} failed{} in {:.0}s",
        r.passed,
        r.failed.len(),
        if r.failed.is_empty() { String::new() } else { format!(" ({})", r.failed.join(", ")) },
        start.elapsed().as_secs_f64()
    );
    if !r.failed.is_empty() && std::env::var("FOSR_ACCEPTANCE_STRICT").as_deref() == Ok("1") {
        std::process::exit(1);
    }
}
