//! Helpers shared by the integration tests and the acceptance runner.
#![allow(dead_code)]

use fosr::archive::DrawArchive;
use fosr::data::{FunctionalDataset, McmcConfig};
use fosr::dss::build_dss_problem;
use fosr::gibbs::run_gibbs;
use fosr::sim::{generate_dataset, SimSettings};
use fosr::stats;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Fixed inputs of one factor's regression block.
pub struct BlockInstance {
    pub design: DMatrix<f64>,
    pub y: DVector<f64>,
    pub sigma_eps: f64,
    pub sigma_gamma: DVector<f64>,
    pub prior_var: DVector<f64>,
}

/// `n` subjects, an intercept and `p` predictors.
pub fn block_instance(n: usize, p: usize, seed: u64) -> BlockInstance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut design = DMatrix::from_fn(n, p + 1, |_, _| rng.sample::<f64, _>(StandardNormal));
    design.column_mut(0).fill(1.0);
    BlockInstance {
        y: DVector::from_fn(n, |_, _| 1.0 + rng.sample::<f64, _>(StandardNormal)),
        design,
        sigma_eps: 0.7,
        sigma_gamma: DVector::from_fn(n, |i, _| 0.4 + 0.1 * i as f64),
        prior_var: DVector::from_fn(p + 1, |j, _| if j == 0 { 4.0 } else { 0.5 + j as f64 }),
    }
}

/// Exact joint posterior of `(coefficients, gamma)` by dense conjugate
/// algebra: `y = D c + gamma + e` with independent Gaussian priors.
pub fn dense_block_posterior(b: &BlockInstance) -> (DVector<f64>, DMatrix<f64>) {
    let n = b.y.len();
    let q = b.design.ncols();
    let mut z = DMatrix::zeros(n, q + n);
    z.view_mut((0, 0), (n, q)).copy_from(&b.design);
    z.view_mut((0, q), (n, n)).fill_with_identity();
    let s2 = b.sigma_eps * b.sigma_eps;
    let mut prec = z.tr_mul(&z) / s2;
    for j in 0..q {
        prec[(j, j)] += 1.0 / b.prior_var[j];
    }
    for i in 0..n {
        prec[(q + i, q + i)] += 1.0 / b.sigma_gamma[i].powi(2);
    }
    let cov = prec.try_inverse().expect("positive definite");
    let mean = &cov * z.tr_mul(&b.y) / s2;
    (mean, cov)
}

/// Largest |z| over the means and variances of `draws` against a Gaussian
/// target, using the target's own variances for the standard errors.
pub fn moment_z_scores(draws: &[DVector<f64>], mean: &DVector<f64>, cov: &DMatrix<f64>) -> (f64, f64) {
    let n = draws.len() as f64;
    let d = mean.len();
    let mut worst_mean = 0.0_f64;
    let mut worst_var = 0.0_f64;
    for j in 0..d {
        let xs: Vec<f64> = draws.iter().map(|v| v[j]).collect();
        let m = stats::mean(&xs);
        let v = cov[(j, j)];
        worst_mean = worst_mean.max((m - mean[j]).abs() / (v / n).sqrt());
        let sq: f64 = xs.iter().map(|x| (x - mean[j]).powi(2)).sum::<f64>() / n;
        worst_var = worst_var.max((sq - v).abs() / (2.0 * v * v / n).sqrt());
    }
    (worst_mean, worst_var)
}

/// A small simulated dataset.
pub fn small_dataset(n: usize, m: usize, p: usize, seed: u64) -> FunctionalDataset {
    let settings = SimSettings {
        n,
        m,
        p,
        p1: (p / 2).max(1),
        rsnr: 5.0,
    };
    generate_dataset(&settings, seed).unwrap().0
}

pub fn small_fit(fix_basis: bool, seed: u64) -> (FunctionalDataset, DrawArchive) {
    let data = small_dataset(15, 12, 3, seed);
    let cfg = McmcConfig {
        k: 3,
        n_iter: 2500,
        burn_in: 500,
        thin: 1,
        seed,
        fix_basis,
        ..McmcConfig::default()
    };
    let archive = run_gibbs(&data, &cfg).unwrap();
    (data, archive)
}

/// Result of comparing the Monte Carlo expected loss with the reduced loss.
pub struct LossCheck {
    /// Monte Carlo loss minus reduced loss at each probe.
    pub offsets: Vec<f64>,
    /// Standard errors of `offsets[r] - offsets[0]`.
    pub diff_se: Vec<f64>,
}

impl LossCheck {
    pub fn range(&self) -> f64 {
        let hi = self.offsets.iter().copied().fold(f64::MIN, f64::max);
        let lo = self.offsets.iter().copied().fold(f64::MAX, f64::min);
        hi - lo
    }

    pub fn max_se(&self) -> f64 {
        self.diff_se.iter().copied().fold(0.0, f64::max)
    }
}

/// Estimates the posterior predictive expected loss at `n_probes` random
/// `(delta0, Delta)` by drawing one predictive replicate per posterior
/// draw, with each draw's own loadings, and subtracts the reduced loss.
pub fn expected_loss_check(archive: &DrawArchive, n_probes: usize, seed: u64) -> LossCheck {
    let prob = build_dss_problem(archive, None).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (k, p) = prob.a_bar.shape();
    let x = &prob.x_tilde;
    let (n, m) = (x.nrows(), prob.m);
    let probes: Vec<(DVector<f64>, DMatrix<f64>)> = (0..n_probes)
        .map(|_| {
            let d0 = &prob.mu_bar + DVector::from_fn(k, |_, _| 0.5 * rng.sample::<f64, _>(StandardNormal));
            let d = &prob.a_bar + DMatrix::from_fn(k, p, |_, _| 0.5 * rng.sample::<f64, _>(StandardNormal));
            (d0, d)
        })
        .collect();
    let closed: Vec<f64> = probes.iter().map(|(d0, d)| prob.loss(d0, d)).collect();

    let scale = 1.0 / (n * m) as f64;
    let mut per_draw: Vec<Vec<f64>> = vec![Vec::with_capacity(archive.draws.len()); n_probes];
    for d in &archive.draws {
        let mut losses = vec![0.0; n_probes];
        for i in 0..n {
            let xi = x.row(i).transpose();
            let coef = &d.mu + &d.a * &xi
                + DVector::from_fn(k, |c, _| d.sigma_gamma[(c, i)] * rng.sample::<f64, _>(StandardNormal));
            let y = &d.f * coef + DVector::from_fn(m, |_, _| d.sigma_eps * rng.sample::<f64, _>(StandardNormal));
            for (r, (d0, dl)) in probes.iter().enumerate() {
                let fit = &d.f * (d0 + dl * &xi);
                losses[r] += (&y - fit).norm_squared() * scale;
            }
        }
        for r in 0..n_probes {
            per_draw[r].push(losses[r] - closed[r]);
        }
    }
    let offsets = per_draw.iter().map(|v| stats::mean(v)).collect();
    let diff_se = (1..n_probes)
        .map(|r| {
            let diff: Vec<f64> = per_draw[r].iter().zip(&per_draw[0]).map(|(a, b)| a - b).collect();
            stats::batch_means_se(&diff, 20)
        })
        .collect();
    LossCheck { offsets, diff_se }
}
