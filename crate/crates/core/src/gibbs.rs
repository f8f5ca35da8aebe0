//! The Gibbs sampler. Each iteration runs, in order: imputation of missing
//! cells, the loading sweep, projection of the curves onto the loadings,
//! the regression block per factor, the variance components and finally the
//! shrinkage hyperparameters.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::archive::{ArchiveManifest, DrawArchive, DrawRecord};
use crate::basis::{self, BasisState, SplineBasis};
use crate::data::{standardize_design, FunctionalDataset, McmcConfig, Standardization};
use crate::error::{Error, Result};
use crate::linalg::gamma_rate;
use crate::priors::{HorseshoeState, MgpState};
use crate::samplers::{sample_regression_coefficients, RegressionDrawProblem};

/// Lower bound on the rate of the observation-precision draw.
pub const SSR_RATE_FLOOR: f64 = 1e-12;

/// Factor scores and their parts. `beta = mu 1' + A X' + Gamma` always.
#[derive(Clone, Debug, PartialEq)]
pub struct RegressionState {
    /// K x n.
    pub beta: DMatrix<f64>,
    pub mu: DVector<f64>,
    /// K x p, on the standardized design.
    pub a: DMatrix<f64>,
    /// K x n.
    pub gamma: DMatrix<f64>,
    /// `F' Y_i` for every subject, K x n.
    pub y_proj: DMatrix<f64>,
    pub sigma_eps: f64,
}

impl RegressionState {
    /// Recomputes `beta` from its parts.
    pub fn rebuild_beta(&mut self, x: &DMatrix<f64>) {
        self.beta = &self.a * x.transpose() + &self.gamma;
        for (k, mut row) in self.beta.row_iter_mut().enumerate() {
            row.add_scalar_mut(self.mu[k]);
        }
    }

    fn scale_factor(&mut self, k: usize, s: f64) {
        self.mu[k] *= s;
        self.a.row_mut(k).scale_mut(s);
        self.gamma.row_mut(k).scale_mut(s);
        self.beta.row_mut(k).scale_mut(s);
    }
}

/// Complete sampler state for one chain.
#[derive(Clone, Debug, PartialEq)]
pub struct GibbsState {
    pub basis: BasisState,
    pub reg: RegressionState,
    pub horseshoe: HorseshoeState,
    pub mgp: MgpState,
}

/// Counts of numerical guards that fired during a run.
#[derive(Clone, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Diagnostics {
    /// `lambda_f` draws that fell back to the prior-only rate.
    pub lambda_f_prior_only: usize,
    /// Smoothing-precision draws limited by the ceiling.
    pub lambda_f_capped: usize,
    /// Observation-precision draws whose rate hit the floor.
    pub ssr_rate_floored: usize,
    pub slice_failures: usize,
}

/// Progress report emitted every 100 iterations.
#[derive(Clone, Copy, Debug)]
pub struct Progress {
    pub iteration: usize,
    pub seconds: f64,
    pub sigma_eps: f64,
}

/// `F' Y'` computed directly (K x n); `y` is n x m.
pub fn project(f: &DMatrix<f64>, y: &DMatrix<f64>) -> DMatrix<f64> {
    f.tr_mul(&y.transpose())
}

/// `Psi' (B' Y')`, with `bty = B' Y'` (L x n).
pub fn project_via_basis(psi: &DMatrix<f64>, bty: &DMatrix<f64>) -> DMatrix<f64> {
    psi.tr_mul(bty)
}

/// Draws every missing cell from `N(sum_k f_k(tau) beta_{k,i}, sigma^2)`.
pub fn impute_missing<R: Rng + ?Sized>(
    y: &mut DMatrix<f64>,
    missing: &[(usize, usize)],
    f: &DMatrix<f64>,
    beta: &DMatrix<f64>,
    sigma_eps: f64,
    rng: &mut R,
) {
    for &(i, l) in missing {
        let fit = f.row(l).dot(&beta.column(i).transpose());
        y[(i, l)] = fit + sigma_eps * rng.sample::<f64, _>(StandardNormal);
    }
}

/// Regression block for one factor: the coefficients `(mu_k, alpha_{.,k})`
/// with the subject effects integrated out, then each `gamma_{k,i}` given
/// the coefficients. `design` is n x (p+1) with the intercept first.
pub fn sample_regression_block<R: Rng + ?Sized>(
    design: &DMatrix<f64>,
    y_k: &DVector<f64>,
    sigma_eps: f64,
    sigma_gamma_k: &DVector<f64>,
    prior_var: &DVector<f64>,
    rng: &mut R,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let s2 = sigma_eps * sigma_eps;
    let prob = RegressionDrawProblem {
        x: design,
        sigma_y_diag: sigma_gamma_k.map(|s| s * s + s2),
        sigma_alpha_diag: prior_var.clone(),
        y: y_k.clone(),
    };
    let coef = sample_regression_coefficients(&prob, rng)?;
    let fitted = design * &coef;
    let gamma = DVector::from_fn(y_k.len(), |i, _| {
        let q = 1.0 / s2 + 1.0 / (sigma_gamma_k[i] * sigma_gamma_k[i]);
        let ell = (y_k[i] - fitted[i]) / s2;
        ell / q + rng.sample::<f64, _>(StandardNormal) / q.sqrt()
    });
    Ok((coef, gamma))
}

/// `sum_i ||Y_i - F beta_i||^2` over all cells.
pub fn residual_sum_of_squares(y: &DMatrix<f64>, f: &DMatrix<f64>, beta: &DMatrix<f64>) -> f64 {
    let fit = beta.tr_mul(&f.transpose());
    (y - fit).norm_squared()
}

/// Log-likelihood of the curves, `Y_i ~ N(F beta_i, sigma^2 I_m)`.
pub fn log_likelihood_full(y: &DMatrix<f64>, f: &DMatrix<f64>, beta: &DMatrix<f64>, sigma_eps: f64) -> f64 {
    let (n, m) = y.shape();
    let s2 = sigma_eps * sigma_eps;
    -0.5 * (n * m) as f64 * (2.0 * std::f64::consts::PI * s2).ln()
        - residual_sum_of_squares(y, f, beta) / (2.0 * s2)
}

/// Log-likelihood of the projected data, `y_{k,i} ~ N(beta_{k,i}, sigma^2)`.
pub fn log_likelihood_working(y_proj: &DMatrix<f64>, beta: &DMatrix<f64>, sigma_eps: f64) -> f64 {
    let s2 = sigma_eps * sigma_eps;
    -0.5 * y_proj.len() as f64 * (2.0 * std::f64::consts::PI * s2).ln()
        - (y_proj - beta).norm_squared() / (2.0 * s2)
}

/// One chain of the sampler together with the data it conditions on.
#[derive(Clone, Debug)]
pub struct GibbsSampler {
    pub config: McmcConfig,
    pub spline: SplineBasis,
    /// Standardized design, n x p.
    pub x: DMatrix<f64>,
    /// `[1, x]`, n x (p+1).
    pub design: DMatrix<f64>,
    pub standardization: Standardization,
    /// Current curves with missing cells filled in.
    pub y: DMatrix<f64>,
    pub missing: Vec<(usize, usize)>,
    pub state: GibbsState,
    pub diagnostics: Diagnostics,
}

impl GibbsSampler {
    /// Validates inputs and builds the initial state.
    pub fn new(data: &FunctionalDataset, config: &McmcConfig) -> Result<Self> {
        config.validate()?;
        let (n, m, p) = (data.n(), data.m(), data.p());
        let k = config.k;
        let num_knots = config.num_knots.unwrap_or_else(|| basis::default_num_knots(m));
        let spline = basis::build_lrtps(&data.tau, num_knots)?;
        if k > spline.len() {
            return Err(Error::invalid(format!(
                "K = {k} exceeds the {} available spline functions",
                spline.len()
            )));
        }
        if !config.fix_basis && k > n.min(m) {
            return Err(Error::invalid(format!("K = {k} exceeds min(n, m) = {}", n.min(m))));
        }
        let (x, standardization) = if config.standardize {
            standardize_design(&data.x)?
        } else {
            (data.x.clone(), Standardization::identity(p))
        };
        let mut design = DMatrix::from_element(n, p + 1, 1.0);
        design.view_mut((0, 1), (n, p)).copy_from(&x);

        let y = data.mean_imputed();
        let basis_state = if config.fix_basis {
            basis::fixed_spline_loadings(&spline, k)?
        } else {
            basis::initial_loadings(&spline, &y, k)?
        };
        let bty = spline.b.tr_mul(&y.transpose());
        let y_proj = project_via_basis(&basis_state.psi, &bty);
        let mu = DVector::from_fn(k, |c, _| y_proj.row(c).mean());
        let mut gamma = y_proj.clone();
        for (c, mut row) in gamma.row_iter_mut().enumerate() {
            row.add_scalar_mut(-mu[c]);
        }
        let rss = residual_sum_of_squares(&y, &basis_state.f, &y_proj);
        let mut sigma_eps = (rss / (n * m) as f64).sqrt();
        if !(sigma_eps > 1e-8) {
            sigma_eps = crate::stats::std_dev(y.as_slice(), 1).max(1.0) * 1e-3;
        }
        let mut reg = RegressionState {
            beta: y_proj.clone(),
            mu,
            a: DMatrix::zeros(k, p),
            gamma,
            y_proj,
            sigma_eps,
        };
        reg.rebuild_beta(&x);

        let mut mgp = MgpState::new(k, n);
        if let Some(h) = &config.fixed_hypers {
            mgp = mgp.with_fixed(h);
        }
        let state = GibbsState {
            basis: basis_state,
            reg,
            horseshoe: HorseshoeState::new(p, k),
            mgp,
        };
        Ok(Self {
            config: config.clone(),
            spline,
            x,
            design,
            standardization,
            y,
            missing: data.missing_cells(),
            state,
            diagnostics: Diagnostics::default(),
        })
    }

    pub fn n(&self) -> usize {
        self.y.nrows()
    }

    pub fn k(&self) -> usize {
        self.config.k
    }

    /// Step 1.
    pub fn step_impute<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let st = &self.state;
        impute_missing(&mut self.y, &self.missing, &st.basis.f, &st.reg.beta, st.reg.sigma_eps, rng);
    }

    /// Step 2: smoothing precision then constrained loading draw for each k,
    /// followed by the sign convention.
    pub fn step_loadings<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<()> {
        let bty = self.spline.b.tr_mul(&self.y.transpose());
        let st = &mut self.state;
        for k in 0..self.config.k {
            let psi_k = st.basis.psi.column(k).clone_owned();
            let draw = basis::sample_lambda_f(&psi_k, &self.spline.omega, rng);
            self.diagnostics.lambda_f_prior_only += draw.prior_only as usize;
            self.diagnostics.lambda_f_capped += draw.capped as usize;
            st.basis.lambda_f[k] = draw.value;
            let norm = basis::sample_basis_column(
                k,
                &self.spline,
                &mut st.basis,
                &mut st.reg.beta,
                &bty,
                st.reg.sigma_eps,
                rng,
            )?;
            // beta_k was rescaled in place; keep its parts consistent.
            st.reg.mu[k] *= norm;
            st.reg.a.row_mut(k).scale_mut(norm);
            st.reg.gamma.row_mut(k).scale_mut(norm);
        }
        for (k, flipped) in st.basis.fix_signs().into_iter().enumerate() {
            if flipped {
                st.reg.scale_factor(k, -1.0);
            }
        }
        Ok(())
    }

    /// Step 3.
    pub fn step_project(&mut self) {
        let bty = self.spline.b.tr_mul(&self.y.transpose());
        self.state.reg.y_proj = project_via_basis(&self.state.basis.psi, &bty);
    }

    /// Step 4 for every factor.
    pub fn step_regression<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<()> {
        let p = self.x.ncols();
        let st = &mut self.state;
        for k in 0..self.config.k {
            let mut prior_var = DVector::zeros(p + 1);
            prior_var[0] = st.mgp.sigma_mu[k].powi(2);
            prior_var.rows_mut(1, p).copy_from(&st.horseshoe.variances_for_factor(k));
            let y_k = st.reg.y_proj.row(k).transpose();
            let sg = st.mgp.sigma_gamma_ki.row(k).transpose();
            let (coef, gamma) = sample_regression_block(&self.design, &y_k, st.reg.sigma_eps, &sg, &prior_var, rng)?;
            st.reg.mu[k] = coef[0];
            st.reg.a.row_mut(k).copy_from(&coef.rows(1, p).transpose());
            st.reg.gamma.row_mut(k).copy_from(&gamma.transpose());
        }
        st.reg.rebuild_beta(&self.x);
        Ok(())
    }

    /// Step 5(a): observation precision from all `m n` cells.
    pub fn step_sigma_eps<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let (n, m) = self.y.shape();
        let st = &mut self.state;
        let rss = residual_sum_of_squares(&self.y, &st.basis.f, &st.reg.beta);
        let prior = self.config.sigma_eps_prior;
        let mut rate = rss / 2.0 + prior.rate;
        if !(rate > SSR_RATE_FLOOR) {
            rate = SSR_RATE_FLOOR;
            self.diagnostics.ssr_rate_floored += 1;
        }
        let shape = (m * n) as f64 / 2.0 + prior.shape;
        let prec = gamma_rate(shape, rate, rng).min(1e150);
        st.reg.sigma_eps = prec.powf(-0.5);
    }

    /// Steps 5(b) and 5(c).
    pub fn step_shrinkage<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let st = &mut self.state;
        st.mgp.update_mu(&st.reg.mu, rng);
        st.mgp.update_gamma(&st.reg.gamma, rng);
        st.horseshoe.update(&st.reg.a, rng);
    }

    /// Step 6 (skipped when the hyperparameters are fixed).
    pub fn step_hypers<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        if self.config.fixed_hypers.is_none() {
            self.diagnostics.slice_failures += self.state.mgp.update_hypers(rng);
        }
    }

    /// One full iteration; `t` only labels errors.
    pub fn iterate<R: Rng + ?Sized>(&mut self, t: usize, rng: &mut R) -> Result<()> {
        self.step_impute(rng);
        if !self.config.fix_basis {
            self.step_loadings(rng).map_err(|e| e.at_step(t, "loadings"))?;
        }
        self.step_project();
        self.step_regression(rng).map_err(|e| e.at_step(t, "regression"))?;
        self.step_sigma_eps(rng);
        self.step_shrinkage(rng);
        self.step_hypers(rng);
        let st = &self.state;
        if !st.reg.sigma_eps.is_finite() || st.reg.beta.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("non-finite state".into()).at_step(t, "variances"));
        }
        Ok(())
    }

    /// Snapshot of the current state for the archive.
    pub fn record(&self) -> DrawRecord {
        let st = &self.state;
        DrawRecord {
            f: st.basis.f.clone(),
            mu: st.reg.mu.clone(),
            a: st.reg.a.clone(),
            gamma: st.reg.gamma.clone(),
            sigma_eps: st.reg.sigma_eps,
            sigma_gamma: st.mgp.sigma_gamma_ki.clone(),
            lambda_f: st.basis.lambda_f.clone(),
            y_imputed: self.missing.iter().map(|&(i, l)| self.y[(i, l)]).collect(),
        }
    }
}

/// Random stream for `chain` of a run seeded with `seed`.
pub fn chain_rng(seed: u64, chain: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chain);
    rng
}

/// Runs one chain and returns its archive and diagnostics. `progress` is
/// called every 100 iterations.
pub fn run_chain(
    data: &FunctionalDataset,
    config: &McmcConfig,
    chain: u64,
    mut progress: impl FnMut(Progress),
) -> Result<(DrawArchive, Diagnostics)> {
    let mut sampler = GibbsSampler::new(data, config)?;
    let mut rng = chain_rng(config.seed, chain);
    let manifest = ArchiveManifest::new(
        data.n(),
        data.m(),
        data.p(),
        config.k,
        config.seed,
        chain,
        config.n_iter,
        config.burn_in,
        config.thin,
        config.fix_basis,
        data.tau.as_slice().to_vec(),
        data.predictor_names.clone(),
        sampler.standardization.clone(),
        sampler.missing.clone(),
    );
    let mut draws = Vec::with_capacity(config.n_retained());
    let mut seconds = Vec::with_capacity(config.n_iter);
    let start = Instant::now();
    for t in 0..config.n_iter {
        let t0 = Instant::now();
        sampler.iterate(t, &mut rng)?;
        seconds.push(t0.elapsed().as_secs_f64());
        if config.is_retained(t) {
            draws.push(sampler.record());
        }
        if (t + 1) % 100 == 0 {
            progress(Progress {
                iteration: t + 1,
                seconds: start.elapsed().as_secs_f64(),
                sigma_eps: sampler.state.reg.sigma_eps,
            });
        }
    }
    let mut archive = DrawArchive {
        manifest,
        draws,
        x: sampler.x.clone(),
        iteration_seconds: seconds,
    };
    archive.manifest.n_draws = archive.draws.len();
    Ok((archive, sampler.diagnostics))
}

/// Runs chain 0 without progress output.
pub fn run_gibbs(data: &FunctionalDataset, config: &McmcConfig) -> Result<DrawArchive> {
    run_chain(data, config, 0, |_| {}).map(|(a, _)| a)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg;
    use crate::stats;

    fn toy_data(n: usize, m: usize, p: usize, seed: u64) -> FunctionalDataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tau = DVector::from_fn(m, |l, _| l as f64 / (m - 1) as f64);
        let x = DMatrix::from_fn(n, p, |_, _| rng.sample::<f64, _>(StandardNormal));
        let y = DMatrix::from_fn(n, m, |i, l| {
            let t = tau[l];
            1.0 + x[(i, 0)] * (2.0 * t).sin() + 0.3 * rng.sample::<f64, _>(StandardNormal)
        });
        let names = (0..p).map(|j| format!("x{j}")).collect();
        FunctionalDataset::complete(y, tau, x, names).unwrap()
    }

    fn quick_config(k: usize) -> McmcConfig {
        McmcConfig {
            k,
            n_iter: 60,
            burn_in: 20,
            thin: 2,
            seed: 5,
            ..McmcConfig::default()
        }
    }

    #[test]
    fn projection_factorizations_agree() {
        let data = toy_data(8, 20, 2, 1);
        let s = GibbsSampler::new(&data, &quick_config(3)).unwrap();
        let bty = s.spline.b.tr_mul(&s.y.transpose());
        let a = project(&s.state.basis.f, &s.y);
        let b = project_via_basis(&s.state.basis.psi, &bty);
        assert!((a - b).amax() < 1e-12 * s.y.amax().max(1.0) * 10.0);
    }

    #[test]
    fn identity_loadings_pick_rows() {
        let y = DMatrix::from_fn(4, 6, |i, l| (i * 10 + l) as f64);
        let f = DMatrix::<f64>::identity(6, 2);
        let proj = project(&f, &y);
        assert_eq!(proj, y.columns(0, 2).transpose());
    }

    #[test]
    fn imputation_degenerate_noise_and_untouched_cells() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let f = linalg::orthonormalize_columns(&DMatrix::from_fn(5, 2, |l, k| ((l + 1) as f64).powi(k as i32))).unwrap();
        let beta = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, -1.0, 0.5, 0.0]);
        let mut y = DMatrix::from_element(3, 5, 7.0);
        let before = y.clone();
        impute_missing(&mut y, &[], &f, &beta, 1.0, &mut rng);
        assert_eq!(y, before);
        let missing = [(0, 1), (2, 4)];
        impute_missing(&mut y, &missing, &f, &beta, 1e-12, &mut rng);
        for &(i, l) in &missing {
            let fit = f.row(l).dot(&beta.column(i).transpose());
            assert!((y[(i, l)] - fit).abs() < 1e-8);
        }
        assert_eq!(y[(1, 1)], 7.0);
        // Long-run mean of repeated draws equals the fitted value.
        let draws: Vec<f64> = (0..50_000)
            .map(|_| {
                impute_missing(&mut y, &missing[..1], &f, &beta, 0.7, &mut rng);
                y[(0, 1)]
            })
            .collect();
        let fit = f.row(1).dot(&beta.column(0).transpose());
        assert!((stats::mean(&draws) - fit).abs() < 3.0 * stats::mc_standard_error(&draws));
    }

    #[test]
    fn working_likelihood_differs_by_a_constant() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (n, m, k) = (7, 12, 3);
        let f = linalg::orthonormalize_columns(&DMatrix::from_fn(m, k, |_, _| rng.sample::<f64, _>(StandardNormal))).unwrap();
        let y = DMatrix::from_fn(n, m, |_, _| rng.sample::<f64, _>(StandardNormal));
        let y_proj = project(&f, &y);
        let diffs: Vec<f64> = (0..50)
            .map(|_| {
                let beta = DMatrix::from_fn(k, n, |_, _| 3.0 * rng.sample::<f64, _>(StandardNormal));
                log_likelihood_full(&y, &f, &beta, 0.8) - log_likelihood_working(&y_proj, &beta, 0.8)
            })
            .collect();
        let range = diffs.iter().cloned().fold(f64::MIN, f64::max) - diffs.iter().cloned().fold(f64::MAX, f64::min);
        assert!(range < 1e-8, "range {range}");
    }

    #[test]
    fn gamma_conditional_mean_formula() {
        // With a point-mass prior on the coefficients, the coefficient draw
        // is 0 and each gamma is N(l / Q, 1 / Q).
        let design = DMatrix::from_fn(3, 2, |i, j| if j == 0 { 1.0 } else { i as f64 });
        let y = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let sg = DVector::from_vec(vec![0.5, 1.0, 2.0]);
        let prior = DVector::from_element(2, 1e-30);
        let sigma = 0.3;
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (coef, _) = sample_regression_block(&design, &y, sigma, &sg, &prior, &mut rng).unwrap();
        assert!(coef.amax() < 1e-12);
        let draws: Vec<DVector<f64>> = (0..40_000)
            .map(|_| sample_regression_block(&design, &y, sigma, &sg, &prior, &mut rng).unwrap().1)
            .collect();
        for i in 0..3 {
            let q = 1.0 / (sigma * sigma) + 1.0 / (sg[i] * sg[i]);
            let mean = y[i] / (sigma * sigma) / q;
            let v: Vec<f64> = draws.iter().map(|d| d[i]).collect();
            assert!((stats::mean(&v) - mean).abs() < 4.0 * stats::mc_standard_error(&v));
        }
    }

    #[test]
    fn vanishing_subject_scales_kill_gamma() {
        let design = DMatrix::from_fn(4, 2, |i, j| if j == 0 { 1.0 } else { i as f64 });
        let y = DVector::from_vec(vec![1.0, 2.0, 2.5, 4.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (_, gamma) = sample_regression_block(
            &design,
            &y,
            0.5,
            &DVector::from_element(4, 1e-12),
            &DVector::from_element(2, 10.0),
            &mut rng,
        )
        .unwrap();
        assert!(gamma.amax() < 1e-9);
    }

    #[test]
    fn sigma_eps_precision_moment() {
        let data = toy_data(6, 10, 1, 7);
        let mut s = GibbsSampler::new(&data, &quick_config(2)).unwrap();
        let rss = residual_sum_of_squares(&s.y, &s.state.basis.f, &s.state.reg.beta);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let prec: Vec<f64> = (0..100_000)
            .map(|_| {
                s.step_sigma_eps(&mut rng);
                s.state.reg.sigma_eps.powi(-2)
            })
            .collect();
        let expected = 30.0 / (rss / 2.0);
        assert!((stats::mean(&prec) - expected).abs() < 3.0 * stats::mc_standard_error(&prec));
    }

    #[test]
    fn beta_is_sum_of_parts_and_loadings_orthonormal() {
        let data = toy_data(10, 16, 2, 9);
        let cfg = quick_config(3);
        let mut s = GibbsSampler::new(&data, &cfg).unwrap();
        let mut rng = chain_rng(1, 0);
        for t in 0..30 {
            s.iterate(t, &mut rng).unwrap();
            let r = &s.state.reg;
            let mut rebuilt = r.clone();
            rebuilt.rebuild_beta(&s.x);
            assert!((&rebuilt.beta - &r.beta).amax() < 1e-10);
            assert!(linalg::orthonormality_error(&s.state.basis.f) < 1e-8);
            let direct = project(&s.state.basis.f, &s.y);
            assert!((direct - &r.y_proj).amax() < 1e-10);
        }
    }

    #[test]
    fn runs_are_deterministic_and_sized() {
        let data = toy_data(10, 16, 2, 10);
        let cfg = quick_config(2);
        let a = run_gibbs(&data, &cfg).unwrap();
        let b = run_gibbs(&data, &cfg).unwrap();
        assert!(a.same_draws(&b));
        assert_eq!(a.n_draws(), cfg.n_retained());
        assert!(a.draws.iter().all(|d| linalg::orthonormality_error(&d.f) < 1e-8));
        let (c, _) = run_chain(&data, &cfg, 1, |_| {}).unwrap();
        assert!(!a.same_draws(&c));
    }

    #[test]
    fn fixed_hypers_are_not_updated() {
        let data = toy_data(10, 16, 2, 11);
        let h = crate::data::FixedHypers {
            a_mu1: 2.5,
            a_mu2: 3.5,
            a_gamma1: 2.0,
            a_gamma2: 4.0,
            nu_gamma: 10.0,
        };
        let cfg = McmcConfig {
            fixed_hypers: Some(h),
            ..quick_config(2)
        };
        let mut s = GibbsSampler::new(&data, &cfg).unwrap();
        let mut rng = chain_rng(0, 0);
        for t in 0..10 {
            s.iterate(t, &mut rng).unwrap();
        }
        let m = &s.state.mgp;
        assert_eq!((m.a_mu1, m.a_mu2, m.a_gamma1, m.a_gamma2, m.nu_gamma), (2.5, 3.5, 2.0, 4.0, 10.0));
    }

    #[test]
    fn too_many_factors_is_rejected() {
        let data = toy_data(4, 16, 1, 12);
        assert!(GibbsSampler::new(&data, &quick_config(5)).is_err());
    }
}
