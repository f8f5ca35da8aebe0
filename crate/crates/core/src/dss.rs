//! Decoupled shrinkage and selection: an adaptive group lasso fitted to the
//! posterior-mean predictions `mu_bar + A_bar x_i`, traced over a penalty
//! path, with the proportion of variability explained (`rho^2`) used to
//! choose a model size.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::archive::DrawArchive;
use crate::error::{Error, Result};
use crate::stats::quantile_sorted;

/// Largest weight; used when a posterior-mean coefficient group vanishes.
pub const WEIGHT_CAP: f64 = 1e12;
pub const DEFAULT_GRID_SIZE: usize = 100;
/// Decades spanned by the penalty grid.
pub const GRID_DECADES: f64 = 4.0;

/// Inputs of the reduced penalized regression.
#[derive(Clone, Debug, PartialEq)]
pub struct DssProblem {
    pub mu_bar: DVector<f64>,
    /// K x p.
    pub a_bar: DMatrix<f64>,
    /// m x K.
    pub f_bar: DMatrix<f64>,
    /// Prediction design, n x p, on the scale the coefficients refer to.
    pub x_tilde: DMatrix<f64>,
    pub weights: DVector<f64>,
    /// Number of grid points `m`, entering the loss normalization.
    pub m: usize,
    /// Column scales for reporting on the raw predictor scale.
    pub raw_scale: Vec<f64>,
}

impl DssProblem {
    pub fn k(&self) -> usize {
        self.a_bar.nrows()
    }

    pub fn p(&self) -> usize {
        self.a_bar.ncols()
    }

    pub fn n(&self) -> usize {
        self.x_tilde.nrows()
    }

    /// Responses `R_i = mu_bar + A_bar x_i`, K x n.
    pub fn responses(&self) -> DMatrix<f64> {
        let mut r = &self.a_bar * self.x_tilde.transpose();
        for (k, mut row) in r.row_iter_mut().enumerate() {
            row.add_scalar_mut(self.mu_bar[k]);
        }
        r
    }

    fn loss_scale(&self) -> f64 {
        (self.n() * self.m) as f64
    }

    /// Reduced loss `(1/nm) sum_i ||R_i - delta0 - Delta x_i||^2`.
    pub fn loss(&self, delta0: &DVector<f64>, delta: &DMatrix<f64>) -> f64 {
        let mut r = self.responses() - delta * self.x_tilde.transpose();
        for (k, mut row) in r.row_iter_mut().enumerate() {
            row.add_scalar_mut(-delta0[k]);
        }
        r.norm_squared() / self.loss_scale()
    }

    /// Smallest penalty at which the empty model is optimal.
    pub fn critical_lambda(&self) -> f64 {
        let r = self.responses();
        let rbar = r.column_mean();
        let mut centered = r;
        for mut col in centered.column_iter_mut() {
            col -= &rbar;
        }
        let g = centered * &self.x_tilde * (2.0 / self.loss_scale());
        (0..self.p()).map(|j| g.column(j).norm() / self.weights[j]).fold(0.0, f64::max)
    }

    /// DSS coefficient functions `F_bar Delta` on the raw predictor scale,
    /// p x m.
    pub fn coefficient_functions(&self, delta: &DMatrix<f64>) -> DMatrix<f64> {
        let mut c = delta.tr_mul(&self.f_bar.transpose());
        for (j, mut row) in c.row_iter_mut().enumerate() {
            row /= self.raw_scale[j];
        }
        c
    }
}

/// Posterior means from `archive`; `x_tilde` defaults to the (standardized)
/// training design. A supplied `x_tilde` must be on the same scale.
pub fn build_dss_problem(archive: &DrawArchive, x_tilde: Option<&DMatrix<f64>>) -> Result<DssProblem> {
    let s = archive.draws.len();
    if s == 0 {
        return Err(Error::invalid("archive has no draws"));
    }
    let first = &archive.draws[0];
    let (k, p) = first.a.shape();
    let m = first.f.nrows();
    let mut mu_bar = DVector::zeros(k);
    let mut a_bar = DMatrix::zeros(k, p);
    let mut f_bar = DMatrix::zeros(m, k);
    for d in &archive.draws {
        mu_bar += &d.mu;
        a_bar += &d.a;
        f_bar += &d.f;
    }
    mu_bar /= s as f64;
    a_bar /= s as f64;
    f_bar /= s as f64;
    let x_tilde = x_tilde.cloned().unwrap_or_else(|| archive.x.clone());
    if x_tilde.ncols() != p {
        return Err(Error::invalid(format!(
            "prediction design has {} columns, expected {p}",
            x_tilde.ncols()
        )));
    }
    let weights = adaptive_weights(&a_bar);
    Ok(DssProblem {
        mu_bar,
        a_bar,
        f_bar,
        x_tilde,
        weights,
        m,
        raw_scale: archive.manifest.standardization.scale.clone(),
    })
}

/// `w_j = 1 / ||A_bar_j||`, capped at `WEIGHT_CAP`.
pub fn adaptive_weights(a_bar: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_fn(a_bar.ncols(), |j, _| {
        let norm = a_bar.column(j).norm();
        if norm < 1.0 / WEIGHT_CAP {
            WEIGHT_CAP
        } else {
            (1.0 / norm).min(WEIGHT_CAP)
        }
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverSettings {
    /// Stop when no coefficient moves more than this in a sweep.
    pub tol: f64,
    pub max_sweeps: usize,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_sweeps: 10_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroupLassoFit {
    pub lambda: f64,
    pub delta0: DVector<f64>,
    /// K x p.
    pub delta: DMatrix<f64>,
    pub sweeps: usize,
    pub converged: bool,
    /// Largest violation of the optimality conditions.
    pub kkt_residual: f64,
}

impl GroupLassoFit {
    pub fn model_size(&self) -> usize {
        (0..self.delta.ncols()).filter(|&j| self.delta.column(j).iter().any(|v| *v != 0.0)).count()
    }
}

/// Largest KKT violation of `(delta0, delta)` at `lambda`: for active groups
/// `||grad_j + lambda w_j Delta_j / ||Delta_j|| ||`, for inactive groups
/// `max(0, ||grad_j|| - lambda w_j)`, and `||grad_0||` for the intercept.
pub fn kkt_residual(prob: &DssProblem, lambda: f64, delta0: &DVector<f64>, delta: &DMatrix<f64>) -> f64 {
    let scale = 2.0 / prob.loss_scale();
    let mut r = prob.responses() - delta * prob.x_tilde.transpose();
    for (k, mut row) in r.row_iter_mut().enumerate() {
        row.add_scalar_mut(-delta0[k]);
    }
    let grad = -(&r * &prob.x_tilde) * scale;
    let mut worst = (r.column_sum() * scale).norm();
    for j in 0..prob.p() {
        let g = grad.column(j);
        let dj = delta.column(j);
        let norm = dj.norm();
        let v = if norm > 0.0 {
            (g + dj * (lambda * prob.weights[j] / norm)).norm()
        } else {
            (g.norm() - lambda * prob.weights[j]).max(0.0)
        };
        worst = worst.max(v);
    }
    worst
}

/// Block coordinate descent for
/// `(1/nm) sum_i ||R_i - delta0 - Delta x_i||^2 + lambda sum_j w_j ||Delta_j||`,
/// started from `warm` when given.
pub fn solve_group_lasso(
    prob: &DssProblem,
    lambda: f64,
    warm: Option<&DMatrix<f64>>,
    settings: &SolverSettings,
) -> GroupLassoFit {
    let (k, p) = (prob.k(), prob.p());
    let scale = 2.0 / prob.loss_scale();
    let x = &prob.x_tilde;
    let col_ss: Vec<f64> = (0..p).map(|j| x.column(j).norm_squared() * scale).collect();
    let mut delta = warm.cloned().unwrap_or_else(|| DMatrix::zeros(k, p));
    let responses = prob.responses();

    // Residual without the intercept, then the intercept in closed form.
    let mut resid = &responses - &delta * x.transpose();
    let mut delta0 = resid.column_mean();
    for mut col in resid.column_iter_mut() {
        col -= &delta0;
    }

    let mut sweeps = 0;
    let mut converged = false;
    while sweeps < settings.max_sweeps {
        sweeps += 1;
        let mut max_change = 0.0_f64;
        for j in 0..p {
            if col_ss[j] == 0.0 {
                continue;
            }
            let xj = x.column(j);
            let old = delta.column(j).clone_owned();
            let z = &resid * xj * scale + &old * col_ss[j];
            let zn = z.norm();
            let thresh = lambda * prob.weights[j];
            let new = if zn <= thresh {
                DVector::zeros(k)
            } else {
                z * ((1.0 - thresh / zn) / col_ss[j])
            };
            let change = &new - &old;
            let c = change.amax();
            if c > 0.0 {
                resid -= &change * xj.transpose();
                delta.set_column(j, &new);
            }
            max_change = max_change.max(c);
        }
        let shift = resid.column_mean();
        for mut col in resid.column_iter_mut() {
            col -= &shift;
        }
        delta0 += &shift;
        max_change = max_change.max(shift.amax());
        if max_change < settings.tol {
            converged = true;
            break;
        }
    }
    let mut kkt = kkt_residual(prob, lambda, &delta0, &delta);
    if let Some((d0, d)) = polish_active_set(prob, lambda, &delta) {
        let polished = kkt_residual(prob, lambda, &d0, &d);
        if polished <= kkt && objective(prob, lambda, &d0, &d) <= objective(prob, lambda, &delta0, &delta) {
            delta0 = d0;
            delta = d;
            kkt = polished;
        }
    }
    GroupLassoFit {
        lambda,
        delta0,
        delta,
        sweeps,
        converged,
        kkt_residual: kkt,
    }
}

/// Penalized objective at `(delta0, delta)`.
pub fn objective(prob: &DssProblem, lambda: f64, delta0: &DVector<f64>, delta: &DMatrix<f64>) -> f64 {
    let penalty: f64 = (0..prob.p()).map(|j| prob.weights[j] * delta.column(j).norm()).sum();
    prob.loss(delta0, delta) + lambda * penalty
}

/// Newton iterations on the active groups of `delta`, where the penalty is
/// smooth, with the intercept profiled out. Coordinate descent gets close
/// cheaply but crawls on correlated designs; a few Newton steps from there
/// reach machine precision. Returns `None` if the active set is empty or a
/// step leaves it.
fn polish_active_set(prob: &DssProblem, lambda: f64, delta: &DMatrix<f64>) -> Option<(DVector<f64>, DMatrix<f64>)> {
    let k = prob.k();
    let active: Vec<usize> = (0..prob.p()).filter(|&j| delta.column(j).norm() > 0.0).collect();
    if active.is_empty() {
        return None;
    }
    let scale = 2.0 / prob.loss_scale();
    let x = &prob.x_tilde;
    let xbar = x.row_mean();
    let mut xc = x.select_columns(&active);
    for (s, mut col) in xc.column_iter_mut().enumerate() {
        col.add_scalar_mut(-xbar[active[s]]);
    }
    let mut rc = prob.responses();
    let rbar = rc.column_mean();
    for mut col in rc.column_iter_mut() {
        col -= &rbar;
    }
    let gram = xc.tr_mul(&xc) * scale;
    let xr = &rc * &xc * scale;
    let na = active.len();
    let mut d = delta.select_columns(&active);
    for _ in 0..50 {
        let mut grad = &d * &gram - &xr;
        let mut hess = DMatrix::zeros(na * k, na * k);
        for s in 0..na {
            for t in 0..na {
                for c in 0..k {
                    hess[(s * k + c, t * k + c)] = gram[(s, t)];
                }
            }
            let col = d.column(s).clone_owned();
            let norm = col.norm();
            if norm == 0.0 {
                return None;
            }
            let w = lambda * prob.weights[active[s]];
            grad.column_mut(s).axpy(w / norm, &col, 1.0);
            let block = (DMatrix::identity(k, k) - &col * col.transpose() / (norm * norm)) * (w / norm);
            let mut view = hess.view_mut((s * k, s * k), (k, k));
            view += block;
        }
        let g = DVector::from_column_slice(grad.as_slice());
        if g.amax() < 1e-14 {
            break;
        }
        let step = hess.cholesky()?.solve(&g);
        d -= DMatrix::from_column_slice(k, na, step.as_slice());
        if step.amax() < 1e-15 * (1.0 + d.amax()) {
            break;
        }
    }
    let mut out = DMatrix::zeros(k, prob.p());
    for (s, &j) in active.iter().enumerate() {
        out.set_column(j, &d.column(s));
    }
    let d0 = (prob.responses() - &out * x.transpose()).column_mean();
    if d0.iter().chain(out.iter()).any(|v| !v.is_finite()) {
        return None;
    }
    Some((d0, out))
}

/// Per-draw `||A X'||^2`, `n m sigma^2 + sum sigma_gamma^2` pairs.
fn signal_and_noise(archive: &DrawArchive, x_tilde: &DMatrix<f64>) -> Vec<(DMatrix<f64>, f64)> {
    let n = x_tilde.nrows() as f64;
    let m = archive.manifest.m as f64;
    archive
        .draws
        .iter()
        .map(|d| {
            let fit = &d.a * x_tilde.transpose();
            let noise = n * m * d.sigma_eps * d.sigma_eps + d.sigma_gamma.iter().map(|s| s * s).sum::<f64>();
            (fit, noise)
        })
        .collect()
}

/// Draws of `rho^2 = ||A X'||^2 / (||A X'||^2 + n m sigma^2 + sum sigma_gamma^2)`.
pub fn rho2_posterior(archive: &DrawArchive, x_tilde: &DMatrix<f64>) -> Vec<f64> {
    signal_and_noise(archive, x_tilde)
        .into_iter()
        .map(|(fit, noise)| {
            let s = fit.norm_squared();
            s / (s + noise)
        })
        .collect()
}

/// Draws of `rho^2_lambda`, which adds `||(A - Delta) X'||^2` to the
/// denominator.
pub fn rho2_lambda_posterior(archive: &DrawArchive, delta: &DMatrix<f64>, x_tilde: &DMatrix<f64>) -> Vec<f64> {
    let sparse_fit = delta * x_tilde.transpose();
    signal_and_noise(archive, x_tilde)
        .into_iter()
        .map(|(fit, noise)| {
            let s = fit.norm_squared();
            let gap = (&fit - &sparse_fit).norm_squared();
            s / (s + noise + gap)
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Rho2Summary {
    pub mean: f64,
    pub lo90: f64,
    pub hi90: f64,
    pub lo95: f64,
    pub hi95: f64,
}

impl Rho2Summary {
    pub fn from_draws(draws: &[f64]) -> Self {
        let mut v = draws.to_vec();
        v.sort_by(f64::total_cmp);
        Self {
            mean: crate::stats::mean(&v),
            lo90: quantile_sorted(&v, 0.05),
            hi90: quantile_sorted(&v, 0.95),
            lo95: quantile_sorted(&v, 0.025),
            hi95: quantile_sorted(&v, 0.975),
        }
    }

    pub fn contains90(&self, value: f64) -> bool {
        self.lo90 <= value && value <= self.hi90
    }
}

/// Solution path with the selection summary.
#[derive(Clone, Debug, PartialEq)]
pub struct DssPath {
    /// Decreasing.
    pub lambda_grid: Vec<f64>,
    pub fits: Vec<GroupLassoFit>,
    pub model_size: Vec<usize>,
    pub rho2_lambda: Vec<Rho2Summary>,
    pub rho2_full: Rho2Summary,
    pub selected_index: usize,
    /// No path point met the rule; the smallest penalty was chosen.
    pub fallback: bool,
}

impl DssPath {
    pub fn selected(&self) -> &GroupLassoFit {
        &self.fits[self.selected_index]
    }

    /// Indices of the predictors in the selected model.
    pub fn selected_predictors(&self) -> Vec<usize> {
        let d = &self.selected().delta;
        (0..d.ncols()).filter(|&j| d.column(j).iter().any(|v| *v != 0.0)).collect()
    }

    pub fn max_kkt_residual(&self) -> f64 {
        self.fits.iter().map(|f| f.kkt_residual).fold(0.0, f64::max)
    }

    /// Writes the selection-summary data: one row per path point plus a
    /// final reference row for the full model (lambda 0, all predictors).
    pub fn write_csv(&self, path: &Path, p: usize) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["model_size", "lambda", "rho2_mean", "rho2_lo90", "rho2_hi90", "rho2_lo95", "rho2_hi95"])?;
        let row = |size: usize, lambda: f64, s: &Rho2Summary| {
            vec![
                size.to_string(),
                lambda.to_string(),
                s.mean.to_string(),
                s.lo90.to_string(),
                s.hi90.to_string(),
                s.lo95.to_string(),
                s.hi95.to_string(),
            ]
        };
        for (i, s) in self.rho2_lambda.iter().enumerate() {
            w.write_record(row(self.model_size[i], self.lambda_grid[i], s))?;
        }
        w.write_record(row(p, 0.0, &self.rho2_full))?;
        w.flush()?;
        Ok(())
    }
}

/// `grid_size` penalties from the critical value down `GRID_DECADES` decades.
pub fn lambda_grid(lambda_max: f64, grid_size: usize) -> Vec<f64> {
    if grid_size == 1 {
        return vec![lambda_max];
    }
    (0..grid_size)
        .map(|t| lambda_max * 10f64.powf(-GRID_DECADES * t as f64 / (grid_size - 1) as f64))
        .collect()
}

/// Traces the path with warm starts and applies the selection rule: the
/// smallest model whose 90% interval for `rho^2_lambda` contains
/// `E[rho^2 | Y]`; among path points of that size the largest penalty wins.
pub fn run_selection(prob: &DssProblem, archive: &DrawArchive, grid_size: usize) -> Result<DssPath> {
    run_selection_with(prob, archive, grid_size, &SolverSettings::default())
}

pub fn run_selection_with(
    prob: &DssProblem,
    archive: &DrawArchive,
    grid_size: usize,
    settings: &SolverSettings,
) -> Result<DssPath> {
    if grid_size == 0 {
        return Err(Error::invalid("grid size must be positive"));
    }
    let lambda_max = prob.critical_lambda();
    if !(lambda_max > 0.0) || !lambda_max.is_finite() {
        return Err(Error::Numerical("critical penalty is not positive".into()));
    }
    // Nudged up so rounding in the thresholding cannot keep a group alive
    // at the top of the path.
    let grid = lambda_grid(lambda_max * (1.0 + 1e-9), grid_size);
    let mut fits: Vec<GroupLassoFit> = Vec::with_capacity(grid.len());
    for &lambda in &grid {
        let warm = fits.last().map(|f| f.delta.clone());
        fits.push(solve_group_lasso(prob, lambda, warm.as_ref(), settings));
    }
    let model_size: Vec<usize> = fits.iter().map(GroupLassoFit::model_size).collect();
    let rho2_lambda: Vec<Rho2Summary> = fits
        .par_iter()
        .map(|f| Rho2Summary::from_draws(&rho2_lambda_posterior(archive, &f.delta, &prob.x_tilde)))
        .collect();
    let rho2_full = Rho2Summary::from_draws(&rho2_posterior(archive, &prob.x_tilde));

    let target = rho2_full.mean;
    let chosen = (0..grid.len())
        .filter(|&i| rho2_lambda[i].contains90(target))
        .min_by_key(|&i| (model_size[i], i));
    let (selected_index, fallback) = match chosen {
        Some(i) => (i, false),
        None => (grid.len() - 1, true),
    };
    Ok(DssPath {
        lambda_grid: grid,
        fits,
        model_size,
        rho2_lambda,
        rho2_full,
        selected_index,
        fallback,
    })
}
