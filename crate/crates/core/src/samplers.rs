//! Exact draws from `N(Q^{-1} l, Q^{-1})` with
//! `Q = X' Sigma_y^{-1} X + Sigma_alpha^{-1}` and `l = X' Sigma_y^{-1} y`,
//! where both covariance matrices are diagonal.
//!
//! The Cholesky sampler costs `O(n p^2 + p^3)`; the data-augmentation sampler
//! works with an `n x n` system and costs `O(n^2 p + n^3)`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::{backward_solve, cholesky_with_jitter, forward_solve, standard_normal_vector};

/// One Gaussian regression draw for a single factor.
#[derive(Clone, Debug)]
pub struct RegressionDrawProblem<'a> {
    /// n x (p+1) design with the intercept column first.
    pub x: &'a DMatrix<f64>,
    /// Observation variances, length n.
    pub sigma_y_diag: DVector<f64>,
    /// Prior variances, length p+1.
    pub sigma_alpha_diag: DVector<f64>,
    pub y: DVector<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Algorithm {
    Cholesky,
    Fast,
}

impl Algorithm {
    /// The `n x n` sampler is used only when it has fewer unknowns to factor.
    pub fn for_dims(n: usize, n_coef: usize) -> Self {
        if n_coef > n {
            Algorithm::Fast
        } else {
            Algorithm::Cholesky
        }
    }
}

impl RegressionDrawProblem<'_> {
    pub fn validate(&self) -> Result<()> {
        let (n, q) = self.x.shape();
        if self.sigma_y_diag.len() != n || self.y.len() != n || self.sigma_alpha_diag.len() != q {
            return Err(Error::invalid("regression draw: inconsistent dimensions"));
        }
        let bad = |v: &DVector<f64>| v.iter().any(|s| !(*s > 0.0) || !s.is_finite());
        if bad(&self.sigma_y_diag) || bad(&self.sigma_alpha_diag) {
            return Err(Error::Numerical(
                "regression draw: variances must be positive and finite".into(),
            ));
        }
        Ok(())
    }

    fn whitened_design(&self) -> DMatrix<f64> {
        let mut xs = self.x.clone();
        for (i, mut row) in xs.row_iter_mut().enumerate() {
            row /= self.sigma_y_diag[i].sqrt();
        }
        xs
    }

    fn precision_and_linear_term(&self) -> (DMatrix<f64>, DVector<f64>) {
        let xs = self.whitened_design();
        let mut q = xs.tr_mul(&xs);
        for j in 0..q.nrows() {
            q[(j, j)] += 1.0 / self.sigma_alpha_diag[j];
        }
        let y_scaled = self.y.component_div(&self.sigma_y_diag);
        let ell = self.x.tr_mul(&y_scaled);
        (q, ell)
    }

    /// Dense precision `Q` and linear term `l`, for oracles and diagnostics.
    pub fn dense_parameters(&self) -> (DMatrix<f64>, DVector<f64>) {
        self.precision_and_linear_term()
    }

    /// Posterior mean `Q^{-1} l`.
    pub fn posterior_mean(&self) -> Result<DVector<f64>> {
        let (q, ell) = self.precision_and_linear_term();
        Ok(cholesky_with_jitter(q, "regression precision")?.solve(&ell))
    }
}

/// Cholesky sampler: factor `Q = L L'`, solve `L v = l`, `L' m = v`, draw
/// `z ~ N(0, I)`, solve `L' w = z` and return `m + w`.
pub fn sample_gaussian_cholesky<R: Rng + ?Sized>(
    prob: &RegressionDrawProblem,
    rng: &mut R,
) -> Result<DVector<f64>> {
    prob.validate()?;
    let (q, ell) = prob.precision_and_linear_term();
    let chol = cholesky_with_jitter(q, "regression precision")?;
    let l = chol.l_dirty();
    let mut mean = ell;
    forward_solve(l, &mut mean);
    backward_solve(l, &mut mean);
    let mut w = standard_normal_vector(mean.len(), rng);
    backward_solve(l, &mut w);
    Ok(mean + w)
}

/// Data-augmentation sampler for wide designs: `u ~ N(0, Sigma_alpha)`,
/// `delta ~ N(0, I_n)`, `v = X_k u + delta` with `X_k = Sigma_y^{-1/2} X`,
/// solve `(X_k Sigma_alpha X_k' + I) w = Sigma_y^{-1/2} y - v` and return
/// `u + Sigma_alpha X_k' w`.
pub fn sample_gaussian_fast<R: Rng + ?Sized>(
    prob: &RegressionDrawProblem,
    rng: &mut R,
) -> Result<DVector<f64>> {
    prob.validate()?;
    let (n, q) = prob.x.shape();
    let sd_alpha = prob.sigma_alpha_diag.map(f64::sqrt);
    let u = standard_normal_vector(q, rng).component_mul(&sd_alpha);
    let delta = standard_normal_vector(n, rng);

    let xk = prob.whitened_design();
    let v = &xk * &u + delta;
    // X_k Sigma_alpha^{1/2}, so the system matrix is G G' + I.
    let mut g = xk.clone();
    for (j, mut col) in g.column_iter_mut().enumerate() {
        col *= sd_alpha[j];
    }
    let mut m = &g * g.transpose();
    for i in 0..n {
        m[(i, i)] += 1.0;
    }
    let rhs = prob.y.component_div(&prob.sigma_y_diag.map(f64::sqrt)) - v;
    let chol = cholesky_with_jitter(m, "augmented regression system")?;
    let w = chol.solve(&rhs);
    let correction = xk.tr_mul(&w).component_mul(&prob.sigma_alpha_diag);
    Ok(u + correction)
}

/// Draws with the sampler chosen by [`Algorithm::for_dims`].
pub fn sample_regression_coefficients<R: Rng + ?Sized>(
    prob: &RegressionDrawProblem,
    rng: &mut R,
) -> Result<DVector<f64>> {
    match Algorithm::for_dims(prob.x.nrows(), prob.x.ncols()) {
        Algorithm::Cholesky => sample_gaussian_cholesky(prob, rng),
        Algorithm::Fast => sample_gaussian_fast(prob, rng),
    }
}
