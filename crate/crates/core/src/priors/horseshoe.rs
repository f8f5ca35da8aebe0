use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::linalg::gamma_rate;

/// Keeps precision draws finite, and their squares too.
pub(crate) fn clamp_precision(v: f64) -> f64 {
    v.clamp(1e-150, 1e150)
}

/// Grouped horseshoe: `alpha_{j,k} ~ N(0, sigma_{j,k}^2)`,
/// `sigma_{j,k} ~ C+(0, lambda_j)`, `lambda_j ~ C+(0, lambda_0)`,
/// `lambda_0 ~ C+(0, p^{-1/2})`, each half-Cauchy written as a pair of
/// gamma variables.
#[derive(Clone, Debug, PartialEq)]
pub struct HorseshoeState {
    /// p x K.
    pub sigma_alpha: DMatrix<f64>,
    /// p x K.
    pub xi_alpha: DMatrix<f64>,
    pub lambda_j: DVector<f64>,
    pub xi_lambda_j: DVector<f64>,
    pub lambda_0: f64,
    pub xi_lambda_0: f64,
}

impl HorseshoeState {
    /// All scales and auxiliaries at one.
    pub fn new(p: usize, k: usize) -> Self {
        Self {
            sigma_alpha: DMatrix::from_element(p, k, 1.0),
            xi_alpha: DMatrix::from_element(p, k, 1.0),
            lambda_j: DVector::from_element(p, 1.0),
            xi_lambda_j: DVector::from_element(p, 1.0),
            lambda_0: 1.0,
            xi_lambda_0: 1.0,
        }
    }

    /// Exact joint draw from the prior, top of the hierarchy first.
    pub fn sample_prior<R: Rng + ?Sized>(p: usize, k: usize, rng: &mut R) -> Self {
        let xi_lambda_0 = gamma_rate(0.5, p as f64, rng);
        let prec_0 = clamp_precision(gamma_rate(0.5, xi_lambda_0, rng));
        let mut s = Self::new(p, k);
        s.xi_lambda_0 = xi_lambda_0;
        s.lambda_0 = prec_0.powf(-0.5);
        for j in 0..p {
            let xi_j = gamma_rate(0.5, prec_0, rng);
            let prec_j = clamp_precision(gamma_rate(0.5, xi_j, rng));
            s.xi_lambda_j[j] = xi_j;
            s.lambda_j[j] = prec_j.powf(-0.5);
            for c in 0..k {
                let xi = gamma_rate(0.5, prec_j, rng);
                let prec = clamp_precision(gamma_rate(0.5, xi, rng));
                s.xi_alpha[(j, c)] = xi;
                s.sigma_alpha[(j, c)] = prec.powf(-0.5);
            }
        }
        s
    }

    /// Per-coefficient scales and their auxiliaries. `a` is K x p.
    pub fn update_local<R: Rng + ?Sized>(&mut self, a: &DMatrix<f64>, rng: &mut R) {
        let (k, p) = a.shape();
        for j in 0..p {
            let prec_j = self.lambda_j[j].powi(-2);
            for c in 0..k {
                let alpha = a[(c, j)];
                let prec = clamp_precision(gamma_rate(1.0, self.xi_alpha[(j, c)] + alpha * alpha / 2.0, rng));
                self.sigma_alpha[(j, c)] = prec.powf(-0.5);
                self.xi_alpha[(j, c)] = gamma_rate(1.0, prec_j + prec, rng);
            }
        }
    }

    /// Predictor-level scales `lambda_j`.
    pub fn update_predictor<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let (p, k) = self.sigma_alpha.shape();
        let prec_0 = self.lambda_0.powi(-2);
        for j in 0..p {
            let rate = self.xi_lambda_j[j] + self.xi_alpha.row(j).sum();
            let prec_j = clamp_precision(gamma_rate((k as f64 + 1.0) / 2.0, rate, rng));
            self.lambda_j[j] = prec_j.powf(-0.5);
            self.xi_lambda_j[j] = gamma_rate(1.0, prec_0 + prec_j, rng);
        }
    }

    /// Global scale `lambda_0`.
    pub fn update_global<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let p = self.lambda_j.len() as f64;
        let rate = self.xi_lambda_0 + self.xi_lambda_j.sum();
        let prec_0 = clamp_precision(gamma_rate((p + 1.0) / 2.0, rate, rng));
        self.lambda_0 = prec_0.powf(-0.5);
        self.xi_lambda_0 = gamma_rate(1.0, p + prec_0, rng);
    }

    /// One full pass: local, predictor, then global block.
    pub fn update<R: Rng + ?Sized>(&mut self, a: &DMatrix<f64>, rng: &mut R) {
        self.update_local(a, rng);
        self.update_predictor(rng);
        self.update_global(rng);
    }

    /// Prior variances of `alpha_{., k}` (length p).
    pub fn variances_for_factor(&self, k: usize) -> DVector<f64> {
        self.sigma_alpha.column(k).map(|s| s * s)
    }
}
