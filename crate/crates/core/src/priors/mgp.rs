use nalgebra::{DMatrix, DVector};
use rand::Rng;
use statrs::function::gamma::ln_gamma;

use super::horseshoe::clamp_precision;
use super::slice::{slice_sample, SliceSettings};
use crate::data::FixedHypers;
use crate::linalg::gamma_rate;

/// Shape of the Gamma(2, 1) hyperprior on the MGP shape parameters.
pub const A_PRIOR_SHAPE: f64 = 2.0;
pub const NU_MIN: f64 = 2.0;
pub const NU_MAX: f64 = 128.0;

/// Multiplicative gamma processes for the intercepts and the subject effects.
///
/// `sigma_mu_k^{-2} = prod_{l <= k} delta_mu_l`, and likewise for
/// `sigma_gamma_k`; subject effects get an extra heavy-tail factor
/// `sigma_gamma_{k,i} = sigma_gamma_k / sqrt(xi_{k,i})`.
#[derive(Clone, Debug, PartialEq)]
pub struct MgpState {
    pub delta_mu: DVector<f64>,
    pub delta_gamma: DVector<f64>,
    /// K x n.
    pub xi_gamma: DMatrix<f64>,
    pub nu_gamma: f64,
    pub a_mu1: f64,
    pub a_mu2: f64,
    pub a_gamma1: f64,
    pub a_gamma2: f64,
    pub sigma_mu: DVector<f64>,
    pub sigma_gamma_k: DVector<f64>,
    /// K x n.
    pub sigma_gamma_ki: DMatrix<f64>,
    /// Slice-sampler bracket failures so far.
    pub slice_failures: usize,
}

/// `prod_{l <= k} delta_l^{-1/2}` for every k.
fn cumulative_scales(delta: &DVector<f64>) -> DVector<f64> {
    let mut prec = 1.0;
    DVector::from_iterator(
        delta.len(),
        delta.iter().map(|d| {
            prec *= d;
            prec.powf(-0.5)
        }),
    )
}

/// Sequential MGP update of `delta` given per-factor sums of squares
/// `ss_k` (already weighted) and the number of terms per factor.
fn update_deltas<R: Rng + ?Sized>(
    delta: &mut DVector<f64>,
    ss: &[f64],
    per_factor: f64,
    a1: f64,
    a2: f64,
    rng: &mut R,
) {
    let k = delta.len();
    for l in 0..k {
        // tau^{(l)}_h = prod_{g <= h, g != l} delta_g, for h >= l.
        let mut tau = (0..l).map(|g| delta[g]).product::<f64>();
        let mut rate = 1.0;
        for h in l..k {
            if h > l {
                tau *= delta[h];
            }
            rate += 0.5 * tau * ss[h];
        }
        let a = if l == 0 { a1 } else { a2 };
        let shape = a + (k - l) as f64 * per_factor / 2.0;
        delta[l] = clamp_precision(gamma_rate(shape, rate, rng));
    }
}

/// Log density on `theta = log a` of the Gamma(2, 1) hyperprior times the
/// Gamma(a, 1) likelihood of `deltas`.
pub(crate) fn log_target_log_a(theta: f64, deltas: &[f64]) -> f64 {
    let a = theta.exp();
    if !a.is_finite() || a <= 0.0 {
        return f64::NEG_INFINITY;
    }
    let prior = (A_PRIOR_SHAPE - 1.0) * theta - a;
    let lik: f64 = deltas.iter().map(|d| (a - 1.0) * d.ln() - d - ln_gamma(a)).sum();
    prior + lik + theta
}

/// Log density of `nu` under Uniform(2, 128) times the Gamma(nu/2, nu/2)
/// likelihood of `count` values with the given sums of `log xi` and `xi`.
pub(crate) fn log_target_nu(nu: f64, count: f64, sum_log_xi: f64, sum_xi: f64) -> f64 {
    if !(NU_MIN..=NU_MAX).contains(&nu) {
        return f64::NEG_INFINITY;
    }
    let h = nu / 2.0;
    count * (h * h.ln() - ln_gamma(h)) + (h - 1.0) * sum_log_xi - h * sum_xi
}

impl MgpState {
    /// Unit precisions, shapes at their prior mean 2 and `nu` at the middle
    /// of its support.
    pub fn new(k: usize, n: usize) -> Self {
        let a = A_PRIOR_SHAPE;
        Self {
            delta_mu: DVector::from_element(k, 1.0),
            delta_gamma: DVector::from_element(k, 1.0),
            xi_gamma: DMatrix::from_element(k, n, 1.0),
            nu_gamma: (NU_MIN + NU_MAX) / 2.0,
            a_mu1: a,
            a_mu2: a,
            a_gamma1: a,
            a_gamma2: a,
            sigma_mu: DVector::from_element(k, 1.0),
            sigma_gamma_k: DVector::from_element(k, 1.0),
            sigma_gamma_ki: DMatrix::from_element(k, n, 1.0),
            slice_failures: 0,
        }
    }

    pub fn with_fixed(mut self, h: &FixedHypers) -> Self {
        self.a_mu1 = h.a_mu1;
        self.a_mu2 = h.a_mu2;
        self.a_gamma1 = h.a_gamma1;
        self.a_gamma2 = h.a_gamma2;
        self.nu_gamma = h.nu_gamma;
        self
    }

    /// Draws the precisions and heavy-tail factors from the prior at the
    /// current hyperparameters.
    pub fn sample_prior<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let k = self.delta_mu.len();
        for l in 0..k {
            let (am, ag) = if l == 0 { (self.a_mu1, self.a_gamma1) } else { (self.a_mu2, self.a_gamma2) };
            self.delta_mu[l] = clamp_precision(gamma_rate(am, 1.0, rng));
            self.delta_gamma[l] = clamp_precision(gamma_rate(ag, 1.0, rng));
        }
        let h = self.nu_gamma / 2.0;
        for v in self.xi_gamma.iter_mut() {
            *v = clamp_precision(gamma_rate(h, h, rng));
        }
        self.refresh_mu_scales();
        self.refresh_gamma_scales();
    }

    pub fn refresh_mu_scales(&mut self) {
        self.sigma_mu = cumulative_scales(&self.delta_mu);
    }

    pub fn refresh_gamma_scales(&mut self) {
        self.sigma_gamma_k = cumulative_scales(&self.delta_gamma);
        let (k, n) = self.xi_gamma.shape();
        for c in 0..k {
            for i in 0..n {
                self.sigma_gamma_ki[(c, i)] = self.sigma_gamma_k[c] / self.xi_gamma[(c, i)].sqrt();
            }
        }
    }

    /// Intercept precisions `delta_mu` given `mu`.
    pub fn update_mu<R: Rng + ?Sized>(&mut self, mu: &DVector<f64>, rng: &mut R) {
        let ss: Vec<f64> = mu.iter().map(|v| v * v).collect();
        update_deltas(&mut self.delta_mu, &ss, 1.0, self.a_mu1, self.a_mu2, rng);
        self.refresh_mu_scales();
    }

    /// Subject-effect precisions `delta_gamma` and heavy-tail factors
    /// `xi_gamma` given `gamma` (K x n).
    pub fn update_gamma<R: Rng + ?Sized>(&mut self, gamma: &DMatrix<f64>, rng: &mut R) {
        let (k, n) = gamma.shape();
        let ss: Vec<f64> = (0..k)
            .map(|c| (0..n).map(|i| gamma[(c, i)].powi(2) * self.xi_gamma[(c, i)]).sum())
            .collect();
        update_deltas(&mut self.delta_gamma, &ss, n as f64, self.a_gamma1, self.a_gamma2, rng);
        self.sigma_gamma_k = cumulative_scales(&self.delta_gamma);
        let h = self.nu_gamma / 2.0;
        for c in 0..k {
            let var_k = self.sigma_gamma_k[c].powi(2);
            for i in 0..n {
                let rate = h + gamma[(c, i)].powi(2) / (2.0 * var_k);
                self.xi_gamma[(c, i)] = clamp_precision(gamma_rate(h + 0.5, rate, rng));
            }
        }
        self.refresh_gamma_scales();
    }

    /// One slice-sampling update of each of `a_mu1, a_mu2, a_gamma1,
    /// a_gamma2, nu_gamma`. Returns the number of bracket failures in this
    /// call; on failure the value is kept.
    pub fn update_hypers<R: Rng + ?Sized>(&mut self, rng: &mut R) -> usize {
        let mut failures = 0;
        let a_settings = SliceSettings::log_shape();
        let mut step_a = |current: f64, deltas: &[f64], rng: &mut R| {
            let d = slice_sample(current.ln(), |t| log_target_log_a(t, deltas), &a_settings, rng);
            failures += d.bracket_failed as usize;
            d.value.exp()
        };
        let dm = self.delta_mu.as_slice().to_vec();
        let dg = self.delta_gamma.as_slice().to_vec();
        self.a_mu1 = step_a(self.a_mu1, &dm[..1], rng);
        self.a_mu2 = step_a(self.a_mu2, &dm[1..], rng);
        self.a_gamma1 = step_a(self.a_gamma1, &dg[..1], rng);
        self.a_gamma2 = step_a(self.a_gamma2, &dg[1..], rng);

        let count = self.xi_gamma.len() as f64;
        let sum_log: f64 = self.xi_gamma.iter().map(|v| v.ln()).sum();
        let sum: f64 = self.xi_gamma.sum();
        let d = slice_sample(
            self.nu_gamma,
            |nu| log_target_nu(nu, count, sum_log, sum),
            &SliceSettings::nu(),
            rng,
        );
        failures += d.bracket_failed as usize;
        self.nu_gamma = d.value.clamp(NU_MIN, NU_MAX);
        self.slice_failures += failures;
        failures
    }
}
