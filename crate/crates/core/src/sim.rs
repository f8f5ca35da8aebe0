//! Synthetic data with known coefficient functions, scoring metrics and a
//! replicate runner for simulation studies.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample as sample_indices;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{FunctionalDataset, McmcConfig};
use crate::dss::{build_dss_problem, run_selection};
use crate::error::{Error, Result};
use crate::gibbs::run_chain;
use crate::linalg::orthonormalize_columns;
use crate::stats;
use crate::summaries::{gbpv_ranking, summarize, CoefficientSummary};

/// Number of true loadings.
pub const TRUE_K: usize = 4;
/// Correlation between neighbouring predictors.
pub const AR_CORRELATION: f64 = 0.75;

/// Generating parameters retained for scoring.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimTruth {
    /// m x K*.
    pub f_star: DMatrix<f64>,
    /// K* x p.
    pub a_star: DMatrix<f64>,
    pub mu_star: DVector<f64>,
    /// K* x n.
    pub gamma_star: DMatrix<f64>,
    pub sigma_star: f64,
    pub rsnr: f64,
    pub support: Vec<bool>,
    /// n x m noiseless curves.
    pub y_star: DMatrix<f64>,
}

impl SimTruth {
    /// True coefficient functions `sum_k f*_k(tau) alpha*_{j,k}`, p x m.
    pub fn coefficient_functions(&self) -> DMatrix<f64> {
        self.a_star.tr_mul(&self.f_star.transpose())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimSettings {
    pub n: usize,
    pub m: usize,
    pub p: usize,
    pub p1: usize,
    pub rsnr: f64,
}

impl Default for SimSettings {
    fn default() -> Self {
        Self {
            n: 100,
            m: 30,
            p: 20,
            p1: 10,
            rsnr: 5.0,
        }
    }
}

impl SimSettings {
    pub fn validate(&self) -> Result<()> {
        if self.p1 > self.p {
            return Err(Error::invalid(format!("p1 = {} exceeds p = {}", self.p1, self.p)));
        }
        if self.n < 2 || self.m < TRUE_K + 1 {
            return Err(Error::invalid(format!(
                "need n >= 2 and m >= {}, got n={}, m={}",
                TRUE_K + 1,
                self.n,
                self.m
            )));
        }
        if !(self.rsnr > 0.0 && self.rsnr.is_finite()) {
            return Err(Error::invalid("rsnr must be positive and finite"));
        }
        Ok(())
    }
}

/// `m` equally spaced points on [0, 1].
pub fn unit_grid(m: usize) -> DVector<f64> {
    DVector::from_fn(m, |l, _| l as f64 / (m - 1) as f64)
}

/// Discrete orthonormal polynomials of degree 0..=max_degree on `tau`.
pub fn orthonormal_polynomials(tau: &DVector<f64>, max_degree: usize) -> Result<DMatrix<f64>> {
    // Centre and scale first to keep the Vandermonde columns well conditioned.
    let lo = tau.min();
    let hi = tau.max();
    let u = tau.map(|t| 2.0 * (t - lo) / (hi - lo) - 1.0);
    let v = DMatrix::from_fn(tau.len(), max_degree + 1, |l, d| u[l].powi(d as i32));
    let mut q = orthonormalize_columns(&v)?;
    // Fix signs so each polynomial ends positive.
    for mut col in q.column_iter_mut() {
        if col[col.len() - 1] < 0.0 {
            col.neg_mut();
        }
    }
    Ok(q)
}

/// True loadings: the constant `1/sqrt(m)` then degrees 2..=K*.
pub fn true_loadings(tau: &DVector<f64>) -> Result<DMatrix<f64>> {
    let poly = orthonormal_polynomials(tau, TRUE_K)?;
    let mut f = DMatrix::zeros(tau.len(), TRUE_K);
    f.set_column(0, &poly.column(0));
    for k in 1..TRUE_K {
        f.set_column(k, &poly.column(k + 1));
    }
    Ok(f)
}

/// Zero-based indices `round(linspace(1, p, p1)) - 1`, deduplicated.
pub fn support_indices(p: usize, p1: usize) -> Vec<usize> {
    if p1 == 0 {
        return Vec::new();
    }
    if p1 == 1 {
        return vec![0];
    }
    let mut idx: Vec<usize> = (0..p1)
        .map(|t| {
            let v = 1.0 + (p as f64 - 1.0) * t as f64 / (p1 - 1) as f64;
            v.round() as usize - 1
        })
        .collect();
    idx.dedup();
    idx
}

/// Predictors with `Cov(x_j, x_j') = rho^|j - j'|` (stationary AR(1) across columns).
pub fn ar_design<R: Rng + ?Sized>(n: usize, p: usize, rho: f64, rng: &mut R) -> DMatrix<f64> {
    let innov = (1.0 - rho * rho).sqrt();
    let mut x = DMatrix::zeros(n, p);
    for i in 0..n {
        let mut prev: f64 = rng.sample(StandardNormal);
        x[(i, 0)] = prev;
        for j in 1..p {
            let z: f64 = rng.sample(StandardNormal);
            prev = rho * prev + innov * z;
            x[(i, j)] = prev;
        }
    }
    x
}

fn truncated_poisson<R: Rng + ?Sized>(lo: usize, hi: usize, rng: &mut R) -> usize {
    let pois = Poisson::new(1.0).expect("valid rate");
    loop {
        let v = pois.sample(rng) as usize;
        if (lo..=hi).contains(&v) {
            return v;
        }
    }
}

/// Simulated dataset and its truth; fully observed.
pub fn generate_dataset(settings: &SimSettings, seed: u64) -> Result<(FunctionalDataset, SimTruth)> {
    settings.validate()?;
    let SimSettings { n, m, p, p1, rsnr } = *settings;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tau = unit_grid(m);
    let f_star = true_loadings(&tau)?;
    let x = ar_design(n, p, AR_CORRELATION, &mut rng);

    let support_idx = support_indices(p, p1);
    let mut support = vec![false; p];
    let mut a_star = DMatrix::zeros(TRUE_K, p);
    for &j in &support_idx {
        support[j] = true;
        let kj = truncated_poisson(1, TRUE_K, &mut rng);
        let mut ks = sample_indices(&mut rng, TRUE_K, kj).into_vec();
        ks.sort_unstable();
        for k in ks {
            let z: f64 = rng.sample(StandardNormal);
            a_star[(k, j)] = z / (k + 1) as f64;
        }
    }
    let mu_star = DVector::from_fn(TRUE_K, |k, _| 1.0 / (k + 1) as f64);
    let gamma_star = DMatrix::from_fn(TRUE_K, n, |k, _| rng.sample::<f64, _>(StandardNormal) / (k + 1) as f64);
    let mut beta = &a_star * x.transpose() + gamma_star.clone();
    for (k, mut row) in beta.row_iter_mut().enumerate() {
        row.add_scalar_mut(mu_star[k]);
    }
    let y_star = (&f_star * beta).transpose();
    let sigma_star = stats::std_dev(y_star.as_slice(), 1) / rsnr;
    let y = DMatrix::from_fn(n, m, |i, l| y_star[(i, l)] + sigma_star * rng.sample::<f64, _>(StandardNormal));

    let names = (1..=p).map(|j| format!("x{j}")).collect();
    let data = FunctionalDataset::complete(y, tau, x, names)?;
    Ok((
        data,
        SimTruth {
            f_star,
            a_star,
            mu_star,
            gamma_star,
            sigma_star,
            rsnr,
            support,
            y_star,
        },
    ))
}

/// Masks `round(frac * n * m)` cells chosen uniformly, keeping at least one
/// observation per subject. Returns the masked cells.
pub fn inject_missing<R: Rng + ?Sized>(
    data: &mut FunctionalDataset,
    frac: f64,
    rng: &mut R,
) -> Result<Vec<(usize, usize)>> {
    if !(0.0..1.0).contains(&frac) {
        return Err(Error::invalid(format!("missing fraction must be in [0, 1), got {frac}")));
    }
    let (n, m) = data.y.shape();
    let target = (frac * (n * m) as f64).round() as usize;
    let mut remaining: Vec<usize> = vec![m; n];
    let mut cells = Vec::with_capacity(target);
    for idx in sample_indices(rng, n * m, n * m).into_iter() {
        if cells.len() == target {
            break;
        }
        let (i, l) = (idx / m, idx % m);
        if data.observed[(i, l)] && remaining[i] > 1 {
            data.observed[(i, l)] = false;
            data.y[(i, l)] = f64::NAN;
            remaining[i] -= 1;
            cells.push((i, l));
        }
    }
    cells.sort_unstable();
    Ok(cells)
}

/// Root mean square difference between estimated and true coefficient
/// functions (both p x m).
pub fn rmse(estimate: &DMatrix<f64>, truth: &DMatrix<f64>) -> f64 {
    assert_eq!(estimate.shape(), truth.shape());
    ((estimate - truth).norm_squared() / estimate.len() as f64).sqrt()
}

/// Mean pointwise interval width and the fraction of truth values inside
/// the pointwise intervals.
pub fn mciw_and_coverage(summary: &CoefficientSummary, truth: &DMatrix<f64>) -> (f64, f64) {
    let lo = &summary.pointwise_lo;
    let hi = &summary.pointwise_hi;
    let total = lo.len() as f64;
    let width = (hi - lo).sum() / total;
    let covered = lo
        .iter()
        .zip(hi.iter())
        .zip(truth.iter())
        .filter(|((l, h), t)| *l <= *t && *t <= *h)
        .count();
    (width, covered as f64 / total)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RocPoint {
    pub model_size: usize,
    pub fpr: f64,
    pub tpr: f64,
}

/// ROC points for the nested models formed by the top `s` predictors of
/// `ranking`, for `s = 0..=p`.
pub fn roc_points(ranking: &[usize], support: &[bool]) -> Vec<RocPoint> {
    let positives = support.iter().filter(|s| **s).count();
    let negatives = support.len() - positives;
    let rate = |hits: usize, total: usize| if total == 0 { 0.0 } else { hits as f64 / total as f64 };
    let mut tp = 0;
    let mut fp = 0;
    let mut out = vec![RocPoint {
        model_size: 0,
        fpr: 0.0,
        tpr: 0.0,
    }];
    for (s, &j) in ranking.iter().enumerate() {
        if support[j] {
            tp += 1;
        } else {
            fp += 1;
        }
        out.push(RocPoint {
            model_size: s + 1,
            fpr: rate(fp, negatives),
            tpr: rate(tp, positives),
        });
    }
    out
}

/// Pointwise average of curves sharing model sizes.
pub fn average_roc(curves: &[Vec<RocPoint>]) -> Vec<RocPoint> {
    let Some(first) = curves.first() else {
        return Vec::new();
    };
    let c = curves.len() as f64;
    (0..first.len())
        .map(|s| RocPoint {
            model_size: first[s].model_size,
            fpr: curves.iter().map(|r| r[s].fpr).sum::<f64>() / c,
            tpr: curves.iter().map(|r| r[s].tpr).sum::<f64>() / c,
        })
        .collect()
}

/// Trapezoidal area under a curve ordered by model size.
pub fn roc_auc(points: &[RocPoint]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0)
        .sum()
}

/// Order in which predictors enter along a penalty path (largest penalty
/// first); predictors entering together are ordered by coefficient norm,
/// and those never entering come last by posterior-mean norm.
pub fn path_ranking(path: &crate::dss::DssPath, a_bar: &DMatrix<f64>) -> Vec<usize> {
    let p = a_bar.ncols();
    let mut entry = vec![(usize::MAX, 0.0); p];
    for (t, fit) in path.fits.iter().enumerate() {
        for j in 0..p {
            let norm = fit.delta.column(j).norm();
            if norm > 0.0 && entry[j].0 == usize::MAX {
                entry[j] = (t, norm);
            }
        }
    }
    let mut idx: Vec<usize> = (0..p).collect();
    idx.sort_by(|&a, &b| {
        entry[a]
            .0
            .cmp(&entry[b].0)
            .then(entry[b].1.total_cmp(&entry[a].1))
            .then(a_bar.column(b).norm().total_cmp(&a_bar.column(a).norm()))
            .then(a.cmp(&b))
    });
    idx
}

/// One scored method on one replicate. Interval metrics are absent for
/// point estimators.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MethodResult {
    pub method: String,
    pub p: usize,
    pub replicate: usize,
    pub rmse: f64,
    pub mciw: Option<f64>,
    pub coverage: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RocRow {
    pub method: String,
    pub p: usize,
    pub model_size: usize,
    pub fpr: f64,
    pub tpr: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReplicateOutcome {
    pub replicate: usize,
    pub results: Vec<MethodResult>,
    pub dss_roc: Vec<RocPoint>,
    pub gbpv_roc: Vec<RocPoint>,
    pub dss_selected_size: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub sim: SimSettings,
    pub replicates: usize,
    pub seed: u64,
    pub mcmc: McmcConfig,
    /// Also fit the fixed-basis ablation.
    pub ablation: bool,
    /// Penalty grid size for selection.
    pub grid_size: usize,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            sim: SimSettings::default(),
            replicates: 20,
            seed: 1,
            mcmc: McmcConfig {
                n_iter: 3000,
                burn_in: 1000,
                thin: 2,
                ..McmcConfig::default()
            },
            ablation: true,
            grid_size: crate::dss::DEFAULT_GRID_SIZE,
        }
    }
}

/// Seeds `(data, mcmc)` for replicate `r` derived from the master seed.
pub fn replicate_seeds(master: u64, r: usize) -> (u64, u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(r as u64 + 1);
    (rng.next_u64(), rng.next_u64())
}

/// Generates, fits and scores a single replicate.
pub fn run_replicate(config: &StudyConfig, r: usize) -> Result<ReplicateOutcome> {
    let (data_seed, mcmc_seed) = replicate_seeds(config.seed, r);
    let (data, truth) = generate_dataset(&config.sim, data_seed)?;
    let alpha_star = truth.coefficient_functions();
    let p = config.sim.p;
    let mut results = Vec::new();

    let mut mcmc = config.mcmc.clone();
    mcmc.seed = mcmc_seed;
    mcmc.fix_basis = false;
    let (archive, _) = run_chain(&data, &mcmc, 0, |_| {})?;
    let summary = summarize(&archive, 0.95)?;
    let (mciw, cov) = mciw_and_coverage(&summary, &alpha_star);
    results.push(MethodResult {
        method: "fosr".into(),
        p,
        replicate: r,
        rmse: rmse(&summary.mean, &alpha_star),
        mciw: Some(mciw),
        coverage: Some(cov),
    });

    let prob = build_dss_problem(&archive, None)?;
    let path = run_selection(&prob, &archive, config.grid_size)?;
    let dss_est = prob.coefficient_functions(&path.selected().delta);
    results.push(MethodResult {
        method: "fosr-dss".into(),
        p,
        replicate: r,
        rmse: rmse(&dss_est, &alpha_star),
        mciw: None,
        coverage: None,
    });
    let dss_roc = roc_points(&path_ranking(&path, &prob.a_bar), &truth.support);
    let gbpv_roc = roc_points(&gbpv_ranking(&summary), &truth.support);

    if config.ablation {
        let mut fixed = mcmc.clone();
        fixed.fix_basis = true;
        let (arch_fixed, _) = run_chain(&data, &fixed, 0, |_| {})?;
        let sum_fixed = summarize(&arch_fixed, 0.95)?;
        let (mciw, cov) = mciw_and_coverage(&sum_fixed, &alpha_star);
        results.push(MethodResult {
            method: "basis-spline".into(),
            p,
            replicate: r,
            rmse: rmse(&sum_fixed.mean, &alpha_star),
            mciw: Some(mciw),
            coverage: Some(cov),
        });
    }

    Ok(ReplicateOutcome {
        replicate: r,
        results,
        dss_roc,
        gbpv_roc,
        dss_selected_size: path.model_size[path.selected_index],
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct StudyOutcome {
    pub replicates: Vec<ReplicateOutcome>,
}

impl StudyOutcome {
    pub fn results(&self) -> Vec<MethodResult> {
        self.replicates.iter().flat_map(|r| r.results.iter().cloned()).collect()
    }

    /// Mean of `field` over replicates for `method`.
    pub fn method_mean(&self, method: &str, field: impl Fn(&MethodResult) -> Option<f64>) -> Option<f64> {
        let vals: Vec<f64> = self
            .results()
            .iter()
            .filter(|r| r.method == method)
            .filter_map(&field)
            .collect();
        (!vals.is_empty()).then(|| stats::mean(&vals))
    }

    pub fn mean_auc(&self, dss: bool) -> f64 {
        let aucs: Vec<f64> = self
            .replicates
            .iter()
            .map(|r| roc_auc(if dss { &r.dss_roc } else { &r.gbpv_roc }))
            .collect();
        stats::mean(&aucs)
    }

    pub fn roc_rows(&self, p: usize) -> Vec<RocRow> {
        let mut rows = Vec::new();
        for (method, dss) in [("fosr-dss", true), ("fosr-gbpv", false)] {
            let curves: Vec<Vec<RocPoint>> = self
                .replicates
                .iter()
                .map(|r| if dss { r.dss_roc.clone() } else { r.gbpv_roc.clone() })
                .collect();
            rows.extend(average_roc(&curves).into_iter().map(|pt| RocRow {
                method: method.into(),
                p,
                model_size: pt.model_size,
                fpr: pt.fpr,
                tpr: pt.tpr,
            }));
        }
        rows
    }

    pub fn write_csvs(&self, results_path: &Path, roc_path: &Path, p: usize) -> Result<()> {
        let mut w = csv::Writer::from_path(results_path)?;
        for r in self.results() {
            w.serialize(r)?;
        }
        w.flush()?;
        let mut w = csv::Writer::from_path(roc_path)?;
        for r in self.roc_rows(p) {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Runs all replicates in parallel; results come back in replicate order.
pub fn run_study(config: &StudyConfig) -> Result<StudyOutcome> {
    config.sim.validate()?;
    config.mcmc.validate()?;
    if config.replicates == 0 {
        return Err(Error::invalid("need at least one replicate"));
    }
    let replicates = (0..config.replicates)
        .into_par_iter()
        .map(|r| run_replicate(config, r))
        .collect::<Result<Vec<_>>>()?;
    Ok(StudyOutcome { replicates })
}
