//! Posterior summaries of the coefficient functions
//! `alpha_j(tau) = sum_k f_k(tau) alpha_{j,k}`: means, pointwise and
//! simultaneous credible bands, and band-based (GBPV) selection.

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::archive::DrawArchive;
use crate::error::{Error, Result};
use crate::stats::quantile_sorted;

/// Fewest draws accepted for a simultaneous band.
pub const MIN_BAND_DRAWS: usize = 100;

/// Coefficient-function draws on the raw predictor scale: one p x m matrix
/// per retained draw.
pub fn coefficient_draws(archive: &DrawArchive) -> Vec<DMatrix<f64>> {
    let scale = &archive.manifest.standardization.scale;
    archive
        .draws
        .iter()
        .map(|d| {
            let mut c = d.a.tr_mul(&d.f.transpose());
            for (j, mut row) in c.row_iter_mut().enumerate() {
                row /= scale[j];
            }
            c
        })
        .collect()
}

/// Entrywise mean of equally shaped matrices.
pub fn mean_matrix(draws: &[DMatrix<f64>]) -> DMatrix<f64> {
    let (r, c) = draws[0].shape();
    draws.iter().fold(DMatrix::zeros(r, c), |acc, d| acc + d) / draws.len() as f64
}

/// A band on the grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Band {
    pub lo: DVector<f64>,
    pub hi: DVector<f64>,
    /// Critical value of the max statistic.
    pub critical: f64,
}

/// `mean +/- q sd`, where `q` is the `level` quantile over draws of
/// `max_l |draw_l - mean_l| / sd_l`. Points with zero spread are left out of
/// the max and get a degenerate band. `draws` is S x m.
pub fn simultaneous_band(draws: &DMatrix<f64>, level: f64) -> Result<Band> {
    let (s, m) = draws.shape();
    if s < MIN_BAND_DRAWS {
        return Err(Error::invalid(format!(
            "simultaneous bands need at least {MIN_BAND_DRAWS} draws, got {s}"
        )));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::invalid("band level must lie in (0, 1)"));
    }
    let (mean, sd) = column_mean_sd(draws);
    let mut maxes: Vec<f64> = (0..s)
        .map(|r| {
            (0..m)
                .filter(|&l| sd[l] > 0.0)
                .map(|l| (draws[(r, l)] - mean[l]).abs() / sd[l])
                .fold(0.0, f64::max)
        })
        .collect();
    maxes.sort_by(f64::total_cmp);
    let q = quantile_sorted(&maxes, level);
    Ok(Band {
        lo: DVector::from_fn(m, |l, _| mean[l] - q * sd[l]),
        hi: DVector::from_fn(m, |l, _| mean[l] + q * sd[l]),
        critical: q,
    })
}

/// Pointwise equal-tailed band from empirical quantiles. `draws` is S x m.
pub fn pointwise_band(draws: &DMatrix<f64>, level: f64) -> (DVector<f64>, DVector<f64>) {
    let m = draws.ncols();
    let tail = (1.0 - level) / 2.0;
    let mut lo = DVector::zeros(m);
    let mut hi = DVector::zeros(m);
    for l in 0..m {
        let mut col: Vec<f64> = draws.column(l).iter().copied().collect();
        col.sort_by(f64::total_cmp);
        lo[l] = quantile_sorted(&col, tail);
        hi[l] = quantile_sorted(&col, 1.0 - tail);
    }
    (lo, hi)
}

fn column_mean_sd(draws: &DMatrix<f64>) -> (DVector<f64>, DVector<f64>) {
    let s = draws.nrows() as f64;
    let mean = draws.row_mean().transpose();
    let sd = DVector::from_fn(draws.ncols(), |l, _| {
        let ss: f64 = draws.column(l).iter().map(|v| (v - mean[l]).powi(2)).sum();
        (ss / (s - 1.0)).sqrt()
    });
    (mean, sd)
}

/// Posterior summary of all coefficient functions (each p x m).
#[derive(Clone, Debug, PartialEq)]
pub struct CoefficientSummary {
    pub tau: Vec<f64>,
    pub predictor_names: Vec<String>,
    pub mean: DMatrix<f64>,
    pub pointwise_lo: DMatrix<f64>,
    pub pointwise_hi: DMatrix<f64>,
    /// Simultaneous band, widened where needed to contain the pointwise band.
    pub simult_lo: DMatrix<f64>,
    pub simult_hi: DMatrix<f64>,
    pub level: f64,
    /// `max_l |mean / sd|` per predictor.
    pub max_abs_z: Vec<f64>,
    /// Fraction of draws whose max statistic falls below `max_abs_z`: the
    /// largest band level at which the band still excludes zero somewhere.
    pub gbpv_score: Vec<f64>,
}

/// Summarizes coefficient-function draws (each p x m) at `level`.
pub fn summarize_draws(
    draws: &[DMatrix<f64>],
    level: f64,
    tau: Vec<f64>,
    predictor_names: Vec<String>,
) -> Result<CoefficientSummary> {
    if draws.is_empty() {
        return Err(Error::invalid("no draws to summarize"));
    }
    let (p, m) = draws[0].shape();
    let s = draws.len();
    let mut out = CoefficientSummary {
        tau,
        predictor_names,
        mean: mean_matrix(draws),
        pointwise_lo: DMatrix::zeros(p, m),
        pointwise_hi: DMatrix::zeros(p, m),
        simult_lo: DMatrix::zeros(p, m),
        simult_hi: DMatrix::zeros(p, m),
        level,
        max_abs_z: vec![0.0; p],
        gbpv_score: vec![0.0; p],
    };
    for j in 0..p {
        let dj = DMatrix::from_fn(s, m, |r, l| draws[r][(j, l)]);
        let (plo, phi) = pointwise_band(&dj, level);
        let band = simultaneous_band(&dj, level)?;
        let (mean, sd) = column_mean_sd(&dj);
        let mut t = 0.0_f64;
        for l in 0..m {
            out.pointwise_lo[(j, l)] = plo[l];
            out.pointwise_hi[(j, l)] = phi[l];
            out.simult_lo[(j, l)] = band.lo[l].min(plo[l]);
            out.simult_hi[(j, l)] = band.hi[l].max(phi[l]);
            if sd[l] > 0.0 {
                t = t.max(mean[l].abs() / sd[l]);
            }
        }
        let below = (0..s)
            .filter(|&r| {
                let mx = (0..m)
                    .filter(|&l| sd[l] > 0.0)
                    .map(|l| (dj[(r, l)] - mean[l]).abs() / sd[l])
                    .fold(0.0, f64::max);
                mx < t
            })
            .count();
        out.max_abs_z[j] = t;
        out.gbpv_score[j] = below as f64 / s as f64;
    }
    Ok(out)
}

/// Summary of an archive on the raw predictor scale.
pub fn summarize(archive: &DrawArchive, level: f64) -> Result<CoefficientSummary> {
    summarize_draws(
        &coefficient_draws(archive),
        level,
        archive.manifest.tau.clone(),
        archive.manifest.predictor_names.clone(),
    )
}

/// Predictor `j` is kept when its simultaneous band excludes zero at some
/// grid point.
pub fn gbpv_select(summary: &CoefficientSummary) -> Vec<bool> {
    (0..summary.mean.nrows())
        .map(|j| {
            (0..summary.mean.ncols()).any(|l| summary.simult_lo[(j, l)] > 0.0 || summary.simult_hi[(j, l)] < 0.0)
        })
        .collect()
}

/// Predictors ordered from strongest to weakest band-based evidence.
pub fn gbpv_ranking(summary: &CoefficientSummary) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..summary.gbpv_score.len()).collect();
    idx.sort_by(|&a, &b| {
        summary.gbpv_score[b]
            .total_cmp(&summary.gbpv_score[a])
            .then(summary.max_abs_z[b].total_cmp(&summary.max_abs_z[a]))
            .then(a.cmp(&b))
    });
    idx
}

/// Writes one CSV per predictor (`<name>.csv`) with columns
/// `tau, mean, pw_lo, pw_hi, sim_lo, sim_hi`.
pub fn write_summary_csvs(summary: &CoefficientSummary, dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut paths = Vec::new();
    for (j, name) in summary.predictor_names.iter().enumerate() {
        let safe: String = name
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() || c == '_' || c == '-' { c } else { '_' })
            .collect();
        let path = dir.join(format!("{j:03}_{safe}.csv"));
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(["tau", "mean", "pw_lo", "pw_hi", "sim_lo", "sim_hi"])?;
        for (l, t) in summary.tau.iter().enumerate() {
            w.write_record([
                t.to_string(),
                summary.mean[(j, l)].to_string(),
                summary.pointwise_lo[(j, l)].to_string(),
                summary.pointwise_hi[(j, l)].to_string(),
                summary.simult_lo[(j, l)].to_string(),
                summary.simult_hi[(j, l)].to_string(),
            ])?;
        }
        w.flush()?;
        paths.push(path);
    }
    let mut sel = std::fs::File::create(dir.join("gbpv.csv"))?;
    writeln!(sel, "predictor,selected,score,max_abs_z")?;
    for (j, keep) in gbpv_select(summary).into_iter().enumerate() {
        writeln!(
            sel,
            "{},{},{},{}",
            summary.predictor_names[j], keep, summary.gbpv_score[j], summary.max_abs_z[j]
        )?;
    }
    Ok(paths)
}
