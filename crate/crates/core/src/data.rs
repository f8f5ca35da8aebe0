//! Data containers, validation and CSV ingestion for curves and designs.
//!
//! Curves are stored on a common grid. Subjects observed on different grids
//! are represented as missing cells on the union grid; those cells are
//! imputed inside the sampler.
//!
//! File conventions:
//!
//! * curves: wide CSV whose header row holds the grid values `tau`, one row
//!   per subject, one column per grid point. An empty cell or the literal
//!   `NA` marks a missing observation.
//! * design: CSV with a header row of predictor names and one row per subject.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Observed curves `Y` (n x m) with a missingness mask, the grid and the
/// scalar design `X` (n x p).
#[derive(Clone, Debug, PartialEq)]
pub struct FunctionalDataset {
    /// Responses; missing cells hold `NaN`.
    pub y: DMatrix<f64>,
    pub observed: DMatrix<bool>,
    pub tau: DVector<f64>,
    pub x: DMatrix<f64>,
    pub predictor_names: Vec<String>,
}

impl FunctionalDataset {
    pub fn new(
        y: DMatrix<f64>,
        observed: DMatrix<bool>,
        tau: DVector<f64>,
        x: DMatrix<f64>,
        predictor_names: Vec<String>,
    ) -> Result<Self> {
        let (n, m) = y.shape();
        if n < 2 || m < 2 {
            return Err(Error::invalid(format!(
                "need at least 2 subjects and 2 grid points, got n={n}, m={m}"
            )));
        }
        if observed.shape() != (n, m) {
            return Err(Error::invalid("observation mask does not match curve dimensions"));
        }
        if tau.len() != m {
            return Err(Error::invalid(format!(
                "grid has {} points but curves have {m} columns",
                tau.len()
            )));
        }
        if tau.iter().any(|t| !t.is_finite()) {
            return Err(Error::invalid("grid contains non-finite values"));
        }
        if tau.as_slice().windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("grid must be strictly increasing without duplicates"));
        }
        if x.nrows() != n {
            return Err(Error::invalid(format!(
                "design has {} rows but there are {n} curves",
                x.nrows()
            )));
        }
        if predictor_names.len() != x.ncols() {
            return Err(Error::invalid("number of predictor names does not match design columns"));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("design contains non-finite entries"));
        }
        for i in 0..n {
            let mut any = false;
            for l in 0..m {
                if observed[(i, l)] {
                    any = true;
                    if !y[(i, l)].is_finite() {
                        return Err(Error::invalid(format!(
                            "subject {} has a non-finite observed value at column {}",
                            i + 1,
                            l + 1
                        )));
                    }
                }
            }
            if !any {
                return Err(Error::invalid(format!("subject {} has no observations", i + 1)));
            }
        }
        let mut y = y;
        for (v, &obs) in y.iter_mut().zip(observed.iter()) {
            if !obs {
                *v = f64::NAN;
            }
        }
        Ok(Self {
            y,
            observed,
            tau,
            x,
            predictor_names,
        })
    }

    /// Fully observed dataset.
    pub fn complete(
        y: DMatrix<f64>,
        tau: DVector<f64>,
        x: DMatrix<f64>,
        predictor_names: Vec<String>,
    ) -> Result<Self> {
        let observed = DMatrix::from_element(y.nrows(), y.ncols(), true);
        Self::new(y, observed, tau, x, predictor_names)
    }

    pub fn n(&self) -> usize {
        self.y.nrows()
    }

    pub fn m(&self) -> usize {
        self.y.ncols()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn n_missing(&self) -> usize {
        self.observed.iter().filter(|o| !**o).count()
    }

    /// Missing cells as `(subject, grid index)`, row-major.
    pub fn missing_cells(&self) -> Vec<(usize, usize)> {
        let mut cells = Vec::new();
        for i in 0..self.n() {
            for l in 0..self.m() {
                if !self.observed[(i, l)] {
                    cells.push((i, l));
                }
            }
        }
        cells
    }

    /// Copy of `Y` with each missing cell replaced by its column mean over
    /// observed subjects (or the overall mean when a column is entirely missing).
    pub fn mean_imputed(&self) -> DMatrix<f64> {
        let (n, m) = self.y.shape();
        let mut total = 0.0;
        let mut count = 0usize;
        for (v, o) in self.y.iter().zip(self.observed.iter()) {
            if *o {
                total += v;
                count += 1;
            }
        }
        let overall = total / count as f64;
        let mut out = self.y.clone();
        for l in 0..m {
            let (s, c) = (0..n)
                .filter(|&i| self.observed[(i, l)])
                .fold((0.0, 0usize), |(s, c), i| (s + self.y[(i, l)], c + 1));
            let fill = if c > 0 { s / c as f64 } else { overall };
            for i in 0..n {
                if !self.observed[(i, l)] {
                    out[(i, l)] = fill;
                }
            }
        }
        out
    }
}

fn is_missing(cell: &str) -> bool {
    let c = cell.trim();
    c.is_empty() || c == "NA"
}

fn parse_cell(cell: &str, what: &str, row: usize, col: usize) -> Result<f64> {
    cell.trim().parse::<f64>().map_err(|_| {
        Error::invalid(format!(
            "{what}: non-numeric cell {:?} at row {row}, column {col}",
            cell
        ))
    })
}

/// Parses a wide curves CSV (header row = grid) from a reader.
pub fn read_curves<R: Read>(reader: R) -> Result<(DMatrix<f64>, DMatrix<bool>, DVector<f64>)> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header = rdr.headers()?.clone();
    let tau: Vec<f64> = header
        .iter()
        .enumerate()
        .map(|(c, h)| parse_cell(h, "curves header (grid)", 0, c + 1))
        .collect::<Result<_>>()?;
    let m = tau.len();
    let mut values = Vec::new();
    let mut mask = Vec::new();
    let mut n = 0;
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() != m {
            return Err(Error::invalid(format!(
                "curves row {} has {} cells, expected {m}",
                r + 1,
                rec.len()
            )));
        }
        for (c, cell) in rec.iter().enumerate() {
            if is_missing(cell) {
                values.push(f64::NAN);
                mask.push(false);
            } else {
                let v = parse_cell(cell, "curves", r + 1, c + 1)?;
                if !v.is_finite() {
                    return Err(Error::invalid(format!(
                        "curves: non-finite value at row {}, column {}",
                        r + 1,
                        c + 1
                    )));
                }
                values.push(v);
                mask.push(true);
            }
        }
        n += 1;
    }
    Ok((
        DMatrix::from_row_slice(n, m, &values),
        DMatrix::from_row_slice(n, m, &mask),
        DVector::from_vec(tau),
    ))
}

/// Parses a design CSV (header row = predictor names) from a reader.
pub fn read_design<R: Read>(reader: R) -> Result<(DMatrix<f64>, Vec<String>)> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let names: Vec<String> = rdr.headers()?.iter().map(|s| s.trim().to_string()).collect();
    let p = names.len();
    let mut values = Vec::new();
    let mut n = 0;
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() != p {
            return Err(Error::invalid(format!(
                "design row {} has {} cells, expected {p}",
                r + 1,
                rec.len()
            )));
        }
        for (c, cell) in rec.iter().enumerate() {
            if is_missing(cell) {
                return Err(Error::invalid(format!(
                    "design: missing value at row {}, column {}",
                    r + 1,
                    c + 1
                )));
            }
            values.push(parse_cell(cell, "design", r + 1, c + 1)?);
        }
        n += 1;
    }
    Ok((DMatrix::from_row_slice(n, p, &values), names))
}

/// Loads and validates a dataset from a curves file and a design file.
pub fn load_dataset(curves_path: &Path, design_path: &Path) -> Result<FunctionalDataset> {
    let (y, observed, tau) = read_curves(File::open(curves_path)?)?;
    let (x, names) = read_design(File::open(design_path)?)?;
    FunctionalDataset::new(y, observed, tau, x, names)
}

pub fn write_curves<W: Write>(ds: &FunctionalDataset, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(ds.tau.iter().map(|t| t.to_string()))?;
    for i in 0..ds.n() {
        w.write_record((0..ds.m()).map(|l| {
            if ds.observed[(i, l)] {
                ds.y[(i, l)].to_string()
            } else {
                String::new()
            }
        }))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_design<W: Write>(ds: &FunctionalDataset, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(&ds.predictor_names)?;
    for i in 0..ds.n() {
        w.write_record((0..ds.p()).map(|j| ds.x[(i, j)].to_string()))?;
    }
    w.flush()?;
    Ok(())
}

/// Writes the dataset in the same layout `load_dataset` reads.
pub fn write_dataset(ds: &FunctionalDataset, curves_path: &Path, design_path: &Path) -> Result<()> {
    write_curves(ds, File::create(curves_path)?)?;
    write_design(ds, File::create(design_path)?)?;
    Ok(())
}

/// Column centering and scaling applied to the design before fitting.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub center: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardization {
    pub fn identity(p: usize) -> Self {
        Self {
            center: vec![0.0; p],
            scale: vec![1.0; p],
        }
    }

    /// Applies the recorded transform to a raw design (e.g. a prediction design).
    pub fn apply(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.ncols() != self.center.len() {
            return Err(Error::invalid(format!(
                "design has {} columns, standardization expects {}",
                x.ncols(),
                self.center.len()
            )));
        }
        Ok(DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| {
            (x[(i, j)] - self.center[j]) / self.scale[j]
        }))
    }

    /// Maps coefficients of the standardized design back to the raw scale.
    /// Returns the raw intercept and slopes for a linear predictor
    /// `intercept + sum_j z_j b_j` with `z_j = (x_j - c_j) / s_j`.
    pub fn to_raw_coefficients(&self, intercept: f64, coefs: &[f64]) -> (f64, Vec<f64>) {
        let raw: Vec<f64> = coefs.iter().zip(&self.scale).map(|(b, s)| b / s).collect();
        let shift: f64 = raw.iter().zip(&self.center).map(|(b, c)| b * c).sum();
        (intercept - shift, raw)
    }

    pub fn to_standardized_coefficients(&self, intercept: f64, coefs: &[f64]) -> (f64, Vec<f64>) {
        let shift: f64 = coefs.iter().zip(&self.center).map(|(b, c)| b * c).sum();
        let std: Vec<f64> = coefs.iter().zip(&self.scale).map(|(b, s)| b * s).collect();
        (intercept + shift, std)
    }
}

/// Centers each column to mean zero and scales it to unit standard deviation
/// (divisor `n`). A constant column is rejected: the model carries its own
/// intercept.
pub fn standardize_design(x: &DMatrix<f64>) -> Result<(DMatrix<f64>, Standardization)> {
    let n = x.nrows() as f64;
    let mut center = Vec::with_capacity(x.ncols());
    let mut scale = Vec::with_capacity(x.ncols());
    for j in 0..x.ncols() {
        let col = x.column(j);
        let mean = col.sum() / n;
        let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let sd = var.sqrt();
        if !(sd > 1e-12 * mean.abs().max(1.0)) {
            return Err(Error::invalid(format!(
                "design column {} has zero variance",
                j + 1
            )));
        }
        center.push(mean);
        scale.push(sd);
    }
    let record = Standardization { center, scale };
    let z = record.apply(x)?;
    Ok((z, record))
}

/// Values for hyperparameters that are held fixed instead of slice-sampled.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FixedHypers {
    pub a_mu1: f64,
    pub a_mu2: f64,
    pub a_gamma1: f64,
    pub a_gamma2: f64,
    pub nu_gamma: f64,
}

/// Gamma(shape, rate) prior on the observation precision. `shape = rate = 0`
/// is the Jeffreys prior `1 / sigma^2`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrecisionPrior {
    pub shape: f64,
    pub rate: f64,
}

impl PrecisionPrior {
    pub const JEFFREYS: PrecisionPrior = PrecisionPrior {
        shape: 0.0,
        rate: 0.0,
    };
}

impl Default for PrecisionPrior {
    fn default() -> Self {
        Self::JEFFREYS
    }
}

/// Sampler settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McmcConfig {
    /// Number of factors `K`.
    pub k: usize,
    pub n_iter: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    /// Keep the loadings fixed at an orthonormal spline basis (ablation).
    pub fix_basis: bool,
    pub fixed_hypers: Option<FixedHypers>,
    /// Interior knots for the spline basis; `None` uses `min(ceil(m/4), 35)`.
    pub num_knots: Option<usize>,
    /// Standardize the design columns before fitting.
    pub standardize: bool,
    pub sigma_eps_prior: PrecisionPrior,
}

impl Default for McmcConfig {
    fn default() -> Self {
        Self {
            k: 6,
            n_iter: 8000,
            burn_in: 2000,
            thin: 3,
            seed: 0,
            fix_basis: false,
            fixed_hypers: None,
            num_knots: None,
            standardize: true,
            sigma_eps_prior: PrecisionPrior::JEFFREYS,
        }
    }
}

impl McmcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k < 1 {
            return Err(Error::invalid("K must be at least 1"));
        }
        if self.n_iter < 1 || self.thin < 1 {
            return Err(Error::invalid("n_iter and thin must be positive"));
        }
        if self.burn_in >= self.n_iter {
            return Err(Error::invalid(format!(
                "burn_in ({}) must be smaller than n_iter ({})",
                self.burn_in, self.n_iter
            )));
        }
        if let Some(h) = &self.fixed_hypers {
            let a = [h.a_mu1, h.a_mu2, h.a_gamma1, h.a_gamma2];
            if a.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
                return Err(Error::invalid("fixed shrinkage hyperparameters must be positive"));
            }
            if !(2.0..=128.0).contains(&h.nu_gamma) {
                return Err(Error::invalid("fixed nu_gamma must lie in [2, 128]"));
            }
        }
        let pr = &self.sigma_eps_prior;
        if pr.shape < 0.0 || pr.rate < 0.0 {
            return Err(Error::invalid("observation precision prior must be non-negative"));
        }
        Ok(())
    }

    /// Number of retained draws: `floor((n_iter - burn_in) / thin)`.
    pub fn n_retained(&self) -> usize {
        (self.n_iter - self.burn_in) / self.thin
    }

    /// Whether 0-based iteration `t` is stored.
    pub fn is_retained(&self, t: usize) -> bool {
        t >= self.burn_in && (t + 1 - self.burn_in) % self.thin == 0
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: McmcConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }
}
