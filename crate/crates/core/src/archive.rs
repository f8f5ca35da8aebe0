//! Retained posterior draws and their on-disk layout.
//!
//! An archive directory holds one flat little-endian `f64` file per field plus
//! `archive.json`, which lists the dimensions, the per-draw shape and file of
//! every field, and the run settings. Matrices are stored column-major, draws
//! one after another.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::Standardization;
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "archive.json";
pub const FORMAT_VERSION: u32 = 1;

/// One retained iteration.
#[derive(Clone, Debug, PartialEq)]
pub struct DrawRecord {
    /// Loadings, m x K, orthonormal columns.
    pub f: DMatrix<f64>,
    /// Intercepts, K.
    pub mu: DVector<f64>,
    /// Coefficients on the standardized design, K x p.
    pub a: DMatrix<f64>,
    /// Subject effects, K x n.
    pub gamma: DMatrix<f64>,
    pub sigma_eps: f64,
    /// Subject-effect scales `sigma_gamma_{k,i}`, K x n.
    pub sigma_gamma: DMatrix<f64>,
    /// Smoothing precisions, K.
    pub lambda_f: DVector<f64>,
    /// Imputed values at the missing cells, in `ArchiveManifest::missing_cells` order.
    pub y_imputed: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldSpec {
    pub name: String,
    pub file: String,
    /// Per-draw shape; the file holds `n_draws * prod(shape)` values.
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchiveManifest {
    pub format_version: u32,
    pub n: usize,
    pub m: usize,
    pub p: usize,
    pub k: usize,
    pub n_draws: usize,
    pub seed: u64,
    pub chain: u64,
    pub n_iter: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub fix_basis: bool,
    pub layout: String,
    pub fields: Vec<FieldSpec>,
    pub tau: Vec<f64>,
    pub predictor_names: Vec<String>,
    pub standardization: Standardization,
    pub missing_cells: Vec<(usize, usize)>,
    /// Design used for fitting (after standardization), n x p.
    pub design_file: String,
    /// Wall-clock seconds per iteration (all iterations, including burn-in).
    pub timing_file: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DrawArchive {
    pub manifest: ArchiveManifest,
    pub draws: Vec<DrawRecord>,
    /// Standardized design used for fitting, n x p.
    pub x: DMatrix<f64>,
    pub iteration_seconds: Vec<f64>,
}

fn field_specs(m: usize, n: usize, p: usize, k: usize, n_missing: usize) -> Vec<FieldSpec> {
    let spec = |name: &str, shape: Vec<usize>| FieldSpec {
        name: name.to_string(),
        file: format!("{name}.bin"),
        shape,
    };
    vec![
        spec("F", vec![m, k]),
        spec("mu", vec![k]),
        spec("A", vec![k, p]),
        spec("Gamma", vec![k, n]),
        spec("sigma_eps", vec![1]),
        spec("sigma_gamma", vec![k, n]),
        spec("lambda_f", vec![k]),
        spec("y_imputed", vec![n_missing]),
    ]
}

impl ArchiveManifest {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        n: usize,
        m: usize,
        p: usize,
        k: usize,
        seed: u64,
        chain: u64,
        n_iter: usize,
        burn_in: usize,
        thin: usize,
        fix_basis: bool,
        tau: Vec<f64>,
        predictor_names: Vec<String>,
        standardization: Standardization,
        missing_cells: Vec<(usize, usize)>,
    ) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            n,
            m,
            p,
            k,
            n_draws: 0,
            seed,
            chain,
            n_iter,
            burn_in,
            thin,
            fix_basis,
            layout: "f64 little-endian, column-major, draws concatenated".to_string(),
            fields: field_specs(m, n, p, k, missing_cells.len()),
            tau,
            predictor_names,
            standardization,
            missing_cells,
            design_file: "x.bin".to_string(),
            timing_file: "iteration_seconds.bin".to_string(),
        }
    }
}

fn write_f64s(path: &Path, values: impl Iterator<Item = f64>) -> Result<()> {
    let bytes: Vec<u8> = values.flat_map(f64::to_le_bytes).collect();
    fs::write(path, bytes)?;
    Ok(())
}

fn read_f64s(path: &Path, expected: usize) -> Result<Vec<f64>> {
    let bytes = fs::read(path)?;
    if bytes.len() != expected * 8 {
        return Err(Error::invalid(format!(
            "{}: expected {} values, found {} bytes",
            path.display(),
            expected,
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}

impl DrawRecord {
    fn field_values(&self, name: &str) -> Vec<f64> {
        match name {
            "F" => self.f.as_slice().to_vec(),
            "mu" => self.mu.as_slice().to_vec(),
            "A" => self.a.as_slice().to_vec(),
            "Gamma" => self.gamma.as_slice().to_vec(),
            "sigma_eps" => vec![self.sigma_eps],
            "sigma_gamma" => self.sigma_gamma.as_slice().to_vec(),
            "lambda_f" => self.lambda_f.as_slice().to_vec(),
            "y_imputed" => self.y_imputed.clone(),
            other => unreachable!("unknown archive field {other}"),
        }
    }
}

impl DrawArchive {
    pub fn n_draws(&self) -> usize {
        self.draws.len()
    }

    /// Writes the archive into `dir` (created if needed).
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut manifest = self.manifest.clone();
        manifest.n_draws = self.draws.len();
        for field in &manifest.fields {
            write_f64s(
                &dir.join(&field.file),
                self.draws.iter().flat_map(|d| d.field_values(&field.name)),
            )?;
        }
        write_f64s(&dir.join(&manifest.design_file), self.x.iter().copied())?;
        write_f64s(&dir.join(&manifest.timing_file), self.iteration_seconds.iter().copied())?;
        fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)?)?;
        Ok(())
    }

    pub fn read_dir(dir: &Path) -> Result<Self> {
        let manifest: ArchiveManifest =
            serde_json::from_str(&fs::read_to_string(dir.join(MANIFEST_FILE))?)?;
        if manifest.format_version != FORMAT_VERSION {
            return Err(Error::invalid(format!(
                "unsupported archive format version {}",
                manifest.format_version
            )));
        }
        let s = manifest.n_draws;
        let mut columns = std::collections::HashMap::new();
        for field in &manifest.fields {
            let per: usize = field.shape.iter().product();
            columns.insert(field.name.clone(), (per, read_f64s(&dir.join(&field.file), s * per)?));
        }
        let (m, n, p, k) = (manifest.m, manifest.n, manifest.p, manifest.k);
        let get = |name: &str, d: usize| -> Result<&[f64]> {
            let (per, v) = columns
                .get(name)
                .ok_or_else(|| Error::invalid(format!("archive is missing field {name}")))?;
            Ok(&v[d * per..(d + 1) * per])
        };
        let mut draws = Vec::with_capacity(s);
        for d in 0..s {
            draws.push(DrawRecord {
                f: DMatrix::from_column_slice(m, k, get("F", d)?),
                mu: DVector::from_column_slice(get("mu", d)?),
                a: DMatrix::from_column_slice(k, p, get("A", d)?),
                gamma: DMatrix::from_column_slice(k, n, get("Gamma", d)?),
                sigma_eps: get("sigma_eps", d)?[0],
                sigma_gamma: DMatrix::from_column_slice(k, n, get("sigma_gamma", d)?),
                lambda_f: DVector::from_column_slice(get("lambda_f", d)?),
                y_imputed: get("y_imputed", d)?.to_vec(),
            });
        }
        let x = DMatrix::from_column_slice(n, p, &read_f64s(&dir.join(&manifest.design_file), n * p)?);
        let timing_path = dir.join(&manifest.timing_file);
        let iteration_seconds = if timing_path.exists() {
            read_f64s(&timing_path, manifest.n_iter)?
        } else {
            Vec::new()
        };
        Ok(Self {
            manifest,
            draws,
            x,
            iteration_seconds,
        })
    }

    /// Bitwise equality of everything except wall-clock timings.
    pub fn same_draws(&self, other: &DrawArchive) -> bool {
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        if self.manifest != other.manifest || self.draws.len() != other.draws.len() {
            return false;
        }
        if bits(self.x.as_slice()) != bits(other.x.as_slice()) {
            return false;
        }
        self.draws.iter().zip(&other.draws).all(|(a, b)| {
            self.manifest
                .fields
                .iter()
                .all(|f| bits(&a.field_values(&f.name)) == bits(&b.field_values(&f.name)))
        })
    }

    /// Concatenates the draws of several chains fitted to the same data.
    pub fn pool(archives: Vec<DrawArchive>) -> Result<DrawArchive> {
        let mut iter = archives.into_iter();
        let mut first = iter
            .next()
            .ok_or_else(|| Error::invalid("no archives to pool"))?;
        for other in iter {
            let (a, b) = (&first.manifest, &other.manifest);
            if (a.n, a.m, a.p, a.k) != (b.n, b.m, b.p, b.k) || a.tau != b.tau {
                return Err(Error::invalid("cannot pool archives with different dimensions"));
            }
            first.draws.extend(other.draws);
        }
        first.manifest.n_draws = first.draws.len();
        Ok(first)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_archive() -> DrawArchive {
        let (m, n, p, k) = (4, 3, 2, 2);
        let manifest = ArchiveManifest::new(
            n,
            m,
            p,
            k,
            7,
            0,
            5,
            1,
            2,
            false,
            vec![0.0, 0.25, 0.5, 1.0],
            vec!["a".into(), "b".into()],
            Standardization::identity(p),
            vec![(1, 2)],
        );
        let draws = (0..2)
            .map(|d| {
                let s = d as f64;
                DrawRecord {
                    f: DMatrix::from_fn(m, k, |i, j| (i * 10 + j) as f64 + s),
                    mu: DVector::from_vec(vec![1.0 + s, -2.0]),
                    a: DMatrix::from_fn(k, p, |i, j| (i + 2 * j) as f64 * 0.5 - s),
                    gamma: DMatrix::from_fn(k, n, |i, j| (i * j) as f64 + 0.1),
                    sigma_eps: 0.3 + s,
                    sigma_gamma: DMatrix::from_element(k, n, 1.5),
                    lambda_f: DVector::from_vec(vec![2.0, 3.0]),
                    y_imputed: vec![9.5 + s],
                }
            })
            .collect();
        DrawArchive {
            manifest,
            draws,
            x: DMatrix::from_fn(n, p, |i, j| (i + j) as f64),
            iteration_seconds: vec![0.01; 5],
        }
    }

    #[test]
    fn write_read_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let mut archive = toy_archive();
        archive.write_dir(dir.path()).unwrap();
        archive.manifest.n_draws = archive.draws.len();
        let back = DrawArchive::read_dir(dir.path()).unwrap();
        assert!(back.same_draws(&archive));
        assert_eq!(back, archive);
        // F file holds n_draws * m * K little-endian doubles.
        let bytes = std::fs::read(dir.path().join("F.bin")).unwrap();
        assert_eq!(bytes.len(), 2 * 4 * 2 * 8);
        assert_eq!(f64::from_le_bytes(bytes[8..16].try_into().unwrap()), 10.0);
    }

    #[test]
    fn truncated_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        toy_archive().write_dir(dir.path()).unwrap();
        std::fs::write(dir.path().join("mu.bin"), [0u8; 8]).unwrap();
        assert!(DrawArchive::read_dir(dir.path()).is_err());
    }

    #[test]
    fn pooling_concatenates() {
        let pooled = DrawArchive::pool(vec![toy_archive(), toy_archive()]).unwrap();
        assert_eq!(pooled.n_draws(), 4);
        assert_eq!(pooled.manifest.n_draws, 4);
    }
}
