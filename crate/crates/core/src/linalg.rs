//! Dense linear-algebra and random-variate helpers used by the samplers.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::error::{Error, Result};

/// Relative jitter added once to the diagonal when a factorization fails.
pub const JITTER: f64 = 1e-10;

/// Cholesky factorization `Q = L L'` with a single retry at
/// `Q + 1e-10 * mean(diag(Q)) I`. A second failure reports the smallest pivot
/// of the original matrix.
pub fn cholesky_with_jitter(q: DMatrix<f64>, context: &'static str) -> Result<Cholesky<f64, Dyn>> {
    if q.iter().any(|v| !v.is_finite()) {
        let (index, pivot) = smallest_pivot(&q);
        return Err(Error::Cholesky {
            context,
            index,
            pivot,
        });
    }
    let first = Cholesky::new(q.clone());
    if let Some(c) = first {
        return Ok(c);
    }
    let n = q.nrows();
    let bump = JITTER * q.diagonal().mean();
    let mut jittered = q.clone();
    for i in 0..n {
        jittered[(i, i)] += bump;
    }
    Cholesky::new(jittered).ok_or_else(|| {
        let (index, pivot) = smallest_pivot(&q);
        Error::Cholesky {
            context,
            index,
            pivot,
        }
    })
}

/// Runs an unpivoted Cholesky elimination and returns the smallest squared
/// pivot encountered (stopping at the first non-positive one).
pub fn smallest_pivot(q: &DMatrix<f64>) -> (usize, f64) {
    let n = q.nrows();
    let mut l = DMatrix::<f64>::zeros(n, n);
    let mut best = (0, f64::INFINITY);
    for j in 0..n {
        let mut d = q[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if d < best.1 {
            best = (j, d);
        }
        if !(d > 0.0) || !d.is_finite() {
            return (j, d);
        }
        let djj = d.sqrt();
        l[(j, j)] = djj;
        for i in (j + 1)..n {
            let mut s = q[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / djj;
        }
    }
    best
}

/// Solves `L x = b` in place using only the lower triangle of `l`.
pub fn forward_solve(l: &DMatrix<f64>, b: &mut DVector<f64>) {
    l.solve_lower_triangular_unchecked_mut(b);
}

/// Solves `L' x = b` in place using only the lower triangle of `l`.
pub fn backward_solve(l: &DMatrix<f64>, b: &mut DVector<f64>) {
    l.tr_solve_lower_triangular_unchecked_mut(b);
}

/// Orthonormalizes the columns of `m` (modified Gram–Schmidt, applied twice).
/// Fails if the columns are numerically dependent.
pub fn orthonormalize_columns(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let mut q = m.clone();
    for j in 0..q.ncols() {
        let scale = q.column(j).norm();
        for _ in 0..2 {
            for i in 0..j {
                let proj = q.column(i).dot(&q.column(j));
                let qi = q.column(i).clone_owned();
                q.column_mut(j).axpy(-proj, &qi, 1.0);
            }
        }
        let norm = q.column(j).norm();
        if !(norm > 1e-12 * scale.max(1e-300)) {
            return Err(Error::Numerical(format!(
                "column {j} is linearly dependent on the preceding columns"
            )));
        }
        q.column_mut(j).unscale_mut(norm);
    }
    Ok(q)
}

/// `max |F'F - I|` over all entries.
pub fn orthonormality_error(f: &DMatrix<f64>) -> f64 {
    let g = f.tr_mul(f);
    let mut worst = 0.0_f64;
    for i in 0..g.nrows() {
        for j in 0..g.ncols() {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((g[(i, j)] - target).abs());
        }
    }
    worst
}

pub fn standard_normal_vector<R: Rng + ?Sized>(n: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

/// Draw from Gamma(shape, rate), i.e. density proportional to
/// `x^(shape-1) exp(-rate x)`.
pub fn gamma_rate<R: Rng + ?Sized>(shape: f64, rate: f64, rng: &mut R) -> f64 {
    debug_assert!(shape > 0.0 && rate > 0.0, "gamma({shape}, {rate})");
    Gamma::new(shape, 1.0 / rate)
        .expect("gamma parameters must be positive and finite")
        .sample(rng)
}
