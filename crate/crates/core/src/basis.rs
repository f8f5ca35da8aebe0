//! Low-rank thin-plate spline basis, roughness penalty and the orthonormal
//! loading matrix `F = B Psi`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::{Distribution, Exp};

use crate::error::{Error, Result};
use crate::linalg::{self, backward_solve, cholesky_with_jitter, forward_solve, gamma_rate};
use crate::stats::quantile_sorted;

/// Dimension `D` of the index set. Only curves (D = 1) are supported.
pub const DOMAIN_DIM: usize = 1;

/// Lower truncation point of the smoothing precisions `lambda_f`. It is also
/// the image of the `Uniform(0, 1e4)` bound on `lambda_f^{-1/2}`.
pub const LAMBDA_F_FLOOR: f64 = 1e-8;

/// Upper bound on `lambda_f`. Without it a loading that settles in the
/// penalty's null space drives `psi' Omega psi` and `lambda_f` into a
/// runaway that ends in a singular constraint system.
pub const LAMBDA_F_CEILING: f64 = 1e8;

/// Rate used for `lambda_f` when `psi' Omega psi` vanishes.
pub const LAMBDA_F_RATE_FLOOR: f64 = 1e-10;

/// Spline design evaluated on the grid together with its penalty.
#[derive(Clone, Debug)]
pub struct SplineBasis {
    /// m x L basis matrix with columns `[1, t, radial...]`.
    pub b: DMatrix<f64>,
    /// L x L penalty, zero on the polynomial block.
    pub omega: DMatrix<f64>,
    /// Knots on the rescaled `[0, 1]` grid.
    pub knots: Vec<f64>,
    /// Dimension of the penalty null space (`D + 1`).
    pub null_dim: usize,
    /// Cached `B'B`.
    pub btb: DMatrix<f64>,
}

/// Default number of interior knots: `min(ceil(m / 4), 35)`.
pub fn default_num_knots(m: usize) -> usize {
    m.div_ceil(4).min(35)
}

/// Builds the cubic LR-TPS basis on `tau`.
///
/// The grid is rescaled to `[0, 1]`, knots are placed at equally spaced
/// empirical quantiles, and the radial block `|t - kappa|^3` is multiplied by
/// the inverse square root of the knot Gram matrix `|kappa_i - kappa_j|^3`
/// (taken through its eigenvalue magnitudes) so that the penalty on the radial
/// coefficients is the identity.
pub fn build_lrtps(tau: &DVector<f64>, num_knots: usize) -> Result<SplineBasis> {
    let m = tau.len();
    if num_knots < 1 {
        return Err(Error::invalid("the spline basis needs at least one knot"));
    }
    if m < num_knots + 2 {
        return Err(Error::invalid(format!(
            "too few grid points ({m}) for {num_knots} knots; need at least {}",
            num_knots + 2
        )));
    }
    if tau.as_slice().windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid("grid must be strictly increasing"));
    }
    let (lo, hi) = (tau[0], tau[m - 1]);
    let t: Vec<f64> = tau.iter().map(|v| (v - lo) / (hi - lo)).collect();
    let knots: Vec<f64> = (1..=num_knots)
        .map(|j| quantile_sorted(&t, j as f64 / (num_knots + 1) as f64))
        .collect();
    if knots.windows(2).any(|w| w[1] - w[0] <= 1e-12) {
        return Err(Error::invalid("duplicate knots"));
    }

    let j = num_knots;
    let z_k = DMatrix::from_fn(m, j, |l, c| (t[l] - knots[c]).abs().powi(3));
    let omega_k = DMatrix::from_fn(j, j, |a, c| (knots[a] - knots[c]).abs().powi(3));
    let eig = SymmetricEigen::new(omega_k);
    let max_abs = eig.eigenvalues.amax();
    if eig.eigenvalues.iter().any(|v| v.abs() <= 1e-12 * max_abs) {
        return Err(Error::Numerical("knot Gram matrix is singular".into()));
    }
    // Omega_K^{-1/2} in the |eigenvalue| sense: W diag(sign / sqrt|d|) W'.
    let w = &eig.eigenvectors;
    let scaled = DMatrix::from_fn(j, j, |r, c| {
        let d = eig.eigenvalues[c];
        w[(r, c)] * d.signum() / d.abs().sqrt()
    });
    let inv_sqrt = scaled * w.transpose();
    let z = z_k * inv_sqrt;

    let l_m = j + 2;
    let mut b = DMatrix::zeros(m, l_m);
    for l in 0..m {
        b[(l, 0)] = 1.0;
        b[(l, 1)] = t[l];
    }
    b.view_mut((0, 2), (m, j)).copy_from(&z);

    let mut omega = DMatrix::zeros(l_m, l_m);
    for c in 2..l_m {
        omega[(c, c)] = 1.0;
    }

    let sv = b.clone().singular_values();
    if sv.min() <= 1e-10 * sv.max() {
        return Err(Error::Numerical("spline basis is rank deficient".into()));
    }
    let btb = b.tr_mul(&b);
    Ok(SplineBasis {
        b,
        omega,
        knots,
        null_dim: DOMAIN_DIM + 1,
        btb,
    })
}

impl SplineBasis {
    pub fn m(&self) -> usize {
        self.b.nrows()
    }

    /// Number of basis functions `L_m`.
    pub fn len(&self) -> usize {
        self.b.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.b.ncols() == 0
    }

    /// Least-squares spline coefficients for the columns of `f` (m x K).
    pub fn coefficients_for(&self, f: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let chol = cholesky_with_jitter(self.btb.clone(), "spline Gram matrix")?;
        Ok(chol.solve(&self.b.tr_mul(f)))
    }

    /// All `L_m` spline functions on the grid as an orthonormal matrix, ordered
    /// from smoothest to roughest: the two null-space directions (constant and
    /// linear) first, then eigenvectors of the penalty by increasing eigenvalue.
    pub fn roughness_ordered_basis(&self) -> Result<DMatrix<f64>> {
        let q = linalg::orthonormalize_columns(&self.b)?;
        let r = q.tr_mul(&self.b);
        let r_inv = r
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::Numerical("spline basis is rank deficient".into()))?;
        let omega_q = r_inv.transpose() * &self.omega * &r_inv;
        let nd = self.null_dim;
        let l_m = self.len();
        let block = omega_q.view((nd, nd), (l_m - nd, l_m - nd)).clone_owned();
        let eig = SymmetricEigen::new(block);
        let mut order: Vec<usize> = (0..l_m - nd).collect();
        order.sort_by(|&a, &c| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[c]));
        let mut out = DMatrix::zeros(self.m(), l_m);
        out.view_mut((0, 0), (self.m(), nd))
            .copy_from(&q.view((0, 0), (self.m(), nd)));
        let tail = q.view((0, nd), (self.m(), l_m - nd));
        for (c, &idx) in order.iter().enumerate() {
            let col = tail * eig.eigenvectors.column(idx);
            out.column_mut(nd + c).copy_from(&col);
        }
        for c in 0..l_m {
            if largest_entry_negative(&out.column(c).clone_owned()) {
                out.column_mut(c).neg_mut();
            }
        }
        Ok(out)
    }
}

fn largest_entry_negative(v: &DVector<f64>) -> bool {
    let mut best = 0.0_f64;
    for &x in v.iter() {
        if x.abs() > best.abs() {
            best = x;
        }
    }
    best < 0.0
}

/// Spline coefficients `Psi` (L x K), loadings `F = B Psi` (m x K) and
/// smoothing precisions.
#[derive(Clone, Debug, PartialEq)]
pub struct BasisState {
    pub psi: DMatrix<f64>,
    pub f: DMatrix<f64>,
    pub lambda_f: DVector<f64>,
}

impl BasisState {
    /// Builds a state from coefficients, orthonormalizing `F = B Psi` in the
    /// column order given (the same transform is applied to `Psi`).
    pub fn from_coefficients(basis: &SplineBasis, psi: DMatrix<f64>) -> Result<Self> {
        let f = &basis.b * &psi;
        let g = f.tr_mul(&f);
        let chol = cholesky_with_jitter(g, "loading Gram matrix")?;
        // F L^{-T} has orthonormal columns; L^{-T} is upper triangular so the
        // column order is preserved (Gram–Schmidt).
        let l = chol.l();
        let mut psi_t = psi.transpose();
        l.solve_lower_triangular_mut(&mut psi_t);
        let psi = psi_t.transpose();
        let f = &basis.b * &psi;
        let k = psi.ncols();
        let mut state = Self {
            psi,
            f,
            lambda_f: DVector::from_element(k, 1.0),
        };
        state.fix_signs();
        Ok(state)
    }

    pub fn k(&self) -> usize {
        self.psi.ncols()
    }

    /// Flips each column so that its largest-magnitude entry is positive.
    /// Returns which columns were flipped.
    pub fn fix_signs(&mut self) -> Vec<bool> {
        (0..self.k())
            .map(|k| {
                let flip = largest_entry_negative(&self.f.column(k).clone_owned());
                if flip {
                    self.f.column_mut(k).neg_mut();
                    self.psi.column_mut(k).neg_mut();
                }
                flip
            })
            .collect()
    }
}

/// Initial loadings from the data: leading right singular vectors of the
/// centered, mean-imputed curves, projected onto the spline space and
/// orthonormalized. Falls back to the smoothest spline functions when the data
/// do not provide `K` independent directions.
pub fn initial_loadings(basis: &SplineBasis, y_filled: &DMatrix<f64>, k: usize) -> Result<BasisState> {
    if k > basis.len() {
        return Err(Error::invalid(format!(
            "K = {k} exceeds the number of spline functions ({})",
            basis.len()
        )));
    }
    let (n, m) = y_filled.shape();
    let mut centered = y_filled.clone();
    for l in 0..m {
        let mean = centered.column(l).mean();
        centered.column_mut(l).add_scalar_mut(-mean);
    }
    let svd = centered.svd(false, true);
    let v_t = svd.v_t.expect("requested right singular vectors");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let top = svd.singular_values[order[0]].max(1e-300);
    let usable: Vec<usize> = order
        .into_iter()
        .filter(|&i| svd.singular_values[i] > 1e-8 * top)
        .take(k.min(n))
        .collect();

    let smooth = basis.roughness_ordered_basis()?;
    let mut directions = DMatrix::zeros(m, k);
    for (c, &i) in usable.iter().enumerate() {
        directions.column_mut(c).copy_from(&v_t.row(i).transpose());
    }
    for c in usable.len()..k {
        directions.column_mut(c).copy_from(&smooth.column(c - usable.len()));
    }
    let psi = basis.coefficients_for(&directions)?;
    match BasisState::from_coefficients(basis, psi) {
        Ok(state) => Ok(state),
        Err(_) => {
            let psi = basis.coefficients_for(&smooth.columns(0, k).clone_owned())?;
            BasisState::from_coefficients(basis, psi)
        }
    }
}

/// Fixed loadings for the spline ablation: the `K` smoothest orthonormal
/// spline functions.
pub fn fixed_spline_loadings(basis: &SplineBasis, k: usize) -> Result<BasisState> {
    if k > basis.len() {
        return Err(Error::invalid(format!(
            "K = {k} exceeds the number of spline functions ({})",
            basis.len()
        )));
    }
    let smooth = basis.roughness_ordered_basis()?;
    let f = smooth.columns(0, k).clone_owned();
    let psi = basis.coefficients_for(&f)?;
    Ok(BasisState {
        psi,
        f,
        lambda_f: DVector::from_element(k, 1.0),
    })
}

/// Result of a smoothing-precision draw.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LambdaDraw {
    pub value: f64,
    /// `psi' Omega psi` was zero and the rate fell back to `1e-10`.
    pub prior_only: bool,
    /// The draw was limited by `LAMBDA_F_CEILING`.
    pub capped: bool,
}

/// `[lambda_f | ...] ~ Gamma((L_m - D + 1 + 1) / 2, psi' Omega psi / 2)`
/// truncated to `(1e-8, inf)`.
pub fn sample_lambda_f<R: Rng + ?Sized>(
    psi_k: &DVector<f64>,
    omega: &DMatrix<f64>,
    rng: &mut R,
) -> LambdaDraw {
    let l_m = psi_k.len() as f64;
    let shape = (l_m - DOMAIN_DIM as f64 + 1.0 + 1.0) / 2.0;
    let quad = psi_k.dot(&(omega * psi_k));
    let (rate, prior_only) = if quad > 0.0 && quad.is_finite() {
        (quad / 2.0, false)
    } else {
        (LAMBDA_F_RATE_FLOOR, true)
    };
    let mut above = 0;
    for _ in 0..10_000 {
        let v = gamma_rate(shape, rate, rng);
        if v > LAMBDA_F_FLOOR && v < LAMBDA_F_CEILING {
            return LambdaDraw {
                value: v,
                prior_only,
                capped: false,
            };
        }
        above += (v >= LAMBDA_F_CEILING) as usize;
    }
    if above > 0 {
        // The mass sits above the ceiling, where `rate * lambda` is
        // negligible and the density is proportional to `lambda^(shape-1)`.
        let u: f64 = rng.random();
        return LambdaDraw {
            value: (LAMBDA_F_CEILING * u.powf(1.0 / shape)).max(LAMBDA_F_FLOOR),
            prior_only,
            capped: true,
        };
    }
    // Essentially all mass sits below the floor: draw from the exponential
    // tail just above it.
    let tail = Exp::new(rate).expect("positive rate").sample(rng);
    LambdaDraw {
        value: LAMBDA_F_FLOOR + tail.max(f64::MIN_POSITIVE),
        prior_only,
        capped: false,
    }
}

/// Precision and linear term of the unconstrained full conditional of `psi_k`:
///
/// `Q = sigma^-2 (B'B) sum_i beta_{k,i}^2 + lambda_k Omega`,
/// `l = sigma^-2 B' sum_i beta_{k,i} (Y_i - sum_{k' != k} f_k' beta_{k',i})`.
///
/// `bty` is `B' Y'` (L x n) and `beta` is K x n.
pub fn psi_full_conditional(
    k: usize,
    basis: &SplineBasis,
    state: &BasisState,
    beta: &DMatrix<f64>,
    bty: &DMatrix<f64>,
    sigma_eps: f64,
    lambda_k: f64,
) -> (DMatrix<f64>, DVector<f64>) {
    let prec = 1.0 / (sigma_eps * sigma_eps);
    let beta_k = beta.row(k).transpose();
    let ss = beta_k.norm_squared();
    let q = &basis.btb * (prec * ss) + &basis.omega * lambda_k;
    let mut ell = bty * &beta_k;
    // Subtract B'B psi_k' (beta_k' . beta_k) for the other factors.
    let mut other = DVector::zeros(basis.len());
    for kk in 0..state.k() {
        if kk != k {
            let w = beta.row(kk).dot(&beta.row(k));
            other.axpy(w, &state.psi.column(kk), 1.0);
        }
    }
    ell -= &basis.btb * other;
    ell *= prec;
    (q, ell)
}

/// `psi* = psi0 - C~ (C C~)^{-1} C psi0`, with `ct = C'` (L x (K-1)) and
/// `c_tilde = Q^{-1} C'`.
pub fn project_onto_constraint(
    k: usize,
    psi0: &DVector<f64>,
    ct: &DMatrix<f64>,
    c_tilde: &DMatrix<f64>,
) -> Result<DVector<f64>> {
    let s = ct.tr_mul(c_tilde);
    let chol = nalgebra::Cholesky::new(s).ok_or(Error::SingularConstraint { k })?;
    let x = chol.solve(&ct.tr_mul(psi0));
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularConstraint { k });
    }
    Ok(psi0 - c_tilde * x)
}

/// Draws `psi_k` from its full conditional subject to `f_k' f_l = 0` for
/// all `l != k`, rescales it to `||B psi_k|| = 1` and multiplies row `k` of
/// `beta` by the removed norm. Returns that norm so callers can rescale the
/// parts `beta` is built from.
#[allow(clippy::too_many_arguments)]
pub fn sample_basis_column<R: Rng + ?Sized>(
    k: usize,
    basis: &SplineBasis,
    state: &mut BasisState,
    beta: &mut DMatrix<f64>,
    bty: &DMatrix<f64>,
    sigma_eps: f64,
    rng: &mut R,
) -> Result<f64> {
    let lambda_k = state.lambda_f[k];
    let (q, ell) = psi_full_conditional(k, basis, state, beta, bty, sigma_eps, lambda_k);
    let chol = cholesky_with_jitter(q, "loading precision")?;
    let l = chol.l();
    let mut psi = ell;
    forward_solve(&l, &mut psi);
    psi += linalg::standard_normal_vector(basis.len(), rng);
    backward_solve(&l, &mut psi);

    let kk = state.k();
    if kk > 1 {
        let others: Vec<usize> = (0..kk).filter(|&c| c != k).collect();
        let psi_others = state.psi.select_columns(&others);
        // C_k' = B' F_{-k} = B'B Psi_{-k}.
        let ct = &basis.btb * psi_others;
        let mut c_tilde = ct.clone();
        for mut col in c_tilde.column_iter_mut() {
            let mut v = col.clone_owned();
            forward_solve(&l, &mut v);
            backward_solve(&l, &mut v);
            col.copy_from(&v);
        }
        psi = project_onto_constraint(k, &psi, &ct, &c_tilde)?;
    }

    let f_star = &basis.b * &psi;
    let norm = f_star.norm();
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(Error::Numerical(format!(
            "loading {k} collapsed to zero norm after projection"
        )));
    }
    state.psi.set_column(k, &(psi / norm));
    state.f.set_column(k, &(f_star / norm));
    beta.row_mut(k).scale_mut(norm);
    Ok(norm)
}
