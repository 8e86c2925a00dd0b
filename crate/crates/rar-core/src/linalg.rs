//! Small dense linear-algebra helpers shared across modules.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::num::{real, smax, Real};

/// Symmetric part `(M + Mᵀ)/2`.
pub(crate) fn sym<S: Real>(m: &DMatrix<S>) -> DMatrix<S> {
    (m + m.transpose()) * real::<S>(0.5)
}

/// Frobenius norm of the symmetric part, used for skewness checks.
pub(crate) fn sym_residual<S: Real>(m: &DMatrix<S>) -> S {
    sym(m).norm()
}

/// `n×p` matrix with i.i.d. standard normal entries, sampled in `f64` and
/// converted so the stream is identical for every scalar type.
pub(crate) fn gaussian_matrix<S: Real, R: Rng>(rng: &mut R, n: usize, p: usize) -> DMatrix<S> {
    DMatrix::from_fn(n, p, |_, _| {
        let g: f64 = rng.sample(StandardNormal);
        real(g)
    })
}

pub(crate) fn gaussian_vector<S: Real, R: Rng>(rng: &mut R, n: usize) -> DVector<S> {
    DVector::from_fn(n, |_, _| {
        let g: f64 = rng.sample(StandardNormal);
        real(g)
    })
}

/// Thin-QR orthonormal factor with the sign convention `diag(R) > 0`.
///
/// Returns `None` when a diagonal entry of `R` is numerically zero relative
/// to the largest one, i.e. the input lost column rank.
pub(crate) fn qr_positive<S: Real>(m: &DMatrix<S>) -> Option<(DMatrix<S>, DMatrix<S>)> {
    let (rows, cols) = m.shape();
    debug_assert!(rows >= cols);
    let qr = m.clone().qr();
    let mut q = qr.q();
    let mut r = qr.r();
    let max_diag = (0..cols).fold(S::zero(), |acc, i| smax(acc, r[(i, i)].abs()));
    for i in 0..cols {
        let d = r[(i, i)];
        if d.abs() <= real::<S>(1e-12) * smax(S::one(), max_diag) {
            return None;
        }
        if d < S::zero() {
            for k in 0..rows {
                q[(k, i)] = -q[(k, i)];
            }
            for k in 0..cols {
                r[(i, k)] = -r[(i, k)];
            }
        }
    }
    Some((q, r))
}

/// Polar orthonormal factor `U·Vᵀ` from the thin SVD, together with the
/// smallest and largest singular values for rank diagnostics.
pub(crate) fn polar_svd<S: Real>(m: &DMatrix<S>) -> (DMatrix<S>, S, S) {
    let svd = m.clone().svd(true, true);
    let u = svd.u.expect("svd requested u");
    let vt = svd.v_t.expect("svd requested v_t");
    let smin = svd
        .singular_values
        .iter()
        .fold(S::max_value().unwrap(), |acc, &s| if s < acc { s } else { acc });
    let smax_ = svd
        .singular_values
        .iter()
        .fold(S::zero(), |acc, &s| smax(acc, s));
    (u * vt, smin, smax_)
}

/// Matrix exponential via scaling and squaring with a fixed-degree Taylor
/// evaluation. Only used on small (≤ 2p) square matrices in the reference
/// geodesics, where simplicity beats peak efficiency.
pub(crate) fn expm<S: Real>(m: &DMatrix<S>) -> DMatrix<S> {
    let n = m.nrows();
    debug_assert_eq!(n, m.ncols());
    let norm = m.norm();
    // Scale so the Taylor argument has norm below 1/2, then square back.
    let mut squarings = 0u32;
    let mut scale = S::one();
    let half = real::<S>(0.5);
    while norm * scale > half && squarings < 64 {
        scale *= half;
        squarings += 1;
    }
    let a = m * scale;
    let mut term = DMatrix::<S>::identity(n, n);
    let mut sum = DMatrix::<S>::identity(n, n);
    for k in 1..=16 {
        term = (&term * &a) * real::<S>(1.0 / k as f64);
        sum += &term;
    }
    for _ in 0..squarings {
        sum = &sum * &sum;
    }
    sum
}
