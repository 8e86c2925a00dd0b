//! High-order projected-polynomial retractions on St(n,p) and Gr(n,p).
//!
//! Three families are provided:
//!
//! - `PolarBaseline`: the metric-projection retraction `𝒫(X + V)`,
//!   second order on both manifolds and always available as a fallback;
//! - `GawlikStiefel(m)`: the polar projection of the degree-`m` Taylor
//!   polynomial of the embedded-metric Stiefel geodesic, an `m`-th order
//!   retraction;
//! - `GawlikGrassmann(m)`: the Q-factor projection of the degree-`m`
//!   trigonometric polynomial `X·c_m(VᵀV) + V·s_m(VᵀV)` matching the
//!   Grassmannian geodesic, a retraction of order at least `2m+1`.
//!
//! Orders are claims checked empirically: [`estimate_order`] fits the
//! log-log slope of the distance to the reference geodesic. The polynomial
//! `Θ_m` (the degree-`m` Padé numerator of the exponential, evaluated at
//! `2H`) is exposed separately together with the determinant identity that
//! certifies it is full-rank on skew matrices.

use nalgebra::DMatrix;

use crate::error::{RarError, Result};
use crate::linalg;
use crate::manifold::{
    distance, exp_reference, project_tangent, random_point, random_tangent, ManifoldDescriptor,
    ManifoldKind, ManifoldPoint, TangentVector,
};
use crate::num::{real, smax, Real};

/// Retraction family selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RetractionFamily {
    PolarBaseline,
    GawlikStiefel,
    GawlikGrassmann,
}

/// A retraction family plus its polynomial degree.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RetractionSpec {
    pub family: RetractionFamily,
    /// Polynomial degree, `m ≥ 1`. Ignored by `PolarBaseline`.
    pub m: usize,
}

impl RetractionSpec {
    pub fn polar_baseline() -> Self {
        Self {
            family: RetractionFamily::PolarBaseline,
            m: 1,
        }
    }

    pub fn gawlik_stiefel(m: usize) -> Self {
        Self {
            family: RetractionFamily::GawlikStiefel,
            m,
        }
    }

    pub fn gawlik_grassmann(m: usize) -> Self {
        Self {
            family: RetractionFamily::GawlikGrassmann,
            m,
        }
    }

    /// Claimed retraction order of this family and degree.
    pub fn claimed_order(&self) -> usize {
        match self.family {
            RetractionFamily::PolarBaseline => 2,
            RetractionFamily::GawlikStiefel => self.m,
            RetractionFamily::GawlikGrassmann => 2 * self.m + 1,
        }
    }

    /// Manifold kind this spec applies to, if restricted.
    pub fn required_kind(&self) -> Option<ManifoldKind> {
        match self.family {
            RetractionFamily::PolarBaseline => None,
            RetractionFamily::GawlikStiefel => Some(ManifoldKind::Stiefel),
            RetractionFamily::GawlikGrassmann => Some(ManifoldKind::Grassmannian),
        }
    }

    /// Constructs the spec and runs the retraction-axiom self-test on a
    /// small seeded instance. Fails with a configuration error if the
    /// axioms do not hold numerically.
    pub fn validated<S: Real>(family: RetractionFamily, m: usize) -> Result<Self> {
        if m == 0 {
            return Err(RarError::Configuration(
                "retraction degree m must be >= 1".into(),
            ));
        }
        let spec = Self { family, m };
        spec.self_test::<S>()?;
        Ok(spec)
    }

    /// Checks `R(X, 0) = X` to 1e−12 and the first-order axiom
    /// `‖(R(tV) − X)/t − V‖ ≤ C·t` on a seeded instance.
    pub fn self_test<S: Real>(&self) -> Result<()> {
        let kinds: &[ManifoldKind] = match self.required_kind() {
            Some(ManifoldKind::Stiefel) => &[ManifoldKind::Stiefel],
            Some(ManifoldKind::Grassmannian) => &[ManifoldKind::Grassmannian],
            None => &[ManifoldKind::Stiefel, ManifoldKind::Grassmannian],
        };
        for &kind in kinds {
            let desc = ManifoldDescriptor::new(kind, 6, 2)?;
            let x = random_point::<S>(desc, 2024);
            let v = random_tangent(&x, 2025);
            let v = v.scale(S::one() / v.norm());
            let zero = TangentVector::zero(&x);
            let r0 = retract(*self, &x, &zero)?;
            if (r0.matrix() - x.matrix()).norm() > real::<S>(1e-12) {
                return Err(RarError::Configuration(format!(
                    "retraction self-test failed: R(X, 0) != X for {self:?}"
                )));
            }
            // first-order axiom: the scaled secant must converge to V
            // linearly in t
            let mut prev: Option<S> = None;
            for &tf in &[1e-2, 1e-3] {
                let t = real::<S>(tf);
                let y = retract(*self, &x, &v.scale(t))?;
                let secant = (y.matrix() - x.matrix()) / t;
                let err = (&secant - v.matrix()).norm();
                if err > real::<S>(100.0) * t {
                    return Err(RarError::Configuration(format!(
                        "retraction self-test failed: first-order axiom violated for {self:?}"
                    )));
                }
                if let Some(p) = prev {
                    if err > p * real::<S>(0.5) {
                        return Err(RarError::Configuration(format!(
                            "retraction self-test failed: secant error not contracting for {self:?}"
                        )));
                    }
                }
                prev = Some(err);
            }
        }
        Ok(())
    }
}

/// Coefficient `binom(m,k)·(2m−k)!/(2m)!` of `(2H)^k` in `Θ_m`.
fn theta_coefficient(m: usize, k: usize) -> f64 {
    debug_assert!(k <= m);
    let mut binom = 1.0f64;
    for i in 0..k {
        binom = binom * (m - i) as f64 / (i + 1) as f64;
    }
    let mut ratio = 1.0f64;
    for i in (2 * m - k + 1)..=(2 * m) {
        ratio /= i as f64;
    }
    binom * ratio
}

/// `Θ_m(H) = Σ_{k=0}^{m} binom(m,k)·(2m−k)!/(2m)!·(2H)^k` for skew `H`.
///
/// This is the degree-`m` Padé numerator of the exponential evaluated at
/// `2H`; its polar factor approximates `exp(H)` and it is full-rank for
/// every skew-symmetric input.
pub fn theta_poly<S: Real>(m: usize, h: &DMatrix<S>) -> Result<DMatrix<S>> {
    if m == 0 {
        return Err(RarError::Argument("theta_poly requires m >= 1".into()));
    }
    if h.nrows() != h.ncols() {
        return Err(RarError::Argument("theta_poly requires a square input".into()));
    }
    let skew_res = linalg::sym_residual(h);
    if skew_res > real::<S>(1e-8) * (S::one() + h.norm()) {
        return Err(RarError::Argument(format!(
            "theta_poly requires a skew-symmetric input, residual {skew_res:?}"
        )));
    }
    let p = h.nrows();
    let two_h = h * real::<S>(2.0);
    let mut power = DMatrix::<S>::identity(p, p);
    let mut acc = DMatrix::<S>::identity(p, p) * real::<S>(theta_coefficient(m, 0));
    for k in 1..=m {
        power = &power * &two_h;
        acc += &power * real::<S>(theta_coefficient(m, k));
    }
    Ok(acc)
}

/// `|Θ_m(i·a)|²` computed from the scalar complex evaluation; used as the
/// independent route of the determinant identity
/// `det Θ_m(aJ) = |Θ_m(ia)|²`.
pub fn theta_complex_abs2<S: Real>(m: usize, a: S) -> S {
    let two_a = a * real::<S>(2.0);
    let mut even = S::zero();
    let mut odd = S::zero();
    let mut power = S::one(); // (2a)^k
    for k in 0..=m {
        let c = real::<S>(theta_coefficient(m, k)) * power;
        match k % 4 {
            0 => even += c,
            1 => odd += c,
            2 => even -= c,
            3 => odd -= c,
            _ => unreachable!(),
        }
        power *= two_a;
    }
    even * even + odd * odd
}

/// Polar orthonormal factor `U·Vᵀ` of a full-rank `k×p` matrix (`k ≥ p`).
pub fn polar_factor<S: Real>(m: &DMatrix<S>) -> Result<DMatrix<S>> {
    if m.nrows() < m.ncols() {
        return Err(RarError::Argument(
            "polar_factor requires at least as many rows as columns".into(),
        ));
    }
    let (p, smin, smax_) = linalg::polar_svd(m);
    if smin <= real::<S>(1e-12) * smax_ {
        return Err(RarError::NumericalRank(format!(
            "polar_factor input is numerically rank-deficient (smin {smin:?}, smax {smax_:?})"
        )));
    }
    Ok(p)
}

/// Orthonormal Q-factor of the thin QR decomposition, unique through the
/// positive-diagonal convention for `R`.
pub fn qr_q_factor<S: Real>(m: &DMatrix<S>) -> Result<DMatrix<S>> {
    if m.nrows() < m.ncols() {
        return Err(RarError::Argument(
            "qr_q_factor requires at least as many rows as columns".into(),
        ));
    }
    match linalg::qr_positive(m) {
        Some((q, _)) => Ok(q),
        None => Err(RarError::NumericalRank(
            "qr_q_factor input is numerically rank-deficient".into(),
        )),
    }
}

/// Retracts the tangent vector `v` at `x` with the given family.
pub fn retract<S: Real>(
    spec: RetractionSpec,
    x: &ManifoldPoint<S>,
    v: &TangentVector<S>,
) -> Result<ManifoldPoint<S>> {
    if !v.base().same_point(x) {
        return Err(RarError::Argument(
            "tangent vector is not based at the given point".into(),
        ));
    }
    if let Some(kind) = spec.required_kind() {
        if x.kind() != kind {
            return Err(RarError::Argument(format!(
                "{:?} does not apply to {:?}",
                spec.family,
                x.kind()
            )));
        }
    }
    let y = match spec.family {
        RetractionFamily::PolarBaseline => polar_factor(&(x.matrix() + v.matrix()))?,
        RetractionFamily::GawlikStiefel => stiefel_poly_curve(spec.m, x, v)?,
        RetractionFamily::GawlikGrassmann => grassmann_poly_curve(spec.m, x, v)?,
    };
    ManifoldPoint::new(y, x.descriptor())
}

/// Degree-`m` Taylor polynomial of the embedded Stiefel geodesic through
/// `(x, v)`, followed by polar projection.
fn stiefel_poly_curve<S: Real>(
    m: usize,
    x: &ManifoldPoint<S>,
    v: &TangentVector<S>,
) -> Result<DMatrix<S>> {
    let tau = v.norm();
    if tau == S::zero() {
        return Ok(x.matrix().clone());
    }
    let (n, p) = (x.descriptor().n, x.descriptor().p);
    let v0 = v.matrix() / tau;
    let a = x.matrix().transpose() * &v0;
    let s = v0.transpose() * &v0;
    // block generator of the geodesic: [[A, −S], [I, A]]
    let mut gen = DMatrix::<S>::zeros(2 * p, 2 * p);
    gen.view_mut((0, 0), (p, p)).copy_from(&a);
    gen.view_mut((0, p), (p, p)).copy_from(&(-&s));
    gen.view_mut((p, 0), (p, p))
        .copy_from(&DMatrix::<S>::identity(p, p));
    gen.view_mut((p, p), (p, p)).copy_from(&a);

    // powers of the generator applied to [I; 0], and powers of (−A)
    let mut e0 = DMatrix::<S>::zeros(2 * p, p);
    e0.view_mut((0, 0), (p, p))
        .copy_from(&DMatrix::<S>::identity(p, p));
    let mut gen_pow: Vec<DMatrix<S>> = Vec::with_capacity(m + 1);
    gen_pow.push(e0);
    for j in 1..=m {
        let next = &gen * &gen_pow[j - 1];
        gen_pow.push(next);
    }
    let neg_a = -&a;
    let mut a_pow: Vec<DMatrix<S>> = Vec::with_capacity(m + 1);
    a_pow.push(DMatrix::<S>::identity(p, p));
    for l in 1..=m {
        let next = &a_pow[l - 1] * &neg_a;
        a_pow.push(next);
    }
    let mut factorial = vec![1.0f64; m + 1];
    for k in 1..=m {
        factorial[k] = factorial[k - 1] * k as f64;
    }

    // curve coefficients C_k = Σ_{j+l=k} gen^j·[I;0]·(−A)^l / (j! l!)
    let mut xw = DMatrix::<S>::zeros(n, 2 * p);
    xw.view_mut((0, 0), (n, p)).copy_from(x.matrix());
    xw.view_mut((0, p), (n, p)).copy_from(&v0);
    let mut curve = DMatrix::<S>::zeros(n, p);
    let mut tau_pow = S::one();
    for k in 0..=m {
        let mut ck = DMatrix::<S>::zeros(2 * p, p);
        for j in 0..=k {
            let l = k - j;
            let coef = real::<S>(1.0 / (factorial[j] * factorial[l]));
            ck += &gen_pow[j] * &a_pow[l] * coef;
        }
        curve += &xw * ck * tau_pow;
        tau_pow *= tau;
    }
    polar_factor(&curve)
}

/// Degree-`m` truncations of `cos(√W)` and `sinc(√W)` applied to the
/// horizontal lift, followed by Q-factor projection.
fn grassmann_poly_curve<S: Real>(
    m: usize,
    x: &ManifoldPoint<S>,
    v: &TangentVector<S>,
) -> Result<DMatrix<S>> {
    let p = x.descriptor().p;
    let w = v.matrix().transpose() * v.matrix();
    let mut w_pow = DMatrix::<S>::identity(p, p);
    let mut cos_part = DMatrix::<S>::identity(p, p);
    let mut sinc_part = DMatrix::<S>::identity(p, p);
    let mut fact = 1.0f64;
    let mut sign = 1.0f64;
    for k in 1..=m {
        w_pow = &w_pow * &w;
        sign = -sign;
        fact *= (2 * k - 1) as f64 * (2 * k) as f64;
        cos_part += &w_pow * real::<S>(sign / fact);
        sinc_part += &w_pow * real::<S>(sign / (fact * (2 * k + 1) as f64));
    }
    let y = x.matrix() * cos_part + v.matrix() * sinc_part;
    qr_q_factor(&y)
}

/// Result of the empirical retraction-order fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OrderEstimate<S> {
    /// Least-squares slope and intercept of `log d` against `log t`.
    Slope { slope: S, intercept: S },
    /// Every measured distance was below the noise floor; the retraction
    /// order exceeds what the grid can resolve. A success marker.
    ExceedsMeasurableRange,
}

/// Fits the slope of `log dist(R(tV), Exp(tV))` against `log t`.
///
/// Distances below `1e−13` are excluded from the fit; if fewer than two
/// grid points survive, the order exceeds the measurable range.
pub fn estimate_order<S: Real>(
    spec: RetractionSpec,
    x: &ManifoldPoint<S>,
    v: &TangentVector<S>,
    t_grid: &[S],
) -> Result<OrderEstimate<S>> {
    if t_grid.len() < 6 {
        return Err(RarError::Argument(
            "estimate_order requires at least 6 grid points".into(),
        ));
    }
    let lo = real::<S>(1e-4);
    let hi = real::<S>(1e-1);
    for w in t_grid.windows(2) {
        if w[1] >= w[0] {
            return Err(RarError::Argument(
                "estimate_order requires a strictly decreasing grid".into(),
            ));
        }
    }
    if t_grid.iter().any(|&t| t < lo || t > hi) {
        return Err(RarError::Argument(
            "estimate_order grid must lie within [1e-4, 1e-1]".into(),
        ));
    }
    if (v.norm() - S::one()).abs() > real::<S>(1e-8) {
        return Err(RarError::Argument(
            "estimate_order requires a unit tangent direction".into(),
        ));
    }
    let floor = real::<S>(1e-13);
    let mut logs: Vec<(S, S)> = Vec::with_capacity(t_grid.len());
    for &t in t_grid {
        let r = retract(spec, x, &v.scale(t))?;
        let e = exp_reference(x, v, t)?;
        let d = distance(&r, &e)?;
        if d > floor {
            logs.push((t.ln(), d.ln()));
        }
    }
    if logs.len() < 2 {
        return Ok(OrderEstimate::ExceedsMeasurableRange);
    }
    let n = real::<S>(logs.len() as f64);
    let sx: S = logs.iter().map(|&(a, _)| a).fold(S::zero(), |acc, a| acc + a);
    let sy: S = logs.iter().map(|&(_, b)| b).fold(S::zero(), |acc, b| acc + b);
    let sxx: S = logs
        .iter()
        .map(|&(a, _)| a * a)
        .fold(S::zero(), |acc, a| acc + a);
    let sxy: S = logs
        .iter()
        .map(|&(a, b)| a * b)
        .fold(S::zero(), |acc, a| acc + a);
    let denom = n * sxx - sx * sx;
    if denom.abs() <= S::mach_eps() * smax(S::one(), sxx) {
        return Err(RarError::Internal("degenerate order fit".into()));
    }
    let slope = (n * sxy - sx * sy) / denom;
    let intercept = (sy - slope * sx) / n;
    Ok(OrderEstimate::Slope { slope, intercept })
}

/// Default log-spaced grid for order fits: 8 points from 1e−1 to 1e−3.
pub fn default_order_grid<S: Real>() -> Vec<S> {
    let n = 8;
    (0..n)
        .map(|i| {
            let e = -1.0 - 2.0 * i as f64 / (n - 1) as f64;
            real::<S>(10f64.powf(e))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn skew_from_seed(p: usize, seed: u64, scale: f64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = crate::linalg::gaussian_matrix::<f64, _>(&mut rng, p, p);
        (&g - g.transpose()) * (0.5 * scale)
    }

    #[test]
    fn theta_small_degrees_match_hand_expansion() {
        let h = skew_from_seed(3, 1, 1.0);
        let id = DMatrix::<f64>::identity(3, 3);
        let t1 = theta_poly(1, &h).unwrap();
        assert_relative_eq!((&t1 - (&id + &h)).norm(), 0.0, epsilon = 1e-14);
        let t2 = theta_poly(2, &h).unwrap();
        let expect = &id + &h + &h * &h / 3.0;
        assert_relative_eq!((&t2 - expect).norm(), 0.0, epsilon = 1e-14);
        for m in 1..=4 {
            let z = DMatrix::<f64>::zeros(3, 3);
            assert_eq!(theta_poly(m, &z).unwrap(), id);
        }
    }

    #[test]
    fn theta_rejects_non_skew() {
        let m = DMatrix::<f64>::identity(3, 3);
        assert!(theta_poly(2, &m).is_err());
    }

    #[test]
    fn theta_determinant_identity() {
        let j = DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]);
        for m in 1..=3 {
            for &a in &[0.1f64, 1.0, 10.0, 100.0] {
                let th = theta_poly(m, &(&j * a)).unwrap();
                let det = th[(0, 0)] * th[(1, 1)] - th[(0, 1)] * th[(1, 0)];
                let abs2 = theta_complex_abs2(m, a);
                assert_relative_eq!(det, abs2, max_relative = 1e-10);
            }
        }
    }

    #[test]
    fn theta_full_rank_for_large_skew() {
        for m in 1..=4 {
            for seed in 0..25u64 {
                let scale = 10f64.powf(seed as f64 % 4.0); // up to 1e3
                let h = skew_from_seed(4, seed, scale);
                let th = theta_poly(m, &h).unwrap();
                let svd = th.svd(false, false);
                let smin = svd
                    .singular_values
                    .iter()
                    .cloned()
                    .fold(f64::INFINITY, f64::min);
                assert!(smin > 0.0, "theta lost rank: m={m} seed={seed}");
            }
        }
    }

    #[test]
    fn polar_factor_examples() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 3.0]);
        let p = polar_factor(&m).unwrap();
        assert_relative_eq!((p - DMatrix::<f64>::identity(2, 2)).norm(), 0.0, epsilon = 1e-12);
        let m = DMatrix::from_row_slice(2, 2, &[0.0, -2.0, 2.0, 0.0]);
        let p = polar_factor(&m).unwrap();
        let expect = DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]);
        assert_relative_eq!((p - expect).norm(), 0.0, epsilon = 1e-12);
        // orthonormal input is a fixed point
        let x = random_point::<f64>(ManifoldDescriptor::stiefel(5, 3).unwrap(), 7);
        let p = polar_factor(x.matrix()).unwrap();
        assert!((p - x.matrix()).norm() <= 1e-12);
        // rank-deficient input errors
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(matches!(polar_factor(&m), Err(RarError::NumericalRank(_))));
    }

    #[test]
    fn polar_factor_spd_residue() {
        // result·H = M with H symmetric positive definite
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let m = crate::linalg::gaussian_matrix::<f64, _>(&mut rng, 5, 3);
        let p = polar_factor(&m).unwrap();
        let h = p.transpose() * &m;
        assert!((&h - h.transpose()).norm() <= 1e-10);
        let eig = h.clone().symmetric_eigen();
        assert!(eig.eigenvalues.iter().all(|&e| e > 0.0));
        assert!((p * h - m).norm() <= 1e-10);
    }

    #[test]
    fn qr_factor_examples() {
        let id = DMatrix::<f64>::identity(3, 3);
        assert_eq!(qr_q_factor(&id).unwrap(), id);
        let upper = DMatrix::from_row_slice(3, 3, &[2.0, 1.0, 0.5, 0.0, 1.5, -0.3, 0.0, 0.0, 0.7]);
        let q = qr_q_factor(&upper).unwrap();
        assert!((q - &id).norm() <= 1e-12);
        let swap = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let q = qr_q_factor(&swap).unwrap();
        assert!((q - &swap).norm() <= 1e-12);
    }

    #[test]
    fn retract_zero_is_identity() {
        let st = ManifoldDescriptor::stiefel(6, 3).unwrap();
        let gr = ManifoldDescriptor::grassmannian(6, 3).unwrap();
        let cases = [
            (RetractionSpec::polar_baseline(), st),
            (RetractionSpec::gawlik_stiefel(2), st),
            (RetractionSpec::gawlik_grassmann(1), gr),
        ];
        for (spec, d) in cases {
            let x = random_point::<f64>(d, 99);
            let z = TangentVector::zero(&x);
            let y = retract(spec, &x, &z).unwrap();
            assert!((y.matrix() - x.matrix()).norm() <= 1e-12);
        }
    }

    #[test]
    fn retract_output_is_on_manifold() {
        let st = ManifoldDescriptor::stiefel(8, 3).unwrap();
        let x = random_point::<f64>(st, 100);
        for m in 1..=4 {
            let v = random_tangent(&x, 101 + m as u64);
            let y = retract(RetractionSpec::gawlik_stiefel(m), &x, &v).unwrap();
            assert!(crate::manifold::orthonormality_residual(y.matrix()) <= 1e-10);
        }
        let gr = ManifoldDescriptor::grassmannian(8, 3).unwrap();
        let x = random_point::<f64>(gr, 102);
        let v = random_tangent(&x, 103);
        let y = retract(RetractionSpec::gawlik_grassmann(2), &x, &v).unwrap();
        assert!(crate::manifold::orthonormality_residual(y.matrix()) <= 1e-10);
    }

    #[test]
    fn polar_baseline_on_circle() {
        let d = ManifoldDescriptor::stiefel(2, 1).unwrap();
        let x = ManifoldPoint::new(DMatrix::from_column_slice(2, 1, &[1.0, 0.0]), d).unwrap();
        let v = TangentVector::new(DMatrix::from_column_slice(2, 1, &[0.0, 1.0]), x.clone())
            .unwrap();
        let t = 0.1;
        let y = retract(RetractionSpec::polar_baseline(), &x, &v.scale(t)).unwrap();
        let nrm = (1.0f64 + t * t).sqrt();
        assert_relative_eq!(y.matrix()[(0, 0)], 1.0 / nrm, epsilon = 1e-14);
        assert_relative_eq!(y.matrix()[(1, 0)], t / nrm, epsilon = 1e-14);
        // difference to the geodesic is t³/3 + O(t⁴)
        for &t in &[1e-2f64, 1e-3] {
            let y = retract(RetractionSpec::polar_baseline(), &x, &v.scale(t)).unwrap();
            let e = exp_reference(&x, &v, t).unwrap();
            let d = (y.matrix() - e.matrix()).norm();
            assert_relative_eq!(d, t.powi(3) / 3.0, max_relative = 2.0 * t);
        }
    }

    #[test]
    fn order_polar_baseline_circle() {
        let d = ManifoldDescriptor::stiefel(2, 1).unwrap();
        let x = ManifoldPoint::new(DMatrix::from_column_slice(2, 1, &[1.0, 0.0]), d).unwrap();
        let v = TangentVector::new(DMatrix::from_column_slice(2, 1, &[0.0, 1.0]), x.clone())
            .unwrap();
        let grid = default_order_grid::<f64>();
        match estimate_order(RetractionSpec::polar_baseline(), &x, &v, &grid).unwrap() {
            OrderEstimate::Slope { slope, intercept } => {
                assert!((2.8..=3.2).contains(&slope), "slope {slope}");
                let constant = intercept.exp();
                assert!(
                    (constant - 1.0 / 3.0).abs() <= 0.2 / 3.0,
                    "leading constant {constant}"
                );
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn order_gawlik_stiefel_meets_claims() {
        let d = ManifoldDescriptor::stiefel(10, 3).unwrap();
        let grid = default_order_grid::<f64>();
        for m in 1..=3usize {
            for seed in 0..5u64 {
                let x = random_point::<f64>(d, 300 + seed);
                let v = random_tangent(&x, 400 + seed);
                let v = v.scale(1.0 / v.norm());
                match estimate_order(RetractionSpec::gawlik_stiefel(m), &x, &v, &grid).unwrap() {
                    OrderEstimate::Slope { slope, .. } => {
                        assert!(
                            slope >= m as f64 + 0.7,
                            "m={m} seed={seed} slope={slope}"
                        );
                    }
                    OrderEstimate::ExceedsMeasurableRange => {}
                }
            }
        }
    }

    #[test]
    fn order_gawlik_grassmann_meets_claims() {
        let d = ManifoldDescriptor::grassmannian(8, 2).unwrap();
        let grid = default_order_grid::<f64>();
        for seed in 0..5u64 {
            let x = random_point::<f64>(d, 500 + seed);
            let v = random_tangent(&x, 600 + seed);
            let v = v.scale(1.0 / v.norm());
            match estimate_order(RetractionSpec::gawlik_grassmann(1), &x, &v, &grid).unwrap() {
                OrderEstimate::Slope { slope, .. } => {
                    assert!(slope >= 3.7, "seed={seed} slope={slope}");
                }
                OrderEstimate::ExceedsMeasurableRange => {}
            }
        }
    }

    #[test]
    fn estimate_order_validates_inputs() {
        let d = ManifoldDescriptor::stiefel(5, 2).unwrap();
        let x = random_point::<f64>(d, 1);
        let v = random_tangent(&x, 2);
        let unit = v.scale(1.0 / v.norm());
        let spec = RetractionSpec::polar_baseline();
        // too few points
        assert!(estimate_order(spec, &x, &unit, &[0.1, 0.05, 0.02]).is_err());
        // non-unit direction
        let grid = default_order_grid::<f64>();
        assert!(estimate_order(spec, &x, &v.scale(2.0 / v.norm()), &grid).is_err());
        // out-of-range grid
        let bad: Vec<f64> = (0..8).map(|i| 0.5 / (i + 1) as f64).collect();
        assert!(estimate_order(spec, &x, &unit, &bad).is_err());
    }

    #[test]
    fn spec_validation_self_test() {
        assert!(RetractionSpec::validated::<f64>(RetractionFamily::PolarBaseline, 1).is_ok());
        assert!(RetractionSpec::validated::<f64>(RetractionFamily::GawlikStiefel, 3).is_ok());
        assert!(RetractionSpec::validated::<f64>(RetractionFamily::GawlikGrassmann, 2).is_ok());
        assert!(RetractionSpec::validated::<f64>(RetractionFamily::GawlikStiefel, 0).is_err());
    }

    #[test]
    fn retract_rejects_wrong_manifold() {
        let gr = ManifoldDescriptor::grassmannian(6, 2).unwrap();
        let x = random_point::<f64>(gr, 1);
        let v = random_tangent(&x, 2);
        assert!(retract(RetractionSpec::gawlik_stiefel(2), &x, &v).is_err());
    }

    #[test]
    fn grassmann_retraction_respects_quotient() {
        let gr = ManifoldDescriptor::grassmannian(7, 3).unwrap();
        let x = random_point::<f64>(gr, 800);
        let v = random_tangent(&x, 801);
        let mut rng = ChaCha8Rng::seed_from_u64(802);
        let g = crate::linalg::gaussian_matrix::<f64, _>(&mut rng, 3, 3);
        let (q, _) = crate::linalg::qr_positive(&g).unwrap();
        let xq = crate::manifold::rotate_representative(&x, &q).unwrap();
        let vq = TangentVector::new(v.matrix() * &q, xq.clone()).unwrap();
        let spec = RetractionSpec::gawlik_grassmann(1);
        let y = retract(spec, &x, &v).unwrap();
        let yq = retract(spec, &xq, &vq).unwrap();
        assert!(distance(&y, &yq).unwrap() <= 1e-10);
    }
}
