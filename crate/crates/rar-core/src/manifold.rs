//! Matrix-manifold primitives for the Stiefel manifold St(n,p) and the
//! Grassmannian Gr(n,p).
//!
//! Points are `n×p` matrices with orthonormal columns; Grassmannian points
//! are such matrices taken as subspace representatives, and every operation
//! on them is invariant under right-multiplication by a `p×p` orthogonal
//! matrix. Tangent vectors are ambient `n×p` matrices satisfying the
//! manifold's tangency constraint (skew `XᵀV` on Stiefel, `XᵀV = 0` for
//! horizontal lifts on the Grassmannian). The metric is the trace inner
//! product inherited from the embedding.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{RarError, Result};
use crate::linalg;
use crate::num::{real, smax, Real};

/// Which of the two supported manifolds a descriptor refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ManifoldKind {
    Stiefel,
    Grassmannian,
}

/// Shape and kind of a matrix manifold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ManifoldDescriptor {
    pub kind: ManifoldKind,
    /// Ambient row count.
    pub n: usize,
    /// Column count, `1 ≤ p ≤ n`.
    pub p: usize,
}

impl ManifoldDescriptor {
    pub fn stiefel(n: usize, p: usize) -> Result<Self> {
        Self::new(ManifoldKind::Stiefel, n, p)
    }

    pub fn grassmannian(n: usize, p: usize) -> Result<Self> {
        Self::new(ManifoldKind::Grassmannian, n, p)
    }

    pub fn new(kind: ManifoldKind, n: usize, p: usize) -> Result<Self> {
        if p == 0 || p > n {
            return Err(RarError::Argument(format!(
                "manifold requires 1 <= p <= n, got n={n}, p={p}"
            )));
        }
        Ok(Self { kind, n, p })
    }

    /// Intrinsic dimension: `np − p(p+1)/2` on Stiefel, `p(n−p)` on the
    /// Grassmannian.
    pub fn dim(&self) -> usize {
        match self.kind {
            ManifoldKind::Stiefel => self.n * self.p - self.p * (self.p + 1) / 2,
            ManifoldKind::Grassmannian => self.p * (self.n - self.p),
        }
    }
}

/// A point on St(n,p) or Gr(n,p), stored as an orthonormal representative.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifoldPoint<S: Real> {
    x: DMatrix<S>,
    descriptor: ManifoldDescriptor,
}

impl<S: Real> ManifoldPoint<S> {
    /// Validates `‖XᵀX − I‖_F` against the orthonormality tolerance.
    pub fn new(x: DMatrix<S>, descriptor: ManifoldDescriptor) -> Result<Self> {
        if x.shape() != (descriptor.n, descriptor.p) {
            return Err(RarError::Argument(format!(
                "point shape {:?} does not match descriptor ({}, {})",
                x.shape(),
                descriptor.n,
                descriptor.p
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(RarError::Argument("point has non-finite entries".into()));
        }
        let res = orthonormality_residual(&x);
        if res > S::point_tol() {
            return Err(RarError::Argument(format!(
                "columns are not orthonormal: residual {res:?}"
            )));
        }
        Ok(Self { x, descriptor })
    }

    pub fn matrix(&self) -> &DMatrix<S> {
        &self.x
    }

    pub fn descriptor(&self) -> ManifoldDescriptor {
        self.descriptor
    }

    pub fn kind(&self) -> ManifoldKind {
        self.descriptor.kind
    }

    /// Intrinsic tangent-space dimension at this point.
    pub fn tangent_dim(&self) -> usize {
        self.descriptor.dim()
    }

    /// Same descriptor and bitwise-equal representative.
    pub fn same_point(&self, other: &Self) -> bool {
        self.descriptor == other.descriptor && self.x == other.x
    }
}

/// `‖XᵀX − I‖_F` of an orthonormal candidate.
pub fn orthonormality_residual<S: Real>(x: &DMatrix<S>) -> S {
    let p = x.ncols();
    (x.transpose() * x - DMatrix::<S>::identity(p, p)).norm()
}

/// A tangent vector at a base point, stored as its ambient `n×p` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentVector<S: Real> {
    v: DMatrix<S>,
    base: ManifoldPoint<S>,
}

impl<S: Real> TangentVector<S> {
    /// Validates the tangency constraint of the base manifold.
    pub fn new(v: DMatrix<S>, base: ManifoldPoint<S>) -> Result<Self> {
        if v.shape() != base.x.shape() {
            return Err(RarError::Argument(format!(
                "tangent shape {:?} does not match base {:?}",
                v.shape(),
                base.x.shape()
            )));
        }
        let scale = S::one() + v.norm();
        let res = tangency_residual(&v, &base);
        if res > S::tangent_tol() * scale {
            return Err(RarError::Argument(format!(
                "vector violates the tangency constraint: residual {res:?}"
            )));
        }
        Ok(Self { v, base })
    }

    pub(crate) fn new_unchecked(v: DMatrix<S>, base: ManifoldPoint<S>) -> Self {
        Self { v, base }
    }

    pub fn matrix(&self) -> &DMatrix<S> {
        &self.v
    }

    pub fn base(&self) -> &ManifoldPoint<S> {
        &self.base
    }

    pub fn norm(&self) -> S {
        self.v.norm()
    }

    pub fn scale(&self, s: S) -> Self {
        Self {
            v: &self.v * s,
            base: self.base.clone(),
        }
    }

    pub fn zero(base: &ManifoldPoint<S>) -> Self {
        Self {
            v: DMatrix::zeros(base.descriptor.n, base.descriptor.p),
            base: base.clone(),
        }
    }
}

/// Tangency residual: `‖sym(XᵀV)·2‖` on Stiefel, `‖XᵀV‖` on the
/// Grassmannian (horizontal lift).
pub fn tangency_residual<S: Real>(v: &DMatrix<S>, base: &ManifoldPoint<S>) -> S {
    let xtv = base.x.transpose() * v;
    match base.descriptor.kind {
        ManifoldKind::Stiefel => (&xtv + xtv.transpose()).norm(),
        ManifoldKind::Grassmannian => xtv.norm(),
    }
}

/// Orthogonal projection of an ambient matrix onto the tangent space at `x`.
///
/// Stiefel: `Z − X·sym(XᵀZ)`. Grassmannian: `(I − XXᵀ)Z`.
pub fn project_tangent<S: Real>(x: &ManifoldPoint<S>, z: &DMatrix<S>) -> Result<TangentVector<S>> {
    if z.shape() != x.x.shape() {
        return Err(RarError::Argument(format!(
            "ambient matrix shape {:?} does not match point {:?}",
            z.shape(),
            x.x.shape()
        )));
    }
    let xtz = x.x.transpose() * z;
    let v = match x.descriptor.kind {
        ManifoldKind::Stiefel => z - &x.x * linalg::sym(&xtz),
        ManifoldKind::Grassmannian => z - &x.x * xtz,
    };
    Ok(TangentVector::new_unchecked(v, x.clone()))
}

/// Trace inner product of two tangent vectors at the same base point.
pub fn inner<S: Real>(u: &TangentVector<S>, v: &TangentVector<S>) -> Result<S> {
    if !u.base.same_point(&v.base) {
        return Err(RarError::Argument(
            "inner product requires tangent vectors at the same base point".into(),
        ));
    }
    Ok(u.v.dot(&v.v))
}

/// Deterministic random point: QR orthonormalization (positive-diagonal `R`)
/// of an i.i.d. standard normal matrix.
pub fn random_point<S: Real>(descriptor: ManifoldDescriptor, seed: u64) -> ManifoldPoint<S> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let g = linalg::gaussian_matrix::<S, _>(&mut rng, descriptor.n, descriptor.p);
        // A Gaussian matrix is full-rank with probability one; retry on the
        // measure-zero failure rather than unwrap.
        if let Some((q, _)) = linalg::qr_positive(&g) {
            return ManifoldPoint {
                x: q,
                descriptor,
            };
        }
    }
}

/// Deterministic random tangent vector: projection of an i.i.d. standard
/// normal matrix onto the tangent space at `x`.
pub fn random_tangent<S: Real>(x: &ManifoldPoint<S>, seed: u64) -> TangentVector<S> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = linalg::gaussian_matrix::<S, _>(&mut rng, x.descriptor.n, x.descriptor.p);
    project_tangent(x, &g).expect("shapes match by construction")
}

/// Reference exponential map, used only to measure retraction order.
///
/// Stiefel: closed-form geodesic of the embedded (trace) metric,
/// `[X W]·exp([[A, −WᵀW],[I, A]])·[I;0]·exp(−A)` with `W = tV`, `A = XᵀW`.
/// Grassmannian: SVD geodesic `X·Vcos(Σ)Vᵀ + U·sin(Σ)Vᵀ` for `W = UΣVᵀ`.
pub fn exp_reference<S: Real>(
    x: &ManifoldPoint<S>,
    v: &TangentVector<S>,
    t: S,
) -> Result<ManifoldPoint<S>> {
    if !v.base.same_point(x) {
        return Err(RarError::Argument(
            "tangent vector is not based at the given point".into(),
        ));
    }
    if !t.is_finite() || v.v.iter().any(|e| !e.is_finite()) {
        return Err(RarError::Argument(
            "exp_reference requires finite inputs".into(),
        ));
    }
    if t < S::zero() {
        return Err(RarError::Argument("exp_reference requires t >= 0".into()));
    }
    let w = &v.v * t;
    if t == S::zero() || w.norm() == S::zero() {
        return Ok(x.clone());
    }
    let p = x.descriptor.p;
    let y = match x.descriptor.kind {
        ManifoldKind::Stiefel => {
            let a = x.x.transpose() * &w;
            let s = w.transpose() * &w;
            let mut m = DMatrix::<S>::zeros(2 * p, 2 * p);
            m.view_mut((0, 0), (p, p)).copy_from(&a);
            m.view_mut((0, p), (p, p)).copy_from(&(-&s));
            m.view_mut((p, 0), (p, p))
                .copy_from(&DMatrix::<S>::identity(p, p));
            m.view_mut((p, p), (p, p)).copy_from(&a);
            let e = linalg::expm(&m);
            let f = linalg::expm(&(-&a));
            let mut xw = DMatrix::<S>::zeros(x.descriptor.n, 2 * p);
            xw.view_mut((0, 0), (x.descriptor.n, p)).copy_from(&x.x);
            xw.view_mut((0, p), (x.descriptor.n, p)).copy_from(&w);
            let e_left = e.view((0, 0), (2 * p, p)).into_owned();
            xw * e_left * f
        }
        ManifoldKind::Grassmannian => {
            let svd = w.clone().svd(true, true);
            let u = svd.u.as_ref().expect("svd u");
            let vt = svd.v_t.as_ref().expect("svd v_t");
            let sigma = &svd.singular_values;
            let cos = DMatrix::<S>::from_fn(p, p, |i, j| {
                if i == j {
                    sigma[i].cos()
                } else {
                    S::zero()
                }
            });
            let sin = DMatrix::<S>::from_fn(p, p, |i, j| {
                if i == j {
                    sigma[i].sin()
                } else {
                    S::zero()
                }
            });
            &x.x * vt.transpose() * cos * vt + u * sin * vt
        }
    };
    ManifoldPoint::new(y, x.descriptor)
}

/// Distance used by the retraction order tests: ambient Frobenius distance
/// on Stiefel, principal-angle distance on the Grassmannian.
pub fn distance<S: Real>(a: &ManifoldPoint<S>, b: &ManifoldPoint<S>) -> Result<S> {
    if a.descriptor != b.descriptor {
        return Err(RarError::Argument(
            "distance requires points on the same manifold".into(),
        ));
    }
    match a.descriptor.kind {
        ManifoldKind::Stiefel => Ok((&a.x - &b.x).norm()),
        ManifoldKind::Grassmannian => {
            // Principal angles θ_i via atan2(sin θ_i, cos θ_i). The cosines
            // come from the overlap AᵀB and the sines from the residual
            // (I − AAᵀ)B; pairing the cosines in decreasing order with the
            // sines in increasing order matches them by angle. Unlike
            // acos of the overlap spectrum alone, this stays accurate for
            // angles far below √ε.
            let overlap = a.x.transpose() * &b.x;
            let residual = &b.x - &a.x * &overlap;
            let mut cosines: Vec<S> = overlap
                .svd(false, false)
                .singular_values
                .iter()
                .copied()
                .collect();
            let mut sines: Vec<S> = residual
                .svd(false, false)
                .singular_values
                .iter()
                .copied()
                .collect();
            cosines.sort_by(|x, y| y.partial_cmp(x).unwrap());
            sines.sort_by(|x, y| x.partial_cmp(y).unwrap());
            let mut sum = S::zero();
            for (&c, &s) in cosines.iter().zip(sines.iter()) {
                let theta = s.atan2(smax(c, S::zero()));
                sum += theta * theta;
            }
            Ok(sum.sqrt())
        }
    }
}

/// Applies a representative change `X → XQ` to a point; Grassmannian tests
/// use this to exercise quotient invariance.
pub fn rotate_representative<S: Real>(
    x: &ManifoldPoint<S>,
    q: &DMatrix<S>,
) -> Result<ManifoldPoint<S>> {
    if q.shape() != (x.descriptor.p, x.descriptor.p) {
        return Err(RarError::Argument("rotation must be p×p".into()));
    }
    ManifoldPoint::new(&x.x * q, x.descriptor)
}

/// Orthonormal basis of the tangent space at `x`, as flattened columns.
///
/// Deterministic: Gram–Schmidt over projected canonical basis matrices.
/// Used by dense verification oracles, not by the optimizer path.
pub fn tangent_basis<S: Real>(x: &ManifoldPoint<S>) -> Vec<TangentVector<S>> {
    let (n, p) = (x.descriptor.n, x.descriptor.p);
    let dim = x.tangent_dim();
    let mut basis: Vec<TangentVector<S>> = Vec::with_capacity(dim);
    let tol = real::<S>(1e-8);
    'outer: for j in 0..p {
        for i in 0..n {
            if basis.len() == dim {
                break 'outer;
            }
            let mut e = DMatrix::<S>::zeros(n, p);
            e[(i, j)] = S::one();
            let mut cand = project_tangent(x, &e).expect("shape ok").v;
            for b in &basis {
                let c = cand.dot(&b.v);
                cand -= &b.v * c;
            }
            // second Gram–Schmidt pass for numerical orthogonality
            for b in &basis {
                let c = cand.dot(&b.v);
                cand -= &b.v * c;
            }
            let nrm = cand.norm();
            if nrm > tol {
                basis.push(TangentVector::new_unchecked(cand / nrm, x.clone()));
            }
        }
    }
    assert_eq!(basis.len(), dim, "tangent basis construction fell short");
    basis
}
