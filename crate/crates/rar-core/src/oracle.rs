//! Derivative oracles of the pullback `f̂_x = f ∘ R|_{T_xM}` at the zero
//! tangent: value `c`, gradient `g`, Hessian action `u ↦ H·u`, and the
//! symmetric third-order tensor action `(u,v) ↦ T(u,v)`.
//!
//! The gradient is the projected analytic Euclidean gradient. `H` and `T`
//! come from nested finite differences of the map
//! `G(w) = grad of w̃ ↦ f(R_x(Π_x(w̃))) at w`, itself computed entrywise by
//! fourth-order central differences of the ambient extension. All stencils
//! are fourth order and the steps are sized so that the `ε_mach·|f|/h`
//! roundoff of `G` stays well below the 1e−6 (Hessian) and 1e−5 (tensor)
//! consistency tolerances; the classical `ε^{1/3}`-style steps are too
//! small for that once `G` is itself a finite-difference quantity.
//!
//! Actions are memoized on the exact bit pattern of their inputs, so
//! repeated calls are free and bitwise identical. A `PullbackModelData` is
//! confined to one optimizer instance (interior mutability is not `Sync`).

use std::cell::RefCell;
use std::collections::HashMap;

use nalgebra::DMatrix;

use crate::error::{RarError, Result};
use crate::manifold::{inner, project_tangent, ManifoldPoint, TangentVector};
use crate::num::{real, smax, Real};
use crate::retraction::{retract, RetractionSpec};

/// A smooth objective given by its ambient extension: value and Euclidean
/// gradient are defined on all of `R^{n×p}`, with the gradient matching
/// central finite differences of the value.
pub trait Objective<S: Real> {
    fn value(&self, x: &DMatrix<S>) -> S;
    fn euclid_gradient(&self, x: &DMatrix<S>) -> DMatrix<S>;
}

/// Brockett trace cost `½·Tr(XᵀAXN)` with symmetric `A` and diagonal `N`.
#[derive(Debug, Clone)]
pub struct BrockettObjective<S: Real> {
    a: DMatrix<S>,
    n_diag: Vec<S>,
}

impl<S: Real> BrockettObjective<S> {
    /// `A` must be exactly symmetric (bitwise); `n_diag` is the diagonal
    /// of `N`.
    pub fn new(a: DMatrix<S>, n_diag: Vec<S>) -> Result<Self> {
        if a.nrows() != a.ncols() {
            return Err(RarError::Argument("A must be square".into()));
        }
        for i in 0..a.nrows() {
            for j in 0..i {
                if a[(i, j)] != a[(j, i)] {
                    return Err(RarError::Argument("A must be exactly symmetric".into()));
                }
            }
        }
        if n_diag.is_empty() || n_diag.len() > a.nrows() {
            return Err(RarError::Argument("N diagonal has invalid length".into()));
        }
        Ok(Self { a, n_diag })
    }

    /// Benchmark form: `N = Diag(1,…,p)`.
    pub fn with_standard_diag(a: DMatrix<S>, p: usize) -> Result<Self> {
        let n_diag = (1..=p).map(|i| real::<S>(i as f64)).collect();
        Self::new(a, n_diag)
    }

    pub fn a(&self) -> &DMatrix<S> {
        &self.a
    }

    pub fn n_diag(&self) -> &[S] {
        &self.n_diag
    }

    fn xn(&self, x: &DMatrix<S>) -> DMatrix<S> {
        let mut xn = x.clone();
        for (j, &d) in self.n_diag.iter().enumerate() {
            for i in 0..x.nrows() {
                xn[(i, j)] *= d;
            }
        }
        xn
    }
}

impl<S: Real> Objective<S> for BrockettObjective<S> {
    /// `½·Tr(XᵀAXN)`.
    fn value(&self, x: &DMatrix<S>) -> S {
        let ax = &self.a * x;
        let xn = self.xn(x);
        ax.dot(&xn) * real::<S>(0.5)
    }

    /// `A·X·N`.
    fn euclid_gradient(&self, x: &DMatrix<S>) -> DMatrix<S> {
        self.xn(&(&self.a * x))
    }
}

/// Projected analytic Euclidean gradient; equals `Df̂_x(0)` under the
/// metric identification because retractions have identity differential at
/// the origin.
pub fn riemannian_gradient<S: Real>(
    obj: &dyn Objective<S>,
    x: &ManifoldPoint<S>,
) -> Result<TangentVector<S>> {
    let eg = obj.euclid_gradient(x.matrix());
    project_tangent(x, &eg)
}

/// Verifies the `Objective` gradient invariant by central finite
/// differences of the ambient extension; returns the worst relative error.
pub fn gradient_check<S: Real>(obj: &dyn Objective<S>, x: &DMatrix<S>, h: S) -> S {
    let g = obj.euclid_gradient(x);
    let mut worst = S::zero();
    let scale = S::one() + g.norm();
    for i in 0..x.nrows() {
        for j in 0..x.ncols() {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[(i, j)] += h;
            xm[(i, j)] -= h;
            let fd = (obj.value(&xp) - obj.value(&xm)) / (h + h);
            worst = smax(worst, (fd - g[(i, j)]).abs() / scale);
        }
    }
    worst
}

// Finite-difference steps for the nested oracle. `G_STEP` is the entrywise
// fourth-order step for the ambient gradient; `H_STEP`/`T_STEP` are the
// outer directional steps, fourth-order via Richardson, both large enough
// that the ~1e-12·|f| roundoff of G divided by the step (H) or its square
// (T) stays below the oracle tolerances.
const G_STEP: f64 = 7.4e-4; // ≈ ε_mach^{1/5}
const H_STEP: f64 = 3.0e-3;
const T_STEP: f64 = 6.0e-3;

fn matrix_key<S: Real>(mats: &[&DMatrix<S>]) -> Vec<u64> {
    let mut key = Vec::with_capacity(mats.iter().map(|m| m.len() + 1).sum());
    for m in mats {
        key.push(m.nrows() as u64);
        for v in m.iter() {
            key.push(v.to_bits_u64());
        }
    }
    key
}

#[derive(Default)]
struct OracleCache<S: Real> {
    grad: HashMap<Vec<u64>, DMatrix<S>>,
    hess: HashMap<Vec<u64>, DMatrix<S>>,
    tens: HashMap<Vec<u64>, DMatrix<S>>,
}

/// Per-basepoint pullback derivative data: `c = f̂(0)`, `g = Df̂(0)`, and
/// memoizing closures for the Hessian and third-order tensor actions.
pub struct PullbackModelData<'o, S: Real> {
    obj: &'o dyn Objective<S>,
    spec: RetractionSpec,
    base: ManifoldPoint<S>,
    c: S,
    g: TangentVector<S>,
    cache: RefCell<OracleCache<S>>,
    grad_evals: RefCell<usize>,
}

/// Packages the pullback derivative oracle at `x` for the given retraction.
pub fn build_model_data<'o, S: Real>(
    obj: &'o dyn Objective<S>,
    spec: RetractionSpec,
    x: &ManifoldPoint<S>,
) -> Result<PullbackModelData<'o, S>> {
    let c = obj.value(x.matrix());
    if !c.is_finite() {
        return Err(RarError::Argument("objective value is not finite".into()));
    }
    let g = riemannian_gradient(obj, x)?;
    Ok(PullbackModelData {
        obj,
        spec,
        base: x.clone(),
        c,
        g,
        cache: RefCell::new(OracleCache::default()),
        grad_evals: RefCell::new(0),
    })
}

impl<'o, S: Real> PullbackModelData<'o, S> {
    pub fn base(&self) -> &ManifoldPoint<S> {
        &self.base
    }

    pub fn spec(&self) -> RetractionSpec {
        self.spec
    }

    pub fn c(&self) -> S {
        self.c
    }

    pub fn g(&self) -> &TangentVector<S> {
        &self.g
    }

    pub fn grad_norm(&self) -> S {
        self.g.norm()
    }

    /// Number of ambient-gradient evaluations so far (cache misses).
    pub fn grad_eval_count(&self) -> usize {
        *self.grad_evals.borrow()
    }

    /// The pullback value `f̂(w) = f(R_x(Π_x(w)))` for an ambient `w`.
    pub fn pullback_value(&self, w: &DMatrix<S>) -> Result<S> {
        let v = project_tangent(&self.base, w)?;
        let y = retract(self.spec, &self.base, &v)?;
        Ok(self.obj.value(y.matrix()))
    }

    /// Retracts a tangent step from the base point.
    pub fn retract_step(&self, v: &TangentVector<S>) -> Result<ManifoldPoint<S>> {
        retract(self.spec, &self.base, v)
    }

    fn check_based(&self, u: &TangentVector<S>) -> Result<()> {
        if !u.base().same_point(&self.base) {
            return Err(RarError::Argument(
                "tangent vector is not based at the oracle's base point".into(),
            ));
        }
        Ok(())
    }

    /// Gradient of the pullback extension at `w`, as a tangent vector:
    /// fourth-order entrywise finite differences of the ambient extension,
    /// projected. Results are memoized on the bits of `w`.
    pub fn pullback_grad_at(&self, w: &TangentVector<S>) -> Result<TangentVector<S>> {
        self.check_based(w)?;
        let key = matrix_key(&[w.matrix()]);
        if let Some(hit) = self.cache.borrow().grad.get(&key) {
            return Ok(TangentVector::new_unchecked(hit.clone(), self.base.clone()));
        }
        let wn = w.norm();
        if !wn.is_finite() {
            return Err(RarError::Argument("non-finite tangent input".into()));
        }
        let h = real::<S>(G_STEP) * smax(S::one(), wn);
        if !(h > S::zero()) {
            return Err(RarError::StepSize("gradient step underflowed".into()));
        }
        let (n, p) = (self.base.descriptor().n, self.base.descriptor().p);
        let mut grad = DMatrix::<S>::zeros(n, p);
        let two_h = h + h;
        let twelve_h = real::<S>(12.0) * h;
        let mut probe = w.matrix().clone();
        for j in 0..p {
            for i in 0..n {
                let w0 = probe[(i, j)];
                probe[(i, j)] = w0 + h;
                let f1 = self.extension_value(&probe)?;
                probe[(i, j)] = w0 - h;
                let f2 = self.extension_value(&probe)?;
                probe[(i, j)] = w0 + two_h;
                let f3 = self.extension_value(&probe)?;
                probe[(i, j)] = w0 - two_h;
                let f4 = self.extension_value(&probe)?;
                probe[(i, j)] = w0;
                grad[(i, j)] = (real::<S>(8.0) * (f1 - f2) - (f3 - f4)) / twelve_h;
            }
        }
        let projected = project_tangent(&self.base, &grad)?;
        *self.grad_evals.borrow_mut() += 1;
        self.cache
            .borrow_mut()
            .grad
            .insert(key, projected.matrix().clone());
        Ok(projected)
    }

    fn extension_value(&self, w: &DMatrix<S>) -> Result<S> {
        let v = project_tangent(&self.base, w)?;
        let y = retract(self.spec, &self.base, &v)?;
        Ok(self.obj.value(y.matrix()))
    }

    /// Hessian action `H·u`: fourth-order central difference of the
    /// pullback gradient along the normalized direction.
    pub fn h_action(&self, u: &TangentVector<S>) -> Result<TangentVector<S>> {
        self.check_based(u)?;
        let un = u.norm();
        if un == S::zero() {
            return Ok(TangentVector::zero(&self.base));
        }
        if !un.is_finite() {
            return Err(RarError::Argument("non-finite tangent input".into()));
        }
        let key = matrix_key(&[u.matrix()]);
        if let Some(hit) = self.cache.borrow().hess.get(&key) {
            return Ok(TangentVector::new_unchecked(hit.clone(), self.base.clone()));
        }
        let eps = real::<S>(H_STEP);
        if !(eps * un > S::zero()) {
            return Err(RarError::StepSize(
                "hessian step underflowed relative to the input".into(),
            ));
        }
        let unit = u.scale(S::one() / un);
        let g1 = self.pullback_grad_at(&unit.scale(eps))?;
        let g2 = self.pullback_grad_at(&unit.scale(-eps))?;
        let g3 = self.pullback_grad_at(&unit.scale(eps + eps))?;
        let g4 = self.pullback_grad_at(&unit.scale(-(eps + eps)))?;
        let num = (g1.matrix() - g2.matrix()) * real::<S>(8.0) - (g3.matrix() - g4.matrix());
        let action = num * (un / (real::<S>(12.0) * eps));
        let out = TangentVector::new_unchecked(action, self.base.clone());
        self.cache
            .borrow_mut()
            .hess
            .insert(key, out.matrix().clone());
        Ok(out)
    }

    /// Symmetric tensor action `T(u,v)`: mixed second difference of the
    /// pullback gradient over `±ε(û±v̂)`, Richardson-extrapolated to fourth
    /// order. Exactly symmetric in its arguments and memoized on the
    /// unordered input pair.
    pub fn t_action(&self, u: &TangentVector<S>, v: &TangentVector<S>) -> Result<TangentVector<S>> {
        self.check_based(u)?;
        self.check_based(v)?;
        let un = u.norm();
        let vn = v.norm();
        if un == S::zero() || vn == S::zero() {
            return Ok(TangentVector::zero(&self.base));
        }
        if !un.is_finite() || !vn.is_finite() {
            return Err(RarError::Argument("non-finite tangent input".into()));
        }
        let ku = matrix_key(&[u.matrix()]);
        let kv = matrix_key(&[v.matrix()]);
        let key = if ku <= kv {
            matrix_key(&[u.matrix(), v.matrix()])
        } else {
            matrix_key(&[v.matrix(), u.matrix()])
        };
        if let Some(hit) = self.cache.borrow().tens.get(&key) {
            return Ok(TangentVector::new_unchecked(hit.clone(), self.base.clone()));
        }
        let eps = real::<S>(T_STEP);
        if !(eps * un > S::zero() && eps * vn > S::zero()) {
            return Err(RarError::StepSize(
                "tensor step underflowed relative to the inputs".into(),
            ));
        }
        let unit_u = u.scale(S::one() / un);
        let unit_v = v.scale(S::one() / vn);
        let plus = TangentVector::new_unchecked(
            unit_u.matrix() + unit_v.matrix(),
            self.base.clone(),
        );
        let minus = TangentVector::new_unchecked(
            unit_u.matrix() - unit_v.matrix(),
            self.base.clone(),
        );
        let t_at = |e: S| -> Result<DMatrix<S>> {
            let g1 = self.pullback_grad_at(&plus.scale(e))?;
            let g2 = self.pullback_grad_at(&plus.scale(-e))?;
            let g3 = self.pullback_grad_at(&minus.scale(e))?;
            let g4 = self.pullback_grad_at(&minus.scale(-e))?;
            let four_e2 = real::<S>(4.0) * e * e;
            Ok((g1.matrix() + g2.matrix() - g3.matrix() - g4.matrix()) / four_e2)
        };
        let t_e = t_at(eps)?;
        let t_2e = t_at(eps + eps)?;
        let extrapolated = (t_e * real::<S>(4.0) - t_2e) * real::<S>(1.0 / 3.0);
        let action = extrapolated * (un * vn);
        let out = TangentVector::new_unchecked(action, self.base.clone());
        self.cache
            .borrow_mut()
            .tens
            .insert(key, out.matrix().clone());
        Ok(out)
    }

    /// Cubic Taylor value `c + ⟨g,v⟩ + ½⟨v,Hv⟩ + (1/6)⟨v,T(v,v)⟩`.
    pub fn taylor3(&self, v: &TangentVector<S>) -> Result<S> {
        let hv = self.h_action(v)?;
        let tvv = self.t_action(v, v)?;
        Ok(self.c
            + inner(&self.g, v)?
            + real::<S>(0.5) * inner(v, &hv)?
            + real::<S>(1.0 / 6.0) * inner(v, &tvv)?)
    }
}
