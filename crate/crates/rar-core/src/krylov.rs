//! Symmetric tensor Krylov iteration and the hybrid subspace minimization
//! framework for quartically regularized cubic models.
//!
//! The iteration grows one shared orthonormal basis from tensor actions
//! `T(u_j, u_i)`, recording every coordinate `⟨u_ℓ, T(u_i, u_j)⟩` under all
//! index permutations the moment it becomes computable. The raw action
//! vector of each processed pair is retained so that later basis vectors
//! can fill in their coordinates against old pairs without ever
//! re-evaluating the tensor; this keeps the coordinate table complete on
//! the current basis at all times.
//!
//! The framework seeds the basis with the normalized model gradient,
//! alternates basis expansion with an inner solve of the reduced model,
//! and terminates only when the returned point satisfies the full-space
//! conditions `‖∇M(u*)‖ ≤ θ‖u*‖³` and `M(u*) ≤ M(0)`. The basis is capped
//! at the effective space dimension, where the reduced problem equals the
//! full one and the conditions must be attainable by any working solver.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{RarError, Result};
use crate::model::QuarticModel;
use crate::num::{real, smax, Real};
use crate::solvers::{InnerSolver, SolverStatus};

/// Ambient-space sampler used for benign-breakdown augments; must produce
/// vectors inside the effective subspace (e.g. random tangents for
/// manifold problems, plain Gaussians in coordinate spaces).
pub type Sampler<'a, S> = dyn Fn(&mut ChaCha8Rng) -> DVector<S> + 'a;

/// Tensor action closure over ambient coordinate vectors.
pub type TensorAction<'a, S> = dyn Fn(&DVector<S>, &DVector<S>) -> Result<DVector<S>> + 'a;

/// Linear action closure over ambient coordinate vectors.
pub type LinearAction<'a, S> = dyn Fn(&DVector<S>) -> Result<DVector<S>> + 'a;

/// Growing orthonormal basis with coordinate bookkeeping for `T` and `H`.
pub struct KrylovState<S: Real> {
    basis: Vec<DVector<S>>,
    /// raw action vector per processed pair `(i,j)`, `i ≤ j`
    pair_actions: HashMap<(usize, usize), DVector<S>>,
    /// processed pairs in processing order, for deterministic refills
    pair_order: Vec<(usize, usize)>,
    /// one scalar per sorted index triple
    t_coords: HashMap<(usize, usize, usize), S>,
    h_coords: DMatrix<S>,
    h_filled: Vec<bool>,
    r_minus: usize,
    r: usize,
    dim: usize,
    dim_cap: usize,
    rng: ChaCha8Rng,
}

/// What one expansion call did.
#[derive(Debug, Clone, Copy, Default)]
pub struct ExpandOutcome {
    pub pairs_processed: usize,
    pub vectors_appended: usize,
    pub augmented: bool,
}

fn sorted_triple(a: usize, b: usize, c: usize) -> (usize, usize, usize) {
    let mut t = [a, b, c];
    t.sort_unstable();
    (t[0], t[1], t[2])
}

impl<S: Real> KrylovState<S> {
    /// Seeds the basis with `seed_direction/‖seed_direction‖`.
    pub fn new(seed_direction: &DVector<S>, dim_cap: usize, seed: u64) -> Result<Self> {
        let n = seed_direction.norm();
        if n == S::zero() || !n.is_finite() {
            return Err(RarError::Precondition(
                "krylov seed direction must be nonzero and finite".into(),
            ));
        }
        let dim = seed_direction.len();
        if dim_cap == 0 || dim_cap > dim {
            return Err(RarError::Argument(
                "dim_cap must be in 1..=ambient dimension".into(),
            ));
        }
        Ok(Self {
            basis: vec![seed_direction / n],
            pair_actions: HashMap::new(),
            pair_order: Vec::new(),
            t_coords: HashMap::new(),
            h_coords: DMatrix::zeros(0, 0),
            h_filled: Vec::new(),
            r_minus: 0,
            r: 1,
            dim,
            dim_cap,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn r(&self) -> usize {
        self.r
    }

    pub fn r_minus(&self) -> usize {
        self.r_minus
    }

    pub fn r_plus(&self) -> usize {
        self.basis.len()
    }

    pub fn dim_cap(&self) -> usize {
        self.dim_cap
    }

    pub fn basis(&self) -> &[DVector<S>] {
        &self.basis
    }

    pub fn t_coord(&self, a: usize, b: usize, c: usize) -> Option<S> {
        self.t_coords.get(&sorted_triple(a, b, c)).copied()
    }

    /// `‖UᵀU − I‖_max` of the current basis.
    pub fn orthonormality_residual(&self) -> S {
        let mut worst = S::zero();
        for i in 0..self.basis.len() {
            for j in i..self.basis.len() {
                let d = self.basis[i].dot(&self.basis[j]);
                let target = if i == j { S::one() } else { S::zero() };
                worst = smax(worst, (d - target).abs());
            }
        }
        worst
    }

    /// `Σ s_i u_i`, zero-extending missing coordinates.
    pub fn lift(&self, s: &DVector<S>) -> Result<DVector<S>> {
        if s.len() > self.basis.len() {
            return Err(RarError::Argument(
                "coordinate vector longer than the basis".into(),
            ));
        }
        let mut out = DVector::<S>::zeros(self.dim);
        for (i, b) in self.basis.iter().take(s.len()).enumerate() {
            out += b * s[i];
        }
        Ok(out)
    }

    /// Advances the bookkeeping indices after a solve:
    /// `r₋ ← r`, `r ← r₊`.
    pub fn advance(&mut self) {
        self.r_minus = self.r;
        self.r = self.basis.len();
    }

    fn record_pair_coords(&mut self, i: usize, j: usize, action: &DVector<S>) {
        for l in 0..self.basis.len() {
            let key = sorted_triple(l, i, j);
            if !self.t_coords.contains_key(&key) {
                let v = self.basis[l].dot(action);
                self.t_coords.insert(key, v);
            }
        }
    }

    fn backfill_new_vector(&mut self, new_index: usize) {
        for k in 0..self.pair_order.len() {
            let (i, j) = self.pair_order[k];
            let key = sorted_triple(new_index, i, j);
            if !self.t_coords.contains_key(&key) {
                let v = self.basis[new_index].dot(&self.pair_actions[&(i, j)]);
                self.t_coords.insert(key, v);
            }
        }
    }

    /// Two-pass Gram–Schmidt of `v` against the current basis; returns the
    /// residual and its norm.
    fn orthogonalize(&self, v: &DVector<S>) -> (DVector<S>, S) {
        let mut w = v.clone();
        for _ in 0..2 {
            for b in &self.basis {
                let c = w.dot(b);
                w -= b * c;
            }
        }
        let n = w.norm();
        (w, n)
    }

    /// One sweep of the symmetric maximal Krylov iteration: processes every
    /// unused pair `(i,j)` with `i ≤ j ≤ r` (snapshot at entry, lexicographic
    /// order), records tensor coordinates under all permutations, appends
    /// orthogonalized directions, and falls back to one random augment when
    /// a full sweep makes no progress and the basis is not yet at the cap.
    pub fn expand(
        &mut self,
        t_action: &TensorAction<'_, S>,
        sampler: &Sampler<'_, S>,
    ) -> Result<ExpandOutcome> {
        let snapshot_r = self.r;
        let mut out = ExpandOutcome::default();
        for i in 0..snapshot_r {
            for j in i..snapshot_r {
                if self.pair_actions.contains_key(&(i, j)) {
                    continue;
                }
                // the paper's argument order: T(u_j, u_i)
                let action = t_action(&self.basis[j], &self.basis[i])?;
                if action.len() != self.dim {
                    return Err(RarError::Internal(
                        "tensor action output left the ambient space".into(),
                    ));
                }
                out.pairs_processed += 1;
                self.record_pair_coords(i, j, &action);
                let scale = smax(S::one(), action.norm());
                let (residual, rnorm) = self.orthogonalize(&action);
                self.pair_actions.insert((i, j), action);
                self.pair_order.push((i, j));
                if rnorm > real::<S>(1e-10) * scale && self.basis.len() < self.dim_cap {
                    self.basis.push(residual / rnorm);
                    out.vectors_appended += 1;
                    self.backfill_new_vector(self.basis.len() - 1);
                }
                // otherwise: benign breakdown for this pair, nothing appended
            }
        }
        if out.vectors_appended == 0 && self.basis.len() < self.dim_cap {
            // benign breakdown remedy: augment with a random orthonormalized
            // direction so the iteration keeps making progress
            for _ in 0..32 {
                let cand = sampler(&mut self.rng);
                if cand.len() != self.dim {
                    return Err(RarError::Internal(
                        "sampler output left the ambient space".into(),
                    ));
                }
                let (residual, rnorm) = self.orthogonalize(&cand);
                if rnorm > real::<S>(1e-8) * smax(S::one(), cand.norm()) {
                    self.basis.push(residual / rnorm);
                    out.vectors_appended = 1;
                    out.augmented = true;
                    self.backfill_new_vector(self.basis.len() - 1);
                    break;
                }
            }
        }
        Ok(out)
    }

    /// Fills the unfilled entries `H̃_ij = ⟨u_i, H·u_j⟩` for `i ≤ j ≤ r`,
    /// mirrored symmetrically; filled entries are never recomputed.
    /// Returns the number of `H` evaluations performed.
    pub fn update_h_coords(&mut self, h_action: &LinearAction<'_, S>) -> Result<usize> {
        let r = self.r;
        if self.h_coords.nrows() < r {
            let mut grown = DMatrix::<S>::zeros(r, r);
            let old = self.h_coords.nrows();
            grown
                .view_mut((0, 0), (old, old))
                .copy_from(&self.h_coords);
            self.h_coords = grown;
        }
        // h_filled[j] marks column j as evaluated through H·u_j
        self.h_filled.resize(r.max(self.h_filled.len()), false);
        let mut evals = 0usize;
        for j in 0..r {
            if self.h_filled[j] {
                continue;
            }
            let hj = h_action(&self.basis[j])?;
            if hj.len() != self.dim {
                return Err(RarError::Internal(
                    "linear action output left the ambient space".into(),
                ));
            }
            evals += 1;
            for i in 0..r {
                let v = self.basis[i].dot(&hj);
                if i <= j {
                    self.h_coords[(i, j)] = v;
                    self.h_coords[(j, i)] = v;
                }
            }
            self.h_filled[j] = true;
        }
        Ok(evals)
    }

    /// The reduced model `M̃_r(s) = M(Σ s_i u_i)` over `R^r`, built from the
    /// stored coordinates. Requires the tensor and Hessian tables to be
    /// complete at dimension `r`; anything else is a bookkeeping bug.
    pub fn reduced_model(&self, full: &QuarticModel<'_, S>) -> Result<QuarticModel<'static, S>> {
        let r = self.r;
        if self.h_coords.nrows() < r || self.h_filled.iter().take(r).any(|&f| !f) {
            return Err(RarError::Internal(
                "reduced model requested before H coordinates were filled".into(),
            ));
        }
        let g_red = DVector::<S>::from_fn(r, |i, _| self.basis[i].dot(full.g()));
        let h_red = self.h_coords.view((0, 0), (r, r)).into_owned();
        let mut t_red = vec![DMatrix::<S>::zeros(r, r); r];
        for a in 0..r {
            for b in a..r {
                for c in b..r {
                    let Some(&w) = self.t_coords.get(&(a, b, c)) else {
                        return Err(RarError::Internal(format!(
                            "tensor coordinate ({a},{b},{c}) missing at r={r}"
                        )));
                    };
                    t_red[a][(b, c)] = w;
                    t_red[a][(c, b)] = w;
                    t_red[b][(a, c)] = w;
                    t_red[b][(c, a)] = w;
                    t_red[c][(a, b)] = w;
                    t_red[c][(b, a)] = w;
                }
            }
        }
        QuarticModel::from_dense(full.c(), g_red, h_red, t_red, full.sigma())
    }
}

/// Options for [`hybrid_minimize`].
#[derive(Debug, Clone)]
pub struct HybridOptions<S> {
    pub theta: S,
    /// Round cap; `None` means `dim_cap + 5`.
    pub max_rounds: Option<usize>,
    /// Seed for breakdown augments.
    pub seed: u64,
    /// Do not return before the basis reaches this size (clamped to the
    /// cap); lets callers force larger subspaces for curvature control.
    pub min_r: usize,
    /// Full-space warm start, projected onto the basis at each round until
    /// the first solve; exact once the basis spans the effective space.
    pub warm_start: Option<DVector<S>>,
}

impl<S: Real> HybridOptions<S> {
    pub fn new(theta: S, seed: u64) -> Self {
        Self {
            theta,
            max_rounds: None,
            seed,
            min_r: 0,
            warm_start: None,
        }
    }
}

/// Diagnostics of a hybrid minimization run.
#[derive(Debug, Clone, Default)]
pub struct HybridStats {
    pub rounds: usize,
    pub final_r: usize,
    pub pairs_processed: usize,
    pub augments: usize,
    pub inner_iterations: usize,
    pub h_evaluations: usize,
}

/// Minimizes the full model over growing Krylov subspaces until the
/// returned point satisfies both full-space termination inequalities.
///
/// `dim_cap` is the dimension of the effective subspace containing `g` and
/// closed under the `H`/`T` actions (the tangent dimension for manifold
/// problems); `sampler` must produce vectors inside it.
pub fn hybrid_minimize<S: Real>(
    full: &QuarticModel<'_, S>,
    dim_cap: usize,
    sampler: &Sampler<'_, S>,
    solver: &dyn InnerSolver<S>,
    opts: &HybridOptions<S>,
) -> Result<(DVector<S>, HybridStats)> {
    if opts.theta <= S::zero() {
        return Err(RarError::Argument("theta must be positive".into()));
    }
    let g = full.g();
    if g.norm() == S::zero() {
        return Err(RarError::Precondition(
            "hybrid minimization requires a nonzero model gradient".into(),
        ));
    }
    let mut state = KrylovState::new(g, dim_cap, opts.seed)?;
    let t_action: &TensorAction<'_, S> = &|u, v| full.t_apply(u, v);
    let h_action: &LinearAction<'_, S> = &|u| full.h_apply(u);
    let max_rounds = opts.max_rounds.unwrap_or(dim_cap + 5);
    let min_r = opts.min_r.min(dim_cap);
    let mut stats = HybridStats::default();
    let mut warm_prev: DVector<S> = DVector::zeros(0);
    let mut external_warm = opts.warm_start.clone();
    if let Some(w) = &external_warm {
        if w.len() != full.dim() {
            return Err(RarError::Argument(
                "hybrid warm start has the wrong ambient dimension".into(),
            ));
        }
    }

    while stats.rounds < max_rounds {
        stats.rounds += 1;
        let expand = state.expand(t_action, sampler)?;
        stats.pairs_processed += expand.pairs_processed;
        if expand.augmented {
            stats.augments += 1;
        }
        stats.h_evaluations += state.update_h_coords(h_action)?;
        let reduced = state.reduced_model(full)?;
        let r = state.r();
        let mut warm = DVector::<S>::zeros(r);
        if let Some(w) = &external_warm {
            // best subspace approximation of the supplied point
            for (i, b) in state.basis().iter().take(r).enumerate() {
                warm[i] = b.dot(w);
            }
            // keep projecting on later rounds only if no solve has
            // produced its own warm start yet
        } else {
            for i in 0..warm_prev.len().min(r) {
                warm[i] = warm_prev[i];
            }
        }

        if r < min_r && r < dim_cap {
            // forced growth: skip the solve until the basis is large enough
            state.advance();
            continue;
        }
        let at_cap = r == dim_cap;
        // At the cap the reduced problem is the full problem, so a working
        // solver must be able to satisfy the full-space check; tighten the
        // inner tolerance to absorb lift round-off before giving up.
        let mut inner_theta = opts.theta;
        let attempts = if at_cap { 40 } else { 1 };
        let mut current_warm = warm;
        for attempt in 0..attempts {
            let outcome = solver.solve(&reduced, &current_warm, inner_theta)?;
            stats.inner_iterations += outcome.inner_iterations;
            let u_star = state.lift(&outcome.s_star)?;
            if outcome.status == SolverStatus::MetContract
                && full.meets_termination(&u_star, opts.theta)?
            {
                stats.final_r = r;
                debug_assert!(
                    full.c() - full.taylor_value(&u_star)?
                        >= full.sigma() * real::<S>(0.25) * u_star.norm().powi(4)
                            - real::<S>(1e-12) * (S::one() + full.c().abs()),
                    "model sufficient decrease violated at return"
                );
                return Ok((u_star, stats));
            }
            if !at_cap {
                current_warm = outcome.s_star;
                break;
            }
            if attempt + 1 == attempts {
                return Err(RarError::SolverContract(format!(
                    "solver '{}' failed the full-space termination check at full \
                     dimension r={r} (grad norm {:?}, value {:?}, c {:?})",
                    solver.name(),
                    outcome.grad_norm,
                    outcome.value,
                    outcome.status,
                )));
            }
            inner_theta *= real::<S>(0.5);
            current_warm = outcome.s_star;
        }
        warm_prev = current_warm;
        external_warm = None;
        state.advance();
    }
    Err(RarError::Internal(format!(
        "hybrid minimization exhausted {max_rounds} rounds without meeting the \
         full-space termination conditions (r={})",
        state.r()
    )))
}

/// Gaussian sampler for plain coordinate spaces.
pub fn gaussian_sampler<S: Real>(dim: usize) -> impl Fn(&mut ChaCha8Rng) -> DVector<S> {
    move |rng| crate::linalg::gaussian_vector::<S, _>(rng, dim)
}
