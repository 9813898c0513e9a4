//! Lower and upper Hamiltonians by exhaustive enumeration of the control grids.
//!
//! The integrand is
//!
//! ```text
//! ½ Tr(σσᵀ X) + ⟨b, q⟩ + F(t, x, u, qσ, α, β)
//! ```
//!
//! `H⁻` is the max over `A` of the min over `B`, `H⁺` the min over `B` of the
//! max over `A`. Ties are broken by the lowest grid index so that extracted
//! feedback controls are deterministic.

use crate::model::GameModel;
use crate::scalar::{Field, Real};

/// Arguments `(t, x, u, q, X)` of the Hamiltonians.
///
/// `hess` is the symmetric `n × n` matrix `X` in row-major order. When
/// `drift_gradients` holds one-sided gradients `(backward, forward)` the
/// drift term is upwinded: `b⁺·forward − b⁻·backward` per coordinate; `q`
/// still feeds the `z = qσ` argument of `F`.
#[derive(Debug, Clone, Copy)]
pub struct HamiltonianQuery<'a, S> {
    pub t: S,
    pub x: &'a [S],
    pub u: S,
    pub q: &'a [S],
    pub hess: &'a [S],
    pub drift_gradients: Option<(&'a [S], &'a [S])>,
}

impl<'a, S: Field> HamiltonianQuery<'a, S> {
    pub fn new(t: S, x: &'a [S], u: S, q: &'a [S], hess: &'a [S]) -> Self {
        debug_assert_eq!(q.len(), x.len());
        debug_assert_eq!(hess.len(), x.len() * x.len());
        Self {
            t,
            x,
            u,
            q,
            hess,
            drift_gradients: None,
        }
    }

    pub fn with_upwind(mut self, backward: &'a [S], forward: &'a [S]) -> Self {
        self.drift_gradients = Some((backward, forward));
        self
    }

    pub fn is_symmetric(&self) -> bool {
        let n = self.x.len();
        (0..n).all(|i| (0..i).all(|j| self.hess[i * n + j] == self.hess[j * n + i]))
    }
}

/// Upwinded product `b·q` for a single coordinate.
#[inline]
pub(crate) fn upwind_term<S: Field>(b: S, backward: S, forward: S) -> S {
    if b >= S::zero() {
        b * forward
    } else {
        b * backward
    }
}

/// The integrand for one control pair.
pub fn hamiltonian_inner<S: Real>(
    model: &GameModel<S>,
    query: &HamiltonianQuery<'_, S>,
    alpha: S,
    beta: S,
) -> S {
    let n = model.state_dim;
    let d = model.noise_dim;
    let mut b = vec![S::zero(); n];
    let mut sigma = vec![S::zero(); n * d];
    model.drift(query.t, query.x, alpha, beta, &mut b);
    model.diffusion(query.t, query.x, alpha, beta, &mut sigma);

    // ½ Tr(σσᵀ X) = ½ Σ_ij (Σ_k σ_ik σ_jk) X_ij
    let mut trace = S::zero();
    for i in 0..n {
        for j in 0..n {
            let mut a_ij = S::zero();
            for k in 0..d {
                a_ij = a_ij + sigma[i * d + k] * sigma[j * d + k];
            }
            trace = trace + a_ij * query.hess[i * n + j];
        }
    }
    let half_trace = trace / S::lit(2.0);

    let mut drift = S::zero();
    match query.drift_gradients {
        Some((bw, fw)) => {
            for i in 0..n {
                drift = drift + upwind_term(b[i], bw[i], fw[i]);
            }
        }
        None => {
            for i in 0..n {
                drift = drift + b[i] * query.q[i];
            }
        }
    }

    let mut z = vec![S::zero(); d];
    for (k, zk) in z.iter_mut().enumerate() {
        for i in 0..n {
            *zk = *zk + query.q[i] * sigma[i * d + k];
        }
    }
    half_trace + drift + model.generator(query.t, query.x, query.u, &z, alpha, beta)
}

/// One-dimensional integrand from precomputed `b` and `σ`. Evaluates the
/// same operations in the same order as [`hamiltonian_inner`] with upwinding,
/// so both paths agree bit for bit.
#[allow(clippy::too_many_arguments)]
#[inline]
pub(crate) fn inner_1d<S: Real>(
    model: &GameModel<S>,
    t: S,
    x: S,
    u: S,
    grads: (S, S, S),
    hess: S,
    coeffs: (S, S),
    alpha: S,
    beta: S,
) -> S {
    let (q, q_back, q_fwd) = grads;
    let (drift, sigma) = coeffs;
    let half_trace = sigma * sigma * hess / S::lit(2.0);
    half_trace + upwind_term(drift, q_back, q_fwd) + model.generator_1d(t, x, u, q * sigma, alpha, beta)
}

/// Result of the max-min enumeration.
#[derive(Debug, Clone, PartialEq)]
pub struct LowerHamiltonian<S> {
    pub value: S,
    /// Maximizing index into the `A` grid.
    pub alpha: usize,
    /// Minimizing `B` index for every `A` index.
    pub responses: Vec<usize>,
}

impl<S> LowerHamiltonian<S> {
    /// `(α*, β*(α*))`.
    pub fn saddle(&self) -> (usize, usize) {
        (self.alpha, self.responses[self.alpha])
    }
}

/// Result of the min-max enumeration.
#[derive(Debug, Clone, PartialEq)]
pub struct UpperHamiltonian<S> {
    pub value: S,
    /// Minimizing index into the `B` grid.
    pub beta: usize,
    /// Maximizing `A` index for every `B` index.
    pub responses: Vec<usize>,
}

impl<S> UpperHamiltonian<S> {
    /// `(α*(β*), β*)`.
    pub fn saddle(&self) -> (usize, usize) {
        (self.responses[self.beta], self.beta)
    }
}

/// Max over rows of the row minimum of a row-major `na × nb` matrix.
pub fn max_min<S: Field>(matrix: &[S], na: usize, nb: usize) -> LowerHamiltonian<S> {
    debug_assert_eq!(matrix.len(), na * nb);
    let mut responses = Vec::with_capacity(na);
    let mut best = (S::zero(), 0usize);
    for ia in 0..na {
        let row = &matrix[ia * nb..(ia + 1) * nb];
        let mut arg = 0;
        for ib in 1..nb {
            if row[ib] < row[arg] {
                arg = ib;
            }
        }
        responses.push(arg);
        if ia == 0 || row[arg] > best.0 {
            best = (row[arg], ia);
        }
    }
    LowerHamiltonian {
        value: best.0,
        alpha: best.1,
        responses,
    }
}

/// Min over columns of the column maximum of a row-major `na × nb` matrix.
pub fn min_max<S: Field>(matrix: &[S], na: usize, nb: usize) -> UpperHamiltonian<S> {
    debug_assert_eq!(matrix.len(), na * nb);
    let mut responses = Vec::with_capacity(nb);
    let mut best = (S::zero(), 0usize);
    for ib in 0..nb {
        let mut arg = 0;
        for ia in 1..na {
            if matrix[ia * nb + ib] > matrix[arg * nb + ib] {
                arg = ia;
            }
        }
        responses.push(arg);
        let v = matrix[arg * nb + ib];
        if ib == 0 || v < best.0 {
            best = (v, ib);
        }
    }
    UpperHamiltonian {
        value: best.0,
        beta: best.1,
        responses,
    }
}

fn inner_matrix<S: Real>(model: &GameModel<S>, query: &HamiltonianQuery<'_, S>) -> Vec<S> {
    let a = model.controls_a.points();
    let b = model.controls_b.points();
    let mut m = Vec::with_capacity(a.len() * b.len());
    for &alpha in a {
        for &beta in b {
            m.push(hamiltonian_inner(model, query, alpha, beta));
        }
    }
    m
}

/// `H⁻ = sup_α inf_β` of the integrand over the control grids.
pub fn eval_h_minus<S: Real>(
    model: &GameModel<S>,
    query: &HamiltonianQuery<'_, S>,
) -> LowerHamiltonian<S> {
    let m = inner_matrix(model, query);
    max_min(&m, model.controls_a.len(), model.controls_b.len())
}

/// `H⁺ = inf_β sup_α` of the integrand over the control grids.
pub fn eval_h_plus<S: Real>(
    model: &GameModel<S>,
    query: &HamiltonianQuery<'_, S>,
) -> UpperHamiltonian<S> {
    let m = inner_matrix(model, query);
    min_max(&m, model.controls_a.len(), model.controls_b.len())
}

/// `H⁺ − H⁻`, nonnegative; zero iff the grids admit a saddle at this query.
pub fn isaacs_gap<S: Real>(model: &GameModel<S>, query: &HamiltonianQuery<'_, S>) -> S {
    let m = inner_matrix(model, query);
    let na = model.controls_a.len();
    let nb = model.controls_b.len();
    min_max(&m, na, nb).value - max_min(&m, na, nb).value
}
