use rayon::prelude::*;

use crate::error::SolverError;
use crate::grid::SpaceTimeGrid;
use crate::model::GameModel;
use crate::scalar::{Field, Real};

/// One-step transition probabilities to the left neighbour, the node itself
/// and the right neighbour. At the two boundary nodes the outward mass is
/// reflected onto the inner neighbour, the chain analog of a mirrored
/// zero-gradient ghost cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stencil<S> {
    pub down: S,
    pub stay: S,
    pub up: S,
}

impl<S: Field> Stencil<S> {
    fn within_unit(&self) -> bool {
        [self.down, self.stay, self.up]
            .iter()
            .all(|&p| p >= S::zero() && p <= S::one())
    }
}

/// Controlled birth–death chain on a [`SpaceTimeGrid`], with one stencil per
/// `(level, node, pair)` for the transition from level `n` to `n + 1`.
#[derive(Debug, Clone)]
pub struct MarkovChain<S> {
    pub grid: SpaceTimeGrid<S>,
    pub pairs: usize,
    stencils: Vec<Stencil<S>>,
    sigma: Vec<S>,
    drift: Vec<S>,
}

impl<S: Field> MarkovChain<S> {
    /// Chain from explicit stencils, indexed `(level * nodes + node) * pairs + pair`
    /// for `level < nt`. `sigma` and `drift` carry the coefficients the
    /// stencils were built from; `sigma` feeds the `Z` estimate of the
    /// reflected BSDE solver.
    pub fn from_stencils(
        grid: SpaceTimeGrid<S>,
        pairs: usize,
        stencils: Vec<Stencil<S>>,
        sigma: Vec<S>,
        drift: Vec<S>,
    ) -> Result<Self, SolverError> {
        let expected = grid.nt * grid.nodes() * pairs;
        if pairs == 0 || stencils.len() != expected || sigma.len() != expected || drift.len() != expected {
            return Err(SolverError::InvalidInput(format!(
                "chain needs {expected} stencils and coefficients"
            )));
        }
        let chain = Self {
            grid,
            pairs,
            stencils,
            sigma,
            drift,
        };
        for (i, s) in chain.stencils.iter().enumerate() {
            let sum = (s.down + s.stay + s.up - S::one()).as_f64();
            if !s.within_unit() || sum.abs() > 1e-12 {
                return Err(chain.cfl_error(i, s));
            }
        }
        Ok(chain)
    }

    fn cfl_error(&self, index: usize, s: &Stencil<S>) -> SolverError {
        let pair = index % self.pairs;
        let node = (index / self.pairs) % self.grid.nodes();
        let level = index / (self.pairs * self.grid.nodes());
        SolverError::CflViolation(format!(
            "transition probabilities ({}, {}, {}) at level {level}, node {node}, pair {pair}",
            s.down, s.stay, s.up
        ))
    }

    #[inline]
    fn index(&self, level: usize, node: usize, pair: usize) -> usize {
        (level * self.grid.nodes() + node) * self.pairs + pair
    }

    pub fn dt(&self) -> S {
        self.grid.dt()
    }

    pub fn dx(&self) -> S {
        self.grid.dx()
    }

    #[inline]
    pub fn stencil(&self, level: usize, node: usize, pair: usize) -> Stencil<S> {
        self.stencils[self.index(level, node, pair)]
    }

    #[inline]
    pub fn sigma(&self, level: usize, node: usize, pair: usize) -> S {
        self.sigma[self.index(level, node, pair)]
    }

    #[inline]
    pub fn drift(&self, level: usize, node: usize, pair: usize) -> S {
        self.drift[self.index(level, node, pair)]
    }

    /// Index of the left and right targets of `node`, reflected at the ends.
    #[inline]
    pub fn neighbours(&self, node: usize) -> (usize, usize) {
        mirrored(node, self.grid.nx)
    }

    /// `E[V(X_{n+1}) | X_n = x_node]` under `pair`.
    #[inline]
    pub fn expectation(&self, level: usize, node: usize, pair: usize, next: &[S]) -> S {
        let s = self.stencil(level, node, pair);
        let (l, r) = self.neighbours(node);
        s.down * next[l] + s.stay * next[node] + s.up * next[r]
    }

    /// Mean and variance of the one-step increment `X_{n+1} − x_node`.
    pub fn step_moments(&self, level: usize, node: usize, pair: usize) -> (S, S) {
        let s = self.stencil(level, node, pair);
        let (l, r) = self.neighbours(node);
        let x = self.grid.x(node);
        let jumps = [
            (s.down, self.grid.x(l) - x),
            (s.stay, S::zero()),
            (s.up, self.grid.x(r) - x),
        ];
        let mean = jumps.iter().fold(S::zero(), |acc, &(p, j)| acc + p * j);
        let var = jumps
            .iter()
            .fold(S::zero(), |acc, &(p, j)| acc + p * (j - mean) * (j - mean));
        (mean, var)
    }
}

/// Neighbours of `node` on `0..=last`, mirrored at both ends.
#[inline]
pub(crate) fn mirrored(node: usize, last: usize) -> (usize, usize) {
    let left = if node == 0 { 1 } else { node - 1 };
    let right = if node == last { last - 1 } else { node + 1 };
    (left, right)
}

/// Upwind chain for a one-dimensional model:
///
/// ```text
/// p± = σ²dt/(2dx²) + b^± dt/dx,   p₀ = 1 − σ²dt/dx² − |b|dt/dx
/// ```
///
/// with coefficients frozen at `(t_n, x_j, α, β)`.
pub fn build_markov_chain<S: Real>(
    model: &GameModel<S>,
    grid: &SpaceTimeGrid<S>,
) -> Result<MarkovChain<S>, SolverError> {
    if model.state_dim != 1 || model.noise_dim != 1 {
        return Err(SolverError::DimensionUnsupported(format!(
            "Markov chain lattice needs n = d = 1, model has n = {}, d = {}",
            model.state_dim, model.noise_dim
        )));
    }
    let pairs = model.control_pairs();
    let nodes = grid.nodes();
    let dt = grid.dt();
    let dx = grid.dx();
    let half = S::lit(0.5);
    let per_level: Vec<Vec<(Stencil<S>, S, S)>> = (0..grid.nt)
        .into_par_iter()
        .map(|level| {
            let t = grid.t(level);
            let mut out = Vec::with_capacity(nodes * pairs);
            for node in 0..nodes {
                let x = grid.x(node);
                for pair in 0..pairs {
                    let (a, b) = model.pair_controls(pair);
                    let drift = model.drift_1d(t, x, a, b);
                    let sigma = model.sigma_1d(t, x, a, b);
                    let diff = sigma * sigma * dt / (dx * dx);
                    let stencil = Stencil {
                        down: half * diff + drift.negative_part() * dt / dx,
                        stay: S::one() - diff - drift.magnitude() * dt / dx,
                        up: half * diff + drift.positive_part() * dt / dx,
                    };
                    out.push((stencil, sigma, drift));
                }
            }
            out
        })
        .collect();
    let total = grid.nt * nodes * pairs;
    let mut stencils = Vec::with_capacity(total);
    let mut sigma = Vec::with_capacity(total);
    let mut drift = Vec::with_capacity(total);
    for (s, sg, b) in per_level.into_iter().flatten() {
        stencils.push(s);
        sigma.push(sg);
        drift.push(b);
    }
    MarkovChain::from_stencils(*grid, pairs, stencils, sigma, drift)
}
