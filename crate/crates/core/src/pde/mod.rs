//! Projected explicit scheme for the double-obstacle Isaacs equations
//!
//! ```text
//! min{u − h, max{−∂ₜu − H(t, x, u, Du, D²u), u − h'}} = 0,   u(T, ·) = g
//! ```
//!
//! with `H = H⁻` for the lower equation and `H = H⁺` for the upper one.

mod export;
mod solver;
mod transform;

use crate::dynamics::ControlPolicy;
use crate::grid::SpaceTimeGrid;
use crate::scalar::Field;

pub use solver::{
    cfl_grid, cfl_timestep, data_bound, default_z_cap, residual_check, solve_double_obstacle,
    solve_double_obstacle_with, SolveOptions,
};
pub use transform::{solve_via_transform, transform_cfl_grid};

/// Which Isaacs equation: `LOWER` uses `H⁻`, `UPPER` uses `H⁺`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Lower,
    Upper,
}

impl Side {
    pub fn label(self) -> &'static str {
        match self {
            Self::Lower => "lower",
            Self::Upper => "upper",
        }
    }
}

/// Which constraint, if any, the projection enforced at a node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ContactFlag {
    Lower,
    Interior,
    Upper,
}

impl ContactFlag {
    pub fn label(self) -> &'static str {
        match self {
            Self::Lower => "LOWER",
            Self::Interior => "INTERIOR",
            Self::Upper => "UPPER",
        }
    }

    /// Classification of `value` against `[lower, upper]` with an absolute
    /// contact tolerance.
    pub fn classify<S: Field>(value: S, lower: S, upper: S, tol: S) -> Self {
        if value - lower <= tol {
            Self::Lower
        } else if upper - value <= tol {
            Self::Upper
        } else {
            Self::Interior
        }
    }
}

/// Solution of a double-obstacle problem on a [`SpaceTimeGrid`], stored
/// level-major (`level * nodes + node`).
#[derive(Debug, Clone)]
pub struct ValueField<S> {
    pub grid: SpaceTimeGrid<S>,
    pub side: Side,
    pub values: Vec<S>,
    pub flags: Vec<ContactFlag>,
    /// `max(h − ũ, 0)`: how far the unconstrained update fell below `h`.
    pub k_plus: Vec<S>,
    /// `max(ũ − h', 0)`: how far the unconstrained update rose above `h'`.
    pub k_minus: Vec<S>,
    /// Saddle control pair of the Hamiltonian used at each `(level, node)`;
    /// the terminal level repeats the one before it.
    pub controls: Vec<usize>,
}

impl<S: Field> ValueField<S> {
    #[inline]
    pub fn index(&self, level: usize, node: usize) -> usize {
        level * self.grid.nodes() + node
    }

    #[inline]
    pub fn value(&self, level: usize, node: usize) -> S {
        self.values[self.index(level, node)]
    }

    pub fn level(&self, level: usize) -> &[S] {
        let n = self.grid.nodes();
        &self.values[level * n..(level + 1) * n]
    }

    pub fn flag(&self, level: usize, node: usize) -> ContactFlag {
        self.flags[self.index(level, node)]
    }

    /// Linear interpolation of level `level` at `x`, clamped to the lattice.
    pub fn interpolate(&self, level: usize, x: S) -> S {
        let g = &self.grid;
        if x <= g.x_min {
            return self.value(level, 0);
        }
        if x >= g.x_max {
            return self.value(level, g.nx);
        }
        let pos = (x - g.x_min) / g.dx();
        let mut j = pos.as_f64().floor() as usize;
        if j >= g.nx {
            j = g.nx - 1;
        }
        let w = (x - g.x(j)) / g.dx();
        let (a, b) = (self.value(level, j), self.value(level, j + 1));
        a + (b - a) * w
    }

    /// Feedback policy that plays the stored saddle pairs.
    pub fn saddle_policy(&self) -> ControlPolicy<S> {
        ControlPolicy::table(self.grid, self.controls.clone())
    }

    pub fn max_abs_diff(&self, other: &Self) -> S {
        self.values
            .iter()
            .zip(&other.values)
            .fold(S::zero(), |m, (&a, &b)| m.larger((a - b).magnitude()))
    }
}
