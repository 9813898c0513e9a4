//! Two-player zero-sum stochastic differential games with double obstacles.
//!
//! The crate computes value functions of Dynkin-type games through four
//! independent routes: a projected finite-difference scheme for the
//! Hamilton–Jacobi–Bellman–Isaacs variational inequality, reflected BSDEs on
//! a Markov chain, Dynkin games on the same chain, and Monte Carlo for the
//! risk-sensitive payoff.

pub mod dynamics;
pub mod dynkin;
mod error;
mod grid;
pub mod hamiltonian;
pub mod model;
pub mod pde;
pub mod rbsde;
pub mod scalar;
pub mod transforms;

pub use dynamics::{build_markov_chain, simulate_paths, ControlPolicy, MarkovChain, PathEnsemble};
pub use dynkin::{brute_force_game_value, dynkin_value, verify_exponential_identity, StoppingRule};
pub use error::SolverError;
pub use grid::SpaceTimeGrid;
pub use hamiltonian::{eval_h_minus, eval_h_plus, isaacs_gap, HamiltonianQuery};
pub use model::{ControlGrid, GameModel, ModelError};
pub use pde::{solve_double_obstacle, solve_via_transform, Side, ValueField};
pub use rbsde::{solve_penalized, solve_rbsde_chain, BarrierData, RbsdeSolution};
pub use scalar::{Exact, Field, Real};

/// Models over `f64`, the precision every solver runs at by default.
pub type Model = GameModel<f64>;
/// Markov chain over `f64`.
pub type Chain = MarkovChain<f64>;
/// Markov chain with exact rational probabilities.
pub type ExactChain = MarkovChain<Exact>;
pub type Grid = SpaceTimeGrid<f64>;
pub type Field64 = ValueField<f64>;
