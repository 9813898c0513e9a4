//! Forward simulation of the controlled SDE and its Markov-chain lattice.

pub(crate) mod chain;
mod paths;
mod policy;

pub use chain::{build_markov_chain, MarkovChain, Stencil};
pub use paths::{estimate_moment_bound, simulate_paths, PathEnsemble};
pub use policy::{ControlPolicy, FeedbackFn};
