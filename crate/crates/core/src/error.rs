use thiserror::Error;

use crate::model::ModelError;

/// Failures raised by the solvers.
#[derive(Debug, Error)]
pub enum SolverError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("unsupported dimension: {0}")]
    DimensionUnsupported(String),
    #[error("non-finite state on path {path} at step {step}")]
    NonFiniteState { path: usize, step: usize },
    #[error("CFL violation: {0}")]
    CflViolation(String),
    #[error("degenerate model: no diffusion, drift or generator sensitivity to bound the time step")]
    DegenerateModel,
    #[error("stability blowup at level {level}, node {node}: |value| = {value} exceeds {bound}")]
    StabilityBlowup {
        level: usize,
        node: usize,
        value: f64,
        bound: f64,
    },
    #[error("stability blowup: penalty * dt = {penalty_dt} > 1")]
    PenaltyStabilityBlowup { penalty_dt: f64 },
    #[error("|z| = {z} exceeds z_cap = {cap} at level {level}, node {node}")]
    ZCapExceeded {
        level: usize,
        node: usize,
        z: f64,
        cap: f64,
    },
    #[error("transformed value {value} is not positive at level {level}, node {node}")]
    NonpositiveTransformedValue { level: usize, node: usize, value: f64 },
    #[error("logarithm of nonpositive value {0}")]
    NonpositiveInput(f64),
    #[error("barrier order violated at level {level}, node {node}: L = {lower} >= U = {upper}")]
    BarrierOrderViolation {
        level: usize,
        node: usize,
        lower: f64,
        upper: f64,
    },
    #[error("terminal value {value} outside [{lower}, {upper}] at node {node}")]
    TerminalOutsideBarriers {
        node: usize,
        value: f64,
        lower: f64,
        upper: f64,
    },
    #[error("comparison hypothesis violated: {0}")]
    HypothesisViolated(String),
    #[error("instance too large for enumeration: {0}")]
    TooLarge(String),
}
