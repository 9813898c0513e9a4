//! Experiment runner: reads a JSON config, dispatches to one of the solvers
//! in `isaacs_lab`, and writes CSV/JSON artifacts plus a `manifest.json`.

mod config;
mod run;
mod sweep;

pub use config::{
    ConfigError, ControlConfig, ExperimentConfig, GridConfig, Method, ModelSpec, SideChoice, SweepAxis, SweepConfig,
};
pub use run::{
    penalized_skorokhod_tol, run, run_with_threads, sandwich_violation, Check, CrosscheckTable, RunError, RunManifest,
    APPROX_STEP_TOL, MONOTONE_TOL, PROJECTION_SKOROKHOD_TOL, ROUTE_TOL,
};
pub use sweep::sweep;

/// Environment variable capping the worker threads.
pub const THREADS_ENV: &str = "ISAACS_LAB_THREADS";
