use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use isaacs_lab::dynkin::{dynkin_value, dynkin_value_exponential, running_rewards, DynkinValue};
use isaacs_lab::pde::{cfl_grid, residual_check, transform_cfl_grid};
use isaacs_lab::rbsde::{solve_approximation_sequence, ModelGenerator};
use isaacs_lab::transforms::{transform_data, ApproximationChain, CutoffGenerator, Direction};
use isaacs_lab::{
    build_markov_chain, solve_double_obstacle, solve_penalized, solve_rbsde_chain, solve_via_transform,
    verify_exponential_identity, BarrierData, ControlPolicy, Field64, Grid, Model, RbsdeSolution, Side,
    SolverError, SpaceTimeGrid,
};
use serde::Serialize;

use crate::config::{ConfigError, ExperimentConfig, Method};

/// Agreement required between routes to the same value.
pub const ROUTE_TOL: f64 = 5e-2;
/// Flat-off residual accepted for projection solves.
pub const PROJECTION_SKOROKHOD_TOL: f64 = 1e-12;
/// Step `max|Y^{p+1} − Y^p|` accepted at the end of the approximation chain.
pub const APPROX_STEP_TOL: f64 = 1e-3;
/// Ordering slack for the approximation chain.
pub const MONOTONE_TOL: f64 = 1e-12;

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("numerical failure: {0}")]
    Solver(#[from] SolverError),
    #[error("output: {0}")]
    Io(#[from] io::Error),
}

impl RunError {
    /// 2 for configuration and output problems, 3 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) | RunError::Io(_) => 2,
            RunError::Solver(_) => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub config: ExperimentConfig,
    pub code_version: String,
    pub wall_time_seconds: f64,
    /// Artifact names relative to the output directory, in write order.
    pub files: Vec<String>,
    pub checks: Vec<Check>,
    pub all_passed: bool,
}

impl RunManifest {
    /// 0 when every check passed, 4 otherwise.
    pub fn exit_code(&self) -> i32 {
        if self.all_passed {
            0
        } else {
            4
        }
    }
}

/// Output directory, produced files and checks of one run.
pub(crate) struct Session {
    pub config: ExperimentConfig,
    pub model: Model,
    out: PathBuf,
    files: Vec<String>,
    pub checks: Vec<Check>,
    started: Instant,
}

impl Session {
    pub fn open(config: &ExperimentConfig, out: &Path) -> Result<Self, RunError> {
        config.validate()?;
        fs::create_dir_all(out)?;
        Ok(Self {
            model: config.model()?,
            config: config.clone(),
            out: out.to_path_buf(),
            files: Vec::new(),
            checks: Vec::new(),
            started: Instant::now(),
        })
    }

    /// A session that writes nothing, for inner runs of a sweep.
    pub fn open_silent(config: &ExperimentConfig) -> Result<Self, RunError> {
        config.validate()?;
        Ok(Self {
            model: config.model()?,
            config: config.clone(),
            out: PathBuf::new(),
            files: Vec::new(),
            checks: Vec::new(),
            started: Instant::now(),
        })
    }

    pub fn write(&mut self, name: &str, body: impl FnOnce(&mut dyn Write) -> io::Result<()>) -> Result<(), RunError> {
        let mut w = BufWriter::new(File::create(self.out.join(name))?);
        body(&mut w)?;
        w.flush()?;
        self.files.push(name.to_string());
        Ok(())
    }

    pub fn check(&mut self, name: impl Into<String>, value: f64, tolerance: f64) -> bool {
        let pass = value.is_finite() && value <= tolerance;
        self.checks.push(Check {
            name: name.into(),
            value,
            tolerance,
            pass,
        });
        pass
    }

    /// Writes `checks.csv` and `manifest.json`.
    pub fn finish(mut self) -> Result<RunManifest, RunError> {
        let checks = self.checks.clone();
        self.write("checks.csv", |w| {
            writeln!(w, "name,value,tolerance,pass")?;
            for c in &checks {
                writeln!(w, "{},{:.16e},{:.16e},{}", c.name, c.value, c.tolerance, c.pass)?;
            }
            Ok(())
        })?;
        let mut files = self.files.clone();
        files.push("manifest.json".into());
        let manifest = RunManifest {
            config: self.config.clone(),
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            wall_time_seconds: self.started.elapsed().as_secs_f64(),
            files,
            all_passed: checks.iter().all(|c| c.pass),
            checks,
        };
        let text = serde_json::to_string_pretty(&manifest).map_err(io::Error::other)?;
        fs::write(self.out.join("manifest.json"), text + "\n")?;
        Ok(manifest)
    }

    /// Spatial grid from the config. Without a fixed `nt` the CFL count is
    /// used; `transform` makes it stable for the exponential transform too.
    pub fn grid(&self, transform: bool) -> Result<Grid, RunError> {
        let nx = self.config.grid.nx;
        let cfl = if transform {
            transform_cfl_grid(&self.model, nx)
        } else {
            cfl_grid(&self.model, nx)
        };
        Ok(match self.config.grid.nt {
            None => cfl?,
            Some(nt) => {
                let fixed = SpaceTimeGrid::for_model(&self.model, nx, nt)?;
                match cfl {
                    Ok(c) if self.config.grid.auto_cfl && c.nt > nt => c,
                    Ok(_) | Err(SolverError::DegenerateModel) => fixed,
                    Err(e) => return Err(e.into()),
                }
            }
        })
    }

    pub fn x0_node(&self, grid: &Grid) -> usize {
        grid.nearest_node(self.model.x0[0])
    }

    pub fn sides(&self) -> &'static [Side] {
        self.config.side.sides()
    }
}

/// Runs `config`, writing artifacts and `manifest.json` into `out`.
pub fn run(config: &ExperimentConfig, out: &Path) -> Result<RunManifest, RunError> {
    let mut s = Session::open(config, out)?;
    match config.method {
        Method::Pde => pde(&mut s)?,
        Method::PdeTransform => pde_transform(&mut s)?,
        Method::RbsdeChain => rbsde_chain(&mut s)?,
        Method::Penalized => penalized(&mut s)?,
        Method::Dynkin => dynkin(&mut s)?,
        Method::RiskSensitiveMc => risk_sensitive_mc(&mut s)?,
        Method::Crosscheck => crosscheck(&mut s)?,
        Method::ApproxChain => approx_chain(&mut s)?,
    }
    s.finish()
}

/// Same as [`run`] inside a pool of `threads` workers.
pub fn run_with_threads(config: &ExperimentConfig, out: &Path, threads: usize) -> Result<RunManifest, RunError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(io::Error::other)?;
    pool.install(|| run(config, out))
}

/// Largest amount by which `values` leave `[lower, upper]` or miss the
/// terminal data.
pub fn sandwich_violation(grid: &Grid, values: &[f64], lower: &[f64], upper: &[f64], terminal: &[f64]) -> f64 {
    let mut worst = 0f64;
    for i in 0..values.len() {
        worst = worst.max(lower[i] - values[i]).max(values[i] - upper[i]);
    }
    let last = grid.nt * grid.nodes();
    for (j, &g) in terminal.iter().enumerate() {
        worst = worst.max((values[last + j] - g).abs());
    }
    worst
}

fn field_sandwich(field: &Field64, data: &BarrierData<f64>) -> f64 {
    sandwich_violation(&field.grid, &field.values, &data.lower, &data.upper, &data.terminal)
}

fn write_report(s: &mut Session, name: &str, rows: &[(String, f64)]) -> Result<(), RunError> {
    s.write(name, |w| {
        writeln!(w, "quantity,value")?;
        for (k, v) in rows {
            writeln!(w, "{k},{v:.16e}")?;
        }
        Ok(())
    })
}

fn pde(s: &mut Session) -> Result<(), RunError> {
    let grid = s.grid(false)?;
    let data = BarrierData::from_model(&s.model, &grid);
    let j0 = s.x0_node(&grid);
    let mut rows = Vec::new();
    let mut fields = Vec::new();
    for &side in s.sides() {
        let field = solve_double_obstacle(&s.model, &grid, side)?;
        let label = side.label();
        s.write(&format!("value_{label}.csv"), |w| field.write_csv(w))?;
        s.write(&format!("value_{label}.gnuplot"), |w| field.write_gnuplot(w))?;
        // diagnostic only: the pointwise residual does not vanish next to
        // free boundaries or in the terminal layer at truncated ends
        let residual = residual_check(&field, &s.model)?;
        s.check(format!("{label}.sandwich"), field_sandwich(&field, &data), 0.0);
        rows.push((format!("{label}.value_at_x0"), field.value(0, j0)));
        rows.push((format!("{label}.residual"), residual));
        fields.push(field);
    }
    if let [lower, upper] = &fields[..] {
        let ordered = lower
            .values
            .iter()
            .zip(&upper.values)
            .map(|(l, u)| l - u)
            .fold(0f64, f64::max);
        s.check("lower_below_upper", ordered, ROUTE_TOL);
        rows.push(("isaacs_gap_at_x0".into(), upper.value(0, j0) - lower.value(0, j0)));
    }
    rows.push(("nt".into(), grid.nt as f64));
    write_report(s, "report.csv", &rows)
}

fn pde_transform(s: &mut Session) -> Result<(), RunError> {
    let grid = s.grid(true)?;
    let data = BarrierData::from_model(&s.model, &grid);
    let j0 = s.x0_node(&grid);
    let mut rows = Vec::new();
    for &side in s.sides() {
        let label = side.label();
        let via = solve_via_transform(&s.model, &grid, side)?;
        let direct = solve_double_obstacle(&s.model, &grid, side)?;
        s.write(&format!("value_transform_{label}.csv"), |w| via.write_csv(w))?;
        s.check(format!("{label}.sandwich"), field_sandwich(&via, &data), 0.0);
        s.check(format!("{label}.transform_vs_direct"), via.max_abs_diff(&direct), ROUTE_TOL);
        rows.push((format!("{label}.value_at_x0"), via.value(0, j0)));
        rows.push((format!("{label}.direct_value_at_x0"), direct.value(0, j0)));
    }
    write_report(s, "report.csv", &rows)
}

/// Reflected chain solution under the PDE's saddle controls.
pub(crate) struct ChainRun {
    pub grid: Grid,
    pub field: Field64,
    pub chain: isaacs_lab::Chain,
    pub policy: ControlPolicy<f64>,
    pub data: BarrierData<f64>,
    pub reflected: RbsdeSolution<f64>,
}

pub(crate) fn chain_run(model: &Model, grid: Grid, side: Side) -> Result<ChainRun, RunError> {
    let field = solve_double_obstacle(model, &grid, side)?;
    let chain = build_markov_chain(model, &grid)?;
    let policy = field.saddle_policy();
    let data = BarrierData::from_model(model, &grid);
    let reflected = solve_rbsde_chain(&chain, &policy, &ModelGenerator(model), &data)?;
    Ok(ChainRun {
        grid,
        field,
        chain,
        policy,
        data,
        reflected,
    })
}

fn rbsde_chain(s: &mut Session) -> Result<(), RunError> {
    let side = s.sides()[0];
    let r = chain_run(&s.model, s.grid(false)?, side)?;
    let j0 = s.x0_node(&r.grid);
    s.write("rbsde.csv", |w| r.reflected.write_csv(w))?;
    let sk = r.reflected.skorokhod_residuals().max();
    s.check(
        "sandwich",
        sandwich_violation(&r.grid, &r.reflected.y, &r.data.lower, &r.data.upper, &r.data.terminal),
        0.0,
    );
    s.check("skorokhod", sk, PROJECTION_SKOROKHOD_TOL);
    let gap = (r.reflected.y_at(0, j0) - r.field.value(0, j0)).abs();
    s.check("chain_vs_pde_at_x0", gap, ROUTE_TOL);
    write_report(
        s,
        "report.csv",
        &[
            ("y0".into(), r.reflected.y_at(0, j0)),
            ("pde_value_at_x0".into(), r.field.value(0, j0)),
            ("skorokhod".into(), sk),
        ],
    )
}

/// Grid whose step also keeps `λ dt ≤ 1` when the step count is automatic.
fn penalty_grid(s: &Session, penalty: f64) -> Result<Grid, RunError> {
    let grid = s.grid(false)?;
    let needed = (penalty * grid.horizon).ceil() as usize;
    if s.config.grid.auto_cfl && needed > grid.nt {
        Ok(grid.with_nt(needed))
    } else {
        Ok(grid)
    }
}

/// Flat-off tolerance of a penalized solve, `10/λ`.
pub fn penalized_skorokhod_tol(penalty: f64) -> f64 {
    if penalty > 0.0 {
        10.0 / penalty
    } else {
        f64::INFINITY
    }
}

fn penalized(s: &mut Session) -> Result<(), RunError> {
    let lambda = s.config.penalty;
    let r = chain_run(&s.model, penalty_grid(s, lambda)?, s.sides()[0])?;
    let pen = solve_penalized(&r.chain, &r.policy, &ModelGenerator(&s.model), &r.data, lambda)?;
    s.write("penalized.csv", |w| pen.write_csv(w))?;
    let sk = pen.skorokhod_residuals().max();
    s.check("skorokhod", sk, penalized_skorokhod_tol(lambda));
    let j0 = s.x0_node(&r.grid);
    write_report(
        s,
        "report.csv",
        &[
            ("penalty".into(), lambda),
            ("y0".into(), pen.y_at(0, j0)),
            ("reflected_y0".into(), r.reflected.y_at(0, j0)),
            ("distance_to_reflected".into(), pen.max_abs_diff(&r.reflected)),
            ("skorokhod".into(), sk),
        ],
    )
}

/// Dynkin value with controls frozen at the chain run's saddle pairs:
/// exponential for risk-sensitive models, additive otherwise.
pub(crate) fn dynkin_for(model: &Model, r: &ChainRun) -> Result<DynkinValue<f64>, RunError> {
    let running = running_rewards(model, &r.grid, &r.policy);
    Ok(if model.is_risk_sensitive() {
        dynkin_value_exponential(&r.chain, &r.policy, &running, &r.data)?
    } else {
        dynkin_value(&r.chain, &r.policy, &running, &r.data)?
    })
}

fn dynkin(s: &mut Session) -> Result<(), RunError> {
    let r = chain_run(&s.model, s.grid(false)?, s.sides()[0])?;
    let v = dynkin_for(&s.model, &r)?;
    s.write("dynkin.csv", |w| v.write_csv(w))?;
    s.check(
        "sandwich",
        sandwich_violation(&r.grid, &v.values, &r.data.lower, &r.data.upper, &r.data.terminal),
        0.0,
    );
    let j0 = s.x0_node(&r.grid);
    if s.model.is_risk_sensitive() {
        s.check("dynkin_vs_pde_at_x0", (v.value(0, j0) - r.field.value(0, j0)).abs(), ROUTE_TOL);
    }
    write_report(
        s,
        "report.csv",
        &[
            ("value_at_x0".into(), v.value(0, j0)),
            ("pde_value_at_x0".into(), r.field.value(0, j0)),
            ("max_player_stop_nodes".into(), v.max_rule.early_stops() as f64),
            ("min_player_stop_nodes".into(), v.min_rule.early_stops() as f64),
        ],
    )
}

fn risk_sensitive_mc(s: &mut Session) -> Result<(), RunError> {
    let r = chain_run(&s.model, s.grid(false)?, s.sides()[0])?;
    let v = dynkin_for(&s.model, &r)?;
    let report = verify_exponential_identity(
        &s.model,
        &r.policy,
        &v.max_rule,
        &v.min_rule,
        &r.chain,
        s.config.n_paths,
        s.config.seed,
    )?;
    s.write("identity.csv", |w| {
        writeln!(w, "{}", isaacs_lab::dynkin::IdentityReport::CSV_HEADER)?;
        writeln!(w, "{}", report.csv_row())
    })?;
    let json = serde_json::to_string_pretty(&report).map_err(io::Error::other)?;
    s.write("identity.json", |w| writeln!(w, "{json}"))?;
    s.check("exponential_identity", report.gap.abs(), report.tolerance);
    Ok(())
}

/// Values at `(0, x0)` from every route on one grid.
#[derive(Debug, Clone, PartialEq)]
pub struct CrosscheckTable {
    pub values: Vec<(&'static str, f64)>,
    /// `(a, b, |a − b|, tolerance)`.
    pub gaps: Vec<(&'static str, &'static str, f64, f64)>,
}

/// Fields behind a [`CrosscheckTable`].
pub(crate) struct CrosscheckFields {
    pub chain: ChainRun,
    pub transformed: Field64,
    pub dynkin: DynkinValue<f64>,
}

pub(crate) fn crosscheck_table(s: &Session) -> Result<(CrosscheckTable, CrosscheckFields), RunError> {
    let side = s.sides()[0];
    let r = chain_run(&s.model, s.grid(true)?, side)?;
    let j0 = s.x0_node(&r.grid);
    let via = solve_via_transform(&s.model, &r.grid, side)?;
    let v = dynkin_for(&s.model, &r)?;
    let mut values = vec![
        ("pde", r.field.value(0, j0)),
        ("pde-transform", via.value(0, j0)),
        ("rbsde-chain", r.reflected.y_at(0, j0)),
        ("dynkin", v.value(0, j0)),
    ];
    let mut gaps = Vec::new();
    for (a, b) in [(0, 1), (0, 2), (1, 2), (3, 0)] {
        gaps.push((values[a].0, values[b].0, (values[a].1 - values[b].1).abs(), ROUTE_TOL));
    }
    if s.model.is_risk_sensitive() {
        let report = verify_exponential_identity(
            &s.model,
            &r.policy,
            &v.max_rule,
            &v.min_rule,
            &r.chain,
            s.config.n_paths,
            s.config.seed,
        )?;
        values.push(("mc", report.ln_gamma_mc));
        gaps.push(("mc", "dynkin", report.gap.abs(), report.tolerance));
    }
    Ok((
        CrosscheckTable { values, gaps },
        CrosscheckFields {
            chain: r,
            transformed: via,
            dynkin: v,
        },
    ))
}

fn crosscheck(s: &mut Session) -> Result<(), RunError> {
    let (table, fields) = crosscheck_table(s)?;
    let label = fields.chain.field.side.label();
    s.write(&format!("value_{label}.csv"), |w| fields.chain.field.write_csv(w))?;
    s.write(&format!("value_transform_{label}.csv"), |w| fields.transformed.write_csv(w))?;
    s.write("rbsde.csv", |w| fields.chain.reflected.write_csv(w))?;
    s.write("dynkin.csv", |w| fields.dynkin.write_csv(w))?;
    s.write("crosscheck.csv", |w| {
        writeln!(w, "method,value")?;
        for (m, v) in &table.values {
            writeln!(w, "{m},{v:.16e}")?;
        }
        Ok(())
    })?;
    s.write("gaps.csv", |w| {
        writeln!(w, "method_a,method_b,gap,tolerance,pass")?;
        for (a, b, g, t) in &table.gaps {
            writeln!(w, "{a},{b},{g:.16e},{t:.16e},{}", g <= t)?;
        }
        Ok(())
    })?;
    for (a, b, g, t) in table.gaps {
        s.check(format!("{a}_vs_{b}"), g, t);
    }
    Ok(())
}

/// Solutions `Y^1..Y^{p_max}` of one direction of the approximation chain
/// on the transformed problem.
pub(crate) fn approximation_solutions(
    model: &Model,
    nx: usize,
    p_max: usize,
    direction: Direction,
    seed: u64,
) -> Result<(Grid, ApproximationChain<f64>, Vec<RbsdeSolution<f64>>), RunError> {
    let grid = transform_cfl_grid(model, nx)?;
    let tm = transform_data(model, &grid);
    let chain = build_markov_chain(&tm.model, &grid)?;
    let data = BarrierData::from_model(&tm.model, &grid);
    let policy = solve_double_obstacle(model, &grid, Side::Lower)?.saddle_policy();
    let source = CutoffGenerator::from_transformed(&tm, &grid)?;
    let approx = ApproximationChain::build(source, p_max, direction, seed)?;
    let sols = solve_approximation_sequence(&chain, &policy, &approx, &tm.model, &data)?;
    Ok((grid, approx, sols))
}

/// `max (sign·(Y^{p+1} − Y^p))` over nodes and the step sizes `max|Y^{p+1} − Y^p|`.
pub(crate) fn chain_steps(sols: &[RbsdeSolution<f64>], direction: Direction) -> (f64, Vec<f64>) {
    let sign = match direction {
        Direction::Upper => 1.0,
        Direction::Lower => -1.0,
    };
    let mut worst = f64::NEG_INFINITY;
    let mut steps = Vec::new();
    for pair in sols.windows(2) {
        for (next, cur) in pair[1].y.iter().zip(&pair[0].y) {
            worst = worst.max(sign * (next - cur));
        }
        steps.push(pair[1].max_abs_diff(&pair[0]));
    }
    (worst, steps)
}

fn approx_chain(s: &mut Session) -> Result<(), RunError> {
    let p_max = s.config.p_max;
    let mut rows = Vec::new();
    let mut finals = Vec::new();
    for direction in [Direction::Upper, Direction::Lower] {
        let (grid, approx, sols) =
            approximation_solutions(&s.model, s.config.grid.nx, p_max, direction, s.config.seed)?;
        let (worst, steps) = chain_steps(&sols, direction);
        let label = match direction {
            Direction::Upper => "upper",
            Direction::Lower => "lower",
        };
        s.check(format!("{label}.monotone"), worst.max(0.0), MONOTONE_TOL);
        s.check(format!("{label}.last_step"), *steps.last().expect("p_max >= 2"), APPROX_STEP_TOL);
        let j0 = s.x0_node(&grid);
        for (k, sol) in sols.iter().enumerate() {
            let sch = approx.schedule(k + 1);
            rows.push((label, sch.p, sch.epsilon, sch.c_prime, sch.measured_error, sol.y_at(0, j0), steps.get(k).copied()));
        }
        finals.push(sols.into_iter().last().expect("nonempty"));
    }
    let order = finals[1]
        .y
        .iter()
        .zip(&finals[0].y)
        .map(|(l, u)| l - u)
        .fold(0f64, f64::max);
    s.check("lower_below_upper", order, MONOTONE_TOL);
    s.write("approx_chain.csv", |w| {
        writeln!(w, "direction,p,epsilon,c_prime,measured_error,y0_transformed,step_to_next")?;
        for (d, p, e, c, m, y, st) in &rows {
            let step = st.map(|v| format!("{v:.16e}")).unwrap_or_default();
            writeln!(w, "{d},{p},{e:.16e},{c:.16e},{m:.16e},{y:.16e},{step}")?;
        }
        Ok(())
    })
}
