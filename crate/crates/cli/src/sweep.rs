use std::path::Path;

use isaacs_lab::rbsde::ModelGenerator;
use isaacs_lab::solve_penalized;
use isaacs_lab::transforms::Direction;

use crate::config::{ConfigError, ExperimentConfig, Method, SweepAxis, SweepConfig};
use crate::run::{approximation_solutions, chain_run, chain_steps, crosscheck_table, dynkin_for, RunError, RunManifest, Session, MONOTONE_TOL};

/// Allowed growth between successive errors before a sweep counts as
/// non-monotone.
const DECAY_SLACK: f64 = 1e-12;

/// One run per axis value, written to `sweep.csv` as
/// `axis_value,result,gap_to_finest`.
///
/// * `nx`, `controls`: `result` is the method's value at `(0, x0)`.
/// * `penalty`: `result` is the distance from the penalized to the
///   reflected chain solution.
/// * `p`: `result` is `max|Y^{p+1} − Y^p|` along the upper chain.
///
/// The decay check asks the errors (`gap_to_finest` for the first two
/// axes, `result` for the others) to be nonincreasing. On the `p` axis only
/// members whose cutoff radius `p − 1` exceeds the grid's `max |x|` by one
/// count; before that the members are mostly the blend constant. The `p`
/// axis also checks that `Y^p` is nonincreasing in `p` at every node.
pub fn sweep(config: &ExperimentConfig, axis: &SweepConfig, out: &Path) -> Result<RunManifest, RunError> {
    let mut s = Session::open(config, out)?;
    let mut results = Vec::with_capacity(axis.values.len());
    let mut settled_from = 0;
    match axis.axis {
        SweepAxis::P => {
            let p_max = count(axis, "p")?.into_iter().max().unwrap_or(1) + 1;
            let (grid, _, sols) = approximation_solutions(&s.model, config.grid.nx, p_max, Direction::Upper, config.seed)?;
            let (worst, steps) = chain_steps(&sols, Direction::Upper);
            s.check("p.nonincreasing", worst.max(0.0), MONOTONE_TOL);
            let reach = grid.x_min.abs().max(grid.x_max.abs());
            let ps = count(axis, "p")?;
            settled_from = ps.iter().position(|&p| p as f64 - 1.0 >= reach + 1.0).unwrap_or(ps.len());
            for p in ps {
                results.push(steps[p - 1]);
            }
        }
        SweepAxis::Penalty => {
            let lambda_max = axis.values.iter().copied().fold(0.0, f64::max);
            let mut grid = s.grid(false)?;
            let needed = (lambda_max * grid.horizon).ceil() as usize;
            if needed > grid.nt {
                grid = grid.with_nt(needed);
            }
            let r = chain_run(&s.model, grid, s.sides()[0])?;
            for &lambda in &axis.values {
                let pen = solve_penalized(&r.chain, &r.policy, &ModelGenerator(&s.model), &r.data, lambda)?;
                results.push(pen.max_abs_diff(&r.reflected));
            }
        }
        SweepAxis::Nx => {
            for nx in count(axis, "nx")? {
                let mut c = config.clone();
                c.grid.nx = nx;
                c.validate()?;
                results.push(point_value(&c)?);
            }
        }
        SweepAxis::Controls => {
            for k in count(axis, "controls")? {
                let mut c = config.clone();
                c.controls = Some(crate::config::ControlConfig {
                    alpha_points: k,
                    beta_points: k,
                });
                c.validate()?;
                results.push(point_value(&c)?);
            }
        }
    }
    let finest = *results.last().expect("validated nonempty");
    let gaps: Vec<f64> = results.iter().map(|r| (r - finest).abs()).collect();
    let errors: &[f64] = match axis.axis {
        SweepAxis::Nx | SweepAxis::Controls => &gaps[..gaps.len().saturating_sub(1)],
        SweepAxis::Penalty => &results,
        SweepAxis::P => &results[settled_from..],
    };
    let growth = errors.windows(2).map(|w| w[1] - w[0]).fold(0f64, f64::max);
    s.check(format!("{}.monotone_decay", axis.axis.name()), growth, DECAY_SLACK);
    s.write("sweep.csv", |w| {
        writeln!(w, "axis_value,result,gap_to_finest")?;
        for ((v, r), g) in axis.values.iter().zip(&results).zip(&gaps) {
            writeln!(w, "{v},{r:.16e},{g:.16e}")?;
        }
        Ok(())
    })?;
    s.finish()
}

fn count(axis: &SweepConfig, name: &str) -> Result<Vec<usize>, ConfigError> {
    axis.values
        .iter()
        .map(|&v| {
            if v.fract() == 0.0 && v >= 1.0 {
                Ok(v as usize)
            } else {
                Err(ConfigError::new("sweep.values", format!("{name} values must be positive integers, got {v}")))
            }
        })
        .collect()
}

/// Value at `(0, x0)` of the configured method.
fn point_value(config: &ExperimentConfig) -> Result<f64, RunError> {
    let s = Session::open_silent(config)?;
    let side = s.sides()[0];
    let value = match config.method {
        Method::PdeTransform => {
            let grid = s.grid(true)?;
            isaacs_lab::solve_via_transform(&s.model, &grid, side)?.value(0, s.x0_node(&grid))
        }
        Method::RbsdeChain | Method::Penalized => {
            let r = chain_run(&s.model, s.grid(false)?, side)?;
            r.reflected.y_at(0, s.x0_node(&r.grid))
        }
        Method::Dynkin | Method::RiskSensitiveMc => {
            let r = chain_run(&s.model, s.grid(false)?, side)?;
            dynkin_for(&s.model, &r)?.value(0, s.x0_node(&r.grid))
        }
        Method::Crosscheck => crosscheck_table(&s)?.0.values[0].1,
        Method::Pde | Method::ApproxChain => {
            let grid = s.grid(false)?;
            isaacs_lab::solve_double_obstacle(&s.model, &grid, side)?.value(0, s.x0_node(&grid))
        }
    };
    Ok(value)
}
