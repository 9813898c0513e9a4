use super::solver::{cfl_grid, solve_double_obstacle};
use super::{ContactFlag, Side, ValueField};
use crate::error::SolverError;
use crate::grid::SpaceTimeGrid;
use crate::model::GameModel;
use crate::scalar::Real;
use crate::transforms::transform_data;

/// Grid over the model's domain whose `dt` is stable for both the model and
/// its exponential transform.
pub fn transform_cfl_grid<S: Real>(model: &GameModel<S>, nx: usize) -> Result<SpaceTimeGrid<S>, SolverError> {
    let direct = cfl_grid(model, nx);
    let probe = match &direct {
        Ok(g) => *g,
        Err(SolverError::DegenerateModel) => SpaceTimeGrid::for_model(model, nx, 16)?,
        Err(e) => return Err(clone_err(e)),
    };
    let transformed = transform_data(model, &probe);
    match (direct, cfl_grid(&transformed.model, nx)) {
        (Ok(a), Ok(b)) => Ok(if a.nt >= b.nt { a } else { b }),
        (Ok(g), Err(SolverError::DegenerateModel)) | (Err(SolverError::DegenerateModel), Ok(g)) => Ok(g),
        (_, Err(e)) => Err(e),
        (Err(e), _) => Err(e),
    }
}

fn clone_err(e: &SolverError) -> SolverError {
    SolverError::InvalidInput(e.to_string())
}

/// Solves the transformed problem `(f, ḡ, h̄, h̄')` on `grid` and maps the
/// result back with `ln(w) / 2C`.
///
/// The mapped values are clamped to `[h, h']` to absorb rounding in the
/// exponential round trip, and the terminal level is set to `g` itself.
/// Increments `k±` are reported in the original units.
pub fn solve_via_transform<S: Real>(
    model: &GameModel<S>,
    grid: &SpaceTimeGrid<S>,
    side: Side,
) -> Result<ValueField<S>, SolverError> {
    let tm = transform_data(model, grid);
    let w = solve_double_obstacle(&tm.model, grid, side)?;
    let two_c = S::lit(2.0) * tm.c;
    let nodes = grid.nodes();
    let mut out = w.clone();
    for level in 0..grid.levels() {
        let t = grid.t(level);
        for node in 0..nodes {
            let i = level * nodes + node;
            let x = grid.x(node);
            let (lo, hi) = (model.lower_1d(t, x), model.upper_1d(t, x));
            if level == grid.nt {
                out.values[i] = model.terminal_1d(x);
                continue;
            }
            let value = w.values[i];
            if !(value > S::zero()) {
                return Err(SolverError::NonpositiveTransformedValue {
                    level,
                    node,
                    value: value.as_f64(),
                });
            }
            out.values[i] = (value.ln() / two_c).clamp_to(lo, hi);
            out.k_plus[i] = match w.flags[i] {
                ContactFlag::Lower => back_distance(tm.model.lower_1d(t, x), w.k_plus[i], two_c, lo, true),
                _ => S::zero(),
            };
            out.k_minus[i] = match w.flags[i] {
                ContactFlag::Upper => back_distance(tm.model.upper_1d(t, x), w.k_minus[i], two_c, hi, false),
                _ => S::zero(),
            };
        }
    }
    Ok(out)
}

/// Distance between an obstacle and the unprojected update, in original
/// units. Falls back to the first-order map `k̄ / (2C·h̄)` when the update
/// is not positive.
fn back_distance<S: Real>(bar_obstacle: S, bar_k: S, two_c: S, obstacle: S, below: bool) -> S {
    let raw = if below { bar_obstacle - bar_k } else { bar_obstacle + bar_k };
    let d = if raw > S::zero() {
        if below {
            obstacle - raw.ln() / two_c
        } else {
            raw.ln() / two_c - obstacle
        }
    } else {
        bar_k / (two_c * bar_obstacle)
    };
    d.positive_part()
}
