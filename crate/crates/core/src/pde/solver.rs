use rayon::prelude::*;

use super::{ContactFlag, Side, ValueField};
use crate::dynamics::chain::mirrored;
use crate::error::SolverError;
use crate::grid::SpaceTimeGrid;
use crate::hamiltonian::{inner_1d, max_min, min_max};
use crate::model::GameModel;
use crate::scalar::Real;

/// Knobs of [`solve_double_obstacle_with`].
#[derive(Debug, Clone, Copy)]
pub struct SolveOptions<S> {
    /// Bound on the realized `|qσ|`; defaults to [`default_z_cap`].
    pub z_cap: Option<S>,
    /// Reject grids whose `dt` exceeds [`cfl_timestep`].
    pub enforce_cfl: bool,
}

impl<S> Default for SolveOptions<S> {
    fn default() -> Self {
        Self {
            z_cap: None,
            enforce_cfl: true,
        }
    }
}

/// `b` and `σ` at every `(level, node, pair)` for `level < nt`.
pub(crate) struct Coefficients<S> {
    drift: Vec<S>,
    sigma: Vec<S>,
    nodes: usize,
    pairs: usize,
}

impl<S: Real> Coefficients<S> {
    pub(crate) fn new(model: &GameModel<S>, grid: &SpaceTimeGrid<S>) -> Result<Self, SolverError> {
        require_1d(model)?;
        let nodes = grid.nodes();
        let pairs = model.control_pairs();
        let per_level: Vec<Vec<(S, S)>> = (0..grid.nt)
            .into_par_iter()
            .map(|level| {
                let t = grid.t(level);
                let mut out = Vec::with_capacity(nodes * pairs);
                for node in 0..nodes {
                    let x = grid.x(node);
                    for pair in 0..pairs {
                        let (a, b) = model.pair_controls(pair);
                        out.push((model.drift_1d(t, x, a, b), model.sigma_1d(t, x, a, b)));
                    }
                }
                out
            })
            .collect();
        let (drift, sigma) = per_level.into_iter().flatten().unzip();
        Ok(Self {
            drift,
            sigma,
            nodes,
            pairs,
        })
    }

    #[inline]
    fn at(&self, level: usize, node: usize, pair: usize) -> (S, S) {
        let i = (level * self.nodes + node) * self.pairs + pair;
        (self.drift[i], self.sigma[i])
    }

    fn max_sigma(&self) -> S {
        self.sigma.iter().fold(S::zero(), |m, &s| m.larger(s.magnitude()))
    }

    fn max_drift(&self) -> S {
        self.drift.iter().fold(S::zero(), |m, &b| m.larger(b.magnitude()))
    }
}

fn require_1d<S: Real>(model: &GameModel<S>) -> Result<(), SolverError> {
    if model.state_dim != 1 || model.noise_dim != 1 {
        return Err(SolverError::DimensionUnsupported(format!(
            "grid solvers need n = d = 1, model has n = {}, d = {}",
            model.state_dim, model.noise_dim
        )));
    }
    Ok(())
}

/// `max |g|, |h|, |h'|` over the lattice and all time levels.
pub fn data_bound<S: Real>(model: &GameModel<S>, grid: &SpaceTimeGrid<S>) -> S {
    let mut bound = S::zero();
    for node in 0..grid.nodes() {
        let x = grid.x(node);
        bound = bound.larger(model.terminal_1d(x).magnitude());
        for level in 0..grid.levels() {
            let t = grid.t(level);
            bound = bound
                .larger(model.lower_1d(t, x).magnitude())
                .larger(model.upper_1d(t, x).magnitude());
        }
    }
    bound
}

/// `2 · (data bound) / dx · max σ`.
pub fn default_z_cap<S: Real>(model: &GameModel<S>, grid: &SpaceTimeGrid<S>) -> Result<S, SolverError> {
    let coeffs = Coefficients::new(model, grid)?;
    Ok(default_z_cap_from(model, grid, &coeffs))
}

fn default_z_cap_from<S: Real>(model: &GameModel<S>, grid: &SpaceTimeGrid<S>, coeffs: &Coefficients<S>) -> S {
    S::lit(2.0) * data_bound(model, grid) / grid.dx() * coeffs.max_sigma()
}

/// Sample counts of the z-Lipschitz probe.
const PROBE_LEVELS: usize = 3;
const PROBE_NODES: usize = 17;
const PROBE_Z: usize = 17;

/// Largest difference quotient of `F` in `z` over `|z| ≤ z_cap`, sampled on a
/// few time levels, a thinned set of nodes, `y ∈ {−B, 0, B}` and every pair.
fn probe_z_lipschitz<S: Real>(model: &GameModel<S>, grid: &SpaceTimeGrid<S>, z_cap: S, bound: S) -> S {
    if !(z_cap > S::zero()) {
        return S::zero();
    }
    let levels: Vec<usize> = spread(grid.nt, PROBE_LEVELS);
    let nodes: Vec<usize> = spread(grid.nodes(), PROBE_NODES);
    let zs: Vec<S> = (0..PROBE_Z)
        .map(|k| -z_cap + S::lit(2.0) * z_cap * S::from_count(k) / S::from_count(PROBE_Z - 1))
        .collect();
    let dz = zs[1] - zs[0];
    let ys = [-bound, S::zero(), bound];
    let pairs = model.control_pairs();
    let per_node: Vec<S> = nodes
        .par_iter()
        .map(|&node| {
            let x = grid.x(node);
            let mut worst = S::zero();
            for &level in &levels {
                let t = grid.t(level);
                for pair in 0..pairs {
                    let (a, b) = model.pair_controls(pair);
                    for &y in &ys {
                        let mut prev = model.generator_1d(t, x, y, zs[0], a, b);
                        for &z in &zs[1..] {
                            let cur = model.generator_1d(t, x, y, z, a, b);
                            worst = worst.larger((cur - prev).magnitude() / dz);
                            prev = cur;
                        }
                    }
                }
            }
            worst
        })
        .collect();
    per_node.into_iter().fold(S::zero(), |m, v| m.larger(v))
}

/// Up to `count` indices spread evenly over `0..len`, always including both ends.
fn spread(len: usize, count: usize) -> Vec<usize> {
    if len <= count {
        return (0..len).collect();
    }
    let mut out: Vec<usize> = (0..count).map(|k| k * (len - 1) / (count - 1)).collect();
    out.dedup();
    out
}

/// Largest stable time step of the explicit scheme,
///
/// ```text
/// dt = 0.9 · dx² / (max σ² + dx · max |b| + dx² · L̂_F)
/// ```
///
/// with maxima over the lattice, the time levels of `grid` and the control
/// grids, and `L̂_F` the probed z-Lipschitz constant of `F` on `|z| ≤ z_cap`.
pub fn cfl_timestep<S: Real>(model: &GameModel<S>, grid: &SpaceTimeGrid<S>, z_cap: S) -> Result<S, SolverError> {
    let coeffs = Coefficients::new(model, grid)?;
    cfl_from(model, grid, &coeffs, z_cap)
}

fn cfl_from<S: Real>(
    model: &GameModel<S>,
    grid: &SpaceTimeGrid<S>,
    coeffs: &Coefficients<S>,
    z_cap: S,
) -> Result<S, SolverError> {
    let dx = grid.dx();
    let sigma = coeffs.max_sigma();
    let lf = probe_z_lipschitz(model, grid, z_cap, data_bound(model, grid));
    let denom = sigma * sigma + dx * coeffs.max_drift() + dx * dx * lf;
    if !(denom > S::zero()) {
        return Err(SolverError::DegenerateModel);
    }
    Ok(S::lit(0.9) * dx * dx / denom)
}

/// Grid over the model's domain with `nx` intervals and the fewest time
/// steps that satisfy [`cfl_timestep`] at the default `z_cap`.
pub fn cfl_grid<S: Real>(model: &GameModel<S>, nx: usize) -> Result<SpaceTimeGrid<S>, SolverError> {
    let mut grid = SpaceTimeGrid::for_model(model, nx, 16)?;
    for _ in 0..4 {
        let coeffs = Coefficients::new(model, &grid)?;
        let cap = default_z_cap_from(model, &grid, &coeffs);
        let dt = cfl_from(model, &grid, &coeffs, cap)?;
        if grid.dt() <= dt {
            return Ok(grid);
        }
        let nt = (model.horizon / dt).as_f64().ceil() as usize;
        grid = grid.with_nt(nt.max(grid.nt + 1));
    }
    Ok(grid)
}

/// Discrete operators at `node` of one level. Ghost values mirror the first
/// interior node (`u₋₁ = u₁`), which zeroes the central gradient at the ends.
#[inline]
fn stencil<S: Real>(vals: &[S], node: usize, dx: S) -> ((S, S, S), S) {
    let (li, ri) = mirrored(node, vals.len() - 1);
    let v = vals[node];
    let l = vals[li];
    let r = vals[ri];
    let q = (r - l) / (S::lit(2.0) * dx);
    let qb = (v - l) / dx;
    let qf = (r - v) / dx;
    let xx = (r - S::lit(2.0) * v + l) / (dx * dx);
    ((q, qb, qf), xx)
}

struct NodeHamiltonian<S> {
    value: S,
    pair: usize,
    z_max: S,
}

/// `H^{side}` at `(level, node)` with the discrete derivatives of `vals`.
fn node_hamiltonian<S: Real>(
    model: &GameModel<S>,
    grid: &SpaceTimeGrid<S>,
    coeffs: &Coefficients<S>,
    side: Side,
    level: usize,
    node: usize,
    vals: &[S],
    matrix: &mut Vec<S>,
) -> NodeHamiltonian<S> {
    let t = grid.t(level);
    let x = grid.x(node);
    let u = vals[node];
    let (grads, xx) = stencil(vals, node, grid.dx());
    matrix.clear();
    let mut z_max = S::zero();
    for pair in 0..coeffs.pairs {
        let (a, b) = model.pair_controls(pair);
        let c = coeffs.at(level, node, pair);
        z_max = z_max.larger((grads.0 * c.1).magnitude());
        matrix.push(inner_1d(model, t, x, u, grads, xx, c, a, b));
    }
    let (na, nb) = (model.controls_a.len(), model.controls_b.len());
    let (value, (ia, ib)) = match side {
        Side::Lower => {
            let h = max_min(matrix, na, nb);
            (h.value, h.saddle())
        }
        Side::Upper => {
            let h = min_max(matrix, na, nb);
            (h.value, h.saddle())
        }
    };
    NodeHamiltonian {
        value,
        pair: ia * nb + ib,
        z_max,
    }
}

/// [`solve_double_obstacle_with`] at default options.
pub fn solve_double_obstacle<S: Real>(
    model: &GameModel<S>,
    grid: &SpaceTimeGrid<S>,
    side: Side,
) -> Result<ValueField<S>, SolverError> {
    solve_double_obstacle_with(model, grid, side, SolveOptions::default())
}

struct NodeUpdate<S> {
    value: S,
    flag: ContactFlag,
    k_plus: S,
    k_minus: S,
    pair: usize,
}

/// Backward induction
///
/// ```text
/// ũ_j = u_j^{n+1} + dt · H(t_n, x_j, u_j^{n+1}, Du_j^{n+1}, D²u_j^{n+1})
/// u_j^n = clamp(ũ_j, h(t_n, x_j), h'(t_n, x_j))
/// ```
///
/// from `u^{nt} = g`. `Du` is the central difference in the `z = qσ`
/// argument and one-sided (upwind) in the drift term.
///
/// A model with no diffusion, no drift and no z-sensitivity has no stability
/// bound and is solved at any `dt`.
pub fn solve_double_obstacle_with<S: Real>(
    model: &GameModel<S>,
    grid: &SpaceTimeGrid<S>,
    side: Side,
    options: SolveOptions<S>,
) -> Result<ValueField<S>, SolverError> {
    let coeffs = Coefficients::new(model, grid)?;
    let z_cap = options
        .z_cap
        .unwrap_or_else(|| default_z_cap_from(model, grid, &coeffs));
    if options.enforce_cfl {
        match cfl_from(model, grid, &coeffs, z_cap) {
            Ok(dt) if grid.dt() > dt * S::lit(1.0 + 1e-9) => {
                return Err(SolverError::CflViolation(format!(
                    "grid dt = {} exceeds the stable step {}",
                    grid.dt(),
                    dt
                )));
            }
            Ok(_) | Err(SolverError::DegenerateModel) => {}
            Err(e) => return Err(e),
        }
    }
    let bound = data_bound(model, grid);
    let blowup = S::lit(10.0) * if bound > S::zero() { bound } else { S::one() };
    let nodes = grid.nodes();
    let levels = grid.levels();
    let dt = grid.dt();
    let size = levels * nodes;
    let mut values = vec![S::zero(); size];
    let mut flags = vec![ContactFlag::Interior; size];
    let mut k_plus = vec![S::zero(); size];
    let mut k_minus = vec![S::zero(); size];
    let mut controls = vec![0usize; size];

    let t_end = grid.t(grid.nt);
    for node in 0..nodes {
        let x = grid.x(node);
        let g = model.terminal_1d(x);
        let i = grid.nt * nodes + node;
        values[i] = g;
        flags[i] = ContactFlag::classify(g, model.lower_1d(t_end, x), model.upper_1d(t_end, x), S::zero());
    }

    for level in (0..grid.nt).rev() {
        let (head, tail) = values.split_at_mut((level + 1) * nodes);
        let next = &tail[..nodes];
        let t = grid.t(level);
        let updates: Vec<Result<NodeUpdate<S>, SolverError>> = (0..nodes)
            .into_par_iter()
            .map_init(Vec::new, |matrix, node| {
                let h = node_hamiltonian(model, grid, &coeffs, side, level, node, next, matrix);
                if h.z_max > z_cap {
                    return Err(SolverError::ZCapExceeded {
                        level,
                        node,
                        z: h.z_max.as_f64(),
                        cap: z_cap.as_f64(),
                    });
                }
                let raw = next[node] + dt * h.value;
                if !(raw.magnitude() <= blowup) {
                    return Err(SolverError::StabilityBlowup {
                        level,
                        node,
                        value: raw.as_f64(),
                        bound: blowup.as_f64(),
                    });
                }
                let x = grid.x(node);
                let (lo, hi) = (model.lower_1d(t, x), model.upper_1d(t, x));
                let flag = if raw < lo {
                    ContactFlag::Lower
                } else if raw > hi {
                    ContactFlag::Upper
                } else {
                    ContactFlag::Interior
                };
                Ok(NodeUpdate {
                    value: raw.clamp_to(lo, hi),
                    flag,
                    k_plus: (lo - raw).positive_part(),
                    k_minus: (raw - hi).positive_part(),
                    pair: h.pair,
                })
            })
            .collect();
        let current = &mut head[level * nodes..];
        for (node, update) in updates.into_iter().enumerate() {
            let u = update?;
            let i = level * nodes + node;
            current[node] = u.value;
            flags[i] = u.flag;
            k_plus[i] = u.k_plus;
            k_minus[i] = u.k_minus;
            controls[i] = u.pair;
        }
    }
    let (body, terminal) = controls.split_at_mut(grid.nt * nodes);
    terminal.copy_from_slice(&body[(grid.nt - 1) * nodes..]);

    Ok(ValueField {
        grid: *grid,
        side,
        values,
        flags,
        k_plus,
        k_minus,
        controls,
    })
}

/// Discrete complementarity residual
///
/// ```text
/// max |min{u − h, max{(u^n − u^{n+1})/dt − H(u^n), u − h'}}|
/// ```
///
/// over interior nodes and the levels `0..nt`, with `H` evaluated by the
/// solver's operators on level `n`'s own values. For a field produced by
/// the explicit scheme this measures the time-consistency error, which is
/// first order in `dt`.
pub fn residual_check<S: Real>(field: &ValueField<S>, model: &GameModel<S>) -> Result<S, SolverError> {
    let grid = &field.grid;
    let coeffs = Coefficients::new(model, grid)?;
    let dt = grid.dt();
    let nodes = grid.nodes();
    let per_level: Vec<S> = (0..grid.nt)
        .into_par_iter()
        .map(|level| {
            let vals = field.level(level);
            let next = field.level(level + 1);
            let t = grid.t(level);
            let mut matrix = Vec::new();
            let mut worst = S::zero();
            for node in 1..nodes - 1 {
                let h = node_hamiltonian(model, grid, &coeffs, field.side, level, node, vals, &mut matrix);
                let x = grid.x(node);
                let u = vals[node];
                let pde = (u - next[node]) / dt - h.value;
                let r = (u - model.lower_1d(t, x)).smaller(pde.larger(u - model.upper_1d(t, x)));
                worst = worst.larger(r.magnitude());
            }
            worst
        })
        .collect();
    Ok(per_level.into_iter().fold(S::zero(), |m, v| m.larger(v)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{heat_no_control, nonseparable, separable_isaacs};

    fn clip_model(g: f64, source: f64) -> GameModel<f64> {
        GameModel::builder("clip")
            .domain_1d(-1.0, 1.0)
            .drift_1d(|_, _, _, _| 0.0)
            .diffusion_1d(|_, _, _, _| 0.0)
            .generator_1d(move |_, _, _, _, _, _| source)
            .terminal_1d(move |x| g * x)
            .obstacles_1d(|_, _| -1.0, |_, _| 0.5)
            .build()
            .unwrap()
    }

    #[test]
    fn cfl_formula_examples() {
        let g = SpaceTimeGrid::new(-1.0f64, 1.0, 20, 10, 1.0).unwrap();
        let heat = GameModel::builder("h")
            .domain_1d(-1.0, 1.0)
            .diffusion_1d(|_, _, _, _| 1.0)
            .generator_1d(|_, _, _, _, _, _| 0.0)
            .terminal_1d(|_| 0.0)
            .obstacles_1d(|_, _| -1.0, |_, _| 1.0)
            .build()
            .unwrap();
        assert!((cfl_timestep(&heat, &g, 1.0).unwrap() - 0.009f64).abs() < 1e-15);
        let drift = GameModel::builder("b")
            .domain_1d(-1.0, 1.0)
            .drift_1d(|_, _, _, _| 1.0)
            .diffusion_1d(|_, _, _, _| 0.0)
            .generator_1d(|_, _, _, _, _, _| 0.0)
            .terminal_1d(|_| 0.0)
            .obstacles_1d(|_, _| -1.0, |_, _| 1.0)
            .build()
            .unwrap();
        assert!((cfl_timestep(&drift, &g, 1.0).unwrap() - 0.09f64).abs() < 1e-14);
        assert!(matches!(
            cfl_timestep(&clip_model(0.0, 0.0), &g, 1.0),
            Err(SolverError::DegenerateModel)
        ));
    }

    #[test]
    fn stationary_data_is_projected_exactly() {
        let m = clip_model(2.0, 0.0);
        let g = SpaceTimeGrid::new(-1.0, 1.0, 20, 7, 1.0).unwrap();
        let f = solve_double_obstacle(&m, &g, Side::Lower).unwrap();
        for level in 0..=7 {
            for node in 0..=20 {
                let x = g.x(node);
                let want = if level == 7 { 2.0 * x } else { (2.0 * x).clamp(-1.0, 0.5) };
                assert_eq!(f.value(level, node), want);
            }
        }
        assert_eq!(residual_check(&f, &m).unwrap(), 0.0);
    }

    #[test]
    fn clipping_ode() {
        let m = clip_model(0.0, 1.0);
        let g = SpaceTimeGrid::new(-1.0, 1.0, 8, 100, 1.0).unwrap();
        let f = solve_double_obstacle(&m, &g, Side::Upper).unwrap();
        for node in 0..=8 {
            assert_eq!(f.value(0, node), 0.5);
            for level in 0..50 {
                assert_eq!(f.flag(level, node), ContactFlag::Upper);
                assert!(f.k_minus[f.index(level, node)] > 0.0);
            }
            assert!((f.value(75, node) - 0.25).abs() < 1e-12);
            assert_eq!(f.flag(75, node), ContactFlag::Interior);
        }
        assert!(residual_check(&f, &m).unwrap() < 1e-9);
    }

    #[test]
    fn heat_kernel_solution() {
        let m = heat_no_control::<f64>();
        let g = cfl_grid(&m, 200).unwrap();
        let f = solve_double_obstacle(&m, &g, Side::Lower).unwrap();
        let u0 = f.value(0, 100);
        assert!((u0 - (-0.5f64).exp()).abs() < 2e-2, "u0 = {u0}");
        let r = residual_check(&f, &m).unwrap();
        assert!(r < 1e-2, "residual {r}");
    }

    #[test]
    fn oversized_dt_is_rejected() {
        let m = heat_no_control::<f64>();
        let g = SpaceTimeGrid::for_model(&m, 200, 10).unwrap();
        assert!(matches!(
            solve_double_obstacle(&m, &g, Side::Lower),
            Err(SolverError::CflViolation(_))
        ));
    }

    #[test]
    fn lower_below_upper_and_separable_coincide() {
        let m = nonseparable::<f64>();
        let g = cfl_grid(&m, 60).unwrap();
        let lo = solve_double_obstacle(&m, &g, Side::Lower).unwrap();
        let hi = solve_double_obstacle(&m, &g, Side::Upper).unwrap();
        assert!(lo.values.iter().zip(&hi.values).all(|(a, b)| a <= &(b + 1e-12)));
        assert!(lo.max_abs_diff(&hi) > 1e-4);

        let m = separable_isaacs::<f64>();
        let g = cfl_grid(&m, 200).unwrap();
        let lo = solve_double_obstacle(&m, &g, Side::Lower).unwrap();
        let hi = solve_double_obstacle(&m, &g, Side::Upper).unwrap();
        assert!(lo.max_abs_diff(&hi) <= 5e-3);
    }

    #[test]
    fn ordered_sources_give_ordered_fields() {
        let base = heat_no_control::<f64>();
        let lo = base.with_generator(std::sync::Arc::new(|_, x: &[f64], _, _, _, _| 0.1 * x[0].sin()));
        let hi = base.with_generator(std::sync::Arc::new(|_, x: &[f64], _, _, _, _| 0.1 * x[0].sin() + 0.05));
        let g = cfl_grid(&base, 80).unwrap();
        let a = solve_double_obstacle(&lo, &g, Side::Lower).unwrap();
        let b = solve_double_obstacle(&hi, &g, Side::Lower).unwrap();
        assert!(a.values.iter().zip(&b.values).all(|(u, v)| *u <= v + 1e-8));
    }
}
