//! Double-barrier reflected BSDEs on a Markov chain.
//!
//! A solution is `(Y, Z, K⁺, K⁻)` with `L ≤ Y ≤ U`, `K±` nondecreasing and
//! increasing only when `Y` touches the corresponding barrier. On the chain
//! the backward step is
//!
//! ```text
//! Ỹ_j = E[Y^{n+1} | x_j] + dt · F(t_n, x_j, Y_j^{n+1}, Z_j),   Z_j = σ (Y_{j+1}^{n+1} − Y_{j−1}^{n+1}) / 2dx
//! Y_j = clamp(Ỹ_j, L_j, U_j),   ΔK⁺ = (L_j − Ỹ_j)⁺,   ΔK⁻ = (Ỹ_j − U_j)⁺
//! ```

use std::io::{self, Write};

use rayon::prelude::*;

use crate::dynamics::{ControlPolicy, MarkovChain};
use crate::error::SolverError;
use crate::grid::SpaceTimeGrid;
use crate::model::GameModel;
use crate::pde::ContactFlag;
use crate::scalar::{fmt17, Field, Real};
use crate::transforms::ApproximationChain;

/// Generator evaluated with the control pair already fixed by a policy.
pub trait ChainGenerator<S>: Sync {
    fn eval(&self, t: S, x: S, y: S, z: S, pair: usize) -> S;
}

impl<S, F> ChainGenerator<S> for F
where
    F: Fn(S, S, S, S, usize) -> S + Sync,
{
    #[inline]
    fn eval(&self, t: S, x: S, y: S, z: S, pair: usize) -> S {
        self(t, x, y, z, pair)
    }
}

/// The generator of a model with the pair index resolved to control values.
pub struct ModelGenerator<'a, S: Real>(pub &'a GameModel<S>);

impl<S: Real> ChainGenerator<S> for ModelGenerator<'_, S> {
    #[inline]
    fn eval(&self, t: S, x: S, y: S, z: S, pair: usize) -> S {
        let (a, b) = self.0.pair_controls(pair);
        self.0.generator_1d(t, x, y, z, a, b)
    }
}

/// Terminal values and barriers on every `(level, node)` of a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct BarrierData<S> {
    pub terminal: Vec<S>,
    /// `L`, level-major.
    pub lower: Vec<S>,
    /// `U`, level-major.
    pub upper: Vec<S>,
}

impl<S: Real> BarrierData<S> {
    /// `g`, `h`, `h'` of a model sampled on `grid`.
    pub fn from_model(model: &GameModel<S>, grid: &SpaceTimeGrid<S>) -> Self {
        let xs = grid.xs();
        let mut lower = Vec::with_capacity(grid.levels() * xs.len());
        let mut upper = Vec::with_capacity(grid.levels() * xs.len());
        for level in 0..grid.levels() {
            let t = grid.t(level);
            for &x in &xs {
                lower.push(model.lower_1d(t, x));
                upper.push(model.upper_1d(t, x));
            }
        }
        Self {
            terminal: xs.iter().map(|&x| model.terminal_1d(x)).collect(),
            lower,
            upper,
        }
    }
}

impl<S: Field> BarrierData<S> {
    pub(crate) fn validate(&self, grid: &SpaceTimeGrid<S>) -> Result<(), SolverError> {
        let nodes = grid.nodes();
        let cells = grid.levels() * nodes;
        if self.terminal.len() != nodes || self.lower.len() != cells || self.upper.len() != cells {
            return Err(SolverError::InvalidInput(format!(
                "barrier data must cover {} levels of {nodes} nodes",
                grid.levels()
            )));
        }
        for (i, (&l, &u)) in self.lower.iter().zip(&self.upper).enumerate() {
            if !(l < u) {
                return Err(SolverError::BarrierOrderViolation {
                    level: i / nodes,
                    node: i % nodes,
                    lower: l.as_f64(),
                    upper: u.as_f64(),
                });
            }
        }
        let last = grid.nt * nodes;
        for (node, &g) in self.terminal.iter().enumerate() {
            let (l, u) = (self.lower[last + node], self.upper[last + node]);
            if g < l || g > u {
                return Err(SolverError::TerminalOutsideBarriers {
                    node,
                    value: g.as_f64(),
                    lower: l.as_f64(),
                    upper: u.as_f64(),
                });
            }
        }
        Ok(())
    }

    /// Largest absolute barrier or terminal value.
    pub fn bound(&self) -> S {
        self.terminal
            .iter()
            .chain(&self.lower)
            .chain(&self.upper)
            .fold(S::zero(), |m, &v| m.larger(v.magnitude()))
    }
}

/// Discrete `(Y, Z, K⁺, K⁻)` on the chain's grid, level-major.
#[derive(Debug, Clone)]
pub struct RbsdeSolution<S> {
    pub grid: SpaceTimeGrid<S>,
    pub y: Vec<S>,
    pub z: Vec<S>,
    /// Increments of `K⁺` over `[t_n, t_{n+1}]` charged at `(n, j)`.
    pub dk_plus: Vec<S>,
    pub dk_minus: Vec<S>,
    pub flags: Vec<ContactFlag>,
    /// Control pair used at each `(level, node)`.
    pub pairs: Vec<usize>,
    pub lower: Vec<S>,
    pub upper: Vec<S>,
}

/// Maxima of the discrete flat-off conditions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SkorokhodResiduals<S> {
    /// `max |min(Y − L, ΔK⁺)|`.
    pub lower: S,
    /// `max |min(U − Y, ΔK⁻)|`.
    pub upper: S,
}

impl<S: Field> SkorokhodResiduals<S> {
    pub fn max(&self) -> S {
        self.lower.larger(self.upper)
    }

    pub fn within(&self, tol: S) -> bool {
        self.max() <= tol
    }
}

impl<S: Field> RbsdeSolution<S> {
    #[inline]
    pub fn index(&self, level: usize, node: usize) -> usize {
        level * self.grid.nodes() + node
    }

    pub fn y_at(&self, level: usize, node: usize) -> S {
        self.y[self.index(level, node)]
    }

    pub fn y_level(&self, level: usize) -> &[S] {
        let n = self.grid.nodes();
        &self.y[level * n..(level + 1) * n]
    }

    /// Running sums `Σ_{m<n} ΔK±(m, j)` per node: the cumulative
    /// reflection along the path that stays at node `j`.
    pub fn cumulative_k(&self) -> (Vec<S>, Vec<S>) {
        let nodes = self.grid.nodes();
        let mut kp = vec![S::zero(); self.y.len()];
        let mut km = vec![S::zero(); self.y.len()];
        for level in 1..self.grid.levels() {
            for node in 0..nodes {
                let (i, prev) = (level * nodes + node, (level - 1) * nodes + node);
                kp[i] = kp[prev] + self.dk_plus[prev];
                km[i] = km[prev] + self.dk_minus[prev];
            }
        }
        (kp, km)
    }

    /// `K±` accumulated along a node path `path[0..=nt]`.
    pub fn cumulative_k_along(&self, path: &[usize]) -> (Vec<S>, Vec<S>) {
        let mut kp = vec![S::zero()];
        let mut km = vec![S::zero()];
        for (level, &node) in path.iter().enumerate().take(self.grid.nt) {
            let i = self.index(level, node);
            kp.push(kp[level] + self.dk_plus[i]);
            km.push(km[level] + self.dk_minus[i]);
        }
        (kp, km)
    }

    /// `E[K±_{t_n}]` for the chain started at `start` under the stored pairs.
    pub fn expected_cumulative_k(&self, chain: &MarkovChain<S>, start: usize) -> (Vec<S>, Vec<S>) {
        let nodes = self.grid.nodes();
        let mut dist = vec![S::zero(); nodes];
        dist[start] = S::one();
        let mut kp = vec![S::zero()];
        let mut km = vec![S::zero()];
        for level in 0..self.grid.nt {
            let (mut ep, mut em) = (S::zero(), S::zero());
            let mut next = vec![S::zero(); nodes];
            for (node, &mass) in dist.iter().enumerate() {
                if mass == S::zero() {
                    continue;
                }
                let i = self.index(level, node);
                ep = ep + mass * self.dk_plus[i];
                em = em + mass * self.dk_minus[i];
                let s = chain.stencil(level, node, self.pairs[i]);
                let (l, r) = chain.neighbours(node);
                next[l] = next[l] + mass * s.down;
                next[node] = next[node] + mass * s.stay;
                next[r] = next[r] + mass * s.up;
            }
            kp.push(kp[level] + ep);
            km.push(km[level] + em);
            dist = next;
        }
        (kp, km)
    }

    pub fn skorokhod_residuals(&self) -> SkorokhodResiduals<S> {
        let mut lower = S::zero();
        let mut upper = S::zero();
        for i in 0..self.y.len() {
            lower = lower.larger((self.y[i] - self.lower[i]).smaller(self.dk_plus[i]).magnitude());
            upper = upper.larger((self.upper[i] - self.y[i]).smaller(self.dk_minus[i]).magnitude());
        }
        SkorokhodResiduals { lower, upper }
    }

    pub fn max_abs_diff(&self, other: &Self) -> S {
        self.y
            .iter()
            .zip(&other.y)
            .fold(S::zero(), |m, (&a, &b)| m.larger((a - b).magnitude()))
    }

    /// `t,x,Y,Z,K_plus,K_minus,flag`, with `K±` the per-node running sums
    /// of [`RbsdeSolution::cumulative_k`].
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        let (kp, km) = self.cumulative_k();
        writeln!(out, "t,x,Y,Z,K_plus,K_minus,flag")?;
        for level in 0..self.grid.levels() {
            let t = fmt17(self.grid.t(level));
            for node in 0..self.grid.nodes() {
                let i = self.index(level, node);
                writeln!(
                    out,
                    "{t},{},{},{},{},{},{}",
                    fmt17(self.grid.x(node)),
                    fmt17(self.y[i]),
                    fmt17(self.z[i]),
                    fmt17(kp[i]),
                    fmt17(km[i]),
                    self.flags[i].label()
                )?;
            }
        }
        Ok(())
    }
}

/// `max(Y − L, 0)` below which a node counts as touching a barrier.
fn contact_tolerance<S: Field>(data: &BarrierData<S>) -> S {
    let b = data.bound();
    S::lit(1e-9) * if b > S::zero() { b } else { S::one() }
}

struct Step<S> {
    y: S,
    z: S,
    dk_plus: S,
    dk_minus: S,
    pair: usize,
}

enum Reflection<S> {
    Projection,
    Penalty(S),
}

fn backward<S: Field, G: ChainGenerator<S> + ?Sized>(
    chain: &MarkovChain<S>,
    policy: &ControlPolicy<S>,
    generator: &G,
    data: &BarrierData<S>,
    reflection: Reflection<S>,
) -> Result<RbsdeSolution<S>, SolverError> {
    let grid = chain.grid;
    data.validate(&grid)?;
    let nodes = grid.nodes();
    let size = grid.levels() * nodes;
    let dt = chain.dt();
    let two_dx = S::lit(2.0) * chain.dx();
    let tol = contact_tolerance(data);

    let mut y = vec![S::zero(); size];
    let mut z = vec![S::zero(); size];
    let mut dk_plus = vec![S::zero(); size];
    let mut dk_minus = vec![S::zero(); size];
    let mut pairs = vec![0usize; size];
    let last = grid.nt * nodes;
    y[last..].copy_from_slice(&data.terminal);

    for level in (0..grid.nt).rev() {
        let t = grid.t(level);
        let (head, tail) = y.split_at_mut((level + 1) * nodes);
        let next = &tail[..nodes];
        let steps: Vec<Step<S>> = (0..nodes)
            .into_par_iter()
            .map(|node| {
                let x = grid.x(node);
                let pair = policy.pair(t, std::slice::from_ref(&x));
                let (l, r) = chain.neighbours(node);
                let zj = chain.sigma(level, node, pair) * (next[r] - next[l]) / two_dx;
                let i = level * nodes + node;
                let (lo, hi) = (data.lower[i], data.upper[i]);
                let prev = next[node];
                let drift = dt * generator.eval(t, x, prev, zj, pair);
                let expect = chain.expectation(level, node, pair, next);
                match reflection {
                    Reflection::Projection => {
                        let raw = expect + drift;
                        Step {
                            y: raw.clamp_to(lo, hi),
                            z: zj,
                            dk_plus: (lo - raw).positive_part(),
                            dk_minus: (raw - hi).positive_part(),
                            pair,
                        }
                    }
                    Reflection::Penalty(lambda) => {
                        let push_up = dt * lambda * (prev - lo).negative_part();
                        let push_down = dt * lambda * (prev - hi).positive_part();
                        Step {
                            y: expect + drift + push_up - push_down,
                            z: zj,
                            dk_plus: push_up,
                            dk_minus: push_down,
                            pair,
                        }
                    }
                }
            })
            .collect();
        let current = &mut head[level * nodes..];
        for (node, s) in steps.into_iter().enumerate() {
            let i = level * nodes + node;
            current[node] = s.y;
            z[i] = s.z;
            dk_plus[i] = s.dk_plus;
            dk_minus[i] = s.dk_minus;
            pairs[i] = s.pair;
        }
    }
    let (body, terminal) = pairs.split_at_mut(last);
    if grid.nt > 0 {
        terminal.copy_from_slice(&body[last - nodes..]);
    }
    let flags = y
        .iter()
        .zip(data.lower.iter().zip(&data.upper))
        .map(|(&v, (&l, &u))| ContactFlag::classify(v, l, u, tol))
        .collect();
    Ok(RbsdeSolution {
        grid,
        y,
        z,
        dk_plus,
        dk_minus,
        flags,
        pairs,
        lower: data.lower.clone(),
        upper: data.upper.clone(),
    })
}

/// Backward induction with projection onto `[L, U]`.
pub fn solve_rbsde_chain<S: Field, G: ChainGenerator<S> + ?Sized>(
    chain: &MarkovChain<S>,
    policy: &ControlPolicy<S>,
    generator: &G,
    data: &BarrierData<S>,
) -> Result<RbsdeSolution<S>, SolverError> {
    backward(chain, policy, generator, data, Reflection::Projection)
}

/// Same recursion without projection, with generator
/// `F + λ(Y − L)⁻ − λ(Y − U)⁺` evaluated at `Y^{n+1}_j`. The penalty terms
/// are reported as the increments `ΔK±`.
pub fn solve_penalized<S: Field, G: ChainGenerator<S> + ?Sized>(
    chain: &MarkovChain<S>,
    policy: &ControlPolicy<S>,
    generator: &G,
    data: &BarrierData<S>,
    penalty: S,
) -> Result<RbsdeSolution<S>, SolverError> {
    if penalty < S::zero() {
        return Err(SolverError::InvalidInput(format!("penalty {penalty} < 0")));
    }
    let stiffness = penalty * chain.dt();
    if stiffness > S::one() {
        return Err(SolverError::PenaltyStabilityBlowup {
            penalty_dt: stiffness.as_f64(),
        });
    }
    backward(chain, policy, generator, data, Reflection::Penalty(penalty))
}

/// Solves with every member `f^1, …, f^{p_max}` of an approximation chain
/// built over `model`'s (transformed) generator.
pub fn solve_approximation_sequence<S: Real>(
    chain: &MarkovChain<S>,
    policy: &ControlPolicy<S>,
    approximations: &ApproximationChain<S>,
    model: &GameModel<S>,
    data: &BarrierData<S>,
) -> Result<Vec<RbsdeSolution<S>>, SolverError> {
    (1..=approximations.p_max())
        .map(|p| {
            let member = approximations.generator(p);
            let f = |t: S, x: S, y: S, z: S, pair: usize| {
                let (a, b) = model.pair_controls(pair);
                member.eval(t, x, y, z, a, b)
            };
            solve_rbsde_chain(chain, policy, &f, data)
        })
        .collect()
}

/// Outcome of [`comparison_test`].
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonReport<S> {
    /// `max (Y − Y')⁺` over all `(level, node)`.
    pub max_violation: S,
    /// Whether `max_violation ≤ 1e-10`.
    pub holds: bool,
    pub probes: usize,
}

/// Solves with `F` and `F'` and measures how far `Y ≤ Y'` fails.
///
/// The hypothesis `F ≤ F'` is probed first at every `(level, node)` with the
/// policy's pair, `y ∈ {L, (L+U)/2, U}` and `z ∈ {−z_probe, 0, z_probe}`.
pub fn comparison_test<S: Field, G: ChainGenerator<S> + ?Sized, H: ChainGenerator<S> + ?Sized>(
    chain: &MarkovChain<S>,
    policy: &ControlPolicy<S>,
    lower_gen: &G,
    upper_gen: &H,
    data: &BarrierData<S>,
    z_probe: S,
) -> Result<ComparisonReport<S>, SolverError> {
    let grid = chain.grid;
    let nodes = grid.nodes();
    let mut probes = 0;
    for level in 0..grid.nt {
        let t = grid.t(level);
        for node in 0..nodes {
            let x = grid.x(node);
            let pair = policy.pair(t, std::slice::from_ref(&x));
            let i = level * nodes + node;
            let (l, u) = (data.lower[i], data.upper[i]);
            for y in [l, (l + u) / S::lit(2.0), u] {
                for z in [-z_probe, S::zero(), z_probe] {
                    probes += 1;
                    let (f, g) = (lower_gen.eval(t, x, y, z, pair), upper_gen.eval(t, x, y, z, pair));
                    if f > g {
                        return Err(SolverError::HypothesisViolated(format!(
                            "F = {f} > F' = {g} at t = {t}, x = {x}, y = {y}, z = {z}"
                        )));
                    }
                }
            }
        }
    }
    let a = solve_rbsde_chain(chain, policy, lower_gen, data)?;
    let b = solve_rbsde_chain(chain, policy, upper_gen, data)?;
    let max_violation = a
        .y
        .iter()
        .zip(&b.y)
        .fold(S::zero(), |m, (&u, &v)| m.larger((u - v).positive_part()));
    Ok(ComparisonReport {
        max_violation,
        holds: max_violation <= S::lit(1e-10),
        probes,
    })
}
