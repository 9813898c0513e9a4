//! Dynkin games on a Markov chain with frozen controls.
//!
//! The maximizing player σ stops to collect the lower obstacle `h`, the
//! minimizing player τ stops to pay the upper obstacle `h'`, and the terminal
//! payoff `g` is paid if nobody stops before the horizon. A simultaneous stop
//! before the horizon pays `h`. Running rewards `φ dt` accrue until the first
//! stop.

use std::io::{self, Write};

use num_integer::Integer;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::dynamics::{ControlPolicy, MarkovChain};
use crate::error::SolverError;
use crate::grid::SpaceTimeGrid;
use crate::model::GameModel;
use crate::pde::ContactFlag;
use crate::rbsde::BarrierData;
use crate::scalar::{fmt17, Exact, Field, Real};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Player {
    /// σ, paid `h` on stopping.
    Max,
    /// τ, pays `h'` on stopping.
    Min,
}

/// Stop/continue decision per `(level, node)`; every node stops at the last
/// level.
#[derive(Debug, Clone, PartialEq)]
pub struct StoppingRule<S> {
    pub grid: SpaceTimeGrid<S>,
    pub owner: Player,
    stop: Vec<bool>,
}

impl<S: Field> StoppingRule<S> {
    pub fn new(grid: SpaceTimeGrid<S>, owner: Player, mut stop: Vec<bool>) -> Self {
        assert_eq!(stop.len(), grid.levels() * grid.nodes(), "rule must cover every (level, node)");
        let last = grid.nt * grid.nodes();
        stop[last..].fill(true);
        Self { grid, owner, stop }
    }

    /// Stops only at the horizon.
    pub fn never(grid: SpaceTimeGrid<S>, owner: Player) -> Self {
        Self::new(grid, owner, vec![false; grid.levels() * grid.nodes()])
    }

    /// Stops wherever `region(t, x)` holds.
    pub fn from_region(grid: SpaceTimeGrid<S>, owner: Player, region: impl Fn(S, S) -> bool) -> Self {
        let stop = (0..grid.levels())
            .flat_map(|n| (0..grid.nodes()).map(move |j| (n, j)))
            .map(|(n, j)| region(grid.t(n), grid.x(j)))
            .collect();
        Self::new(grid, owner, stop)
    }

    pub fn stops(&self, level: usize, node: usize) -> bool {
        self.stop[level * self.grid.nodes() + node]
    }

    /// Nearest-node lookup for states off the lattice.
    pub fn stops_near(&self, level: usize, x: S) -> bool {
        self.stops(level, self.grid.nearest_node(x))
    }

    /// Number of stopping nodes before the horizon.
    pub fn early_stops(&self) -> usize {
        self.stop[..self.grid.nt * self.grid.nodes()].iter().filter(|&&s| s).count()
    }
}

/// `infsup = min_τ max_σ J` and `supinf = max_σ min_τ J` over all stop
/// regions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SaddleCertificate<S> {
    pub infsup: S,
    pub supinf: S,
}

#[derive(Debug, Clone)]
pub struct DynkinValue<S> {
    pub grid: SpaceTimeGrid<S>,
    /// Level-major game values.
    pub values: Vec<S>,
    pub flags: Vec<ContactFlag>,
    /// σ stops where the value sits on `h`.
    pub max_rule: StoppingRule<S>,
    /// τ stops where the value sits on `h'`.
    pub min_rule: StoppingRule<S>,
    pub certificate: Option<SaddleCertificate<S>>,
}

impl<S: Field> DynkinValue<S> {
    pub fn value(&self, level: usize, node: usize) -> S {
        self.values[level * self.grid.nodes() + node]
    }

    /// `t,x,value,flag,max_stops,min_stops`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "t,x,value,flag,max_stops,min_stops")?;
        for level in 0..self.grid.levels() {
            let t = fmt17(self.grid.t(level));
            for node in 0..self.grid.nodes() {
                let i = level * self.grid.nodes() + node;
                writeln!(
                    out,
                    "{t},{},{},{},{},{}",
                    fmt17(self.grid.x(node)),
                    fmt17(self.values[i]),
                    self.flags[i].label(),
                    u8::from(self.max_rule.stops(level, node)),
                    u8::from(self.min_rule.stops(level, node))
                )?;
            }
        }
        Ok(())
    }
}

/// Running rewards `φ(t_n, x_j, a, b)` at the policy's pair, level-major.
/// Models without a running cost use `F(t, x, 0, 0, a, b)`.
pub fn running_rewards<S: Real>(
    model: &GameModel<S>,
    grid: &SpaceTimeGrid<S>,
    policy: &ControlPolicy<S>,
) -> Vec<S> {
    let mut out = Vec::with_capacity(grid.levels() * grid.nodes());
    for level in 0..grid.levels() {
        let t = grid.t(level);
        for node in 0..grid.nodes() {
            let x = grid.x(node);
            let (a, b) = model.pair_controls(policy.pair(t, &[x]));
            out.push(
                model
                    .running_cost_at(t, &[x], a, b)
                    .unwrap_or_else(|| model.generator_1d(t, x, S::zero(), S::zero(), a, b)),
            );
        }
    }
    out
}

fn check_running<S: Field>(grid: &SpaceTimeGrid<S>, running: &[S]) -> Result<(), SolverError> {
    if running.len() != grid.levels() * grid.nodes() {
        return Err(SolverError::InvalidInput(format!(
            "running rewards must cover {} levels of {} nodes",
            grid.levels(),
            grid.nodes()
        )));
    }
    Ok(())
}

/// Backward clamp induction with terminal values `terminal` and barriers
/// `lower`, `upper`; `step(level, node, expectation)` is the continuation.
fn clamp_induction<S: Field>(
    chain: &MarkovChain<S>,
    policy: &ControlPolicy<S>,
    terminal: &[S],
    lower: &[S],
    upper: &[S],
    step: impl Fn(usize, usize, S) -> S + Sync,
) -> Vec<S> {
    let grid = chain.grid;
    let nodes = grid.nodes();
    let mut values = vec![S::zero(); grid.levels() * nodes];
    values[grid.nt * nodes..].copy_from_slice(terminal);
    for level in (0..grid.nt).rev() {
        let t = grid.t(level);
        let (head, tail) = values.split_at_mut((level + 1) * nodes);
        let next = &tail[..nodes];
        let row: Vec<S> = (0..nodes)
            .into_par_iter()
            .map(|node| {
                let pair = policy.pair(t, &[grid.x(node)]);
                let i = level * nodes + node;
                step(level, node, chain.expectation(level, node, pair, next)).clamp_to(lower[i], upper[i])
            })
            .collect();
        head[level * nodes..].copy_from_slice(&row);
    }
    values
}

fn finish<S: Field>(grid: SpaceTimeGrid<S>, values: Vec<S>, data: &BarrierData<S>) -> DynkinValue<S> {
    let flags: Vec<ContactFlag> = values
        .iter()
        .zip(data.lower.iter().zip(&data.upper))
        .map(|(&v, (&l, &u))| ContactFlag::classify(v, l, u, S::zero()))
        .collect();
    let max_stop = flags.iter().map(|&f| f == ContactFlag::Lower).collect();
    let min_stop = flags.iter().map(|&f| f == ContactFlag::Upper).collect();
    DynkinValue {
        grid,
        max_rule: StoppingRule::new(grid, Player::Max, max_stop),
        min_rule: StoppingRule::new(grid, Player::Min, min_stop),
        values,
        flags,
        certificate: None,
    }
}

/// Value of the additive game: `V = clamp(E[V^{n+1}] + φ dt, h, h')` with
/// `V = g` at the horizon.
pub fn dynkin_value<S: Field>(
    chain: &MarkovChain<S>,
    policy: &ControlPolicy<S>,
    running: &[S],
    data: &BarrierData<S>,
) -> Result<DynkinValue<S>, SolverError> {
    let grid = chain.grid;
    check_running(&grid, running)?;
    data.validate(&grid)?;
    let nodes = grid.nodes();
    let dt = chain.dt();
    let values = clamp_induction(chain, policy, &data.terminal, &data.lower, &data.upper, |n, j, e| {
        e + running[n * nodes + j] * dt
    });
    Ok(finish(grid, values, data))
}

/// Value of the risk-sensitive game `ln E[exp{∫φ ds + payout}]`, computed on
/// `W = e^V` where the recursion is linear:
/// `W = clamp(e^{φ dt} E[W^{n+1}], e^h, e^{h'})`.
///
/// Values are mapped back with `ln`, clamped to `[h, h']` against rounding,
/// and set to `g` at the horizon.
pub fn dynkin_value_exponential<S: Real>(
    chain: &MarkovChain<S>,
    policy: &ControlPolicy<S>,
    running: &[S],
    data: &BarrierData<S>,
) -> Result<DynkinValue<S>, SolverError> {
    let grid = chain.grid;
    check_running(&grid, running)?;
    data.validate(&grid)?;
    let nodes = grid.nodes();
    let dt = chain.dt();
    let exp = |v: &[S]| v.iter().map(|x| x.exp()).collect::<Vec<S>>();
    let (eg, el, eu) = (exp(&data.terminal), exp(&data.lower), exp(&data.upper));
    let w = clamp_induction(chain, policy, &eg, &el, &eu, |n, j, e| e * (running[n * nodes + j] * dt).exp());
    let last = grid.nt * nodes;
    let mut values: Vec<S> = w
        .iter()
        .enumerate()
        .map(|(i, v)| {
            // exact barrier hits map back exactly so the rules see them
            if *v == el[i] {
                data.lower[i]
            } else if *v == eu[i] {
                data.upper[i]
            } else {
                v.ln().clamp_to(data.lower[i], data.upper[i])
            }
        })
        .collect();
    values[last..].copy_from_slice(&data.terminal);
    Ok(finish(grid, values, data))
}

/// Largest reachable set the exhaustive oracle accepts.
pub const MAX_REACHABLE_CELLS: usize = 24;
/// Largest number of pre-horizon cells whose stop decision is enumerated.
pub const MAX_DECISION_CELLS: usize = 10;

/// Exhaustive `(infsup, supinf)` from `start` at level 0, enumerating every
/// pair of stop regions over the reachable pre-horizon cells.
///
/// All data is brought to a common denominator so payoffs are compared as
/// integers; results are exact.
pub fn brute_force_game_value(
    chain: &MarkovChain<Exact>,
    policy: &ControlPolicy<Exact>,
    running: &[Exact],
    data: &BarrierData<Exact>,
    start: usize,
) -> Result<SaddleCertificate<Exact>, SolverError> {
    let grid = chain.grid;
    check_running(&grid, running)?;
    data.validate(&grid)?;
    let nodes = grid.nodes();
    if start >= nodes {
        return Err(SolverError::InvalidInput(format!("start node {start} outside the grid")));
    }
    let dt = chain.dt();

    // reachable cells, level by level
    let mut levels: Vec<Vec<usize>> = vec![vec![start]];
    for level in 0..grid.nt {
        let mut next: Vec<usize> = Vec::new();
        for &node in &levels[level] {
            let (l, r) = chain.neighbours(node);
            next.extend([l, node, r]);
        }
        next.sort_unstable();
        next.dedup();
        levels.push(next);
    }
    let reachable: usize = levels.iter().map(Vec::len).sum();
    let decisions = reachable - levels[grid.nt].len();
    if reachable > MAX_REACHABLE_CELLS || decisions > MAX_DECISION_CELLS {
        return Err(SolverError::TooLarge(format!(
            "{reachable} reachable cells with {decisions} decisions (limits {MAX_REACHABLE_CELLS}, {MAX_DECISION_CELLS})"
        )));
    }

    // common denominators: stencil weights over q, data and φ dt over e
    let mut q: i128 = 1;
    let mut e: i128 = 1;
    let mut cells = Vec::with_capacity(decisions);
    for level in 0..grid.nt {
        let t = grid.t(level);
        for &node in &levels[level] {
            let pair = policy.pair(t, &[grid.x(node)]);
            let s = chain.stencil(level, node, pair);
            for p in [s.down, s.stay, s.up] {
                q = q.lcm(p.denom());
            }
            let i = level * nodes + node;
            for v in [data.lower[i], data.upper[i], running[i] * dt] {
                e = e.lcm(v.denom());
            }
            cells.push((level, node, s, i));
        }
    }
    for g in &data.terminal {
        e = e.lcm(g.denom());
    }
    let scale = |v: Exact, factor: i128| -> i128 { v.numer() * (factor / v.denom()) };
    let q_pow = |k: usize| q.pow(k as u32);

    // integer payoffs: a value at level n is stored times e·q^{nt−n}
    let slot = |level: usize, node: usize| -> usize {
        let offset: usize = levels[..level].iter().map(Vec::len).sum();
        offset + levels[level].binary_search(&node).expect("reachable")
    };
    struct Cell {
        slot: usize,
        lower: i128,
        upper: i128,
        reward: i128,
        weights: [(usize, i128); 3],
    }
    let compiled: Vec<Cell> = cells
        .iter()
        .rev()
        .map(|&(level, node, s, i)| {
            let factor = e * q_pow(grid.nt - level);
            let (l, r) = chain.neighbours(node);
            Cell {
                slot: slot(level, node),
                lower: scale(data.lower[i], factor),
                upper: scale(data.upper[i], factor),
                reward: scale(running[i] * dt, factor),
                weights: [
                    (slot(level + 1, l), scale(s.down, q)),
                    (slot(level + 1, node), scale(s.stay, q)),
                    (slot(level + 1, r), scale(s.up, q)),
                ],
            }
        })
        .collect();
    let mut base = vec![0i128; reachable];
    for &node in &levels[grid.nt] {
        base[slot(grid.nt, node)] = scale(data.terminal[node], e);
    }
    // compiled is ordered from the last decision level back to the start
    let payoff = |max_mask: u32, min_mask: u32, v: &mut [i128]| -> i128 {
        for (k, c) in compiled.iter().enumerate() {
            let bit = 1u32 << (decisions - 1 - k);
            v[c.slot] = if max_mask & bit != 0 {
                c.lower
            } else if min_mask & bit != 0 {
                c.upper
            } else {
                c.weights.iter().map(|&(s, w)| w * v[s]).sum::<i128>() + c.reward
            };
        }
        v[0]
    };
    let rules = 1u32 << decisions;
    let mut v = base.clone();
    let mut infsup = i128::MAX;
    for min_mask in 0..rules {
        let best = (0..rules).map(|m| payoff(m, min_mask, &mut v)).max().expect("nonempty");
        infsup = infsup.min(best);
    }
    let mut supinf = i128::MIN;
    for max_mask in 0..rules {
        let worst = (0..rules).map(|m| payoff(max_mask, m, &mut v)).min().expect("nonempty");
        supinf = supinf.max(worst);
    }
    let denom = e * q_pow(grid.nt);
    Ok(SaddleCertificate {
        infsup: Exact::new(infsup, denom),
        supinf: Exact::new(supinf, denom),
    })
}

/// Monte Carlo estimate of `Γ = E[exp{∫φ ds + payout}]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GammaEstimate {
    pub gamma: f64,
    pub std_error: f64,
    pub n_paths: usize,
    pub seed: u64,
}

/// Simulates Euler–Maruyama paths on the rules' time grid from the model's
/// `x0` and averages the exponential payoff.
///
/// At each level the σ rule is checked before the τ rule, so a simultaneous
/// stop before the horizon pays `h`. Path `i` uses ChaCha8 stream `i` of
/// `seed`, so the estimate does not depend on scheduling.
pub fn risk_sensitive_payoff_mc<S: Real>(
    model: &GameModel<S>,
    policy: &ControlPolicy<S>,
    max_rule: &StoppingRule<S>,
    min_rule: &StoppingRule<S>,
    n_paths: usize,
    seed: u64,
) -> Result<GammaEstimate, SolverError> {
    if model.state_dim != 1 || model.noise_dim != 1 {
        return Err(SolverError::DimensionUnsupported("payoff simulation runs with n = d = 1".into()));
    }
    if n_paths < 2 {
        return Err(SolverError::InvalidInput("need at least two paths for a standard error".into()));
    }
    let grid = max_rule.grid;
    if min_rule.grid != grid {
        return Err(SolverError::InvalidInput("stopping rules live on different grids".into()));
    }
    let dt = grid.dt();
    let sqrt_dt = dt.sqrt();
    let x0 = model.x0[0];
    let samples: Vec<f64> = (0..n_paths)
        .into_par_iter()
        .map(|path| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(path as u64);
            let mut x = x0;
            let mut reward = S::zero();
            for level in 0..grid.nt {
                let t = grid.t(level);
                if max_rule.stops_near(level, x) {
                    return (reward + model.lower_1d(t, x)).exp().as_f64();
                }
                if min_rule.stops_near(level, x) {
                    return (reward + model.upper_1d(t, x)).exp().as_f64();
                }
                let (a, b) = model.pair_controls(policy.pair(t, &[x]));
                let phi = model
                    .running_cost_at(t, &[x], a, b)
                    .unwrap_or_else(|| model.generator_1d(t, x, S::zero(), S::zero(), a, b));
                reward = reward + phi * dt;
                let w: f64 = rng.sample(StandardNormal);
                x = x + model.drift_1d(t, x, a, b) * dt + model.sigma_1d(t, x, a, b) * S::lit(w) * sqrt_dt;
            }
            (reward + model.terminal_1d(x)).exp().as_f64()
        })
        .collect();
    let n = n_paths as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok(GammaEstimate {
        gamma: mean,
        std_error: (var / n).sqrt(),
        n_paths,
        seed,
    })
}

/// Scheme tolerance added to the Monte Carlo band.
pub const IDENTITY_SCHEME_TOL: f64 = 5e-2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IdentityReport {
    pub ln_gamma_mc: f64,
    pub gamma_mc: f64,
    pub std_error: f64,
    pub y0_chain: f64,
    /// `ln Γ − Y₀`.
    pub gap: f64,
    /// `3·se/Γ + 5e-2`.
    pub tolerance: f64,
    pub pass: bool,
}

impl IdentityReport {
    pub const CSV_HEADER: &'static str = "ln_gamma_mc,gamma_mc,std_error,y0_chain,gap,tolerance,pass";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            fmt17(self.ln_gamma_mc),
            fmt17(self.gamma_mc),
            fmt17(self.std_error),
            fmt17(self.y0_chain),
            fmt17(self.gap),
            fmt17(self.tolerance),
            self.pass
        )
    }
}

/// Chain value `Y₀` of the BSDE with generator `φ + ½|z|²` stopped at the
/// rules' stop sets, computed through `W = e^Y`:
/// `W = e^h` where σ stops, `e^{h'}` where τ stops, else `e^{φ dt} E[W^{n+1}]`.
pub fn stopped_chain_value<S: Real>(
    model: &GameModel<S>,
    chain: &MarkovChain<S>,
    policy: &ControlPolicy<S>,
    max_rule: &StoppingRule<S>,
    min_rule: &StoppingRule<S>,
) -> Result<Vec<S>, SolverError> {
    let grid = chain.grid;
    if max_rule.grid.nt != grid.nt || max_rule.grid.nodes() != grid.nodes() || min_rule.grid != max_rule.grid {
        return Err(SolverError::InvalidInput("stopping rules and chain use different grids".into()));
    }
    let running = running_rewards(model, &grid, policy);
    let nodes = grid.nodes();
    let dt = chain.dt();
    let mut w = vec![S::zero(); grid.levels() * nodes];
    for node in 0..nodes {
        w[grid.nt * nodes + node] = model.terminal_1d(grid.x(node)).exp();
    }
    for level in (0..grid.nt).rev() {
        let t = grid.t(level);
        let (head, tail) = w.split_at_mut((level + 1) * nodes);
        let next = &tail[..nodes];
        let row: Vec<S> = (0..nodes)
            .into_par_iter()
            .map(|node| {
                let x = grid.x(node);
                if max_rule.stops(level, node) {
                    model.lower_1d(t, x).exp()
                } else if min_rule.stops(level, node) {
                    model.upper_1d(t, x).exp()
                } else {
                    let pair = policy.pair(t, &[x]);
                    chain.expectation(level, node, pair, next) * (running[level * nodes + node] * dt).exp()
                }
            })
            .collect();
        head[level * nodes..].copy_from_slice(&row);
    }
    Ok(w.into_iter().map(|v| v.ln()).collect())
}

/// Compares `ln Γ_MC` with the chain value at `(0, x0)`.
pub fn verify_exponential_identity<S: Real>(
    model: &GameModel<S>,
    policy: &ControlPolicy<S>,
    max_rule: &StoppingRule<S>,
    min_rule: &StoppingRule<S>,
    chain: &MarkovChain<S>,
    n_paths: usize,
    seed: u64,
) -> Result<IdentityReport, SolverError> {
    let y = stopped_chain_value(model, chain, policy, max_rule, min_rule)?;
    let y0 = y[chain.grid.nearest_node(model.x0[0])].as_f64();
    let mc = risk_sensitive_payoff_mc(model, policy, max_rule, min_rule, n_paths, seed)?;
    let ln_gamma = mc.gamma.ln();
    let gap = ln_gamma - y0;
    let tolerance = 3.0 * mc.std_error / mc.gamma + IDENTITY_SCHEME_TOL;
    Ok(IdentityReport {
        ln_gamma_mc: ln_gamma,
        gamma_mc: mc.gamma,
        std_error: mc.std_error,
        y0_chain: y0,
        gap,
        tolerance,
        pass: gap.abs() <= tolerance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{build_markov_chain, Stencil};
    use crate::model::{risk_sensitive, RiskSensitiveParams};

    fn ex(n: i64, d: i64) -> Exact {
        Exact::ratio(n, d)
    }

    fn walk(nx: usize, nt: usize) -> MarkovChain<Exact> {
        let grid = SpaceTimeGrid::new(ex(0, 1), Exact::from_count(nx), nx, nt, ex(1, 1)).unwrap();
        let cells = nt * (nx + 1);
        let s = Stencil {
            down: ex(1, 2),
            stay: ex(0, 1),
            up: ex(1, 2),
        };
        MarkovChain::from_stencils(grid, 1, vec![s; cells], vec![ex(0, 1); cells], vec![ex(0, 1); cells]).unwrap()
    }

    fn constant_data(grid: &SpaceTimeGrid<Exact>, g: Exact, h: Exact, hp: Exact) -> BarrierData<Exact> {
        let cells = grid.levels() * grid.nodes();
        BarrierData {
            terminal: vec![g; grid.nodes()],
            lower: vec![h; cells],
            upper: vec![hp; cells],
        }
    }

    #[test]
    fn one_step_clamp_of_expectation() {
        let chain = walk(4, 1);
        let data = constant_data(&chain.grid, ex(5, 1), ex(0, 1), ex(10, 1));
        let run = vec![ex(0, 1); 10];
        let v = dynkin_value(&chain, &ControlPolicy::Constant(0), &run, &data).unwrap();
        assert_eq!(v.value(0, 2), ex(5, 1));
        assert_eq!(v.max_rule.early_stops(), 0);
    }

    #[test]
    fn constant_reward_accumulates() {
        let chain = walk(6, 3);
        let grid = chain.grid;
        let mut data = constant_data(&grid, ex(0, 1), ex(-100, 1), ex(100, 1));
        data.terminal = (0..7).map(|j| Exact::from_count(j)).collect();
        let run = vec![ex(3, 4); grid.levels() * grid.nodes()];
        let v = dynkin_value(&chain, &ControlPolicy::Constant(0), &run, &data).unwrap();
        // symmetric walk from node 3 keeps E[x] = 3 away from the mirrors
        assert_eq!(v.value(0, 3), ex(3, 1) + ex(3, 4));
    }

    #[test]
    fn deterministic_two_level_game_is_zero() {
        let grid = SpaceTimeGrid::new(ex(0, 1), ex(4, 1), 4, 1, ex(1, 1)).unwrap();
        let still = Stencil {
            down: ex(0, 1),
            stay: ex(1, 1),
            up: ex(0, 1),
        };
        let chain = MarkovChain::from_stencils(grid, 1, vec![still; 5], vec![ex(0, 1); 5], vec![ex(0, 1); 5]).unwrap();
        let data = constant_data(&grid, ex(0, 1), ex(-1, 1), ex(1, 1));
        let run = vec![ex(0, 1); 10];
        let c = brute_force_game_value(&chain, &ControlPolicy::Constant(0), &run, &data, 2).unwrap();
        assert_eq!(c, SaddleCertificate { infsup: ex(0, 1), supinf: ex(0, 1) });
    }

    #[test]
    fn binomial_game_matches_enumeration() {
        let chain = walk(6, 3);
        let grid = chain.grid;
        let mut data = constant_data(&grid, ex(0, 1), ex(0, 1), ex(0, 1));
        // x_j = j/4, g = x, h = x − 0.4, h' = x + 0.4
        let xs: Vec<Exact> = (0..7).map(|j| Exact::from_count(j) / ex(4, 1)).collect();
        data.terminal = xs.clone();
        for level in 0..4 {
            for (j, &x) in xs.iter().enumerate() {
                data.lower[level * 7 + j] = x - ex(2, 5);
                data.upper[level * 7 + j] = x + ex(2, 5);
            }
        }
        let run = vec![ex(0, 1); 28];
        let policy = ControlPolicy::Constant(0);
        let v = dynkin_value(&chain, &policy, &run, &data).unwrap();
        let c = brute_force_game_value(&chain, &policy, &run, &data, 3).unwrap();
        assert_eq!(c.infsup, c.supinf);
        assert_eq!(c.infsup, v.value(0, 3));
    }

    #[test]
    fn enumeration_refuses_large_instances() {
        let chain = walk(12, 5);
        let grid = chain.grid;
        let data = constant_data(&grid, ex(0, 1), ex(-1, 1), ex(1, 1));
        let run = vec![ex(0, 1); grid.levels() * grid.nodes()];
        assert!(matches!(
            brute_force_game_value(&chain, &ControlPolicy::Constant(0), &run, &data, 6),
            Err(SolverError::TooLarge(_))
        ));
    }

    fn constant_model(phi: f64, g: f64) -> GameModel<f64> {
        risk_sensitive(RiskSensitiveParams::constant("const", phi, g, g - 5.0, g + 5.0))
    }

    #[test]
    fn deterministic_payouts_have_zero_gap() {
        for (phi, g) in [(0.0, 0.7), (0.3, 0.0)] {
            let m = constant_model(phi, g);
            let grid = SpaceTimeGrid::for_model(&m, 20, 40).unwrap();
            let chain = build_markov_chain(&m, &grid).unwrap();
            let (never_max, never_min) = (StoppingRule::never(grid, Player::Max), StoppingRule::never(grid, Player::Min));
            let policy = ControlPolicy::Constant(0);
            let mc = risk_sensitive_payoff_mc(&m, &policy, &never_max, &never_min, 200, 1).unwrap();
            assert!((mc.gamma - (phi + g).exp()).abs() < 1e-12);
            assert!(mc.std_error < 1e-12);
            let r = verify_exponential_identity(&m, &policy, &never_max, &never_min, &chain, 200, 1).unwrap();
            assert!(r.gap.abs() < 1e-12, "{r:?}");
        }
    }

    #[test]
    fn exponential_mode_without_binding_barriers_is_free_value() {
        let m = constant_model(0.3, 0.2);
        let grid = SpaceTimeGrid::for_model(&m, 20, 40).unwrap();
        let chain = build_markov_chain(&m, &grid).unwrap();
        let policy = ControlPolicy::Constant(0);
        let run = running_rewards(&m, &grid, &policy);
        let v = dynkin_value_exponential(&chain, &policy, &run, &BarrierData::from_model(&m, &grid)).unwrap();
        assert!((v.value(0, 10) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn mc_is_seeded() {
        let m: GameModel<f64> = crate::model::risk_sensitive_1d();
        let grid = SpaceTimeGrid::for_model(&m, 40, 50).unwrap();
        let max_rule = StoppingRule::from_region(grid, Player::Max, |_, x| x < -1.0);
        let min_rule = StoppingRule::from_region(grid, Player::Min, |_, x| x > 1.0);
        let policy = ControlPolicy::Constant(12);
        let a = risk_sensitive_payoff_mc(&m, &policy, &max_rule, &min_rule, 500, 9).unwrap();
        let b = risk_sensitive_payoff_mc(&m, &policy, &max_rule, &min_rule, 500, 9).unwrap();
        assert_eq!(a, b);
        assert!(a.std_error > 0.0);
    }
}
