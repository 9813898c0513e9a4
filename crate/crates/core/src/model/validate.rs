//! Sampling-based verification of the standing assumptions on a model.
//!
//! Probes are a deterministic tensor grid in `(t, x)` plus seeded uniform
//! points; generator checks additionally sweep `y`, `z` and every control
//! pair. All checks are suprema over the probe set, so enlarging the probe
//! set can only turn a pass into a failure.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::{GameModel, ModelError};
use crate::scalar::{Field, Real};

/// Probe configuration.
#[derive(Debug, Clone)]
pub struct ProbeSpec {
    /// Grid points per axis of `[0, T] × domain`.
    pub grid_points: usize,
    /// Additional seeded uniform points.
    pub n_random: usize,
    pub seed: u64,
    /// `y` is probed on `[-y_range, y_range]`.
    pub y_range: f64,
    /// each `z` coordinate is probed on `[-z_range, z_range]`.
    pub z_range: f64,
    /// Central finite-difference step for derivative bounds.
    pub fd_step: f64,
}

impl Default for ProbeSpec {
    fn default() -> Self {
        Self {
            grid_points: 17,
            n_random: 128,
            seed: 0,
            y_range: 2.0,
            z_range: 3.0,
            fd_step: 1e-5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Assumption {
    /// x-Lipschitz bound on `b` and `σ`.
    H1Lipschitz,
    /// `h < h'` everywhere.
    H2ObstacleOrder,
    /// `h(T, x) <= g(x) <= h'(T, x)`.
    H2TerminalSandwich,
    /// `|F| <= C(1 + |z|^2)`.
    H2QuadraticGrowth,
    /// Derivative bounds on `F`, checked by finite differences.
    H3Derivatives,
}

impl fmt::Display for Assumption {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Assumption::H1Lipschitz => "H1 (Lipschitz b, sigma)",
            Assumption::H2ObstacleOrder => "H2 (h < h')",
            Assumption::H2TerminalSandwich => "H2 (h(T) <= g <= h'(T))",
            Assumption::H2QuadraticGrowth => "H2 (quadratic growth of F)",
            Assumption::H3Derivatives => "H3 (derivative bounds of F)",
        };
        f.write_str(s)
    }
}

/// A probe location, converted to `f64` for reporting.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ProbePoint {
    pub t: f64,
    pub x: Vec<f64>,
    pub y: Option<f64>,
    pub z: Option<Vec<f64>>,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
}

impl fmt::Display for ProbePoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(t={}, x={:?}", self.t, self.x)?;
        if let Some(y) = self.y {
            write!(f, ", y={y}")?;
        }
        if let Some(z) = &self.z {
            write!(f, ", z={z:?}")?;
        }
        if let (Some(a), Some(b)) = (self.alpha, self.beta) {
            write!(f, ", alpha={a}, beta={b}")?;
        }
        f.write_str(")")
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct AssumptionCheck {
    pub assumption: Assumption,
    pub passed: bool,
    /// Measured constant (worst ratio or worst margin, see `assumption`).
    pub measured: f64,
    pub declared: Option<f64>,
    pub witness: Option<ProbePoint>,
}

/// Measured sup-norms of the data; reported without a threshold.
#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct DataBounds {
    pub terminal: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ModelValidationReport {
    pub model: String,
    pub checks: Vec<AssumptionCheck>,
    pub bounds: DataBounds,
    /// Number of `(t, x)` probe points.
    pub probe_count: usize,
    /// Smallest observed `h' - h`.
    pub min_obstacle_gap: f64,
    /// Empirical `C` (worst `|F| / (1+|z|^2)`).
    pub measured_growth_c: f64,
    /// Empirical `C_L`.
    pub measured_lipschitz_cl: f64,
}

impl ModelValidationReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, which: Assumption) -> Option<&AssumptionCheck> {
        self.checks.iter().find(|c| c.assumption == which)
    }

    pub fn failures(&self) -> impl Iterator<Item = &AssumptionCheck> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

/// Worst value seen so far together with where it was seen.
#[derive(Debug, Clone)]
struct Worst {
    value: f64,
    at: Option<ProbePoint>,
}

impl Worst {
    fn new() -> Self {
        Self {
            value: f64::NEG_INFINITY,
            at: None,
        }
    }

    fn offer(&mut self, value: f64, at: impl FnOnce() -> ProbePoint) {
        // NaN counts as worst so that it cannot hide.
        if value > self.value || (value.is_nan() && !self.value.is_nan()) {
            self.value = value;
            self.at = Some(at());
        }
    }

    fn merge(&mut self, other: Worst) {
        if other.value > self.value || (other.value.is_nan() && !self.value.is_nan()) {
            *self = other;
        }
    }
}

/// Per-probe partial results, merged in probe order.
#[derive(Debug, Clone)]
struct Partial {
    /// `h - h'` (positive is a violation).
    order: Worst,
    /// `max(h(T) - g, g - h'(T))`.
    sandwich: Worst,
    growth_ratio: Worst,
    h3_ratio: Worst,
    h3_dy_ratio: Worst,
    lipschitz: Worst,
    g_abs: f64,
    h_abs: f64,
    hp_abs: f64,
}

impl Partial {
    fn new() -> Self {
        Self {
            order: Worst::new(),
            sandwich: Worst::new(),
            growth_ratio: Worst::new(),
            h3_ratio: Worst::new(),
            h3_dy_ratio: Worst::new(),
            lipschitz: Worst::new(),
            g_abs: 0.0,
            h_abs: 0.0,
            hp_abs: 0.0,
        }
    }

    fn merge(&mut self, o: Partial) {
        self.order.merge(o.order);
        self.sandwich.merge(o.sandwich);
        self.growth_ratio.merge(o.growth_ratio);
        self.h3_ratio.merge(o.h3_ratio);
        self.h3_dy_ratio.merge(o.h3_dy_ratio);
        self.lipschitz.merge(o.lipschitz);
        self.g_abs = self.g_abs.max(o.g_abs);
        self.h_abs = self.h_abs.max(o.h_abs);
        self.hp_abs = self.hp_abs.max(o.hp_abs);
    }
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n <= 1 {
        return vec![0.5 * (lo + hi)];
    }
    (0..n)
        .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
        .collect()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

/// Probe `(t, x)` points plus, for each, a partner `x'` for Lipschitz ratios.
fn probe_points<S: Real>(model: &GameModel<S>, spec: &ProbeSpec) -> Vec<(f64, Vec<f64>, Vec<f64>)> {
    let n = model.state_dim;
    let horizon = model.horizon.as_f64();
    let axes: Vec<Vec<f64>> = model
        .domain
        .iter()
        .map(|&(lo, hi)| linspace(lo.as_f64(), hi.as_f64(), spec.grid_points.max(2)))
        .collect();
    let times = linspace(0.0, horizon, spec.grid_points.max(2));
    let mut out = Vec::new();
    // tensor grid, partner = next grid point along the first axis
    let per_axis = spec.grid_points.max(2);
    let total = per_axis.pow(n as u32);
    for &t in &times {
        for flat in 0..total {
            let mut idx = flat;
            let mut x = Vec::with_capacity(n);
            let mut partner = Vec::with_capacity(n);
            for (k, axis) in axes.iter().enumerate() {
                let i = idx % per_axis;
                idx /= per_axis;
                x.push(axis[i]);
                if k == 0 {
                    let j = if i + 1 < per_axis { i + 1 } else { i - 1 };
                    partner.push(axis[j]);
                } else {
                    partner.push(axis[i]);
                }
            }
            out.push((t, x, partner));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    for _ in 0..spec.n_random {
        let t = rng.random::<f64>() * horizon;
        let x: Vec<f64> = model
            .domain
            .iter()
            .map(|&(lo, hi)| lo.as_f64() + rng.random::<f64>() * (hi - lo).as_f64())
            .collect();
        let partner: Vec<f64> = model
            .domain
            .iter()
            .map(|&(lo, hi)| lo.as_f64() + rng.random::<f64>() * (hi - lo).as_f64())
            .collect();
        out.push((t, x, partner));
    }
    out
}

fn to_s<S: Real>(v: &[f64]) -> Vec<S> {
    v.iter().map(|&a| S::lit(a)).collect()
}

fn to_f(v: &[impl Field]) -> Vec<f64> {
    v.iter().map(|a| a.as_f64()).collect()
}

fn probe_one<S: Real>(
    model: &GameModel<S>,
    spec: &ProbeSpec,
    t_f: f64,
    x_f: &[f64],
    partner_f: &[f64],
) -> Partial {
    let n = model.state_dim;
    let d = model.noise_dim;
    let mut part = Partial::new();
    let t = S::lit(t_f);
    let x: Vec<S> = to_s(x_f);
    let horizon = model.horizon;
    let pt = || ProbePoint {
        t: t_f,
        x: x_f.to_vec(),
        ..Default::default()
    };

    // obstacles and terminal payoff
    let h = model.lower_obstacle(t, &x).as_f64();
    let hp = model.upper_obstacle(t, &x).as_f64();
    part.order.offer(h - hp, pt);
    part.h_abs = h.abs();
    part.hp_abs = hp.abs();
    let g = model.terminal(&x).as_f64();
    let h_t = model.lower_obstacle(horizon, &x).as_f64();
    let hp_t = model.upper_obstacle(horizon, &x).as_f64();
    part.sandwich.offer((h_t - g).max(g - hp_t), || ProbePoint {
        t: horizon.as_f64(),
        x: x_f.to_vec(),
        ..Default::default()
    });
    part.g_abs = g.abs();
    part.h_abs = part.h_abs.max(h_t.abs());
    part.hp_abs = part.hp_abs.max(hp_t.abs());

    let partner: Vec<S> = to_s(partner_f);
    let dx = norm(
        &x_f.iter()
            .zip(partner_f)
            .map(|(a, b)| a - b)
            .collect::<Vec<_>>(),
    );
    let ys = linspace(-spec.y_range, spec.y_range, 3);
    let zs = linspace(-spec.z_range, spec.z_range, 5);
    let eps = spec.fd_step;
    let eps_s = S::lit(eps);
    let two_eps = 2.0 * eps;
    let mut b0 = vec![S::zero(); n];
    let mut b1 = vec![S::zero(); n];
    let mut s0 = vec![S::zero(); n * d];
    let mut s1 = vec![S::zero(); n * d];
    let z_count = zs.len().pow(d as u32);
    let mut z = vec![S::zero(); d];
    let mut xs = x.clone();

    for &a in model.controls_a.points() {
        for &bc in model.controls_b.points() {
            let ctl = |p: ProbePoint| ProbePoint {
                alpha: Some(a.as_f64()),
                beta: Some(bc.as_f64()),
                ..p
            };
            if dx > 0.0 {
                model.drift(t, &x, a, bc, &mut b0);
                model.drift(t, &partner, a, bc, &mut b1);
                model.diffusion(t, &x, a, bc, &mut s0);
                model.diffusion(t, &partner, a, bc, &mut s1);
                let db: Vec<f64> = b0.iter().zip(&b1).map(|(p, q)| (*p - *q).as_f64()).collect();
                let ds: Vec<f64> = s0.iter().zip(&s1).map(|(p, q)| (*p - *q).as_f64()).collect();
                let ratio = (norm(&db) + norm(&ds)) / dx;
                part.lipschitz.offer(ratio, || ctl(pt()));
            }
            for &y_f in &ys {
                let y = S::lit(y_f);
                for zflat in 0..z_count {
                    let mut idx = zflat;
                    for zk in z.iter_mut() {
                        *zk = S::lit(zs[idx % zs.len()]);
                        idx /= zs.len();
                    }
                    let zf = to_f(&z);
                    let z2 = zf.iter().map(|v| v * v).sum::<f64>();
                    let f = model.generator(t, &x, y, &z, a, bc).as_f64();
                    let at = || {
                        ctl(ProbePoint {
                            y: Some(y_f),
                            z: Some(zf.clone()),
                            ..pt()
                        })
                    };
                    part.growth_ratio.offer(f.abs() / (1.0 + z2), at);

                    // derivative bounds by central differences
                    let mut grad_x = 0.0;
                    for k in 0..n {
                        let orig = xs[k];
                        xs[k] = orig + eps_s;
                        let fp = model.generator(t, &xs, y, &z, a, bc).as_f64();
                        xs[k] = orig - eps_s;
                        let fm = model.generator(t, &xs, y, &z, a, bc).as_f64();
                        xs[k] = orig;
                        let dfx = (fp - fm) / two_eps;
                        grad_x += dfx * dfx;
                    }
                    let mut grad_z = 0.0;
                    for k in 0..d {
                        let orig = z[k];
                        z[k] = orig + eps_s;
                        let fp = model.generator(t, &x, y, &z, a, bc).as_f64();
                        z[k] = orig - eps_s;
                        let fm = model.generator(t, &x, y, &z, a, bc).as_f64();
                        z[k] = orig;
                        let dfz = (fp - fm) / two_eps;
                        grad_z += dfz * dfz;
                    }
                    let fyp = model.generator(t, &x, y + eps_s, &z, a, bc).as_f64();
                    let fym = model.generator(t, &x, y - eps_s, &z, a, bc).as_f64();
                    let dfy = (fyp - fym) / two_eps;
                    let lhs = f.abs() + grad_x.sqrt() + grad_z.sqrt();
                    part.h3_ratio.offer(lhs / (1.0 + z2), at);
                    part.h3_dy_ratio.offer(dfy / (1.0 + z2), at);
                }
            }
        }
    }
    part
}

/// Checks every assumption on the probe set.
///
/// Returns `Err` for the hard data violations (obstacle order, terminal
/// sandwich, quadratic growth); Lipschitz and derivative-bound failures are
/// reported as failed checks in the returned report.
pub fn validate_model<S: Real>(
    model: &GameModel<S>,
    spec: &ProbeSpec,
) -> Result<ModelValidationReport, ModelError> {
    if spec.grid_points + spec.n_random == 0 {
        return Err(ModelError::Invalid("probe set is empty".into()));
    }
    let points = probe_points(model, spec);
    let partials: Vec<Partial> = points
        .par_iter()
        .map(|(t, x, partner)| probe_one(model, spec, *t, x, partner))
        .collect();
    let mut all = Partial::new();
    for p in partials {
        all.merge(p);
    }

    let tol = 1e-12;
    let c = model.quad_growth_c.as_f64();
    let cl = model.lipschitz_cl.as_f64();
    let c3 = model.h3_constant().as_f64();
    let checks = vec![
        AssumptionCheck {
            assumption: Assumption::H1Lipschitz,
            passed: all.lipschitz.at.is_none() || all.lipschitz.value <= cl * (1.0 + 1e-9),
            measured: all.lipschitz.value.max(0.0),
            declared: Some(cl),
            witness: all.lipschitz.at.clone(),
        },
        AssumptionCheck {
            assumption: Assumption::H2ObstacleOrder,
            passed: all.order.value < 0.0,
            measured: all.order.value,
            declared: None,
            witness: all.order.at.clone(),
        },
        AssumptionCheck {
            assumption: Assumption::H2TerminalSandwich,
            passed: all.sandwich.value <= 0.0,
            measured: all.sandwich.value,
            declared: None,
            witness: all.sandwich.at.clone(),
        },
        AssumptionCheck {
            assumption: Assumption::H2QuadraticGrowth,
            passed: all.growth_ratio.value <= c * (1.0 + tol),
            measured: all.growth_ratio.value,
            declared: Some(c),
            witness: all.growth_ratio.at.clone(),
        },
        AssumptionCheck {
            assumption: Assumption::H3Derivatives,
            passed: all.h3_ratio.value <= c3 * (1.0 + 1e-6) && all.h3_dy_ratio.value <= c3 * (1.0 + 1e-6),
            measured: all.h3_ratio.value.max(all.h3_dy_ratio.value),
            declared: Some(c3),
            witness: if all.h3_ratio.value >= all.h3_dy_ratio.value {
                all.h3_ratio.at.clone()
            } else {
                all.h3_dy_ratio.at.clone()
            },
        },
    ];

    let report = ModelValidationReport {
        model: model.name.clone(),
        bounds: DataBounds {
            terminal: all.g_abs,
            lower: all.h_abs,
            upper: all.hp_abs,
        },
        probe_count: points.len(),
        min_obstacle_gap: -all.order.value,
        measured_growth_c: all.growth_ratio.value,
        measured_lipschitz_cl: all.lipschitz.value.max(0.0),
        checks,
    };

    if !report.check(Assumption::H2ObstacleOrder).unwrap().passed {
        let w = all.order.at.unwrap_or_default();
        let xs: Vec<S> = to_s(&w.x);
        let t = S::lit(w.t);
        return Err(ModelError::ObstacleOrderViolation {
            lower: model.lower_obstacle(t, &xs).as_f64(),
            upper: model.upper_obstacle(t, &xs).as_f64(),
            witness: w,
        });
    }
    if !report.check(Assumption::H2TerminalSandwich).unwrap().passed {
        let w = all.sandwich.at.unwrap_or_default();
        let xs: Vec<S> = to_s(&w.x);
        return Err(ModelError::TerminalSandwichViolation {
            g: model.terminal(&xs).as_f64(),
            lower: model.lower_obstacle(model.horizon, &xs).as_f64(),
            upper: model.upper_obstacle(model.horizon, &xs).as_f64(),
            witness: w,
        });
    }
    if !report.check(Assumption::H2QuadraticGrowth).unwrap().passed {
        let w = all.growth_ratio.at.unwrap_or_default();
        let z2: f64 = w.z.as_ref().map(|z| z.iter().map(|v| v * v).sum()).unwrap_or(0.0);
        return Err(ModelError::GrowthViolation {
            value: all.growth_ratio.value * (1.0 + z2),
            bound: c * (1.0 + z2),
            witness: w,
        });
    }
    Ok(report)
}
