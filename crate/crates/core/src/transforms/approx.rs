use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::TransformedModel;
use crate::error::SolverError;
use crate::grid::SpaceTimeGrid;
use crate::model::GeneratorFn;
use crate::scalar::Real;

/// Which side the approximating generators approach `f̃` from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// `f^p`, nonincreasing in `p`.
    Upper,
    /// `f_p`, nondecreasing in `p`.
    Lower,
}

impl Direction {
    fn sign<S: Real>(self) -> S {
        match self {
            Self::Upper => S::one(),
            Self::Lower => -S::one(),
        }
    }
}

/// `ρ_level(r)`: 1 on `[−level, level]`, 0 outside `[−(level+1), level+1]`,
/// joined by the C¹ smoothstep `1 − s²(3 − 2s)` in between.
#[inline]
pub fn cutoff<S: Real>(level: S, r: S) -> S {
    let s = r.abs() - level;
    if s <= S::zero() {
        S::one()
    } else if s >= S::one() {
        S::zero()
    } else {
        S::one() - s * s * (S::lit(3.0) - S::lit(2.0) * s)
    }
}

/// `f̃ = f · ρ_M(ln y / 2C)` for a one-dimensional state and noise, together
/// with the ranges the approximation chain samples over.
#[derive(Clone)]
pub struct CutoffGenerator<S> {
    f: GeneratorFn<S>,
    c: S,
    bound_m: S,
    horizon: S,
    controls: Vec<(S, S)>,
    /// Interval of `y` where the transformed solutions live.
    pub y_band: (S, S),
}

impl<S: std::fmt::Debug> std::fmt::Debug for CutoffGenerator<S> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CutoffGenerator")
            .field("c", &self.c)
            .field("bound_m", &self.bound_m)
            .field("y_band", &self.y_band)
            .finish_non_exhaustive()
    }
}

impl<S: Real> CutoffGenerator<S> {
    pub fn new(
        f: GeneratorFn<S>,
        c: S,
        bound_m: S,
        horizon: S,
        controls: Vec<(S, S)>,
        y_band: (S, S),
    ) -> Self {
        assert!(!controls.is_empty(), "at least one control pair");
        Self {
            f,
            c,
            bound_m,
            horizon,
            controls,
            y_band,
        }
    }

    /// Cutoff of a transformed model's generator. The `y` band is
    /// `[min h̄ / 2, 2 max h̄']` over `grid`.
    pub fn from_transformed(tm: &TransformedModel<S>, grid: &SpaceTimeGrid<S>) -> Result<Self, SolverError> {
        let m = &tm.model;
        if m.state_dim + 1 + m.noise_dim > 3 {
            return Err(SolverError::DimensionUnsupported(format!(
                "mollification runs over n + 1 + d ≤ 3 variables, model has n = {}, d = {}",
                m.state_dim, m.noise_dim
            )));
        }
        let mut lo = S::infinity();
        let mut hi = S::zero();
        for level in 0..grid.levels() {
            let t = grid.t(level);
            for node in 0..grid.nodes() {
                let x = grid.x(node);
                lo = lo.smaller(m.lower_1d(t, x));
                hi = hi.larger(m.upper_1d(t, x));
            }
        }
        let controls = (0..m.control_pairs()).map(|p| m.pair_controls(p)).collect();
        Ok(Self::new(
            tm.generator(),
            tm.c,
            tm.bound_m,
            m.horizon,
            controls,
            (lo / S::lit(2.0), S::lit(2.0) * hi),
        ))
    }

    #[inline]
    pub fn eval(&self, t: S, x: S, y: S, z: S, a: S, b: S) -> S {
        if !(y > S::zero()) {
            return S::zero();
        }
        let weight = cutoff(self.bound_m, y.ln() / (S::lit(2.0) * self.c));
        if weight == S::zero() {
            return S::zero();
        }
        (self.f)(t, std::slice::from_ref(&x), y, std::slice::from_ref(&z), a, b) * weight
    }

    /// Largest `y` where `f̃` can be nonzero.
    fn y_support(&self) -> S {
        (S::lit(2.0) * self.c * (self.bound_m + S::one())).exp()
    }
}

/// Discrete mollifier: the bump `exp(−1/(1−|a|²))` on the lattice
/// `(1/8)ℤ³ ∩ B(0, 1)`, weights normalized to sum to one. Scaled by `ε`,
/// the lattice width is `ε/8`.
#[derive(Debug, Clone)]
pub struct Mollifier<S> {
    offsets: Vec<[S; 3]>,
    weights: Vec<S>,
}

impl<S: Real> Mollifier<S> {
    pub fn new(resolution: usize) -> Self {
        let r = resolution as i64;
        let mut offsets = Vec::new();
        let mut raw = Vec::new();
        for i in -r..=r {
            for j in -r..=r {
                for k in -r..=r {
                    let a = [S::ratio(i, r), S::ratio(j, r), S::ratio(k, r)];
                    let norm2 = a[0] * a[0] + a[1] * a[1] + a[2] * a[2];
                    if norm2 < S::one() {
                        offsets.push(a);
                        raw.push((-S::one() / (S::one() - norm2)).exp());
                    }
                }
            }
        }
        let total = raw.iter().fold(S::zero(), |acc, &w| acc + w);
        let weights = raw.into_iter().map(|w| w / total).collect();
        Self { offsets, weights }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

impl<S: Real> Default for Mollifier<S> {
    fn default() -> Self {
        Self::new(8)
    }
}

/// Parameters of one member of the approximation chain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ApproximationSchedule<S> {
    pub p: usize,
    /// Mollifier radius `ε_p`.
    pub epsilon: S,
    /// Bound `C'` on `|f̃|` shared by the whole chain.
    pub c_prime: S,
    /// Largest sampled `|f̃ρ_p ⋆ θ_ε − f̃ρ_p|`.
    pub measured_error: S,
}

/// Shared pieces of every member of a chain.
#[derive(Debug)]
struct ChainCore<S> {
    source: CutoffGenerator<S>,
    kernel: Mollifier<S>,
    direction: Direction,
}

impl<S: Real> ChainCore<S> {
    /// `(f̃ ρ_p(|x|+|z|)) ⋆ θ_ε` at `(x, y, z)`.
    #[allow(clippy::too_many_arguments)]
    fn smoothed(&self, p: usize, eps: S, t: S, x: S, y: S, z: S, a: S, b: S) -> S {
        let level = S::from_count(p);
        let mut acc = S::zero();
        for (off, &w) in self.kernel.offsets.iter().zip(&self.kernel.weights) {
            let xs = x - eps * off[0];
            let zs = z - eps * off[2];
            let rho = cutoff(level, xs.abs() + zs.abs());
            if rho > S::zero() {
                acc = acc + w * rho * self.source.eval(t, xs, y - eps * off[1], zs, a, b);
            }
        }
        acc
    }

    fn unsmoothed(&self, p: usize, t: S, x: S, y: S, z: S, a: S, b: S) -> S {
        cutoff(S::from_count(p), x.abs() + z.abs()) * self.source.eval(t, x, y, z, a, b)
    }
}

/// One member `f^p` (or `f_p`) of the chain:
///
/// ```text
/// f^p = ρ_{p−1}(|x|+|z|) · (f̃ρ_p ⋆ θ_{ε_p} + 3/2^{p+2}) + (1 − ρ_{p−1}(|x|+|z|)) · (C' + 2^{−p})
/// ```
///
/// The lower member negates both shift and blend constant.
#[derive(Debug, Clone)]
pub struct LipschitzApproximation<S> {
    core: Arc<ChainCore<S>>,
    pub schedule: ApproximationSchedule<S>,
}

impl<S: Real> LipschitzApproximation<S> {
    pub fn direction(&self) -> Direction {
        self.core.direction
    }

    pub fn eval(&self, t: S, x: S, y: S, z: S, a: S, b: S) -> S {
        let p = self.schedule.p;
        let sign: S = self.core.direction.sign();
        let two_p = S::lit(2f64.powi(-(p as i32)));
        let blend_const = sign * (self.schedule.c_prime + two_p);
        let outer = cutoff(S::from_count(p - 1), x.abs() + z.abs());
        if outer == S::zero() {
            return blend_const;
        }
        let shift = sign * S::lit(3.0 * 2f64.powi(-(p as i32 + 2)));
        let inner = self
            .core
            .smoothed(p, self.schedule.epsilon, t, x, y, z, a, b)
            + shift;
        outer * inner + (S::one() - outer) * blend_const
    }

    /// `f̃` itself, the limit of the chain.
    pub fn limit(&self, t: S, x: S, y: S, z: S, a: S, b: S) -> S {
        self.core.source.eval(t, x, y, z, a, b)
    }

    pub fn as_generator(&self) -> GeneratorFn<S> {
        let me = self.clone();
        Arc::new(move |t, x, y, z, a, b| me.eval(t, x[0], y, z[0], a, b))
    }
}

/// Members `1..=p_max` of the upper or lower approximation chain.
#[derive(Debug, Clone)]
pub struct ApproximationChain<S> {
    core: Arc<ChainCore<S>>,
    schedules: Vec<ApproximationSchedule<S>>,
}

/// Random probe points `(t, x, y, z, pair)` for the mollification error.
const ERROR_SAMPLES: usize = 256;
const BOUND_SAMPLES: usize = 4096;
const MAX_HALVINGS: usize = 24;

impl<S: Real> ApproximationChain<S> {
    /// Builds the chain, choosing each `ε_p` by halving (starting from
    /// `min(ε_{p−1}/2, 1/4)`) until the sampled mollification error over
    /// `|x|, |z| ≤ p + 1` and the `y` band is at most a quarter of
    /// `2^{−(p+2)}`.
    pub fn build(source: CutoffGenerator<S>, p_max: usize, direction: Direction, seed: u64) -> Result<Self, SolverError> {
        if p_max == 0 {
            return Err(SolverError::InvalidInput("approximation index starts at 1".into()));
        }
        let core = Arc::new(ChainCore {
            source,
            kernel: Mollifier::default(),
            direction,
        });
        let c_prime = S::lit(1.25) * probe_sup(&core.source, S::from_count(p_max + 2), seed);
        let mut schedules = Vec::with_capacity(p_max);
        let mut eps = S::lit(0.5);
        for p in 1..=p_max {
            let target = S::lit(2f64.powi(-(p as i32 + 2)) / 4.0);
            let samples = error_samples(&core.source, p, seed.wrapping_add(p as u64));
            eps = eps / S::lit(2.0);
            let mut found = None;
            for _ in 0..MAX_HALVINGS {
                let err = samples
                    .par_iter()
                    .map(|&(t, x, y, z, a, b)| {
                        (core.smoothed(p, eps, t, x, y, z, a, b) - core.unsmoothed(p, t, x, y, z, a, b)).abs()
                    })
                    .reduce(S::zero, |m, v| m.larger(v));
                if err <= target {
                    found = Some(err);
                    break;
                }
                eps = eps / S::lit(2.0);
            }
            let measured_error = found.ok_or_else(|| {
                SolverError::InvalidInput(format!("mollification error above 2^-{} at p = {p}", p + 2))
            })?;
            schedules.push(ApproximationSchedule {
                p,
                epsilon: eps,
                c_prime,
                measured_error,
            });
        }
        Ok(Self { core, schedules })
    }

    pub fn p_max(&self) -> usize {
        self.schedules.len()
    }

    pub fn schedule(&self, p: usize) -> &ApproximationSchedule<S> {
        &self.schedules[p - 1]
    }

    pub fn generator(&self, p: usize) -> LipschitzApproximation<S> {
        LipschitzApproximation {
            core: self.core.clone(),
            schedule: self.schedules[p - 1],
        }
    }

    pub fn source(&self) -> &CutoffGenerator<S> {
        &self.core.source
    }
}

/// Member `p` of a freshly built chain.
pub fn build_lipschitz_approximation<S: Real>(
    source: CutoffGenerator<S>,
    p: usize,
    direction: Direction,
) -> Result<LipschitzApproximation<S>, SolverError> {
    Ok(ApproximationChain::build(source, p, direction, 0)?.generator(p))
}

fn uniform<S: Real>(rng: &mut ChaCha8Rng, lo: S, hi: S) -> S {
    let u: f64 = rng.random();
    lo + (hi - lo) * S::lit(u)
}

fn error_samples<S: Real>(source: &CutoffGenerator<S>, p: usize, seed: u64) -> Vec<(S, S, S, S, S, S)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = S::from_count(p + 1);
    (0..ERROR_SAMPLES)
        .map(|_| {
            let t = uniform(&mut rng, S::zero(), source.horizon);
            let x = uniform(&mut rng, -r, r);
            let y = uniform(&mut rng, source.y_band.0, source.y_band.1);
            let z = uniform(&mut rng, -r, r);
            let (a, b) = source.controls[rng.random_range(0..source.controls.len())];
            (t, x, y, z, a, b)
        })
        .collect()
}

/// Sampled `sup |f̃|` over `|x|, |z| ≤ radius` and the support of `f̃` in `y`.
fn probe_sup<S: Real>(source: &CutoffGenerator<S>, radius: S, seed: u64) -> S {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let y_max = source.y_support();
    let mut sup = S::zero();
    for k in 0..BOUND_SAMPLES {
        let t = uniform(&mut rng, S::zero(), source.horizon);
        let x = uniform(&mut rng, -radius, radius);
        let z = uniform(&mut rng, -radius, radius);
        let y = match k % 4 {
            0 => source.y_band.1,
            1 => y_max,
            _ => uniform(&mut rng, S::zero(), y_max),
        };
        let (a, b) = source.controls[rng.random_range(0..source.controls.len())];
        sup = sup.larger(source.eval(t, x, y, z, a, b).abs());
    }
    sup
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::risk_sensitive_1d;
    use crate::transforms::transform_data;

    fn zero_source() -> CutoffGenerator<f64> {
        CutoffGenerator::new(Arc::new(|_, _, _, _, _, _| 0.0), 0.5, 1.0, 1.0, vec![(0.0, 0.0)], (0.5, 2.0))
    }

    #[test]
    fn cutoff_shape() {
        assert_eq!(cutoff(2.0, 1.5), 1.0);
        assert_eq!(cutoff(2.0, -2.0), 1.0);
        assert_eq!(cutoff(2.0, 3.0), 0.0);
        assert!((cutoff(2.0f64, 2.5) - 0.5).abs() < 1e-15);
        let mut prev = 1.0;
        for k in 0..=100 {
            let v = cutoff(2.0, 2.0 + k as f64 / 100.0);
            assert!((0.0..=1.0).contains(&v) && v <= prev);
            prev = v;
        }
    }

    #[test]
    fn mollifier_normalized() {
        let k = Mollifier::<f64>::default();
        let total: f64 = k.weights.iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert!(k.len() > 2000);
    }

    #[test]
    fn constant_source_keeps_shift() {
        let f2 = build_lipschitz_approximation(zero_source(), 2, Direction::Upper).unwrap();
        assert_eq!(f2.eval(0.3, 0.4, 1.0, 0.5, 0.0, 0.0), 0.1875);
        let lower = build_lipschitz_approximation(zero_source(), 2, Direction::Lower).unwrap();
        assert_eq!(lower.eval(0.3, 0.4, 1.0, 0.5, 0.0, 0.0), -0.1875);
    }

    #[test]
    fn epsilons_strictly_decrease() {
        let m = risk_sensitive_1d::<f64>();
        let grid = SpaceTimeGrid::for_model(&m, 30, 10).unwrap();
        let src = CutoffGenerator::from_transformed(&transform_data(&m, &grid), &grid).unwrap();
        let chain = ApproximationChain::build(src, 5, Direction::Upper, 1).unwrap();
        for p in 2..=5 {
            assert!(chain.schedule(p).epsilon < chain.schedule(p - 1).epsilon);
            assert!(chain.schedule(p).measured_error <= 2f64.powi(-(p as i32 + 2)));
        }
    }

    #[test]
    fn members_are_ordered_on_samples() {
        let m = risk_sensitive_1d::<f64>();
        let grid = SpaceTimeGrid::for_model(&m, 30, 10).unwrap();
        let tm = transform_data(&m, &grid);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for direction in [Direction::Upper, Direction::Lower] {
            let src = CutoffGenerator::from_transformed(&tm, &grid).unwrap();
            let (y_lo, y_hi) = src.y_band;
            let chain = ApproximationChain::build(src, 11, direction, 3).unwrap();
            let sign = direction.sign::<f64>();
            for _ in 0..1000 {
                let (t, x, z) = (rng.random_range(0.0..1.0), rng.random_range(-12.0..12.0), rng.random_range(-12.0..12.0));
                let y = rng.random_range(y_lo..y_hi);
                let mut prev = chain.generator(1).eval(t, x, y, z, 0.0, 0.0);
                for p in 2..=11 {
                    let cur = chain.generator(p).eval(t, x, y, z, 0.0, 0.0);
                    assert!(sign * (cur - prev) <= 1e-12, "{direction:?} p = {p} at ({t}, {x}, {y}, {z})");
                    prev = cur;
                }
            }
        }
    }

    #[test]
    fn rejects_two_dimensional_models() {
        let m = crate::model::GameModel::<f64>::builder("2d")
            .dims(2, 1)
            .domain(vec![(-1.0, 1.0), (-1.0, 1.0)])
            .terminal(|_| 0.0)
            .obstacles(|_, _| -1.0, |_, _| 1.0)
            .build()
            .unwrap();
        let grid = SpaceTimeGrid::new(-1.0, 1.0, 8, 2, 1.0).unwrap();
        let tm = transform_data(&m, &grid);
        assert!(matches!(
            CutoffGenerator::from_transformed(&tm, &grid),
            Err(SolverError::DimensionUnsupported(_))
        ));
    }
}
