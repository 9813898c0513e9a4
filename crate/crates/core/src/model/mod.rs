//! Game model: controlled dynamics, BSDE generator, terminal payoff,
//! obstacles, control grids and the declared growth constants.

mod builtin;
mod validate;

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::scalar::Real;

pub use builtin::{
    builtin_models, heat_no_control, nonseparable, ramsey_1d, risk_sensitive, risk_sensitive_1d,
    separable_isaacs, ModelRegistry, RiskSensitiveParams,
};
pub use validate::{
    validate_model, Assumption, AssumptionCheck, DataBounds, ModelValidationReport, ProbePoint,
    ProbeSpec,
};

/// `b(t, x, α, β)` written into an `n`-vector.
pub type DriftFn<S> = Arc<dyn Fn(S, &[S], S, S, &mut [S]) + Send + Sync>;
/// `σ(t, x, α, β)` written row-major into an `n × d` buffer.
pub type DiffusionFn<S> = Arc<dyn Fn(S, &[S], S, S, &mut [S]) + Send + Sync>;
/// `F(t, x, y, z, α, β)`.
pub type GeneratorFn<S> = Arc<dyn Fn(S, &[S], S, &[S], S, S) -> S + Send + Sync>;
/// `g(x)`.
pub type TerminalFn<S> = Arc<dyn Fn(&[S]) -> S + Send + Sync>;
/// `h(t, x)` or `h'(t, x)`.
pub type ObstacleFn<S> = Arc<dyn Fn(S, &[S]) -> S + Send + Sync>;
/// `φ(t, x, α, β)` of a risk-sensitive generator `F = φ + ½|z|²`.
pub type RunningCostFn<S> = Arc<dyn Fn(S, &[S], S, S) -> S + Send + Sync>;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("no built-in model named `{0}`")]
    NotFound(String),
    #[error("invalid model: {0}")]
    Invalid(String),
    #[error("obstacle order violated (H2): h = {lower} >= h' = {upper} at {witness}")]
    ObstacleOrderViolation {
        witness: ProbePoint,
        lower: f64,
        upper: f64,
    },
    #[error("terminal payoff outside obstacles (H2): g = {g} not in [{lower}, {upper}] at {witness}")]
    TerminalSandwichViolation {
        witness: ProbePoint,
        g: f64,
        lower: f64,
        upper: f64,
    },
    #[error("quadratic growth violated (H2): |F| = {value} > C(1+|z|^2) = {bound} at {witness}")]
    GrowthViolation {
        witness: ProbePoint,
        value: f64,
        bound: f64,
    },
}

/// Finite grid standing in for a compact control set.
///
/// When built from an interval the grid can be regenerated at a different
/// resolution with [`ControlGrid::refined`].
#[derive(Debug, Clone, PartialEq)]
pub struct ControlGrid<S> {
    points: Vec<S>,
    interval: Option<(S, S)>,
}

impl<S: Real> ControlGrid<S> {
    pub fn singleton(value: S) -> Self {
        Self {
            points: vec![value],
            interval: None,
        }
    }

    pub fn from_points(points: Vec<S>) -> Self {
        Self {
            points,
            interval: None,
        }
    }

    /// `count` equispaced points on `[lo, hi]` (the midpoint when `count == 1`).
    pub fn uniform(lo: S, hi: S, count: usize) -> Self {
        let points = if count <= 1 {
            vec![(lo + hi) / S::lit(2.0)]
        } else {
            let step = (hi - lo) / S::from_count(count - 1);
            (0..count)
                .map(|i| {
                    if i + 1 == count {
                        hi
                    } else {
                        lo + step * S::from_count(i)
                    }
                })
                .collect()
        };
        Self {
            points,
            interval: Some((lo, hi)),
        }
    }

    /// Same interval, `count` points. Point lists without an interval are
    /// returned unchanged.
    pub fn refined(&self, count: usize) -> Self {
        match self.interval {
            Some((lo, hi)) => Self::uniform(lo, hi, count),
            None => self.clone(),
        }
    }

    pub fn points(&self) -> &[S] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn interval(&self) -> Option<(S, S)> {
        self.interval
    }
}

/// The mixed zero-sum game: dynamics, generator, data and constants.
///
/// Callbacks must be pure; solvers evaluate them concurrently.
#[derive(Clone)]
pub struct GameModel<S: Real> {
    pub name: String,
    pub horizon: S,
    pub state_dim: usize,
    pub noise_dim: usize,
    pub controls_a: ControlGrid<S>,
    pub controls_b: ControlGrid<S>,
    /// `C` in `|F| <= C(1+|z|^2)`; also the exponential-transform constant.
    pub quad_growth_c: S,
    /// `C_L` bounding the x-Lipschitz ratio of `b` and `σ`.
    pub lipschitz_cl: S,
    /// Constant for the derivative bounds on `F`; defaults to `quad_growth_c`.
    pub h3_constant: Option<S>,
    /// Truncated domain, one interval per state coordinate.
    pub domain: Vec<(S, S)>,
    /// Reference starting point for reports.
    pub x0: Vec<S>,
    drift: DriftFn<S>,
    diffusion: DiffusionFn<S>,
    generator: GeneratorFn<S>,
    terminal: TerminalFn<S>,
    lower: ObstacleFn<S>,
    upper: ObstacleFn<S>,
    running_cost: Option<RunningCostFn<S>>,
}

impl<S: Real> fmt::Debug for GameModel<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GameModel")
            .field("name", &self.name)
            .field("horizon", &self.horizon)
            .field("state_dim", &self.state_dim)
            .field("noise_dim", &self.noise_dim)
            .field("controls_a", &self.controls_a)
            .field("controls_b", &self.controls_b)
            .field("quad_growth_c", &self.quad_growth_c)
            .field("lipschitz_cl", &self.lipschitz_cl)
            .field("domain", &self.domain)
            .field("risk_sensitive", &self.running_cost.is_some())
            .finish()
    }
}

impl<S: Real> GameModel<S> {
    pub fn builder(name: impl Into<String>) -> GameModelBuilder<S> {
        GameModelBuilder::new(name)
    }

    #[inline]
    pub fn drift(&self, t: S, x: &[S], a: S, b: S, out: &mut [S]) {
        (self.drift)(t, x, a, b, out)
    }

    #[inline]
    pub fn diffusion(&self, t: S, x: &[S], a: S, b: S, out: &mut [S]) {
        (self.diffusion)(t, x, a, b, out)
    }

    #[inline]
    pub fn generator(&self, t: S, x: &[S], y: S, z: &[S], a: S, b: S) -> S {
        (self.generator)(t, x, y, z, a, b)
    }

    #[inline]
    pub fn terminal(&self, x: &[S]) -> S {
        (self.terminal)(x)
    }

    #[inline]
    pub fn lower_obstacle(&self, t: S, x: &[S]) -> S {
        (self.lower)(t, x)
    }

    #[inline]
    pub fn upper_obstacle(&self, t: S, x: &[S]) -> S {
        (self.upper)(t, x)
    }

    /// `φ` when the generator has the risk-sensitive form `φ + ½|z|²`.
    pub fn running_cost(&self) -> Option<&RunningCostFn<S>> {
        self.running_cost.as_ref()
    }

    #[inline]
    pub fn running_cost_at(&self, t: S, x: &[S], a: S, b: S) -> Option<S> {
        self.running_cost.as_ref().map(|phi| phi(t, x, a, b))
    }

    pub fn is_risk_sensitive(&self) -> bool {
        self.running_cost.is_some()
    }

    pub fn h3_constant(&self) -> S {
        self.h3_constant.unwrap_or(self.quad_growth_c)
    }

    /// Number of `(α, β)` pairs; pair index is `ia * |B| + ib`.
    pub fn control_pairs(&self) -> usize {
        self.controls_a.len() * self.controls_b.len()
    }

    #[inline]
    pub fn pair_controls(&self, pair: usize) -> (S, S) {
        let nb = self.controls_b.len();
        (
            self.controls_a.points()[pair / nb],
            self.controls_b.points()[pair % nb],
        )
    }

    /// Scalar drift for `n = 1`.
    #[inline]
    pub fn drift_1d(&self, t: S, x: S, a: S, b: S) -> S {
        let mut out = [S::zero()];
        (self.drift)(t, std::slice::from_ref(&x), a, b, &mut out);
        out[0]
    }

    /// Scalar diffusion for `n = d = 1`.
    #[inline]
    pub fn sigma_1d(&self, t: S, x: S, a: S, b: S) -> S {
        let mut out = [S::zero()];
        (self.diffusion)(t, std::slice::from_ref(&x), a, b, &mut out);
        out[0]
    }

    #[inline]
    pub fn generator_1d(&self, t: S, x: S, y: S, z: S, a: S, b: S) -> S {
        (self.generator)(t, std::slice::from_ref(&x), y, std::slice::from_ref(&z), a, b)
    }

    #[inline]
    pub fn terminal_1d(&self, x: S) -> S {
        (self.terminal)(std::slice::from_ref(&x))
    }

    #[inline]
    pub fn lower_1d(&self, t: S, x: S) -> S {
        (self.lower)(t, std::slice::from_ref(&x))
    }

    #[inline]
    pub fn upper_1d(&self, t: S, x: S) -> S {
        (self.upper)(t, std::slice::from_ref(&x))
    }

    /// Copy with control grids regenerated at the given resolutions.
    pub fn with_control_points(&self, count_a: usize, count_b: usize) -> Self {
        let mut m = self.clone();
        m.controls_a = self.controls_a.refined(count_a);
        m.controls_b = self.controls_b.refined(count_b);
        m
    }

    /// Copy with a different generator (running cost cleared unless the new
    /// generator is installed through [`GameModel::with_running_cost`]).
    pub fn with_generator(&self, generator: GeneratorFn<S>) -> Self {
        let mut m = self.clone();
        m.generator = generator;
        m.running_cost = None;
        m
    }

    /// Copy whose generator is `φ + ½|z|²`.
    pub fn with_running_cost(&self, phi: RunningCostFn<S>) -> Self {
        let mut m = self.clone();
        m.generator = risk_sensitive_generator(phi.clone());
        m.running_cost = Some(phi);
        m
    }

    /// Copy with replaced terminal payoff and obstacles.
    pub fn with_data(
        &self,
        terminal: TerminalFn<S>,
        lower: ObstacleFn<S>,
        upper: ObstacleFn<S>,
    ) -> Self {
        let mut m = self.clone();
        m.terminal = terminal;
        m.lower = lower;
        m.upper = upper;
        m
    }

    pub(crate) fn generator_fn(&self) -> &GeneratorFn<S> {
        &self.generator
    }
    pub(crate) fn terminal_fn(&self) -> &TerminalFn<S> {
        &self.terminal
    }
    pub(crate) fn lower_fn(&self) -> &ObstacleFn<S> {
        &self.lower
    }
    pub(crate) fn upper_fn(&self) -> &ObstacleFn<S> {
        &self.upper
    }
}

fn risk_sensitive_generator<S: Real>(phi: RunningCostFn<S>) -> GeneratorFn<S> {
    let half = S::lit(0.5);
    Arc::new(move |t, x, _y, z, a, b| {
        let z2 = z.iter().fold(S::zero(), |acc, &zi| acc + zi * zi);
        phi(t, x, a, b) + half * z2
    })
}

/// Incremental construction of a [`GameModel`].
pub struct GameModelBuilder<S: Real> {
    name: String,
    horizon: S,
    state_dim: usize,
    noise_dim: usize,
    controls_a: ControlGrid<S>,
    controls_b: ControlGrid<S>,
    quad_growth_c: S,
    lipschitz_cl: S,
    h3_constant: Option<S>,
    domain: Vec<(S, S)>,
    x0: Option<Vec<S>>,
    drift: Option<DriftFn<S>>,
    diffusion: Option<DiffusionFn<S>>,
    generator: Option<GeneratorFn<S>>,
    terminal: Option<TerminalFn<S>>,
    lower: Option<ObstacleFn<S>>,
    upper: Option<ObstacleFn<S>>,
    running_cost: Option<RunningCostFn<S>>,
}

impl<S: Real> GameModelBuilder<S> {
    fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            horizon: S::one(),
            state_dim: 1,
            noise_dim: 1,
            controls_a: ControlGrid::singleton(S::zero()),
            controls_b: ControlGrid::singleton(S::zero()),
            quad_growth_c: S::one(),
            lipschitz_cl: S::one(),
            h3_constant: None,
            domain: Vec::new(),
            x0: None,
            drift: None,
            diffusion: None,
            generator: None,
            terminal: None,
            lower: None,
            upper: None,
            running_cost: None,
        }
    }

    pub fn horizon(mut self, t: S) -> Self {
        self.horizon = t;
        self
    }

    pub fn dims(mut self, state_dim: usize, noise_dim: usize) -> Self {
        self.state_dim = state_dim;
        self.noise_dim = noise_dim;
        self
    }

    pub fn controls(mut self, a: ControlGrid<S>, b: ControlGrid<S>) -> Self {
        self.controls_a = a;
        self.controls_b = b;
        self
    }

    pub fn constants(mut self, quad_growth_c: S, lipschitz_cl: S) -> Self {
        self.quad_growth_c = quad_growth_c;
        self.lipschitz_cl = lipschitz_cl;
        self
    }

    pub fn h3_constant(mut self, c: S) -> Self {
        self.h3_constant = Some(c);
        self
    }

    pub fn domain(mut self, domain: Vec<(S, S)>) -> Self {
        self.domain = domain;
        self
    }

    pub fn domain_1d(self, lo: S, hi: S) -> Self {
        self.domain(vec![(lo, hi)])
    }

    pub fn x0(mut self, x0: Vec<S>) -> Self {
        self.x0 = Some(x0);
        self
    }

    pub fn drift(mut self, f: impl Fn(S, &[S], S, S, &mut [S]) + Send + Sync + 'static) -> Self {
        self.drift = Some(Arc::new(f));
        self
    }

    pub fn drift_1d(self, f: impl Fn(S, S, S, S) -> S + Send + Sync + 'static) -> Self {
        self.drift(move |t, x, a, b, out| out[0] = f(t, x[0], a, b))
    }

    pub fn diffusion(
        mut self,
        f: impl Fn(S, &[S], S, S, &mut [S]) + Send + Sync + 'static,
    ) -> Self {
        self.diffusion = Some(Arc::new(f));
        self
    }

    pub fn diffusion_1d(self, f: impl Fn(S, S, S, S) -> S + Send + Sync + 'static) -> Self {
        self.diffusion(move |t, x, a, b, out| out[0] = f(t, x[0], a, b))
    }

    pub fn generator(
        mut self,
        f: impl Fn(S, &[S], S, &[S], S, S) -> S + Send + Sync + 'static,
    ) -> Self {
        self.generator = Some(Arc::new(f));
        self.running_cost = None;
        self
    }

    pub fn generator_1d(self, f: impl Fn(S, S, S, S, S, S) -> S + Send + Sync + 'static) -> Self {
        self.generator(move |t, x, y, z, a, b| f(t, x[0], y, z[0], a, b))
    }

    /// Risk-sensitive generator `F = φ + ½|z|²`.
    pub fn running_cost(mut self, phi: impl Fn(S, &[S], S, S) -> S + Send + Sync + 'static) -> Self {
        let phi: RunningCostFn<S> = Arc::new(phi);
        self.generator = Some(risk_sensitive_generator(phi.clone()));
        self.running_cost = Some(phi);
        self
    }

    pub fn running_cost_1d(self, phi: impl Fn(S, S, S, S) -> S + Send + Sync + 'static) -> Self {
        self.running_cost(move |t, x, a, b| phi(t, x[0], a, b))
    }

    pub fn terminal(mut self, g: impl Fn(&[S]) -> S + Send + Sync + 'static) -> Self {
        self.terminal = Some(Arc::new(g));
        self
    }

    pub fn terminal_1d(self, g: impl Fn(S) -> S + Send + Sync + 'static) -> Self {
        self.terminal(move |x| g(x[0]))
    }

    pub fn obstacles(
        mut self,
        lower: impl Fn(S, &[S]) -> S + Send + Sync + 'static,
        upper: impl Fn(S, &[S]) -> S + Send + Sync + 'static,
    ) -> Self {
        self.lower = Some(Arc::new(lower));
        self.upper = Some(Arc::new(upper));
        self
    }

    pub fn obstacles_1d(
        self,
        lower: impl Fn(S, S) -> S + Send + Sync + 'static,
        upper: impl Fn(S, S) -> S + Send + Sync + 'static,
    ) -> Self {
        self.obstacles(move |t, x| lower(t, x[0]), move |t, x| upper(t, x[0]))
    }

    pub fn build(self) -> Result<GameModel<S>, ModelError> {
        let invalid = |msg: &str| ModelError::Invalid(format!("{}: {msg}", self.name));
        if self.state_dim == 0 || self.noise_dim == 0 {
            return Err(invalid("state and noise dimensions must be >= 1"));
        }
        if !(self.horizon > S::zero()) {
            return Err(invalid("horizon must be positive"));
        }
        if !(self.quad_growth_c > S::zero()) || !(self.lipschitz_cl > S::zero()) {
            return Err(invalid("growth and Lipschitz constants must be positive"));
        }
        if self.controls_a.is_empty() || self.controls_b.is_empty() {
            return Err(invalid("control grids must be nonempty"));
        }
        if self.domain.len() != self.state_dim {
            return Err(invalid("domain must have one interval per state coordinate"));
        }
        if self.domain.iter().any(|&(lo, hi)| !(hi > lo)) {
            return Err(invalid("domain intervals must be nondegenerate"));
        }
        let x0 = match self.x0 {
            Some(x0) if x0.len() == self.state_dim => x0,
            Some(_) => return Err(invalid("x0 has the wrong dimension")),
            None => self
                .domain
                .iter()
                .map(|&(lo, hi)| (lo + hi) / S::lit(2.0))
                .collect(),
        };
        let n = self.state_dim;
        let nd = self.state_dim * self.noise_dim;
        Ok(GameModel {
            drift: self
                .drift
                .unwrap_or_else(|| Arc::new(move |_, _, _, _, out: &mut [S]| out[..n].fill(S::zero()))),
            diffusion: self
                .diffusion
                .unwrap_or_else(|| Arc::new(move |_, _, _, _, out: &mut [S]| out[..nd].fill(S::zero()))),
            generator: self
                .generator
                .unwrap_or_else(|| Arc::new(|_, _, _, _, _, _| S::zero())),
            terminal: self.terminal.ok_or_else(|| invalid("terminal payoff missing"))?,
            lower: self.lower.ok_or_else(|| invalid("lower obstacle missing"))?,
            upper: self.upper.ok_or_else(|| invalid("upper obstacle missing"))?,
            running_cost: self.running_cost,
            name: self.name,
            horizon: self.horizon,
            state_dim: self.state_dim,
            noise_dim: self.noise_dim,
            controls_a: self.controls_a,
            controls_b: self.controls_b,
            quad_growth_c: self.quad_growth_c,
            lipschitz_cl: self.lipschitz_cl,
            h3_constant: self.h3_constant,
            domain: self.domain,
            x0,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_grid_endpoints_exact() {
        let g = ControlGrid::<f64>::uniform(-0.5, 0.5, 5);
        assert_eq!(g.points(), &[-0.5, -0.25, 0.0, 0.25, 0.5]);
        assert_eq!(g.refined(3).points(), &[-0.5, 0.0, 0.5]);
        assert_eq!(g.refined(1).points(), &[0.0]);
        let fixed = ControlGrid::from_points(vec![1.0, 2.0]);
        assert_eq!(fixed.refined(7), fixed);
    }

    #[test]
    fn risk_sensitive_generator_adds_half_square() {
        let m = GameModel::<f64>::builder("rs")
            .domain_1d(-1.0, 1.0)
            .running_cost_1d(|_, _, _, _| 0.0)
            .terminal_1d(|_| 0.0)
            .obstacles_1d(|_, _| -1.0, |_, _| 1.0)
            .build()
            .unwrap();
        assert_eq!(m.generator_1d(0.0, 0.0, 7.0, 3.0, 0.0, 0.0), 4.5);
        assert!(m.is_risk_sensitive());
        let plain = m.with_generator(Arc::new(|_, _, _, _, _, _| 1.0));
        assert!(!plain.is_risk_sensitive());
    }

    #[test]
    fn builder_rejects_missing_data() {
        let err = GameModel::<f64>::builder("bad")
            .domain_1d(0.0, 1.0)
            .terminal_1d(|_| 0.0)
            .build()
            .unwrap_err();
        assert!(matches!(err, ModelError::Invalid(_)));
        let err = GameModel::<f64>::builder("bad")
            .horizon(0.0)
            .domain_1d(0.0, 1.0)
            .terminal_1d(|_| 0.0)
            .obstacles_1d(|_, _| -1.0, |_, _| 1.0)
            .build()
            .unwrap_err();
        assert!(matches!(err, ModelError::Invalid(_)));
    }

    #[test]
    fn pair_indexing() {
        let m = GameModel::<f64>::builder("pairs")
            .domain_1d(0.0, 1.0)
            .controls(
                ControlGrid::from_points(vec![1.0, 2.0]),
                ControlGrid::from_points(vec![10.0, 20.0, 30.0]),
            )
            .terminal_1d(|_| 0.0)
            .obstacles_1d(|_, _| -1.0, |_, _| 1.0)
            .build()
            .unwrap();
        assert_eq!(m.control_pairs(), 6);
        assert_eq!(m.pair_controls(4), (2.0, 20.0));
    }
}
