//! Built-in example models.

use std::collections::BTreeMap;

use super::{ControlGrid, GameModel, ModelError};
use crate::scalar::Real;

impl<S: Real> Default for ModelRegistry<S> {
    fn default() -> Self {
        Self {
            models: BTreeMap::new(),
        }
    }
}

/// Named collection of models.
#[derive(Debug, Clone)]
pub struct ModelRegistry<S: Real> {
    models: BTreeMap<String, GameModel<S>>,
}

impl<S: Real> ModelRegistry<S> {
    pub fn insert(&mut self, model: GameModel<S>) {
        self.models.insert(model.name.clone(), model);
    }

    pub fn get(&self, name: &str) -> Result<&GameModel<S>, ModelError> {
        self.models
            .get(name)
            .ok_or_else(|| ModelError::NotFound(name.to_string()))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.models.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = &GameModel<S>> {
        self.models.values()
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }
}

/// Registry with every built-in model.
pub fn builtin_models<S: Real>() -> ModelRegistry<S> {
    let mut reg = ModelRegistry::default();
    reg.insert(heat_no_control());
    reg.insert(risk_sensitive_1d());
    reg.insert(separable_isaacs());
    reg.insert(nonseparable());
    reg.insert(ramsey_1d());
    reg
}

/// `dX = dW`, `F = 0`, `g = cos x`, obstacles `∓2` on `[-2π, 2π]`.
///
/// The value is `e^{-(T-t)/2} cos x`.
pub fn heat_no_control<S: Real>() -> GameModel<S> {
    let two_pi = S::TAU();
    GameModel::builder("heat_no_control")
        .horizon(S::one())
        .domain_1d(-two_pi, two_pi)
        .x0(vec![S::zero()])
        .constants(S::one(), S::one())
        .drift_1d(|_, _, _, _| S::zero())
        .diffusion_1d(|_, _, _, _| S::one())
        .generator_1d(|_, _, _, _, _, _| S::zero())
        .terminal_1d(|x| x.cos())
        .obstacles_1d(|_, _| S::lit(-2.0), |_, _| S::lit(2.0))
        .build()
        .expect("heat_no_control is well formed")
}

/// Parameters of the risk-sensitive family
///
/// * `dX = (α + β) dt + σ dW` with `α, β` on `[-control_bound, control_bound]`;
/// * `F = φ + ½|z|²`, `φ = phi_const + phi_amp·sin x + control_cost·(β² − α²)`;
/// * `g = g_shift + g_amp·tanh x`;
/// * `h = lower_base − lower_bend·x²/(1+x²)`, `h' = upper_base + upper_bend·x²/(1+x²)`.
///
/// The growth constant is `½`, which turns the exponential transform into a
/// linear equation.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RiskSensitiveParams {
    pub name: String,
    pub horizon: f64,
    pub domain: (f64, f64),
    pub sigma: f64,
    pub control_bound: f64,
    pub control_points: usize,
    pub phi_const: f64,
    pub phi_amp: f64,
    pub control_cost: f64,
    pub g_shift: f64,
    pub g_amp: f64,
    pub lower_base: f64,
    pub lower_bend: f64,
    pub upper_base: f64,
    pub upper_bend: f64,
}

impl Default for RiskSensitiveParams {
    fn default() -> Self {
        Self {
            name: "risk_sensitive_1d".into(),
            horizon: 1.0,
            domain: (-3.0, 3.0),
            sigma: 0.5,
            control_bound: 0.5,
            control_points: 5,
            phi_const: 0.0,
            phi_amp: 0.25,
            control_cost: 0.2,
            g_shift: 0.0,
            g_amp: 0.3,
            lower_base: -0.25,
            lower_bend: 0.1,
            upper_base: 0.25,
            upper_bend: 0.1,
        }
    }
}

impl RiskSensitiveParams {
    /// Control-free member with constant running cost and constant data.
    pub fn constant(name: &str, phi: f64, g: f64, lower: f64, upper: f64) -> Self {
        Self {
            name: name.into(),
            control_bound: 0.0,
            control_points: 1,
            phi_const: phi,
            phi_amp: 0.0,
            control_cost: 0.0,
            g_shift: g,
            g_amp: 0.0,
            lower_base: lower,
            lower_bend: 0.0,
            upper_base: upper,
            upper_bend: 0.0,
            ..Self::default()
        }
    }
}

pub fn risk_sensitive<S: Real>(p: RiskSensitiveParams) -> GameModel<S> {
    let grid = if p.control_points <= 1 || p.control_bound == 0.0 {
        ControlGrid::singleton(S::zero())
    } else {
        ControlGrid::uniform(
            S::lit(-p.control_bound),
            S::lit(p.control_bound),
            p.control_points,
        )
    };
    let sigma = S::lit(p.sigma);
    let (phi_c, phi_a, cost) = (S::lit(p.phi_const), S::lit(p.phi_amp), S::lit(p.control_cost));
    let (g_shift, g_amp) = (S::lit(p.g_shift), S::lit(p.g_amp));
    let (lb, lbend, ub, ubend) = (
        S::lit(p.lower_base),
        S::lit(p.lower_bend),
        S::lit(p.upper_base),
        S::lit(p.upper_bend),
    );
    let bend = |x: S| x * x / (S::one() + x * x);
    GameModel::builder(p.name.clone())
        .horizon(S::lit(p.horizon))
        .domain_1d(S::lit(p.domain.0), S::lit(p.domain.1))
        .x0(vec![S::zero()])
        .controls(grid.clone(), grid)
        .constants(S::lit(0.5), S::one())
        .h3_constant(S::lit(2.0))
        .drift_1d(|_, _, a, b| a + b)
        .diffusion_1d(move |_, _, _, _| sigma)
        .running_cost_1d(move |_, x, a, b| phi_c + phi_a * x.sin() + cost * (b * b - a * a))
        .terminal_1d(move |x| g_shift + g_amp * x.tanh())
        .obstacles_1d(move |_, x| lb - lbend * bend(x), move |_, x| ub + ubend * bend(x))
        .build()
        .expect("risk-sensitive parameters are well formed")
}

/// Risk-sensitive game with binding obstacles on both sides.
pub fn risk_sensitive_1d<S: Real>() -> GameModel<S> {
    risk_sensitive(RiskSensitiveParams::default())
}

/// `b = α(1 + ¼cos x) + β`, control-free `σ` and `F`: the Isaacs condition
/// holds on every control grid.
pub fn separable_isaacs<S: Real>() -> GameModel<S> {
    let grid = ControlGrid::uniform(S::lit(-0.5), S::lit(0.5), 5);
    let quarter = S::lit(0.25);
    let (c02, c01, c04, c045) = (S::lit(0.2), S::lit(0.1), S::lit(0.4), S::lit(0.45));
    GameModel::builder("separable_isaacs")
        .horizon(S::one())
        .domain_1d(-S::PI(), S::PI())
        .x0(vec![S::zero()])
        .controls(grid.clone(), grid)
        .constants(S::lit(0.5), S::lit(0.5))
        .drift_1d(move |_, x, a, b| a * (S::one() + quarter * x.cos()) + b)
        .diffusion_1d(|_, _, _, _| S::lit(0.6))
        .generator_1d(move |_, x, _, z, _, _| c02 * x.cos() + c01 * z)
        .terminal_1d(move |x| c04 * x.sin())
        .obstacles_1d(move |_, _| -c045, move |_, _| c045)
        .build()
        .expect("separable_isaacs is well formed")
}

/// `b = α·β` with `α, β ∈ {-1, 1}`: the lower and upper Hamiltonians differ
/// wherever the gradient does not vanish.
pub fn nonseparable<S: Real>() -> GameModel<S> {
    let grid = ControlGrid::uniform(-S::one(), S::one(), 2);
    let (c02, c03, c05) = (S::lit(0.2), S::lit(0.3), S::lit(0.5));
    GameModel::builder("nonseparable")
        .horizon(S::one())
        .domain_1d(-S::PI(), S::PI())
        .x0(vec![S::zero()])
        .controls(grid.clone(), grid)
        .constants(S::lit(0.5), S::one())
        .drift_1d(|_, _, a, b| a * b)
        .diffusion_1d(move |_, _, _, _| c05)
        .generator_1d(move |_, x, _, _, _, _| c02 * x.sin())
        .terminal_1d(move |x| c03 * x.cos())
        .obstacles_1d(move |_, _| -c05, move |_, _| c05)
        .build()
        .expect("nonseparable is well formed")
}

/// Capital `dX = X(r − c)dt + Xσ dW` on `[0.2, 3]`, consumption rate `c = α`,
/// utility `ln(1 + cX)` of consumption, terminal utility `½ln(1 + X)`.
pub fn ramsey_1d<S: Real>() -> GameModel<S> {
    let (r, vol) = (S::lit(0.05), S::lit(0.2));
    let half = S::lit(0.5);
    GameModel::builder("ramsey_1d")
        .horizon(S::one())
        .domain_1d(S::lit(0.2), S::lit(3.0))
        .x0(vec![S::one()])
        .controls(
            ControlGrid::uniform(S::zero(), S::lit(0.2), 5),
            ControlGrid::singleton(S::zero()),
        )
        .constants(S::lit(0.5), S::lit(0.5))
        .h3_constant(S::one())
        .drift_1d(move |_, x, c, _| x * (r - c))
        .diffusion_1d(move |_, x, _, _| vol * x)
        .generator_1d(|_, x, _, _, c, _| (c * x).ln_1p())
        .terminal_1d(move |x| half * x.ln_1p())
        .obstacles_1d(move |_, _| -half, |_, _| S::lit(1.5))
        .build()
        .expect("ramsey_1d is well formed")
}
