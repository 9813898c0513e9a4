use std::sync::Arc;

use crate::error::SolverError;
use crate::grid::SpaceTimeGrid;
use crate::model::{GameModel, GeneratorFn, RunningCostFn};
use crate::scalar::Real;

/// Generator of `ȳ = e^{2Cy}`:
///
/// ```text
/// f(t, x, y, z, α, β) = 2Cy [F(t, x, ln y / 2C, z / 2Cy, α, β) − |z|² / 4Cy²]   for y > 0
/// f = 0                                                                        for y ≤ 0
/// ```
pub fn exp_transform_generator<S: Real>(generator: GeneratorFn<S>, c: S) -> GeneratorFn<S> {
    let two_c = S::lit(2.0) * c;
    let four_c = S::lit(4.0) * c;
    Arc::new(move |t, x, y, z, a, b| {
        if !(y > S::zero()) {
            return S::zero();
        }
        let scale = two_c * y;
        let z2 = z.iter().fold(S::zero(), |acc, &v| acc + v * v);
        let value = if z.len() == 1 {
            generator(t, x, y.ln() / two_c, &[z[0] / scale], a, b)
        } else {
            let v: Vec<S> = z.iter().map(|&zi| zi / scale).collect();
            generator(t, x, y.ln() / two_c, &v, a, b)
        };
        scale * (value - z2 / (four_c * y * y))
    })
}

/// Closed form of [`exp_transform_generator`] for `F = φ + ½|z|²`:
/// `f = 2Cyφ + (1/4C − 1/2)|z|²/y`, so the quadratic term cancels exactly
/// when `C = ½`.
fn risk_sensitive_transform<S: Real>(phi: RunningCostFn<S>, c: S) -> GeneratorFn<S> {
    let two_c = S::lit(2.0) * c;
    let quad = S::one() / (S::lit(4.0) * c) - S::lit(0.5);
    let cancels = quad == S::zero();
    Arc::new(move |t, x, y, z, a, b| {
        if !(y > S::zero()) {
            return S::zero();
        }
        let linear = two_c * y * phi(t, x, a, b);
        if cancels {
            linear
        } else {
            let z2 = z.iter().fold(S::zero(), |acc, &v| acc + v * v);
            linear + quad * z2 / y
        }
    })
}

/// `ln(ȳ) / 2C`.
pub fn inverse_transform_value<S: Real>(y_bar: S, c: S) -> Result<S, SolverError> {
    if !(y_bar > S::zero()) {
        return Err(SolverError::NonpositiveInput(y_bar.as_f64()));
    }
    Ok(y_bar.ln() / (S::lit(2.0) * c))
}

/// The transformed problem: generator `f`, data `ḡ = e^{2Cg}`,
/// `h̄ = e^{2Ch}`, `h̄' = e^{2Ch'}`, and `M = max{inf(1/h̄), sup h̄'}`.
#[derive(Debug, Clone)]
pub struct TransformedModel<S: Real> {
    pub c: S,
    /// `M`, probed on the grid it was built for.
    pub bound_m: S,
    /// Same dynamics and controls as the source model with the transformed
    /// generator and data.
    pub model: GameModel<S>,
}

impl<S: Real> TransformedModel<S> {
    pub fn generator(&self) -> GeneratorFn<S> {
        self.model.generator_fn().clone()
    }

    pub fn inverse(&self, y_bar: S) -> Result<S, SolverError> {
        inverse_transform_value(y_bar, self.c)
    }
}

/// Transforms generator and data of `model` with its growth constant `C`,
/// probing `M` over the lattice and time levels of `grid`.
pub fn transform_data<S: Real>(model: &GameModel<S>, grid: &SpaceTimeGrid<S>) -> TransformedModel<S> {
    let c = model.quad_growth_c;
    let two_c = S::lit(2.0) * c;
    let generator = match model.running_cost() {
        Some(phi) => risk_sensitive_transform(phi.clone(), c),
        None => exp_transform_generator(model.generator_fn().clone(), c),
    };
    let (g, h, hp) = (
        model.terminal_fn().clone(),
        model.lower_fn().clone(),
        model.upper_fn().clone(),
    );
    let mut transformed = model
        .with_generator(generator)
        .with_data(
            Arc::new(move |x| (two_c * g(x)).exp()),
            Arc::new(move |t, x| (two_c * h(t, x)).exp()),
            Arc::new(move |t, x| (two_c * hp(t, x)).exp()),
        );
    transformed.name = format!("{}_exp", model.name);

    let mut inf_inv = S::infinity();
    let mut sup_upper = S::neg_infinity();
    for level in 0..grid.levels() {
        let t = grid.t(level);
        for node in 0..grid.nodes() {
            let x = [grid.x(node)];
            inf_inv = inf_inv.smaller(S::one() / transformed.lower_obstacle(t, &x));
            sup_upper = sup_upper.larger(transformed.upper_obstacle(t, &x));
        }
    }
    TransformedModel {
        c,
        bound_m: inf_inv.larger(sup_upper),
        model: transformed,
    }
}
