//! Exponential change of unknown `ȳ = e^{2Cy}` and the monotone Lipschitz
//! approximations of the transformed generator.

mod approx;
mod exponential;

pub use approx::{
    build_lipschitz_approximation, cutoff, ApproximationChain, ApproximationSchedule,
    CutoffGenerator, Direction, LipschitzApproximation, Mollifier,
};
pub use exponential::{
    exp_transform_generator, inverse_transform_value, transform_data, TransformedModel,
};
