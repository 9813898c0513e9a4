use crate::error::SolverError;
use crate::model::GameModel;
use crate::scalar::{Field, Real};

/// Uniform lattice `x_j = x_min + j·dx`, `j = 0..=nx`, with time levels
/// `t_n = n·dt`, `n = 0..=nt`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpaceTimeGrid<S> {
    pub x_min: S,
    pub x_max: S,
    pub nx: usize,
    pub nt: usize,
    pub horizon: S,
}

impl<S: Field> SpaceTimeGrid<S> {
    pub fn new(x_min: S, x_max: S, nx: usize, nt: usize, horizon: S) -> Result<Self, SolverError> {
        if nx < 4 {
            return Err(SolverError::InvalidInput(format!("nx = {nx} < 4")));
        }
        if nt < 1 {
            return Err(SolverError::InvalidInput("nt = 0".into()));
        }
        if !(x_max > x_min) || !(horizon > S::zero()) {
            return Err(SolverError::InvalidInput(format!(
                "empty grid [{x_min}, {x_max}] x [0, {horizon}]"
            )));
        }
        Ok(Self {
            x_min,
            x_max,
            nx,
            nt,
            horizon,
        })
    }

    /// Grid spanning the first coordinate of the model's domain.
    pub fn for_model(model: &GameModel<S>, nx: usize, nt: usize) -> Result<Self, SolverError>
    where
        S: Real,
    {
        let (lo, hi) = model.domain[0];
        Self::new(lo, hi, nx, nt, model.horizon)
    }

    pub fn with_nt(&self, nt: usize) -> Self {
        Self { nt, ..*self }
    }

    pub fn nodes(&self) -> usize {
        self.nx + 1
    }

    pub fn levels(&self) -> usize {
        self.nt + 1
    }

    pub fn dx(&self) -> S {
        (self.x_max - self.x_min) / S::from_count(self.nx)
    }

    pub fn dt(&self) -> S {
        self.horizon / S::from_count(self.nt)
    }

    #[inline]
    pub fn x(&self, node: usize) -> S {
        self.x_min + (self.x_max - self.x_min) * S::from_count(node) / S::from_count(self.nx)
    }

    #[inline]
    pub fn t(&self, level: usize) -> S {
        self.horizon * S::from_count(level) / S::from_count(self.nt)
    }

    pub fn xs(&self) -> Vec<S> {
        (0..self.nodes()).map(|j| self.x(j)).collect()
    }

    /// Closest node to `x`, clamped to the lattice.
    pub fn nearest_node(&self, x: S) -> usize {
        let r = ((x - self.x_min) / self.dx()).as_f64().round();
        if r.is_nan() || r <= 0.0 {
            0
        } else {
            (r as usize).min(self.nx)
        }
    }

    /// Closest level to `t`, clamped to `0..=nt`.
    pub fn nearest_level(&self, t: S) -> usize {
        let r = (t / self.dt()).as_f64().round();
        if r.is_nan() || r <= 0.0 {
            0
        } else {
            (r as usize).min(self.nt)
        }
    }

    /// Same lattice over another scalar type.
    pub fn convert<T: Field>(&self) -> SpaceTimeGrid<T> {
        SpaceTimeGrid {
            x_min: T::lit(self.x_min.as_f64()),
            x_max: T::lit(self.x_max.as_f64()),
            nx: self.nx,
            nt: self.nt,
            horizon: T::lit(self.horizon.as_f64()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spacing_and_nearest() {
        let g = SpaceTimeGrid::new(-1.0f64, 1.0, 20, 10, 1.0).unwrap();
        assert!((g.dx() - 0.1).abs() < 1e-15);
        assert_eq!(g.x(20), 1.0);
        assert_eq!(g.t(10), 1.0);
        assert_eq!(g.nearest_node(0.04), 10);
        assert_eq!(g.nearest_node(5.0), 20);
        assert_eq!(g.nearest_level(0.349), 3);
        assert!(SpaceTimeGrid::new(0.0, 1.0, 3, 1, 1.0).is_err());
    }
}
