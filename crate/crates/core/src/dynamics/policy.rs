use std::fmt;
use std::sync::Arc;

use crate::grid::SpaceTimeGrid;
use crate::scalar::Field;

/// Feedback map `(t, x) → pair index`.
pub type FeedbackFn<S> = Arc<dyn Fn(S, &[S]) -> usize + Send + Sync>;

/// How the players pick their controls. Every variant yields a pair index
/// `ia * |B| + ib` into the model's control grids.
#[derive(Clone)]
pub enum ControlPolicy<S> {
    Constant(usize),
    /// One pair per `(level, node)` of `grid`, stored level-major; states off
    /// the lattice use the nearest level and node.
    Table {
        grid: SpaceTimeGrid<S>,
        pairs: Vec<usize>,
    },
    Feedback(FeedbackFn<S>),
}

impl<S: Field> ControlPolicy<S> {
    pub fn feedback(f: impl Fn(S, &[S]) -> usize + Send + Sync + 'static) -> Self {
        Self::Feedback(Arc::new(f))
    }

    pub fn table(grid: SpaceTimeGrid<S>, pairs: Vec<usize>) -> Self {
        assert_eq!(
            pairs.len(),
            grid.levels() * grid.nodes(),
            "policy table must cover every (level, node)"
        );
        Self::Table { grid, pairs }
    }

    pub fn pair(&self, t: S, x: &[S]) -> usize {
        match self {
            Self::Constant(p) => *p,
            Self::Table { grid, pairs } => {
                let level = grid.nearest_level(t);
                let node = grid.nearest_node(x[0]);
                pairs[level * grid.nodes() + node]
            }
            Self::Feedback(f) => f(t, x),
        }
    }
}

impl<S: fmt::Debug> fmt::Debug for ControlPolicy<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Constant(p) => f.debug_tuple("Constant").field(p).finish(),
            Self::Table { grid, pairs } => f
                .debug_struct("Table")
                .field("grid", grid)
                .field("pairs", &pairs.len())
                .finish(),
            Self::Feedback(_) => f.write_str("Feedback(..)"),
        }
    }
}
