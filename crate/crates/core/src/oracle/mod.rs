//! Ground-truth travel-time fields: fast marching, a Dijkstra cross-check and
//! comparisons against learned values.

mod agreement;
mod field;
mod solvers;

pub use agreement::{field_value_agreement, greedy_action, ranks, spearman, AgreementReport};
pub use field::{DistanceField, FieldManifest, NodeGrid, Solver, FIELD_FORMAT};
pub use solvers::{dijkstra_reference, fast_march, SpeedGrid, DEFAULT_REFINE, DEFAULT_SUBDIVISION};

/// Optimal discounted return along a deterministic path of `n` unit-cost steps.
pub fn discounted_path_value(n: usize, gamma: f64) -> f64 {
    if gamma == 1.0 {
        -(n as f64)
    } else {
        -(1.0 - gamma.powi(n as i32)) / (1.0 - gamma)
    }
}
