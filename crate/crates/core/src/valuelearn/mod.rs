//! Goal-conditioned value learning with optional gradient-norm regularizers.

mod batch;
mod config;
mod field;
mod hamiltonian;
mod losses;
mod metrics;
mod tabular;

pub use batch::Batch;
pub use config::{Regularizer, SpeedProfileKind, TrainConfig, CONFIG_FORMAT};
pub use field::{polyak_update, states_matrix, InputNorm, ValueField};
pub(crate) use field::activation_entry;
pub use hamiltonian::{
    hamiltonian, hamiltonian_bound_check, hamiltonian_upper_bound, isotropic_hamiltonian, BoundCounterexample,
    HamiltonianReport, BOUND_TOLERANCE,
};
pub use losses::{
    combined_value_step, eikonal_penalty, eikonal_penalty_with_speed, expectile_loss, expectile_weight, hjb_penalty,
    regularized_value_step, regularizer_penalty, speed, td_targets, td_value_loss, SpeedProfile, StepMetrics, TdLoss,
};
pub use losses::{apply_update, mean_row_norm};
pub use metrics::{read_metrics, MetricsWriter};
pub use tabular::{discrete_expectile, Outcome, TabularChain};
