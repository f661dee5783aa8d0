//! Success-rate evaluation and grid exports of learned values.

mod controller;
mod export;
mod rollout;

pub use controller::{ActorController, Controller, OracleController, RandomController};
pub use export::{contour_map, grad_norm_map, GridMap};
pub use rollout::{
    default_max_steps, evaluate, mean_std, sample_eval_goals, summarize_seeds, worker_count, EvalReport, GoalResult,
    SeedSummary, THREADS_ENV,
};
