//! Eikonal-regularized offline goal-conditioned value learning on small 2-D mazes.

pub mod diffcore;
pub mod error;
pub mod evalkit;
pub mod mazeworld;
pub mod oracle;
pub mod policyextract;
pub mod valuelearn;

pub use error::{Error, Result};
