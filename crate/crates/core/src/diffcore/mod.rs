//! Dense networks with reverse-mode gradients, input gradients and the
//! mixed second derivatives needed to train through gradient penalties.

pub mod adam;
pub mod checkpoint;
pub mod dual;
pub mod mlp;
pub mod params;
pub mod tape;

pub use adam::{adam_step, AdamState};
pub use dual::{grad_params_through_input_grad, Dual, InputGradPenalty};
pub use mlp::{concat_inputs, forward, grad_input, grad_input_batch, mlp_on_tape, Mlp};
pub use params::{init_params, Activation, MlpSpec, ParamEntry, ParameterSet};
pub use tape::{grad_params, Gradients, ParamVars, Tape, Var};

/// Offset inside the square root of every norm, keeping its gradient bounded at zero.
pub const NORM_EPS: f64 = 1e-12;
