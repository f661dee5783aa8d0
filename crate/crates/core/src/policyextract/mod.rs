//! Advantage-weighted policy extraction from a learned value field.

mod actor;
mod awr;
mod policy;
mod qfield;

pub use actor::{
    act, ordering_preserved, rescaling_argmax_check, scaled_value, Actor, HierarchicalActor, RescalingReport,
    FLAT_PREFIX, HIGH_PREFIX, LOW_PREFIX,
};
pub use awr::{
    awr_loss, awr_weight, awr_weights, flat_policy_loss, gciql_advantages, gcivl_advantages, high_advantages,
    high_policy_loss, low_advantages, low_policy_loss, FlatCritic, PolicyLoss,
};
pub use policy::{GaussianPolicy, PolicyOutput, LOG_STD_MAX, LOG_STD_MIN, LOG_STD_NAME};
pub use qfield::{iql_value_loss, q_loss, QField};
