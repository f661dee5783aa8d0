use ndarray::{Array1, ArrayView2};

use super::policy::GaussianPolicy;
use super::qfield::QField;
use crate::diffcore::ParameterSet;
use crate::error::Result;
use crate::valuelearn::{Batch, ValueField};

/// `min(exp(β·adv), clip_max)`.
pub fn awr_weight(advantage: f64, beta: f64, clip_max: f64) -> f64 {
    (beta * advantage).exp().min(clip_max)
}

pub fn awr_weights(advantages: &Array1<f64>, beta: f64, clip_max: f64) -> Array1<f64> {
    advantages.mapv(|a| awr_weight(a, beta, clip_max))
}

#[derive(Clone, Debug)]
pub struct PolicyLoss {
    pub loss: f64,
    pub grads: ParameterSet,
    pub mean_advantage: f64,
    pub mean_weight: f64,
}

/// Weighted likelihood of raw targets `y` under `policy(x, cond)`.
#[allow(clippy::too_many_arguments)]
pub fn awr_loss(
    policy: &GaussianPolicy,
    x: ArrayView2<f64>,
    cond: ArrayView2<f64>,
    y: ArrayView2<f64>,
    advantages: &Array1<f64>,
    beta: f64,
    clip_max: f64,
) -> Result<PolicyLoss> {
    let w = awr_weights(advantages, beta, clip_max);
    let (loss, grads) = policy.weighted_nll(x, cond, y, &w)?;
    Ok(PolicyLoss {
        loss,
        grads,
        mean_advantage: advantages.mean().unwrap_or(0.0),
        mean_weight: w.mean().unwrap_or(0.0),
    })
}

/// `V(s_{t+k}, g) − V(s_t, g)`.
pub fn high_advantages(value: &ValueField, batch: &Batch) -> Result<Array1<f64>> {
    Ok(value.values(batch.s_k.view(), batch.g.view())? - value.values(batch.s.view(), batch.g.view())?)
}

/// `V(s_{t+1}, s_{t+k}) − V(s_t, s_{t+k})`.
pub fn low_advantages(value: &ValueField, batch: &Batch) -> Result<Array1<f64>> {
    Ok(value.values(batch.s_next.view(), batch.s_k.view())? - value.values(batch.s.view(), batch.s_k.view())?)
}

/// `V(s', g) − V(s, g)`.
pub fn gcivl_advantages(value: &ValueField, batch: &Batch) -> Result<Array1<f64>> {
    Ok(value.values(batch.s_next.view(), batch.g.view())? - value.values(batch.s.view(), batch.g.view())?)
}

/// `Q̄(s, a, g) − V(s, g)`.
pub fn gciql_advantages(q: &QField, value: &ValueField, batch: &Batch) -> Result<Array1<f64>> {
    Ok(q.target_values(batch.s.view(), batch.a.view(), batch.g.view())? - value.values(batch.s.view(), batch.g.view())?)
}

/// Subgoal regression toward `s_{t+k}` conditioned on `(s_t, g)`.
pub fn high_policy_loss(high: &GaussianPolicy, value: &ValueField, batch: &Batch, beta: f64, clip_max: f64) -> Result<PolicyLoss> {
    let adv = high_advantages(value, batch)?;
    awr_loss(high, batch.s.view(), batch.g.view(), batch.s_k.view(), &adv, beta, clip_max)
}

/// Action regression toward `a_t` conditioned on `(s_t, s_{t+k})`.
pub fn low_policy_loss(low: &GaussianPolicy, value: &ValueField, batch: &Batch, beta: f64, clip_max: f64) -> Result<PolicyLoss> {
    let adv = low_advantages(value, batch)?;
    awr_loss(low, batch.s.view(), batch.s_k.view(), batch.a.view(), &adv, beta, clip_max)
}

/// Which advantage a flat actor is trained on.
#[derive(Clone, Copy, Debug)]
pub enum FlatCritic<'a> {
    Value(&'a ValueField),
    Q(&'a QField, &'a ValueField),
}

/// Action regression toward `a` conditioned on `(s, g)`.
pub fn flat_policy_loss(policy: &GaussianPolicy, critic: FlatCritic<'_>, batch: &Batch, beta: f64, clip_max: f64) -> Result<PolicyLoss> {
    let adv = match critic {
        FlatCritic::Value(v) => gcivl_advantages(v, batch)?,
        FlatCritic::Q(q, v) => gciql_advantages(q, v, batch)?,
    };
    awr_loss(policy, batch.s.view(), batch.g.view(), batch.a.view(), &adv, beta, clip_max)
}
