use super::params::ParameterSet;
use crate::error::{Error, Result};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPS: f64 = 1e-8;

/// First and second moment estimates for one [`ParameterSet`].
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: ParameterSet,
    pub v: ParameterSet,
    /// Number of completed updates.
    pub step: usize,
}

impl AdamState {
    pub fn new(params: &ParameterSet) -> Self {
        Self {
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
        }
    }

    /// Applies one update in place and advances the step counter.
    pub fn step(&mut self, params: &mut ParameterSet, grads: &ParameterSet, lr: f64) -> Result<()> {
        let step = self.step + 1;
        adam_step(params, grads, &mut self.m, &mut self.v, lr, step)?;
        self.step = step;
        Ok(())
    }
}

/// Standard bias-corrected Adam update for update number `step` (1-based).
///
/// Gradients containing NaN or infinities abort before anything is touched.
pub fn adam_step(
    params: &mut ParameterSet,
    grads: &ParameterSet,
    m: &mut ParameterSet,
    v: &mut ParameterSet,
    lr: f64,
    step: usize,
) -> Result<()> {
    params.ensure_same_layout(grads)?;
    params.ensure_same_layout(m)?;
    params.ensure_same_layout(v)?;
    if step == 0 {
        return Err(Error::Config("adam step counter starts at 1".into()));
    }
    if let Some(e) = grads.entries().iter().find(|e| e.values().iter().any(|x| !x.is_finite())) {
        return Err(Error::NumericalAbort {
            step,
            detail: format!("non-finite gradient in `{}`", e.name()),
        });
    }
    let bc1 = 1.0 - BETA1.powi(step as i32);
    let bc2 = 1.0 - BETA2.powi(step as i32);
    for (((p, g), m), v) in params
        .entries_mut()
        .iter_mut()
        .zip(grads.entries())
        .zip(m.entries_mut().iter_mut())
        .zip(v.entries_mut().iter_mut())
    {
        for (((p, &g), m), v) in p
            .values_mut()
            .iter_mut()
            .zip(g.values())
            .zip(m.values_mut().iter_mut())
            .zip(v.values_mut().iter_mut())
        {
            *m = BETA1 * *m + (1.0 - BETA1) * g;
            *v = BETA2 * *v + (1.0 - BETA2) * g * g;
            let mhat = *m / bc1;
            let vhat = *v / bc2;
            *p -= lr * mhat / (vhat.sqrt() + EPS);
        }
    }
    if !params.all_finite() {
        return Err(Error::NumericalAbort {
            step,
            detail: "parameters became non-finite".into(),
        });
    }
    Ok(())
}
