use ndarray::{Array1, Array2, ArrayView2, Axis};

use super::batch::Batch;
use super::config::{Regularizer, SpeedProfileKind, TrainConfig};
use super::field::ValueField;
use crate::diffcore::{
    concat_inputs, grad_params, grad_params_through_input_grad, mlp_on_tape, AdamState, InputGradPenalty,
    ParameterSet, Tape, Var, NORM_EPS,
};
use crate::error::{Error, Result};
use crate::mazeworld::{MazeSpec, State};

/// `|ι − 1(x<0)|·x²`.
pub fn expectile_loss(x: f64, iota: f64) -> f64 {
    expectile_weight(x, iota) * x * x
}

pub fn expectile_weight(x: f64, iota: f64) -> f64 {
    if x < 0.0 {
        1.0 - iota
    } else {
        iota
    }
}

/// Obstacle-aware speed `S(s)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpeedProfile {
    pub kind: SpeedProfileKind,
    pub d_min: f64,
    pub d_max: f64,
    pub lambda_decay: f64,
    pub s_min: f64,
}

impl SpeedProfile {
    pub fn new(kind: SpeedProfileKind, d_min: f64, d_max: f64, lambda_decay: f64, s_min: f64) -> Result<Self> {
        let p = Self {
            kind,
            d_min,
            d_max,
            lambda_decay,
            s_min,
        };
        if !(d_min > 0.0 && d_min < d_max && d_max.is_finite()) {
            return Err(Error::Config(format!("need 0 < d_min < d_max, got {d_min}, {d_max}")));
        }
        if !(s_min > 0.0 && s_min <= 1.0) {
            return Err(Error::Config(format!("s_min {s_min} must lie in (0, 1]")));
        }
        Ok(p)
    }

    /// `d_min = 0.1·cell`, `d_max = cell`.
    pub fn for_maze(config: &TrainConfig, maze: &MazeSpec) -> Result<Self> {
        Self::new(
            config.speed_profile,
            0.1 * maze.cell_size,
            maze.cell_size,
            config.lambda_decay,
            config.s_min,
        )
    }

    pub fn unit() -> Self {
        Self {
            kind: SpeedProfileKind::Unit,
            d_min: 0.1,
            d_max: 1.0,
            lambda_decay: 1.0,
            s_min: 0.1,
        }
    }

    /// Speed at obstacle distance `d`.
    pub fn eval(&self, d: f64) -> f64 {
        match self.kind {
            SpeedProfileKind::Unit => 1.0,
            SpeedProfileKind::Exp => {
                let d = d.clamp(self.d_min, self.d_max);
                let x = (self.d_max - d) / (self.d_max - self.d_min);
                self.s_min + (1.0 - self.s_min) * (-self.lambda_decay * x).exp()
            }
            SpeedProfileKind::Lin => (d / self.d_max).clamp(self.d_min / self.d_max, 1.0),
        }
    }
}

pub fn speed(s: State, profile: &SpeedProfile, maze: &MazeSpec) -> f64 {
    match profile.kind {
        SpeedProfileKind::Unit => 1.0,
        _ => profile.eval(maze.nearest_obstacle_distance(s)),
    }
}

fn speeds(s: ArrayView2<f64>, profile: &SpeedProfile, maze: &MazeSpec) -> Array2<f64> {
    let v: Array1<f64> = s.rows().into_iter().map(|r| speed([r[0], r[1]], profile, maze)).collect();
    v.insert_axis(Axis(1))
}

/// TD loss value, parameter gradient and mean online value on the batch.
#[derive(Clone, Debug)]
pub struct TdLoss {
    pub loss: f64,
    pub grads: ParameterSet,
    pub mean_value: f64,
}

/// Targets `R(s,g) + γ(1−done)·V̄(s',g)`.
pub fn td_targets(value: &ValueField, batch: &Batch, gamma: f64) -> Result<Array1<f64>> {
    let next = value.target_values(batch.s_next.view(), batch.g.view())?;
    Ok(&batch.reward + &(gamma * (1.0 - &batch.done) * next))
}

/// Mean expectile loss of the TD residual; the target branch is data.
pub fn td_value_loss(value: &ValueField, batch: &Batch, config: &TrainConfig) -> Result<TdLoss> {
    let targets = td_targets(value, batch, config.gamma)?.insert_axis(Axis(1));
    let x = concat_inputs(value.norm.apply(batch.s.view()).view(), value.norm.apply(batch.g.view()).view())?;
    let spec = value.spec.clone();
    let iota = config.iota;
    let mut mean_value = 0.0;
    let (loss, grads) = grad_params(&value.online, |t, vars| {
        let xv = t.constant(x);
        let v = mlp_on_tape(t, vars, &spec, xv)?;
        mean_value = t.value(v).mean().unwrap_or(0.0);
        let tv = t.constant(targets);
        let stopped = t.stop_gradient(tv);
        let d = t.sub(stopped, v)?;
        let w = t.value(d).mapv(|r| expectile_weight(r, iota));
        let wv = t.constant(w);
        let d2 = t.square(d);
        let l = t.mul(wv, d2)?;
        Ok(t.mean(l))
    })?;
    Ok(TdLoss {
        loss,
        grads,
        mean_value,
    })
}

/// `sqrt(Σ (u/scale)² + ε)` as an `n x 1` node.
fn grad_norm_node(t: &mut Tape, u: Var, scale: f64) -> Var {
    let raw = t.scale(u, 1.0 / scale);
    let sq = t.square(raw);
    let ss = t.sum_cols(sq);
    let ss = t.offset(ss, NORM_EPS);
    t.sqrt(ss)
}

/// `mean (‖∇ₛV‖·S − 1)²` with `S` given per row.
pub fn eikonal_penalty_with_speed(value: &ValueField, s: ArrayView2<f64>, g: ArrayView2<f64>, speed: Array2<f64>) -> Result<InputGradPenalty> {
    let scale = value.norm.scale;
    let mut out = grad_params_through_input_grad(
        &value.online,
        &value.spec,
        value.norm.apply(s).view(),
        value.norm.apply(g).view(),
        |t, u| {
            let n = grad_norm_node(t, u, scale);
            let sp = t.constant(speed);
            let ns = t.mul(n, sp)?;
            let r = t.offset(ns, -1.0);
            let r2 = t.square(r);
            Ok(t.mean(r2))
        },
    )?;
    out.input_grads /= scale;
    Ok(out)
}

/// `mean (‖∇ₛV(s,g)‖·S(s) − 1)²`; `S(s)` is data, gradients reach `θ_V` only.
pub fn eikonal_penalty(value: &ValueField, s: ArrayView2<f64>, g: ArrayView2<f64>, profile: &SpeedProfile, maze: &MazeSpec) -> Result<InputGradPenalty> {
    eikonal_penalty_with_speed(value, s, g, speeds(s, profile, maze))
}

/// `mean (∇ₛV(s,g)·(s'−s) − 1)²`.
pub fn hjb_penalty(value: &ValueField, s: ArrayView2<f64>, s_next: ArrayView2<f64>, g: ArrayView2<f64>) -> Result<InputGradPenalty> {
    let scale = value.norm.scale;
    let disp = &s_next - &s;
    let mut out = grad_params_through_input_grad(
        &value.online,
        &value.spec,
        value.norm.apply(s).view(),
        value.norm.apply(g).view(),
        |t, u| {
            let raw = t.scale(u, 1.0 / scale);
            let dv = t.constant(disp);
            let prod = t.mul(raw, dv)?;
            let dot = t.sum_cols(prod);
            let r = t.offset(dot, -1.0);
            let r2 = t.square(r);
            Ok(t.mean(r2))
        },
    )?;
    out.input_grads /= scale;
    Ok(out)
}

/// The configured regularizer on a batch, or `None` when it is off or weighted zero.
pub fn regularizer_penalty(value: &ValueField, batch: &Batch, config: &TrainConfig, profile: &SpeedProfile, maze: &MazeSpec) -> Result<Option<InputGradPenalty>> {
    if config.lambda_eik == 0.0 {
        return Ok(None);
    }
    match config.regularizer {
        Regularizer::None => Ok(None),
        Regularizer::Eikonal => eikonal_penalty(value, batch.s.view(), batch.g.view(), profile, maze).map(Some),
        Regularizer::Hjb => hjb_penalty(value, batch.s.view(), batch.s_next.view(), batch.g.view()).map(Some),
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StepMetrics {
    pub step: usize,
    pub td_loss: f64,
    pub penalty: f64,
    /// Mean `‖∇ₛV‖` over the batch; only filled when diagnostics were requested
    /// or a penalty was computed.
    pub mean_grad_norm: Option<f64>,
    pub mean_value: f64,
}

pub fn mean_row_norm(g: &Array2<f64>) -> f64 {
    let n = g.nrows().max(1) as f64;
    g.rows().into_iter().map(|r| r[0].hypot(r[1])).sum::<f64>() / n
}

/// One Adam step on `L_TD + λ·penalty` followed by the target update.
pub fn combined_value_step(
    value: &mut ValueField,
    opt: &mut AdamState,
    batch: &Batch,
    config: &TrainConfig,
    profile: &SpeedProfile,
    maze: &MazeSpec,
    diagnostics: bool,
) -> Result<StepMetrics> {
    let td = td_value_loss(value, batch, config)?;
    regularized_value_step(value, opt, td, batch, config, profile, maze, diagnostics)
}

/// Adds the configured penalty to an already computed value loss, then steps.
#[allow(clippy::too_many_arguments)]
pub fn regularized_value_step(
    value: &mut ValueField,
    opt: &mut AdamState,
    td: TdLoss,
    batch: &Batch,
    config: &TrainConfig,
    profile: &SpeedProfile,
    maze: &MazeSpec,
    diagnostics: bool,
) -> Result<StepMetrics> {
    let pen = regularizer_penalty(value, batch, config, profile, maze)?;
    let mut grads = td.grads;
    let mut metrics = StepMetrics {
        step: opt.step + 1,
        td_loss: td.loss,
        penalty: 0.0,
        mean_grad_norm: None,
        mean_value: td.mean_value,
    };
    if let Some(p) = &pen {
        grads.axpy(config.lambda_eik, &p.grads)?;
        metrics.penalty = p.value;
        metrics.mean_grad_norm = Some(mean_row_norm(&p.input_grads));
    } else if diagnostics {
        metrics.mean_grad_norm = Some(mean_row_norm(&value.state_grads(batch.s.view(), batch.g.view())?));
    }
    apply_update(value, opt, &grads, config.lr_v, config.tau)?;
    Ok(metrics)
}

pub fn apply_update(value: &mut ValueField, opt: &mut AdamState, grads: &ParameterSet, lr: f64, tau: f64) -> Result<()> {
    opt.step(&mut value.online, grads, lr)?;
    value.polyak_update(tau)
}
