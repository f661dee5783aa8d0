use ndarray::{Array1, Array2, ArrayView2};

use crate::diffcore::{grad_input_batch, init_params, Activation, Mlp, MlpSpec, ParameterSet};
use crate::error::{Error, Result};
use crate::mazeworld::{MazeSpec, State};

/// Isotropic affine map from maze coordinates to network inputs.
///
/// A single scale for both axes keeps gradient norms comparable:
/// `∇ₛ = ∇_input / scale`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InputNorm {
    pub center: [f64; 2],
    pub scale: f64,
}

impl InputNorm {
    pub fn identity() -> Self {
        Self {
            center: [0.0, 0.0],
            scale: 1.0,
        }
    }

    pub fn for_maze(maze: &MazeSpec) -> Self {
        let e = maze.extent();
        Self {
            center: [e[0] / 2.0, e[1] / 2.0],
            scale: e[0].max(e[1]) / 2.0,
        }
    }

    pub fn apply(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut out = x.to_owned();
        for mut row in out.rows_mut() {
            row[0] = (row[0] - self.center[0]) / self.scale;
            row[1] = (row[1] - self.center[1]) / self.scale;
        }
        out
    }

    pub fn invert(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut out = x.to_owned();
        for mut row in out.rows_mut() {
            row[0] = row[0] * self.scale + self.center[0];
            row[1] = row[1] * self.scale + self.center[1];
        }
        out
    }

    pub fn to_values(&self) -> Vec<f64> {
        vec![self.center[0], self.center[1], self.scale]
    }

    pub fn from_values(v: &[f64]) -> Result<Self> {
        match v {
            [cx, cy, s] if *s > 0.0 && s.is_finite() && cx.is_finite() && cy.is_finite() => Ok(Self {
                center: [*cx, *cy],
                scale: *s,
            }),
            _ => Err(Error::Checkpoint("malformed input normalization entry".into())),
        }
    }
}

/// Stacks states into an `n x 2` matrix.
pub fn states_matrix(states: &[State]) -> Array2<f64> {
    Array2::from_shape_fn((states.len(), 2), |(i, j)| states[i][j])
}

/// Goal-conditioned scalar network `V(s, g)` with a Polyak-averaged target copy.
#[derive(Clone, Debug, PartialEq)]
pub struct ValueField {
    pub spec: MlpSpec,
    pub online: ParameterSet,
    pub target: ParameterSet,
    pub norm: InputNorm,
}

impl ValueField {
    /// Network over `[s | g]` for 2-D states.
    pub fn new(hidden: &[usize], activation: Activation, norm: InputNorm, seed: u64) -> Result<Self> {
        let spec = MlpSpec::new(4, hidden.to_vec(), 1, activation)?;
        let online = init_params(&spec, seed)?;
        Ok(Self {
            target: online.clone(),
            online,
            spec,
            norm,
        })
    }

    pub fn from_parts(spec: MlpSpec, online: ParameterSet, target: ParameterSet, norm: InputNorm) -> Result<Self> {
        online.ensure_same_layout(&target)?;
        Mlp::new(&online, &spec)?;
        Ok(Self {
            spec,
            online,
            target,
            norm,
        })
    }

    fn inputs(&self, s: ArrayView2<f64>, g: ArrayView2<f64>) -> Result<Array2<f64>> {
        crate::diffcore::concat_inputs(self.norm.apply(s).view(), self.norm.apply(g).view())
    }

    fn eval_with(&self, params: &ParameterSet, s: ArrayView2<f64>, g: ArrayView2<f64>) -> Result<Array1<f64>> {
        let x = self.inputs(s, g)?;
        let out = Mlp::new(params, &self.spec)?.forward_batch(x.view())?;
        Ok(out.column(0).to_owned())
    }

    pub fn values(&self, s: ArrayView2<f64>, g: ArrayView2<f64>) -> Result<Array1<f64>> {
        self.eval_with(&self.online, s, g)
    }

    pub fn target_values(&self, s: ArrayView2<f64>, g: ArrayView2<f64>) -> Result<Array1<f64>> {
        self.eval_with(&self.target, s, g)
    }

    pub fn value(&self, s: State, g: State) -> Result<f64> {
        Ok(self.values(states_matrix(&[s]).view(), states_matrix(&[g]).view())?[0])
    }

    /// `∇ₛV(s, g)` in maze units, one row per sample.
    pub fn state_grads(&self, s: ArrayView2<f64>, g: ArrayView2<f64>) -> Result<Array2<f64>> {
        let gi = grad_input_batch(&self.online, &self.spec, self.norm.apply(s).view(), self.norm.apply(g).view())?;
        Ok(gi / self.norm.scale)
    }

    pub fn state_grad_norms(&self, s: ArrayView2<f64>, g: ArrayView2<f64>) -> Result<Array1<f64>> {
        let gr = self.state_grads(s, g)?;
        Ok(gr.rows().into_iter().map(|r| r[0].hypot(r[1])).collect())
    }

    /// `θ̄ ← (1−τ)θ̄ + τθ`.
    pub fn polyak_update(&mut self, tau: f64) -> Result<()> {
        polyak_update(&mut self.target, &self.online, tau)
    }

    /// Flattens into checkpoint entries under `prefix`.
    pub fn to_params(&self, prefix: &str) -> Result<ParameterSet> {
        let mut out = self.online.with_prefix(&format!("{prefix}online/"));
        out.extend(self.target.with_prefix(&format!("{prefix}target/")))?;
        out.insert(format!("{prefix}norm"), vec![3], self.norm.to_values())?;
        out.insert(format!("{prefix}activation"), vec![1], vec![self.spec.activation.code() as f64])?;
        Ok(out)
    }

    pub fn from_params(params: &ParameterSet, prefix: &str) -> Result<Self> {
        let online = params.strip_prefix(&format!("{prefix}online/"));
        let target = params.strip_prefix(&format!("{prefix}target/"));
        let norm = InputNorm::from_values(params.entry(&format!("{prefix}norm"))?.values())?;
        let act = activation_entry(params, &format!("{prefix}activation"))?;
        let spec = MlpSpec::infer(&online, act)?;
        Self::from_parts(spec, online, target, norm)
    }
}

pub(crate) fn activation_entry(params: &ParameterSet, name: &str) -> Result<Activation> {
    let v = params.entry(name)?.values();
    match v {
        [code] if code.fract() == 0.0 && *code >= 0.0 && *code < 256.0 => Activation::from_code(*code as u8),
        _ => Err(Error::Checkpoint(format!("malformed `{name}` entry"))),
    }
}

/// Elementwise `target ← (1−τ)·target + τ·online`.
pub fn polyak_update(target: &mut ParameterSet, online: &ParameterSet, tau: f64) -> Result<()> {
    target.ensure_same_layout(online)?;
    for (t, o) in target.entries_mut().iter_mut().zip(online.entries()) {
        for (t, &o) in t.values_mut().iter_mut().zip(o.values()) {
            *t = (1.0 - tau) * *t + tau * o;
        }
    }
    Ok(())
}
