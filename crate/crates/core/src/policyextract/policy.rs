use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::diffcore::{concat_inputs, grad_params, init_params, mlp_on_tape, Activation, Mlp, MlpSpec, ParameterSet};
use crate::error::{Error, Result};
use crate::mazeworld::{clip_action, MazeSpec};
use crate::valuelearn::{activation_entry, InputNorm};

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;
pub const LOG_STD_NAME: &str = "log_std";
const HALF_LN_TAU: f64 = 0.918_938_533_204_672_8;

/// What the policy emits, and how its normalized outputs map back to raw values.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PolicyOutput {
    /// Actions in units of `a_max`; raw actions are clipped to norm `a_max`.
    Action { a_max: f64 },
    /// Subgoal states in the input normalization; raw subgoals are clipped to the box.
    Subgoal { lo: [f64; 2], hi: [f64; 2] },
}

impl PolicyOutput {
    pub fn action(maze: &MazeSpec) -> Self {
        Self::Action { a_max: maze.a_max() }
    }

    pub fn subgoal(maze: &MazeSpec) -> Self {
        Self::Subgoal {
            lo: [0.0, 0.0],
            hi: maze.extent(),
        }
    }

    fn to_values(self) -> Vec<f64> {
        match self {
            Self::Action { a_max } => vec![0.0, a_max, 0.0, 0.0, 0.0],
            Self::Subgoal { lo, hi } => vec![1.0, lo[0], lo[1], hi[0], hi[1]],
        }
    }

    fn from_values(v: &[f64]) -> Result<Self> {
        match v {
            [k, a, ..] if *k == 0.0 && *a > 0.0 => Ok(Self::Action { a_max: *a }),
            [k, l0, l1, h0, h1] if *k == 1.0 && h0 > l0 && h1 > l1 => Ok(Self::Subgoal {
                lo: [*l0, *l1],
                hi: [*h0, *h1],
            }),
            _ => Err(Error::Checkpoint("malformed policy output entry".into())),
        }
    }
}

/// Diagonal Gaussian over a 2-D target, conditioned on `[x | cond]`.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianPolicy {
    pub spec: MlpSpec,
    /// Dense layers plus a `log_std` entry of length 2.
    pub params: ParameterSet,
    pub norm: InputNorm,
    pub output: PolicyOutput,
}

impl GaussianPolicy {
    pub fn new(hidden: &[usize], activation: Activation, norm: InputNorm, output: PolicyOutput, seed: u64) -> Result<Self> {
        let spec = MlpSpec::new(4, hidden.to_vec(), 2, activation)?;
        let mut params = init_params(&spec, seed)?;
        params.insert(LOG_STD_NAME, vec![2], vec![0.0, 0.0])?;
        Ok(Self {
            spec,
            params,
            norm,
            output,
        })
    }

    pub fn log_std(&self) -> [f64; 2] {
        let v = self.params.entry(LOG_STD_NAME).map(|e| e.values()).unwrap_or(&[0.0, 0.0]);
        [v[0].clamp(LOG_STD_MIN, LOG_STD_MAX), v[1].clamp(LOG_STD_MIN, LOG_STD_MAX)]
    }

    fn inputs(&self, x: ArrayView2<f64>, cond: ArrayView2<f64>) -> Result<Array2<f64>> {
        concat_inputs(self.norm.apply(x).view(), self.norm.apply(cond).view())
    }

    /// Raw targets mapped to the space the Gaussian lives in.
    pub fn normalize_target(&self, y: ArrayView2<f64>) -> Array2<f64> {
        match self.output {
            PolicyOutput::Action { a_max } => y.mapv(|v| v / a_max),
            PolicyOutput::Subgoal { .. } => self.norm.apply(y),
        }
    }

    /// Normalized outputs mapped back to raw values and clipped.
    pub fn denormalize(&self, y: ArrayView2<f64>) -> Array2<f64> {
        match self.output {
            PolicyOutput::Action { a_max } => {
                let mut out = y.mapv(|v| v * a_max);
                for mut r in out.rows_mut() {
                    let c = clip_action([r[0], r[1]], a_max);
                    r[0] = c[0];
                    r[1] = c[1];
                }
                out
            }
            PolicyOutput::Subgoal { lo, hi } => {
                let mut out = self.norm.invert(y);
                for mut r in out.rows_mut() {
                    r[0] = r[0].clamp(lo[0], hi[0]);
                    r[1] = r[1].clamp(lo[1], hi[1]);
                }
                out
            }
        }
    }

    pub fn mean_normalized(&self, x: ArrayView2<f64>, cond: ArrayView2<f64>) -> Result<Array2<f64>> {
        Mlp::new(&self.params, &self.spec)?.forward_batch(self.inputs(x, cond)?.view())
    }

    /// Mean or sampled raw outputs, one row per input row.
    pub fn act_batch(&self, x: ArrayView2<f64>, cond: ArrayView2<f64>, deterministic: bool, rng: &mut impl Rng) -> Result<Array2<f64>> {
        let mut y = self.mean_normalized(x, cond)?;
        if !deterministic {
            let ls = self.log_std();
            for mut r in y.rows_mut() {
                for j in 0..2 {
                    let z: f64 = StandardNormal.sample(rng);
                    r[j] += ls[j].exp() * z;
                }
            }
        }
        Ok(self.denormalize(y.view()))
    }

    /// Per-row `log N(y; μ, σ)` for raw targets `y`.
    pub fn log_prob(&self, x: ArrayView2<f64>, cond: ArrayView2<f64>, y: ArrayView2<f64>) -> Result<Array1<f64>> {
        let mu = self.mean_normalized(x, cond)?;
        let t = self.normalize_target(y);
        let ls = self.log_std();
        Ok((0..mu.nrows())
            .map(|i| {
                (0..2)
                    .map(|j| {
                        let z = (t[[i, j]] - mu[[i, j]]) / ls[j].exp();
                        -0.5 * z * z - ls[j] - HALF_LN_TAU
                    })
                    .sum()
            })
            .collect())
    }

    /// `−mean[w · log N(y; μ(x, cond), σ)]` and its parameter gradient.
    pub fn weighted_nll(&self, x: ArrayView2<f64>, cond: ArrayView2<f64>, y: ArrayView2<f64>, weights: &Array1<f64>) -> Result<(f64, ParameterSet)> {
        let n = x.nrows();
        if weights.len() != n || y.nrows() != n {
            return Err(Error::Dimension {
                what: "policy batch rows",
                expected: n,
                got: if weights.len() != n { weights.len() } else { y.nrows() },
            });
        }
        let inputs = self.inputs(x, cond)?;
        let target = self.normalize_target(y);
        let w = weights.clone().insert_axis(Axis(1));
        let spec = self.spec.clone();
        grad_params(&self.params, |t, vars| {
            let xv = t.constant(inputs);
            let mu = mlp_on_tape(t, vars, &spec, xv)?;
            let ls = vars.get(LOG_STD_NAME)?;
            let ls = t.clip(ls, LOG_STD_MIN, LOG_STD_MAX);
            let ls = t.broadcast_rows(ls, n)?;
            let tv = t.constant(target);
            let d = t.sub(tv, mu)?;
            let neg_ls = t.scale(ls, -1.0);
            let inv_sigma = t.exp(neg_ls);
            let z = t.mul(d, inv_sigma)?;
            let z2 = t.square(z);
            let half = t.scale(z2, 0.5);
            let nll = t.add(half, ls)?;
            let nll = t.offset(nll, HALF_LN_TAU);
            let per_row = t.sum_cols(nll);
            let wv = t.constant(w);
            let weighted = t.mul(per_row, wv)?;
            Ok(t.mean(weighted))
        })
    }

    pub fn to_params(&self, prefix: &str) -> Result<ParameterSet> {
        let mut out = self.params.with_prefix(prefix);
        out.insert(format!("{prefix}norm"), vec![3], self.norm.to_values())?;
        out.insert(format!("{prefix}activation"), vec![1], vec![self.spec.activation.code() as f64])?;
        out.insert(format!("{prefix}output"), vec![5], self.output.to_values())?;
        Ok(out)
    }

    pub fn from_params(all: &ParameterSet, prefix: &str) -> Result<Self> {
        let stripped = all.strip_prefix(prefix);
        let act = activation_entry(all, &format!("{prefix}activation"))?;
        let norm = InputNorm::from_values(all.entry(&format!("{prefix}norm"))?.values())?;
        let output = PolicyOutput::from_values(all.entry(&format!("{prefix}output"))?.values())?;
        let spec = MlpSpec::infer(&stripped, act)?;
        if spec.input_dim != 4 || spec.output_dim != 2 {
            return Err(Error::Checkpoint(format!("policy `{prefix}` has unexpected shape")));
        }
        let mut params = ParameterSet::new();
        for e in stripped.entries() {
            let n = e.name();
            if n.starts_with("dense") || n == LOG_STD_NAME {
                params.insert(n, e.shape().to_vec(), e.values().to_vec())?;
            }
        }
        if params.get(LOG_STD_NAME).map(|e| e.values().len()) != Some(2) {
            return Err(Error::Checkpoint(format!("policy `{prefix}` lacks a log_std entry")));
        }
        Mlp::new(&params, &spec)?;
        Ok(Self {
            spec,
            params,
            norm,
            output,
        })
    }
}
