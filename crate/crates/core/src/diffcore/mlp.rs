use ndarray::{concatenate, Array1, Array2, ArrayView1, ArrayView2, Axis};

use super::params::{Activation, MlpSpec, ParameterSet};
use super::tape::{ParamVars, Tape, Var};
use crate::error::{ensure_finite, Error, Result};

/// Borrowed view of a dense network's weights, validated against its spec.
pub struct Mlp<'a> {
    activation: Activation,
    input_dim: usize,
    output_dim: usize,
    layers: Vec<(ArrayView2<'a, f64>, ArrayView1<'a, f64>)>,
}

/// Pre-activations of one batched forward pass.
pub(crate) struct ForwardCache {
    /// `pre[l]` is the input of layer `l` times `W_l` plus `b_l`; the last one is the output.
    pub pre: Vec<Array2<f64>>,
    /// `post[l]` is the activation of `pre[l]`, for hidden layers only.
    pub post: Vec<Array2<f64>>,
}

impl<'a> Mlp<'a> {
    pub fn new(params: &'a ParameterSet, spec: &MlpSpec) -> Result<Self> {
        spec.validate()?;
        let dims = spec.layer_dims();
        let mut layers = Vec::with_capacity(spec.num_layers());
        for (l, pair) in dims.windows(2).enumerate() {
            let w = params.entry(&MlpSpec::weight_name(l))?;
            let b = params.entry(&MlpSpec::bias_name(l))?;
            if w.values().len() != pair[0] * pair[1] {
                return Err(Error::Dimension {
                    what: "dense weight size",
                    expected: pair[0] * pair[1],
                    got: w.values().len(),
                });
            }
            if b.values().len() != pair[1] {
                return Err(Error::Dimension {
                    what: "dense bias size",
                    expected: pair[1],
                    got: b.values().len(),
                });
            }
            let w = ArrayView2::from_shape((pair[0], pair[1]), w.values()).expect("size checked");
            let b = ArrayView1::from(b.values());
            layers.push((w, b));
        }
        Ok(Self {
            activation: spec.activation,
            input_dim: spec.input_dim,
            output_dim: spec.output_dim,
            layers,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    fn check_input(&self, x: &ArrayView2<f64>) -> Result<()> {
        if x.ncols() != self.input_dim {
            return Err(Error::Dimension {
                what: "network input width",
                expected: self.input_dim,
                got: x.ncols(),
            });
        }
        ensure_finite(x.iter(), "network input")
    }

    pub fn forward_batch(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(&x)?;
        let last = self.layers.len() - 1;
        let mut h = x.to_owned();
        for (l, (w, b)) in self.layers.iter().enumerate() {
            let mut z = h.dot(w);
            z += b;
            if l < last {
                z.mapv_inplace(|v| self.activation.eval(v));
            }
            h = z;
        }
        Ok(h)
    }

    pub(crate) fn forward_cached(&self, x: ArrayView2<f64>) -> Result<ForwardCache> {
        self.check_input(&x)?;
        let last = self.layers.len() - 1;
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut post: Vec<Array2<f64>> = Vec::with_capacity(last);
        for (l, (w, b)) in self.layers.iter().enumerate() {
            let mut z = if l == 0 { x.dot(w) } else { post[l - 1].dot(w) };
            z += b;
            if l < last {
                post.push(z.mapv(|v| self.activation.eval(v)));
            }
            pre.push(z);
        }
        Ok(ForwardCache { pre, post })
    }

    /// Gradient of `sum(upstream * output)` with respect to each input row.
    pub fn input_grad_with(&self, x: ArrayView2<f64>, upstream: ArrayView2<f64>) -> Result<Array2<f64>> {
        let cache = self.forward_cached(x)?;
        if upstream.dim() != cache.pre[self.layers.len() - 1].dim() {
            return Err(Error::Dimension {
                what: "upstream gradient size",
                expected: cache.pre[self.layers.len() - 1].len(),
                got: upstream.len(),
            });
        }
        let mut delta = upstream.to_owned();
        for l in (0..self.layers.len()).rev() {
            let mut dh = delta.dot(&self.layers[l].0.t());
            if l > 0 {
                ndarray::Zip::from(&mut dh)
                    .and(&cache.pre[l - 1])
                    .and(&cache.post[l - 1])
                    .for_each(|d, &z, &f| *d *= self.activation.derivs_from(z, f).0);
            }
            delta = dh;
        }
        Ok(delta)
    }

    /// Per-row input gradient of the summed outputs.
    pub fn input_grad_batch(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        let ones = Array2::ones((x.nrows(), self.output_dim));
        self.input_grad_with(x, ones.view())
    }

    pub(crate) fn layers(&self) -> &[(ArrayView2<'a, f64>, ArrayView1<'a, f64>)] {
        &self.layers
    }

    pub(crate) fn activation(&self) -> Activation {
        self.activation
    }
}

/// Single-sample evaluation.
pub fn forward(params: &ParameterSet, spec: &MlpSpec, x: &[f64]) -> Result<Vec<f64>> {
    let mlp = Mlp::new(params, spec)?;
    let row = ArrayView2::from_shape((1, x.len()), x).expect("row view");
    Ok(mlp.forward_batch(row)?.into_raw_vec_and_offset().0)
}

/// Rows of `[s | g]`.
pub fn concat_inputs(s: ArrayView2<f64>, g: ArrayView2<f64>) -> Result<Array2<f64>> {
    if s.nrows() != g.nrows() {
        return Err(Error::Dimension {
            what: "goal batch rows",
            expected: s.nrows(),
            got: g.nrows(),
        });
    }
    Ok(concatenate(Axis(1), &[s, g]).expect("row counts checked"))
}

/// Gradient of a scalar network `V(s, g)` with respect to `s` only, one row per sample.
pub fn grad_input_batch(
    params: &ParameterSet,
    spec: &MlpSpec,
    s: ArrayView2<f64>,
    g: ArrayView2<f64>,
) -> Result<Array2<f64>> {
    let mlp = Mlp::new(params, spec)?;
    if mlp.output_dim() != 1 {
        return Err(Error::Dimension {
            what: "value network output width",
            expected: 1,
            got: mlp.output_dim(),
        });
    }
    let x = concat_inputs(s, g)?;
    let full = mlp.input_grad_batch(x.view())?;
    Ok(full.slice(ndarray::s![.., ..s.ncols()]).to_owned())
}

/// `∇ₛV(s, g)` for a single sample; length is `dim(s)`.
pub fn grad_input(params: &ParameterSet, spec: &MlpSpec, s: &[f64], g: &[f64]) -> Result<Vec<f64>> {
    let sv = ArrayView2::from_shape((1, s.len()), s).expect("row view");
    let gv = ArrayView2::from_shape((1, g.len()), g).expect("row view");
    Ok(grad_input_batch(params, spec, sv, gv)?.into_raw_vec_and_offset().0)
}

/// Records the network on `tape` using parameters bound in `vars`.
pub fn mlp_on_tape(tape: &mut Tape, vars: &ParamVars, spec: &MlpSpec, x: Var) -> Result<Var> {
    let layers = spec.num_layers();
    let mut h = x;
    for l in 0..layers {
        let w = vars.get(&MlpSpec::weight_name(l))?;
        let b = vars.get(&MlpSpec::bias_name(l))?;
        h = tape.affine(h, w, b)?;
        if l + 1 < layers {
            h = tape.activation(h, spec.activation);
        }
    }
    Ok(h)
}

/// Plain row vector helper for tests and small call sites.
pub fn row(values: &[f64]) -> Array2<f64> {
    Array1::from(values.to_vec()).insert_axis(Axis(0))
}
