//! Second-order machinery for penalties on input gradients.
//!
//! A penalty `P(∇ₓf)` depends on the parameters only through the input
//! gradient, so `∂P/∂θ = ∂/∂θ Σᵢ ∇ₓf(xᵢ)·wᵢ` with `wᵢ = ∂P/∂(∇ₓf(xᵢ))` held
//! fixed. The directional derivative `∇ₓf·w` is the output tangent of a
//! forward-mode pass seeded with `w`; its parameter gradient comes from a
//! reverse sweep over the primal/tangent pairs.

use ndarray::{s, Array2, ArrayView2, Axis};

use super::mlp::{concat_inputs, Mlp};
use super::params::{MlpSpec, ParameterSet};
use super::tape::{Tape, Var};
use crate::error::{ensure_finite, Error, Result};

/// Primal values with a same-shaped tangent.
#[derive(Clone, Debug, PartialEq)]
pub struct Dual {
    primal: Array2<f64>,
    tangent: Array2<f64>,
}

impl Dual {
    pub fn new(primal: Array2<f64>, tangent: Array2<f64>) -> Result<Self> {
        if primal.dim() != tangent.dim() {
            return Err(Error::Dimension {
                what: "dual tangent size",
                expected: primal.len(),
                got: tangent.len(),
            });
        }
        Ok(Self { primal, tangent })
    }

    pub fn primal(&self) -> &Array2<f64> {
        &self.primal
    }

    pub fn tangent(&self) -> &Array2<f64> {
        &self.tangent
    }
}

struct DualCache {
    /// Layer inputs, primal and tangent.
    inputs: Vec<Dual>,
    /// Pre-activations, primal and tangent.
    pre: Vec<Dual>,
}

impl Mlp<'_> {
    /// Forward-mode pass: outputs and their directional derivatives along `seed`.
    pub fn forward_dual(&self, seed: &Dual) -> Result<Dual> {
        let cache = self.dual_cache(seed)?;
        Ok(cache.pre.into_iter().last().expect("at least one layer"))
    }

    fn dual_cache(&self, seed: &Dual) -> Result<DualCache> {
        if seed.primal.ncols() != self.input_dim() {
            return Err(Error::Dimension {
                what: "network input width",
                expected: self.input_dim(),
                got: seed.primal.ncols(),
            });
        }
        ensure_finite(seed.primal.iter().chain(seed.tangent.iter()), "dual seed")?;
        let act = self.activation();
        let layers = self.layers();
        let last = layers.len() - 1;
        let mut inputs = vec![seed.clone()];
        let mut pre = Vec::with_capacity(layers.len());
        for (l, (w, b)) in layers.iter().enumerate() {
            let mut z = inputs[l].primal.dot(w);
            z += b;
            let zt = inputs[l].tangent.dot(w);
            if l < last {
                let h = z.mapv(|v| act.eval(v));
                let mut ht = zt.clone();
                ndarray::Zip::from(&mut ht)
                    .and(&z)
                    .and(&h)
                    .for_each(|t, &zz, &f| *t *= act.derivs_from(zz, f).0);
                inputs.push(Dual { primal: h, tangent: ht });
            }
            pre.push(Dual { primal: z, tangent: zt });
        }
        Ok(DualCache { inputs, pre })
    }

    /// `∂/∂θ Σᵢ ∇ₓf(xᵢ)·dirᵢ`, summed over output units.
    pub fn directional_param_grad(&self, x: ArrayView2<f64>, dir: ArrayView2<f64>) -> Result<Vec<(Array2<f64>, Array2<f64>)>> {
        let seed = Dual::new(x.to_owned(), dir.to_owned())?;
        let cache = self.dual_cache(&seed)?;
        let act = self.activation();
        let layers = self.layers();
        let n = x.nrows();

        let mut grads = vec![(Array2::zeros((0, 0)), Array2::zeros((0, 0))); layers.len()];
        // adjoints of the layer pre-activation (primal, tangent)
        let mut zbar = Array2::<f64>::zeros((n, self.output_dim()));
        let mut ztbar = Array2::<f64>::ones((n, self.output_dim()));
        for l in (0..layers.len()).rev() {
            let (w, _) = &layers[l];
            let input = &cache.inputs[l];
            let gw = input.primal.t().dot(&zbar) + input.tangent.t().dot(&ztbar);
            let gb = zbar.sum_axis(Axis(0)).insert_axis(Axis(0));
            grads[l] = (gw, gb);
            if l == 0 {
                break;
            }
            let hbar = zbar.dot(&w.t());
            let htbar = ztbar.dot(&w.t());
            let z = &cache.pre[l - 1];
            let h = &cache.inputs[l].primal;
            let mut new_zbar = hbar;
            let mut new_ztbar = htbar.clone();
            ndarray::Zip::from(&mut new_zbar)
                .and(&mut new_ztbar)
                .and(&htbar)
                .and(&z.primal)
                .and(&z.tangent)
                .and(h)
                .for_each(|zb, ztb, &htb, &zp, &zt, &f| {
                    let (d1, d2) = act.derivs_from(zp, f);
                    *zb = *zb * d1 + htb * d2 * zt;
                    *ztb *= d1;
                });
            zbar = new_zbar;
            ztbar = new_ztbar;
        }
        Ok(grads)
    }
}

/// Result of differentiating a penalty on `∇ₛV` with respect to the parameters.
#[derive(Clone, Debug)]
pub struct InputGradPenalty {
    pub value: f64,
    pub grads: ParameterSet,
    /// `∇ₛV`, one row per sample.
    pub input_grads: Array2<f64>,
}

/// Exact `∂P/∂θ` for a scalar penalty `P` built on a tape from the matrix of
/// per-sample state gradients `∇ₛV(s, g)` of a scalar network `V(s, g)`.
///
/// `penalty` receives a differentiable `n x dim(s)` leaf holding `∇ₛV`.
pub fn grad_params_through_input_grad<F>(
    params: &ParameterSet,
    spec: &MlpSpec,
    s: ArrayView2<f64>,
    g: ArrayView2<f64>,
    penalty: F,
) -> Result<InputGradPenalty>
where
    F: FnOnce(&mut Tape, Var) -> Result<Var>,
{
    ensure_finite(params.values(), "parameters")?;
    let mlp = Mlp::new(params, spec)?;
    if mlp.output_dim() != 1 {
        return Err(Error::Dimension {
            what: "value network output width",
            expected: 1,
            got: mlp.output_dim(),
        });
    }
    let x = concat_inputs(s, g)?;
    let ds = s.ncols();
    let full = mlp.input_grad_batch(x.view())?;
    let input_grads = full.slice(s![.., ..ds]).to_owned();

    let mut tape = Tape::new();
    let u = tape.variable(input_grads.clone());
    let p = penalty(&mut tape, u)?;
    let value = tape.scalar(p)?;
    if !value.is_finite() {
        return Err(Error::NonFinite("input-gradient penalty".into()));
    }
    let grads_u = tape.backward(p)?;
    let dpdu = grads_u
        .get(u)
        .cloned()
        .unwrap_or_else(|| Array2::zeros(input_grads.dim()));

    let mut dir = Array2::<f64>::zeros(x.dim());
    dir.slice_mut(s![.., ..ds]).assign(&dpdu);
    let layer_grads = mlp.directional_param_grad(x.view(), dir.view())?;

    let mut grads = params.zeros_like();
    for (l, (gw, gb)) in layer_grads.into_iter().enumerate() {
        grads
            .get_mut(&MlpSpec::weight_name(l))
            .expect("validated layout")
            .values_mut()
            .iter_mut()
            .zip(gw.iter())
            .for_each(|(d, v)| *d = *v);
        grads
            .get_mut(&MlpSpec::bias_name(l))
            .expect("validated layout")
            .values_mut()
            .iter_mut()
            .zip(gb.iter())
            .for_each(|(d, v)| *d = *v);
    }
    ensure_finite(grads.values(), "penalty gradient")?;
    Ok(InputGradPenalty {
        value,
        grads,
        input_grads,
    })
}
