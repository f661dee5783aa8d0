use ndarray::{concatenate, Array1, Array2, ArrayView2, Axis};

use crate::diffcore::{grad_params, init_params, mlp_on_tape, Activation, Mlp, MlpSpec, ParameterSet};
use crate::error::{Error, Result};
use crate::valuelearn::{activation_entry, expectile_weight, polyak_update, Batch, InputNorm, TdLoss, ValueField};

/// Action-value network `Q(s, a, g)` with a Polyak target, used by GCIQL.
#[derive(Clone, Debug, PartialEq)]
pub struct QField {
    pub spec: MlpSpec,
    pub online: ParameterSet,
    pub target: ParameterSet,
    pub norm: InputNorm,
    pub a_max: f64,
}

impl QField {
    pub fn new(hidden: &[usize], activation: Activation, norm: InputNorm, a_max: f64, seed: u64) -> Result<Self> {
        let spec = MlpSpec::new(6, hidden.to_vec(), 1, activation)?;
        let online = init_params(&spec, seed)?;
        Ok(Self {
            target: online.clone(),
            online,
            spec,
            norm,
            a_max,
        })
    }

    fn inputs(&self, s: ArrayView2<f64>, a: ArrayView2<f64>, g: ArrayView2<f64>) -> Result<Array2<f64>> {
        let sn = self.norm.apply(s);
        let an = a.mapv(|v| v / self.a_max);
        let gn = self.norm.apply(g);
        concatenate(Axis(1), &[sn.view(), an.view(), gn.view()]).map_err(|_| Error::Dimension {
            what: "q input rows",
            expected: s.nrows(),
            got: a.nrows().min(g.nrows()),
        })
    }

    fn eval_with(&self, p: &ParameterSet, s: ArrayView2<f64>, a: ArrayView2<f64>, g: ArrayView2<f64>) -> Result<Array1<f64>> {
        let x = self.inputs(s, a, g)?;
        Ok(Mlp::new(p, &self.spec)?.forward_batch(x.view())?.column(0).to_owned())
    }

    pub fn values(&self, s: ArrayView2<f64>, a: ArrayView2<f64>, g: ArrayView2<f64>) -> Result<Array1<f64>> {
        self.eval_with(&self.online, s, a, g)
    }

    pub fn target_values(&self, s: ArrayView2<f64>, a: ArrayView2<f64>, g: ArrayView2<f64>) -> Result<Array1<f64>> {
        self.eval_with(&self.target, s, a, g)
    }

    pub fn polyak_update(&mut self, tau: f64) -> Result<()> {
        polyak_update(&mut self.target, &self.online, tau)
    }

    pub fn to_params(&self, prefix: &str) -> Result<ParameterSet> {
        let mut out = self.online.with_prefix(&format!("{prefix}online/"));
        out.extend(self.target.with_prefix(&format!("{prefix}target/")))?;
        out.insert(format!("{prefix}norm"), vec![3], self.norm.to_values())?;
        out.insert(format!("{prefix}activation"), vec![1], vec![self.spec.activation.code() as f64])?;
        out.insert(format!("{prefix}a_max"), vec![1], vec![self.a_max])?;
        Ok(out)
    }

    pub fn from_params(params: &ParameterSet, prefix: &str) -> Result<Self> {
        let online = params.strip_prefix(&format!("{prefix}online/"));
        let target = params.strip_prefix(&format!("{prefix}target/"));
        let norm = InputNorm::from_values(params.entry(&format!("{prefix}norm"))?.values())?;
        let act = activation_entry(params, &format!("{prefix}activation"))?;
        let a_max = match params.entry(&format!("{prefix}a_max"))?.values() {
            [a] if *a > 0.0 => *a,
            _ => return Err(Error::Checkpoint("malformed q a_max entry".into())),
        };
        let spec = MlpSpec::infer(&online, act)?;
        online.ensure_same_layout(&target)?;
        Mlp::new(&online, &spec)?;
        Ok(Self {
            spec,
            online,
            target,
            norm,
            a_max,
        })
    }
}

/// `mean (r + γ(1−done)·V(s',g) − Q(s,a,g))²`.
pub fn q_loss(q: &QField, value: &ValueField, batch: &Batch, gamma: f64) -> Result<(f64, ParameterSet)> {
    let next = value.values(batch.s_next.view(), batch.g.view())?;
    let target = (&batch.reward + &(gamma * (1.0 - &batch.done) * next)).insert_axis(Axis(1));
    let x = q.inputs(batch.s.view(), batch.a.view(), batch.g.view())?;
    let spec = q.spec.clone();
    grad_params(&q.online, |t, vars| {
        let xv = t.constant(x);
        let out = mlp_on_tape(t, vars, &spec, xv)?;
        let tv = t.constant(target);
        let d = t.sub(out, tv)?;
        let d2 = t.square(d);
        Ok(t.mean(d2))
    })
}

/// Expectile regression of `V(s,g)` toward `Q̄(s,a,g)`.
pub fn iql_value_loss(value: &ValueField, q: &QField, batch: &Batch, iota: f64) -> Result<TdLoss> {
    let target = q
        .target_values(batch.s.view(), batch.a.view(), batch.g.view())?
        .insert_axis(Axis(1));
    let x = crate::diffcore::concat_inputs(value.norm.apply(batch.s.view()).view(), value.norm.apply(batch.g.view()).view())?;
    let spec = value.spec.clone();
    let mut mean_value = 0.0;
    let (loss, grads) = grad_params(&value.online, |t, vars| {
        let xv = t.constant(x);
        let v = mlp_on_tape(t, vars, &spec, xv)?;
        mean_value = t.value(v).mean().unwrap_or(0.0);
        let tv = t.constant(target);
        let d = t.sub(tv, v)?;
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
