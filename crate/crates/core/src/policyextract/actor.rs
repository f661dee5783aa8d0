use ndarray::{Array1, Array2, ArrayView2};
use rand::Rng;

use super::awr::{awr_weights, gcivl_advantages, high_advantages, low_advantages};
use super::policy::GaussianPolicy;
use crate::diffcore::{MlpSpec, ParameterSet};
use crate::error::{Error, Result};
use crate::mazeworld::State;
use crate::valuelearn::{states_matrix, Batch, ValueField};

pub const HIGH_PREFIX: &str = "hi/";
pub const LOW_PREFIX: &str = "lo/";
pub const FLAT_PREFIX: &str = "flat/";

/// Subgoal policy over states plus an action policy reaching those subgoals.
#[derive(Clone, Debug, PartialEq)]
pub struct HierarchicalActor {
    pub high: GaussianPolicy,
    pub low: GaussianPolicy,
    pub k: usize,
}

impl HierarchicalActor {
    pub fn new(high: GaussianPolicy, low: GaussianPolicy, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::Config("subgoal offset k must be at least 1".into()));
        }
        Ok(Self { high, low, k })
    }

    pub fn subgoals(&self, s: ArrayView2<f64>, g: ArrayView2<f64>, deterministic: bool, rng: &mut impl Rng) -> Result<Array2<f64>> {
        self.high.act_batch(s, g, deterministic, rng)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Actor {
    Hierarchical(HierarchicalActor),
    Flat(GaussianPolicy),
}

impl Actor {
    /// Raw actions for a batch of `(s, g)` rows.
    pub fn act_batch(&self, s: ArrayView2<f64>, g: ArrayView2<f64>, deterministic: bool, rng: &mut impl Rng) -> Result<Array2<f64>> {
        match self {
            Self::Hierarchical(h) => {
                let sub = h.subgoals(s, g, deterministic, rng)?;
                h.low.act_batch(s, sub.view(), deterministic, rng)
            }
            Self::Flat(p) => p.act_batch(s, g, deterministic, rng),
        }
    }

    pub fn to_params(&self) -> Result<ParameterSet> {
        match self {
            Self::Hierarchical(h) => {
                let mut out = h.high.to_params(HIGH_PREFIX)?;
                out.extend(h.low.to_params(LOW_PREFIX)?)?;
                out.insert(format!("{HIGH_PREFIX}subgoal_k"), vec![1], vec![h.k as f64])?;
                Ok(out)
            }
            Self::Flat(p) => p.to_params(FLAT_PREFIX),
        }
    }

    pub fn from_params(params: &ParameterSet) -> Result<Self> {
        if params.get(&format!("{FLAT_PREFIX}norm")).is_some() {
            return Ok(Self::Flat(GaussianPolicy::from_params(params, FLAT_PREFIX)?));
        }
        let k = match params.entry(&format!("{HIGH_PREFIX}subgoal_k"))?.values() {
            [k] if *k >= 1.0 && k.fract() == 0.0 => *k as usize,
            _ => return Err(Error::Checkpoint("malformed subgoal_k entry".into())),
        };
        Ok(Self::Hierarchical(HierarchicalActor::new(
            GaussianPolicy::from_params(params, HIGH_PREFIX)?,
            GaussianPolicy::from_params(params, LOW_PREFIX)?,
            k,
        )?))
    }
}

/// Single-state convenience wrapper over [`Actor::act_batch`].
pub fn act(actor: &Actor, s: State, g: State, deterministic: bool, rng: &mut impl Rng) -> Result<[f64; 2]> {
    let a = actor.act_batch(states_matrix(&[s]).view(), states_matrix(&[g]).view(), deterministic, rng)?;
    Ok([a[[0, 0]], a[[0, 1]]])
}

/// `V` multiplied by `c` exactly, by scaling the output layer.
pub fn scaled_value(value: &ValueField, c: f64) -> Result<ValueField> {
    let mut out = value.clone();
    let last = value.spec.num_layers() - 1;
    for p in [&mut out.online, &mut out.target] {
        for name in [MlpSpec::weight_name(last), MlpSpec::bias_name(last)] {
            for v in p.get_mut(&name).ok_or(Error::UnknownParameter(name.clone()))?.values_mut() {
                *v *= c;
            }
        }
    }
    Ok(out)
}

/// True when `c·adv` orders every pair of entries exactly as `adv` does.
pub fn ordering_preserved(adv: &[f64], scaled: &[f64]) -> bool {
    adv.iter().zip(scaled).enumerate().all(|(i, (a, sa))| {
        adv.iter()
            .zip(scaled)
            .skip(i + 1)
            .all(|(b, sb)| a.partial_cmp(b) == sa.partial_cmp(sb))
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct RescalingReport {
    pub rows: usize,
    pub sign_mismatches: usize,
    pub order_preserved: bool,
    /// Largest `|ln w_c − c·ln w|` over unclipped weights.
    pub max_log_weight_error: f64,
    pub argmax_mismatches: usize,
    pub passed: bool,
}

fn close_in_order(a: &Array1<f64>, b: &Array1<f64>, tol: f64) -> bool {
    // pairs closer than `tol` are rounding-level ties and carry no ordering
    let n = a.len();
    (0..n).all(|i| {
        (i + 1..n).all(|j| {
            let (da, db) = (a[i] - a[j], b[i] - b[j]);
            da.abs() <= tol || db.abs() <= tol || da.signum() == db.signum()
        })
    })
}

/// Compares `V` against `c·V` on every advantage form and on subgoal argmax.
pub fn rescaling_argmax_check(value: &ValueField, c: f64, probe: &Batch, candidates: &[State]) -> Result<RescalingReport> {
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::Config(format!("rescaling factor {c} must be positive")));
    }
    let scaled = scaled_value(value, c)?;
    let mut sign_mismatches = 0;
    let mut order_preserved = true;
    let mut max_log_weight_error: f64 = 0.0;
    let advs: [fn(&ValueField, &Batch) -> Result<Array1<f64>>; 3] = [high_advantages, low_advantages, gcivl_advantages];
    for f in advs {
        let a = f(value, probe)?;
        let b = f(&scaled, probe)?;
        let tol = 1e-12 * (1.0 + a.iter().fold(0.0f64, |m, x| m.max(x.abs()))) * c.max(1.0);
        sign_mismatches += a
            .iter()
            .zip(&b)
            .filter(|(x, y)| x.abs() > tol && y.abs() > tol && x.signum() != y.signum())
            .count();
        order_preserved &= close_in_order(&a, &b, tol);
        let wa = awr_weights(&a, 1.0, f64::INFINITY);
        let wb = awr_weights(&b, 1.0, f64::INFINITY);
        for (x, y) in wa.iter().zip(&wb) {
            max_log_weight_error = max_log_weight_error.max((y.ln() - c * x.ln()).abs());
        }
    }
    let cand = states_matrix(candidates);
    let mut argmax_mismatches = 0;
    for r in 0..probe.len() {
        let g = Array2::from_shape_fn((candidates.len(), 2), |(_, j)| probe.g[[r, j]]);
        let v = value.values(cand.view(), g.view())?;
        let w = scaled.values(cand.view(), g.view())?;
        let best = argmax(&v);
        let best_scaled = argmax(&w);
        if best != best_scaled && (v[best] - v[best_scaled]).abs() > 1e-12 * (1.0 + v[best].abs()) {
            argmax_mismatches += 1;
        }
    }
    let passed = sign_mismatches == 0 && order_preserved && argmax_mismatches == 0 && max_log_weight_error < 1e-9;
    Ok(RescalingReport {
        rows: probe.len(),
        sign_mismatches,
        order_preserved,
        max_log_weight_error,
        argmax_mismatches,
        passed,
    })
}

fn argmax(v: &Array1<f64>) -> usize {
    v.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &x)| if x > bv { (i, x) } else { (bi, bv) })
        .0
}
