//! Central finite differences as an independent oracle for every derivative
//! the engine produces.

use eikgcrl::diffcore::{
    concat_inputs, grad_input, grad_params, grad_params_through_input_grad, init_params, mlp_on_tape, Activation,
    MlpSpec, ParameterSet, Tape, Var, NORM_EPS,
};
use eikgcrl::Result;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-4;

/// Relative error with a magnitude floor: below |x| = 1e-4 the O(h²) truncation
/// of a central difference at h = 1e-4 is no longer small against x itself.
fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-4)
}

fn random_matrix(rng: &mut ChaCha8Rng, n: usize, m: usize, scale: f64) -> Array2<f64> {
    Array2::from_shape_fn((n, m), |_| rng.random_range(-scale..scale))
}

fn perturbed(p: &ParameterSet, idx: usize, delta: f64) -> ParameterSet {
    let mut flat = p.flatten();
    flat[idx] += delta;
    let mut q = p.clone();
    q.assign_flat(&flat).unwrap();
    q
}

fn central_diff(p: &ParameterSet, idx: usize, f: &dyn Fn(&ParameterSet) -> f64) -> f64 {
    (f(&perturbed(p, idx, H)) - f(&perturbed(p, idx, -H))) / (2.0 * H)
}

/// A handful of composite losses built from the supported primitives.
fn composite_loss(kind: usize, spec: &MlpSpec, x: &Array2<f64>, y: &Array2<f64>) -> impl Fn(&mut Tape, &eikgcrl::diffcore::ParamVars) -> Result<Var> {
    let spec = spec.clone();
    let x = x.clone();
    let y = y.clone();
    move |t, vars| {
        let xv = t.constant(x.clone());
        let yv = t.constant(y.clone());
        let out = mlp_on_tape(t, vars, &spec, xv)?;
        match kind {
            // mean squared error
            0 => {
                let d = t.sub(out, yv)?;
                let d2 = t.square(d);
                Ok(t.mean(d2))
            }
            // asymmetric (expectile-like) weighting via clip
            1 => {
                let d = t.sub(yv, out)?;
                let neg = t.clip(d, -1e9, 0.0);
                let neg2 = t.square(neg);
                let all2 = t.square(d);
                let a = t.scale(all2, 0.7);
                let b = t.scale(neg2, 0.3 - 0.7);
                let s = t.add(a, b)?;
                Ok(t.mean(s))
            }
            // sqrt of a sum of squares times a product term
            2 => {
                let o2 = t.square(out);
                let o2 = t.offset(o2, 1.0);
                let r = t.sqrt(o2);
                let p = t.mul(r, yv)?;
                Ok(t.sum(p))
            }
            // exp-weighted regression with a clipped weight
            _ => {
                let w = t.clip(out, -2.0, 2.0);
                let w = t.exp(w);
                let d = t.sub(out, yv)?;
                let d2 = t.square(d);
                let wd = t.mul(w, d2)?;
                let act = t.activation(out, Activation::Softplus);
                let s = t.add(wd, act)?;
                Ok(t.mean(s))
            }
        }
    }
}

#[test]
fn grad_params_matches_central_differences_on_fuzzed_nets() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    let cases = 120;
    for case in 0..cases {
        let act = if case % 2 == 0 { Activation::Tanh } else { Activation::Softplus };
        let din = rng.random_range(1..5);
        let h1 = rng.random_range(2..7);
        let h2 = rng.random_range(2..7);
        let dout = rng.random_range(1..3);
        let spec = MlpSpec::new(din, vec![h1, h2], dout, act).unwrap();
        let params = init_params(&spec, case as u64).unwrap();
        let n = rng.random_range(1..9);
        let x = random_matrix(&mut rng, n, din, 2.0);
        let y = random_matrix(&mut rng, n, dout, 1.0);
        let kind = case % 4;

        let (_, grads) = grad_params(&params, composite_loss(kind, &spec, &x, &y)).unwrap();
        let scalar = |p: &ParameterSet| grad_params(p, composite_loss(kind, &spec, &x, &y)).unwrap().0;
        let analytic = grads.flatten();
        for (i, a) in analytic.iter().enumerate() {
            let fd = central_diff(&params, i, &scalar);
            worst = worst.max(rel_err(*a, fd));
        }
    }
    assert!(worst < 1e-5, "max relative error {worst:e}");
}

#[test]
fn grad_input_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for case in 0..50 {
        let spec = MlpSpec::new(4, vec![9, 7], 1, Activation::Tanh).unwrap();
        let p = init_params(&spec, 100 + case).unwrap();
        let s: Vec<f64> = (0..2).map(|_| rng.random_range(-1.5..1.5)).collect();
        let g: Vec<f64> = (0..2).map(|_| rng.random_range(-1.5..1.5)).collect();
        let grad = grad_input(&p, &spec, &s, &g).unwrap();
        assert_eq!(grad.len(), 2);
        for k in 0..2 {
            let eval = |d: f64| {
                let mut x = s.clone();
                x.extend_from_slice(&g);
                x[k] += d;
                eikgcrl::diffcore::forward(&p, &spec, &x).unwrap()[0]
            };
            let fd = (eval(H) - eval(-H)) / (2.0 * H);
            assert!(rel_err(grad[k], fd) < 1e-5, "case {case} dim {k}: {} vs {fd}", grad[k]);
        }
    }
}

fn eikonal_penalty(speed: Array2<f64>) -> impl FnOnce(&mut Tape, Var) -> Result<Var> {
    move |t, u| {
        let sq = t.square(u);
        let ss = t.sum_cols(sq);
        let ss = t.offset(ss, NORM_EPS);
        let norm = t.sqrt(ss);
        let sp = t.constant(speed);
        let scaled = t.mul(norm, sp)?;
        let r = t.offset(scaled, -1.0);
        let r2 = t.square(r);
        Ok(t.mean(r2))
    }
}

/// Penalty scalar recomputed from scratch: input gradients by finite differences
/// are too noisy here, so the oracle uses the engine's first-order input
/// gradient (checked above) and differentiates it numerically in θ.
fn penalty_value(p: &ParameterSet, spec: &MlpSpec, s: &Array2<f64>, g: &Array2<f64>, speed: &Array2<f64>) -> f64 {
    let mut total = 0.0;
    for i in 0..s.nrows() {
        let gi = grad_input(p, spec, s.row(i).as_slice().unwrap(), g.row(i).as_slice().unwrap()).unwrap();
        let norm = (gi.iter().map(|v| v * v).sum::<f64>() + NORM_EPS).sqrt();
        total += (norm * speed[[i, 0]] - 1.0).powi(2);
    }
    total / s.nrows() as f64
}

#[test]
fn penalty_gradient_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut checked = 0;
    let mut worst: f64 = 0.0;
    for (case, act) in [Activation::Tanh, Activation::Softplus, Activation::Tanh, Activation::Softplus]
        .into_iter()
        .enumerate()
    {
        let spec = MlpSpec::new(4, vec![10, 8], 1, act).unwrap();
        let mut p = init_params(&spec, 500 + case as u64).unwrap();
        // larger weights so the penalty is far from its minimum
        p.scale(1.7);
        let n = 8;
        let s = random_matrix(&mut rng, n, 2, 1.0);
        let g = random_matrix(&mut rng, n, 2, 1.0);
        let speed = Array2::from_shape_fn((n, 1), |_| rng.random_range(0.1..1.0));
        let out = grad_params_through_input_grad(&p, &spec, s.view(), g.view(), eikonal_penalty(speed.clone())).unwrap();
        assert!((out.value - penalty_value(&p, &spec, &s, &g, &speed)).abs() < 1e-12);
        let analytic = out.grads.flatten();
        let f = |q: &ParameterSet| penalty_value(q, &spec, &s, &g, &speed);
        for _ in 0..60 {
            let i = rng.random_range(0..analytic.len());
            let fd = central_diff(&p, i, &f);
            worst = worst.max(rel_err(analytic[i], fd));
            checked += 1;
        }
    }
    assert!(checked >= 200);
    assert!(worst < 1e-4, "max relative error {worst:e}");
}

#[test]
fn unit_slope_linear_value_has_zero_penalty_gradient() {
    let spec = MlpSpec::new(4, vec![], 1, Activation::Tanh).unwrap();
    let mut p = init_params(&spec, 0).unwrap();
    p.get_mut("dense0.weight").unwrap().values_mut().copy_from_slice(&[0.6, -0.8, 0.0, 0.0]);
    let s = Array2::from_shape_fn((5, 2), |(i, j)| (i * 2 + j) as f64 * 0.3);
    let g = Array2::zeros((5, 2));
    let out = grad_params_through_input_grad(&p, &spec, s.view(), g.view(), eikonal_penalty(Array2::ones((5, 1)))).unwrap();
    assert!(out.value < 1e-20);
    assert!(out.grads.values().all(|v| v.abs() < 1e-10));
}

#[test]
fn input_grad_penalty_rejects_nan_params() {
    let spec = MlpSpec::new(4, vec![3], 1, Activation::Tanh).unwrap();
    let mut p = init_params(&spec, 0).unwrap();
    p.entries_mut()[0].values_mut()[0] = f64::NAN;
    let s = Array2::zeros((2, 2));
    let r = grad_params_through_input_grad(&p, &spec, s.view(), s.view(), eikonal_penalty(Array2::ones((2, 1))));
    assert!(r.is_err());
}

#[test]
fn pure_functions_repeat_exactly() {
    let spec = MlpSpec::new(4, vec![6, 6], 1, Activation::Softplus).unwrap();
    let p = init_params(&spec, 3).unwrap();
    let x = concat_inputs(Array2::from_elem((3, 2), 0.2).view(), Array2::from_elem((3, 2), -0.4).view()).unwrap();
    let y = Array2::from_elem((3, 1), 0.5);
    let a = grad_params(&p, composite_loss(0, &spec, &x, &y)).unwrap();
    let b = grad_params(&p, composite_loss(0, &spec, &x, &y)).unwrap();
    assert_eq!(a.0.to_bits(), b.0.to_bits());
    assert_eq!(a.1, b.1);
}
