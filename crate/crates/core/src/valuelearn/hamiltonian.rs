use std::f64::consts::TAU;

use rand::Rng;
use serde::Serialize;

pub const BOUND_TOLERANCE: f64 = 1e-9;

/// `min_a [c(a) + p·f(a)]` over a finite action set.
pub fn hamiltonian(costs: &[f64], dyn_vectors: &[[f64; 2]], p: [f64; 2]) -> f64 {
    costs
        .iter()
        .zip(dyn_vectors)
        .map(|(c, f)| c + p[0] * f[0] + p[1] * f[1])
        .fold(f64::INFINITY, f64::min)
}

/// Right-hand side `c* + ‖p‖·F*`.
pub fn hamiltonian_upper_bound(costs: &[f64], dyn_vectors: &[[f64; 2]], p: [f64; 2]) -> f64 {
    let c_star = costs.iter().copied().fold(f64::INFINITY, f64::min);
    let f_star = dyn_vectors.iter().map(|f| f[0].hypot(f[1])).fold(0.0, f64::max);
    c_star + p[0].hypot(p[1]) * f_star
}

/// Constant cost over `n` unit actions evenly spaced from angle `phase`.
pub fn isotropic_hamiltonian(cost: f64, p: [f64; 2], n: usize, phase: f64) -> f64 {
    let actions: Vec<[f64; 2]> = (0..n)
        .map(|i| {
            let t = phase + TAU * i as f64 / n as f64;
            [t.cos(), t.sin()]
        })
        .collect();
    hamiltonian(&vec![cost; n], &actions, p)
}

#[derive(Clone, Debug, Serialize)]
pub struct BoundCounterexample {
    pub costs: Vec<f64>,
    pub dyn_vectors: Vec<[f64; 2]>,
    pub grad: [f64; 2],
    pub hamiltonian: f64,
    pub bound: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct HamiltonianReport {
    pub instances: usize,
    pub violations: usize,
    pub max_excess: f64,
    pub counterexample: Option<BoundCounterexample>,
    /// `(number of actions, worst |H − (c* − ‖∇V‖)|)` over random gradients.
    pub isotropic_errors: Vec<(usize, f64)>,
    /// Least-squares slope of log error against log action count.
    pub isotropic_order: f64,
    pub passed: bool,
}

/// Fuzzes the bound on random finite action sets and checks the isotropic limit.
pub fn hamiltonian_bound_check(n_samples: usize, rng: &mut impl Rng) -> HamiltonianReport {
    let mut violations = 0;
    let mut max_excess = f64::NEG_INFINITY;
    let mut counterexample = None;
    for i in 0..n_samples {
        let n = rng.random_range(1..=12);
        let scale = 10f64.powf(rng.random_range(-3.0..3.0));
        let costs: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
        // every eighth instance uses degenerate dynamics
        let dyn_vectors: Vec<[f64; 2]> = (0..n)
            .map(|_| {
                if i % 8 == 0 {
                    [0.0, 0.0]
                } else {
                    [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)]
                }
            })
            .collect();
        let p = [rng.random_range(-1.0..1.0) * scale, rng.random_range(-1.0..1.0) * scale];
        let h = hamiltonian(&costs, &dyn_vectors, p);
        let bound = hamiltonian_upper_bound(&costs, &dyn_vectors, p);
        let excess = h - bound;
        max_excess = max_excess.max(excess);
        if excess > BOUND_TOLERANCE * (1.0 + bound.abs()) {
            violations += 1;
            if counterexample.is_none() {
                counterexample = Some(BoundCounterexample {
                    costs,
                    dyn_vectors,
                    grad: p,
                    hamiltonian: h,
                    bound,
                });
            }
        }
    }

    let grads: Vec<([f64; 2], f64, f64)> = (0..64)
        .map(|_| {
            let r = rng.random_range(0.1..10.0);
            let t = rng.random_range(0.0..TAU);
            ([r * t.cos(), r * t.sin()], rng.random_range(-2.0..2.0), rng.random_range(0.0..TAU))
        })
        .collect();
    let mut isotropic_errors = Vec::new();
    for n in [8usize, 16, 32, 64, 128, 256, 512] {
        let worst = grads
            .iter()
            .map(|(p, c, phase)| (isotropic_hamiltonian(*c, *p, n, *phase) - (c - p[0].hypot(p[1]))).abs())
            .fold(0.0, f64::max);
        isotropic_errors.push((n, worst));
    }
    let isotropic_order = -log_log_slope(&isotropic_errors);
    let monotone = isotropic_errors.windows(2).all(|w| w[1].1 <= w[0].1);
    HamiltonianReport {
        instances: n_samples,
        violations,
        max_excess,
        counterexample,
        passed: violations == 0 && monotone && isotropic_order >= 1.0 - 1e-6,
        isotropic_errors,
        isotropic_order,
    }
}

fn log_log_slope(points: &[(usize, f64)]) -> f64 {
    let xs: Vec<f64> = points.iter().map(|(n, _)| (*n as f64).ln()).collect();
    let ys: Vec<f64> = points.iter().map(|(_, e)| e.max(f64::MIN_POSITIVE).ln()).collect();
    let mx = xs.iter().sum::<f64>() / xs.len() as f64;
    let my = ys.iter().sum::<f64>() / ys.len() as f64;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}
