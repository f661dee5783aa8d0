use std::time::{Duration, Instant};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use eikgcrl::diffcore::{
    forward, grad_input, grad_params, grad_params_through_input_grad, init_params, mlp_on_tape, Activation, MlpSpec,
    ParamVars, ParameterSet, Tape, Var, NORM_EPS,
};
use eikgcrl::error::Result;
use eikgcrl::mazeworld::{MazeSpec, BUILTIN_MAZES};
use eikgcrl::oracle::{dijkstra_reference, fast_march, SpeedGrid, DEFAULT_REFINE, DEFAULT_SUBDIVISION};
use eikgcrl::valuelearn::{hamiltonian_bound_check, HamiltonianReport};

const H: f64 = 1e-4;

pub const FIRST_ORDER_TOL: f64 = 1e-5;
pub const SECOND_ORDER_TOL: f64 = 1e-4;
pub const ORACLE_TOL: f64 = 0.03;

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Suite {
    Autodiff,
    Prop1,
    Oracle,
    All,
}

/// Relative error with a floor of 1e-4 on the magnitude.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-4)
}

#[derive(Clone, Debug, Serialize)]
pub struct AutodiffReport {
    pub param_cases: usize,
    pub param_max_rel_err: f64,
    pub input_cases: usize,
    pub input_max_rel_err: f64,
    pub second_order_cases: usize,
    pub second_order_max_rel_err: f64,
    pub seconds: f64,
}

impl AutodiffReport {
    pub fn passed(&self) -> bool {
        self.param_cases >= 100
            && self.input_cases >= 100
            && self.second_order_cases >= 100
            && self.param_max_rel_err < FIRST_ORDER_TOL
            && self.input_max_rel_err < FIRST_ORDER_TOL
            && self.second_order_max_rel_err < SECOND_ORDER_TOL
    }
}

fn random_matrix(rng: &mut ChaCha8Rng, n: usize, m: usize, scale: f64) -> Array2<f64> {
    Array2::from_shape_fn((n, m), |_| rng.random_range(-scale..scale))
}

fn central_diff(p: &ParameterSet, idx: usize, f: &dyn Fn(&ParameterSet) -> f64) -> f64 {
    let mut flat = p.flatten();
    let x = flat[idx];
    let mut q = p.clone();
    flat[idx] = x + H;
    q.assign_flat(&flat).expect("same layout");
    let up = f(&q);
    flat[idx] = x - H;
    q.assign_flat(&flat).expect("same layout");
    (up - f(&q)) / (2.0 * H)
}

fn regression_loss(kind: usize, spec: &MlpSpec, x: &Array2<f64>, y: &Array2<f64>) -> impl Fn(&mut Tape, &ParamVars) -> Result<Var> {
    let (spec, x, y) = (spec.clone(), x.clone(), y.clone());
    move |t, vars| {
        let xv = t.constant(x.clone());
        let yv = t.constant(y.clone());
        let out = mlp_on_tape(t, vars, &spec, xv)?;
        match kind {
            0 => {
                let d = t.sub(out, yv)?;
                let d2 = t.square(d);
                Ok(t.mean(d2))
            }
            1 => {
                // expectile-style asymmetric weights
                let d = t.sub(yv, out)?;
                let neg = t.clip(d, -1e9, 0.0);
                let neg2 = t.square(neg);
                let all2 = t.square(d);
                let a = t.scale(all2, 0.7);
                let b = t.scale(neg2, -0.4);
                let s = t.add(a, b)?;
                Ok(t.mean(s))
            }
            _ => {
                let w = t.clip(out, -2.0, 2.0);
                let w = t.exp(w);
                let d = t.sub(out, yv)?;
                let d2 = t.square(d);
                let wd = t.mul(w, d2)?;
                Ok(t.mean(wd))
            }
        }
    }
}

fn eikonal_on_tape(speed: Array2<f64>) -> impl FnOnce(&mut Tape, Var) -> Result<Var> {
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

fn penalty_from_input_grads(p: &ParameterSet, spec: &MlpSpec, s: &Array2<f64>, g: &Array2<f64>, speed: &Array2<f64>) -> f64 {
    let mut total = 0.0;
    for i in 0..s.nrows() {
        let gi = grad_input(p, spec, &[s[[i, 0]], s[[i, 1]]], &[g[[i, 0]], g[[i, 1]]]).expect("valid network");
        let norm = (gi.iter().map(|v| v * v).sum::<f64>() + NORM_EPS).sqrt();
        total += (norm * speed[[i, 0]] - 1.0).powi(2);
    }
    total / s.nrows() as f64
}

/// Engine derivatives against central differences on randomly shaped networks:
/// parameter gradients of regression losses, input gradients of `V(s, g)`, and
/// parameter gradients of the gradient-norm penalty.
pub fn autodiff_suite(cases: usize, seed: u64) -> Result<AutodiffReport> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut param_err: f64 = 0.0;
    for case in 0..cases {
        let act = if case % 2 == 0 { Activation::Tanh } else { Activation::Softplus };
        let din = rng.random_range(1..5);
        let spec = MlpSpec::new(din, vec![rng.random_range(2..7), rng.random_range(2..7)], rng.random_range(1..3), act)?;
        let params = init_params(&spec, rng.random())?;
        let n = rng.random_range(1..9);
        let x = random_matrix(&mut rng, n, din, 2.0);
        let y = random_matrix(&mut rng, n, spec.output_dim, 1.0);
        let kind = case % 3;
        let (_, grads) = grad_params(&params, regression_loss(kind, &spec, &x, &y))?;
        let f = |p: &ParameterSet| grad_params(p, regression_loss(kind, &spec, &x, &y)).map(|r| r.0).unwrap_or(f64::NAN);
        for (i, a) in grads.flatten().iter().enumerate() {
            param_err = param_err.max(rel_err(*a, central_diff(&params, i, &f)));
        }
    }
    let mut input_err: f64 = 0.0;
    for case in 0..cases {
        let act = if case % 2 == 0 { Activation::Tanh } else { Activation::Softplus };
        let spec = MlpSpec::new(4, vec![rng.random_range(3..10), rng.random_range(3..10)], 1, act)?;
        let p = init_params(&spec, rng.random())?;
        let s = [rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5)];
        let g = [rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5)];
        let grad = grad_input(&p, &spec, &s, &g)?;
        for k in 0..2 {
            let at = |d: f64| -> Result<f64> {
                let mut x = vec![s[0], s[1], g[0], g[1]];
                x[k] += d;
                Ok(forward(&p, &spec, &x)?[0])
            };
            let fd = (at(H)? - at(-H)?) / (2.0 * H);
            input_err = input_err.max(rel_err(grad[k], fd));
        }
    }
    let mut second_err: f64 = 0.0;
    for case in 0..cases {
        let act = if case % 2 == 0 { Activation::Tanh } else { Activation::Softplus };
        let spec = MlpSpec::new(4, vec![rng.random_range(3..9), rng.random_range(3..9)], 1, act)?;
        let mut p = init_params(&spec, rng.random())?;
        p.scale(1.7);
        let n = rng.random_range(2..6);
        let s = random_matrix(&mut rng, n, 2, 1.0);
        let g = random_matrix(&mut rng, n, 2, 1.0);
        let speed = Array2::from_shape_fn((n, 1), |_| rng.random_range(0.1..1.0));
        let out = grad_params_through_input_grad(&p, &spec, s.view(), g.view(), eikonal_on_tape(speed.clone()))?;
        let analytic = out.grads.flatten();
        let f = |q: &ParameterSet| penalty_from_input_grads(q, &spec, &s, &g, &speed);
        for _ in 0..12 {
            let i = rng.random_range(0..analytic.len());
            second_err = second_err.max(rel_err(analytic[i], central_diff(&p, i, &f)));
        }
    }
    Ok(AutodiffReport {
        param_cases: cases,
        param_max_rel_err: param_err,
        input_cases: cases,
        input_max_rel_err: input_err,
        second_order_cases: cases,
        second_order_max_rel_err: second_err,
        seconds: start.elapsed().as_secs_f64(),
    })
}

pub fn prop1_suite(samples: usize, seed: u64) -> Result<(HamiltonianReport, Duration)> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = hamiltonian_bound_check(samples, &mut rng);
    Ok((r, start.elapsed()))
}

#[derive(Clone, Debug, Serialize)]
pub struct MazeAgreement {
    pub maze: String,
    pub goals: usize,
    pub max_rel_err: f64,
    /// Goal and cell where the largest discrepancy occurs.
    pub worst: Option<([usize; 2], [usize; 2])>,
    pub scaling_exact: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct OracleReport {
    pub refine: usize,
    pub subdivision: usize,
    pub mazes: Vec<MazeAgreement>,
    pub max_rel_err: f64,
    pub scaling_exact: bool,
    pub seconds: f64,
}

impl OracleReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= ORACLE_TOL && self.scaling_exact
    }
}

/// Fast marching against the subdivided Dijkstra reference for every free goal
/// cell of every built-in maze, plus exactness of uniform speed scaling.
pub fn oracle_suite(refine: usize, subdivision: usize) -> Result<OracleReport> {
    let start = Instant::now();
    let mut mazes = Vec::new();
    for name in BUILTIN_MAZES {
        let maze = MazeSpec::builtin(name)?;
        let unit = SpeedGrid::uniform(&maze, refine, 1.0)?;
        let mut worst = 0.0;
        let mut worst_at = None;
        let free = maze.free_cells();
        for &goal in &free {
            let f = fast_march(&maze, goal, &unit)?;
            let d = dijkstra_reference(&maze, goal, &unit, subdivision)?;
            for &c in &free {
                let (a, b) = (f.time(c), d.time(c));
                if c == goal || (a.is_infinite() && b.is_infinite()) {
                    continue;
                }
                let e = (a - b).abs() / b;
                if !(e <= worst) {
                    worst = e;
                    worst_at = Some(([goal.0, goal.1], [c.0, c.1]));
                }
            }
        }
        let scaling_exact = scaling_is_exact(&maze, free[0], refine)?;
        mazes.push(MazeAgreement {
            maze: name.to_string(),
            goals: free.len(),
            max_rel_err: worst,
            worst: worst_at,
            scaling_exact,
        });
    }
    Ok(OracleReport {
        refine,
        subdivision,
        max_rel_err: mazes.iter().map(|m| m.max_rel_err).fold(0.0, f64::max),
        scaling_exact: mazes.iter().all(|m| m.scaling_exact),
        mazes,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Halving and doubling the speed doubles and halves every time bit for bit.
fn scaling_is_exact(maze: &MazeSpec, goal: (usize, usize), refine: usize) -> Result<bool> {
    let base = fast_march(maze, goal, &SpeedGrid::uniform(maze, refine, 1.0)?)?;
    for (speed, factor) in [(0.5, 2.0), (2.0, 0.5)] {
        let f = fast_march(maze, goal, &SpeedGrid::uniform(maze, refine, speed)?)?;
        let same = f.nodes.values.iter().zip(&base.nodes.values).all(|(a, b)| *a == b * factor || (a.is_infinite() && b.is_infinite()));
        if !same {
            return Ok(false);
        }
    }
    Ok(true)
}

pub fn default_oracle_suite() -> Result<OracleReport> {
    oracle_suite(DEFAULT_REFINE, DEFAULT_SUBDIVISION)
}
