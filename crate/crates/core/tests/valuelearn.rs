use eikgcrl::diffcore::{Activation, AdamState, NORM_EPS};
use eikgcrl::mazeworld::{generate_navigate_with_len, Dataset, GoalMix, MazeSpec};
use eikgcrl::valuelearn::{
    combined_value_step, eikonal_penalty, eikonal_penalty_with_speed, hamiltonian_bound_check, hjb_penalty,
    states_matrix, td_value_loss, Batch, InputNorm, Regularizer, SpeedProfile, SpeedProfileKind, TabularChain,
    TrainConfig, ValueField,
};
use ndarray::{Array1, Array2};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn dataset() -> Dataset {
    generate_navigate_with_len(&MazeSpec::builtin("medium").unwrap(), 8, 150, 2).unwrap()
}

fn field(maze: &MazeSpec, seed: u64) -> ValueField {
    ValueField::new(&[16, 16], Activation::Tanh, InputNorm::for_maze(maze), seed).unwrap()
}

fn constant_field(maze: &MazeSpec, c: f64) -> ValueField {
    let mut v = field(maze, 0);
    v.online.scale(0.0);
    let last = v.spec.num_layers() - 1;
    v.online.get_mut(&eikgcrl::diffcore::MlpSpec::bias_name(last)).unwrap().values_mut()[0] = c;
    v.target = v.online.clone();
    v
}

#[test]
fn zero_value_loss_away_from_goal() {
    let d = dataset();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mix = GoalMix {
        p_current: 0.0,
        p_future: 0.0,
        p_random: 1.0,
    };
    let mut b = Batch::sample(&d, 256, mix, 0.01, 10, &mut rng).unwrap();
    // keep rows whose goal is outside the radius
    let keep: Vec<usize> = (0..b.len()).filter(|&i| b.done[i] == 0.0).collect();
    assert!(keep.len() > 100);
    b = subset(&b, &keep);
    // residual = −1 + γ·0 − 0 < 0, so the weight is 1 − ι
    let v = constant_field(&d.maze, 0.0);
    let l = td_value_loss(&v, &b, &TrainConfig::default()).unwrap();
    assert!((l.loss - 0.3).abs() < 1e-12);
}

fn subset(b: &Batch, rows: &[usize]) -> Batch {
    let pick2 = |m: &Array2<f64>| Array2::from_shape_fn((rows.len(), 2), |(i, j)| m[[rows[i], j]]);
    let pick1 = |m: &Array1<f64>| rows.iter().map(|&i| m[i]).collect::<Array1<f64>>();
    Batch {
        indices: rows.iter().map(|&i| b.indices[i]).collect(),
        s: pick2(&b.s),
        a: pick2(&b.a),
        s_next: pick2(&b.s_next),
        g: pick2(&b.g),
        s_k: pick2(&b.s_k),
        reward: pick1(&b.reward),
        done: pick1(&b.done),
    }
}

#[test]
fn reached_goal_masks_bootstrap() {
    let d = dataset();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mix = GoalMix {
        p_current: 1.0,
        p_future: 0.0,
        p_random: 0.0,
    };
    let b = Batch::sample(&d, 64, mix, 0.01, 10, &mut rng).unwrap();
    assert!(b.done.iter().all(|&x| x == 1.0));
    // residual = 0 − V = −2 for every row; weight 1 − ι
    let v = constant_field(&d.maze, 2.0);
    let l = td_value_loss(&v, &b, &TrainConfig::default()).unwrap();
    assert!((l.loss - 0.3 * 4.0).abs() < 1e-12);
}

/// Dense Gaussian elimination for `(I − γP)V = r` on the non-terminal states.
fn on_policy_values(chain: &TabularChain, gamma: f64) -> Vec<f64> {
    let n = chain.len();
    let mut a = vec![vec![0.0; n + 1]; n];
    for s in 0..n {
        a[s][s] = 1.0;
        for o in &chain.outcomes[s] {
            a[s][n] += o.prob * o.reward;
            if !o.done {
                a[s][o.next] -= gamma * o.prob;
            }
        }
    }
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
        a.swap(c, p);
        for r in 0..n {
            if r != c {
                let f = a[r][c] / a[c][c];
                for k in c..=n {
                    a[r][k] -= f * a[c][k];
                }
            }
        }
    }
    (0..n).map(|i| a[i][n] / a[i][i]).collect()
}

#[test]
fn tabular_median_expectile_matches_linear_solve() {
    for (n, p_left, gamma) in [(8, 0.7, 0.99), (12, 0.55, 0.95), (5, 0.9, 1.0)] {
        let c = TabularChain::corridor(n, p_left).unwrap();
        let v = c.expectile_fixed_point(gamma, 0.5, 1e-13, 1_000_000).unwrap();
        let exact = on_policy_values(&c, gamma);
        let err = v.iter().zip(&exact).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-6, "n={n}: max error {err}");
    }
}

#[test]
fn upper_expectile_exceeds_mean_on_stochastic_corridor() {
    let c = TabularChain::corridor(8, 0.7).unwrap();
    let mean = c.expectile_fixed_point(0.99, 0.5, 1e-12, 1_000_000).unwrap();
    let upper = c.expectile_fixed_point(0.99, 0.9, 1e-12, 1_000_000).unwrap();
    assert!(upper.iter().zip(&mean).skip(1).all(|(u, m)| u > m));
}

#[test]
fn exact_steps_to_go_has_zero_td_loss() {
    let c = TabularChain::corridor(10, 1.0).unwrap();
    let v: Vec<f64> = (0..10).map(|i| -(i as f64)).collect();
    assert_eq!(c.td_loss(&v, 1.0, 0.7), 0.0);
}

#[test]
fn discounted_path_value() {
    // value of a 10-step path with −1 per step
    let v = TabularChain::corridor(11, 1.0)
        .unwrap()
        .expectile_fixed_point(0.99, 0.7, 1e-14, 10_000)
        .unwrap();
    let closed = -(1.0 - 0.99f64.powi(10)) / (1.0 - 0.99);
    assert!((v[10] - closed).abs() < 1e-12);
    assert!((v[10] - (-9.561792499119552)).abs() < 1e-12);
}

fn perturbed_loss(v: &ValueField, b: &Batch, cfg: &TrainConfig, idx: usize, h: f64) -> f64 {
    let mut w = v.clone();
    let mut flat = w.online.flatten();
    flat[idx] += h;
    w.online.assign_flat(&flat).unwrap();
    td_value_loss(&w, b, cfg).unwrap().loss
}

#[test]
fn td_gradient_matches_central_differences() {
    let d = dataset();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let b = Batch::sample(&d, 32, GoalMix::default(), 0.05, 10, &mut rng).unwrap();
    let mut v = field(&d.maze, 3);
    v.target.scale(0.8);
    let cfg = TrainConfig::default();
    let l = td_value_loss(&v, &b, &cfg).unwrap();
    let g = l.grads.flatten();
    for idx in (0..g.len()).step_by(7) {
        let h = 1e-5;
        let fd = (perturbed_loss(&v, &b, &cfg, idx, h) - perturbed_loss(&v, &b, &cfg, idx, -h)) / (2.0 * h);
        let err = (g[idx] - fd).abs() / g[idx].abs().max(fd.abs()).max(1e-4);
        assert!(err < 1e-5, "coordinate {idx}: {} vs {fd}", g[idx]);
    }
}

/// `∇ₛV` by central differences of the field in maze coordinates.
fn numeric_state_grad(v: &ValueField, s: [f64; 2], g: [f64; 2]) -> [f64; 2] {
    let h = 1e-5;
    let f = |x: [f64; 2]| v.value(x, g).unwrap();
    [
        (f([s[0] + h, s[1]]) - f([s[0] - h, s[1]])) / (2.0 * h),
        (f([s[0], s[1] + h]) - f([s[0], s[1] - h])) / (2.0 * h),
    ]
}

#[test]
fn penalties_match_numeric_state_gradients() {
    let m = MazeSpec::builtin("large").unwrap();
    let v = field(&m, 9);
    let d = generate_navigate_with_len(&m, 4, 80, 1).unwrap();
    let tr = &d.transitions()[..40];
    let s = states_matrix(&tr.iter().map(|t| t.state).collect::<Vec<_>>());
    let sn = states_matrix(&tr.iter().map(|t| t.next_state).collect::<Vec<_>>());
    let g = states_matrix(&tr.iter().rev().map(|t| t.next_state).collect::<Vec<_>>());
    let profile = SpeedProfile::new(SpeedProfileKind::Exp, 0.4, 4.0, 1.0, 0.1).unwrap();
    let mut eik = 0.0;
    let mut hjb = 0.0;
    for i in 0..tr.len() {
        let gi = [g[[i, 0]], g[[i, 1]]];
        let gr = numeric_state_grad(&v, tr[i].state, gi);
        let sp = profile.eval(m.nearest_obstacle_distance(tr[i].state));
        eik += ((gr[0] * gr[0] + gr[1] * gr[1] + NORM_EPS).sqrt() * sp - 1.0).powi(2);
        let dx = [tr[i].next_state[0] - tr[i].state[0], tr[i].next_state[1] - tr[i].state[1]];
        hjb += (gr[0] * dx[0] + gr[1] * dx[1] - 1.0).powi(2);
    }
    let n = tr.len() as f64;
    let e = eikonal_penalty(&v, s.view(), g.view(), &profile, &m).unwrap();
    let h = hjb_penalty(&v, s.view(), sn.view(), g.view()).unwrap();
    assert!((e.value - eik / n).abs() < 1e-8, "{} vs {}", e.value, eik / n);
    assert!((h.value - hjb / n).abs() < 1e-8, "{} vs {}", h.value, hjb / n);
}

fn run_steps(cfg: &TrainConfig, steps: usize) -> ValueField {
    let d = dataset();
    let mut v = field(&d.maze, cfg.seed);
    let mut opt = AdamState::new(&v.online);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let profile = SpeedProfile::for_maze(cfg, &d.maze).unwrap();
    for _ in 0..steps {
        let b = Batch::sample(&d, cfg.batch_size, cfg.value_goal_mix, cfg.geometric_p(), cfg.subgoal_k, &mut rng).unwrap();
        combined_value_step(&mut v, &mut opt, &b, cfg, &profile, &d.maze, false).unwrap();
    }
    v
}

#[test]
fn zero_weight_regularizer_is_bitwise_unregularized() {
    let base = TrainConfig {
        batch_size: 32,
        seed: 5,
        ..TrainConfig::default()
    };
    let none = run_steps(
        &TrainConfig {
            regularizer: Regularizer::None,
            ..base.clone()
        },
        30,
    );
    for reg in [Regularizer::Eikonal, Regularizer::Hjb] {
        let zero = run_steps(
            &TrainConfig {
                regularizer: reg,
                lambda_eik: 0.0,
                ..base.clone()
            },
            30,
        );
        assert_eq!(zero.online.flatten().iter().map(|x| x.to_bits()).collect::<Vec<_>>(), none.online.flatten().iter().map(|x| x.to_bits()).collect::<Vec<_>>());
        assert_eq!(zero.target, none.target);
    }
    let eik = run_steps(&base, 30);
    assert_ne!(eik.online, none.online);
}

#[test]
fn eikonal_training_pulls_gradient_norm_toward_one() {
    let d = dataset();
    let cfg = TrainConfig {
        batch_size: 64,
        lr_v: 1e-3,
        ..TrainConfig::default()
    };
    let mut v = field(&d.maze, 0);
    let mut opt = AdamState::new(&v.online);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let profile = SpeedProfile::unit();
    let mut first = None;
    let mut last = 0.0;
    for _ in 0..1000 {
        let b = Batch::sample(&d, cfg.batch_size, cfg.value_goal_mix, cfg.geometric_p(), cfg.subgoal_k, &mut rng).unwrap();
        let m = combined_value_step(&mut v, &mut opt, &b, &cfg, &profile, &d.maze, true).unwrap();
        first.get_or_insert(m.penalty);
        last = m.penalty;
        assert!(m.mean_grad_norm.is_some());
    }
    assert!(last < 0.5 * first.unwrap(), "penalty {} -> {last}", first.unwrap());
}

#[test]
fn hamiltonian_fuzz_suite() {
    let r = hamiltonian_bound_check(100_000, &mut ChaCha8Rng::seed_from_u64(2024));
    assert_eq!(r.violations, 0, "{:?}", r.counterexample);
    assert!(r.isotropic_order >= 1.0, "order {}", r.isotropic_order);
    assert!(r.passed);
}

fn linear_field(w: [f64; 2]) -> ValueField {
    let mut v = ValueField::new(&[], Activation::Tanh, InputNorm::identity(), 0).unwrap();
    v.online.get_mut("dense0.weight").unwrap().values_mut().copy_from_slice(&[w[0], w[1], 0.0, 0.0]);
    v.target = v.online.clone();
    v
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn eikonal_penalty_nonnegative_and_scale_shifts_zero_set(
        c in 0.1f64..10.0,
        angle in 0.0f64..std::f64::consts::TAU,
        wx in -5.0f64..5.0,
        wy in -5.0f64..5.0,
        sx in -3.0f64..3.0,
        sy in -3.0f64..3.0,
    ) {
        let s = states_matrix(&[[sx, sy], [sy, sx]]);
        let g = states_matrix(&[[0.0, 0.0], [1.0, 1.0]]);
        let speed = Array2::from_elem((2, 1), c);
        let arbitrary = eikonal_penalty_with_speed(&linear_field([wx, wy]), s.view(), g.view(), speed.clone()).unwrap();
        prop_assert!(arbitrary.value >= 0.0);
        let on_zero_set = linear_field([angle.cos() / c, angle.sin() / c]);
        let p = eikonal_penalty_with_speed(&on_zero_set, s.view(), g.view(), speed).unwrap();
        prop_assert!(p.value < 1e-20);
    }

    #[test]
    fn polyak_step_moves_target_at_most_tau_gap(seed in 0u64..50, tau in 0.0f64..=1.0) {
        let d = dataset();
        let mut v = field(&d.maze, seed);
        v.target.scale(-0.5);
        let before = v.clone();
        let cfg = TrainConfig { batch_size: 16, tau, ..TrainConfig::default() };
        let mut opt = AdamState::new(&v.online);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let b = Batch::sample(&d, 16, cfg.value_goal_mix, cfg.geometric_p(), 10, &mut rng).unwrap();
        combined_value_step(&mut v, &mut opt, &b, &cfg, &SpeedProfile::unit(), &d.maze, false).unwrap();
        for ((t1, t0), o1) in v.target.flatten().iter().zip(before.target.flatten()).zip(v.online.flatten()) {
            prop_assert!((t1 - t0).abs() <= tau * (o1 - t0).abs() + 1e-15);
        }
    }
}
