use eikgcrl::mazeworld::{
    dynamics, generate_navigate_dataset, generate_navigate_with_len, generate_stitch_dataset, point_rect_distance,
    reward, sample_goal, Dataset, GoalMix, GoalSource, MazeSpec, BUILTIN_MAZES,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

/// Exhaustive scan over every wall cell.
fn brute_force_distance(maze: &MazeSpec, s: [f64; 2]) -> f64 {
    maze.wall_cells()
        .into_iter()
        .map(|(c, r)| point_rect_distance(s, c, r, maze.cell_size))
        .fold(f64::INFINITY, f64::min)
}

fn random_free_state(maze: &MazeSpec, rng: &mut ChaCha8Rng) -> [f64; 2] {
    let e = maze.extent();
    loop {
        let s = [rng.random_range(0.0..e[0]), rng.random_range(0.0..e[1])];
        if maze.is_valid_state(s) {
            return s;
        }
    }
}

#[test]
fn obstacle_distance_matches_brute_force() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for name in BUILTIN_MAZES {
        let m = MazeSpec::builtin(name).unwrap();
        for _ in 0..2000 {
            let s = random_free_state(&m, &mut rng);
            assert_eq!(m.nearest_obstacle_distance(s), brute_force_distance(&m, s));
        }
    }
}

#[test]
fn obstacle_distance_zero_on_wall_face() {
    let m = MazeSpec::builtin("medium").unwrap();
    // left face of the free cell (1, 1) touches the boundary wall
    assert_eq!(m.nearest_obstacle_distance([4.0, 6.0]), 0.0);
    assert!(m.nearest_obstacle_distance([6.0, 6.0]) > 0.0);
}

#[test]
fn navigate_dataset_is_replayable_and_long() {
    let m = MazeSpec::builtin("medium").unwrap();
    let d = generate_navigate_dataset(&m, 100, 3).unwrap();
    for t in d.transitions() {
        assert_eq!(dynamics(t.state, t.action, &m), t.next_state);
        assert!(m.is_valid_state(t.state) && m.is_valid_state(t.next_state));
    }
    let mut total = 0.0;
    for id in 0..d.num_trajectories() {
        total += d
            .trajectory(id)
            .iter()
            .map(|t| (t.next_state[0] - t.state[0]).hypot(t.next_state[1] - t.state[1]))
            .sum::<f64>();
    }
    let mean_cells = total / d.num_trajectories() as f64 / m.cell_size;
    assert!(mean_cells > m.diameter() as f64 / 2.0, "mean length {mean_cells} cells");
}

#[test]
fn same_seed_gives_identical_files() {
    let m = MazeSpec::builtin("medium").unwrap();
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    generate_navigate_with_len(&m, 10, 120, 9).unwrap().save(&a).unwrap();
    generate_navigate_with_len(&m, 10, 120, 9).unwrap().save(&b).unwrap();
    let read = |p: &std::path::Path, ext: &str| std::fs::read(p.with_extension(ext)).unwrap();
    assert_eq!(read(&a, "csv"), read(&b, "csv"));
    assert_eq!(read(&a, "json"), read(&b, "json"));
    generate_navigate_with_len(&m, 10, 120, 10).unwrap().save(&b).unwrap();
    assert_ne!(read(&a, "csv"), read(&b, "csv"));
}

#[test]
fn saved_dataset_reloads_bit_exact_and_replays() {
    let m = MazeSpec::builtin("large").unwrap();
    let d = generate_stitch_dataset(&m, 40, 4, 1).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("stitch.csv");
    d.save(&p).unwrap();
    let back = Dataset::load(&p).unwrap();
    assert_eq!(back.transitions(), d.transitions());
    assert_eq!(back.manifest, d.manifest);
    for t in back.transitions() {
        assert_eq!(dynamics(t.state, t.action, &back.maze), t.next_state);
    }
}

#[test]
fn stitch_segments_short_and_coverage_high() {
    for name in BUILTIN_MAZES {
        let m = MazeSpec::builtin(name).unwrap();
        let n = 20 * m.free_cells().len();
        let d = generate_stitch_dataset(&m, n, 4, 11).unwrap();
        for id in 0..d.num_trajectories() {
            let tr = d.trajectory(id);
            let a = m.cell_of(tr[0].state).unwrap();
            let b = m.cell_of(tr[tr.len() - 1].next_state).unwrap();
            assert!(m.cell_distance(a, b).unwrap() <= 4);
        }
        for t in d.transitions() {
            assert_eq!(dynamics(t.state, t.action, &m), t.next_state);
        }
        assert!(d.coverage() >= 0.9, "{name}: coverage {}", d.coverage());
    }
}

#[test]
fn disconnected_maze_rejected_by_generators() {
    let m = MazeSpec::parse("split", "#####\n#.#.#\n#.#.#\n#####", 1.0).unwrap();
    assert!(generate_navigate_dataset(&m, 2, 0).is_err());
    assert!(generate_stitch_dataset(&m, 2, 4, 0).is_err());
}

fn small_dataset() -> Dataset {
    generate_navigate_with_len(&MazeSpec::builtin("medium").unwrap(), 30, 100, 4).unwrap()
}

#[test]
fn current_goals_equal_state_with_zero_reward() {
    let d = small_dataset();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let idx: Vec<usize> = (0..d.len()).step_by(7).collect();
    let mix = GoalMix {
        p_current: 1.0,
        p_future: 0.0,
        p_random: 0.0,
    };
    let goals = sample_goal(&idx, &d, mix, 0.01, &mut rng).unwrap();
    for (i, g) in idx.iter().zip(&goals) {
        assert_eq!(g.goal, d.transitions()[*i].state);
        assert_eq!(reward(d.transitions()[*i].state, g.goal, d.maze.goal_radius()), 0.0);
    }
}

#[test]
fn future_goals_share_trajectory_and_lie_ahead() {
    let d = small_dataset();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let idx: Vec<usize> = (0..d.len()).collect();
    let mix = GoalMix {
        p_current: 0.0,
        p_future: 1.0,
        p_random: 0.0,
    };
    for p in [0.01, 0.3, 1.0] {
        let goals = sample_goal(&idx, &d, mix, p, &mut rng).unwrap();
        for (i, g) in idx.iter().zip(&goals) {
            let t = &d.transitions()[*i];
            assert_eq!(g.source, GoalSource::Future);
            assert_eq!(g.traj_id, t.traj_id);
            assert!(g.step > t.step);
            assert_eq!(g.goal, d.state_at(t.traj_id, g.step));
        }
    }
}

#[test]
fn random_goal_marginal_matches_state_marginal() {
    let d = small_dataset();
    let m = &d.maze;
    let cells = m.free_cells();
    let index_of = |s: [f64; 2]| cells.iter().position(|&c| Some(c) == m.cell_of(s)).unwrap();
    let mut expected = vec![0.0; cells.len()];
    for t in d.transitions() {
        expected[index_of(t.state)] += 1.0;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let n = 50_000;
    let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..d.len())).collect();
    let mix = GoalMix {
        p_current: 0.0,
        p_future: 0.0,
        p_random: 1.0,
    };
    let goals = sample_goal(&idx, &d, mix, 0.01, &mut rng).unwrap();
    let mut observed = vec![0.0; cells.len()];
    for g in &goals {
        observed[index_of(g.goal)] += 1.0;
    }
    let total: f64 = expected.iter().sum();
    let mut chi2 = 0.0;
    let mut dof = 0usize;
    for (o, e) in observed.iter().zip(&expected) {
        if *e > 0.0 {
            let e = e / total * n as f64;
            chi2 += (o - e).powi(2) / e;
            dof += 1;
        }
    }
    let p = 1.0 - ChiSquared::new((dof - 1) as f64).unwrap().cdf(chi2);
    assert!(p > 0.01, "chi2 {chi2} dof {} p {p}", dof - 1);
}

#[test]
fn default_mix_hits_all_sources() {
    let d = small_dataset();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let idx: Vec<usize> = (0..10_000).map(|i| i % d.len()).collect();
    let goals = sample_goal(&idx, &d, GoalMix::default(), 0.01, &mut rng).unwrap();
    let frac = |s: GoalSource| goals.iter().filter(|g| g.source == s).count() as f64 / goals.len() as f64;
    assert!((frac(GoalSource::Current) - 0.2).abs() < 0.02);
    assert!((frac(GoalSource::Future) - 0.5).abs() < 0.02);
    assert!((frac(GoalSource::Random) - 0.3).abs() < 0.02);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn obstacle_distance_is_nonnegative_and_lipschitz(
        a in (0.0f64..1.0, 0.0f64..1.0),
        b in (0.0f64..1.0, 0.0f64..1.0),
        which in 0usize..3,
    ) {
        let m = MazeSpec::builtin(BUILTIN_MAZES[which]).unwrap();
        let e = m.extent();
        let s1 = [a.0 * e[0], a.1 * e[1]];
        let s2 = [b.0 * e[0], b.1 * e[1]];
        let d1 = m.nearest_obstacle_distance(s1);
        let d2 = m.nearest_obstacle_distance(s2);
        prop_assert!(d1 >= 0.0 && d2 >= 0.0);
        prop_assert!((d1 - d2).abs() <= (s1[0] - s2[0]).hypot(s1[1] - s2[1]) + 1e-12);
    }

    #[test]
    fn dynamics_keeps_states_valid(
        u in (0.0f64..1.0, 0.0f64..1.0),
        angle in 0.0f64..std::f64::consts::TAU,
        frac in 0.0f64..=1.0,
        which in 0usize..3,
    ) {
        let m = MazeSpec::builtin(BUILTIN_MAZES[which]).unwrap();
        let free = m.free_cells();
        let cell = free[((u.0 * free.len() as f64) as usize).min(free.len() - 1)];
        let c = m.cell_center(cell);
        let s = [c[0] + (u.1 - 0.5) * 0.99 * m.cell_size, c[1] - (u.0 - 0.5) * 0.5 * m.cell_size];
        prop_assume!(m.is_valid_state(s));
        let a = [frac * m.a_max() * angle.cos(), frac * m.a_max() * angle.sin()];
        let next = dynamics(s, a, &m);
        prop_assert!(m.is_valid_state(next));
        prop_assert_eq!(dynamics(s, a, &m), next);
    }

    #[test]
    fn generation_is_pure(seed in 0u64..1000) {
        let m = MazeSpec::builtin("medium").unwrap();
        let a = generate_stitch_dataset(&m, 5, 3, seed).unwrap();
        let b = generate_stitch_dataset(&m, 5, 3, seed).unwrap();
        prop_assert_eq!(a.transitions(), b.transitions());
        for t in a.transitions() {
            prop_assert!(m.is_valid_state(t.state));
        }
    }
}
