use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::controller::Controller;
use crate::error::{Error, Result};
use crate::mazeworld::{clip_action, dynamics, jittered_center, reward, Cell, MazeSpec, State};

/// Environment variable capping evaluation worker threads.
pub const THREADS_ENV: &str = "EIKGCRL_THREADS";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GoalResult {
    pub goal_cell: [usize; 2],
    pub goal: State,
    pub successes: usize,
    pub success_rate: f64,
    /// Mean steps to success over successful episodes.
    pub mean_steps: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub maze: String,
    pub seed: u64,
    pub episodes_per_goal: usize,
    pub max_steps: usize,
    pub goals: Vec<GoalResult>,
    /// Mean and sample standard deviation of the per-goal success rates, in percent.
    pub mean: f64,
    pub std: f64,
}

/// Aggregate of per-seed mean success rates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub per_seed: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

/// Horizon of roughly three oracle path lengths for the built-in maze sizes.
pub fn default_max_steps(maze: &MazeSpec) -> usize {
    match maze.width().max(maze.height()) {
        0..=7 => 200,
        8..=11 => 400,
        _ => 600,
    }
}

/// Mean and sample standard deviation (0 for fewer than two values).
pub fn mean_std(x: &[f64]) -> (f64, f64) {
    if x.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    if x.len() < 2 {
        return (m, 0.0);
    }
    let var = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, var.sqrt())
}

pub fn summarize_seeds(reports: &[EvalReport]) -> SeedSummary {
    let per_seed: Vec<f64> = reports.iter().map(|r| r.mean).collect();
    let (mean, std) = mean_std(&per_seed);
    SeedSummary { per_seed, mean, std }
}

/// Distinct goal cells drawn from the free cells.
pub fn sample_eval_goals(maze: &MazeSpec, n_goals: usize, seed: u64) -> Result<Vec<Cell>> {
    let free = maze.free_cells();
    if n_goals == 0 || n_goals > free.len() {
        return Err(Error::Config(format!("cannot draw {n_goals} distinct goals from {} free cells", free.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(sample(&mut rng, free.len(), n_goals).into_iter().map(|i| free[i]).collect())
}

/// Worker count from `EIKGCRL_THREADS`, else the available parallelism.
pub fn worker_count() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
}

fn run_goal(controller: &dyn Controller, maze: &MazeSpec, goal_cell: Cell, index: usize, episodes: usize, max_steps: usize, seed: u64) -> Result<GoalResult> {
    let goal = maze.cell_center(goal_cell);
    let starts_from: Vec<Cell> = maze.free_cells().into_iter().filter(|&c| c != goal_cell).collect();
    if starts_from.is_empty() {
        return Err(Error::Config("no free start cell besides the goal".into()));
    }
    let mut states: Vec<State> = (0..episodes)
        .map(|e| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(1 + (index * episodes + e) as u64);
            let c = starts_from[rng.random_range(0..starts_from.len())];
            jittered_center(maze, c, &mut rng)
        })
        .collect();
    let mut action_rng = ChaCha8Rng::seed_from_u64(seed);
    action_rng.set_stream(u64::MAX - index as u64);
    // same test as the training reward
    let reached = |s: State| reward(s, goal, maze.goal_radius()) == 0.0;
    let mut finished: Vec<Option<usize>> = vec![None; episodes];
    let mut active: Vec<usize> = (0..episodes).collect();
    for step in 1..=max_steps {
        if active.is_empty() {
            break;
        }
        let batch: Vec<State> = active.iter().map(|&e| states[e]).collect();
        let actions = controller.act_batch(&batch, goal, &mut action_rng)?;
        if actions.len() != batch.len() {
            return Err(Error::Dimension {
                what: "controller actions",
                expected: batch.len(),
                got: actions.len(),
            });
        }
        for (&e, a) in active.iter().zip(&actions) {
            if !(a[0].is_finite() && a[1].is_finite()) {
                return Err(Error::NonFinite("controller action".into()));
            }
            states[e] = dynamics(states[e], clip_action(*a, maze.a_max()), maze);
            if reached(states[e]) {
                finished[e] = Some(step);
            }
        }
        active.retain(|&e| finished[e].is_none());
    }
    let steps: Vec<f64> = finished.iter().flatten().map(|&s| s as f64).collect();
    Ok(GoalResult {
        goal_cell: [goal_cell.0, goal_cell.1],
        goal,
        successes: steps.len(),
        success_rate: 100.0 * steps.len() as f64 / episodes as f64,
        mean_steps: (!steps.is_empty()).then(|| steps.iter().sum::<f64>() / steps.len() as f64),
    })
}

/// Rolls out `episodes_per_goal` episodes to each of `n_goals` random goal cells.
/// Episodes start uniformly in free cells other than the goal's; success is
/// reaching the goal radius within `max_steps`. The result depends only on the
/// controller, the maze and `seed`.
pub fn evaluate(controller: &dyn Controller, maze: &MazeSpec, n_goals: usize, episodes_per_goal: usize, max_steps: usize, seed: u64) -> Result<EvalReport> {
    if episodes_per_goal == 0 || max_steps == 0 {
        return Err(Error::Config("episodes per goal and max steps must be positive".into()));
    }
    let goals = sample_eval_goals(maze, n_goals, seed)?;
    let workers = worker_count().min(goals.len()).max(1);
    let mut results: Vec<Option<Result<GoalResult>>> = (0..goals.len()).map(|_| None).collect();
    std::thread::scope(|scope| {
        let chunks = results.chunks_mut(goals.len().div_ceil(workers));
        let mut offset = 0;
        for chunk in chunks {
            let start = offset;
            offset += chunk.len();
            let goals = &goals;
            scope.spawn(move || {
                for (k, slot) in chunk.iter_mut().enumerate() {
                    let i = start + k;
                    *slot = Some(run_goal(controller, maze, goals[i], i, episodes_per_goal, max_steps, seed));
                }
            });
        }
    });
    let goals: Vec<GoalResult> = results.into_iter().map(|r| r.expect("every goal evaluated")).collect::<Result<_>>()?;
    let rates: Vec<f64> = goals.iter().map(|g| g.success_rate).collect();
    let (mean, std) = mean_std(&rates);
    Ok(EvalReport {
        maze: maze.name.clone(),
        seed,
        episodes_per_goal,
        max_steps,
        goals,
        mean,
        std,
    })
}
