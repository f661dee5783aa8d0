use std::fs;
use std::ops::Range;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Geometric, Normal};
use serde::{Deserialize, Serialize};

use super::dynamics::{clip_action, dynamics};
use super::maze::{Cell, MazeSpec, State};
use crate::error::{Error, Result};

pub const DATASET_FORMAT_VERSION: u32 = 1;

/// Controller noise as a fraction of `a_max`.
pub const NOISE_FRACTION: f64 = 0.2;

/// Distance to a waypoint, in cells, at which the controller moves on to the next one.
const WAYPOINT_TOLERANCE: f64 = 0.3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: State,
    pub action: [f64; 2],
    pub next_state: State,
    pub traj_id: usize,
    pub step: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Navigate,
    Stitch,
}

/// Sidecar metadata written next to the transitions CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub kind: DatasetKind,
    pub maze: String,
    pub cell_size: f64,
    pub layout: Vec<String>,
    pub n_traj: usize,
    pub seed: u64,
    pub episode_len: usize,
    pub max_segment_cells: usize,
    pub noise_fraction: f64,
    pub n_transitions: usize,
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub maze: MazeSpec,
    pub manifest: DatasetManifest,
    transitions: Vec<Transition>,
    /// `trajectories[id]` is the index range of trajectory `id`.
    trajectories: Vec<Range<usize>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GoalSource {
    Current,
    Future,
    Random,
}

/// Goal drawn for one batch element, with where it came from.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GoalSample {
    pub goal: State,
    pub source: GoalSource,
    pub traj_id: usize,
    /// Step index of the goal state within its trajectory (`T` is the final next-state).
    pub step: usize,
}

/// Probabilities of relabelling with the current state, a future state of the
/// same trajectory, or a random dataset state.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GoalMix {
    pub p_current: f64,
    pub p_future: f64,
    pub p_random: f64,
}

impl Default for GoalMix {
    fn default() -> Self {
        Self {
            p_current: 0.2,
            p_future: 0.5,
            p_random: 0.3,
        }
    }
}

impl GoalMix {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.p_current, self.p_future, self.p_random];
        if parts.iter().any(|p| !(0.0..=1.0).contains(p)) || (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("goal mix {parts:?} must be probabilities summing to 1")));
        }
        Ok(())
    }
}

impl Dataset {
    pub fn from_transitions(maze: MazeSpec, manifest: DatasetManifest, transitions: Vec<Transition>) -> Result<Self> {
        let mut trajectories: Vec<Range<usize>> = Vec::new();
        for (i, t) in transitions.iter().enumerate() {
            if t.traj_id == trajectories.len() {
                if t.step != 0 {
                    return Err(Error::Dataset(format!("trajectory {} does not start at step 0", t.traj_id)));
                }
                trajectories.push(i..i + 1);
            } else if t.traj_id + 1 == trajectories.len() {
                let r = trajectories.last_mut().expect("non-empty");
                let prev = &transitions[i - 1];
                if t.step != prev.step + 1 || t.state != prev.next_state {
                    return Err(Error::Dataset(format!("trajectory {} is not contiguous at row {i}", t.traj_id)));
                }
                r.end = i + 1;
            } else {
                return Err(Error::Dataset(format!("trajectory ids out of order at row {i}")));
            }
            if !maze.is_valid_state(t.state) || !maze.is_valid_state(t.next_state) {
                return Err(Error::Dataset(format!("state inside a wall at row {i}")));
            }
        }
        if transitions.is_empty() {
            return Err(Error::Dataset("no transitions".into()));
        }
        Ok(Self {
            maze,
            manifest,
            transitions,
            trajectories,
        })
    }

    pub fn transitions(&self) -> &[Transition] {
        &self.transitions
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn num_trajectories(&self) -> usize {
        self.trajectories.len()
    }

    pub fn trajectory(&self, id: usize) -> &[Transition] {
        &self.transitions[self.trajectories[id].clone()]
    }

    /// Number of transitions in trajectory `id`.
    pub fn trajectory_len(&self, id: usize) -> usize {
        self.trajectories[id].len()
    }

    /// State `s_step` of a trajectory, `step` in `0..=len`.
    pub fn state_at(&self, traj_id: usize, step: usize) -> State {
        let range = &self.trajectories[traj_id];
        let len = range.len();
        if step < len {
            self.transitions[range.start + step].state
        } else {
            self.transitions[range.end - 1].next_state
        }
    }

    /// `s_{min(t+k, T)}` for transition `index`.
    pub fn offset_state(&self, index: usize, k: usize) -> State {
        let t = &self.transitions[index];
        let len = self.trajectory_len(t.traj_id);
        self.state_at(t.traj_id, (t.step + k).min(len))
    }

    /// Draws one relabelled goal per transition index.
    pub fn sample_goals(&self, indices: &[usize], mix: GoalMix, geometric_p: f64, rng: &mut impl Rng) -> Result<Vec<GoalSample>> {
        sample_goal(indices, self, mix, geometric_p, rng)
    }

    pub fn visited_cells(&self) -> Vec<Cell> {
        let mut seen = vec![vec![false; self.maze.width()]; self.maze.height()];
        for t in &self.transitions {
            for s in [t.state, t.next_state] {
                if let Some((c, r)) = self.maze.cell_of(s) {
                    seen[r][c] = true;
                }
            }
        }
        self.maze.free_cells().into_iter().filter(|&(c, r)| seen[r][c]).collect()
    }

    /// Fraction of free cells visited by at least one stored state.
    pub fn coverage(&self) -> f64 {
        self.visited_cells().len() as f64 / self.maze.free_cells().len() as f64
    }

    /// Writes `<stem>.csv` and `<stem>.json`; `path` may carry either extension.
    pub fn save(&self, path: &Path) -> Result<()> {
        let (csv_path, json_path) = dataset_paths(path);
        let mut w = csv::Writer::from_path(&csv_path)?;
        w.write_record(["traj_id", "step", "sx", "sy", "ax", "ay", "nsx", "nsy"])?;
        for t in &self.transitions {
            w.serialize((
                t.traj_id,
                t.step,
                t.state[0],
                t.state[1],
                t.action[0],
                t.action[1],
                t.next_state[0],
                t.next_state[1],
            ))?;
        }
        w.flush().map_err(|e| Error::io(&csv_path, e))?;
        let json = serde_json::to_string_pretty(&self.manifest)?;
        fs::write(&json_path, json + "\n").map_err(|e| Error::io(&json_path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (csv_path, json_path) = dataset_paths(path);
        let text = fs::read_to_string(&json_path).map_err(|e| Error::io(&json_path, e))?;
        let manifest: DatasetManifest = serde_json::from_str(&text)?;
        if manifest.format_version != DATASET_FORMAT_VERSION {
            return Err(Error::Dataset(format!("unsupported dataset format version {}", manifest.format_version)));
        }
        let maze = MazeSpec::parse(&manifest.maze, &manifest.layout.join("\n"), manifest.cell_size)?;
        let mut r = csv::Reader::from_path(&csv_path)?;
        let header = r.headers()?.clone();
        if header.iter().collect::<Vec<_>>() != ["traj_id", "step", "sx", "sy", "ax", "ay", "nsx", "nsy"] {
            return Err(Error::Dataset(format!("unexpected header in {}", csv_path.display())));
        }
        let mut transitions = Vec::new();
        for row in r.deserialize() {
            let (traj_id, step, sx, sy, ax, ay, nsx, nsy): (usize, usize, f64, f64, f64, f64, f64, f64) = row?;
            transitions.push(Transition {
                state: [sx, sy],
                action: [ax, ay],
                next_state: [nsx, nsy],
                traj_id,
                step,
            });
        }
        Self::from_transitions(maze, manifest, transitions)
    }
}

/// CSV and JSON paths for a dataset stem.
pub fn dataset_paths(path: &Path) -> (PathBuf, PathBuf) {
    let stem = match path.extension().and_then(|e| e.to_str()) {
        Some("csv") | Some("json") => path.with_extension(""),
        _ => path.to_path_buf(),
    };
    let mut csv = stem.clone().into_os_string();
    csv.push(".csv");
    let mut json = stem.into_os_string();
    json.push(".json");
    (PathBuf::from(csv), PathBuf::from(json))
}

/// Episode length of navigate trajectories for a maze of this size.
pub fn default_episode_len(maze: &MazeSpec) -> usize {
    match maze.width().max(maze.height()) {
        0..=7 => 200,
        8..=11 => 400,
        _ => 600,
    }
}

pub(crate) fn trajectory_rng(seed: u64, traj_id: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(traj_id as u64);
    rng
}

/// Uniform point in the middle half of a free cell.
pub fn jittered_center(maze: &MazeSpec, cell: Cell, rng: &mut impl Rng) -> State {
    let c = maze.cell_center(cell);
    let j = 0.25 * maze.cell_size;
    [c[0] + rng.random_range(-j..j), c[1] + rng.random_range(-j..j)]
}

/// Noisy waypoint follower along shortest cell paths.
struct Controller<'a> {
    maze: &'a MazeSpec,
    noise: Normal<f64>,
}

impl<'a> Controller<'a> {
    fn new(maze: &'a MazeSpec) -> Self {
        Self {
            maze,
            noise: Normal::new(0.0, NOISE_FRACTION * maze.a_max()).expect("positive std"),
        }
    }

    /// Drives from `s` towards the centre of `goal`, appending transitions.
    /// Stops when the goal centre is within the reach radius, at `budget`
    /// transitions, or when `stop_in_radius` is false and the path is done.
    fn drive(&self, s: &mut State, goal: Cell, budget: usize, traj_id: usize, out: &mut Vec<Transition>, rng: &mut ChaCha8Rng) {
        let maze = self.maze;
        let start = maze.cell_of(*s).expect("valid state");
        let path = maze.shortest_path(start, goal).expect("connected maze");
        let target = maze.cell_center(goal);
        let mut wp = 1.min(path.len() - 1);
        while out.len() < budget {
            let here = maze.cell_of(*s).expect("valid state");
            if here == goal && (s[0] - target[0]).hypot(s[1] - target[1]) <= maze.goal_radius() {
                break;
            }
            let mut aim = maze.cell_center(path[wp]);
            while wp + 1 < path.len() && (s[0] - aim[0]).hypot(s[1] - aim[1]) < WAYPOINT_TOLERANCE * maze.cell_size {
                wp += 1;
                aim = maze.cell_center(path[wp]);
            }
            let dx = aim[0] - s[0];
            let dy = aim[1] - s[1];
            let n = dx.hypot(dy);
            let speed = maze.a_max().min(n);
            let base = if n > 0.0 { [dx / n * speed, dy / n * speed] } else { [0.0, 0.0] };
            let a = clip_action([base[0] + self.noise.sample(rng), base[1] + self.noise.sample(rng)], maze.a_max());
            let next = dynamics(*s, a, maze);
            out.push(Transition {
                state: *s,
                action: a,
                next_state: next,
                traj_id,
                step: out.len(),
            });
            *s = next;
        }
    }
}

fn ensure_connected(maze: &MazeSpec) -> Result<()> {
    if maze.is_connected() {
        Ok(())
    } else {
        Err(Error::InvalidMaze(format!("maze `{}` has disconnected free regions", maze.name)))
    }
}

fn manifest(maze: &MazeSpec, kind: DatasetKind, n_traj: usize, seed: u64, episode_len: usize, max_segment_cells: usize, n: usize) -> DatasetManifest {
    DatasetManifest {
        format_version: DATASET_FORMAT_VERSION,
        kind,
        maze: maze.name.clone(),
        cell_size: maze.cell_size,
        layout: maze.rows(),
        n_traj,
        seed,
        episode_len,
        max_segment_cells,
        noise_fraction: NOISE_FRACTION,
        n_transitions: n,
    }
}

/// Long trajectories: from a random free start the controller chains towards
/// random goals at least half the maze diameter away until `episode_len`
/// transitions are recorded.
pub fn generate_navigate_dataset(maze: &MazeSpec, n_traj: usize, seed: u64) -> Result<Dataset> {
    generate_navigate_with_len(maze, n_traj, default_episode_len(maze), seed)
}

pub fn generate_navigate_with_len(maze: &MazeSpec, n_traj: usize, episode_len: usize, seed: u64) -> Result<Dataset> {
    ensure_connected(maze)?;
    if n_traj == 0 || episode_len == 0 {
        return Err(Error::Config("n_traj and episode_len must be positive".into()));
    }
    let free = maze.free_cells();
    let min_sep = (maze.diameter() / 2).max(1);
    let ctrl = Controller::new(maze);
    let mut all = Vec::with_capacity(n_traj * episode_len);
    for id in 0..n_traj {
        let mut rng = trajectory_rng(seed, id);
        let start = free[rng.random_range(0..free.len())];
        let mut s = jittered_center(maze, start, &mut rng);
        let mut traj = Vec::with_capacity(episode_len);
        while traj.len() < episode_len {
            let here = maze.cell_of(s).expect("valid state");
            let dist = maze.bfs(here);
            let far: Vec<Cell> = free.iter().copied().filter(|&(c, r)| dist[r][c].is_some_and(|d| d >= min_sep)).collect();
            let goal = if far.is_empty() {
                free[rng.random_range(0..free.len())]
            } else {
                far[rng.random_range(0..far.len())]
            };
            let before = traj.len();
            ctrl.drive(&mut s, goal, episode_len, id, &mut traj, &mut rng);
            if traj.len() == before {
                // already at the goal: take one step so the loop always advances
                ctrl.drive(&mut s, free[rng.random_range(0..free.len())], before + 1, id, &mut traj, &mut rng);
            }
        }
        all.extend(traj);
    }
    let m = manifest(maze, DatasetKind::Navigate, n_traj, seed, episode_len, 0, all.len());
    Dataset::from_transitions(maze.clone(), m, all)
}

/// Short trajectories whose start and goal cells are at most
/// `max_segment_cells` apart; each ends once the goal is reached.
pub fn generate_stitch_dataset(maze: &MazeSpec, n_traj: usize, max_segment_cells: usize, seed: u64) -> Result<Dataset> {
    ensure_connected(maze)?;
    if n_traj == 0 || max_segment_cells == 0 {
        return Err(Error::Config("n_traj and max_segment_cells must be positive".into()));
    }
    let free = maze.free_cells();
    let ctrl = Controller::new(maze);
    // generous cap; the noisy controller needs about 5 steps per cell
    let budget = 20 * (max_segment_cells + 1) * 4;
    let mut all = Vec::new();
    let mut id = 0;
    let mut attempt = 0usize;
    while id < n_traj {
        let mut rng = trajectory_rng(seed, attempt);
        attempt += 1;
        let start = free[rng.random_range(0..free.len())];
        let dist = maze.bfs(start);
        let near: Vec<Cell> = free
            .iter()
            .copied()
            .filter(|&(c, r)| dist[r][c].is_some_and(|d| d >= 1 && d <= max_segment_cells))
            .collect();
        if near.is_empty() {
            continue;
        }
        let goal = near[rng.random_range(0..near.len())];
        let mut s = jittered_center(maze, start, &mut rng);
        let mut traj = Vec::new();
        ctrl.drive(&mut s, goal, budget, id, &mut traj, &mut rng);
        let end = maze.cell_of(s).expect("valid state");
        let ok = !traj.is_empty() && maze.cell_distance(start, end).is_some_and(|d| d <= max_segment_cells);
        if ok {
            all.extend(traj);
            id += 1;
        }
    }
    let m = manifest(maze, DatasetKind::Stitch, n_traj, seed, 0, max_segment_cells, all.len());
    Dataset::from_transitions(maze.clone(), m, all)
}

/// Relabels each transition in `indices` with a goal.
///
/// Future goals are `s_{min(t+k, T)}` with `k ~ Geometric(geometric_p)` on `{1, 2, ...}`.
pub fn sample_goal(indices: &[usize], dataset: &Dataset, mix: GoalMix, geometric_p: f64, rng: &mut impl Rng) -> Result<Vec<GoalSample>> {
    mix.validate()?;
    if !(geometric_p > 0.0 && geometric_p <= 1.0) {
        return Err(Error::Config(format!("geometric_p {geometric_p} must lie in (0, 1]")));
    }
    let geo = Geometric::new(geometric_p).map_err(|e| Error::Config(e.to_string()))?;
    let n = dataset.len();
    let mut out = Vec::with_capacity(indices.len());
    for &i in indices {
        let t = dataset.transitions.get(i).ok_or_else(|| Error::Dataset(format!("index {i} out of range")))?;
        let u: f64 = rng.random();
        let sample = if u < mix.p_current {
            GoalSample {
                goal: t.state,
                source: GoalSource::Current,
                traj_id: t.traj_id,
                step: t.step,
            }
        } else if u < mix.p_current + mix.p_future {
            let k = geo.sample(rng).saturating_add(1) as usize;
            let len = dataset.trajectory_len(t.traj_id);
            let step = t.step.saturating_add(k).min(len);
            GoalSample {
                goal: dataset.state_at(t.traj_id, step),
                source: GoalSource::Future,
                traj_id: t.traj_id,
                step,
            }
        } else {
            let j = &dataset.transitions[rng.random_range(0..n)];
            GoalSample {
                goal: j.state,
                source: GoalSource::Random,
                traj_id: j.traj_id,
                step: j.step,
            }
        };
        out.push(sample);
    }
    Ok(out)
}
