//! Command-line driver: dataset generation, training, evaluation, verification
//! suites and exports.

pub mod check;
pub mod manifest;
pub mod train;

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use eikgcrl::diffcore::checkpoint;
use eikgcrl::evalkit::{contour_map, default_max_steps, evaluate, grad_norm_map, ActorController};
use eikgcrl::mazeworld::{generate_navigate_dataset, generate_navigate_with_len, generate_stitch_dataset, Dataset, DatasetKind, MazeSpec};
use eikgcrl::oracle::{fast_march, SpeedGrid, DEFAULT_REFINE};
use eikgcrl::policyextract::Actor;
use eikgcrl::valuelearn::{TrainConfig, ValueField};
use eikgcrl::Error;

use check::Suite;
use manifest::RunManifest;
use train::{Algo, EvalMode, VALUE_PREFIX};

pub const EXIT_FAILED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_CORRUPT: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }

    pub fn failed(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_FAILED,
            message: message.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Checkpoint(_) | Error::Dataset(_) | Error::Csv(_) | Error::Json(_) => EXIT_CORRUPT,
            Error::NumericalAbort { .. } | Error::NonFinite(_) => EXIT_NUMERIC,
            _ => EXIT_USAGE,
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "eikgcrl", version, about = "Eikonal-regularized goal-conditioned RL on 2-D mazes")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate an offline dataset.
    GenData(GenDataArgs),
    /// Train value and policies on a dataset.
    Train(TrainArgs),
    /// Evaluate a checkpoint's actor.
    Eval(EvalArgs),
    /// Run a verification suite.
    Check(CheckArgs),
    /// Export a value contour, gradient-norm map or oracle distance field.
    Export(ExportArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum DatasetType {
    Navigate,
    Stitch,
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    /// Built-in maze name or path to a layout file.
    #[arg(long)]
    pub maze: String,
    #[arg(long, value_enum)]
    pub dataset_type: DatasetType,
    #[arg(long)]
    pub n_traj: usize,
    #[arg(long)]
    pub seed: u64,
    /// Output stem; `.csv` and `.json` are written.
    #[arg(long)]
    pub out: PathBuf,
    /// Longest stitch segment, in cells.
    #[arg(long, default_value_t = 4)]
    pub max_segment_cells: usize,
    /// Navigate episode length; the maze-size default when omitted.
    #[arg(long)]
    pub episode_len: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Training config JSON; defaults when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, value_enum)]
    pub algo: Algo,
    #[arg(long, default_value_t = 20_000)]
    pub steps: usize,
    /// Run directory; must not already hold a run.
    #[arg(long)]
    pub out: PathBuf,
    /// Skip evaluation during training.
    #[arg(long)]
    pub no_eval: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub maze: String,
    #[arg(long, default_value_t = 5)]
    pub n_goals: usize,
    #[arg(long, default_value_t = 50)]
    pub episodes: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Episode horizon; the maze-size default when omitted.
    #[arg(long)]
    pub max_steps: Option<usize>,
    /// Report file; `eval-seed<seed>.json` next to the checkpoint when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CheckArgs {
    #[arg(long, value_enum, default_value = "all")]
    pub suite: Suite,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ExportKind {
    Contour,
    Gradnorm,
    DistanceField,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    /// Required for contour and gradnorm.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub maze: String,
    #[arg(long, value_enum)]
    pub kind: ExportKind,
    /// Goal cell as `col,row`.
    #[arg(long)]
    pub goal: String,
    #[arg(long)]
    pub out: PathBuf,
    /// Grid points per cell axis.
    #[arg(long, default_value_t = 4)]
    pub resolution: usize,
    /// Fast-marching nodes per cell axis (odd).
    #[arg(long, default_value_t = DEFAULT_REFINE)]
    pub refine: usize,
}

pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::GenData(a) => gen_data(&a),
        Command::Train(a) => train_cmd(&a),
        Command::Eval(a) => eval_cmd(&a),
        Command::Check(a) => check_cmd(&a),
        Command::Export(a) => export_cmd(&a),
    }
}

fn gen_data(a: &GenDataArgs) -> CliResult<()> {
    let maze = MazeSpec::resolve(&a.maze)?;
    if a.n_traj == 0 {
        return Err(CliError::usage("--n-traj must be positive"));
    }
    let ds = match (a.dataset_type, a.episode_len) {
        (DatasetType::Navigate, None) => generate_navigate_dataset(&maze, a.n_traj, a.seed)?,
        (DatasetType::Navigate, Some(len)) => generate_navigate_with_len(&maze, a.n_traj, len, a.seed)?,
        (DatasetType::Stitch, _) => generate_stitch_dataset(&maze, a.n_traj, a.max_segment_cells, a.seed)?,
    };
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    ds.save(&a.out)?;
    let kind = match ds.manifest.kind {
        DatasetKind::Navigate => "navigate",
        DatasetKind::Stitch => "stitch",
    };
    println!("{} {kind} transitions in {} trajectories -> {}", ds.len(), ds.num_trajectories(), a.out.display());
    Ok(())
}

fn train_cmd(a: &TrainArgs) -> CliResult<()> {
    let config = match &a.config {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::default(),
    };
    let (csv_path, _) = eikgcrl::mazeworld::dataset_paths(&a.dataset);
    if !csv_path.exists() {
        return Err(CliError::usage(format!("dataset {} not found", csv_path.display())));
    }
    let dataset = Dataset::load(&a.dataset)?;
    if a.steps == 0 {
        return Err(CliError::usage("--steps must be positive"));
    }
    let manifest_path = a.out.join(manifest::MANIFEST_FILE);
    if manifest_path.exists() {
        return Err(CliError::usage(format!("{} already holds a run", a.out.display())));
    }
    fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    let mut m = RunManifest::begin(&config, a.algo, a.steps, &a.dataset, &a.out)?;
    let eval = if a.no_eval { EvalMode::Off } else { EvalMode::Periodic };
    let trained = train::train(&dataset, &config, a.algo, a.steps, eval, Some(&a.out))?;
    m.finish(&trained);
    m.save(&manifest_path)?;
    let last = trained.metrics.last().map(|r| r.step).unwrap_or(0);
    match trained.best {
        Some(b) => println!("trained {} for {last} steps; best eval {:.1} ± {:.1} at step {}", a.algo.name(), b.mean, b.std, b.step),
        None => println!("trained {} for {last} steps", a.algo.name()),
    }
    Ok(())
}

/// Loads a checkpoint, rejecting bad magic, version or truncation.
pub fn load_checkpoint(path: &Path) -> CliResult<eikgcrl::diffcore::ParameterSet> {
    if !path.exists() {
        return Err(CliError::usage(format!("checkpoint {} not found", path.display())));
    }
    Ok(checkpoint::load(path)?)
}

fn eval_cmd(a: &EvalArgs) -> CliResult<()> {
    let maze = MazeSpec::resolve(&a.maze)?;
    let params = load_checkpoint(&a.checkpoint)?;
    let actor = Actor::from_params(&params).map_err(as_corrupt)?;
    let max_steps = a.max_steps.unwrap_or_else(|| default_max_steps(&maze));
    let report = evaluate(&ActorController(&actor), &maze, a.n_goals, a.episodes, max_steps, a.seed)?;
    let text = serde_json::to_string_pretty(&report).map_err(Error::from)?;
    let out = a.out.clone().unwrap_or_else(|| {
        a.checkpoint
            .parent()
            .unwrap_or(Path::new("."))
            .join(format!("eval-seed{}.json", a.seed))
    });
    fs::write(&out, text.clone() + "\n").map_err(|e| Error::io(&out, e))?;
    println!("{text}");
    Ok(())
}

/// Missing or malformed entries in a checkpoint that decoded fine are still corruption.
fn as_corrupt(e: Error) -> CliError {
    CliError {
        code: EXIT_CORRUPT,
        message: format!("corrupt checkpoint: {e}"),
    }
}

fn check_cmd(a: &CheckArgs) -> CliResult<()> {
    let mut ok = true;
    if matches!(a.suite, Suite::Autodiff | Suite::All) {
        let r = check::autodiff_suite(100, 0)?;
        println!(
            "autodiff: params {} cases max rel err {:.2e}; inputs {} cases {:.2e}; penalty {} cases {:.2e}; {:.1}s -> {}",
            r.param_cases,
            r.param_max_rel_err,
            r.input_cases,
            r.input_max_rel_err,
            r.second_order_cases,
            r.second_order_max_rel_err,
            r.seconds,
            verdict(r.passed())
        );
        ok &= r.passed();
    }
    if matches!(a.suite, Suite::Prop1 | Suite::All) {
        let (r, t) = check::prop1_suite(100_000, 0)?;
        println!(
            "prop1: {} instances, {} violations, isotropic order {:.2}; {:.1}s -> {}",
            r.instances,
            r.violations,
            r.isotropic_order,
            t.as_secs_f64(),
            verdict(r.passed)
        );
        ok &= r.passed;
    }
    if matches!(a.suite, Suite::Oracle | Suite::All) {
        let r = check::default_oracle_suite()?;
        for m in &r.mazes {
            println!(
                "oracle {}: {} goals, max rel err fmm vs dijkstra {:.4} at {:?}, scaling exact {}",
                m.maze, m.goals, m.max_rel_err, m.worst, m.scaling_exact
            );
        }
        println!("oracle: max rel err {:.4} (tolerance {}) {:.1}s -> {}", r.max_rel_err, check::ORACLE_TOL, r.seconds, verdict(r.passed()));
        ok &= r.passed();
    }
    if ok {
        Ok(())
    } else {
        Err(CliError::failed("verification failed"))
    }
}

fn verdict(ok: bool) -> &'static str {
    if ok {
        "PASS"
    } else {
        "FAIL"
    }
}

/// Parses `col,row`.
pub fn parse_cell(text: &str) -> CliResult<(usize, usize)> {
    let bad = || CliError::usage(format!("goal `{text}` must be `col,row`"));
    let (c, r) = text.split_once(',').ok_or_else(bad)?;
    Ok((c.trim().parse().map_err(|_| bad())?, r.trim().parse().map_err(|_| bad())?))
}

fn export_cmd(a: &ExportArgs) -> CliResult<()> {
    let maze = MazeSpec::resolve(&a.maze)?;
    let goal = parse_cell(&a.goal)?;
    if goal.0 >= maze.width() || goal.1 >= maze.height() || !maze.is_free(goal) {
        return Err(CliError::usage(format!("goal cell {goal:?} is not a free cell of {}", maze.name)));
    }
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    match a.kind {
        ExportKind::DistanceField => {
            let grid = SpeedGrid::uniform(&maze, a.refine, 1.0)?;
            fast_march(&maze, goal, &grid)?.save(&a.out)?;
        }
        ExportKind::Contour | ExportKind::Gradnorm => {
            let path = a
                .checkpoint
                .as_ref()
                .ok_or_else(|| CliError::usage("--checkpoint is required for contour and gradnorm exports"))?;
            let params = load_checkpoint(path)?;
            let value = ValueField::from_params(&params, VALUE_PREFIX).map_err(as_corrupt)?;
            let g = maze.cell_center(goal);
            let map = if a.kind == ExportKind::Contour {
                contour_map(&value, &maze, g, a.resolution)?
            } else {
                grad_norm_map(&value, &maze, g, a.resolution)?
            };
            map.write_csv(&a.out)?;
        }
    }
    println!("wrote {}", a.out.display());
    Ok(())
}
