//! Point-mass mazes: geometry, dynamics, reward, obstacle distance and
//! offline dataset generation.

pub mod dataset;
pub mod dynamics;
pub mod maze;

pub use dataset::{
    dataset_paths, generate_navigate_dataset, generate_navigate_with_len, generate_stitch_dataset, jittered_center,
    sample_goal, Dataset, DatasetKind, DatasetManifest, GoalMix, GoalSample, GoalSource, Transition,
};
pub use dynamics::{clip_action, dynamics, reward, DT};
pub use maze::{point_rect_distance, Cell, MazeSpec, State, BUILTIN_MAZES, DEFAULT_CELL_SIZE};

/// Distance from `s` to the nearest wall cell.
pub fn nearest_obstacle_distance(s: State, maze: &MazeSpec) -> f64 {
    maze.nearest_obstacle_distance(s)
}
