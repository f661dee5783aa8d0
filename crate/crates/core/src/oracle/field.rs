use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mazeworld::{Cell, MazeSpec, State};

pub const FIELD_FORMAT: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Solver {
    FastMarching { refine: usize },
    Dijkstra { subdivision: usize },
    /// Cell-level times read back from a CSV export.
    Loaded,
}

/// Regular lattice of travel times; node `(i, j)` sits at `origin + (i, j)·spacing`.
#[derive(Clone, Debug, PartialEq)]
pub struct NodeGrid {
    pub origin: [f64; 2],
    pub spacing: f64,
    pub nx: usize,
    pub ny: usize,
    pub values: Vec<f64>,
}

impl NodeGrid {
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[j * self.nx + i]
    }

    /// Bilinear interpolation that drops infinite corners and renormalizes.
    pub fn interpolate(&self, s: State) -> f64 {
        let u = ((s[0] - self.origin[0]) / self.spacing).clamp(0.0, (self.nx - 1) as f64);
        let v = ((s[1] - self.origin[1]) / self.spacing).clamp(0.0, (self.ny - 1) as f64);
        let (i0, j0) = ((u.floor() as usize).min(self.nx.saturating_sub(2)), (v.floor() as usize).min(self.ny.saturating_sub(2)));
        let (fu, fv) = (u - i0 as f64, v - j0 as f64);
        let mut sum = 0.0;
        let mut wsum = 0.0;
        for (di, dj, w) in [(0, 0, (1.0 - fu) * (1.0 - fv)), (1, 0, fu * (1.0 - fv)), (0, 1, (1.0 - fu) * fv), (1, 1, fu * fv)] {
            let (i, j) = ((i0 + di).min(self.nx - 1), (j0 + dj).min(self.ny - 1));
            let t = self.at(i, j);
            if t.is_finite() && w > 0.0 {
                sum += w * t;
                wsum += w;
            }
        }
        if wsum > 0.0 {
            sum / wsum
        } else {
            // on an exact node or surrounded by walls
            let (i, j) = (u.round() as usize, v.round() as usize);
            self.at(i.min(self.nx - 1), j.min(self.ny - 1))
        }
    }
}

/// Travel time to a goal cell, at solver-node and at cell-centre resolution.
#[derive(Clone, Debug, PartialEq)]
pub struct DistanceField {
    pub maze: MazeSpec,
    pub goal_cell: Cell,
    pub solver: Solver,
    /// Free-text description of the speed used, recorded in the manifest.
    pub speed_label: String,
    pub nodes: NodeGrid,
    /// Row-major by cell row; `+∞` for walls and unreachable cells.
    pub times: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldManifest {
    pub format_version: u32,
    pub maze: String,
    pub cell_size: f64,
    pub layout: Vec<String>,
    pub goal_cell: [usize; 2],
    pub speed_profile: String,
    pub solver: Solver,
    pub version: String,
}

impl DistanceField {
    pub(crate) fn from_nodes(maze: &MazeSpec, goal: Cell, solver: Solver, nodes: NodeGrid, cell_node: impl Fn(Cell) -> (usize, usize)) -> Self {
        let mut times = vec![f64::INFINITY; maze.width() * maze.height()];
        for c in maze.free_cells() {
            let (i, j) = cell_node(c);
            times[c.1 * maze.width() + c.0] = nodes.at(i, j);
        }
        Self {
            maze: maze.clone(),
            goal_cell: goal,
            solver,
            speed_label: "unit".into(),
            nodes,
            times,
        }
    }

    pub fn with_speed_label(mut self, label: impl Into<String>) -> Self {
        self.speed_label = label.into();
        self
    }

    /// Time at the centre of `cell`.
    pub fn time(&self, cell: Cell) -> f64 {
        if cell.0 >= self.maze.width() || cell.1 >= self.maze.height() {
            return f64::INFINITY;
        }
        self.times[cell.1 * self.maze.width() + cell.0]
    }

    /// Interpolated time at an arbitrary state.
    pub fn time_at(&self, s: State) -> f64 {
        self.nodes.interpolate(s)
    }

    pub fn manifest(&self) -> FieldManifest {
        FieldManifest {
            format_version: FIELD_FORMAT,
            maze: self.maze.name.clone(),
            cell_size: self.maze.cell_size,
            layout: self.maze.rows(),
            goal_cell: [self.goal_cell.0, self.goal_cell.1],
            speed_profile: self.speed_label.clone(),
            solver: self.solver,
            version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }

    /// Writes `<stem>.csv` with `cx,cy,time` rows and `<stem>.json` alongside.
    pub fn save(&self, path: &Path) -> Result<()> {
        let csv_path = path.with_extension("csv");
        let mut w = csv::Writer::from_path(&csv_path)?;
        w.write_record(["cx", "cy", "time"])?;
        for cy in 0..self.maze.height() {
            for cx in 0..self.maze.width() {
                w.write_record([cx.to_string(), cy.to_string(), self.time((cx, cy)).to_string()])?;
            }
        }
        w.flush().map_err(|e| Error::io(&csv_path, e))?;
        let json_path = path.with_extension("json");
        let text = serde_json::to_string_pretty(&self.manifest())?;
        fs::write(&json_path, text).map_err(|e| Error::io(&json_path, e))
    }

    /// Reads a CSV export back; node resolution becomes the cell grid.
    pub fn load(path: &Path) -> Result<Self> {
        let json_path = path.with_extension("json");
        let text = fs::read_to_string(&json_path).map_err(|e| Error::io(&json_path, e))?;
        let m: FieldManifest = serde_json::from_str(&text)?;
        if m.format_version != FIELD_FORMAT {
            return Err(Error::Dataset(format!("unsupported field format {}", m.format_version)));
        }
        let maze = MazeSpec::parse(&m.maze, &m.layout.join("\n"), m.cell_size)?;
        let (w, h) = (maze.width(), maze.height());
        let mut times = vec![f64::NAN; w * h];
        let mut r = csv::Reader::from_path(path.with_extension("csv"))?;
        for rec in r.records() {
            let rec = rec?;
            let bad = || Error::Dataset(format!("malformed distance-field row {:?}", rec));
            let cx: usize = rec.get(0).ok_or_else(bad)?.parse().map_err(|_| bad())?;
            let cy: usize = rec.get(1).ok_or_else(bad)?.parse().map_err(|_| bad())?;
            let t: f64 = rec.get(2).ok_or_else(bad)?.parse().map_err(|_| bad())?;
            if cx >= w || cy >= h {
                return Err(bad());
            }
            times[cy * w + cx] = t;
        }
        if times.iter().any(|t| t.is_nan()) {
            return Err(Error::Dataset("distance-field CSV does not cover every cell".into()));
        }
        let goal = (m.goal_cell[0], m.goal_cell[1]);
        let nodes = NodeGrid {
            origin: [0.5 * maze.cell_size, 0.5 * maze.cell_size],
            spacing: maze.cell_size,
            nx: w,
            ny: h,
            values: times.clone(),
        };
        Ok(Self {
            maze,
            goal_cell: goal,
            solver: Solver::Loaded,
            speed_label: m.speed_profile,
            nodes,
            times,
        })
    }
}
