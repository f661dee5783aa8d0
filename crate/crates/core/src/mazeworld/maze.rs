use std::collections::VecDeque;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A position in maze coordinates: `x` grows with the column, `y` with the row.
pub type State = [f64; 2];

/// Default length of one grid cell.
pub const DEFAULT_CELL_SIZE: f64 = 4.0;

const MEDIUM: &str = "\
#######
#.....#
#####.#
#.....#
#.#.#.#
#.....#
#######";

const LARGE: &str = "\
###########
#.#.#.....#
#.#.#.###.#
#.#.......#
#.#.#####.#
#...#.....#
#.#.#.###.#
#.....#.#.#
#.#####.#.#
#.........#
###########";

const GIANT: &str = "\
###############
#.#...........#
#.###.#######.#
#...#.......#.#
###.#.#######.#
#.#...#...#...#
#.#.###.#.#.#.#
#.#.........#.#
#.###.#.#####.#
#...........#.#
#.#.###.###.#.#
#.#.........#.#
#.###.#.#.###.#
#.....#.......#
###############";

/// Names of the built-in mazes, smallest first.
pub const BUILTIN_MAZES: [&str; 3] = ["medium", "large", "giant"];

/// Grid cell index `(col, row)`.
pub type Cell = (usize, usize);

/// Occupancy grid plus geometry. Cell `(col, row)` covers
/// `[col·cs, (col+1)·cs) × [row·cs, (row+1)·cs)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MazeSpec {
    pub name: String,
    pub cell_size: f64,
    /// `grid[row][col]`, true = wall.
    grid: Vec<Vec<bool>>,
}

impl MazeSpec {
    pub fn new(name: impl Into<String>, grid: Vec<Vec<bool>>, cell_size: f64) -> Result<Self> {
        let maze = Self {
            name: name.into(),
            cell_size,
            grid,
        };
        maze.validate()?;
        Ok(maze)
    }

    pub fn builtin(name: &str) -> Result<Self> {
        let text = match name {
            "medium" => MEDIUM,
            "large" => LARGE,
            "giant" => GIANT,
            other => return Err(Error::UnknownMaze(other.to_string())),
        };
        Self::parse(name, text, DEFAULT_CELL_SIZE)
    }

    /// Parses `#`/`.` rows; blank lines are ignored.
    pub fn parse(name: &str, text: &str, cell_size: f64) -> Result<Self> {
        let mut grid = Vec::new();
        for (i, line) in text.lines().map(str::trim_end).filter(|l| !l.is_empty()).enumerate() {
            let row = line
                .chars()
                .map(|c| match c {
                    '#' => Ok(true),
                    '.' => Ok(false),
                    other => Err(Error::InvalidMaze(format!("unexpected character {other:?} on line {}", i + 1))),
                })
                .collect::<Result<Vec<_>>>()?;
            grid.push(row);
        }
        Self::new(name, grid, cell_size)
    }

    pub fn load(path: &Path, cell_size: f64) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or("custom");
        Self::parse(name, &text, cell_size)
    }

    /// Built-in name or path to a text grid.
    pub fn resolve(name_or_path: &str) -> Result<Self> {
        if BUILTIN_MAZES.contains(&name_or_path) {
            Self::builtin(name_or_path)
        } else if Path::new(name_or_path).is_file() {
            Self::load(Path::new(name_or_path), DEFAULT_CELL_SIZE)
        } else {
            Err(Error::UnknownMaze(name_or_path.to_string()))
        }
    }

    pub fn to_text(&self) -> String {
        self.rows().join("\n") + "\n"
    }

    pub fn rows(&self) -> Vec<String> {
        self.grid
            .iter()
            .map(|r| r.iter().map(|&w| if w { '#' } else { '.' }).collect())
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.cell_size.is_finite() && self.cell_size > 0.0) {
            return Err(Error::InvalidMaze(format!("cell size {} must be positive", self.cell_size)));
        }
        let h = self.grid.len();
        if h < 3 {
            return Err(Error::InvalidMaze("need at least 3 rows".into()));
        }
        let w = self.grid[0].len();
        if w < 3 || self.grid.iter().any(|r| r.len() != w) {
            return Err(Error::InvalidMaze("rows must share a width of at least 3".into()));
        }
        for c in 0..w {
            if !self.grid[0][c] || !self.grid[h - 1][c] {
                return Err(Error::InvalidMaze("outer boundary must be walled".into()));
            }
        }
        for row in &self.grid {
            if !row[0] || !row[w - 1] {
                return Err(Error::InvalidMaze("outer boundary must be walled".into()));
            }
        }
        let largest = self.components().into_iter().map(|c| c.len()).max().unwrap_or(0);
        if largest < 2 {
            return Err(Error::InvalidMaze("no connected free region of two or more cells".into()));
        }
        Ok(())
    }

    pub fn width(&self) -> usize {
        self.grid[0].len()
    }

    pub fn height(&self) -> usize {
        self.grid.len()
    }

    /// Upper corner of the maze rectangle; the lower corner is the origin.
    pub fn extent(&self) -> [f64; 2] {
        [self.width() as f64 * self.cell_size, self.height() as f64 * self.cell_size]
    }

    pub fn is_wall(&self, (c, r): Cell) -> bool {
        self.grid.get(r).and_then(|row| row.get(c)).copied().unwrap_or(true)
    }

    pub fn is_free(&self, cell: Cell) -> bool {
        !self.is_wall(cell)
    }

    /// Free cells in row-major order.
    pub fn free_cells(&self) -> Vec<Cell> {
        let mut out = Vec::new();
        for r in 0..self.height() {
            for c in 0..self.width() {
                if !self.grid[r][c] {
                    out.push((c, r));
                }
            }
        }
        out
    }

    pub fn wall_cells(&self) -> Vec<Cell> {
        let mut out = Vec::new();
        for r in 0..self.height() {
            for c in 0..self.width() {
                if self.grid[r][c] {
                    out.push((c, r));
                }
            }
        }
        out
    }

    pub fn cell_center(&self, (c, r): Cell) -> State {
        [(c as f64 + 0.5) * self.cell_size, (r as f64 + 0.5) * self.cell_size]
    }

    /// Cell containing `s`, or `None` outside the grid.
    pub fn cell_of(&self, s: State) -> Option<Cell> {
        if !(s[0].is_finite() && s[1].is_finite()) || s[0] < 0.0 || s[1] < 0.0 {
            return None;
        }
        let c = (s[0] / self.cell_size).floor() as usize;
        let r = (s[1] / self.cell_size).floor() as usize;
        (c < self.width() && r < self.height()).then_some((c, r))
    }

    /// True when `s` lies inside the maze and in a free cell.
    pub fn is_valid_state(&self, s: State) -> bool {
        self.cell_of(s).is_some_and(|cell| self.is_free(cell))
    }

    pub fn neighbors(&self, (c, r): Cell) -> impl Iterator<Item = Cell> + '_ {
        let cand = [
            (c.wrapping_sub(1), r),
            (c + 1, r),
            (c, r.wrapping_sub(1)),
            (c, r + 1),
        ];
        cand.into_iter().filter(move |&n| self.is_free(n))
    }

    /// 4-connected free components.
    pub fn components(&self) -> Vec<Vec<Cell>> {
        let mut seen = vec![vec![false; self.width()]; self.height()];
        let mut out = Vec::new();
        for start in self.free_cells() {
            if seen[start.1][start.0] {
                continue;
            }
            let mut comp = vec![start];
            seen[start.1][start.0] = true;
            let mut i = 0;
            while i < comp.len() {
                let cur = comp[i];
                i += 1;
                for n in self.neighbors(cur) {
                    if !seen[n.1][n.0] {
                        seen[n.1][n.0] = true;
                        comp.push(n);
                    }
                }
            }
            out.push(comp);
        }
        out
    }

    pub fn is_connected(&self) -> bool {
        self.components().len() == 1
    }

    /// Breadth-first cell distances from `from`; `None` for walls and unreachable cells.
    pub fn bfs(&self, from: Cell) -> Vec<Vec<Option<usize>>> {
        let mut dist = vec![vec![None; self.width()]; self.height()];
        if self.is_wall(from) {
            return dist;
        }
        dist[from.1][from.0] = Some(0);
        let mut queue = VecDeque::from([from]);
        while let Some(cur) = queue.pop_front() {
            let d = dist[cur.1][cur.0].expect("queued cells have a distance");
            for n in self.neighbors(cur) {
                if dist[n.1][n.0].is_none() {
                    dist[n.1][n.0] = Some(d + 1);
                    queue.push_back(n);
                }
            }
        }
        dist
    }

    pub fn cell_distance(&self, a: Cell, b: Cell) -> Option<usize> {
        self.bfs(a)[b.1][b.0]
    }

    /// Shortest 4-connected cell path from `a` to `b`, both ends included.
    /// Ties resolve in the fixed neighbour order (left, right, up, down).
    pub fn shortest_path(&self, a: Cell, b: Cell) -> Option<Vec<Cell>> {
        let dist = self.bfs(b);
        let mut d = dist[a.1][a.0]?;
        let mut path = vec![a];
        let mut cur = a;
        while d > 0 {
            cur = self
                .neighbors(cur)
                .find(|n| dist[n.1][n.0] == Some(d - 1))
                .expect("bfs distances decrease along some neighbour");
            path.push(cur);
            d -= 1;
        }
        Some(path)
    }

    /// Longest shortest path between free cells, in cells.
    pub fn diameter(&self) -> usize {
        self.free_cells()
            .into_iter()
            .map(|c| self.bfs(c).into_iter().flatten().flatten().max().unwrap_or(0))
            .max()
            .unwrap_or(0)
    }

    /// Euclidean distance from `s` to the nearest wall cell.
    ///
    /// Scans rings of cells around `s` and stops once the ring is farther
    /// away than the best distance found.
    pub fn nearest_obstacle_distance(&self, s: State) -> f64 {
        let cs = self.cell_size;
        let (w, h) = (self.width() as isize, self.height() as isize);
        let c0 = ((s[0] / cs).floor() as isize).clamp(0, w - 1);
        let r0 = ((s[1] / cs).floor() as isize).clamp(0, h - 1);
        let mut best = f64::INFINITY;
        for ring in 0..w.max(h) {
            // every cell in this ring is at least (ring - 1) cells away
            if ((ring - 1).max(0) as f64) * cs >= best {
                break;
            }
            for r in (r0 - ring)..=(r0 + ring) {
                for c in (c0 - ring)..=(c0 + ring) {
                    if (r - r0).abs() != ring && (c - c0).abs() != ring {
                        continue;
                    }
                    if r < 0 || c < 0 || r >= h || c >= w {
                        continue;
                    }
                    if self.grid[r as usize][c as usize] {
                        best = best.min(point_rect_distance(s, c as usize, r as usize, cs));
                    }
                }
            }
        }
        best
    }
}

/// Euclidean distance from `s` to the closed square of cell `(c, r)`.
pub fn point_rect_distance(s: State, c: usize, r: usize, cs: f64) -> f64 {
    let (x0, y0) = (c as f64 * cs, r as f64 * cs);
    let dx = (x0 - s[0]).max(0.0).max(s[0] - (x0 + cs));
    let dy = (y0 - s[1]).max(0.0).max(s[1] - (y0 + cs));
    dx.hypot(dy)
}

impl fmt::Display for MazeSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_text())
    }
}

impl FromStr for MazeSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::parse("custom", s, DEFAULT_CELL_SIZE)
    }
}
