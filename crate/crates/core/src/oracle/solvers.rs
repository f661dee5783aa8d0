use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};
use crate::mazeworld::{Cell, MazeSpec, State};
use crate::valuelearn::{speed, SpeedProfile};

use super::field::{DistanceField, NodeGrid, Solver};

pub const DEFAULT_REFINE: usize = 31;
pub const DEFAULT_SUBDIVISION: usize = 4;

/// Speed sampled at the nodes of a grid refined `refine` times per cell axis;
/// node `(i, j)` sits at the centre of its sub-square.
#[derive(Clone, Debug, PartialEq)]
pub struct SpeedGrid {
    pub refine: usize,
    pub nx: usize,
    pub ny: usize,
    pub cell_size: f64,
    pub values: Vec<f64>,
}

impl SpeedGrid {
    pub fn uniform(maze: &MazeSpec, refine: usize, speed: f64) -> Result<Self> {
        Self::from_fn(maze, refine, |_| speed)
    }

    pub fn from_fn(maze: &MazeSpec, refine: usize, f: impl Fn(State) -> f64) -> Result<Self> {
        if refine == 0 || refine % 2 == 0 {
            return Err(Error::Config(format!("refinement {refine} must be odd so cell centres are nodes")));
        }
        let nx = maze.width() * refine;
        let ny = maze.height() * refine;
        let h = maze.cell_size / refine as f64;
        let mut values = Vec::with_capacity(nx * ny);
        for j in 0..ny {
            for i in 0..nx {
                values.push(f([(i as f64 + 0.5) * h, (j as f64 + 0.5) * h]));
            }
        }
        Ok(Self {
            refine,
            nx,
            ny,
            cell_size: maze.cell_size,
            values,
        })
    }

    pub fn from_profile(maze: &MazeSpec, refine: usize, profile: &SpeedProfile) -> Result<Self> {
        Self::from_fn(maze, refine, |s| speed(s, profile, maze))
    }

    pub fn spacing(&self) -> f64 {
        self.cell_size / self.refine as f64
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[j * self.nx + i]
    }

    /// Value of the node nearest to `s`.
    pub fn sample(&self, s: State) -> f64 {
        let h = self.spacing();
        let i = ((s[0] / h).floor().max(0.0) as usize).min(self.nx - 1);
        let j = ((s[1] / h).floor().max(0.0) as usize).min(self.ny - 1);
        self.at(i, j)
    }

    fn check(&self, maze: &MazeSpec) -> Result<()> {
        if self.nx != maze.width() * self.refine || self.ny != maze.height() * self.refine || self.cell_size != maze.cell_size {
            return Err(Error::Config("speed grid does not match the maze".into()));
        }
        for j in 0..self.ny {
            for i in 0..self.nx {
                let v = self.at(i, j);
                if maze.is_free((i / self.refine, j / self.refine)) && !(v > 0.0 && v.is_finite()) {
                    return Err(Error::Config(format!("speed {v} at node ({i}, {j}) must be positive")));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, PartialEq)]
struct Entry {
    time: f64,
    index: usize,
}

impl Eq for Entry {}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on time, then on index
        other
            .time
            .total_cmp(&self.time)
            .then_with(|| other.index.cmp(&self.index))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn check_goal(maze: &MazeSpec, goal: Cell) -> Result<()> {
    if goal.0 >= maze.width() || goal.1 >= maze.height() || !maze.is_free(goal) {
        return Err(Error::NotFree(goal.0, goal.1));
    }
    Ok(())
}

/// First-order upwind fast marching for `‖∇T‖ = 1/S` on the refined node grid.
pub fn fast_march(maze: &MazeSpec, goal: Cell, speed_grid: &SpeedGrid) -> Result<DistanceField> {
    check_goal(maze, goal)?;
    speed_grid.check(maze)?;
    let r = speed_grid.refine;
    let (nx, ny) = (speed_grid.nx, speed_grid.ny);
    let h = speed_grid.spacing();
    let free = |i: usize, j: usize| maze.is_free((i / r, j / r));
    let mut t = vec![f64::INFINITY; nx * ny];
    let mut done = vec![false; nx * ny];
    // the goal cell is free and convex, so its nodes start from exact travel times
    let centre = [(goal.0 * r + r / 2) as f64, (goal.1 * r + r / 2) as f64];
    let mut heap = BinaryHeap::new();
    for j in goal.1 * r..(goal.1 + 1) * r {
        for i in goal.0 * r..(goal.0 + 1) * r {
            let k = j * nx + i;
            t[k] = h * (i as f64 - centre[0]).hypot(j as f64 - centre[1]) / speed_grid.at(i, j);
            heap.push(Entry { time: t[k], index: k });
        }
    }
    let known = |t: &[f64], done: &[bool], i: isize, j: isize| -> f64 {
        if i < 0 || j < 0 || i as usize >= nx || j as usize >= ny {
            return f64::INFINITY;
        }
        let k = j as usize * nx + i as usize;
        if done[k] {
            t[k]
        } else {
            f64::INFINITY
        }
    };
    while let Some(Entry { index, .. }) = heap.pop() {
        if done[index] {
            continue;
        }
        done[index] = true;
        let (x, y) = ((index % nx) as isize, (index / nx) as isize);
        for (dx, dy) in [(1, 0), (-1, 0), (0, 1), (0, -1)] {
            let (px, py) = (x + dx, y + dy);
            if px < 0 || py < 0 || px as usize >= nx || py as usize >= ny {
                continue;
            }
            let (pi, pj) = (px as usize, py as usize);
            let k = pj * nx + pi;
            if done[k] || !free(pi, pj) {
                continue;
            }
            let a = known(&t, &done, px - 1, py).min(known(&t, &done, px + 1, py));
            let b = known(&t, &done, px, py - 1).min(known(&t, &done, px, py + 1));
            let (a, b) = (a.min(b), a.max(b));
            let f = h / speed_grid.at(pi, pj);
            let nt = if b - a >= f {
                a + f
            } else {
                0.5 * (a + b + (2.0 * f * f - (a - b) * (a - b)).sqrt())
            };
            if nt < t[k] {
                t[k] = nt;
                heap.push(Entry { time: nt, index: k });
            }
        }
    }
    let nodes = NodeGrid {
        origin: [0.5 * h, 0.5 * h],
        spacing: h,
        nx,
        ny,
        values: t,
    };
    let cell_node = |c: Cell| (c.0 * r + r / 2, c.1 * r + r / 2);
    Ok(DistanceField::from_nodes(maze, goal, Solver::FastMarching { refine: r }, nodes, cell_node))
}

/// 8-connected Dijkstra on the vertex lattice of a grid subdivided `subdivision`
/// times per cell. A diagonal edge needs its sub-square free; an axis edge needs
/// one of its two adjacent sub-squares free. Edge cost is length over mean speed.
pub fn dijkstra_reference(maze: &MazeSpec, goal: Cell, speed_grid: &SpeedGrid, subdivision: usize) -> Result<DistanceField> {
    check_goal(maze, goal)?;
    speed_grid.check(maze)?;
    if subdivision == 0 {
        return Err(Error::Config("subdivision must be at least 1".into()));
    }
    let sub = subdivision;
    let h = maze.cell_size / sub as f64;
    let (nx, ny) = (maze.width() * sub + 1, maze.height() * sub + 1);
    let sq_free = |i: isize, j: isize| -> bool {
        i >= 0 && j >= 0 && (i as usize) < nx - 1 && (j as usize) < ny - 1 && maze.is_free((i as usize / sub, j as usize / sub))
    };
    let node_ok = |i: isize, j: isize| sq_free(i, j) || sq_free(i - 1, j) || sq_free(i, j - 1) || sq_free(i - 1, j - 1);
    let node_speed = |i: usize, j: usize| -> f64 {
        let p = [i as f64 * h, j as f64 * h];
        // average over the free sub-squares touching the vertex
        let mut sum = 0.0;
        let mut n = 0.0;
        for (a, b) in [(0isize, 0isize), (-1, 0), (0, -1), (-1, -1)] {
            if sq_free(i as isize + a, j as isize + b) {
                let c = [p[0] + (a as f64 + 0.5) * h, p[1] + (b as f64 + 0.5) * h];
                sum += speed_grid.sample(c);
                n += 1.0;
            }
        }
        if n > 0.0 {
            sum / n
        } else {
            f64::NAN
        }
    };
    let mut d = vec![f64::INFINITY; nx * ny];
    let (gi, gj) = (goal.0 * sub + sub / 2, goal.1 * sub + sub / 2);
    let start = gj * nx + gi;
    d[start] = 0.0;
    let mut heap = BinaryHeap::new();
    heap.push(Entry { time: 0.0, index: start });
    while let Some(Entry { time, index }) = heap.pop() {
        if time > d[index] {
            continue;
        }
        let (i, j) = ((index % nx) as isize, (index / nx) as isize);
        let si = node_speed(i as usize, j as usize);
        for di in -1isize..=1 {
            for dj in -1isize..=1 {
                if di == 0 && dj == 0 {
                    continue;
                }
                let (ni, nj) = (i + di, j + dj);
                if ni < 0 || nj < 0 || ni as usize >= nx || nj as usize >= ny || !node_ok(ni, nj) {
                    continue;
                }
                let ok = if di != 0 && dj != 0 {
                    sq_free(i.min(ni), j.min(nj))
                } else if di != 0 {
                    sq_free(i.min(ni), j) || sq_free(i.min(ni), j - 1)
                } else {
                    sq_free(i, j.min(nj)) || sq_free(i - 1, j.min(nj))
                };
                if !ok {
                    continue;
                }
                let k = nj as usize * nx + ni as usize;
                let len = h * ((di * di + dj * dj) as f64).sqrt();
                let nd = time + len / (0.5 * (si + node_speed(ni as usize, nj as usize)));
                if nd < d[k] {
                    d[k] = nd;
                    heap.push(Entry { time: nd, index: k });
                }
            }
        }
    }
    let nodes = NodeGrid {
        origin: [0.0, 0.0],
        spacing: h,
        nx,
        ny,
        values: d,
    };
    let cell_node = |c: Cell| (c.0 * sub + sub / 2, c.1 * sub + sub / 2);
    Ok(DistanceField::from_nodes(maze, goal, Solver::Dijkstra { subdivision: sub }, nodes, cell_node))
}
