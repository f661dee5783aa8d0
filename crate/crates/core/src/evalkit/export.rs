use std::path::Path;

use crate::error::{Error, Result};
use crate::mazeworld::{MazeSpec, State};
use crate::valuelearn::{states_matrix, ValueField};

const CHUNK: usize = 4096;

/// Scalar samples on a regular position grid, `resolution` points per cell axis,
/// at sub-square centres. Rows run over x fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct GridMap {
    pub column: &'static str,
    pub points: Vec<State>,
    pub values: Vec<f64>,
    pub in_wall: Vec<bool>,
}

fn grid_points(maze: &MazeSpec, resolution: usize) -> Result<(Vec<State>, Vec<bool>)> {
    if resolution == 0 {
        return Err(Error::Config("resolution must be at least 1".into()));
    }
    let h = maze.cell_size / resolution as f64;
    let (nx, ny) = (maze.width() * resolution, maze.height() * resolution);
    let mut points = Vec::with_capacity(nx * ny);
    let mut in_wall = Vec::with_capacity(nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            points.push([(i as f64 + 0.5) * h, (j as f64 + 0.5) * h]);
            in_wall.push(maze.is_wall((i / resolution, j / resolution)));
        }
    }
    Ok((points, in_wall))
}

fn evaluate_chunks(points: &[State], goal: State, f: impl Fn(&[State], &[State]) -> Result<Vec<f64>>) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(points.len());
    for chunk in points.chunks(CHUNK) {
        out.extend(f(chunk, &vec![goal; chunk.len()])?);
    }
    Ok(out)
}

/// `V(·, goal)` over the grid.
pub fn contour_map(value: &ValueField, maze: &MazeSpec, goal: State, resolution: usize) -> Result<GridMap> {
    let (points, in_wall) = grid_points(maze, resolution)?;
    let values = evaluate_chunks(&points, goal, |s, g| Ok(value.values(states_matrix(s).view(), states_matrix(g).view())?.to_vec()))?;
    Ok(GridMap {
        column: "value",
        points,
        values,
        in_wall,
    })
}

/// `‖∇ₛV(·, goal)‖` over the grid.
pub fn grad_norm_map(value: &ValueField, maze: &MazeSpec, goal: State, resolution: usize) -> Result<GridMap> {
    let (points, in_wall) = grid_points(maze, resolution)?;
    let values = evaluate_chunks(&points, goal, |s, g| {
        Ok(value.state_grad_norms(states_matrix(s).view(), states_matrix(g).view())?.to_vec())
    })?;
    Ok(GridMap {
        column: "grad_norm",
        points,
        values,
        in_wall,
    })
}

impl GridMap {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Median over points outside walls.
    pub fn free_median(&self) -> Option<f64> {
        let mut v: Vec<f64> = self.values.iter().zip(&self.in_wall).filter(|(_, w)| !**w).map(|(v, _)| *v).collect();
        if v.is_empty() {
            return None;
        }
        v.sort_by(f64::total_cmp);
        let n = v.len();
        Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
    }

    /// Free point with the largest value.
    pub fn free_argmax(&self) -> Option<State> {
        self.points
            .iter()
            .zip(&self.values)
            .zip(&self.in_wall)
            .filter(|(_, w)| !**w)
            .max_by(|a, b| a.0 .1.total_cmp(b.0 .1))
            .map(|((p, _), _)| *p)
    }

    /// Writes `x,y,<column>,in_wall` rows, `in_wall` as 0/1.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["x", "y", self.column, "in_wall"])?;
        for ((p, v), wall) in self.points.iter().zip(&self.values).zip(&self.in_wall) {
            w.write_record([p[0].to_string(), p[1].to_string(), v.to_string(), u8::from(*wall).to_string()])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}
