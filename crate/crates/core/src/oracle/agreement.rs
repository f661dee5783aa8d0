use std::f64::consts::TAU;

use serde::Serialize;

use super::field::DistanceField;
use crate::error::Result;
use crate::mazeworld::{clip_action, dynamics, Cell, State};
use crate::valuelearn::{states_matrix, ValueField};

/// Average ranks (1-based), ties sharing the mean of their positions.
pub fn ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut out = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = r;
        }
        i = j + 1;
    }
    out
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    if va == 0.0 || vb == 0.0 {
        None
    } else {
        Some(cov / (va * vb).sqrt())
    }
}

/// Spearman rank correlation; `None` when either input is constant.
pub fn spearman(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return None;
    }
    pearson(&ranks(a), &ranks(b))
}

#[derive(Clone, Debug, Serialize)]
pub struct AgreementReport {
    pub cells: usize,
    pub spearman_rho: Option<f64>,
    /// Mean `|ΔV|` over free cell pairs two apart with a wall between, minus the
    /// same over pairs with a free cell between.
    pub wall_contrast: Option<f64>,
    pub wall_pairs: usize,
    pub open_pairs: usize,
    pub failure: Option<String>,
}

/// Compares `−V(·, g)` with the field's travel times over reachable free-cell centres.
pub fn field_value_agreement(value: &ValueField, field: &DistanceField) -> Result<AgreementReport> {
    let maze = &field.maze;
    let g = maze.cell_center(field.goal_cell);
    let cells: Vec<Cell> = maze.free_cells().into_iter().filter(|&c| field.time(c).is_finite()).collect();
    let centres: Vec<State> = cells.iter().map(|&c| maze.cell_center(c)).collect();
    let gm = states_matrix(&vec![g; centres.len()]);
    let v = value.values(states_matrix(&centres).view(), gm.view())?;
    let neg_v: Vec<f64> = v.iter().map(|x| -x).collect();
    let t: Vec<f64> = cells.iter().map(|&c| field.time(c)).collect();
    let rho = spearman(&neg_v, &t);

    let w = maze.width();
    let mut at = vec![None; w * maze.height()];
    for (k, c) in cells.iter().enumerate() {
        at[c.1 * w + c.0] = Some(v[k]);
    }
    let (mut wall_sum, mut wall_n, mut open_sum, mut open_n) = (0.0, 0usize, 0.0, 0usize);
    for &(cx, cy) in &cells {
        for (dx, dy) in [(2usize, 0usize), (0, 2)] {
            let (ox, oy) = (cx + dx, cy + dy);
            if ox >= w || oy >= maze.height() {
                continue;
            }
            let (Some(a), Some(b)) = (at[cy * w + cx], at[oy * w + ox]) else {
                continue;
            };
            let mid = (cx + dx / 2, cy + dy / 2);
            if maze.is_wall(mid) {
                wall_sum += (a - b).abs();
                wall_n += 1;
            } else {
                open_sum += (a - b).abs();
                open_n += 1;
            }
        }
    }
    let wall_contrast = (wall_n > 0 && open_n > 0).then(|| wall_sum / wall_n as f64 - open_sum / open_n as f64);
    let failure = if rho.is_none() {
        Some("value or travel time is constant over the free cells; rank correlation undefined".to_string())
    } else {
        None
    };
    Ok(AgreementReport {
        cells: cells.len(),
        spearman_rho: rho,
        wall_contrast,
        wall_pairs: wall_n,
        open_pairs: open_n,
        failure,
    })
}

const GREEDY_DIRECTIONS: usize = 64;

/// Action whose successor state has the lowest interpolated travel time.
pub fn greedy_action(field: &DistanceField, s: State, goal: State) -> [f64; 2] {
    let maze = &field.maze;
    let a_max = maze.a_max();
    let direct = clip_action([goal[0] - s[0], goal[1] - s[1]], a_max);
    let mut best = ([0.0, 0.0], f64::INFINITY);
    let mut consider = |a: [f64; 2]| {
        let next = dynamics(s, a, maze);
        let d_goal = (next[0] - goal[0]).hypot(next[1] - goal[1]);
        let t = if d_goal <= maze.goal_radius() {
            // reached: rank by leftover distance so the closest finish wins
            -1.0 / (1.0 + d_goal)
        } else {
            field.time_at(next)
        };
        if t < best.1 {
            best = (a, t);
        }
    };
    consider(direct);
    for scale in [1.0, 0.5] {
        for k in 0..GREEDY_DIRECTIONS {
            let th = TAU * k as f64 / GREEDY_DIRECTIONS as f64;
            consider([scale * a_max * th.cos(), scale * a_max * th.sin()]);
        }
    }
    best.0
}
