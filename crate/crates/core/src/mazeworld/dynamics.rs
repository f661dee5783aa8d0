use super::maze::{MazeSpec, State};

/// Time step of the point-mass integrator.
pub const DT: f64 = 1.0;

impl MazeSpec {
    /// Largest action norm: a quarter cell per step.
    pub fn a_max(&self) -> f64 {
        0.25 * self.cell_size
    }

    /// Distance within which a goal counts as reached.
    pub fn goal_radius(&self) -> f64 {
        0.5 * self.cell_size
    }
}

/// Scales `a` down to norm `a_max` if it is longer.
pub fn clip_action(a: [f64; 2], a_max: f64) -> [f64; 2] {
    let n = a[0].hypot(a[1]);
    if n > a_max && n > 0.0 {
        [a[0] * a_max / n, a[1] * a_max / n]
    } else {
        a
    }
}

/// One step of `s + a·Δt`, moving along x first and then y; an axis whose move
/// would end inside a wall or outside the grid is cancelled.
pub fn dynamics(s: State, a: [f64; 2], maze: &MazeSpec) -> State {
    let mut out = s;
    let tx = [s[0] + a[0] * DT, s[1]];
    if maze.is_valid_state(tx) {
        out = tx;
    }
    let ty = [out[0], out[1] + a[1] * DT];
    if maze.is_valid_state(ty) {
        out = ty;
    }
    out
}

/// 0 when `g` is within `radius` of `s` (inclusive), −1 otherwise.
pub fn reward(s: State, g: State, radius: f64) -> f64 {
    if (s[0] - g[0]).hypot(s[1] - g[1]) <= radius {
        0.0
    } else {
        -1.0
    }
}
