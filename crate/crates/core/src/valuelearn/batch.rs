use ndarray::{Array1, Array2};
use rand::Rng;

use crate::error::Result;
use crate::mazeworld::{reward, Dataset, GoalMix};

/// One minibatch of transitions with relabelled goals.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub indices: Vec<usize>,
    pub s: Array2<f64>,
    pub a: Array2<f64>,
    pub s_next: Array2<f64>,
    pub g: Array2<f64>,
    /// `s_{min(t+k, T)}` from the same trajectory.
    pub s_k: Array2<f64>,
    /// `R(s, g)`: 0 within the goal radius, −1 otherwise.
    pub reward: Array1<f64>,
    /// 1 where the goal is reached, masking the bootstrap.
    pub done: Array1<f64>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Uniform transitions, goals from `mix`.
    pub fn sample(
        dataset: &Dataset,
        size: usize,
        mix: GoalMix,
        geometric_p: f64,
        k: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let indices: Vec<usize> = (0..size).map(|_| rng.random_range(0..dataset.len())).collect();
        let goals = dataset.sample_goals(&indices, mix, geometric_p, rng)?;
        let radius = dataset.maze.goal_radius();
        let tr = dataset.transitions();
        let mut s = Array2::zeros((size, 2));
        let mut a = Array2::zeros((size, 2));
        let mut s_next = Array2::zeros((size, 2));
        let mut g = Array2::zeros((size, 2));
        let mut s_k = Array2::zeros((size, 2));
        let mut r = Array1::zeros(size);
        let mut done = Array1::zeros(size);
        for (row, (&i, goal)) in indices.iter().zip(&goals).enumerate() {
            let t = &tr[i];
            let sk = dataset.offset_state(i, k);
            for j in 0..2 {
                s[[row, j]] = t.state[j];
                a[[row, j]] = t.action[j];
                s_next[[row, j]] = t.next_state[j];
                g[[row, j]] = goal.goal[j];
                s_k[[row, j]] = sk[j];
            }
            r[row] = reward(t.state, goal.goal, radius);
            done[row] = if r[row] == 0.0 { 1.0 } else { 0.0 };
        }
        Ok(Self {
            indices,
            s,
            a,
            s_next,
            g,
            s_k,
            reward: r,
            done,
        })
    }
}
