use std::collections::HashMap;
use std::f64::consts::TAU;
use std::sync::{Arc, Mutex};

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::mazeworld::{MazeSpec, State};
use crate::oracle::{fast_march, greedy_action, DistanceField, SpeedGrid};
use crate::policyextract::Actor;
use crate::valuelearn::states_matrix;

/// Anything that maps a batch of states and one shared goal to actions.
pub trait Controller: Sync {
    fn act_batch(&self, states: &[State], goal: State, rng: &mut ChaCha8Rng) -> Result<Vec<[f64; 2]>>;
}

/// Trained actor, run with mean actions.
pub struct ActorController<'a>(pub &'a Actor);

impl Controller for ActorController<'_> {
    fn act_batch(&self, states: &[State], goal: State, rng: &mut ChaCha8Rng) -> Result<Vec<[f64; 2]>> {
        let s = states_matrix(states);
        let g = states_matrix(&vec![goal; states.len()]);
        let a = self.0.act_batch(s.view(), g.view(), true, rng)?;
        Ok(a.rows().into_iter().map(|r| [r[0], r[1]]).collect())
    }
}

/// Uniform actions in the disc of radius `a_max`.
pub struct RandomController {
    pub a_max: f64,
}

impl Controller for RandomController {
    fn act_batch(&self, states: &[State], _goal: State, rng: &mut ChaCha8Rng) -> Result<Vec<[f64; 2]>> {
        Ok(states
            .iter()
            .map(|_| {
                let th = rng.random_range(0.0..TAU);
                let r = self.a_max * rng.random::<f64>().sqrt();
                [r * th.cos(), r * th.sin()]
            })
            .collect())
    }
}

/// Greedy descent of fast-marching travel time; fields are built per goal cell on first use.
pub struct OracleController {
    maze: MazeSpec,
    refine: usize,
    fields: Mutex<HashMap<(usize, usize), Arc<DistanceField>>>,
}

impl OracleController {
    pub fn new(maze: &MazeSpec, refine: usize) -> Self {
        Self {
            maze: maze.clone(),
            refine,
            fields: Mutex::new(HashMap::new()),
        }
    }

    pub fn field(&self, goal: State) -> Result<Arc<DistanceField>> {
        let cell = self
            .maze
            .cell_of(goal)
            .ok_or_else(|| Error::Config(format!("goal {goal:?} lies outside the maze")))?;
        if let Some(f) = self.fields.lock().expect("field cache poisoned").get(&cell) {
            return Ok(f.clone());
        }
        let grid = SpeedGrid::uniform(&self.maze, self.refine, 1.0)?;
        let f = Arc::new(fast_march(&self.maze, cell, &grid)?);
        self.fields.lock().expect("field cache poisoned").insert(cell, f.clone());
        Ok(f)
    }
}

impl Controller for OracleController {
    fn act_batch(&self, states: &[State], goal: State, _rng: &mut ChaCha8Rng) -> Result<Vec<[f64; 2]>> {
        let f = self.field(goal)?;
        Ok(states.iter().map(|&s| greedy_action(&f, s, goal)).collect())
    }
}
