use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::diffcore::Activation;
use crate::error::{Error, Result};
use crate::mazeworld::GoalMix;

pub const CONFIG_FORMAT: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regularizer {
    None,
    Eikonal,
    Hjb,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpeedProfileKind {
    Unit,
    Exp,
    Lin,
}

/// Training hyperparameters. Defaults follow the Eik-HIQL reference values;
/// the network size and evaluation settings are this crate's own defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub format: u32,
    pub gamma: f64,
    pub iota: f64,
    pub beta: f64,
    pub tau: f64,
    pub lr_v: f64,
    pub lr_hi: f64,
    pub lr_lo: f64,
    pub batch_size: usize,
    pub lambda_eik: f64,
    pub lambda_decay: f64,
    pub s_min: f64,
    pub regularizer: Regularizer,
    pub speed_profile: SpeedProfileKind,
    pub seed: u64,
    pub hidden_dims: Vec<usize>,
    pub activation: Activation,
    /// Subgoal offset in steps.
    pub subgoal_k: usize,
    pub awr_clip: f64,
    pub value_goal_mix: GoalMix,
    pub actor_goal_mix: GoalMix,
    /// Success probability of the future-goal offset; `None` means `1 − gamma`.
    pub geometric_p: Option<f64>,
    pub eval_every: usize,
    pub eval_goals: usize,
    pub eval_episodes: usize,
    /// `None` picks the maze-size default.
    pub eval_max_steps: Option<usize>,
    pub eval_seed: u64,
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            format: CONFIG_FORMAT,
            gamma: 0.99,
            iota: 0.7,
            beta: 3.0,
            tau: 0.005,
            lr_v: 3e-4,
            lr_hi: 3e-4,
            lr_lo: 3e-4,
            batch_size: 1024,
            lambda_eik: 1.0,
            lambda_decay: 1.0,
            s_min: 0.1,
            regularizer: Regularizer::Eikonal,
            speed_profile: SpeedProfileKind::Unit,
            seed: 0,
            hidden_dims: vec![256, 256],
            activation: Activation::Tanh,
            subgoal_k: 10,
            awr_clip: 100.0,
            value_goal_mix: GoalMix::default(),
            actor_goal_mix: GoalMix {
                p_current: 0.0,
                p_future: 1.0,
                p_random: 0.0,
            },
            geometric_p: None,
            eval_every: 2000,
            eval_goals: 5,
            eval_episodes: 50,
            eval_max_steps: None,
            eval_seed: 12345,
            log_every: 100,
        }
    }
}

impl TrainConfig {
    pub fn geometric_p(&self) -> f64 {
        self.geometric_p.unwrap_or(1.0 - self.gamma).clamp(f64::MIN_POSITIVE, 1.0)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.format != CONFIG_FORMAT {
            return bad(format!("unsupported config format {}", self.format));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad(format!("gamma {} must lie in (0, 1]", self.gamma));
        }
        if !(0.5..=1.0).contains(&self.iota) {
            return bad(format!("iota {} must lie in [0.5, 1]", self.iota));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return bad(format!("tau {} must lie in [0, 1]", self.tau));
        }
        for (name, lr) in [("lr_v", self.lr_v), ("lr_hi", self.lr_hi), ("lr_lo", self.lr_lo)] {
            if !(lr > 0.0 && lr.is_finite()) {
                return bad(format!("{name} {lr} must be positive"));
            }
        }
        if !(self.beta.is_finite() && self.beta >= 0.0) {
            return bad(format!("beta {} must be non-negative", self.beta));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if !(self.lambda_eik.is_finite() && self.lambda_eik >= 0.0) {
            return bad(format!("lambda_eik {} must be non-negative", self.lambda_eik));
        }
        if !(self.s_min > 0.0 && self.s_min <= 1.0) {
            return bad(format!("s_min {} must lie in (0, 1]", self.s_min));
        }
        if !self.lambda_decay.is_finite() {
            return bad("lambda_decay must be finite".into());
        }
        if self.hidden_dims.contains(&0) {
            return bad("hidden_dims must be positive".into());
        }
        if self.subgoal_k == 0 {
            return bad("subgoal_k must be at least 1".into());
        }
        if !(self.awr_clip > 0.0) {
            return bad("awr_clip must be positive".into());
        }
        if let Some(p) = self.geometric_p {
            if !(p > 0.0 && p <= 1.0) {
                return bad(format!("geometric_p {p} must lie in (0, 1]"));
            }
        }
        if self.eval_goals == 0 || self.eval_episodes == 0 {
            return bad("eval_goals and eval_episodes must be positive".into());
        }
        if self.log_every == 0 {
            return bad("log_every must be positive".into());
        }
        self.value_goal_mix.validate()?;
        self.actor_goal_mix.validate()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}
