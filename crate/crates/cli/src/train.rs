use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use eikgcrl::diffcore::{checkpoint, AdamState, ParameterSet};
use eikgcrl::error::{Error, Result};
use eikgcrl::evalkit::{default_max_steps, evaluate, ActorController};
use eikgcrl::mazeworld::{Dataset, GoalMix};
use eikgcrl::policyextract::{
    flat_policy_loss, high_policy_loss, iql_value_loss, low_policy_loss, q_loss, Actor, FlatCritic, GaussianPolicy,
    HierarchicalActor, PolicyLoss, PolicyOutput, QField,
};
use eikgcrl::valuelearn::{
    combined_value_step, regularized_value_step, Batch, InputNorm, Regularizer, SpeedProfile, StepMetrics, TrainConfig,
    ValueField,
};

pub const VALUE_PREFIX: &str = "v/";
pub const Q_PREFIX: &str = "q/";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Algo {
    Hiql,
    EikHiql,
    HjbHiql,
    Gcivl,
    EikGcivl,
    Gciql,
    EikGciql,
}

impl Algo {
    pub const ALL: [Algo; 7] = [Self::Hiql, Self::EikHiql, Self::HjbHiql, Self::Gcivl, Self::EikGcivl, Self::Gciql, Self::EikGciql];

    pub fn name(self) -> &'static str {
        match self {
            Self::Hiql => "hiql",
            Self::EikHiql => "eik-hiql",
            Self::HjbHiql => "hjb-hiql",
            Self::Gcivl => "gcivl",
            Self::EikGcivl => "eik-gcivl",
            Self::Gciql => "gciql",
            Self::EikGciql => "eik-gciql",
        }
    }

    pub fn is_hierarchical(self) -> bool {
        matches!(self, Self::Hiql | Self::EikHiql | Self::HjbHiql)
    }

    pub fn uses_q(self) -> bool {
        matches!(self, Self::Gciql | Self::EikGciql)
    }

    pub fn regularizer(self) -> Regularizer {
        match self {
            Self::EikHiql | Self::EikGcivl | Self::EikGciql => Regularizer::Eikonal,
            Self::HjbHiql => Regularizer::Hjb,
            Self::Hiql | Self::Gcivl | Self::Gciql => Regularizer::None,
        }
    }
}

/// The config with the regularizer the algorithm name implies.
pub fn effective_config(config: &TrainConfig, algo: Algo) -> TrainConfig {
    let mut c = config.clone();
    c.regularizer = algo.regularizer();
    c
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalPoint {
    pub step: usize,
    pub mean: f64,
    pub std: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Value,
    High,
    Low,
    Flat,
}

/// One row of the run metrics CSV; policy columns are empty during value-only phases.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub step: usize,
    pub phase: Phase,
    pub td_loss: Option<f64>,
    pub penalty: Option<f64>,
    pub mean_grad_norm: Option<f64>,
    pub mean_value: Option<f64>,
    pub policy_loss: Option<f64>,
    pub mean_advantage: Option<f64>,
}

impl MetricsRow {
    fn new(step: usize, phase: Phase, v: Option<&StepMetrics>, p: Option<&PolicyLoss>) -> Self {
        Self {
            step,
            phase,
            td_loss: v.map(|m| m.td_loss),
            penalty: v.map(|m| m.penalty),
            mean_grad_norm: v.and_then(|m| m.mean_grad_norm),
            mean_value: v.map(|m| m.mean_value),
            policy_loss: p.map(|l| l.loss),
            mean_advantage: p.map(|l| l.mean_advantage),
        }
    }
}

/// File names inside a run directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunOutputs {
    pub checkpoint: PathBuf,
    pub best_checkpoint: PathBuf,
    pub metrics: PathBuf,
    pub evals: PathBuf,
}

impl RunOutputs {
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            checkpoint: dir.join("final.ckpt"),
            best_checkpoint: dir.join("best.ckpt"),
            metrics: dir.join("metrics.csv"),
            evals: dir.join("evals.csv"),
        }
    }
}

pub struct Trained {
    pub algo: Algo,
    pub config: TrainConfig,
    pub value: ValueField,
    pub q: Option<QField>,
    pub actor: Actor,
    pub metrics: Vec<MetricsRow>,
    pub evals: Vec<EvalPoint>,
    pub best: Option<EvalPoint>,
}

impl Trained {
    pub fn params(&self) -> Result<ParameterSet> {
        bundle(&self.value, self.q.as_ref(), &self.actor)
    }
}

/// Value, optional Q and actor in one checkpoint parameter set.
pub fn bundle(value: &ValueField, q: Option<&QField>, actor: &Actor) -> Result<ParameterSet> {
    let mut p = value.to_params(VALUE_PREFIX)?;
    if let Some(q) = q {
        p.extend(q.to_params(Q_PREFIX)?)?;
    }
    p.extend(actor.to_params()?)?;
    Ok(p)
}

fn finite(step: usize, what: &str, x: f64) -> Result<()> {
    if x.is_finite() {
        Ok(())
    } else {
        Err(Error::NumericalAbort {
            step,
            detail: format!("{what} is {x}"),
        })
    }
}

fn check_value(step: usize, m: &StepMetrics) -> Result<()> {
    finite(step, "value loss", m.td_loss)?;
    finite(step, "penalty", m.penalty)
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

struct Recorder<'a> {
    dataset: &'a Dataset,
    config: &'a TrainConfig,
    out: Option<RunOutputs>,
    metrics: Vec<MetricsRow>,
    evals: Vec<EvalPoint>,
    best: Option<EvalPoint>,
}

impl Recorder<'_> {
    fn log(&mut self, row: MetricsRow, last: bool) {
        if last || row.step % self.config.log_every == 0 {
            self.metrics.push(row);
        }
    }

    fn due(&self, step: usize, last: bool) -> bool {
        last || (self.config.eval_every > 0 && step % self.config.eval_every == 0)
    }

    fn evaluate(&mut self, step: usize, value: &ValueField, q: Option<&QField>, actor: &Actor) -> Result<()> {
        let c = self.config;
        let maze = &self.dataset.maze;
        let max_steps = c.eval_max_steps.unwrap_or_else(|| default_max_steps(maze));
        let r = evaluate(&ActorController(actor), maze, c.eval_goals, c.eval_episodes, max_steps, c.eval_seed)?;
        let point = EvalPoint {
            step,
            mean: r.mean,
            std: r.std,
        };
        self.evals.push(point);
        // ties keep the earlier checkpoint
        if self.best.is_none_or(|b| point.mean > b.mean) {
            self.best = Some(point);
            if let Some(out) = &self.out {
                checkpoint::save(&bundle(value, q, actor)?, &out.best_checkpoint)?;
            }
        }
        Ok(())
    }

    fn finish(&self) -> Result<()> {
        let Some(out) = &self.out else { return Ok(()) };
        let mut w = csv::Writer::from_path(&out.metrics)?;
        for row in &self.metrics {
            w.serialize(row)?;
        }
        w.flush().map_err(|e| Error::io(&out.metrics, e))?;
        let mut w = csv::Writer::from_path(&out.evals)?;
        for e in &self.evals {
            w.serialize(e)?;
        }
        if self.evals.is_empty() {
            w.write_record(["step", "mean", "std"])?;
        }
        w.flush().map_err(|e| Error::io(&out.evals, e))
    }
}

/// Whether a run evaluates its actor during training.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EvalMode {
    /// Every `eval_every` steps once an actor exists, and at the end.
    Periodic,
    Off,
}

/// Trains `algo` for `steps` updates. Hierarchical algorithms spend half the
/// budget on the value, then a quarter each on the subgoal and action policies;
/// flat ones interleave one value and one policy update per step. With `out`
/// set, checkpoints and metrics are written there.
pub fn train(dataset: &Dataset, config: &TrainConfig, algo: Algo, steps: usize, eval: EvalMode, out: Option<&Path>) -> Result<Trained> {
    let cfg = effective_config(config, algo);
    cfg.validate()?;
    if steps == 0 {
        return Err(Error::Config("steps must be positive".into()));
    }
    let maze = &dataset.maze;
    let profile = SpeedProfile::for_maze(&cfg, maze)?;
    let norm = InputNorm::for_maze(maze);
    let p_geo = cfg.geometric_p();
    let k = cfg.subgoal_k;
    let mut value = ValueField::new(&cfg.hidden_dims, cfg.activation, norm, cfg.seed)?;
    let mut opt_v = AdamState::new(&value.online);
    let mut eval_cfg = cfg.clone();
    if eval == EvalMode::Off {
        eval_cfg.eval_every = 0;
    }
    let mut rec = Recorder {
        dataset,
        config: &eval_cfg,
        out: out.map(RunOutputs::in_dir),
        metrics: Vec::new(),
        evals: Vec::new(),
        best: None,
    };
    let sample = |mix: GoalMix, rng: &mut ChaCha8Rng| Batch::sample(dataset, cfg.batch_size, mix, p_geo, k, rng);
    let (actor, q) = if algo.is_hierarchical() {
        let n_value = steps / 2;
        let n_high = steps / 4;
        let mut rng = stream(cfg.seed, 0);
        for step in 1..=n_value {
            let b = sample(cfg.value_goal_mix, &mut rng)?;
            let logged = step % cfg.log_every == 0 || step == n_value;
            let m = combined_value_step(&mut value, &mut opt_v, &b, &cfg, &profile, maze, logged)?;
            check_value(step, &m)?;
            rec.log(MetricsRow::new(step, Phase::Value, Some(&m), None), step == steps);
        }
        let mut high = GaussianPolicy::new(&cfg.hidden_dims, cfg.activation, norm, PolicyOutput::subgoal(maze), cfg.seed + 1)?;
        let mut opt_h = AdamState::new(&high.params);
        let mut rng = stream(cfg.seed, 1);
        for step in n_value + 1..=n_value + n_high {
            let b = sample(cfg.actor_goal_mix, &mut rng)?;
            let l = high_policy_loss(&high, &value, &b, cfg.beta, cfg.awr_clip)?;
            finite(step, "subgoal policy loss", l.loss)?;
            opt_h.step(&mut high.params, &l.grads, cfg.lr_hi)?;
            rec.log(MetricsRow::new(step, Phase::High, None, Some(&l)), step == steps);
        }
        let mut low = GaussianPolicy::new(&cfg.hidden_dims, cfg.activation, norm, PolicyOutput::action(maze), cfg.seed + 2)?;
        let mut opt_l = AdamState::new(&low.params);
        let mut rng = stream(cfg.seed, 2);
        for step in n_value + n_high + 1..=steps {
            let b = sample(cfg.actor_goal_mix, &mut rng)?;
            let l = low_policy_loss(&low, &value, &b, cfg.beta, cfg.awr_clip)?;
            finite(step, "action policy loss", l.loss)?;
            opt_l.step(&mut low.params, &l.grads, cfg.lr_lo)?;
            rec.log(MetricsRow::new(step, Phase::Low, None, Some(&l)), step == steps);
            let last = step == steps;
            if eval != EvalMode::Off && rec.due(step, last) {
                let actor = Actor::Hierarchical(HierarchicalActor::new(high.clone(), low.clone(), k)?);
                rec.evaluate(step, &value, None, &actor)?;
            }
        }
        (Actor::Hierarchical(HierarchicalActor::new(high, low, k)?), None)
    } else {
        let mut policy = GaussianPolicy::new(&cfg.hidden_dims, cfg.activation, norm, PolicyOutput::action(maze), cfg.seed + 1)?;
        let mut opt_p = AdamState::new(&policy.params);
        let mut q = if algo.uses_q() {
            Some(QField::new(&cfg.hidden_dims, cfg.activation, norm, maze.a_max(), cfg.seed + 3)?)
        } else {
            None
        };
        let mut opt_q = q.as_ref().map(|q| AdamState::new(&q.online));
        let mut rng_v = stream(cfg.seed, 0);
        let mut rng_p = stream(cfg.seed, 3);
        for step in 1..=steps {
            let last = step == steps;
            let logged = step % cfg.log_every == 0 || last;
            let b = sample(cfg.value_goal_mix, &mut rng_v)?;
            let m = match (&mut q, &mut opt_q) {
                (Some(q), Some(opt_q)) => {
                    let (ql, qg) = q_loss(q, &value, &b, cfg.gamma)?;
                    finite(step, "Q loss", ql)?;
                    let td = iql_value_loss(&value, q, &b, cfg.iota)?;
                    let m = regularized_value_step(&mut value, &mut opt_v, td, &b, &cfg, &profile, maze, logged)?;
                    opt_q.step(&mut q.online, &qg, cfg.lr_v)?;
                    q.polyak_update(cfg.tau)?;
                    m
                }
                _ => combined_value_step(&mut value, &mut opt_v, &b, &cfg, &profile, maze, logged)?,
            };
            check_value(step, &m)?;
            let b = sample(cfg.actor_goal_mix, &mut rng_p)?;
            let critic = match &q {
                Some(q) => FlatCritic::Q(q, &value),
                None => FlatCritic::Value(&value),
            };
            let l = flat_policy_loss(&policy, critic, &b, cfg.beta, cfg.awr_clip)?;
            finite(step, "policy loss", l.loss)?;
            opt_p.step(&mut policy.params, &l.grads, cfg.lr_lo)?;
            rec.log(MetricsRow::new(step, Phase::Flat, Some(&m), Some(&l)), last);
            if eval != EvalMode::Off && rec.due(step, last) {
                rec.evaluate(step, &value, q.as_ref(), &Actor::Flat(policy.clone()))?;
            }
        }
        (Actor::Flat(policy), q)
    };
    if let Some(o) = &rec.out {
        checkpoint::save(&bundle(&value, q.as_ref(), &actor)?, &o.checkpoint)?;
    }
    rec.finish()?;
    Ok(Trained {
        algo,
        config: cfg,
        value,
        q,
        actor,
        metrics: rec.metrics,
        evals: rec.evals,
        best: rec.best,
    })
}
