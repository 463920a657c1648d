//! The training procedure: critic updates on finished-versus-target batches,
//! then one out-of-order agent step over a batch drawn from the trajectory buffer.

mod buffer;
mod config;
mod reward;

use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

pub use buffer::{sample_images, FinishedPool, RawFeed, TrajectoryBuffer};
pub use config::TrainerConfig;
pub use reward::{compute_reward, compute_reward_with, RewardBreakdown};

use crate::agent::{log_prob_logit_grad, neg_entropy_logit_grad, sample_filter, AgentState};
use crate::dataset::load_dataset;
use crate::error::{Error, Result};
use crate::eval::{evaluate_images, EvalReport};
use crate::filters::{filter_vjp, FilterKind};
use crate::image::LinearImage;
use crate::model::{Choice, Model};
use crate::nn::{axpy, proxy, Adam, Gradients};
use crate::par;

/// What happened to one buffer entry during an agent step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub slot: usize,
    /// Step index of the state before the action.
    pub step: usize,
    pub kind: FilterKind,
    pub reused: bool,
    pub reward: RewardBreakdown,
    pub delta: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct IterationStats {
    pub iteration: u64,
    /// Mean critic loss over the inner updates.
    pub critic_loss: f64,
    pub critic_updates: usize,
    pub mean_reward: f64,
    pub mean_delta_sq: f64,
    pub mean_entropy_penalty: f64,
    /// Buffer entries that have taken all their steps.
    pub finished: usize,
    pub buffer_len: usize,
    pub records: Vec<StepRecord>,
}

impl IterationStats {
    /// One tab-separated metrics line.
    pub fn tsv(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\t{}\t{}",
            self.iteration,
            self.critic_loss,
            self.mean_reward,
            self.mean_delta_sq,
            self.mean_entropy_penalty,
            self.finished
        )
    }
}

struct StepOutcome {
    next: AgentState,
    record: StepRecord,
    selector: Gradients,
    params: Gradients,
    value: Gradients,
}

pub struct Trainer {
    cfg: TrainerConfig,
    model: Model,
    opt_selector: Adam,
    opt_params: Adam,
    opt_value: Adam,
    opt_critic: Adam,
    buffer: TrajectoryBuffer,
    feed: RawFeed,
    pool: FinishedPool,
    targets: Vec<LinearImage>,
    rng: ChaCha8Rng,
    iteration: u64,
}

fn proxies(images: &[LinearImage], side: usize) -> Result<Vec<LinearImage>> {
    par::map(images, |img| proxy(img, side)).into_iter().collect()
}

impl Trainer {
    /// `raws` and `targets` may have any resolution; networks see side x side proxies.
    pub fn new(cfg: TrainerConfig, raws: &[LinearImage], targets: &[LinearImage]) -> Result<Self> {
        cfg.validate()?;
        for (name, set) in [("raw", raws), ("target", targets)] {
            if set.len() < cfg.batch_size {
                return Err(Error::Dataset(format!(
                    "{name} set has {} images, batch_size needs {}",
                    set.len(),
                    cfg.batch_size
                )));
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut model = Model::new(cfg.side, cfg.widths, cfg.seed)?;
        model.critic.lambda = cfg.gp_lambda;
        let total = cfg.total_iterations;
        let opt_selector = Adam::new(&model.agent.selector, cfg.lr_actor, total);
        let opt_params = Adam::new(&model.agent.params, cfg.lr_actor, total);
        let opt_value = Adam::new(&model.agent.value, cfg.lr_value, total);
        let opt_critic = Adam::new(model.critic.network(), cfg.lr_critic, total);
        let mut feed = RawFeed::new(proxies(raws, cfg.side)?, &mut rng)?;
        let entries = (0..cfg.buffer_capacity).map(|_| feed.next(&mut rng)).collect();
        Ok(Self {
            pool: FinishedPool::new(cfg.finished_pool),
            targets: proxies(targets, cfg.side)?,
            buffer: TrajectoryBuffer::new(entries),
            feed,
            opt_selector,
            opt_params,
            opt_value,
            opt_critic,
            model,
            cfg,
            rng,
            iteration: 0,
        })
    }

    pub fn config(&self) -> &TrainerConfig {
        &self.cfg
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn buffer(&self) -> &TrajectoryBuffer {
        &self.buffer
    }

    pub fn finished_pool(&self) -> &FinishedPool {
        &self.pool
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    /// Optimizer steps taken by the critic so far.
    pub fn critic_steps(&self) -> u64 {
        self.opt_critic.steps()
    }

    pub fn metadata(&self) -> String {
        json!({ "config": self.cfg, "iteration": self.iteration }).to_string()
    }

    fn critic_batch(&mut self) -> (Vec<LinearImage>, Vec<LinearImage>) {
        let b = self.cfg.batch_size;
        let generated = if self.pool.is_empty() {
            // Nothing has finished yet; the buffer's current states stand in.
            sample_images(self.buffer.capacity(), b, &mut self.rng)
                .into_iter()
                .map(|i| self.buffer.get(i).image.clone())
                .collect()
        } else {
            self.pool.sample(b, &mut self.rng)
        };
        let targets = sample_images(self.targets.len(), b, &mut self.rng)
            .into_iter()
            .map(|i| self.targets[i].clone())
            .collect();
        (generated, targets)
    }

    fn step_entry(&self, slot: usize, state: &AgentState, seed: u64) -> Result<StepOutcome> {
        let cfg = &self.cfg;
        let agent = &self.model.agent;
        let critic = &self.model.critic;
        let scale = 1.0 / cfg.batch_size as f64;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);

        let sel = agent.select(state, &mut rng)?;
        let a1 = sample_filter(&sel.probs, &mut rng);
        let kind = FilterKind::from_index(a1).unwrap();
        let params = agent.parameters(state, kind, &mut rng)?;
        let action = params.action()?;
        let reused = state.reuses(kind);
        let next = state.advance(action.clone())?;

        let units = cfg.critic_reward_scale * (state.image.data().len() as f64).sqrt();
        let d_before = units * critic.score(&state.image)?;
        let (d_after, mut dq_image) = critic.score_with_gradient(&next.image)?;
        dq_image.iter_mut().for_each(|g| *g *= units);
        let d_after = units * d_after;
        let reward = compute_reward_with(
            d_before,
            d_after,
            &sel.probs,
            reused,
            cfg.entropy_coefficient,
            cfg.reuse_penalty,
        );
        let (v_s, v_tape) = agent.value_of(state, &mut rng)?;
        let v_next = if next.is_finished() {
            0.0
        } else if cfg.q_value_gradient == 0.0 {
            agent.value_of(&next, &mut rng)?.0
        } else {
            let (v, gv) = agent.value_with_gradient(&next, &mut rng)?;
            axpy(&mut dq_image, cfg.discount * cfg.q_value_gradient, &gv);
            v
        };
        let delta = reward.total + cfg.discount * v_next - v_s;
        if !delta.is_finite() {
            return Err(Error::NonFinite(format!("TD error at slot {slot}")));
        }
        let dq_draw = filter_vjp(&action, &state.image, &dq_image)?.raw;

        // Descent directions: minus the ascent gradients of the objective, and
        // the semi-gradient of delta^2 / 2 for the value network.
        let ent = neg_entropy_logit_grad(&sel.probs);
        let up: Vec<f64> = log_prob_logit_grad(&sel.probs, a1)
            .iter()
            .zip(&ent)
            .map(|(g, e)| scale * (-delta * g + cfg.entropy_coefficient * e))
            .collect();
        let selector = agent.logit_gradient(&sel, up)?;
        let neg_dq: Vec<f64> = dq_draw.iter().map(|g| -scale * g).collect();
        let params_grad = agent.policy2_gradient(&params, &neg_dq)?;
        let value = agent.value_gradient(&v_tape, -scale * delta)?;
        Ok(StepOutcome {
            record: StepRecord {
                slot,
                step: state.step,
                kind,
                reused,
                reward,
                delta,
            },
            next,
            selector,
            params: params_grad,
            value,
        })
    }

    /// One outer iteration: `n_critic` critic updates then one agent step.
    /// During the first `critic_warmup` iterations the agent step is skipped.
    pub fn iterate(&mut self) -> Result<IterationStats> {
        let it = self.iteration;
        let b = self.cfg.batch_size;
        let mut critic_loss = 0.0;
        for _ in 0..self.cfg.n_critic {
            let (gen, tgt) = self.critic_batch();
            let l = self
                .model
                .critic
                .update(&mut self.opt_critic, &gen, &tgt, &mut self.rng, it)?;
            critic_loss += l.loss;
        }
        critic_loss /= self.cfg.n_critic as f64;
        if !critic_loss.is_finite() {
            return Err(Error::NonFinite(format!("critic loss at iteration {it}")));
        }
        if it < self.cfg.critic_warmup {
            self.iteration += 1;
            return Ok(IterationStats {
                iteration: it,
                critic_loss,
                critic_updates: self.cfg.n_critic,
                mean_reward: 0.0,
                mean_delta_sq: 0.0,
                mean_entropy_penalty: 0.0,
                finished: self.buffer.finished_count(),
                buffer_len: self.buffer.capacity(),
                records: Vec::new(),
            });
        }

        let slots = self.buffer.sample(b, &mut self.rng)?;
        for &slot in &slots {
            if self.buffer.get(slot).is_finished() {
                let fresh = self.feed.next(&mut self.rng);
                let done = self.buffer.replace(slot, fresh);
                self.pool.push(done.image);
            }
        }
        let seeds: Vec<u64> = slots.iter().map(|_| self.rng.gen()).collect();
        let outcomes: Vec<StepOutcome> = par::map_range(b, |i| {
            self.step_entry(slots[i], self.buffer.get(slots[i]), seeds[i])
        })
        .into_iter()
        .collect::<Result<_>>()?;

        let agent = &self.model.agent;
        let sel = Gradients::sum(&agent.selector, outcomes.iter().map(|o| &o.selector));
        let par_g = Gradients::sum(&agent.params, outcomes.iter().map(|o| &o.params));
        let val = Gradients::sum(&agent.value, outcomes.iter().map(|o| &o.value));
        let agent = &mut self.model.agent;
        self.opt_selector.step(&mut agent.selector, &sel, it)?;
        self.opt_params.step(&mut agent.params, &par_g, it)?;
        self.opt_value.step(&mut agent.value, &val, it)?;

        let mut records = Vec::with_capacity(b);
        for (slot, o) in slots.iter().zip(outcomes) {
            self.buffer.replace(*slot, o.next);
            records.push(o.record);
        }
        let n = b as f64;
        let stats = IterationStats {
            iteration: it,
            critic_loss,
            critic_updates: self.cfg.n_critic,
            mean_reward: records.iter().map(|r| r.reward.total).sum::<f64>() / n,
            mean_delta_sq: records.iter().map(|r| r.delta * r.delta).sum::<f64>() / n,
            mean_entropy_penalty: records.iter().map(|r| r.reward.entropy_penalty).sum::<f64>() / n,
            finished: self.buffer.finished_count(),
            buffer_len: self.buffer.capacity(),
            records,
        };
        if !(stats.critic_loss.is_finite() && stats.mean_reward.is_finite()) {
            return Err(Error::NonFinite(format!("loss at iteration {it}")));
        }
        self.iteration += 1;
        Ok(stats)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.model.save(path, &self.metadata())
    }
}

/// Where a training run writes its outputs.
#[derive(Clone, Debug)]
pub struct RunPaths {
    pub checkpoint: PathBuf,
    pub metrics: PathBuf,
    pub eval: PathBuf,
}

impl RunPaths {
    /// `<ckpt>`, `<ckpt>.metrics.tsv` and `<ckpt>.eval.tsv`.
    pub fn beside(checkpoint: impl AsRef<Path>) -> Self {
        let c = checkpoint.as_ref().to_path_buf();
        let with = |suffix: &str| {
            let mut s = c.clone().into_os_string();
            s.push(suffix);
            PathBuf::from(s)
        };
        Self {
            metrics: with(".metrics.tsv"),
            eval: with(".eval.tsv"),
            checkpoint: c,
        }
    }
}

const EVAL_SLICE: usize = 32;

/// Greedy retouch of the first images of `raws`, compared with `targets`.
pub fn evaluate_model(model: &Model, raws: &[LinearImage], targets: &[LinearImage], seed: u64) -> Result<EvalReport> {
    let n = raws.len().min(EVAL_SLICE);
    let outputs: Vec<LinearImage> = par::map_range(n, |i| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ i as u64);
        model.retouch(&raws[i], Choice::Greedy, &mut rng).map(|(o, _)| o)
    })
    .into_iter()
    .collect::<Result<_>>()?;
    evaluate_images(&outputs, &targets[..targets.len().min(EVAL_SLICE)], seed)
}

/// Runs every configured iteration, writing metrics, periodic evaluations and
/// checkpoints. A non-finite loss stops the run after saving the last good model.
pub fn train(cfg: &TrainerConfig, raws: &[LinearImage], targets: &[LinearImage], paths: &RunPaths) -> Result<Trainer> {
    let mut trainer = Trainer::new(cfg.clone(), raws, targets)?;
    let open = |p: &Path| std::fs::File::create(p).map(std::io::BufWriter::new).map_err(|e| Error::io(p, e));
    let mut metrics = open(&paths.metrics)?;
    let mut eval_log = if cfg.eval_every > 0 { Some(open(&paths.eval)?) } else { None };
    while trainer.iteration() < cfg.total_iterations {
        let last_good = trainer.model.clone();
        let stats = match trainer.iterate() {
            Ok(s) => s,
            Err(e @ Error::NonFinite(_)) => {
                last_good.save(&paths.checkpoint, &trainer.metadata())?;
                metrics.flush().map_err(|e| Error::io(&paths.metrics, e))?;
                return Err(e);
            }
            Err(e) => return Err(e),
        };
        writeln!(metrics, "{}", stats.tsv()).map_err(|e| Error::io(&paths.metrics, e))?;
        let done = trainer.iteration();
        if let Some(log) = eval_log.as_mut() {
            if done % cfg.eval_every == 0 {
                let r = evaluate_model(&trainer.model, raws, targets, cfg.seed)?;
                writeln!(log, "{done}\t{}\t{}\t{}", r.luminance, r.contrast, r.saturation).map_err(|e| Error::io(&paths.eval, e))?;
            }
        }
        if cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0 {
            trainer.save(&paths.checkpoint)?;
        }
    }
    metrics.flush().map_err(|e| Error::io(&paths.metrics, e))?;
    if let Some(mut log) = eval_log {
        log.flush().map_err(|e| Error::io(&paths.eval, e))?;
    }
    trainer.save(&paths.checkpoint)?;
    Ok(trainer)
}

/// [`train`] over two image directories.
pub fn train_dirs(cfg: &TrainerConfig, raw_dir: &Path, target_dir: &Path, checkpoint: &Path) -> Result<Trainer> {
    let raws: Vec<LinearImage> = load_dataset(raw_dir)?.into_iter().map(|(_, i)| i).collect();
    let targets: Vec<LinearImage> = load_dataset(target_dir)?.into_iter().map(|(_, i)| i).collect();
    train(cfg, &raws, &targets, &RunPaths::beside(checkpoint))
}
