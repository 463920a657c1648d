use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::agent::STEPS;
use crate::error::{Error, Result};

/// Every hyperparameter of a training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainerConfig {
    pub batch_size: usize,
    pub lr_actor: f64,
    pub lr_critic: f64,
    pub lr_value: f64,
    pub n_critic: usize,
    pub buffer_capacity: usize,
    pub steps_per_episode: usize,
    pub discount: f64,
    pub entropy_coefficient: f64,
    pub reuse_penalty: f64,
    pub gp_lambda: f64,
    pub total_iterations: u64,
    pub seed: u64,
    /// Network input side; raws are area-downsampled to side x side.
    pub side: usize,
    /// Channel widths of the four conv layers, shared by all networks.
    pub widths: [usize; 4],
    /// Capacity of the FIFO pool of finished images fed to the critic.
    pub finished_pool: usize,
    /// Iterations between checkpoints; 0 writes only the final one.
    pub checkpoint_every: u64,
    /// Iterations between held-out histogram evaluations; 0 disables.
    pub eval_every: u64,
    /// Leading iterations that train only the critic.
    pub critic_warmup: u64,
    /// Weight of grad V(s') in the parameter policy's dQ/da; 1 is the full
    /// Q = r + gamma V(s'), 0 keeps only the immediate reward.
    pub q_value_gradient: f64,
    /// Weight of the critic increment D(s') - D(s) in the reward, in units of
    /// sqrt(M) with M the values per proxy. The critic is normalised against
    /// RMS pixel distance; 1 restores per-pixel L2 units.
    pub critic_reward_scale: f64,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            lr_actor: 1.5e-5,
            lr_critic: 5e-5,
            lr_value: 5e-4,
            n_critic: 5,
            buffer_capacity: 2048,
            steps_per_episode: STEPS,
            discount: 1.0,
            entropy_coefficient: 0.05,
            reuse_penalty: 1.0,
            gp_lambda: 10.0,
            total_iterations: 20_000,
            seed: 0,
            side: 64,
            widths: [16, 32, 64, 128],
            finished_pool: 2048,
            checkpoint_every: 1000,
            eval_every: 500,
            critic_warmup: 0,
            q_value_gradient: 1.0,
            critic_reward_scale: 1.0,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.batch_size == 0 || self.n_critic == 0 || self.total_iterations == 0 {
            return bad("batch_size, n_critic and total_iterations must be positive".into());
        }
        if self.batch_size > self.buffer_capacity {
            return bad(format!(
                "batch_size {} exceeds buffer_capacity {}",
                self.batch_size, self.buffer_capacity
            ));
        }
        if self.steps_per_episode != STEPS {
            return bad(format!("steps_per_episode must be {STEPS}"));
        }
        for (k, v) in [
            ("lr_actor", self.lr_actor),
            ("lr_critic", self.lr_critic),
            ("lr_value", self.lr_value),
            ("gp_lambda", self.gp_lambda),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{k} must be positive"));
            }
        }
        if !(self.discount > 0.0 && self.discount <= 1.0) {
            return bad("discount must lie in (0, 1]".into());
        }
        if !(self.q_value_gradient >= 0.0 && self.q_value_gradient.is_finite()) {
            return bad("q_value_gradient must be non-negative".into());
        }
        if !(self.critic_reward_scale > 0.0 && self.critic_reward_scale.is_finite()) {
            return bad("critic_reward_scale must be positive".into());
        }
        if !(self.entropy_coefficient >= 0.0 && self.reuse_penalty >= 0.0) {
            return bad("penalty coefficients must be non-negative".into());
        }
        if self.side < 16 || self.side % 16 != 0 {
            return bad(format!("side {} must be a positive multiple of 16", self.side));
        }
        if self.widths.contains(&0) {
            return bad("widths must be positive".into());
        }
        if self.finished_pool == 0 {
            return bad("finished_pool must be positive".into());
        }
        Ok(())
    }

    /// Parses flat `key = value` lines over the defaults. `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut c = Self::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap().trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            match key {
                "batch_size" => c.batch_size = parse(key, value)?,
                "lr_actor" => c.lr_actor = parse(key, value)?,
                "lr_critic" => c.lr_critic = parse(key, value)?,
                "lr_value" => c.lr_value = parse(key, value)?,
                "n_critic" => c.n_critic = parse(key, value)?,
                "buffer_capacity" => c.buffer_capacity = parse(key, value)?,
                "steps_per_episode" => c.steps_per_episode = parse(key, value)?,
                "discount" => c.discount = parse(key, value)?,
                "entropy_coefficient" => c.entropy_coefficient = parse(key, value)?,
                "reuse_penalty" => c.reuse_penalty = parse(key, value)?,
                "gp_lambda" => c.gp_lambda = parse(key, value)?,
                "total_iterations" => c.total_iterations = parse(key, value)?,
                "seed" => c.seed = parse(key, value)?,
                "side" => c.side = parse(key, value)?,
                "widths" => {
                    let w: Vec<usize> = value
                        .split(',')
                        .map(|v| parse(key, v.trim()))
                        .collect::<Result<_>>()?;
                    c.widths = w
                        .try_into()
                        .map_err(|_| Error::Config("widths needs four values".into()))?;
                }
                "finished_pool" => c.finished_pool = parse(key, value)?,
                "checkpoint_every" => c.checkpoint_every = parse(key, value)?,
                "eval_every" => c.eval_every = parse(key, value)?,
                "critic_warmup" => c.critic_warmup = parse(key, value)?,
                "q_value_gradient" => c.q_value_gradient = parse(key, value)?,
                "critic_reward_scale" => c.critic_reward_scale = parse(key, value)?,
                _ => return Err(Error::Config(format!("line {}: unknown key {key:?}", n + 1))),
            }
        }
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Inverse of [`TrainerConfig::parse`].
    pub fn to_text(&self) -> String {
        let w = self.widths.map(|v| v.to_string()).join(",");
        format!(
            "batch_size = {}\nlr_actor = {:e}\nlr_critic = {:e}\nlr_value = {:e}\nn_critic = {}\n\
             buffer_capacity = {}\nsteps_per_episode = {}\ndiscount = {}\nentropy_coefficient = {}\n\
             reuse_penalty = {}\ngp_lambda = {}\ntotal_iterations = {}\nseed = {}\nside = {}\n\
             widths = {w}\nfinished_pool = {}\ncheckpoint_every = {}\neval_every = {}\n\
             critic_warmup = {}\nq_value_gradient = {}\ncritic_reward_scale = {}\n",
            self.batch_size,
            self.lr_actor,
            self.lr_critic,
            self.lr_value,
            self.n_critic,
            self.buffer_capacity,
            self.steps_per_episode,
            self.discount,
            self.entropy_coefficient,
            self.reuse_penalty,
            self.gp_lambda,
            self.total_iterations,
            self.seed,
            self.side,
            self.finished_pool,
            self.checkpoint_every,
            self.eval_every,
            self.critic_warmup,
            self.q_value_gradient,
            self.critic_reward_scale,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_the_training_procedure() {
        let c = TrainerConfig::default();
        assert_eq!((c.batch_size, c.n_critic, c.buffer_capacity), (64, 5, 2048));
        assert_eq!((c.lr_actor, c.lr_critic, c.lr_value), (1.5e-5, 5e-5, 5e-4));
        assert_eq!(c.discount, 1.0);
        c.validate().unwrap();
    }

    #[test]
    fn text_round_trip() {
        let c = TrainerConfig {
            widths: [4, 8, 8, 16],
            side: 32,
            lr_actor: 3.25e-4,
            ..Default::default()
        };
        assert_eq!(TrainerConfig::parse(&c.to_text()).unwrap(), c);
    }

    #[test]
    fn rejects_unknown_and_invalid() {
        assert!(matches!(TrainerConfig::parse("batch = 3"), Err(Error::Config(_))));
        assert!(TrainerConfig::parse("batch_size = x").is_err());
        assert!(TrainerConfig::parse("batch_size = 4096").is_err());
        assert!(TrainerConfig::parse("widths = 1,2,3").is_err());
        assert!(TrainerConfig::parse("side = 20").is_err());
        let c = TrainerConfig::parse("# comment\n\nseed = 7 # trailing\n").unwrap();
        assert_eq!(c.seed, 7);
    }
}
