//! A trained agent plus critic, its checkpoint file, and inference.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;

use crate::agent::{argmax, sample_filter, Agent, AgentState, STEPS};
use crate::critic::Critic;
use crate::error::{Error, Result};
use crate::filters::{EditScript, FilterAction, FilterKind};
use crate::image::LinearImage;
use crate::nn::{load_sections, proxy, save_sections};

const SECTIONS: [&str; 4] = ["selector", "params", "value", "critic"];

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub agent: Agent,
    pub critic: Critic,
}

/// How pi1 picks a filter at inference time.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Choice {
    Greedy,
    Sample,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TraceStep {
    pub probs: Vec<f64>,
    pub action: FilterAction,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trace {
    pub steps: Vec<TraceStep>,
}

impl Trace {
    pub fn script(&self) -> EditScript {
        EditScript::new(self.steps.iter().map(|s| s.action.clone()).collect())
    }

    /// Per-step probability table with bars, then the chosen operation.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for (i, step) in self.steps.iter().enumerate() {
            let _ = writeln!(out, "Step {}", i + 1);
            for (k, p) in FilterKind::ALL.iter().zip(&step.probs) {
                let bar = "#".repeat((p * 40.0).round() as usize);
                let mark = if *k == step.action.kind() { '*' } else { ' ' };
                let _ = writeln!(out, " {mark} {:<6} {:>8.6} {bar}", k.short_name(), p);
            }
            let _ = writeln!(out, "   -> {}", step.action.display());
        }
        out
    }
}

impl Model {
    pub fn new(side: usize, widths: [usize; 4], seed: u64) -> Result<Self> {
        Ok(Self {
            agent: Agent::new(side, widths, seed)?,
            critic: Critic::new(side, widths, seed.wrapping_add(3))?,
        })
    }

    pub fn side(&self) -> usize {
        self.agent.side()
    }

    pub fn save(&self, path: impl AsRef<Path>, meta: &str) -> Result<()> {
        save_sections(
            path,
            meta,
            &[
                (SECTIONS[0], &self.agent.selector),
                (SECTIONS[1], &self.agent.params),
                (SECTIONS[2], &self.agent.value),
                (SECTIONS[3], self.critic.network()),
            ],
        )
    }

    /// Loads a model and its metadata string.
    pub fn load(path: impl AsRef<Path>) -> Result<(Self, String)> {
        let (meta, sections) = load_sections(path)?;
        let names: Vec<&str> = sections.iter().map(|s| s.name.as_str()).collect();
        if names != SECTIONS {
            return Err(Error::Checkpoint(format!("expected sections {SECTIONS:?}, found {names:?}")));
        }
        let mut nets = sections.into_iter().map(|s| s.network);
        let (sel, par, val, cri) = (
            nets.next().unwrap(),
            nets.next().unwrap(),
            nets.next().unwrap(),
            nets.next().unwrap(),
        );
        let side = sel.input_shape()[1];
        if [&par, &val].iter().any(|n| n.input_shape() != sel.input_shape()) || cri.input_shape() != [6, side, side] {
            return Err(Error::Checkpoint("networks disagree on input shape".into()));
        }
        let agent = Agent::with_networks(sel, par, val)
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        Ok((
            Self {
                agent,
                critic: Critic::with_network(cri),
            },
            meta,
        ))
    }

    /// Runs a full episode on the proxy of `image` and returns the trace.
    pub fn trace<R: Rng + ?Sized>(&self, image: &LinearImage, choice: Choice, rng: &mut R) -> Result<Trace> {
        let mut state = AgentState::new(proxy(image, self.side())?);
        let mut steps = Vec::with_capacity(STEPS);
        while !state.is_finished() {
            let probs = self.agent.policy1_distribution(&state, rng)?;
            if probs.iter().any(|p| !p.is_finite()) {
                return Err(Error::NonFinite("filter probabilities".into()));
            }
            let k = match choice {
                Choice::Greedy => argmax(&probs),
                Choice::Sample => sample_filter(&probs, rng),
            };
            let kind = FilterKind::from_index(k).unwrap();
            let action = self.agent.parameters(&state, kind, rng)?.action()?;
            state = state.advance(action.clone())?;
            steps.push(TraceStep { probs, action });
        }
        Ok(Trace { steps })
    }

    /// Retouches `image` at its own resolution with parameters chosen on the proxy.
    pub fn retouch<R: Rng + ?Sized>(&self, image: &LinearImage, choice: Choice, rng: &mut R) -> Result<(LinearImage, Trace)> {
        let trace = self.trace(image, choice, rng)?;
        let out = trace.script().apply(image);
        Ok((out, trace))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn save_load_round_trip() {
        let m = Model::new(16, [2, 3, 3, 4], 5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.ckpt");
        m.save(&p, "{}").unwrap();
        let (back, meta) = Model::load(&p).unwrap();
        assert_eq!(meta, "{}");
        assert_eq!(back.side(), 16);
        let img = LinearImage::filled(16, 16, [0.3, 0.4, 0.5]);
        // Weights round to f32, so outputs agree closely but not exactly.
        let a = m.critic.score(&img).unwrap();
        let b = back.critic.score(&img).unwrap();
        assert!((a - b).abs() < 1e-4);
    }

    #[test]
    fn neutral_model_trace() {
        let mut m = Model::new(16, [2, 3, 3, 4], 5).unwrap();
        m.agent = m.agent.clone().zeroed();
        let img = LinearImage::from_fn(40, 24, |x, y| [x as f64 / 40.0, y as f64 / 24.0, 0.3]);
        let (out, trace) = m.retouch(&img, Choice::Greedy, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(trace.steps.len(), STEPS);
        assert!(out.max_abs_diff(&img) < 1e-6);
        for s in &trace.steps {
            assert!(s.probs.iter().all(|&p| (p - 0.125).abs() < 1e-12));
        }
        assert!(trace.render().contains("Step 5"));
    }
}
