//! The retouching agent: filter selection (pi1), parameter regression (pi2)
//! and the state-value estimate V.

use rand::Rng;

use crate::critic::Critic;
use crate::error::{Error, Result};
use crate::filters::{apply_filter, filter_vjp, FilterAction, FilterKind};
use crate::image::LinearImage;
use crate::nn::{input_with_planes, rgb_gradient, BackboneSpec, Gradients, Network, Tape, Tensor};

/// Edits per episode.
pub const STEPS: usize = 5;
/// Discount factor.
pub const GAMMA: f64 = 1.0;
/// Constant input planes: eight used-filter flags and the step fraction.
pub const STATE_PLANES: usize = FilterKind::COUNT + 1;
/// Channels seen by the agent networks.
/// Scale applied to the initial output-layer weights of all three networks.
pub const OUTPUT_INIT_SCALE: f64 = 0.01;
pub const AGENT_CHANNELS: usize = 3 + STATE_PLANES;

// tanh saturates to exactly 1.0 in floating point for large inputs.
const RAW_LIMIT: f64 = 1.0 - 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct AgentState {
    /// Working proxy the networks see.
    pub image: LinearImage,
    pub used: [bool; FilterKind::COUNT],
    pub step: usize,
    /// Actions taken so far, replayable on the full-resolution image.
    pub actions: Vec<FilterAction>,
}

impl AgentState {
    pub fn new(image: LinearImage) -> Self {
        Self {
            image,
            used: [false; FilterKind::COUNT],
            step: 0,
            actions: Vec::new(),
        }
    }

    pub fn is_finished(&self) -> bool {
        self.step >= STEPS
    }

    pub fn planes(&self) -> [f64; STATE_PLANES] {
        let mut p = [0.0; STATE_PLANES];
        for (k, &u) in self.used.iter().enumerate() {
            p[k] = if u { 1.0 } else { 0.0 };
        }
        p[FilterKind::COUNT] = self.step as f64 / STEPS as f64;
        p
    }

    pub fn input(&self) -> Tensor {
        input_with_planes(&self.image, &self.planes())
    }

    /// True if `kind` was already used in this episode.
    pub fn reuses(&self, kind: FilterKind) -> bool {
        self.used[kind.index()]
    }

    /// The state after applying `action`.
    pub fn advance(&self, action: FilterAction) -> Result<AgentState> {
        if self.is_finished() {
            return Err(Error::Invalid("episode already finished".into()));
        }
        let mut used = self.used;
        used[action.kind().index()] = true;
        let mut actions = self.actions.clone();
        let image = apply_filter(&action, &self.image);
        actions.push(action);
        Ok(AgentState {
            image,
            used,
            step: self.step + 1,
            actions,
        })
    }
}

/// r_k + gamma * r_{k+1} + ... for every k.
pub fn returns(rewards: &[f64], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for k in (0..rewards.len()).rev() {
        acc = rewards[k] + gamma * acc;
        out[k] = acc;
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub states: Vec<AgentState>,
    pub actions: Vec<FilterAction>,
    pub rewards: Vec<f64>,
    pub returns: Vec<f64>,
}

impl Trajectory {
    pub fn new(states: Vec<AgentState>, actions: Vec<FilterAction>, rewards: Vec<f64>) -> Result<Self> {
        if states.len() != actions.len() + 1 || rewards.len() != actions.len() {
            return Err(Error::Invalid(format!(
                "trajectory with {} states, {} actions, {} rewards",
                states.len(),
                actions.len(),
                rewards.len()
            )));
        }
        let returns = returns(&rewards, GAMMA);
        Ok(Self {
            states,
            actions,
            rewards,
            returns,
        })
    }
}

pub fn td_error(reward: f64, v_s: f64, v_next: f64, terminal: bool) -> f64 {
    let bootstrap = if terminal { 0.0 } else { GAMMA * v_next };
    reward + bootstrap - v_s
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|z| (z - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Index drawn from `dist` by inverse CDF.
pub fn sample_filter<R: Rng + ?Sized>(dist: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, &p) in dist.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // Rounding left u past the final partial sum; take the last supported index.
    dist.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

/// First index of the largest probability.
pub fn argmax(dist: &[f64]) -> usize {
    let mut best = 0;
    for (i, &p) in dist.iter().enumerate() {
        if p > dist[best] {
            best = i;
        }
    }
    best
}

/// Gradient of log pi(a) with respect to the logits: onehot(a) - pi.
pub fn log_prob_logit_grad(dist: &[f64], action: usize) -> Vec<f64> {
    dist.iter()
        .enumerate()
        .map(|(i, &p)| if i == action { 1.0 - p } else { -p })
        .collect()
}

/// Sum of p log p (zero terms contribute zero).
pub fn neg_entropy(dist: &[f64]) -> f64 {
    dist.iter().filter(|&&p| p > 0.0).map(|p| p * p.ln()).sum()
}

/// Gradient of sum p log p with respect to the logits.
pub fn neg_entropy_logit_grad(dist: &[f64]) -> Vec<f64> {
    let h = neg_entropy(dist);
    dist.iter()
        .map(|&p| if p > 0.0 { p * (p.ln() - h) } else { 0.0 })
        .collect()
}

/// Output of the selection network for one state.
#[derive(Clone, Debug)]
pub struct Selection {
    pub probs: Vec<f64>,
    pub tape: Tape,
}

/// Output of the parameter network for one state and filter.
#[derive(Clone, Debug)]
pub struct Parameters {
    pub kind: FilterKind,
    pub raw: Vec<f64>,
    pub tape: Tape,
}

impl Parameters {
    pub fn action(&self) -> Result<FilterAction> {
        FilterAction::new(self.kind, self.raw.clone())
    }
}

/// Policy and value networks.
#[derive(Clone, Debug, PartialEq)]
pub struct Agent {
    pub selector: Network,
    pub params: Network,
    pub value: Network,
}

impl Agent {
    pub fn new(side: usize, widths: [usize; 4], seed: u64) -> Result<Self> {
        let spec = |outputs: usize, dropout: f64| BackboneSpec {
            in_channels: AGENT_CHANNELS,
            side,
            widths,
            hidden: 128,
            outputs,
            dropout,
        };
        let mut agent = Self {
            selector: Network::backbone(&spec(FilterKind::COUNT, 0.5), seed)?,
            params: Network::backbone(&spec(FilterKind::total_arity(), 0.5), seed.wrapping_add(1))?,
            value: Network::backbone(&spec(1, 0.0), seed.wrapping_add(2))?,
        };
        // Start near uniform selection, neutral filters and zero value.
        for net in [&mut agent.selector, &mut agent.params, &mut agent.value] {
            net.scale_output_layer(OUTPUT_INIT_SCALE);
        }
        Ok(agent)
    }

    /// Builds an agent from custom networks; output sizes are checked.
    pub fn with_networks(selector: Network, params: Network, value: Network) -> Result<Self> {
        for (net, want) in [
            (&selector, FilterKind::COUNT),
            (&params, FilterKind::total_arity()),
            (&value, 1),
        ] {
            if net.output_len() != want {
                return Err(Error::shape(want, net.output_len()));
            }
        }
        Ok(Self {
            selector,
            params,
            value,
        })
    }

    /// All weights zero: uniform selection, neutral parameters, zero value.
    pub fn zeroed(mut self) -> Self {
        self.selector.zero_params();
        self.params.zero_params();
        self.value.zero_params();
        self
    }

    pub fn side(&self) -> usize {
        self.selector.input_shape()[1]
    }

    pub fn select<R: Rng + ?Sized>(&self, state: &AgentState, rng: &mut R) -> Result<Selection> {
        let (logits, tape) = self.selector.forward(&state.input(), rng)?;
        Ok(Selection {
            probs: softmax(logits.data()),
            tape,
        })
    }

    pub fn policy1_distribution<R: Rng + ?Sized>(&self, state: &AgentState, rng: &mut R) -> Result<Vec<f64>> {
        Ok(self.select(state, rng)?.probs)
    }

    pub fn parameters<R: Rng + ?Sized>(
        &self,
        state: &AgentState,
        kind: FilterKind,
        rng: &mut R,
    ) -> Result<Parameters> {
        let (out, tape) = self.params.forward(&state.input(), rng)?;
        if !out.is_finite() {
            return Err(Error::NonFinite("filter parameters".into()));
        }
        let off = kind.param_offset();
        let raw = out.data()[off..off + kind.arity()]
            .iter()
            .map(|z| z.tanh().clamp(-RAW_LIMIT, RAW_LIMIT))
            .collect();
        Ok(Parameters { kind, raw, tape })
    }

    pub fn policy2_params<R: Rng + ?Sized>(
        &self,
        state: &AgentState,
        kind: FilterKind,
        rng: &mut R,
    ) -> Result<Vec<f64>> {
        Ok(self.parameters(state, kind, rng)?.raw)
    }

    pub fn value_of<R: Rng + ?Sized>(&self, state: &AgentState, rng: &mut R) -> Result<(f64, Tape)> {
        let (v, tape) = self.value.forward(&state.input(), rng)?;
        Ok((v.data()[0], tape))
    }

    /// V(state) and its gradient with respect to the state's image pixels.
    pub fn value_with_gradient<R: Rng + ?Sized>(&self, state: &AgentState, rng: &mut R) -> Result<(f64, Vec<f64>)> {
        let (v, tape) = self.value_of(state, rng)?;
        let b = self.value.backward(&tape, &Tensor::vector(vec![1.0]), false, true)?;
        let g = rgb_gradient(&b.input.unwrap(), state.image.width(), state.image.height());
        Ok((v, g))
    }

    /// Weight gradient of `scale * log pi1(action | s)`; `scale` is the advantage.
    pub fn policy1_gradient(&self, sel: &Selection, action: usize, scale: f64) -> Result<Gradients> {
        let up: Vec<f64> = log_prob_logit_grad(&sel.probs, action)
            .into_iter()
            .map(|g| g * scale)
            .collect();
        self.logit_gradient(sel, up)
    }

    /// Weight gradient of an arbitrary upstream on the selector logits.
    pub fn logit_gradient(&self, sel: &Selection, upstream: Vec<f64>) -> Result<Gradients> {
        Ok(self
            .selector
            .backward(&sel.tape, &Tensor::vector(upstream), true, false)?
            .weights
            .unwrap())
    }

    /// Weight gradient of `dq_draw . pi2(s, a1)`.
    pub fn policy2_gradient(&self, params: &Parameters, dq_draw: &[f64]) -> Result<Gradients> {
        let kind = params.kind;
        if dq_draw.len() != kind.arity() {
            return Err(Error::Arity {
                kind: kind.name(),
                expected: kind.arity(),
                actual: dq_draw.len(),
            });
        }
        let mut up = vec![0.0; FilterKind::total_arity()];
        let off = kind.param_offset();
        for (j, (&g, &t)) in dq_draw.iter().zip(&params.raw).enumerate() {
            up[off + j] = g * (1.0 - t * t);
        }
        Ok(self
            .params
            .backward(&params.tape, &Tensor::vector(up), true, false)?
            .weights
            .unwrap())
    }

    /// Weight gradient of `scale * V(s)` for the tape of a value forward pass.
    pub fn value_gradient(&self, tape: &Tape, scale: f64) -> Result<Gradients> {
        Ok(self
            .value
            .backward(tape, &Tensor::vector(vec![scale]), true, false)?
            .weights
            .unwrap())
    }
}

/// dQ/d(raw) for taking `action` at `state`, where
/// Q = D(s') + [s' not terminal] * gamma * V(s') + terms free of the parameters.
pub fn dq_draw<R: Rng + ?Sized>(
    agent: &Agent,
    critic: &Critic,
    state: &AgentState,
    action: &FilterAction,
    next: &AgentState,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let mut up = critic.score_input_gradient(&next.image)?;
    if !next.is_finished() {
        let (_, gv) = agent.value_with_gradient(next, rng)?;
        crate::nn::axpy(&mut up, GAMMA, &gv);
    }
    Ok(filter_vjp(action, &state.image, &up)?.raw)
}
