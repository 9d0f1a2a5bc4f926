//! The QHD client: a linear Q-readout over a fixed encoder trained with
//! semi-gradient TD(0) against a periodically synchronised target readout.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encoder::{EncoderError, RffEncoder};
use crate::envs::{Env, EnvError, Transition};
use crate::linalg::{axpy, dot, Matrix};
use crate::rng::{rng_from_seed, SimRng};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AgentError {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error("readout shape {actual:?} does not match encoder/action space {expected:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        actual: (usize, usize),
    },
    #[error("invalid agent configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentConfig {
    pub learning_rate: f64,
    pub discount: f64,
    /// Target readout is re-synchronised every this many episodes.
    pub target_sync_period: usize,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    /// Episode index at which the exponential schedule reaches `epsilon_end`.
    pub epsilon_decay_episodes: usize,
    pub buffer_capacity: usize,
    pub minibatch_size: usize,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            discount: 0.99,
            target_sync_period: 5,
            epsilon_start: 1.0,
            epsilon_end: 0.001,
            epsilon_decay_episodes: 600,
            buffer_capacity: 10_000,
            minibatch_size: 32,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<(), AgentError> {
        let bad = |msg: String| Err(AgentError::InvalidConfig(msg));
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be >= 0, got {}", self.learning_rate));
        }
        if !(self.discount > 0.0 && self.discount < 1.0) {
            return bad(format!("discount must lie in (0, 1), got {}", self.discount));
        }
        if !(0.0..=1.0).contains(&self.epsilon_start) || !(0.0..=1.0).contains(&self.epsilon_end) {
            return bad("epsilon bounds must lie in [0, 1]".into());
        }
        if self.epsilon_end > self.epsilon_start {
            return bad("epsilon_end must not exceed epsilon_start".into());
        }
        if self.target_sync_period == 0 || self.buffer_capacity == 0 || self.minibatch_size == 0 {
            return bad("target_sync_period, buffer_capacity and minibatch_size must be positive".into());
        }
        Ok(())
    }

    /// Exploration rate for the `episode`-th episode (0-based): exponential
    /// from `epsilon_start`, exactly `epsilon_end` from index
    /// `epsilon_decay_episodes − 1` on.
    pub fn epsilon_at(&self, episode: usize) -> f64 {
        let last = self.epsilon_decay_episodes.saturating_sub(1);
        if episode >= last || self.epsilon_start == 0.0 {
            return self.epsilon_end;
        }
        if self.epsilon_end == 0.0 {
            // geometric decay is undefined towards zero; fall back to linear
            return self.epsilon_start * (1.0 - episode as f64 / last as f64);
        }
        let frac = episode as f64 / last as f64;
        let eps = self.epsilon_start * (self.epsilon_end / self.epsilon_start).powf(frac);
        eps.clamp(self.epsilon_end, self.epsilon_start)
    }
}

/// Readout `W ∈ ℝ^{D×|A|}`. Stored action-major so each `w_a` is contiguous.
#[derive(Debug, Clone, PartialEq)]
pub struct ReadoutMatrix {
    by_action: Matrix,
}

impl ReadoutMatrix {
    pub fn zeros(dim: usize, actions: usize) -> Self {
        Self {
            by_action: Matrix::zeros(actions, dim),
        }
    }

    /// From the conventional `D × |A|` layout.
    pub fn from_matrix(w: &Matrix) -> Self {
        Self { by_action: w.transpose() }
    }

    /// The conventional `D × |A|` layout.
    pub fn to_matrix(&self) -> Matrix {
        self.by_action.transpose()
    }

    /// `|A| × D`, row `a` is `w_a`.
    pub fn by_action(&self) -> &Matrix {
        &self.by_action
    }

    pub fn dim(&self) -> usize {
        self.by_action.cols()
    }

    pub fn actions(&self) -> usize {
        self.by_action.rows()
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.dim(), self.actions())
    }

    pub fn column(&self, a: usize) -> &[f64] {
        self.by_action.row(a)
    }

    pub fn column_mut(&mut self, a: usize) -> &mut [f64] {
        self.by_action.row_mut(a)
    }

    /// `Φᵀ W` for one feature vector.
    pub fn q_from_features(&self, phi: &[f64]) -> Vec<f64> {
        (0..self.actions()).map(|a| dot(phi, self.column(a))).collect()
    }

    pub fn max_q(&self, phi: &[f64]) -> f64 {
        (0..self.actions())
            .map(|a| dot(phi, self.column(a)))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.by_action.is_finite()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.by_action.frobenius_norm()
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Bounded FIFO of transitions sampled uniformly with replacement.
///
/// Each slot also caches `Φ(s)` in single precision, which halves the memory
/// traffic of replayed updates. Consecutive slots of the same episode share
/// states (`s'` of slot `t` is `s` of slot `t+1`), so `Φ(s')` is read from the
/// successor slot when it is still present and recomputed otherwise.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    slots: Vec<Slot>,
    /// Next slot to write.
    head: usize,
    rng: SimRng,
}

#[derive(Debug, Clone)]
struct Slot {
    transition: Transition,
    phi: Vec<f32>,
    /// Whether slot `(i + 1) % capacity` starts at this slot's `s_next`.
    successor_continues: bool,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, seed: u64) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            capacity,
            slots: Vec::new(),
            head: 0,
            rng: rng_from_seed(seed),
        }
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn push(&mut self, transition: Transition, phi: Vec<f64>) {
        let idx = self.head;
        if !self.slots.is_empty() {
            let prev = (idx + self.capacity - 1) % self.capacity;
            if let Some(p) = self.slots.get_mut(prev) {
                p.successor_continues = !p.transition.done && p.transition.s_next == transition.s;
            }
        }
        let slot = Slot {
            transition,
            phi: phi.iter().map(|&v| v as f32).collect(),
            successor_continues: false,
        };
        if self.slots.len() < self.capacity {
            self.slots.push(slot);
        } else {
            self.slots[idx] = slot;
        }
        self.head = (idx + 1) % self.capacity;
    }

    pub fn get(&self, i: usize) -> &Transition {
        &self.slots[i].transition
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.slots.iter().map(|s| &s.transition)
    }

    /// Uniform indices with replacement.
    pub fn sample_indices(&mut self, n: usize) -> Vec<usize> {
        let len = self.slots.len();
        (0..n).map(|_| self.rng.random_range(0..len)).collect()
    }

    pub fn sample(&mut self, n: usize) -> Vec<Transition> {
        self.sample_indices(n)
            .into_iter()
            .map(|i| self.slots[i].transition.clone())
            .collect()
    }

    fn cached_next_phi(&self, i: usize) -> Option<&[f32]> {
        let slot = &self.slots[i];
        if !slot.successor_continues {
            return None;
        }
        let next = (i + 1) % self.capacity;
        // the successor may have been the write head and not yet refilled
        self.slots.get(next).map(|s| s.phi.as_slice())
    }
}

#[derive(Debug, Clone)]
pub struct Agent {
    encoder: Arc<RffEncoder>,
    w: ReadoutMatrix,
    w_target: ReadoutMatrix,
    config: AgentConfig,
    episodes_done: usize,
    buffer: ReplayBuffer,
    rng: SimRng,
}

impl Agent {
    /// Zero-initialised readout with the target equal to it.
    pub fn new(
        encoder: Arc<RffEncoder>,
        action_count: usize,
        config: AgentConfig,
        seed: u64,
    ) -> Result<Self, AgentError> {
        config.validate()?;
        if action_count == 0 {
            return Err(AgentError::InvalidConfig("action_count must be positive".into()));
        }
        let w = ReadoutMatrix::zeros(encoder.dim(), action_count);
        Ok(Self {
            w_target: w.clone(),
            w,
            buffer: ReplayBuffer::new(config.buffer_capacity, crate::rng::derive_seed(seed, 1)),
            rng: rng_from_seed(crate::rng::derive_seed(seed, 0)),
            encoder,
            config,
            episodes_done: 0,
        })
    }

    pub fn encoder(&self) -> &Arc<RffEncoder> {
        &self.encoder
    }

    pub fn config(&self) -> &AgentConfig {
        &self.config
    }

    pub fn weights(&self) -> &ReadoutMatrix {
        &self.w
    }

    pub fn target_weights(&self) -> &ReadoutMatrix {
        &self.w_target
    }

    pub fn buffer(&self) -> &ReplayBuffer {
        &self.buffer
    }

    pub fn episodes_done(&self) -> usize {
        self.episodes_done
    }

    pub fn action_count(&self) -> usize {
        self.w.actions()
    }

    /// Exploration rate the next episode will use.
    pub fn epsilon(&self) -> f64 {
        self.config.epsilon_at(self.episodes_done)
    }

    fn check_shape(&self, w: &ReadoutMatrix) -> Result<(), AgentError> {
        if w.shape() != self.w.shape() {
            return Err(AgentError::ShapeMismatch {
                expected: self.w.shape(),
                actual: w.shape(),
            });
        }
        Ok(())
    }

    /// Installs `w` as the online readout only.
    pub fn set_weights(&mut self, w: ReadoutMatrix) -> Result<(), AgentError> {
        self.check_shape(&w)?;
        self.w = w;
        Ok(())
    }

    /// Installs `w` as both online and target readout (federation broadcast).
    pub fn install_global(&mut self, w: ReadoutMatrix) -> Result<(), AgentError> {
        self.check_shape(&w)?;
        self.w_target = w.clone();
        self.w = w;
        Ok(())
    }

    pub fn q_values(&self, s: &[f64]) -> Result<Vec<f64>, AgentError> {
        let phi = self.encoder.encode(s)?;
        Ok(self.w.q_from_features(&phi))
    }

    pub fn target_q_values(&self, s: &[f64]) -> Result<Vec<f64>, AgentError> {
        let phi = self.encoder.encode(s)?;
        Ok(self.w_target.q_from_features(&phi))
    }

    /// ε-greedy action from the agent's own stream using the current ε.
    pub fn select_action(&mut self, s: &[f64]) -> Result<usize, AgentError> {
        let phi = self.encoder.encode(s)?;
        let eps = self.epsilon();
        Ok(select_epsilon_greedy(&self.w.q_from_features(&phi), eps, &mut self.rng))
    }

    /// Applies one semi-gradient step per transition, in order.
    pub fn td_update(&mut self, batch: &[Transition]) -> Result<(), AgentError> {
        let dim = self.encoder.dim();
        let mut phi = vec![0.0; dim];
        let mut phi_next = vec![0.0; dim];
        for t in batch {
            self.encoder.encode_into(&t.s, &mut phi)?;
            let next = if t.is_terminal() {
                None
            } else {
                self.encoder.encode_into(&t.s_next, &mut phi_next)?;
                Some(phi_next.as_slice())
            };
            self.apply_td(&phi, next, t.a, t.r);
        }
        Ok(())
    }

    fn apply_td(&mut self, phi: &[f64], phi_next: Option<&[f64]>, action: usize, reward: f64) {
        let bootstrap = phi_next.map_or(0.0, |p| self.config.discount * self.w_target.max_q(p));
        let target = reward + bootstrap;
        let delta = target - dot(phi, self.w.column(action));
        if delta != 0.0 && self.config.learning_rate != 0.0 {
            axpy(self.config.learning_rate * delta, phi, self.w.column_mut(action));
        }
    }

    fn td_update_from_buffer(&mut self, indices: &[usize], scratch: &mut [f64]) {
        let Self {
            encoder,
            w,
            w_target,
            config,
            buffer,
            ..
        } = self;
        for &i in indices {
            let slot = &buffer.slots[i];
            let t = &slot.transition;
            let bootstrap = if t.is_terminal() {
                0.0
            } else if let Some(cached) = buffer.cached_next_phi(i) {
                (0..w_target.actions())
                    .map(|a| dot_mixed(cached, w_target.column(a)))
                    .fold(f64::NEG_INFINITY, f64::max)
            } else {
                encoder
                    .encode_into(&t.s_next, scratch)
                    .expect("buffered states match the encoder");
                w_target.max_q(scratch)
            };
            let delta = t.r + config.discount * bootstrap - dot_mixed(&slot.phi, w.column(t.a));
            if delta != 0.0 && config.learning_rate != 0.0 {
                axpy_mixed(config.learning_rate * delta, &slot.phi, w.column_mut(t.a));
            }
        }
    }

    pub fn sync_target(&mut self) {
        self.w_target = self.w.clone();
    }

    /// Plays one episode: ε-greedy acting, one minibatch TD update per step,
    /// then ε advance and periodic target sync. Returns the episodic return.
    pub fn run_episode(&mut self, env: &mut Env) -> Result<f64, AgentError> {
        if env.spec().state_dim != self.encoder.state_dim() || env.spec().action_count != self.action_count() {
            return Err(AgentError::ShapeMismatch {
                expected: (self.encoder.state_dim(), self.action_count()),
                actual: (env.spec().state_dim, env.spec().action_count),
            });
        }
        let eps = self.epsilon();
        let s = env.reset();
        let mut phi = self.encoder.encode(&s)?;
        let mut ret = 0.0;
        let mut scratch = vec![0.0; self.encoder.dim()];
        loop {
            let action = select_epsilon_greedy(&self.w.q_from_features(&phi), eps, &mut self.rng);
            let t = env.step(action)?;
            ret += t.r;
            let done = t.done;
            let next_phi = if done { None } else { Some(self.encoder.encode(&t.s_next)?) };
            self.buffer.push(t, phi);
            let indices = self.buffer.sample_indices(self.config.minibatch_size);
            self.td_update_from_buffer(&indices, &mut scratch);
            match next_phi {
                Some(p) => phi = p,
                None => break,
            }
        }
        self.episodes_done += 1;
        if self.episodes_done % self.config.target_sync_period == 0 {
            self.sync_target();
        }
        Ok(ret)
    }

    /// Plays `k` episodes and returns their returns.
    pub fn run_local_episodes(&mut self, env: &mut Env, k: usize) -> Result<Vec<f64>, AgentError> {
        (0..k).map(|_| self.run_episode(env)).collect()
    }
}

fn dot_mixed(x: &[f32], w: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let cx = x.chunks_exact(4);
    let cw = w.chunks_exact(4);
    let (rx, rw) = (cx.remainder(), cw.remainder());
    for (a, b) in cx.zip(cw) {
        acc[0] += a[0] as f64 * b[0];
        acc[1] += a[1] as f64 * b[1];
        acc[2] += a[2] as f64 * b[2];
        acc[3] += a[3] as f64 * b[3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for (a, b) in rx.iter().zip(rw) {
        s += *a as f64 * b;
    }
    s
}

fn axpy_mixed(alpha: f64, x: &[f32], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * *xi as f64;
    }
}

pub fn select_epsilon_greedy<R: Rng + ?Sized>(q: &[f64], epsilon: f64, rng: &mut R) -> usize {
    if epsilon > 0.0 && rng.random::<f64>() < epsilon {
        rng.random_range(0..q.len())
    } else {
        argmax(q)
    }
}
