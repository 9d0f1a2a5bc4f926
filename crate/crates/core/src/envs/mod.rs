//! Classic-control tasks with the canonical dynamics and reward conventions.
//!
//! Each [`Env`] owns its own generator, so instances are independent and
//! trajectories are a pure function of (seed, action sequence).

mod acrobot;
mod cartpole;
mod mountain_car;

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{rng_from_seed, SimRng};

pub use acrobot::Acrobot;
pub use cartpole::CartPole;
pub use mountain_car::MountainCar;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EnvError {
    #[error("step called on a finished episode; call reset first")]
    SteppedAfterDone,
    #[error("action {action} out of range for {count} actions")]
    InvalidAction { action: usize, count: usize },
    #[error("unknown environment `{0}` (expected CartPole-v1, Acrobot-v1 or MountainCar-v0)")]
    UnknownEnv(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EnvKind {
    #[serde(rename = "CartPole-v1")]
    CartPole,
    #[serde(rename = "Acrobot-v1")]
    Acrobot,
    #[serde(rename = "MountainCar-v0")]
    MountainCar,
}

impl EnvKind {
    pub fn spec(self) -> EnvSpec {
        match self {
            EnvKind::CartPole => EnvSpec {
                name: "CartPole-v1",
                state_dim: 4,
                action_count: 2,
                max_episode_steps: 500,
                solved_threshold: 475.0,
            },
            EnvKind::Acrobot => EnvSpec {
                name: "Acrobot-v1",
                state_dim: 6,
                action_count: 3,
                max_episode_steps: 500,
                solved_threshold: -100.0,
            },
            EnvKind::MountainCar => EnvSpec {
                name: "MountainCar-v0",
                state_dim: 2,
                action_count: 3,
                max_episode_steps: 200,
                solved_threshold: -110.0,
            },
        }
    }
}

impl fmt::Display for EnvKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.spec().name)
    }
}

impl FromStr for EnvKind {
    type Err = EnvError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "cartpole-v1" | "cartpole" => Ok(EnvKind::CartPole),
            "acrobot-v1" | "acrobot" => Ok(EnvKind::Acrobot),
            "mountaincar-v0" | "mountaincar" | "mountain_car" => Ok(EnvKind::MountainCar),
            _ => Err(EnvError::UnknownEnv(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvSpec {
    pub name: &'static str,
    pub state_dim: usize,
    pub action_count: usize,
    pub max_episode_steps: usize,
    pub solved_threshold: f64,
}

/// One environment step.
///
/// `done` is set both on true termination and on the step cap; `truncated`
/// distinguishes the latter so TD targets can keep bootstrapping through it.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub s: Vec<f64>,
    pub a: usize,
    pub r: f64,
    pub s_next: Vec<f64>,
    pub done: bool,
    pub truncated: bool,
}

impl Transition {
    /// Whether the TD target must drop the bootstrap term.
    pub fn is_terminal(&self) -> bool {
        self.done && !self.truncated
    }
}

/// Raw task dynamics without episode bookkeeping.
trait Dynamics: fmt::Debug + Send {
    fn reset(&mut self, rng: &mut SimRng) -> Vec<f64>;
    /// Advances one step; returns (observation, reward, terminated).
    fn step(&mut self, action: usize) -> (Vec<f64>, f64, bool);
}

#[derive(Debug)]
pub struct Env {
    kind: EnvKind,
    spec: EnvSpec,
    dynamics: Box<dyn Dynamics>,
    rng: SimRng,
    obs: Vec<f64>,
    steps: usize,
    done: bool,
}

impl Env {
    /// Creates the environment and performs an initial reset from `seed`.
    pub fn new(kind: EnvKind, seed: u64) -> Self {
        let dynamics: Box<dyn Dynamics> = match kind {
            EnvKind::CartPole => Box::new(CartPole::default()),
            EnvKind::Acrobot => Box::new(Acrobot::default()),
            EnvKind::MountainCar => Box::new(MountainCar::default()),
        };
        let mut env = Self {
            kind,
            spec: kind.spec(),
            dynamics,
            rng: rng_from_seed(seed),
            obs: Vec::new(),
            steps: 0,
            done: false,
        };
        env.reset();
        env
    }

    pub fn kind(&self) -> EnvKind {
        self.kind
    }

    pub fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    pub fn observation(&self) -> &[f64] {
        &self.obs
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn elapsed_steps(&self) -> usize {
        self.steps
    }

    /// Starts a new episode, continuing this instance's random stream.
    pub fn reset(&mut self) -> Vec<f64> {
        self.obs = self.dynamics.reset(&mut self.rng);
        self.steps = 0;
        self.done = false;
        self.obs.clone()
    }

    /// Reseeds the generator, then resets.
    pub fn reset_with_seed(&mut self, seed: u64) -> Vec<f64> {
        self.rng = rng_from_seed(seed);
        self.reset()
    }

    pub fn step(&mut self, action: usize) -> Result<Transition, EnvError> {
        if self.done {
            return Err(EnvError::SteppedAfterDone);
        }
        if action >= self.spec.action_count {
            return Err(EnvError::InvalidAction {
                action,
                count: self.spec.action_count,
            });
        }
        let (next, reward, terminated) = self.dynamics.step(action);
        self.steps += 1;
        let truncated = !terminated && self.steps >= self.spec.max_episode_steps;
        self.done = terminated || truncated;
        let s = std::mem::replace(&mut self.obs, next.clone());
        Ok(Transition {
            s,
            a: action,
            r: reward,
            s_next: next,
            done: self.done,
            truncated,
        })
    }

    /// Uniform random action from this environment's own stream.
    pub fn sample_action(&mut self) -> usize {
        self.rng.random_range(0..self.spec.action_count)
    }
}
