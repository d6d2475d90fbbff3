//! Native benchmark environments.
//!
//! Every environment is deterministic given the random stream it is stepped
//! with, owns its current state, and is `Send` so it can be built inside a
//! per-seed worker.

mod cartpole;
mod reacher;
mod tiny;

pub use cartpole::CartPole;
pub use reacher::PointReacher;
pub use tiny::{
    enumerate_exact_J, exact_occupancy, exact_value_tables, Occupancy, TinyMdp, TinyMdpEnv, ValueTables,
};

use serde::{Deserialize, Serialize};

use crate::rng::Rng;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ActionKind {
    Discrete(usize),
    Continuous { dim: usize, low: Vec<f64>, high: Vec<f64> },
}

impl ActionKind {
    pub fn validate(&self, action: &Action) -> Result<()> {
        match (self, action) {
            (ActionKind::Discrete(n), Action::Discrete(a)) if a < n => Ok(()),
            (ActionKind::Continuous { dim, .. }, Action::Continuous(v))
                if v.len() == *dim && v.iter().all(|x| x.is_finite()) =>
            {
                Ok(())
            }
            _ => Err(Error::ContractViolation(format!(
                "action {action:?} is not valid for {self:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub state_dim: usize,
    pub action_kind: ActionKind,
    /// Episode horizon H; episodes still running at step H are truncated.
    pub max_episode_len: usize,
    /// Added to every reward after the dynamics compute it.
    pub reward_shift: f64,
}

impl EnvSpec {
    pub fn validate(&self) -> Result<()> {
        if self.state_dim == 0 || self.max_episode_len == 0 {
            return Err(Error::InvalidConfig(
                "state_dim and max_episode_len must be positive".into(),
            ));
        }
        match &self.action_kind {
            ActionKind::Discrete(0) => {
                Err(Error::InvalidConfig("discrete action space is empty".into()))
            }
            ActionKind::Continuous { dim, low, high } => {
                if low.len() != *dim || high.len() != *dim || low.iter().zip(high).any(|(l, h)| l >= h)
                {
                    Err(Error::InvalidConfig(format!(
                        "continuous bounds need low < high in every of {dim} components"
                    )))
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Action {
    Discrete(usize),
    Continuous(Vec<f64>),
}

impl Action {
    pub fn index(&self) -> Option<usize> {
        match self {
            Action::Discrete(a) => Some(*a),
            Action::Continuous(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: Action,
    /// Reward after `reward_shift` has been applied.
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub terminal: bool,
    /// Episode hit the horizon without terminating; the successor is bootstrapped.
    pub truncated: bool,
    pub t: usize,
}

/// One episode plus the log-probability of each action at sampling time.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trajectory {
    pub transitions: Vec<Transition>,
    pub log_probs: Vec<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    /// Undiscounted sum of rewards with the shift removed.
    pub fn raw_return(&self, reward_shift: f64) -> f64 {
        self.transitions.iter().map(|tr| tr.reward - reward_shift).sum()
    }
}

pub trait Environment: Send {
    fn spec(&self) -> &EnvSpec;

    fn reset(&mut self, rng: &mut Rng) -> Vec<f64>;

    /// Advances the environment by one step. Stepping a finished episode or
    /// passing an action outside the action space is a contract violation.
    fn step(&mut self, action: &Action, rng: &mut Rng) -> Result<Transition>;
}

/// Environment names accepted by [`make_env`].
pub const ENV_NAMES: [&str; 3] = ["cartpole", "reacher", "tinymdp"];

/// Builds a named environment. `horizon` overrides the default H.
pub fn make_env(name: &str, reward_shift: f64, horizon: Option<usize>) -> Result<Box<dyn Environment>> {
    let env: Box<dyn Environment> = match name {
        "cartpole" => Box::new(CartPole::new(horizon.unwrap_or(CartPole::DEFAULT_HORIZON), reward_shift)),
        "reacher" => Box::new(PointReacher::new(
            horizon.unwrap_or(PointReacher::DEFAULT_HORIZON),
            reward_shift,
        )),
        "tinymdp" => {
            let mut mdp = TinyMdp::benchmark();
            if let Some(h) = horizon {
                mdp.horizon = h;
            }
            mdp.reward_shift = reward_shift;
            Box::new(tiny::TinyMdpEnv::new(mdp)?)
        }
        other => {
            return Err(Error::InvalidConfig(format!(
                "unknown environment {other:?}; expected one of {ENV_NAMES:?}"
            )))
        }
    };
    env.spec().validate()?;
    Ok(env)
}

/// Bookkeeping shared by the native environments: step counter and done flag.
#[derive(Debug, Clone, Default)]
pub(crate) struct EpisodeClock {
    t: usize,
    done: bool,
    started: bool,
}

impl EpisodeClock {
    pub(crate) fn reset(&mut self) {
        *self = EpisodeClock {
            t: 0,
            done: false,
            started: true,
        };
    }

    pub(crate) fn begin_step(&self) -> Result<usize> {
        if !self.started {
            return Err(Error::ContractViolation("step called before reset".into()));
        }
        if self.done {
            return Err(Error::ContractViolation(
                "step called on a finished episode".into(),
            ));
        }
        Ok(self.t)
    }

    /// Records the step and returns whether the horizon truncates the episode.
    pub(crate) fn finish_step(&mut self, terminal: bool, horizon: usize) -> bool {
        self.t += 1;
        let truncated = !terminal && self.t >= horizon;
        self.done = terminal || truncated;
        truncated
    }
}
