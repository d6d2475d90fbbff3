//! Cart-pole balancing with the classic Euler-integrated dynamics.

use rand::Rng as _;

use super::{Action, ActionKind, EnvSpec, Environment, EpisodeClock, Transition};
use crate::rng::Rng;
use crate::Result;

const GRAVITY: f64 = 9.8;
const MASS_CART: f64 = 1.0;
const MASS_POLE: f64 = 0.1;
const TOTAL_MASS: f64 = MASS_CART + MASS_POLE;
const HALF_LENGTH: f64 = 0.5;
const POLE_MASS_LENGTH: f64 = MASS_POLE * HALF_LENGTH;
const FORCE_MAG: f64 = 10.0;
const TAU: f64 = 0.02;
const X_LIMIT: f64 = 2.4;
const THETA_LIMIT: f64 = 12.0 * 2.0 * std::f64::consts::PI / 360.0;
const INIT_BOUND: f64 = 0.05;

/// State is `[x, x_dot, theta, theta_dot]`; action 1 pushes right, 0 pushes left.
#[derive(Debug, Clone)]
pub struct CartPole {
    spec: EnvSpec,
    state: [f64; 4],
    clock: EpisodeClock,
}

impl CartPole {
    pub const DEFAULT_HORIZON: usize = 500;

    pub fn new(max_episode_len: usize, reward_shift: f64) -> Self {
        CartPole {
            spec: EnvSpec {
                state_dim: 4,
                action_kind: ActionKind::Discrete(2),
                max_episode_len,
                reward_shift,
            },
            state: [0.0; 4],
            clock: EpisodeClock::default(),
        }
    }

    pub fn state(&self) -> [f64; 4] {
        self.state
    }

    /// Overwrites the physical state of a running episode.
    pub fn set_state(&mut self, state: [f64; 4]) {
        self.state = state;
    }

    fn integrate(state: [f64; 4], push_right: bool) -> [f64; 4] {
        let [x, x_dot, theta, theta_dot] = state;
        let force = if push_right { FORCE_MAG } else { -FORCE_MAG };
        let (sin, cos) = theta.sin_cos();
        let temp = (force + POLE_MASS_LENGTH * theta_dot * theta_dot * sin) / TOTAL_MASS;
        let theta_acc = (GRAVITY * sin - cos * temp)
            / (HALF_LENGTH * (4.0 / 3.0 - MASS_POLE * cos * cos / TOTAL_MASS));
        let x_acc = temp - POLE_MASS_LENGTH * theta_acc * cos / TOTAL_MASS;
        [
            x + TAU * x_dot,
            x_dot + TAU * x_acc,
            theta + TAU * theta_dot,
            theta_dot + TAU * theta_acc,
        ]
    }
}

impl Environment for CartPole {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, rng: &mut Rng) -> Vec<f64> {
        for v in self.state.iter_mut() {
            *v = rng.random_range(-INIT_BOUND..INIT_BOUND);
        }
        self.clock.reset();
        self.state.to_vec()
    }

    fn step(&mut self, action: &Action, _rng: &mut Rng) -> Result<Transition> {
        self.spec.action_kind.validate(action)?;
        let t = self.clock.begin_step()?;
        let before = self.state;
        self.state = Self::integrate(before, action.index() == Some(1));
        let [x, _, theta, _] = self.state;
        let terminal = x.abs() > X_LIMIT || theta.abs() > THETA_LIMIT;
        let truncated = self.clock.finish_step(terminal, self.spec.max_episode_len);
        Ok(Transition {
            state: before.to_vec(),
            action: action.clone(),
            reward: 1.0 + self.spec.reward_shift,
            next_state: self.state.to_vec(),
            terminal,
            truncated,
            t,
        })
    }
}
