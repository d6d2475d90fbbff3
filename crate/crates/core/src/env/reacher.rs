//! Two-dimensional point-mass reacher.
//!
//! The state is `[pos_x, pos_y, target_x, target_y]`. Actions are velocity
//! commands clipped to `[-1, 1]²`; the position integrates them with step
//! `0.05`. The reward is minus the post-move distance to the target minus a
//! small quadratic control cost. There is no early termination.

use rand::Rng as _;

use super::{Action, ActionKind, EnvSpec, Environment, EpisodeClock, Transition};
use crate::rng::Rng;
use crate::Result;

const DT: f64 = 0.05;
const CONTROL_COST: f64 = 0.01;
pub const ACTION_MAX: f64 = 1.0;
const TARGET_RADIUS: f64 = 1.0;

#[derive(Debug, Clone)]
pub struct PointReacher {
    spec: EnvSpec,
    pos: [f64; 2],
    target: [f64; 2],
    clock: EpisodeClock,
}

impl PointReacher {
    pub const DEFAULT_HORIZON: usize = 100;

    /// Per-step shift that lifts rewards towards nonnegative values in
    /// Q-weighted modes.
    pub const Q_MODE_SHIFT: f64 = 1.0 + CONTROL_COST * ACTION_MAX * ACTION_MAX;

    pub fn new(max_episode_len: usize, reward_shift: f64) -> Self {
        PointReacher {
            spec: EnvSpec {
                state_dim: 4,
                action_kind: ActionKind::Continuous {
                    dim: 2,
                    low: vec![-ACTION_MAX; 2],
                    high: vec![ACTION_MAX; 2],
                },
                max_episode_len,
                reward_shift,
            },
            pos: [0.0; 2],
            target: [0.0; 2],
            clock: EpisodeClock::default(),
        }
    }

    fn observe(&self) -> Vec<f64> {
        vec![self.pos[0], self.pos[1], self.target[0], self.target[1]]
    }

    pub fn set_positions(&mut self, pos: [f64; 2], target: [f64; 2]) {
        self.pos = pos;
        self.target = target;
    }
}

impl Environment for PointReacher {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, rng: &mut Rng) -> Vec<f64> {
        // Uniform on the disk: radius by inverse CDF of r².
        let r = TARGET_RADIUS * rng.random::<f64>().sqrt();
        let phi = rng.random_range(0.0..std::f64::consts::TAU);
        self.target = [r * phi.cos(), r * phi.sin()];
        self.pos = [0.0; 2];
        self.clock.reset();
        self.observe()
    }

    fn step(&mut self, action: &Action, _rng: &mut Rng) -> Result<Transition> {
        self.spec.action_kind.validate(action)?;
        let t = self.clock.begin_step()?;
        let state = self.observe();
        let Action::Continuous(raw) = action else { unreachable!() };
        let mut control = 0.0;
        for (p, a) in self.pos.iter_mut().zip(raw) {
            let a = a.clamp(-ACTION_MAX, ACTION_MAX);
            *p += DT * a;
            control += a * a;
        }
        let dist = (self.pos[0] - self.target[0]).hypot(self.pos[1] - self.target[1]);
        let reward = -dist - CONTROL_COST * control + self.spec.reward_shift;
        let truncated = self.clock.finish_step(false, self.spec.max_episode_len);
        Ok(Transition {
            state,
            action: action.clone(),
            reward,
            next_state: self.observe(),
            terminal: false,
            truncated,
            t,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stream};

    #[test]
    fn zero_reward_at_target_with_zero_action() {
        let mut rng = stream(1, Stream::Env);
        let mut env = PointReacher::new(100, 0.0);
        env.reset(&mut rng);
        env.set_positions([0.3, -0.2], [0.3, -0.2]);
        let tr = env.step(&Action::Continuous(vec![0.0, 0.0]), &mut rng).unwrap();
        assert_eq!(tr.reward, 0.0);
        assert!(!tr.terminal);
    }

    #[test]
    fn actions_are_clipped_before_integration() {
        let mut rng = stream(1, Stream::Env);
        let mut env = PointReacher::new(100, 0.0);
        env.reset(&mut rng);
        env.set_positions([0.0, 0.0], [1.0, 0.0]);
        let tr = env.step(&Action::Continuous(vec![5.0, 0.0]), &mut rng).unwrap();
        assert!((tr.next_state[0] - 0.05).abs() < 1e-15);
        assert!((tr.reward - (-0.95 - 0.01)).abs() < 1e-12);
    }

    #[test]
    fn targets_lie_in_unit_disk_and_runs_truncate() {
        let mut rng = stream(9, Stream::Env);
        let mut env = PointReacher::new(100, 0.0);
        for _ in 0..200 {
            let s = env.reset(&mut rng);
            assert_eq!(&s[..2], &[0.0, 0.0]);
            assert!(s[2].hypot(s[3]) <= 1.0);
        }
        env.reset(&mut rng);
        for t in 0..100 {
            let tr = env.step(&Action::Continuous(vec![0.1, 0.1]), &mut rng).unwrap();
            assert_eq!(tr.truncated, t == 99);
        }
        assert!(env.step(&Action::Continuous(vec![0.0, 0.0]), &mut rng).is_err());
        let mut env = PointReacher::new(100, 0.0);
        env.reset(&mut rng);
        assert!(env.step(&Action::Continuous(vec![0.0]), &mut rng).is_err());
    }
}
