//! Small enumerable MDP with exact finite-horizon dynamic programming.
//!
//! Values are time-indexed: with a finite horizon H, `Q_t(s, a)` is the
//! expected discounted reward-to-go with `H - t` steps remaining, and the
//! occupancy at step t carries the factor `γ^t`.

use rand::Rng as _;

use super::{Action, ActionKind, EnvSpec, Environment, EpisodeClock, Transition};
use crate::policy::SoftmaxLinearPolicy;
use crate::rng::Rng;
use crate::{Error, ParamVector, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct TinyMdp {
    pub n_states: usize,
    pub n_actions: usize,
    /// `P(s' | s, a)` stored at `[(s * n_actions + a) * n_states + s']`.
    pub transitions: Vec<f64>,
    /// `R(s, a)` stored at `[s * n_actions + a]`, before the shift.
    pub rewards: Vec<f64>,
    pub gamma: f64,
    pub horizon: usize,
    pub initial: Vec<f64>,
    /// Observation vector emitted for each state.
    pub features: Vec<Vec<f64>>,
    pub reward_shift: f64,
}

impl TinyMdp {
    /// The fixed instance used when the environment is selected by name.
    pub fn benchmark() -> Self {
        TinyMdp {
            n_states: 2,
            n_actions: 2,
            transitions: vec![0.9, 0.1, 0.2, 0.8, 0.3, 0.7, 0.6, 0.4],
            rewards: vec![1.0, 0.0, 0.0, 2.0],
            gamma: 0.9,
            horizon: 4,
            initial: vec![0.5, 0.5],
            features: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            reward_shift: 0.0,
        }
    }

    /// Random 2-state, 2-action instance with `feature_dim`-dimensional
    /// observations, so softmax policies have `2 * feature_dim` parameters.
    pub fn random(rng: &mut Rng, feature_dim: usize, horizon: usize, gamma: f64) -> Self {
        let (n_states, n_actions) = (2, 2);
        let mut transitions = Vec::with_capacity(n_states * n_actions * n_states);
        for _ in 0..n_states * n_actions {
            let row: Vec<f64> = (0..n_states).map(|_| rng.random_range(0.05..1.0)).collect();
            let z: f64 = row.iter().sum();
            transitions.extend(row.iter().map(|p| p / z));
        }
        let rewards = (0..n_states * n_actions).map(|_| rng.random_range(-1.0..1.0)).collect();
        let p0 = rng.random_range(0.1..0.9);
        let features = (0..n_states)
            .map(|_| (0..feature_dim).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        TinyMdp {
            n_states,
            n_actions,
            transitions,
            rewards,
            gamma,
            horizon,
            initial: vec![p0, 1.0 - p0],
            features,
            reward_shift: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (ns, na) = (self.n_states, self.n_actions);
        if ns == 0 || na == 0 || self.horizon == 0 {
            return Err(Error::InvalidConfig("empty TinyMdp".into()));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::InvalidConfig(format!("gamma {} outside [0, 1)", self.gamma)));
        }
        if self.transitions.len() != ns * na * ns
            || self.rewards.len() != ns * na
            || self.initial.len() != ns
            || self.features.len() != ns
        {
            return Err(Error::InvalidConfig("TinyMdp table shapes disagree".into()));
        }
        for row in self.transitions.chunks(ns) {
            if row.iter().any(|p| *p < 0.0) || (row.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidConfig(format!("transition row {row:?} is not stochastic")));
            }
        }
        if (self.initial.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidConfig("initial distribution does not sum to 1".into()));
        }
        let k = self.feature_dim();
        if k == 0 || self.features.iter().any(|f| f.len() != k) {
            return Err(Error::InvalidConfig("features must share a positive dimension".into()));
        }
        Ok(())
    }

    pub fn feature_dim(&self) -> usize {
        self.features.first().map_or(0, Vec::len)
    }

    pub fn p(&self, s: usize, a: usize, next: usize) -> f64 {
        self.transitions[(s * self.n_actions + a) * self.n_states + next]
    }

    /// Shifted reward `R(s, a) + reward_shift`.
    pub fn r(&self, s: usize, a: usize) -> f64 {
        self.rewards[s * self.n_actions + a] + self.reward_shift
    }

    pub fn state_index(&self, observation: &[f64]) -> Option<usize> {
        self.features.iter().position(|f| f.as_slice() == observation)
    }

    /// Softmax policy whose parameter layout matches this MDP's observations.
    pub fn softmax_policy(&self) -> SoftmaxLinearPolicy {
        SoftmaxLinearPolicy::new(self.feature_dim(), self.n_actions)
    }

    /// `π(a | s)` for every state at parameters `theta`.
    pub fn policy_table(&self, policy: &SoftmaxLinearPolicy, theta: &ParamVector) -> Vec<Vec<f64>> {
        self.features.iter().map(|f| policy.probs_at(theta, f)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValueTables {
    /// `q[t][s][a]`, `t < H`.
    pub q: Vec<Vec<Vec<f64>>>,
    /// `v[t][s] = Σ_a π(a|s) q[t][s][a]`, `t < H`.
    pub v: Vec<Vec<f64>>,
}

/// Backward recursion for the time-indexed action and state values.
pub fn exact_value_tables(mdp: &TinyMdp, policy: &SoftmaxLinearPolicy, theta: &ParamVector) -> ValueTables {
    let pi = mdp.policy_table(policy, theta);
    let (ns, na, h) = (mdp.n_states, mdp.n_actions, mdp.horizon);
    let mut q = vec![vec![vec![0.0; na]; ns]; h];
    let mut v = vec![vec![0.0; ns]; h];
    let mut next_v = vec![0.0; ns];
    for t in (0..h).rev() {
        for s in 0..ns {
            for a in 0..na {
                let future: f64 = (0..ns).map(|n| mdp.p(s, a, n) * next_v[n]).sum();
                q[t][s][a] = mdp.r(s, a) + mdp.gamma * future;
            }
            v[t][s] = (0..na).map(|a| pi[s][a] * q[t][s][a]).sum();
        }
        next_v.clone_from(&v[t]);
    }
    ValueTables { q, v }
}

/// Expected discounted return `J(θ)` by exact backward recursion.
#[allow(non_snake_case)]
pub fn enumerate_exact_J(mdp: &TinyMdp, policy: &SoftmaxLinearPolicy, theta: &ParamVector) -> f64 {
    let tables = exact_value_tables(mdp, policy, theta);
    mdp.initial.iter().zip(&tables.v[0]).map(|(p, v)| p * v).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Occupancy {
    /// `per_step[t][s][a] = γ^t Pr(s_t = s, a_t = a)`.
    pub per_step: Vec<Vec<Vec<f64>>>,
    /// Sum of `per_step` over t.
    pub total: Vec<Vec<f64>>,
}

impl Occupancy {
    pub fn mass(&self) -> f64 {
        self.total.iter().flatten().sum()
    }
}

/// Discounted state-action occupancy by forward recursion.
pub fn exact_occupancy(mdp: &TinyMdp, policy: &SoftmaxLinearPolicy, theta: &ParamVector) -> Occupancy {
    let pi = mdp.policy_table(policy, theta);
    let (ns, na) = (mdp.n_states, mdp.n_actions);
    let mut state_dist = mdp.initial.clone();
    let mut discount = 1.0;
    let mut per_step = Vec::with_capacity(mdp.horizon);
    let mut total = vec![vec![0.0; na]; ns];
    for _ in 0..mdp.horizon {
        let joint: Vec<Vec<f64>> = (0..ns)
            .map(|s| (0..na).map(|a| state_dist[s] * pi[s][a]).collect())
            .collect();
        let mut next = vec![0.0; ns];
        for s in 0..ns {
            for a in 0..na {
                total[s][a] += discount * joint[s][a];
                for (n, slot) in next.iter_mut().enumerate() {
                    *slot += joint[s][a] * mdp.p(s, a, n);
                }
            }
        }
        per_step.push(joint.iter().map(|row| row.iter().map(|x| discount * x).collect()).collect());
        state_dist = next;
        discount *= mdp.gamma;
    }
    Occupancy { per_step, total }
}

/// [`TinyMdp`] as a sampled environment; observations are the state features.
#[derive(Debug, Clone)]
pub struct TinyMdpEnv {
    mdp: TinyMdp,
    spec: EnvSpec,
    state: usize,
    clock: EpisodeClock,
}

impl TinyMdpEnv {
    pub fn new(mdp: TinyMdp) -> Result<Self> {
        mdp.validate()?;
        let spec = EnvSpec {
            state_dim: mdp.feature_dim(),
            action_kind: ActionKind::Discrete(mdp.n_actions),
            max_episode_len: mdp.horizon,
            reward_shift: mdp.reward_shift,
        };
        Ok(TinyMdpEnv {
            mdp,
            spec,
            state: 0,
            clock: EpisodeClock::default(),
        })
    }

    pub fn mdp(&self) -> &TinyMdp {
        &self.mdp
    }

    pub fn state_index(&self) -> usize {
        self.state
    }
}

fn sample_index(weights: impl Iterator<Item = f64>, u: f64) -> usize {
    let mut acc = 0.0;
    let mut last = 0;
    for (i, w) in weights.enumerate() {
        acc += w;
        last = i;
        if u < acc {
            return i;
        }
    }
    last
}

impl Environment for TinyMdpEnv {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, rng: &mut Rng) -> Vec<f64> {
        self.state = sample_index(self.mdp.initial.iter().copied(), rng.random());
        self.clock.reset();
        self.mdp.features[self.state].clone()
    }

    fn step(&mut self, action: &Action, rng: &mut Rng) -> Result<Transition> {
        self.spec.action_kind.validate(action)?;
        let t = self.clock.begin_step()?;
        let (s, a) = (self.state, action.index().unwrap());
        let next = sample_index((0..self.mdp.n_states).map(|n| self.mdp.p(s, a, n)), rng.random());
        self.state = next;
        let truncated = self.clock.finish_step(false, self.mdp.horizon);
        Ok(Transition {
            state: self.mdp.features[s].clone(),
            action: action.clone(),
            reward: self.mdp.r(s, a),
            next_state: self.mdp.features[next].clone(),
            terminal: false,
            truncated,
            t,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::Policy;
    use crate::rng::{stream, Stream};

    fn random_theta(rng: &mut Rng, d: usize) -> ParamVector {
        ParamVector::from_fn(d, |_, _| rng.random_range(-1.5..1.5))
    }

    #[test]
    fn constant_reward_gives_geometric_sum() {
        let mut mdp = TinyMdp::benchmark();
        mdp.rewards = vec![1.0; 4];
        mdp.horizon = 3;
        let pol = mdp.softmax_policy();
        let theta = random_theta(&mut stream(3, Stream::Init), pol.dim());
        let j = enumerate_exact_J(&mdp, &pol, &theta);
        assert!((j - 2.71).abs() < 1e-12);
        let occ = exact_occupancy(&mdp, &pol, &theta);
        assert!((occ.mass() - 2.71).abs() < 1e-12);
        let tables = exact_value_tables(&mdp, &pol, &theta);
        for row in &tables.q[0] {
            for q in row {
                assert!((q - 2.71).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_discount_collapses_to_one_step() {
        let mut rng = stream(5, Stream::Init);
        let mdp = TinyMdp::random(&mut rng, 3, 4, 0.0);
        let pol = mdp.softmax_policy();
        let theta = random_theta(&mut rng, pol.dim());
        let pi = mdp.policy_table(&pol, &theta);
        let expected: f64 = (0..2)
            .flat_map(|s| (0..2).map(move |a| (s, a)))
            .map(|(s, a)| mdp.initial[s] * pi[s][a] * mdp.r(s, a))
            .sum();
        assert!((enumerate_exact_J(&mdp, &pol, &theta) - expected).abs() < 1e-14);
        let tables = exact_value_tables(&mdp, &pol, &theta);
        for s in 0..2 {
            for a in 0..2 {
                assert_eq!(tables.q[0][s][a], mdp.r(s, a));
            }
        }
    }

    #[test]
    fn single_step_occupancy_is_initial_times_policy() {
        let mut rng = stream(6, Stream::Init);
        let mdp = TinyMdp::random(&mut rng, 2, 1, 0.7);
        let pol = mdp.softmax_policy();
        let theta = random_theta(&mut rng, pol.dim());
        let pi = mdp.policy_table(&pol, &theta);
        let occ = exact_occupancy(&mdp, &pol, &theta);
        for s in 0..2 {
            for a in 0..2 {
                assert!((occ.total[s][a] - mdp.initial[s] * pi[s][a]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn uniform_policy_symmetric_dynamics_gives_symmetric_occupancy() {
        let mut mdp = TinyMdp::benchmark();
        mdp.transitions = vec![0.5; 8];
        let pol = mdp.softmax_policy();
        let occ = exact_occupancy(&mdp, &pol, &ParamVector::zeros(pol.dim()));
        for s in 0..2 {
            assert!((occ.total[s][0] - occ.total[s][1]).abs() < 1e-15);
        }
    }

    #[test]
    fn occupancy_mass_and_value_identities() {
        let mut rng = stream(11, Stream::Init);
        for trial in 0..40 {
            let gamma = [0.0, 0.5, 0.9, 0.99][trial % 4];
            let horizon = 1 + trial % 4;
            let mdp = TinyMdp::random(&mut rng, 1 + trial % 5, horizon, gamma);
            mdp.validate().unwrap();
            let pol = mdp.softmax_policy();
            let theta = random_theta(&mut rng, pol.dim());
            let occ = exact_occupancy(&mdp, &pol, &theta);
            let geometric = (1.0 - gamma.powi(horizon as i32)) / (1.0 - gamma);
            assert!((occ.mass() - geometric).abs() < 1e-10);
            let via_occupancy: f64 = (0..2)
                .flat_map(|s| (0..2).map(move |a| (s, a)))
                .map(|(s, a)| occ.total[s][a] * mdp.r(s, a))
                .sum();
            assert!((enumerate_exact_J(&mdp, &pol, &theta) - via_occupancy).abs() < 1e-10);
        }
    }

    #[test]
    fn degenerate_initial_distribution_and_determinism() {
        let mut mdp = TinyMdp::benchmark();
        mdp.initial = vec![1.0, 0.0];
        let mut env = TinyMdpEnv::new(mdp).unwrap();
        let mut rng = stream(0, Stream::Env);
        for _ in 0..100 {
            env.reset(&mut rng);
            assert_eq!(env.state_index(), 0);
        }
        let run = |seed| {
            let mut env = TinyMdpEnv::new(TinyMdp::benchmark()).unwrap();
            let mut rng = stream(seed, Stream::Env);
            env.reset(&mut rng);
            (0..4)
                .map(|i| env.step(&Action::Discrete(i % 2), &mut rng).unwrap())
                .collect::<Vec<_>>()
        };
        assert_eq!(run(17), run(17));
    }

    #[test]
    fn monte_carlo_return_matches_exact_value() {
        let mut rng = stream(21, Stream::Init);
        let mdp = TinyMdp::random(&mut rng, 2, 4, 0.9);
        let pol = mdp.softmax_policy().with_params(random_theta(&mut rng, 4));
        let exact = enumerate_exact_J(&mdp, &pol, pol.params());
        let mut env = TinyMdpEnv::new(mdp.clone()).unwrap();
        let mut env_rng = stream(22, Stream::Env);
        let mut pol_rng = stream(22, Stream::Policy);
        let n = 1_000_000;
        let (mut sum, mut sum_sq) = (0.0, 0.0);
        for _ in 0..n {
            let mut s = env.reset(&mut env_rng);
            let (mut ret, mut disc) = (0.0, 1.0);
            loop {
                let a = pol.sample_action(&s, &mut pol_rng).unwrap();
                let tr = env.step(&a, &mut env_rng).unwrap();
                ret += disc * tr.reward;
                disc *= mdp.gamma;
                s = tr.next_state;
                if tr.truncated || tr.terminal {
                    break;
                }
            }
            sum += ret;
            sum_sq += ret * ret;
        }
        let mean = sum / n as f64;
        let se = ((sum_sq / n as f64 - mean * mean) / n as f64).sqrt();
        assert!((mean - exact).abs() < 3.0 * se, "mc {mean} exact {exact} se {se}");
    }
}
