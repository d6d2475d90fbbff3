//! Linear softmax (Gibbs) policy over a discrete action set.
//!
//! Features use a block one-hot layout: `φ(s, a)` places the state vector in
//! block `a` of a `n_actions * state_dim` vector and zeros elsewhere, so the
//! logit of action `a` is `θ[a*k..(a+1)*k] · s`. The log-policy Hessian
//! `-(Σ_b p_b φ_b φ_bᵀ - φ̄ φ̄ᵀ)` does not depend on the chosen action.

use rand::Rng as _;

use super::{Policy, WeightedLogProbFunctional};
use crate::env::Action;
use crate::rng::Rng;
use crate::{Error, ParamVector, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxLinearPolicy {
    state_dim: usize,
    n_actions: usize,
    theta: ParamVector,
}

impl SoftmaxLinearPolicy {
    /// Zero-initialized, i.e. uniform over actions.
    pub fn new(state_dim: usize, n_actions: usize) -> Self {
        SoftmaxLinearPolicy {
            state_dim,
            n_actions,
            theta: ParamVector::zeros(state_dim * n_actions),
        }
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    fn block<'v>(&self, v: &'v ParamVector, a: usize) -> &'v [f64] {
        &v.as_slice()[a * self.state_dim..(a + 1) * self.state_dim]
    }

    fn logits_at(&self, theta: &ParamVector, state: &[f64]) -> Vec<f64> {
        (0..self.n_actions)
            .map(|a| self.block(theta, a).iter().zip(state).map(|(w, x)| w * x).sum())
            .collect()
    }

    /// Action probabilities at arbitrary parameters.
    pub fn probs_at(&self, theta: &ParamVector, state: &[f64]) -> Vec<f64> {
        let logits = self.logits_at(theta, state);
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut p: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let z: f64 = p.iter().sum();
        p.iter_mut().for_each(|x| *x /= z);
        p
    }

    pub fn probs(&self, state: &[f64]) -> Vec<f64> {
        self.probs_at(&self.theta, state)
    }

    fn action_index(&self, action: &Action) -> usize {
        match action {
            Action::Discrete(a) if *a < self.n_actions => *a,
            other => panic!("action {other:?} outside the softmax support"),
        }
    }

    /// Adds `scale * ∇² log π(·|s) v` into `out`.
    fn accumulate_hvp(&self, state: &[f64], scale: f64, v: &ParamVector, out: &mut ParamVector) {
        let p = self.probs(state);
        let u: Vec<f64> = (0..self.n_actions)
            .map(|b| self.block(v, b).iter().zip(state).map(|(x, s)| x * s).sum())
            .collect();
        let mean: f64 = p.iter().zip(&u).map(|(p, u)| p * u).sum();
        let k = self.state_dim;
        for b in 0..self.n_actions {
            let c = -scale * p[b] * (u[b] - mean);
            if c != 0.0 {
                for (o, s) in out.as_mut_slice()[b * k..(b + 1) * k].iter_mut().zip(state) {
                    *o += c * s;
                }
            }
        }
    }
}

impl Policy for SoftmaxLinearPolicy {
    fn dim(&self) -> usize {
        self.theta.len()
    }

    fn params(&self) -> &ParamVector {
        &self.theta
    }

    fn params_mut(&mut self) -> &mut ParamVector {
        &mut self.theta
    }

    fn sample_action(&self, state: &[f64], rng: &mut Rng) -> Result<Action> {
        if state.len() != self.state_dim {
            return Err(Error::ContractViolation(format!(
                "state has dimension {}, policy expects {}",
                state.len(),
                self.state_dim
            )));
        }
        let logits = self.logits_at(&self.theta, state);
        if logits.iter().any(|l| !l.is_finite()) {
            return Err(Error::non_finite(
                "softmax logits",
                format!("logits {logits:?}, |θ|∞ = {}", self.theta.amax()),
            ));
        }
        let p = self.probs(state);
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (a, pa) in p.iter().enumerate() {
            acc += pa;
            if u < acc {
                return Ok(Action::Discrete(a));
            }
        }
        Ok(Action::Discrete(self.n_actions - 1))
    }

    fn log_prob(&self, state: &[f64], action: &Action) -> f64 {
        let a = self.action_index(action);
        let logits = self.logits_at(&self.theta, state);
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
        logits[a] - lse
    }

    fn accumulate_grad_log_prob(&self, state: &[f64], action: &Action, scale: f64, out: &mut ParamVector) {
        let a = self.action_index(action);
        let p = self.probs(state);
        let k = self.state_dim;
        for (b, pb) in p.iter().enumerate() {
            let c = scale * (f64::from(u8::from(b == a)) - pb);
            for (o, s) in out.as_mut_slice()[b * k..(b + 1) * k].iter_mut().zip(state) {
                *o += c * s;
            }
        }
    }

    fn hvp_weighted_logprob(
        &self,
        functional: &WeightedLogProbFunctional<'_>,
        v: &ParamVector,
    ) -> Result<ParamVector> {
        if v.len() != self.dim() {
            return Err(Error::ContractViolation(format!(
                "vector dimension {} does not match policy dimension {}",
                v.len(),
                self.dim()
            )));
        }
        let mut out = ParamVector::zeros(self.dim());
        for (sa, &w) in functional.samples.iter().zip(functional.weights) {
            if w != 0.0 {
                self.accumulate_hvp(&sa.state, w, v, &mut out);
            }
        }
        crate::error::ensure_finite(out.as_slice(), "softmax Hessian-vector product")?;
        Ok(out)
    }
}
