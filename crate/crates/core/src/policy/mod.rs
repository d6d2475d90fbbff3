//! Parametric policies with exact scores and Hessian-vector products of
//! weighted log-likelihoods.

mod gaussian;
mod softmax;

pub use gaussian::GaussianMlpPolicy;
pub use softmax::SoftmaxLinearPolicy;

use crate::env::Action;
use crate::rng::Rng;
use crate::serialize::{decode, encode, POLICY_MAGIC};
use crate::{Error, ParamVector, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct StateAction {
    pub state: Vec<f64>,
    pub action: Action,
}

/// `L(θ) = Σ_t w_t log π_θ(a_t | s_t)` with the weights held constant.
///
/// The weights come from a frozen critic, so no derivative ever flows into
/// them; differentiating `L` only touches the log-probabilities.
#[derive(Debug, Clone, Copy)]
pub struct WeightedLogProbFunctional<'a> {
    pub samples: &'a [StateAction],
    pub weights: &'a [f64],
}

impl<'a> WeightedLogProbFunctional<'a> {
    pub fn new(samples: &'a [StateAction], weights: &'a [f64]) -> Result<Self> {
        if samples.len() != weights.len() {
            return Err(Error::ContractViolation(format!(
                "{} samples but {} weights",
                samples.len(),
                weights.len()
            )));
        }
        crate::error::ensure_finite(weights, "functional weights")?;
        Ok(WeightedLogProbFunctional { samples, weights })
    }

    pub fn value<P: Policy>(&self, policy: &P) -> f64 {
        self.samples
            .iter()
            .zip(self.weights)
            .map(|(sa, w)| w * policy.log_prob(&sa.state, &sa.action))
            .sum()
    }

    pub fn gradient<P: Policy>(&self, policy: &P) -> ParamVector {
        let mut g = ParamVector::zeros(policy.dim());
        for (sa, &w) in self.samples.iter().zip(self.weights) {
            if w != 0.0 {
                policy.accumulate_grad_log_prob(&sa.state, &sa.action, w, &mut g);
            }
        }
        g
    }
}

pub trait Policy: Clone + Send + Sync {
    fn dim(&self) -> usize;

    fn params(&self) -> &ParamVector;

    fn params_mut(&mut self) -> &mut ParamVector;

    fn sample_action(&self, state: &[f64], rng: &mut Rng) -> Result<Action>;

    fn log_prob(&self, state: &[f64], action: &Action) -> f64;

    /// Adds `scale * ∇_θ log π(action | state)` into `out`.
    fn accumulate_grad_log_prob(&self, state: &[f64], action: &Action, scale: f64, out: &mut ParamVector);

    /// `[Σ_t w_t ∇²_θ log π(a_t | s_t)] v`.
    fn hvp_weighted_logprob(
        &self,
        functional: &WeightedLogProbFunctional<'_>,
        v: &ParamVector,
    ) -> Result<ParamVector>;

    fn grad_log_prob(&self, state: &[f64], action: &Action) -> ParamVector {
        let mut g = ParamVector::zeros(self.dim());
        self.accumulate_grad_log_prob(state, action, 1.0, &mut g);
        g
    }

    fn set_params(&mut self, theta: ParamVector) -> Result<()> {
        if theta.len() != self.dim() {
            return Err(Error::ContractViolation(format!(
                "parameter dimension {} does not match policy dimension {}",
                theta.len(),
                self.dim()
            )));
        }
        crate::error::ensure_finite(theta.as_slice(), "policy parameters")?;
        *self.params_mut() = theta;
        Ok(())
    }

    fn with_params(&self, theta: ParamVector) -> Self {
        let mut p = self.clone();
        assert_eq!(theta.len(), self.dim(), "parameter dimension mismatch");
        *p.params_mut() = theta;
        p
    }

    fn to_bytes(&self) -> Vec<u8> {
        encode(POLICY_MAGIC, self.params())
    }

    fn load_bytes(&mut self, bytes: &[u8]) -> Result<()> {
        self.set_params(decode(POLICY_MAGIC, bytes)?)
    }
}

/// Hessian-vector product of a weighted log-likelihood by central differences
/// of its exact gradient, along the unit direction of `v`.
pub(crate) fn fd_hvp<P: Policy>(
    policy: &P,
    functional: &WeightedLogProbFunctional<'_>,
    v: &ParamVector,
) -> Result<ParamVector> {
    let norm = v.norm();
    if norm == 0.0 {
        return Ok(ParamVector::zeros(policy.dim()));
    }
    let theta = policy.params();
    let eps = 1e-5 * (1.0 + theta.amax());
    let dir = v / norm;
    let plus = functional.gradient(&policy.with_params(theta + &dir * eps));
    let minus = functional.gradient(&policy.with_params(theta - &dir * eps));
    let out = (plus - minus) * (norm / (2.0 * eps));
    crate::error::ensure_finite(out.as_slice(), "finite-difference Hessian-vector product")?;
    Ok(out)
}
