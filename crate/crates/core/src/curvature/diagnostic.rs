//! Measurable proxy for the dropped actor-critic interaction term.
//!
//! The interaction curvature is bounded by `G_π G_Q ‖∂ω/∂θ‖`. The diagnostic
//! estimates the critic sensitivity `‖(∂ω/∂θ) u‖` along a random unit
//! direction by refitting the critic at `θ ± εu`, and multiplies it with the
//! empirical score and critic-gradient bounds of the batch.

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::critic::ValueCritic;
use crate::policy::{Policy, StateAction};
use crate::rng::Rng;
use crate::ParamVector;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct H12Diagnostic {
    /// `‖ω(θ+εu) - ω(θ-εu)‖ / 2ε`.
    pub sensitivity: f64,
    /// `max_t ‖∇_θ log π(a_t|s_t)‖`.
    pub g_pi: f64,
    /// `max_t ‖∇_ω V(s_t)‖`.
    pub g_q: f64,
    pub bound: f64,
}

/// Relative finite-difference step for the refit direction.
pub const H12_FD_STEP: f64 = 1e-2;

/// Returns `None` when a refit fails or produces non-finite parameters.
pub fn h12_diagnostic<P, F>(
    samples: &[StateAction],
    policy: &P,
    critic: &ValueCritic,
    mut omega_fn: F,
    rng: &mut Rng,
) -> Option<H12Diagnostic>
where
    P: Policy,
    F: FnMut(&ParamVector) -> Option<ParamVector>,
{
    let theta = policy.params();
    let mut u = ParamVector::from_fn(theta.len(), |_, _| rng.sample::<f64, _>(StandardNormal));
    let norm = u.norm();
    if norm == 0.0 {
        return None;
    }
    u /= norm;
    let eps = H12_FD_STEP * (1.0 + theta.amax());
    let plus = omega_fn(&(theta + &u * eps))?;
    let minus = omega_fn(&(theta - &u * eps))?;
    if plus.iter().chain(minus.iter()).any(|x| !x.is_finite()) {
        return None;
    }
    let sensitivity = (plus - minus).norm() / (2.0 * eps);
    let g_pi = samples
        .iter()
        .map(|sa| policy.grad_log_prob(&sa.state, &sa.action).norm())
        .fold(0.0, f64::max);
    let g_q = samples
        .iter()
        .map(|sa| critic.grad_omega(&sa.state).norm())
        .fold(0.0, f64::max);
    Some(H12Diagnostic {
        sensitivity,
        g_pi,
        g_q,
        bound: g_pi * g_q * sensitivity,
    })
}
