//! Fast-timescale state-value critic trained by semi-gradient TD(0).
//!
//! The critic only ever hands constants to the actor: advantages and
//! Q-weights are computed from a frozen snapshot of `ω` and no derivative
//! with respect to actor parameters exists anywhere in this module.

use rand::Rng as _;

use crate::env::Transition;
use crate::rng::Rng;
use crate::serialize::{decode, encode, CRITIC_MAGIC};
use crate::{Error, ParamVector, Result};

/// `V(s; ω)`. With `hidden = 0` the critic is linear, `V = wᵀs + b`;
/// otherwise `V = w₂ᵀ tanh(W₁ s + b₁) + b₂`.
///
/// Layout: `W₁` (hidden × state, row-major), `b₁`, `w₂`, `b₂`.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueCritic {
    state_dim: usize,
    hidden: usize,
    omega: ParamVector,
}

impl ValueCritic {
    pub const DEFAULT_HIDDEN: usize = 64;

    pub fn new(state_dim: usize, hidden: usize, rng: &mut Rng) -> Self {
        let mut critic = ValueCritic {
            state_dim,
            hidden,
            omega: ParamVector::zeros(0),
        };
        let d = critic.param_len();
        let mut omega = ParamVector::zeros(d);
        if hidden > 0 {
            let b1 = 1.0 / (state_dim as f64).sqrt();
            let b2 = 1.0 / (hidden as f64).sqrt();
            let first = hidden * state_dim + hidden;
            for i in 0..d {
                let bound = if i < first { b1 } else { b2 };
                omega[i] = rng.random_range(-bound..bound);
            }
        }
        critic.omega = omega;
        critic
    }

    /// Linear critic with all-zero parameters.
    pub fn linear(state_dim: usize) -> Self {
        ValueCritic {
            state_dim,
            hidden: 0,
            omega: ParamVector::zeros(state_dim + 1),
        }
    }

    fn param_len(&self) -> usize {
        if self.hidden == 0 {
            self.state_dim + 1
        } else {
            self.hidden * self.state_dim + 2 * self.hidden + 1
        }
    }

    pub fn dim(&self) -> usize {
        self.omega.len()
    }

    pub fn omega(&self) -> &ParamVector {
        &self.omega
    }

    pub fn set_omega(&mut self, omega: ParamVector) -> Result<()> {
        if omega.len() != self.dim() {
            return Err(Error::ContractViolation(format!(
                "critic dimension is {}, got {}",
                self.dim(),
                omega.len()
            )));
        }
        crate::error::ensure_finite(omega.as_slice(), "critic parameters")?;
        self.omega = omega;
        Ok(())
    }

    fn hidden_activations(&self, state: &[f64]) -> Vec<f64> {
        let w = self.omega.as_slice();
        let b1 = self.hidden * self.state_dim;
        (0..self.hidden)
            .map(|j| {
                let row = &w[j * self.state_dim..(j + 1) * self.state_dim];
                (row.iter().zip(state).map(|(a, x)| a * x).sum::<f64>() + w[b1 + j]).tanh()
            })
            .collect()
    }

    pub fn value(&self, state: &[f64]) -> f64 {
        let w = self.omega.as_slice();
        if self.hidden == 0 {
            return w[..self.state_dim].iter().zip(state).map(|(a, x)| a * x).sum::<f64>()
                + w[self.state_dim];
        }
        self.value_from_hidden(&self.hidden_activations(state))
    }

    /// Adds `scale * ∇_ω V(s; ω)` into `out`.
    pub fn accumulate_grad(&self, state: &[f64], scale: f64, out: &mut ParamVector) {
        if self.hidden == 0 {
            self.accumulate_grad_with(state, &[], scale, out);
        } else {
            let h = self.hidden_activations(state);
            self.accumulate_grad_with(state, &h, scale, out);
        }
    }

    /// Gradient accumulation reusing precomputed hidden activations.
    fn accumulate_grad_with(&self, state: &[f64], h: &[f64], scale: f64, out: &mut ParamVector) {
        let o = out.as_mut_slice();
        if self.hidden == 0 {
            for (g, x) in o.iter_mut().zip(state) {
                *g += scale * x;
            }
            o[self.state_dim] += scale;
            return;
        }
        let w = self.omega.as_slice();
        let b1 = self.hidden * self.state_dim;
        let w2 = b1 + self.hidden;
        for j in 0..self.hidden {
            o[w2 + j] += scale * h[j];
            let dp = scale * w[w2 + j] * (1.0 - h[j] * h[j]);
            o[b1 + j] += dp;
            for (k, x) in state.iter().enumerate() {
                o[j * self.state_dim + k] += dp * x;
            }
        }
        o[w2 + self.hidden] += scale;
    }

    fn value_from_hidden(&self, h: &[f64]) -> f64 {
        let w = self.omega.as_slice();
        let w2 = self.hidden * self.state_dim + self.hidden;
        h.iter().zip(&w[w2..w2 + self.hidden]).map(|(a, b)| a * b).sum::<f64>() + w[w2 + self.hidden]
    }

    /// `V(s_t)` for every transition plus the hidden activations behind them
    /// (row-major, empty for the linear critic).
    fn batch_forward(&self, transitions: &[Transition]) -> (Vec<f64>, Vec<f64>) {
        if self.hidden == 0 {
            return (transitions.iter().map(|tr| self.value(&tr.state)).collect(), Vec::new());
        }
        let mut acts = Vec::with_capacity(transitions.len() * self.hidden);
        let mut values = Vec::with_capacity(transitions.len());
        for tr in transitions {
            let h = self.hidden_activations(&tr.state);
            values.push(self.value_from_hidden(&h));
            acts.extend_from_slice(&h);
        }
        (values, acts)
    }

    /// Bootstrap values `(1 - terminal) V(s_{t+1})`, reusing `values` when the
    /// successor is the next transition's state.
    fn bootstrap_values(&self, transitions: &[Transition], values: &[f64]) -> Vec<f64> {
        transitions
            .iter()
            .enumerate()
            .map(|(i, tr)| {
                if tr.terminal {
                    0.0
                } else if i + 1 < transitions.len() && !tr.truncated && transitions[i + 1].state == tr.next_state {
                    values[i + 1]
                } else {
                    self.value(&tr.next_state)
                }
            })
            .collect()
    }

    pub fn grad_omega(&self, state: &[f64]) -> ParamVector {
        let mut g = ParamVector::zeros(self.dim());
        self.accumulate_grad(state, 1.0, &mut g);
        g
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        encode(CRITIC_MAGIC, &self.omega)
    }

    pub fn load_bytes(&mut self, bytes: &[u8]) -> Result<()> {
        self.set_omega(decode(CRITIC_MAGIC, bytes)?)
    }
}

/// Per-transition actor weights computed from one frozen critic snapshot.
#[derive(Debug, Clone, PartialEq)]
pub struct AdvantageBatch {
    /// `Â_t = r_t + γ(1 - terminal_t) V(s_{t+1}) - V(s_t)`.
    pub advantages: Vec<f64>,
    /// `Q̂_t = Â_t + V(s_t)`.
    pub q_weights: Vec<f64>,
    /// `γ^t` with t the step index inside the episode.
    pub discounts: Vec<f64>,
    /// `V(s_t)` as used above.
    pub values: Vec<f64>,
}

impl AdvantageBatch {
    pub fn len(&self) -> usize {
        self.advantages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.advantages.is_empty()
    }
}

pub fn td0_targets(critic: &ValueCritic, transitions: &[Transition], gamma: f64) -> AdvantageBatch {
    let (values, _) = critic.batch_forward(transitions);
    let next = critic.bootstrap_values(transitions, &values);
    let mut out = AdvantageBatch {
        advantages: Vec::with_capacity(transitions.len()),
        q_weights: Vec::with_capacity(transitions.len()),
        discounts: Vec::with_capacity(transitions.len()),
        values: Vec::with_capacity(transitions.len()),
    };
    for ((tr, v), vn) in transitions.iter().zip(values).zip(next) {
        let q = tr.reward + gamma * vn;
        out.advantages.push(q - v);
        out.q_weights.push(q);
        out.discounts.push(gamma.powi(tr.t as i32));
        out.values.push(v);
    }
    out
}

fn mean_squared_td_error(critic: &ValueCritic, transitions: &[Transition], gamma: f64) -> f64 {
    let (values, _) = critic.batch_forward(transitions);
    let next = critic.bootstrap_values(transitions, &values);
    let n = transitions.len().max(1) as f64;
    transitions
        .iter()
        .zip(values.iter().zip(&next))
        .map(|(tr, (v, vn))| {
            let e = v - tr.reward - gamma * vn;
            e * e
        })
        .sum::<f64>()
        / n
}

/// Runs `n_inner` semi-gradient steps on `½ mean_t (V(s_t; ω) - y_t)²`, where
/// each step recomputes the targets `y_t = r_t + γ(1 - terminal) V(s_{t+1})`
/// from the pre-step `ω`. Returns the mean squared TD error after the last
/// step.
pub fn critic_update(
    critic: &mut ValueCritic,
    transitions: &[Transition],
    gamma: f64,
    beta: f64,
    n_inner: usize,
) -> Result<f64> {
    if beta <= 0.0 || n_inner == 0 {
        return Err(Error::InvalidConfig(format!(
            "critic step {beta} and inner steps {n_inner} must be positive"
        )));
    }
    if transitions.is_empty() {
        return Ok(0.0);
    }
    let n = transitions.len() as f64;
    let h = critic.hidden;
    for _ in 0..n_inner {
        let (values, acts) = critic.batch_forward(transitions);
        let next = critic.bootstrap_values(transitions, &values);
        let mut grad = ParamVector::zeros(critic.dim());
        for (i, tr) in transitions.iter().enumerate() {
            let err = values[i] - tr.reward - gamma * next[i];
            if err != 0.0 {
                let hi = if h == 0 { &[][..] } else { &acts[i * h..(i + 1) * h] };
                critic.accumulate_grad_with(&tr.state, hi, err / n, &mut grad);
            }
        }
        let next = &critic.omega - grad * beta;
        if let Err(e) = crate::error::ensure_finite(next.as_slice(), "critic update") {
            return Err(Error::non_finite(
                "critic update",
                format!("{e}; |ω|∞ before step = {}", critic.omega.amax()),
            ));
        }
        critic.omega = next;
    }
    let loss = mean_squared_td_error(critic, transitions, gamma);
    if !loss.is_finite() {
        return Err(Error::non_finite("critic loss", format!("{loss}")));
    }
    Ok(loss)
}
