use serde::{Deserialize, Serialize};

use crate::curvature::{CurvatureKind, Weighting};
use crate::env::PointReacher;
use crate::optim::{Solver, UpdateRule};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Reinforce,
    Natural,
    Acgn1,
    Acgn2,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Reinforce, Method::Natural, Method::Acgn1, Method::Acgn2];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Reinforce => "reinforce",
            Method::Natural => "natural",
            Method::Acgn1 => "acgn1",
            Method::Acgn2 => "acgn2",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown method {s:?}; expected reinforce|natural|acgn1|acgn2")))
    }

    fn is_newton(self) -> bool {
        matches!(self, Method::Acgn1 | Method::Acgn2)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiagnosticsConfig {
    /// Estimate `(m, M)` of the damped operator on every Newton update.
    pub spectrum: bool,
    pub spectrum_iters: usize,
    /// Run the interaction-term diagnostic on every `h12_every`-th batch.
    pub h12: bool,
    pub h12_every: usize,
    /// Clamp the actor step to the contraction bound when it is finite.
    pub enforce_step_bound: bool,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        DiagnosticsConfig {
            spectrum: true,
            spectrum_iters: 20,
            h12: false,
            h12_every: 10,
            enforce_step_bound: false,
        }
    }
}

/// Full description of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub env: String,
    pub method: Method,
    pub seed: u64,
    pub gamma: f64,
    pub episodes_per_batch: usize,
    pub total_episodes: usize,
    /// Overrides the environment's default horizon.
    pub horizon: Option<usize>,
    pub alpha: f64,
    /// Ridge λ of the damped system (Fisher damping for the natural rule).
    pub damping: f64,
    pub cg_iters: usize,
    pub cg_tol: f64,
    pub screening: bool,
    pub solver: Solver,
    /// Weights entering the policy gradient (and ACGN1's curvature).
    pub weighting: Weighting,
    /// Weights entering the ACGN2 intrinsic curvature.
    pub acgn2_weighting: Weighting,
    pub normalize_advantages: bool,
    /// Weight samples by `γ^t` instead of uniformly.
    pub occupancy_weighting: bool,
    /// Explicit reward shift; `None` applies the automatic Q-mode shift.
    pub reward_shift: Option<f64>,
    pub policy_hidden: usize,
    pub critic_hidden: usize,
    pub critic_beta: f64,
    pub critic_inner: usize,
    pub warmup_batches: usize,
    pub diagnostics: DiagnosticsConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig::preset("cartpole", Method::Acgn2)
    }
}

impl TrainConfig {
    /// Built-in defaults for an environment and method.
    pub fn preset(env: &str, method: Method) -> Self {
        let continuous = env == "reacher";
        let (alpha, damping) = match (method, continuous) {
            (Method::Reinforce, false) => (5e-3, 0.0),
            (Method::Natural, false) => (5e-2, 1e-3),
            (Method::Acgn1, false) => (5e-2, 0.1),
            (Method::Acgn2, false) => (2e-1, 0.1),
            (Method::Reinforce, true) => (5e-3, 0.0),
            (Method::Natural, true) => (5e-2, 1e-3),
            (Method::Acgn1, true) => (5e-2, 0.1),
            (Method::Acgn2, true) => (1e-1, 0.1),
        };
        TrainConfig {
            env: env.to_string(),
            method,
            seed: 42,
            gamma: 0.99,
            episodes_per_batch: 5,
            total_episodes: 3000,
            horizon: None,
            alpha,
            damping,
            cg_iters: 10,
            cg_tol: 1e-6,
            screening: true,
            solver: Solver::Cg,
            weighting: Weighting::Advantage,
            acgn2_weighting: Weighting::Q,
            normalize_advantages: false,
            occupancy_weighting: false,
            reward_shift: None,
            policy_hidden: 32,
            critic_hidden: 64,
            critic_beta: 5e-2,
            critic_inner: 10,
            warmup_batches: 20,
            diagnostics: DiagnosticsConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !crate::env::ENV_NAMES.contains(&self.env.as_str()) {
            return Err(Error::InvalidConfig(format!("unknown environment {:?}", self.env)));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::InvalidConfig(format!("gamma {} outside [0, 1)", self.gamma)));
        }
        if self.episodes_per_batch == 0 {
            return Err(Error::InvalidConfig("episodes_per_batch must be ≥ 1".into()));
        }
        if self.weighting == Weighting::Unit {
            return Err(Error::InvalidConfig("gradient weighting must be advantage or q".into()));
        }
        if self.diagnostics.spectrum_iters < 5 {
            return Err(Error::InvalidConfig("spectrum_iters must be ≥ 5".into()));
        }
        if self.critic_beta <= 0.0 || self.critic_inner == 0 {
            return Err(Error::InvalidConfig("critic step and inner steps must be positive".into()));
        }
        self.rule().validate()
    }

    /// Whether the effective critic step exceeds the actor step.
    pub fn timescales_separated(&self) -> bool {
        self.critic_beta * self.critic_inner as f64 > self.alpha
    }

    pub fn rule(&self) -> UpdateRule {
        match self.method {
            Method::Reinforce => UpdateRule::Vanilla { alpha: self.alpha },
            Method::Natural => UpdateRule::Natural {
                alpha: self.alpha,
                damping: self.damping,
                cg_iters: self.cg_iters,
                cg_tol: self.cg_tol,
            },
            Method::Acgn1 | Method::Acgn2 => UpdateRule::Newton {
                kind: self.curvature_kind().expect("newton method"),
                alpha: self.alpha,
                damping: self.damping,
                cg_iters: self.cg_iters,
                cg_tol: self.cg_tol,
                screening: self.screening,
                solver: self.solver,
            },
        }
    }

    pub fn curvature_kind(&self) -> Option<CurvatureKind> {
        match self.method {
            Method::Reinforce => None,
            Method::Natural => Some(CurvatureKind::Fisher),
            Method::Acgn1 => Some(CurvatureKind::Acgn1),
            Method::Acgn2 => Some(CurvatureKind::Acgn2),
        }
    }

    /// Q-weights enter the update when the gradient is Q-weighted or ACGN2
    /// uses Q-weighted curvature.
    pub fn uses_q_weights(&self) -> bool {
        self.weighting == Weighting::Q || (self.method == Method::Acgn2 && self.acgn2_weighting == Weighting::Q)
    }

    /// Explicit shift, else the reacher's positivity shift for Q-weighted
    /// second-order modes, else zero.
    pub fn effective_reward_shift(&self) -> f64 {
        match self.reward_shift {
            Some(s) => s,
            None if self.env == "reacher" && self.method.is_newton() && self.uses_q_weights() => {
                PointReacher::Q_MODE_SHIFT
            }
            None => 0.0,
        }
    }

    /// `(threshold, window)` used for episodes-to-threshold.
    pub fn threshold(&self) -> Option<(f64, usize)> {
        match self.env.as_str() {
            "cartpole" => Some((450.0, 50)),
            "reacher" => Some((-5.0, 50)),
            _ => None,
        }
    }
}
