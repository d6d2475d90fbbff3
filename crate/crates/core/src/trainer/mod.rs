//! Two-timescale training loop.
//!
//! Each batch: collect whole episodes, take `n_inner` critic steps, freeze the
//! critic to weight the samples, then take one actor step with the configured
//! update rule. Curvature is only ever touched through vector products.

mod config;

use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use config::{DiagnosticsConfig, Method, TrainConfig};

use crate::critic::{critic_update, td0_targets, ValueCritic};
use crate::curvature::{
    estimate_spectrum, h12_diagnostic, CurvatureBatch, CurvatureOperator, H12Diagnostic, LinearOperator,
    SpectrumEstimate,
};
use crate::env::{make_env, ActionKind, Environment, Trajectory, Transition};
use crate::optim::{apply_update, policy_gradient, solve_direction, step_size_bound, UpdateReport, UpdateRule};
use crate::policy::{GaussianMlpPolicy, Policy, SoftmaxLinearPolicy, StateAction};
use crate::rng::{stream, Rng, Stream};
use crate::{Error, ParamVector, Result};

/// Runs `episodes` full episodes, recording the log-probability of every
/// sampled action.
pub fn collect_batch<P: Policy>(
    env: &mut dyn Environment,
    policy: &P,
    episodes: usize,
    env_rng: &mut Rng,
    policy_rng: &mut Rng,
) -> Result<Vec<Trajectory>> {
    let state_dim = env.spec().state_dim;
    let mut out = Vec::with_capacity(episodes);
    for _ in 0..episodes {
        let mut state = env.reset(env_rng);
        if state.len() != state_dim {
            return Err(Error::ContractViolation(format!(
                "reset returned a state of dimension {} instead of {state_dim}",
                state.len()
            )));
        }
        let mut traj = Trajectory::default();
        loop {
            let action = policy.sample_action(&state, policy_rng)?;
            let log_prob = policy.log_prob(&state, &action);
            let tr = env.step(&action, env_rng)?;
            let done = tr.terminal || tr.truncated;
            state = tr.next_state.clone();
            traj.log_probs.push(log_prob);
            traj.transitions.push(tr);
            if done {
                break;
            }
        }
        out.push(traj);
    }
    Ok(out)
}

/// Index of the first episode whose trailing-`window` mean reaches
/// `threshold`.
pub fn episodes_to_threshold(returns: &[f64], threshold: f64, window: usize) -> Option<usize> {
    assert!(window >= 1, "window must be at least 1");
    if returns.len() < window {
        return None;
    }
    let mut sum: f64 = returns[..window].iter().sum();
    if sum / window as f64 >= threshold {
        return Some(window - 1);
    }
    for i in window..returns.len() {
        sum += returns[i] - returns[i - window];
        if sum / window as f64 >= threshold {
            return Some(i);
        }
    }
    None
}

/// Mean of the last `window` entries (all of them if fewer).
pub fn trailing_mean(returns: &[f64], window: usize) -> Option<f64> {
    if returns.is_empty() || window == 0 {
        return None;
    }
    let tail = &returns[returns.len().saturating_sub(window)..];
    Some(tail.iter().sum::<f64>() / tail.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchRecord {
    pub first_episode: usize,
    pub episodes: usize,
    pub transitions: usize,
    /// Mean squared TD error after the critic steps of this batch.
    pub critic_loss: f64,
    pub report: UpdateReport,
    pub alpha: f64,
    pub h12: Option<H12Diagnostic>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub episodes: usize,
    pub final_mean_return: Option<f64>,
    pub episodes_to_threshold: Option<usize>,
    pub threshold: Option<(f64, usize)>,
    pub total_wall_ns: u64,
    pub mean_step_ns: f64,
    pub screening_events: usize,
    pub fallback_events: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub config: TrainConfig,
    /// Undiscounted return of every training episode, unshifted.
    pub returns: Vec<f64>,
    pub batches: Vec<BatchRecord>,
    pub summary: RunSummary,
    pub initial_params: Vec<f64>,
    pub final_params: Vec<f64>,
}

pub const SUMMARY_WINDOW: usize = 50;

impl RunResult {
    fn new(config: &TrainConfig, theta: &ParamVector) -> Self {
        RunResult {
            config: config.clone(),
            returns: Vec::new(),
            batches: Vec::new(),
            summary: RunSummary {
                episodes: 0,
                final_mean_return: None,
                episodes_to_threshold: None,
                threshold: config.threshold(),
                total_wall_ns: 0,
                mean_step_ns: 0.0,
                screening_events: 0,
                fallback_events: 0,
            },
            initial_params: theta.as_slice().to_vec(),
            final_params: theta.as_slice().to_vec(),
        }
    }

    fn finish(&mut self, theta: &ParamVector, wall_ns: u64) {
        let s = &mut self.summary;
        s.episodes = self.returns.len();
        s.final_mean_return = trailing_mean(&self.returns, SUMMARY_WINDOW);
        s.episodes_to_threshold = s
            .threshold
            .and_then(|(thr, window)| episodes_to_threshold(&self.returns, thr, window));
        s.total_wall_ns = wall_ns;
        s.mean_step_ns = if self.batches.is_empty() {
            0.0
        } else {
            self.batches.iter().map(|b| b.report.wall_clock_ns as f64).sum::<f64>() / self.batches.len() as f64
        };
        s.screening_events = self.batches.iter().filter(|b| b.report.screening_triggered).count();
        s.fallback_events = self.batches.iter().filter(|b| b.report.fallback_used).count();
        self.final_params = theta.as_slice().to_vec();
    }

    /// One row per episode, paired with the batch that consumed it.
    pub fn episode_rows(&self) -> impl Iterator<Item = (usize, f64, &BatchRecord)> + '_ {
        self.batches.iter().flat_map(move |b| {
            (b.first_episode..b.first_episode + b.episodes).map(move |i| (i, self.returns[i], b))
        })
    }
}

/// A run that aborted; `partial` holds every batch completed before the failure.
#[derive(Debug, thiserror::Error)]
#[error("training aborted after {} episodes: {error}", partial.returns.len())]
pub struct TrainError {
    pub error: Error,
    pub partial: Box<RunResult>,
}

/// Builds the environment and policy named by `config` and trains.
pub fn train(config: &TrainConfig) -> std::result::Result<RunResult, TrainError> {
    let abort = |error: Error| TrainError {
        error,
        partial: Box::new(RunResult::new(config, &ParamVector::zeros(0))),
    };
    config.validate().map_err(abort)?;
    let env = make_env(&config.env, config.effective_reward_shift(), config.horizon).map_err(abort)?;
    let spec = env.spec().clone();
    let mut init_rng = stream(config.seed, Stream::Init);
    match spec.action_kind {
        ActionKind::Discrete(n) => train_with(config, env, SoftmaxLinearPolicy::new(spec.state_dim, n), init_rng),
        ActionKind::Continuous { ref low, ref high, .. } => {
            let policy = GaussianMlpPolicy::new(spec.state_dim, low, high, config.policy_hidden, &mut init_rng);
            train_with(config, env, policy, init_rng)
        }
    }
}

fn flatten(trajectories: &[Trajectory]) -> Vec<Transition> {
    trajectories.iter().flat_map(|t| t.transitions.iter().cloned()).collect()
}

/// Trains an already-constructed policy. `init_rng` seeds the critic.
pub fn train_with<P: Policy>(
    config: &TrainConfig,
    mut env: Box<dyn Environment>,
    mut policy: P,
    mut init_rng: Rng,
) -> std::result::Result<RunResult, TrainError> {
    let start = Instant::now();
    let mut result = RunResult::new(config, policy.params());
    macro_rules! bail {
        ($e:expr) => {{
            result.finish(policy.params(), start.elapsed().as_nanos() as u64);
            return Err(TrainError { error: $e, partial: Box::new(result) });
        }};
    }
    if let Err(e) = config.validate() {
        bail!(e);
    }
    if env.spec().state_dim == 0 {
        bail!(Error::ContractViolation("environment has no state features".into()));
    }
    if !config.timescales_separated() {
        log::warn!(
            "critic effective step {} does not exceed actor step {}",
            config.critic_beta * config.critic_inner as f64,
            config.alpha
        );
    }

    let shift = config.effective_reward_shift();
    let rule = config.rule();
    let mut critic = ValueCritic::new(env.spec().state_dim, config.critic_hidden, &mut init_rng);
    let mut env_rng = stream(config.seed, Stream::Env);
    let mut policy_rng = stream(config.seed, Stream::Policy);
    let mut diag_rng = stream(config.seed, Stream::Diagnostics);
    let mut l_hat: f64 = 0.0;

    if config.total_episodes > 0 {
        for _ in 0..config.warmup_batches {
            let batch =
                match collect_batch(env.as_mut(), &policy, config.episodes_per_batch, &mut env_rng, &mut policy_rng)
                {
                    Ok(b) => b,
                    Err(e) => bail!(e),
                };
            if let Err(e) =
                critic_update(&mut critic, &flatten(&batch), config.gamma, config.critic_beta, config.critic_inner)
            {
                bail!(e);
            }
        }
    }

    while result.returns.len() < config.total_episodes {
        let episodes = config.episodes_per_batch.min(config.total_episodes - result.returns.len());
        let trajectories =
            match collect_batch(env.as_mut(), &policy, episodes, &mut env_rng, &mut policy_rng) {
                Ok(b) => b,
                Err(e) => bail!(e),
            };
        let transitions = flatten(&trajectories);

        // Critic first, on the faster timescale.
        let critic_before = critic.clone();
        let critic_loss =
            match critic_update(&mut critic, &transitions, config.gamma, config.critic_beta, config.critic_inner) {
                Ok(l) => l,
                Err(e) => bail!(e),
            };

        let step = match actor_step(config, &rule, &mut policy, &critic, &transitions, &mut diag_rng, &mut l_hat) {
            Ok(s) => s,
            Err(e) => bail!(e),
        };

        let h12 = if config.diagnostics.h12 && result.batches.len() % config.diagnostics.h12_every.max(1) == 0 {
            let samples: Vec<StateAction> = transitions
                .iter()
                .map(|tr| StateAction {
                    state: tr.state.clone(),
                    action: tr.action.clone(),
                })
                .collect();
            let refit_seed = config.seed ^ (result.batches.len() as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
            let env_name = &config.env;
            let probe = |theta: &ParamVector| -> Option<ParamVector> {
                let mut env = make_env(env_name, shift, config.horizon).ok()?;
                let perturbed = policy.with_params(theta.clone());
                // Common random numbers for both sides of the difference.
                let mut er = stream(refit_seed, Stream::Env);
                let mut pr = stream(refit_seed, Stream::Policy);
                let batch = collect_batch(env.as_mut(), &perturbed, episodes, &mut er, &mut pr).ok()?;
                let mut c = critic_before.clone();
                critic_update(&mut c, &flatten(&batch), config.gamma, config.critic_beta, config.critic_inner).ok()?;
                Some(c.omega().clone())
            };
            h12_diagnostic(&samples, &policy, &critic, probe, &mut diag_rng)
        } else {
            None
        };

        let first_episode = result.returns.len();
        result.returns.extend(trajectories.iter().map(|t| t.raw_return(shift)));
        result.batches.push(BatchRecord {
            first_episode,
            episodes,
            transitions: transitions.len(),
            critic_loss,
            report: step.report,
            alpha: step.alpha,
            h12,
        });
    }
    result.finish(policy.params(), start.elapsed().as_nanos() as u64);
    Ok(result)
}

/// Per-method cost of processing one fixed set of batches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub method: Method,
    pub seed: u64,
    /// Wall-clock of all critic and actor updates over the batches.
    pub total_seconds: f64,
    /// Mean wall-clock of one actor update.
    pub mean_step_ns: f64,
    pub updates: usize,
}

/// Times every configuration on the same batches. The batches are collected
/// once with the initial policy after critic warm-up; all configurations must
/// share environment, seed, and network sizes.
pub fn bench_matched(configs: &[TrainConfig], batches: usize) -> Result<Vec<BenchRow>> {
    let Some(first) = configs.first() else {
        return Ok(Vec::new());
    };
    for c in configs {
        c.validate()?;
        if c.env != first.env || c.seed != first.seed || c.horizon != first.horizon {
            return Err(Error::InvalidConfig("matched benchmarks need one env, seed, and horizon".into()));
        }
    }
    let env = make_env(&first.env, first.effective_reward_shift(), first.horizon)?;
    let spec = env.spec().clone();
    let mut init_rng = stream(first.seed, Stream::Init);
    match spec.action_kind {
        ActionKind::Discrete(n) => {
            bench_with(configs, env, SoftmaxLinearPolicy::new(spec.state_dim, n), init_rng, batches)
        }
        ActionKind::Continuous { ref low, ref high, .. } => {
            let policy = GaussianMlpPolicy::new(spec.state_dim, low, high, first.policy_hidden, &mut init_rng);
            bench_with(configs, env, policy, init_rng, batches)
        }
    }
}

fn bench_with<P: Policy>(
    configs: &[TrainConfig],
    mut env: Box<dyn Environment>,
    policy: P,
    mut init_rng: Rng,
    batches: usize,
) -> Result<Vec<BenchRow>> {
    let first = &configs[0];
    let mut critic = ValueCritic::new(env.spec().state_dim, first.critic_hidden, &mut init_rng);
    let mut env_rng = stream(first.seed, Stream::Env);
    let mut policy_rng = stream(first.seed, Stream::Policy);
    for _ in 0..first.warmup_batches {
        let b = collect_batch(env.as_mut(), &policy, first.episodes_per_batch, &mut env_rng, &mut policy_rng)?;
        critic_update(&mut critic, &flatten(&b), first.gamma, first.critic_beta, first.critic_inner)?;
    }
    let data: Vec<Vec<Transition>> = (0..batches)
        .map(|_| {
            collect_batch(env.as_mut(), &policy, first.episodes_per_batch, &mut env_rng, &mut policy_rng)
                .map(|b| flatten(&b))
        })
        .collect::<Result<_>>()?;

    let mut rows = Vec::with_capacity(configs.len());
    for config in configs {
        let rule = config.rule();
        let mut policy = policy.clone();
        let mut critic = critic.clone();
        let mut diag_rng = stream(config.seed, Stream::Diagnostics);
        let mut l_hat = 0.0;
        let mut step_ns = 0u64;
        let start = Instant::now();
        for transitions in &data {
            critic_update(&mut critic, transitions, config.gamma, config.critic_beta, config.critic_inner)?;
            let step = actor_step(config, &rule, &mut policy, &critic, transitions, &mut diag_rng, &mut l_hat)?;
            step_ns += step.report.wall_clock_ns;
        }
        rows.push(BenchRow {
            method: config.method,
            seed: config.seed,
            total_seconds: start.elapsed().as_secs_f64(),
            mean_step_ns: if data.is_empty() { 0.0 } else { step_ns as f64 / data.len() as f64 },
            updates: data.len(),
        });
    }
    Ok(rows)
}

struct ActorStep {
    report: UpdateReport,
    alpha: f64,
}

/// Weights the batch with the frozen critic and applies one actor update.
fn actor_step<P: Policy>(
    config: &TrainConfig,
    rule: &UpdateRule,
    policy: &mut P,
    critic: &ValueCritic,
    transitions: &[Transition],
    diag_rng: &mut Rng,
    l_hat: &mut f64,
) -> Result<ActorStep> {
    let weights = td0_targets(critic, transitions, config.gamma);
    let n = transitions.len() as f64;
    let mass: Vec<f64> = if config.occupancy_weighting {
        weights.discounts.iter().map(|g| g / n).collect()
    } else {
        vec![1.0 / n; transitions.len()]
    };
    let mut advantages = weights.advantages;
    if config.normalize_advantages {
        normalize(&mut advantages);
    }
    // Q-weights only enter through nonnegative curvature and Q-mode
    // gradients; negative critic estimates are clipped.
    let q_weights: Vec<f64> = weights.q_weights.iter().map(|q| q.max(0.0)).collect();
    let samples = transitions
        .iter()
        .map(|tr| StateAction {
            state: tr.state.clone(),
            action: tr.action.clone(),
        })
        .collect();
    let batch = CurvatureBatch::with_mass(samples, mass, advantages, q_weights)?;

    // Timed from here: the update rule proper, excluding shared weighting.
    let start = Instant::now();
    let g = policy_gradient(&batch, policy, &batch.weights(config.weighting))?;

    let (direction, mut report, bound) = match (rule, config.curvature_kind()) {
        (UpdateRule::Vanilla { .. }, _) | (_, None) => {
            let (d, r) = solve_direction(rule, &crate::curvature::MatrixOperator(nalgebra::DMatrix::zeros(0, 0)), &g, None)?;
            (d, r, None)
        }
        (_, Some(kind)) => {
            let operator = CurvatureOperator::new(kind, &*policy, &batch, rule_damping(rule), config.acgn2_weighting)?;
            let newton = matches!(rule, UpdateRule::Newton { .. });
            let spectrum = if newton && (config.diagnostics.spectrum || needs_spectrum(rule)) {
                Some(estimate_spectrum(&operator, 1, config.diagnostics.spectrum_iters, diag_rng)?)
            } else {
                None
            };
            let bound = spectrum.map(|s| contraction_bound(&s, operator.damping(), l_hat));
            let (d, r) = solve_direction(rule, &operator as &dyn LinearOperator, &g, spectrum.as_ref())?;
            (d, r, bound.flatten())
        }
    };
    report.step_bound_alpha = bound;
    let alpha = match bound {
        Some(b) if config.diagnostics.enforce_step_bound && b.is_finite() => rule.alpha().min(b),
        _ => rule.alpha(),
    };
    apply_update(policy, &direction, alpha)?;
    report.wall_clock_ns = (start.elapsed().as_nanos() as u64).max(1);
    Ok(ActorStep { report, alpha })
}

fn rule_damping(rule: &UpdateRule) -> f64 {
    match *rule {
        UpdateRule::Vanilla { .. } => 0.0,
        UpdateRule::Natural { damping, .. } | UpdateRule::Newton { damping, .. } => damping,
    }
}

fn needs_spectrum(rule: &UpdateRule) -> bool {
    matches!(rule, UpdateRule::Newton { solver: crate::optim::Solver::FixedPoint, .. })
}

/// Updates the running curvature-variation estimate and evaluates the step
/// bound; `None` when the operator is not positive definite.
fn contraction_bound(spectrum: &SpectrumEstimate, damping: f64, l_hat: &mut f64) -> Option<f64> {
    // Eigenvalues of H̃ are λ minus those of P.
    let spread = (damping - spectrum.m_hat).abs().max((damping - spectrum.M_hat).abs());
    *l_hat = l_hat.max(spread).max(spectrum.M_hat);
    (spectrum.m_hat > 0.0).then(|| step_size_bound(spectrum, *l_hat))
}

fn normalize(xs: &mut [f64]) {
    let n = xs.len();
    if n < 2 {
        return;
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
    let std = var.sqrt().max(1e-8);
    for x in xs {
        *x = (*x - mean) / std;
    }
}

#[cfg(test)]
mod tests;
