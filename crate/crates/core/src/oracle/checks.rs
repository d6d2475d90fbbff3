//! The oracle invariant suite: randomized identity checks with pinned
//! tolerances, shared by the `check` command and the acceptance tests.

use std::fmt;
use std::str::FromStr;

use nalgebra::SymmetricEigen;
use rand::Rng as _;
use serde::Serialize;

use super::exact::{dense_curvature, exact_curvature_batch, exact_decomposition, frozen_critic_objective};
use super::{dense_operator, fd_gradient, fd_hessian_dense, FdSpec};
use crate::curvature::{estimate_spectrum, h1_vp, h2_vp, CurvatureBatch, CurvatureKind, CurvatureOperator, Weighting};
use crate::env::{enumerate_exact_J, Action, TinyMdp};
use crate::optim::policy_gradient;
use crate::policy::{Policy, SoftmaxLinearPolicy, StateAction};
use crate::rng::{stream, Rng, Stream};
use crate::{Error, ParamVector, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CheckName {
    GradientFd,
    HessianDecomposition,
    AdvantageEquivalence,
    CurvatureSign,
    SpectrumDense,
    H12Limit,
}

impl CheckName {
    pub const ALL: [CheckName; 6] = [
        CheckName::GradientFd,
        CheckName::HessianDecomposition,
        CheckName::AdvantageEquivalence,
        CheckName::CurvatureSign,
        CheckName::SpectrumDense,
        CheckName::H12Limit,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CheckName::GradientFd => "gradient-fd",
            CheckName::HessianDecomposition => "hessian-decomposition",
            CheckName::AdvantageEquivalence => "advantage-equivalence",
            CheckName::CurvatureSign => "curvature-sign",
            CheckName::SpectrumDense => "spectrum-dense",
            CheckName::H12Limit => "h12-limit",
        }
    }

    fn default_trials(self) -> usize {
        match self {
            CheckName::GradientFd | CheckName::SpectrumDense => 20,
            CheckName::CurvatureSign => 1000,
            _ => 10,
        }
    }
}

impl fmt::Display for CheckName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CheckName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        CheckName::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| {
                let names: Vec<_> = CheckName::ALL.iter().map(|c| c.as_str()).collect();
                Error::InvalidConfig(format!("unknown check {s:?}; expected one of {names:?}"))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CheckConfig {
    /// Softmax parameter dimension of the random TinyMdp instances (even).
    pub d: usize,
    /// Instances (or probes, for `curvature-sign`); `None` uses the default.
    pub trials: Option<usize>,
    pub seed: u64,
}

impl Default for CheckConfig {
    fn default() -> Self {
        CheckConfig {
            d: 16,
            trials: None,
            seed: 20_240_101,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckOutcome {
    pub name: CheckName,
    pub passed: bool,
    pub trials: usize,
    /// Largest observed error (or violation) across trials.
    pub worst: f64,
    pub tolerance: f64,
    /// Finite-difference step used, if any.
    pub epsilon: Option<f64>,
    pub detail: String,
}

impl fmt::Display for CheckOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "[{}] {:<22} trials={:<5} worst={:.3e} tol={:.1e}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name.as_str(),
            self.trials,
            self.worst,
            self.tolerance
        )?;
        if let Some(eps) = self.epsilon {
            write!(f, " fd_step={eps:.0e}")?;
        }
        if !self.detail.is_empty() {
            write!(f, " {}", self.detail)?;
        }
        Ok(())
    }
}

fn random_instance(rng: &mut Rng, d: usize) -> (TinyMdp, SoftmaxLinearPolicy) {
    let horizon = rng.random_range(1..=4);
    let gamma = rng.random_range(0.5..0.95);
    let mdp = TinyMdp::random(rng, d / 2, horizon, gamma);
    let theta = ParamVector::from_fn(d, |_, _| rng.random_range(-1.5..1.5));
    let policy = mdp.softmax_policy().with_params(theta);
    (mdp, policy)
}

fn random_softmax_batch(rng: &mut Rng, k: usize, n_actions: usize, n: usize) -> (SoftmaxLinearPolicy, CurvatureBatch) {
    let theta = ParamVector::from_fn(k * n_actions, |_, _| rng.random_range(-2.0..2.0));
    let policy = SoftmaxLinearPolicy::new(k, n_actions).with_params(theta);
    let samples: Vec<StateAction> = (0..n)
        .map(|_| StateAction {
            state: (0..k).map(|_| rng.random_range(-2.0..2.0)).collect(),
            action: Action::Discrete(rng.random_range(0..n_actions)),
        })
        .collect();
    let adv = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
    let q = (0..n).map(|_| rng.random_range(0.0..5.0)).collect();
    (policy, CurvatureBatch::uniform(samples, adv, q).expect("consistent batch"))
}

/// Runs one named check.
pub fn run_check(name: CheckName, cfg: &CheckConfig) -> Result<CheckOutcome> {
    if cfg.d < 2 || cfg.d % 2 != 0 || cfg.d > super::MAX_DENSE_DIM {
        return Err(Error::InvalidConfig(format!(
            "check dimension must be even and in [2, {}], got {}",
            super::MAX_DENSE_DIM,
            cfg.d
        )));
    }
    let trials = cfg.trials.unwrap_or(name.default_trials());
    let mut rng = stream(cfg.seed ^ (name as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15), Stream::Diagnostics);
    let outcome = |worst: f64, tolerance: f64, epsilon: Option<f64>, detail: String| CheckOutcome {
        name,
        passed: worst <= tolerance,
        trials,
        worst,
        tolerance,
        epsilon,
        detail,
    };
    match name {
        CheckName::GradientFd => {
            let spec = FdSpec::default();
            let mut worst = 0.0f64;
            for _ in 0..trials {
                let (mdp, policy) = random_instance(&mut rng, cfg.d);
                let batch = exact_curvature_batch(&mdp, &policy)?;
                let g = policy_gradient(&batch, &policy, &batch.q_weights)?;
                let fd = fd_gradient(|th| Ok(enumerate_exact_J(&mdp, &policy, th)), policy.params(), &spec)?;
                worst = worst.max((&g - &fd).norm() / fd.norm());
            }
            Ok(outcome(worst, 1e-6, Some(spec.step), "relative ‖g - g_fd‖/‖g_fd‖".into()))
        }
        CheckName::HessianDecomposition => {
            let spec = FdSpec::hessian();
            let mut worst = 0.0f64;
            for _ in 0..trials {
                let (mdp, policy) = random_instance(&mut rng, cfg.d);
                let dec = exact_decomposition(&mdp, &policy, &spec)?;
                worst = worst.max((&dec.hessian_fd - dec.full()).amax());
            }
            Ok(outcome(worst, 1e-4, Some(spec.step), "entrywise |∇²J_fd - (H1+H2+H12+H12ᵀ)|".into()))
        }
        CheckName::AdvantageEquivalence => {
            let mut worst = 0.0f64;
            for _ in 0..trials {
                let (mdp, policy) = random_instance(&mut rng, cfg.d);
                let batch = exact_curvature_batch(&mdp, &policy)?;
                let q_weighted = dense_curvature(CurvatureKind::OuterProduct(Weighting::Q), &policy, &batch)?
                    + dense_curvature(CurvatureKind::Intrinsic(Weighting::Q), &policy, &batch)?;
                let a_weighted = dense_curvature(CurvatureKind::Acgn1, &policy, &batch)?;
                worst = worst.max((q_weighted - a_weighted).amax());
            }
            Ok(outcome(worst, 1e-8, None, "entrywise |(H1+H2) - (A1+A2)|".into()))
        }
        CheckName::CurvatureSign => {
            // Worst violation: most negative vᵀH₁v or most positive vᵀH₂v.
            let mut worst = f64::NEG_INFINITY;
            for _ in 0..trials {
                let k = rng.random_range(1..=cfg.d / 2);
                let n_actions = rng.random_range(2..=4);
                let n = rng.random_range(1..=16);
                let (policy, batch) = random_softmax_batch(&mut rng, k, n_actions, n);
                let v = ParamVector::from_fn(policy.dim(), |_, _| rng.random_range(-1.0..1.0));
                let w = &batch.q_weights;
                let outer = v.dot(&h1_vp(&batch, &policy, w, &v)?);
                let intrinsic = v.dot(&h2_vp(&batch, &policy, w, &v)?);
                worst = worst.max(-outer).max(intrinsic);
            }
            Ok(outcome(worst, 1e-10, None, "max(-vᵀH1v, vᵀH2v) with w ≥ 0".into()))
        }
        CheckName::SpectrumDense => {
            let kinds = [
                CurvatureKind::Acgn1,
                CurvatureKind::Acgn2,
                CurvatureKind::Fisher,
                CurvatureKind::OuterProduct(Weighting::Advantage),
            ];
            let mut worst = 0.0f64;
            for i in 0..trials {
                let max_k = (super::MAX_DENSE_DIM / 4).min(cfg.d.max(8) / 2).max(1);
                let k = rng.random_range(1..=max_k);
                let n_actions = rng.random_range(2..=4);
                let n = rng.random_range(4..=32);
                let (policy, batch) = random_softmax_batch(&mut rng, k, n_actions, n);
                let damping = rng.random_range(0.05..1.0);
                let op = CurvatureOperator::new(kinds[i % kinds.len()], &policy, &batch, damping, Weighting::Q)?;
                let dense = dense_operator(&op)?;
                let eig = SymmetricEigen::new(dense).eigenvalues;
                let (m, big) = (eig.min(), eig.max());
                let est = estimate_spectrum(&op, 1, op_dim_iters(policy.dim()), &mut rng)?;
                let rel = ((est.m_hat - m).abs() / m.abs()).max((est.M_hat - big).abs() / big.abs());
                worst = worst.max(rel);
            }
            Ok(outcome(worst, 1e-2, None, "relative error of (m_hat, M_hat) vs dense extremes".into()))
        }
        CheckName::H12Limit => {
            let spec = FdSpec::hessian();
            let mut worst_frozen = 0.0f64;
            let mut worst_identity = 0.0f64;
            let mut omission = Vec::with_capacity(trials);
            for _ in 0..trials {
                let (mdp, policy) = random_instance(&mut rng, cfg.d);
                let dec = exact_decomposition(&mdp, &policy, &spec)?;
                let interaction = &dec.h12 + dec.h12.transpose();
                let omitted = &dec.hessian_fd - dec.interaction_free();
                worst_identity = worst_identity.max((&omitted - &interaction).amax());
                omission.push(omitted.amax());
                let frozen = frozen_critic_objective(&mdp, &policy, policy.params());
                let h_frozen = fd_hessian_dense(|th| Ok(frozen(th)), policy.params(), &spec)?;
                worst_frozen = worst_frozen.max((h_frozen - dec.interaction_free()).amax());
            }
            let mut out = outcome(
                worst_frozen,
                1e-6,
                Some(spec.step),
                format!(
                    "frozen-critic omission error; live omission max {:.3e} equals |H12+H12ᵀ| within {:.1e}",
                    omission.iter().cloned().fold(0.0, f64::max),
                    worst_identity
                ),
            );
            out.passed = out.passed && worst_identity <= 1e-4;
            Ok(out)
        }
    }
}

fn op_dim_iters(d: usize) -> usize {
    d.max(5)
}
