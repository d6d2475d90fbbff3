//! Exact-expectation quantities on a [`TinyMdp`].

use nalgebra::DMatrix;

use super::{dense_operator, fd_gradient, fd_hessian_dense, FdSpec};
use crate::curvature::{CurvatureBatch, CurvatureKind, CurvatureOperator, Weighting};
use crate::env::{enumerate_exact_J, exact_occupancy, exact_value_tables, Action, TinyMdp, ValueTables};
use crate::policy::{Policy, SoftmaxLinearPolicy, StateAction};
use crate::{ParamVector, Result};

/// Time-indexed `Q^π` and `V^π` by backward recursion.
pub fn exact_q_v(mdp: &TinyMdp, policy: &SoftmaxLinearPolicy, theta: &ParamVector) -> ValueTables {
    exact_value_tables(mdp, policy, theta)
}

/// One sample per `(t, s, a)` with mass `γ^t Pr(s_t = s, a_t = a)`, Q-weight
/// `Q_t(s, a)` and advantage `Q_t(s, a) - V_t(s)`. Expectations over this
/// batch are exact occupancy-weighted sums.
pub fn exact_curvature_batch(mdp: &TinyMdp, policy: &SoftmaxLinearPolicy) -> Result<CurvatureBatch> {
    let theta = policy.params();
    let occ = exact_occupancy(mdp, policy, theta);
    let tables = exact_q_v(mdp, policy, theta);
    let (mut samples, mut mass, mut adv, mut q) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for t in 0..mdp.horizon {
        for s in 0..mdp.n_states {
            for a in 0..mdp.n_actions {
                samples.push(StateAction {
                    state: mdp.features[s].clone(),
                    action: Action::Discrete(a),
                });
                mass.push(occ.per_step[t][s][a]);
                q.push(tables.q[t][s][a]);
                adv.push(tables.q[t][s][a] - tables.v[t][s]);
            }
        }
    }
    CurvatureBatch::with_mass(samples, mass, adv, q)
}

/// Dense pieces of the policy Hessian at the policy's current parameters.
#[derive(Debug, Clone)]
pub struct Decomposition {
    /// Finite-difference Hessian of the exact objective.
    pub hessian_fd: DMatrix<f64>,
    pub h1: DMatrix<f64>,
    pub h2: DMatrix<f64>,
    pub h12: DMatrix<f64>,
}

impl Decomposition {
    pub fn full(&self) -> DMatrix<f64> {
        &self.h1 + &self.h2 + &self.h12 + self.h12.transpose()
    }

    pub fn interaction_free(&self) -> DMatrix<f64> {
        &self.h1 + &self.h2
    }
}

/// Dense `H̃` of a curvature kind, assembled through the operator products.
pub(crate) fn dense_curvature(
    kind: CurvatureKind,
    policy: &SoftmaxLinearPolicy,
    batch: &CurvatureBatch,
) -> Result<DMatrix<f64>> {
    // λ = 0 gives P = -H̃.
    let op = CurvatureOperator::new(kind, policy, batch, 0.0, Weighting::Q)?;
    Ok(-dense_operator(&op)?)
}

/// `H₁` and `H₂` through the operator path, `H₁₂ = Σ ρ_t ∇log π ∇Q_tᵀ` with
/// `∇Q_t` by finite differences of the exact tables, and the reference
/// Hessian by second differences of the exact objective.
pub fn exact_decomposition(mdp: &TinyMdp, policy: &SoftmaxLinearPolicy, hessian_spec: &FdSpec) -> Result<Decomposition> {
    let theta = policy.params().clone();
    let d = policy.dim();
    let batch = exact_curvature_batch(mdp, policy)?;
    let h1 = dense_curvature(CurvatureKind::OuterProduct(Weighting::Q), policy, &batch)?;
    let h2 = dense_curvature(CurvatureKind::Intrinsic(Weighting::Q), policy, &batch)?;

    let mut h12 = DMatrix::zeros(d, d);
    let mut i = 0;
    for t in 0..mdp.horizon {
        for s in 0..mdp.n_states {
            for a in 0..mdp.n_actions {
                let grad_q = fd_gradient(
                    |th| Ok(exact_q_v(mdp, policy, th).q[t][s][a]),
                    &theta,
                    &FdSpec::default(),
                )?;
                let score = policy.grad_log_prob(&mdp.features[s], &Action::Discrete(a));
                h12 += (score * grad_q.transpose()) * batch.mass[i];
                i += 1;
            }
        }
    }
    let hessian_fd = fd_hessian_dense(|th| Ok(enumerate_exact_J(mdp, policy, th)), &theta, hessian_spec)?;
    Ok(Decomposition { hessian_fd, h1, h2, h12 })
}

/// Objective with the state distribution and Q-tables frozen at `theta0`:
/// `L(θ) = Σ_t Σ_s γ^t d_t(s) Σ_a π_θ(a|s) Q_t(s, a)`. Its Hessian at
/// `theta0` contains no interaction term.
pub fn frozen_critic_objective<'a>(
    mdp: &'a TinyMdp,
    policy: &'a SoftmaxLinearPolicy,
    theta0: &ParamVector,
) -> impl Fn(&ParamVector) -> f64 + 'a {
    let occ = exact_occupancy(mdp, policy, theta0);
    let tables = exact_q_v(mdp, policy, theta0);
    let state_weight: Vec<Vec<f64>> = occ
        .per_step
        .iter()
        .map(|step| step.iter().map(|row| row.iter().sum()).collect())
        .collect();
    move |theta: &ParamVector| {
        let pi = mdp.policy_table(policy, theta);
        let mut total = 0.0;
        for t in 0..mdp.horizon {
            for s in 0..mdp.n_states {
                let inner: f64 = (0..mdp.n_actions).map(|a| pi[s][a] * tables.q[t][s][a]).sum();
                total += state_weight[t][s] * inner;
            }
        }
        total
    }
}
