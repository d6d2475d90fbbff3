//! Actor update rules: vanilla ascent, natural gradient, and damped Newton
//! steps solved by conjugate gradient with positive-definiteness screening.

mod cg;

pub use cg::{conjugate_gradient, CgOutcome};

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::curvature::{CurvatureBatch, CurvatureKind, LinearOperator, SpectrumEstimate};
use crate::policy::Policy;
use crate::{Error, ParamVector, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Solver {
    Cg,
    /// Damped Richardson iteration `Δ ← Δ + η(g - PΔ)` with `η = 1/M_hat`.
    FixedPoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum UpdateRule {
    Vanilla {
        alpha: f64,
    },
    Natural {
        alpha: f64,
        damping: f64,
        cg_iters: usize,
        cg_tol: f64,
    },
    Newton {
        kind: CurvatureKind,
        alpha: f64,
        damping: f64,
        cg_iters: usize,
        cg_tol: f64,
        screening: bool,
        solver: Solver,
    },
}

impl UpdateRule {
    pub fn alpha(&self) -> f64 {
        match *self {
            UpdateRule::Vanilla { alpha } | UpdateRule::Natural { alpha, .. } | UpdateRule::Newton { alpha, .. } => alpha,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let alpha = self.alpha();
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::InvalidConfig(format!("step size {alpha} must be positive")));
        }
        match *self {
            UpdateRule::Vanilla { .. } => Ok(()),
            UpdateRule::Natural { cg_iters, cg_tol, damping, .. } | UpdateRule::Newton { cg_iters, cg_tol, damping, .. } => {
                if cg_iters == 0 || !(cg_tol > 0.0) || !(damping >= 0.0) {
                    Err(Error::InvalidConfig(format!(
                        "need cg_iters ≥ 1, cg_tol > 0, damping ≥ 0 (got {cg_iters}, {cg_tol}, {damping})"
                    )))
                } else {
                    Ok(())
                }
            }
        }
    }
}

/// Per-actor-step record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[allow(non_snake_case)]
pub struct UpdateReport {
    pub grad_norm: f64,
    pub direction_norm: f64,
    pub cg_iterations: usize,
    pub cg_converged: bool,
    pub screening_triggered: bool,
    pub fallback_used: bool,
    /// `dᵀPd` accumulated from the CG transcript (`None` when not solved by CG).
    pub direction_curvature: Option<f64>,
    pub m_hat: Option<f64>,
    #[serde(rename = "M_hat")]
    pub M_hat: Option<f64>,
    pub step_bound_alpha: Option<f64>,
    pub wall_clock_ns: u64,
}

impl UpdateReport {
    fn new(grad_norm: f64) -> Self {
        UpdateReport {
            grad_norm,
            direction_norm: 0.0,
            cg_iterations: 0,
            cg_converged: true,
            screening_triggered: false,
            fallback_used: false,
            direction_curvature: None,
            m_hat: None,
            M_hat: None,
            step_bound_alpha: None,
            wall_clock_ns: 0,
        }
    }
}

/// `Σ_t m_t w_t ∇log π_θ(a_t | s_t)`; with uniform mass this is the batch mean.
pub fn policy_gradient<P: Policy>(batch: &CurvatureBatch, policy: &P, weights: &[f64]) -> Result<ParamVector> {
    if batch.is_empty() {
        return Err(Error::ContractViolation("policy gradient of an empty batch".into()));
    }
    if weights.len() != batch.len() {
        return Err(Error::ContractViolation(format!("{} weights for {} samples", weights.len(), batch.len())));
    }
    let mut g = ParamVector::zeros(policy.dim());
    for ((sa, m), w) in batch.samples.iter().zip(&batch.mass).zip(weights) {
        let c = m * w;
        if c != 0.0 {
            policy.accumulate_grad_log_prob(&sa.state, &sa.action, c, &mut g);
        }
    }
    crate::error::ensure_finite(g.as_slice(), "policy gradient")?;
    Ok(g)
}

/// Computes the ascent direction for `rule`. `operator` is the damped
/// ascent-form system `P`; it is ignored by the vanilla rule. The fixed-point
/// solver needs `spectrum` for its step `1/M_hat`.
pub fn solve_direction<O: LinearOperator + ?Sized>(
    rule: &UpdateRule,
    operator: &O,
    g: &ParamVector,
    spectrum: Option<&SpectrumEstimate>,
) -> Result<(ParamVector, UpdateReport)> {
    let start = Instant::now();
    crate::error::ensure_finite(g.as_slice(), "gradient passed to the solver")?;
    let mut report = UpdateReport::new(g.norm());
    if let Some(s) = spectrum {
        report.m_hat = Some(s.m_hat);
        report.M_hat = Some(s.M_hat);
    }
    let direction = match *rule {
        UpdateRule::Vanilla { .. } => g.clone(),
        UpdateRule::Natural { cg_iters, cg_tol, .. } => {
            let out = conjugate_gradient(operator, g, cg_iters, cg_tol)?;
            record_cg(&mut report, &out, cg_tol);
            if out.negative_curvature {
                report.fallback_used = true;
                if out.x.norm() > 0.0 { out.x } else { g.clone() }
            } else {
                out.x
            }
        }
        UpdateRule::Newton { cg_iters, cg_tol, screening, solver, .. } => match solver {
            Solver::Cg => {
                let out = conjugate_gradient(operator, g, cg_iters, cg_tol)?;
                record_cg(&mut report, &out, cg_tol);
                if out.negative_curvature {
                    report.fallback_used = true;
                    if screening {
                        report.screening_triggered = true;
                        report.direction_curvature = None;
                        g.clone()
                    } else if out.x.norm() > 0.0 {
                        out.x
                    } else {
                        g.clone()
                    }
                } else {
                    out.x
                }
            }
            Solver::FixedPoint => {
                let s = spectrum.ok_or_else(|| {
                    Error::InvalidConfig("fixed-point solver needs a spectrum estimate".into())
                })?;
                if s.m_hat <= 0.0 && screening {
                    report.screening_triggered = true;
                    report.fallback_used = true;
                    g.clone()
                } else {
                    let eta = 1.0 / s.M_hat;
                    let mut delta = ParamVector::zeros(g.len());
                    for _ in 0..cg_iters {
                        let residual = g - operator.apply(&delta)?;
                        delta.axpy(eta, &residual, 1.0);
                    }
                    let residual = (g - operator.apply(&delta)?).norm();
                    report.cg_iterations = cg_iters;
                    report.cg_converged = residual <= 10.0 * cg_tol * g.norm().max(f64::MIN_POSITIVE);
                    delta
                }
            }
        },
    };
    crate::error::ensure_finite(direction.as_slice(), "update direction")?;
    report.direction_norm = direction.norm();
    report.wall_clock_ns = (start.elapsed().as_nanos() as u64).max(1);
    Ok((direction, report))
}

fn record_cg(report: &mut UpdateReport, out: &CgOutcome, cg_tol: f64) {
    report.cg_iterations = out.iterations;
    report.cg_converged = !out.negative_curvature && out.relative_residual <= 10.0 * cg_tol;
    report.direction_curvature = Some(out.x_curvature);
}

/// `θ ← θ + α d`.
pub fn apply_update<P: Policy>(policy: &mut P, direction: &ParamVector, alpha: f64) -> Result<()> {
    if direction.len() != policy.dim() {
        return Err(Error::ContractViolation(format!(
            "direction dimension {} does not match policy dimension {}",
            direction.len(),
            policy.dim()
        )));
    }
    crate::error::ensure_finite(direction.as_slice(), "update direction")?;
    let next = policy.params() + direction * alpha;
    if let Err(e) = crate::error::ensure_finite(next.as_slice(), "updated policy parameters") {
        return Err(Error::non_finite(
            "actor update",
            format!("{e}; |θ|∞ = {}, |d|∞ = {}, α = {alpha}", policy.params().amax(), direction.amax()),
        ));
    }
    policy.set_params(next)
}

/// Largest step keeping the damped Newton iteration contractive:
/// `2m² / (L·M - m²)`, or `+∞` when the denominator is not positive.
pub fn step_size_bound(spectrum: &SpectrumEstimate, l_hat: f64) -> f64 {
    let m2 = spectrum.m_hat * spectrum.m_hat;
    let denom = l_hat * spectrum.M_hat - m2;
    if denom > 0.0 {
        2.0 * m2 / denom
    } else {
        f64::INFINITY
    }
}

#[cfg(test)]
mod tests;
