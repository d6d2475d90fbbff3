//! Implicit curvature operators.
//!
//! Every curvature approximation is exposed only through vector products.
//! Solvers work with the damped ascent-form operator `P(v) = λv - H̃v`, so a
//! negative semidefinite `H̃` yields a positive definite system and `P⁻¹g` is
//! an ascent direction. The Fisher matrix enters as `H̃ = -F`.
//!
//! Expectations are weighted sums over a [`CurvatureBatch`] with per-sample
//! `mass` (uniform `1/N` for sampled batches, occupancy weights for exact
//! expectations on small MDPs).

mod diagnostic;
mod spectrum;

pub use diagnostic::{h12_diagnostic, H12Diagnostic, H12_FD_STEP};
pub use spectrum::{estimate_spectrum, SpectrumEstimate};

use std::borrow::Cow;

use serde::{Deserialize, Serialize};

use crate::policy::{Policy, StateAction, WeightedLogProbFunctional};
use crate::{Error, ParamVector, Result};

/// A symmetric linear map known only through its action on vectors.
pub trait LinearOperator {
    fn dim(&self) -> usize;

    fn apply(&self, v: &ParamVector) -> Result<ParamVector>;
}

/// Explicit matrix as an operator; used by tests and oracles.
#[derive(Debug, Clone)]
pub struct MatrixOperator(pub nalgebra::DMatrix<f64>);

impl LinearOperator for MatrixOperator {
    fn dim(&self) -> usize {
        self.0.nrows()
    }

    fn apply(&self, v: &ParamVector) -> Result<ParamVector> {
        Ok(&self.0 * v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Weighting {
    Q,
    Advantage,
    Unit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CurvatureKind {
    Fisher,
    OuterProduct(Weighting),
    Intrinsic(Weighting),
    /// Advantage-weighted outer-product plus intrinsic terms.
    Acgn1,
    /// Intrinsic term only, with the weighting chosen at operator build time.
    Acgn2,
}

/// State-action samples with expectation mass and the two critic weightings.
#[derive(Debug, Clone, PartialEq)]
pub struct CurvatureBatch {
    pub samples: Vec<StateAction>,
    pub mass: Vec<f64>,
    pub advantages: Vec<f64>,
    pub q_weights: Vec<f64>,
}

impl CurvatureBatch {
    /// Empirical batch with uniform mass `1/N`.
    pub fn uniform(samples: Vec<StateAction>, advantages: Vec<f64>, q_weights: Vec<f64>) -> Result<Self> {
        let n = samples.len();
        let mass = vec![1.0 / n.max(1) as f64; n];
        Self::with_mass(samples, mass, advantages, q_weights)
    }

    pub fn with_mass(
        samples: Vec<StateAction>,
        mass: Vec<f64>,
        advantages: Vec<f64>,
        q_weights: Vec<f64>,
    ) -> Result<Self> {
        let n = samples.len();
        if mass.len() != n || advantages.len() != n || q_weights.len() != n {
            return Err(Error::ContractViolation(format!(
                "batch of {n} samples has {} masses, {} advantages, {} Q-weights",
                mass.len(),
                advantages.len(),
                q_weights.len()
            )));
        }
        for (name, w) in [("mass", &mass), ("advantages", &advantages), ("Q-weights", &q_weights)] {
            crate::error::ensure_finite(w, name)?;
        }
        Ok(CurvatureBatch {
            samples,
            mass,
            advantages,
            q_weights,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn weights(&self, weighting: Weighting) -> Cow<'_, [f64]> {
        match weighting {
            Weighting::Q => Cow::Borrowed(&self.q_weights),
            Weighting::Advantage => Cow::Borrowed(&self.advantages),
            Weighting::Unit => Cow::Owned(vec![1.0; self.len()]),
        }
    }

    fn effective(&self, weights: &[f64]) -> Vec<f64> {
        self.mass.iter().zip(weights).map(|(m, w)| m * w).collect()
    }
}

fn check_dims<P: Policy>(batch: &CurvatureBatch, policy: &P, weights: &[f64], v: &ParamVector) -> Result<()> {
    if weights.len() != batch.len() || v.len() != policy.dim() {
        return Err(Error::ContractViolation(format!(
            "weights {} vs batch {}, vector {} vs policy {}",
            weights.len(),
            batch.len(),
            v.len(),
            policy.dim()
        )));
    }
    crate::error::ensure_finite(weights, "curvature weights")
}

/// `Σ_t m_t w_t ∇log π_t (∇log π_tᵀ v)`.
pub fn h1_vp<P: Policy>(batch: &CurvatureBatch, policy: &P, weights: &[f64], v: &ParamVector) -> Result<ParamVector> {
    check_dims(batch, policy, weights, v)?;
    let mut out = ParamVector::zeros(policy.dim());
    for ((sa, m), w) in batch.samples.iter().zip(&batch.mass).zip(weights) {
        let c = m * w;
        if c != 0.0 {
            let g = policy.grad_log_prob(&sa.state, &sa.action);
            out.axpy(c * g.dot(v), &g, 1.0);
        }
    }
    Ok(out)
}

/// Empirical Fisher product, i.e. [`h1_vp`] with unit weights.
pub fn fisher_vp<P: Policy>(batch: &CurvatureBatch, policy: &P, v: &ParamVector) -> Result<ParamVector> {
    h1_vp(batch, policy, &batch.weights(Weighting::Unit), v)
}

/// `Σ_t m_t w_t ∇²log π_t v`, with the weights treated as constants.
pub fn h2_vp<P: Policy>(batch: &CurvatureBatch, policy: &P, weights: &[f64], v: &ParamVector) -> Result<ParamVector> {
    check_dims(batch, policy, weights, v)?;
    let effective = batch.effective(weights);
    let functional = WeightedLogProbFunctional::new(&batch.samples, &effective)?;
    policy.hvp_weighted_logprob(&functional, v)
}

/// ACGN curvature product: `A₁v + A₂v` for ACGN1, `H₂v` under
/// `acgn2_weighting` for ACGN2.
pub fn acgn_vp<P: Policy>(
    kind: CurvatureKind,
    batch: &CurvatureBatch,
    policy: &P,
    acgn2_weighting: Weighting,
    v: &ParamVector,
) -> Result<ParamVector> {
    match kind {
        CurvatureKind::Acgn1 => {
            let a = batch.weights(Weighting::Advantage);
            Ok(h1_vp(batch, policy, &a, v)? + h2_vp(batch, policy, &a, v)?)
        }
        CurvatureKind::Acgn2 => h2_vp(batch, policy, &batch.weights(acgn2_weighting), v),
        other => Err(Error::ContractViolation(format!("{other:?} is not an ACGN kind"))),
    }
}

/// Damped ascent-form operator `P(v) = λv - H̃v` over a frozen batch.
///
/// Score vectors for the outer-product part are computed once at
/// construction; products never form a d×d matrix.
pub struct CurvatureOperator<'a, P: Policy> {
    kind: CurvatureKind,
    policy: &'a P,
    batch: &'a CurvatureBatch,
    damping: f64,
    /// `(score_t, m_t w_t)` pairs; the sign of the outer part is folded into the coefficient.
    outer: Vec<(ParamVector, f64)>,
    intrinsic: Option<Vec<f64>>,
}

impl<'a, P: Policy> CurvatureOperator<'a, P> {
    pub fn new(
        kind: CurvatureKind,
        policy: &'a P,
        batch: &'a CurvatureBatch,
        damping: f64,
        acgn2_weighting: Weighting,
    ) -> Result<Self> {
        if !(damping >= 0.0 && damping.is_finite()) {
            return Err(Error::InvalidConfig(format!("damping {damping} must be finite and ≥ 0")));
        }
        // (outer weighting, outer sign, intrinsic weighting)
        let (outer_w, sign, intrinsic_w) = match kind {
            CurvatureKind::Fisher => (Some(Weighting::Unit), -1.0, None),
            CurvatureKind::OuterProduct(w) => (Some(w), 1.0, None),
            CurvatureKind::Intrinsic(w) => (None, 1.0, Some(w)),
            CurvatureKind::Acgn1 => (Some(Weighting::Advantage), 1.0, Some(Weighting::Advantage)),
            CurvatureKind::Acgn2 => (None, 1.0, Some(acgn2_weighting)),
        };
        let outer = match outer_w {
            None => Vec::new(),
            Some(w) => {
                let eff = batch.effective(&batch.weights(w));
                batch
                    .samples
                    .iter()
                    .zip(eff)
                    .filter(|(_, c)| *c != 0.0)
                    .map(|(sa, c)| (policy.grad_log_prob(&sa.state, &sa.action), sign * c))
                    .collect()
            }
        };
        let intrinsic = intrinsic_w.map(|w| batch.effective(&batch.weights(w)));
        Ok(CurvatureOperator {
            kind,
            policy,
            batch,
            damping,
            outer,
            intrinsic,
        })
    }

    pub fn kind(&self) -> CurvatureKind {
        self.kind
    }

    pub fn damping(&self) -> f64 {
        self.damping
    }

    /// `H̃v` without damping.
    pub fn curvature_vp(&self, v: &ParamVector) -> Result<ParamVector> {
        if v.len() != self.policy.dim() {
            return Err(Error::ContractViolation(format!(
                "vector dimension {} does not match policy dimension {}",
                v.len(),
                self.policy.dim()
            )));
        }
        let mut out = match &self.intrinsic {
            Some(w) => {
                let f = WeightedLogProbFunctional::new(&self.batch.samples, w)?;
                self.policy.hvp_weighted_logprob(&f, v)?
            }
            None => ParamVector::zeros(v.len()),
        };
        for (g, c) in &self.outer {
            out.axpy(c * g.dot(v), g, 1.0);
        }
        Ok(out)
    }
}

impl<P: Policy> LinearOperator for CurvatureOperator<'_, P> {
    fn dim(&self) -> usize {
        self.policy.dim()
    }

    fn apply(&self, v: &ParamVector) -> Result<ParamVector> {
        let mut out = self.curvature_vp(v)?;
        out.axpy(self.damping, v, -1.0);
        crate::error::ensure_finite(out.as_slice(), "curvature operator product")?;
        Ok(out)
    }
}
