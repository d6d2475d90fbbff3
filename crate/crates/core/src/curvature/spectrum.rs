//! Extreme eigenvalues of an implicit symmetric operator.
//!
//! Lanczos with full reorthogonalization from random start vectors. The
//! extreme Ritz values bracket the spectrum from inside, so `m_hat` never
//! undershoots the true minimum and `M_hat` never overshoots the maximum.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::LinearOperator;
use crate::rng::Rng;
use crate::{Error, ParamVector, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[allow(non_snake_case)]
pub struct SpectrumEstimate {
    pub m_hat: f64,
    #[serde(rename = "M_hat")]
    pub M_hat: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Relative Ritz residual below which an extreme pair counts as converged.
const RITZ_TOL: f64 = 1e-8;

pub fn estimate_spectrum<O: LinearOperator + ?Sized>(
    op: &O,
    probes: usize,
    iters: usize,
    rng: &mut Rng,
) -> Result<SpectrumEstimate> {
    if iters < 5 {
        return Err(Error::ContractViolation(format!("spectrum estimation needs ≥ 5 iterations, got {iters}")));
    }
    let d = op.dim();
    if d == 0 {
        return Err(Error::ContractViolation("operator has dimension 0".into()));
    }
    let mut best: Option<SpectrumEstimate> = None;
    for _ in 0..probes.max(1) {
        let start = ParamVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let est = lanczos_extremes(op, start, iters.min(d))?;
        best = Some(match best {
            None => est,
            Some(b) => SpectrumEstimate {
                m_hat: b.m_hat.min(est.m_hat),
                M_hat: b.M_hat.max(est.M_hat),
                iterations: b.iterations + est.iterations,
                converged: b.converged && est.converged,
            },
        });
    }
    Ok(best.unwrap())
}

fn lanczos_extremes<O: LinearOperator + ?Sized>(op: &O, start: ParamVector, steps: usize) -> Result<SpectrumEstimate> {
    let mut basis: Vec<ParamVector> = Vec::with_capacity(steps);
    let mut alpha = Vec::with_capacity(steps);
    let mut beta: Vec<f64> = Vec::with_capacity(steps);
    let mut q = &start / start.norm();
    let mut breakdown = false;
    let mut scale = 0.0f64;
    for j in 0..steps {
        let mut w = op.apply(&q)?;
        let a = q.dot(&w);
        scale = scale.max(w.norm());
        w.axpy(-a, &q, 1.0);
        if j > 0 {
            w.axpy(-beta[j - 1], &basis[j - 1], 1.0);
        }
        basis.push(q.clone());
        alpha.push(a);
        for _ in 0..2 {
            for b in &basis {
                let c = b.dot(&w);
                w.axpy(-c, b, 1.0);
            }
        }
        let b = w.norm();
        if b <= 1e-12 * scale.max(f64::MIN_POSITIVE) || j + 1 == steps {
            breakdown = b <= 1e-12 * scale.max(f64::MIN_POSITIVE);
            beta.push(b);
            break;
        }
        beta.push(b);
        q = w / b;
    }
    let k = alpha.len();
    let mut t = DMatrix::<f64>::zeros(k, k);
    for i in 0..k {
        t[(i, i)] = alpha[i];
        if i + 1 < k {
            t[(i, i + 1)] = beta[i];
            t[(i + 1, i)] = beta[i];
        }
    }
    let eig = SymmetricEigen::new(t);
    let (mut lo, mut hi) = (0, 0);
    for i in 0..k {
        if eig.eigenvalues[i] < eig.eigenvalues[lo] {
            lo = i;
        }
        if eig.eigenvalues[i] > eig.eigenvalues[hi] {
            hi = i;
        }
    }
    let m_hat = eig.eigenvalues[lo];
    let big = eig.eigenvalues[hi];
    let tail = beta[k - 1];
    let residual = |i: usize| tail * eig.eigenvectors[(k - 1, i)].abs();
    let tol = RITZ_TOL * m_hat.abs().max(big.abs()).max(f64::MIN_POSITIVE);
    let converged = breakdown || k == op.dim() || (residual(lo) <= tol && residual(hi) <= tol);
    Ok(SpectrumEstimate {
        m_hat,
        M_hat: big,
        iterations: k,
        converged,
    })
}
