use crate::curvature::LinearOperator;
use crate::{ParamVector, Result};

/// Search directions with `pᵀPp ≤ NEG_CURVATURE_TOL · ‖p‖²` count as
/// non-positive curvature.
pub const NEG_CURVATURE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct CgOutcome {
    /// Last iterate before termination.
    pub x: ParamVector,
    pub iterations: usize,
    /// `‖g - Px‖ / ‖g‖`.
    pub relative_residual: f64,
    pub negative_curvature: bool,
    /// `xᵀPx = Σ_k α_k² p_kᵀPp_k`, from the CG transcript.
    pub x_curvature: f64,
}

/// Conjugate gradient for `P x = g` from `x = 0`, stopping at relative
/// residual `tol`, after `max_iters` products, or on the first search
/// direction of non-positive curvature.
pub fn conjugate_gradient<O: LinearOperator + ?Sized>(
    op: &O,
    g: &ParamVector,
    max_iters: usize,
    tol: f64,
) -> Result<CgOutcome> {
    let g_norm = g.norm();
    let mut out = CgOutcome {
        x: ParamVector::zeros(g.len()),
        iterations: 0,
        relative_residual: 0.0,
        negative_curvature: false,
        x_curvature: 0.0,
    };
    if g_norm == 0.0 {
        return Ok(out);
    }
    let mut r = g.clone();
    let mut p = r.clone();
    let mut rr = r.dot(&r);
    out.relative_residual = 1.0;
    for k in 0..max_iters {
        let pp = op.apply(&p)?;
        let curvature = p.dot(&pp);
        if curvature <= NEG_CURVATURE_TOL * p.dot(&p) {
            out.negative_curvature = true;
            break;
        }
        let step = rr / curvature;
        out.x.axpy(step, &p, 1.0);
        r.axpy(-step, &pp, 1.0);
        out.x_curvature += step * step * curvature;
        out.iterations = k + 1;
        let rr_next = r.dot(&r);
        out.relative_residual = rr_next.sqrt() / g_norm;
        if out.relative_residual <= tol {
            break;
        }
        p = &r + &p * (rr_next / rr);
        rr = rr_next;
    }
    Ok(out)
}
