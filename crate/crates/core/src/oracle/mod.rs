//! Brute-force references for the numerical paths: central finite
//! differences, dense operator assembly, and exact expectations on
//! [`TinyMdp`](crate::env::TinyMdp). Nothing here is used by training.

mod checks;
mod exact;

pub use checks::{run_check, CheckConfig, CheckName, CheckOutcome};
pub use exact::{exact_curvature_batch, exact_decomposition, exact_q_v, frozen_critic_objective, Decomposition};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::curvature::LinearOperator;
use crate::{Error, ParamVector, Result};

/// Largest dimension the dense oracles accept.
pub const MAX_DENSE_DIM: usize = 32;

/// Central-difference step `ε = step · (1 + ‖θ‖∞)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FdSpec {
    pub step: f64,
}

impl Default for FdSpec {
    fn default() -> Self {
        FdSpec { step: 1e-5 }
    }
}

impl FdSpec {
    /// Step used for second differences; balances truncation `O(ε²)` against
    /// round-off `O(u/ε²)`.
    pub fn hessian() -> Self {
        FdSpec { step: 1e-4 }
    }

    pub fn epsilon(&self, theta: &ParamVector) -> f64 {
        self.step * (1.0 + theta.amax())
    }
}

fn eval<F>(f: &mut F, theta: &ParamVector, coord: &str) -> Result<f64>
where
    F: FnMut(&ParamVector) -> Result<f64>,
{
    let y = f(theta)?;
    if y.is_finite() {
        Ok(y)
    } else {
        Err(Error::non_finite("finite-difference evaluation", format!("f = {y} when perturbing {coord}")))
    }
}

pub fn fd_gradient<F>(mut f: F, theta: &ParamVector, spec: &FdSpec) -> Result<ParamVector>
where
    F: FnMut(&ParamVector) -> Result<f64>,
{
    if spec.step <= 0.0 {
        return Err(Error::InvalidConfig("finite-difference step must be positive".into()));
    }
    let eps = spec.epsilon(theta);
    let mut g = ParamVector::zeros(theta.len());
    let mut x = theta.clone();
    for i in 0..theta.len() {
        let coord = format!("coordinate {i}");
        x[i] = theta[i] + eps;
        let plus = eval(&mut f, &x, &coord)?;
        x[i] = theta[i] - eps;
        let minus = eval(&mut f, &x, &coord)?;
        x[i] = theta[i];
        g[i] = (plus - minus) / (2.0 * eps);
    }
    Ok(g)
}

/// Dense Hessian by central second differences, symmetrized.
pub fn fd_hessian_dense<F>(mut f: F, theta: &ParamVector, spec: &FdSpec) -> Result<DMatrix<f64>>
where
    F: FnMut(&ParamVector) -> Result<f64>,
{
    let d = theta.len();
    if d > MAX_DENSE_DIM {
        return Err(Error::ContractViolation(format!("dense Hessian limited to d ≤ {MAX_DENSE_DIM}, got {d}")));
    }
    if spec.step <= 0.0 {
        return Err(Error::InvalidConfig("finite-difference step must be positive".into()));
    }
    let eps = spec.epsilon(theta);
    let f0 = eval(&mut f, theta, "nothing")?;
    let mut h = DMatrix::zeros(d, d);
    let mut x = theta.clone();
    for i in 0..d {
        let coord = format!("coordinate {i}");
        x[i] = theta[i] + 2.0 * eps;
        let pp = eval(&mut f, &x, &coord)?;
        x[i] = theta[i] - 2.0 * eps;
        let mm = eval(&mut f, &x, &coord)?;
        x[i] = theta[i];
        h[(i, i)] = (pp - 2.0 * f0 + mm) / (4.0 * eps * eps);
        for j in i + 1..d {
            let coord = format!("coordinates {i},{j}");
            let corner = |si: f64, sj: f64, f: &mut F| {
                let mut y = theta.clone();
                y[i] += si * eps;
                y[j] += sj * eps;
                eval(f, &y, &coord)
            };
            let v = corner(1.0, 1.0, &mut f)? - corner(1.0, -1.0, &mut f)? - corner(-1.0, 1.0, &mut f)?
                + corner(-1.0, -1.0, &mut f)?;
            h[(i, j)] = v / (4.0 * eps * eps);
            h[(j, i)] = h[(i, j)];
        }
    }
    Ok((&h + h.transpose()) * 0.5)
}

/// Assembles an operator column by column from `P(e_i)`.
pub fn dense_operator<O: LinearOperator + ?Sized>(op: &O) -> Result<DMatrix<f64>> {
    let d = op.dim();
    if d > MAX_DENSE_DIM {
        return Err(Error::ContractViolation(format!("dense assembly limited to d ≤ {MAX_DENSE_DIM}, got {d}")));
    }
    let mut m = DMatrix::zeros(d, d);
    for i in 0..d {
        let mut e = ParamVector::zeros(d);
        e[i] = 1.0;
        m.set_column(i, &op.apply(&e)?);
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::curvature::MatrixOperator;

    #[test]
    fn quadratic_gradient_and_hessian() {
        let theta = ParamVector::from_vec(vec![1.0, 2.0]);
        let g = fd_gradient(|t| Ok(t.dot(t)), &theta, &FdSpec::default()).unwrap();
        assert!((g - ParamVector::from_vec(vec![2.0, 4.0])).norm() < 1e-8);
        let c = fd_gradient(|_| Ok(3.0), &theta, &FdSpec::default()).unwrap();
        assert_eq!(c.norm(), 0.0);

        let a = DMatrix::from_row_slice(3, 3, &[1.0, 2.0, 0.0, -1.0, 3.0, 0.5, 4.0, 0.0, -2.0]);
        let x = ParamVector::from_vec(vec![0.3, -0.1, 0.7]);
        let h = fd_hessian_dense(|t| Ok((t.transpose() * &a * t)[0]), &x, &FdSpec::hessian()).unwrap();
        assert!((h - (&a + a.transpose())).norm() <= 1e-6 * a.norm());
        let lin = fd_hessian_dense(|t| Ok(2.0 * t[0] - t[2]), &x, &FdSpec::hessian()).unwrap();
        assert!(lin.amax() < 1e-8);
    }

    #[test]
    fn non_finite_evaluation_names_coordinate() {
        let theta = ParamVector::from_vec(vec![0.0, 0.0]);
        let err = fd_gradient(|t| Ok(if t[1] > 0.0 { f64::NAN } else { 0.0 }), &theta, &FdSpec::default())
            .unwrap_err();
        assert!(err.to_string().contains("coordinate 1"), "{err}");
    }

    #[test]
    fn dense_assembly_of_scaled_identity() {
        let op = MatrixOperator(DMatrix::identity(4, 4) * 0.7);
        let m = dense_operator(&op).unwrap();
        assert_eq!(m, DMatrix::identity(4, 4) * 0.7);
        let big = MatrixOperator(DMatrix::identity(33, 33));
        assert!(dense_operator(&big).is_err());
    }
}
