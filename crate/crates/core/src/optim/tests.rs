use nalgebra::DMatrix;
use rand::Rng as _;

use super::*;
use crate::curvature::{estimate_spectrum, CurvatureBatch, MatrixOperator, Weighting};
use crate::env::{Environment, TinyMdp, TinyMdpEnv};
use crate::oracle::{exact_curvature_batch, fd_gradient, FdSpec};
use crate::policy::{Policy, SoftmaxLinearPolicy, StateAction};
use crate::rng::{stream, Rng, Stream};

fn newton(kind: CurvatureKind, damping: f64, solver: Solver, screening: bool) -> UpdateRule {
    UpdateRule::Newton {
        kind,
        alpha: 1.0,
        damping,
        cg_iters: 50,
        cg_tol: 1e-12,
        screening,
        solver,
    }
}

fn random_spd(rng: &mut Rng, d: usize, shift: f64) -> DMatrix<f64> {
    let a = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
    &a * a.transpose() + DMatrix::identity(d, d) * shift
}

fn random_vector(rng: &mut Rng, d: usize) -> ParamVector {
    ParamVector::from_fn(d, |_, _| rng.random_range(-1.0..1.0))
}

#[test]
fn scaled_identity_solve() {
    let g = ParamVector::from_vec(vec![1.0, -2.0, 0.5]);
    let op = MatrixOperator(DMatrix::identity(3, 3) * 0.25);
    let (d, report) = solve_direction(&newton(CurvatureKind::Acgn2, 0.25, Solver::Cg, true), &op, &g, None).unwrap();
    assert!((d - &g * 4.0).amax() < 1e-10);
    assert!(report.cg_converged && !report.screening_triggered);
    assert_eq!(report.cg_iterations, 1);
}

#[test]
fn cg_matches_dense_solve() {
    let mut rng = stream(1, Stream::Diagnostics);
    for d in [2, 7, 20] {
        let a = random_spd(&mut rng, d, 0.5);
        let g = random_vector(&mut rng, d);
        let reference = a.clone().lu().solve(&g).unwrap();
        let out = conjugate_gradient(&MatrixOperator(a.clone()), &g, 200, 1e-12).unwrap();
        assert!(!out.negative_curvature);
        assert!((&out.x - &reference).norm() <= 1e-6 * reference.norm(), "d={d}");
        let xpx = out.x.dot(&(&a * &out.x));
        assert!((out.x_curvature - xpx).abs() <= 1e-8 * xpx);
    }
}

#[test]
fn cg_zero_rhs_and_iteration_cap() {
    let op = MatrixOperator(DMatrix::identity(4, 4));
    let out = conjugate_gradient(&op, &ParamVector::zeros(4), 10, 1e-8).unwrap();
    assert_eq!((out.iterations, out.x.norm()), (0, 0.0));
    let mut rng = stream(2, Stream::Diagnostics);
    let a = random_spd(&mut rng, 10, 0.01);
    let out = conjugate_gradient(&MatrixOperator(a), &random_vector(&mut rng, 10), 2, 1e-14).unwrap();
    assert_eq!(out.iterations, 2);
}

#[test]
fn isotropic_fisher_gives_parallel_direction() {
    let rule = UpdateRule::Natural { alpha: 0.1, damping: 1e-3, cg_iters: 10, cg_tol: 1e-10 };
    let g = ParamVector::from_vec(vec![0.3, -0.1, 2.0, 1.0]);
    let op = MatrixOperator(DMatrix::identity(4, 4) * 3.0);
    let (d, _) = solve_direction(&rule, &op, &g, None).unwrap();
    let cos = d.dot(&g) / (d.norm() * g.norm());
    assert!((cos - 1.0).abs() < 1e-12);
}

#[test]
fn screening_falls_back_on_indefinite_system() {
    let op = MatrixOperator(DMatrix::from_diagonal(&ParamVector::from_vec(vec![1.0, -2.0, 0.5])));
    let g = ParamVector::from_vec(vec![1.0, 1.0, 1.0]);
    let (d, report) = solve_direction(&newton(CurvatureKind::Acgn1, 0.1, Solver::Cg, true), &op, &g, None).unwrap();
    assert!(report.screening_triggered && report.fallback_used);
    assert_eq!(d, g);
    let (d, report) = solve_direction(&newton(CurvatureKind::Acgn1, 0.1, Solver::Cg, false), &op, &g, None).unwrap();
    assert!(!report.screening_triggered && report.fallback_used);
    assert!(d.iter().all(|x| x.is_finite()));
}

#[test]
fn fixed_point_solver_converges_and_needs_spectrum() {
    let mut rng = stream(3, Stream::Diagnostics);
    let a = random_spd(&mut rng, 6, 1.0);
    let g = random_vector(&mut rng, 6);
    let op = MatrixOperator(a.clone());
    let rule = UpdateRule::Newton {
        kind: CurvatureKind::Acgn2,
        alpha: 1.0,
        damping: 0.1,
        cg_iters: 2000,
        cg_tol: 1e-8,
        screening: true,
        solver: Solver::FixedPoint,
    };
    assert!(solve_direction(&rule, &op, &g, None).is_err());
    let spectrum = estimate_spectrum(&op, 1, 10, &mut rng).unwrap();
    let (d, report) = solve_direction(&rule, &op, &g, Some(&spectrum)).unwrap();
    let reference = a.lu().solve(&g).unwrap();
    assert!((d - &reference).norm() <= 1e-6 * reference.norm());
    assert!(report.cg_converged);
    assert_eq!(report.m_hat, Some(spectrum.m_hat));
}

#[test]
fn step_size_bound_cases() {
    let s = |m: f64, big_m: f64| SpectrumEstimate { m_hat: m, M_hat: big_m, iterations: 1, converged: true };
    assert_eq!(step_size_bound(&s(1.0, 2.0), 4.0), 2.0 / 7.0);
    assert_eq!(step_size_bound(&s(1.0, 1.0), 1.0), f64::INFINITY);
    // LM ≫ m²: the bound approaches 2m²/(LM).
    let b = step_size_bound(&s(0.1, 10.0), 100.0);
    assert!((b / 2e-5 - 1.0).abs() < 1e-4);
}

#[test]
fn zero_step_leaves_parameters() {
    let mut pol = SoftmaxLinearPolicy::new(2, 3);
    pol.set_params(ParamVector::from_vec(vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6])).unwrap();
    let before = pol.params().clone();
    apply_update(&mut pol, &ParamVector::from_element(6, 7.0), 0.0).unwrap();
    assert_eq!(pol.params(), &before);
    assert!(apply_update(&mut pol, &ParamVector::zeros(5), 1.0).is_err());
    assert!(apply_update(&mut pol, &ParamVector::from_element(6, f64::INFINITY), 1.0).is_err());
    assert_eq!(pol.params(), &before);
}

#[test]
fn newton_step_solves_concave_quadratic() {
    // J(θ) = -½θᵀAθ + bᵀθ; ascent operator P = A with zero damping.
    let mut rng = stream(4, Stream::Diagnostics);
    let a = random_spd(&mut rng, 5, 0.5);
    let b = random_vector(&mut rng, 5);
    let theta = random_vector(&mut rng, 5);
    let g = &b - &a * &theta;
    let (d, _) = solve_direction(&newton(CurvatureKind::Acgn2, 0.0, Solver::Cg, true), &MatrixOperator(a.clone()), &g, None).unwrap();
    let optimum = a.clone().lu().solve(&b).unwrap();
    assert!((&theta + d - &optimum).norm() < 1e-8);

    // A small vanilla step increases J.
    let j = |x: &ParamVector| -0.5 * x.dot(&(&a * x)) + b.dot(x);
    let (d, _) = solve_direction(&UpdateRule::Vanilla { alpha: 1e-2 }, &MatrixOperator(a.clone()), &g, None).unwrap();
    assert!(j(&(&theta + d * 1e-2)) > j(&theta));
}

#[test]
fn solves_are_deterministic() {
    let mut rng = stream(5, Stream::Diagnostics);
    let a = random_spd(&mut rng, 8, 0.2);
    let g = random_vector(&mut rng, 8);
    let rule = newton(CurvatureKind::Acgn1, 0.1, Solver::Cg, true);
    let op = MatrixOperator(a);
    let (d1, r1) = solve_direction(&rule, &op, &g, None).unwrap();
    let (d2, r2) = solve_direction(&rule, &op, &g, None).unwrap();
    assert_eq!(d1, d2);
    assert_eq!(r1.cg_iterations, r2.cg_iterations);
}

#[test]
fn rule_validation_and_serde() {
    assert!(UpdateRule::Vanilla { alpha: 0.0 }.validate().is_err());
    assert!(UpdateRule::Natural { alpha: 0.1, damping: -1.0, cg_iters: 5, cg_tol: 1e-6 }.validate().is_err());
    let rule = newton(CurvatureKind::Acgn2, 0.1, Solver::FixedPoint, true);
    rule.validate().unwrap();
    let text = serde_json::to_string(&rule).unwrap();
    assert!(text.contains("\"rule\":\"newton\""));
    assert_eq!(serde_json::from_str::<UpdateRule>(&text).unwrap(), rule);
}

#[test]
fn exact_gradient_matches_finite_differences() {
    let mut rng = stream(6, Stream::Diagnostics);
    let mdp = TinyMdp::random(&mut rng, 3, 4, 0.9);
    let mut pol = mdp.softmax_policy();
    pol.set_params(random_vector(&mut rng, pol.dim())).unwrap();
    let batch = exact_curvature_batch(&mdp, &pol).unwrap();
    let g = policy_gradient(&batch, &pol, &batch.weights(Weighting::Q)).unwrap();
    let fd = fd_gradient(
        |th| Ok(crate::env::enumerate_exact_J(&mdp, &pol, th)),
        pol.params(),
        &FdSpec::default(),
    )
    .unwrap();
    assert!((&g - &fd).norm() <= 1e-6 * fd.norm());
    // Advantage weighting gives the same gradient in expectation.
    let ga = policy_gradient(&batch, &pol, &batch.weights(Weighting::Advantage)).unwrap();
    assert!((&ga - &g).norm() <= 1e-10 * g.norm());
}

#[test]
fn sampled_gradient_is_consistent() {
    let mdp = TinyMdp::benchmark();
    let gamma = mdp.gamma;
    let mut pol = mdp.softmax_policy();
    pol.set_params(ParamVector::from_vec(vec![0.3, -0.2, -0.1, 0.4])).unwrap();
    let exact_batch = exact_curvature_batch(&mdp, &pol).unwrap();
    let exact = policy_gradient(&exact_batch, &pol, &exact_batch.weights(Weighting::Q)).unwrap();

    let mut env = TinyMdpEnv::new(mdp).unwrap();
    let (mut env_rng, mut pol_rng) = (stream(7, Stream::Env), stream(7, Stream::Policy));
    let episodes = 40_000;
    let (mut samples, mut mass, mut returns) = (Vec::new(), Vec::new(), Vec::new());
    for _ in 0..episodes {
        let mut state = env.reset(&mut env_rng);
        let mut rewards = Vec::new();
        let start = samples.len();
        loop {
            let action = pol.sample_action(&state, &mut pol_rng).unwrap();
            let tr = env.step(&action, &mut env_rng).unwrap();
            samples.push(StateAction { state: state.clone(), action });
            mass.push(gamma.powi(tr.t as i32) / episodes as f64);
            rewards.push(tr.reward);
            state = tr.next_state.clone();
            if tr.terminal || tr.truncated {
                break;
            }
        }
        let mut acc = 0.0;
        let mut to_go = vec![0.0; rewards.len()];
        for t in (0..rewards.len()).rev() {
            acc = rewards[t] + gamma * acc;
            to_go[t] = acc;
        }
        returns.extend(to_go);
        assert_eq!(returns.len(), samples.len(), "episode starting at {start}");
    }
    let n = samples.len();
    let batch = CurvatureBatch::with_mass(samples, mass, returns.clone(), vec![0.0; n]).unwrap();
    let sampled = policy_gradient(&batch, &pol, &returns).unwrap();
    assert!((&sampled - &exact).norm() <= 0.05 * exact.norm(), "{sampled} vs {exact}");
}
