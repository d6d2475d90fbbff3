use super::*;
use crate::env::CartPole;

fn tiny_config(method: Method) -> TrainConfig {
    let mut c = TrainConfig::preset("tinymdp", method);
    c.total_episodes = 200;
    c.warmup_batches = 2;
    c.critic_hidden = 0;
    c
}

#[test]
fn threshold_examples() {
    assert_eq!(episodes_to_threshold(&[500.0; 120], 450.0, 50), Some(49));
    assert_eq!(episodes_to_threshold(&[0.0; 120], 450.0, 50), None);
    let ramp: Vec<f64> = (1..=100).map(f64::from).collect();
    assert_eq!(episodes_to_threshold(&ramp, 37.0, 1), Some(36));
    assert_eq!(episodes_to_threshold(&[1.0; 3], 0.0, 5), None);
    assert_eq!(trailing_mean(&ramp, 10), Some(95.5));
    assert_eq!(trailing_mean(&[], 10), None);
}

#[test]
fn single_episode_batch() {
    let mut env = make_env("cartpole", 0.0, None).unwrap();
    let pol = SoftmaxLinearPolicy::new(4, 2);
    let (mut er, mut pr) = (stream(1, Stream::Env), stream(1, Stream::Policy));
    let batch = collect_batch(env.as_mut(), &pol, 1, &mut er, &mut pr).unwrap();
    assert_eq!(batch.len(), 1);
    let traj = &batch[0];
    assert_eq!(traj.log_probs.len(), traj.len());
    assert!(traj.log_probs.iter().all(|lp| (lp - 0.5f64.ln()).abs() < 1e-12));
    let last = traj.transitions.last().unwrap();
    assert!(last.terminal || last.truncated);
    assert!(traj.transitions[..traj.len() - 1].iter().all(|tr| !tr.terminal && !tr.truncated));
}

#[test]
fn stabilizing_controller_reaches_the_horizon() {
    let mut env = make_env("cartpole", 0.0, None).unwrap();
    // Push toward the side the pole is falling to; near-deterministic logits.
    let mut pol = SoftmaxLinearPolicy::new(4, 2);
    let gain = [0.0, 0.0, 0.0, 0.0, 10.0, 20.0, 200.0, 50.0];
    pol.set_params(ParamVector::from_column_slice(&gain)).unwrap();
    let (mut er, mut pr) = (stream(2, Stream::Env), stream(2, Stream::Policy));
    for traj in collect_batch(env.as_mut(), &pol, 5, &mut er, &mut pr).unwrap() {
        assert_eq!(traj.raw_return(0.0), CartPole::DEFAULT_HORIZON as f64);
        assert!(traj.transitions.last().unwrap().truncated);
    }
}

#[test]
fn zero_budget_leaves_policy_untouched() {
    let mut c = tiny_config(Method::Acgn2);
    c.total_episodes = 0;
    let r = train(&c).unwrap();
    assert!(r.returns.is_empty() && r.batches.is_empty());
    assert_eq!(r.initial_params, r.final_params);
    assert_eq!(r.summary.final_mean_return, None);
}

#[test]
fn runs_are_reproducible_and_consistent() {
    for method in Method::ALL {
        let mut c = tiny_config(method);
        c.total_episodes = 103;
        let a = train(&c).unwrap();
        let b = train(&c).unwrap();
        assert_eq!(a.returns, b.returns, "{method:?}");
        assert_eq!(a.final_params, b.final_params);
        assert_eq!(a.returns.len(), 103);
        assert_eq!(a.batches.len(), 21);
        assert_eq!(a.batches.last().unwrap().episodes, 3);
        assert_eq!(a.batches.iter().map(|b| b.episodes).sum::<usize>(), 103);
        assert_eq!(a.episode_rows().count(), 103);
        assert!(a.batches.iter().all(|b| b.report.wall_clock_ns > 0 && b.critic_loss.is_finite()));
        assert_ne!(a.initial_params, a.final_params);
    }
}

#[test]
fn acgn2_spectrum_respects_damping() {
    let r = train(&tiny_config(Method::Acgn2)).unwrap();
    for b in &r.batches {
        assert!(b.report.m_hat.unwrap() >= 0.1 - 1e-6);
        assert!(!b.report.screening_triggered);
        assert!(b.report.step_bound_alpha.is_some());
    }
    let r = train(&tiny_config(Method::Reinforce)).unwrap();
    assert!(r.batches.iter().all(|b| b.report.m_hat.is_none()));
}

#[test]
fn enforced_step_bound_caps_alpha() {
    let mut c = tiny_config(Method::Acgn2);
    c.alpha = 50.0;
    c.diagnostics.enforce_step_bound = true;
    let r = train(&c).unwrap();
    for b in &r.batches {
        let bound = b.report.step_bound_alpha.unwrap();
        assert!(b.alpha <= bound.min(50.0));
    }
}

#[test]
fn fixed_point_solver_trains() {
    let mut c = tiny_config(Method::Acgn2);
    c.solver = crate::optim::Solver::FixedPoint;
    c.diagnostics.spectrum = false;
    let r = train(&c).unwrap();
    assert!(r.batches.iter().all(|b| b.report.M_hat.is_some()));
}

#[test]
fn h12_diagnostic_is_recorded() {
    let mut c = TrainConfig::preset("cartpole", Method::Acgn2);
    c.total_episodes = 20;
    c.warmup_batches = 1;
    c.diagnostics.h12 = true;
    c.diagnostics.h12_every = 2;
    let r = train(&c).unwrap();
    let diags: Vec<_> = r.batches.iter().map(|b| b.h12).collect();
    assert_eq!(diags.len(), 4);
    assert!(diags[0].is_some() && diags[1].is_none() && diags[2].is_some());
    assert!(diags.iter().flatten().all(|d| d.bound.is_finite()));
}

#[test]
fn numerical_abort_keeps_completed_prefix() {
    let mut c = tiny_config(Method::Reinforce);
    c.warmup_batches = 0;
    c.critic_beta = 1e200;
    let err = train(&c).err().expect("exploding critic must abort");
    let p = &err.partial;
    assert!(matches!(err.error, Error::NonFinite { .. }));
    assert_eq!(p.returns.len(), p.batches.iter().map(|b| b.episodes).sum::<usize>());
    assert!(p.returns.len() < c.total_episodes);
}

#[test]
fn invalid_config_is_reported() {
    let mut c = tiny_config(Method::Natural);
    c.gamma = 1.5;
    assert!(matches!(train(&c).unwrap_err().error, Error::InvalidConfig(_)));
}

#[test]
fn q_mode_reacher_records_unshifted_returns() {
    let mut c = TrainConfig::preset("reacher", Method::Acgn2);
    c.total_episodes = 10;
    c.warmup_batches = 1;
    c.policy_hidden = 4;
    c.critic_hidden = 8;
    assert!(c.effective_reward_shift() > 0.0);
    let r = train(&c).unwrap();
    // Raw reacher rewards are never positive.
    assert!(r.returns.iter().all(|&x| x <= 0.0));
}

#[test]
fn matched_bench_covers_every_method() {
    let configs: Vec<TrainConfig> = Method::ALL
        .into_iter()
        .map(|m| {
            let mut c = TrainConfig::preset("cartpole", m);
            c.warmup_batches = 1;
            c
        })
        .collect();
    let rows = bench_matched(&configs, 3).unwrap();
    assert_eq!(rows.len(), 4);
    for (row, m) in rows.iter().zip(Method::ALL) {
        assert_eq!((row.method, row.updates), (m, 3));
        assert!(row.mean_step_ns > 0.0 && row.total_seconds > 0.0);
    }
    let mut mixed = configs.clone();
    mixed[1].seed = 7;
    assert!(bench_matched(&mixed, 1).is_err());
    assert!(bench_matched(&[], 1).unwrap().is_empty());
}
