//! Public-API round trips and quick oracle checks.

use sottac::oracle::{run_check, CheckConfig, CheckName};
use sottac::trainer::{train, Method, TrainConfig};

#[test]
fn configs_roundtrip_through_json() {
    for m in Method::ALL {
        for env in ["cartpole", "reacher"] {
            let c = TrainConfig::preset(env, m);
            let text = serde_json::to_string(&c).unwrap();
            let back: TrainConfig = serde_json::from_str(&text).unwrap();
            assert_eq!(back, c);
            back.validate().unwrap();
        }
    }
}

#[test]
fn run_records_serialize() {
    let mut c = TrainConfig::preset("cartpole", Method::Acgn1);
    c.total_episodes = 20;
    c.warmup_batches = 1;
    let r = train(&c).unwrap();
    assert_eq!(r.returns.len(), 20);
    for b in &r.batches {
        let v = serde_json::to_value(b).unwrap();
        assert!(v["report"]["grad_norm"].as_f64().unwrap().is_finite());
    }
    serde_json::to_string(&r.summary).unwrap();
}

#[test]
fn quick_oracle_checks() {
    let cfg = CheckConfig { d: 8, trials: Some(3), seed: 7 };
    for name in CheckName::ALL {
        let out = run_check(name, &cfg).unwrap();
        assert!(out.passed, "{out}");
    }
}
