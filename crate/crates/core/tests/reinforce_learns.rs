//! The plain score-function baseline should learn CartPole.

use sottac::trainer::{train, Method, TrainConfig};

#[test]
fn reinforce_improves_on_cartpole() {
    for seed in [42, 100, 2026, 777, 1234] {
        let mut c = TrainConfig::preset("cartpole", Method::Reinforce);
        c.seed = seed;
        let r = train(&c).unwrap();
        let early = r.returns[..50].iter().sum::<f64>() / 50.0;
        let late = r.summary.final_mean_return.unwrap();
        assert!(late > early && late > 40.0, "seed {seed}: {early} → {late}");
    }
}
