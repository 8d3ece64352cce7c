use gmpp_core::datagen::{generate_stream, GeneratorPool, SegmentSchedule, SignalLaw};
use gmpp_core::evaluation::RegretLedger;
use gmpp_core::{run, EngineConfig};

fn predictor_losses(seed: u64, horizon: usize, window: usize) -> Vec<f64> {
    let pool = GeneratorPool::random(1, 3, 0.0, SignalLaw::Uniform, seed).unwrap();
    let sched = SegmentSchedule::equal_split(horizon, 1).unwrap();
    let stream = generate_stream(&pool, &sched, seed).unwrap();
    let config = EngineConfig::new(pool.default_range().unwrap(), 3, window, 0.01);
    let records = run(config, &stream).unwrap();
    RegretLedger::from_records(&records).predictor_losses().to_vec()
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

#[test]
fn noiseless_single_generator_is_learned() {
    for seed in 1..=3 {
        let h = predictor_losses(seed, 1000, 20);
        let late = mean(&h[800..]);
        assert!(late <= 1e-3, "seed {seed}: {late}");
        assert!(late < mean(&h[59..200]) / 10.0);
    }
}

#[test]
fn transient_cost_does_not_grow_with_the_horizon() {
    // the loss after the window is learned is a fixed transient
    let short: f64 = predictor_losses(1, 1000, 20)[59..].iter().sum();
    let long: f64 = predictor_losses(1, 3000, 20)[59..].iter().sum();
    assert!(long < 1.1 * short, "{short} vs {long}");
}
