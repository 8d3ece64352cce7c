use std::sync::Arc;

use gmpp_core::datagen::{generate_stream, make_schedule, GeneratorPool, SignalLaw};
use gmpp_core::evaluation::{comparison_loss, mixloss_bound_current, mixloss_bound_past, RegretLedger};
use gmpp_core::math::{relative_entropy, Distribution};
use gmpp_core::weights::{DecayingPast, MixingRule, UniformPast};
use gmpp_core::{run, EngineConfig, MixingScheme, PosteriorHistory, WeightState};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Triple {
    weights: WeightState,
    posterior: WeightState,
    history: PosteriorHistory,
    beta: Vec<f64>,
    losses: Vec<f64>,
    predictor_loss: f64,
    eta: f64,
    q: Distribution,
}

fn random_losses(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(0.0..4.0)).collect()
}

fn triple(seed: u64, rule: Arc<dyn MixingRule>) -> Triple {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let eta = rng.random_range(0.05..2.0);
    let scheme = MixingScheme::General(rule.clone());
    let mut weights = WeightState::default();
    let mut history = PosteriorHistory::new(weights.clone());
    let rounds = rng.random_range(1..8usize);
    for t in 1..rounds {
        weights.materialize_expert(t).unwrap();
        let losses = random_losses(&mut rng, t);
        weights.loss_update(&losses, rng.random_range(0.0..4.0), eta).unwrap();
        history.push(weights.clone());
        weights.mixing_update(&scheme, t, Some(&history)).unwrap();
    }
    weights.materialize_expert(rounds).unwrap();
    let losses = random_losses(&mut rng, rounds);
    let predictor_loss = rng.random_range(0.0..4.0);
    let mut posterior = weights.clone();
    posterior.loss_update(&losses, predictor_loss, eta).unwrap();

    let size = rng.random_range(1..5usize);
    let mut ids: Vec<usize> = (1..=rounds + 6).collect();
    let mut support = Vec::new();
    for _ in 0..size {
        let i = ids.swap_remove(rng.random_range(0..ids.len()));
        support.push((i, rng.random_range(0.01..1.0)));
    }
    let total: f64 = support.iter().map(|s| s.1).sum();
    let q = Distribution::finite(support.into_iter().map(|(i, m)| (i, m / total)).collect()).unwrap();
    Triple {
        weights,
        posterior,
        history,
        beta: rule.coefficients(rounds - 1),
        losses,
        predictor_loss,
        eta,
        q,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn mixloss_against_current_weights(seed in any::<u64>()) {
        let tr = triple(seed, Arc::new(UniformPast));
        let check = mixloss_bound_current(&tr.q, &tr.weights, &tr.posterior, &tr.losses, tr.predictor_loss, tr.eta).unwrap();
        prop_assert!(check.holds(1e-10), "{:?}", check);
        // the first inequality is an identity
        prop_assert!(check.slack().abs() < 1e-9, "{:?}", check);
    }

    #[test]
    fn mixloss_against_past_posteriors(seed in any::<u64>()) {
        let tr = triple(seed, Arc::new(DecayingPast { alpha: 0.3 }));
        for (s, &b) in tr.beta.iter().enumerate().filter(|(_, b)| **b > 0.0) {
            let past = tr.history.get(s).unwrap();
            let check = mixloss_bound_past(&tr.q, &tr.weights, past, b, &tr.posterior, &tr.losses, tr.predictor_loss, tr.eta).unwrap();
            prop_assert!(check.holds(1e-10), "s = {}: {:?}", s, check);
        }
    }
}

#[test]
fn comparison_loss_charges_the_tail_predictor_loss() {
    let q = Distribution::finite(vec![(1, 0.25), (7, 0.75)]).unwrap();
    assert!((comparison_loss(&q, &[0.4, 1.0], 2.0) - (0.1 + 1.5)).abs() < 1e-15);
}

#[test]
fn past_bound_rejects_zero_coefficient() {
    let tr = triple(5, Arc::new(UniformPast));
    let past = tr.history.get(0).unwrap();
    assert!(mixloss_bound_past(&tr.q, &tr.weights, past, 0.0, &tr.posterior, &tr.losses, tr.predictor_loss, tr.eta).is_err());
}

#[test]
fn exponential_scheme_cumulative_bound() {
    // M_T <= sum_t (q . l_t) + D(q || w_1)/eta for a fixed q
    let pool = GeneratorPool::random(4, 3, 0.5, SignalLaw::Uniform, 8).unwrap();
    let sched = make_schedule(200, 10, 4, 8).unwrap();
    let stream = generate_stream(&pool, &sched, 8).unwrap();
    let mut config = EngineConfig::new(pool.default_range().unwrap(), 3, 20, 0.01);
    config.scheme = MixingScheme::Exponential;
    let records = run(config.clone(), &stream).unwrap();
    let ledger = RegretLedger::from_records(&records);
    let prior = WeightState::default();
    for support in [vec![(3, 1.0)], vec![(1, 0.5), (40, 0.25), (150, 0.25)], vec![(10, 0.3), (500, 0.7)]] {
        let q = Distribution::finite(support).unwrap();
        let total: f64 = records.iter().map(|r| comparison_loss(&q, &r.expert_losses, r.predictor_loss)).sum();
        let d = relative_entropy(&q, &prior.to_distribution().unwrap(), prior.prior()).finite().unwrap();
        assert!(ledger.mixloss_total() <= total + d / config.eta + 1e-8);
    }
}
