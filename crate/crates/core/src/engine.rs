//! The online aggregation loop.
//!
//! Each round `t` initializes a new expert from the last `h` observations,
//! forecasts with the substitution rule over the initialized experts, and
//! after the outcome arrives applies the loss and mixing updates.
//!
//! Uninitialized experts are defined to forecast whatever the aggregate
//! forecasts, which makes the forecast a fixed point over the whole infinite
//! expert set. Substituting over the initialized experts alone, with their
//! weights renormalized, solves that fixed point exactly: the tail adds the
//! same factor on both sides of the mixability condition. No iteration is
//! needed, and `crate::oracle` checks the equivalence against an explicit
//! fixed-point solve.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::experts::{ExpertFactory, ExpertModel, Observation};
use crate::loss::{substitute, OutcomeRange};
use crate::weights::{MixingScheme, PosteriorHistory, WeightState};

/// Slack allowed in `h_t <= m_t`.
pub const DOMINATION_TOLERANCE: f64 = 1e-10;
/// Slack allowed in the total weight mass.
pub const MASS_TOLERANCE: f64 = 1e-12;
/// Number of heaviest experts kept in each step record.
pub const TOP_K: usize = 3;

#[derive(Debug, Clone)]
pub struct EngineConfig {
    pub range: OutcomeRange,
    pub eta: f64,
    pub experts: ExpertFactory,
    pub scheme: MixingScheme,
    /// Stop creating experts once this many exist.
    pub max_experts: Option<usize>,
    /// Signal dimension.
    pub dim: usize,
}

impl EngineConfig {
    /// Defaults: `eta = 2/(b-a)^2`, the `1/(t+1)` share scheme, no cap.
    pub fn new(range: OutcomeRange, dim: usize, window: usize, sigma: f64) -> Self {
        Self {
            range,
            eta: range.max_eta(),
            experts: ExpertFactory::new(window, sigma),
            scheme: MixingScheme::Gmpp,
            max_experts: None,
            dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.range.check_eta(self.eta)?;
        self.experts.validate()?;
        self.scheme.validate()?;
        if self.dim == 0 {
            return Err(Error::Config("signal dimension must be at least 1".into()));
        }
        if self.max_experts == Some(0) {
            return Err(Error::Config("max_experts must be at least 1".into()));
        }
        Ok(())
    }
}

/// Everything that happened in one round.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepRecord {
    pub t: usize,
    pub x: Vec<f64>,
    pub gamma: f64,
    /// Outcome after clamping to the range.
    pub y: f64,
    pub clamped: bool,
    /// `h_t`.
    pub predictor_loss: f64,
    /// `m_t`.
    pub mixloss: f64,
    /// `l_{i,t}` for the initialized experts `1..=n`.
    pub expert_losses: Vec<f64>,
    /// Heaviest experts after the round's updates.
    pub top_weights: Vec<(usize, f64)>,
    /// Weight of all uninitialized experts after the round's updates.
    pub tail_mass: f64,
    /// `|sum_i w_i - 1|` after the round's updates.
    pub mass_error: f64,
}

impl StepRecord {
    pub fn num_experts(&self) -> usize {
        self.expert_losses.len()
    }

    /// `l_{i,t}`, which is `h_t` for an expert not yet initialized.
    pub fn loss_of(&self, i: usize) -> f64 {
        self.expert_losses.get(i.wrapping_sub(1)).copied().unwrap_or(self.predictor_loss)
    }

    pub fn dominated(&self) -> bool {
        self.predictor_loss <= self.mixloss + DOMINATION_TOLERANCE
    }

    pub fn mass_ok(&self) -> bool {
        self.mass_error <= MASS_TOLERANCE
    }
}

#[derive(Debug, Clone)]
struct Pending {
    x: Vec<f64>,
    forecasts: Vec<f64>,
    gamma: f64,
}

/// One aggregation run; `predict` and `observe` must alternate.
#[derive(Debug, Clone)]
pub struct Engine {
    config: EngineConfig,
    weights: WeightState,
    experts: Vec<ExpertModel>,
    history: Vec<Observation>,
    posteriors: Option<PosteriorHistory>,
    last_posterior: Option<WeightState>,
    pending: Option<Pending>,
    rounds: usize,
    clamp_count: usize,
}

impl Engine {
    pub fn new(config: EngineConfig) -> Result<Self> {
        Self::with_weights(config, WeightState::default())
    }

    /// Starts from an arbitrary prior representation.
    pub fn with_weights(config: EngineConfig, weights: WeightState) -> Result<Self> {
        config.validate()?;
        if weights.num_initialized() != 0 {
            return Err(Error::Contract("initial weights must not have initialized experts".into()));
        }
        let posteriors = config.scheme.needs_history().then(|| PosteriorHistory::new(weights.clone()));
        Ok(Self {
            config,
            weights,
            experts: Vec::new(),
            history: Vec::new(),
            posteriors,
            last_posterior: None,
            pending: None,
            rounds: 0,
            clamp_count: 0,
        })
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    /// `w_{t+1}` once round `t` has been observed.
    pub fn weights(&self) -> &WeightState {
        &self.weights
    }

    /// `w~_t`, the weights right after the last loss update.
    pub fn last_posterior(&self) -> Option<&WeightState> {
        self.last_posterior.as_ref()
    }

    pub fn experts(&self) -> &[ExpertModel] {
        &self.experts
    }

    /// Completed rounds.
    pub fn rounds(&self) -> usize {
        self.rounds
    }

    pub fn clamp_count(&self) -> usize {
        self.clamp_count
    }

    /// Clamped expert forecasts of the pending round.
    pub fn pending_forecasts(&self) -> Option<&[f64]> {
        self.pending.as_ref().map(|p| p.forecasts.as_slice())
    }

    #[doc(hidden)]
    pub fn weights_mut(&mut self) -> &mut WeightState {
        &mut self.weights
    }

    /// Starts round `t = rounds + 1`: initializes expert `t` and returns `gamma_t`.
    pub fn predict(&mut self, x: &[f64]) -> Result<f64> {
        if self.pending.is_some() {
            return Err(Error::Protocol("predict called twice without observe".into()));
        }
        if x.len() != self.config.dim {
            return Err(Error::Dimension {
                what: "signal",
                got: x.len(),
                expected: self.config.dim,
            });
        }
        let t = self.rounds + 1;
        let capped = self.config.max_experts.is_some_and(|cap| self.experts.len() >= cap);
        if !capped {
            let model = self.config.experts.init_expert(&self.history, t, self.config.dim)?;
            self.weights.materialize_expert(self.experts.len() + 1)?;
            self.experts.push(model);
        }

        let range = self.config.range;
        let forecasts = self
            .experts
            .iter()
            .map(|e| e.predict(x).map(|f| range.clamp(f)))
            .collect::<Result<Vec<f64>>>()?;
        let auxiliary = self.weights.normalized_initialized()?;
        let gamma = substitute(&forecasts, &auxiliary, None, self.config.eta, &range)?;

        self.pending = Some(Pending {
            x: x.to_vec(),
            forecasts,
            gamma,
        });
        Ok(gamma)
    }

    /// Finishes the round with outcome `y`.
    pub fn observe(&mut self, y: f64) -> Result<StepRecord> {
        let pending = self
            .pending
            .take()
            .ok_or_else(|| Error::Protocol("observe called before predict".into()))?;
        if !y.is_finite() {
            return Err(Error::Domain(format!("outcome {y} is not finite")));
        }
        let t = self.rounds + 1;
        let range = self.config.range;
        let eta = self.config.eta;
        let clamped_y = range.clamp(y);
        let clamped = clamped_y != y;
        if clamped {
            self.clamp_count += 1;
        }

        let predictor_loss = (pending.gamma - clamped_y).powi(2);
        let expert_losses: Vec<f64> = pending.forecasts.iter().map(|f| (f - clamped_y).powi(2)).collect();

        let mixloss = self.weights.loss_update(&expert_losses, predictor_loss, eta)?;
        self.last_posterior = Some(self.weights.clone());
        if let Some(posteriors) = self.posteriors.as_mut() {
            posteriors.push(self.weights.clone());
        }
        self.weights.mixing_update(&self.config.scheme, t, self.posteriors.as_ref())?;

        self.history.push(Observation::new(pending.x.clone(), clamped_y));
        self.rounds = t;

        Ok(StepRecord {
            t,
            x: pending.x,
            gamma: pending.gamma,
            y: clamped_y,
            clamped,
            predictor_loss,
            mixloss,
            expert_losses,
            top_weights: self.weights.top_weights(TOP_K),
            tail_mass: self.weights.tail_mass(),
            mass_error: (self.weights.total_mass() - 1.0).abs(),
        })
    }

    pub fn step(&mut self, obs: &Observation) -> Result<StepRecord> {
        self.predict(&obs.x)?;
        self.observe(obs.y)
    }
}

/// Runs the whole stream.
pub fn run(config: EngineConfig, stream: &[Observation]) -> Result<Vec<StepRecord>> {
    if stream.is_empty() {
        return Err(Error::Contract("the stream is empty".into()));
    }
    let mut engine = Engine::new(config)?;
    stream.iter().map(|o| engine.step(o)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{generate_stream, make_schedule, GeneratorPool, SignalLaw};
    use crate::math::{log_mix, Distribution, Prior, PriorWeights};

    fn unit_config(dim: usize) -> EngineConfig {
        EngineConfig::new(OutcomeRange::new(0.0, 1.0).unwrap(), dim, 3, 0.1)
    }

    #[test]
    fn first_forecast_is_the_fallback() {
        let mut e = Engine::new(unit_config(2)).unwrap();
        let gamma = e.predict(&[0.3, 0.4]).unwrap();
        assert_eq!(gamma, 0.0);
    }

    #[test]
    fn identical_experts_are_reproduced() {
        let mut config = unit_config(1);
        config.experts.window = 10;
        let mut e = Engine::new(config).unwrap();
        for _ in 0..3 {
            e.predict(&[1.0]).unwrap();
            e.observe(0.4).unwrap();
        }
        // every fallback expert outputs 0
        assert_eq!(e.predict(&[0.7]).unwrap(), 0.0);
    }

    #[test]
    fn exact_outcome_costs_nothing() {
        let mut e = Engine::new(unit_config(1)).unwrap();
        let g = e.predict(&[0.5]).unwrap();
        let r = e.observe(g).unwrap();
        assert_eq!(r.predictor_loss, 0.0);
        assert_eq!(r.loss_of(5), 0.0);
    }

    #[test]
    fn single_expert_mixloss() {
        let mut config = unit_config(1);
        config.scheme = MixingScheme::Exponential;
        let mut e = Engine::new(config.clone()).unwrap();
        e.predict(&[0.2]).unwrap();
        let r = e.observe(0.9).unwrap();
        let w1 = PriorWeights::new().mass(1);
        let p = PriorWeights::new();
        let dist = Distribution::with_tail(vec![(1, w1)], 1.0, &p).unwrap();
        let direct = log_mix(&dist, &[r.expert_losses[0]], r.predictor_loss, config.eta).unwrap();
        assert!((r.mixloss - direct).abs() < 1e-14);
        assert!(r.dominated());
    }

    #[test]
    fn protocol_is_enforced() {
        let mut e = Engine::new(unit_config(1)).unwrap();
        assert!(matches!(e.observe(0.1), Err(Error::Protocol(_))));
        e.predict(&[0.1]).unwrap();
        assert!(matches!(e.predict(&[0.1]), Err(Error::Protocol(_))));
        e.observe(0.2).unwrap();
        assert!(matches!(e.predict(&[0.1, 0.2]), Err(Error::Dimension { .. })));
    }

    #[test]
    fn config_is_validated() {
        let mut c = unit_config(1);
        c.eta = 2.5;
        assert!(matches!(Engine::new(c), Err(Error::Config(_))));
        let mut c = unit_config(1);
        c.max_experts = Some(0);
        assert!(Engine::new(c).is_err());
    }

    #[test]
    fn outcomes_are_clamped() {
        let mut e = Engine::new(unit_config(1)).unwrap();
        e.predict(&[0.1]).unwrap();
        let r = e.observe(3.0).unwrap();
        assert!(r.clamped);
        assert_eq!(r.y, 1.0);
        assert_eq!(e.clamp_count(), 1);
    }

    fn synthetic(seed: u64, horizon: usize, noise: f64) -> (EngineConfig, Vec<Observation>) {
        let pool = GeneratorPool::random(4, 3, noise, SignalLaw::Uniform, seed).unwrap();
        let sched = make_schedule(horizon, 10, 4, seed).unwrap();
        let stream = generate_stream(&pool, &sched, seed).unwrap();
        (EngineConfig::new(pool.default_range().unwrap(), 3, 10, 0.01), stream)
    }

    #[test]
    fn length_one_stream() {
        let (c, s) = synthetic(1, 50, 0.1);
        assert_eq!(run(c, &s[..1]).unwrap().len(), 1);
    }

    #[test]
    fn runs_are_deterministic_and_dominated() {
        let (c, s) = synthetic(3, 300, 0.1);
        let a = run(c.clone(), &s).unwrap();
        let b = run(c, &s).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|r| r.dominated() && r.mass_ok()));
    }

    #[test]
    fn expert_cap_keeps_aggregating() {
        let (mut c, s) = synthetic(4, 200, 0.1);
        c.max_experts = Some(25);
        let records = run(c, &s).unwrap();
        assert_eq!(records.last().unwrap().num_experts(), 25);
        assert!(records.last().unwrap().tail_mass > 0.0);
        assert!(records.iter().all(|r| r.dominated()));
    }

    #[test]
    fn general_scheme_runs() {
        let (mut c, s) = synthetic(5, 60, 0.1);
        c.scheme = MixingScheme::General(std::sync::Arc::new(crate::weights::UniformPast));
        let records = run(c, &s).unwrap();
        assert!(records.iter().all(|r| r.dominated() && r.mass_ok()));
    }
}
