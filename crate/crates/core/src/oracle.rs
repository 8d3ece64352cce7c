//! Brute-force reference for the aggregation engine.
//!
//! Holds experts `1..=N` explicitly in linear space, plus one lumped bucket
//! for every id above `N`, and finds each forecast by bisection on the
//! fixed-point condition over that whole universe. It shares nothing with
//! the engine's weight machinery, so agreement between the two checks the
//! analytic tail and the reduction of the fixed point to a finite
//! substitution.

use crate::engine::EngineConfig;
use crate::error::{Error, Result};
use crate::experts::{ExpertModel, Observation};
use crate::loss::OutcomeRange;
use crate::math::{Prior, PriorWeights};
use crate::weights::MixingScheme;

/// `gamma` solving `gamma = subst(f_1..f_n, gamma, ...; w)` where every
/// expert past the first `forecasts.len()` forecasts `gamma` itself.
///
/// `weights` are the explicit weights of the initialized experts and
/// `virtual_mass` the total weight of all others.
pub fn fixed_point_forecast(
    forecasts: &[f64],
    weights: &[f64],
    virtual_mass: f64,
    eta: f64,
    range: &OutcomeRange,
) -> f64 {
    let (a, b) = (range.lower(), range.upper());
    let substituted = |gamma: f64| {
        let mut upper = virtual_mass * (-eta * (b - gamma).powi(2)).exp();
        let mut lower = virtual_mass * (-eta * (a - gamma).powi(2)).exp();
        for (&f, &w) in forecasts.iter().zip(weights) {
            upper += w * (-eta * (b - f).powi(2)).exp();
            lower += w * (-eta * (a - f).powi(2)).exp();
        }
        range.midpoint() + (upper / lower).ln() / (2.0 * eta * range.width())
    };
    let (mut lo, mut hi) = (a, b);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if substituted(mid) >= mid {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// One round of the brute-force run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BruteStep {
    pub gamma: f64,
    pub predictor_loss: f64,
    pub mixloss: f64,
}

/// Eager finite-universe implementation of the aggregation loop.
#[derive(Debug, Clone)]
pub struct BruteForceEngine {
    config: EngineConfig,
    weights: Vec<f64>,
    remainder: f64,
    prior: Vec<f64>,
    prior_remainder: f64,
    experts: Vec<ExpertModel>,
    history: Vec<Observation>,
    rounds: usize,
}

impl BruteForceEngine {
    /// `universe` explicit experts; only the share schemes are supported.
    pub fn new(config: EngineConfig, universe: usize) -> Result<Self> {
        config.validate()?;
        if matches!(config.scheme, MixingScheme::General(_)) {
            return Err(Error::Config("the brute-force reference supports share schemes only".into()));
        }
        let p = PriorWeights::new();
        let prior: Vec<f64> = (1..=universe).map(|i| p.mass(i)).collect();
        let prior_remainder = p.tail_mass(universe);
        Ok(Self {
            config,
            weights: prior.clone(),
            remainder: prior_remainder,
            prior,
            prior_remainder,
            experts: Vec::new(),
            history: Vec::new(),
            rounds: 0,
        })
    }

    pub fn universe(&self) -> usize {
        self.weights.len()
    }

    /// Weight of explicit expert `i`.
    pub fn weight(&self, i: usize) -> f64 {
        self.weights[i - 1]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Weight of all ids beyond the explicit universe.
    pub fn remainder(&self) -> f64 {
        self.remainder
    }

    pub fn step(&mut self, obs: &Observation) -> Result<BruteStep> {
        let t = self.rounds + 1;
        let capped = self.config.max_experts.is_some_and(|cap| self.experts.len() >= cap);
        if !capped {
            if self.experts.len() >= self.universe() {
                return Err(Error::Contract("brute-force universe exhausted".into()));
            }
            let model = self.config.experts.init_expert(&self.history, t, self.config.dim)?;
            self.experts.push(model);
        }
        let n = self.experts.len();
        let range = self.config.range;
        let eta = self.config.eta;

        let forecasts = self
            .experts
            .iter()
            .map(|e| e.predict(&obs.x).map(|f| range.clamp(f)))
            .collect::<Result<Vec<f64>>>()?;
        let virtual_mass: f64 = self.weights[n..].iter().sum::<f64>() + self.remainder;
        let gamma = fixed_point_forecast(&forecasts, &self.weights[..n], virtual_mass, eta, &range);

        let y = range.clamp(obs.y);
        let h = (gamma - y).powi(2);
        let losses: Vec<f64> = forecasts.iter().map(|f| (f - y).powi(2)).collect();

        let mut z = 0.0;
        for (i, w) in self.weights.iter_mut().enumerate() {
            let l = losses.get(i).copied().unwrap_or(h);
            *w *= (-eta * l).exp();
            z += *w;
        }
        self.remainder *= (-eta * h).exp();
        z += self.remainder;
        let mixloss = -z.ln() / eta;
        for w in &mut self.weights {
            *w /= z;
        }
        self.remainder /= z;

        let alpha = self.config.scheme.alpha(t).unwrap_or(0.0);
        for (w, p) in self.weights.iter_mut().zip(&self.prior) {
            *w = alpha * p + (1.0 - alpha) * *w;
        }
        self.remainder = alpha * self.prior_remainder + (1.0 - alpha) * self.remainder;

        self.history.push(Observation::new(obs.x.clone(), y));
        self.rounds = t;
        Ok(BruteStep {
            gamma,
            predictor_loss: h,
            mixloss,
        })
    }
}
