//! Two-stage weight updates over a growing, countably infinite expert set.
//!
//! Experts `1..=n` that have been initialized carry explicit weights. Every
//! other expert `i > n` carries `kappa * prior(i)`: the loss update charges all
//! of them the same loss and the mixing update blends towards the prior, so
//! the tail stays proportional to the prior and one coefficient describes it
//! exactly. Weights are held as logarithms.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::math::{ln_or_neg_inf, log_add_exp, log_sum_exp, Distribution, KahanSum, Prior, PriorWeights};

/// Weights `w_{i,t}` of all experts.
#[derive(Debug, Clone)]
pub struct WeightState {
    log_weights: Vec<f64>,
    ln_prior: Vec<f64>,
    log_kappa: f64,
    initialized_prior_mass: KahanSum,
    prior: Arc<dyn Prior>,
}

impl Default for WeightState {
    fn default() -> Self {
        Self::new(Arc::new(PriorWeights::new()))
    }
}

impl WeightState {
    /// The prior: no initialized experts and `kappa = 1`.
    pub fn new(prior: Arc<dyn Prior>) -> Self {
        Self {
            log_weights: Vec::new(),
            ln_prior: Vec::new(),
            log_kappa: 0.0,
            initialized_prior_mass: KahanSum::default(),
            prior,
        }
    }

    pub fn prior(&self) -> &dyn Prior {
        self.prior.as_ref()
    }

    pub fn num_initialized(&self) -> usize {
        self.log_weights.len()
    }

    /// `kappa`, the ratio between any tail weight and its prior weight.
    pub fn tail_coefficient(&self) -> f64 {
        self.log_kappa.exp()
    }

    /// Prior mass of the uninitialized ids.
    pub fn tail_prior_mass(&self) -> f64 {
        (1.0 - self.initialized_prior_mass.value()).max(0.0)
    }

    /// Total weight of the uninitialized experts.
    pub fn tail_mass(&self) -> f64 {
        (self.log_kappa + ln_or_neg_inf(self.tail_prior_mass())).exp()
    }

    pub fn initialized_mass(&self) -> f64 {
        let mut acc = KahanSum::default();
        for &lw in &self.log_weights {
            acc.add(lw.exp());
        }
        acc.value()
    }

    pub fn total_mass(&self) -> f64 {
        self.initialized_mass() + self.tail_mass()
    }

    /// `ln w_i` for any id `i >= 1`.
    pub fn ln_weight(&self, i: usize) -> f64 {
        debug_assert!(i >= 1);
        match self.log_weights.get(i - 1) {
            Some(&lw) => lw,
            None => self.log_kappa + self.prior.ln_mass(i),
        }
    }

    pub fn weight(&self, i: usize) -> f64 {
        self.ln_weight(i).exp()
    }

    /// Explicit weights of ids `1..=n`.
    pub fn initialized_weights(&self) -> Vec<f64> {
        self.log_weights.iter().map(|lw| lw.exp()).collect()
    }

    pub fn to_distribution(&self) -> Result<Distribution> {
        Distribution::from_parts(
            self.initialized_weights().into_iter().enumerate().map(|(k, w)| (k + 1, w)).collect(),
            self.tail_coefficient(),
            self.tail_prior_mass(),
        )
    }

    /// The `k` largest explicit weights, heaviest first, ties to the smaller id.
    pub fn top_weights(&self, k: usize) -> Vec<(usize, f64)> {
        let mut ids: Vec<usize> = (0..self.log_weights.len()).collect();
        ids.sort_by(|&x, &y| self.log_weights[y].total_cmp(&self.log_weights[x]).then(x.cmp(&y)));
        ids.into_iter().take(k).map(|k| (k + 1, self.log_weights[k].exp())).collect()
    }

    /// Moves expert `i` out of the tail. Total mass is unchanged.
    pub fn materialize_expert(&mut self, i: usize) -> Result<()> {
        let next = self.log_weights.len() + 1;
        if i != next {
            return Err(Error::Contract(format!(
                "experts are initialized in order: expected id {next}, got {i}"
            )));
        }
        let ln_prior = self.prior.ln_mass(i);
        self.log_weights.push(self.log_kappa + ln_prior);
        self.ln_prior.push(ln_prior);
        self.initialized_prior_mass.add(self.prior.mass(i));
        Ok(())
    }

    /// Loss Update. `losses[k]` is the loss of expert `k + 1`; every
    /// uninitialized expert is charged `predictor_loss`. Returns the mixloss
    /// `-(1/eta) ln sum_i w_i exp(-eta l_i)` of the incoming weights.
    pub fn loss_update(&mut self, losses: &[f64], predictor_loss: f64, eta: f64) -> Result<f64> {
        if losses.len() != self.log_weights.len() {
            return Err(Error::Contract(format!(
                "loss update needs one loss per initialized expert: got {}, expected {}",
                losses.len(),
                self.log_weights.len()
            )));
        }
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(Error::Domain(format!("learning rate {eta} must be positive")));
        }
        if let Some(bad) = losses.iter().chain(std::iter::once(&predictor_loss)).find(|l| !(**l >= 0.0 && l.is_finite())) {
            return Err(Error::Domain(format!("loss {bad} must be finite and >= 0")));
        }

        let tail_term = self.log_kappa + ln_or_neg_inf(self.tail_prior_mass()) - eta * predictor_loss;
        for (lw, &l) in self.log_weights.iter_mut().zip(losses) {
            *lw -= eta * l;
        }
        let log_z = log_sum_exp(self.log_weights.iter().copied().chain(std::iter::once(tail_term)));
        for lw in &mut self.log_weights {
            *lw -= log_z;
        }
        self.log_kappa -= eta * predictor_loss + log_z;
        Ok(-log_z / eta)
    }

    /// Mixing Update after round `t` (the step whose losses were just applied).
    /// The general scheme reads past posteriors from `history`, whose last
    /// snapshot must be the current posterior.
    pub fn mixing_update(&mut self, scheme: &MixingScheme, t: usize, history: Option<&PosteriorHistory>) -> Result<()> {
        match scheme {
            MixingScheme::Exponential => Ok(()),
            MixingScheme::FixedShare { .. } | MixingScheme::Gmpp => {
                let alpha = scheme.alpha(t).expect("share schemes define alpha");
                self.share_with_prior(alpha)
            }
            MixingScheme::General(rule) => {
                let history = history.ok_or_else(|| {
                    Error::Contract("the general mixing scheme requires the posterior history".into())
                })?;
                self.mix_past_posteriors(rule.as_ref(), t, history)
            }
        }
    }

    fn share_with_prior(&mut self, alpha: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::Config(format!("share parameter {alpha} must lie in [0, 1]")));
        }
        let ln_alpha = ln_or_neg_inf(alpha);
        let ln_keep = ln_or_neg_inf(1.0 - alpha);
        for (lw, &lp) in self.log_weights.iter_mut().zip(&self.ln_prior) {
            *lw = log_add_exp(ln_alpha + lp, ln_keep + *lw);
        }
        self.log_kappa = log_add_exp(ln_alpha, ln_keep + self.log_kappa);
        Ok(())
    }

    fn mix_past_posteriors(&mut self, rule: &dyn MixingRule, t: usize, history: &PosteriorHistory) -> Result<()> {
        if history.len() != t + 1 {
            return Err(Error::Contract(format!(
                "history must hold posteriors 0..={t}, found {} snapshots",
                history.len()
            )));
        }
        let beta = rule.coefficients(t);
        check_coefficients(&beta, t)?;
        let current = &history.snapshots[t];
        if current.num_initialized() != self.num_initialized() {
            return Err(Error::Contract("last history snapshot is not the current posterior".into()));
        }
        let ln_beta: Vec<f64> = beta.iter().map(|&b| ln_or_neg_inf(b)).collect();
        let snapshots = &history.snapshots;
        for (k, lw) in self.log_weights.iter_mut().enumerate() {
            *lw = log_sum_exp(
                snapshots.iter().zip(&ln_beta).filter(|(_, lb)| lb.is_finite()).map(|(s, lb)| lb + s.ln_weight(k + 1)),
            );
        }
        self.log_kappa = log_sum_exp(
            snapshots.iter().zip(&ln_beta).filter(|(_, lb)| lb.is_finite()).map(|(s, lb)| lb + s.log_kappa),
        );
        Ok(())
    }

    /// Auxiliary weights `w_i / sum_{j<=n} w_j` over the initialized experts.
    pub fn normalized_initialized(&self) -> Result<Distribution> {
        if self.log_weights.is_empty() {
            return Err(Error::Contract("no expert has been initialized yet".into()));
        }
        let log_total = log_sum_exp(self.log_weights.iter().copied());
        if log_total == f64::NEG_INFINITY {
            return Err(Error::Contract("initialized experts carry no weight".into()));
        }
        Distribution::finite(
            self.log_weights.iter().enumerate().map(|(k, lw)| (k + 1, (lw - log_total).exp())).collect(),
        )
    }

    #[doc(hidden)]
    /// Multiplies one explicit weight by `factor` without renormalizing.
    /// Exists only so verification tooling can prove it detects corruption.
    pub fn perturb_weight(&mut self, i: usize, factor: f64) {
        if let Some(lw) = self.log_weights.get_mut(i - 1) {
            *lw += factor.ln();
        }
    }
}

fn check_coefficients(beta: &[f64], t: usize) -> Result<()> {
    if beta.len() != t + 1 {
        return Err(Error::Contract(format!(
            "mixing rule must return {} coefficients, returned {}",
            t + 1,
            beta.len()
        )));
    }
    if beta.iter().any(|b| !(*b >= 0.0 && b.is_finite())) {
        return Err(Error::Contract("mixing coefficients must be nonnegative".into()));
    }
    let total: f64 = beta.iter().sum();
    if (total - 1.0).abs() > 1e-12 {
        return Err(Error::Contract(format!("mixing coefficients sum to {total}, not 1")));
    }
    Ok(())
}

/// Produces the coefficients `beta^{t+1}_0..=beta^{t+1}_t` over past posteriors.
pub trait MixingRule: Send + Sync + fmt::Debug {
    fn coefficients(&self, t: usize) -> Vec<f64>;
}

/// Equal weight on every past posterior `0..=t`.
#[derive(Debug, Clone, Copy, Default)]
pub struct UniformPast;

impl MixingRule for UniformPast {
    fn coefficients(&self, t: usize) -> Vec<f64> {
        vec![1.0 / (t + 1) as f64; t + 1]
    }
}

/// Keeps `1 - alpha` on the current posterior and spreads `alpha` over the
/// earlier ones in proportion to `1/(t-s)^2`.
#[derive(Debug, Clone, Copy)]
pub struct DecayingPast {
    pub alpha: f64,
}

impl MixingRule for DecayingPast {
    fn coefficients(&self, t: usize) -> Vec<f64> {
        if t == 0 {
            return vec![1.0];
        }
        let raw: Vec<f64> = (0..t).map(|s| 1.0 / ((t - s) as f64).powi(2)).collect();
        let total: f64 = raw.iter().sum();
        let mut beta: Vec<f64> = raw.iter().map(|r| self.alpha * r / total).collect();
        beta.push(1.0 - self.alpha);
        beta
    }
}

/// How the mixing update combines posteriors.
#[derive(Debug, Clone)]
pub enum MixingScheme {
    /// `w_{t+1} = w~_t`.
    Exponential,
    /// `w_{t+1} = alpha * prior + (1 - alpha) * w~_t`.
    FixedShare { alpha: f64 },
    /// Fixed share with `alpha_t = 1/(t+1)`.
    Gmpp,
    /// `w_{t+1} = sum_s beta_s w~_s` over the stored history.
    General(Arc<dyn MixingRule>),
}

impl MixingScheme {
    /// Share parameter used after round `t`, for the share schemes.
    pub fn alpha(&self, t: usize) -> Option<f64> {
        match self {
            Self::Exponential => Some(0.0),
            Self::FixedShare { alpha } => Some(*alpha),
            Self::Gmpp => Some(1.0 / (t as f64 + 1.0)),
            Self::General(_) => None,
        }
    }

    pub fn needs_history(&self) -> bool {
        matches!(self, Self::General(_))
    }

    /// `beta^{t+1}` as a full coefficient vector over posteriors `0..=t`.
    pub fn coefficients(&self, t: usize) -> Vec<f64> {
        match self {
            Self::General(rule) => rule.coefficients(t),
            _ => {
                let alpha = self.alpha(t).unwrap_or(0.0);
                let mut beta = vec![0.0; t + 1];
                beta[0] += alpha;
                beta[t] += 1.0 - alpha;
                beta
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Self::FixedShare { alpha } if !(*alpha > 0.0 && *alpha < 1.0) => Err(Error::Config(format!(
                "fixed-share parameter alpha = {alpha} must lie in (0, 1)"
            ))),
            _ => Ok(()),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Exponential => "exponential",
            Self::FixedShare { .. } => "fixed_share",
            Self::Gmpp => "gmpp",
            Self::General(_) => "general",
        }
    }
}

/// Post-loss-update posteriors `w~_0, ..., w~_t`, with `w~_0` the prior.
#[derive(Debug, Clone)]
pub struct PosteriorHistory {
    snapshots: Vec<WeightState>,
}

impl PosteriorHistory {
    pub fn new(initial: WeightState) -> Self {
        Self {
            snapshots: vec![initial],
        }
    }

    pub fn push(&mut self, posterior: WeightState) {
        self.snapshots.push(posterior);
    }

    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }

    pub fn get(&self, s: usize) -> Option<&WeightState> {
        self.snapshots.get(s)
    }
}
