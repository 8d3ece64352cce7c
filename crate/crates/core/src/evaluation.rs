//! Regret bookkeeping, the hindsight composite expert, and the regret bounds.

use serde::{Deserialize, Serialize};

use crate::datagen::SegmentSchedule;
use crate::engine::{Engine, EngineConfig, StepRecord};
use crate::error::{Error, Result};
use crate::experts::Observation;
use crate::math::{log_mix, prior_constant, relative_entropy, Distribution, Prior, PriorWeights};
use crate::weights::{MixingScheme, WeightState};

/// Running totals of a run.
///
/// `L_{i,T}` is kept for the initialized experts only. An expert initialized
/// at step `i` is charged `h_t` for every `t < i`.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct RegretLedger {
    predictor_losses: Vec<f64>,
    mixlosses: Vec<f64>,
    cumulative_predictor: f64,
    cumulative_mixloss: f64,
    expert_totals: Vec<f64>,
    clamp_count: usize,
}

impl RegretLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_records(records: &[StepRecord]) -> Self {
        let mut ledger = Self::new();
        for r in records {
            ledger.push(r);
        }
        ledger
    }

    pub fn push(&mut self, record: &StepRecord) {
        let n = record.num_experts();
        while self.expert_totals.len() < n {
            self.expert_totals.push(self.cumulative_predictor);
        }
        for (total, l) in self.expert_totals.iter_mut().zip(&record.expert_losses) {
            *total += l;
        }
        self.predictor_losses.push(record.predictor_loss);
        self.mixlosses.push(record.mixloss);
        self.cumulative_predictor += record.predictor_loss;
        self.cumulative_mixloss += record.mixloss;
        if record.clamped {
            self.clamp_count += 1;
        }
    }

    pub fn rounds(&self) -> usize {
        self.predictor_losses.len()
    }

    /// `h_t` for `t = 1..=T`.
    pub fn predictor_losses(&self) -> &[f64] {
        &self.predictor_losses
    }

    /// `m_t` for `t = 1..=T`.
    pub fn mixlosses(&self) -> &[f64] {
        &self.mixlosses
    }

    /// `H_T`.
    pub fn predictor_total(&self) -> f64 {
        self.cumulative_predictor
    }

    /// `M_T`.
    pub fn mixloss_total(&self) -> f64 {
        self.cumulative_mixloss
    }

    pub fn num_experts(&self) -> usize {
        self.expert_totals.len()
    }

    /// `L_{i,T}`.
    pub fn expert_total(&self, i: usize) -> Result<f64> {
        i.checked_sub(1)
            .and_then(|k| self.expert_totals.get(k))
            .copied()
            .ok_or(Error::UnknownExpert(i))
    }

    pub fn expert_totals(&self) -> &[f64] {
        &self.expert_totals
    }

    pub fn clamp_count(&self) -> usize {
        self.clamp_count
    }

    /// `R_{i,T} = H_T - L_{i,T}`.
    pub fn regret(&self, i: usize) -> Result<f64> {
        Ok(self.cumulative_predictor - self.expert_total(i)?)
    }

    /// `H_T <= M_T` up to `1e-10` per step.
    pub fn predictor_dominated(&self) -> bool {
        self.cumulative_predictor <= self.cumulative_mixloss + 1e-10 * self.rounds() as f64
    }

    /// Largest gap between the running totals and a from-scratch recount.
    pub fn consistency_error(&self, records: &[StepRecord]) -> f64 {
        let h: f64 = records.iter().map(|r| r.predictor_loss).sum();
        let m: f64 = records.iter().map(|r| r.mixloss).sum();
        let mut worst = (h - self.cumulative_predictor).abs().max((m - self.cumulative_mixloss).abs());
        for (k, total) in self.expert_totals.iter().enumerate() {
            let recount: f64 = records.iter().map(|r| r.loss_of(k + 1)).sum();
            worst = worst.max((recount - total).abs());
        }
        if records.len() != self.rounds() {
            worst = f64::INFINITY;
        }
        worst
    }
}

/// Which experts the hindsight oracle may pick for a segment `[s, e)`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Eligibility {
    /// Ids `<= s`: every forecast inside the segment is the expert's own.
    #[default]
    InitializedBeforeSegment,
    /// Ids `<= e - 1`: experts born inside the segment count too, charged
    /// `h_t` before they exist.
    InitializedBySegmentEnd,
}

impl Eligibility {
    pub fn name(self) -> &'static str {
        match self {
            Eligibility::InitializedBeforeSegment => "initialized_before_segment",
            Eligibility::InitializedBySegmentEnd => "initialized_by_segment_end",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompositeSegment {
    pub start: usize,
    /// Exclusive.
    pub end: usize,
    pub expert: usize,
    pub loss: f64,
    /// No expert met the eligibility rule, so any initialized one was allowed.
    pub fallback: bool,
}

/// Piecewise-constant comparator built from elementary experts.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompositeExpert {
    pub segments: Vec<CompositeSegment>,
    /// `L_T(E)`.
    pub total_loss: f64,
}

impl CompositeExpert {
    pub fn horizon(&self) -> usize {
        self.segments.last().map_or(0, |s| s.end - 1)
    }

    /// Adjacent segments with the same expert merged into one piece.
    pub fn pieces(&self) -> Vec<(usize, usize, usize)> {
        let mut out: Vec<(usize, usize, usize)> = Vec::new();
        for s in &self.segments {
            match out.last_mut() {
                Some(last) if last.2 == s.expert => last.1 = s.end,
                _ => out.push((s.start, s.end, s.expert)),
            }
        }
        out
    }

    /// `k`, the number of times the comparator changes expert.
    pub fn switches(&self) -> usize {
        self.pieces().len().saturating_sub(1)
    }

    pub fn any_fallback(&self) -> bool {
        self.segments.iter().any(|s| s.fallback)
    }
}

/// Best eligible expert on every segment of `schedule`.
pub fn composite_oracle(records: &[StepRecord], schedule: &SegmentSchedule, eligibility: Eligibility) -> Result<CompositeExpert> {
    if records.len() != schedule.horizon() {
        return Err(Error::Dimension {
            what: "records",
            got: records.len(),
            expected: schedule.horizon(),
        });
    }
    if records.iter().enumerate().any(|(k, r)| r.t != k + 1) {
        return Err(Error::Contract("records must cover steps 1..=T in order".into()));
    }
    let initialized = records.last().map_or(0, |r| r.num_experts());
    let mut segments = Vec::with_capacity(schedule.num_segments());
    for (start, end, _) in schedule.segments() {
        let limit = match eligibility {
            Eligibility::InitializedBeforeSegment => start,
            Eligibility::InitializedBySegmentEnd => end - 1,
        };
        let mut top = limit.min(initialized);
        let fallback = top == 0;
        if fallback {
            top = initialized;
        }
        let window = &records[start - 1..end - 1];
        let mut best = (0, f64::INFINITY);
        for i in 1..=top {
            let loss: f64 = window.iter().map(|r| r.loss_of(i)).sum();
            if loss < best.1 {
                best = (i, loss);
            }
        }
        if best.0 == 0 {
            return Err(Error::Contract("no initialized expert to compare against".into()));
        }
        segments.push(CompositeSegment {
            start,
            end,
            expert: best.0,
            loss: best.1,
            fallback,
        });
    }
    let total_loss = segments.iter().map(|s| s.loss).sum();
    Ok(CompositeExpert { segments, total_loss })
}

/// `D(e_i || w~_0) = ln(1/w_{i,1})` under the default prior.
pub fn entropy_term(i: usize) -> Result<f64> {
    if i == 0 {
        return Err(Error::Domain("expert ids start at 1".into()));
    }
    Ok(-PriorWeights::new().ln_mass(i))
}

/// `ln(T+1) + 2 ln ln(T+1) + ln c`, which dominates `entropy_term(i)` for `i <= T`.
pub fn entropy_upper(horizon: usize) -> f64 {
    let n = (horizon + 1) as f64;
    n.ln() + 2.0 * n.ln().ln() + prior_constant().ln()
}

fn check_eta(eta: f64) -> Result<()> {
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(Error::Domain(format!("learning rate {eta} must be positive")));
    }
    Ok(())
}

/// Right-hand side of the GMPP regret bound as stated, minus `L_T(E)`:
/// `sum D + (k+1) ln c/eta + (k+1)(ln(T+1) + 2 ln ln(T+1) + ln c + ln T)/eta + ln(T-k-1)/eta`.
///
/// `entropy_terms` holds `D(q_{t_j} || w~_0)` for `j = 1..=k`.
pub fn bound_rhs(horizon: usize, k: usize, eta: f64, entropy_terms: &[f64]) -> Result<f64> {
    check_eta(eta)?;
    if horizon <= k + 1 {
        return Err(Error::Domain(format!("T - k - 1 must be positive (T = {horizon}, k = {k})")));
    }
    if entropy_terms.len() != k {
        return Err(Error::Dimension {
            what: "entropy terms",
            got: entropy_terms.len(),
            expected: k,
        });
    }
    let t = horizon as f64;
    let pieces = (k + 1) as f64;
    let ln_c = prior_constant().ln();
    let entropies: f64 = entropy_terms.iter().sum();
    Ok(entropies + pieces * ln_c / eta + pieces * (entropy_upper(horizon) + t.ln()) / eta + (t - pieces).ln() / eta)
}

/// The same bound for Fixed-Share with constant `alpha`:
/// `(k+1)(ln(T+1) + 2 ln ln(T+1) + ln c)/eta + (k+1) ln(1/alpha)/eta + (T-k-1) ln(1/(1-alpha))/eta`.
pub fn bound_rhs_fixed_share(horizon: usize, k: usize, eta: f64, alpha: f64) -> Result<f64> {
    check_eta(eta)?;
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Domain(format!("alpha {alpha} must lie in (0, 1)")));
    }
    if horizon < k + 1 {
        return Err(Error::Domain(format!("T - k - 1 must be non-negative (T = {horizon}, k = {k})")));
    }
    let pieces = (k + 1) as f64;
    let rest = (horizon - k - 1) as f64;
    Ok((pieces * entropy_upper(horizon) + pieces * (1.0 / alpha).ln() + rest * (1.0 / (1.0 - alpha)).ln()) / eta)
}

/// GMPP bound rebuilt step by step for a specific composite expert:
/// `(1/eta)[sum_j ln(1/w_{i_j,1}) + sum_j ln t_j + sum ln(t/(t-1))]`,
/// the last sum running over steps `t >= 2` that are not switches.
pub fn bound_rhs_recomputed(composite: &CompositeExpert, eta: f64) -> Result<f64> {
    check_eta(eta)?;
    let pieces = composite.pieces();
    let horizon = composite.horizon();
    let mut total = 0.0;
    for &(_, _, expert) in &pieces {
        total += entropy_term(expert)?;
    }
    let switch_steps: Vec<usize> = pieces.iter().skip(1).map(|p| p.0).collect();
    for &t in &switch_steps {
        total += (t as f64).ln();
    }
    for t in 2..=horizon {
        if switch_steps.binary_search(&t).is_err() {
            total += (t as f64 / (t - 1) as f64).ln();
        }
    }
    Ok(total / eta)
}

/// Outcome of comparing a cumulative quantity with its bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundCheck {
    pub lhs: f64,
    pub rhs: f64,
}

impl BoundCheck {
    pub fn slack(&self) -> f64 {
        self.rhs - self.lhs
    }

    pub fn holds(&self, tolerance: f64) -> bool {
        self.lhs <= self.rhs + tolerance
    }
}

/// `M_T <= L_{i,T} + ln(1/w_{i,1})/eta` for every initialized expert,
/// reported for the expert with the least slack.
pub fn proposition1_check(ledger: &RegretLedger, eta: f64) -> Result<(usize, BoundCheck)> {
    check_eta(eta)?;
    let mut worst: Option<(usize, BoundCheck)> = None;
    for i in 1..=ledger.num_experts() {
        let check = BoundCheck {
            lhs: ledger.mixloss_total(),
            rhs: ledger.expert_total(i)? + entropy_term(i)? / eta,
        };
        if worst.is_none_or(|(_, w)| check.slack() < w.slack()) {
            worst = Some((i, check));
        }
    }
    worst.ok_or_else(|| Error::Contract("the ledger has no experts".into()))
}

/// Runs a constant-`alpha` Fixed-Share engine and compares `M_T` with the
/// switching-comparator bound
/// `sum_t l_{q_t,t} + (1/eta) sum_j (D(q_j||w_1) - D(q_j||w~_{end_j})) + (k+1) ln(1/alpha)/eta + (T-k-1) ln(1/(1-alpha))/eta`,
/// where the pieces are `(start, end_exclusive, expert)` and cover `1..=T`.
pub fn fixed_share_check(config: &EngineConfig, stream: &[Observation], pieces: &[(usize, usize, usize)]) -> Result<BoundCheck> {
    let alpha = match config.scheme {
        MixingScheme::FixedShare { alpha } => alpha,
        _ => return Err(Error::Config("the switching bound needs a constant-alpha Fixed-Share scheme".into())),
    };
    let horizon = stream.len();
    let covers = !pieces.is_empty()
        && pieces[0].0 == 1
        && pieces.last().map(|p| p.1) == Some(horizon + 1)
        && pieces.windows(2).all(|w| w[0].1 == w[1].0)
        && pieces.iter().all(|p| p.0 < p.1);
    if !covers {
        return Err(Error::Contract("comparator pieces must partition 1..=T".into()));
    }
    let mut engine = Engine::new(config.clone())?;
    let prior = PriorWeights::new();
    let eta = config.eta;
    let mut comparator_loss = 0.0;
    let mut entropy = 0.0;
    let mut mixloss = 0.0;
    let mut piece = 0;
    for obs in stream {
        let record = engine.step(obs)?;
        let (_, end, expert) = pieces[piece];
        comparator_loss += record.loss_of(expert);
        mixloss += record.mixloss;
        if record.t + 1 == end {
            let posterior = engine.last_posterior().expect("a round was observed");
            entropy += -prior.ln_mass(expert) + posterior.ln_weight(expert);
            piece += 1;
        }
    }
    let k = (pieces.len() - 1) as f64;
    let rhs = comparator_loss
        + entropy / eta
        + (k + 1.0) * (1.0 / alpha).ln() / eta
        + (horizon as f64 - k - 1.0) * (1.0 / (1.0 - alpha)).ln() / eta;
    Ok(BoundCheck { lhs: mixloss, rhs })
}

/// `(q . l_t)`, where experts past `losses.len()` lose `predictor_loss`.
pub fn comparison_loss(q: &Distribution, losses: &[f64], predictor_loss: f64) -> f64 {
    let explicit: f64 = q.support().iter().map(|&(i, p)| p * losses.get(i - 1).copied().unwrap_or(predictor_loss)).sum();
    explicit + q.tail_mass() * predictor_loss
}

fn entropy(q: &Distribution, w: &WeightState) -> Result<f64> {
    relative_entropy(q, &w.to_distribution()?, w.prior())
        .finite()
        .ok_or_else(|| Error::Domain("comparison vector is not absolutely continuous".into()))
}

/// `m_t` recomputed from the weights `w_t` in force before the loss update.
pub fn step_mixloss(weights: &WeightState, losses: &[f64], predictor_loss: f64, eta: f64) -> Result<f64> {
    log_mix(&weights.to_distribution()?, losses, predictor_loss, eta)
}

/// `m_t <= (q . l_t) + (D(q || w_t) - D(q || w~_t))/eta`.
pub fn mixloss_bound_current(
    q: &Distribution,
    weights: &WeightState,
    posterior: &WeightState,
    losses: &[f64],
    predictor_loss: f64,
    eta: f64,
) -> Result<BoundCheck> {
    let lhs = step_mixloss(weights, losses, predictor_loss, eta)?;
    let rhs = comparison_loss(q, losses, predictor_loss) + (entropy(q, weights)? - entropy(q, posterior)?) / eta;
    Ok(BoundCheck { lhs, rhs })
}

/// `m_t <= (q . l_t) + (D(q || w~_s) - D(q || w~_t) + ln(1/beta_s))/eta`
/// for a past posterior `w~_s` that enters `w_t` with coefficient `beta_s > 0`.
#[allow(clippy::too_many_arguments)]
pub fn mixloss_bound_past(
    q: &Distribution,
    weights: &WeightState,
    past: &WeightState,
    beta: f64,
    posterior: &WeightState,
    losses: &[f64],
    predictor_loss: f64,
    eta: f64,
) -> Result<BoundCheck> {
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(Error::Domain(format!("coefficient {beta} must lie in (0, 1]")));
    }
    let lhs = step_mixloss(weights, losses, predictor_loss, eta)?;
    let rhs = comparison_loss(q, losses, predictor_loss) + (entropy(q, past)? - entropy(q, posterior)? - beta.ln()) / eta;
    Ok(BoundCheck { lhs, rhs })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VanishingRegretReport {
    pub horizons: Vec<usize>,
    /// `(H_T - L_T(E))/T` per horizon.
    pub average_regret: Vec<f64>,
    /// `(index, relative increase)` for every step where the average went up.
    pub inversions: Vec<(usize, f64)>,
    pub passed: bool,
}

/// Relative increase allowed for the single tolerated inversion.
pub const INVERSION_TOLERANCE: f64 = 0.10;

/// Checks that `(H_T - L_T(E))/T` does not grow with `T`, allowing one
/// increase of at most 10%.
pub fn vanishing_regret_check(series: &[(usize, f64, f64)]) -> Result<VanishingRegretReport> {
    if series.len() < 3 {
        return Err(Error::Contract(format!("need at least 3 horizons, got {}", series.len())));
    }
    if series.windows(2).any(|w| w[0].0 >= w[1].0) || series[0].0 == 0 {
        return Err(Error::Contract("horizons must be positive and increasing".into()));
    }
    let average_regret: Vec<f64> = series.iter().map(|&(t, h, l)| (h - l) / t as f64).collect();
    let inversions: Vec<(usize, f64)> = average_regret
        .windows(2)
        .enumerate()
        .filter(|(_, w)| w[1] > w[0])
        .map(|(k, w)| {
            let rel = if w[0] == 0.0 {
                f64::INFINITY
            } else {
                (w[1] - w[0]) / w[0].abs()
            };
            (k + 1, rel)
        })
        .collect();
    let passed = inversions.is_empty() || (inversions.len() == 1 && inversions[0].1 <= INVERSION_TOLERANCE);
    Ok(VanishingRegretReport {
        horizons: series.iter().map(|s| s.0).collect(),
        average_regret,
        inversions,
        passed,
    })
}
