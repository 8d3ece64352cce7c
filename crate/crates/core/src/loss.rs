//! Mixable losses and the Aggregating Algorithm substitution rule.
//!
//! A loss is `eta`-mixable when for every weighted set of forecasts there is
//! a single prediction whose loss never exceeds the superprediction
//! `g(y) = -(1/eta) ln sum_i w_i exp(-eta loss(f_i, y))`. For the square loss
//! on `[a, b]` this holds for every `0 < eta <= 2/(b-a)^2`, and
//! [`substitute`] returns such a prediction in closed form.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::math::{ln_or_neg_inf, log_mix, log_sum_exp, Distribution};

/// Relative slack when comparing a learning rate with its mixability bound,
/// so that `2/(b-a)^2` computed by the caller is accepted.
const ETA_SLACK: f64 = 1e-12;

/// Bounds `[a, b]` on the outcomes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OutcomeRange {
    a: f64,
    b: f64,
}

impl OutcomeRange {
    pub fn new(a: f64, b: f64) -> Result<Self> {
        if !(a.is_finite() && b.is_finite() && a < b) {
            return Err(Error::Config(format!("outcome range requires finite a < b, got [{a}, {b}]")));
        }
        Ok(Self { a, b })
    }

    pub fn lower(&self) -> f64 {
        self.a
    }

    pub fn upper(&self) -> f64 {
        self.b
    }

    pub fn width(&self) -> f64 {
        self.b - self.a
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.a + self.b)
    }

    /// Largest learning rate for which the square loss is mixable: `2/(b-a)^2`.
    pub fn max_eta(&self) -> f64 {
        2.0 / (self.width() * self.width())
    }

    pub fn clamp(&self, x: f64) -> f64 {
        x.clamp(self.a, self.b)
    }

    pub fn contains(&self, x: f64) -> bool {
        (self.a..=self.b).contains(&x)
    }

    /// Checks `0 < eta <= 2/(b-a)^2`.
    pub fn check_eta(&self, eta: f64) -> Result<()> {
        let max = self.max_eta();
        if !(eta > 0.0 && eta <= max * (1.0 + ETA_SLACK)) {
            return Err(Error::Config(format!(
                "learning rate eta = {eta} violates the mixability bound 0 < eta <= 2/(b-a)^2 = {max}"
            )));
        }
        Ok(())
    }
}

/// A nonnegative loss.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize)]
pub struct LossValue(f64);

impl LossValue {
    pub fn new(value: f64) -> Result<Self> {
        if value >= 0.0 && value.is_finite() {
            Ok(Self(value))
        } else {
            Err(Error::Domain(format!("loss {value} must be finite and >= 0")))
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

/// A loss together with its mixability certificate.
pub trait MixableLoss {
    fn loss(&self, gamma: f64, y: f64) -> LossValue;

    fn max_eta(&self, range: &OutcomeRange) -> f64;

    /// `g(y)`. `tail_forecast` is the forecast shared by all tail ids and is
    /// required whenever the weights carry tail mass.
    fn superprediction(
        &self,
        forecasts: &[f64],
        weights: &Distribution,
        tail_forecast: Option<f64>,
        eta: f64,
        y: f64,
    ) -> Result<f64> {
        let tail = resolve_tail(weights, tail_forecast)?;
        let losses: Vec<f64> = forecasts.iter().map(|&f| self.loss(f, y).get()).collect();
        log_mix(weights, &losses, self.loss(tail, y).get(), eta)
    }

    /// A prediction `gamma` with `loss(gamma, y) <= g(y)` for all `y` in range.
    fn substitute(
        &self,
        forecasts: &[f64],
        weights: &Distribution,
        tail_forecast: Option<f64>,
        eta: f64,
        range: &OutcomeRange,
    ) -> Result<f64>;
}

fn resolve_tail(weights: &Distribution, tail_forecast: Option<f64>) -> Result<f64> {
    match tail_forecast {
        Some(f) => Ok(f),
        None if weights.tail_mass() > 0.0 => Err(Error::Contract(
            "weights carry tail mass but no tail forecast was supplied".into(),
        )),
        None => Ok(0.0),
    }
}

/// `lambda(gamma, y) = (gamma - y)^2`.
#[derive(Debug, Clone, Copy, Default)]
pub struct SquareLoss;

impl MixableLoss for SquareLoss {
    fn loss(&self, gamma: f64, y: f64) -> LossValue {
        LossValue((gamma - y) * (gamma - y))
    }

    fn max_eta(&self, range: &OutcomeRange) -> f64 {
        range.max_eta()
    }

    fn substitute(
        &self,
        forecasts: &[f64],
        weights: &Distribution,
        tail_forecast: Option<f64>,
        eta: f64,
        range: &OutcomeRange,
    ) -> Result<f64> {
        range.check_eta(eta)?;
        if forecasts.len() != weights.support().len() {
            return Err(Error::Dimension {
                what: "forecasts",
                got: forecasts.len(),
                expected: weights.support().len(),
            });
        }
        let tail = range.clamp(resolve_tail(weights, tail_forecast)?);
        let (a, b) = (range.lower(), range.upper());
        let ln_tail = ln_or_neg_inf(weights.tail_mass());

        let entries = || {
            weights
                .support()
                .iter()
                .zip(forecasts)
                .map(|(&(_, w), &f)| (ln_or_neg_inf(w), range.clamp(f)))
                .chain(std::iter::once((ln_tail, tail)))
        };
        let upper = log_sum_exp(entries().map(|(lw, f)| lw - eta * (b - f) * (b - f)));
        let lower = log_sum_exp(entries().map(|(lw, f)| lw - eta * (a - f) * (a - f)));
        if upper == f64::NEG_INFINITY || lower == f64::NEG_INFINITY {
            return Err(Error::Domain("all mixture weights are zero".into()));
        }
        let gamma = range.midpoint() + (upper - lower) / (2.0 * eta * range.width());
        Ok(range.clamp(gamma))
    }
}

pub fn square_loss(gamma: f64, y: f64) -> LossValue {
    SquareLoss.loss(gamma, y)
}

/// Square-loss superprediction `g(y)`.
pub fn superprediction(forecasts: &[f64], weights: &Distribution, tail_forecast: Option<f64>, eta: f64, y: f64) -> Result<f64> {
    SquareLoss.superprediction(forecasts, weights, tail_forecast, eta, y)
}

/// Square-loss substitution rule; forecasts are clamped to the range first.
pub fn substitute(
    forecasts: &[f64],
    weights: &Distribution,
    tail_forecast: Option<f64>,
    eta: f64,
    range: &OutcomeRange,
) -> Result<f64> {
    SquareLoss.substitute(forecasts, weights, tail_forecast, eta, range)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::{Prior, PriorWeights};
    use proptest::prelude::*;

    fn unit() -> OutcomeRange {
        OutcomeRange::new(0.0, 1.0).unwrap()
    }

    fn d(ws: &[f64]) -> Distribution {
        Distribution::from_weights(ws).unwrap()
    }

    #[test]
    fn square_loss_values() {
        assert_eq!(square_loss(0.5, 0.5).get(), 0.0);
        assert_eq!(square_loss(0.0, 1.0).get(), 1.0);
        assert!((square_loss(0.2, 0.9).get() - 0.49).abs() < 1e-15);
    }

    #[test]
    fn loss_value_rejects_negative() {
        assert!(LossValue::new(-1e-3).is_err());
        assert!(LossValue::new(f64::NAN).is_err());
    }

    #[test]
    fn range_validation() {
        assert!(OutcomeRange::new(1.0, 1.0).is_err());
        assert!(OutcomeRange::new(2.0, 1.0).is_err());
        let r = OutcomeRange::new(-1.0, 3.0).unwrap();
        assert_eq!(r.max_eta(), 2.0 / 16.0);
        assert!(r.check_eta(r.max_eta()).is_ok());
        let err = r.check_eta(0.2).unwrap_err().to_string();
        assert!(err.contains("2/(b-a)^2"));
        assert!(r.check_eta(0.0).is_err());
    }

    #[test]
    fn superprediction_cases() {
        let g = superprediction(&[0.3], &d(&[1.0]), None, 2.0, 0.9).unwrap();
        assert!((g - 0.36).abs() < 1e-15);
        let g = superprediction(&[0.4, 0.4, 0.4], &d(&[0.2, 0.3, 0.5]), None, 2.0, 1.0).unwrap();
        assert!((g - 0.36).abs() < 1e-14);
        let g = superprediction(&[0.0, 1.0], &d(&[0.5, 0.5]), None, 2.0, 1.0).unwrap();
        assert!((g - (-0.5 * (0.5 * ((-2f64).exp() + 1.0)).ln())).abs() < 1e-15);
    }

    #[test]
    fn superprediction_needs_tail_forecast() {
        let prior = PriorWeights::new();
        let w = Distribution::with_tail(vec![(1, 0.5)], 0.5 / prior.tail_mass(1), &prior).unwrap();
        assert!(matches!(superprediction(&[0.1], &w, None, 2.0, 0.5), Err(Error::Contract(_))));
    }

    #[test]
    fn substitute_identities() {
        let r = unit();
        let g = substitute(&[0.37, 0.37], &d(&[0.9, 0.1]), None, 2.0, &r).unwrap();
        assert!((g - 0.37).abs() < 1e-12);
        let g = substitute(&[0.0, 1.0], &d(&[0.5, 0.5]), None, 2.0, &r).unwrap();
        assert!((g - 0.5).abs() < 1e-15);
    }

    #[test]
    fn substitute_two_point_grid_oracle() {
        let r = unit();
        let f = [0.2, 0.9];
        let w = d(&[0.5, 0.5]);
        let gamma = substitute(&f, &w, None, 2.0, &r).unwrap();
        // direct transcription of the closed form
        let num = 0.5 * (-2.0 * 0.8f64.powi(2)).exp() + 0.5 * (-2.0 * 0.1f64.powi(2)).exp();
        let den = 0.5 * (-2.0 * 0.2f64.powi(2)).exp() + 0.5 * (-2.0 * 0.9f64.powi(2)).exp();
        assert!((gamma - (0.5 + (num / den).ln() / 4.0)).abs() < 1e-14);
        for k in 0..=100 {
            let y = k as f64 / 100.0;
            let g = superprediction(&f, &w, None, 2.0, y).unwrap();
            assert!(square_loss(gamma, y).get() <= g + 1e-12, "y={y}");
        }
    }

    #[test]
    fn substitute_rejects_large_eta() {
        assert!(matches!(
            substitute(&[0.5], &d(&[1.0]), None, 2.5, &unit()),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn substitute_clamps_forecasts() {
        let r = unit();
        let g = substitute(&[5.0], &d(&[1.0]), None, 2.0, &r).unwrap();
        assert!((g - 1.0).abs() < 1e-12);
        let g = substitute(&[-3.0, 0.5], &d(&[0.5, 0.5]), None, 2.0, &r).unwrap();
        let same = substitute(&[0.0, 0.5], &d(&[0.5, 0.5]), None, 2.0, &r).unwrap();
        assert_eq!(g, same);
    }

    fn instance() -> impl Strategy<Value = (f64, f64, Vec<(f64, f64)>, f64)> {
        (-5.0..5.0f64, 0.1..4.0f64, prop::collection::vec((0.0..1.0f64, 0.001..1.0f64), 1..8), 0.05..=1.0f64)
    }

    proptest! {
        #[test]
        fn mixability_holds((a, width, raw, eta_frac) in instance()) {
            let r = OutcomeRange::new(a, a + width).unwrap();
            let total: f64 = raw.iter().map(|p| p.1).sum();
            let w = d(&raw.iter().map(|p| p.1 / total).collect::<Vec<_>>());
            let f: Vec<f64> = raw.iter().map(|p| a + p.0 * width).collect();
            let eta = eta_frac * r.max_eta();
            let gamma = substitute(&f, &w, None, eta, &r).unwrap();
            prop_assert!(r.contains(gamma));
            for k in 0..=100 {
                let y = a + width * k as f64 / 100.0;
                let g = superprediction(&f, &w, None, eta, y).unwrap();
                prop_assert!(square_loss(gamma, y).get() <= g + 1e-10);
            }
        }

        #[test]
        fn translation_equivariance((a, width, raw, eta_frac) in instance(), shift in -10.0..10.0f64) {
            let r = OutcomeRange::new(a, a + width).unwrap();
            let moved = OutcomeRange::new(a + shift, a + width + shift).unwrap();
            let total: f64 = raw.iter().map(|p| p.1).sum();
            let w = d(&raw.iter().map(|p| p.1 / total).collect::<Vec<_>>());
            let f: Vec<f64> = raw.iter().map(|p| a + p.0 * width).collect();
            let g: Vec<f64> = f.iter().map(|x| x + shift).collect();
            let eta = eta_frac * r.max_eta();
            let base = substitute(&f, &w, None, eta, &r).unwrap();
            let shifted = substitute(&g, &w, None, eta, &moved).unwrap();
            prop_assert!((shifted - base - shift).abs() < 1e-9);
        }
    }
}
