//! Probability distributions over expert ids with a prior-proportional tail.

use serde::Serialize;

use super::logsum::{ln_or_neg_inf, log_sum_exp};
use super::prior::{KahanSum, Prior};
use crate::error::{Error, Result};

const MASS_TOLERANCE: f64 = 1e-10;

/// A distribution with explicit masses on a finite support and mass
/// `tail_coefficient * prior(i)` on every id outside it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Distribution {
    support: Vec<(usize, f64)>,
    tail_coefficient: f64,
    tail_prior_mass: f64,
}

impl Distribution {
    /// A distribution with no tail.
    pub fn finite(support: Vec<(usize, f64)>) -> Result<Self> {
        Self::build(support, 0.0, 0.0)
    }

    /// Masses for ids `1..=weights.len()`, no tail.
    pub fn from_weights(weights: &[f64]) -> Result<Self> {
        Self::finite(weights.iter().enumerate().map(|(k, &w)| (k + 1, w)).collect())
    }

    pub fn with_tail(support: Vec<(usize, f64)>, tail_coefficient: f64, prior: &dyn Prior) -> Result<Self> {
        let mut in_support = KahanSum::default();
        for &(i, _) in &support {
            if i >= 1 {
                in_support.add(prior.mass(i));
            }
        }
        let tail_prior_mass = (1.0 - in_support.value()).max(0.0);
        Self::build(support, tail_coefficient, tail_prior_mass)
    }

    /// The prior itself.
    pub fn prior() -> Self {
        Self {
            support: Vec::new(),
            tail_coefficient: 1.0,
            tail_prior_mass: 1.0,
        }
    }

    /// Tail described by its prior mass directly. Used by the weight state,
    /// which tracks that mass incrementally.
    pub(crate) fn from_parts(support: Vec<(usize, f64)>, tail_coefficient: f64, tail_prior_mass: f64) -> Result<Self> {
        Self::build(support, tail_coefficient, tail_prior_mass)
    }

    fn build(mut support: Vec<(usize, f64)>, tail_coefficient: f64, tail_prior_mass: f64) -> Result<Self> {
        if !(tail_coefficient >= 0.0 && tail_coefficient.is_finite()) {
            return Err(Error::Domain(format!("tail coefficient {tail_coefficient} must be finite and >= 0")));
        }
        for &(i, m) in &support {
            if i < 1 {
                return Err(Error::Domain("expert ids start at 1".into()));
            }
            if !(m >= 0.0 && m.is_finite()) {
                return Err(Error::Domain(format!("mass {m} of expert {i} must be finite and >= 0")));
            }
        }
        support.sort_by_key(|&(i, _)| i);
        if support.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err(Error::Domain("duplicate expert id in support".into()));
        }
        let d = Self {
            support,
            tail_coefficient,
            tail_prior_mass,
        };
        let total = d.total_mass();
        if (total - 1.0).abs() > MASS_TOLERANCE {
            return Err(Error::Domain(format!("total mass {total} differs from 1")));
        }
        Ok(d)
    }

    /// Support entries sorted by id.
    pub fn support(&self) -> &[(usize, f64)] {
        &self.support
    }

    pub fn tail_coefficient(&self) -> f64 {
        self.tail_coefficient
    }

    /// Total mass carried by the tail.
    pub fn tail_mass(&self) -> f64 {
        self.tail_coefficient * self.tail_prior_mass
    }

    pub fn total_mass(&self) -> f64 {
        let mut acc = KahanSum::default();
        for &(_, m) in &self.support {
            acc.add(m);
        }
        acc.add(self.tail_mass());
        acc.value()
    }

    /// Mass of an arbitrary id.
    pub fn mass_of(&self, i: usize, prior: &dyn Prior) -> f64 {
        match self.support.binary_search_by_key(&i, |&(j, _)| j) {
            Ok(k) => self.support[k].1,
            Err(_) if self.tail_coefficient > 0.0 => self.tail_coefficient * prior.mass(i),
            Err(_) => 0.0,
        }
    }

    fn contains(&self, i: usize) -> bool {
        self.support.binary_search_by_key(&i, |&(j, _)| j).is_ok()
    }
}

/// `D(p || q)`; divergence is reported as a value rather than an error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum RelativeEntropy {
    Finite(f64),
    Infinite,
}

impl RelativeEntropy {
    pub fn finite(self) -> Option<f64> {
        match self {
            Self::Finite(v) => Some(v),
            Self::Infinite => None,
        }
    }

    pub fn is_infinite(self) -> bool {
        matches!(self, Self::Infinite)
    }
}

/// `D(p || q) = sum_i p_i ln(p_i / q_i)` with `0 ln 0 = 0`, including tails.
pub fn relative_entropy(p: &Distribution, q: &Distribution, prior: &dyn Prior) -> RelativeEntropy {
    let mut acc = KahanSum::default();
    let mut union: Vec<usize> = p.support.iter().chain(&q.support).map(|&(i, _)| i).collect();
    union.sort_unstable();
    union.dedup();

    for &i in &union {
        let pi = p.mass_of(i, prior);
        if pi == 0.0 {
            continue;
        }
        let qi = q.mass_of(i, prior);
        if qi == 0.0 {
            return RelativeEntropy::Infinite;
        }
        acc.add(pi * (pi / qi).ln());
    }

    if p.tail_coefficient > 0.0 {
        // prior mass of ids outside both supports
        let mut outside = p.tail_prior_mass;
        for &(i, _) in &q.support {
            if !p.contains(i) {
                outside -= prior.mass(i);
            }
        }
        if outside > 0.0 {
            if q.tail_coefficient == 0.0 {
                return RelativeEntropy::Infinite;
            }
            acc.add(p.tail_coefficient * outside * (p.tail_coefficient / q.tail_coefficient).ln());
        }
    }
    RelativeEntropy::Finite(acc.value().max(0.0))
}

/// The exponentially mixed value `-(1/eta) ln sum_i w_i exp(-eta x_i)`.
///
/// `exponents` is aligned with `weights.support()`; every tail id shares
/// `tail_exponent`.
pub fn log_mix(weights: &Distribution, exponents: &[f64], tail_exponent: f64, eta: f64) -> Result<f64> {
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(Error::Domain(format!("learning rate {eta} must be positive")));
    }
    if exponents.len() != weights.support.len() {
        return Err(Error::Dimension {
            what: "mixing exponents",
            got: exponents.len(),
            expected: weights.support.len(),
        });
    }
    let tail = weights.tail_mass();
    let terms = weights
        .support
        .iter()
        .zip(exponents)
        .map(|(&(_, w), &x)| ln_or_neg_inf(w) - eta * x)
        .chain(std::iter::once(ln_or_neg_inf(tail) - eta * tail_exponent));
    let lse = log_sum_exp(terms);
    if lse == f64::NEG_INFINITY {
        return Err(Error::Domain("all mixture weights are zero".into()));
    }
    Ok(-lse / eta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::prior::PriorWeights;

    fn d(ws: &[f64]) -> Distribution {
        Distribution::from_weights(ws).unwrap()
    }

    #[test]
    fn rejects_bad_supports() {
        assert!(Distribution::finite(vec![(1, 0.5), (1, 0.5)]).is_err());
        assert!(Distribution::finite(vec![(0, 1.0)]).is_err());
        assert!(Distribution::finite(vec![(1, 0.4)]).is_err());
        assert!(Distribution::finite(vec![(1, -0.1), (2, 1.1)]).is_err());
    }

    #[test]
    fn entropy_identity_is_zero() {
        let p = PriorWeights::new();
        let a = d(&[0.2, 0.3, 0.5]);
        assert_eq!(relative_entropy(&a, &a, &p), RelativeEntropy::Finite(0.0));
        let prior = Distribution::prior();
        assert_eq!(relative_entropy(&prior, &prior, &p).finite(), Some(0.0));
    }

    #[test]
    fn entropy_of_unit_vector_against_prior() {
        let p = PriorWeights::new();
        let prior = Distribution::prior();
        for i in [1usize, 2, 17, 400] {
            let unit = Distribution::finite(vec![(i, 1.0)]).unwrap();
            let v = relative_entropy(&unit, &prior, &p).finite().unwrap();
            assert!((v - (1.0 / p.weight(i).unwrap()).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn entropy_two_point() {
        let p = PriorWeights::new();
        let v = relative_entropy(&d(&[0.5, 0.5]), &d(&[0.25, 0.75]), &p).finite().unwrap();
        let expected = 0.5 * 2f64.ln() + 0.5 * (2.0f64 / 3.0).ln();
        assert!((v - expected).abs() < 1e-15);
        assert!((v - 0.14384).abs() < 1e-5);
    }

    #[test]
    fn entropy_divergence_is_tagged() {
        let p = PriorWeights::new();
        let r = relative_entropy(&d(&[0.5, 0.5]), &d(&[1.0, 0.0]), &p);
        assert!(r.is_infinite());
        // a tail against a finite distribution diverges as well
        assert!(relative_entropy(&Distribution::prior(), &d(&[1.0]), &p).is_infinite());
    }

    #[test]
    fn entropy_with_tails_matches_explicit_truncation() {
        let prior = PriorWeights::new();
        // without a tail the masses do not sum to one
        assert!(Distribution::with_tail(vec![(1, 0.3), (3, 0.2)], 0.0, &prior).is_err());
        let kp = 0.5 / (1.0 - prior.mass(1) - prior.mass(3));
        let p = Distribution::with_tail(vec![(1, 0.3), (3, 0.2)], kp, &prior).unwrap();
        let tail_q = 1.0 - prior.mass(2);
        let kq = 0.6 / tail_q;
        let q = Distribution::with_tail(vec![(2, 0.4)], kq, &prior).unwrap();

        let analytic = relative_entropy(&p, &q, &prior).finite().unwrap();
        // oracle: explicit sum over ids 1..=N plus the closed-form remainder
        let n = 200_000;
        let mut s = 0.0;
        for i in 1..=n {
            let pi = p.mass_of(i, &prior);
            let qi = q.mass_of(i, &prior);
            if pi > 0.0 {
                s += pi * (pi / qi).ln();
            }
        }
        s += kp * prior.tail_mass(n) * (kp / kq).ln();
        assert!((analytic - s).abs() < 1e-10, "{analytic} vs {s}");
    }

    #[test]
    fn log_mix_degenerate_cases() {
        let one = d(&[1.0]);
        assert!((log_mix(&one, &[0.37], 0.0, 2.0).unwrap() - 0.37).abs() < 1e-15);
        let w = d(&[0.1, 0.2, 0.7]);
        assert!((log_mix(&w, &[1.5, 1.5, 1.5], 0.0, 3.0).unwrap() - 1.5).abs() < 1e-14);
    }

    #[test]
    fn log_mix_two_point() {
        let v = log_mix(&d(&[0.5, 0.5]), &[0.0, 1.0], 0.0, 2.0).unwrap();
        let expected = -0.5 * (0.5 * (1.0 + (-2f64).exp())).ln();
        assert!((v - expected).abs() < 1e-15);
        assert!((v - 0.283_109_6).abs() < 1e-6);
    }

    #[test]
    fn log_mix_matches_naive_relatively() {
        let w = d(&[0.05, 0.15, 0.3, 0.5]);
        let xs = [0.3, 2.0, 0.01, 1.2];
        let eta = 0.7f64;
        let naive = -(w.support().iter().zip(&xs).map(|(&(_, wi), x)| wi * (-eta * x).exp()).sum::<f64>()).ln() / eta;
        let v = log_mix(&w, &xs, 0.0, eta).unwrap();
        assert!(((v - naive) / naive).abs() < 1e-12);
    }

    #[test]
    fn log_mix_uses_the_tail() {
        let prior = PriorWeights::new();
        let w = Distribution::with_tail(vec![(1, 0.5)], 0.5 / prior.tail_mass(1), &prior).unwrap();
        let v = log_mix(&w, &[0.0], 1.0, 2.0).unwrap();
        let expected = -0.5 * (0.5 * (1.0 + (-2f64).exp())).ln();
        assert!((v - expected).abs() < 1e-12);
    }

    #[test]
    fn log_mix_errors() {
        assert!(log_mix(&d(&[1.0]), &[0.0, 1.0], 0.0, 1.0).is_err());
        assert!(log_mix(&d(&[1.0]), &[0.0], 0.0, 0.0).is_err());
    }
}
