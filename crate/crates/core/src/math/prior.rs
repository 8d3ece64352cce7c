//! Prior weights over the countable expert set `i = 1, 2, ...`.

use std::fmt;
use std::sync::OnceLock;

use crate::error::{Error, Result};

/// Summation cut-off for the normalizing constant; the rest is the tail correction.
const SUM_CUTOFF: usize = 1_000_000;

/// A summable positive sequence normalized to one, indexed from 1.
pub trait Prior: Send + Sync + fmt::Debug {
    /// Mass of expert `i`. Callers guarantee `i >= 1`.
    fn mass(&self, i: usize) -> f64;

    fn ln_mass(&self, i: usize) -> f64 {
        self.mass(i).ln()
    }

    /// `sum_{j <= n} mass(j)`.
    fn mass_through(&self, n: usize) -> f64 {
        let mut acc = KahanSum::default();
        for i in 1..=n {
            acc.add(self.mass(i));
        }
        acc.value()
    }

    /// `sum_{j > n} mass(j)`.
    fn tail_mass(&self, n: usize) -> f64 {
        (1.0 - self.mass_through(n)).max(0.0)
    }
}

/// Neumaier-compensated running sum.
#[derive(Debug, Default, Clone, Copy)]
pub(crate) struct KahanSum {
    sum: f64,
    compensation: f64,
}

impl KahanSum {
    pub(crate) fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.compensation += (self.sum - t) + x;
        } else {
            self.compensation += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub(crate) fn value(&self) -> f64 {
        self.sum + self.compensation
    }
}

fn unnormalized(i: f64) -> f64 {
    let l = (i + 1.0).ln();
    1.0 / ((i + 1.0) * l * l)
}

fn unnormalized_derivative(x: f64) -> f64 {
    let u = x + 1.0;
    let l = u.ln();
    -(l + 2.0) / (u * u * l * l * l)
}

/// Partial sum `sum_{i=1}^{n} 1/((i+1) ln^2(i+1))`, summed smallest term first.
pub fn partial_constant(n: usize) -> f64 {
    let mut acc = KahanSum::default();
    for i in (1..=n).rev() {
        acc.add(unnormalized(i as f64));
    }
    acc.value()
}

/// The normalizing constant `c = sum_{i>=1} 1/((i+1) ln^2(i+1))`.
///
/// Explicit summation to `10^6` plus the integral tail `1/ln(N+1)` with the
/// first two Euler-Maclaurin corrections. Absolute error is far below `1e-10`.
/// Computed once per process.
pub fn prior_constant() -> f64 {
    static CONSTANT: OnceLock<f64> = OnceLock::new();
    *CONSTANT.get_or_init(|| {
        let n = SUM_CUTOFF as f64;
        let tail = 1.0 / (n + 1.0).ln() - unnormalized(n) / 2.0 - unnormalized_derivative(n) / 12.0;
        partial_constant(SUM_CUTOFF) + tail
    })
}

/// `w_i = 1 / (c (i+1) ln^2(i+1))` for `i >= 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PriorWeights {
    normalizing_constant: f64,
}

impl Default for PriorWeights {
    fn default() -> Self {
        Self::new()
    }
}

impl PriorWeights {
    pub fn new() -> Self {
        Self {
            normalizing_constant: prior_constant(),
        }
    }

    pub fn normalizing_constant(&self) -> f64 {
        self.normalizing_constant
    }

    /// Index 0 is rejected: `ln^2(1) = 0`.
    pub fn weight(&self, i: usize) -> Result<f64> {
        if i < 1 {
            return Err(Error::Domain(
                "prior weight is defined for expert ids i >= 1".into(),
            ));
        }
        Ok(self.mass(i))
    }

    /// Smallest `n` whose tail mass `sum_{i>n} w_i` is provably below `eps`,
    /// or `None` if it does not fit in `usize`.
    ///
    /// Uses `sum_{i>n} w_i <= 1 / (c ln(n+1))`.
    pub fn tail_index_bound(&self, eps: f64) -> Option<usize> {
        if eps <= 0.0 {
            return None;
        }
        let exponent = 1.0 / (self.normalizing_constant * eps);
        if exponent > (usize::MAX as f64).ln() - 1.0 {
            return None;
        }
        Some((exponent.exp() - 1.0).ceil().max(1.0) as usize)
    }
}

impl Prior for PriorWeights {
    fn mass(&self, i: usize) -> f64 {
        debug_assert!(i >= 1);
        unnormalized(i as f64) / self.normalizing_constant
    }

    fn ln_mass(&self, i: usize) -> f64 {
        let u = i as f64 + 1.0;
        -(self.normalizing_constant.ln() + u.ln() + 2.0 * u.ln().ln())
    }

    fn tail_mass(&self, n: usize) -> f64 {
        // (c - S_n) / c, with S_n computed smallest term first
        ((self.normalizing_constant - partial_constant(n)) / self.normalizing_constant).max(0.0)
    }
}

/// Prior weight of expert `i` under the default prior.
pub fn prior_weight(i: usize) -> Result<f64> {
    PriorWeights::new().weight(i)
}

#[cfg(test)]
mod tests {
    use super::*;

    // Independent oracle: direct f64 summation far past the cut-off plus the
    // integral tail, without Euler-Maclaurin terms.
    fn brute_constant(n: usize) -> f64 {
        let mut s = 0.0;
        for i in (1..=n).rev() {
            let u = i as f64 + 1.0;
            s += 1.0 / (u * u.ln().powi(2));
        }
        s + 1.0 / ((n + 1) as f64).ln()
    }

    #[test]
    fn constant_matches_reported_value() {
        assert!((prior_constant() - 2.10974).abs() < 1e-4);
    }

    #[test]
    fn constant_agrees_with_slow_oracle() {
        // plain integral tail over-estimates by about f(N)/2
        let n = 20_000_000;
        let oracle = brute_constant(n) - unnormalized(n as f64) / 2.0;
        assert!((prior_constant() - oracle).abs() < 1e-10, "{}", prior_constant() - oracle);
    }

    #[test]
    fn first_term_is_strict_lower_bound() {
        let first = 1.0 / (2.0 * 2f64.ln().powi(2));
        assert!((first - 1.04068).abs() < 1e-4);
        assert!(first < prior_constant());
    }

    #[test]
    fn footnote_bracket_does_not_hold() {
        // the published bracket (1/ln 3, 1/ln 2) does not contain c
        let c = prior_constant();
        assert!(c > 1.0 / 3f64.ln());
        assert!(c > 1.0 / 2f64.ln());
    }

    #[test]
    fn known_weights() {
        let p = PriorWeights::new();
        assert!((p.weight(1).unwrap() - 0.49324).abs() < 1e-4);
        assert!((p.weight(1).unwrap() - 0.493_275_526_2).abs() < 1e-9);
        assert!((p.weight(2).unwrap() - 0.13090).abs() < 1e-4);
        assert!((p.weight(2).unwrap() - 0.130_906_233_2).abs() < 1e-9);
    }

    #[test]
    fn index_zero_is_rejected() {
        assert!(matches!(prior_weight(0), Err(Error::Domain(_))));
    }

    #[test]
    fn weights_sum_to_one() {
        let p = PriorWeights::new();
        for n in [1usize, 10, 1000, 100_000] {
            let total = p.mass_through(n) + p.tail_mass(n);
            assert!((total - 1.0).abs() < 1e-10);
        }
        // the whole series through the cut-off plus the analytic tail
        let n = SUM_CUTOFF;
        let tail = (1.0 / (n as f64 + 1.0).ln() - unnormalized(n as f64) / 2.0
            - unnormalized_derivative(n as f64) / 12.0)
            / p.normalizing_constant();
        assert!((p.mass_through(n) + tail - 1.0).abs() < 1e-10);
    }

    #[test]
    fn weights_decrease() {
        let p = PriorWeights::new();
        let mut prev = f64::INFINITY;
        for i in 1..5000 {
            let w = p.mass(i);
            assert!(w > 0.0 && w < prev);
            assert!((p.ln_mass(i) - w.ln()).abs() < 1e-12);
            prev = w;
        }
    }

    #[test]
    fn tail_bound_is_valid() {
        let p = PriorWeights::new();
        let n = p.tail_index_bound(0.1).unwrap();
        assert!(p.tail_mass(n) < 0.1);
        assert!(p.tail_index_bound(1e-6).is_none());
    }
}
