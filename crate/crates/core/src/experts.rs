//! Local linear experts fitted by ridge regression over a window into the past.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One observed `(signal, response)` pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub x: Vec<f64>,
    pub y: f64,
}

impl Observation {
    pub fn new(x: Vec<f64>, y: f64) -> Self {
        Self { x, y }
    }
}

/// The `h` most recent observations before a step.
#[derive(Debug, Clone, Copy)]
pub struct HistoryWindow<'a> {
    pairs: &'a [Observation],
}

impl<'a> HistoryWindow<'a> {
    pub fn new(pairs: &'a [Observation]) -> Result<Self> {
        let Some(first) = pairs.first() else {
            return Err(Error::Contract("a history window needs at least one observation".into()));
        };
        let n = first.x.len();
        if let Some(bad) = pairs.iter().find(|p| p.x.len() != n) {
            return Err(Error::Dimension {
                what: "window signal",
                got: bad.x.len(),
                expected: n,
            });
        }
        Ok(Self { pairs })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.pairs[0].x.len()
    }

    pub fn pairs(&self) -> &'a [Observation] {
        self.pairs
    }
}

/// `a = (sigma I + X'X)^{-1} X'y`, with the window signals as the rows of `X`.
pub fn ridge_fit(window: &HistoryWindow<'_>, sigma: f64) -> Result<Vec<f64>> {
    ridge_fit_features(window, sigma, false)
}

fn ridge_fit_features(window: &HistoryWindow<'_>, sigma: f64, intercept: bool) -> Result<Vec<f64>> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::Config(format!("ridge parameter sigma = {sigma} must be positive")));
    }
    let n = window.dim() + usize::from(intercept);
    let h = window.len();
    let x = DMatrix::from_fn(h, n, |r, c| window.pairs[r].x.get(c).copied().unwrap_or(1.0));
    let y = DVector::from_iterator(h, window.pairs.iter().map(|p| p.y));

    let gram = x.tr_mul(&x) + DMatrix::identity(n, n) * sigma;
    let rhs = x.tr_mul(&y);
    let solution = gram
        .cholesky()
        .ok_or_else(|| Error::Domain("ridge system is not positive definite".into()))?
        .solve(&rhs);
    Ok(solution.iter().copied().collect())
}

/// A frozen linear predictor `f(x) = a . x` (plus a bias when enabled).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExpertModel {
    id: usize,
    coefficients: Vec<f64>,
    intercept: bool,
    window_size: usize,
    ridge_sigma: f64,
    fitted: bool,
}

impl ExpertModel {
    pub fn new(id: usize, coefficients: Vec<f64>) -> Self {
        Self {
            id,
            coefficients,
            intercept: false,
            window_size: 0,
            ridge_sigma: 0.0,
            fitted: false,
        }
    }

    /// Initialization step of the expert.
    pub fn id(&self) -> usize {
        self.id
    }

    /// Coefficients; the bias is the last entry when an intercept is fitted.
    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn window_size(&self) -> usize {
        self.window_size
    }

    pub fn ridge_sigma(&self) -> f64 {
        self.ridge_sigma
    }

    /// `false` for the fallback models used before a full window exists.
    pub fn is_fitted(&self) -> bool {
        self.fitted
    }

    /// Signal dimension this model accepts.
    pub fn dim(&self) -> usize {
        self.coefficients.len() - usize::from(self.intercept)
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::Dimension {
                what: "expert input",
                got: x.len(),
                expected: self.dim(),
            });
        }
        let linear: f64 = self.coefficients.iter().zip(x).map(|(a, v)| a * v).sum();
        Ok(if self.intercept {
            linear + self.coefficients[x.len()]
        } else {
            linear
        })
    }
}

pub fn expert_predict(model: &ExpertModel, x: &[f64]) -> Result<f64> {
    model.predict(x)
}

/// Builds the expert initialized at each step.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExpertFactory {
    pub window: usize,
    pub sigma: f64,
    /// Coefficients used while `t <= window`; zero when `None`.
    pub fallback: Option<Vec<f64>>,
    pub intercept: bool,
}

impl ExpertFactory {
    pub fn new(window: usize, sigma: f64) -> Self {
        Self {
            window,
            sigma,
            fallback: None,
            intercept: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.window < 1 {
            return Err(Error::Config("window size h must be at least 1".into()));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::Config(format!("ridge parameter sigma = {} must be positive", self.sigma)));
        }
        Ok(())
    }

    /// Expert `t` from observations `1..t` (`history[k]` is step `k + 1`).
    pub fn init_expert(&self, history: &[Observation], t: usize, dim: usize) -> Result<ExpertModel> {
        if t < 1 {
            return Err(Error::Contract("experts are indexed from step 1".into()));
        }
        let h = self.window;
        let mut model = if t > h {
            if history.len() < t - 1 {
                return Err(Error::Contract(format!(
                    "expert {t} needs {} past observations, got {}",
                    t - 1,
                    history.len()
                )));
            }
            let window = HistoryWindow::new(&history[t - 1 - h..t - 1])?;
            if window.dim() != dim {
                return Err(Error::Dimension {
                    what: "window signal",
                    got: window.dim(),
                    expected: dim,
                });
            }
            let mut m = ExpertModel::new(t, ridge_fit_features(&window, self.sigma, self.intercept)?);
            m.fitted = true;
            m
        } else {
            let expected = dim + usize::from(self.intercept);
            let coefficients = match &self.fallback {
                Some(v) if v.len() == expected => v.clone(),
                Some(v) => {
                    return Err(Error::Dimension {
                        what: "fallback coefficients",
                        got: v.len(),
                        expected,
                    })
                }
                None => vec![0.0; expected],
            };
            ExpertModel::new(t, coefficients)
        };
        model.intercept = self.intercept;
        model.window_size = h;
        model.ridge_sigma = self.sigma;
        Ok(model)
    }
}
