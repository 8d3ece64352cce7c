//! Flat `key = value` run configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Every key is
//! optional, unknown and repeated keys are rejected.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use gmpp_core::datagen::SignalLaw;
use gmpp_core::evaluation::Eligibility;
use gmpp_core::weights::{DecayingPast, UniformPast};
use gmpp_core::MixingScheme;
use serde::Serialize;

use crate::error::{CliError, CliResult};

pub const KEYS: &[&str] = &[
    "seed",
    "steps",
    "segments",
    "pool_size",
    "noise_std",
    "signal",
    "dims",
    "a",
    "b",
    "eta",
    "window",
    "sigma",
    "fit_intercept",
    "scheme",
    "alpha",
    "max_experts",
    "eligibility",
    "stream_in",
    "stream_out",
    "horizons",
    "verify_perturb",
    "trace",
    "report",
    "summary",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeChoice {
    Gmpp,
    Exponential,
    FixedShare,
    UniformPast,
    DecayingPast,
}

impl FromStr for SchemeChoice {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Ok(match s {
            "gmpp" => Self::Gmpp,
            "exponential" => Self::Exponential,
            "fixed_share" => Self::FixedShare,
            "uniform_past" => Self::UniformPast,
            "decaying_past" => Self::DecayingPast,
            _ => return Err("expected gmpp, exponential, fixed_share, uniform_past or decaying_past".into()),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub seed: u64,
    /// Horizon `T`; an imported stream defaults to its full length.
    pub steps: Option<usize>,
    pub segments: usize,
    pub pool_size: usize,
    pub noise_std: f64,
    pub signal: SignalLaw,
    pub dims: usize,
    pub a: Option<f64>,
    pub b: Option<f64>,
    pub eta: Option<f64>,
    pub window: usize,
    pub sigma: f64,
    pub fit_intercept: bool,
    pub scheme: SchemeChoice,
    pub alpha: Option<f64>,
    pub max_experts: Option<usize>,
    pub eligibility: Eligibility,
    pub stream_in: Option<PathBuf>,
    pub stream_out: Option<PathBuf>,
    pub horizons: Vec<usize>,
    pub verify_perturb: Option<f64>,
    pub trace: String,
    pub report: String,
    pub summary: String,
    /// Keys that were not set and took their default.
    pub defaulted: Vec<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            steps: None,
            segments: 10,
            pool_size: 4,
            noise_std: 1.0,
            signal: SignalLaw::Uniform,
            dims: 3,
            a: None,
            b: None,
            eta: None,
            window: 20,
            sigma: 0.01,
            fit_intercept: false,
            scheme: SchemeChoice::Gmpp,
            alpha: None,
            max_experts: None,
            eligibility: Eligibility::InitializedBeforeSegment,
            stream_in: None,
            stream_out: None,
            horizons: vec![500, 1000, 2000],
            verify_perturb: None,
            trace: "trace.csv".into(),
            report: "report.json".into(),
            summary: "summary.csv".into(),
            defaulted: KEYS.iter().map(|k| k.to_string()).collect(),
        }
    }
}

/// Horizon used when neither `steps` nor an imported stream fixes it.
pub const DEFAULT_STEPS: usize = 1000;

fn parse_value<T: FromStr>(key: &str, raw: &str) -> CliResult<T>
where
    T::Err: std::fmt::Display,
{
    raw.parse::<T>()
        .map_err(|e| CliError::Config(format!("{key} = {raw:?}: {e}")))
}

fn optional<T: FromStr>(key: &str, raw: &str) -> CliResult<Option<T>>
where
    T::Err: std::fmt::Display,
{
    if raw == "none" {
        Ok(None)
    } else {
        parse_value(key, raw).map(Some)
    }
}

fn file_name(key: &str, raw: &str) -> CliResult<String> {
    let ok = !raw.is_empty() && Path::new(raw).file_name().is_some_and(|n| n == raw);
    if !ok {
        return Err(CliError::Config(format!("{key} must be a plain file name, got {raw:?}")));
    }
    Ok(raw.to_string())
}

impl RunConfig {
    /// Parses config text; relative `stream_in` paths resolve against `base`.
    pub fn parse(text: &str, base: &Path) -> CliResult<Self> {
        let mut config = Self::default();
        let mut seen = BTreeSet::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, raw) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("line {}: expected key = value", n + 1)))?;
            let (key, raw) = (key.trim(), raw.trim());
            if !KEYS.contains(&key) {
                return Err(CliError::Config(format!("line {}: unknown key {key:?}", n + 1)));
            }
            if !seen.insert(key.to_string()) {
                return Err(CliError::Config(format!("line {}: key {key:?} given twice", n + 1)));
            }
            config.set(key, raw, base)?;
        }
        config.defaulted = KEYS.iter().filter(|k| !seen.contains(**k)).map(|k| k.to_string()).collect();
        config.validate()?;
        Ok(config)
    }

    pub fn from_file(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    fn set(&mut self, key: &str, raw: &str, base: &Path) -> CliResult<()> {
        match key {
            "seed" => self.seed = parse_value(key, raw)?,
            "steps" => self.steps = Some(parse_value(key, raw)?),
            "segments" => self.segments = parse_value(key, raw)?,
            "pool_size" => self.pool_size = parse_value(key, raw)?,
            "noise_std" => self.noise_std = parse_value(key, raw)?,
            "signal" => {
                self.signal = match raw {
                    "uniform" => SignalLaw::Uniform,
                    "gaussian" => SignalLaw::Gaussian,
                    _ => return Err(CliError::Config(format!("signal = {raw:?}: expected uniform or gaussian"))),
                }
            }
            "dims" => self.dims = parse_value(key, raw)?,
            "a" => self.a = optional(key, raw)?,
            "b" => self.b = optional(key, raw)?,
            "eta" => self.eta = optional(key, raw)?,
            "window" => self.window = parse_value(key, raw)?,
            "sigma" => self.sigma = parse_value(key, raw)?,
            "fit_intercept" => self.fit_intercept = parse_value(key, raw)?,
            "scheme" => self.scheme = parse_value(key, raw)?,
            "alpha" => self.alpha = optional(key, raw)?,
            "max_experts" => self.max_experts = optional(key, raw)?,
            "eligibility" => {
                self.eligibility = match raw {
                    "initialized_before_segment" => Eligibility::InitializedBeforeSegment,
                    "initialized_by_segment_end" => Eligibility::InitializedBySegmentEnd,
                    _ => {
                        return Err(CliError::Config(format!(
                            "eligibility = {raw:?}: expected initialized_before_segment or initialized_by_segment_end"
                        )))
                    }
                }
            }
            "stream_in" => self.stream_in = Some(base.join(raw)),
            "stream_out" => self.stream_out = Some(PathBuf::from(file_name(key, raw)?)),
            "horizons" => {
                self.horizons = raw
                    .split(',')
                    .map(|h| parse_value(key, h.trim()))
                    .collect::<CliResult<Vec<usize>>>()?
            }
            "verify_perturb" => self.verify_perturb = optional(key, raw)?,
            "trace" => self.trace = file_name(key, raw)?,
            "report" => self.report = file_name(key, raw)?,
            "summary" => self.summary = file_name(key, raw)?,
            _ => unreachable!("keys are checked against KEYS"),
        }
        Ok(())
    }

    /// Range, scheme and engine checks happen once the stream is known.
    pub fn validate(&self) -> CliResult<()> {
        let fail = |msg: String| Err(CliError::Config(msg));
        if self.steps == Some(0) {
            return fail("steps must be at least 1".into());
        }
        if self.segments == 0 || self.pool_size == 0 || self.dims == 0 || self.window == 0 {
            return fail("segments, pool_size, dims and window must be at least 1".into());
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return fail(format!("noise_std = {} must be finite and >= 0", self.noise_std));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return fail(format!("sigma = {} must be positive", self.sigma));
        }
        if self.a.is_some() != self.b.is_some() {
            return fail("a and b must be given together".into());
        }
        if self.horizons.is_empty() || self.horizons.contains(&0) {
            return fail("horizons must be a nonempty list of positive steps".into());
        }
        if self.verify_perturb.is_some_and(|f| !(f > 0.0 && f.is_finite())) {
            return fail("verify_perturb must be a positive factor".into());
        }
        let needs_alpha = matches!(self.scheme, SchemeChoice::FixedShare | SchemeChoice::DecayingPast);
        match (needs_alpha, self.alpha) {
            (true, None) => return fail("the chosen scheme needs alpha".into()),
            (false, Some(_)) => return fail("alpha is only used by fixed_share and decaying_past".into()),
            (true, Some(a)) if !(a > 0.0 && a < 1.0) => return fail(format!("alpha = {a} must lie in (0, 1)")),
            _ => {}
        }
        let mut names = vec![self.trace.as_str(), self.report.as_str(), self.summary.as_str()];
        names.extend(self.stream_out.iter().filter_map(|p| p.to_str()));
        if names.iter().collect::<BTreeSet<_>>().len() != names.len() {
            return fail("output file names must be distinct".into());
        }
        self.mixing_scheme().validate()?;
        Ok(())
    }

    pub fn mixing_scheme(&self) -> MixingScheme {
        let alpha = self.alpha.unwrap_or(0.0);
        match self.scheme {
            SchemeChoice::Gmpp => MixingScheme::Gmpp,
            SchemeChoice::Exponential => MixingScheme::Exponential,
            SchemeChoice::FixedShare => MixingScheme::FixedShare { alpha },
            SchemeChoice::UniformPast => MixingScheme::General(Arc::new(UniformPast)),
            SchemeChoice::DecayingPast => MixingScheme::General(Arc::new(DecayingPast { alpha })),
        }
    }
}
