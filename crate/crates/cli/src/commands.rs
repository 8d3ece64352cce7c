//! `run`, `verify` and `sweep`.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use gmpp_core::evaluation::{
    mixloss_bound_current, mixloss_bound_past, proposition1_check, vanishing_regret_check, BoundCheck, RegretLedger,
};
use gmpp_core::math::Distribution;
use gmpp_core::oracle::BruteForceEngine;
use gmpp_core::{Engine, MixingScheme, WeightState};
use rayon::prelude::*;

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::experiment::{execute, prepare, report_json, trace_csv, RunOutcome, BOUND_TOLERANCE, LEDGER_TOLERANCE};
use crate::io::{fmt_f64, stream_to_csv, write_atomic};

/// Process exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exit {
    Ok = 0,
    Error = 1,
    Invariant = 2,
}

/// Longest horizon `verify` runs.
pub const VERIFY_MAX_STEPS: usize = 100;
/// Explicit experts held by the brute-force reference.
pub const VERIFY_UNIVERSE: usize = 10_000;
/// Largest accepted deviation between the engine and the reference.
pub const VERIFY_TOLERANCE: f64 = 1e-9;
/// Slack for the per-step mixloss bounds.
pub const STEP_BOUND_TOLERANCE: f64 = 1e-10;

pub fn load(config_path: &Path, seed: Option<u64>) -> CliResult<RunConfig> {
    let mut config = RunConfig::from_file(config_path)?;
    if let Some(seed) = seed {
        config.seed = seed;
        config.defaulted.retain(|k| k != "seed");
    }
    Ok(config)
}

fn create_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn write_run(out: &Path, config: &RunConfig, exp: &crate::experiment::Experiment, outcome: &RunOutcome) -> CliResult<()> {
    create_dir(out)?;
    if let Some(name) = &config.stream_out {
        write_atomic(&out.join(name), &stream_to_csv(&exp.stream)?)?;
    }
    write_atomic(&out.join(&config.trace), &trace_csv(exp, &outcome.records)?)?;
    write_atomic(&out.join(&config.report), &report_json(&outcome.report))
}

pub fn cmd_run(config_path: &Path, out: &Path, seed: Option<u64>) -> CliResult<Exit> {
    let config = load(config_path, seed)?;
    let exp = prepare(&config, None)?;
    let outcome = execute(&exp)?;
    write_run(out, &config, &exp, &outcome)?;
    let r = &outcome.report;
    println!(
        "T = {}  H_T = {}  M_T = {}  clamped = {}  invariants = {}",
        r.stream.horizon,
        r.totals.predictor_loss,
        r.totals.mixloss,
        r.stream.clamped_outcomes,
        if r.invariants.passed { "ok" } else { "VIOLATED" }
    );
    Ok(if r.invariants.passed { Exit::Ok } else { Exit::Invariant })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckLine {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckLine {
    fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }
}

pub fn render_table(lines: &[CheckLine]) -> String {
    let width = lines.iter().map(|l| l.name.len()).max().unwrap_or(0);
    let mut out = String::new();
    for l in lines {
        let verdict = if l.passed { "PASS" } else { "FAIL" };
        writeln!(out, "{:width$}  {verdict}  {}", l.name, l.detail).expect("writing to a string");
    }
    out
}

fn comparison_vectors(n: usize) -> Vec<Distribution> {
    let mut qs = vec![Distribution::finite(vec![(1, 1.0)]), Distribution::finite(vec![(n, 1.0)])];
    if n > 1 {
        qs.push(Distribution::finite(vec![(1, 0.5), (n, 0.25), (n + 3, 0.25)]));
    }
    qs.into_iter().map(|q| q.expect("valid comparison vector")).collect()
}

/// Runs the engine next to the brute-force reference and checks every
/// inequality that applies to the configured scheme.
pub fn verify_checks(config: &RunConfig) -> CliResult<Vec<CheckLine>> {
    let horizon = config.steps.unwrap_or(VERIFY_MAX_STEPS).min(VERIFY_MAX_STEPS);
    let exp = prepare(config, Some(horizon))?;
    if matches!(exp.engine.scheme, MixingScheme::General(_)) {
        return Err(CliError::Config("verify needs the exponential, fixed_share or gmpp scheme".into()));
    }
    let eta = exp.engine.eta;
    let mut engine = Engine::new(exp.engine.clone())?;
    let mut brute = BruteForceEngine::new(exp.engine.clone(), VERIFY_UNIVERSE)?;
    let prior = WeightState::default();
    let mut previous_posterior = prior.clone();
    let tamper_at = horizon / 2;

    let (mut forecast_dev, mut weight_dev, mut mixloss_dev) = (0f64, 0f64, 0f64);
    let (mut current_worst, mut past_worst) = (f64::INFINITY, f64::INFINITY);
    let mut records = Vec::with_capacity(horizon);
    for obs in &exp.stream {
        let mut weights = engine.weights().clone();
        let record = engine.step(obs)?;
        // predict moved the new expert out of the tail without changing any weight
        if weights.num_initialized() < record.num_experts() {
            weights.materialize_expert(record.num_experts())?;
        }
        let reference = brute.step(obs)?;
        forecast_dev = forecast_dev.max((record.gamma - reference.gamma).abs());
        mixloss_dev = mixloss_dev.max((record.mixloss - reference.mixloss).abs());

        let posterior = engine.last_posterior().expect("a round was observed").clone();
        let beta = exp.engine.scheme.coefficients(record.t - 1);
        // corrupted weights make the bounds unevaluable, which counts as failing
        let slack = |check: gmpp_core::Result<BoundCheck>| check.map_or(f64::NEG_INFINITY, |c| c.slack());
        for q in comparison_vectors(record.num_experts()) {
            let check = mixloss_bound_current(&q, &weights, &posterior, &record.expert_losses, record.predictor_loss, eta);
            current_worst = current_worst.min(slack(check));
            for (s, past) in [(0, &prior), (record.t - 1, &previous_posterior)] {
                if beta[s] > 0.0 {
                    let check = mixloss_bound_past(&q, &weights, past, beta[s], &posterior, &record.expert_losses, record.predictor_loss, eta);
                    past_worst = past_worst.min(slack(check));
                }
            }
        }
        previous_posterior = posterior;

        if record.t == tamper_at {
            if let Some(factor) = config.verify_perturb {
                engine.weights_mut().perturb_weight(1, factor);
            }
        }
        let w = engine.weights();
        for i in 1..=VERIFY_UNIVERSE {
            weight_dev = weight_dev.max((w.weight(i) - brute.weight(i)).abs());
        }
        let explicit_tail: f64 = (w.num_initialized() + 1..=VERIFY_UNIVERSE).map(|i| w.weight(i)).sum();
        weight_dev = weight_dev.max((w.tail_mass() - explicit_tail - brute.remainder()).abs());
        records.push(record);
    }
    let ledger = RegretLedger::from_records(&records);

    let sci = |v: f64| format!("{v:.3e}");
    let mut lines = vec![
        CheckLine::new("forecast matches brute force", forecast_dev <= VERIFY_TOLERANCE, format!("max deviation {}", sci(forecast_dev))),
        CheckLine::new("weights match brute force", weight_dev <= VERIFY_TOLERANCE, format!("max deviation {}", sci(weight_dev))),
        CheckLine::new("mixloss matches brute force", mixloss_dev <= VERIFY_TOLERANCE, format!("max deviation {}", sci(mixloss_dev))),
    ];
    let undominated = records.iter().filter(|r| !r.dominated()).count();
    lines.push(CheckLine::new("h_t <= m_t at every step", undominated == 0, format!("{undominated} violations")));
    let max_mass = records.iter().map(|r| r.mass_error).fold(0.0, f64::max);
    lines.push(CheckLine::new("weights sum to 1", records.iter().all(|r| r.mass_ok()), format!("max error {}", sci(max_mass))));
    lines.push(CheckLine::new(
        "H_T <= M_T",
        ledger.predictor_dominated(),
        format!("H_T = {} M_T = {}", fmt_f64(ledger.predictor_total()), fmt_f64(ledger.mixloss_total())),
    ));
    let consistency = ledger.consistency_error(&records);
    lines.push(CheckLine::new("ledger totals recount", consistency <= LEDGER_TOLERANCE, format!("max error {}", sci(consistency))));
    lines.push(CheckLine::new(
        "m_t bound via current weights",
        current_worst >= -STEP_BOUND_TOLERANCE,
        format!("min slack {}", sci(current_worst)),
    ));
    lines.push(CheckLine::new(
        "m_t bound via past posteriors",
        past_worst >= -STEP_BOUND_TOLERANCE,
        format!("min slack {}", sci(past_worst)),
    ));
    if matches!(exp.engine.scheme, MixingScheme::Exponential) {
        let (i, check) = proposition1_check(&ledger, eta)?;
        lines.push(CheckLine::new(
            "single-expert bound M_T <= L_i + ln(1/w_i)/eta",
            check.holds(BOUND_TOLERANCE),
            format!("tightest expert {i}, slack {}", sci(check.slack())),
        ));
    }
    let outcome = execute(&exp)?;
    for oracle in &outcome.report.oracles {
        if let Some(b) = &oracle.bound {
            let name = oracle.eligibility.name();
            if let (Some(stated), Some(holds)) = (b.stated, b.stated_holds) {
                lines.push(CheckLine::new(
                    format!("{} regret bound, stated ({name})", b.kind),
                    holds,
                    format!("regret {} <= {}", fmt_f64(oracle.regret), fmt_f64(stated)),
                ));
            }
            lines.push(CheckLine::new(
                format!("{} regret bound, recomputed ({name})", b.kind),
                b.recomputed_holds,
                format!("regret {} <= {}", fmt_f64(oracle.regret), fmt_f64(b.recomputed)),
            ));
        }
    }
    Ok(lines)
}

pub fn cmd_verify(config_path: &Path, seed: Option<u64>) -> CliResult<Exit> {
    let config = load(config_path, seed)?;
    let lines = verify_checks(&config)?;
    print!("{}", render_table(&lines));
    Ok(if lines.iter().all(|l| l.passed) { Exit::Ok } else { Exit::Invariant })
}

pub const SUMMARY_HEADER: &str = "T,H_T,M_T,L_T_E,regret,average_regret,bound_rhs,bound_recomputed,bound_holds,eligibility";

pub fn summary_csv(rows: &[(usize, &RunOutcome)], config: &RunConfig) -> Vec<u8> {
    let mut out = String::from(SUMMARY_HEADER);
    out.push('\n');
    let opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
    for (t, outcome) in rows {
        let r = &outcome.report;
        let o = r.oracle(config.eligibility);
        let b = o.bound.as_ref();
        let holds = b.map(|b| (b.recomputed_holds && b.stated_holds != Some(false)).to_string()).unwrap_or_default();
        writeln!(
            out,
            "{t},{},{},{},{},{},{},{},{holds},{}",
            fmt_f64(r.totals.predictor_loss),
            fmt_f64(r.totals.mixloss),
            fmt_f64(o.composite_loss),
            fmt_f64(o.regret),
            fmt_f64(o.average_regret),
            opt(b.and_then(|b| b.stated)),
            opt(b.map(|b| b.recomputed)),
            config.eligibility.name(),
        )
        .expect("writing to a string");
    }
    out.into_bytes()
}

pub fn horizon_dir(out: &Path, horizon: usize) -> PathBuf {
    out.join(format!("T{horizon}"))
}

pub fn cmd_sweep(config_path: &Path, out: &Path, seed: Option<u64>) -> CliResult<Exit> {
    let config = load(config_path, seed)?;
    let mut horizons = config.horizons.clone();
    horizons.sort_unstable();
    horizons.dedup();
    let experiments = horizons.iter().map(|&t| prepare(&config, Some(t))).collect::<CliResult<Vec<_>>>()?;
    let outcomes = experiments.par_iter().map(execute).collect::<CliResult<Vec<_>>>()?;
    for ((t, exp), outcome) in horizons.iter().zip(&experiments).zip(&outcomes) {
        write_run(&horizon_dir(out, *t), &config, exp, outcome)?;
    }
    let rows: Vec<(usize, &RunOutcome)> = horizons.iter().copied().zip(&outcomes).collect();
    write_atomic(&out.join(&config.summary), &summary_csv(&rows, &config))?;

    let series: Vec<(usize, f64, f64)> = rows
        .iter()
        .map(|(t, o)| (*t, o.report.totals.predictor_loss, o.report.oracle(config.eligibility).composite_loss))
        .collect();
    if let Ok(v) = vanishing_regret_check(&series) {
        let ratios: Vec<String> = v.average_regret.iter().map(|r| format!("{r:.5}")).collect();
        println!(
            "average regret by horizon: {}  non-increasing: {}",
            ratios.join(" "),
            if v.passed { "yes" } else { "no" }
        );
    }
    let ok = outcomes.iter().all(|o| o.report.invariants.passed && o.report.bounds_hold());
    println!("{} runs, invariants and bounds {}", outcomes.len(), if ok { "ok" } else { "VIOLATED" });
    Ok(if ok { Exit::Ok } else { Exit::Invariant })
}
