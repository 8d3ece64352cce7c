//! Stream preparation, engine execution and the run report.

use gmpp_core::datagen::{generate_stream, make_schedule, GeneratorPool, SegmentSchedule};
use gmpp_core::evaluation::{
    bound_rhs, bound_rhs_fixed_share, bound_rhs_recomputed, composite_oracle, entropy_term, entropy_upper,
    fixed_share_check, proposition1_check, CompositeSegment, Eligibility, RegretLedger,
};
use gmpp_core::experts::Observation;
use gmpp_core::{Engine, EngineConfig, MixingScheme, OutcomeRange, StepRecord};
use serde::Serialize;

use crate::config::{RunConfig, DEFAULT_STEPS};
use crate::error::{CliError, CliResult};
use crate::io::fmt_f64;

/// Tolerance for the cumulative bound comparisons.
pub const BOUND_TOLERANCE: f64 = 1e-8;
/// Tolerance for the ledger recount.
pub const LEDGER_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StreamSource {
    Synthetic,
    Imported,
}

/// Everything needed to run the engine once.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: RunConfig,
    pub source: StreamSource,
    pub pool: Option<GeneratorPool>,
    pub schedule: SegmentSchedule,
    pub stream: Vec<Observation>,
    pub engine: EngineConfig,
}

fn imported_range(stream: &[Observation]) -> CliResult<OutcomeRange> {
    let lo = stream.iter().map(|o| o.y).fold(f64::INFINITY, f64::min);
    let hi = stream.iter().map(|o| o.y).fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if lo < hi { (lo, hi) } else { (lo - 0.5, hi + 0.5) };
    Ok(OutcomeRange::new(lo, hi)?)
}

/// Builds the stream and engine settings, optionally overriding the horizon.
pub fn prepare(config: &RunConfig, horizon: Option<usize>) -> CliResult<Experiment> {
    config.validate()?;
    let (source, pool, schedule, stream, default_range) = match &config.stream_in {
        Some(path) => {
            let mut stream = crate::io::read_stream(path)?;
            let dims = stream[0].x.len();
            let dims_given = !config.defaulted.iter().any(|k| k == "dims");
            if dims_given && dims != config.dims {
                return Err(CliError::Config(format!("dims = {} but the stream has {dims} signal columns", config.dims)));
            }
            let t = horizon.or(config.steps).unwrap_or(stream.len());
            if t > stream.len() {
                return Err(CliError::Config(format!("horizon {t} exceeds the {} imported rows", stream.len())));
            }
            stream.truncate(t);
            let schedule = SegmentSchedule::equal_split(t, config.segments.min(t))?;
            let range = imported_range(&stream)?;
            (StreamSource::Imported, None, schedule, stream, range)
        }
        None => {
            let t = horizon.or(config.steps).unwrap_or(DEFAULT_STEPS);
            let pool = GeneratorPool::random(config.pool_size, config.dims, config.noise_std, config.signal, config.seed)?;
            let schedule = make_schedule(t, config.segments, config.pool_size, config.seed)?;
            let stream = generate_stream(&pool, &schedule, config.seed)?;
            let range = pool.default_range()?;
            (StreamSource::Synthetic, Some(pool), schedule, stream, range)
        }
    };
    let range = match (config.a, config.b) {
        (Some(a), Some(b)) => OutcomeRange::new(a, b)?,
        _ => default_range,
    };
    let dims = stream[0].x.len();
    let mut engine = EngineConfig::new(range, dims, config.window, config.sigma);
    if let Some(eta) = config.eta {
        engine.eta = eta;
    }
    engine.experts.intercept = config.fit_intercept;
    engine.scheme = config.mixing_scheme();
    engine.max_experts = config.max_experts;
    engine.validate()?;
    Ok(Experiment {
        config: config.clone(),
        source,
        pool,
        schedule,
        stream,
        engine,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StreamInfo {
    pub source: StreamSource,
    pub horizon: usize,
    pub dims: usize,
    pub segment_boundaries: Vec<usize>,
    pub generator_ids: Vec<usize>,
    pub generator_vectors: Option<Vec<Vec<f64>>>,
    pub range: [f64; 2],
    pub eta: f64,
    pub scheme: &'static str,
    pub clamped_outcomes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Totals {
    pub predictor_loss: f64,
    pub mixloss: f64,
    pub experts_initialized: usize,
    pub best_expert: usize,
    pub best_expert_loss: f64,
    pub best_expert_regret: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Invariants {
    pub domination_violations: usize,
    pub max_domination_gap: f64,
    pub mass_violations: usize,
    pub max_mass_error: f64,
    pub cumulative_domination: bool,
    pub ledger_consistency_error: f64,
    pub passed: bool,
}

/// The composite-expert regret bound that applies to the run's scheme.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundReport {
    pub kind: &'static str,
    /// As stated, with exact prior entropy terms; `None` when `T <= k + 1`.
    pub stated: Option<f64>,
    /// As stated, with every entropy term replaced by its `ln(T+1)` upper form.
    pub stated_upper_entropy: Option<f64>,
    /// Rebuilt step by step for this composite expert.
    pub recomputed: f64,
    pub stated_holds: Option<bool>,
    pub recomputed_holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleReport {
    pub eligibility: Eligibility,
    pub composite_loss: f64,
    pub switches: usize,
    pub segments: Vec<CompositeSegment>,
    pub any_fallback: bool,
    pub regret: f64,
    pub average_regret: f64,
    pub entropy_terms_exact: Vec<f64>,
    pub entropy_terms_upper: Vec<f64>,
    pub bound: Option<BoundReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SingleExpertReport {
    pub tightest_expert: usize,
    pub mixloss: f64,
    pub bound: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FinalWeights {
    pub top: Vec<(usize, f64)>,
    pub tail_mass: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub config: RunConfig,
    pub stream: StreamInfo,
    pub totals: Totals,
    pub invariants: Invariants,
    pub oracles: Vec<OracleReport>,
    pub single_expert: Option<SingleExpertReport>,
    pub final_weights: FinalWeights,
}

impl RunReport {
    pub fn oracle(&self, eligibility: Eligibility) -> &OracleReport {
        self.oracles
            .iter()
            .find(|o| o.eligibility == eligibility)
            .expect("both eligibility rules are always reported")
    }

    /// Every composite bound that applies holds.
    pub fn bounds_hold(&self) -> bool {
        let composite = self.oracles.iter().filter_map(|o| o.bound.as_ref()).all(|b| b.recomputed_holds && b.stated_holds != Some(false));
        composite && self.single_expert.as_ref().is_none_or(|s| s.holds)
    }
}

pub struct RunOutcome {
    pub records: Vec<StepRecord>,
    pub ledger: RegretLedger,
    pub report: RunReport,
}

fn oracle_report(exp: &Experiment, records: &[StepRecord], ledger: &RegretLedger, eligibility: Eligibility) -> CliResult<OracleReport> {
    let horizon = records.len();
    let eta = exp.engine.eta;
    let composite = composite_oracle(records, &exp.schedule, eligibility)?;
    let pieces = composite.pieces();
    let k = composite.switches();
    let entropy_terms_exact = pieces[1..].iter().map(|p| entropy_term(p.2)).collect::<Result<Vec<f64>, _>>()?;
    let entropy_terms_upper = vec![entropy_upper(horizon); k];
    let regret = ledger.predictor_total() - composite.total_loss;
    let stated_bound = |terms: &[f64]| bound_rhs(horizon, k, eta, terms).ok();
    let bound = match exp.engine.scheme {
        MixingScheme::Gmpp => {
            let stated = stated_bound(&entropy_terms_exact);
            let recomputed = bound_rhs_recomputed(&composite, eta)?;
            Some(BoundReport {
                kind: "gmpp",
                stated,
                stated_upper_entropy: stated_bound(&entropy_terms_upper),
                recomputed,
                stated_holds: stated.map(|b| regret <= b + BOUND_TOLERANCE),
                recomputed_holds: regret <= recomputed + BOUND_TOLERANCE,
            })
        }
        MixingScheme::FixedShare { alpha } => {
            let stated = bound_rhs_fixed_share(horizon, k, eta, alpha).ok();
            let check = fixed_share_check(&exp.engine, &exp.stream, &pieces)?;
            let recomputed = check.rhs - composite.total_loss;
            Some(BoundReport {
                kind: "fixed_share",
                stated,
                stated_upper_entropy: stated,
                recomputed,
                stated_holds: stated.map(|b| regret <= b + BOUND_TOLERANCE),
                recomputed_holds: check.holds(BOUND_TOLERANCE) && ledger.predictor_dominated(),
            })
        }
        _ => None,
    };
    Ok(OracleReport {
        eligibility,
        composite_loss: composite.total_loss,
        switches: k,
        any_fallback: composite.any_fallback(),
        segments: composite.segments,
        regret,
        average_regret: regret / horizon as f64,
        entropy_terms_exact,
        entropy_terms_upper,
        bound,
    })
}

/// Runs the engine over the prepared stream and evaluates the run.
pub fn execute(exp: &Experiment) -> CliResult<RunOutcome> {
    let mut engine = Engine::new(exp.engine.clone())?;
    let records = exp.stream.iter().map(|o| engine.step(o)).collect::<Result<Vec<_>, _>>()?;
    let ledger = RegretLedger::from_records(&records);

    let invariants = {
        let domination_violations = records.iter().filter(|r| !r.dominated()).count();
        let mass_violations = records.iter().filter(|r| !r.mass_ok()).count();
        let ledger_consistency_error = ledger.consistency_error(&records);
        let cumulative_domination = ledger.predictor_dominated();
        Invariants {
            domination_violations,
            max_domination_gap: records.iter().map(|r| r.predictor_loss - r.mixloss).fold(f64::NEG_INFINITY, f64::max),
            mass_violations,
            max_mass_error: records.iter().map(|r| r.mass_error).fold(0.0, f64::max),
            cumulative_domination,
            ledger_consistency_error,
            passed: domination_violations == 0
                && mass_violations == 0
                && cumulative_domination
                && ledger_consistency_error <= LEDGER_TOLERANCE,
        }
    };

    let (best_expert, best_expert_loss) = ledger
        .expert_totals()
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |best, (k, &l)| if l < best.1 { (k + 1, l) } else { best });
    let totals = Totals {
        predictor_loss: ledger.predictor_total(),
        mixloss: ledger.mixloss_total(),
        experts_initialized: ledger.num_experts(),
        best_expert,
        best_expert_loss,
        best_expert_regret: ledger.predictor_total() - best_expert_loss,
    };

    let oracles = [Eligibility::InitializedBeforeSegment, Eligibility::InitializedBySegmentEnd]
        .into_iter()
        .map(|e| oracle_report(exp, &records, &ledger, e))
        .collect::<CliResult<Vec<_>>>()?;

    let single_expert = match exp.engine.scheme {
        MixingScheme::Exponential => {
            let (i, check) = proposition1_check(&ledger, exp.engine.eta)?;
            Some(SingleExpertReport {
                tightest_expert: i,
                mixloss: check.lhs,
                bound: check.rhs,
                holds: check.holds(BOUND_TOLERANCE) && ledger.predictor_dominated(),
            })
        }
        _ => None,
    };

    let range = exp.engine.range;
    let last = records.last().expect("streams are nonempty");
    let report = RunReport {
        config: exp.config.clone(),
        stream: StreamInfo {
            source: exp.source,
            horizon: records.len(),
            dims: exp.engine.dim,
            segment_boundaries: exp.schedule.boundaries().to_vec(),
            generator_ids: exp.schedule.generator_ids().to_vec(),
            generator_vectors: exp.pool.as_ref().map(|p| p.weight_vectors().to_vec()),
            range: [range.lower(), range.upper()],
            eta: exp.engine.eta,
            scheme: exp.engine.scheme.name(),
            clamped_outcomes: ledger.clamp_count(),
        },
        totals,
        invariants,
        oracles,
        single_expert,
        final_weights: FinalWeights {
            top: last.top_weights.clone(),
            tail_mass: last.tail_mass,
        },
    };
    Ok(RunOutcome { records, ledger, report })
}

pub const TRACE_HEADER: &str = "t,segment_id,generator_id,y,gamma,h_t,m_t,H_t,M_t,tail_mass,top1_expert,top1_weight,clamped_flag";

/// One row per step.
pub fn trace_csv(exp: &Experiment, records: &[StepRecord]) -> CliResult<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let to_err = |e: csv::Error| CliError::Stream {
        path: "<trace>".into(),
        message: e.to_string(),
    };
    w.write_record(TRACE_HEADER.split(',')).map_err(to_err)?;
    let (mut h, mut m) = (0.0, 0.0);
    for r in records {
        h += r.predictor_loss;
        m += r.mixloss;
        let segment = exp.schedule.segment_of(r.t).expect("records follow the schedule");
        let (top_id, top_w) = r.top_weights.first().copied().unwrap_or((0, 0.0));
        w.write_record([
            r.t.to_string(),
            segment.to_string(),
            exp.schedule.generator_ids()[segment].to_string(),
            fmt_f64(r.y),
            fmt_f64(r.gamma),
            fmt_f64(r.predictor_loss),
            fmt_f64(r.mixloss),
            fmt_f64(h),
            fmt_f64(m),
            fmt_f64(r.tail_mass),
            top_id.to_string(),
            fmt_f64(top_w),
            u8::from(r.clamped).to_string(),
        ])
        .map_err(to_err)?;
    }
    w.into_inner().map_err(|e| CliError::Stream {
        path: "<trace>".into(),
        message: e.to_string(),
    })
}

pub fn report_json(report: &RunReport) -> Vec<u8> {
    let mut bytes = serde_json::to_vec_pretty(report).expect("reports serialize");
    bytes.push(b'\n');
    bytes
}
