//! End-to-end lifting: classify, analyse, match, verify, rewrite.

use std::collections::BTreeMap;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{
    choose_probe_values, detect_dims_with_limit, detect_liveness, AnalysisError, DimSpec, LivenessReport, ParamLiveness, ProbePool,
};
use crate::api::{ApiSpec, Semantics};
use crate::classifier::{extract_features_in, ClassifierModel};
use crate::equivalence::{check_equivalence, check_rewrite, Counterexample, EquivalenceConfig, Verdict};
use crate::exec::{Engine, DEFAULT_STEP_LIMIT};
use crate::matching::{find_matchings, rank_candidates, CandidateBinding, UserSignature, DEFAULT_CANDIDATE_CAP};
use crate::minilang::{FunctionIR, Program};
use crate::profitability::SvmModel;
use crate::rewriter::{
    is_lifted_body, rewrite, CandidateStats, ClassSummary, Dispatcher, LiftManifest, VerdictSummary,
};

pub const REPORT_SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_BUDGET: Duration = Duration::from_secs(600);
pub const REWRITE_TESTS: usize = 10;
/// Step limit for dimension probes; a probe that runs longer yields no dimensions.
pub const PROBE_STEP_LIMIT: u64 = 2_000_000;
const REWRITE_SEED_MIX: u64 = 0x9E37_79B9_7F4A_7C15;

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub apis: Vec<ApiSpec>,
    pub classifier: Option<ClassifierModel>,
    pub profitability: Option<SvmModel>,
    pub max_candidates: usize,
    pub budget: Duration,
    pub num_tests: usize,
    pub rewrite_tests: usize,
    pub seed: u64,
    pub step_limit: u64,
    pub probe_step_limit: u64,
}

impl PipelineConfig {
    pub fn new(apis: Vec<ApiSpec>) -> Self {
        PipelineConfig {
            apis,
            classifier: None,
            profitability: None,
            max_candidates: DEFAULT_CANDIDATE_CAP,
            budget: DEFAULT_BUDGET,
            num_tests: crate::equivalence::DEFAULT_NUM_TESTS,
            rewrite_tests: REWRITE_TESTS,
            seed: 0,
            step_limit: DEFAULT_STEP_LIMIT,
            probe_step_limit: PROBE_STEP_LIMIT,
        }
    }

    fn equivalence(&self) -> EquivalenceConfig {
        EquivalenceConfig { num_tests: self.num_tests, seed: self.seed, step_limit: self.step_limit, ..Default::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Status {
    Lifted,
    NoMatch,
    TooManyCandidates,
    Misclassified,
    AnalysisFailed,
}

impl Status {
    pub const ALL: [Status; 5] =
        [Status::Lifted, Status::NoMatch, Status::TooManyCandidates, Status::Misclassified, Status::AnalysisFailed];
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateCounts {
    pub raw: u128,
    pub after_constraints: usize,
    pub after_cap: usize,
    pub truncated: bool,
    /// More user arrays than API arrays; assignments are k-permutations.
    pub k_permutations: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateVerdict {
    /// 1-based position in the ranked list.
    pub rank: usize,
    pub binding: CandidateBinding,
    pub result: Verdict,
    pub tests_run: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub counterexample: Option<Counterexample>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiAttempt {
    pub api: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub counts: Option<CandidateCounts>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub verdicts: Vec<CandidateVerdict>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseTimings {
    pub classify_ms: f64,
    pub liveness_ms: f64,
    pub dims_ms: f64,
    pub match_ms: f64,
    pub equivalence_ms: f64,
    pub rewrite_ms: f64,
    pub total_ms: f64,
}

impl PhaseTimings {
    fn add(&mut self, o: &PhaseTimings) {
        self.classify_ms += o.classify_ms;
        self.liveness_ms += o.liveness_ms;
        self.dims_ms += o.dims_ms;
        self.match_ms += o.match_ms;
        self.equivalence_ms += o.equivalence_ms;
        self.rewrite_ms += o.rewrite_ms;
        self.total_ms += o.total_ms;
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FunctionTimings {
    #[serde(flatten)]
    pub phases: PhaseTimings,
    /// Equivalence time per evaluated candidate, in attempt order.
    pub candidates_ms: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionReport {
    pub function: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub class: Option<ClassSummary>,
    pub liveness: Vec<ParamLiveness>,
    /// `None` for arrays without a dimension tuple.
    pub dims: BTreeMap<String, Option<Vec<String>>>,
    pub attempts: Vec<ApiAttempt>,
    pub status: Status,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest: Option<LiftManifest>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rewrite_check: Option<VerdictSummary>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
    pub timings: FunctionTimings,
}

impl FunctionReport {
    fn new(f: &FunctionIR) -> Self {
        FunctionReport {
            function: f.name.clone(),
            class: None,
            liveness: Vec::new(),
            dims: BTreeMap::new(),
            attempts: Vec::new(),
            status: Status::NoMatch,
            reason: None,
            manifest: None,
            rewrite_check: None,
            warnings: Vec::new(),
            timings: FunctionTimings::default(),
        }
    }

    fn finish(mut self, status: Status, reason: Option<String>, start: Instant) -> Self {
        self.status = status;
        self.reason = reason;
        self.timings.phases.total_ms = ms(start.elapsed());
        self
    }

    pub fn dim_specs(&self) -> Vec<DimSpec> {
        self.dims
            .iter()
            .filter_map(|(a, d)| d.as_ref().map(|d| DimSpec { array: a.clone(), dims: d.clone() }))
            .collect()
    }

    pub fn liveness_report(&self) -> LivenessReport {
        LivenessReport { params: self.liveness.clone() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileReport {
    pub schema_version: u32,
    pub source: String,
    pub functions: Vec<FunctionReport>,
    pub lifted: usize,
    pub timings: PhaseTimings,
}

/// Report plus the rewritten program, when anything was lifted.
#[derive(Debug, Clone)]
pub struct LiftOutcome {
    pub report: FileReport,
    pub program: Option<Program>,
    pub manifests: Vec<LiftManifest>,
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

fn pool_for(s: Semantics) -> ProbePool {
    match s {
        Semantics::Gemm => ProbePool::Gemm,
        Semantics::Conv2d => ProbePool::Conv,
    }
}

struct Winner {
    binding: CandidateBinding,
    api: ApiSpec,
    stats: CandidateStats,
    verdict: crate::equivalence::EquivalenceVerdict,
}

/// Dimension analysis of every pointer parameter for one probe pool.
fn analyse_dims(
    engine: &Engine,
    f: &FunctionIR,
    pool: ProbePool,
    max_rank: usize,
    step_limit: u64,
) -> Result<BTreeMap<String, Option<Vec<String>>>, AnalysisError> {
    let probe = choose_probe_values(f, pool.values(), max_rank)?;
    let mut out = BTreeMap::new();
    for p in f.pointer_params() {
        let d = match detect_dims_with_limit(engine, f, &p.name, &probe, max_rank, step_limit) {
            Ok(d) => Some(d.spec.dims),
            Err(AnalysisError::NoDimsFound(_)) | Err(AnalysisError::AnalysisInconclusive(_)) => None,
            Err(e) => return Err(e),
        };
        out.insert(p.name.clone(), d);
    }
    Ok(out)
}

fn process_function(engine: &Engine, program: &Program, f: &FunctionIR, cfg: &PipelineConfig) -> (FunctionReport, Option<Winner>) {
    let start = Instant::now();
    let mut rep = FunctionReport::new(f);
    let over_budget = |start: &Instant| start.elapsed() > cfg.budget;

    if is_lifted_body(&f.body) {
        rep.warnings.push("already a dispatch call".into());
        return (rep.finish(Status::NoMatch, Some("already lifted".into()), start), None);
    }

    let t = Instant::now();
    let mut semantics: Vec<Semantics> = cfg.apis.iter().map(|a| a.semantics).collect();
    semantics.sort();
    semantics.dedup();
    if let Some(model) = &cfg.classifier {
        let (label, score) = model.classify(&extract_features_in(program, f));
        rep.class = Some(ClassSummary { label: label.clone(), score });
        rep.timings.phases.classify_ms = ms(t.elapsed());
        semantics.retain(|s| s.as_str() == label);
        if semantics.is_empty() {
            return (rep.finish(Status::Misclassified, Some(format!("classified as `{label}`")), start), None);
        }
    }

    let t = Instant::now();
    let liveness = match detect_liveness(engine, f, cfg.seed) {
        Ok(l) => l,
        Err(e) => {
            rep.timings.phases.liveness_ms = ms(t.elapsed());
            return (rep.finish(Status::AnalysisFailed, Some(e.to_string()), start), None);
        }
    };
    rep.timings.phases.liveness_ms = ms(t.elapsed());
    rep.liveness = liveness.params.clone();

    let eq_cfg = cfg.equivalence();
    let mut any_truncated = false;
    for sem in semantics {
        let apis: Vec<&ApiSpec> = cfg.apis.iter().filter(|a| a.semantics == sem).collect();
        let max_rank = apis.iter().flat_map(|a| a.arrays().map(|p| p.dims.len())).max().unwrap_or(1);
        let t = Instant::now();
        let dims = analyse_dims(engine, f, pool_for(sem), max_rank, cfg.probe_step_limit);
        rep.timings.phases.dims_ms += ms(t.elapsed());
        let dims = match dims {
            Ok(d) => d,
            Err(e) => return (rep.finish(Status::AnalysisFailed, Some(e.to_string()), start), None),
        };
        rep.dims = dims;
        let user = UserSignature::new(f, &liveness, &rep.dim_specs());

        let t = Instant::now();
        let mut matched: Vec<(&ApiSpec, _)> = apis.into_iter().map(|api| (api, find_matchings(&user, api))).collect();
        // layouts and variants of one semantics compete: the API with the closest-named binding goes first
        matched.sort_by_key(|(_, m)| {
            m.as_ref().ok().and_then(|s| s.candidates.iter().map(|c| c.score).min()).unwrap_or(usize::MAX)
        });
        rep.timings.phases.match_ms += ms(t.elapsed());
        for (api, matched) in matched {
            if over_budget(&start) {
                return (rep.finish(Status::TooManyCandidates, Some("time budget exhausted".into()), start), None);
            }
            let t = Instant::now();
            let mut attempt = ApiAttempt { api: api.name.clone(), counts: None, error: None, verdicts: Vec::new() };
            let set = match matched {
                Ok(s) => s,
                Err(e) => {
                    attempt.error = Some(e.to_string());
                    rep.attempts.push(attempt);
                    continue;
                }
            };
            let ranked = rank_candidates(set.candidates, cfg.max_candidates);
            rep.timings.phases.match_ms += ms(t.elapsed());
            attempt.counts = Some(CandidateCounts {
                raw: set.raw,
                after_constraints: ranked.total,
                after_cap: ranked.candidates.len(),
                truncated: ranked.truncated,
                k_permutations: set.k_permutations,
            });
            any_truncated |= ranked.truncated;
            let dims = rep.dim_specs();
            let batch = rayon::current_num_threads().max(1);
            for (c, chunk) in ranked.candidates.chunks(batch).enumerate() {
                if over_budget(&start) {
                    rep.attempts.push(attempt);
                    return (rep.finish(Status::TooManyCandidates, Some("time budget exhausted".into()), start), None);
                }
                let results: Vec<_> = chunk
                    .par_iter()
                    .map(|cand| {
                        let t = Instant::now();
                        let v = check_equivalence(engine, f, &dims, cand, api, &eq_cfg);
                        (v, ms(t.elapsed()))
                    })
                    .collect();
                // later candidates in the chunk are dropped so the report does not depend on the pool size
                for (j, (cand, (v, dt))) in chunk.iter().zip(results).enumerate() {
                    let rank = c * batch + j + 1;
                    rep.timings.phases.equivalence_ms += dt;
                    rep.timings.candidates_ms.push(dt);
                    attempt.verdicts.push(CandidateVerdict {
                        rank,
                        binding: cand.clone(),
                        result: v.result,
                        tests_run: v.tests_run,
                        reason: v.reason.clone(),
                        counterexample: v.counterexample.clone(),
                    });
                    if v.result == Verdict::Equivalent {
                        rep.attempts.push(attempt);
                        let stats = CandidateStats { raw: set.raw, pruned: ranked.total, winner_rank: rank };
                        let w = Winner { binding: cand.clone(), api: api.clone(), stats, verdict: v };
                        rep.timings.phases.total_ms = ms(start.elapsed());
                        return (rep, Some(w));
                    }
                }
            }
            rep.attempts.push(attempt);
        }
    }
    let (status, reason) = if any_truncated {
        (Status::TooManyCandidates, Some(format!("no equivalent binding among the top {} candidates", cfg.max_candidates)))
    } else {
        (Status::NoMatch, None)
    };
    (rep.finish(status, reason, start), None)
}

/// Runs the pipeline over every function of `program`, rewriting the lifted ones.
pub fn lift_program(program: &Program, cfg: &PipelineConfig) -> LiftOutcome {
    let start = Instant::now();
    let mut report = FileReport {
        schema_version: REPORT_SCHEMA_VERSION,
        source: program.source_name.clone(),
        functions: Vec::new(),
        lifted: 0,
        timings: PhaseTimings::default(),
    };
    let engine = match Engine::new(program) {
        Ok(e) => e,
        Err(e) => {
            for f in &program.functions {
                let mut r = FunctionReport::new(f);
                r.status = Status::AnalysisFailed;
                r.reason = Some(e.to_string());
                report.functions.push(r);
            }
            return LiftOutcome { report, program: None, manifests: Vec::new() };
        }
    };
    let results: Vec<(FunctionReport, Option<Winner>)> =
        program.functions.par_iter().map(|f| process_function(&engine, program, f, cfg)).collect();

    let mut rewritten = program.clone();
    let mut pending = Vec::new();
    let mut reports = Vec::new();
    for (mut rep, win) in results {
        if let Some(w) = win {
            let t = Instant::now();
            match rewrite(&rewritten, &rep.function, &w.binding, &w.api, &w.verdict, rep.class.clone(), w.stats.clone()) {
                Ok(r) => {
                    rep.warnings.extend(r.warnings);
                    rewritten = r.program;
                    if let Some(m) = r.manifest {
                        pending.push((reports.len(), w.binding, w.api, m));
                    }
                }
                Err(e) => {
                    rep.status = Status::NoMatch;
                    rep.reason = Some(e.to_string());
                }
            }
            let dt = ms(t.elapsed());
            rep.timings.phases.rewrite_ms += dt;
            rep.timings.phases.total_ms += dt;
        }
        reports.push(rep);
    }

    let mut manifests = Vec::new();
    if !pending.is_empty() {
        let t = Instant::now();
        let lifted: Vec<(String, ApiSpec)> = pending.iter().map(|(i, _, api, _)| (reports[*i].function.clone(), api.clone())).collect();
        let dispatcher = Arc::new(Dispatcher::new(&lifted, cfg.profitability.clone()));
        let checked = Engine::new(&rewritten).map(|mut e| {
            dispatcher.install(&mut e);
            e
        });
        let share = ms(t.elapsed()) / pending.len() as f64;
        for (i, binding, api, manifest) in pending {
            let t = Instant::now();
            let rep = &mut reports[i];
            let f = program.function(&rep.function).expect("function exists");
            let rcfg = EquivalenceConfig {
                num_tests: cfg.rewrite_tests,
                seed: cfg.seed ^ REWRITE_SEED_MIX,
                ..cfg.equivalence()
            };
            let v = match &checked {
                Ok(lifted_engine) => check_rewrite(&engine, lifted_engine, f, &rep.dim_specs(), &binding, &api, &rcfg),
                Err(e) => crate::equivalence::EquivalenceVerdict {
                    result: Verdict::NotEquivalent,
                    tests_run: 0,
                    counterexample: None,
                    reason: Some(e.to_string()),
                },
            };
            rep.rewrite_check = Some(VerdictSummary { result: v.result, tests_run: v.tests_run });
            if v.result == Verdict::Equivalent {
                rep.status = Status::Lifted;
                rep.manifest = Some(manifest.clone());
                manifests.push(manifest);
            } else {
                rep.status = Status::NoMatch;
                rep.reason = Some(format!("rewritten function disagrees with the original: {}", v.reason.unwrap_or_default()));
            }
            let dt = share + ms(t.elapsed());
            rep.timings.phases.rewrite_ms += dt;
            rep.timings.phases.total_ms += dt;
        }
    }

    report.lifted = reports.iter().filter(|r| r.status == Status::Lifted).count();
    for r in &reports {
        report.timings.add(&r.timings.phases);
    }
    report.timings.total_ms = ms(start.elapsed());
    report.functions = reports;
    // a rewrite whose check failed must not leak into the emitted program
    let program_out = if manifests.is_empty() {
        None
    } else {
        let mut p = program.clone();
        for m in &manifests {
            let src = rewritten.function(&m.function).expect("rewritten function").clone();
            let slot = p.functions.iter_mut().find(|f| f.name == m.function).expect("function exists");
            *slot = src;
        }
        Some(p)
    };
    LiftOutcome { report, program: program_out, manifests }
}

/// Removes every `timings` member, recursively, for run-to-run comparison.
pub fn mask_timings(v: &mut serde_json::Value) {
    match v {
        serde_json::Value::Object(m) => {
            m.remove("timings");
            m.values_mut().for_each(mask_timings);
        }
        serde_json::Value::Array(a) => a.iter_mut().for_each(mask_timings),
        _ => {}
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::minilang::parse_program;
    use std::path::Path;

    fn apis(names: &[&str]) -> Vec<ApiSpec> {
        names
            .iter()
            .map(|n| ApiSpec::load(&Path::new(env!("CARGO_MANIFEST_DIR")).join(format!("../../specs/{n}.json"))).unwrap())
            .collect()
    }

    #[test]
    fn naive_gemm_lifts_and_helpers_do_not() {
        let src = "fn scale(x: *f32, n: i64) -> void { for i in 0..n { x[i] = x[i] * 2.0; } }
fn mm(A: *f32, B: *f32, C: *f32, m: i64, n: i64, k: i64) -> void {
  for i in 0..m { for j in 0..n { let acc: f32 = 0.0;
    for p in 0..k { acc += A[i * k + p] * B[p * n + j]; }
    C[i * n + j] = acc; } } }";
        let p = parse_program(src).unwrap();
        let out = lift_program(&p, &PipelineConfig::new(apis(&["gemm_rowmajor", "gemm_colmajor"])));
        let r = &out.report;
        assert_eq!(r.lifted, 1);
        assert_eq!(r.functions[0].status, Status::NoMatch);
        let mm = &r.functions[1];
        assert_eq!(mm.status, Status::Lifted, "{mm:?}");
        assert_eq!(mm.rewrite_check.as_ref().unwrap().result, Verdict::Equivalent);
        assert_eq!(mm.manifest.as_ref().unwrap().api, "gemm_rowmajor");
        let lifted = out.program.unwrap();
        assert!(is_lifted_body(&lifted.function("mm").unwrap().body));
        assert_eq!(lifted.function("scale"), p.function("scale"));

        // the lifted program itself is left alone on a second pass
        let again = lift_program(&lifted, &PipelineConfig::new(apis(&["gemm_rowmajor"])));
        assert_eq!(again.report.lifted, 0);
        assert!(!again.report.functions[1].warnings.is_empty());
    }

    #[test]
    fn masking_drops_every_timing_subtree() {
        let mut v = serde_json::json!({"a": 1, "timings": {"x": 2}, "f": [{"timings": 3, "b": 4}]});
        mask_timings(&mut v);
        assert_eq!(v, serde_json::json!({"a": 1, "f": [{"b": 4}]}));
    }
}
