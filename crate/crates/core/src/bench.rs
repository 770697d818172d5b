//! Corpus-wide runs and their summary tables.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::api::ApiSpec;
use crate::corpus::{load_source, source_files, CorpusError, Fixture, Manifest};
use crate::matching::{find_matchings, rank_candidates, UserSignature};
use crate::pipeline::{lift_program, CandidateCounts, FileReport, FunctionReport, PhaseTimings, PipelineConfig, Status};

pub const BENCH_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureResult {
    pub file: String,
    /// Target function, or every function when the corpus has no manifest.
    pub function: Option<String>,
    pub label: String,
    pub category: String,
    pub expected_api: Option<String>,
    pub expect_lift: Option<bool>,
    pub status: Status,
    pub lifted_api: Option<String>,
    pub params: usize,
    pub counts: Option<CandidateCounts>,
    pub winner_rank: Option<usize>,
    /// Position of the recorded binding in the uncapped ranked list.
    pub truth_rank: Option<usize>,
    pub binding_correct: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoryRow {
    pub label: String,
    pub category: String,
    pub total: usize,
    pub lifted: usize,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateRow {
    pub file: String,
    pub params: usize,
    pub raw: String,
    pub after_constraints: usize,
    pub after_cap: usize,
    pub reduction: f64,
    pub winner_rank: Option<usize>,
    pub truth_rank: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseRow {
    pub file: String,
    #[serde(flatten)]
    pub phases: PhaseTimings,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BenchTimings {
    pub phases: Vec<PhaseRow>,
    pub total_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub schema_version: u32,
    pub seed: u64,
    pub fixtures: Vec<FixtureResult>,
    pub categories: Vec<CategoryRow>,
    pub candidates: Vec<CandidateRow>,
    pub reports: Vec<FileReport>,
    pub timings: BenchTimings,
}

impl BenchReport {
    pub fn with_label<'a>(&'a self, label: &'a str) -> impl Iterator<Item = &'a FixtureResult> + 'a {
        self.fixtures.iter().filter(move |f| f.label == label)
    }
}

/// Fixture descriptions: from `manifest.json` when present, else one per source file.
fn fixtures(dir: &Path) -> Result<Vec<Option<Fixture>>, BenchError> {
    if dir.join("manifest.json").exists() {
        return Ok(Manifest::load(dir)?.fixtures.into_iter().map(Some).collect());
    }
    Ok(source_files(dir)?.iter().map(|_| None).collect())
}

fn relative(dir: &Path, p: &Path) -> String {
    p.strip_prefix(dir).unwrap_or(p).to_string_lossy().replace('\\', "/")
}

fn evaluate(fx: Option<&Fixture>, file: String, category: String, rep: &FileReport, cfg: &PipelineConfig, program: &crate::minilang::Program) -> FixtureResult {
    let target: Vec<&FunctionReport> = match fx {
        Some(fx) => rep.functions.iter().filter(|r| r.function == fx.function).collect(),
        None => rep.functions.iter().collect(),
    };
    let status = target.iter().map(|r| r.status).min().unwrap_or(Status::NoMatch);
    let lifted = target.iter().find(|r| r.status == Status::Lifted);
    let lifted_api = lifted.and_then(|r| r.manifest.as_ref()).map(|m| m.api.clone());
    let focus = lifted.copied().or_else(|| target.first().copied());
    let api_name = fx.and_then(|f| f.api.clone()).or_else(|| lifted_api.clone());
    let attempt = focus.and_then(|r| r.attempts.iter().find(|a| Some(&a.api) == api_name.as_ref()));
    let params = focus.and_then(|r| program.function(&r.function)).map_or(0, |f| f.params.len());
    let winner_rank = lifted.and_then(|r| r.manifest.as_ref()).map(|m| m.candidates.winner_rank);

    let mut truth_rank = None;
    let mut binding_correct = None;
    if let (Some(fx), Some(r)) = (fx, focus) {
        if !fx.binding.is_empty() {
            if let Some(m) = lifted.and_then(|r| r.manifest.as_ref()) {
                binding_correct = Some(m.api == fx.api.clone().unwrap_or_default() && same_pairs(m, &fx.binding));
            }
            let api = fx.api.as_ref().and_then(|a| cfg.apis.iter().find(|s| &s.name == a));
            if let (Some(api), Some(f)) = (api, program.function(&fx.function)) {
                truth_rank = truth_position(r, f, api, &fx.binding);
            }
        }
    }
    FixtureResult {
        file,
        function: fx.map(|f| f.function.clone()),
        label: fx.map_or_else(|| "unknown".to_string(), |f| f.label.clone()),
        category,
        expected_api: fx.and_then(|f| f.api.clone()),
        expect_lift: fx.map(|f| f.expect_lift),
        status,
        lifted_api,
        params,
        counts: attempt.and_then(|a| a.counts.clone()),
        winner_rank,
        truth_rank,
        binding_correct,
        error: None,
    }
}

fn same_pairs(m: &crate::rewriter::LiftManifest, truth: &BTreeMap<String, String>) -> bool {
    let got: BTreeMap<&str, &str> =
        m.arrays.iter().chain(&m.sizes).chain(&m.scalars).map(|(a, u)| (a.as_str(), u.as_str())).collect();
    got.len() == truth.len() && truth.iter().all(|(a, u)| got.get(a.as_str()) == Some(&u.as_str()))
}

fn truth_position(
    r: &FunctionReport,
    f: &crate::minilang::FunctionIR,
    api: &ApiSpec,
    truth: &BTreeMap<String, String>,
) -> Option<usize> {
    if r.liveness.is_empty() {
        return None;
    }
    let user = UserSignature::new(f, &r.liveness_report(), &r.dim_specs());
    let set = find_matchings(&user, api).ok()?;
    let ranked = rank_candidates(set.candidates, usize::MAX);
    ranked.candidates.iter().position(|c| c.same_as(truth)).map(|i| i + 1)
}

/// Lifts every fixture of the corpus at `dir` and tabulates the results.
pub fn run_corpus(dir: &Path, cfg: &PipelineConfig) -> Result<BenchReport, BenchError> {
    let start = Instant::now();
    let fxs = fixtures(dir)?;
    let files: Vec<PathBuf> = if dir.join("manifest.json").exists() {
        fxs.iter().map(|f| dir.join(&f.as_ref().expect("manifest fixture").file)).collect()
    } else {
        source_files(dir)?
    };
    let rows: Vec<(FixtureResult, Option<FileReport>)> = files
        .par_iter()
        .zip(fxs.par_iter())
        .map(|(path, fx)| {
            let file = relative(dir, path);
            let category = match fx {
                Some(fx) => fx.category.clone(),
                None => Path::new(&file).parent().map(|p| p.to_string_lossy().into_owned()).unwrap_or_default(),
            };
            match load_source(path) {
                Ok(program) => {
                    let mut out = lift_program(&program, cfg);
                    out.report.source = file.clone();
                    let res = evaluate(fx.as_ref(), file, category, &out.report, cfg, &program);
                    (res, Some(out.report))
                }
                Err(e) => (
                    FixtureResult {
                        file,
                        function: fx.as_ref().map(|f| f.function.clone()),
                        label: fx.as_ref().map_or_else(|| "unknown".to_string(), |f| f.label.clone()),
                        category,
                        expected_api: fx.as_ref().and_then(|f| f.api.clone()),
                        expect_lift: fx.as_ref().map(|f| f.expect_lift),
                        status: Status::AnalysisFailed,
                        lifted_api: None,
                        params: 0,
                        counts: None,
                        winner_rank: None,
                        truth_rank: None,
                        binding_correct: None,
                        error: Some(e.to_string()),
                    },
                    None,
                ),
            }
        })
        .collect();

    let mut categories: BTreeMap<(String, String), (usize, usize)> = BTreeMap::new();
    let mut candidates = Vec::new();
    let mut phases = Vec::new();
    let mut fixtures = Vec::new();
    let mut reports = Vec::new();
    for (res, rep) in rows {
        let e = categories.entry((res.label.clone(), res.category.clone())).or_default();
        e.0 += 1;
        e.1 += usize::from(res.status == Status::Lifted);
        if let Some(c) = &res.counts {
            candidates.push(CandidateRow {
                file: res.file.clone(),
                params: res.params,
                raw: c.raw.to_string(),
                after_constraints: c.after_constraints,
                after_cap: c.after_cap,
                reduction: c.raw as f64 / c.after_constraints.max(1) as f64,
                winner_rank: res.winner_rank,
                truth_rank: res.truth_rank,
            });
        }
        if let Some(rep) = rep {
            phases.push(PhaseRow { file: res.file.clone(), phases: rep.timings.clone() });
            reports.push(rep);
        }
        fixtures.push(res);
    }
    let categories = categories
        .into_iter()
        .map(|((label, category), (total, lifted))| CategoryRow {
            label,
            category,
            total,
            lifted,
            rate: lifted as f64 / total as f64,
        })
        .collect();
    Ok(BenchReport {
        schema_version: BENCH_SCHEMA_VERSION,
        seed: cfg.seed,
        fixtures,
        categories,
        candidates,
        reports,
        timings: BenchTimings { phases, total_ms: start.elapsed().as_secs_f64() * 1e3 },
    })
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T], header: &[&str]) -> Result<(), BenchError> {
    let mut w = csv::WriterBuilder::new().has_headers(!rows.is_empty()).from_path(path)?;
    if rows.is_empty() {
        w.write_record(header)?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|source| BenchError::Io { path: path.to_path_buf(), source })?;
    Ok(())
}

/// Writes `bench.json` plus `categories.csv`, `candidates.csv` and `phases.csv`.
pub fn write_tables(out: &Path, report: &BenchReport) -> Result<Vec<PathBuf>, BenchError> {
    std::fs::create_dir_all(out).map_err(|source| BenchError::Io { path: out.to_path_buf(), source })?;
    let json = out.join("bench.json");
    std::fs::write(&json, serde_json::to_string_pretty(report)? + "\n")
        .map_err(|source| BenchError::Io { path: json.clone(), source })?;
    let cat = out.join("categories.csv");
    write_csv(&cat, &report.categories, &["label", "category", "total", "lifted", "rate"])?;
    let cand = out.join("candidates.csv");
    write_csv(
        &cand,
        &report.candidates,
        &["file", "params", "raw", "after_constraints", "after_cap", "reduction", "winner_rank", "truth_rank"],
    )?;
    let ph = out.join("phases.csv");
    let mut w = csv::Writer::from_path(&ph)?;
    w.write_record(["file", "classify_ms", "liveness_ms", "dims_ms", "match_ms", "equivalence_ms", "rewrite_ms", "total_ms"])?;
    for r in &report.timings.phases {
        let p = &r.phases;
        let times = [p.classify_ms, p.liveness_ms, p.dims_ms, p.match_ms, p.equivalence_ms, p.rewrite_ms, p.total_ms];
        w.write_record(std::iter::once(r.file.clone()).chain(times.iter().map(|t| format!("{t:.3}"))))?;
    }
    w.flush().map_err(|source| BenchError::Io { path: ph.clone(), source })?;
    Ok(vec![json, cat, cand, ph])
}
