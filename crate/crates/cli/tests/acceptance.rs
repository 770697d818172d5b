//! Acceptance criteria 1 to 11. Each test prints one PASS/FAIL line to stderr.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::{Arc, Mutex, MutexGuard, OnceLock};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use liftc_core::analysis::{
    choose_probe_values, detect_dims, detect_liveness, DimSpec, Liveness, ProbePool,
};
use liftc_core::api::{load_spec_dir, Affix, ApiParam, ApiParamKind, ApiSpec, Layout, Semantics};
use liftc_core::bench::BenchReport;
use liftc_core::corpus::Manifest;
use liftc_core::equivalence::{check_rewrite, EquivalenceConfig, Verdict};
use liftc_core::exec::Engine;
use liftc_core::matching::{find_matchings, levenshtein, CandidateBinding, UserArray, UserSignature};
use liftc_core::minilang::{parse_named, print_program};
use liftc_core::pipeline::{lift_program, mask_timings, PipelineConfig, Status};
use liftc_core::profitability::{
    default_heldout_grid, default_training_grid, evaluate, sample_timings, train_svm, BlockedXpu, NaiveCpu, SvmHyper,
    SvmModel, DEFAULT_REPS,
};
use liftc_core::rewriter::Dispatcher;

const MATCH_RATE_GEMM: f64 = 0.80;
const MIN_GEMM_FIXTURES: usize = 25;
const MIN_GEMM_CATEGORIES: usize = 6;
const CORPUS_TIME_LIMIT: Duration = Duration::from_secs(600);
const MIN_OTHER_FIXTURES: usize = 20;
const MATCH_RATE_CONV: f64 = 0.60;
const MIN_CONV_FIXTURES: usize = 8;
const MATCHER_INSTANCES: usize = 200;
const LEVENSHTEIN_PAIRS: usize = 1000;
const REDUCTION_FACTOR: f64 = 10.0;
const REDUCTION_FIXTURES: usize = 5;
const TRUTH_TOP: usize = 10;
const TRUTH_SHARE: f64 = 0.70;
const SVM_ACCURACY: f64 = 0.95;
const SVM_LATENCY_MS: f64 = 0.3;
const REWRITE_TESTS: usize = 10;
const BENCH_SEED: &str = "7";

fn root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

/// Tests share one core; running them one at a time keeps timings honest.
fn serial() -> MutexGuard<'static, ()> {
    static LOCK: Mutex<()> = Mutex::new(());
    LOCK.lock().unwrap_or_else(|e| e.into_inner())
}

fn report(n: u32, name: &str, pass: bool, detail: String) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr(), "criterion {n:>2} [{verdict}] {name}: {detail}");
    assert!(pass, "criterion {n} ({name}) failed: {detail}");
}

struct BenchRun {
    report: BenchReport,
    masked: String,
    elapsed: Duration,
}

fn run_bench(out: &Path) -> BenchRun {
    let t = Instant::now();
    let o = Command::new(env!("CARGO_BIN_EXE_liftc"))
        .args(["bench", "corpus", "--seed", BENCH_SEED, "--out-dir"])
        .arg(out)
        .current_dir(root())
        .env_remove("LIFTC_SEED")
        .output()
        .expect("liftc runs");
    let elapsed = t.elapsed();
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(out.join("bench.json")).unwrap();
    let report: BenchReport = serde_json::from_str(&text).unwrap();
    let mut v: serde_json::Value = serde_json::from_str(&text).unwrap();
    mask_timings(&mut v);
    BenchRun { report, masked: serde_json::to_string(&v).unwrap(), elapsed }
}

fn corpus_run() -> &'static BenchRun {
    static RUN: OnceLock<BenchRun> = OnceLock::new();
    RUN.get_or_init(|| {
        let out = tempfile::tempdir().unwrap();
        run_bench(out.path())
    })
}

fn pct(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

#[test]
fn criterion_01_gemm_match_rate() {
    let _g = serial();
    let run = corpus_run();
    let gemm: Vec<_> = run.report.with_label("gemm").collect();
    let lifted = gemm.iter().filter(|f| f.status == Status::Lifted).count();
    let cats: BTreeSet<&str> = gemm.iter().map(|f| f.category.as_str()).collect();
    let rate = pct(lifted, gemm.len());
    let pass = gemm.len() >= MIN_GEMM_FIXTURES
        && cats.len() >= MIN_GEMM_CATEGORIES
        && rate >= MATCH_RATE_GEMM
        && run.elapsed < CORPUS_TIME_LIMIT;
    report(
        1,
        "GEMM match rate",
        pass,
        format!(
            "lifted {lifted}/{} = {:.1}% (need >= {:.0}%), {} categories (need >= {MIN_GEMM_CATEGORIES}), full corpus {:.1} s (limit {} s)",
            gemm.len(),
            rate * 100.0,
            MATCH_RATE_GEMM * 100.0,
            cats.len(),
            run.elapsed.as_secs_f64(),
            CORPUS_TIME_LIMIT.as_secs()
        ),
    );
}

#[test]
fn criterion_02_no_false_positives() {
    let _g = serial();
    let run = corpus_run();
    let other: Vec<_> = run.report.with_label("other").collect();
    let files: BTreeSet<&str> = other.iter().map(|f| f.file.as_str()).collect();
    // every function of every non-GEMM file counts, not just the fixture's entry point
    let lifted: Vec<String> = run
        .report
        .reports
        .iter()
        .filter(|r| files.contains(r.source.as_str()))
        .flat_map(|r| r.functions.iter().filter(|f| f.status == Status::Lifted).map(move |f| format!("{}:{}", r.source, f.function)))
        .collect();
    let pass = other.len() >= MIN_OTHER_FIXTURES && lifted.is_empty();
    report(
        2,
        "zero false positives",
        pass,
        format!("{} non-GEMM fixtures (need >= {MIN_OTHER_FIXTURES}), {} lifted (need 0) {lifted:?}", other.len(), lifted.len()),
    );
}

#[test]
fn criterion_03_conv_coverage() {
    let _g = serial();
    let run = corpus_run();
    let conv: Vec<_> = run.report.with_label("conv2d").collect();
    let lifted = conv.iter().filter(|f| f.status == Status::Lifted && f.lifted_api.as_deref() == Some("conv2d")).count();
    let rate = pct(lifted, conv.len());
    let pass = conv.len() >= MIN_CONV_FIXTURES && rate >= MATCH_RATE_CONV;
    report(
        3,
        "convolution coverage",
        pass,
        format!("lifted {lifted}/{} = {:.1}% (need >= {:.0}% of >= {MIN_CONV_FIXTURES})", conv.len(), rate * 100.0, MATCH_RATE_CONV * 100.0),
    );
}

type Binding = (BTreeMap<String, String>, BTreeMap<String, String>);

fn random_liveness(rng: &mut ChaCha8Rng) -> Liveness {
    [Liveness::LiveIn, Liveness::LiveOut, Liveness::LiveInOut][rng.gen_range(0..3)]
}

fn random_instance(rng: &mut ChaCha8Rng) -> (UserSignature, ApiSpec) {
    let n_sizes = rng.gen_range(1..=4);
    let n_api_arrays = rng.gen_range(1..=4);
    let sizes: Vec<String> = (0..n_sizes).map(|i| format!("y{i}")).collect();
    let mut params = Vec::new();
    let mut used = BTreeSet::new();
    for j in 0..n_api_arrays {
        let rank = rng.gen_range(1..=3);
        let dims: Vec<String> = (0..rank).map(|_| sizes[rng.gen_range(0..n_sizes)].clone()).collect();
        used.extend(dims.iter().cloned());
        let live = if j == 0 { Liveness::LiveOut } else { random_liveness(rng) };
        params.push(ApiParam { name: format!("a{j}"), kind: ApiParamKind::Array, liveness: Some(live), dims, element_type: None });
    }
    for s in sizes.iter().filter(|s| used.contains(*s)) {
        params.push(ApiParam { name: s.clone(), kind: ApiParamKind::Int, liveness: None, dims: Vec::new(), element_type: None });
    }
    let api = ApiSpec {
        name: "random".into(),
        affix: Affix::default(),
        layout: Layout::RowMajor,
        semantics: Semantics::Gemm,
        params,
        size_range: (2, 16),
    };

    let n_ints = rng.gen_range(1..=6);
    let ints: Vec<String> = (0..n_ints).map(|i| format!("x{i}")).collect();
    let n_user = rng.gen_range(n_api_arrays.max(1)..=5);
    let mut arrays: Vec<Option<UserArray>> = vec![None; n_user];
    if rng.gen_bool(0.6) {
        // plant a consistent copy of the API arrays
        let size_map: BTreeMap<&str, &String> = sizes.iter().map(|s| (s.as_str(), &ints[rng.gen_range(0..n_ints)])).collect();
        let mut slots: Vec<usize> = (0..n_user).collect();
        for a in api.arrays() {
            let slot = slots.remove(rng.gen_range(0..slots.len()));
            arrays[slot] = Some(UserArray {
                name: String::new(),
                liveness: a.liveness.unwrap(),
                dims: a.dims.iter().map(|d| size_map[d.as_str()].clone()).collect(),
            });
        }
    }
    let arrays = arrays
        .into_iter()
        .enumerate()
        .map(|(i, a)| {
            let mut a = a.unwrap_or_else(|| {
                let rank = rng.gen_range(0..=3);
                UserArray {
                    name: String::new(),
                    liveness: random_liveness(rng),
                    dims: (0..rank).map(|_| ints[rng.gen_range(0..n_ints)].clone()).collect(),
                }
            });
            a.name = format!("u{i}");
            a
        })
        .collect();
    (UserSignature { arrays, ints, floats: Vec::new() }, api)
}

/// Every injective API-array placement whose liveness, rank, size consistency and output role agree.
fn brute_force(user: &UserSignature, api: &ApiSpec) -> BTreeSet<Binding> {
    let api_arrays: Vec<&ApiParam> = api.arrays().collect();
    let mut out = BTreeSet::new();
    let mut chosen = Vec::new();
    fn go(depth: usize, user: &UserSignature, api_arrays: &[&ApiParam], chosen: &mut Vec<usize>, out: &mut BTreeSet<Binding>) {
        if depth == api_arrays.len() {
            let mut sizes: BTreeMap<String, String> = BTreeMap::new();
            for (a, &u) in api_arrays.iter().zip(chosen.iter()) {
                let ua = &user.arrays[u];
                if Some(ua.liveness) != a.liveness
                    || ua.liveness.is_output() != a.liveness.unwrap().is_output()
                    || ua.dims.len() != a.dims.len()
                {
                    return;
                }
                for (ad, ud) in a.dims.iter().zip(&ua.dims) {
                    if sizes.get(ad).is_some_and(|prev| prev != ud) {
                        return;
                    }
                    sizes.insert(ad.clone(), ud.clone());
                }
            }
            let arrays = api_arrays.iter().zip(chosen.iter()).map(|(a, &u)| (a.name.clone(), user.arrays[u].name.clone())).collect();
            out.insert((arrays, sizes));
            return;
        }
        for u in 0..user.arrays.len() {
            if !chosen.contains(&u) {
                chosen.push(u);
                go(depth + 1, user, api_arrays, chosen, out);
                chosen.pop();
            }
        }
    }
    go(0, user, &api_arrays, &mut chosen, &mut out);
    out
}

#[test]
fn criterion_04_matcher_equals_brute_force() {
    let _g = serial();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut mismatches = Vec::new();
    let mut nonempty = 0;
    for i in 0..MATCHER_INSTANCES {
        let (user, api) = random_instance(&mut rng);
        let want = brute_force(&user, &api);
        let got: BTreeSet<Binding> = match find_matchings(&user, &api) {
            Ok(set) => set.candidates.into_iter().map(|c| (c.arrays, c.sizes)).collect(),
            Err(_) => BTreeSet::new(),
        };
        nonempty += usize::from(!want.is_empty());
        if got != want {
            mismatches.push(i);
        }
    }
    report(
        4,
        "matcher vs brute force",
        mismatches.is_empty(),
        format!("{MATCHER_INSTANCES} instances ({nonempty} with matches), {} mismatches {mismatches:?}", mismatches.len()),
    );
}

/// Memoized recursion over suffixes, independent of the two-row implementation.
fn edit_distance_oracle(a: &[char], b: &[char]) -> usize {
    fn go(a: &[char], b: &[char], i: usize, j: usize, memo: &mut Vec<Vec<Option<usize>>>) -> usize {
        if let Some(v) = memo[i][j] {
            return v;
        }
        let v = if i == a.len() {
            b.len() - j
        } else if j == b.len() {
            a.len() - i
        } else {
            let sub = go(a, b, i + 1, j + 1, memo) + usize::from(a[i] != b[j]);
            let del = go(a, b, i + 1, j, memo) + 1;
            let ins = go(a, b, i, j + 1, memo) + 1;
            sub.min(del).min(ins)
        };
        memo[i][j] = Some(v);
        v
    }
    let mut memo = vec![vec![None; b.len() + 1]; a.len() + 1];
    go(a, b, 0, 0, &mut memo)
}

fn random_string(rng: &mut ChaCha8Rng) -> String {
    const ALPHABET: &[char] = &['a', 'b', 'c', 'd', '_', 'é', 'ß', '1'];
    let len = rng.gen_range(0..=12);
    (0..len).map(|_| ALPHABET[rng.gen_range(0..ALPHABET.len())]).collect()
}

#[test]
fn criterion_05_levenshtein_oracle_and_axioms() {
    let _g = serial();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut disagree, mut asym, mut ident, mut tri) = (0, 0, 0, 0);
    for _ in 0..LEVENSHTEIN_PAIRS {
        let (a, b, c) = (random_string(&mut rng), random_string(&mut rng), random_string(&mut rng));
        let d = levenshtein(&a, &b);
        let ac: Vec<char> = a.chars().collect();
        let bc: Vec<char> = b.chars().collect();
        disagree += usize::from(d != edit_distance_oracle(&ac, &bc));
        asym += usize::from(d != levenshtein(&b, &a));
        ident += usize::from(levenshtein(&a, &a) != 0 || ((d == 0) != (a == b)));
        tri += usize::from(levenshtein(&a, &c) > d + levenshtein(&b, &c));
    }
    let pass = disagree + asym + ident + tri == 0;
    report(
        5,
        "Levenshtein oracle",
        pass,
        format!("{LEVENSHTEIN_PAIRS} pairs: {disagree} oracle disagreements, {asym} symmetry, {ident} identity, {tri} triangle violations"),
    );
}

#[test]
fn criterion_06_candidate_reduction() {
    let _g = serial();
    let run = corpus_run();
    let wide: Vec<_> = run.report.fixtures.iter().filter(|f| f.params >= 6 && f.counts.is_some()).collect();
    let mut reduced = 0;
    let mut over_raw = Vec::new();
    for f in &wide {
        let c = f.counts.as_ref().unwrap();
        if c.after_cap as u128 > c.raw {
            over_raw.push(f.file.clone());
        }
        if c.raw as f64 / c.after_cap.max(1) as f64 >= REDUCTION_FACTOR {
            reduced += 1;
        }
    }
    let lifted: Vec<_> =
        run.report.fixtures.iter().filter(|f| f.status == Status::Lifted && f.expected_api.is_some()).collect();
    let top = lifted.iter().filter(|f| f.truth_rank.is_some_and(|r| r <= TRUTH_TOP)).count();
    let share = pct(top, lifted.len());
    let pass = reduced >= REDUCTION_FIXTURES && over_raw.is_empty() && share >= TRUTH_SHARE;
    report(
        6,
        "candidate reduction",
        pass,
        format!(
            "{reduced}/{} fixtures with >= 6 params reduced >= {REDUCTION_FACTOR}x (need {REDUCTION_FIXTURES}), ranked > raw on {over_raw:?}, truth in top {TRUTH_TOP} for {top}/{} = {:.1}% (need >= {:.0}%)",
            wide.len(),
            lifted.len(),
            share * 100.0,
            TRUTH_SHARE * 100.0
        ),
    );
}

#[test]
fn criterion_07_dimensions_exact() {
    let _g = serial();
    let dir = root().join("corpus");
    let m = Manifest::load(&dir).unwrap();
    let (mut checked, mut wrong) = (0, Vec::new());
    for fx in &m.fixtures {
        let p = fx.load_program(&dir).unwrap();
        let f = p.function(&fx.function).unwrap();
        let e = Engine::new(&p).unwrap();
        let (pools, rank) = if fx.label == "conv2d" {
            ([ProbePool::Conv, ProbePool::ConvAlt], 4)
        } else {
            ([ProbePool::Gemm, ProbePool::GemmAlt], 2)
        };
        for pool in pools {
            let probe = choose_probe_values(f, pool.values(), rank).unwrap();
            for (arr, want) in &fx.dims {
                let got = detect_dims(&e, f, arr, &probe, rank).ok().map(|d| d.spec.dims);
                checked += 1;
                if &got != want {
                    wrong.push(format!("{}:{arr}:{pool:?}", fx.file));
                }
            }
        }
    }
    report(7, "dimension detection", wrong.is_empty(), format!("{checked} array/probe-set checks, {} wrong {wrong:?}", wrong.len()));
}

#[test]
fn criterion_08_liveness_exact() {
    let _g = serial();
    let dir = root().join("corpus");
    let m = Manifest::load(&dir).unwrap();
    let (mut checked, mut wrong) = (0, Vec::new());
    for fx in &m.fixtures {
        let p = fx.load_program(&dir).unwrap();
        let f = p.function(&fx.function).unwrap();
        let e = Engine::new(&p).unwrap();
        for seed in [11, 97] {
            let live = detect_liveness(&e, f, seed).unwrap();
            for (arr, want) in &fx.liveness {
                checked += 1;
                if live.get(arr) != Some(*want) {
                    wrong.push(format!("{}:{arr}:seed{seed}", fx.file));
                }
            }
        }
    }
    report(8, "liveness detection", wrong.is_empty(), format!("{checked} array/seed checks, {} wrong {wrong:?}", wrong.len()));
}

#[test]
fn criterion_09_profitability_model() {
    let _g = serial();
    let (cpu, xpu) = (NaiveCpu, BlockedXpu::default());
    let train = sample_timings(&cpu, &xpu, &default_training_grid(), DEFAULT_REPS).unwrap();
    let model = train_svm(&train, &SvmHyper::default()).unwrap();
    let held = sample_timings(&cpu, &xpu, &default_heldout_grid(), DEFAULT_REPS).unwrap();
    let r = evaluate(&model, &train, &held);
    let roundtrip = SvmModel::from_json(&model.to_json()).unwrap() == model;
    let pass = r.accuracy >= SVM_ACCURACY && r.errors_in_band && r.median_latency_ms <= SVM_LATENCY_MS && roundtrip;
    report(
        9,
        "profitability SVM",
        pass,
        format!(
            "held-out {}/{} = {:.1}% (need >= {:.0}%), mispredicted {:?} all in crossover band: {}, median latency {:.4} ms (limit {SVM_LATENCY_MS} ms), training accuracy {:.3}",
            r.correct,
            r.total,
            r.accuracy * 100.0,
            SVM_ACCURACY * 100.0,
            r.mispredicted,
            r.errors_in_band,
            r.median_latency_ms,
            model.training_accuracy
        ),
    );
}

#[test]
fn criterion_10_rewrite_equivalence() {
    let _g = serial();
    let run = corpus_run();
    let dir = root().join("corpus");
    let apis = load_spec_dir(&root().join("specs")).unwrap();
    let model = SvmModel::load(&root().join("models/profitability.model.json")).ok();
    let cfg = PipelineConfig::new(apis.clone());
    let mut checked = 0;
    let mut failed = Vec::new();
    for fx in run.report.fixtures.iter().filter(|f| f.status == Status::Lifted) {
        let p = liftc_core::corpus::load_source(&dir.join(&fx.file)).unwrap();
        let out = lift_program(&p, &cfg);
        let Some(lifted) = out.program else {
            failed.push(format!("{}: not lifted on rerun", fx.file));
            continue;
        };
        // the emitted text, not the in-memory program, is what gets checked
        let reparsed = parse_named(&print_program(&lifted), "lifted.ml").unwrap();
        let pairs: Vec<(String, ApiSpec)> = out
            .manifests
            .iter()
            .map(|m| (m.function.clone(), apis.iter().find(|a| a.name == m.api).unwrap().clone()))
            .collect();
        let dispatcher = Arc::new(Dispatcher::new(&pairs, model.clone()));
        let mut lifted_engine = Engine::new(&reparsed).unwrap();
        dispatcher.install(&mut lifted_engine);
        let original = Engine::new(&p).unwrap();
        for m in &out.manifests {
            let rep = out.report.functions.iter().find(|r| r.function == m.function).unwrap();
            let dims: Vec<DimSpec> = rep.dim_specs();
            let binding = CandidateBinding {
                arrays: m.arrays.clone(),
                sizes: m.sizes.clone(),
                scalars: m.scalars.clone(),
                score: 0,
                provenance: 0,
            };
            let api = apis.iter().find(|a| a.name == m.api).unwrap();
            let ecfg = EquivalenceConfig { num_tests: REWRITE_TESTS, ..EquivalenceConfig::with_seed(0xF2E5) };
            let v = check_rewrite(&original, &lifted_engine, p.function(&m.function).unwrap(), &dims, &binding, api, &ecfg);
            checked += 1;
            if v.result != Verdict::Equivalent || v.tests_run != REWRITE_TESTS {
                failed.push(format!("{}:{} {:?}", fx.file, m.function, v.result));
            }
        }
    }
    let pass = checked > 0 && failed.is_empty();
    report(
        10,
        "post-rewrite equivalence",
        pass,
        format!("{checked} lifted functions re-checked on {REWRITE_TESTS} fresh tests, {} failures {failed:?}", failed.len()),
    );
}

#[test]
fn criterion_11_bench_determinism() {
    let _g = serial();
    let first = corpus_run();
    let out = tempfile::tempdir().unwrap();
    let second = run_bench(out.path());
    let same = first.masked == second.masked;
    let first_diff = first.masked.bytes().zip(second.masked.bytes()).position(|(a, b)| a != b);
    report(
        11,
        "bench determinism",
        same,
        format!(
            "two `liftc bench --seed {BENCH_SEED}` runs, {} bytes after masking timings, identical: {same} (first difference at {first_diff:?})",
            first.masked.len()
        ),
    );
}
