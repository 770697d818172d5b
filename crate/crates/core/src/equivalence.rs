//! Randomized IO-equivalence checking against API reference semantics.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{DimSpec, Liveness, SizeMap, SizeRules, LIVENESS_BUFFER_LEN};
use crate::api::{ApiParamKind, ApiSpec, Layout, Semantics};
use crate::exec::{Buffer, Engine, ExecStatus, InstrumentationPolicy, MemoryImage, DEFAULT_STEP_LIMIT};
use crate::matching::CandidateBinding;
use crate::minilang::{ElemType, FunctionIR, ParamKind};

pub const DEFAULT_NUM_TESTS: usize = 30;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceConfig {
    pub num_tests: usize,
    pub rel_tol_f32: f64,
    pub abs_tol_f32: f64,
    pub rel_tol_f64: f64,
    pub abs_tol_f64: f64,
    pub seed: u64,
    pub step_limit: u64,
}

impl Default for EquivalenceConfig {
    fn default() -> Self {
        EquivalenceConfig {
            num_tests: DEFAULT_NUM_TESTS,
            rel_tol_f32: 1e-4,
            abs_tol_f32: 1e-6,
            rel_tol_f64: 1e-9,
            abs_tol_f64: 1e-12,
            seed: 0,
            step_limit: DEFAULT_STEP_LIMIT,
        }
    }
}

impl EquivalenceConfig {
    pub fn with_seed(seed: u64) -> Self {
        EquivalenceConfig { seed, ..Self::default() }
    }

    /// Same config with every tolerance divided by `factor`.
    pub fn tightened(&self, factor: f64) -> Self {
        EquivalenceConfig {
            rel_tol_f32: self.rel_tol_f32 / factor,
            abs_tol_f32: self.abs_tol_f32 / factor,
            rel_tol_f64: self.rel_tol_f64 / factor,
            abs_tol_f64: self.abs_tol_f64 / factor,
            ..self.clone()
        }
    }

    /// (relative, absolute) tolerance for an element type.
    pub fn tolerance(&self, elem: ElemType) -> (f64, f64) {
        match elem {
            ElemType::F32 => (self.rel_tol_f32, self.abs_tol_f32),
            ElemType::F64 => (self.rel_tol_f64, self.abs_tol_f64),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    Equivalent,
    NotEquivalent,
    Inconclusive,
}

/// Sizes of the failing draw plus the worst element of the first mismatching output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Counterexample {
    pub test: usize,
    pub sizes: SizeMap,
    pub array: String,
    pub index: usize,
    pub expected: f64,
    pub actual: f64,
    pub max_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceVerdict {
    pub result: Verdict,
    pub tests_run: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub counterexample: Option<Counterexample>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
}

fn shape<T>(msg: impl Into<String>) -> Result<T, OracleError> {
    Err(OracleError::ShapeMismatch(msg.into()))
}

/// Size named `role` after affix stripping (`m`, `n`, `k`, `oh`, ...).
fn size_by_role(api: &ApiSpec, sizes: &BTreeMap<String, i64>, role: &str) -> Result<usize, OracleError> {
    let p = api
        .params
        .iter()
        .find(|p| p.kind == ApiParamKind::Int && api.normalize(&p.name) == role)
        .ok_or_else(|| OracleError::ShapeMismatch(format!("api has no `{role}` size")))?;
    match sizes.get(&p.name) {
        Some(v) if *v >= 1 => Ok(*v as usize),
        Some(v) => shape(format!("`{}` = {v}", p.name)),
        None => shape(format!("no value for `{}`", p.name)),
    }
}

fn extent(api: &ApiSpec, sizes: &BTreeMap<String, i64>, dims: &[String]) -> Result<Vec<usize>, OracleError> {
    dims.iter()
        .map(|d| match sizes.get(d) {
            Some(v) if *v >= 1 => Ok(*v as usize),
            _ => shape(format!("bad or missing size `{d}` in `{}`", api.name)),
        })
        .collect()
}

/// Output arrays of `api` computed in f64 from `inputs` (API array name → flat data).
/// Outputs start from their input contents, so elements outside the result are preserved.
pub fn reference_oracle(
    api: &ApiSpec,
    sizes: &BTreeMap<String, i64>,
    inputs: &BTreeMap<String, Vec<f64>>,
) -> Result<BTreeMap<String, Vec<f64>>, OracleError> {
    let arrays: Vec<_> = api.arrays().collect();
    let mut data = Vec::new();
    for a in &arrays {
        let ext = extent(api, sizes, &a.dims)?;
        let len: usize = ext.iter().product();
        let buf = inputs.get(&a.name).ok_or_else(|| OracleError::ShapeMismatch(format!("no input `{}`", a.name)))?;
        if buf.len() != len {
            return shape(format!("`{}` has {} elements, dims give {len}", a.name, buf.len()));
        }
        data.push((ext, buf.clone()));
    }
    match api.semantics {
        Semantics::Gemm => gemm_oracle(api, sizes, &arrays, &mut data)?,
        Semantics::Conv2d => conv_oracle(api, sizes, &mut data)?,
    }
    Ok(arrays
        .iter()
        .zip(data)
        .filter(|(a, _)| a.liveness.is_some_and(Liveness::is_output))
        .map(|(a, (_, d))| (a.name.clone(), d))
        .collect())
}

fn gemm_oracle(
    api: &ApiSpec,
    sizes: &BTreeMap<String, i64>,
    arrays: &[&crate::api::ApiParam],
    data: &mut [(Vec<usize>, Vec<f64>)],
) -> Result<(), OracleError> {
    if data.len() != 3 || data.iter().any(|(e, _)| e.len() != 2) {
        return shape("gemm needs three 2-d arrays");
    }
    let (m, n, k) = (size_by_role(api, sizes, "m")?, size_by_role(api, sizes, "n")?, size_by_role(api, sizes, "k")?);
    // logical (rows, cols) per operand; storage is [rows, ld] row-major or [cols, ld] col-major
    let logical = [(m, k), (k, n), (m, n)];
    for ((ext, _), (rows, cols)) in data.iter().zip(logical) {
        let (outer, inner) = match api.layout {
            Layout::RowMajor => (rows, cols),
            Layout::ColMajor => (cols, rows),
        };
        if ext[0] != outer || ext[1] < inner {
            return shape(format!("gemm operand dims {ext:?} do not hold a {rows}x{cols} matrix"));
        }
    }
    let at = |ext: &[usize], r: usize, c: usize| match api.layout {
        Layout::RowMajor => r * ext[1] + c,
        Layout::ColMajor => c * ext[1] + r,
    };
    let accumulate = arrays[2].liveness == Some(Liveness::LiveInOut);
    let (ea, a) = (&data[0].0, &data[0].1);
    let (eb, b) = (&data[1].0, &data[1].1);
    let ec = data[2].0.clone();
    let mut c = data[2].1.clone();
    for i in 0..m {
        for j in 0..n {
            let mut acc = 0.0f64;
            for p in 0..k {
                acc += a[at(ea, i, p)] * b[at(eb, p, j)];
            }
            let slot = &mut c[at(&ec, i, j)];
            *slot = if accumulate { *slot + acc } else { acc };
        }
    }
    data[2].1 = c;
    Ok(())
}

fn conv_oracle(api: &ApiSpec, sizes: &BTreeMap<String, i64>, data: &mut [(Vec<usize>, Vec<f64>)]) -> Result<(), OracleError> {
    if data.len() != 3 || data.iter().any(|(e, _)| e.len() != 4) {
        return shape("conv2d needs three 4-d arrays");
    }
    let role = |r| size_by_role(api, sizes, r);
    let (n, c, h, w) = (role("n")?, role("c")?, role("h")?, role("w")?);
    let (k, r, s, oh, ow) = (role("k")?, role("r")?, role("s")?, role("oh")?, role("ow")?);
    if h < r || w < s || oh != h - r + 1 || ow != w - s + 1 {
        return shape(format!("output {oh}x{ow} is not a valid {r}x{s} convolution of {h}x{w}"));
    }
    if data[0].0 != [n, c, h, w] || data[1].0 != [k, c, r, s] || data[2].0 != [n, k, oh, ow] {
        return shape("conv2d operand dims disagree with sizes");
    }
    let (inp, wt) = (&data[0].1, &data[1].1);
    let mut out = vec![0.0; n * k * oh * ow];
    for b in 0..n {
        for o in 0..k {
            for y in 0..oh {
                for x in 0..ow {
                    let mut acc = 0.0f64;
                    for ch in 0..c {
                        for dy in 0..r {
                            for dx in 0..s {
                                acc += inp[((b * c + ch) * h + y + dy) * w + x + dx] * wt[((o * c + ch) * r + dy) * s + dx];
                            }
                        }
                    }
                    out[((b * k + o) * oh + y) * ow + x] = acc;
                }
            }
        }
    }
    data[2].1 = out;
    Ok(())
}

fn draw_in(rules: &SizeRules, p: &str, v: i64, range: (i64, i64)) -> i64 {
    match rules.conform_down(p, v) {
        Some(d) if d >= range.0 => d,
        _ => rules.conform(p, v),
    }
}

/// `num` size draws over the user's int params. Free params take values from `range`
/// conformed to the hints; derived ones follow. The first draw uses pairwise-distinct
/// values where the range allows, so at least one draw is non-square.
pub fn sample_sizes(f: &FunctionIR, range: (i64, i64), num: usize, rng: &mut ChaCha8Rng) -> Result<Vec<SizeMap>, String> {
    let rules = SizeRules::of(f);
    let free: Vec<&str> =
        f.int_params().map(|p| p.name.as_str()).filter(|p| !rules.is_derived(p) && rules.fixed(p).is_none()).collect();
    let mut out = Vec::with_capacity(num);
    for t in 0..num {
        let mut sizes = SizeMap::new();
        let mut distinct: Vec<i64> = (range.0..=range.1).collect();
        distinct.shuffle(rng);
        for (i, p) in free.iter().enumerate() {
            let v = if t == 0 && distinct.len() >= free.len() { distinct[i] } else { rng.gen_range(range.0..=range.1) };
            sizes.insert(p.to_string(), draw_in(&rules, p, v, range));
        }
        for p in f.int_params() {
            if let Some(v) = rules.fixed(&p.name) {
                sizes.insert(p.name.clone(), v);
            }
        }
        rules.derive(&mut sizes)?;
        out.push(sizes);
    }
    Ok(out)
}

fn random_values(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    (0..len).map(|_| rng.gen_range(-1.0..=1.0)).collect()
}

/// One random memory image for `f`: bound arrays are sized by the API dims, other
/// arrays by their detected dims (or a generous default), scalars by `sizes`.
fn build_image(
    f: &FunctionIR,
    api_extents: &BTreeMap<String, usize>,
    user_dims: &[DimSpec],
    sizes: &SizeMap,
    rng: &mut ChaCha8Rng,
) -> MemoryImage {
    let mut img = MemoryImage::new();
    for p in &f.params {
        match p.kind() {
            ParamKind::Pointer => {
                let len = api_extents.get(&p.name).copied().unwrap_or_else(|| {
                    user_dims
                        .iter()
                        .find(|d| d.array == p.name)
                        .and_then(|d| d.extent(sizes))
                        .map_or(LIVENESS_BUFFER_LEN, |e| e.max(1) as usize)
                });
                let elem = p.element_type().expect("pointer has an element type");
                img = img.with_region(&p.name, Buffer::new(elem, random_values(rng, len)));
            }
            ParamKind::IntScalar => img = img.with_int(&p.name, sizes[&p.name]),
            ParamKind::FloatScalar => img = img.with_float(&p.name, rng.gen_range(-1.0..=1.0)),
        }
    }
    img
}

fn verdict(result: Verdict, tests_run: usize) -> EquivalenceVerdict {
    EquivalenceVerdict { result, tests_run, counterexample: None, reason: None }
}

type Expected = Result<BTreeMap<String, Vec<f64>>, (Verdict, String)>;

/// Shared trial loop: draws sizes and inputs, runs `f` on `engine`, and compares its
/// bound outputs (by user name) against what `reference` produces for the same image.
fn run_trials(
    engine: &Engine,
    f: &FunctionIR,
    user_dims: &[DimSpec],
    binding: &CandidateBinding,
    api: &ApiSpec,
    cfg: &EquivalenceConfig,
    reference: &mut dyn FnMut(&MemoryImage, &BTreeMap<String, i64>) -> Expected,
) -> EquivalenceVerdict {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let draws = match sample_sizes(f, api.size_range, cfg.num_tests, &mut rng) {
        Ok(d) => d,
        Err(e) => return EquivalenceVerdict { reason: Some(e), ..verdict(Verdict::Inconclusive, 0) },
    };
    for (t, user_sizes) in draws.iter().enumerate() {
        let mut api_sizes = BTreeMap::new();
        for p in api.params.iter().filter(|p| p.kind == ApiParamKind::Int) {
            match binding.user_for(&p.name).and_then(|u| user_sizes.get(u)) {
                Some(v) => api_sizes.insert(p.name.clone(), *v),
                None => {
                    let reason = format!("api size `{}` is not bound to a user int", p.name);
                    return EquivalenceVerdict { reason: Some(reason), ..verdict(Verdict::NotEquivalent, t) };
                }
            };
        }
        let mut api_extents = BTreeMap::new();
        for a in api.arrays() {
            let len = a.dims.iter().map(|d| api_sizes[d].max(0) as usize).product::<usize>();
            let user = binding.user_for(&a.name).unwrap_or(&a.name);
            api_extents.insert(user.to_string(), len.max(1));
        }
        let image = build_image(f, &api_extents, user_dims, user_sizes, &mut rng);
        let expected = match reference(&image, &api_sizes) {
            Ok(e) => e,
            Err((v, reason)) => return EquivalenceVerdict { reason: Some(reason), ..verdict(v, t + 1) },
        };
        let run = match engine.execute(&f.name, &image, &InstrumentationPolicy::plain(), cfg.step_limit) {
            Ok(r) => r,
            Err(e) => return EquivalenceVerdict { reason: Some(e.to_string()), ..verdict(Verdict::Inconclusive, t + 1) },
        };
        if run.status != ExecStatus::Normal {
            let reason = format!("run ended {:?}{}", run.status, run.fault.map(|m| format!(": {m}")).unwrap_or_default());
            return EquivalenceVerdict { reason: Some(reason), ..verdict(Verdict::Inconclusive, t + 1) };
        }
        let out = run.final_image.expect("normal run has an image");
        for (user, want) in &expected {
            let elem = f.param(user).and_then(|p| p.element_type()).unwrap_or(ElemType::F32);
            let (rel, abs) = cfg.tolerance(elem);
            let got = out.region(user).expect("bound output region");
            let mut worst: Option<(usize, f64)> = None;
            for (i, (g, w)) in got.iter().zip(want).enumerate() {
                let err = (g - w).abs();
                if !(err <= abs + rel * w.abs()) && worst.is_none_or(|(_, e)| err > e || err.is_nan()) {
                    worst = Some((i, err));
                }
            }
            if let Some((index, max_error)) = worst {
                let cx = Counterexample {
                    test: t,
                    sizes: user_sizes.clone(),
                    array: user.to_string(),
                    index,
                    expected: want[index],
                    actual: got[index],
                    max_error,
                };
                return EquivalenceVerdict { counterexample: Some(cx), ..verdict(Verdict::NotEquivalent, t + 1) };
            }
        }
    }
    verdict(Verdict::Equivalent, cfg.num_tests)
}

/// Runs `cfg.num_tests` random draws of `f` under `binding` against the API oracle.
pub fn check_equivalence(
    engine: &Engine,
    f: &FunctionIR,
    user_dims: &[DimSpec],
    binding: &CandidateBinding,
    api: &ApiSpec,
    cfg: &EquivalenceConfig,
) -> EquivalenceVerdict {
    run_trials(engine, f, user_dims, binding, api, cfg, &mut |image, api_sizes| {
        let api_inputs: BTreeMap<String, Vec<f64>> = api
            .arrays()
            .filter_map(|a| Some((a.name.clone(), image.region(binding.user_for(&a.name)?)?.to_vec())))
            .collect();
        let expected = reference_oracle(api, api_sizes, &api_inputs).map_err(|e| (Verdict::NotEquivalent, e.to_string()))?;
        Ok(expected
            .into_iter()
            .map(|(a, v)| (binding.user_for(&a).expect("bound output").to_string(), v))
            .collect())
    })
}

/// Compares `f` in the original program against `f` in the rewritten one on the
/// arrays bound to API outputs.
pub fn check_rewrite(
    original: &Engine,
    lifted: &Engine,
    f: &FunctionIR,
    user_dims: &[DimSpec],
    binding: &CandidateBinding,
    api: &ApiSpec,
    cfg: &EquivalenceConfig,
) -> EquivalenceVerdict {
    let outputs: Vec<String> = api
        .arrays()
        .filter(|a| a.liveness.is_some_and(Liveness::is_output))
        .filter_map(|a| binding.user_for(&a.name).map(str::to_string))
        .collect();
    run_trials(original, f, user_dims, binding, api, cfg, &mut |image, _| {
        let run = lifted
            .execute(&f.name, image, &InstrumentationPolicy::plain(), cfg.step_limit)
            .map_err(|e| (Verdict::NotEquivalent, e.to_string()))?;
        let out = match (run.status, run.final_image) {
            (ExecStatus::Normal, Some(img)) => img,
            (s, _) => return Err((Verdict::NotEquivalent, format!("rewritten run ended {s:?}: {}", run.fault.unwrap_or_default()))),
        };
        Ok(outputs.iter().filter_map(|u| Some((u.clone(), out.region(u)?.to_vec()))).collect())
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::path::Path;

    fn spec(name: &str) -> ApiSpec {
        ApiSpec::load(&Path::new(env!("CARGO_MANIFEST_DIR")).join(format!("../../specs/{name}.json"))).unwrap()
    }

    fn sizes(pairs: &[(&str, i64)]) -> BTreeMap<String, i64> {
        pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    fn arrays(pairs: &[(&str, Vec<f64>)]) -> BTreeMap<String, Vec<f64>> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()
    }

    #[test]
    fn gemm_oracle_examples() {
        let api = spec("gemm_rowmajor");
        let s = sizes(&[("tc_m", 2), ("tc_n", 2), ("tc_k", 2)]);
        let ident = arrays(&[
            ("tc_A", vec![1.0, 0.0, 0.0, 1.0]),
            ("tc_B", vec![5.0, 6.0, 7.0, 8.0]),
            ("tc_C", vec![9.0; 4]),
        ]);
        assert_eq!(reference_oracle(&api, &s, &ident).unwrap()["tc_C"], vec![5.0, 6.0, 7.0, 8.0]);
        let full = arrays(&[
            ("tc_A", vec![1.0, 2.0, 3.0, 4.0]),
            ("tc_B", vec![5.0, 6.0, 7.0, 8.0]),
            ("tc_C", vec![0.0; 4]),
        ]);
        assert_eq!(reference_oracle(&api, &s, &full).unwrap()["tc_C"], vec![19.0, 22.0, 43.0, 50.0]);
        // column-major storage of the same matrices yields the transposed layout of C
        let cm = spec("gemm_colmajor");
        let t = arrays(&[
            ("tc_A", vec![1.0, 3.0, 2.0, 4.0]),
            ("tc_B", vec![5.0, 7.0, 6.0, 8.0]),
            ("tc_C", vec![0.0; 4]),
        ]);
        assert_eq!(reference_oracle(&cm, &s, &t).unwrap()["tc_C"], vec![19.0, 43.0, 22.0, 50.0]);
        let acc = spec("gemm_rowmajor_acc");
        let mut a2 = full.clone();
        a2.insert("tc_C".into(), vec![1.0; 4]);
        assert_eq!(reference_oracle(&acc, &s, &a2).unwrap()["tc_C"], vec![20.0, 23.0, 44.0, 51.0]);
    }

    #[test]
    fn leading_dims_preserve_padding() {
        let api = spec("gemm_rowmajor_ld");
        let s = sizes(&[("tc_m", 1), ("tc_n", 1), ("tc_k", 2), ("tc_lda", 3), ("tc_ldb", 2), ("tc_ldc", 2)]);
        let a = arrays(&[("tc_A", vec![1.0, 2.0, 7.0]), ("tc_B", vec![3.0, 0.0, 4.0, 0.0]), ("tc_C", vec![0.0, 9.0])]);
        assert_eq!(reference_oracle(&api, &s, &a).unwrap()["tc_C"], vec![11.0, 9.0]);
        let short = sizes(&[("tc_m", 1), ("tc_n", 1), ("tc_k", 4), ("tc_lda", 3), ("tc_ldb", 2), ("tc_ldc", 2)]);
        assert!(reference_oracle(&api, &short, &a).is_err());
    }

    #[test]
    fn conv_oracle_example() {
        let api = spec("conv2d");
        let s = sizes(&[
            ("tc_n", 1),
            ("tc_c", 1),
            ("tc_h", 3),
            ("tc_w", 3),
            ("tc_k", 1),
            ("tc_r", 2),
            ("tc_s", 2),
            ("tc_oh", 2),
            ("tc_ow", 2),
        ]);
        let a = arrays(&[("tc_input", vec![1.0; 9]), ("tc_weight", vec![1.0; 4]), ("tc_output", vec![0.0; 4])]);
        assert_eq!(reference_oracle(&api, &s, &a).unwrap()["tc_output"], vec![4.0; 4]);
        let mut bad = s.clone();
        bad.insert("tc_oh".into(), 3);
        assert!(matches!(reference_oracle(&api, &bad, &a), Err(OracleError::ShapeMismatch(_))));
    }

    #[test]
    fn size_draws_respect_hints_and_vary() {
        let p = crate::minilang::parse_program(
            "//@ multiple_of k 4\n//@ derive h = m + 2\nfn f(m: i64, n: i64, k: i64, h: i64) -> void { }",
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let draws = sample_sizes(&p.functions[0], (2, 16), 30, &mut rng).unwrap();
        assert!(draws.iter().all(|d| d["k"] % 4 == 0 && d["h"] == d["m"] + 2 && (2..=16).contains(&d["m"])));
        for v in ["m", "n", "k"] {
            let distinct: std::collections::BTreeSet<i64> = draws.iter().map(|d| d[v]).collect();
            assert!(distinct.len() >= 3, "{v}: {distinct:?}");
        }
        assert!(draws[0]["m"] != draws[0]["n"]);
    }
}
