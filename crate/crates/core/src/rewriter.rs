//! Replaces matched function bodies with accelerator dispatch calls.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::api::{ApiParamKind, ApiSpec, Layout, Semantics};
use crate::analysis::Liveness;
use crate::equivalence::{reference_oracle, EquivalenceVerdict, Verdict};
use crate::exec::{Engine, ExternFn, Heap, Value};
use crate::matching::CandidateBinding;
use crate::minilang::resolve::is_dispatch;
use crate::minilang::{print_program, Expr, Program, Stmt};
use crate::profitability::{predict_backend, Backend, BlockedXpu, GemmBackend, NaiveCpu, SvmModel};

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictSummary {
    pub result: Verdict,
    pub tests_run: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassSummary {
    pub label: String,
    pub score: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateStats {
    pub raw: u128,
    /// Bindings surviving the liveness/dimension/output filters.
    pub pruned: usize,
    /// 1-based rank of the accepted binding.
    pub winner_rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiftManifest {
    pub function: String,
    pub api: String,
    pub semantics: Semantics,
    /// API parameter → user parameter.
    pub arrays: BTreeMap<String, String>,
    pub sizes: BTreeMap<String, String>,
    pub scalars: BTreeMap<String, String>,
    pub verdict: VerdictSummary,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classifier: Option<ClassSummary>,
    pub candidates: CandidateStats,
}

/// Everything lifted from one source file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestFile {
    pub schema_version: u32,
    pub source: String,
    pub lifted: Vec<LiftManifest>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RewriteError {
    #[error("api parameter `{0}` has no user binding")]
    BindingIncomplete(String),
    #[error("no function `{0}` in the program")]
    UnknownFunction(String),
    #[error("binding was not verified equivalent ({0:?})")]
    NotVerified(Verdict),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rewrite {
    pub program: Program,
    /// `None` when the function was already a dispatch call.
    pub manifest: Option<LiftManifest>,
    pub warnings: Vec<String>,
}

pub fn dispatch_name(semantics: Semantics) -> String {
    format!("atc_dispatch_{}", semantics.as_str())
}

/// True when the body is exactly one dispatch call.
pub fn is_lifted_body(body: &[Stmt]) -> bool {
    matches!(body, [Stmt::Call { name, .. }] if is_dispatch(name))
}

/// User arguments for each API parameter, in API order.
pub fn dispatch_args(binding: &CandidateBinding, api: &ApiSpec) -> Result<Vec<String>, RewriteError> {
    api.params
        .iter()
        .map(|p| binding.user_for(&p.name).map(str::to_string).ok_or_else(|| RewriteError::BindingIncomplete(p.name.clone())))
        .collect()
}

/// Replaces `fname`'s body with a dispatch call; other functions stay untouched.
pub fn rewrite(
    p: &Program,
    fname: &str,
    binding: &CandidateBinding,
    api: &ApiSpec,
    verdict: &EquivalenceVerdict,
    classifier: Option<ClassSummary>,
    candidates: CandidateStats,
) -> Result<Rewrite, RewriteError> {
    let idx = p.functions.iter().position(|f| f.name == fname).ok_or_else(|| RewriteError::UnknownFunction(fname.into()))?;
    if is_lifted_body(&p.functions[idx].body) {
        return Ok(Rewrite {
            program: p.clone(),
            manifest: None,
            warnings: vec![format!("`{fname}` is already a dispatch call; left unchanged")],
        });
    }
    if verdict.result != Verdict::Equivalent {
        return Err(RewriteError::NotVerified(verdict.result));
    }
    let args = dispatch_args(binding, api)?;
    let mut program = p.clone();
    program.functions[idx].body =
        vec![Stmt::Call { name: dispatch_name(api.semantics), args: args.iter().map(|a| Expr::var(a)).collect() }];
    let manifest = LiftManifest {
        function: fname.to_string(),
        api: api.name.clone(),
        semantics: api.semantics,
        arrays: binding.arrays.clone(),
        sizes: binding.sizes.clone(),
        scalars: binding.scalars.clone(),
        verdict: VerdictSummary { result: verdict.result, tests_run: verdict.tests_run },
        classifier,
        candidates,
    };
    Ok(Rewrite { program, manifest: Some(manifest), warnings: Vec::new() })
}

/// `<stem>.lifted.ml` and `<stem>.manifest.json` under `out_dir`.
pub fn output_paths(out_dir: &Path, source: &Path) -> (PathBuf, PathBuf) {
    let stem = source.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "out".into());
    (out_dir.join(format!("{stem}.lifted.ml")), out_dir.join(format!("{stem}.manifest.json")))
}

pub fn write_outputs(out_dir: &Path, source: &Path, program: &Program, lifted: &[LiftManifest]) -> std::io::Result<(PathBuf, PathBuf)> {
    std::fs::create_dir_all(out_dir)?;
    let (src, man) = output_paths(out_dir, source);
    std::fs::write(&src, print_program(program))?;
    let file = ManifestFile {
        schema_version: MANIFEST_SCHEMA_VERSION,
        source: source.display().to_string(),
        lifted: lifted.to_vec(),
    };
    std::fs::write(&man, serde_json::to_string_pretty(&file).expect("manifest serializes") + "\n")?;
    Ok((src, man))
}

/// Runtime implementation of the dispatch builtins: looks up the calling function's
/// API, asks the profitability model for a backend, and evaluates the call.
pub struct Dispatcher {
    by_function: BTreeMap<String, ApiSpec>,
    model: Option<SvmModel>,
    xpu: BlockedXpu,
    pub cpu_calls: AtomicU64,
    pub xpu_calls: AtomicU64,
}

impl Dispatcher {
    pub fn new(lifted: &[(String, ApiSpec)], model: Option<SvmModel>) -> Self {
        Dispatcher {
            by_function: lifted.iter().cloned().collect(),
            model,
            xpu: BlockedXpu { launch_overhead: std::time::Duration::ZERO, ..BlockedXpu::default() },
            cpu_calls: AtomicU64::new(0),
            xpu_calls: AtomicU64::new(0),
        }
    }

    /// Registers this dispatcher for every dispatch builtin on `engine`.
    pub fn install(self: &Arc<Self>, engine: &mut Engine) {
        for s in [Semantics::Gemm, Semantics::Conv2d] {
            engine.register_extern(&dispatch_name(s), self.clone());
        }
    }

    /// Sizes the profitability model sees: (m, n, k), with convolutions as implicit GEMM.
    fn gemm_shape(api: &ApiSpec, sizes: &BTreeMap<String, i64>) -> Option<[usize; 3]> {
        let role = |r: &str| {
            api.params
                .iter()
                .find(|p| p.kind == ApiParamKind::Int && api.normalize(&p.name) == r)
                .and_then(|p| sizes.get(&p.name))
                .map(|&v| v.max(1) as usize)
        };
        match api.semantics {
            Semantics::Gemm => Some([role("m")?, role("n")?, role("k")?]),
            Semantics::Conv2d => Some([
                role("n")? * role("oh")? * role("ow")?,
                role("k")?,
                role("c")? * role("r")? * role("s")?,
            ]),
        }
    }

    /// Plain row-major overwrite GEMM, the case the native backends implement.
    fn native_gemm(api: &ApiSpec) -> bool {
        api.semantics == Semantics::Gemm
            && api.layout == Layout::RowMajor
            && api.arrays().count() == 3
            && api.arrays().nth(2).is_some_and(|c| c.liveness == Some(Liveness::LiveOut))
            && api.params.iter().filter(|p| p.kind == ApiParamKind::Int).count() == 3
    }
}

impl ExternFn for Dispatcher {
    fn call(&self, caller: &str, args: &[Value], heap: &mut Heap) -> Result<(), String> {
        let api = self.by_function.get(caller).ok_or_else(|| format!("`{caller}` has no lift manifest"))?;
        if args.len() != api.params.len() {
            return Err(format!("dispatch for `{}` expects {} arguments, got {}", api.name, api.params.len(), args.len()));
        }
        let mut sizes = BTreeMap::new();
        let mut arrays = BTreeMap::new();
        for (p, v) in api.params.iter().zip(args) {
            match (p.kind, v) {
                (ApiParamKind::Int, Value::Int(i)) => {
                    sizes.insert(p.name.clone(), *i);
                }
                (ApiParamKind::Array, Value::Ptr(_)) => {
                    arrays.insert(p.name.clone(), *v);
                }
                (ApiParamKind::Float, Value::Float(_)) => {}
                _ => return Err(format!("dispatch argument for `{}` has the wrong kind", p.name)),
            }
        }
        let shape = Self::gemm_shape(api, &sizes).ok_or("dispatch sizes incomplete")?;
        let backend = self.model.as_ref().map_or(Backend::Cpu, |m| predict_backend(m, &shape).0);
        match backend {
            Backend::Cpu => self.cpu_calls.fetch_add(1, Ordering::Relaxed),
            Backend::Xpu => self.xpu_calls.fetch_add(1, Ordering::Relaxed),
        };
        let mut inputs = BTreeMap::new();
        for (name, v) in &arrays {
            inputs.insert(name.clone(), heap.read(*v)?);
        }
        if Self::native_gemm(api) {
            let order: Vec<&str> = api.arrays().map(|a| a.name.as_str()).collect();
            let [m, n, k] = shape;
            let a: Vec<f32> = inputs[order[0]].iter().map(|&v| v as f32).collect();
            let b: Vec<f32> = inputs[order[1]].iter().map(|&v| v as f32).collect();
            let mut c = vec![0.0f32; m * n];
            if a.len() == m * k && b.len() == k * n && inputs[order[2]].len() == m * n {
                let be: &dyn GemmBackend = match backend {
                    Backend::Cpu => &NaiveCpu,
                    Backend::Xpu => &self.xpu,
                };
                be.gemm(&a, &b, &mut c, m, n, k).map_err(|e| e.to_string())?;
                let out: Vec<f64> = c.iter().map(|&v| v as f64).collect();
                return heap.write(arrays[order[2]], &out);
            }
        }
        let outputs = reference_oracle(api, &sizes, &inputs).map_err(|e| e.to_string())?;
        for (name, data) in outputs {
            heap.write(arrays[&name], &data)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::minilang::{parse_program, print_function};

    const SRC: &str = "fn helper(x: i64) -> i64 { return x + 1; }
fn g(A: *f32, B: *f32, C: *f32, m: i64, n: i64, k: i64) -> void {
  for i in 0..m { for j in 0..n { let acc: f32 = 0.0;
    for p in 0..k { acc += A[i * k + p] * B[p * n + j]; }
    C[i * n + j] = acc; } } }";

    fn api() -> ApiSpec {
        ApiSpec::load(&Path::new(env!("CARGO_MANIFEST_DIR")).join("../../specs/gemm_rowmajor.json")).unwrap()
    }

    fn binding(skip: &str) -> CandidateBinding {
        let m = |pairs: &[(&str, &str)]| {
            pairs.iter().filter(|(a, _)| *a != skip).map(|(a, u)| (a.to_string(), u.to_string())).collect()
        };
        CandidateBinding {
            arrays: m(&[("tc_A", "A"), ("tc_B", "B"), ("tc_C", "C")]),
            sizes: m(&[("tc_m", "m"), ("tc_n", "n"), ("tc_k", "k")]),
            scalars: BTreeMap::new(),
            score: 0,
            provenance: 0,
        }
    }

    fn ok() -> EquivalenceVerdict {
        EquivalenceVerdict { result: Verdict::Equivalent, tests_run: 30, counterexample: None, reason: None }
    }

    #[test]
    fn body_becomes_one_dispatch_call() {
        let p = parse_program(SRC).unwrap();
        let r = rewrite(&p, "g", &binding(""), &api(), &ok(), None, CandidateStats::default()).unwrap();
        let g = r.program.function("g").unwrap();
        assert_eq!(print_function(g).lines().nth(1).unwrap().trim(), "atc_dispatch_gemm(A, B, C, m, n, k);");
        assert_eq!(r.program.function("helper"), p.function("helper"));
        assert_eq!(parse_program(&print_program(&r.program)).unwrap().functions, r.program.functions);
        let m = r.manifest.unwrap();
        assert_eq!(m.arrays["tc_B"], "B");
        assert_eq!(m.sizes.len() + m.arrays.len() + m.scalars.len(), api().params.len());

        let again = rewrite(&r.program, "g", &binding(""), &api(), &ok(), None, CandidateStats::default()).unwrap();
        assert_eq!(again.program, r.program);
        assert!(again.manifest.is_none() && again.warnings.len() == 1);
    }

    #[test]
    fn incomplete_or_unverified_bindings_are_refused() {
        let p = parse_program(SRC).unwrap();
        let e = rewrite(&p, "g", &binding("tc_k"), &api(), &ok(), None, CandidateStats::default());
        assert_eq!(e.unwrap_err(), RewriteError::BindingIncomplete("tc_k".into()));
        let bad = EquivalenceVerdict { result: Verdict::NotEquivalent, ..ok() };
        assert!(matches!(rewrite(&p, "g", &binding(""), &api(), &bad, None, CandidateStats::default()), Err(RewriteError::NotVerified(_))));
    }
}
