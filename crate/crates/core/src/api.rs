//! Declarative accelerator API descriptions.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::Liveness;
use crate::minilang::ElemType;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Layout {
    RowMajor,
    ColMajor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Semantics {
    Gemm,
    Conv2d,
}

impl Semantics {
    pub fn as_str(self) -> &'static str {
        match self {
            Semantics::Gemm => "gemm",
            Semantics::Conv2d => "conv2d",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Affix {
    #[serde(default)]
    pub prefix: String,
    #[serde(default)]
    pub suffix: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ApiParamKind {
    Array,
    Int,
    Float,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiParam {
    pub name: String,
    pub kind: ApiParamKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub liveness: Option<Liveness>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub dims: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub element_type: Option<ElemType>,
}

fn default_size_range() -> (i64, i64) {
    (2, 16)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiSpec {
    pub name: String,
    #[serde(default)]
    pub affix: Affix,
    pub layout: Layout,
    pub semantics: Semantics,
    pub params: Vec<ApiParam>,
    /// Inclusive range sampled for each free size during equivalence testing.
    #[serde(default = "default_size_range")]
    pub size_range: (i64, i64),
}

#[derive(Debug, Error)]
pub enum ApiSpecError {
    #[error("cannot read `{path}`: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("malformed api spec `{path}`: {source}")]
    Json { path: String, source: serde_json::Error },
    #[error("invalid api spec `{name}`: {msg}")]
    Invalid { name: String, msg: String },
}

impl ApiSpec {
    pub fn load(path: &Path) -> Result<Self, ApiSpecError> {
        let shown = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|source| ApiSpecError::Io { path: shown.clone(), source })?;
        let spec: ApiSpec = serde_json::from_str(&text).map_err(|source| ApiSpecError::Json { path: shown, source })?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_json(text: &str) -> Result<Self, ApiSpecError> {
        let spec: ApiSpec =
            serde_json::from_str(text).map_err(|source| ApiSpecError::Json { path: "<inline>".into(), source })?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), ApiSpecError> {
        let bad = |msg: String| Err(ApiSpecError::Invalid { name: self.name.clone(), msg });
        let mut names = BTreeSet::new();
        for p in &self.params {
            if !names.insert(p.name.as_str()) {
                return bad(format!("duplicate parameter `{}`", p.name));
            }
        }
        for a in self.arrays() {
            if a.dims.is_empty() {
                return bad(format!("array `{}` has no dims", a.name));
            }
            if a.liveness.is_none() {
                return bad(format!("array `{}` has no liveness", a.name));
            }
            for d in &a.dims {
                if !self.params.iter().any(|p| &p.name == d && p.kind == ApiParamKind::Int) {
                    return bad(format!("dim `{d}` of `{}` is not an int parameter", a.name));
                }
            }
        }
        if !self.arrays().any(|a| a.liveness.is_some_and(Liveness::is_output)) {
            return bad("no output array".into());
        }
        if self.size_range.0 < 1 || self.size_range.0 > self.size_range.1 {
            return bad(format!("bad size range {:?}", self.size_range));
        }
        Ok(())
    }

    pub fn param(&self, name: &str) -> Option<&ApiParam> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn arrays(&self) -> impl Iterator<Item = &ApiParam> {
        self.params.iter().filter(|p| p.kind == ApiParamKind::Array)
    }

    /// Int params referenced by some array's dims, in parameter order.
    pub fn size_params(&self) -> Vec<&ApiParam> {
        let used: BTreeSet<&str> = self.arrays().flat_map(|a| a.dims.iter().map(String::as_str)).collect();
        self.params.iter().filter(|p| p.kind == ApiParamKind::Int && used.contains(p.name.as_str())).collect()
    }

    /// Scalars not fixed by any array's dims (e.g. `n` in a leading-dimension API, or `alpha`).
    pub fn free_scalars(&self) -> Vec<&ApiParam> {
        let sizes: Vec<&str> = self.size_params().iter().map(|p| p.name.as_str()).collect();
        self.params.iter().filter(|p| p.kind != ApiParamKind::Array && !sizes.contains(&p.name.as_str())).collect()
    }

    /// Lowercased name with the affix removed.
    pub fn normalize(&self, name: &str) -> String {
        normalize_name(name, &self.affix)
    }
}

/// Strips the API prefix/suffix when present and lowercases the rest.
pub fn normalize_name(name: &str, affix: &Affix) -> String {
    let mut s = name;
    if !affix.prefix.is_empty() {
        s = s.strip_prefix(affix.prefix.as_str()).unwrap_or(s);
    }
    if !affix.suffix.is_empty() {
        s = s.strip_suffix(affix.suffix.as_str()).unwrap_or(s);
    }
    s.to_lowercase()
}

/// Loads every `*.json` spec in a directory, sorted by file name.
pub fn load_spec_dir(dir: &Path) -> Result<Vec<ApiSpec>, ApiSpecError> {
    let io = |source| ApiSpecError::Io { path: dir.display().to_string(), source };
    let mut paths: Vec<_> = std::fs::read_dir(dir)
        .map_err(io)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    paths.iter().map(|p| ApiSpec::load(p)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tc() -> Affix {
        Affix { prefix: "tc_".into(), suffix: String::new() }
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize_name("tc_lda", &tc()), "lda");
        assert_eq!(normalize_name("tc_A", &tc()), "a");
        assert_eq!(normalize_name("alpha", &tc()), "alpha");
        let both = Affix { prefix: "x_".into(), suffix: "_v2".into() };
        assert_eq!(normalize_name("x_Out_v2", &both), "out");
    }

    #[test]
    fn bundled_specs_validate() {
        let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../specs");
        let specs = load_spec_dir(&dir).unwrap();
        assert!(specs.len() >= 3);
        let row = specs.iter().find(|s| s.name == "gemm_rowmajor").unwrap();
        assert_eq!(row.size_params().len(), 3);
        assert!(row.free_scalars().is_empty());
        let ld = specs.iter().find(|s| s.name == "gemm_rowmajor_ld").unwrap();
        assert_eq!(ld.free_scalars().iter().map(|p| p.name.as_str()).collect::<Vec<_>>(), vec!["tc_n"]);
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let dangling = r#"{"name":"x","layout":"rowmajor","semantics":"gemm","params":[
            {"name":"A","kind":"array","liveness":"liveout","dims":["m"]}]}"#;
        assert!(matches!(ApiSpec::from_json(dangling), Err(ApiSpecError::Invalid { .. })));
        let no_out = r#"{"name":"x","layout":"rowmajor","semantics":"gemm","params":[
            {"name":"A","kind":"array","liveness":"livein","dims":["m"]},{"name":"m","kind":"int"}]}"#;
        assert!(matches!(ApiSpec::from_json(no_out), Err(ApiSpecError::Invalid { .. })));
    }
}
