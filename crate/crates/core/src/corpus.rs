//! Fixture manifest for the bundled corpus.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::Liveness;
use crate::classifier::{extract_features_in, FeatureVector};
use crate::minilang::{parse_named, FrontendError, Program};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fixture {
    pub file: String,
    pub function: String,
    pub label: String,
    pub category: String,
    pub api: Option<String>,
    pub expect_lift: bool,
    /// Pointer parameters only; scalars are implicitly live-in.
    pub liveness: BTreeMap<String, Liveness>,
    /// `None` marks an array with no dimension tuple within the rank cap.
    pub dims: BTreeMap<String, Option<Vec<String>>>,
    /// API parameter name to user parameter name.
    pub binding: BTreeMap<String, String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub fixtures: Vec<Fixture>,
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("bad manifest: {0}")]
    Manifest(#[from] serde_json::Error),
    #[error("{path}: no function `{function}`")]
    MissingFunction { path: PathBuf, function: String },
    #[error("{path}: {source}")]
    Parse { path: PathBuf, source: FrontendError },
}

impl Manifest {
    pub fn load(corpus_dir: &Path) -> Result<Self, CorpusError> {
        let path = corpus_dir.join("manifest.json");
        let text = std::fs::read_to_string(&path).map_err(|source| CorpusError::Io { path, source })?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Classifier training examples: each fixture's function features with its label.
    pub fn labelled_features(&self, corpus_dir: &Path) -> Result<Vec<(FeatureVector, String)>, CorpusError> {
        self.fixtures
            .iter()
            .map(|fx| {
                let p = fx.load_program(corpus_dir)?;
                let f = p.function(&fx.function).ok_or_else(|| CorpusError::MissingFunction {
                    path: corpus_dir.join(&fx.file),
                    function: fx.function.clone(),
                })?;
                Ok((extract_features_in(&p, f), fx.label.clone()))
            })
            .collect()
    }

    pub fn with_label<'a>(&'a self, label: &'a str) -> impl Iterator<Item = &'a Fixture> + 'a {
        self.fixtures.iter().filter(move |f| f.label == label)
    }
}

impl Fixture {
    pub fn load_program(&self, corpus_dir: &Path) -> Result<Program, CorpusError> {
        load_source(&corpus_dir.join(&self.file))
    }
}

pub fn load_source(path: &Path) -> Result<Program, CorpusError> {
    let text = std::fs::read_to_string(path).map_err(|source| CorpusError::Io { path: path.to_path_buf(), source })?;
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    parse_named(&text, &name).map_err(|source| CorpusError::Parse { path: path.to_path_buf(), source })
}

/// `.ml` files under `dir`, recursively, in path order.
pub fn source_files(dir: &Path) -> Result<Vec<PathBuf>, CorpusError> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        let entries = std::fs::read_dir(&d).map_err(|source| CorpusError::Io { path: d.clone(), source })?;
        for e in entries {
            let p = e.map_err(|source| CorpusError::Io { path: d.clone(), source })?.path();
            if p.is_dir() {
                stack.push(p);
            } else if p.extension().is_some_and(|x| x == "ml") && !p.to_string_lossy().ends_with(".lifted.ml") {
                out.push(p);
            }
        }
    }
    out.sort();
    Ok(out)
}
