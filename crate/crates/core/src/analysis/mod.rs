//! Execution-driven liveness and dimension detection.

mod dims;
mod liveness;
pub mod sizes;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::exec::ExecError;

pub use dims::{
    choose_probe_values, detect_dims, detect_dims_with_limit, enumerate_dim_candidates, DimDetection, ProbePool, CONV_PROBE_POOL,
    CONV_PROBE_POOL_ALT, GEMM_PROBE_POOL, GEMM_PROBE_POOL_ALT,
};
pub use liveness::{detect_liveness, LIVENESS_BUFFER_LEN};
pub use sizes::{SizeMap, SizeRules};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Liveness {
    LiveIn,
    LiveOut,
    LiveInOut,
}

impl Liveness {
    pub fn is_output(self) -> bool {
        self != Liveness::LiveIn
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamLiveness {
    pub param: String,
    pub class: Liveness,
}

/// Liveness class per parameter, in parameter order.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LivenessReport {
    pub params: Vec<ParamLiveness>,
}

impl LivenessReport {
    pub fn get(&self, param: &str) -> Option<Liveness> {
        self.params.iter().find(|p| p.param == param).map(|p| p.class)
    }
}

/// Array dimensions, slowest-varying first.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DimSpec {
    pub array: String,
    pub dims: Vec<String>,
}

impl DimSpec {
    pub fn new(array: &str, dims: &[&str]) -> Self {
        DimSpec { array: array.to_string(), dims: dims.iter().map(|d| d.to_string()).collect() }
    }

    pub fn extent(&self, sizes: &SizeMap) -> Option<i64> {
        self.dims.iter().try_fold(1i64, |acc, d| acc.checked_mul(*sizes.get(d)?))
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("analysis inconclusive: {0}")]
    AnalysisInconclusive(String),
    #[error("no dimensions found for `{0}`")]
    NoDimsFound(String),
    #[error("cannot choose probe values: {0}")]
    ProbeValues(String),
    #[error(transparent)]
    Exec(#[from] ExecError),
}
