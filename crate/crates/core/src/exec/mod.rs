//! Deterministic interpreter with instrumentable memory.

mod compile;
mod interp;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::minilang::{ElemType, Program, Type};
use compile::{CFunction, SlotTy};
use interp::{Fault, Machine, Recorder, Region, RegionKind};

pub const DEFAULT_STEP_LIMIT: u64 = 50_000_000;
pub const DEFAULT_SCRATCH_VALUE: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Value {
    Int(i64),
    Float(f64),
    Ptr(u32),
    Void,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Buffer {
    pub elem: ElemType,
    pub data: Vec<f64>,
}

impl Buffer {
    pub fn new(elem: ElemType, data: Vec<f64>) -> Self {
        let data = data.into_iter().map(|v| elem.round(v)).collect();
        Buffer { elem, data }
    }

    pub fn zeros(elem: ElemType, len: usize) -> Self {
        Buffer { elem, data: vec![0.0; len] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Scalar {
    Int(i64),
    Float(f64),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MemoryImage {
    pub regions: BTreeMap<String, Buffer>,
    pub scalars: BTreeMap<String, Scalar>,
}

impl MemoryImage {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_region(mut self, name: &str, buf: Buffer) -> Self {
        self.regions.insert(name.to_string(), buf);
        self
    }

    pub fn with_int(mut self, name: &str, v: i64) -> Self {
        self.scalars.insert(name.to_string(), Scalar::Int(v));
        self
    }

    pub fn with_float(mut self, name: &str, v: f64) -> Self {
        self.scalars.insert(name.to_string(), Scalar::Float(v));
        self
    }

    pub fn region(&self, name: &str) -> Option<&[f64]> {
        self.regions.get(name).map(|b| b.data.as_slice())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProbeMode {
    Plain,
    DimProbe,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstrumentationPolicy {
    pub mode: ProbeMode,
    pub target: Option<String>,
    pub target_extent: Option<u64>,
    pub scratch_value: f64,
}

impl InstrumentationPolicy {
    pub fn plain() -> Self {
        InstrumentationPolicy { mode: ProbeMode::Plain, target: None, target_extent: None, scratch_value: DEFAULT_SCRATCH_VALUE }
    }

    pub fn dim_probe(target: &str, extent: u64) -> Self {
        InstrumentationPolicy {
            mode: ProbeMode::DimProbe,
            target: Some(target.to_string()),
            target_extent: Some(extent),
            scratch_value: DEFAULT_SCRATCH_VALUE,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExecStatus {
    Normal,
    OutOfBounds,
    StepLimit,
    RuntimeFault,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExecutionOutcome {
    pub status: ExecStatus,
    pub final_image: Option<MemoryImage>,
    pub steps: u64,
    pub fault: Option<String>,
    pub ret: Option<Scalar>,
}

/// Result of an unbounded probe run over one target pointer.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeMeasure {
    pub status: ExecStatus,
    pub max_index: Option<i64>,
    /// Sampled index pairs one loop iteration apart, one group per (load/store site, loop depth).
    pub strata: Vec<Vec<(i64, i64)>>,
    pub steps: u64,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExecError {
    #[error("unknown function `{0}`")]
    UnknownFunction(String),
    #[error("parameter `{0}` has no binding")]
    MissingBinding(String),
    #[error("bad binding for `{name}`: {msg}")]
    BadBinding { name: String, msg: String },
    #[error("invalid instrumentation policy: {0}")]
    InvalidPolicy(String),
    #[error("compile error: {0}")]
    Compile(String),
    #[error("shape mismatch for `{0}`")]
    ShapeMismatch(String),
}

/// Memory view handed to extern functions.
pub struct Heap<'a> {
    regions: &'a mut Vec<Region>,
}

impl Heap<'_> {
    fn region(&self, v: Value) -> Result<&Region, String> {
        match v {
            Value::Ptr(r) => match self.regions.get(r as usize) {
                Some(reg) if reg.kind == RegionKind::Normal => Ok(reg),
                _ => Err("invalid region handle".into()),
            },
            other => Err(format!("expected a pointer, found {other:?}")),
        }
    }

    pub fn read(&self, v: Value) -> Result<Vec<f64>, String> {
        Ok(self.region(v)?.data.clone())
    }

    pub fn len(&self, v: Value) -> Result<usize, String> {
        Ok(self.region(v)?.data.len())
    }

    pub fn elem(&self, v: Value) -> Result<ElemType, String> {
        Ok(self.region(v)?.elem)
    }

    /// Overwrites the leading `data.len()` elements of the region.
    pub fn write(&mut self, v: Value, data: &[f64]) -> Result<(), String> {
        self.region(v)?;
        let Value::Ptr(r) = v else { unreachable!() };
        let reg = &mut self.regions[r as usize];
        if data.len() > reg.data.len() {
            return Err(format!("write of {} elements into a region of {}", data.len(), reg.data.len()));
        }
        for (dst, src) in reg.data.iter_mut().zip(data) {
            *dst = reg.elem.round(*src);
        }
        Ok(())
    }
}

pub trait ExternFn: Send + Sync {
    /// `caller` names the function containing the call.
    fn call(&self, caller: &str, args: &[Value], heap: &mut Heap) -> Result<(), String>;
}

/// Compiled program plus the extern table; cheap to share across threads.
#[derive(Clone)]
pub struct Engine {
    functions: Vec<CFunction>,
    index: HashMap<String, usize>,
    externs: HashMap<String, Arc<dyn ExternFn>>,
}

impl std::fmt::Debug for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Engine").field("functions", &self.index.keys().collect::<Vec<_>>()).finish()
    }
}

impl Engine {
    pub fn new(program: &Program) -> Result<Self, ExecError> {
        let functions = compile::compile_program(program)?;
        let index = functions.iter().enumerate().map(|(i, f)| (f.name.clone(), i)).collect();
        Ok(Engine { functions, index, externs: HashMap::new() })
    }

    pub fn register_extern(&mut self, name: &str, f: Arc<dyn ExternFn>) {
        self.externs.insert(name.to_string(), f);
    }

    pub fn execute(
        &self,
        fname: &str,
        input: &MemoryImage,
        policy: &InstrumentationPolicy,
        step_limit: u64,
    ) -> Result<ExecutionOutcome, ExecError> {
        let (target, extent) = match policy.mode {
            ProbeMode::Plain => (None, None),
            ProbeMode::DimProbe => match (&policy.target, policy.target_extent) {
                (Some(t), Some(e)) => (Some(t.as_str()), Some(e)),
                _ => return Err(ExecError::InvalidPolicy("DimProbe requires a target and an extent".into())),
            },
        };
        let (fidx, regions, args) = self.bind(fname, input, target, extent)?;
        let mut m = Machine::new(self, regions, step_limit, policy.scratch_value, target.is_some());
        let result = m.call(fidx, args);
        let steps = m.steps;
        let (status, fault, ret) = match result {
            Ok(v) => (ExecStatus::Normal, None, to_scalar(v)),
            Err(f) => {
                let (s, msg) = fault_status(f);
                (s, msg, None)
            }
        };
        let final_image = (status == ExecStatus::Normal).then(|| {
            let f = &self.functions[fidx];
            let mut out = input.clone();
            let ptrs = f.params.iter().filter(|(_, ty, _)| *ty == SlotTy::Ptr);
            for ((name, _, _), region) in ptrs.zip(&m.regions) {
                if let Some(buf) = out.regions.get_mut(name) {
                    // a probe target may have grown past its input length
                    let n = buf.data.len().min(region.data.len());
                    buf.data[..n].copy_from_slice(&region.data[..n]);
                }
            }
            out
        });
        Ok(ExecutionOutcome { status, final_image, steps, fault, ret })
    }

    /// DimProbe run with no extent bound; records the largest target index touched
    /// and a sample of its access pairs.
    pub fn measure_probe(
        &self,
        fname: &str,
        input: &MemoryImage,
        target: &str,
        scratch_value: f64,
        step_limit: u64,
    ) -> Result<ProbeMeasure, ExecError> {
        let (fidx, regions, args) = self.bind(fname, input, Some(target), None)?;
        let mut m = Machine::new(self, regions, step_limit, scratch_value, true);
        m.recorder = Some(Recorder::new());
        let status = match m.call(fidx, args) {
            Ok(_) => ExecStatus::Normal,
            Err(f) => fault_status(f).0,
        };
        let rec = m.recorder.take().unwrap_or_default();
        Ok(ProbeMeasure { status, max_index: rec.max_index, strata: rec.strata, steps: m.steps })
    }

    fn bind(
        &self,
        fname: &str,
        input: &MemoryImage,
        target: Option<&str>,
        extent: Option<u64>,
    ) -> Result<(usize, Vec<Region>, Vec<Value>), ExecError> {
        let fidx = *self.index.get(fname).ok_or_else(|| ExecError::UnknownFunction(fname.to_string()))?;
        let f = &self.functions[fidx];
        if let Some(t) = target {
            if !f.params.iter().any(|(n, ty, _)| n == t && *ty == SlotTy::Ptr) {
                return Err(ExecError::InvalidPolicy(format!("`{t}` is not a pointer parameter of `{fname}`")));
            }
        }
        let bad = |name: &str, msg: &str| ExecError::BadBinding { name: name.to_string(), msg: msg.to_string() };
        let mut regions = Vec::new();
        let mut args = Vec::new();
        // pointer params occupy region ids 0..n in parameter order
        for (name, _, ty) in &f.params {
            if let Type::Ptr(elem) = ty {
                let buf = input.regions.get(name).ok_or_else(|| ExecError::MissingBinding(name.clone()))?;
                if buf.elem != *elem {
                    return Err(bad(name, "element type differs from the parameter"));
                }
                if buf.data.is_empty() {
                    return Err(bad(name, "buffer is empty"));
                }
                let kind = match target {
                    None => RegionKind::Normal,
                    Some(t) if t == name => RegionKind::Target { extent },
                    Some(_) => RegionKind::Redirected,
                };
                regions.push(Region { elem: *elem, data: buf.data.clone(), kind });
            }
        }
        let mut next_region = 0u32;
        for (name, _, ty) in &f.params {
            let v = match ty {
                Type::Ptr(_) => {
                    next_region += 1;
                    Value::Ptr(next_region - 1)
                }
                Type::Int => match input.scalars.get(name) {
                    Some(Scalar::Int(v)) => Value::Int(*v),
                    Some(Scalar::Float(_)) => return Err(bad(name, "integer parameter bound to a float")),
                    None => return Err(ExecError::MissingBinding(name.clone())),
                },
                Type::Float(e) => match input.scalars.get(name) {
                    Some(Scalar::Float(v)) => Value::Float(e.round(*v)),
                    Some(Scalar::Int(v)) => Value::Float(e.round(*v as f64)),
                    None => return Err(ExecError::MissingBinding(name.clone())),
                },
            };
            args.push(v);
        }
        Ok((fidx, regions, args))
    }
}

fn to_scalar(v: Value) -> Option<Scalar> {
    match v {
        Value::Int(i) => Some(Scalar::Int(i)),
        Value::Float(f) => Some(Scalar::Float(f)),
        _ => None,
    }
}

fn fault_status(f: Fault) -> (ExecStatus, Option<String>) {
    match f {
        Fault::OutOfBounds => (ExecStatus::OutOfBounds, None),
        Fault::StepLimit => (ExecStatus::StepLimit, None),
        Fault::Runtime(msg) => (ExecStatus::RuntimeFault, Some(msg)),
    }
}

/// Names of regions whose contents differ bitwise between two images.
pub fn snapshot_diff(before: &MemoryImage, after: &MemoryImage) -> Result<BTreeSet<String>, ExecError> {
    let mut changed = BTreeSet::new();
    for (name, b) in &before.regions {
        let a = after.regions.get(name).ok_or_else(|| ExecError::ShapeMismatch(name.clone()))?;
        if a.data.len() != b.data.len() {
            return Err(ExecError::ShapeMismatch(name.clone()));
        }
        if a.data.iter().zip(&b.data).any(|(x, y)| x.to_bits() != y.to_bits()) {
            changed.insert(name.clone());
        }
    }
    if let Some(extra) = after.regions.keys().find(|k| !before.regions.contains_key(*k)) {
        return Err(ExecError::ShapeMismatch(extra.clone()));
    }
    Ok(changed)
}

#[cfg(test)]
mod tests;
