//! Feature-based program classifier gating the matching pipeline.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::minilang::{AssignOp, BinOp, Expr, FunctionIR, LValue, Program, Stmt, VecOp, VecOperand};

pub const FEATURE_SCHEMA_VERSION: u32 = 1;
pub const MODEL_SCHEMA_VERSION: u32 = 1;
pub const MAX_DEPTH_BIN: usize = 5;

pub const FEATURE_NAMES: [&str; 16] = [
    "nest_depth_1",
    "nest_depth_2",
    "nest_depth_3",
    "nest_depth_4",
    "nest_depth_5",
    "mul",
    "add",
    "fma",
    "load",
    "store",
    "call",
    "vector_op",
    "pointer_params",
    "int_params",
    "max_index_arity",
    "accumulations",
];
pub const NUM_FEATURES: usize = FEATURE_NAMES.len();

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector(pub Vec<f64>);

impl FeatureVector {
    pub fn get(&self, name: &str) -> f64 {
        FEATURE_NAMES.iter().position(|n| *n == name).map_or(0.0, |i| self.0[i])
    }
}

#[derive(Debug, Default)]
struct Counts {
    depth: [u32; MAX_DEPTH_BIN],
    mul: u32,
    add: u32,
    fma: u32,
    load: u32,
    store: u32,
    call: u32,
    vector: u32,
    arity: u32,
    acc: u32,
}

struct Walker<'a> {
    program: Option<&'a Program>,
    stack: Vec<&'a str>,
    c: Counts,
}

fn index_arity(e: &Expr) -> u32 {
    let mut vars = Vec::new();
    e.walk(&mut |x| {
        if let Expr::Var(v) = x {
            if !vars.contains(&v) {
                vars.push(v);
            }
        }
    });
    vars.len() as u32
}

fn same_lvalue(e: &Expr, base: &str, index: &Expr) -> bool {
    let mut hit = false;
    e.walk(&mut |x| {
        if let Expr::Index { base: b, index: i } = x {
            hit |= b == base && **i == *index;
        }
    });
    hit
}

impl<'a> Walker<'a> {
    /// Value-level arithmetic; subscripts only contribute loads and arity.
    /// Returns the deepest loop level reached through inlined calls.
    fn expr(&mut self, e: &'a Expr, depth: usize) -> usize {
        match e {
            Expr::Int(_) | Expr::Float(_) | Expr::Var(_) => depth,
            Expr::Index { index, .. } => {
                self.c.load += 1;
                self.c.arity = self.c.arity.max(index_arity(index));
                self.subscript(index);
                depth
            }
            Expr::Unary { expr, .. } => self.expr(expr, depth),
            Expr::Binary { op, lhs, rhs } => {
                match op {
                    BinOp::Mul => self.c.mul += 1,
                    BinOp::Add | BinOp::Sub => self.c.add += 1,
                    _ => {}
                }
                self.expr(lhs, depth).max(self.expr(rhs, depth))
            }
            Expr::Call { name, args } => {
                self.c.call += 1;
                let d = self.exprs(args, depth);
                d.max(self.inline(name, depth))
            }
        }
    }

    fn exprs(&mut self, es: &'a [Expr], depth: usize) -> usize {
        es.iter().fold(depth, |d, e| d.max(self.expr(e, depth)))
    }

    fn subscript(&mut self, e: &'a Expr) {
        e.walk(&mut |x| {
            if let Expr::Index { .. } = x {
                self.c.load += 1;
            }
        });
    }

    fn inline(&mut self, name: &str, depth: usize) -> usize {
        let Some(p) = self.program else { return 0 };
        let Some(callee) = p.function(name) else { return 0 };
        if self.stack.contains(&callee.name.as_str()) {
            return 0;
        }
        self.stack.push(&callee.name);
        let d = self.block(&callee.body, depth);
        self.stack.pop();
        d
    }

    /// Walks a block at loop depth `depth`; returns the deepest loop level reached below it.
    fn block(&mut self, stmts: &'a [Stmt], depth: usize) -> usize {
        let mut deepest = depth;
        for s in stmts {
            let d = self.stmt(s, depth);
            if depth == 0 && d > 0 {
                self.c.depth[d.min(MAX_DEPTH_BIN) - 1] += 1;
            } else {
                deepest = deepest.max(d);
            }
        }
        deepest
    }

    fn stmt(&mut self, s: &'a Stmt, depth: usize) -> usize {
        match s {
            Stmt::Let { init, .. } => self.expr(init, depth),
            Stmt::Assign { target, op, value } => {
                let d = self.expr(value, depth);
                if *op == AssignOp::Add && matches!(value, Expr::Binary { op: BinOp::Mul, .. }) {
                    self.c.fma += 1;
                }
                if matches!(op, AssignOp::Add | AssignOp::Sub) {
                    self.c.add += 1;
                }
                if *op == AssignOp::Mul {
                    self.c.mul += 1;
                }
                if let LValue::Index { base, index } = target {
                    self.c.store += 1;
                    self.c.arity = self.c.arity.max(index_arity(index));
                    self.subscript(index);
                    if *op != AssignOp::Set || same_lvalue(value, base, index) {
                        self.c.acc += 1;
                    }
                }
                d
            }
            Stmt::For { start, end, step, body, .. } => {
                let mut d = self.expr(start, depth).max(self.expr(end, depth));
                if let Some(st) = step {
                    d = d.max(self.expr(st, depth));
                }
                d.max(self.block(body, depth + 1))
            }
            Stmt::While { cond, body } => {
                let d = self.expr(cond, depth);
                d.max(self.block(body, depth + 1))
            }
            Stmt::If { cond, then_body, else_body } => {
                let c = self.expr(cond, depth);
                let t = self.block(then_body, depth);
                let e = else_body.as_deref().map_or(depth, |b| self.block(b, depth));
                c.max(t).max(e)
            }
            Stmt::Call { name, args } => {
                self.c.call += 1;
                let d = self.exprs(args, depth);
                d.max(self.inline(name, depth))
            }
            Stmt::Return(e) => e.as_ref().map_or(depth, |e| self.expr(e, depth)),
            Stmt::Vector { op, dst_base, dst_index, args, .. } => {
                self.c.vector += 1;
                self.c.store += 1;
                self.c.arity = self.c.arity.max(index_arity(dst_index));
                self.subscript(dst_index);
                match op {
                    VecOp::Fma => {
                        self.c.fma += 1;
                        self.c.acc += 1;
                    }
                    VecOp::Add => self.c.add += 1,
                    VecOp::Mul => self.c.mul += 1,
                    VecOp::Copy => {}
                }
                let mut d = depth;
                for a in args {
                    match a {
                        VecOperand::Lanes { base, index } => {
                            self.c.load += 1;
                            self.c.arity = self.c.arity.max(index_arity(index));
                            self.subscript(index);
                            if *op != VecOp::Fma && base == dst_base && index == dst_index {
                                self.c.acc += 1;
                            }
                        }
                        VecOperand::Splat(e) => d = d.max(self.expr(e, depth)),
                    }
                }
                d
            }
        }
    }
}

fn features(program: Option<&Program>, f: &FunctionIR) -> FeatureVector {
    let mut w = Walker { program, stack: vec![f.name.as_str()], c: Counts::default() };
    w.block(&f.body, 0);
    let c = w.c;
    let mut v: Vec<f64> = c.depth.iter().map(|&d| d as f64).collect();
    v.extend([c.mul, c.add, c.fma, c.load, c.store, c.call, c.vector].map(f64::from));
    v.push(f.pointer_params().count() as f64);
    v.push(f.int_params().count() as f64);
    v.extend([c.arity, c.acc].map(f64::from));
    FeatureVector(v)
}

/// Features of `f` alone; calls count but are not followed.
pub fn extract_features(f: &FunctionIR) -> FeatureVector {
    features(None, f)
}

/// Features of `f` with calls to other functions of `program` inlined (recursion cut).
pub fn extract_features_in(program: &Program, f: &FunctionIR) -> FeatureVector {
    features(Some(program), f)
}

#[derive(Debug, Error)]
pub enum ClassifierError {
    #[error("insufficient training data: {0}")]
    InsufficientData(String),
    #[error("model uses feature schema {found}, expected {expected}")]
    SchemaMismatch { found: u32, expected: u32 },
    #[error("cannot access model `{path}`: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("malformed model: {0}")]
    Json(#[from] serde_json::Error),
}

/// Multinomial logistic regression over standardized features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierModel {
    pub schema_version: u32,
    pub feature_schema_version: u32,
    /// Sorted.
    pub labels: Vec<String>,
    /// Indices into the full feature vector; zero-variance features are left out.
    pub kept: Vec<usize>,
    pub dropped: Vec<String>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// One row per label over the kept features.
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub l2: f64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig { epochs: 5000, learning_rate: 1.0, l2: 1e-4 }
    }
}

fn softmax(z: &mut [f64]) {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in z.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    z.iter_mut().for_each(|v| *v /= s);
}

pub fn train_classifier(corpus: &[(FeatureVector, String)]) -> Result<ClassifierModel, ClassifierError> {
    train_classifier_with(corpus, &TrainingConfig::default())
}

pub fn train_classifier_with(
    corpus: &[(FeatureVector, String)],
    cfg: &TrainingConfig,
) -> Result<ClassifierModel, ClassifierError> {
    let mut per_label: BTreeMap<&str, usize> = BTreeMap::new();
    for (_, l) in corpus {
        *per_label.entry(l).or_default() += 1;
    }
    if per_label.len() < 2 {
        return Err(ClassifierError::InsufficientData(format!("{} label(s), need at least 2", per_label.len())));
    }
    if let Some((l, n)) = per_label.iter().find(|(_, n)| **n < 3) {
        return Err(ClassifierError::InsufficientData(format!("label `{l}` has {n} example(s), need at least 3")));
    }
    if let Some((fv, _)) = corpus.iter().find(|(fv, _)| fv.0.len() != NUM_FEATURES) {
        return Err(ClassifierError::InsufficientData(format!("feature vector of length {}", fv.0.len())));
    }
    let labels: Vec<String> = per_label.keys().map(|s| s.to_string()).collect();

    // distinct examples with multiplicities, so a duplicated corpus scales every sum exactly by 2
    let mut groups: BTreeMap<(usize, Vec<u64>), f64> = BTreeMap::new();
    for (fv, l) in corpus {
        let y = labels.iter().position(|x| x == l).unwrap();
        *groups.entry((y, fv.0.iter().map(|v| v.to_bits()).collect())).or_default() += 1.0;
    }
    let data: Vec<(usize, Vec<f64>, f64)> =
        groups.into_iter().map(|((y, bits), m)| (y, bits.into_iter().map(f64::from_bits).collect(), m)).collect();
    let total: f64 = data.iter().map(|d| d.2).sum();

    let (mut kept, mut dropped, mut mean, mut std) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for j in 0..NUM_FEATURES {
        let mu = data.iter().map(|(_, x, m)| m * x[j]).sum::<f64>() / total;
        let var = data.iter().map(|(_, x, m)| m * (x[j] - mu).powi(2)).sum::<f64>() / total;
        if var > 1e-12 {
            kept.push(j);
            mean.push(mu);
            std.push(var.sqrt());
        } else {
            dropped.push(FEATURE_NAMES[j].to_string());
        }
    }
    let xs: Vec<(usize, Vec<f64>, f64)> = data
        .iter()
        .map(|(y, x, m)| (*y, kept.iter().enumerate().map(|(i, &j)| (x[j] - mean[i]) / std[i]).collect(), *m))
        .collect();

    let (nl, nf) = (labels.len(), kept.len());
    let mut w = vec![vec![0.0; nf]; nl];
    let mut b = vec![0.0; nl];
    for _ in 0..cfg.epochs {
        let mut gw = vec![vec![0.0; nf]; nl];
        let mut gb = vec![0.0; nl];
        for (y, x, m) in &xs {
            let mut z: Vec<f64> = (0..nl).map(|c| b[c] + w[c].iter().zip(x).map(|(a, v)| a * v).sum::<f64>()).collect();
            softmax(&mut z);
            for c in 0..nl {
                let err = m * (z[c] - if c == *y { 1.0 } else { 0.0 });
                gb[c] += err;
                for (g, v) in gw[c].iter_mut().zip(x) {
                    *g += err * v;
                }
            }
        }
        for c in 0..nl {
            b[c] -= cfg.learning_rate * gb[c] / total;
            for j in 0..nf {
                w[c][j] -= cfg.learning_rate * (gw[c][j] / total + cfg.l2 * w[c][j]);
            }
        }
    }
    Ok(ClassifierModel {
        schema_version: MODEL_SCHEMA_VERSION,
        feature_schema_version: FEATURE_SCHEMA_VERSION,
        labels,
        kept,
        dropped,
        mean,
        std,
        weights: w,
        bias: b,
    })
}

impl ClassifierModel {
    /// Class probabilities in label order.
    pub fn probabilities(&self, fv: &FeatureVector) -> Vec<f64> {
        let x: Vec<f64> = self.kept.iter().enumerate().map(|(i, &j)| (fv.0[j] - self.mean[i]) / self.std[i]).collect();
        let mut z: Vec<f64> =
            self.weights.iter().zip(&self.bias).map(|(w, b)| b + w.iter().zip(&x).map(|(a, v)| a * v).sum::<f64>()).collect();
        softmax(&mut z);
        z
    }

    /// Most probable label with its probability; ties go to the lexicographically first label.
    pub fn classify(&self, fv: &FeatureVector) -> (String, f64) {
        let p = self.probabilities(fv);
        let mut best = 0;
        for (i, v) in p.iter().enumerate() {
            if *v > p[best] {
                best = i;
            }
        }
        (self.labels[best].clone(), p[best])
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, ClassifierError> {
        let m: ClassifierModel = serde_json::from_str(text)?;
        if m.feature_schema_version != FEATURE_SCHEMA_VERSION {
            return Err(ClassifierError::SchemaMismatch { found: m.feature_schema_version, expected: FEATURE_SCHEMA_VERSION });
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<(), ClassifierError> {
        std::fs::write(path, self.to_json() + "\n")
            .map_err(|source| ClassifierError::Io { path: path.display().to_string(), source })
    }

    pub fn load(path: &Path) -> Result<Self, ClassifierError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ClassifierError::Io { path: path.display().to_string(), source })?;
        Self::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::minilang::parse_program;

    const NAIVE: &str = "fn g(A: *f32, B: *f32, C: *f32, m: i64, n: i64, k: i64) -> void {
        for i in 0..m { for j in 0..n { let acc: f32 = 0.0;
            for p in 0..k { acc += A[i * k + p] * B[p * n + j]; }
            C[i * n + j] = acc; } } }";

    #[test]
    fn empty_body_is_all_zero_counts() {
        let p = parse_program("fn e() -> void { }").unwrap();
        assert!(extract_features(&p.functions[0]).0.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn naive_gemm_features() {
        let p = parse_program(NAIVE).unwrap();
        let fv = extract_features(&p.functions[0]);
        assert_eq!(fv.0.len(), NUM_FEATURES);
        assert_eq!(fv.get("nest_depth_3"), 1.0);
        assert_eq!(fv.get("pointer_params"), 3.0);
        assert_eq!(fv.get("load"), 2.0);
        assert_eq!(fv.get("store"), 1.0);
        assert_eq!(fv.get("fma"), 1.0);
        assert_eq!(fv.get("max_index_arity"), 3.0);
    }

    #[test]
    fn renaming_does_not_change_features() {
        let renamed = "fn mm(P: *f32, Q: *f32, R: *f32, x: i64, y: i64, z: i64) -> void {
        for a in 0..x { for b in 0..y { let s: f32 = 0.0;
            for c in 0..z { s += P[a * z + c] * Q[c * y + b]; }
            R[a * y + b] = s; } } }";
        let a = parse_program(NAIVE).unwrap();
        let b = parse_program(renamed).unwrap();
        assert_eq!(extract_features(&a.functions[0]), extract_features(&b.functions[0]));
    }

    #[test]
    fn calls_are_inlined_once() {
        let src = "fn dot(a: *f32, b: *f32, n: i64) -> f32 { let s: f32 = 0.0; for i in 0..n { s += a[i] * b[i]; } return s; }
            fn top(a: *f32, b: *f32, c: *f32, n: i64) -> void { for r in 0..n { c[r] = dot(a, b, n); } }
            fn rec(a: *f32, n: i64) -> void { for i in 0..n { rec(a, n); } }";
        let p = parse_program(src).unwrap();
        let top = extract_features_in(&p, p.function("top").unwrap());
        assert_eq!(top.get("nest_depth_2"), 1.0);
        assert_eq!(top.get("fma"), 1.0);
        let flat = extract_features(p.function("top").unwrap());
        assert_eq!(flat.get("nest_depth_1"), 1.0);
        let rec = extract_features_in(&p, p.function("rec").unwrap());
        assert_eq!(rec.get("call"), 1.0);
    }

    fn toy() -> Vec<(FeatureVector, String)> {
        let mut out = Vec::new();
        for i in 0..4 {
            let mut a = vec![0.0; NUM_FEATURES];
            a[2] = 1.0;
            a[5] = 2.0 + i as f64;
            out.push((FeatureVector(a), "gemm".to_string()));
            let mut b = vec![0.0; NUM_FEATURES];
            b[0] = 1.0;
            b[6] = 1.0 + i as f64;
            out.push((FeatureVector(b), "other".to_string()));
        }
        out
    }

    #[test]
    fn training_preconditions() {
        let one: Vec<_> = toy().into_iter().filter(|(_, l)| l == "gemm").collect();
        assert!(matches!(train_classifier(&one), Err(ClassifierError::InsufficientData(_))));
        let mut few = one.clone();
        few.push(toy()[1].clone());
        assert!(matches!(train_classifier(&few), Err(ClassifierError::InsufficientData(_))));
    }

    #[test]
    fn training_is_deterministic_and_duplication_invariant() {
        let data = toy();
        let m = train_classifier(&data).unwrap();
        assert_eq!(m.labels, vec!["gemm", "other"]);
        assert!(m.dropped.contains(&"call".to_string()));
        let twice: Vec<_> = data.iter().chain(&data).cloned().collect();
        assert_eq!(train_classifier(&twice).unwrap(), m);
        for (fv, l) in &data {
            let (got, p) = m.classify(fv);
            assert_eq!(&got, l);
            assert!((0.5..=1.0).contains(&p));
        }
        let back = ClassifierModel::from_json(&m.to_json()).unwrap();
        assert_eq!(back, m);
        let mut old = m.clone();
        old.feature_schema_version = 0;
        assert!(matches!(ClassifierModel::from_json(&old.to_json()), Err(ClassifierError::SchemaMismatch { .. })));
    }
}
