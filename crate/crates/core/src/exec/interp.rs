use crate::minilang::{AssignOp, BinOp, ElemType, RetType, VecOp};

use super::compile::{Builtin, CExpr, COperand, CStmt, CFunction, SlotTy};
use super::{Engine, Heap, Value};

const MAX_CALL_DEPTH: usize = 256;
const MAX_REGION_ELEMS: usize = 1 << 27;

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum RegionKind {
    Normal,
    /// Non-target pointer under dimension probing: every access hits the scratch cell.
    Redirected,
    /// Probe target; grows on demand and traps past `extent` when one is set.
    Target { extent: Option<u64> },
}

#[derive(Debug, Clone)]
pub(crate) struct Region {
    pub elem: ElemType,
    pub data: Vec<f64>,
    pub kind: RegionKind,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Fault {
    OutOfBounds,
    StepLimit,
    Runtime(String),
}

/// Probe-target observations: the largest index touched plus, per (site, loop depth), a
/// bounded uniform sample of index pairs one iteration apart (all inner loops at their
/// first iteration in both accesses).
#[derive(Debug, Default, Clone)]
pub(crate) struct Recorder {
    pub max_index: Option<i64>,
    pub strata: Vec<Vec<(i64, i64)>>,
    seen: Vec<u64>,
    rng: u64,
    last: Vec<Vec<Slot>>,
}

#[derive(Debug, Clone, Copy)]
struct Slot {
    inst: u64,
    iter: i64,
    idx: i64,
    stratum: Option<u32>,
}

const EMPTY_SLOT: Slot = Slot { inst: u64::MAX, iter: 0, idx: 0, stratum: None };
const STRATUM_SAMPLE: usize = 2048;

impl Recorder {
    pub fn new() -> Self {
        Recorder { rng: 0x9e37_79b9_7f4a_7c15, ..Default::default() }
    }

    fn record(&mut self, idx: i64, site: u32, loops: &[(u64, i64)]) {
        self.max_index = Some(self.max_index.map_or(idx, |m| m.max(idx)));
        let site = site as usize;
        if self.last.len() <= site {
            self.last.resize(site + 1, Vec::new());
        }
        if self.last[site].len() < loops.len() {
            self.last[site].resize(loops.len(), EMPTY_SLOT);
        }
        for level in (0..loops.len()).rev() {
            let (inst, iter) = loops[level];
            let prev = self.last[site][level];
            // only the first access per iteration counts, so vector lanes do not chain
            if prev.inst == inst && prev.iter == iter {
                break;
            }
            let mut stratum = prev.stratum;
            if prev.inst == inst && prev.iter + 1 == iter && prev.idx != idx {
                let s = *stratum.get_or_insert_with(|| {
                    self.strata.push(Vec::new());
                    self.seen.push(0);
                    (self.strata.len() - 1) as u32
                });
                self.sample(s as usize, (prev.idx, idx));
            }
            self.last[site][level] = Slot { inst, iter, idx, stratum };
            if iter != 0 {
                break;
            }
        }
    }

    fn sample(&mut self, s: usize, pair: (i64, i64)) {
        self.seen[s] += 1;
        if self.strata[s].len() < STRATUM_SAMPLE {
            self.strata[s].push(pair);
            return;
        }
        self.rng ^= self.rng << 13;
        self.rng ^= self.rng >> 7;
        self.rng ^= self.rng << 17;
        let j = (self.rng % self.seen[s]) as usize;
        if j < STRATUM_SAMPLE {
            self.strata[s][j] = pair;
        }
    }
}

enum Flow {
    Next,
    Return(Value),
}

pub(crate) struct Machine<'e> {
    engine: &'e Engine,
    pub regions: Vec<Region>,
    pub steps: u64,
    limit: u64,
    scratch: f64,
    probing: bool,
    pub recorder: Option<Recorder>,
    /// Active function indices, innermost last.
    calls: Vec<usize>,
    loops: Vec<(u64, i64)>,
    next_loop: u64,
}

type R<T> = Result<T, Fault>;

fn rt<T>(msg: impl Into<String>) -> R<T> {
    Err(Fault::Runtime(msg.into()))
}

impl<'e> Machine<'e> {
    pub fn new(engine: &'e Engine, regions: Vec<Region>, limit: u64, scratch: f64, probing: bool) -> Self {
        Machine {
            engine,
            regions,
            steps: 0,
            limit,
            scratch,
            probing,
            recorder: None,
            calls: Vec::new(),
            loops: Vec::new(),
            next_loop: 0,
        }
    }

    fn tick(&mut self) -> R<()> {
        self.steps += 1;
        if self.steps > self.limit {
            Err(Fault::StepLimit)
        } else {
            Ok(())
        }
    }

    fn record(&mut self, idx: i64, site: u32) {
        if let Some(r) = self.recorder.as_mut() {
            r.record(idx, site, &self.loops);
        }
    }

    fn enter_loop(&mut self) {
        self.loops.push((self.next_loop, 0));
        self.next_loop += 1;
    }

    fn next_iteration(&mut self) {
        if let Some(l) = self.loops.last_mut() {
            l.1 += 1;
        }
    }

    fn region_id(&self, v: Value) -> R<usize> {
        match v {
            Value::Ptr(r) => Ok(r as usize),
            _ => rt("indexing a non-pointer value"),
        }
    }

    fn load(&mut self, r: usize, idx: i64, site: u32) -> R<f64> {
        if idx < 0 {
            return rt(format!("negative index {idx}"));
        }
        let kind = self.regions[r].kind;
        match kind {
            RegionKind::Normal => match self.regions[r].data.get(idx as usize) {
                Some(v) => Ok(*v),
                None => rt(format!("load out of bounds: index {idx}, length {}", self.regions[r].data.len())),
            },
            RegionKind::Redirected => Ok(self.scratch),
            RegionKind::Target { extent } => {
                self.record(idx, site);
                if extent.is_some_and(|e| idx as u64 >= e) {
                    return Err(Fault::OutOfBounds);
                }
                Ok(self.regions[r].data.get(idx as usize).copied().unwrap_or(self.scratch))
            }
        }
    }

    fn store(&mut self, r: usize, idx: i64, v: f64, site: u32) -> R<()> {
        if idx < 0 {
            return rt(format!("negative index {idx}"));
        }
        let kind = self.regions[r].kind;
        let scratch = self.scratch;
        let region = &mut self.regions[r];
        let v = region.elem.round(v);
        match kind {
            RegionKind::Normal => match region.data.get_mut(idx as usize) {
                Some(slot) => {
                    *slot = v;
                    Ok(())
                }
                None => rt(format!("store out of bounds: index {idx}, length {}", region.data.len())),
            },
            // stores to redirected pointers are dropped so the scratch cell keeps its value
            RegionKind::Redirected => Ok(()),
            RegionKind::Target { extent } => {
                let idx_u = idx as usize;
                if extent.is_some_and(|e| idx as u64 >= e) {
                    self.record(idx, site);
                    return Err(Fault::OutOfBounds);
                }
                if idx_u >= MAX_REGION_ELEMS {
                    return rt("probe target index exceeds the supported region size");
                }
                if idx_u >= region.data.len() {
                    region.data.resize(idx_u + 1, scratch);
                }
                region.data[idx_u] = v;
                self.record(idx, site);
                Ok(())
            }
        }
    }

    pub fn call(&mut self, fidx: usize, args: Vec<Value>) -> R<Value> {
        let engine = self.engine;
        let f: &CFunction = &engine.functions[fidx];
        if args.len() != f.params.len() {
            return rt(format!("`{}` called with {} arguments", f.name, args.len()));
        }
        if self.calls.len() >= MAX_CALL_DEPTH {
            return rt("call depth limit exceeded");
        }
        self.calls.push(fidx);
        let mut frame = vec![Value::Void; f.slots.len()];
        for (i, (a, (_, ty, _))) in args.into_iter().zip(&f.params).enumerate() {
            frame[i] = coerce(a, *ty)?;
        }
        let first_region = self.regions.len();
        let flow = self.block(&f.body, &mut frame);
        // pointers cannot escape a frame, so its allocations die with it
        self.regions.truncate(first_region);
        self.calls.pop();
        let ret = match flow? {
            Flow::Return(v) => v,
            Flow::Next => Value::Void,
        };
        match f.ret {
            RetType::Void => Ok(Value::Void),
            RetType::Int => coerce(ret, SlotTy::Int),
            RetType::Float(e) => coerce(ret, SlotTy::Float(e)),
        }
    }

    fn block(&mut self, stmts: &[CStmt], frame: &mut Vec<Value>) -> R<Flow> {
        for s in stmts {
            if let Flow::Return(v) = self.stmt(s, frame)? {
                return Ok(Flow::Return(v));
            }
        }
        Ok(Flow::Next)
    }

    fn stmt(&mut self, s: &CStmt, frame: &mut Vec<Value>) -> R<Flow> {
        self.tick()?;
        match s {
            CStmt::Set { slot, ty, op, value } => {
                let v = self.expr(value, frame)?;
                let new = match op {
                    AssignOp::Set => v,
                    _ => arith(assign_binop(*op), frame[*slot as usize], v)?,
                };
                frame[*slot as usize] = coerce(new, *ty)?;
            }
            CStmt::Alloc { slot, elem, len } => {
                let n = self.expr(len, frame)?.as_int()?;
                if n < 1 || n as usize > MAX_REGION_ELEMS {
                    return rt(format!("invalid allocation length {n}"));
                }
                self.regions.push(Region { elem: *elem, data: vec![0.0; n as usize], kind: RegionKind::Normal });
                frame[*slot as usize] = Value::Ptr((self.regions.len() - 1) as u32);
            }
            CStmt::Store { ptr, idx, op, value, site } => {
                let r = self.region_id(frame[*ptr as usize])?;
                let i = self.expr(idx, frame)?.as_int()?;
                let v = self.expr(value, frame)?;
                let new = match op {
                    AssignOp::Set => v.as_float()?,
                    _ => {
                        let old = self.load(r, i, *site)?;
                        arith(assign_binop(*op), Value::Float(old), v)?.as_float()?
                    }
                };
                self.store(r, i, new, *site)?;
            }
            CStmt::For { slot, start, end, step, body } => {
                let mut i = self.expr(start, frame)?.as_int()?;
                let end = self.expr(end, frame)?.as_int()?;
                let step = match step {
                    Some(e) => self.expr(e, frame)?.as_int()?,
                    None => 1,
                };
                if step <= 0 {
                    return rt(format!("non-positive loop step {step}"));
                }
                let mut result = Ok(Flow::Next);
                self.enter_loop();
                while i < end {
                    frame[*slot as usize] = Value::Int(i);
                    match self.block(body, frame) {
                        Ok(Flow::Next) => {}
                        other => {
                            result = other;
                            break;
                        }
                    }
                    i = match i.checked_add(step) {
                        Some(n) => n,
                        None => break,
                    };
                    self.next_iteration();
                }
                self.loops.pop();
                return result;
            }
            CStmt::While { cond, body } => {
                self.enter_loop();
                let result = loop {
                    match self.expr(cond, frame).and_then(|c| c.truthy()) {
                        Ok(true) => {}
                        Ok(false) => break Ok(Flow::Next),
                        Err(e) => break Err(e),
                    }
                    if let Err(e) = self.tick() {
                        break Err(e);
                    }
                    match self.block(body, frame) {
                        Ok(Flow::Next) => {}
                        other => break other,
                    }
                    self.next_iteration();
                };
                self.loops.pop();
                return result;
            }
            CStmt::If { cond, then_body, else_body } => {
                return if self.expr(cond, frame)?.truthy()? {
                    self.block(then_body, frame)
                } else {
                    self.block(else_body, frame)
                };
            }
            CStmt::Eval(e) => {
                self.expr(e, frame)?;
            }
            CStmt::Return(e) => {
                let v = match e {
                    Some(e) => self.expr(e, frame)?,
                    None => Value::Void,
                };
                return Ok(Flow::Return(v));
            }
            CStmt::Vector { op, width, dst, dst_idx, dst_site, args } => {
                let w = *width as usize;
                let r = self.region_id(frame[*dst as usize])?;
                let base = self.expr(dst_idx, frame)?.as_int()?;
                let mut lanes = [[0.0f64; 8]; 2];
                for (k, a) in args.iter().enumerate() {
                    match a {
                        COperand::Splat(e) => {
                            let v = self.expr(e, frame)?.as_float()?;
                            lanes[k][..w].fill(v);
                        }
                        COperand::Lanes { ptr, idx, site } => {
                            let src = self.region_id(frame[*ptr as usize])?;
                            let at = self.expr(idx, frame)?.as_int()?;
                            for l in 0..w {
                                lanes[k][l] = self.load(src, at + l as i64, *site)?;
                            }
                        }
                    }
                }
                for l in 0..w {
                    let v = match op {
                        VecOp::Fma => self.load(r, base + l as i64, *dst_site)? + lanes[0][l] * lanes[1][l],
                        VecOp::Add => lanes[0][l] + lanes[1][l],
                        VecOp::Mul => lanes[0][l] * lanes[1][l],
                        VecOp::Copy => lanes[0][l],
                    };
                    self.store(r, base + l as i64, v, *dst_site)?;
                }
            }
        }
        Ok(Flow::Next)
    }

    fn expr(&mut self, e: &CExpr, frame: &mut Vec<Value>) -> R<Value> {
        Ok(match e {
            CExpr::Int(v) => Value::Int(*v),
            CExpr::Float(v) => Value::Float(*v),
            CExpr::Slot(s) => match frame[*s as usize] {
                Value::Void => return rt("read of an uninitialised variable"),
                v => v,
            },
            CExpr::Load { ptr, idx, site } => {
                let r = self.region_id(frame[*ptr as usize])?;
                let i = self.expr(idx, frame)?.as_int()?;
                Value::Float(self.load(r, i, *site)?)
            }
            CExpr::Neg(inner) => match self.expr(inner, frame)? {
                Value::Int(v) => Value::Int(v.checked_neg().ok_or_else(|| Fault::Runtime("integer overflow".into()))?),
                Value::Float(v) => Value::Float(-v),
                _ => return rt("negation of a non-number"),
            },
            CExpr::Not(inner) => Value::Int(!self.expr(inner, frame)?.truthy()? as i64),
            CExpr::Bin(BinOp::And, a, b) => {
                Value::Int((self.expr(a, frame)?.truthy()? && self.expr(b, frame)?.truthy()?) as i64)
            }
            CExpr::Bin(BinOp::Or, a, b) => {
                Value::Int((self.expr(a, frame)?.truthy()? || self.expr(b, frame)?.truthy()?) as i64)
            }
            CExpr::Bin(op, a, b) => {
                let a = self.expr(a, frame)?;
                let b = self.expr(b, frame)?;
                arith(*op, a, b)?
            }
            CExpr::Call { func, args } => {
                let vals = args.iter().map(|a| self.expr(a, frame)).collect::<R<Vec<_>>>()?;
                self.call(*func, vals)?
            }
            CExpr::Builtin(b, args) => {
                let vals = args.iter().map(|a| self.expr(a, frame)).collect::<R<Vec<_>>>()?;
                builtin(*b, &vals)?
            }
            CExpr::Extern { name, args } => {
                let vals = args.iter().map(|a| self.expr(a, frame)).collect::<R<Vec<_>>>()?;
                if self.probing {
                    return rt(format!("`{name}` cannot run under dimension probing"));
                }
                let engine = self.engine;
                let Some(ext) = engine.externs.get(name) else {
                    return rt(format!("no implementation bound for `{name}`"));
                };
                let caller = self.calls.last().map_or("", |&i| engine.functions[i].name.as_str());
                let mut heap = Heap { regions: &mut self.regions };
                ext.call(caller, &vals, &mut heap).map_err(Fault::Runtime)?;
                Value::Void
            }
        })
    }
}

fn assign_binop(op: AssignOp) -> BinOp {
    match op {
        AssignOp::Add => BinOp::Add,
        AssignOp::Sub => BinOp::Sub,
        AssignOp::Mul => BinOp::Mul,
        AssignOp::Set => unreachable!("plain assignment has no operator"),
    }
}

pub(crate) fn coerce(v: Value, ty: SlotTy) -> R<Value> {
    match (ty, v) {
        (SlotTy::Int, Value::Int(_)) | (SlotTy::Ptr, Value::Ptr(_)) => Ok(v),
        (SlotTy::Int, Value::Float(f)) => {
            if f.is_finite() {
                Ok(Value::Int(f.trunc() as i64))
            } else {
                rt("non-finite value converted to integer")
            }
        }
        (SlotTy::Float(e), Value::Float(f)) => Ok(Value::Float(e.round(f))),
        (SlotTy::Float(e), Value::Int(i)) => Ok(Value::Float(e.round(i as f64))),
        _ => rt(format!("type mismatch: {v:?} does not fit {ty:?}")),
    }
}

fn arith(op: BinOp, a: Value, b: Value) -> R<Value> {
    use Value::*;
    let overflow = || Fault::Runtime("integer overflow".into());
    match (a, b) {
        (Int(x), Int(y)) => Ok(Int(match op {
            BinOp::Add => x.checked_add(y).ok_or_else(overflow)?,
            BinOp::Sub => x.checked_sub(y).ok_or_else(overflow)?,
            BinOp::Mul => x.checked_mul(y).ok_or_else(overflow)?,
            BinOp::Div | BinOp::Rem if y == 0 => return rt("division by zero"),
            BinOp::Div => x.checked_div(y).ok_or_else(overflow)?,
            BinOp::Rem => x.checked_rem(y).ok_or_else(overflow)?,
            BinOp::Lt => (x < y) as i64,
            BinOp::Le => (x <= y) as i64,
            BinOp::Gt => (x > y) as i64,
            BinOp::Ge => (x >= y) as i64,
            BinOp::Eq => (x == y) as i64,
            BinOp::Ne => (x != y) as i64,
            BinOp::And | BinOp::Or => unreachable!("short-circuit ops handled by caller"),
        })),
        (Int(_) | Float(_), Int(_) | Float(_)) => {
            let (x, y) = (a.as_float()?, b.as_float()?);
            Ok(match op {
                BinOp::Add => Float(x + y),
                BinOp::Sub => Float(x - y),
                BinOp::Mul => Float(x * y),
                BinOp::Div => {
                    if y == 0.0 {
                        return rt("division by zero");
                    }
                    Float(x / y)
                }
                BinOp::Rem => {
                    if y == 0.0 {
                        return rt("division by zero");
                    }
                    Float(x % y)
                }
                BinOp::Lt => Int((x < y) as i64),
                BinOp::Le => Int((x <= y) as i64),
                BinOp::Gt => Int((x > y) as i64),
                BinOp::Ge => Int((x >= y) as i64),
                BinOp::Eq => Int((x == y) as i64),
                BinOp::Ne => Int((x != y) as i64),
                BinOp::And | BinOp::Or => unreachable!("short-circuit ops handled by caller"),
            })
        }
        _ => rt("arithmetic on a pointer"),
    }
}

fn builtin(b: Builtin, args: &[Value]) -> R<Value> {
    use Value::*;
    Ok(match (b, args) {
        (Builtin::Min, [Int(x), Int(y)]) => Int(*x.min(y)),
        (Builtin::Max, [Int(x), Int(y)]) => Int(*x.max(y)),
        (Builtin::Min, [x, y]) => Float(x.as_float()?.min(y.as_float()?)),
        (Builtin::Max, [x, y]) => Float(x.as_float()?.max(y.as_float()?)),
        (Builtin::Abs, [Int(x)]) => Int(x.checked_abs().ok_or_else(|| Fault::Runtime("integer overflow".into()))?),
        (Builtin::Abs, [x]) => Float(x.as_float()?.abs()),
        (Builtin::Sqrt, [x]) => Float(x.as_float()?.sqrt()),
        (Builtin::ToF64, [x]) => Float(x.as_float()?),
        (Builtin::ToF32, [x]) => Float(x.as_float()? as f32 as f64),
        (Builtin::ToI64, [x]) => coerce(*x, SlotTy::Int)?,
        _ => return rt(format!("bad arguments to builtin {b:?}")),
    })
}

impl Value {
    pub(crate) fn as_int(self) -> R<i64> {
        match self {
            Value::Int(v) => Ok(v),
            other => rt(format!("expected an integer, found {other:?}")),
        }
    }

    pub(crate) fn as_float(self) -> R<f64> {
        match self {
            Value::Int(v) => Ok(v as f64),
            Value::Float(v) => Ok(v),
            other => rt(format!("expected a number, found {other:?}")),
        }
    }

    fn truthy(self) -> R<bool> {
        match self {
            Value::Int(v) => Ok(v != 0),
            Value::Float(v) => Ok(v != 0.0),
            other => rt(format!("expected a condition, found {other:?}")),
        }
    }
}
