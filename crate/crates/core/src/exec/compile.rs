//! Lowers [`FunctionIR`] into a slot-addressed form the interpreter walks.

use std::cell::Cell;
use std::collections::HashMap;

use crate::minilang::{resolve, AssignOp, BinOp, ElemType, Expr, LValue, Program, RetType, Stmt, Type, VecOp, VecOperand};

use super::ExecError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum SlotTy {
    Int,
    Float(ElemType),
    Ptr,
}

impl From<Type> for SlotTy {
    fn from(t: Type) -> Self {
        match t {
            Type::Int => SlotTy::Int,
            Type::Float(e) => SlotTy::Float(e),
            Type::Ptr(_) => SlotTy::Ptr,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) enum Builtin {
    Min,
    Max,
    Abs,
    Sqrt,
    ToF64,
    ToF32,
    ToI64,
}

#[derive(Debug, Clone)]
pub(crate) enum CExpr {
    Int(i64),
    Float(f64),
    Slot(u32),
    Load { ptr: u32, idx: Box<CExpr>, site: u32 },
    Neg(Box<CExpr>),
    Not(Box<CExpr>),
    Bin(BinOp, Box<CExpr>, Box<CExpr>),
    Call { func: usize, args: Vec<CExpr> },
    Builtin(Builtin, Vec<CExpr>),
    Extern { name: String, args: Vec<CExpr> },
}

#[derive(Debug, Clone)]
pub(crate) enum COperand {
    Lanes { ptr: u32, idx: CExpr, site: u32 },
    Splat(CExpr),
}

#[derive(Debug, Clone)]
pub(crate) enum CStmt {
    Set { slot: u32, ty: SlotTy, op: AssignOp, value: CExpr },
    Alloc { slot: u32, elem: ElemType, len: CExpr },
    Store { ptr: u32, idx: CExpr, op: AssignOp, value: CExpr, site: u32 },
    For { slot: u32, start: CExpr, end: CExpr, step: Option<CExpr>, body: Vec<CStmt> },
    While { cond: CExpr, body: Vec<CStmt> },
    If { cond: CExpr, then_body: Vec<CStmt>, else_body: Vec<CStmt> },
    Eval(CExpr),
    Return(Option<CExpr>),
    Vector { op: VecOp, width: u8, dst: u32, dst_idx: CExpr, dst_site: u32, args: Vec<COperand> },
}

#[derive(Debug, Clone)]
pub(crate) struct CFunction {
    pub name: String,
    pub params: Vec<(String, SlotTy, Type)>,
    pub ret: RetType,
    pub slots: Vec<SlotTy>,
    pub body: Vec<CStmt>,
}

pub(crate) fn compile_program(p: &Program) -> Result<Vec<CFunction>, ExecError> {
    let index: HashMap<&str, usize> = p.functions.iter().enumerate().map(|(i, f)| (f.name.as_str(), i)).collect();
    let sites = Cell::new(0u32);
    p.functions
        .iter()
        .map(|f| {
            let mut c = Compiler { funcs: &index, scopes: vec![HashMap::new()], slots: Vec::new(), fname: &f.name, sites: &sites };
            let mut params = Vec::new();
            for prm in &f.params {
                c.declare(&prm.name, prm.ty.into());
                params.push((prm.name.clone(), SlotTy::from(prm.ty), prm.ty));
            }
            let body = c.block(&f.body)?;
            Ok(CFunction { name: f.name.clone(), params, ret: f.ret, slots: c.slots, body })
        })
        .collect()
}

struct Compiler<'a> {
    funcs: &'a HashMap<&'a str, usize>,
    scopes: Vec<HashMap<String, u32>>,
    slots: Vec<SlotTy>,
    fname: &'a str,
    sites: &'a Cell<u32>,
}

impl Compiler<'_> {
    fn fail<T>(&self, msg: String) -> Result<T, ExecError> {
        Err(ExecError::Compile(format!("{}: {msg}", self.fname)))
    }

    fn site(&self) -> u32 {
        let s = self.sites.get();
        self.sites.set(s + 1);
        s
    }

    fn declare(&mut self, name: &str, ty: SlotTy) -> u32 {
        let slot = self.slots.len() as u32;
        self.slots.push(ty);
        self.scopes.last_mut().expect("scope").insert(name.to_string(), slot);
        slot
    }

    fn lookup(&self, name: &str) -> Result<u32, ExecError> {
        match self.scopes.iter().rev().find_map(|s| s.get(name)) {
            Some(&s) => Ok(s),
            None => self.fail(format!("unknown identifier `{name}`")),
        }
    }

    fn block(&mut self, stmts: &[Stmt]) -> Result<Vec<CStmt>, ExecError> {
        self.scopes.push(HashMap::new());
        let out = stmts.iter().map(|s| self.stmt(s)).collect();
        self.scopes.pop();
        out
    }

    fn stmt(&mut self, s: &Stmt) -> Result<CStmt, ExecError> {
        Ok(match s {
            Stmt::Let { name, ty, init } => {
                let init_c = match (ty, init) {
                    (Type::Ptr(elem), Expr::Call { name: c, args }) if c == "alloc" && args.len() == 1 => {
                        let len = self.expr(&args[0])?;
                        let slot = self.declare(name, SlotTy::Ptr);
                        return Ok(CStmt::Alloc { slot, elem: *elem, len });
                    }
                    (_, e) => self.expr(e)?,
                };
                let slot = self.declare(name, (*ty).into());
                CStmt::Set { slot, ty: (*ty).into(), op: AssignOp::Set, value: init_c }
            }
            Stmt::Assign { target, op, value } => {
                let value = self.expr(value)?;
                match target {
                    LValue::Var(v) => {
                        let slot = self.lookup(v)?;
                        CStmt::Set { slot, ty: self.slots[slot as usize], op: *op, value }
                    }
                    LValue::Index { base, index } => {
                        CStmt::Store { ptr: self.lookup(base)?, idx: self.expr(index)?, op: *op, value, site: self.site() }
                    }
                }
            }
            Stmt::For { var, start, end, step, body, .. } => {
                let start = self.expr(start)?;
                let end = self.expr(end)?;
                let step = step.as_ref().map(|e| self.expr(e)).transpose()?;
                self.scopes.push(HashMap::new());
                let slot = self.declare(var, SlotTy::Int);
                let body = self.block(body);
                self.scopes.pop();
                CStmt::For { slot, start, end, step, body: body? }
            }
            Stmt::While { cond, body } => CStmt::While { cond: self.expr(cond)?, body: self.block(body)? },
            Stmt::If { cond, then_body, else_body } => CStmt::If {
                cond: self.expr(cond)?,
                then_body: self.block(then_body)?,
                else_body: match else_body {
                    Some(b) => self.block(b)?,
                    None => Vec::new(),
                },
            },
            Stmt::Call { name, args } => CStmt::Eval(self.call(name, args)?),
            Stmt::Return(e) => CStmt::Return(e.as_ref().map(|e| self.expr(e)).transpose()?),
            Stmt::Vector { op, width, dst_base, dst_index, args } => CStmt::Vector {
                op: *op,
                width: *width,
                dst: self.lookup(dst_base)?,
                dst_idx: self.expr(dst_index)?,
                dst_site: self.site(),
                args: args
                    .iter()
                    .map(|a| {
                        Ok(match a {
                            VecOperand::Lanes { base, index } => COperand::Lanes { ptr: self.lookup(base)?, idx: self.expr(index)?, site: self.site() },
                            VecOperand::Splat(e) => COperand::Splat(self.expr(e)?),
                        })
                    })
                    .collect::<Result<_, ExecError>>()?,
            },
        })
    }

    fn call(&self, name: &str, args: &[Expr]) -> Result<CExpr, ExecError> {
        let cargs = args.iter().map(|a| self.expr(a)).collect::<Result<Vec<_>, _>>()?;
        if let Some(&func) = self.funcs.get(name) {
            return Ok(CExpr::Call { func, args: cargs });
        }
        if resolve::is_dispatch(name) {
            return Ok(CExpr::Extern { name: name.to_string(), args: cargs });
        }
        let b = match name {
            "min" => Builtin::Min,
            "max" => Builtin::Max,
            "abs" => Builtin::Abs,
            "sqrt" => Builtin::Sqrt,
            "to_f64" => Builtin::ToF64,
            "to_f32" => Builtin::ToF32,
            "to_i64" => Builtin::ToI64,
            _ => return self.fail(format!("call to unknown function `{name}`")),
        };
        Ok(CExpr::Builtin(b, cargs))
    }

    fn expr(&self, e: &Expr) -> Result<CExpr, ExecError> {
        Ok(match e {
            Expr::Int(v) => CExpr::Int(*v),
            Expr::Float(v) => CExpr::Float(*v),
            Expr::Var(v) => CExpr::Slot(self.lookup(v)?),
            Expr::Index { base, index } => CExpr::Load { ptr: self.lookup(base)?, idx: Box::new(self.expr(index)?), site: self.site() },
            Expr::Unary { op, expr } => {
                let inner = Box::new(self.expr(expr)?);
                match op {
                    crate::minilang::UnOp::Neg => CExpr::Neg(inner),
                    crate::minilang::UnOp::Not => CExpr::Not(inner),
                }
            }
            Expr::Binary { op, lhs, rhs } => CExpr::Bin(*op, Box::new(self.expr(lhs)?), Box::new(self.expr(rhs)?)),
            Expr::Call { name, args } => self.call(name, args)?,
        })
    }
}
