//! Syntax tree for the mini-language.

use serde::{Deserialize, Serialize};
use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ElemType {
    F32,
    F64,
}

impl ElemType {
    /// Rounds a value to the precision of this element type.
    pub fn round(self, v: f64) -> f64 {
        match self {
            ElemType::F32 => v as f32 as f64,
            ElemType::F64 => v,
        }
    }
}

impl fmt::Display for ElemType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ElemType::F32 => "f32",
            ElemType::F64 => "f64",
        })
    }
}

/// Declared type of a parameter or local.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Type {
    Int,
    Float(ElemType),
    Ptr(ElemType),
}

impl fmt::Display for Type {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Type::Int => f.write_str("i64"),
            Type::Float(e) => write!(f, "{e}"),
            Type::Ptr(e) => write!(f, "*{e}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ParamKind {
    IntScalar,
    FloatScalar,
    Pointer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub ty: Type,
}

impl Param {
    pub fn new(name: impl Into<String>, ty: Type) -> Self {
        Param { name: name.into(), ty }
    }

    pub fn kind(&self) -> ParamKind {
        match self.ty {
            Type::Int => ParamKind::IntScalar,
            Type::Float(_) => ParamKind::FloatScalar,
            Type::Ptr(_) => ParamKind::Pointer,
        }
    }

    /// Element type of a pointer parameter; `None` for scalars.
    pub fn element_type(&self) -> Option<ElemType> {
        match self.ty {
            Type::Ptr(e) => Some(e),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RetType {
    Void,
    Int,
    Float(ElemType),
}

impl fmt::Display for RetType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RetType::Void => f.write_str("void"),
            RetType::Int => f.write_str("i64"),
            RetType::Float(e) => write!(f, "{e}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnOp {
    Neg,
    Not,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Rem,
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
    Ne,
    And,
    Or,
}

impl BinOp {
    pub fn precedence(self) -> u8 {
        match self {
            BinOp::Or => 1,
            BinOp::And => 2,
            BinOp::Eq | BinOp::Ne => 3,
            BinOp::Lt | BinOp::Le | BinOp::Gt | BinOp::Ge => 4,
            BinOp::Add | BinOp::Sub => 5,
            BinOp::Mul | BinOp::Div | BinOp::Rem => 6,
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Rem => "%",
            BinOp::Lt => "<",
            BinOp::Le => "<=",
            BinOp::Gt => ">",
            BinOp::Ge => ">=",
            BinOp::Eq => "==",
            BinOp::Ne => "!=",
            BinOp::And => "&&",
            BinOp::Or => "||",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Int(i64),
    Float(f64),
    Var(String),
    Index { base: String, index: Box<Expr> },
    Unary { op: UnOp, expr: Box<Expr> },
    Binary { op: BinOp, lhs: Box<Expr>, rhs: Box<Expr> },
    Call { name: String, args: Vec<Expr> },
}

impl Expr {
    pub fn var(name: &str) -> Expr {
        Expr::Var(name.to_string())
    }

    pub fn binary(op: BinOp, lhs: Expr, rhs: Expr) -> Expr {
        Expr::Binary { op, lhs: Box::new(lhs), rhs: Box::new(rhs) }
    }

    /// Calls `f` on this expression and every sub-expression, pre-order.
    pub fn walk<'a>(&'a self, f: &mut impl FnMut(&'a Expr)) {
        f(self);
        match self {
            Expr::Int(_) | Expr::Float(_) | Expr::Var(_) => {}
            Expr::Index { index, .. } => index.walk(f),
            Expr::Unary { expr, .. } => expr.walk(f),
            Expr::Binary { lhs, rhs, .. } => {
                lhs.walk(f);
                rhs.walk(f);
            }
            Expr::Call { args, .. } => args.iter().for_each(|a| a.walk(f)),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LValue {
    Var(String),
    Index { base: String, index: Expr },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AssignOp {
    Set,
    Add,
    Sub,
    Mul,
}

impl AssignOp {
    pub fn symbol(self) -> &'static str {
        match self {
            AssignOp::Set => "=",
            AssignOp::Add => "+=",
            AssignOp::Sub => "-=",
            AssignOp::Mul => "*=",
        }
    }
}

/// Fixed-width vector statement kinds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VecOp {
    /// `dst += a * b`
    Fma,
    /// `dst = a + b`
    Add,
    /// `dst = a * b`
    Mul,
    /// `dst = a`
    Copy,
}

impl VecOp {
    pub fn arity(self) -> usize {
        match self {
            VecOp::Copy => 1,
            _ => 2,
        }
    }

    pub fn mnemonic(self) -> &'static str {
        match self {
            VecOp::Fma => "vfma",
            VecOp::Add => "vadd",
            VecOp::Mul => "vmul",
            VecOp::Copy => "vcopy",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum VecOperand {
    /// `width` consecutive elements starting at `base[index]`.
    Lanes { base: String, index: Expr },
    /// One scalar broadcast to every lane.
    Splat(Expr),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Stmt {
    Let { name: String, ty: Type, init: Expr },
    Assign { target: LValue, op: AssignOp, value: Expr },
    For { var: String, start: Expr, end: Expr, step: Option<Expr>, parallel: bool, body: Vec<Stmt> },
    While { cond: Expr, body: Vec<Stmt> },
    If { cond: Expr, then_body: Vec<Stmt>, else_body: Option<Vec<Stmt>> },
    Call { name: String, args: Vec<Expr> },
    Return(Option<Expr>),
    Vector { op: VecOp, width: u8, dst_base: String, dst_index: Expr, args: Vec<VecOperand> },
}

/// Annotations on a function describing which size values it accepts.
#[derive(Debug, Clone, PartialEq)]
pub enum SizeHint {
    MultipleOf { param: String, factor: i64 },
    PowerOfTwo { param: String },
    Fixed { param: String, value: i64 },
    Derive { param: String, expr: Expr },
}

impl SizeHint {
    pub fn param(&self) -> &str {
        match self {
            SizeHint::MultipleOf { param, .. }
            | SizeHint::PowerOfTwo { param }
            | SizeHint::Fixed { param, .. }
            | SizeHint::Derive { param, .. } => param,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FunctionIR {
    pub name: String,
    pub params: Vec<Param>,
    pub ret: RetType,
    pub body: Vec<Stmt>,
    pub hints: Vec<SizeHint>,
}

impl FunctionIR {
    pub fn param(&self, name: &str) -> Option<&Param> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn pointer_params(&self) -> impl Iterator<Item = &Param> {
        self.params.iter().filter(|p| p.kind() == ParamKind::Pointer)
    }

    pub fn int_params(&self) -> impl Iterator<Item = &Param> {
        self.params.iter().filter(|p| p.kind() == ParamKind::IntScalar)
    }

    /// Deepest loop nesting in the body, not following calls.
    pub fn max_loop_depth(&self) -> usize {
        fn depth(stmts: &[Stmt]) -> usize {
            stmts
                .iter()
                .map(|s| match s {
                    Stmt::For { body, .. } | Stmt::While { body, .. } => 1 + depth(body),
                    Stmt::If { then_body, else_body, .. } => {
                        depth(then_body).max(else_body.as_deref().map_or(0, depth))
                    }
                    _ => 0,
                })
                .max()
                .unwrap_or(0)
        }
        depth(&self.body)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Program {
    pub functions: Vec<FunctionIR>,
    pub source_name: String,
}

impl Program {
    pub fn function(&self, name: &str) -> Option<&FunctionIR> {
        self.functions.iter().find(|f| f.name == name)
    }
}
