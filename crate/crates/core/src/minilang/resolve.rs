//! Name resolution and static checks run after parsing.

use std::collections::{HashMap, HashSet};

use super::ast::*;
use super::FrontendError;

/// Builtins callable from any function, with their arity (`None` = variadic).
pub const BUILTINS: &[(&str, Option<usize>)] = &[
    ("min", Some(2)),
    ("max", Some(2)),
    ("abs", Some(1)),
    ("sqrt", Some(1)),
    ("to_f64", Some(1)),
    ("to_f32", Some(1)),
    ("to_i64", Some(1)),
    ("alloc", Some(1)),
    ("atc_dispatch_gemm", None),
    ("atc_dispatch_conv2d", None),
];

pub fn builtin_arity(name: &str) -> Option<Option<usize>> {
    BUILTINS.iter().find(|(n, _)| *n == name).map(|(_, a)| *a)
}

pub fn is_dispatch(name: &str) -> bool {
    name.starts_with("atc_dispatch_")
}

struct Decl {
    ty: Type,
    parfor_level: usize,
}

struct Resolver<'p> {
    arities: HashMap<&'p str, usize>,
    function: &'p str,
    scopes: Vec<HashMap<String, Decl>>,
    parfor_level: usize,
}

pub fn check_program(p: &Program) -> Result<(), FrontendError> {
    let mut arities = HashMap::new();
    for f in &p.functions {
        if builtin_arity(&f.name).is_some() {
            return Err(FrontendError::resolve(&f.name, "function name shadows a builtin"));
        }
        if arities.insert(f.name.as_str(), f.params.len()).is_some() {
            return Err(FrontendError::resolve(&f.name, "duplicate function name"));
        }
    }
    for f in &p.functions {
        let mut r = Resolver { arities: arities.clone(), function: &f.name, scopes: vec![HashMap::new()], parfor_level: 0 };
        r.function(f)?;
    }
    Ok(())
}

impl Resolver<'_> {
    fn fail<T>(&self, msg: impl Into<String>) -> Result<T, FrontendError> {
        Err(FrontendError::resolve(self.function, msg))
    }

    fn declare(&mut self, name: &str, ty: Type) -> Result<(), FrontendError> {
        let level = self.parfor_level;
        let scope = self.scopes.last_mut().expect("scope stack never empty");
        if scope.contains_key(name) {
            return self.fail(format!("`{name}` declared twice in the same scope"));
        }
        scope.insert(name.to_string(), Decl { ty, parfor_level: level });
        Ok(())
    }

    fn lookup(&self, name: &str) -> Result<&Decl, FrontendError> {
        match self.scopes.iter().rev().find_map(|s| s.get(name)) {
            Some(d) => Ok(d),
            None => self.fail(format!("unknown identifier `{name}`")),
        }
    }

    fn function(&mut self, f: &FunctionIR) -> Result<(), FrontendError> {
        for p in &f.params {
            self.declare(&p.name, p.ty)?;
        }
        let mut hinted = HashSet::new();
        for h in &f.hints {
            match f.param(h.param()) {
                Some(p) if p.ty == Type::Int => {}
                _ => return self.fail(format!("size annotation names `{}`, not an i64 parameter", h.param())),
            }
            if !hinted.insert(h.param().to_string()) {
                return self.fail(format!("`{}` has more than one size annotation", h.param()));
            }
            if let SizeHint::Derive { expr, .. } = h {
                self.expr(expr)?;
            }
        }
        self.block(&f.body)
    }

    fn block(&mut self, stmts: &[Stmt]) -> Result<(), FrontendError> {
        self.scopes.push(HashMap::new());
        for s in stmts {
            self.stmt(s)?;
        }
        self.scopes.pop();
        Ok(())
    }

    fn pointer(&self, name: &str) -> Result<(), FrontendError> {
        match self.lookup(name)?.ty {
            Type::Ptr(_) => Ok(()),
            _ => self.fail(format!("`{name}` is indexed but is not a pointer")),
        }
    }

    fn stmt(&mut self, s: &Stmt) -> Result<(), FrontendError> {
        match s {
            Stmt::Let { name, ty, init } => {
                match (ty, init) {
                    (Type::Ptr(_), Expr::Call { name: c, args }) if c == "alloc" => {
                        args.iter().try_for_each(|a| self.expr(a))?;
                    }
                    (Type::Ptr(_), Expr::Var(v)) => self.pointer(v)?,
                    (Type::Ptr(_), _) => return self.fail("pointer locals must be initialised with alloc(..) or another pointer"),
                    (_, init) => self.expr(init)?,
                }
                self.declare(name, *ty)
            }
            Stmt::Assign { target, value, .. } => {
                self.expr(value)?;
                match target {
                    LValue::Var(v) => {
                        let d = self.lookup(v)?;
                        if matches!(d.ty, Type::Ptr(_)) {
                            return self.fail(format!("cannot assign to pointer `{v}`"));
                        }
                        if d.parfor_level < self.parfor_level {
                            return self.fail(format!("parfor body writes `{v}`, declared outside the loop"));
                        }
                        Ok(())
                    }
                    LValue::Index { base, index } => {
                        self.pointer(base)?;
                        self.expr(index)
                    }
                }
            }
            Stmt::For { var, start, end, step, parallel, body } => {
                self.expr(start)?;
                self.expr(end)?;
                if let Some(st) = step {
                    self.expr(st)?;
                }
                if *parallel {
                    self.parfor_level += 1;
                }
                self.scopes.push(HashMap::new());
                self.declare(var, Type::Int)?;
                let r = self.block(body);
                self.scopes.pop();
                if *parallel {
                    self.parfor_level -= 1;
                }
                r
            }
            Stmt::While { cond, body } => {
                self.expr(cond)?;
                self.block(body)
            }
            Stmt::If { cond, then_body, else_body } => {
                self.expr(cond)?;
                self.block(then_body)?;
                if let Some(e) = else_body {
                    self.block(e)?;
                }
                Ok(())
            }
            Stmt::Call { name, args } => self.call(name, args),
            Stmt::Return(e) => e.as_ref().map_or(Ok(()), |e| self.expr(e)),
            Stmt::Vector { dst_base, dst_index, args, .. } => {
                self.pointer(dst_base)?;
                self.expr(dst_index)?;
                for a in args {
                    match a {
                        VecOperand::Lanes { base, index } => {
                            self.pointer(base)?;
                            self.expr(index)?;
                        }
                        VecOperand::Splat(e) => self.expr(e)?,
                    }
                }
                Ok(())
            }
        }
    }

    fn call(&self, name: &str, args: &[Expr]) -> Result<(), FrontendError> {
        if name == "alloc" {
            return self.fail("alloc(..) is only allowed as a pointer local initialiser");
        }
        let expected = match (self.arities.get(name), builtin_arity(name)) {
            (Some(&n), _) => Some(n),
            (None, Some(a)) => a,
            (None, None) => return self.fail(format!("call to unknown function `{name}`")),
        };
        if let Some(n) = expected {
            if n != args.len() {
                return self.fail(format!("`{name}` expects {n} arguments, got {}", args.len()));
            }
        }
        args.iter().try_for_each(|a| self.expr(a))
    }

    fn expr(&self, e: &Expr) -> Result<(), FrontendError> {
        match e {
            Expr::Int(_) | Expr::Float(_) => Ok(()),
            Expr::Var(v) => self.lookup(v).map(|_| ()),
            Expr::Index { base, index } => {
                self.pointer(base)?;
                self.expr(index)
            }
            Expr::Unary { expr, .. } => self.expr(expr),
            Expr::Binary { lhs, rhs, .. } => {
                self.expr(lhs)?;
                self.expr(rhs)
            }
            Expr::Call { name, args } => self.call(name, args),
        }
    }
}
