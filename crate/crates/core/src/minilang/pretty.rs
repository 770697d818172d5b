//! Canonical text form: 2-space indentation, minimal parentheses.

use std::fmt::Write;

use super::ast::*;

pub fn print_program(p: &Program) -> String {
    let mut out = String::new();
    for (i, f) in p.functions.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        print_function_into(&mut out, f);
    }
    out
}

pub fn print_function(f: &FunctionIR) -> String {
    let mut out = String::new();
    print_function_into(&mut out, f);
    out
}

fn print_function_into(out: &mut String, f: &FunctionIR) {
    for h in &f.hints {
        let _ = match h {
            SizeHint::MultipleOf { param, factor } => writeln!(out, "//@ multiple_of {param} {factor}"),
            SizeHint::PowerOfTwo { param } => writeln!(out, "//@ pow2 {param}"),
            SizeHint::Fixed { param, value } => writeln!(out, "//@ fix {param} {value}"),
            SizeHint::Derive { param, expr } => writeln!(out, "//@ derive {param} = {}", print_expr(expr)),
        };
    }
    let params: Vec<String> = f.params.iter().map(|p| format!("{}: {}", p.name, p.ty)).collect();
    let _ = write!(out, "fn {}({}) -> {} ", f.name, params.join(", "), f.ret);
    block(out, &f.body, 0);
    out.push('\n');
}

fn indent(out: &mut String, level: usize) {
    for _ in 0..level {
        out.push_str("  ");
    }
}

fn block(out: &mut String, stmts: &[Stmt], level: usize) {
    if stmts.is_empty() {
        out.push_str("{ }");
        return;
    }
    out.push_str("{\n");
    for s in stmts {
        stmt(out, s, level + 1);
    }
    indent(out, level);
    out.push('}');
}

fn stmt(out: &mut String, s: &Stmt, level: usize) {
    indent(out, level);
    match s {
        Stmt::Let { name, ty, init } => {
            let _ = writeln!(out, "let {name}: {ty} = {};", print_expr(init));
        }
        Stmt::Assign { target, op, value } => {
            let lhs = match target {
                LValue::Var(v) => v.clone(),
                LValue::Index { base, index } => format!("{base}[{}]", print_expr(index)),
            };
            let _ = writeln!(out, "{lhs} {} {};", op.symbol(), print_expr(value));
        }
        Stmt::For { var, start, end, step, parallel, body } => {
            let kw = if *parallel { "parfor" } else { "for" };
            let _ = write!(out, "{kw} {var} in {}..{}", print_expr(start), print_expr(end));
            if let Some(st) = step {
                let _ = write!(out, " step {}", print_expr(st));
            }
            out.push(' ');
            block(out, body, level);
            out.push('\n');
        }
        Stmt::While { cond, body } => {
            let _ = write!(out, "while {} ", print_expr(cond));
            block(out, body, level);
            out.push('\n');
        }
        Stmt::If { cond, then_body, else_body } => {
            let _ = write!(out, "if {} ", print_expr(cond));
            block(out, then_body, level);
            if let Some(e) = else_body {
                out.push_str(" else ");
                block(out, e, level);
            }
            out.push('\n');
        }
        Stmt::Call { name, args } => {
            let _ = writeln!(out, "{name}({});", join_exprs(args));
        }
        Stmt::Return(None) => out.push_str("return;\n"),
        Stmt::Return(Some(e)) => {
            let _ = writeln!(out, "return {};", print_expr(e));
        }
        Stmt::Vector { op, width, dst_base, dst_index, args } => {
            let mut parts = vec![format!("{dst_base}[{}]", print_expr(dst_index))];
            for a in args {
                parts.push(match a {
                    VecOperand::Lanes { base, index } => format!("{base}[{}]", print_expr(index)),
                    VecOperand::Splat(e) => format!("splat({})", print_expr(e)),
                });
            }
            let _ = writeln!(out, "{}{width}({});", op.mnemonic(), parts.join(", "));
        }
    }
}

fn join_exprs(args: &[Expr]) -> String {
    args.iter().map(print_expr).collect::<Vec<_>>().join(", ")
}

pub fn print_expr(e: &Expr) -> String {
    let mut s = String::new();
    expr(&mut s, e);
    s
}

const UNARY_PREC: u8 = 7;

fn prec(e: &Expr) -> u8 {
    match e {
        Expr::Binary { op, .. } => op.precedence(),
        Expr::Unary { .. } => UNARY_PREC,
        _ => u8::MAX,
    }
}

fn expr(out: &mut String, e: &Expr) {
    match e {
        Expr::Int(v) => {
            let _ = write!(out, "{v}");
        }
        Expr::Float(v) => {
            let _ = write!(out, "{v:?}");
        }
        Expr::Var(v) => out.push_str(v),
        Expr::Index { base, index } => {
            let _ = write!(out, "{base}[{}]", print_expr(index));
        }
        Expr::Unary { op, expr: inner } => {
            out.push_str(match op {
                UnOp::Neg => "-",
                UnOp::Not => "!",
            });
            child(out, inner, prec(inner) < UNARY_PREC);
        }
        Expr::Binary { op, lhs, rhs } => {
            let p = op.precedence();
            child(out, lhs, prec(lhs) < p);
            let _ = write!(out, " {} ", op.symbol());
            child(out, rhs, prec(rhs) <= p);
        }
        Expr::Call { name, args } => {
            let _ = write!(out, "{name}({})", join_exprs(args));
        }
    }
}

fn child(out: &mut String, e: &Expr, paren: bool) {
    if paren {
        out.push('(');
        expr(out, e);
        out.push(')');
    } else {
        expr(out, e);
    }
}
