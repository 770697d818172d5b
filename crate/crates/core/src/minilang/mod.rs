//! Front end for the `.ml` mini-language: a small C-like language with
//! typed pointers, counted loops, and fixed-width vector statements.
//!
//! The grammar is documented in `docs/minilang.md`.

pub mod ast;
mod lexer;
mod parser;
pub mod pretty;
pub mod resolve;

pub use ast::*;
pub use pretty::{print_expr, print_function, print_program};

use serde::Serialize;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FrontendError {
    #[error("syntax error at line {line}, column {col}: {msg}")]
    Syntax { line: usize, col: usize, msg: String },
    #[error("in function `{function}`: {msg}")]
    Resolve { function: String, msg: String },
}

impl FrontendError {
    pub(crate) fn syntax(line: usize, col: usize, msg: impl Into<String>) -> Self {
        FrontendError::Syntax { line, col, msg: msg.into() }
    }

    pub(crate) fn resolve(function: &str, msg: impl Into<String>) -> Self {
        FrontendError::Resolve { function: function.to_string(), msg: msg.into() }
    }

    /// Hint bodies are lexed on their own; move their positions onto the hint line.
    fn relocate(self, line: usize, col: usize) -> Self {
        match self {
            FrontendError::Syntax { col: c, msg, .. } => FrontendError::Syntax { line, col: col + c, msg },
            other => other,
        }
    }
}

/// Parses and resolves a whole source file.
pub fn parse_program(source: &str) -> Result<Program, FrontendError> {
    parse_named(source, "<input>")
}

pub fn parse_named(source: &str, source_name: &str) -> Result<Program, FrontendError> {
    let program = parser::Parser::new(source)?.program(source_name)?;
    resolve::check_program(&program)?;
    Ok(program)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FunctionSummary {
    pub name: String,
    pub params: String,
    pub max_loop_depth: usize,
}

pub fn list_functions(p: &Program) -> Vec<FunctionSummary> {
    p.functions
        .iter()
        .map(|f| FunctionSummary {
            name: f.name.clone(),
            params: f.params.iter().map(|p| format!("{}: {}", p.name, p.ty)).collect::<Vec<_>>().join(", "),
            max_loop_depth: f.max_loop_depth(),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const NAIVE: &str = "
fn gemm(A: *f32, B: *f32, C: *f32, m: i64, n: i64, k: i64) -> void {
  for i in 0..m {
    for j in 0..n {
      let acc: f32 = 0.0;
      for p in 0..k {
        acc += A[i * k + p] * B[p * n + j];
      }
      C[i * n + j] = acc;
    }
  }
}
";

    #[test]
    fn minimal_function() {
        let p = parse_program("fn f(a: i64) -> void { }").unwrap();
        assert_eq!(p.functions.len(), 1);
        assert_eq!(p.functions[0].params[0].kind(), ParamKind::IntScalar);
        assert_eq!(p.functions[0].params[0].element_type(), None);
    }

    #[test]
    fn naive_gemm_shape() {
        let p = parse_program(NAIVE).unwrap();
        let f = &p.functions[0];
        assert_eq!(f.pointer_params().count(), 3);
        assert_eq!(f.int_params().count(), 3);
        assert_eq!(f.max_loop_depth(), 3);
        assert_eq!(list_functions(&p)[0].max_loop_depth, 3);
    }

    #[test]
    fn malformed_input_reports_line() {
        match parse_program("fn f( {") {
            Err(FrontendError::Syntax { line, .. }) => assert_eq!(line, 1),
            other => panic!("expected syntax error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_identifier_is_resolve_error() {
        let err = parse_program("fn f(a: i64) -> void { b = a; }").unwrap_err();
        assert!(matches!(err, FrontendError::Resolve { .. }));
        let err = parse_program("fn f(a: i64) -> void { g(a); }").unwrap_err();
        assert!(matches!(err, FrontendError::Resolve { .. }));
    }

    #[test]
    fn parfor_rejects_outer_scalar_writes() {
        let src = "fn f(A: *f32, n: i64) -> void { let s: f32 = 0.0; parfor i in 0..n { s += A[i]; } }";
        assert!(matches!(parse_program(src), Err(FrontendError::Resolve { .. })));
        let ok = "fn f(A: *f32, n: i64) -> void { parfor i in 0..n { let s: f32 = A[i]; A[i] = s * 2.0; } }";
        assert!(parse_program(ok).is_ok());
    }

    #[test]
    fn function_order_and_empty_program() {
        let p = parse_program("fn main() -> void { }\nfn gemm(n: i64) -> void { }").unwrap();
        let names: Vec<_> = list_functions(&p).into_iter().map(|s| s.name).collect();
        assert_eq!(names, ["main", "gemm"]);
        assert!(list_functions(&parse_program("").unwrap()).is_empty());
    }

    #[test]
    fn hints_and_vectors_round_trip() {
        let src = "//@ multiple_of n 8\n//@ derive k = n * 2 - 1\nfn f(A: *f32, B: *f32, n: i64, k: i64) -> void {\n  for i in 0..n step 8 {\n    vfma8(B[i], splat(A[0]), A[i]);\n    vcopy4(B[i], A[i + 4]);\n  }\n}\n";
        let p = parse_program(src).unwrap();
        assert_eq!(p.functions[0].hints.len(), 2);
        let printed = print_program(&p);
        assert_eq!(parse_program(&printed).unwrap(), p);
    }

    #[test]
    fn printer_keeps_associativity() {
        let src = "fn f(a: i64, b: i64, c: i64) -> i64 { return a - (b - c) * -(a + 1) / (2 % c); }";
        let p = parse_program(src).unwrap();
        let again = parse_program(&print_program(&p)).unwrap();
        assert_eq!(again, p);
        assert!(print_program(&p).contains("a - (b - c)"));
    }
}
