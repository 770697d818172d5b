//! Recursive-descent parser producing [`Program`] values.

use super::ast::*;
use super::lexer::{tokenize, Tok, Token};
use super::FrontendError;

pub(crate) struct Parser {
    toks: Vec<Token>,
    pos: usize,
}

type PResult<T> = Result<T, FrontendError>;

impl Parser {
    pub(crate) fn new(src: &str) -> PResult<Self> {
        Ok(Parser { toks: tokenize(src)?, pos: 0 })
    }

    fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    fn peek_at(&self, n: usize) -> &Tok {
        let i = (self.pos + n).min(self.toks.len() - 1);
        &self.toks[i].tok
    }

    fn bump(&mut self) -> Token {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn err<T>(&self, msg: impl Into<String>) -> PResult<T> {
        let t = &self.toks[self.pos];
        Err(FrontendError::syntax(t.line, t.col, msg))
    }

    fn is_punct(&self, p: &str) -> bool {
        matches!(self.peek(), Tok::Punct(q) if *q == p)
    }

    fn is_keyword(&self, kw: &str) -> bool {
        matches!(self.peek(), Tok::Ident(s) if s == kw)
    }

    fn eat_punct(&mut self, p: &str) -> bool {
        if self.is_punct(p) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn expect_punct(&mut self, p: &str) -> PResult<()> {
        if self.eat_punct(p) {
            Ok(())
        } else {
            self.err(format!("expected '{p}', found {}", describe(self.peek())))
        }
    }

    fn expect_keyword(&mut self, kw: &str) -> PResult<()> {
        if self.is_keyword(kw) {
            self.bump();
            Ok(())
        } else {
            self.err(format!("expected '{kw}', found {}", describe(self.peek())))
        }
    }

    fn ident(&mut self) -> PResult<String> {
        match self.peek().clone() {
            Tok::Ident(s) if !is_reserved(&s) => {
                self.bump();
                Ok(s)
            }
            other => self.err(format!("expected identifier, found {}", describe(&other))),
        }
    }

    pub(crate) fn program(&mut self, source_name: &str) -> PResult<Program> {
        let mut functions = Vec::new();
        loop {
            let mut hints = Vec::new();
            while let Tok::Hint(text) = self.peek().clone() {
                let t = self.bump();
                hints.push(parse_hint(&text, t.line, t.col)?);
            }
            if matches!(self.peek(), Tok::Eof) {
                if !hints.is_empty() {
                    return self.err("size annotation not followed by a function");
                }
                break;
            }
            let mut f = self.function()?;
            f.hints = hints;
            functions.push(f);
        }
        Ok(Program { functions, source_name: source_name.to_string() })
    }

    fn function(&mut self) -> PResult<FunctionIR> {
        self.expect_keyword("fn")?;
        let name = self.ident()?;
        self.expect_punct("(")?;
        let mut params = Vec::new();
        if !self.is_punct(")") {
            loop {
                let pname = self.ident()?;
                self.expect_punct(":")?;
                let ty = self.ty()?;
                params.push(Param::new(pname, ty));
                if !self.eat_punct(",") {
                    break;
                }
            }
        }
        self.expect_punct(")")?;
        self.expect_punct("->")?;
        let ret = if self.is_keyword("void") {
            self.bump();
            RetType::Void
        } else {
            match self.ty()? {
                Type::Int => RetType::Int,
                Type::Float(e) => RetType::Float(e),
                Type::Ptr(_) => return self.err("functions cannot return pointers"),
            }
        };
        let body = self.block()?;
        Ok(FunctionIR { name, params, ret, body, hints: Vec::new() })
    }

    fn ty(&mut self) -> PResult<Type> {
        let ptr = self.eat_punct("*");
        let base = match self.peek() {
            Tok::Ident(s) if s == "i64" => Type::Int,
            Tok::Ident(s) if s == "f32" => Type::Float(ElemType::F32),
            Tok::Ident(s) if s == "f64" => Type::Float(ElemType::F64),
            other => return self.err(format!("expected type, found {}", describe(other))),
        };
        self.bump();
        match (ptr, base) {
            (false, t) => Ok(t),
            (true, Type::Float(e)) => Ok(Type::Ptr(e)),
            (true, _) => self.err("only f32/f64 pointers are supported"),
        }
    }

    fn block(&mut self) -> PResult<Vec<Stmt>> {
        self.expect_punct("{")?;
        let mut stmts = Vec::new();
        while !self.is_punct("}") {
            if matches!(self.peek(), Tok::Eof) {
                return self.err("unterminated block");
            }
            stmts.push(self.stmt()?);
        }
        self.bump();
        Ok(stmts)
    }

    fn stmt(&mut self) -> PResult<Stmt> {
        let word = match self.peek() {
            Tok::Ident(s) => s.clone(),
            other => return self.err(format!("expected statement, found {}", describe(other))),
        };
        match word.as_str() {
            "let" => {
                self.bump();
                let name = self.ident()?;
                self.expect_punct(":")?;
                let ty = self.ty()?;
                self.expect_punct("=")?;
                let init = self.expr()?;
                self.expect_punct(";")?;
                Ok(Stmt::Let { name, ty, init })
            }
            "for" | "parfor" => {
                self.bump();
                let var = self.ident()?;
                self.expect_keyword("in")?;
                let start = self.expr()?;
                self.expect_punct("..")?;
                let end = self.expr()?;
                let step = if self.is_keyword("step") {
                    self.bump();
                    Some(self.expr()?)
                } else {
                    None
                };
                let body = self.block()?;
                Ok(Stmt::For { var, start, end, step, parallel: word == "parfor", body })
            }
            "while" => {
                self.bump();
                let cond = self.expr()?;
                let body = self.block()?;
                Ok(Stmt::While { cond, body })
            }
            "if" => self.if_stmt(),
            "return" => {
                self.bump();
                if self.eat_punct(";") {
                    return Ok(Stmt::Return(None));
                }
                let e = self.expr()?;
                self.expect_punct(";")?;
                Ok(Stmt::Return(Some(e)))
            }
            _ if vector_mnemonic(&word).is_some() && matches!(self.peek_at(1), Tok::Punct("(")) => {
                self.vector_stmt()
            }
            _ => {
                let name = self.ident()?;
                if self.eat_punct("(") {
                    let args = self.args()?;
                    self.expect_punct(";")?;
                    return Ok(Stmt::Call { name, args });
                }
                let target = if self.eat_punct("[") {
                    let index = self.expr()?;
                    self.expect_punct("]")?;
                    LValue::Index { base: name, index }
                } else {
                    LValue::Var(name)
                };
                let op = match self.peek() {
                    Tok::Punct("=") => AssignOp::Set,
                    Tok::Punct("+=") => AssignOp::Add,
                    Tok::Punct("-=") => AssignOp::Sub,
                    Tok::Punct("*=") => AssignOp::Mul,
                    other => return self.err(format!("expected assignment, found {}", describe(other))),
                };
                self.bump();
                let value = self.expr()?;
                self.expect_punct(";")?;
                Ok(Stmt::Assign { target, op, value })
            }
        }
    }

    fn if_stmt(&mut self) -> PResult<Stmt> {
        self.expect_keyword("if")?;
        let cond = self.expr()?;
        let then_body = self.block()?;
        let else_body = if self.is_keyword("else") {
            self.bump();
            if self.is_keyword("if") {
                Some(vec![self.if_stmt()?])
            } else {
                Some(self.block()?)
            }
        } else {
            None
        };
        Ok(Stmt::If { cond, then_body, else_body })
    }

    fn vector_stmt(&mut self) -> PResult<Stmt> {
        let word = match self.bump().tok {
            Tok::Ident(s) => s,
            _ => unreachable!(),
        };
        let (op, width) = vector_mnemonic(&word).expect("checked by caller");
        self.expect_punct("(")?;
        let dst_base = self.ident()?;
        self.expect_punct("[")?;
        let dst_index = self.expr()?;
        self.expect_punct("]")?;
        let mut args = Vec::new();
        for _ in 0..op.arity() {
            self.expect_punct(",")?;
            if self.is_keyword("splat") {
                self.bump();
                self.expect_punct("(")?;
                let e = self.expr()?;
                self.expect_punct(")")?;
                args.push(VecOperand::Splat(e));
            } else {
                let base = self.ident()?;
                self.expect_punct("[")?;
                let index = self.expr()?;
                self.expect_punct("]")?;
                args.push(VecOperand::Lanes { base, index });
            }
        }
        self.expect_punct(")")?;
        self.expect_punct(";")?;
        Ok(Stmt::Vector { op, width, dst_base, dst_index, args })
    }

    fn args(&mut self) -> PResult<Vec<Expr>> {
        let mut args = Vec::new();
        if self.eat_punct(")") {
            return Ok(args);
        }
        loop {
            args.push(self.expr()?);
            if self.eat_punct(")") {
                return Ok(args);
            }
            self.expect_punct(",")?;
        }
    }

    pub(crate) fn expr(&mut self) -> PResult<Expr> {
        self.binary(1)
    }

    fn binary(&mut self, min_prec: u8) -> PResult<Expr> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Tok::Punct(p) => match binop_of(p) {
                    Some(op) if op.precedence() >= min_prec => op,
                    _ => break,
                },
                _ => break,
            };
            self.bump();
            let rhs = self.binary(op.precedence() + 1)?;
            lhs = Expr::binary(op, lhs, rhs);
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> PResult<Expr> {
        if self.eat_punct("-") {
            return Ok(Expr::Unary { op: UnOp::Neg, expr: Box::new(self.unary()?) });
        }
        if self.eat_punct("!") {
            return Ok(Expr::Unary { op: UnOp::Not, expr: Box::new(self.unary()?) });
        }
        self.primary()
    }

    fn primary(&mut self) -> PResult<Expr> {
        match self.peek().clone() {
            Tok::Int(v) => {
                self.bump();
                Ok(Expr::Int(v))
            }
            Tok::Float(v) => {
                self.bump();
                Ok(Expr::Float(v))
            }
            Tok::Punct("(") => {
                self.bump();
                let e = self.expr()?;
                self.expect_punct(")")?;
                Ok(e)
            }
            Tok::Ident(_) => {
                let name = self.ident()?;
                if self.eat_punct("(") {
                    let args = self.args()?;
                    Ok(Expr::Call { name, args })
                } else if self.eat_punct("[") {
                    let index = self.expr()?;
                    self.expect_punct("]")?;
                    Ok(Expr::Index { base: name, index: Box::new(index) })
                } else {
                    Ok(Expr::Var(name))
                }
            }
            other => self.err(format!("expected expression, found {}", describe(&other))),
        }
    }

    fn at_eof(&self) -> bool {
        matches!(self.peek(), Tok::Eof)
    }
}

fn parse_hint(text: &str, line: usize, col: usize) -> PResult<SizeHint> {
    let mut p = Parser::new(text).map_err(|e| e.relocate(line, col))?;
    let bad = |msg: &str| FrontendError::syntax(line, col, format!("bad size annotation: {msg}"));
    let kind = match p.bump().tok {
        Tok::Ident(s) => s,
        _ => return Err(bad("missing kind")),
    };
    let param = p.ident().map_err(|_| bad("missing parameter name"))?;
    let int_arg = |p: &mut Parser| match p.bump().tok {
        Tok::Int(v) => Ok(v),
        _ => Err(bad("expected integer")),
    };
    let hint = match kind.as_str() {
        "multiple_of" => SizeHint::MultipleOf { param, factor: int_arg(&mut p)? },
        "pow2" => SizeHint::PowerOfTwo { param },
        "fix" => SizeHint::Fixed { param, value: int_arg(&mut p)? },
        "derive" => {
            p.expect_punct("=").map_err(|_| bad("expected '='"))?;
            let expr = p.expr().map_err(|e| e.relocate(line, col))?;
            SizeHint::Derive { param, expr }
        }
        other => return Err(bad(&format!("unknown kind '{other}'"))),
    };
    if !p.at_eof() {
        return Err(bad("trailing tokens"));
    }
    Ok(hint)
}

fn binop_of(p: &str) -> Option<BinOp> {
    Some(match p {
        "+" => BinOp::Add,
        "-" => BinOp::Sub,
        "*" => BinOp::Mul,
        "/" => BinOp::Div,
        "%" => BinOp::Rem,
        "<" => BinOp::Lt,
        "<=" => BinOp::Le,
        ">" => BinOp::Gt,
        ">=" => BinOp::Ge,
        "==" => BinOp::Eq,
        "!=" => BinOp::Ne,
        "&&" => BinOp::And,
        "||" => BinOp::Or,
        _ => return None,
    })
}

pub(crate) fn vector_mnemonic(word: &str) -> Option<(VecOp, u8)> {
    let (stem, width) = if let Some(s) = word.strip_suffix('4') {
        (s, 4)
    } else if let Some(s) = word.strip_suffix('8') {
        (s, 8)
    } else {
        return None;
    };
    let op = match stem {
        "vfma" => VecOp::Fma,
        "vadd" => VecOp::Add,
        "vmul" => VecOp::Mul,
        "vcopy" => VecOp::Copy,
        _ => return None,
    };
    Some((op, width))
}

const RESERVED: &[&str] = &[
    "fn", "let", "for", "parfor", "in", "step", "while", "if", "else", "return", "void", "i64",
    "f32", "f64", "splat",
];

fn is_reserved(s: &str) -> bool {
    RESERVED.contains(&s)
}

fn describe(t: &Tok) -> String {
    match t {
        Tok::Ident(s) => format!("'{s}'"),
        Tok::Int(v) => format!("'{v}'"),
        Tok::Float(v) => format!("'{v}'"),
        Tok::Hint(_) => "size annotation".into(),
        Tok::Punct(p) => format!("'{p}'"),
        Tok::Eof => "end of input".into(),
    }
}
