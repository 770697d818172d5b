use super::FrontendError;

#[derive(Debug, Clone, PartialEq)]
pub enum Tok {
    Ident(String),
    Int(i64),
    Float(f64),
    /// Body of a `//@` annotation line.
    Hint(String),
    Punct(&'static str),
    Eof,
}

#[derive(Debug, Clone)]
pub struct Token {
    pub tok: Tok,
    pub line: usize,
    pub col: usize,
}

const PUNCTS: &[&str] = &[
    "..", "->", "+=", "-=", "*=", "<=", ">=", "==", "!=", "&&", "||", "(", ")", "{", "}", "[", "]",
    ",", ";", ":", "+", "-", "*", "/", "%", "<", ">", "=", "!",
];

pub fn tokenize(src: &str) -> Result<Vec<Token>, FrontendError> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0usize, 1usize, 1usize);

    while i < chars.len() {
        let c = chars[i];
        if c == '\n' {
            i += 1;
            line += 1;
            col = 1;
            continue;
        }
        if c.is_whitespace() {
            i += 1;
            col += 1;
            continue;
        }
        let (start_line, start_col) = (line, col);
        if c == '/' && chars.get(i + 1) == Some(&'/') {
            let end = chars[i..].iter().position(|&c| c == '\n').map_or(chars.len(), |p| i + p);
            if chars.get(i + 2) == Some(&'@') {
                let body: String = chars[i + 3..end].iter().collect();
                out.push(Token { tok: Tok::Hint(body.trim().to_string()), line, col });
            }
            col += end - i;
            i = end;
            continue;
        }
        if c.is_ascii_alphabetic() || c == '_' {
            let mut j = i;
            while j < chars.len() && (chars[j].is_ascii_alphanumeric() || chars[j] == '_') {
                j += 1;
            }
            out.push(Token { tok: Tok::Ident(chars[i..j].iter().collect()), line, col });
            col += j - i;
            i = j;
            continue;
        }
        if c.is_ascii_digit() {
            let mut j = i;
            while j < chars.len() && chars[j].is_ascii_digit() {
                j += 1;
            }
            let mut is_float = false;
            // `0..n` must lex as Int, Punct("..")
            if j + 1 < chars.len() && chars[j] == '.' && chars[j + 1].is_ascii_digit() {
                is_float = true;
                j += 1;
                while j < chars.len() && chars[j].is_ascii_digit() {
                    j += 1;
                }
            }
            if j < chars.len() && (chars[j] == 'e' || chars[j] == 'E') {
                let mut k = j + 1;
                if k < chars.len() && (chars[k] == '+' || chars[k] == '-') {
                    k += 1;
                }
                if k < chars.len() && chars[k].is_ascii_digit() {
                    is_float = true;
                    while k < chars.len() && chars[k].is_ascii_digit() {
                        k += 1;
                    }
                    j = k;
                }
            }
            let text: String = chars[i..j].iter().collect();
            let tok = if is_float {
                Tok::Float(text.parse().map_err(|_| FrontendError::syntax(line, col, "bad float literal"))?)
            } else {
                Tok::Int(text.parse().map_err(|_| FrontendError::syntax(line, col, "integer literal out of range"))?)
            };
            out.push(Token { tok, line, col });
            col += j - i;
            i = j;
            continue;
        }
        let rest: String = chars[i..chars.len().min(i + 2)].iter().collect();
        match PUNCTS.iter().find(|p| rest.starts_with(**p)) {
            Some(p) => {
                out.push(Token { tok: Tok::Punct(p), line: start_line, col: start_col });
                i += p.len();
                col += p.len();
            }
            None => {
                return Err(FrontendError::syntax(line, col, format!("unexpected character '{c}'")));
            }
        }
    }
    out.push(Token { tok: Tok::Eof, line, col });
    Ok(out)
}
