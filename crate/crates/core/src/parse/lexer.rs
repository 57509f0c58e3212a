use crate::ir::SourceSpan;

use super::ParseError;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Tok {
    Ident(String),
    Int(i64),
    Sym(&'static str),
    Eof,
}

impl Tok {
    pub fn describe(&self) -> String {
        match self {
            Tok::Ident(s) => format!("`{s}`"),
            Tok::Int(v) => format!("`{v}`"),
            Tok::Sym(s) => format!("`{s}`"),
            Tok::Eof => "end of input".to_string(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Token {
    pub tok: Tok,
    pub line: u32,
    pub column: u32,
    pub length: u32,
}

// Longest symbols first so that prefixes do not shadow them.
const SYMBOLS: &[&str] = &[
    "..=", "==>", "..", "->", "==", "!=", "<=", ">=", "&&", "||", "(", ")", "[", "]", "{", "}",
    ",", ";", ":", ".", "=", "<", ">", "+", "-", "*", "/", "%", "!",
];

pub fn tokenize(file: &str, src: &str) -> Result<Vec<Token>, ParseError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0usize, 1u32, 1u32);
    let err = |line: u32, column: u32, msg: String| ParseError::Syntax {
        span: SourceSpan::new(file, line, column, 1),
        expected: vec![],
        found: msg,
    };
    while i < bytes.len() {
        let ch = bytes[i];
        if ch == b'\n' {
            i += 1;
            line += 1;
            col = 1;
            continue;
        }
        if ch.is_ascii_whitespace() {
            i += 1;
            col += 1;
            continue;
        }
        if src[i..].starts_with("//") {
            while i < bytes.len() && bytes[i] != b'\n' {
                i += 1;
            }
            continue;
        }
        if src[i..].starts_with("/*") {
            let (sl, sc) = (line, col);
            i += 2;
            col += 2;
            loop {
                if i >= bytes.len() {
                    return Err(err(sl, sc, "unterminated comment".into()));
                }
                if bytes[i..].starts_with(b"*/") {
                    i += 2;
                    col += 2;
                    break;
                }
                if bytes[i] == b'\n' {
                    line += 1;
                    col = 1;
                } else {
                    col += 1;
                }
                i += 1;
            }
            continue;
        }
        let start = i;
        if ch.is_ascii_digit() {
            while i < bytes.len() && bytes[i].is_ascii_digit() {
                i += 1;
            }
            let text = &src[start..i];
            let v: i64 = text
                .parse()
                .map_err(|_| err(line, col, format!("integer literal `{text}` is too large")))?;
            out.push(Token { tok: Tok::Int(v), line, column: col, length: (i - start) as u32 });
            col += (i - start) as u32;
            continue;
        }
        if ch.is_ascii_alphabetic() || ch == b'_' {
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            let text = src[start..i].to_string();
            out.push(Token { tok: Tok::Ident(text), line, column: col, length: (i - start) as u32 });
            col += (i - start) as u32;
            continue;
        }
        match SYMBOLS.iter().find(|s| src[i..].starts_with(**s)) {
            Some(s) => {
                out.push(Token { tok: Tok::Sym(s), line, column: col, length: s.len() as u32 });
                i += s.len();
                col += s.len() as u32;
            }
            None => {
                let c = src[i..].chars().next().unwrap_or('?');
                return Err(err(line, col, format!("unexpected character `{c}`")));
            }
        }
    }
    out.push(Token { tok: Tok::Eof, line, column: col, length: 0 });
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symbols_and_positions() {
        let toks = tokenize("t", "a..=b // c\n  x ==> y").unwrap();
        let kinds: Vec<_> = toks.iter().map(|t| t.tok.clone()).collect();
        assert_eq!(
            kinds,
            vec![
                Tok::Ident("a".into()),
                Tok::Sym("..="),
                Tok::Ident("b".into()),
                Tok::Ident("x".into()),
                Tok::Sym("==>"),
                Tok::Ident("y".into()),
                Tok::Eof
            ]
        );
        assert_eq!((toks[3].line, toks[3].column), (2, 3));
    }

    #[test]
    fn range_after_integer() {
        let toks = tokenize("t", "0..10").unwrap();
        assert_eq!(toks[0].tok, Tok::Int(0));
        assert_eq!(toks[1].tok, Tok::Sym(".."));
    }
}
