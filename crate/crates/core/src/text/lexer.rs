use super::ParseError;

#[derive(Clone, Debug, PartialEq, Eq)]
pub(crate) enum Tok {
    Ident(String),
    /// Literal value with an optional `w<width>` suffix.
    Int(u64, Option<u32>),
    Sym(&'static str),
}

#[derive(Clone, Debug)]
pub(crate) struct Token {
    pub tok: Tok,
    pub col: usize,
}

// Longest first.
const SYMBOLS: [&str; 27] = [
    ">>a", "<=s", ">=s", ":=", "->", "==", "!=", "<=", ">=", "<<", ">>", "<s", ">s", "+", "-", "*",
    "/", "%", "&", "|", "^", "!", "<", ">", "(", ")", ",",
];
const EXTRA: [&str; 4] = [":", "[", "]", "="];

fn is_ident_start(c: char) -> bool {
    c.is_ascii_alphabetic() || c == '_'
}

fn is_ident_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_' || c == '.'
}

/// Tokenize one line (comments already stripped). Columns are 1-based.
pub(crate) fn lex_line(text: &str, line: usize) -> Result<Vec<Token>, ParseError> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let col = i + 1;
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        if c.is_ascii_digit() {
            let start = i;
            let (radix, digits_start) = if c == '0' && matches!(chars.get(i + 1), Some('x' | 'X')) {
                (16, i + 2)
            } else {
                (10, i)
            };
            i = digits_start;
            while i < chars.len() && chars[i].is_digit(radix) {
                i += 1;
            }
            if i == digits_start {
                return Err(ParseError::syntax(line, col, "digits"));
            }
            let digits: String = chars[digits_start..i].iter().collect();
            let value = u64::from_str_radix(&digits, radix)
                .map_err(|_| ParseError::syntax(line, col, "a literal that fits in 64 bits"))?;
            let mut width = None;
            if chars.get(i) == Some(&'w') && chars.get(i + 1).is_some_and(|d| d.is_ascii_digit()) {
                let ws = i + 1;
                i = ws;
                while i < chars.len() && chars[i].is_ascii_digit() {
                    i += 1;
                }
                let w: String = chars[ws..i].iter().collect();
                width = Some(
                    w.parse()
                        .map_err(|_| ParseError::syntax(line, col, "a width"))?,
                );
            }
            if chars.get(i).is_some_and(|d| is_ident_char(*d)) {
                return Err(ParseError::syntax(line, start + 1, "a numeric literal"));
            }
            out.push(Token {
                tok: Tok::Int(value, width),
                col,
            });
            continue;
        }
        if is_ident_start(c) {
            let start = i;
            while i < chars.len() && is_ident_char(chars[i]) {
                i += 1;
            }
            out.push(Token {
                tok: Tok::Ident(chars[start..i].iter().collect()),
                col,
            });
            continue;
        }
        let rest: String = chars[i..].iter().take(3).collect();
        let sym = SYMBOLS
            .iter()
            .chain(EXTRA.iter())
            .copied()
            .filter(|s| rest.starts_with(s))
            // `>>a`, `<s` and friends only when not glued to an identifier.
            .find(|s| {
                let last = s.chars().last().unwrap();
                !(last.is_ascii_alphabetic()
                    && chars
                        .get(i + s.chars().count())
                        .is_some_and(|d| is_ident_char(*d)))
            });
        match sym {
            Some(s) => {
                i += s.chars().count();
                out.push(Token {
                    tok: Tok::Sym(s),
                    col,
                });
            }
            None => return Err(ParseError::syntax(line, col, "a token")),
        }
    }
    Ok(out)
}
