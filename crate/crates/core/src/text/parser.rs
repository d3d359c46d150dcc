use std::collections::BTreeMap;

use super::lexer::{lex_line, Tok, Token};
use super::ParseError;
use crate::il::{
    is_valid_width, mask, Atom, BinOp, Cycles, Expr, Label, Program, ProgramParts, Stmt, Term,
    Type, Typing, Var,
};

/// Untyped expression tree; widths are settled during elaboration.
#[derive(Clone, Debug)]
enum Ast {
    Lit(u64, Option<u32>),
    Name(String),
    Not(Box<Node>),
    Neg(Box<Node>),
    Bin(BinOp, Box<Node>, Box<Node>),
    Ite(Box<Node>, Box<Node>, Box<Node>),
    Ld(Box<Node>, Box<Node>),
    St(Box<Node>, Box<Node>, Box<Node>),
}

#[derive(Clone, Debug)]
struct Node {
    ast: Ast,
    col: usize,
}

struct Cursor<'a> {
    toks: &'a [Token],
    pos: usize,
    line: usize,
    end_col: usize,
}

impl<'a> Cursor<'a> {
    fn new(toks: &'a [Token], line: usize, end_col: usize) -> Self {
        Cursor {
            toks,
            pos: 0,
            line,
            end_col,
        }
    }

    fn peek(&self) -> Option<&'a Tok> {
        self.toks.get(self.pos).map(|t| &t.tok)
    }

    fn col(&self) -> usize {
        self.toks.get(self.pos).map_or(self.end_col, |t| t.col)
    }

    fn err(&self, expected: &str) -> ParseError {
        ParseError::syntax(self.line, self.col(), expected)
    }

    fn eat_sym(&mut self, s: &str) -> bool {
        if self.peek() == Some(&Tok::Sym(static_sym(s))) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect_sym(&mut self, s: &str) -> Result<(), ParseError> {
        if self.eat_sym(s) {
            Ok(())
        } else {
            Err(self.err(&format!("`{s}`")))
        }
    }

    fn is_keyword(&self, kw: &str) -> bool {
        matches!(self.peek(), Some(Tok::Ident(s)) if s == kw)
    }

    fn ident(&mut self, what: &str) -> Result<String, ParseError> {
        match self.peek() {
            Some(Tok::Ident(s)) => {
                self.pos += 1;
                Ok(s.clone())
            }
            _ => Err(self.err(what)),
        }
    }

    fn number(&mut self, what: &str) -> Result<u64, ParseError> {
        match self.peek() {
            Some(Tok::Int(v, None)) => {
                self.pos += 1;
                Ok(*v)
            }
            _ => Err(self.err(what)),
        }
    }

    fn finish(&self) -> Result<(), ParseError> {
        if self.pos == self.toks.len() {
            Ok(())
        } else {
            Err(self.err("end of line"))
        }
    }
}

// Tokens carry `&'static str`; map a borrowed spelling back to it.
fn static_sym(s: &str) -> &'static str {
    const ALL: [&str; 31] = [
        ">>a", "<=s", ">=s", ":=", "->", "==", "!=", "<=", ">=", "<<", ">>", "<s", ">s", "+", "-",
        "*", "/", "%", "&", "|", "^", "!", "<", ">", "(", ")", ",", ":", "[", "]", "=",
    ];
    ALL.iter().copied().find(|x| *x == s).expect("known symbol")
}

// Binary operator levels, lowest first. `swap` operators are desugared by
// exchanging operands (`a > b` is `b < a`).
const LEVELS: [&[(&str, BinOp, bool)]; 8] = [
    &[("|", BinOp::Or, false)],
    &[("^", BinOp::Xor, false)],
    &[("&", BinOp::And, false)],
    &[("==", BinOp::Eq, false), ("!=", BinOp::Neq, false)],
    &[
        ("<", BinOp::Ult, false),
        ("<=", BinOp::Ule, false),
        ("<s", BinOp::Slt, false),
        ("<=s", BinOp::Sle, false),
        (">", BinOp::Ult, true),
        (">=", BinOp::Ule, true),
        (">s", BinOp::Slt, true),
        (">=s", BinOp::Sle, true),
    ],
    &[
        ("<<", BinOp::Shl, false),
        (">>", BinOp::LShr, false),
        (">>a", BinOp::AShr, false),
    ],
    &[("+", BinOp::Add, false), ("-", BinOp::Sub, false)],
    &[
        ("*", BinOp::Mul, false),
        ("/", BinOp::UDiv, false),
        ("%", BinOp::UMod, false),
    ],
];

fn parse_level(c: &mut Cursor, level: usize) -> Result<Node, ParseError> {
    if level == LEVELS.len() {
        return parse_unary(c);
    }
    let mut lhs = parse_level(c, level + 1)?;
    loop {
        let op = match c.peek() {
            Some(Tok::Sym(s)) => LEVELS[level].iter().find(|(sp, _, _)| sp == s),
            _ => None,
        };
        let Some(&(_, op, swap)) = op else {
            return Ok(lhs);
        };
        let col = c.col();
        c.pos += 1;
        let rhs = parse_level(c, level + 1)?;
        let (a, b) = if swap { (rhs, lhs) } else { (lhs, rhs) };
        lhs = Node {
            ast: Ast::Bin(op, Box::new(a), Box::new(b)),
            col,
        };
    }
}

fn parse_unary(c: &mut Cursor) -> Result<Node, ParseError> {
    let col = c.col();
    if c.eat_sym("!") {
        let e = parse_unary(c)?;
        return Ok(Node {
            ast: Ast::Not(Box::new(e)),
            col,
        });
    }
    if c.eat_sym("-") {
        let e = parse_unary(c)?;
        return Ok(Node {
            ast: Ast::Neg(Box::new(e)),
            col,
        });
    }
    parse_atom(c)
}

fn parse_args(c: &mut Cursor, n: usize) -> Result<Vec<Node>, ParseError> {
    c.expect_sym("(")?;
    let mut args = Vec::with_capacity(n);
    for i in 0..n {
        if i > 0 {
            c.expect_sym(",")?;
        }
        args.push(parse_level(c, 0)?);
    }
    c.expect_sym(")")?;
    Ok(args)
}

fn parse_atom(c: &mut Cursor) -> Result<Node, ParseError> {
    let col = c.col();
    let ast = match c.peek() {
        Some(Tok::Int(v, w)) => {
            c.pos += 1;
            Ast::Lit(*v, *w)
        }
        Some(Tok::Sym("(")) => {
            c.pos += 1;
            let e = parse_level(c, 0)?;
            c.expect_sym(")")?;
            return Ok(e);
        }
        Some(Tok::Ident(name)) => {
            c.pos += 1;
            let call = c.peek() == Some(&Tok::Sym("("));
            match name.as_str() {
                "ite" if call => {
                    let mut a = parse_args(c, 3)?.into_iter().map(Box::new);
                    Ast::Ite(a.next().unwrap(), a.next().unwrap(), a.next().unwrap())
                }
                "ld" if call => {
                    let mut a = parse_args(c, 2)?.into_iter().map(Box::new);
                    Ast::Ld(a.next().unwrap(), a.next().unwrap())
                }
                "st" if call => {
                    let mut a = parse_args(c, 3)?.into_iter().map(Box::new);
                    Ast::St(a.next().unwrap(), a.next().unwrap(), a.next().unwrap())
                }
                _ => Ast::Name(name.clone()),
            }
        }
        _ => return Err(c.err("an expression")),
    };
    Ok(Node { ast, col })
}

/// Elaborates untyped trees against a typing.
struct Elab<'a> {
    typing: &'a Typing,
    line: usize,
}

impl Elab<'_> {
    fn err(&self, n: &Node, reason: impl Into<String>) -> ParseError {
        ParseError::ty(self.line, n.col, reason)
    }

    fn var(&self, n: &Node, name: &str) -> Result<Var, ParseError> {
        match self.typing.get(name) {
            Some(t) => Ok(Var::new(name, *t)),
            None => Err(self.err(n, format!("undeclared variable {name}"))),
        }
    }

    /// Type of a node if it is determined without context.
    fn infer(&self, n: &Node) -> Result<Option<Type>, ParseError> {
        Ok(match &n.ast {
            Ast::Lit(_, w) => w.map(Type::Word),
            Ast::Name(x) => Some(self.var(n, x)?.ty()),
            Ast::Not(a) | Ast::Neg(a) => self.infer(a)?,
            Ast::Bin(op, a, b) => {
                if op.is_predicate() {
                    Some(Type::BOOL)
                } else {
                    self.infer(a)?.or(self.infer(b)?)
                }
            }
            Ast::Ite(_, a, b) => self.infer(a)?.or(self.infer(b)?),
            Ast::Ld(m, _) => match self.infer(m)? {
                Some(Type::Mem { val, .. }) => Some(Type::Word(val)),
                _ => None,
            },
            Ast::St(m, _, _) => self.infer(m)?,
        })
    }

    fn word_width(&self, n: &Node, t: Type) -> Result<u32, ParseError> {
        t.word_width()
            .ok_or_else(|| self.err(n, format!("expected a word, found {t}")))
    }

    fn check(&self, n: &Node, got: Type, want: Option<Type>) -> Result<(), ParseError> {
        match want {
            Some(w) if w != got => Err(self.err(n, format!("expected {w}, found {got}"))),
            _ => Ok(()),
        }
    }

    fn elab(&self, n: &Node, want: Option<Type>) -> Result<Expr, ParseError> {
        let e = match &n.ast {
            Ast::Lit(v, w) => {
                let width = match (w, want) {
                    (Some(w), _) => *w,
                    (None, Some(t)) => self.word_width(n, t)?,
                    (None, None) => {
                        return Err(self.err(n, "cannot infer the width of this literal"))
                    }
                };
                if !is_valid_width(width) {
                    return Err(self.err(n, format!("invalid width {width}")));
                }
                if *v > mask(width) {
                    return Err(self.err(n, format!("literal {v} does not fit in w{width}")));
                }
                Term::word(width, *v)
            }
            Ast::Name(x) => Term::atom(self.var(n, x)?),
            Ast::Not(a) => {
                let t = self.infer(a)?.or(want);
                let a = self.elab(a, t)?;
                Term::not(a)
            }
            Ast::Neg(a) => {
                let t = self.infer(a)?.or(want);
                let a = self.elab(a, t)?;
                let w = self.word_width(n, a.type_of().map_err(|e| self.err(n, e.0))?)?;
                Term::bin(BinOp::Sub, Term::word(w, 0), a)
            }
            Ast::Bin(op, a, b) => {
                let t = self.infer(a)?.or(self.infer(b)?);
                let t = if op.is_predicate() {
                    Some(t.ok_or_else(|| {
                        self.err(n, "cannot infer the width of the compared operands")
                    })?)
                } else {
                    t.or(want)
                };
                Term::bin(*op, self.elab(a, t)?, self.elab(b, t)?)
            }
            Ast::Ite(c, a, b) => {
                let t = self.infer(a)?.or(self.infer(b)?).or(want);
                Term::ite(
                    self.elab(c, Some(Type::BOOL))?,
                    self.elab(a, t)?,
                    self.elab(b, t)?,
                )
            }
            Ast::Ld(m, a) => {
                let m = self.elab(m, None)?;
                let Ok(Type::Mem { addr, .. }) = m.type_of() else {
                    return Err(self.err(n, "ld expects a memory"));
                };
                Term::load(m, self.elab(a, Some(Type::Word(addr)))?)
            }
            Ast::St(m, a, v) => {
                let m = self.elab(m, want)?;
                let Ok(Type::Mem { addr, val }) = m.type_of() else {
                    return Err(self.err(n, "st expects a memory"));
                };
                Term::store(
                    m,
                    self.elab(a, Some(Type::Word(addr)))?,
                    self.elab(v, Some(Type::Word(val)))?,
                )
            }
        };
        let t = e.type_of().map_err(|te| self.err(n, te.0))?;
        self.check(n, t, want)?;
        Ok(e)
    }
}

fn parse_type(c: &mut Cursor) -> Result<Type, ParseError> {
    let col = c.col();
    let s = c.ident("a type such as w32 or mem32x32")?;
    let bad = || ParseError::syntax(c.line, col, "a type such as w32 or mem32x32");
    let t = if let Some(w) = s.strip_prefix("mem") {
        let (a, v) = w.split_once('x').ok_or_else(bad)?;
        Type::Mem {
            addr: a.parse().map_err(|_| bad())?,
            val: v.parse().map_err(|_| bad())?,
        }
    } else if let Some(w) = s.strip_prefix('w') {
        Type::Word(w.parse().map_err(|_| bad())?)
    } else {
        return Err(bad());
    };
    if !t.is_well_formed() {
        return Err(ParseError::ty(c.line, col, format!("invalid type {t}")));
    }
    Ok(t)
}

fn strip_comment(line: &str) -> &str {
    match line.find("//") {
        Some(i) => &line[..i],
        None => line,
    }
}

fn lines(text: &str) -> Result<Vec<(usize, Vec<Token>, usize)>, ParseError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let body = strip_comment(raw);
        let toks = lex_line(body, i + 1)?;
        if !toks.is_empty() {
            out.push((i + 1, toks, body.chars().count() + 1));
        }
    }
    Ok(out)
}

/// Parse an expression over the given variable typing.
pub fn parse_expr(text: &str, typing: &Typing) -> Result<Expr, ParseError> {
    if text.contains('\n') {
        return Err(ParseError::syntax(
            1,
            text.find('\n').unwrap() + 1,
            "a single line",
        ));
    }
    let body = strip_comment(text);
    let toks = lex_line(body, 1)?;
    let mut c = Cursor::new(&toks, 1, body.chars().count() + 1);
    let n = parse_level(&mut c, 0)?;
    c.finish()?;
    let elab = Elab { typing, line: 1 };
    let t = elab.infer(&n)?;
    elab.elab(&n, t)
}

fn parse_stmt(c: &mut Cursor, elab: &Elab, label_ty: Type) -> Result<Stmt, ParseError> {
    let target = |c: &mut Cursor| -> Result<Expr, ParseError> {
        let n = parse_level(c, 0)?;
        elab.elab(&n, Some(label_ty))
    };
    if c.is_keyword("jmp") {
        c.pos += 1;
        return Ok(Stmt::Jmp(target(c)?));
    }
    if c.is_keyword("cjmp") {
        c.pos += 1;
        let cond = parse_level(c, 0)?;
        let cond = elab.elab(&cond, Some(Type::BOOL))?;
        c.expect_sym("->")?;
        let t = target(c)?;
        c.expect_sym(",")?;
        let f = target(c)?;
        return Ok(Stmt::CJmp(cond, t, f));
    }
    if c.is_keyword("assert") {
        c.pos += 1;
        let n = parse_level(c, 0)?;
        return Ok(Stmt::Assert(elab.elab(&n, Some(Type::BOOL))?));
    }
    let col = c.col();
    let name = c.ident("a statement")?;
    let x = elab.var(
        &Node {
            ast: Ast::Name(name.clone()),
            col,
        },
        &name,
    )?;
    c.expect_sym(":=")?;
    let n = parse_level(c, 0)?;
    let e = elab.elab(&n, Some(x.ty()))?;
    Ok(Stmt::Assign(x, e))
}

fn parse_cycles(c: &mut Cursor) -> Result<Option<Cycles>, ParseError> {
    if !c.eat_sym("[") {
        return Ok(None);
    }
    if !c.is_keyword("cycles") {
        return Err(c.err("`cycles`"));
    }
    c.pos += 1;
    let fits = |c: &Cursor, v: u64| {
        u32::try_from(v).map_err(|_| c.err("a cycle count that fits in 32 bits"))
    };
    let out = if c.is_keyword("taken") {
        c.pos += 1;
        c.expect_sym("=")?;
        let taken = c.number("a cycle count")?;
        if !c.is_keyword("fall") {
            return Err(c.err("`fall`"));
        }
        c.pos += 1;
        c.expect_sym("=")?;
        let fall = c.number("a cycle count")?;
        Cycles::Branch {
            taken: fits(c, taken)?,
            fall: fits(c, fall)?,
        }
    } else {
        let k = c.number("a cycle count")?;
        Cycles::Fixed(fits(c, k)?)
    };
    c.expect_sym("]")?;
    Ok(Some(out))
}

/// Parse and type check a `.bir` program.
pub fn parse_program(text: &str) -> Result<Program, ParseError> {
    let lines = lines(text)?;
    let mut it = lines.iter().peekable();

    let Some((line, toks, end)) = it.next() else {
        return Err(ParseError::syntax(1, 1, "`program <name>`"));
    };
    let mut c = Cursor::new(toks, *line, *end);
    if !c.is_keyword("program") {
        return Err(c.err("`program <name>`"));
    }
    c.pos += 1;
    let mut parts = ProgramParts::new(c.ident("a program name")?);
    c.finish()?;

    let mut have_entry = false;
    let mut decls = Typing::new();
    let mut exits = Vec::new();
    // Header lines: entry, label width, exits and declarations.
    while let Some((line, toks, end)) = it.peek() {
        let mut c = Cursor::new(toks, *line, *end);
        if c.is_keyword("entry") {
            if have_entry {
                return Err(c.err("a single entry line"));
            }
            c.pos += 1;
            parts.entry = c.number("an entry label")?;
            have_entry = true;
        } else if c.is_keyword("labelwidth") {
            c.pos += 1;
            let col = c.col();
            let w = c.number("a label width")?;
            if !u32::try_from(w).is_ok_and(is_valid_width) {
                return Err(ParseError::ty(
                    *line,
                    col,
                    format!("invalid label width {w}"),
                ));
            }
            parts.label_width = w as u32;
        } else if c.is_keyword("exit") {
            c.pos += 1;
            exits.push(c.number("an exit label")?);
        } else if c.is_keyword("var") {
            c.pos += 1;
            let col = c.col();
            let name = c.ident("a variable name")?;
            c.expect_sym(":")?;
            let t = parse_type(&mut c)?;
            if decls.insert(name.clone(), t).is_some() {
                return Err(ParseError::ty(*line, col, format!("{name} declared twice")));
            }
        } else {
            break;
        }
        c.finish()?;
        it.next();
    }
    if !have_entry {
        let (line, col) = it
            .peek()
            .map_or((lines[0].0 + 1, 1), |(l, t, _)| (*l, t[0].col));
        return Err(ParseError::syntax(line, col, "`entry <label>`"));
    }
    parts.exits.extend(exits);

    let elab = Elab {
        typing: &decls,
        line: 0,
    };
    let label_ty = Type::Word(parts.label_width);
    let mut stmts = BTreeMap::new();
    let mut cycles = BTreeMap::new();
    for (line, toks, end) in it {
        let mut c = Cursor::new(toks, *line, *end);
        let lcol = c.col();
        let label: Label = c.number("`<label>: <statement>`")?;
        c.expect_sym(":")?;
        let elab = Elab {
            line: *line,
            ..elab
        };
        let stmt = parse_stmt(&mut c, &elab, label_ty)?;
        if let Some(k) = parse_cycles(&mut c)? {
            cycles.insert(label, k);
        }
        c.finish()?;
        if stmts.insert(label, stmt).is_some() {
            return Err(ParseError::ty(
                *line,
                lcol,
                format!("label {label} defined twice"),
            ));
        }
    }
    parts.decls = decls;
    parts.stmts = stmts;
    parts.cycles = cycles;
    Ok(Program::new(parts)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn typing() -> Typing {
        Typing::from([
            ("SP".to_string(), Type::Word(32)),
            ("R0".to_string(), Type::Word(32)),
            ("M".to_string(), Type::Mem { addr: 32, val: 32 }),
        ])
    }

    #[test]
    fn unsuffixed_literal_takes_operand_width() {
        let e = parse_expr("0x1000 <= SP - 4", &typing()).unwrap();
        assert_eq!(e.type_of().unwrap(), Type::BOOL);
        assert_eq!(e.to_string(), "4096w32 <= (SP - 4w32)");
    }

    #[test]
    fn load_node() {
        let e = parse_expr("ld(M, SP)", &typing()).unwrap();
        assert!(matches!(e, Term::Load(..)));
    }

    #[test]
    fn dangling_operator_is_syntax_error() {
        assert!(matches!(
            parse_expr("R0 +", &typing()),
            Err(ParseError::Syntax {
                line: 1,
                col: 5,
                ..
            })
        ));
    }

    #[test]
    fn lone_literal_needs_width() {
        assert!(matches!(
            parse_expr("3 == 4", &typing()),
            Err(ParseError::Type { .. })
        ));
        assert!(parse_expr("3w8 == 4", &typing()).is_ok());
    }

    #[test]
    fn precedence_and_swaps() {
        let e = parse_expr("R0 + 1 * 2 > SP & 1w1", &typing()).unwrap();
        assert_eq!(e.to_string(), "(SP < (R0 + (1w32 * 2w32))) & 1w1");
        let e = parse_expr("-R0", &typing()).unwrap();
        assert_eq!(e.to_string(), "0w32 - R0");
    }

    #[test]
    fn empty_input_lacks_header() {
        assert!(matches!(
            parse_program(""),
            Err(ParseError::Syntax { line: 1, .. })
        ));
        assert!(matches!(
            parse_program("// nothing\n\n"),
            Err(ParseError::Syntax { .. })
        ));
    }

    #[test]
    fn conditional_jump_with_constant_targets() {
        let p = parse_program(
            "program t\nentry 6\nvar R3 : w32\n6: cjmp R3 == 0 -> 12, 7\n7: jmp 6\n12: jmp 0x1C\n",
        )
        .unwrap();
        assert_eq!(
            p.stmt(6),
            Some(&Stmt::CJmp(
                Term::bin(
                    BinOp::Eq,
                    Term::atom(Var::new("R3", Type::Word(32))),
                    Term::word(32, 0)
                ),
                Term::word(32, 12),
                Term::word(32, 7)
            ))
        );
        assert_eq!(p.stmt(12), Some(&Stmt::Jmp(Term::word(32, 28))));
    }

    #[test]
    fn cycle_annotations() {
        let p = parse_program(
            "program t\nentry 1\nexit 3\nvar x : w8\n1: x := x + 1 [cycles 4]\n2: cjmp x == 0 -> 1, 3 [cycles taken=2 fall=5]\n",
        )
        .unwrap();
        assert_eq!(p.cycles()[&1], Cycles::Fixed(4));
        assert_eq!(p.cycles()[&2], Cycles::Branch { taken: 2, fall: 5 });
    }

    #[test]
    fn errors_are_located() {
        let e = parse_program("program t\nentry 1\n1: x := 1\n").unwrap_err();
        assert!(
            matches!(
                e,
                ParseError::Type {
                    line: 3,
                    col: 4,
                    ..
                }
            ),
            "{e}"
        );
        let e = parse_program("program t\nentry 1\nvar x : w8\n1: x := 1 )\n").unwrap_err();
        assert!(
            matches!(
                e,
                ParseError::Syntax {
                    line: 4,
                    col: 11,
                    ..
                }
            ),
            "{e}"
        );
        let e = parse_program("program t\nentry 1\nvar x : w8\n1: x := 1\n").unwrap_err();
        assert!(matches!(e, ParseError::Program(_)), "{e}");
    }
}
