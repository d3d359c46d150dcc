//! SMT-LIB2 encoding and a child-process driver.
//!
//! Words become bitvectors (booleans are `(_ BitVec 1)`), memories become
//! arrays. Each query runs in its own solver process. Models are read back
//! with `get-value`: word symbols directly, memory symbols cell by cell at
//! every address the query loads from. Model enumeration keeps one process
//! for the whole query and adds a blocking assertion per value.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Write as _};
use std::process::{Command, Stdio};

use super::{EnumError, Found};
use crate::il::{Atom, BinOp, MemoryValue, Term, Type, UnOp, Value};
use crate::sym::{Interpretation, SymExpr, Symbol};

/// Minimal s-expression.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Sexpr {
    Atom(String),
    List(Vec<Sexpr>),
}

/// Parse a sequence of s-expressions. Quoted `|..|` symbols and strings are
/// kept as single atoms.
pub fn parse_sexprs(text: &str) -> Result<Vec<Sexpr>, String> {
    let chars: Vec<char> = text.chars().collect();
    let mut stack: Vec<Vec<Sexpr>> = vec![Vec::new()];
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        match c {
            '(' => {
                stack.push(Vec::new());
                i += 1;
            }
            ')' => {
                let done = stack.pop().ok_or("unbalanced `)`")?;
                stack
                    .last_mut()
                    .ok_or("unbalanced `)`")?
                    .push(Sexpr::List(done));
                i += 1;
            }
            ';' => {
                while i < chars.len() && chars[i] != '\n' {
                    i += 1;
                }
            }
            c if c.is_whitespace() => i += 1,
            '|' | '"' => {
                let start = i;
                i += 1;
                while i < chars.len() && chars[i] != c {
                    i += 1;
                }
                if i == chars.len() {
                    return Err("unterminated quote".into());
                }
                i += 1;
                stack
                    .last_mut()
                    .unwrap()
                    .push(Sexpr::Atom(chars[start..i].iter().collect()));
            }
            _ => {
                let start = i;
                while i < chars.len()
                    && !chars[i].is_whitespace()
                    && !matches!(chars[i], '(' | ')' | ';')
                {
                    i += 1;
                }
                stack
                    .last_mut()
                    .unwrap()
                    .push(Sexpr::Atom(chars[start..i].iter().collect()));
            }
        }
    }
    if stack.len() != 1 {
        return Err("unbalanced `(`".into());
    }
    Ok(stack.pop().unwrap())
}

fn bv_literal(s: &Sexpr) -> Option<u64> {
    match s {
        Sexpr::Atom(a) => {
            if let Some(h) = a.strip_prefix("#x") {
                u64::from_str_radix(h, 16).ok()
            } else if let Some(b) = a.strip_prefix("#b") {
                u64::from_str_radix(b, 2).ok()
            } else {
                None
            }
        }
        Sexpr::List(xs) => match xs.as_slice() {
            [Sexpr::Atom(u), Sexpr::Atom(v), _] if u == "_" => v.strip_prefix("bv")?.parse().ok(),
            _ => None,
        },
    }
}

fn sort(ty: Type) -> String {
    match ty {
        Type::Word(w) => format!("(_ BitVec {w})"),
        Type::Mem { addr, val } => format!("(Array (_ BitVec {addr}) (_ BitVec {val}))"),
    }
}

fn bv(w: u32, v: u64) -> String {
    format!("(_ bv{v} {w})")
}

struct Encoder {
    names: BTreeMap<Symbol, String>,
}

impl Encoder {
    fn new(cs: &[SymExpr]) -> Self {
        let mut names = BTreeMap::new();
        for c in cs {
            for s in c.atoms() {
                let n = names.len();
                names.entry(s).or_insert_with(|| format!("s{n}"));
            }
        }
        Encoder { names }
    }

    fn value(&self, v: &Value) -> String {
        match v {
            Value::Word(w) => bv(w.width(), w.value()),
            Value::Mem(m) => {
                let mut out = format!(
                    "((as const {}) {})",
                    sort(m.ty()),
                    bv(m.val_width(), m.default_value())
                );
                for (a, x) in m.cells() {
                    out = format!(
                        "(store {out} {} {})",
                        bv(m.addr_width(), a),
                        bv(m.val_width(), x)
                    );
                }
                out
            }
        }
    }

    fn term(&self, e: &SymExpr) -> String {
        match e {
            Term::Const(v) => self.value(v),
            Term::Atom(s) => self.names[s].clone(),
            Term::Ite(c, t, f) => format!(
                "(ite (= {} #b1) {} {})",
                self.term(c),
                self.term(t),
                self.term(f)
            ),
            Term::Unary(UnOp::Not, a) => format!("(bvnot {})", self.term(a)),
            Term::Binary(op, a, b) => {
                let (x, y) = (self.term(a), self.term(b));
                let f = match op {
                    BinOp::Add => "bvadd",
                    BinOp::Sub => "bvsub",
                    BinOp::Mul => "bvmul",
                    BinOp::UDiv => "bvudiv",
                    BinOp::UMod => "bvurem",
                    BinOp::And => "bvand",
                    BinOp::Or => "bvor",
                    BinOp::Xor => "bvxor",
                    BinOp::Shl => "bvshl",
                    BinOp::LShr => "bvlshr",
                    BinOp::AShr => "bvashr",
                    BinOp::Eq => "=",
                    BinOp::Neq => "distinct",
                    BinOp::Ult => "bvult",
                    BinOp::Ule => "bvule",
                    BinOp::Slt => "bvslt",
                    BinOp::Sle => "bvsle",
                };
                if op.is_predicate() {
                    format!("(ite ({f} {x} {y}) #b1 #b0)")
                } else {
                    format!("({f} {x} {y})")
                }
            }
            Term::Load(m, a) => format!("(select {} {})", self.term(m), self.term(a)),
            Term::Store(m, a, v) => format!(
                "(store {} {} {})",
                self.term(m),
                self.term(a),
                self.term(v)
            ),
        }
    }
}

/// Load addresses per memory symbol that a model must report.
fn read_sites(cs: &[SymExpr]) -> Vec<(Symbol, SymExpr)> {
    // Post-order, so addresses that themselves load come after their reads.
    fn walk(e: &SymExpr, out: &mut Vec<(Symbol, SymExpr)>) {
        match e {
            Term::Const(_) | Term::Atom(_) => {}
            Term::Unary(_, a) => walk(a, out),
            Term::Binary(_, a, b) | Term::Load(a, b) => {
                walk(a, out);
                walk(b, out);
            }
            Term::Ite(a, b, c) | Term::Store(a, b, c) => {
                walk(a, out);
                walk(b, out);
                walk(c, out);
            }
        }
        if let Term::Load(m, a) = e {
            for s in m.atoms() {
                if s.ty().is_mem() {
                    let site = (s, (**a).clone());
                    if !out.contains(&site) {
                        out.push(site);
                    }
                }
            }
        }
    }
    let mut out = Vec::new();
    for c in cs {
        walk(c, &mut out);
    }
    out
}

/// The full query script.
pub(crate) fn script(cs: &[SymExpr], timeout_ms: u64) -> (String, Layout) {
    let enc = Encoder::new(cs);
    let mut s = String::new();
    let _ = writeln!(s, "(set-option :produce-models true)");
    let _ = writeln!(s, "(set-option :timeout {timeout_ms})");
    let _ = writeln!(s, "(set-logic QF_ABV)");
    for (sym, n) in &enc.names {
        let _ = writeln!(s, "(declare-fun {n} () {})", sort(sym.ty()));
    }
    for c in cs {
        let _ = writeln!(s, "(assert (= {} #b1))", enc.term(c));
    }
    let _ = writeln!(s, "(check-sat)");
    let words: Vec<Symbol> = enc
        .names
        .keys()
        .filter(|s| !s.ty().is_mem())
        .cloned()
        .collect();
    let sites = read_sites(cs);
    let mut asked = Vec::new();
    for w in &words {
        asked.push(enc.names[w].clone());
    }
    for (m, a) in &sites {
        asked.push(format!("(select {} {})", enc.names[m], enc.term(a)));
    }
    if !asked.is_empty() {
        let _ = writeln!(s, "(get-value ({}))", asked.join(" "));
    }
    let _ = writeln!(s, "(exit)");
    (s, Layout { words, sites })
}

/// What the `get-value` answer lists, in order.
pub(crate) struct Layout {
    words: Vec<Symbol>,
    sites: Vec<(Symbol, SymExpr)>,
}

fn run(command: &[String], input: &str) -> Result<String, String> {
    let (prog, args) = command.split_first().ok_or("empty solver command")?;
    let mut child = Command::new(prog)
        .args(args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .map_err(|e| format!("cannot start `{prog}`: {e}"))?;
    child
        .stdin
        .take()
        .expect("piped stdin")
        .write_all(input.as_bytes())
        .map_err(|e| format!("writing to solver: {e}"))?;
    let out = child
        .wait_with_output()
        .map_err(|e| format!("waiting for solver: {e}"))?;
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

pub(crate) fn sat(command: &[String], timeout_ms: u64, cs: &[SymExpr]) -> Found {
    let (text, layout) = script(cs, timeout_ms);
    let out = match run(command, &text) {
        Ok(o) => o,
        Err(e) => return Found::Unknown(e),
    };
    let sexprs = match parse_sexprs(&out) {
        Ok(s) => s,
        Err(e) => return Found::Unknown(format!("unparsable solver output: {e}")),
    };
    match sexprs.first() {
        Some(Sexpr::Atom(a)) if a == "unsat" => Found::Unsat,
        Some(Sexpr::Atom(a)) if a == "sat" => match read_model(&sexprs[1..], &layout) {
            Ok(m) => Found::Sat(m),
            Err(e) => Found::Unknown(e),
        },
        Some(other) => Found::Unknown(format!("solver answered {other:?}")),
        None => Found::Unknown("solver produced no output".into()),
    }
}

/// One answer from an interactive session: lines up to balanced parentheses.
fn read_answer(out: &mut impl BufRead) -> Result<Sexpr, String> {
    let mut text = String::new();
    loop {
        let mut line = String::new();
        let n = out
            .read_line(&mut line)
            .map_err(|e| format!("reading from solver: {e}"))?;
        if n == 0 {
            return Err("solver closed its output".into());
        }
        text.push_str(&line);
        if let Ok(mut xs) = parse_sexprs(&text) {
            if let Some(x) = xs.pop() {
                return Ok(x);
            }
        }
    }
}

/// Every value `target` takes over models of `cs`, from one solver process.
pub(crate) fn enumerate(
    command: &[String],
    timeout_ms: u64,
    cs: &[SymExpr],
    target: &SymExpr,
    cap: usize,
) -> Result<BTreeSet<Value>, EnumError> {
    let unknown = EnumError::Unknown;
    let width = match target.type_of() {
        Ok(Type::Word(w)) => w,
        _ => return Err(unknown("target is not a word".into())),
    };
    let mut all = cs.to_vec();
    all.push(target.clone());
    let enc = Encoder::new(&all);
    let t = enc.term(target);
    let mut head = String::new();
    let _ = writeln!(head, "(set-option :print-success false)");
    let _ = writeln!(head, "(set-option :produce-models true)");
    let _ = writeln!(head, "(set-option :timeout {timeout_ms})");
    let _ = writeln!(head, "(set-logic QF_ABV)");
    for (sym, n) in &enc.names {
        let _ = writeln!(head, "(declare-fun {n} () {})", sort(sym.ty()));
    }
    for c in cs {
        let _ = writeln!(head, "(assert (= {} #b1))", enc.term(c));
    }
    let (prog, args) = command
        .split_first()
        .ok_or_else(|| unknown("empty solver command".into()))?;
    let mut child = Command::new(prog)
        .args(args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .map_err(|e| unknown(format!("cannot start `{prog}`: {e}")))?;
    let mut input = child.stdin.take().expect("piped stdin");
    let mut output = BufReader::new(child.stdout.take().expect("piped stdout"));
    let mut send = |text: &str| {
        input
            .write_all(text.as_bytes())
            .and_then(|_| input.flush())
            .map_err(|e| unknown(format!("writing to solver: {e}")))
    };
    let result = (|| {
        send(&head)?;
        let mut found = BTreeSet::new();
        loop {
            send("(check-sat)\n")?;
            match read_answer(&mut output).map_err(unknown)? {
                Sexpr::Atom(a) if a == "unsat" => return Ok(found),
                Sexpr::Atom(a) if a == "sat" => {}
                other => return Err(unknown(format!("solver answered {other:?}"))),
            }
            send(&format!("(get-value ({t}))\n"))?;
            let v = match read_answer(&mut output).map_err(unknown)? {
                Sexpr::List(pairs) if pairs.len() == 1 => match &pairs[0] {
                    Sexpr::List(p) if p.len() == 2 => bv_literal(&p[1]),
                    _ => None,
                },
                _ => None,
            }
            .ok_or_else(|| unknown("malformed get-value answer".into()))?;
            if !found.insert(Value::word(width, v)) {
                return Err(unknown("blocking assertion ignored".into()));
            }
            if found.len() > cap {
                return Err(EnumError::CapExceeded { cap });
            }
            // Every value of the width is taken; the closing unsat check
            // can be very slow.
            if width < 64 && found.len() as u64 == 1u64 << width {
                return Ok(found);
            }
            send(&format!("(assert (not (= {t} {})))\n", bv(width, v)))?;
        }
    })();
    let _ = send("(exit)\n");
    let _ = child.kill();
    let _ = child.wait();
    result
}

fn read_model(rest: &[Sexpr], layout: &Layout) -> Result<Interpretation, String> {
    let mut m = Interpretation::new();
    let expected = layout.words.len() + layout.sites.len();
    if expected == 0 {
        return Ok(m);
    }
    let Some(Sexpr::List(pairs)) = rest.first() else {
        return Err("missing get-value answer".into());
    };
    if pairs.len() != expected {
        return Err("get-value answer has the wrong length".into());
    }
    let value_of = |p: &Sexpr| -> Result<u64, String> {
        match p {
            Sexpr::List(xs) if xs.len() == 2 => {
                bv_literal(&xs[1]).ok_or_else(|| format!("unexpected value {:?}", xs[1]))
            }
            _ => Err("malformed get-value pair".into()),
        }
    };
    for (s, p) in layout.words.iter().zip(pairs) {
        let w = s.ty().word_width().expect("word symbol");
        m.insert(s.clone(), Value::word(w, value_of(p)?));
    }
    // Cell addresses are evaluated in the word model just read.
    for ((s, a), p) in layout.sites.iter().zip(&pairs[layout.words.len()..]) {
        let Type::Mem { addr, val } = s.ty() else {
            unreachable!("memory symbol")
        };
        let v = value_of(p)?;
        let at = crate::sym::interp_expr(&m, a).ok().and_then(|x| x.as_word());
        let e = m
            .entry(s.clone())
            .or_insert_with(|| Value::Mem(MemoryValue::zeroed(addr, val)));
        // Addresses built from loads are resolved by model verification.
        if let (Some(at), Value::Mem(mv)) = (at, e) {
            mv.store_in_place(at.value(), v);
        }
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_model_answers() {
        let xs = parse_sexprs("sat\n((s0 #x0000001c) (s1 #b1) ((select s2 s0) (_ bv7 8)))\n").unwrap();
        assert_eq!(xs[0], Sexpr::Atom("sat".into()));
        let Sexpr::List(pairs) = &xs[1] else { panic!() };
        let vals: Vec<_> = pairs
            .iter()
            .map(|p| match p {
                Sexpr::List(v) => bv_literal(&v[1]),
                _ => None,
            })
            .collect();
        assert_eq!(vals, vec![Some(28), Some(1), Some(7)]);
    }

    #[test]
    fn unbalanced_is_error() {
        assert!(parse_sexprs("((a)").is_err());
        assert!(parse_sexprs("a)").is_err());
    }

    #[test]
    fn script_declares_and_asserts() {
        let a = Symbol::new("α_R0", Type::Word(8));
        let c = Term::bin(BinOp::Ult, Term::atom(a), Term::word(8, 3));
        let (s, _) = script(&[c], 100);
        assert!(s.contains("(declare-fun s0 () (_ BitVec 8))"), "{s}");
        assert!(s.contains("(assert (= (ite (bvult s0 (_ bv3 8)) #b1 #b0) #b1))"), "{s}");
    }
}
