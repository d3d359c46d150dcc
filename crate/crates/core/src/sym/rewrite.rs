//! Semantics-preserving normalization of symbolic expressions.
//!
//! Words built from `+`, `-` and multiplication by constants are put into a
//! canonical linear form modulo `2^w`. Loads are pushed through stores whose
//! addresses provably equal or differ from the load address, and stores
//! overwritten at a syntactically equal address are dropped. Nothing here
//! depends on a solver; callers that need a proof ask the solver separately.

use std::collections::BTreeMap;

use super::{SymExpr, Symbol};
use crate::il::{mask, Atom, BinOp, Term, Type, UnOp, Value};

/// Linear combination `Σ coef·term + k` over width `w`.
#[derive(Clone, Debug, PartialEq, Eq)]
struct Linear {
    width: u32,
    terms: BTreeMap<SymExpr, u64>,
    k: u64,
}

impl Linear {
    fn constant(width: u32, k: u64) -> Self {
        Linear {
            width,
            terms: BTreeMap::new(),
            k: k & mask(width),
        }
    }

    fn atom(width: u32, t: SymExpr) -> Self {
        Linear {
            width,
            terms: BTreeMap::from([(t, 1)]),
            k: 0,
        }
    }

    fn as_const(&self) -> Option<u64> {
        self.terms.is_empty().then_some(self.k)
    }

    fn add(mut self, other: &Linear, sign: u64) -> Self {
        let m = mask(self.width);
        for (t, c) in &other.terms {
            let e = self.terms.entry(t.clone()).or_insert(0);
            *e = e.wrapping_add(c.wrapping_mul(sign)) & m;
            if *e == 0 {
                self.terms.remove(t);
            }
        }
        self.k = self.k.wrapping_add(other.k.wrapping_mul(sign)) & m;
        self
    }

    fn scale(mut self, c: u64) -> Self {
        let m = mask(self.width);
        self.k = self.k.wrapping_mul(c) & m;
        self.terms = self
            .terms
            .into_iter()
            .map(|(t, x)| (t, x.wrapping_mul(c) & m))
            .filter(|(_, x)| *x != 0)
            .collect();
        self
    }

    fn rebuild(&self) -> SymExpr {
        let w = self.width;
        let m = mask(w);
        let half = m >> 1;
        let word = |v: u64| Term::<Symbol>::word(w, v);
        let neg = |c: u64| m.wrapping_sub(c).wrapping_add(1) & m;
        let scaled = |t: &SymExpr, c: u64| {
            if c == 1 {
                t.clone()
            } else {
                Term::bin(BinOp::Mul, t.clone(), word(c))
            }
        };
        let mut pos = Vec::new();
        let mut negs = Vec::new();
        for (t, &c) in &self.terms {
            if c <= half {
                pos.push(scaled(t, c));
            } else {
                negs.push(scaled(t, neg(c)));
            }
        }
        let (k_neg, mut k_mag) = if self.k > half {
            (true, neg(self.k))
        } else {
            (false, self.k)
        };
        let mut it = pos.into_iter();
        let mut acc = match it.next() {
            Some(first) => it.fold(first, |a, t| Term::bin(BinOp::Add, a, t)),
            None if negs.is_empty() => return word(self.k),
            None if !k_neg && k_mag != 0 => {
                let k = word(k_mag);
                k_mag = 0;
                k
            }
            // Only subtracted terms: `0 - t - k`.
            None => word(0),
        };
        for n in negs {
            acc = Term::bin(BinOp::Sub, acc, n);
        }
        if k_mag != 0 {
            acc = Term::bin(if k_neg { BinOp::Sub } else { BinOp::Add }, acc, word(k_mag));
        }
        acc
    }
}

fn width_of(e: &SymExpr) -> Option<u32> {
    e.type_of().ok().and_then(|t| t.word_width())
}

fn linearize(e: &SymExpr, w: u32) -> Linear {
    match e {
        Term::Const(Value::Word(x)) => Linear::constant(w, x.value()),
        Term::Binary(BinOp::Add, a, b) => linearize(a, w).add(&linearize(b, w), 1),
        Term::Binary(BinOp::Sub, a, b) => linearize(a, w).add(&linearize(b, w), u64::MAX),
        Term::Binary(BinOp::Mul, a, b) => {
            let la = linearize(a, w);
            let lb = linearize(b, w);
            match (la.as_const(), lb.as_const()) {
                (_, Some(c)) => la.scale(c),
                (Some(c), _) => lb.scale(c),
                _ => Linear::atom(w, e.clone()),
            }
        }
        _ => Linear::atom(w, e.clone()),
    }
}

/// Difference `a - b` when it is a known constant.
pub fn const_difference(a: &SymExpr, b: &SymExpr) -> Option<u64> {
    let w = width_of(a)?;
    linearize(a, w).add(&linearize(b, w), u64::MAX).as_const()
}

/// `Some(true)` if the words are provably equal, `Some(false)` if provably
/// different, `None` otherwise.
pub fn word_eq(a: &SymExpr, b: &SymExpr) -> Option<bool> {
    if a == b {
        return Some(true);
    }
    const_difference(a, b).map(|d| d == 0)
}

/// Normalize bottom-up.
pub fn normalize(e: &SymExpr) -> SymExpr {
    match e {
        Term::Const(_) | Term::Atom(_) => e.clone(),
        _ => {
            let e = e.map_children(normalize);
            rewrite_node(&e)
        }
    }
}

fn is_const_val(e: &SymExpr, v: u64) -> bool {
    matches!(e.as_word_const(), Some(w) if w.value() == v)
}

fn is_ones(e: &SymExpr) -> bool {
    matches!(e.as_word_const(), Some(w) if w.value() == mask(w.width()))
}

fn rewrite_node(e: &SymExpr) -> SymExpr {
    let folded = e.fold_constants();
    if matches!(folded, Term::Const(_)) {
        return folded;
    }
    match e {
        Term::Ite(c, t, f) => {
            if c.is_true() {
                (**t).clone()
            } else if c.is_false() || t == f {
                (**f).clone()
            } else {
                e.clone()
            }
        }
        Term::Unary(UnOp::Not, a) => match &**a {
            Term::Unary(UnOp::Not, b) => (**b).clone(),
            _ => e.clone(),
        },
        Term::Binary(op, a, b) => rewrite_binary(e, *op, a, b),
        Term::Load(m, a) => load_through(m, a),
        Term::Store(m, a, v) => {
            Term::store(drop_overwritten(m, a), (**a).clone(), (**v).clone())
        }
        _ => e.clone(),
    }
}

fn rewrite_binary(e: &SymExpr, op: BinOp, a: &SymExpr, b: &SymExpr) -> SymExpr {
    let Some(w) = width_of(a) else {
        return e.clone();
    };
    let zero = Term::word(w, 0);
    match op {
        BinOp::Add | BinOp::Sub | BinOp::Mul if w > 1 => linearize(e, w).rebuild(),
        BinOp::And => {
            if is_const_val(a, 0) || is_const_val(b, 0) {
                zero
            } else if is_ones(a) {
                b.clone()
            } else if is_ones(b) || a == b {
                a.clone()
            } else {
                e.clone()
            }
        }
        BinOp::Or => {
            if is_ones(a) || is_ones(b) {
                Term::word(w, mask(w))
            } else if is_const_val(a, 0) {
                b.clone()
            } else if is_const_val(b, 0) || a == b {
                a.clone()
            } else {
                e.clone()
            }
        }
        BinOp::Xor => {
            if a == b {
                zero
            } else if is_const_val(a, 0) {
                b.clone()
            } else if is_const_val(b, 0) {
                a.clone()
            } else {
                e.clone()
            }
        }
        BinOp::Shl | BinOp::LShr | BinOp::AShr if is_const_val(b, 0) => a.clone(),
        BinOp::Eq | BinOp::Neq => {
            let eq = op == BinOp::Eq;
            if let Some(same) = word_eq(a, b) {
                return Term::bool(same == eq);
            }
            if w == 1 {
                // `x == 1` is `x`, `x == 0` is `!x`.
                let (x, c) = match (a.as_word_const(), b.as_word_const()) {
                    (_, Some(c)) => (a, c.value()),
                    (Some(c), _) => (b, c.value()),
                    _ => return e.clone(),
                };
                return if (c == 1) == eq {
                    x.clone()
                } else {
                    normalize(&Term::not(x.clone()))
                };
            }
            e.clone()
        }
        BinOp::Ult | BinOp::Slt if a == b => Term::bool(false),
        BinOp::Ule | BinOp::Sle if a == b => Term::bool(true),
        BinOp::Ule if is_const_val(a, 0) => Term::bool(true),
        BinOp::Ule if is_ones(b) => Term::bool(true),
        BinOp::Ult if is_const_val(b, 0) => Term::bool(false),
        _ => e.clone(),
    }
}

fn load_through(m: &SymExpr, a: &SymExpr) -> SymExpr {
    let mut cur = m;
    loop {
        match cur {
            Term::Store(inner, b, v) => match word_eq(a, b) {
                Some(true) => return (**v).clone(),
                Some(false) => cur = inner,
                None => break,
            },
            _ => break,
        }
    }
    let e = Term::load(cur.clone(), a.clone());
    e.fold_constants()
}

/// Remove stores in the chain below a new store to `a` that write the same
/// address. Later stores always win, so this needs no disjointness facts.
fn drop_overwritten(m: &SymExpr, a: &SymExpr) -> SymExpr {
    match m {
        Term::Store(inner, b, v) => {
            let rest = drop_overwritten(inner, a);
            if word_eq(a, b) == Some(true) {
                rest
            } else {
                Term::store(rest, (**b).clone(), (**v).clone())
            }
        }
        _ => m.clone(),
    }
}

/// Goal expressing equality of two values of the same type. Memory
/// equality uses a probe address symbol, which callers must treat as
/// universally quantified (it is free in the goal).
pub fn equality_goal(a: &SymExpr, b: &SymExpr, probe: &Symbol) -> Option<SymExpr> {
    match a.type_of().ok()? {
        Type::Word(_) => Some(Term::bin(BinOp::Eq, a.clone(), b.clone())),
        Type::Mem { addr, .. } => {
            if probe.ty() != Type::Word(addr) {
                return None;
            }
            let k = Term::atom(probe.clone());
            Some(Term::bin(
                BinOp::Eq,
                Term::load(a.clone(), k.clone()),
                Term::load(b.clone(), k),
            ))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::il::Type;

    fn sym(n: &str, w: u32) -> SymExpr {
        Term::atom(Symbol::new(n, Type::Word(w)))
    }

    fn mem() -> SymExpr {
        Term::atom(Symbol::new("M", Type::Mem { addr: 32, val: 32 }))
    }

    #[test]
    fn linear_forms_are_canonical() {
        let sp = sym("SP", 32);
        let e = Term::bin(
            BinOp::Add,
            Term::bin(BinOp::Sub, sp.clone(), Term::word(32, 8)),
            Term::word(32, 4),
        );
        assert_eq!(normalize(&e).to_string(), "SP - 4w32");
        let f = Term::bin(BinOp::Add, sp.clone(), Term::word(32, 0xffff_fffc));
        assert_eq!(normalize(&f), normalize(&e));
        let g = Term::bin(BinOp::Sub, sp.clone(), sp.clone());
        assert_eq!(normalize(&g), Term::word(32, 0));
        let h = Term::bin(BinOp::Sub, Term::word(32, 3), sp);
        assert_eq!(normalize(&h).to_string(), "3w32 - SP");
    }

    #[test]
    fn read_over_write() {
        let sp = sym("SP", 32);
        let sp4 = Term::bin(BinOp::Sub, sp.clone(), Term::word(32, 4));
        let m = Term::store(
            Term::store(mem(), sp.clone(), sym("R3", 32)),
            sp4.clone(),
            sym("R0", 32),
        );
        assert_eq!(normalize(&Term::load(m.clone(), sp.clone())), sym("R3", 32));
        assert_eq!(normalize(&Term::load(m, sp4)), sym("R0", 32));
    }

    #[test]
    fn overwritten_store_dropped() {
        let sp = sym("SP", 32);
        let m = Term::store(
            Term::store(
                Term::store(mem(), sp.clone(), sym("a", 32)),
                sym("B", 32),
                sym("b", 32),
            ),
            sp.clone(),
            sym("c", 32),
        );
        assert_eq!(normalize(&m).to_string(), "st(st(M, B, b), SP, c)");
    }

    #[test]
    fn boolean_equalities() {
        let f = sym("f", 1);
        assert_eq!(normalize(&Term::bin(BinOp::Eq, f.clone(), Term::bool(true))), f);
        assert_eq!(
            normalize(&Term::bin(BinOp::Neq, f.clone(), Term::bool(true))),
            Term::not(f)
        );
        let x = sym("x", 8);
        let e = Term::bin(
            BinOp::Eq,
            Term::bin(BinOp::Add, x.clone(), Term::word(8, 1)),
            Term::bin(BinOp::Add, x, Term::word(8, 2)),
        );
        assert_eq!(normalize(&e), Term::bool(false));
    }
}
