//! Expression trees shared by the concrete and the symbolic world.
//!
//! A [`Term`] is parameterised by its leaf type: program expressions use
//! [`Var`](super::Var) leaves, symbolic expressions use symbols. Evaluation,
//! typing, substitution and constant folding are written once here.

use std::collections::BTreeSet;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::value::{mask, MemoryValue, Type, Value, Word};

/// Leaves of a term: anything that carries a type and a printable name.
pub trait Atom: Clone + Ord + fmt::Display {
    fn ty(&self) -> Type;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum UnOp {
    Not,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    UDiv,
    UMod,
    And,
    Or,
    Xor,
    Shl,
    LShr,
    AShr,
    Eq,
    Neq,
    Ult,
    Ule,
    Slt,
    Sle,
}

impl BinOp {
    pub const ALL: [BinOp; 17] = [
        BinOp::Add,
        BinOp::Sub,
        BinOp::Mul,
        BinOp::UDiv,
        BinOp::UMod,
        BinOp::And,
        BinOp::Or,
        BinOp::Xor,
        BinOp::Shl,
        BinOp::LShr,
        BinOp::AShr,
        BinOp::Eq,
        BinOp::Neq,
        BinOp::Ult,
        BinOp::Ule,
        BinOp::Slt,
        BinOp::Sle,
    ];

    /// Comparisons produce a width-1 word.
    pub fn is_predicate(self) -> bool {
        matches!(
            self,
            BinOp::Eq | BinOp::Neq | BinOp::Ult | BinOp::Ule | BinOp::Slt | BinOp::Sle
        )
    }

    pub fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::UDiv => "/",
            BinOp::UMod => "%",
            BinOp::And => "&",
            BinOp::Or => "|",
            BinOp::Xor => "^",
            BinOp::Shl => "<<",
            BinOp::LShr => ">>",
            BinOp::AShr => ">>a",
            BinOp::Eq => "==",
            BinOp::Neq => "!=",
            BinOp::Ult => "<",
            BinOp::Ule => "<=",
            BinOp::Slt => "<s",
            BinOp::Sle => "<=s",
        }
    }

    /// Apply the operator to two words of equal width.
    pub fn apply(self, a: Word, b: Word) -> Word {
        let w = a.width();
        let (x, y) = (a.value(), b.value());
        let r = match self {
            BinOp::Add => x.wrapping_add(y),
            BinOp::Sub => x.wrapping_sub(y),
            BinOp::Mul => x.wrapping_mul(y),
            BinOp::UDiv => {
                if y == 0 {
                    mask(w)
                } else {
                    x / y
                }
            }
            BinOp::UMod => {
                if y == 0 {
                    x
                } else {
                    x % y
                }
            }
            BinOp::And => x & y,
            BinOp::Or => x | y,
            BinOp::Xor => x ^ y,
            BinOp::Shl => {
                if y >= w as u64 {
                    0
                } else {
                    x << y
                }
            }
            BinOp::LShr => {
                if y >= w as u64 {
                    0
                } else {
                    x >> y
                }
            }
            BinOp::AShr => {
                let s = a.signed();
                if y >= w as u64 {
                    if s < 0 {
                        mask(w)
                    } else {
                        0
                    }
                } else {
                    (s >> y) as u64
                }
            }
            BinOp::Eq => return Word::bool(x == y),
            BinOp::Neq => return Word::bool(x != y),
            BinOp::Ult => return Word::bool(x < y),
            BinOp::Ule => return Word::bool(x <= y),
            BinOp::Slt => return Word::bool(a.signed() < b.signed()),
            BinOp::Sle => return Word::bool(a.signed() <= b.signed()),
        };
        Word::new(w, r)
    }
}

/// An expression tree over leaves `A`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(bound(serialize = "A: Serialize", deserialize = "A: Deserialize<'de>"))]
pub enum Term<A> {
    Const(Value),
    Atom(A),
    Ite(Arc<Term<A>>, Arc<Term<A>>, Arc<Term<A>>),
    Unary(UnOp, Arc<Term<A>>),
    Binary(BinOp, Arc<Term<A>>, Arc<Term<A>>),
    Load(Arc<Term<A>>, Arc<Term<A>>),
    Store(Arc<Term<A>>, Arc<Term<A>>, Arc<Term<A>>),
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("unbound {0}")]
    Unbound(String),
    #[error("type mismatch: {0}")]
    TypeMismatch(String),
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
#[error("{0}")]
pub struct TermTypeError(pub String);

impl<A> Term<A> {
    pub fn word(width: u32, value: u64) -> Self {
        Term::Const(Value::word(width, value))
    }

    pub fn bool(b: bool) -> Self {
        Term::Const(Value::bool(b))
    }

    pub fn atom(a: A) -> Self {
        Term::Atom(a)
    }

    pub fn ite(c: Term<A>, t: Term<A>, e: Term<A>) -> Self {
        Term::Ite(Arc::new(c), Arc::new(t), Arc::new(e))
    }

    pub fn not(a: Term<A>) -> Self {
        Term::Unary(UnOp::Not, Arc::new(a))
    }

    pub fn bin(op: BinOp, a: Term<A>, b: Term<A>) -> Self {
        Term::Binary(op, Arc::new(a), Arc::new(b))
    }

    pub fn load(m: Term<A>, a: Term<A>) -> Self {
        Term::Load(Arc::new(m), Arc::new(a))
    }

    pub fn store(m: Term<A>, a: Term<A>, v: Term<A>) -> Self {
        Term::Store(Arc::new(m), Arc::new(a), Arc::new(v))
    }

    pub fn as_const(&self) -> Option<&Value> {
        match self {
            Term::Const(v) => Some(v),
            _ => None,
        }
    }

    pub fn as_word_const(&self) -> Option<Word> {
        self.as_const().and_then(Value::as_word)
    }

    pub fn is_true(&self) -> bool {
        matches!(self, Term::Const(v) if v.is_true())
    }

    pub fn is_false(&self) -> bool {
        matches!(self, Term::Const(Value::Word(w)) if w.width() == 1 && !w.is_true())
    }

    /// Visit every leaf.
    pub fn for_each_atom<'a>(&'a self, f: &mut impl FnMut(&'a A)) {
        match self {
            Term::Const(_) => {}
            Term::Atom(a) => f(a),
            Term::Unary(_, a) => a.for_each_atom(f),
            Term::Binary(_, a, b) | Term::Load(a, b) => {
                a.for_each_atom(f);
                b.for_each_atom(f);
            }
            Term::Ite(a, b, c) | Term::Store(a, b, c) => {
                a.for_each_atom(f);
                b.for_each_atom(f);
                c.for_each_atom(f);
            }
        }
    }

    pub fn size(&self) -> usize {
        match self {
            Term::Const(_) | Term::Atom(_) => 1,
            Term::Unary(_, a) => 1 + a.size(),
            Term::Binary(_, a, b) | Term::Load(a, b) => 1 + a.size() + b.size(),
            Term::Ite(a, b, c) | Term::Store(a, b, c) => 1 + a.size() + b.size() + c.size(),
        }
    }

    pub fn contains_memory_ops(&self) -> bool {
        match self {
            Term::Const(_) | Term::Atom(_) => false,
            Term::Load(..) | Term::Store(..) => true,
            Term::Unary(_, a) => a.contains_memory_ops(),
            Term::Binary(_, a, b) => a.contains_memory_ops() || b.contains_memory_ops(),
            Term::Ite(a, b, c) => {
                a.contains_memory_ops() || b.contains_memory_ops() || c.contains_memory_ops()
            }
        }
    }

    /// Replace leaves by terms over another leaf type.
    pub fn map_atoms<B, E>(
        &self,
        f: &mut impl FnMut(&A) -> Result<Term<B>, E>,
    ) -> Result<Term<B>, E> {
        Ok(match self {
            Term::Const(v) => Term::Const(v.clone()),
            Term::Atom(a) => f(a)?,
            Term::Unary(op, a) => Term::Unary(*op, Arc::new(a.map_atoms(f)?)),
            Term::Binary(op, a, b) => {
                Term::Binary(*op, Arc::new(a.map_atoms(f)?), Arc::new(b.map_atoms(f)?))
            }
            Term::Load(m, a) => Term::Load(Arc::new(m.map_atoms(f)?), Arc::new(a.map_atoms(f)?)),
            Term::Ite(c, t, e) => Term::Ite(
                Arc::new(c.map_atoms(f)?),
                Arc::new(t.map_atoms(f)?),
                Arc::new(e.map_atoms(f)?),
            ),
            Term::Store(m, a, v) => Term::Store(
                Arc::new(m.map_atoms(f)?),
                Arc::new(a.map_atoms(f)?),
                Arc::new(v.map_atoms(f)?),
            ),
        })
    }
}

impl<A: Atom> Term<A> {
    pub fn atoms(&self) -> BTreeSet<A> {
        let mut out = BTreeSet::new();
        self.for_each_atom(&mut |a| {
            out.insert(a.clone());
        });
        out
    }

    /// Type of a well-typed term. Ill-typed terms are reported, never guessed.
    pub fn type_of(&self) -> Result<Type, TermTypeError> {
        match self {
            Term::Const(v) => Ok(v.ty()),
            Term::Atom(a) => Ok(a.ty()),
            Term::Ite(c, t, e) => {
                expect_word(c, 1, "ite condition")?;
                let tt = t.type_of()?;
                let et = e.type_of()?;
                if tt != et {
                    return Err(TermTypeError(format!("ite branches differ: {tt} vs {et}")));
                }
                Ok(tt)
            }
            Term::Unary(UnOp::Not, a) => match a.type_of()? {
                t @ Type::Word(_) => Ok(t),
                t => Err(TermTypeError(format!("`!` applied to {t}"))),
            },
            Term::Binary(op, a, b) => {
                let ta = a.type_of()?;
                let tb = b.type_of()?;
                match (ta, tb) {
                    (Type::Word(x), Type::Word(y)) if x == y => {
                        Ok(if op.is_predicate() { Type::BOOL } else { ta })
                    }
                    _ => Err(TermTypeError(format!(
                        "operands of `{}` have types {ta} and {tb}",
                        op.symbol()
                    ))),
                }
            }
            Term::Load(m, a) => match m.type_of()? {
                Type::Mem { addr, val } => {
                    expect_word(a, addr, "load address")?;
                    Ok(Type::Word(val))
                }
                t => Err(TermTypeError(format!("load from non-memory {t}"))),
            },
            Term::Store(m, a, v) => match m.type_of()? {
                t @ Type::Mem { addr, val } => {
                    expect_word(a, addr, "store address")?;
                    expect_word(v, val, "stored value")?;
                    Ok(t)
                }
                t => Err(TermTypeError(format!("store into non-memory {t}"))),
            },
        }
    }

    /// Evaluate with a leaf lookup. All word arithmetic is modular.
    pub fn eval_with(&self, lookup: &impl Fn(&A) -> Option<Value>) -> Result<Value, EvalError> {
        match self {
            Term::Const(v) => Ok(v.clone()),
            Term::Atom(a) => {
                let v = lookup(a).ok_or_else(|| EvalError::Unbound(a.to_string()))?;
                if v.ty() != a.ty() {
                    return Err(EvalError::TypeMismatch(format!(
                        "{a} : {} bound to a {}",
                        a.ty(),
                        v.ty()
                    )));
                }
                Ok(v)
            }
            Term::Ite(c, t, e) => {
                if eval_word(c, lookup)?.is_true() {
                    t.eval_with(lookup)
                } else {
                    e.eval_with(lookup)
                }
            }
            Term::Unary(UnOp::Not, a) => {
                let w = eval_word(a, lookup)?;
                Ok(Value::word(w.width(), !w.value()))
            }
            Term::Binary(op, a, b) => {
                let x = eval_word(a, lookup)?;
                let y = eval_word(b, lookup)?;
                if x.width() != y.width() {
                    return Err(EvalError::TypeMismatch(format!(
                        "`{}` on w{} and w{}",
                        op.symbol(),
                        x.width(),
                        y.width()
                    )));
                }
                Ok(Value::Word(op.apply(x, y)))
            }
            Term::Load(m, a) => {
                let m = eval_mem(m, lookup)?;
                let a = eval_word(a, lookup)?;
                Ok(Value::word(m.val_width(), m.load(a.value())))
            }
            Term::Store(m, a, v) => {
                let mut m = eval_mem(m, lookup)?;
                let a = eval_word(a, lookup)?;
                let v = eval_word(v, lookup)?;
                m.store_in_place(a.value(), v.value());
                Ok(Value::Mem(m))
            }
        }
    }

    /// Evaluate a closed term.
    pub fn eval_closed(&self) -> Result<Value, EvalError> {
        self.eval_with(&|_| None)
    }

    /// Collapse every subtree without leaves into its value.
    pub fn fold_constants(&self) -> Term<A> {
        match self {
            Term::Const(_) | Term::Atom(_) => self.clone(),
            _ => {
                let t = self.map_children(|c| c.fold_constants());
                if t.children_are_const() {
                    if let Ok(v) = t.eval_closed() {
                        return Term::Const(v);
                    }
                }
                t
            }
        }
    }

    fn children_are_const(&self) -> bool {
        let c = |t: &Arc<Term<A>>| matches!(**t, Term::Const(_));
        match self {
            Term::Const(_) => true,
            Term::Atom(_) => false,
            Term::Unary(_, a) => c(a),
            Term::Binary(_, a, b) | Term::Load(a, b) => c(a) && c(b),
            Term::Ite(a, b, d) | Term::Store(a, b, d) => c(a) && c(b) && c(d),
        }
    }

    /// Rebuild a node with transformed children; leaves are returned as-is.
    pub fn map_children(&self, mut f: impl FnMut(&Term<A>) -> Term<A>) -> Term<A> {
        let mut g = |t: &Arc<Term<A>>| Arc::new(f(t));
        match self {
            Term::Const(_) | Term::Atom(_) => self.clone(),
            Term::Unary(op, a) => Term::Unary(*op, g(a)),
            Term::Binary(op, a, b) => Term::Binary(*op, g(a), g(b)),
            Term::Load(m, a) => Term::Load(g(m), g(a)),
            Term::Ite(c, t, e) => Term::Ite(g(c), g(t), g(e)),
            Term::Store(m, a, v) => Term::Store(g(m), g(a), g(v)),
        }
    }

    /// Replace leaves by terms of the same leaf type.
    pub fn substitute(&self, f: &impl Fn(&A) -> Option<Term<A>>) -> Term<A> {
        match self {
            Term::Atom(a) => f(a).unwrap_or_else(|| self.clone()),
            Term::Const(_) => self.clone(),
            _ => self.map_children(|c| c.substitute(f)),
        }
    }
}

fn expect_word<A: Atom>(t: &Term<A>, width: u32, what: &str) -> Result<(), TermTypeError> {
    match t.type_of()? {
        Type::Word(w) if w == width => Ok(()),
        other => Err(TermTypeError(format!(
            "{what} must be w{width}, found {other}"
        ))),
    }
}

fn eval_word<A: Atom>(
    t: &Term<A>,
    lookup: &impl Fn(&A) -> Option<Value>,
) -> Result<Word, EvalError> {
    match t.eval_with(lookup)? {
        Value::Word(w) => Ok(w),
        Value::Mem(_) => Err(EvalError::TypeMismatch(
            "expected a word, found a memory".into(),
        )),
    }
}

fn eval_mem<A: Atom>(
    t: &Term<A>,
    lookup: &impl Fn(&A) -> Option<Value>,
) -> Result<MemoryValue, EvalError> {
    match t.eval_with(lookup)? {
        Value::Mem(m) => Ok(m),
        Value::Word(_) => Err(EvalError::TypeMismatch(
            "expected a memory, found a word".into(),
        )),
    }
}

// Canonical text: binary operands are parenthesised whenever they are
// themselves binary, so the printed form parses back to the same tree.
impl<A: fmt::Display> fmt::Display for Term<A> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Const(v) => write!(f, "{v}"),
            Term::Atom(a) => write!(f, "{a}"),
            Term::Ite(c, t, e) => write!(f, "ite({c}, {t}, {e})"),
            Term::Unary(UnOp::Not, a) => {
                f.write_str("!")?;
                write_operand(f, a)
            }
            Term::Binary(op, a, b) => {
                write_operand(f, a)?;
                write!(f, " {} ", op.symbol())?;
                write_operand(f, b)
            }
            Term::Load(m, a) => write!(f, "ld({m}, {a})"),
            Term::Store(m, a, v) => write!(f, "st({m}, {a}, {v})"),
        }
    }
}

fn write_operand<A: fmt::Display>(f: &mut fmt::Formatter<'_>, t: &Term<A>) -> fmt::Result {
    match t {
        Term::Binary(..) | Term::Unary(..) => write!(f, "({t})"),
        _ => write!(f, "{t}"),
    }
}
