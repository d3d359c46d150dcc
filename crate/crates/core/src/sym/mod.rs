//! Symbolic counterparts of the concrete world: symbols, symbolic
//! expressions, stores and states, interpretations, and the single-step
//! symbolic semantics.

mod matching;
pub mod rewrite;
mod step;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::il::{Atom, EvalError, Expr, Label, Store, Term, Type, Value, Var};

pub use matching::{loose_matches, matches, sample_minimal_interpretation, weaker_than};
pub use step::{resolve_targets, sstep, DEFAULT_TARGET_CAP};

/// A symbol. Names produced by [`SymbolGen`] live in the reserved `α#`
/// namespace; initial symbols are `α_<var>`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Symbol {
    name: Arc<str>,
    ty: Type,
}

impl Symbol {
    pub fn new(name: impl AsRef<str>, ty: Type) -> Self {
        Symbol {
            name: Arc::from(name.as_ref()),
            ty,
        }
    }

    /// The symbol standing for the initial value of a program variable.
    pub fn initial(v: &Var) -> Self {
        Symbol::new(format!("α_{}", v.name()), v.ty())
    }

    pub fn name(&self) -> &str {
        &self.name
    }
}

impl Atom for Symbol {
    fn ty(&self) -> Type {
        self.ty
    }
}

impl fmt::Display for Symbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name)
    }
}

pub type SymExpr = Term<Symbol>;

/// Partial map from symbols to values.
pub type Interpretation = BTreeMap<Symbol, Value>;

/// Symbolic store.
pub type SymStore = BTreeMap<Var, SymExpr>;

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum SymError {
    #[error("unbound {0}")]
    Unbound(String),
    #[error("type mismatch: {0}")]
    TypeMismatch(String),
    #[error("more than {cap} jump targets")]
    TargetCapExceeded { cap: usize },
    #[error("solver could not decide: {0}")]
    SolverUnknown(String),
    #[error("symbolic step from a failed state")]
    NotRunning,
}

impl From<EvalError> for SymError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Unbound(s) => SymError::Unbound(s),
            EvalError::TypeMismatch(s) => SymError::TypeMismatch(s),
        }
    }
}

/// Issues symbols that were never issued before by this generator and
/// avoid a given set.
#[derive(Debug, Default)]
pub struct SymbolGen {
    next: AtomicU64,
}

impl SymbolGen {
    pub fn new() -> Self {
        SymbolGen::default()
    }

    pub fn fresh(&self, ty: Type, avoid: &BTreeSet<Symbol>) -> Symbol {
        loop {
            let n = self.next.fetch_add(1, Ordering::Relaxed) + 1;
            let s = Symbol::new(format!("α#{n}"), ty);
            if !avoid.contains(&s) && !avoid.iter().any(|a| a.name() == s.name()) {
                return s;
            }
        }
    }
}

static GLOBAL_GEN: SymbolGen = SymbolGen {
    next: AtomicU64::new(0),
};

/// Fresh symbol from the process-wide generator.
pub fn fresh_symbol(ty: Type, avoid: &BTreeSet<Symbol>) -> Symbol {
    GLOBAL_GEN.fresh(ty, avoid)
}

/// Conjunction of width-1 symbolic expressions. Empty means true.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PathCond(Vec<SymExpr>);

impl PathCond {
    pub fn top() -> Self {
        PathCond(Vec::new())
    }

    pub fn from_conjuncts(cs: impl IntoIterator<Item = SymExpr>) -> Self {
        PathCond(cs.into_iter().collect())
    }

    pub fn conjuncts(&self) -> &[SymExpr] {
        &self.0
    }

    /// Conjoin `c`; a conjunct that is already present is not repeated.
    pub fn and(&self, c: SymExpr) -> Self {
        let mut v = self.0.clone();
        if !v.contains(&c) {
            v.push(c);
        }
        PathCond(v)
    }

    pub fn is_top(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, c: &SymExpr) -> bool {
        self.0.contains(c)
    }

    /// The conjunction as a single expression.
    pub fn to_expr(&self) -> SymExpr {
        let mut it = self.0.iter().cloned();
        match it.next() {
            None => Term::bool(true),
            Some(first) => it.fold(first, |acc, c| Term::bin(crate::il::BinOp::And, acc, c)),
        }
    }

    pub fn symbols(&self) -> BTreeSet<Symbol> {
        let mut out = BTreeSet::new();
        for c in &self.0 {
            c.for_each_atom(&mut |a| {
                out.insert(a.clone());
            });
        }
        out
    }

    pub fn map(&self, f: impl FnMut(&SymExpr) -> SymExpr) -> Self {
        PathCond(self.0.iter().map(f).collect())
    }
}

impl fmt::Display for PathCond {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return f.write_str("T");
        }
        for (i, c) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(" ∧ ")?;
            }
            match c {
                Term::Binary(..) | Term::Unary(..) => write!(f, "({c})")?,
                _ => write!(f, "{c}")?,
            }
        }
        Ok(())
    }
}

/// Stores serialize as `[var, value]` pairs since variables are not strings.
mod store_pairs {
    use serde::{Deserialize, Deserializer, Serializer};

    use super::{SymExpr, SymStore};
    use crate::il::Var;

    pub fn serialize<S: Serializer>(st: &SymStore, s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(st.iter())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<SymStore, D::Error> {
        Ok(Vec::<(Var, SymExpr)>::deserialize(d)?.into_iter().collect())
    }

}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SymState {
    Running {
        pc: Label,
        #[serde(with = "store_pairs")]
        store: SymStore,
        path: PathCond,
    },
    /// Failed state; only the path condition matters.
    Error { path: PathCond },
}

impl SymState {
    pub fn running(pc: Label, store: SymStore, path: PathCond) -> Self {
        SymState::Running { pc, store, path }
    }

    pub fn pc(&self) -> Option<Label> {
        match self {
            SymState::Running { pc, .. } => Some(*pc),
            SymState::Error { .. } => None,
        }
    }

    pub fn store(&self) -> Option<&SymStore> {
        match self {
            SymState::Running { store, .. } => Some(store),
            SymState::Error { .. } => None,
        }
    }

    pub fn path(&self) -> &PathCond {
        match self {
            SymState::Running { path, .. } | SymState::Error { path } => path,
        }
    }

    pub fn is_error(&self) -> bool {
        matches!(self, SymState::Error { .. })
    }

    pub fn with_path(&self, path: PathCond) -> Self {
        match self {
            SymState::Running { pc, store, .. } => SymState::running(*pc, store.clone(), path),
            SymState::Error { .. } => SymState::Error { path },
        }
    }

    pub fn symbols(&self) -> BTreeSet<Symbol> {
        let mut out = self.path().symbols();
        if let Some(st) = self.store() {
            for e in st.values() {
                e.for_each_atom(&mut |a| {
                    out.insert(a.clone());
                });
            }
        }
        out
    }

    /// Apply `f` to every expression of the state.
    pub fn map_exprs(&self, mut f: impl FnMut(&SymExpr) -> SymExpr) -> Self {
        match self {
            SymState::Running { pc, store, path } => SymState::Running {
                pc: *pc,
                store: store.iter().map(|(v, e)| (v.clone(), f(e))).collect(),
                path: path.map(&mut f),
            },
            SymState::Error { path } => SymState::Error {
                path: path.map(f),
            },
        }
    }

    /// Substitute symbols, then fold constants.
    pub fn substitute(&self, sub: &BTreeMap<Symbol, SymExpr>) -> Self {
        self.map_exprs(|e| e.substitute(&|a| sub.get(a).cloned()).fold_constants())
    }
}

impl fmt::Display for SymState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SymState::Running { pc, store, path } => {
                write!(f, "({pc}, {{")?;
                for (i, (v, e)) in store.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{v} ↦ {e}")?;
                }
                write!(f, "}}, {path})")
            }
            SymState::Error { path } => write!(f, "(⊥, {path})"),
        }
    }
}

/// Union of the symbols of several states.
pub fn symbols_of_states<'a>(ss: impl IntoIterator<Item = &'a SymState>) -> BTreeSet<Symbol> {
    ss.into_iter().flat_map(|s| s.symbols()).collect()
}

/// The store mapping every variable to its initial symbol.
pub fn initial_store(vars: impl IntoIterator<Item = Var>) -> SymStore {
    vars.into_iter()
        .map(|v| {
            let s = Symbol::initial(&v);
            (v, Term::atom(s))
        })
        .collect()
}

/// Substitute the store into a program expression and fold constant subtrees.
pub fn sym_eval(e: &Expr, store: &SymStore) -> Result<SymExpr, SymError> {
    let t = e.map_atoms(&mut |v: &Var| {
        store
            .get(v)
            .cloned()
            .ok_or_else(|| SymError::Unbound(format!("variable {v}")))
    })?;
    Ok(t.fold_constants())
}

pub fn interp_expr(h: &Interpretation, e: &SymExpr) -> Result<Value, SymError> {
    Ok(e.eval_with(&|s: &Symbol| h.get(s).cloned())?)
}

pub fn interp_store(h: &Interpretation, st: &SymStore) -> Result<Store, SymError> {
    st.iter()
        .map(|(v, e)| Ok((v.clone(), interp_expr(h, e)?)))
        .collect()
}

/// Whether every conjunct evaluates to true.
pub fn interp_path(h: &Interpretation, p: &PathCond) -> Result<bool, SymError> {
    for c in p.conjuncts() {
        if !interp_expr(h, c)?.is_true() {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Logical negation of a condition; constants fold.
pub fn negate(c: &SymExpr) -> SymExpr {
    Term::not(c.clone()).fold_constants()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::il::BinOp;

    fn w32(n: &str) -> Var {
        Var::new(n, Type::Word(32))
    }

    #[test]
    fn store_written_through_initial_store() {
        let m = Var::new("M", Type::Mem { addr: 32, val: 32 });
        let vars = [m.clone(), w32("SP"), w32("R3")];
        let d0 = initial_store(vars.clone());
        let e = Term::store(
            Term::atom(m.clone()),
            Term::atom(w32("SP")),
            Term::atom(w32("R3")),
        );
        assert_eq!(sym_eval(&e, &d0).unwrap().to_string(), "st(α_M, α_SP, α_R3)");
    }

    #[test]
    fn closed_expressions_fold() {
        let e = Term::bin(BinOp::Add, Term::word(8, 250), Term::word(8, 10));
        assert_eq!(sym_eval(&e, &SymStore::new()).unwrap(), Term::word(8, 4));
    }

    #[test]
    fn fresh_symbols_differ_and_avoid() {
        let g = SymbolGen::new();
        let a = g.fresh(Type::Word(32), &BTreeSet::new());
        assert_eq!(a.name(), "α#1");
        let avoid = BTreeSet::from([Symbol::new("α#2", Type::Word(8))]);
        let b = g.fresh(Type::Word(32), &avoid);
        assert_eq!(b.name(), "α#3");
    }

    #[test]
    fn interp_adds_modularly() {
        let a = Symbol::new("a", Type::Word(8));
        let h = Interpretation::from([(a.clone(), Value::word(8, 5))]);
        let e = Term::bin(BinOp::Add, Term::atom(a), Term::word(8, 1));
        assert_eq!(interp_expr(&h, &e).unwrap(), Value::word(8, 6));
        assert!(matches!(
            interp_expr(&Interpretation::new(), &e),
            Err(SymError::Unbound(_))
        ));
    }

    #[test]
    fn error_state_symbols_come_from_path() {
        let a = Symbol::new("a", Type::BOOL);
        let s = SymState::Error {
            path: PathCond::top().and(Term::atom(a.clone())),
        };
        assert_eq!(s.symbols(), BTreeSet::from([a]));
    }
}
