use std::collections::{BTreeMap, BTreeSet};

use super::simplify::{all_symbols, replace_value};
use super::EngineError;
use crate::il::{Atom, BinOp, Term, Type, Var};
use crate::kernel::{Kernel, ProgressStructure};
use crate::sym::{fresh_symbol, rewrite, PathCond, SymExpr, SymState, Symbol};

/// A cycle counter whose merged values are kept as an interval relative to
/// the counter's entry symbol.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Counter {
    pub var: Var,
    pub origin: Symbol,
}

/// Lower bound conjunct `lo <= α - α_c`.
pub fn lower_bound(alpha: &Symbol, origin: &Symbol, lo: u64) -> SymExpr {
    let w = alpha.ty().word_width().expect("word counter");
    Term::bin(BinOp::Ule, Term::word(w, lo), offset(alpha, origin))
}

/// Upper bound conjunct `α - α_c <= hi`.
pub fn upper_bound(alpha: &Symbol, origin: &Symbol, hi: u64) -> SymExpr {
    let w = alpha.ty().word_width().expect("word counter");
    Term::bin(BinOp::Ule, offset(alpha, origin), Term::word(w, hi))
}

fn offset(alpha: &Symbol, origin: &Symbol) -> SymExpr {
    Term::bin(
        BinOp::Sub,
        Term::atom(alpha.clone()),
        Term::atom(origin.clone()),
    )
}

/// Interval of a counter value relative to `origin`: `origin + k` gives
/// `[k, k]`, and `α + k` for a symbol `α` with recognized bound conjuncts
/// `lo <= α - origin <= hi` gives `[lo + k, hi + k]`.
pub fn counter_interval(value: &SymExpr, origin: &Symbol, path: &PathCond) -> Option<(u64, u64)> {
    if let Some(k) = rewrite::const_difference(value, &Term::atom(origin.clone())) {
        return Some((k, k));
    }
    let w = value.type_of().ok()?.word_width()?;
    let mut bounds: BTreeMap<Symbol, (Option<u64>, Option<u64>)> = BTreeMap::new();
    for c in path.conjuncts() {
        let Term::Binary(BinOp::Ule, a, b) = c else {
            continue;
        };
        let bounded = |e: &SymExpr| match e {
            Term::Binary(BinOp::Sub, x, y) if **y == Term::atom(origin.clone()) => match &**x {
                Term::Atom(s) => Some(s.clone()),
                _ => None,
            },
            _ => None,
        };
        if let (Some(s), Some(lo)) = (bounded(b), a.as_word_const()) {
            bounds.entry(s).or_default().0 = Some(lo.value());
        }
        if let (Some(s), Some(hi)) = (bounded(a), b.as_word_const()) {
            bounds.entry(s).or_default().1 = Some(hi.value());
        }
    }
    for (s, (lo, hi)) in bounds {
        let (Some(lo), Some(hi)) = (lo, hi) else {
            continue;
        };
        if let Some(d) = rewrite::const_difference(value, &Term::atom(s)) {
            let top = hi.checked_add(d).filter(|t| *t <= crate::il::mask(w))?;
            if lo <= hi {
                return Some((lo + d, top));
            }
        }
    }
    None
}

/// A generalization of two expressions with word holes.
struct AntiUnifier {
    holes: Vec<(Symbol, SymExpr, SymExpr)>,
    avoid: BTreeSet<Symbol>,
}

impl AntiUnifier {
    fn hole(&mut self, a: &SymExpr, b: &SymExpr, ty: Type) -> SymExpr {
        if let Some((h, _, _)) = self.holes.iter().find(|(_, x, y)| x == a && y == b) {
            return Term::atom(h.clone());
        }
        let h = fresh_symbol(ty, &self.avoid);
        self.avoid.insert(h.clone());
        self.holes.push((h.clone(), a.clone(), b.clone()));
        Term::atom(h)
    }

    fn run(&mut self, a: &SymExpr, b: &SymExpr) -> Result<SymExpr, EngineError> {
        if a == b {
            return Ok(a.clone());
        }
        let same_shape = match (a, b) {
            (Term::Unary(o1, _), Term::Unary(o2, _)) => o1 == o2,
            (Term::Binary(o1, _, _), Term::Binary(o2, _, _)) => o1 == o2,
            (Term::Load(..), Term::Load(..))
            | (Term::Ite(..), Term::Ite(..))
            | (Term::Store(..), Term::Store(..)) => true,
            _ => false,
        };
        let ty = a
            .type_of()
            .map_err(|e| EngineError::CannotAlign(e.to_string()))?;
        if same_shape && ty.is_mem() {
            // Memories are generalized cell by cell; never by a hole.
            let (Term::Store(m1, a1, v1), Term::Store(m2, a2, v2)) = (a, b) else {
                unreachable!("memory-typed nodes with equal shape are stores")
            };
            let m = self.run(m1, m2)?;
            let ad = self.run(a1, a2)?;
            let v = self.run(v1, v2)?;
            return Ok(Term::store(m, ad, v));
        }
        if ty.is_mem() {
            return Err(EngineError::CannotAlign(format!(
                "memories {a} and {b} differ in shape"
            )));
        }
        Ok(self.hole(a, b, ty))
    }
}

/// Make `t1` and `t2` syntactically equal so that the target set collapses
/// them. Differing word subterms become fresh symbols, differing path
/// conjuncts are dropped, and a configured counter keeps the hull of both
/// intervals as bound conjuncts.
pub fn merge_targets(
    k: &Kernel,
    ps: &ProgressStructure,
    t1: &SymState,
    t2: &SymState,
    counter: Option<&Counter>,
) -> Result<(ProgressStructure, SymState), EngineError> {
    if t1 == t2 {
        return Ok((ps.clone(), t1.clone()));
    }
    for t in [t1, t2] {
        if !ps.targets().contains(t) {
            return Err(EngineError::NoSuchTarget(t.to_string()));
        }
    }
    if t1.pc() != t2.pc() || t1.is_error() != t2.is_error() {
        return Err(EngineError::DifferentLabels(
            t1.pc().map_or("⊥".into(), |l| l.to_string()),
            t2.pc().map_or("⊥".into(), |l| l.to_string()),
        ));
    }
    let mut au = AntiUnifier {
        holes: Vec::new(),
        avoid: all_symbols(ps),
    };
    let mut general = BTreeMap::new();
    if let (Some(s1), Some(s2)) = (t1.store(), t2.store()) {
        for (x, e1) in s1 {
            let e2 = s2
                .get(x)
                .ok_or_else(|| EngineError::CannotAlign(format!("{x} missing")))?;
            let g = match counter {
                // The counter is generalized as a whole so that its interval
                // stays recognizable.
                Some(c) if c.var == *x && e1 != e2 => au.hole(e1, e2, x.ty()),
                _ => au.run(e1, e2)?,
            };
            general.insert(x.clone(), g);
        }
    }
    let mut common: Vec<SymExpr> = t1
        .path()
        .conjuncts()
        .iter()
        .filter(|c| t2.path().contains(c))
        .cloned()
        .collect();
    if let Some(c) = counter {
        if let Some(Term::Atom(h)) = general.get(&c.var) {
            if let Some((_, e1, e2)) = au.holes.iter().find(|(s, _, _)| s == h) {
                let i1 = counter_interval(e1, &c.origin, t1.path());
                let i2 = counter_interval(e2, &c.origin, t2.path());
                let (Some((l1, h1)), Some((l2, h2))) = (i1, i2) else {
                    return Err(EngineError::CannotAlign(format!(
                        "no bound on counter {}",
                        c.var
                    )));
                };
                common.push(lower_bound(h, &c.origin, l1.min(l2)));
                common.push(upper_bound(h, &c.origin, h1.max(h2)));
            }
        }
    }
    let merged_path = PathCond::from_conjuncts(common);
    let mut ps = ps.clone();
    let mut merged = None;
    for (side, t) in [t1, t2].into_iter().enumerate() {
        let mut cur = t.clone();
        // Record the hole definitions in the path.
        if let Some((x, v)) = cur.store().and_then(|st| st.iter().next()).map(|(x, v)| (x.clone(), v.clone())) {
            for (h, e1, e2) in &au.holes {
                let def = if side == 0 { e1 } else { e2 };
                ps = k.simplify(&ps, &cur, &x, &v, h, def)?;
                let eq = Term::bin(BinOp::Eq, Term::atom(h.clone()), def.clone());
                cur = cur.with_path(cur.path().and(eq));
            }
        }
        for (x, g) in &general {
            let (next_ps, next) = replace_value(k, &ps, &cur, x, g)?;
            ps = next_ps;
            cur = next;
        }
        let out = cur.with_path(merged_path.clone());
        ps = k.consequence(&ps, &ps.source().clone(), &cur, &out)?;
        merged = Some(out);
    }
    Ok((ps, merged.expect("two sides")))
}

/// Specialize a general structure: substitute the bindings, then rename
/// free symbols that occur in `avoid` to fresh ones. Returns the renaming.
pub fn instantiate(
    k: &Kernel,
    ps: &ProgressStructure,
    bindings: &BTreeMap<Symbol, SymExpr>,
    avoid: &BTreeSet<Symbol>,
) -> Result<(ProgressStructure, BTreeMap<Symbol, Symbol>), EngineError> {
    let mut ps = ps.clone();
    for (s, v) in bindings {
        ps = k.subst(&ps, s, v)?;
    }
    let mut renaming = BTreeMap::new();
    for f in ps.free_symbols() {
        if avoid.contains(&f) || avoid.iter().any(|a| a.name() == f.name()) {
            let mut taken = all_symbols(&ps);
            taken.extend(avoid.iter().cloned());
            let to = fresh_symbol(f.ty(), &taken);
            ps = k.rename(&ps, &f, &to)?;
            renaming.insert(f, to);
        }
    }
    Ok((ps, renaming))
}
