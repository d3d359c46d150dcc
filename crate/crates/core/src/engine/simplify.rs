use std::collections::BTreeSet;

use super::EngineError;
use crate::il::{Atom, BinOp, Term, Type, Var};
use crate::kernel::{Kernel, ProgressStructure};
use crate::solver::{Solver, Validity};
use crate::sym::{fresh_symbol, rewrite, symbols_of_states, SymExpr, SymState, Symbol};

/// A structure together with the state that replaced the rewritten target.
pub type Rewritten = (ProgressStructure, SymState);

pub(crate) fn all_symbols(ps: &ProgressStructure) -> BTreeSet<Symbol> {
    symbols_of_states(std::iter::once(ps.source()).chain(ps.targets()))
}

fn value_of<'a>(target: &'a SymState, x: &Var) -> Result<&'a SymExpr, EngineError> {
    target
        .store()
        .and_then(|st| st.get(x))
        .ok_or_else(|| EngineError::NoSuchVariable(x.to_string()))
}

/// Replace `δ(x)` by an expression that equals it under the target's path,
/// without changing the path: a simplify with a throwaway boolean symbol,
/// followed by a consequence that drops its definition.
pub fn replace_value(
    k: &Kernel,
    ps: &ProgressStructure,
    target: &SymState,
    x: &Var,
    new_value: &SymExpr,
) -> Result<Rewritten, EngineError> {
    if value_of(target, x)? == new_value {
        return Ok((ps.clone(), target.clone()));
    }
    let tag = fresh_symbol(Type::BOOL, &all_symbols(ps));
    let ps = k.simplify(ps, target, x, new_value, &tag, &Term::bool(true))?;
    let with_def = ps.targets().iter().find(|t| t.symbols().contains(&tag)).cloned();
    let with_def = with_def.expect("simplify adds the definition to the target");
    let clean = with_def.with_path(target.path().clone());
    let ps = k.consequence(&ps, &ps.source().clone(), &with_def, &clean)?;
    Ok((ps, clean))
}

/// Abbreviate every occurrence of the word subterm `sub` in `δ(x)` by a
/// fresh symbol and forget what it stood for.
pub fn forget_subterm(
    k: &Kernel,
    ps: &ProgressStructure,
    target: &SymState,
    x: &Var,
    sub: &SymExpr,
) -> Result<(ProgressStructure, SymState, Symbol), EngineError> {
    let ty = sub
        .type_of()
        .map_err(|e| EngineError::Forget(e.to_string()))?;
    if ty.is_mem() {
        return Err(EngineError::Forget(format!("{sub} is a memory")));
    }
    let old = value_of(target, x)?;
    let alpha = fresh_symbol(ty, &all_symbols(ps));
    let a = Term::atom(alpha.clone());
    let new_value = replace_subterm(old, sub, &a);
    if new_value == *old {
        return Err(EngineError::Forget(format!("{sub} does not occur in {x}")));
    }
    let ps = k.simplify(ps, target, x, &new_value, &alpha, sub)?;
    let with_def = ps
        .targets()
        .iter()
        .find(|t| t.symbols().contains(&alpha))
        .cloned()
        .expect("simplify adds the definition to the target");
    let clean = with_def.with_path(target.path().clone());
    let ps = k.consequence(&ps, &ps.source().clone(), &with_def, &clean)?;
    Ok((ps, clean, alpha))
}

fn replace_subterm(e: &SymExpr, sub: &SymExpr, by: &SymExpr) -> SymExpr {
    if e == sub {
        return by.clone();
    }
    match e {
        Term::Const(_) | Term::Atom(_) => e.clone(),
        _ => e.map_children(|c| replace_subterm(c, sub, by)),
    }
}

/// Replace `δ(x)` by a fresh symbol and drop the defining conjunct. Sound
/// but lossy: the variable may hold any value afterwards.
pub fn forget_value(
    k: &Kernel,
    ps: &ProgressStructure,
    target: &SymState,
    x: &Var,
) -> Result<(ProgressStructure, SymState, Symbol), EngineError> {
    let old = value_of(target, x)?.clone();
    if x.ty().is_mem() {
        return Err(EngineError::Forget(format!(
            "{x} is a memory; forget its cells with forget_subterm"
        )));
    }
    forget_subterm(k, ps, target, x, &old)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Alias {
    Equal,
    Disjoint,
    Unknown,
}

/// Memory rewriting under a path condition. Aliasing questions are decided
/// syntactically when possible and by the solver otherwise; the kernel
/// re-checks the overall equality.
struct MemorySimplifier<'a> {
    solver: &'a Solver,
    path: &'a [SymExpr],
    undecided: Option<(SymExpr, SymExpr)>,
}

impl MemorySimplifier<'_> {
    fn alias(&mut self, a: &SymExpr, b: &SymExpr) -> Alias {
        if let Some(eq) = rewrite::word_eq(a, b) {
            return if eq { Alias::Equal } else { Alias::Disjoint };
        }
        let eq = Term::bin(BinOp::Eq, a.clone(), b.clone());
        if self.solver.check_valid(self.path, &eq) == Validity::Valid {
            return Alias::Equal;
        }
        let ne = Term::bin(BinOp::Neq, a.clone(), b.clone());
        if self.solver.check_valid(self.path, &ne) == Validity::Valid {
            return Alias::Disjoint;
        }
        Alias::Unknown
    }

    fn run(&mut self, e: &SymExpr) -> SymExpr {
        match e {
            Term::Const(_) | Term::Atom(_) => e.clone(),
            Term::Load(m, a) => {
                let m = self.run(m);
                let a = self.run(a);
                let mut cur = &m;
                while let Term::Store(inner, b, v) = cur {
                    match self.alias(&a, b) {
                        Alias::Equal => return (**v).clone(),
                        Alias::Disjoint => cur = inner,
                        Alias::Unknown => {
                            self.undecided = Some((a.clone(), (**b).clone()));
                            break;
                        }
                    }
                }
                Term::load(cur.clone(), a)
            }
            Term::Store(m, a, v) => {
                let m = self.run(m);
                let a = self.run(a);
                let v = self.run(v);
                Term::store(self.drop_overwritten(&m, &a), a, v)
            }
            _ => e.map_children(|c| self.run(c)),
        }
    }

    /// Stores below a store to `a` at an address equal to `a` are dead.
    fn drop_overwritten(&mut self, m: &SymExpr, a: &SymExpr) -> SymExpr {
        match m {
            Term::Store(inner, b, v) => {
                let rest = self.drop_overwritten(inner, a);
                if self.alias(a, b) == Alias::Equal {
                    rest
                } else {
                    Term::store(rest, (**b).clone(), (**v).clone())
                }
            }
            _ => m.clone(),
        }
    }
}

/// Resolve loads against stores and drop overwritten stores in `δ(x)`.
/// Fails with [`EngineError::CannotDecideAliasing`] when nothing could be
/// simplified because some address pair is neither provably equal nor
/// provably different.
pub fn simplify_memory(
    k: &Kernel,
    ps: &ProgressStructure,
    target: &SymState,
    x: &Var,
) -> Result<Rewritten, EngineError> {
    let old = value_of(target, x)?;
    let mut simp = MemorySimplifier {
        solver: k.solver(),
        path: target.path().conjuncts(),
        undecided: None,
    };
    let new_value = simp.run(old);
    if new_value == *old {
        if let Some((a, b)) = simp.undecided {
            return Err(EngineError::CannotDecideAliasing(format!("{a} and {b}")));
        }
        return Ok((ps.clone(), target.clone()));
    }
    replace_value(k, ps, target, x, &new_value)
}

/// Whether `e` has a load from a store or a store on a store, the shapes
/// [`simplify_memory`] may reduce.
pub fn has_memory_redex(e: &SymExpr) -> bool {
    match e {
        Term::Load(m, _) | Term::Store(m, _, _) if matches!(**m, Term::Store(..)) => true,
        Term::Const(_) | Term::Atom(_) => false,
        Term::Unary(_, a) => has_memory_redex(a),
        Term::Binary(_, a, b) | Term::Load(a, b) => has_memory_redex(a) || has_memory_redex(b),
        Term::Ite(a, b, c) | Term::Store(a, b, c) => {
            has_memory_redex(a) || has_memory_redex(b) || has_memory_redex(c)
        }
    }
}
