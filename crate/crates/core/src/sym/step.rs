use std::collections::BTreeSet;

use super::{negate, sym_eval, PathCond, SymError, SymExpr, SymState};
use crate::il::{Label, Program, Stmt};
use crate::solver::{EnumError, Solver};

/// Default bound on the number of concrete targets of one jump.
pub const DEFAULT_TARGET_CAP: usize = 64;

/// All labels the target can take under the path condition.
pub fn resolve_targets(
    target: &SymExpr,
    path: &PathCond,
    cap: usize,
    solver: &Solver,
) -> Result<BTreeSet<Label>, SymError> {
    match solver.enumerate_models(path.conjuncts(), target, cap) {
        Ok(vs) => Ok(vs
            .into_iter()
            .map(|v| v.as_word().expect("word-typed target").value())
            .collect()),
        Err(EnumError::CapExceeded { cap }) => Err(SymError::TargetCapExceeded { cap }),
        Err(EnumError::Unknown(r)) => Err(SymError::SolverUnknown(r)),
    }
}

/// One symbolic step. Successors are ordered: for a conditional the
/// positive branch comes first. An unmapped label yields the failed state.
/// A constant target is taken as is, even under an unsatisfiable path; such
/// successors are left for the infeasible rule to remove.
pub fn sstep(
    p: &Program,
    s: &SymState,
    cap: usize,
    solver: &Solver,
) -> Result<Vec<SymState>, SymError> {
    let SymState::Running { pc, store, path } = s else {
        return Err(SymError::NotRunning);
    };
    let Some(stmt) = p.stmt(*pc) else {
        return Ok(vec![SymState::Error { path: path.clone() }]);
    };
    let jump_to = |target: &SymExpr, path: &PathCond| -> Result<Vec<SymState>, SymError> {
        let labels = match target.as_word_const() {
            Some(w) => BTreeSet::from([w.value()]),
            None => resolve_targets(target, path, cap, solver)?,
        };
        Ok(labels
            .into_iter()
            .map(|l| SymState::running(l, store.clone(), path.clone()))
            .collect())
    };
    match stmt {
        Stmt::Assign(x, e) => {
            let mut st = store.clone();
            st.insert(x.clone(), sym_eval(e, store)?);
            Ok(vec![SymState::running(p.next_label(*pc), st, path.clone())])
        }
        Stmt::Assert(e) => {
            let c = sym_eval(e, store)?;
            Ok(vec![
                SymState::running(p.next_label(*pc), store.clone(), path.and(c.clone())),
                SymState::Error {
                    path: path.and(negate(&c)),
                },
            ])
        }
        Stmt::Jmp(t) => jump_to(&sym_eval(t, store)?, path),
        Stmt::CJmp(c, t, f) => {
            let c = sym_eval(c, store)?;
            let mut out = jump_to(&sym_eval(t, store)?, &path.and(c.clone()))?;
            out.extend(jump_to(&sym_eval(f, store)?, &path.and(negate(&c)))?);
            Ok(out)
        }
    }
}

