//! Deterministic, total concrete semantics.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use thiserror::Error;

use super::program::{Expr, Label, Program, Stmt, Var};
use super::term::EvalError;
use super::value::Value;

/// Concrete store: partial map from variables to values.
pub type Store = BTreeMap<Var, Value>;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum State {
    Running {
        pc: Label,
        env: Store,
    },
    /// Reached when an assertion fails or control reaches an unmapped label.
    Error {
        env: Store,
    },
}

impl State {
    pub fn running(pc: Label, env: Store) -> Self {
        State::Running { pc, env }
    }

    pub fn pc(&self) -> Option<Label> {
        match self {
            State::Running { pc, .. } => Some(*pc),
            State::Error { .. } => None,
        }
    }

    pub fn env(&self) -> &Store {
        match self {
            State::Running { env, .. } | State::Error { env } => env,
        }
    }

    pub fn is_error(&self) -> bool {
        matches!(self, State::Error { .. })
    }
}

impl fmt::Display for State {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            State::Running { pc, .. } => write!(f, "(pc {pc}")?,
            State::Error { .. } => write!(f, "(error")?,
        }
        for (v, x) in self.env() {
            write!(f, ", {v}={x}")?;
        }
        write!(f, ")")
    }
}

/// Evaluate a program expression in a concrete store.
pub fn eval_expr(e: &Expr, env: &Store) -> Result<Value, EvalError> {
    e.eval_with(&|v: &Var| env.get(v).cloned())
}

fn eval_label(p: &Program, e: &Expr, env: &Store) -> Option<Label> {
    eval_expr(e, env)
        .ok()
        .and_then(|v| v.as_word())
        .filter(|w| w.width() == p.label_width())
        .map(|w| w.value())
}

/// One transition. Total: evaluation failures (only possible for stores that
/// do not cover the program's variables) and unmapped labels yield `Error`.
pub fn step(p: &Program, s: &State) -> State {
    let (pc, env) = match s {
        State::Error { .. } => return s.clone(),
        State::Running { pc, env } => (*pc, env),
    };
    let fail = || State::Error { env: env.clone() };
    let Some(stmt) = p.stmt(pc) else {
        return fail();
    };
    match stmt {
        Stmt::Assign(x, e) => match eval_expr(e, env) {
            Ok(v) => {
                let mut env = env.clone();
                env.insert(x.clone(), v);
                State::Running {
                    pc: p.next_label(pc),
                    env,
                }
            }
            Err(_) => fail(),
        },
        Stmt::Assert(e) => match eval_expr(e, env) {
            Ok(v) if v.is_true() => State::Running {
                pc: p.next_label(pc),
                env: env.clone(),
            },
            _ => fail(),
        },
        Stmt::Jmp(t) => match eval_label(p, t, env) {
            Some(l) => State::Running {
                pc: l,
                env: env.clone(),
            },
            None => fail(),
        },
        Stmt::CJmp(c, t, f) => {
            let target = match eval_expr(c, env) {
                Ok(v) if v.is_true() => t,
                Ok(_) => f,
                Err(_) => return fail(),
            };
            match eval_label(p, target, env) {
                Some(l) => State::Running {
                    pc: l,
                    env: env.clone(),
                },
                None => fail(),
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum RunError {
    #[error("start state is not inside the fragment")]
    NotInFragment,
    #[error("fragment not exited within {max_steps} steps")]
    Truncated { max_steps: usize, trace: Vec<State> },
}

/// Run while the current state is running inside `labels`. The returned trace
/// starts with `s` and ends with the first state outside the fragment (or the
/// error state).
pub fn run_in_fragment(
    p: &Program,
    s: &State,
    labels: &BTreeSet<Label>,
    max_steps: usize,
) -> Result<Vec<State>, RunError> {
    match s.pc() {
        Some(pc) if labels.contains(&pc) => {}
        _ => return Err(RunError::NotInFragment),
    }
    let mut trace = vec![s.clone()];
    loop {
        let cur = trace.last().expect("trace is nonempty");
        match cur.pc() {
            Some(pc) if labels.contains(&pc) => {}
            _ => return Ok(trace),
        }
        if trace.len() > max_steps {
            return Err(RunError::Truncated { max_steps, trace });
        }
        let next = step(p, cur);
        trace.push(next);
    }
}
