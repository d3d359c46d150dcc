//! Pre/postcondition contracts checked against progress structures.
//!
//! A contract `{P} l ↦ L̄ {Q}` says that every run from a `P`-state at `l`
//! leaves the fragment `L` after at least one step in a state satisfying
//! `Q`. A sound structure whose source is built from `P` entails it when
//! every target is outside `L` and its path implies `Q` over its store.

use std::collections::BTreeSet;
use std::fmt;

use thiserror::Error;

use crate::engine::{explore, AnalysisReport, EngineError, ExploreOptions};
use crate::il::{Atom, Expr, Label, Type, Typing};
use crate::kernel::{Kernel, ProgressStructure};
use crate::solver::Validity;
use crate::sym::{initial_store, sym_eval, PathCond, SymError, SymState};
use crate::text::{parse_expr, ParseError};

#[derive(Debug, Error)]
pub enum ContractError {
    #[error("type error: {0}")]
    Type(String),
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("line {line}: {source}")]
    Expr {
        line: usize,
        #[source]
        source: ParseError,
    },
    #[error("line {0}: two-state postconditions are out of scope; `old(...)` is not supported")]
    Relational(usize),
    #[error("missing `{0}` line")]
    Missing(&'static str),
    #[error("structure source is not built from the contract's precondition at its entry")]
    SourceMismatch,
    #[error("structure explores labels outside the contract's fragment")]
    FragmentMismatch,
    #[error(transparent)]
    Sym(#[from] SymError),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Contract {
    pub pre: Expr,
    pub entry: Label,
    pub fragment: BTreeSet<Label>,
    pub post: Expr,
}

/// Parse label ranges such as `1-14,20`.
pub fn parse_label_ranges(text: &str) -> Result<BTreeSet<Label>, String> {
    let mut out = BTreeSet::new();
    for part in text.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let num = |s: &str| {
            s.trim()
                .parse::<Label>()
                .map_err(|_| format!("bad label `{}`", s.trim()))
        };
        match part.split_once('-') {
            Some((a, b)) => {
                let (a, b) = (num(a)?, num(b)?);
                if a > b {
                    return Err(format!("empty range `{part}`"));
                }
                out.extend(a..=b);
            }
            None => {
                out.insert(num(part)?);
            }
        }
    }
    if out.is_empty() {
        return Err("no labels".into());
    }
    Ok(out)
}

/// Check that `e` is a condition over declared variables.
pub fn check_condition(e: &Expr, typing: &Typing) -> Result<(), ContractError> {
    for v in e.atoms() {
        match typing.get(v.name()) {
            Some(t) if *t == v.ty() => {}
            Some(t) => {
                return Err(ContractError::Type(format!("{v} is declared as {t}")));
            }
            None => return Err(ContractError::Type(format!("undeclared variable {v}"))),
        }
    }
    match e.type_of() {
        Ok(Type::Word(1)) => Ok(()),
        Ok(t) => Err(ContractError::Type(format!("condition has type {t}, expected w1"))),
        Err(err) => Err(ContractError::Type(err.0)),
    }
}

/// Parse a contract file: one `pre`, `entry`, `fragment` and `post` line
/// each, with `//` comments.
pub fn parse_contract(text: &str, typing: &Typing) -> Result<Contract, ContractError> {
    let (mut pre, mut entry, mut fragment, mut post) = (None, None, None, None);
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let body = raw.split("//").next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let (key, rest) = body.split_once(char::is_whitespace).unwrap_or((body, ""));
        let rest = rest.trim();
        let cond = |rest: &str| {
            if rest.contains("old(") || rest.contains("old (") {
                return Err(ContractError::Relational(line));
            }
            let e = parse_expr(rest, typing).map_err(|source| ContractError::Expr { line, source })?;
            check_condition(&e, typing)?;
            Ok(e)
        };
        let syntax = |msg: String| ContractError::Syntax { line, msg };
        let slot_taken = |taken: bool| {
            if taken {
                Err(syntax(format!("duplicate `{key}`")))
            } else {
                Ok(())
            }
        };
        match key {
            "pre" => {
                slot_taken(pre.is_some())?;
                pre = Some(cond(rest)?);
            }
            "post" => {
                slot_taken(post.is_some())?;
                post = Some(cond(rest)?);
            }
            "entry" => {
                slot_taken(entry.is_some())?;
                entry = Some(
                    rest.parse::<Label>()
                        .map_err(|_| syntax(format!("bad label `{rest}`")))?,
                );
            }
            "fragment" => {
                slot_taken(fragment.is_some())?;
                fragment = Some(parse_label_ranges(rest).map_err(syntax)?);
            }
            other => return Err(syntax(format!("unknown key `{other}`"))),
        }
    }
    Ok(Contract {
        pre: pre.ok_or(ContractError::Missing("pre"))?,
        entry: entry.ok_or(ContractError::Missing("entry"))?,
        fragment: fragment.ok_or(ContractError::Missing("fragment"))?,
        post: post.ok_or(ContractError::Missing("post"))?,
    })
}

/// `(l, δ0, sym_eval(P, δ0))`: every concrete `P`-state at `l` matches it
/// under the identity interpretation.
pub fn source_from_precondition(
    entry: Label,
    pre: &Expr,
    typing: &Typing,
) -> Result<SymState, ContractError> {
    check_condition(pre, typing)?;
    let vars = typing.iter().map(|(n, t)| crate::il::Var::new(n, *t));
    let d0 = initial_store(vars);
    let phi = sym_eval(pre, &d0)?;
    let path = if phi.is_true() {
        PathCond::top()
    } else {
        PathCond::top().and(phi)
    };
    Ok(SymState::running(entry, d0, path))
}

/// Which of the three entailment conditions failed.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Verdict {
    Holds,
    Failed {
        condition: u8,
        target: Option<SymState>,
        witness: String,
    },
}

impl Verdict {
    pub fn holds(&self) -> bool {
        matches!(self, Verdict::Holds)
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Verdict::Holds => write!(f, "holds"),
            Verdict::Failed {
                condition, witness, ..
            } => write!(f, "failed condition {condition}: {witness}"),
        }
    }
}

/// Check that `ps` entails the contract. Condition 1 holds because the
/// source is built from the precondition; condition 3 is checked before
/// condition 2 for each target. Failed targets never satisfy condition 3.
pub fn check_contract(
    k: &Kernel,
    ps: &ProgressStructure,
    c: &Contract,
) -> Result<Verdict, ContractError> {
    let typing = k.program().typing();
    if ps.source() != &source_from_precondition(c.entry, &c.pre, typing)? {
        return Err(ContractError::SourceMismatch);
    }
    if !ps.labels().is_subset(&c.fragment) {
        return Err(ContractError::FragmentMismatch);
    }
    for t in ps.targets() {
        let failed = |condition, witness: String| Verdict::Failed {
            condition,
            target: Some(t.clone()),
            witness,
        };
        let (pc, store) = match (t.pc(), t.store()) {
            (Some(pc), Some(store)) => (pc, store),
            _ => return Ok(failed(3, "a path fails an assertion".into())),
        };
        if c.fragment.contains(&pc) {
            return Ok(failed(3, format!("a path stops at {pc}, inside the fragment")));
        }
        let goal = sym_eval(&c.post, store)?;
        match k.solver().check_valid(t.path().conjuncts(), &goal) {
            Validity::Valid => {}
            Validity::Invalid(model) => {
                let shown: Vec<String> = model.iter().map(|(s, v)| format!("{s} = {v}")).collect();
                return Ok(failed(2, format!("postcondition fails at {pc} when {}", shown.join(", "))));
            }
            Validity::Unknown(why) => return Ok(failed(2, format!("unknown: {why}"))),
        }
    }
    Ok(Verdict::Holds)
}

/// Explore the contract's fragment from its precondition and check the
/// result.
pub fn prove_contract(
    k: &Kernel,
    c: &Contract,
    opts: &ExploreOptions,
) -> Result<(Verdict, AnalysisReport), ContractError> {
    let source = source_from_precondition(c.entry, &c.pre, k.program().typing())?;
    let report = explore(k, &source, &c.fragment, opts)?;
    let verdict = check_contract(k, &report.structure, c)?;
    Ok((verdict, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::il::Term;

    fn typing() -> Typing {
        Typing::from([("x".to_string(), Type::Word(8)), ("M".to_string(), Type::Mem { addr: 8, val: 8 })])
    }

    #[test]
    fn ranges() {
        assert_eq!(parse_label_ranges("1-3, 7").unwrap(), BTreeSet::from([1, 2, 3, 7]));
        assert!(parse_label_ranges("3-1").is_err());
        assert!(parse_label_ranges("").is_err());
        assert!(parse_label_ranges("a").is_err());
    }

    #[test]
    fn contract_file() {
        let text = "// doc\npre x < 4\nentry 1\nfragment 1-3\npost x == 0 // end\n";
        let c = parse_contract(text, &typing()).unwrap();
        assert_eq!(c.entry, 1);
        assert_eq!(c.fragment, BTreeSet::from([1, 2, 3]));
    }

    #[test]
    fn contract_file_errors() {
        let t = typing();
        let missing = parse_contract("pre 1w1\nentry 1\nfragment 1\n", &t);
        assert!(matches!(missing, Err(ContractError::Missing("post"))));
        let rel = parse_contract("pre 1w1\nentry 1\nfragment 1\npost x == old(x)\n", &t);
        assert!(matches!(rel, Err(ContractError::Relational(4))));
        let dup = parse_contract("entry 1\nentry 2\n", &t);
        assert!(matches!(dup, Err(ContractError::Syntax { line: 2, .. })));
        let word = parse_contract("pre x\n", &t);
        assert!(matches!(word, Err(ContractError::Type(_))));
    }

    #[test]
    fn trivial_precondition_gives_the_empty_path() {
        let s = source_from_precondition(3, &Term::bool(true), &typing()).unwrap();
        assert_eq!(s.pc(), Some(3));
        assert_eq!(s.path(), &PathCond::top());
    }

    #[test]
    fn undeclared_variable_is_a_type_error() {
        let y = crate::il::Var::new("y", Type::Word(8));
        let e = Term::bin(crate::il::BinOp::Eq, Term::atom(y), Term::word(8, 0));
        assert!(matches!(
            source_from_precondition(1, &e, &typing()),
            Err(ContractError::Type(_))
        ));
    }
}
