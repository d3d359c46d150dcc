//! Satisfiability and validity of path conditions.
//!
//! Every query first goes through a sound front end: constant folding and
//! normalization, detection of trivially false or contradictory conjuncts,
//! elimination of definitional equations `α == t`, and splitting into
//! independent components. What remains is handed to a backend. Models
//! returned to callers are always re-evaluated against the original query.

mod brute;
mod smtlib;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use thiserror::Error;

use crate::il::{Atom, BinOp, Term, Type, Value};
use crate::sym::rewrite::normalize;
use crate::sym::{interp_expr, Interpretation, SymExpr, Symbol};

pub use smtlib::{parse_sexprs, Sexpr};

/// Environment variable overriding the external solver command line.
pub const SOLVER_ENV: &str = "SYMEXEC_SOLVER";
pub const DEFAULT_SOLVER_CMD: &str = "z3 -in";

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Backend {
    /// Exhaustive enumeration; an oracle for small widths.
    Brute,
    /// SMT-LIB2 process, e.g. `z3 -in`.
    External { command: Vec<String> },
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SolverConfig {
    pub backend: Backend,
    /// Maximum number of enumerated bits per independent component.
    pub brute_width_budget: u32,
    pub timeout_ms: u64,
    pub model_enum_cap: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            backend: Backend::Brute,
            brute_width_budget: 20,
            timeout_ms: 10_000,
            model_enum_cap: 64,
        }
    }
}

impl SolverConfig {
    pub fn brute() -> Self {
        SolverConfig::default()
    }

    /// External backend with the command from [`SOLVER_ENV`] or `z3 -in`.
    pub fn external() -> Self {
        let cmd = std::env::var(SOLVER_ENV).unwrap_or_else(|_| DEFAULT_SOLVER_CMD.to_string());
        SolverConfig::external_command(&cmd)
    }

    pub fn external_command(cmd: &str) -> Self {
        SolverConfig {
            backend: Backend::External {
                command: cmd.split_whitespace().map(str::to_string).collect(),
            },
            ..SolverConfig::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum SolverResult {
    Sat(Interpretation),
    Unsat,
    Unknown(String),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Validity {
    Valid,
    /// Counter-model of the hypotheses and the negated goal.
    Invalid(Interpretation),
    Unknown(String),
}

impl Validity {
    pub fn is_valid(&self) -> bool {
        matches!(self, Validity::Valid)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum EnumError {
    #[error("more than {cap} models")]
    CapExceeded { cap: usize },
    #[error("solver could not decide: {0}")]
    Unknown(String),
}

/// Result of a backend search on one component.
pub(crate) enum Found {
    Sat(Interpretation),
    Unsat,
    Unknown(String),
}

/// Front-end output: normalized conjuncts and eliminated definitions.
struct Prepared {
    conjuncts: Vec<SymExpr>,
    /// `α := t`, in elimination order.
    defs: Vec<(Symbol, SymExpr)>,
    contradiction: bool,
}

fn flatten_and(e: &SymExpr, out: &mut Vec<SymExpr>) {
    match e {
        Term::Binary(BinOp::And, a, b) if a.type_of().ok() == Some(Type::BOOL) => {
            flatten_and(a, out);
            flatten_and(b, out);
        }
        _ => out.push(e.clone()),
    }
}

fn as_definition(c: &SymExpr) -> Option<(Symbol, SymExpr)> {
    let Term::Binary(BinOp::Eq, a, b) = c else {
        return None;
    };
    let try_side = |x: &SymExpr, t: &SymExpr| match x {
        Term::Atom(s) if !s.ty().is_mem() && !t.atoms().contains(s) => Some((s.clone(), t.clone())),
        _ => None,
    };
    try_side(a, b).or_else(|| try_side(b, a))
}

fn prepare(conj: &[SymExpr], extra: &mut [SymExpr]) -> Prepared {
    let mut cs = Vec::new();
    for c in conj {
        flatten_and(&normalize(c), &mut cs);
    }
    let mut defs = Vec::new();
    loop {
        cs.retain(|c| !c.is_true());
        let mut seen = BTreeSet::new();
        cs.retain(|c| seen.insert(c.clone()));
        if cs.iter().any(|c| c.is_false()) {
            return Prepared {
                conjuncts: cs,
                defs,
                contradiction: true,
            };
        }
        let contradictory = cs.iter().any(|c| match c {
            Term::Unary(_, inner) => seen.contains(&**inner),
            _ => false,
        });
        if contradictory {
            return Prepared {
                conjuncts: cs,
                defs,
                contradiction: true,
            };
        }
        let Some(i) = cs.iter().position(|c| as_definition(c).is_some()) else {
            break;
        };
        let (s, t) = as_definition(&cs.remove(i)).expect("checked above");
        let sub = |e: &SymExpr| normalize(&e.substitute(&|a| (*a == s).then(|| t.clone())));
        let mut next = Vec::new();
        for c in &cs {
            flatten_and(&sub(c), &mut next);
        }
        cs = next;
        for e in extra.iter_mut() {
            *e = sub(e);
        }
        defs.push((s, t));
    }
    Prepared {
        conjuncts: cs,
        defs,
        contradiction: false,
    }
}

/// Partition conjuncts into groups that share no symbols.
fn components(cs: &[SymExpr]) -> Vec<Vec<SymExpr>> {
    let mut groups: Vec<(BTreeSet<Symbol>, Vec<SymExpr>)> = Vec::new();
    for c in cs {
        let syms = c.atoms();
        let mut merged = (syms, vec![c.clone()]);
        let mut i = 0;
        while i < groups.len() {
            if groups[i].0.iter().any(|s| merged.0.contains(s)) {
                let (s, g) = groups.swap_remove(i);
                merged.0.extend(s);
                merged.1.extend(g);
            } else {
                i += 1;
            }
        }
        groups.push(merged);
    }
    groups.into_iter().map(|(_, g)| g).collect()
}

fn symbols_of(cs: &[SymExpr]) -> BTreeSet<Symbol> {
    cs.iter().flat_map(|c| c.atoms()).collect()
}

/// Extend a model to all `wanted` symbols: definitions first (reverse
/// order), then defaults.
fn complete_model(
    mut m: Interpretation,
    defs: &[(Symbol, SymExpr)],
    wanted: &BTreeSet<Symbol>,
) -> Option<Interpretation> {
    let fill = |m: &mut Interpretation, e: &SymExpr| {
        for s in e.atoms() {
            m.entry(s.clone()).or_insert_with(|| Value::zero(s.ty()));
        }
    };
    for (s, t) in defs.iter().rev() {
        fill(&mut m, t);
        let v = interp_expr(&m, t).ok()?;
        m.insert(s.clone(), v);
    }
    for s in wanted {
        m.entry(s.clone()).or_insert_with(|| Value::zero(s.ty()));
    }
    Some(m)
}

fn holds(m: &Interpretation, cs: &[SymExpr]) -> bool {
    cs.iter()
        .all(|c| matches!(interp_expr(m, c), Ok(v) if v.is_true()))
}

pub struct Solver {
    config: SolverConfig,
    queries: AtomicU64,
}

impl Solver {
    pub fn new(config: SolverConfig) -> Self {
        Solver {
            config,
            queries: AtomicU64::new(0),
        }
    }

    pub fn brute() -> Self {
        Solver::new(SolverConfig::brute())
    }

    pub fn external() -> Self {
        Solver::new(SolverConfig::external())
    }

    pub fn config(&self) -> &SolverConfig {
        &self.config
    }

    /// Number of top-level queries answered so far.
    pub fn query_count(&self) -> u64 {
        self.queries.load(Ordering::Relaxed)
    }

    fn backend_sat(&self, cs: &[SymExpr]) -> Found {
        match &self.config.backend {
            Backend::Brute => brute::sat(cs, self.config.brute_width_budget),
            Backend::External { command } => smtlib::sat(command, self.config.timeout_ms, cs),
        }
    }

    /// Solve prepared conjuncts component by component.
    fn solve_prepared(&self, cs: &[SymExpr]) -> Found {
        let mut model = Interpretation::new();
        for g in components(cs) {
            match self.backend_sat(&g) {
                Found::Sat(m) => model.extend(m),
                other => return other,
            }
        }
        Found::Sat(model)
    }

    /// Satisfiability of a conjunction. Sat models assign exactly the
    /// query's symbols and are verified before being returned.
    pub fn check_sat(&self, conj: &[SymExpr]) -> SolverResult {
        self.queries.fetch_add(1, Ordering::Relaxed);
        self.sat_inner(conj)
    }

    fn sat_inner(&self, conj: &[SymExpr]) -> SolverResult {
        let prep = prepare(conj, &mut []);
        if prep.contradiction {
            return SolverResult::Unsat;
        }
        match self.solve_prepared(&prep.conjuncts) {
            Found::Sat(m) => {
                let wanted = symbols_of(conj);
                match complete_model(m, &prep.defs, &wanted) {
                    Some(m) if holds(&m, conj) => {
                        SolverResult::Sat(m.into_iter().filter(|(s, _)| wanted.contains(s)).collect())
                    }
                    _ => SolverResult::Unknown("model failed verification".into()),
                }
            }
            Found::Unsat => SolverResult::Unsat,
            Found::Unknown(r) => SolverResult::Unknown(r),
        }
    }

    /// Whether the hypotheses entail the width-1 goal.
    pub fn check_valid(&self, hyps: &[SymExpr], goal: &SymExpr) -> Validity {
        self.queries.fetch_add(1, Ordering::Relaxed);
        let mut g = [normalize(goal)];
        if g[0].is_true() {
            return Validity::Valid;
        }
        let prep = prepare(hyps, &mut g);
        if prep.contradiction {
            return Validity::Valid;
        }
        let goal_n = normalize(&g[0]);
        let mut goal_parts = Vec::new();
        flatten_and(&goal_n, &mut goal_parts);
        if goal_parts
            .iter()
            .all(|p| p.is_true() || prep.conjuncts.contains(p))
        {
            return Validity::Valid;
        }
        let mut q = hyps.to_vec();
        q.push(Term::not(goal.clone()));
        match self.sat_inner(&q) {
            SolverResult::Unsat => Validity::Valid,
            SolverResult::Sat(m) => Validity::Invalid(m),
            SolverResult::Unknown(r) => Validity::Unknown(r),
        }
    }

    /// All values of `target` over models of `conj`, failing above `cap`.
    pub fn enumerate_models(
        &self,
        conj: &[SymExpr],
        target: &SymExpr,
        cap: usize,
    ) -> Result<BTreeSet<Value>, EnumError> {
        self.queries.fetch_add(1, Ordering::Relaxed);
        let mut t = [normalize(target)];
        let prep = prepare(conj, &mut t);
        if prep.contradiction {
            return Ok(BTreeSet::new());
        }
        let target = &t[0];
        let tsyms = target.atoms();
        // Components independent of the target only need to be satisfiable.
        let (mut linked, mut rest): (Vec<_>, Vec<_>) = (Vec::new(), Vec::new());
        for g in components(&prep.conjuncts) {
            if symbols_of(&g).iter().any(|s| tsyms.contains(s)) {
                linked.extend(g);
            } else {
                rest.push(g);
            }
        }
        for g in rest {
            match self.backend_sat(&g) {
                Found::Sat(_) => {}
                Found::Unsat => return Ok(BTreeSet::new()),
                Found::Unknown(r) => return Err(EnumError::Unknown(r)),
            }
        }
        if let Term::Const(v) = target {
            return match self.backend_sat(&linked) {
                Found::Sat(_) => Ok(BTreeSet::from([v.clone()])),
                Found::Unsat => Ok(BTreeSet::new()),
                Found::Unknown(r) => Err(EnumError::Unknown(r)),
            };
        }
        match &self.config.backend {
            Backend::Brute => brute::enumerate(&linked, target, cap, self.config.brute_width_budget),
            Backend::External { command } => {
                smtlib::enumerate(command, self.config.timeout_ms, &linked, target, cap)
            }
        }
    }

    /// A model of `conj` whose domain includes `domain`, randomized by `rng`.
    /// Random pinning constraints are tried first and relaxed on failure, so
    /// every satisfiable query yields a model.
    pub fn sample_model(
        &self,
        conj: &[SymExpr],
        domain: &BTreeSet<Symbol>,
        rng: &mut impl Rng,
    ) -> SolverResult {
        self.queries.fetch_add(1, Ordering::Relaxed);
        let mut pinned: BTreeMap<Symbol, SymExpr> = domain
            .iter()
            .filter_map(|s| {
                let w = s.ty().word_width()?;
                Some((s.clone(), Term::word(w, random_word(rng, w))))
            })
            .collect();
        loop {
            let mut q = conj.to_vec();
            q.extend(
                pinned
                    .iter()
                    .map(|(s, v)| Term::bin(BinOp::Eq, Term::atom(s.clone()), v.clone())),
            );
            match self.sat_inner(&q) {
                SolverResult::Sat(mut m) => {
                    for s in domain {
                        if !m.contains_key(s) {
                            m.insert(s.clone(), random_value(rng, s.ty()));
                        }
                    }
                    return SolverResult::Sat(m);
                }
                res if pinned.is_empty() => return res,
                _ => {
                    let keys: Vec<Symbol> = pinned.keys().cloned().collect();
                    let keep = keys.len() / 2;
                    let mut ks = keys;
                    for i in (1..ks.len()).rev() {
                        ks.swap(i, rng.gen_range(0..=i));
                    }
                    pinned.retain(|k, _| ks[..keep].contains(k));
                }
            }
        }
    }
}

/// Random word biased toward small values and edge cases.
pub fn random_word(rng: &mut impl Rng, w: u32) -> u64 {
    let m = crate::il::mask(w);
    match rng.gen_range(0..4) {
        0 => rng.gen_range(0..=m.min(16)),
        1 => m.wrapping_sub(rng.gen_range(0..=m.min(16))) & m,
        _ => rng.gen::<u64>() & m,
    }
}

pub fn random_value(rng: &mut impl Rng, ty: Type) -> Value {
    match ty {
        Type::Word(w) => Value::word(w, random_word(rng, w)),
        Type::Mem { addr, val } => {
            let mut m = crate::il::MemoryValue::new(addr, val, random_word(rng, val));
            for _ in 0..rng.gen_range(0..4) {
                m.store_in_place(random_word(rng, addr), random_word(rng, val));
            }
            Value::Mem(m)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sym(n: &str, w: u32) -> SymExpr {
        Term::atom(Symbol::new(n, Type::Word(w)))
    }

    #[test]
    fn constant_false_is_unsat() {
        let s = Solver::brute();
        let c = Term::bin(BinOp::Eq, Term::word(32, 8), Term::word(32, 0));
        assert_eq!(s.check_sat(&[c]), SolverResult::Unsat);
        assert_eq!(s.check_sat(&[]), SolverResult::Sat(Interpretation::new()));
    }

    #[test]
    fn contradiction_is_unsat() {
        let s = Solver::brute();
        let a = sym("a", 1);
        assert_eq!(s.check_sat(&[a.clone(), Term::not(a)]), SolverResult::Unsat);
    }

    #[test]
    fn definitions_are_eliminated_for_wide_words() {
        let s = Solver::brute();
        let a = sym("a", 64);
        let b = sym("b", 64);
        let c = [
            Term::bin(BinOp::Eq, a.clone(), Term::bin(BinOp::Add, b.clone(), Term::word(64, 1))),
            Term::bin(BinOp::Eq, b, Term::word(64, 1 << 40)),
        ];
        match s.check_sat(&c) {
            SolverResult::Sat(m) => {
                assert_eq!(m[&Symbol::new("a", Type::Word(64))], Value::word(64, (1 << 40) + 1))
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn enumerate_low_bit() {
        let s = Solver::brute();
        let t = Term::bin(BinOp::And, sym("a", 8), Term::word(8, 1));
        let vs = s.enumerate_models(&[], &t, 64).unwrap();
        assert_eq!(vs, BTreeSet::from([Value::word(8, 0), Value::word(8, 1)]));
        let vs = s.enumerate_models(&[Term::bool(false)], &t, 64).unwrap();
        assert!(vs.is_empty());
        let vs = s.enumerate_models(&[], &Term::word(32, 6), 64).unwrap();
        assert_eq!(vs, BTreeSet::from([Value::word(32, 6)]));
    }

    #[test]
    fn anything_entails_true() {
        let s = Solver::brute();
        assert!(s.check_valid(&[sym("a", 1)], &Term::bool(true)).is_valid());
    }
}
