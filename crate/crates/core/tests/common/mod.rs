//! Random generators and scripted derivations shared by the integration
//! tests.
#![allow(dead_code)]

pub mod modexp;
pub mod negative;

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::Rng;
use symexec_core::engine::{explore, ExploreOptions, MergePolicy};
use symexec_core::il::{
    Atom, BinOp, Expr, Label, Program, ProgramParts, Stmt, Store, Term, Type, Value, Var,
};
use symexec_core::kernel::{Certificate, Kernel, ProgressStructure, Record, RuleArgs, Violation};
use symexec_core::solver::random_value;
use symexec_core::sym::{initial_store, PathCond, SymExpr, SymState, Symbol};

/// Leaves of a generated term.
pub trait Leaf: Clone {
    fn leaf_ty(&self) -> Type;
}

impl Leaf for Var {
    fn leaf_ty(&self) -> Type {
        self.ty()
    }
}

impl Leaf for Symbol {
    fn leaf_ty(&self) -> Type {
        self.ty()
    }
}

fn literal<A>(rng: &mut impl Rng, w: u32) -> Term<A> {
    let Value::Word(v) = random_value(rng, Type::Word(w)) else {
        unreachable!()
    };
    Term::Const(Value::Word(v))
}

/// A random well-typed term of type `ty` over `leaves`. Memory leaves must
/// exist for every memory type requested.
pub fn term<A: Leaf>(rng: &mut impl Rng, leaves: &[A], ty: Type, depth: u32) -> Term<A> {
    let fitting: Vec<&A> = leaves.iter().filter(|l| l.leaf_ty() == ty).collect();
    if let Type::Mem { addr, val } = ty {
        let base = fitting.choose(rng).expect("memory leaf of the requested type");
        let mut m = Term::atom((*base).clone());
        if depth > 0 {
            for _ in 0..rng.gen_range(0..3) {
                let a = term(rng, leaves, Type::Word(addr), depth - 1);
                let v = term(rng, leaves, Type::Word(val), depth - 1);
                m = Term::store(m, a, v);
            }
        }
        return m;
    }
    let w = ty.word_width().unwrap();
    if depth == 0 || rng.gen_bool(0.25) {
        return if !fitting.is_empty() && rng.gen_bool(0.6) {
            Term::atom((*fitting.choose(rng).unwrap()).clone())
        } else {
            literal(rng, w)
        };
    }
    let sub = |rng: &mut _, t| term(rng, leaves, t, depth - 1);
    let mems: Vec<Type> = leaves
        .iter()
        .map(Leaf::leaf_ty)
        .filter(|t| matches!(t, Type::Mem { val, .. } if *val == w))
        .collect();
    match rng.gen_range(0..10) {
        0 => Term::not(sub(rng, ty)),
        1 => {
            let c = sub(rng, Type::BOOL);
            Term::ite(c, sub(rng, ty), sub(rng, ty))
        }
        2 if !mems.is_empty() => {
            let mt = *mems.choose(rng).unwrap();
            let Type::Mem { addr, .. } = mt else { unreachable!() };
            let m = term(rng, leaves, mt, depth - 1);
            Term::load(m, sub(rng, Type::Word(addr)))
        }
        3 | 4 if w == 1 => {
            let ops = [BinOp::Eq, BinOp::Neq, BinOp::Ult, BinOp::Ule, BinOp::Slt, BinOp::Sle];
            let op = *ops.choose(rng).unwrap();
            let ow = *[1u32, 8, 8, 32].choose(rng).unwrap();
            if leaves.iter().all(|l| l.leaf_ty() != Type::Word(ow)) && ow != 1 {
                return Term::bin(op, sub(rng, ty), sub(rng, ty));
            }
            Term::bin(op, sub(rng, Type::Word(ow)), sub(rng, Type::Word(ow)))
        }
        _ => {
            let ops: Vec<BinOp> = BinOp::ALL.into_iter().filter(|o| !o.is_predicate()).collect();
            let op = *ops.choose(rng).unwrap();
            Term::bin(op, sub(rng, ty), sub(rng, ty))
        }
    }
}

pub fn random_store(rng: &mut impl Rng, vars: &[Var]) -> Store {
    vars.iter().map(|v| (v.clone(), random_value(rng, v.ty()))).collect()
}

/// Variables of the random programs: small words, a flag and a tiny memory.
pub fn small_vars() -> Vec<Var> {
    vec![
        Var::new("a", Type::Word(8)),
        Var::new("b", Type::Word(8)),
        Var::new("f", Type::BOOL),
        Var::new("M", Type::Mem { addr: 8, val: 8 }),
    ]
}

/// A random program over [`small_vars`] with 8-bit labels `1..=n`, exit
/// `n + 1`, and forward jumps only, so every run terminates.
pub fn small_program(rng: &mut impl Rng, n: u64) -> Program {
    small_program_over(rng, n, &small_vars())
}

/// Like [`small_program`] over the given variables, which must include a
/// word variable.
pub fn small_program_over(rng: &mut impl Rng, n: u64, vars: &[Var]) -> Program {
    let words: Vec<&Var> = vars.iter().filter(|v| !v.ty().is_mem()).collect();
    let mems: Vec<&Var> = vars.iter().filter(|v| v.ty().is_mem()).collect();
    let mut parts = ProgramParts::new("random");
    parts.label_width = 8;
    parts.entry = 1;
    parts.exits.insert(n + 1);
    for v in vars {
        parts.decls.insert(v.name().to_string(), v.ty());
    }
    for l in 1..=n {
        let target = |rng: &mut dyn rand::RngCore| -> Expr {
            Term::word(8, rng.gen_range(l + 1..=n + 1))
        };
        let stmt = match rng.gen_range(0..10) {
            0..=4 => {
                let v = if !mems.is_empty() && rng.gen_bool(0.2) {
                    (*mems.choose(rng).unwrap()).clone()
                } else {
                    (*words.choose(rng).unwrap()).clone()
                };
                Stmt::Assign(v.clone(), term(rng, vars, v.ty(), 2))
            }
            5 => Stmt::Assert(term(rng, vars, Type::BOOL, 2)),
            6 => {
                if rng.gen_bool(0.5) {
                    Stmt::Jmp(target(rng))
                } else {
                    let c = term(rng, vars, Type::BOOL, 1);
                    Stmt::Jmp(Term::ite(c, target(rng), target(rng)))
                }
            }
            _ => {
                let c = term(rng, vars, Type::BOOL, 2);
                Stmt::CJmp(c, target(rng), target(rng))
            }
        };
        parts.stmts.insert(l, stmt);
    }
    parts.check().expect("generated program is well-typed")
}

/// Word symbols for formula generation with the given widths.
pub fn word_symbols(widths: &[u32]) -> Vec<Symbol> {
    widths
        .iter()
        .enumerate()
        .map(|(i, w)| Symbol::new(format!("x{i}"), Type::Word(*w)))
        .collect()
}

/// A random boolean formula over `syms`.
pub fn formula(rng: &mut impl Rng, syms: &[Symbol], depth: u32) -> SymExpr {
    term(rng, syms, Type::BOOL, depth)
}

/// A kernel-derived structure for a random small program: exploration from
/// label 1 under a random precondition, followed by a few random rule
/// applications. `None` when the backend cannot decide a query.
pub fn random_structure(k: &Kernel, rng: &mut impl Rng) -> Option<ProgressStructure> {
    let p = k.program();
    let n = p.labels().len() as u64;
    let d0 = initial_store(p.vars());
    let syms: Vec<Symbol> = p
        .vars()
        .filter(|v| !v.ty().is_mem())
        .map(|v| Symbol::initial(&v))
        .collect();
    let path = if rng.gen_bool(0.5) {
        PathCond::top().and(formula(rng, &syms, 2))
    } else {
        PathCond::top()
    };
    let start = SymState::running(1, d0, path);
    let labels: BTreeSet<Label> = (1..=n).collect();
    let mut opts = ExploreOptions {
        merge_policy: [MergePolicy::None, MergePolicy::JoinPoints, MergePolicy::Aggressive]
            .choose(rng)
            .unwrap()
            .clone(),
        ..ExploreOptions::default()
    };
    if rng.gen_bool(0.3) {
        opts.forget_vars.insert(p.var("a").unwrap());
    }
    let mut ps = explore(k, &start, &labels, &opts).ok()?.structure;
    for _ in 0..rng.gen_range(0..3) {
        let next = match (rng.gen_range(0..3), ps.targets().choose(rng).cloned()) {
            (0, Some(t)) => k.case(&ps, &t, &formula(rng, &syms, 1)),
            (1, Some(t)) => k.consequence(&ps, ps.source(), &t, &t.with_path(PathCond::top())),
            _ => {
                let mut wider = ps.labels().clone();
                wider.insert(rng.gen_range(1..=n + 1));
                k.widen(&ps, &wider)
            }
        };
        match next {
            Ok(next) => ps = next,
            Err(e) if matches!(e.violation, Violation::NotWeaker(_)) => {}
            Err(_) => return None,
        }
    }
    Some(ps)
}

/// Every byte offset of `line` that lies inside the serialization of one of
/// the recorded states.
pub fn state_spans(rec: &Record, line: &str) -> Vec<std::ops::Range<usize>> {
    let states: Vec<&SymState> = match &rec.args {
        RuleArgs::Symbstep { source, .. } => vec![source],
        RuleArgs::Case { target, .. }
        | RuleArgs::Infeasible { target, .. }
        | RuleArgs::Simplify { target, .. }
        | RuleArgs::Transfer { target, .. } => vec![target],
        RuleArgs::Consequence {
            source,
            target,
            new_target,
            ..
        } => vec![source, target, new_target],
        _ => vec![],
    };
    states
        .into_iter()
        .filter_map(|s| {
            let text = serde_json::to_string(s).unwrap();
            line.find(&text).map(|i| i..i + text.len())
        })
        .collect()
}

/// Replace byte `pos` of the certificate text by `by` and report whether
/// the change is caught: unparsable, rejected on replay, or replaying to a
/// different structure.
pub fn mutation_detected(
    text: &str,
    pos: usize,
    by: u8,
    expected: &ProgressStructure,
    kernel: impl Fn() -> Kernel,
) -> bool {
    let mut bytes = text.as_bytes().to_vec();
    assert_ne!(bytes[pos], by, "a mutation changes the byte");
    bytes[pos] = by;
    let Ok(text) = String::from_utf8(bytes) else {
        return true;
    };
    let Ok(cert) = Certificate::from_jsonl(&text) else {
        return true;
    };
    match kernel().replay(&cert) {
        Err(_) => true,
        Ok(ps) => ps != *expected,
    }
}

/// Up to `per_record` single-byte mutations inside recorded states of a
/// certificate; returns (tried, detected).
pub fn mutate_states(
    cert: &Certificate,
    expected: &ProgressStructure,
    rng: &mut impl Rng,
    per_record: usize,
    kernel: impl Fn() -> Kernel,
) -> (usize, usize) {
    let text = cert.to_jsonl();
    let mut offset = text.find('\n').unwrap() + 1;
    let (mut tried, mut detected) = (0, 0);
    for (rec, line) in cert.records().iter().zip(text[offset..].lines()) {
        let spans = state_spans(rec, line);
        for _ in 0..per_record {
            let Some(span) = spans.choose(rng) else { break };
            let pos = offset + rng.gen_range(span.clone());
            let mut by = rng.gen_range(0x20u8..0x7f);
            if by == text.as_bytes()[pos] {
                by = if by == b'0' { b'1' } else { b'0' };
            }
            tried += 1;
            if mutation_detected(&text, pos, by, expected, &kernel) {
                detected += 1;
            }
        }
        offset += line.len() + 1;
    }
    (tried, detected)
}
