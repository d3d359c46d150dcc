//! The hand-scripted ModExp derivation: function entry, a generic loop
//! body instantiated eight times, and the loop exit.

use std::collections::BTreeSet;

use symexec_core::engine::{forget_subterm, forget_value, replace_value, simplify_memory};
use symexec_core::il::{BinOp, Program, Stmt, Term, Type, Var};
use symexec_core::kernel::{Kernel, ProgressStructure};
use symexec_core::solver::Solver;
use symexec_core::sym::{initial_store, sym_eval, PathCond, SymExpr, SymState, SymStore, Symbol};
use symexec_core::text::parse_program;

pub const SOURCE: &str = include_str!("../../benchmarks/modexp.bir");

pub fn program() -> Program {
    parse_program(SOURCE).unwrap()
}

pub struct Names {
    pub sp: Var,
    pub r0: Var,
    pub r1: Var,
    pub r3: Var,
    pub m: Var,
}

impl Names {
    pub fn new(p: &Program) -> Self {
        let v = |n| p.var(n).unwrap();
        Names {
            sp: v("SP"),
            r0: v("R0"),
            r1: v("R1"),
            r3: v("R3"),
            m: v("M"),
        }
    }
}

pub fn w32(n: &str) -> Symbol {
    Symbol::new(n, Type::Word(32))
}

fn at(s: &Symbol) -> SymExpr {
    Term::atom(s.clone())
}

pub fn initial(x: &Var) -> SymExpr {
    Term::atom(Symbol::initial(x))
}

/// The precondition evaluated in the initial store.
pub fn phi0(p: &Program) -> SymExpr {
    let Stmt::Assert(e) = p.stmt(1).unwrap() else {
        panic!("line 1 is the stack assertion")
    };
    sym_eval(e, &initial_store(p.vars())).unwrap()
}

pub fn below_sp(n: &Names) -> SymExpr {
    Term::bin(BinOp::Sub, initial(&n.sp), Term::word(32, 4))
}

/// `st(st(α_M, α_SP, α_R3), α_SP - 4, v)`
pub fn frame(n: &Names, v: SymExpr) -> SymExpr {
    let saved = Term::store(initial(&n.m), initial(&n.sp), initial(&n.r3));
    Term::store(saved, below_sp(n), v)
}

/// Loop-head store with the counter and the accumulator cell given.
fn loop_store(p: &Program, n: &Names, counter: SymExpr, acc: SymExpr) -> SymStore {
    let mut d = initial_store(p.vars());
    d.insert(n.sp.clone(), below_sp(n));
    d.insert(n.r3.clone(), counter);
    d.insert(n.m.clone(), frame(n, acc));
    d
}

fn only_target(ps: &ProgressStructure) -> SymState {
    assert_eq!(ps.targets().len(), 1, "{ps}");
    ps.targets()[0].clone()
}

/// Drop every conjunct of a target's path not in `keep`.
fn weaken_to(k: &Kernel, ps: &ProgressStructure, t: &SymState, keep: &PathCond) -> ProgressStructure {
    let new = t.with_path(keep.clone());
    k.consequence(ps, &ps.source().clone(), t, &new).unwrap()
}

/// Entry through the first loop guard: `{1..6}, (1, δ₀, φ₀) ↦ {(7, δ₁, φ₀)}`.
pub fn part1(k: &Kernel) -> ProgressStructure {
    let p = k.program();
    let phi = PathCond::top().and(phi0(p));
    let s0 = SymState::running(1, initial_store(p.vars()), phi);
    let a = k.inf_branch(&s0, true).unwrap();
    let b = k.symbstep_n(&only_target(&a), 4).unwrap();
    let ab = k.sequence(&a, &b).unwrap();
    let c = k.inf_branch(&only_target(&ab), false).unwrap();
    k.sequence(&ab, &c).unwrap()
}

/// Generic loop body `{7..11}` from counter `α_2` and accumulator `α_1`.
pub fn part2(k: &Kernel, n: &Names) -> ProgressStructure {
    let p = k.program();
    let phi = PathCond::top().and(phi0(p));
    let src = SymState::running(7, loop_store(p, n, at(&w32("α_2")), at(&w32("α_1"))), phi.clone());
    let s7 = k.symbstep(&src, &BTreeSet::from([7])).unwrap();
    let s8 = k.symbstep(&only_target(&s7), &BTreeSet::from([8])).unwrap();
    let mut ps = k.sequence(&s7, &s8).unwrap();
    let (skip, mult) = (s8.targets()[0].clone(), s8.targets()[1].clone());
    assert_eq!((skip.pc(), mult.pc()), (Some(10), Some(9)));

    // Multiplying branch: store the product, drop the overwritten store,
    // then forget the product.
    let s9 = k.symbstep(&mult, &BTreeSet::from([9])).unwrap();
    ps = k.sequence(&ps, &s9).unwrap();
    let t = only_target(&s9);
    let (ps2, t) = simplify_memory(k, &ps, &t, &n.m).unwrap();
    let Some(Term::Store(_, _, product)) = t.store().unwrap().get(&n.m).cloned() else {
        panic!("memory ends in a store")
    };
    let (ps2, t, acc) = forget_subterm(k, &ps2, &t, &n.m, &product).unwrap();
    let ps2 = weaken_to(k, &ps2, &t, &phi);

    // Other branch: generalize the accumulator to the same symbol.
    let mut d = skip.store().unwrap().clone();
    d.insert(n.m.clone(), frame(n, at(&acc)));
    let def = Term::bin(BinOp::Eq, at(&acc), at(&w32("α_1")));
    let ps3 = k
        .simplify(&ps2, &skip, &n.m, &frame(n, at(&acc)), &acc, &at(&w32("α_1")))
        .unwrap();
    let generalized = SymState::running(10, d.clone(), skip.path().and(def));
    let merged = SymState::running(10, d, phi.clone());
    ps = k
        .consequence(&ps3, &ps3.source().clone(), &generalized, &merged)
        .unwrap();
    assert_eq!(ps.targets().len(), 1, "branches merged: {ps}");

    let tail = k.symbstep_n(&merged, 2).unwrap();
    ps = k.sequence(&ps, &tail).unwrap();
    let t = only_target(&ps);
    let (ps4, _, _) = forget_value(k, &ps, &t, &n.r1).unwrap();
    ps4
}

/// Loop exit `{6, 12, 13, 14}` from counter 0 and accumulator `α_1`.
pub fn part3(k: &Kernel, n: &Names) -> ProgressStructure {
    let p = k.program();
    let phi = PathCond::top().and(phi0(p));
    let src = SymState::running(6, loop_store(p, n, Term::word(32, 0), at(&w32("α_1"))), phi);
    let mut ps = k.inf_branch(&src, true).unwrap();
    let s12 = k.symbstep(&only_target(&ps), &BTreeSet::from([12])).unwrap();
    ps = k.sequence(&ps, &s12).unwrap();
    let t = only_target(&ps);
    let (ps2, t) = simplify_memory(k, &ps, &t, &n.r0).unwrap();
    let s13 = k.symbstep_n(&t, 2).unwrap();
    ps = k.sequence(&ps2, &s13).unwrap();
    let t = only_target(&ps);
    let (ps2, t) = replace_value(k, &ps, &t, &n.sp, &initial(&n.sp)).unwrap();
    let (ps3, _) = simplify_memory(k, &ps2, &t, &n.r3).unwrap();
    ps3
}

/// Compose the parts with eight instantiations of the loop body.
pub fn derive(k: &Kernel) -> ProgressStructure {
    let n = Names::new(k.program());
    let entry = part1(k);
    let body = part2(k, &n);
    let exit = part3(k, &n);
    let free = body.free_symbols();
    assert_eq!(free.len(), 2, "accumulator and forgotten base: {body}");
    let (acc, base) = {
        let t = only_target(&body);
        let st = t.store().unwrap();
        let Term::Atom(b) = st[&n.r1].clone() else {
            panic!()
        };
        let a = free.iter().find(|s| **s != b).unwrap().clone();
        (a, b)
    };
    let (alpha_a, alpha_b) = (w32("α_a"), w32("α_b"));
    let mut side = entry;
    for i in 0..8u64 {
        let mut body_i = k.subst(&body, &w32("α_1"), &if i == 0 { Term::word(32, 1) } else { at(&alpha_a) }).unwrap();
        body_i = k.subst(&body_i, &w32("α_2"), &Term::word(32, 8 - i)).unwrap();
        if i > 0 {
            body_i = k.subst(&body_i, &Symbol::initial(&n.r1), &at(&alpha_b)).unwrap();
        }
        if i > 0 {
            let guard = k.inf_branch(&only_target(&side), false).unwrap();
            side = k.sequence(&side, &guard).unwrap();
        }
        side = k.sequence(&side, &body_i).unwrap();
        side = k.rename(&side, &acc, &alpha_a).unwrap();
        side = k.rename(&side, &base, &alpha_b).unwrap();
    }
    let mut exit_i = k.subst(&exit, &w32("α_1"), &at(&alpha_a)).unwrap();
    exit_i = k.subst(&exit_i, &Symbol::initial(&n.r1), &at(&alpha_b)).unwrap();
    k.sequence(&side, &exit_i).unwrap()
}

/// The final state displayed for the whole function.
pub fn expected_final(p: &Program) -> SymState {
    let n = Names::new(p);
    let mut d = initial_store(p.vars());
    d.insert(n.sp.clone(), initial(&n.sp));
    d.insert(n.r0.clone(), at(&w32("α_a")));
    d.insert(n.r1.clone(), at(&w32("α_b")));
    d.insert(n.r3.clone(), initial(&n.r3));
    d.insert(n.m.clone(), frame(&n, at(&w32("α_a"))));
    SymState::running(15, d, PathCond::top().and(phi0(p)))
}

pub fn kernel() -> Kernel {
    Kernel::new(program(), Solver::external())
}
