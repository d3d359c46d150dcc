mod common;

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use symexec_core::engine::{
    explore, instantiate, merge_targets, simplify_memory, EngineError, ExploreOptions,
    MergePolicy,
};
use symexec_core::il::{eval_expr, step, Atom, Label, State, Stmt, Term, Type, Value, Var};
use symexec_core::kernel::{check_soundness, Kernel, Violation};
use symexec_core::solver::Solver;
use symexec_core::sym::{initial_store, PathCond, SymState, Symbol};
use symexec_core::text::parse_program;

use common::modexp::{self, frame, initial, phi0, Names};

fn modexp_start(p: &symexec_core::il::Program) -> SymState {
    SymState::running(1, initial_store(p.vars()), PathCond::top().and(phi0(p)))
}

#[test]
fn entry_exploration_stops_at_the_loop_body() {
    let k = modexp::kernel();
    let p = k.program();
    let n = Names::new(p);
    let labels: BTreeSet<Label> = (1..=6).collect();
    let report = explore(&k, &modexp_start(p), &labels, &ExploreOptions::default()).unwrap();
    let mut d1 = initial_store(p.vars());
    d1.insert(n.sp.clone(), modexp::below_sp(&n));
    d1.insert(n.r3.clone(), Term::word(32, 8));
    d1.insert(n.m.clone(), frame(&n, Term::word(32, 1)));
    let phi = PathCond::top().and(phi0(p));
    assert_eq!(report.structure.targets(), &[SymState::running(7, d1, phi)]);
    assert_eq!(report.stats.pruned, 2, "assertion failure and loop exit");
    assert_eq!(report.structure, modexp::part1(&k));
}

/// Unrolling all eight iterations, forgetting the base, merging both arms
/// of the bit test: one state leaves the function.
#[test]
fn whole_function_exploration_has_one_exit_state() {
    let k = modexp::kernel();
    let p = k.program();
    let n = Names::new(p);
    let labels: BTreeSet<Label> = (1..=14).collect();
    let opts = ExploreOptions {
        unroll_bound: 8,
        forget_vars: BTreeSet::from([n.r1.clone()]),
        ..ExploreOptions::default()
    };
    let report = explore(&k, &modexp_start(p), &labels, &opts).unwrap();
    let ps = &report.structure;
    assert_eq!(ps.targets().len(), 1, "{ps}");
    let t = &ps.targets()[0];
    let st = t.store().unwrap();
    assert_eq!(t.pc(), Some(15));
    assert_eq!(st[&n.sp], initial(&n.sp));
    assert_eq!(st[&n.r3], initial(&n.r3));
    let Term::Atom(result) = &st[&n.r0] else {
        panic!("R0 holds a symbol: {}", st[&n.r0])
    };
    assert!(ps.free_symbols().contains(result));
    assert_eq!(st[&n.m], frame(&n, Term::atom(result.clone())));
    assert!(t.path().contains(&phi0(p)));
    assert_eq!(report.stats.merges, 8);

    let fresh = Kernel::new(modexp::program(), Solver::external());
    assert_eq!(&fresh.replay(&report.certificate).unwrap(), ps);
    assert_eq!(check_soundness(&k, ps, 0..5, 1000).unwrap(), 5);
}

#[test]
fn one_path_budget_is_exhausted_by_a_branch() {
    let p = common::negative::program();
    let k = Kernel::new(p.clone(), Solver::brute());
    let s = SymState::running(1, initial_store(p.vars()), PathCond::top());
    let opts = ExploreOptions {
        max_paths: 1,
        merge_policy: MergePolicy::None,
        ..ExploreOptions::default()
    };
    match explore(&k, &s, &(1..=4).collect(), &opts) {
        Err(EngineError::BudgetExhausted { report, .. }) => {
            assert_eq!(report.structure.targets().len(), 2);
            let again = Kernel::new(p, Solver::brute()).replay(&report.certificate);
            assert_eq!(again.unwrap(), report.structure);
        }
        other => panic!("expected budget exhaustion, got {other:?}"),
    }
}

#[test]
fn start_outside_the_fragment_is_refused() {
    let p = common::negative::program();
    let k = Kernel::new(p.clone(), Solver::brute());
    let s = SymState::running(5, initial_store(p.vars()), PathCond::top());
    let r = explore(&k, &s, &(1..=4).collect(), &ExploreOptions::default());
    assert!(matches!(r, Err(EngineError::NotInFragment)));
}

#[test]
fn loads_resolve_through_matching_and_disjoint_stores() {
    let k = modexp::kernel();
    let p = k.program();
    let n = Names::new(p);
    let a1 = Term::atom(modexp::w32("α_1"));
    // Line 12 loads at α_SP - 4 from the frame: the outer store matches.
    let mut d = initial_store(p.vars());
    d.insert(n.sp.clone(), modexp::below_sp(&n));
    d.insert(n.m.clone(), frame(&n, a1.clone()));
    let s = SymState::running(12, d, PathCond::top().and(phi0(p)));
    let ps = k.symbstep(&s, &BTreeSet::from([12])).unwrap();
    let t = ps.targets()[0].clone();
    let (ps, t) = simplify_memory(&k, &ps, &t, &n.r0).unwrap();
    assert_eq!(t.store().unwrap()[&n.r0], a1);

    // Line 14 loads at α_SP: bypass the outer store, match the inner one.
    let ps13 = k.symbstep_n(&t, 2).unwrap();
    let ps = k.sequence(&ps, &ps13).unwrap();
    let t = ps.targets()[0].clone();
    let (ps, t) = symexec_core::engine::replace_value(&k, &ps, &t, &n.sp, &initial(&n.sp)).unwrap();
    let (ps, t) = simplify_memory(&k, &ps, &t, &n.r3).unwrap();
    assert_eq!(t.store().unwrap()[&n.r3], initial(&n.r3));
    assert_eq!(check_soundness(&k, &ps, 0..5, 100).unwrap(), 5);
}

#[test]
fn unrelated_symbolic_addresses_are_undecided() {
    let src = "program alias\nentry 1\nvar a : w8\nvar b : w8\nvar v : w8\nvar M : mem8x8\n\
               1: M := st(M, a, 1)\n2: v := ld(M, b)\n3: jmp 4\n";
    let p = parse_program(src).unwrap();
    let k = Kernel::new(p.clone(), Solver::brute());
    let s = SymState::running(1, initial_store(p.vars()), PathCond::top());
    let ps = k.symbstep_n(&s, 2).unwrap();
    let t = ps.targets()[0].clone();
    let r = simplify_memory(&k, &ps, &t, &p.var("v").unwrap());
    assert!(matches!(r, Err(EngineError::CannotDecideAliasing(_))));
}

#[test]
fn merging_identical_targets_is_a_no_op_and_labels_must_agree() {
    let p = common::negative::program();
    let k = Kernel::new(p.clone(), Solver::brute());
    let s = SymState::running(1, initial_store(p.vars()), PathCond::top());
    let ps = k.symbstep_n(&s, 1).unwrap();
    let t = ps.targets()[0].clone();
    let (same, merged) = merge_targets(&k, &ps, &t, &t, None).unwrap();
    assert_eq!(same, ps);
    assert_eq!(merged, t);

    let br = k.symbstep(&t, &BTreeSet::from([2])).unwrap();
    let ps = k.sequence(&ps, &br).unwrap();
    let (a, b) = (ps.targets()[0].clone(), ps.targets()[1].clone());
    assert!(matches!(
        merge_targets(&k, &ps, &a, &b, None),
        Err(EngineError::DifferentLabels(..))
    ));
}

#[test]
fn merged_branches_stay_sound() {
    let src = "program diamond\nentry 1\nvar x : w8\nvar y : w8\n\
               1: cjmp x < 10 -> 2, 3\n2: y := x + 1\n3: jmp 4\n";
    let p = parse_program(src).unwrap();
    let k = Kernel::new(p.clone(), Solver::brute());
    let s = SymState::running(1, initial_store(p.vars()), PathCond::top());
    let report = explore(&k, &s, &(1..=3).collect(), &ExploreOptions::default()).unwrap();
    assert_eq!(report.structure.targets().len(), 1);
    assert_eq!(report.stats.merges, 1);
    assert!(check_soundness(&k, &report.structure, 0..50, 20).unwrap() > 0);
}

#[test]
fn instantiating_the_loop_body_for_the_first_iteration() {
    let k = modexp::kernel();
    let n = Names::new(k.program());
    let body = modexp::part2(&k, &n);
    let bindings = BTreeMap::from([
        (modexp::w32("α_1"), Term::word(32, 1)),
        (modexp::w32("α_2"), Term::word(32, 8)),
    ]);
    let avoid: BTreeSet<Symbol> = body.free_symbols();
    let (first, renaming) = instantiate(&k, &body, &bindings, &avoid).unwrap();
    assert_eq!(renaming.len(), avoid.len());
    assert!(first.free_symbols().is_disjoint(&avoid));
    let t = &first.targets()[0];
    assert_eq!(t.store().unwrap()[&n.r3], Term::word(32, 7));
    let src = first.source().store().unwrap();
    assert_eq!(src[&n.m], frame(&n, Term::word(32, 1)));

    let free = body.free_symbols().into_iter().next().unwrap();
    let bad = BTreeMap::from([(free, Term::word(32, 0))]);
    match instantiate(&k, &body, &bad, &BTreeSet::new()) {
        Err(EngineError::Rule(e)) => assert!(matches!(e.violation, Violation::SubstOfFreeSymbol(_))),
        other => panic!("{other:?}"),
    }
}

/// Concrete paths of a memory-free program: label sequence, cjmp decisions
/// and whether the run failed.
fn concrete_paths(p: &symexec_core::il::Program, vars: &[Var]) -> BTreeSet<Vec<(Label, bool)>> {
    let mut out = BTreeSet::new();
    let widths: Vec<u64> = vars.iter().map(|v| 1 << v.ty().word_width().unwrap()).collect();
    let total: u64 = widths.iter().product();
    for mut code in 0..total {
        let mut env = BTreeMap::new();
        for (v, w) in vars.iter().zip(&widths) {
            let width = v.ty().word_width().unwrap();
            env.insert(v.clone(), Value::word(width, code % w));
            code /= w;
        }
        let mut s = State::running(1, env);
        let mut path = Vec::new();
        while let State::Running { pc, env } = &s {
            let Some(stmt) = p.stmt(*pc) else { break };
            let bit = match stmt {
                Stmt::CJmp(c, ..) | Stmt::Assert(c) => eval_expr(c, env).unwrap() == Value::bool(true),
                _ => false,
            };
            path.push((*pc, bit));
            s = step(p, &s);
        }
        if matches!(s, State::Error { .. }) {
            path.push((0, false));
        }
        out.insert(path);
    }
    out
}

#[test]
fn unmerged_exploration_has_one_target_per_feasible_path() {
    let vars = vec![
        Var::new("a", Type::Word(8)),
        Var::new("b", Type::Word(8)),
        Var::new("f", Type::BOOL),
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut checked = 0;
    while checked < 12 {
        let size = rng.gen_range(2..=7);
        let p = common::small_program_over(&mut rng, size, &vars);
        // Successors of a computed jump do not record which target was
        // taken, so exact path counts only hold for constant jumps.
        let computed = p
            .stmts()
            .values()
            .any(|s| matches!(s, Stmt::Jmp(t) if t.as_word_const().is_none()));
        if computed {
            continue;
        }
        checked += 1;
        let k = Kernel::new(p.clone(), Solver::brute());
        let s = SymState::running(1, initial_store(p.vars()), PathCond::top());
        let opts = ExploreOptions {
            merge_policy: MergePolicy::None,
            ..ExploreOptions::default()
        };
        let report = explore(&k, &s, &(1..=size).collect(), &opts).unwrap();
        let paths = concrete_paths(&p, &vars);
        assert_eq!(
            report.structure.targets().len(),
            paths.len(),
            "{}\n{}",
            symexec_core::text::print_program(&p),
            report.structure
        );
    }
}

#[test]
fn parallel_feasibility_checks_give_the_same_structure() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..10 {
        let p = common::small_program(&mut rng, 8);
        let s = SymState::running(1, initial_store(p.vars()), PathCond::top());
        let run = |jobs| {
            let k = Kernel::new(p.clone(), Solver::brute());
            let opts = ExploreOptions {
                jobs,
                ..ExploreOptions::default()
            };
            explore(&k, &s, &(1..=8).collect(), &opts).map(|r| r.structure.to_string())
        };
        assert_eq!(run(1).ok(), run(4).ok());
    }
}
