//! One crafted side-condition violation per kernel rule, on a small
//! eight-bit program that the brute-force backend decides exactly.

use std::collections::BTreeSet;

use symexec_core::il::{BinOp, Program, Term, Type};
use symexec_core::kernel::{Kernel, ProgressStructure, Rule, RuleError, Violation};
use symexec_core::solver::Solver;
use symexec_core::sym::{initial_store, PathCond, SymExpr, SymState, Symbol};
use symexec_core::text::parse_program;

pub const SOURCE: &str = "\
program toy
entry 1
exit 5
var x : w8
var y : w8

1: x := x + 1
2: cjmp x < 4 -> 3, 4
3: y := x
4: jmp 5
";

pub fn program() -> Program {
    parse_program(SOURCE).unwrap()
}

pub struct Case {
    pub rule: Rule,
    pub what: &'static str,
    pub outcome: Result<ProgressStructure, RuleError>,
    pub expected: fn(&Violation) -> bool,
}

impl Case {
    /// Rejected by the right rule with the documented violation.
    pub fn rejected_as_documented(&self) -> bool {
        match &self.outcome {
            Ok(_) => false,
            Err(e) => e.rule == self.rule && (self.expected)(&e.violation),
        }
    }
}

fn w8(n: &str) -> Symbol {
    Symbol::new(n, Type::Word(8))
}

fn at(s: &Symbol) -> SymExpr {
    Term::atom(s.clone())
}

/// Every case expects its rule to refuse.
pub fn cases(k: &Kernel) -> Vec<Case> {
    let p = k.program();
    let x = p.var("x").unwrap();
    let ax = at(&Symbol::initial(&x));
    let d0 = initial_store(p.vars());
    let s1 = SymState::running(1, d0.clone(), PathCond::top());
    let one = k.symbstep(&s1, &BTreeSet::from([1])).unwrap();
    let t1 = one.targets()[0].clone();
    let branch = k.symbstep(&t1, &BTreeSet::from([2])).unwrap();

    // A structure with the free symbol `f`: x's value forgotten after line 1.
    let f = w8("f");
    let fx = k
        .simplify(&one, &t1, &x, &at(&f), &f, &t1.store().unwrap()[&x].clone())
        .unwrap();
    let with_def = fx.targets()[0].clone();
    let forgot = k
        .consequence(&fx, &s1, &with_def, &with_def.with_path(PathCond::top()))
        .unwrap();
    let free_target = forgot.targets()[0].clone();
    assert_eq!(forgot.free_symbols(), BTreeSet::from([f.clone()]));

    let unrelated = SymState::running(3, d0.clone(), PathCond::top());
    let small = Term::bin(BinOp::Ult, ax.clone(), Term::word(8, 4));
    let other_kernel = Kernel::new(program(), Solver::brute());
    let foreign = other_kernel.symbstep(&s1, &BTreeSet::from([1])).unwrap();

    vec![
        Case {
            rule: Rule::Symbstep,
            what: "pc outside the label set",
            outcome: k.symbstep(&s1, &BTreeSet::from([2])),
            expected: |v| matches!(v, Violation::PcNotInL(_)),
        },
        Case {
            rule: Rule::Case,
            what: "split a state that is not a target",
            outcome: k.case(&one, &unrelated, &small),
            expected: |v| matches!(v, Violation::NoSuchTarget(_)),
        },
        Case {
            rule: Rule::Infeasible,
            what: "drop a satisfiable branch",
            outcome: k.infeasible(&branch, &branch.targets()[0].clone()),
            expected: |v| matches!(v, Violation::NotInfeasible(_)),
        },
        Case {
            rule: Rule::Rename,
            what: "rename onto a symbol already present",
            outcome: k.rename(&forgot, &f, &Symbol::initial(&x)),
            expected: |v| matches!(v, Violation::SymbolNotFresh(_)),
        },
        Case {
            rule: Rule::Subst,
            what: "substitute a free symbol",
            outcome: k.subst(&forgot, &f, &Term::word(8, 0)),
            expected: |v| matches!(v, Violation::SubstOfFreeSymbol(_)),
        },
        Case {
            rule: Rule::Subst,
            what: "substitute an expression mentioning a free symbol",
            outcome: k.subst(&forgot, &Symbol::initial(&x), &at(&f)),
            expected: |v| matches!(v, Violation::CapturesFreeSymbol(_)),
        },
        Case {
            rule: Rule::Simplify,
            what: "replace a value by an unequal one",
            outcome: k.simplify(&one, &t1, &x, &ax, &w8("g"), &Term::word(8, 0)),
            expected: |v| matches!(v, Violation::SideConditionFailed(_)),
        },
        Case {
            rule: Rule::Simplify,
            what: "definition symbol already in the source",
            outcome: k.simplify(
                &one,
                &t1,
                &x,
                &t1.store().unwrap()[&x].clone(),
                &Symbol::initial(&x),
                &Term::word(8, 0),
            ),
            expected: |v| matches!(v, Violation::SymbolNotFresh(_)),
        },
        Case {
            rule: Rule::Consequence,
            what: "strengthen a target",
            outcome: k.consequence(&one, &s1, &t1, &t1.with_path(PathCond::top().and(small.clone()))),
            expected: |v| matches!(v, Violation::NotWeaker(_)),
        },
        Case {
            rule: Rule::Consequence,
            what: "new source mentions a free symbol",
            outcome: k.consequence(
                &forgot,
                &s1.with_path(PathCond::top().and(Term::bin(BinOp::Eq, at(&f), ax.clone()))),
                &free_target,
                &free_target,
            ),
            expected: |v| matches!(v, Violation::CapturesFreeSymbol(_)),
        },
        Case {
            rule: Rule::Transfer,
            what: "add a conjunct the source does not entail",
            outcome: k.transfer(&one, &t1, &small),
            expected: |v| matches!(v, Violation::SideConditionFailed(_)),
        },
        Case {
            rule: Rule::Sequence,
            what: "second source is not a target of the first",
            outcome: k.sequence(&one, &one),
            expected: |v| matches!(v, Violation::SourceNotATarget),
        },
        Case {
            rule: Rule::Sequence,
            what: "structure from another kernel",
            outcome: k.sequence(&one, &foreign),
            expected: |v| matches!(v, Violation::ForeignStructure),
        },
        Case {
            rule: Rule::Widen,
            what: "shrink the label set",
            outcome: k.widen(&one, &BTreeSet::new()),
            expected: |v| matches!(v, Violation::NotSuperset),
        },
        Case {
            rule: Rule::SymbstepN,
            what: "step through a branch",
            outcome: k.symbstep_n(&s1, 2),
            expected: |v| matches!(v, Violation::Branches(2)),
        },
        Case {
            rule: Rule::InfBranch,
            what: "both branches feasible",
            outcome: k.inf_branch(&t1, true),
            expected: |v| matches!(v, Violation::NeitherInfeasible(_)),
        },
    ]
}
