use proptest::prelude::*;
use symexec_core::il::{BinOp, Cycles, Expr, ProgramParts, Stmt, Term, Type, Var};
use symexec_core::text::{parse_expr, parse_program, print_program};

const MEM: Type = Type::Mem { addr: 32, val: 8 };

fn vars() -> Vec<Var> {
    vec![
        Var::new("a", Type::Word(8)),
        Var::new("b", Type::Word(8)),
        Var::new("c", Type::Word(32)),
        Var::new("flag", Type::BOOL),
        Var::new("M", MEM),
    ]
}

fn leaf(ty: Type) -> BoxedStrategy<Expr> {
    let vs: Vec<Expr> = vars()
        .into_iter()
        .filter(|v| symexec_core::il::Atom::ty(v) == ty)
        .map(Term::atom)
        .collect();
    match ty {
        Type::Word(w) => {
            let lits = any::<u64>().prop_map(move |v| Term::word(w, v));
            if vs.is_empty() {
                lits.boxed()
            } else {
                prop_oneof![lits, proptest::sample::select(vs)].boxed()
            }
        }
        Type::Mem { .. } => proptest::sample::select(vs).boxed(),
    }
}

fn expr(ty: Type, depth: u32) -> BoxedStrategy<Expr> {
    if depth == 0 {
        return leaf(ty);
    }
    let sub = move |t: Type| expr(t, depth - 1);
    match ty {
        Type::Mem { .. } => prop_oneof![
            leaf(ty),
            (sub(MEM), sub(Type::Word(32)), sub(Type::Word(8)))
                .prop_map(|(m, a, v)| Term::store(m, a, v)),
        ]
        .boxed(),
        Type::Word(w) => {
            let arith: Vec<BinOp> = BinOp::ALL.into_iter().filter(|o| !o.is_predicate()).collect();
            let arith = (proptest::sample::select(arith), sub(ty), sub(ty))
                .prop_map(|(o, a, b)| Term::bin(o, a, b));
            let mut alts: Vec<BoxedStrategy<Expr>> = vec![
                leaf(ty),
                arith.boxed(),
                sub(ty).prop_map(Term::not).boxed(),
                (sub(Type::BOOL), sub(ty), sub(ty))
                    .prop_map(|(c, a, b)| Term::ite(c, a, b))
                    .boxed(),
            ];
            if w == 8 {
                alts.push(
                    (sub(MEM), sub(Type::Word(32)))
                        .prop_map(|(m, a)| Term::load(m, a))
                        .boxed(),
                );
            }
            if w == 1 {
                let preds: Vec<BinOp> = BinOp::ALL.into_iter().filter(|o| o.is_predicate()).collect();
                alts.push(
                    (
                        proptest::sample::select(preds),
                        prop_oneof![Just(8u32), Just(32)],
                    )
                        .prop_flat_map(move |(o, w)| {
                            (sub(Type::Word(w)), sub(Type::Word(w)))
                                .prop_map(move |(a, b)| Term::bin(o, a, b))
                        })
                        .boxed(),
                );
            }
            proptest::strategy::Union::new(alts).boxed()
        }
    }
}

fn stmt(last: u64) -> BoxedStrategy<(Stmt, Option<Cycles>)> {
    let target = prop_oneof![
        (1..=last).prop_map(|l| Term::word(32, l)),
        expr(Type::Word(32), 2),
    ];
    let assign = (proptest::sample::select(vars()), 0..3u32).prop_flat_map(|(x, d)| {
        expr(symexec_core::il::Atom::ty(&x), d).prop_map(move |e| Stmt::Assign(x.clone(), e))
    });
    let fixed = proptest::option::of((0..10u32).prop_map(Cycles::Fixed));
    prop_oneof![
        (assign, fixed.clone()),
        (expr(Type::BOOL, 2).prop_map(Stmt::Assert), fixed.clone()),
        (target.clone().prop_map(Stmt::Jmp), fixed),
        (
            (expr(Type::BOOL, 2), target.clone(), target)
                .prop_map(|(c, t, f)| Stmt::CJmp(c, t, f)),
            proptest::option::of(
                (0..10u32, 0..10u32).prop_map(|(taken, fall)| Cycles::Branch { taken, fall })
            ),
        ),
    ]
    .boxed()
}

fn program() -> impl Strategy<Value = symexec_core::il::Program> {
    (1..8u64).prop_flat_map(|n| {
        proptest::collection::vec(stmt(n + 1), n as usize).prop_map(move |ss| {
            let mut parts = ProgramParts::new("rt");
            parts.entry = 1;
            parts.exits.insert(n + 1);
            for v in vars() {
                parts
                    .decls
                    .insert(v.name().to_string(), symexec_core::il::Atom::ty(&v));
            }
            for (i, (s, k)) in ss.into_iter().enumerate() {
                let l = i as u64 + 1;
                parts.stmts.insert(l, s);
                if let Some(k) = k {
                    parts.cycles.insert(l, k);
                }
            }
            parts.check().expect("generated programs are well typed")
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn print_then_parse_is_identity(p in program()) {
        let text = print_program(&p);
        let q = parse_program(&text).map_err(|e| TestCaseError::fail(format!("{e}\n{text}")))?;
        prop_assert_eq!(&q, &p);
        prop_assert_eq!(print_program(&q), text);
    }

    #[test]
    fn parser_never_panics(s in "\\PC{0,80}") {
        let _ = parse_program(&s);
        let _ = parse_expr(&s, &Default::default());
    }

    #[test]
    fn parser_never_panics_on_near_programs(body in "[a-z0-9 :=+\\-<>!()\\[\\],]{0,40}") {
        let text = format!("program p\nentry 1\nvar a : w8\n1: {body}\n");
        let _ = parse_program(&text);
    }
}

#[test]
fn hex_label_printed_as_decimal() {
    let p = parse_program("program h\nentry 0x1C\nvar x : w32\n0x1C: jmp 0x1C\n").unwrap();
    let text = print_program(&p);
    assert!(text.contains("28: jmp 28"), "{text}");
    assert!(text.contains("entry 28"), "{text}");
}

#[test]
fn one_statement_program_prints_exactly() {
    let p = parse_program("program one\nentry 1\nexit 2\nvar x : w8\n1: x := x + 1\n").unwrap();
    assert_eq!(
        print_program(&p),
        "program one\nentry 1\nexit 2\nvar x : w8\n1: x := x + 1w8\n"
    );
}
