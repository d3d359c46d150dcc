use std::collections::{BTreeMap, BTreeSet};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{interp_path, interp_store, Interpretation, SymError, SymExpr, SymState, Symbol};
use crate::il::{Atom, BinOp, MemoryValue, State, Term, Type, Value};
use crate::solver::{Solver, SolverResult, Validity};

/// Whether the symbolic state describes the concrete state under `h`.
pub fn matches(s: &SymState, h: &Interpretation, c: &State) -> Result<bool, SymError> {
    match (s, c) {
        (SymState::Running { pc, store, path }, State::Running { pc: cpc, env }) => {
            if pc != cpc || store.len() != env.len() || !store.keys().eq(env.keys()) {
                return Ok(false);
            }
            Ok(interp_store(h, store)? == *env && interp_path(h, path)?)
        }
        (SymState::Error { path }, State::Error { .. }) => interp_path(h, path),
        _ => Ok(false),
    }
}

fn is_closed(e: &SymExpr) -> bool {
    e.atoms().is_empty()
}

/// Innermost memory below a chain of stores, and the store addresses.
fn store_chain(e: &SymExpr) -> (&SymExpr, Vec<&SymExpr>) {
    let mut addrs = Vec::new();
    let mut cur = e;
    while let Term::Store(m, a, _) = cur {
        addrs.push(&**a);
        cur = m;
    }
    (cur, addrs)
}

/// Constraints saying that memory expression `e` (all of whose memory
/// leaves are closed) equals the concrete memory `want`.
fn memory_equal(e: &SymExpr, want: &MemoryValue) -> Result<Option<Vec<SymExpr>>, SymError> {
    let (base, addrs) = store_chain(e);
    let base = match base.eval_closed() {
        Ok(Value::Mem(m)) => m,
        _ => {
            return Err(SymError::SolverUnknown(
                "memory expression with a symbolic base".into(),
            ))
        }
    };
    let want_c = Term::Const(Value::Mem(want.clone()));
    let mut differ: BTreeSet<u64> = base
        .cells()
        .map(|(a, _)| a)
        .chain(want.cells().map(|(a, _)| a))
        .filter(|a| base.load(*a) != want.load(*a))
        .collect();
    if base.default_value() != want.default_value() {
        let aw = want.addr_width();
        let listed = base.cells().count() + want.cells().count() + addrs.len();
        if aw >= 16 || (1usize << aw) > listed {
            // Stores cannot cover every address where the defaults differ.
            return Ok(None);
        }
        differ.extend(0..=crate::il::mask(aw));
        differ.retain(|a| base.load(*a) != want.load(*a));
    }
    let aw = want.addr_width();
    let vw = want.val_width();
    let mut out = Vec::new();
    for d in differ {
        out.push(Term::bin(
            BinOp::Eq,
            Term::load(e.clone(), Term::word(aw, d)),
            Term::word(vw, want.load(d)),
        ));
    }
    for a in addrs {
        out.push(Term::bin(
            BinOp::Eq,
            Term::load(e.clone(), a.clone()),
            Term::load(want_c.clone(), a.clone()),
        ));
    }
    Ok(Some(out))
}

type HoleWrites = (Vec<(Symbol, Symbol)>, MemoryValue, MemoryValue);

/// Store chains over a closed base whose addresses and values are distinct
/// free symbols that occur nowhere else in the state. Such holes can be
/// filled directly instead of searched for.
fn exclusive_hole_writes(
    inst: &SymState,
    c: &State,
    free: &BTreeSet<Symbol>,
    chosen: &Interpretation,
) -> Vec<HoleWrites> {
    let Some(store) = inst.store() else {
        return Vec::new();
    };
    let mut uses: BTreeMap<Symbol, usize> = BTreeMap::new();
    let mut count = |e: &SymExpr| {
        for x in e.atoms() {
            *uses.entry(x).or_default() += 1;
        }
    };
    inst.path().conjuncts().iter().for_each(&mut count);
    store.values().for_each(&mut count);
    let mut out = Vec::new();
    for (v, e) in store {
        let Value::Mem(want) = &c.env()[v] else {
            continue;
        };
        let mut writes = Vec::new();
        let mut cur = e;
        while let Term::Store(m, a, val) = cur {
            match (&**a, &**val) {
                (Term::Atom(a), Term::Atom(val)) if a != val => writes.push((a.clone(), val.clone())),
                _ => break,
            }
            cur = m;
        }
        if writes.is_empty() || matches!(cur, Term::Store(..)) {
            continue;
        }
        let Ok(Value::Mem(base)) = cur.eval_closed() else {
            continue;
        };
        let syms: Vec<&Symbol> = writes.iter().flat_map(|(a, v)| [a, v]).collect();
        let distinct: BTreeSet<&Symbol> = syms.iter().copied().collect();
        let exclusive = distinct.len() == syms.len()
            && syms.iter().all(|x| {
                free.contains(*x) && !chosen.contains_key(*x) && uses.get(*x) == Some(&1)
            });
        if exclusive && base.default_value() == want.default_value() {
            out.push((writes, want.clone(), base));
        }
    }
    out
}

/// Values for exclusive holes making the chain over `base` equal `want`,
/// or `None` if there are fewer writes than differing cells. Every write
/// stores the wanted value at its address, so write order is irrelevant.
fn fill_holes(
    writes: &[(Symbol, Symbol)],
    base: &MemoryValue,
    want: &MemoryValue,
) -> Option<Vec<(Symbol, Value)>> {
    let differ: Vec<u64> = base
        .cells()
        .map(|(a, _)| a)
        .chain(want.cells().map(|(a, _)| a))
        .filter(|a| base.load(*a) != want.load(*a))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if differ.len() > writes.len() {
        return None;
    }
    let spare = differ.first().copied().unwrap_or(0);
    let mut out = Vec::new();
    for (i, (a, v)) in writes.iter().enumerate() {
        let addr = differ.get(i).copied().unwrap_or(spare);
        out.push((a.clone(), Value::word(want.addr_width(), addr)));
        out.push((v.clone(), Value::word(want.val_width(), want.load(addr))));
    }
    Some(out)
}

/// Whether some extension of `h` to the remaining symbols of `s` makes it
/// match `c`. Free memory symbols at the base of a store chain are chosen
/// to be the concrete memory, which is the only candidate in all but
/// degenerate cases; if that guess fails the answer is `false`.
pub fn loose_matches(
    s: &SymState,
    h: &Interpretation,
    c: &State,
    solver: &Solver,
) -> Result<bool, SymError> {
    let free: BTreeSet<Symbol> = s
        .symbols()
        .into_iter()
        .filter(|x| !h.contains_key(x))
        .collect();
    if free.is_empty() {
        return matches(s, h, c);
    }
    match (s, c) {
        (SymState::Running { pc, store, .. }, State::Running { pc: cpc, env }) => {
            if pc != cpc || !store.keys().eq(env.keys()) {
                return Ok(false);
            }
        }
        (SymState::Error { .. }, State::Error { .. }) => {}
        _ => return Ok(false),
    }
    let mut sub: BTreeMap<Symbol, SymExpr> = h
        .iter()
        .map(|(k, v)| (k.clone(), Term::Const(v.clone())))
        .collect();
    let mut chosen = Interpretation::new();
    if let Some(store) = s.store() {
        for (v, e) in store {
            if let (Type::Mem { .. }, Value::Mem(want)) = (v.ty(), &c.env()[v]) {
                if let (Term::Atom(b), _) = store_chain(e) {
                    if free.contains(b) && !chosen.contains_key(b) {
                        chosen.insert(b.clone(), Value::Mem(want.clone()));
                        sub.insert(b.clone(), Term::Const(Value::Mem(want.clone())));
                    }
                }
            }
        }
    }
    let mut inst = s.substitute(&sub);
    let holes = exclusive_hole_writes(&inst, c, &free, &chosen);
    if !holes.is_empty() {
        for (writes, want, base) in holes {
            let Some(fill) = fill_holes(&writes, &base, &want) else {
                return Ok(false);
            };
            for (x, v) in fill {
                sub.insert(x.clone(), Term::Const(v.clone()));
                chosen.insert(x, v);
            }
        }
        inst = s.substitute(&sub);
    }
    let mut constraints: Vec<SymExpr> = inst.path().conjuncts().to_vec();
    if let Some(store) = inst.store() {
        for (v, e) in store {
            match &c.env()[v] {
                Value::Word(w) => {
                    constraints.push(Term::bin(BinOp::Eq, e.clone(), Term::Const(Value::Word(*w))))
                }
                Value::Mem(want) => {
                    if is_closed(e) {
                        if e.eval_closed()? != Value::Mem(want.clone()) {
                            return Ok(false);
                        }
                        continue;
                    }
                    match memory_equal(e, want)? {
                        Some(cs) => constraints.extend(cs),
                        None => return Ok(false),
                    }
                }
            }
        }
    }
    match solver.check_sat(&constraints) {
        SolverResult::Unsat => Ok(false),
        SolverResult::Unknown(r) => Err(SymError::SolverUnknown(r)),
        SolverResult::Sat(m) => {
            let mut full = h.clone();
            full.extend(chosen);
            for x in &free {
                let v = m
                    .get(x)
                    .cloned()
                    .unwrap_or_else(|| Value::zero(x.ty()));
                full.entry(x.clone()).or_insert(v);
            }
            if matches(s, &full, c)? {
                Ok(true)
            } else {
                Err(SymError::SolverUnknown(
                    "extension failed to re-check".into(),
                ))
            }
        }
    }
}

/// `s ⇒ t`: same label and store, and the path of `s` entails that of `t`.
pub fn weaker_than(s: &SymState, t: &SymState, solver: &Solver) -> Result<bool, SymError> {
    match (s, t) {
        (SymState::Running { pc, store, .. }, SymState::Running { pc: tp, store: ts, .. }) => {
            if pc != tp || store != ts {
                return Ok(false);
            }
        }
        (SymState::Error { .. }, SymState::Error { .. }) => {}
        _ => return Ok(false),
    }
    let hyps = s.path().conjuncts();
    for goal in t.path().conjuncts() {
        if hyps.contains(goal) {
            continue;
        }
        match solver.check_valid(hyps, goal) {
            Validity::Valid => {}
            Validity::Invalid(_) => return Ok(false),
            Validity::Unknown(r) => return Err(SymError::SolverUnknown(r)),
        }
    }
    Ok(true)
}

/// A random model of the path condition with domain exactly the symbols
/// of the state, or `None` if the path is unsatisfiable.
pub fn sample_minimal_interpretation(
    s: &SymState,
    seed: u64,
    solver: &Solver,
) -> Result<Option<Interpretation>, SymError> {
    let domain = s.symbols();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match solver.sample_model(s.path().conjuncts(), &domain, &mut rng) {
        SolverResult::Sat(m) => Ok(Some(
            m.into_iter().filter(|(k, _)| domain.contains(k)).collect(),
        )),
        SolverResult::Unsat => Ok(None),
        SolverResult::Unknown(r) => Err(SymError::SolverUnknown(r)),
    }
}
