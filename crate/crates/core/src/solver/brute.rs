//! Exhaustive search with lazily chosen symbols and memory cells.
//!
//! A formula over memories only observes finitely many cells, so a memory
//! symbol is modelled as a zero default plus the cells the search actually
//! reads. Symbols and cells are assigned only when evaluation needs them.

use std::collections::{BTreeMap, BTreeSet};

use super::{EnumError, Found};
use crate::il::{mask, Atom, MemoryValue, Term, UnOp, Value, Word};
use crate::sym::{Interpretation, SymExpr, Symbol};

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
enum Key {
    Sym(Symbol),
    Cell(Symbol, u64),
}

/// Evaluation blocked on an unassigned key of the given width.
struct Need(Key, u32);

#[derive(Default)]
struct Assignment(BTreeMap<Key, u64>);

impl Assignment {
    fn word(&self, e: &SymExpr) -> Result<Word, Need> {
        match e {
            Term::Const(Value::Word(w)) => Ok(*w),
            Term::Const(Value::Mem(_)) => unreachable!("well-typed word term"),
            Term::Atom(s) => {
                let w = s.ty().word_width().expect("word symbol");
                let k = Key::Sym(s.clone());
                match self.0.get(&k) {
                    Some(v) => Ok(Word::new(w, *v)),
                    None => Err(Need(k, w)),
                }
            }
            Term::Ite(c, t, f) => {
                if self.word(c)?.is_true() {
                    self.word(t)
                } else {
                    self.word(f)
                }
            }
            Term::Unary(UnOp::Not, a) => {
                let x = self.word(a)?;
                Ok(Word::new(x.width(), !x.value()))
            }
            Term::Binary(op, a, b) => {
                let x = self.word(a)?;
                let y = self.word(b)?;
                Ok(op.apply(x, y))
            }
            Term::Load(m, a) => {
                let addr = self.word(a)?.value();
                self.cell(m, addr)
            }
            Term::Store(..) => unreachable!("well-typed word term"),
        }
    }

    fn cell(&self, m: &SymExpr, addr: u64) -> Result<Word, Need> {
        match m {
            Term::Const(Value::Mem(mv)) => Ok(Word::new(mv.val_width(), mv.load(addr))),
            Term::Atom(s) => {
                let crate::il::Type::Mem { val, .. } = s.ty() else {
                    unreachable!("memory symbol")
                };
                let k = Key::Cell(s.clone(), addr);
                match self.0.get(&k) {
                    Some(v) => Ok(Word::new(val, *v)),
                    None => Err(Need(k, val)),
                }
            }
            Term::Store(inner, a, v) => {
                if self.word(a)?.value() == addr {
                    self.word(v)
                } else {
                    self.cell(inner, addr)
                }
            }
            Term::Ite(c, t, f) => {
                if self.word(c)?.is_true() {
                    self.cell(t, addr)
                } else {
                    self.cell(f, addr)
                }
            }
            _ => unreachable!("well-typed memory term"),
        }
    }

    fn model(&self) -> Interpretation {
        let mut out = Interpretation::new();
        for (k, v) in &self.0 {
            match k {
                Key::Sym(s) => {
                    out.insert(s.clone(), Value::word(s.ty().word_width().unwrap(), *v));
                }
                Key::Cell(s, a) => {
                    let crate::il::Type::Mem { addr, val } = s.ty() else {
                        unreachable!()
                    };
                    let e = out
                        .entry(s.clone())
                        .or_insert_with(|| Value::Mem(MemoryValue::zeroed(addr, val)));
                    if let Value::Mem(mv) = e {
                        mv.store_in_place(*a, *v);
                    }
                }
            }
        }
        out
    }
}

enum Eval {
    False,
    True,
    Blocked(Need),
}

fn eval_all(asg: &Assignment, cs: &[SymExpr]) -> Eval {
    let mut blocked = None;
    for c in cs {
        match asg.word(c) {
            Ok(w) if !w.is_true() => return Eval::False,
            Ok(_) => {}
            Err(n) => {
                if blocked.is_none() {
                    blocked = Some(n);
                }
            }
        }
    }
    match blocked {
        Some(n) => Eval::Blocked(n),
        None => Eval::True,
    }
}

struct Search<'a> {
    cs: &'a [SymExpr],
    budget: u32,
    asg: Assignment,
    over_budget: bool,
}

impl Search<'_> {
    /// Depth-first search; `leaf` is called on every satisfying complete
    /// assignment and returns true to stop.
    fn run(&mut self, used: u32, leaf: &mut dyn FnMut(&mut Assignment) -> Leaf) -> bool {
        match eval_all(&self.asg, self.cs) {
            Eval::False => false,
            Eval::Blocked(Need(k, w)) => self.branch(k, w, used, leaf),
            Eval::True => match leaf(&mut self.asg) {
                Leaf::Stop => true,
                Leaf::Continue => false,
                Leaf::Need(Need(k, w)) => self.branch(k, w, used, leaf),
            },
        }
    }

    fn branch(
        &mut self,
        k: Key,
        w: u32,
        used: u32,
        leaf: &mut dyn FnMut(&mut Assignment) -> Leaf,
    ) -> bool {
        if used + w > self.budget {
            self.over_budget = true;
            return false;
        }
        for v in 0..=mask(w) {
            self.asg.0.insert(k.clone(), v);
            if self.run(used + w, leaf) {
                return true;
            }
        }
        self.asg.0.remove(&k);
        false
    }
}

enum Leaf {
    Stop,
    Continue,
    Need(Need),
}

pub(crate) fn sat(cs: &[SymExpr], budget: u32) -> Found {
    let mut search = Search {
        cs,
        budget,
        asg: Assignment::default(),
        over_budget: false,
    };
    let mut model = None;
    let found = search.run(0, &mut |asg| {
        model = Some(asg.model());
        Leaf::Stop
    });
    match model {
        Some(m) if found => Found::Sat(m),
        _ if search.over_budget => Found::Unknown(format!(
            "brute-force search exceeds {budget} bits"
        )),
        _ => Found::Unsat,
    }
}

pub(crate) fn enumerate(
    cs: &[SymExpr],
    target: &SymExpr,
    cap: usize,
    budget: u32,
) -> Result<BTreeSet<Value>, EnumError> {
    let mut search = Search {
        cs,
        budget,
        asg: Assignment::default(),
        over_budget: false,
    };
    let mut found = BTreeSet::new();
    let mut capped = false;
    search.run(0, &mut |asg| match asg.word(target) {
        Ok(w) => {
            found.insert(Value::Word(w));
            if found.len() > cap {
                capped = true;
                Leaf::Stop
            } else {
                Leaf::Continue
            }
        }
        Err(n) => Leaf::Need(n),
    });
    if capped {
        return Err(EnumError::CapExceeded { cap });
    }
    if search.over_budget {
        return Err(EnumError::Unknown(format!(
            "brute-force search exceeds {budget} bits"
        )));
    }
    Ok(found)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::il::{BinOp, Type};

    #[test]
    fn memory_cells_are_chosen_lazily() {
        let m = Symbol::new("M", Type::Mem { addr: 32, val: 8 });
        let c = Term::bin(
            BinOp::Eq,
            Term::load(Term::atom(m.clone()), Term::word(32, 0x1000)),
            Term::word(8, 7),
        );
        match sat(&[c], 20) {
            Found::Sat(model) => {
                assert_eq!(model[&m].as_mem().unwrap().load(0x1000), 7);
            }
            _ => panic!("expected sat"),
        }
    }

    #[test]
    fn wide_symbols_exceed_budget() {
        let a = Term::atom(Symbol::new("a", Type::Word(32)));
        let c = Term::bin(BinOp::Ult, Term::bin(BinOp::Mul, a.clone(), a), Term::word(32, 3));
        assert!(matches!(sat(&[c], 20), Found::Unknown(_)));
    }
}
