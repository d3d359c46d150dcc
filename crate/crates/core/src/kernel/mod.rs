//! The trusted core. A [`ProgressStructure`] can only be obtained from the
//! rule methods of a [`Kernel`], and every application is appended to the
//! kernel's certificate log.

mod cert;
mod soundness;

use std::collections::BTreeSet;
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::il::{Atom, Label, Program, Type, Var};
use crate::solver::{Solver, SolverResult, Validity};
use crate::sym::{
    negate, rewrite, sstep, symbols_of_states, SymError, SymExpr, SymState, Symbol,
    DEFAULT_TARGET_CAP,
};
use crate::text::print_program;

pub use cert::{Certificate, Query, Answer, Record, ReplayError, RuleArgs};
pub use soundness::{check_soundness, SoundnessViolation};

/// Name of an inference rule.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    Symbstep,
    Case,
    Infeasible,
    Rename,
    Subst,
    Simplify,
    Consequence,
    Transfer,
    Sequence,
    Widen,
    SymbstepN,
    InfBranch,
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Rule::Symbstep => "symbstep",
            Rule::Case => "case",
            Rule::Infeasible => "infeasible",
            Rule::Rename => "rename",
            Rule::Subst => "subst",
            Rule::Simplify => "simplify",
            Rule::Consequence => "consequence",
            Rule::Transfer => "transfer",
            Rule::Sequence => "sequence",
            Rule::Widen => "widen",
            Rule::SymbstepN => "symbstep_n",
            Rule::InfBranch => "inf_branch",
        };
        f.write_str(s)
    }
}

/// Which side condition a rule application violated.
#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum Violation {
    #[error("label {0} is not in the fragment")]
    PcNotInL(String),
    #[error("no such target: {0}")]
    NoSuchTarget(String),
    #[error("target is not infeasible: {0}")]
    NotInfeasible(String),
    #[error("symbol {0} is not fresh")]
    SymbolNotFresh(String),
    #[error("symbol {0} is not bound by the source")]
    SubstOfFreeSymbol(String),
    #[error("free symbol {0} would be captured")]
    CapturesFreeSymbol(String),
    #[error("side condition failed: {0}")]
    SideConditionFailed(String),
    #[error("not weaker: {0}")]
    NotWeaker(String),
    #[error("source of the second structure is not a target of the first")]
    SourceNotATarget,
    #[error("label set does not include the current one")]
    NotSuperset,
    #[error("statement at {0} branches")]
    Branches(Label),
    #[error("neither branch is infeasible: {0}")]
    NeitherInfeasible(String),
    #[error("ill-typed argument: {0}")]
    TypeMismatch(String),
    #[error("symbolic step failed: {0}")]
    Step(#[from] SymError),
    #[error("structure was built by another kernel")]
    ForeignStructure,
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
#[error("{rule}: {violation}")]
pub struct RuleError {
    pub rule: Rule,
    pub violation: Violation,
}

/// A sound progress structure `⊢ L, source ↦ targets`. Values of this type
/// exist only as results of kernel rules.
#[derive(Clone, Debug)]
pub struct ProgressStructure {
    kernel: u64,
    step: usize,
    labels: BTreeSet<Label>,
    source: SymState,
    targets: Vec<SymState>,
}

/// Structures are equal when they state the same theorem, wherever they
/// were derived.
impl PartialEq for ProgressStructure {
    fn eq(&self, other: &Self) -> bool {
        self.labels == other.labels && self.source == other.source && self.targets == other.targets
    }
}

impl Eq for ProgressStructure {}

impl ProgressStructure {
    pub fn labels(&self) -> &BTreeSet<Label> {
        &self.labels
    }

    pub fn source(&self) -> &SymState {
        &self.source
    }

    pub fn targets(&self) -> &[SymState] {
        &self.targets
    }

    /// Index of the certificate record that produced this structure.
    pub fn step(&self) -> usize {
        self.step
    }

    /// Symbols of the targets that do not occur in the source.
    pub fn free_symbols(&self) -> BTreeSet<Symbol> {
        let bound = self.source.symbols();
        symbols_of_states(&self.targets)
            .into_iter()
            .filter(|s| !bound.contains(s))
            .collect()
    }

    /// Hex SHA-256 of the canonical serialization.
    pub fn digest(&self) -> String {
        structure_digest(&self.labels, &self.source, &self.targets)
    }
}

fn structure_digest(labels: &BTreeSet<Label>, source: &SymState, targets: &[SymState]) -> String {
    #[derive(Serialize)]
    struct View<'a> {
        labels: &'a BTreeSet<Label>,
        source: &'a SymState,
        targets: &'a [SymState],
    }
    let bytes = serde_json::to_vec(&View {
        labels,
        source,
        targets,
    })
    .expect("states serialize");
    hex::encode(Sha256::digest(bytes))
}

/// Hex SHA-256 of the canonical program text.
pub fn program_digest(p: &Program) -> String {
    hex::encode(Sha256::digest(print_program(p).as_bytes()))
}

impl fmt::Display for ProgressStructure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "⊢ {}, {} ↦ {{", LabelSet(&self.labels), self.source)?;
        for (i, t) in self.targets.iter().enumerate() {
            f.write_str(if i == 0 { "\n  " } else { ",\n  " })?;
            write!(f, "{t}")?;
        }
        if !self.targets.is_empty() {
            f.write_str("\n")?;
        }
        f.write_str("}")
    }
}

/// Label set printed with runs collapsed, e.g. `{1..6, 9}`.
pub struct LabelSet<'a>(pub &'a BTreeSet<Label>);

impl fmt::Display for LabelSet<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("{")?;
        let mut first = true;
        let mut it = self.0.iter().copied().peekable();
        while let Some(lo) = it.next() {
            let mut hi = lo;
            while it.peek() == Some(&(hi + 1)) {
                hi = it.next().unwrap();
            }
            if !first {
                f.write_str(", ")?;
            }
            first = false;
            if hi == lo {
                write!(f, "{lo}")?;
            } else {
                write!(f, "{lo}..{hi}")?;
            }
        }
        f.write_str("}")
    }
}

static NEXT_KERNEL: AtomicU64 = AtomicU64::new(1);

/// Rule applications for one program. All structures produced by a kernel
/// are recorded in its certificate log.
pub struct Kernel {
    id: u64,
    program: Program,
    program_digest: String,
    solver: Solver,
    target_cap: usize,
    log: Mutex<Vec<Record>>,
}

/// Solver access that records every query for the certificate.
struct Ctx<'a> {
    solver: &'a Solver,
    queries: Vec<Query>,
}

impl Ctx<'_> {
    fn unsat(&mut self, cs: &[SymExpr]) -> Result<bool, String> {
        let res = self.solver.check_sat(cs);
        let (answer, out) = match &res {
            SolverResult::Sat(_) => (Answer::Sat, Ok(false)),
            SolverResult::Unsat => (Answer::Unsat, Ok(true)),
            SolverResult::Unknown(r) => (Answer::Unknown, Err(r.clone())),
        };
        self.queries.push(Query::Sat {
            conjuncts: cs.to_vec(),
            answer,
        });
        out
    }

    /// Validity; `Err` carries why it could not be established.
    fn valid(&mut self, hyps: &[SymExpr], goal: &SymExpr) -> Result<(), String> {
        let res = self.solver.check_valid(hyps, goal);
        let answer = match &res {
            Validity::Valid => Answer::Valid,
            Validity::Invalid(_) => Answer::Invalid,
            Validity::Unknown(_) => Answer::Unknown,
        };
        self.queries.push(Query::Valid {
            hyps: hyps.to_vec(),
            goal: goal.clone(),
            answer,
        });
        match res {
            Validity::Valid => Ok(()),
            Validity::Invalid(m) => Err(format!("{goal} fails under {m:?}")),
            Validity::Unknown(r) => Err(format!("{goal} undecided: {r}")),
        }
    }

    /// `s ⇒ t`: same label and store, and the path of `s` entails every
    /// conjunct of `t` that it does not contain syntactically.
    fn weaker(&mut self, s: &SymState, t: &SymState) -> Result<(), String> {
        match (s, t) {
            (SymState::Running { pc, store, .. }, SymState::Running { pc: tp, store: ts, .. }) => {
                if pc != tp {
                    return Err(format!("labels {pc} and {tp} differ"));
                }
                if store != ts {
                    return Err("stores differ".into());
                }
            }
            (SymState::Error { .. }, SymState::Error { .. }) => {}
            _ => return Err("running and failed state".into()),
        }
        let hyps = s.path().conjuncts();
        for goal in t.path().conjuncts() {
            if !hyps.contains(goal) {
                self.valid(hyps, goal)?;
            }
        }
        Ok(())
    }
}

type Body = (BTreeSet<Label>, SymState, Vec<SymState>);

fn push_unique(v: &mut Vec<SymState>, s: SymState) {
    if !v.contains(&s) {
        v.push(s);
    }
}

fn check_bool(e: &SymExpr) -> Result<(), Violation> {
    match e.type_of() {
        Ok(Type::Word(1)) => Ok(()),
        Ok(t) => Err(Violation::TypeMismatch(format!("{e} has type {t}, expected w1"))),
        Err(err) => Err(Violation::TypeMismatch(err.to_string())),
    }
}

fn find_target(ps: &ProgressStructure, t: &SymState) -> Result<usize, Violation> {
    ps.targets
        .iter()
        .position(|x| x == t)
        .ok_or_else(|| Violation::NoSuchTarget(t.to_string()))
}

fn replace_at(targets: &[SymState], i: usize, new: impl IntoIterator<Item = SymState>) -> Vec<SymState> {
    let mut out = Vec::new();
    let mut new = Some(new);
    for (j, t) in targets.iter().enumerate() {
        if j == i {
            for n in new.take().into_iter().flatten() {
                push_unique(&mut out, n);
            }
            // Later copies of an inserted state collapse into it.
            continue;
        }
        push_unique(&mut out, t.clone());
    }
    out
}

impl Kernel {
    pub fn new(program: Program, solver: Solver) -> Self {
        let program_digest = program_digest(&program);
        Kernel {
            id: NEXT_KERNEL.fetch_add(1, Ordering::Relaxed),
            program,
            program_digest,
            solver,
            target_cap: DEFAULT_TARGET_CAP,
            log: Mutex::new(Vec::new()),
        }
    }

    /// Bound on the concrete targets of one symbolic jump.
    pub fn with_target_cap(mut self, cap: usize) -> Self {
        self.target_cap = cap;
        self
    }

    pub fn program(&self) -> &Program {
        &self.program
    }

    pub fn solver(&self) -> &Solver {
        &self.solver
    }

    pub fn program_digest(&self) -> &str {
        &self.program_digest
    }

    /// Number of rule applications recorded so far.
    pub fn steps(&self) -> usize {
        self.log.lock().expect("certificate log").len()
    }

    fn own(&self, rule: Rule, ps: &ProgressStructure) -> Result<(), RuleError> {
        if ps.kernel == self.id {
            Ok(())
        } else {
            Err(RuleError {
                rule,
                violation: Violation::ForeignStructure,
            })
        }
    }

    /// Run a rule body, and on success record it and build the structure.
    fn apply(
        &self,
        rule: Rule,
        args: RuleArgs,
        body: impl FnOnce(&mut Ctx) -> Result<Body, Violation>,
    ) -> Result<ProgressStructure, RuleError> {
        let mut ctx = Ctx {
            solver: &self.solver,
            queries: Vec::new(),
        };
        let (labels, source, targets) =
            body(&mut ctx).map_err(|violation| RuleError { rule, violation })?;
        let digest = structure_digest(&labels, &source, &targets);
        let mut log = self.log.lock().expect("certificate log");
        let step = log.len();
        log.push(Record {
            step,
            args,
            queries: ctx.queries,
            digest,
        });
        Ok(ProgressStructure {
            kernel: self.id,
            step,
            labels,
            source,
            targets,
        })
    }

    /// `⊢ L, s ↦ sstep(s)` for `pc(s) ∈ L`.
    pub fn symbstep(
        &self,
        s: &SymState,
        labels: &BTreeSet<Label>,
    ) -> Result<ProgressStructure, RuleError> {
        self.symbstep_capped(s, labels, self.target_cap)
    }

    fn symbstep_capped(
        &self,
        s: &SymState,
        labels: &BTreeSet<Label>,
        cap: usize,
    ) -> Result<ProgressStructure, RuleError> {
        let args = RuleArgs::Symbstep {
            source: s.clone(),
            labels: labels.clone(),
            cap,
        };
        self.apply(Rule::Symbstep, args, |_| {
            match s.pc() {
                Some(pc) if labels.contains(&pc) => {}
                Some(pc) => return Err(Violation::PcNotInL(pc.to_string())),
                None => return Err(Violation::PcNotInL("⊥".into())),
            }
            let mut targets = Vec::new();
            for t in sstep(&self.program, s, cap, &self.solver)? {
                push_unique(&mut targets, t);
            }
            Ok((labels.clone(), s.clone(), targets))
        })
    }

    /// Split a target by `cond` into the `cond` and `¬cond` cases.
    pub fn case(
        &self,
        ps: &ProgressStructure,
        target: &SymState,
        cond: &SymExpr,
    ) -> Result<ProgressStructure, RuleError> {
        self.own(Rule::Case, ps)?;
        let args = RuleArgs::Case {
            ps: ps.step,
            target: target.clone(),
            cond: cond.clone(),
        };
        self.apply(Rule::Case, args, |_| {
            let i = find_target(ps, target)?;
            check_bool(cond)?;
            let pos = target.with_path(target.path().and(cond.clone()));
            let neg = target.with_path(target.path().and(negate(cond)));
            Ok((ps.labels.clone(), ps.source.clone(), replace_at(&ps.targets, i, [pos, neg])))
        })
    }

    /// Drop a target whose path condition is unsatisfiable.
    pub fn infeasible(
        &self,
        ps: &ProgressStructure,
        target: &SymState,
    ) -> Result<ProgressStructure, RuleError> {
        self.own(Rule::Infeasible, ps)?;
        let args = RuleArgs::Infeasible {
            ps: ps.step,
            target: target.clone(),
        };
        self.apply(Rule::Infeasible, args, |ctx| {
            let i = find_target(ps, target)?;
            match ctx.unsat(target.path().conjuncts()) {
                Ok(true) => {}
                Ok(false) => return Err(Violation::NotInfeasible("path is satisfiable".into())),
                Err(r) => return Err(Violation::NotInfeasible(r)),
            }
            Ok((ps.labels.clone(), ps.source.clone(), replace_at(&ps.targets, i, [])))
        })
    }

    /// Rename `from` to the fresh symbol `to` everywhere.
    pub fn rename(
        &self,
        ps: &ProgressStructure,
        from: &Symbol,
        to: &Symbol,
    ) -> Result<ProgressStructure, RuleError> {
        self.own(Rule::Rename, ps)?;
        let args = RuleArgs::Rename {
            ps: ps.step,
            from: from.clone(),
            to: to.clone(),
        };
        self.apply(Rule::Rename, args, |_| {
            if from.ty() != to.ty() {
                return Err(Violation::TypeMismatch(format!("{from} and {to} differ in type")));
            }
            let all = symbols_of_states(std::iter::once(&ps.source).chain(&ps.targets));
            if all.contains(to) || all.iter().any(|s| s.name() == to.name()) {
                return Err(Violation::SymbolNotFresh(to.to_string()));
            }
            let sub = [(from.clone(), SymExpr::atom(to.clone()))].into_iter().collect();
            let mut targets = Vec::new();
            for t in &ps.targets {
                push_unique(&mut targets, t.substitute(&sub));
            }
            Ok((ps.labels.clone(), ps.source.substitute(&sub), targets))
        })
    }

    /// Instantiate a bound symbol with an expression.
    pub fn subst(
        &self,
        ps: &ProgressStructure,
        sym: &Symbol,
        value: &SymExpr,
    ) -> Result<ProgressStructure, RuleError> {
        self.own(Rule::Subst, ps)?;
        let args = RuleArgs::Subst {
            ps: ps.step,
            symbol: sym.clone(),
            value: value.clone(),
        };
        self.apply(Rule::Subst, args, |_| {
            if !ps.source.symbols().contains(sym) {
                return Err(Violation::SubstOfFreeSymbol(sym.to_string()));
            }
            match value.type_of() {
                Ok(t) if t == sym.ty() => {}
                _ => {
                    return Err(Violation::TypeMismatch(format!(
                        "{value} does not have the type of {sym}"
                    )))
                }
            }
            let free = ps.free_symbols();
            if let Some(c) = value.atoms().into_iter().find(|a| free.contains(a)) {
                return Err(Violation::CapturesFreeSymbol(c.to_string()));
            }
            let sub = [(sym.clone(), value.clone())].into_iter().collect();
            let mut targets = Vec::new();
            for t in &ps.targets {
                push_unique(&mut targets, t.substitute(&sub));
            }
            Ok((ps.labels.clone(), ps.source.substitute(&sub), targets))
        })
    }

    /// Replace the value of `var` in a target by an expression that is equal
    /// under the path condition extended with the definition `fresh = def`.
    #[allow(clippy::too_many_arguments)]
    pub fn simplify(
        &self,
        ps: &ProgressStructure,
        target: &SymState,
        var: &Var,
        new_value: &SymExpr,
        fresh: &Symbol,
        def: &SymExpr,
    ) -> Result<ProgressStructure, RuleError> {
        self.own(Rule::Simplify, ps)?;
        let args = RuleArgs::Simplify {
            ps: ps.step,
            target: target.clone(),
            var: var.clone(),
            value: new_value.clone(),
            fresh: fresh.clone(),
            def: def.clone(),
        };
        self.apply(Rule::Simplify, args, |ctx| {
            let i = find_target(ps, target)?;
            let SymState::Running { pc, store, path } = target else {
                return Err(Violation::SideConditionFailed("target is a failed state".into()));
            };
            let old = store
                .get(var)
                .ok_or_else(|| Violation::SideConditionFailed(format!("{var} is not in the store")))?;
            if new_value.type_of().ok() != Some(var.ty()) {
                return Err(Violation::TypeMismatch(format!("{new_value} for {var}")));
            }
            if def.type_of().ok() != Some(fresh.ty()) {
                return Err(Violation::TypeMismatch(format!("{def} for {fresh}")));
            }
            if fresh.ty().is_mem() {
                return Err(Violation::TypeMismatch(format!("{fresh} must be a word")));
            }
            let target_syms = target.symbols();
            if ps.source.symbols().contains(fresh) || target_syms.contains(fresh) {
                return Err(Violation::SymbolNotFresh(fresh.to_string()));
            }
            if let Some(s) = def.atoms().into_iter().find(|s| !target_syms.contains(s)) {
                return Err(Violation::SideConditionFailed(format!(
                    "{s} in the definition does not occur in the target"
                )));
            }
            let defn = SymExpr::bin(crate::il::BinOp::Eq, SymExpr::atom(fresh.clone()), def.clone());
            let mut hyps = path.conjuncts().to_vec();
            hyps.push(defn.clone());
            let mut avoid = target_syms.clone();
            avoid.extend(new_value.atoms());
            avoid.insert(fresh.clone());
            let probe = probe_symbol(var.ty(), &avoid);
            let goal = rewrite::equality_goal(old, new_value, &probe)
                .ok_or_else(|| Violation::TypeMismatch("cannot compare values".into()))?;
            ctx.valid(&hyps, &goal).map_err(Violation::SideConditionFailed)?;
            let mut st = store.clone();
            st.insert(var.clone(), new_value.clone());
            let new = SymState::running(*pc, st, path.and(defn));
            Ok((ps.labels.clone(), ps.source.clone(), replace_at(&ps.targets, i, [new])))
        })
    }

    /// Strengthen the source and weaken one target.
    pub fn consequence(
        &self,
        ps: &ProgressStructure,
        new_source: &SymState,
        target: &SymState,
        new_target: &SymState,
    ) -> Result<ProgressStructure, RuleError> {
        self.own(Rule::Consequence, ps)?;
        let args = RuleArgs::Consequence {
            ps: ps.step,
            source: new_source.clone(),
            target: target.clone(),
            new_target: new_target.clone(),
        };
        self.apply(Rule::Consequence, args, |ctx| {
            let i = find_target(ps, target)?;
            let free = ps.free_symbols();
            if let Some(c) = new_source.symbols().into_iter().find(|s| free.contains(s)) {
                return Err(Violation::CapturesFreeSymbol(c.to_string()));
            }
            ctx.weaker(new_source, &ps.source)
                .map_err(|e| Violation::NotWeaker(format!("source: {e}")))?;
            ctx.weaker(target, new_target)
                .map_err(|e| Violation::NotWeaker(format!("target: {e}")))?;
            Ok((
                ps.labels.clone(),
                new_source.clone(),
                replace_at(&ps.targets, i, [new_target.clone()]),
            ))
        })
    }

    /// Add a conjunct entailed by the source path to a target.
    pub fn transfer(
        &self,
        ps: &ProgressStructure,
        target: &SymState,
        cond: &SymExpr,
    ) -> Result<ProgressStructure, RuleError> {
        self.own(Rule::Transfer, ps)?;
        let args = RuleArgs::Transfer {
            ps: ps.step,
            target: target.clone(),
            cond: cond.clone(),
        };
        self.apply(Rule::Transfer, args, |ctx| {
            let i = find_target(ps, target)?;
            check_bool(cond)?;
            let src = ps.source.path();
            let known = src.symbols();
            if let Some(s) = cond.atoms().into_iter().find(|s| !known.contains(s)) {
                return Err(Violation::SideConditionFailed(format!(
                    "{s} does not occur in the source path"
                )));
            }
            ctx.valid(src.conjuncts(), cond)
                .map_err(Violation::SideConditionFailed)?;
            let new = target.with_path(target.path().and(cond.clone()));
            Ok((ps.labels.clone(), ps.source.clone(), replace_at(&ps.targets, i, [new])))
        })
    }

    /// Compose `first` with `second`, whose source must be a target of `first`.
    pub fn sequence(
        &self,
        first: &ProgressStructure,
        second: &ProgressStructure,
    ) -> Result<ProgressStructure, RuleError> {
        self.own(Rule::Sequence, first)?;
        self.own(Rule::Sequence, second)?;
        let args = RuleArgs::Sequence {
            first: first.step,
            second: second.step,
        };
        self.apply(Rule::Sequence, args, |_| {
            let i = find_target(first, &second.source).map_err(|_| Violation::SourceNotATarget)?;
            let free = second.free_symbols();
            if let Some(c) = first.source.symbols().into_iter().find(|s| free.contains(s)) {
                return Err(Violation::CapturesFreeSymbol(c.to_string()));
            }
            let labels = first.labels.union(&second.labels).copied().collect();
            let targets = replace_at(&first.targets, i, second.targets.iter().cloned());
            Ok((labels, first.source.clone(), targets))
        })
    }

    /// Enlarge the label set. This rule is admissible rather than primitive
    /// and every use is visible in the certificate.
    pub fn widen(
        &self,
        ps: &ProgressStructure,
        labels: &BTreeSet<Label>,
    ) -> Result<ProgressStructure, RuleError> {
        self.own(Rule::Widen, ps)?;
        let args = RuleArgs::Widen {
            ps: ps.step,
            labels: labels.clone(),
        };
        self.apply(Rule::Widen, args, |_| {
            if !labels.is_superset(&ps.labels) {
                return Err(Violation::NotSuperset);
            }
            Ok((labels.clone(), ps.source.clone(), ps.targets.clone()))
        })
    }

    /// `n` non-branching steps from `s`, composed with `sequence`.
    pub fn symbstep_n(&self, s: &SymState, n: usize) -> Result<ProgressStructure, RuleError> {
        let derived = |e: RuleError| RuleError {
            rule: Rule::SymbstepN,
            violation: e.violation,
        };
        if n == 0 {
            return Err(RuleError {
                rule: Rule::SymbstepN,
                violation: Violation::SideConditionFailed("at least one step".into()),
            });
        }
        let mut acc: Option<ProgressStructure> = None;
        let mut cur = s.clone();
        for _ in 0..n {
            let Some(pc) = cur.pc() else {
                return Err(RuleError {
                    rule: Rule::SymbstepN,
                    violation: Violation::PcNotInL("⊥".into()),
                });
            };
            let next = self.symbstep(&cur, &BTreeSet::from([pc])).map_err(derived)?;
            if next.targets.len() != 1 {
                return Err(RuleError {
                    rule: Rule::SymbstepN,
                    violation: Violation::Branches(pc),
                });
            }
            cur = next.targets[0].clone();
            acc = Some(match acc {
                None => next,
                Some(a) => self.sequence(&a, &next).map_err(derived)?,
            });
        }
        Ok(acc.expect("n > 0"))
    }

    /// One step from `s` into two successors, one of which is infeasible;
    /// the survivor gets the path condition of `s` back.
    pub fn inf_branch(
        &self,
        s: &SymState,
        keep_positive: bool,
    ) -> Result<ProgressStructure, RuleError> {
        let derived = |e: RuleError| RuleError {
            rule: Rule::InfBranch,
            violation: e.violation,
        };
        let fail = |v| RuleError {
            rule: Rule::InfBranch,
            violation: v,
        };
        let pc = s.pc().ok_or_else(|| fail(Violation::PcNotInL("⊥".into())))?;
        let ps = self.symbstep(s, &BTreeSet::from([pc])).map_err(derived)?;
        if ps.targets.len() != 2 {
            return Err(fail(Violation::NeitherInfeasible(format!(
                "{} successors",
                ps.targets.len()
            ))));
        }
        let (keep, drop) = if keep_positive {
            (ps.targets[0].clone(), ps.targets[1].clone())
        } else {
            (ps.targets[1].clone(), ps.targets[0].clone())
        };
        let ps = self.infeasible(&ps, &drop).map_err(|e| match e.violation {
            Violation::NotInfeasible(r) => fail(Violation::NeitherInfeasible(r)),
            v => fail(v),
        })?;
        let restored = keep.with_path(s.path().clone());
        self.consequence(&ps, s, &keep, &restored).map_err(derived)
    }

    /// Records of this kernel's log needed to rebuild `ps`.
    pub fn certificate(&self, ps: &ProgressStructure) -> Result<Certificate, Violation> {
        if ps.kernel != self.id {
            return Err(Violation::ForeignStructure);
        }
        let log = self.log.lock().expect("certificate log");
        Ok(Certificate::from_log(
            &self.program_digest,
            self.program.name(),
            &log,
            ps.step,
        ))
    }

    /// Re-derive a certificate on this kernel, re-checking every side
    /// condition.
    pub fn replay(&self, cert: &Certificate) -> Result<ProgressStructure, ReplayError> {
        cert::replay(self, cert)
    }
}

/// Address symbol for memory equality goals, named apart from `avoid`.
fn probe_symbol(t: Type, avoid: &BTreeSet<Symbol>) -> Symbol {
    let w = match t {
        Type::Mem { addr, .. } => addr,
        Type::Word(w) => w,
    };
    let mut name = String::from("α#probe");
    while avoid.iter().any(|s| s.name() == name) {
        name.push('\'');
    }
    Symbol::new(name, Type::Word(w))
}
