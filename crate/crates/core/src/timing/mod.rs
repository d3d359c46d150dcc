//! Cycle-counter instrumentation and execution-time intervals.
//!
//! [`instrument`] adds a counter variable `c` that every statement bumps by
//! its cost. Exploring the instrumented program from a state with
//! `c ↦ α_c` yields targets whose counter is `α_c + k`, or a merged symbol
//! bounded relative to `α_c`; the hull of those is the BCET/WCET interval.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::Serialize;
use thiserror::Error;

use crate::engine::{counter_interval, explore, AnalysisReport, Counter, EngineError, ExploreOptions};
use crate::il::{
    is_valid_width, Cycles, Expr, Label, Program, ProgramParts, Stmt, Term, Type, TypeError, Var,
};
use crate::kernel::{program_digest, Kernel, ProgressStructure};
use crate::solver::Solver;
use crate::sym::{initial_store, sym_eval, PathCond, SymError, SymState, Symbol};

/// Name of the cycle counter variable.
pub const COUNTER: &str = "c";

#[derive(Debug, Error)]
pub enum TimingError {
    #[error("variable `{COUNTER}` is reserved for the cycle counter")]
    VariableCReserved,
    #[error("label {0} is too large to leave room for instrumentation labels")]
    LabelTooLarge(Label),
    #[error("invalid counter width {0}")]
    CounterWidth(u32),
    #[error("instrumented program does not typecheck: {0}")]
    Type(#[from] TypeError),
    #[error("precondition: {0}")]
    Precondition(#[from] SymError),
    #[error("target {0} has no recognizable counter bound")]
    UnboundedCounter(String),
    #[error("no target reaches an exit")]
    NoExit,
    #[error(transparent)]
    Engine(#[from] EngineError),
}

/// Cycle costs per statement class. Annotations in the program override
/// the classifier.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct CostModel {
    pub alu: u32,
    pub memory: u32,
    pub jump: u32,
    pub taken: u32,
    pub fall: u32,
    pub counter_width: u32,
}

impl Default for CostModel {
    fn default() -> Self {
        CostModel {
            alu: 1,
            memory: 2,
            jump: 3,
            taken: 3,
            fall: 1,
            counter_width: 32,
        }
    }
}

fn touches_memory(e: &Expr) -> bool {
    match e {
        Term::Load(..) | Term::Store(..) => true,
        Term::Const(_) | Term::Atom(_) => false,
        Term::Unary(_, a) => touches_memory(a),
        Term::Binary(_, a, b) => touches_memory(a) || touches_memory(b),
        Term::Ite(a, b, c) => touches_memory(a) || touches_memory(b) || touches_memory(c),
    }
}

impl CostModel {
    /// Cost of the statement at `l`; annotations take precedence.
    pub fn cost(&self, p: &Program, l: Label) -> Option<Cycles> {
        if let Some(c) = p.cycles().get(&l) {
            return Some(*c);
        }
        let fixed = |e: &Expr| {
            Cycles::Fixed(if touches_memory(e) {
                self.memory
            } else {
                self.alu
            })
        };
        Some(match p.stmt(l)? {
            Stmt::Assign(_, e) | Stmt::Assert(e) => fixed(e),
            Stmt::Jmp(_) => Cycles::Fixed(self.jump),
            Stmt::CJmp(..) => Cycles::Branch {
                taken: self.taken,
                fall: self.fall,
            },
        })
    }
}

/// An instrumented program with its counter.
#[derive(Clone, Debug)]
pub struct Instrumented {
    pub program: Program,
    pub counter: Counter,
    /// First label of the reserved range.
    pub base: Label,
}

impl Instrumented {
    /// Block label of original statement `l`.
    pub fn block(&self, l: Label) -> Label {
        self.base + 4 * l
    }

    /// Whether `l` belongs to the reserved instrumentation range.
    pub fn is_reserved(&self, l: Label) -> bool {
        l >= self.base
    }
}

/// Add the cycle counter. Label `l` becomes a jump into a block at
/// `B + 4l`, where `B` is half the label space:
///
/// ```text
/// B+4l:   c := c + k
/// B+4l+1: <statement>
/// B+4l+2: jmp l+1                  (assignments and assertions)
/// ```
///
/// A conditional jump whose edges cost differently adds the cheaper cost in
/// the block and routes the dearer edge through a trampoline at `B+4l+2`
/// that adds the difference and jumps on from `B+4l+3`. The extra jump at
/// `l` itself costs nothing.
pub fn instrument(p: &Program, cm: &CostModel) -> Result<Instrumented, TimingError> {
    if p.var(COUNTER).is_some() {
        return Err(TimingError::VariableCReserved);
    }
    if !is_valid_width(cm.counter_width) || cm.counter_width == 1 {
        return Err(TimingError::CounterWidth(cm.counter_width));
    }
    let lw = p.label_width();
    let base: Label = 1 << (lw - 1);
    let too_large = p
        .labels()
        .into_iter()
        .chain(p.exits().iter().copied())
        .chain([p.entry()])
        .find(|l| l.checked_mul(4).and_then(|x| x.checked_add(3)).is_none_or(|x| x >= base));
    if let Some(l) = too_large {
        return Err(TimingError::LabelTooLarge(l));
    }
    let cw = cm.counter_width;
    let c = Var::new(COUNTER, Type::Word(cw));
    let bump = |k: u32| {
        Stmt::Assign(
            c.clone(),
            Term::bin(crate::il::BinOp::Add, Term::atom(c.clone()), Term::word(cw, k as u64)),
        )
    };
    let lab = |l: Label| Term::word(lw, l);
    let parts = p.clone().into_parts();
    let mut stmts = BTreeMap::new();
    for (l, stmt) in &parts.stmts {
        let b = base + 4 * l;
        stmts.insert(*l, Stmt::Jmp(lab(b)));
        let cost = cm.cost(p, *l).expect("statement exists");
        match (stmt, cost) {
            (Stmt::CJmp(cond, t, f), Cycles::Branch { taken, fall }) if taken != fall => {
                stmts.insert(b, bump(taken.min(fall)));
                let tramp = lab(b + 2);
                let (t2, f2, dear) = if taken > fall {
                    (tramp, f.clone(), t.clone())
                } else {
                    (t.clone(), tramp, f.clone())
                };
                stmts.insert(b + 1, Stmt::CJmp(cond.clone(), t2, f2));
                stmts.insert(b + 2, bump(taken.abs_diff(fall)));
                stmts.insert(b + 3, Stmt::Jmp(dear));
            }
            (_, cost) => {
                let k = match cost {
                    Cycles::Fixed(k) => k,
                    // Equal edge costs, or a branch annotation on a
                    // straight-line statement: charge the taken cost.
                    Cycles::Branch { taken, .. } => taken,
                };
                stmts.insert(b, bump(k));
                stmts.insert(b + 1, stmt.clone());
                if matches!(stmt, Stmt::Assign(..) | Stmt::Assert(_)) {
                    stmts.insert(b + 2, Stmt::Jmp(lab(l + 1)));
                }
            }
        }
    }
    let mut decls = parts.decls.clone();
    decls.insert(COUNTER.to_string(), Type::Word(cw));
    let program = Program::new(ProgramParts {
        name: parts.name.clone(),
        label_width: lw,
        entry: parts.entry,
        exits: parts.exits.clone(),
        decls,
        stmts,
        cycles: BTreeMap::new(),
    })?;
    let origin = Symbol::initial(&c);
    Ok(Instrumented {
        program,
        counter: Counter { var: c, origin },
        base,
    })
}

/// Execution time in cycles relative to the counter's entry value.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct TimeInterval {
    pub lo: u64,
    pub hi: u64,
}

impl TimeInterval {
    pub fn point(k: u64) -> Self {
        TimeInterval { lo: k, hi: k }
    }

    pub fn hull(self, other: TimeInterval) -> TimeInterval {
        TimeInterval {
            lo: self.lo.min(other.lo),
            hi: self.hi.max(other.hi),
        }
    }

    pub fn contains(&self, k: u64) -> bool {
        self.lo <= k && k <= self.hi
    }
}

impl fmt::Display for TimeInterval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}]", self.lo, self.hi)
    }
}

/// Counter interval of one running target.
pub fn target_interval(t: &SymState, counter: &Counter) -> Result<TimeInterval, TimingError> {
    let unbounded = || TimingError::UnboundedCounter(t.to_string());
    let value = t
        .store()
        .and_then(|st| st.get(&counter.var))
        .ok_or_else(unbounded)?;
    let (lo, hi) = counter_interval(value, &counter.origin, t.path()).ok_or_else(unbounded)?;
    Ok(TimeInterval { lo, hi })
}

/// Hull of the counter intervals over all running targets. Failed targets
/// have no store and do not end at an exit, so they carry no timing.
pub fn extract_interval(
    ps: &ProgressStructure,
    counter: &Counter,
) -> Result<TimeInterval, TimingError> {
    let mut hull: Option<TimeInterval> = None;
    for t in ps.targets().iter().filter(|t| !t.is_error()) {
        let i = target_interval(t, counter)?;
        hull = Some(hull.map_or(i, |h| h.hull(i)));
    }
    hull.ok_or(TimingError::NoExit)
}

#[derive(Clone, Debug)]
pub struct WcetReport {
    pub program_digest: String,
    pub entry: Label,
    pub exits: BTreeSet<Label>,
    pub interval: TimeInterval,
    /// One interval per exit target, in target order.
    pub per_target: Vec<(Label, TimeInterval)>,
    pub failed_targets: usize,
    pub analysis: AnalysisReport,
}

impl fmt::Display for WcetReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "program {}", self.program_digest)?;
        let exits: Vec<String> = self.exits.iter().map(|l| l.to_string()).collect();
        writeln!(f, "entry {}", self.entry)?;
        writeln!(f, "exit {}", exits.join(","))?;
        writeln!(f, "interval {} {}", self.interval.lo, self.interval.hi)?;
        for (l, i) in &self.per_target {
            writeln!(f, "path {l} {} {}", i.lo, i.hi)?;
        }
        if self.failed_targets > 0 {
            writeln!(f, "failed {}", self.failed_targets)?;
        }
        Ok(())
    }
}

/// Kernel over an instrumented program.
pub fn timing_kernel(inst: &Instrumented, solver: Solver) -> Kernel {
    Kernel::new(inst.program.clone(), solver)
}

/// Explore the instrumented program from `entry` until an exit label and
/// report the cycle interval. Every instrumented label except the exits
/// is inside the fragment; `pre` is over the original variables.
pub fn analyze_wcet(
    k: &Kernel,
    inst: &Instrumented,
    entry: Label,
    exits: &BTreeSet<Label>,
    pre: Option<&Expr>,
    opts: &ExploreOptions,
) -> Result<WcetReport, TimingError> {
    let p = &inst.program;
    let d0 = initial_store(p.vars());
    let path = match pre {
        Some(e) => PathCond::top().and(sym_eval(e, &d0)?),
        None => PathCond::top(),
    };
    let start = SymState::running(entry, d0, path);
    let labels: BTreeSet<Label> = p.labels().into_iter().filter(|l| !exits.contains(l)).collect();
    let opts = ExploreOptions {
        counter: Some(inst.counter.clone()),
        ..opts.clone()
    };
    let analysis = explore(k, &start, &labels, &opts)?;
    let ps = &analysis.structure;
    let mut per_target = Vec::new();
    for t in ps.targets() {
        if let Some(l) = t.pc() {
            per_target.push((l, target_interval(t, &inst.counter)?));
        }
    }
    let interval = extract_interval(ps, &inst.counter)?;
    Ok(WcetReport {
        program_digest: program_digest(p),
        entry,
        exits: exits.clone(),
        interval,
        per_target,
        failed_targets: ps.targets().iter().filter(|t| t.is_error()).count(),
        analysis,
    })
}
