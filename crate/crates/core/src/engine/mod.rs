//! Untrusted automation on top of the kernel: worklist exploration, memory
//! simplification, forgetting, merging and instantiation. Nothing here can
//! produce a structure except through kernel rules.

mod cfg;
mod merge;
mod simplify;

use std::collections::{BTreeMap, BTreeSet};
use std::time::{Duration, Instant};

use thiserror::Error;

pub use cfg::{join_points, successors, topological_order};
pub use merge::{counter_interval, instantiate, lower_bound, merge_targets, upper_bound, Counter};
pub use simplify::{
    forget_subterm, forget_value, has_memory_redex, replace_value, simplify_memory, Rewritten,
};

use crate::il::{Atom, Label, Term, Var};
use crate::kernel::{Certificate, Kernel, ProgressStructure, RuleError};
use crate::solver::SolverResult;
use crate::sym::{rewrite, SymState};

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum EngineError {
    #[error(transparent)]
    Rule(#[from] RuleError),
    #[error("cannot decide aliasing of {0}")]
    CannotDecideAliasing(String),
    #[error("cannot align targets: {0}")]
    CannotAlign(String),
    #[error("targets at different labels {0} and {1}")]
    DifferentLabels(String, String),
    #[error("no such target: {0}")]
    NoSuchTarget(String),
    #[error("no such variable: {0}")]
    NoSuchVariable(String),
    #[error("cannot forget: {0}")]
    Forget(String),
    #[error("start state is not inside the fragment")]
    NotInFragment,
    #[error("solver could not decide: {0}")]
    SolverUnknown(String),
    #[error("budget exhausted: {reason}")]
    BudgetExhausted {
        reason: String,
        report: Box<AnalysisReport>,
    },
}

/// Where targets at the same label are merged.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub enum MergePolicy {
    None,
    AtLabels(BTreeSet<Label>),
    /// Labels with at least two incoming edges.
    #[default]
    JoinPoints,
    Aggressive,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExploreOptions {
    /// Maximum number of targets at any time.
    pub max_paths: usize,
    /// Maximum number of symbolic steps.
    pub max_steps: usize,
    pub merge_policy: MergePolicy,
    pub forget_vars: BTreeSet<Var>,
    pub simplify_memory: bool,
    /// Rewrite word values to normal form, e.g. `(α - 4) + 4` to `α`.
    pub normalize_values: bool,
    /// A label may be stepped from at most `unroll_bound + 1` times along
    /// any one path.
    pub unroll_bound: usize,
    pub counter: Option<Counter>,
    /// Threads for feasibility checks of branches.
    pub jobs: usize,
}

impl Default for ExploreOptions {
    fn default() -> Self {
        ExploreOptions {
            max_paths: 64,
            max_steps: 10_000,
            merge_policy: MergePolicy::default(),
            forget_vars: BTreeSet::new(),
            simplify_memory: true,
            normalize_values: true,
            unroll_bound: 16,
            counter: None,
            jobs: 1,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Stats {
    pub steps: usize,
    pub paths: usize,
    pub pruned: usize,
    pub merges: usize,
    pub solver_queries: u64,
    pub wall_time: Duration,
}

#[derive(Clone, Debug)]
pub struct AnalysisReport {
    pub structure: ProgressStructure,
    pub certificate: Certificate,
    pub stats: Stats,
}

impl PartialEq for AnalysisReport {
    fn eq(&self, other: &Self) -> bool {
        self.structure == other.structure && self.certificate == other.certificate
    }
}

impl Eq for AnalysisReport {}

struct Explorer<'a> {
    k: &'a Kernel,
    labels: &'a BTreeSet<Label>,
    opts: &'a ExploreOptions,
    order: BTreeMap<Label, usize>,
    merge_at: BTreeSet<Label>,
    /// Per-label step counts of the path that led to each open target.
    visits: Vec<(SymState, BTreeMap<Label, usize>)>,
    stats: Stats,
}

impl Explorer<'_> {
    fn is_open(&self, t: &SymState) -> bool {
        matches!(t.pc(), Some(l) if self.labels.contains(&l))
    }

    fn priority(&self, t: &SymState) -> (usize, Label) {
        let l = t.pc().expect("open targets run");
        (self.order.get(&l).copied().unwrap_or(usize::MAX), l)
    }

    /// Prune, clean up and simplify the successors produced by one step.
    fn settle(
        &mut self,
        mut ps: ProgressStructure,
        fresh: Vec<SymState>,
    ) -> Result<(ProgressStructure, Vec<SymState>), EngineError> {
        let mut settled = Vec::new();
        let mut live = fresh.clone();
        if fresh.len() >= 2 {
            let verdicts = self.unsat_flags(&fresh);
            live.clear();
            for (t, unsat) in fresh.into_iter().zip(verdicts) {
                if unsat? {
                    ps = self.k.infeasible(&ps, &t)?;
                    self.stats.pruned += 1;
                } else {
                    live.push(t);
                }
            }
            self.stats.paths += live.len().saturating_sub(1);
        }
        for t in live {
            let mut cur = t.clone();
            if cur.path().conjuncts().iter().any(|c| c.is_true()) {
                let kept = cur.path().conjuncts().iter().filter(|c| !c.is_true()).cloned();
                let clean = cur.with_path(crate::sym::PathCond::from_conjuncts(kept));
                ps = self.k.consequence(&ps, &ps.source().clone(), &cur, &clean)?;
                cur = clean;
            }
            let Some(store) = cur.store().cloned() else {
                settled.push(cur);
                continue;
            };
            if self.opts.simplify_memory {
                for (x, v) in &store {
                    if has_memory_redex(v) {
                        match simplify_memory(self.k, &ps, &cur, x) {
                            Ok((p, c)) => {
                                ps = p;
                                cur = c;
                            }
                            Err(EngineError::CannotDecideAliasing(_)) => {}
                            Err(e) => return Err(e),
                        }
                    }
                }
            }
            if self.opts.normalize_values {
                for (x, v) in &store {
                    if x.ty().is_mem() {
                        continue;
                    }
                    let n = rewrite::normalize(v);
                    if n != *v {
                        let (p, c) = replace_value(self.k, &ps, &cur, x, &n)?;
                        ps = p;
                        cur = c;
                    }
                }
            }
            for x in &self.opts.forget_vars {
                let atomic = matches!(store.get(x), Some(Term::Atom(_)) | None);
                if !atomic && !x.ty().is_mem() {
                    let (p, c, _) = forget_value(self.k, &ps, &cur, x)?;
                    ps = p;
                    cur = c;
                }
            }
            settled.push(cur);
        }
        Ok((ps, settled))
    }

    /// Remove and return the step counts recorded for `t`.
    fn take_history(&mut self, t: &SymState) -> BTreeMap<Label, usize> {
        let mut h = BTreeMap::new();
        self.visits.retain(|(s, counts)| {
            if s != t {
                return true;
            }
            for (l, n) in counts {
                let e = h.entry(*l).or_insert(0);
                *e = (*e).max(*n);
            }
            false
        });
        h
    }

    /// Unsatisfiability of each state's path, checked in parallel when
    /// configured. The kernel re-checks every positive answer.
    fn unsat_flags(&self, ts: &[SymState]) -> Vec<Result<bool, EngineError>> {
        let solver = self.k.solver();
        let check = |t: &SymState| match solver.check_sat(t.path().conjuncts()) {
            SolverResult::Unsat => Ok(true),
            SolverResult::Sat(_) => Ok(false),
            SolverResult::Unknown(r) => Err(EngineError::SolverUnknown(r)),
        };
        if self.opts.jobs <= 1 {
            return ts.iter().map(check).collect();
        }
        let chunk = ts.len().div_ceil(self.opts.jobs);
        std::thread::scope(|sc| {
            let handles: Vec<_> = ts
                .chunks(chunk)
                .map(|part| sc.spawn(move || part.iter().map(check).collect::<Vec<_>>()))
                .collect();
            handles
                .into_iter()
                .flat_map(|h| h.join().expect("feasibility worker"))
                .collect()
        })
    }

    fn exhausted(&self, ps: &ProgressStructure, start: Instant, reason: String) -> EngineError {
        match report(self.k, ps, self.stats.clone(), start) {
            Ok(r) => EngineError::BudgetExhausted {
                reason,
                report: Box::new(r),
            },
            Err(e) => e,
        }
    }
}

fn report(
    k: &Kernel,
    ps: &ProgressStructure,
    mut stats: Stats,
    start: Instant,
) -> Result<AnalysisReport, EngineError> {
    stats.wall_time = start.elapsed();
    let certificate = k.certificate(ps).map_err(|v| {
        EngineError::Rule(RuleError {
            rule: crate::kernel::Rule::Sequence,
            violation: v,
        })
    })?;
    Ok(AnalysisReport {
        structure: ps.clone(),
        certificate,
        stats,
    })
}

/// Explore from `start` inside `labels` until every target has left the
/// fragment or failed.
pub fn explore(
    k: &Kernel,
    start: &SymState,
    labels: &BTreeSet<Label>,
    opts: &ExploreOptions,
) -> Result<AnalysisReport, EngineError> {
    let clock = Instant::now();
    let queries0 = k.solver().query_count();
    let entry = match start.pc() {
        Some(l) if labels.contains(&l) => l,
        _ => return Err(EngineError::NotInFragment),
    };
    let p = k.program();
    let order = topological_order(p, entry);
    let merge_at = match &opts.merge_policy {
        MergePolicy::None => BTreeSet::new(),
        MergePolicy::AtLabels(ls) => ls.clone(),
        MergePolicy::JoinPoints => join_points(p, entry),
        MergePolicy::Aggressive => labels.clone(),
    };
    let mut ex = Explorer {
        k,
        labels,
        opts,
        order,
        merge_at,
        visits: Vec::new(),
        stats: Stats {
            paths: 1,
            ..Stats::default()
        },
    };
    let first = k.symbstep(start, &BTreeSet::from([entry]))?;
    ex.stats.steps = 1;
    let fresh = first.targets().to_vec();
    let (mut ps, settled) = ex.settle(first, fresh)?;
    let h = BTreeMap::from([(entry, 1)]);
    ex.visits.extend(settled.into_iter().map(|s| (s, h.clone())));
    loop {
        ex.stats.solver_queries = k.solver().query_count() - queries0;
        if ps.targets().len() > opts.max_paths {
            let reason = format!("more than {} paths", opts.max_paths);
            return Err(ex.exhausted(&ps, clock, reason));
        }
        let next = ps
            .targets()
            .iter()
            .filter(|t| ex.is_open(t))
            .min_by_key(|t| ex.priority(t))
            .cloned();
        let Some(mut t) = next else {
            break;
        };
        let l = t.pc().expect("open targets run");
        let mut history = ex.take_history(&t);
        if ex.merge_at.contains(&l) {
            let others: Vec<SymState> = ps
                .targets()
                .iter()
                .filter(|o| o.pc() == Some(l) && **o != t)
                .cloned()
                .collect();
            for o in others {
                for (l, n) in ex.take_history(&o) {
                    let e = history.entry(l).or_insert(0);
                    *e = (*e).max(n);
                }
                let (merged_ps, merged) = merge_targets(k, &ps, &t, &o, opts.counter.as_ref())?;
                ps = merged_ps;
                t = merged;
                ex.stats.merges += 1;
            }
        }
        let visits = history.entry(l).or_insert(0);
        *visits += 1;
        if *visits > opts.unroll_bound + 1 {
            let reason = format!("label {l} visited more than {} times", opts.unroll_bound + 1);
            return Err(ex.exhausted(&ps, clock, reason));
        }
        ex.stats.steps += 1;
        if ex.stats.steps > opts.max_steps {
            let reason = format!("more than {} steps", opts.max_steps);
            return Err(ex.exhausted(&ps, clock, reason));
        }
        let step = k.symbstep(&t, &BTreeSet::from([l]))?;
        let fresh = step.targets().to_vec();
        ps = k.sequence(&ps, &step)?;
        let (next_ps, settled) = ex.settle(ps, fresh)?;
        ps = next_ps;
        ex.visits.extend(settled.into_iter().map(|s| (s, history.clone())));
    }
    ex.stats.solver_queries = k.solver().query_count() - queries0;
    report(k, &ps, ex.stats, clock)
}
