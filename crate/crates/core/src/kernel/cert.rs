//! Certificates: the rule applications behind a structure, as JSON lines.
//!
//! The first line is a header naming the program by digest. Every further
//! line is one [`Record`]. Records refer to earlier structures by step id,
//! and carry the solver queries of the application together with the
//! digest of the structure it produced.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Kernel, ProgressStructure, Rule, RuleError};
use crate::il::{Label, Var};
use crate::sym::{SymExpr, SymState, Symbol};

pub const CERT_FORMAT: &str = "symexec-certificate";
pub const CERT_VERSION: u32 = 1;

/// Outcome of one recorded solver query.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Answer {
    Sat,
    Unsat,
    Valid,
    Invalid,
    Unknown,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Query {
    Sat {
        conjuncts: Vec<SymExpr>,
        answer: Answer,
    },
    Valid {
        hyps: Vec<SymExpr>,
        goal: SymExpr,
        answer: Answer,
    },
}

/// Arguments of a rule application. `ps`, `first` and `second` are step ids
/// of earlier records.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum RuleArgs {
    Symbstep {
        source: SymState,
        labels: BTreeSet<Label>,
        cap: usize,
    },
    Case {
        ps: usize,
        target: SymState,
        cond: SymExpr,
    },
    Infeasible {
        ps: usize,
        target: SymState,
    },
    Rename {
        ps: usize,
        from: Symbol,
        to: Symbol,
    },
    Subst {
        ps: usize,
        symbol: Symbol,
        value: SymExpr,
    },
    Simplify {
        ps: usize,
        target: SymState,
        var: Var,
        value: SymExpr,
        fresh: Symbol,
        def: SymExpr,
    },
    Consequence {
        ps: usize,
        source: SymState,
        target: SymState,
        new_target: SymState,
    },
    Transfer {
        ps: usize,
        target: SymState,
        cond: SymExpr,
    },
    Sequence {
        first: usize,
        second: usize,
    },
    Widen {
        ps: usize,
        labels: BTreeSet<Label>,
    },
}

impl RuleArgs {
    pub fn rule(&self) -> Rule {
        match self {
            RuleArgs::Symbstep { .. } => Rule::Symbstep,
            RuleArgs::Case { .. } => Rule::Case,
            RuleArgs::Infeasible { .. } => Rule::Infeasible,
            RuleArgs::Rename { .. } => Rule::Rename,
            RuleArgs::Subst { .. } => Rule::Subst,
            RuleArgs::Simplify { .. } => Rule::Simplify,
            RuleArgs::Consequence { .. } => Rule::Consequence,
            RuleArgs::Transfer { .. } => Rule::Transfer,
            RuleArgs::Sequence { .. } => Rule::Sequence,
            RuleArgs::Widen { .. } => Rule::Widen,
        }
    }

    /// Step ids this application depends on.
    pub fn premises(&self) -> Vec<usize> {
        match self {
            RuleArgs::Symbstep { .. } => vec![],
            RuleArgs::Sequence { first, second } => vec![*first, *second],
            RuleArgs::Case { ps, .. }
            | RuleArgs::Infeasible { ps, .. }
            | RuleArgs::Rename { ps, .. }
            | RuleArgs::Subst { ps, .. }
            | RuleArgs::Simplify { ps, .. }
            | RuleArgs::Consequence { ps, .. }
            | RuleArgs::Transfer { ps, .. }
            | RuleArgs::Widen { ps, .. } => vec![*ps],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Record {
    pub step: usize,
    #[serde(flatten)]
    pub args: RuleArgs,
    pub queries: Vec<Query>,
    pub digest: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    program: String,
    program_digest: String,
    result: usize,
}

/// The derivation of one structure.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Certificate {
    program: String,
    program_digest: String,
    result: usize,
    records: Vec<Record>,
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum ReplayError {
    #[error("line {line}: {msg}")]
    Format { line: usize, msg: String },
    #[error("line {line} is not in canonical form")]
    NotCanonical { line: usize },
    #[error("certificate is for program {found}, not {expected}")]
    ProgramMismatch { expected: String, found: String },
    #[error("step {step} refers to unknown step {missing}")]
    UnknownStep { step: usize, missing: usize },
    #[error("step {step}: {error}")]
    SideConditionFailed { step: usize, error: RuleError },
    #[error("step {step}: {reason}")]
    ReplayMismatch { step: usize, reason: String },
    #[error("result step {0} is not derived by the certificate")]
    MissingResult(usize),
}

impl Certificate {
    /// The records among `log` that `result` depends on, in order.
    pub(super) fn from_log(digest: &str, name: &str, log: &[Record], result: usize) -> Self {
        let mut needed = BTreeSet::from([result]);
        for r in log[..=result].iter().rev() {
            if needed.contains(&r.step) {
                needed.extend(r.args.premises());
            }
        }
        Certificate {
            program: name.to_string(),
            program_digest: digest.to_string(),
            result,
            records: log.iter().filter(|r| needed.contains(&r.step)).cloned().collect(),
        }
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn program_digest(&self) -> &str {
        &self.program_digest
    }

    /// Name of the program the certificate was produced for.
    pub fn program(&self) -> &str {
        &self.program
    }

    pub fn result_step(&self) -> usize {
        self.result
    }

    /// Steps that apply the admissible widening rule.
    pub fn widenings(&self) -> Vec<usize> {
        self.records
            .iter()
            .filter(|r| r.args.rule() == Rule::Widen)
            .map(|r| r.step)
            .collect()
    }

    /// Total number of recorded solver queries.
    pub fn query_count(&self) -> usize {
        self.records.iter().map(|r| r.queries.len()).sum()
    }

    pub fn to_jsonl(&self) -> String {
        let header = Header {
            format: CERT_FORMAT.into(),
            version: CERT_VERSION,
            program: self.program.clone(),
            program_digest: self.program_digest.clone(),
            result: self.result,
        };
        let mut out = serde_json::to_string(&header).expect("header serializes");
        out.push('\n');
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    /// Parse a certificate, rejecting any line that is not byte-identical
    /// to the canonical serialization of what it parses to.
    pub fn from_jsonl(text: &str) -> Result<Self, ReplayError> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, first) = lines.next().ok_or(ReplayError::Format {
            line: 1,
            msg: "empty certificate".into(),
        })?;
        let header: Header = serde_json::from_str(first).map_err(|e| ReplayError::Format {
            line: 1,
            msg: e.to_string(),
        })?;
        if header.format != CERT_FORMAT || header.version != CERT_VERSION {
            return Err(ReplayError::Format {
                line: 1,
                msg: format!("unsupported format {} {}", header.format, header.version),
            });
        }
        if serde_json::to_string(&header).expect("header serializes") != first {
            return Err(ReplayError::NotCanonical { line: 1 });
        }
        let mut records = Vec::new();
        for (i, l) in lines {
            let r: Record = serde_json::from_str(l).map_err(|e| ReplayError::Format {
                line: i + 1,
                msg: e.to_string(),
            })?;
            if serde_json::to_string(&r).expect("record serializes") != l {
                return Err(ReplayError::NotCanonical { line: i + 1 });
            }
            if records.last().is_some_and(|p: &Record| p.step >= r.step) {
                return Err(ReplayError::Format {
                    line: i + 1,
                    msg: format!("step {} out of order", r.step),
                });
            }
            records.push(r);
        }
        Ok(Certificate {
            program: header.program,
            program_digest: header.program_digest,
            result: header.result,
            records,
        })
    }
}

pub(super) fn replay(k: &Kernel, cert: &Certificate) -> Result<ProgressStructure, ReplayError> {
    if cert.program_digest != k.program_digest {
        return Err(ReplayError::ProgramMismatch {
            expected: k.program_digest.clone(),
            found: cert.program_digest.clone(),
        });
    }
    if cert.program != k.program.name() {
        return Err(ReplayError::ProgramMismatch {
            expected: k.program.name().to_string(),
            found: cert.program.clone(),
        });
    }
    let mut built: BTreeMap<usize, ProgressStructure> = BTreeMap::new();
    for r in &cert.records {
        let step = r.step;
        let get = |id: &usize| {
            if *id >= step {
                return Err(ReplayError::UnknownStep { step, missing: *id });
            }
            built
                .get(id)
                .ok_or(ReplayError::UnknownStep { step, missing: *id })
        };
        let res = match &r.args {
            RuleArgs::Symbstep { source, labels, cap } => k.symbstep_capped(source, labels, *cap),
            RuleArgs::Case { ps, target, cond } => k.case(get(ps)?, target, cond),
            RuleArgs::Infeasible { ps, target } => k.infeasible(get(ps)?, target),
            RuleArgs::Rename { ps, from, to } => k.rename(get(ps)?, from, to),
            RuleArgs::Subst { ps, symbol, value } => k.subst(get(ps)?, symbol, value),
            RuleArgs::Simplify {
                ps,
                target,
                var,
                value,
                fresh,
                def,
            } => k.simplify(get(ps)?, target, var, value, fresh, def),
            RuleArgs::Consequence {
                ps,
                source,
                target,
                new_target,
            } => k.consequence(get(ps)?, source, target, new_target),
            RuleArgs::Transfer { ps, target, cond } => k.transfer(get(ps)?, target, cond),
            RuleArgs::Sequence { first, second } => k.sequence(get(first)?, get(second)?),
            RuleArgs::Widen { ps, labels } => k.widen(get(ps)?, labels),
        };
        let ps = res.map_err(|error| ReplayError::SideConditionFailed { step, error })?;
        let log = k.log.lock().expect("certificate log");
        let fresh = &log[ps.step];
        if fresh.queries != r.queries {
            return Err(ReplayError::ReplayMismatch {
                step,
                reason: format!(
                    "recorded {} queries, replay issued {} with different content or answers",
                    r.queries.len(),
                    fresh.queries.len()
                ),
            });
        }
        if fresh.digest != r.digest {
            return Err(ReplayError::ReplayMismatch {
                step,
                reason: "structure digest differs".into(),
            });
        }
        drop(log);
        built.insert(step, ps);
    }
    built
        .remove(&cert.result)
        .ok_or(ReplayError::MissingResult(cert.result))
}
