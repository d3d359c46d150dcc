use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::term::{Atom, Term};
use super::value::{is_valid_width, mask, Type};

/// Program labels are words of the program's label width.
pub type Label = u64;

/// A program variable. Equality is by name and type.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Var {
    name: Arc<str>,
    ty: Type,
}

impl Var {
    pub fn new(name: impl AsRef<str>, ty: Type) -> Self {
        let name = name.as_ref();
        assert!(!name.is_empty(), "variable names are nonempty");
        Var {
            name: Arc::from(name),
            ty,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }
}

impl Atom for Var {
    fn ty(&self) -> Type {
        self.ty
    }
}

impl fmt::Display for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name)
    }
}

/// Program expression.
pub type Expr = Term<Var>;

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Stmt {
    Assign(Var, Expr),
    Assert(Expr),
    Jmp(Expr),
    CJmp(Expr, Expr, Expr),
}

/// Cycle cost annotation attached to a statement.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Cycles {
    Fixed(u32),
    Branch { taken: u32, fall: u32 },
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
#[error("type error at label {label}: {reason}")]
pub struct TypeError {
    pub label: Label,
    pub reason: String,
}

/// Variable typing of a program.
pub type Typing = BTreeMap<String, Type>;

/// A checked program. Construction runs the type checker, so every
/// `Program` value is well-typed.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Program {
    name: String,
    label_width: u32,
    entry: Label,
    exits: BTreeSet<Label>,
    vars: Typing,
    stmts: BTreeMap<Label, Stmt>,
    cycles: BTreeMap<Label, Cycles>,
}

/// Unchecked program parts.
#[derive(Clone, Debug, Default)]
pub struct ProgramParts {
    pub name: String,
    pub label_width: u32,
    pub entry: Label,
    pub exits: BTreeSet<Label>,
    pub decls: Typing,
    pub stmts: BTreeMap<Label, Stmt>,
    pub cycles: BTreeMap<Label, Cycles>,
}

impl ProgramParts {
    pub fn new(name: impl Into<String>) -> Self {
        ProgramParts {
            name: name.into(),
            label_width: 32,
            ..Default::default()
        }
    }

    pub fn stmt(mut self, label: Label, stmt: Stmt) -> Self {
        self.stmts.insert(label, stmt);
        self
    }

    pub fn check(self) -> Result<Program, TypeError> {
        Program::new(self)
    }
}

impl Program {
    pub fn new(parts: ProgramParts) -> Result<Program, TypeError> {
        let ProgramParts {
            name,
            label_width,
            entry,
            exits,
            decls,
            stmts,
            cycles,
        } = parts;
        if !is_valid_width(label_width) {
            return Err(TypeError {
                label: entry,
                reason: format!("invalid label width {label_width}"),
            });
        }
        let vars = typecheck_program(label_width, &decls, &stmts, &exits)?;
        let lmask = mask(label_width);
        for l in stmts
            .keys()
            .chain(exits.iter())
            .chain(std::iter::once(&entry))
        {
            if *l > lmask {
                return Err(TypeError {
                    label: *l,
                    reason: format!("label does not fit in w{label_width}"),
                });
            }
        }
        if !stmts.is_empty() && !stmts.contains_key(&entry) {
            return Err(TypeError {
                label: entry,
                reason: "entry label has no statement".into(),
            });
        }
        for (l, c) in &cycles {
            if !stmts.contains_key(l) {
                return Err(TypeError {
                    label: *l,
                    reason: "cycle annotation on a missing statement".into(),
                });
            }
            if matches!(c, Cycles::Branch { .. }) && !matches!(stmts[l], Stmt::CJmp(..)) {
                return Err(TypeError {
                    label: *l,
                    reason: "taken/fall annotation on a non-branch".into(),
                });
            }
        }
        Ok(Program {
            name,
            label_width,
            entry,
            exits,
            vars,
            stmts,
            cycles,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn label_width(&self) -> u32 {
        self.label_width
    }

    pub fn entry(&self) -> Label {
        self.entry
    }

    pub fn exits(&self) -> &BTreeSet<Label> {
        &self.exits
    }

    pub fn typing(&self) -> &Typing {
        &self.vars
    }

    pub fn vars(&self) -> impl Iterator<Item = Var> + '_ {
        self.vars.iter().map(|(n, t)| Var::new(n, *t))
    }

    pub fn var(&self, name: &str) -> Option<Var> {
        self.vars.get(name).map(|t| Var::new(name, *t))
    }

    pub fn stmts(&self) -> &BTreeMap<Label, Stmt> {
        &self.stmts
    }

    pub fn stmt(&self, l: Label) -> Option<&Stmt> {
        self.stmts.get(&l)
    }

    pub fn cycles(&self) -> &BTreeMap<Label, Cycles> {
        &self.cycles
    }

    pub fn labels(&self) -> BTreeSet<Label> {
        self.stmts.keys().copied().collect()
    }

    /// Fall-through successor of a label, wrapping at the label width.
    pub fn next_label(&self, l: Label) -> Label {
        l.wrapping_add(1) & mask(self.label_width)
    }

    /// Back into editable parts, e.g. for program transformations.
    pub fn into_parts(self) -> ProgramParts {
        ProgramParts {
            name: self.name,
            label_width: self.label_width,
            entry: self.entry,
            exits: self.exits,
            decls: self.vars,
            stmts: self.stmts,
            cycles: self.cycles,
        }
    }
}

/// Compute the unique variable typing of a program or report the first
/// ill-typed statement.
pub fn typecheck_program(
    label_width: u32,
    decls: &Typing,
    stmts: &BTreeMap<Label, Stmt>,
    exits: &BTreeSet<Label>,
) -> Result<Typing, TypeError> {
    let mut typing = Typing::new();
    for (name, ty) in decls {
        if !ty.is_well_formed() {
            return Err(TypeError {
                label: 0,
                reason: format!("variable {name} has invalid type {ty}"),
            });
        }
        typing.insert(name.clone(), *ty);
    }
    let lmask = mask(label_width);
    for (&l, stmt) in stmts {
        let err = |reason: String| TypeError { label: l, reason };
        let mut record = |v: &Var| -> Result<(), TypeError> {
            if !v.ty().is_well_formed() {
                return Err(err(format!("variable {v} has invalid type {}", v.ty())));
            }
            match typing.get(v.name()) {
                Some(t) if *t != v.ty() => Err(err(format!(
                    "variable {v} used at {} but typed {t}",
                    v.ty()
                ))),
                Some(_) => Ok(()),
                None => {
                    typing.insert(v.name().to_string(), v.ty());
                    Ok(())
                }
            }
        };
        let mut check_expr = |e: &Expr, want: Option<Type>, what: &str| -> Result<(), TypeError> {
            let mut res = Ok(());
            e.for_each_atom(&mut |v| {
                if res.is_ok() {
                    res = record(v);
                }
            });
            res?;
            let t = e.type_of().map_err(|te| err(te.0))?;
            if let Some(w) = want {
                if t != w {
                    return Err(err(format!("{what} must have type {w}, found {t}")));
                }
            }
            Ok(())
        };
        match stmt {
            Stmt::Assign(x, e) => {
                check_expr(e, Some(x.ty()), &format!("value assigned to {x}"))?;
                check_expr(&Term::Atom(x.clone()), None, "assigned variable")?;
            }
            Stmt::Assert(e) => check_expr(e, Some(Type::BOOL), "assertion")?,
            Stmt::Jmp(t) => check_expr(t, Some(Type::Word(label_width)), "jump target")?,
            Stmt::CJmp(c, t, f) => {
                check_expr(c, Some(Type::BOOL), "branch condition")?;
                check_expr(t, Some(Type::Word(label_width)), "jump target")?;
                check_expr(f, Some(Type::Word(label_width)), "jump target")?;
            }
        }
        if matches!(stmt, Stmt::Assign(..) | Stmt::Assert(..)) {
            let next = l.wrapping_add(1) & lmask;
            if !stmts.contains_key(&next) && !exits.contains(&next) {
                return Err(err(format!(
                    "fall-through label {next} is neither a statement nor an exit"
                )));
            }
        }
    }
    Ok(typing)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::il::term::BinOp;

    fn w32(n: &str) -> Var {
        Var::new(n, Type::Word(32))
    }

    #[test]
    fn assertion_must_be_boolean() {
        let r0 = w32("R0");
        let bad = Stmt::Assert(Term::bin(BinOp::Add, Term::atom(r0), Term::word(32, 1)));
        let mut p = ProgramParts::new("bad").stmt(1, bad);
        p.entry = 1;
        p.exits.insert(2);
        let e = p.check().unwrap_err();
        assert_eq!(e.label, 1);
        assert!(e.reason.contains("assertion"), "{}", e.reason);
    }

    #[test]
    fn empty_program_has_empty_typing() {
        let p = ProgramParts::new("empty").check().unwrap();
        assert!(p.typing().is_empty());
    }

    #[test]
    fn conflicting_variable_types_rejected() {
        let a = Stmt::Assign(w32("x"), Term::word(32, 0));
        let b = Stmt::Assign(Var::new("x", Type::Word(8)), Term::word(8, 0));
        let mut p = ProgramParts::new("p").stmt(1, a).stmt(2, b);
        p.entry = 1;
        p.exits.insert(3);
        assert!(p.check().is_err());
    }

    #[test]
    fn fallthrough_must_exist() {
        let a = Stmt::Assign(w32("x"), Term::word(32, 0));
        let mut p = ProgramParts::new("p").stmt(1, a);
        p.entry = 1;
        assert!(p.clone().check().is_err());
        p.exits.insert(2);
        assert!(p.check().is_ok());
    }
}
