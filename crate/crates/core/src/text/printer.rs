use std::fmt::Write;

use crate::il::{Cycles, Expr, Program, Stmt, Term};

/// Canonical expression text: every literal carries its width suffix.
pub fn print_expr(e: &Expr) -> String {
    e.to_string()
}

// Constant jump targets are printed as bare decimal labels.
fn target(e: &Expr) -> String {
    match e {
        Term::Const(_) => match e.as_word_const() {
            Some(w) => w.value().to_string(),
            None => print_expr(e),
        },
        _ => print_expr(e),
    }
}

/// Canonical program text. Reparsing yields an equal program.
pub fn print_program(p: &Program) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "program {}", p.name());
    let _ = writeln!(out, "entry {}", p.entry());
    if p.label_width() != 32 {
        let _ = writeln!(out, "labelwidth {}", p.label_width());
    }
    for l in p.exits() {
        let _ = writeln!(out, "exit {l}");
    }
    for (name, ty) in p.typing() {
        let _ = writeln!(out, "var {name} : {ty}");
    }
    for (l, s) in p.stmts() {
        let _ = write!(out, "{l}: ");
        let _ = match s {
            Stmt::Assign(x, e) => write!(out, "{x} := {}", print_expr(e)),
            Stmt::Assert(e) => write!(out, "assert {}", print_expr(e)),
            Stmt::Jmp(t) => write!(out, "jmp {}", target(t)),
            Stmt::CJmp(c, t, f) => write!(
                out,
                "cjmp {} -> {}, {}",
                print_expr(c),
                target(t),
                target(f)
            ),
        };
        let _ = match p.cycles().get(l) {
            Some(Cycles::Fixed(k)) => write!(out, " [cycles {k}]"),
            Some(Cycles::Branch { taken, fall }) => {
                write!(out, " [cycles taken={taken} fall={fall}]")
            }
            None => Ok(()),
        };
        out.push('\n');
    }
    out
}
