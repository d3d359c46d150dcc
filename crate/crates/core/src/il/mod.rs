//! The intermediate language: values, expressions, statements, programs and
//! their concrete semantics.

mod program;
mod semantics;
mod term;
mod value;

pub use program::{
    typecheck_program, Cycles, Expr, Label, Program, ProgramParts, Stmt, TypeError, Typing, Var,
};
pub use semantics::{eval_expr, run_in_fragment, step, RunError, State, Store};
pub use term::{Atom, BinOp, EvalError, Term, TermTypeError, UnOp};
pub use value::{is_valid_width, mask, MemoryValue, Type, Value, Word, WIDTHS};
