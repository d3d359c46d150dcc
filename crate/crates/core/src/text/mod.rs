//! Concrete `.bir` syntax: parser and canonical printer.
//!
//! ```text
//! program modexp
//! entry 1
//! var R0 : w32
//! var M : mem32x32
//! 1: assert 0x1000 <= SP - 4
//! 6: cjmp R3 == 0 -> 12, 7   [cycles taken=3 fall=1]
//! ```
//!
//! Unsuffixed literals take their width from the surrounding expression;
//! jump targets default to the label width. `exit <label>` lines declare
//! labels that may be fallen into without carrying a statement.

mod lexer;
mod parser;
mod printer;

use thiserror::Error;

use crate::il::TypeError;

pub use parser::{parse_expr, parse_program};
pub use printer::{print_expr, print_program};

#[derive(Clone, Debug, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("{line}:{col}: syntax error, expected {expected}")]
    Syntax {
        line: usize,
        col: usize,
        expected: String,
    },
    /// Ill-typed expression found while elaborating a line.
    #[error("{line}:{col}: type error, {reason}")]
    Type {
        line: usize,
        col: usize,
        reason: String,
    },
    /// Forwarded from the program type checker.
    #[error(transparent)]
    Program(#[from] TypeError),
}

impl ParseError {
    pub(crate) fn syntax(line: usize, col: usize, expected: impl Into<String>) -> Self {
        ParseError::Syntax {
            line,
            col,
            expected: expected.into(),
        }
    }

    pub(crate) fn ty(line: usize, col: usize, reason: impl Into<String>) -> Self {
        ParseError::Type {
            line,
            col,
            reason: reason.into(),
        }
    }
}
