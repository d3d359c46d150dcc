//! Proof-producing symbolic execution for a small binary intermediate language.

pub mod contracts;
pub mod engine;
pub mod il;
pub mod kernel;
pub mod solver;
pub mod sym;
pub mod text;
pub mod timing;
