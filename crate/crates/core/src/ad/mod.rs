//! Reverse-mode automatic differentiation on an append-only tape.

mod fdcheck;
mod real;
mod tape;

pub use fdcheck::{finite_difference_check, FdError, FdReport, REL_ERR_FLOOR};
pub use real::Real;
pub use tape::{Gradients, Tape, Var};
