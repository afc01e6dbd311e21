//! Dense arrays, the computation record and a finite-difference verifier.

mod array;
mod gradcheck;
mod params;
mod tape;

pub use array::Array;
pub use gradcheck::{finite_difference_check, relative_error, GradCheckReport};
pub use params::{Gradients, ParamSet};
pub use tape::{Op, Tape, Var, EXP_INPUT_MAX, GATHER_ZERO, LOG_INPUT_MIN};
