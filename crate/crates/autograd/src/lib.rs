//! Dense `f64` arrays with define-by-run reverse-mode differentiation.
//!
//! Every trainable component builds its forward graph on a fresh [`Tape`]
//! from the primitives on [`Var`], calls [`Tape::backward`] on a scalar loss
//! and hands the resulting [`GradMap`] to [`ParamStore::adam_step`].

mod array;
pub mod checkpoint;
mod error;
pub mod gradcheck;
pub mod linalg;
mod params;
mod tape;

pub use array::NumArray;
pub use checkpoint::Checkpoint;
pub use error::{Error, Result};
pub use params::{AdamConfig, GradMap, ParamStore};
pub use tape::{Axis, Gradients, OpKind, Tape, Var};
