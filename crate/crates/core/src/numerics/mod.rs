//! Minimal differentiable compute core.
//!
//! Tensors are dense row-major [`Array`]s; image-like tensors use NHWC layout.
//! A [`Graph`] records every operation applied to its [`Var`]s and
//! [`Graph::backward`] walks the record in reverse, accumulating parameter
//! gradients into a [`ParamStore`]. Gradient buffers accumulate across graphs
//! until [`ParamStore::zero_grad`] is called; a single graph can only be
//! differentiated once.

mod array;
pub mod gradcheck;
mod graph;
mod params;

pub use array::{Array, Real};
pub use graph::{Graph, Var};
pub use params::{Param, ParamStore};
