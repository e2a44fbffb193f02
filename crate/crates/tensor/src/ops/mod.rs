//! Differentiable primitives, implemented as methods on [`crate::Var`].

mod channel;
mod conv;
mod elementwise;
mod linalg;
mod norm;
mod reduce;
mod shape;
