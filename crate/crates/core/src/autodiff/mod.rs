//! Exact differentiation engine.
//!
//! Forward mode supplies first and second partial derivatives with respect to
//! the (small, fixed) set of stencil inputs; a reverse pass over the recorded
//! operation tape accumulates gradients with respect to model parameters,
//! including gradients of expressions that themselves contain second stencil
//! derivatives.

mod dual;
mod tape;

pub use dual::{grad_hess, Dual2};
pub use tape::{Node, Tape};
