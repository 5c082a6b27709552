//! varfield learns discrete Lagrangian densities of variational PDEs from
//! space-time field data, propagates solutions of the learned discrete field
//! theory by Newton iteration on the discrete Euler–Lagrange equations, and
//! detects periodic travelling waves of the learned theory via a discrete
//! Fourier ansatz.

pub mod autodiff;
pub mod datagen;
pub mod del;
pub mod density;
pub mod error;
pub mod grid;
pub mod linalg;
pub mod solver;
pub mod twave;
pub mod textkv;
pub mod train;

pub use error::{Error, Result};
