//! Discrete Lagrangian densities L(a, b, c) on the three-point stencil
//! (u_j^i, u_j^{i+1}, u_{j+1}^i), with exact first and second stencil
//! derivatives. Concrete models: the analytic wave density, a trainable
//! neural density, gauge-transformed wrappers and a constant density.

mod checkpoint;
mod gauge;
mod neural;
mod wave;

pub use checkpoint::{
    load_checkpoint_file, load_checkpoint_str, write_checkpoint_file, write_checkpoint_string,
    LoadedDensity,
};
pub use gauge::{gauge_wrap, ConstantDensity, GaugedDensity};
pub use neural::{CellAdjoint, CellDerivs, NeuralDensity};
pub use wave::{MidpointWaveDensity, WaveDensity};

use crate::grid::Stencil;

/// Scalar field ℝ^d → ℝ with gradient and Hessian; used for potentials V and
/// for the gauge functions χ.
pub trait Potential {
    fn value(&self, u: &[f64]) -> f64;
    fn grad(&self, u: &[f64], out: &mut [f64]);
    /// Row-major d×d Hessian.
    fn hess(&self, u: &[f64], out: &mut [f64]);
}

/// V(u) = ½‖u‖².
#[derive(Debug, Clone, Copy, Default)]
pub struct QuadraticPotential;

impl Potential for QuadraticPotential {
    fn value(&self, u: &[f64]) -> f64 {
        0.5 * u.iter().map(|x| x * x).sum::<f64>()
    }

    fn grad(&self, u: &[f64], out: &mut [f64]) {
        out.copy_from_slice(u);
    }

    fn hess(&self, u: &[f64], out: &mut [f64]) {
        let d = u.len();
        out.fill(0.0);
        for p in 0..d {
            out[p * d + p] = 1.0;
        }
    }
}

/// V(u) = ¼ Σ u_p⁴.
#[derive(Debug, Clone, Copy, Default)]
pub struct QuarticPotential;

impl Potential for QuarticPotential {
    fn value(&self, u: &[f64]) -> f64 {
        0.25 * u.iter().map(|x| x.powi(4)).sum::<f64>()
    }

    fn grad(&self, u: &[f64], out: &mut [f64]) {
        for (o, x) in out.iter_mut().zip(u) {
            *o = x.powi(3);
        }
    }

    fn hess(&self, u: &[f64], out: &mut [f64]) {
        let d = u.len();
        out.fill(0.0);
        for p in 0..d {
            out[p * d + p] = 3.0 * u[p] * u[p];
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroPotential;

impl Potential for ZeroPotential {
    fn value(&self, _u: &[f64]) -> f64 {
        0.0
    }

    fn grad(&self, _u: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }

    fn hess(&self, _u: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }
}

/// Potential from closures, mostly for tests and custom gauge functions.
pub struct ClosurePotential<F, G, H>
where
    F: Fn(&[f64]) -> f64,
    G: Fn(&[f64], &mut [f64]),
    H: Fn(&[f64], &mut [f64]),
{
    pub value_fn: F,
    pub grad_fn: G,
    pub hess_fn: H,
}

impl<F, G, H> Potential for ClosurePotential<F, G, H>
where
    F: Fn(&[f64]) -> f64,
    G: Fn(&[f64], &mut [f64]),
    H: Fn(&[f64], &mut [f64]),
{
    fn value(&self, u: &[f64]) -> f64 {
        (self.value_fn)(u)
    }

    fn grad(&self, u: &[f64], out: &mut [f64]) {
        (self.grad_fn)(u, out)
    }

    fn hess(&self, u: &[f64], out: &mut [f64]) {
        (self.hess_fn)(u, out)
    }
}

/// A discrete Lagrangian density with exact stencil derivatives.
///
/// All slice arguments have length `dim()`; `d12` is the row-major d×d mixed
/// block ∂²L/∂a_p ∂b_q, and `grad_hess` fills the full 3d gradient and
/// (3d)×(3d) Hessian with respect to the concatenated stencil (a, b, c).
pub trait DensityModel {
    fn dim(&self) -> usize;

    fn eval(&self, a: &[f64], b: &[f64], c: &[f64]) -> f64;

    fn first_partials(
        &self,
        a: &[f64],
        b: &[f64],
        c: &[f64],
        d1: &mut [f64],
        d2: &mut [f64],
        d3: &mut [f64],
    );

    fn d12(&self, a: &[f64], b: &[f64], c: &[f64], out: &mut [f64]);

    fn grad_hess(&self, a: &[f64], b: &[f64], c: &[f64], grad: &mut [f64], hess: &mut [f64]);

    /// Model parameters; empty for analytic densities.
    fn params(&self) -> &[f64] {
        &[]
    }

    fn eval_stencil(&self, s: &Stencil) -> f64 {
        self.eval(&s.a, &s.b, &s.c)
    }

    /// ∂L/∂a as a fresh vector.
    fn d1(&self, s: &Stencil) -> Vec<f64> {
        let d = self.dim();
        let (mut d1, mut d2, mut d3) = (vec![0.0; d], vec![0.0; d], vec![0.0; d]);
        self.first_partials(&s.a, &s.b, &s.c, &mut d1, &mut d2, &mut d3);
        d1
    }

    /// ∂L/∂b as a fresh vector.
    fn d2(&self, s: &Stencil) -> Vec<f64> {
        let d = self.dim();
        let (mut d1, mut d2, mut d3) = (vec![0.0; d], vec![0.0; d], vec![0.0; d]);
        self.first_partials(&s.a, &s.b, &s.c, &mut d1, &mut d2, &mut d3);
        d2
    }

    /// ∂L/∂c as a fresh vector.
    fn d3(&self, s: &Stencil) -> Vec<f64> {
        let d = self.dim();
        let (mut d1, mut d2, mut d3) = (vec![0.0; d], vec![0.0; d], vec![0.0; d]);
        self.first_partials(&s.a, &s.b, &s.c, &mut d1, &mut d2, &mut d3);
        d3
    }

    /// Mixed block ∂²L/∂a∂b as a fresh row-major d×d matrix.
    fn d12_matrix(&self, s: &Stencil) -> Vec<f64> {
        let d = self.dim();
        let mut out = vec![0.0; d * d];
        self.d12(&s.a, &s.b, &s.c, &mut out);
        out
    }
}
