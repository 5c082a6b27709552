//! Analytic wave densities.

use super::{DensityModel, Potential, QuadraticPotential};

/// Discrete wave density L(a, b, c) = ½((b−a)/dt)² − ½((c−a)/dx)² − V(a),
/// summed componentwise for d > 1.
///
/// Its discrete Euler–Lagrange residual is the discrete wave operator
/// −(u^{i−1} − 2u^i + u^{i+1})/dt² + (u_{j−1} − 2u_j + u_{j+1})/dx² − ∇V(u),
/// i.e. the classical leapfrog wave scheme up to overall orientation: the
/// slot-derivative assembly fixes the sign, and the zero set is unchanged.
pub struct WaveDensity<P: Potential = QuadraticPotential> {
    dt: f64,
    dx: f64,
    dim: usize,
    potential: P,
}

impl WaveDensity<QuadraticPotential> {
    /// Wave density with the default potential V(u) = ½u².
    pub fn new(dt: f64, dx: f64, dim: usize) -> Self {
        WaveDensity::with_potential(dt, dx, dim, QuadraticPotential)
    }
}

impl<P: Potential> WaveDensity<P> {
    pub fn with_potential(dt: f64, dx: f64, dim: usize, potential: P) -> Self {
        assert!(dt > 0.0 && dx > 0.0 && dim >= 1);
        WaveDensity {
            dt,
            dx,
            dim,
            potential,
        }
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }

    pub fn potential(&self) -> &P {
        &self.potential
    }
}

impl<P: Potential> DensityModel for WaveDensity<P> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, a: &[f64], b: &[f64], c: &[f64]) -> f64 {
        let mut kin = 0.0;
        let mut spa = 0.0;
        for p in 0..self.dim {
            let qt = (b[p] - a[p]) / self.dt;
            let qx = (c[p] - a[p]) / self.dx;
            kin += qt * qt;
            spa += qx * qx;
        }
        0.5 * kin - 0.5 * spa - self.potential.value(a)
    }

    fn first_partials(
        &self,
        a: &[f64],
        b: &[f64],
        c: &[f64],
        d1: &mut [f64],
        d2: &mut [f64],
        d3: &mut [f64],
    ) {
        let dt2 = self.dt * self.dt;
        let dx2 = self.dx * self.dx;
        self.potential.grad(a, d1);
        for p in 0..self.dim {
            let qt = (b[p] - a[p]) / dt2;
            let qx = (c[p] - a[p]) / dx2;
            d1[p] = -qt + qx - d1[p];
            d2[p] = qt;
            d3[p] = -qx;
        }
    }

    fn d12(&self, _a: &[f64], _b: &[f64], _c: &[f64], out: &mut [f64]) {
        let d = self.dim;
        let w = -1.0 / (self.dt * self.dt);
        out.fill(0.0);
        for p in 0..d {
            out[p * d + p] = w;
        }
    }

    fn grad_hess(&self, a: &[f64], b: &[f64], c: &[f64], grad: &mut [f64], hess: &mut [f64]) {
        let d = self.dim;
        let n = 3 * d;
        let dt2 = self.dt * self.dt;
        let dx2 = self.dx * self.dx;
        let mut vgrad = vec![0.0; d];
        let mut vhess = vec![0.0; d * d];
        self.potential.grad(a, &mut vgrad);
        self.potential.hess(a, &mut vhess);
        for p in 0..d {
            let qt = (b[p] - a[p]) / dt2;
            let qx = (c[p] - a[p]) / dx2;
            grad[p] = -qt + qx - vgrad[p];
            grad[d + p] = qt;
            grad[2 * d + p] = -qx;
        }
        hess.fill(0.0);
        for p in 0..d {
            for q in 0..d {
                hess[p * n + q] = -vhess[p * d + q];
            }
            hess[p * n + p] += 1.0 / dt2 - 1.0 / dx2; // aa
            hess[p * n + (d + p)] = -1.0 / dt2; // ab
            hess[(d + p) * n + p] = -1.0 / dt2;
            hess[p * n + (2 * d + p)] = 1.0 / dx2; // ac
            hess[(2 * d + p) * n + p] = 1.0 / dx2;
            hess[(d + p) * n + (d + p)] = 1.0 / dt2; // bb
            hess[(2 * d + p) * n + (2 * d + p)] = -1.0 / dx2; // cc
        }
    }
}

/// Wave-type density with the potential evaluated at the temporal midpoint,
/// L = ½((b−a)/dt)² − ½((c−a)/dx)² − V((a+b)/2).
///
/// An alternative quadrature of the same continuous Lagrangian; because the
/// potential couples a and b, its Euler–Lagrange equations are genuinely
/// implicit, which makes it the natural trial density for Newton-convergence
/// studies with nonlinear potentials.
pub struct MidpointWaveDensity<P: Potential> {
    dt: f64,
    dx: f64,
    dim: usize,
    potential: P,
}

impl<P: Potential> MidpointWaveDensity<P> {
    pub fn new(dt: f64, dx: f64, dim: usize, potential: P) -> Self {
        assert!(dt > 0.0 && dx > 0.0 && dim >= 1);
        MidpointWaveDensity {
            dt,
            dx,
            dim,
            potential,
        }
    }

    fn midpoint(&self, a: &[f64], b: &[f64]) -> Vec<f64> {
        a.iter().zip(b).map(|(x, y)| 0.5 * (x + y)).collect()
    }
}

impl<P: Potential> DensityModel for MidpointWaveDensity<P> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, a: &[f64], b: &[f64], c: &[f64]) -> f64 {
        let mut kin = 0.0;
        let mut spa = 0.0;
        for p in 0..self.dim {
            let qt = (b[p] - a[p]) / self.dt;
            let qx = (c[p] - a[p]) / self.dx;
            kin += qt * qt;
            spa += qx * qx;
        }
        0.5 * kin - 0.5 * spa - self.potential.value(&self.midpoint(a, b))
    }

    fn first_partials(
        &self,
        a: &[f64],
        b: &[f64],
        c: &[f64],
        d1: &mut [f64],
        d2: &mut [f64],
        d3: &mut [f64],
    ) {
        let dt2 = self.dt * self.dt;
        let dx2 = self.dx * self.dx;
        let mid = self.midpoint(a, b);
        let mut vgrad = vec![0.0; self.dim];
        self.potential.grad(&mid, &mut vgrad);
        for p in 0..self.dim {
            let qt = (b[p] - a[p]) / dt2;
            let qx = (c[p] - a[p]) / dx2;
            d1[p] = -qt + qx - 0.5 * vgrad[p];
            d2[p] = qt - 0.5 * vgrad[p];
            d3[p] = -qx;
        }
    }

    fn d12(&self, a: &[f64], b: &[f64], _c: &[f64], out: &mut [f64]) {
        let d = self.dim;
        let mid = self.midpoint(a, b);
        let mut vhess = vec![0.0; d * d];
        self.potential.hess(&mid, &mut vhess);
        for p in 0..d {
            for q in 0..d {
                out[p * d + q] = -0.25 * vhess[p * d + q];
            }
            out[p * d + p] -= 1.0 / (self.dt * self.dt);
        }
    }

    fn grad_hess(&self, a: &[f64], b: &[f64], c: &[f64], grad: &mut [f64], hess: &mut [f64]) {
        let d = self.dim;
        let n = 3 * d;
        let dt2 = self.dt * self.dt;
        let dx2 = self.dx * self.dx;
        let mid = self.midpoint(a, b);
        let mut vgrad = vec![0.0; d];
        let mut vhess = vec![0.0; d * d];
        self.potential.grad(&mid, &mut vgrad);
        self.potential.hess(&mid, &mut vhess);
        for p in 0..d {
            let qt = (b[p] - a[p]) / dt2;
            let qx = (c[p] - a[p]) / dx2;
            grad[p] = -qt + qx - 0.5 * vgrad[p];
            grad[d + p] = qt - 0.5 * vgrad[p];
            grad[2 * d + p] = -qx;
        }
        hess.fill(0.0);
        for p in 0..d {
            for q in 0..d {
                let vq = 0.25 * vhess[p * d + q];
                hess[p * n + q] = -vq; // aa (potential part)
                hess[p * n + (d + q)] = -vq; // ab
                hess[(d + p) * n + q] = -vq;
                hess[(d + p) * n + (d + q)] = -vq; // bb
            }
            hess[p * n + p] += 1.0 / dt2 - 1.0 / dx2;
            hess[p * n + (d + p)] += -1.0 / dt2;
            hess[(d + p) * n + p] += -1.0 / dt2;
            hess[(d + p) * n + (d + p)] += 1.0 / dt2;
            hess[p * n + (2 * d + p)] = 1.0 / dx2;
            hess[(2 * d + p) * n + p] = 1.0 / dx2;
            hess[(2 * d + p) * n + (2 * d + p)] = -1.0 / dx2;
        }
    }
}
