//! Trainable neural density: a 3 → 10 → 10 → 1 feed-forward network with
//! tanh activations, biases on both hidden layers and none on the output
//! (40 + 110 + 10 = 160 parameters).
//!
//! The stated parameter count does not uniquely determine the bias placement;
//! this split is the consistent reading used throughout and is fixed by the
//! checkpoint architecture descriptor.
//!
//! Derivatives are analytic and layer-wise. The forward pass runs in jet
//! arithmetic over the three stencil inputs; the training path uses a lean
//! jet carrying (value, input gradient, mixed ab-derivative) and a reverse
//! sweep that accumulates exact parameter gradients of any functional of
//! those components — a third-order mixed derivative where the functional
//! touches the ab slot.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use super::DensityModel;
use crate::autodiff::Dual2;
use crate::error::{Error, Result};

pub(crate) const IN: usize = 3;
pub(crate) const H1: usize = 10;
pub(crate) const H2: usize = 10;
pub(crate) const PARAM_COUNT: usize = IN * H1 + H1 + H1 * H2 + H2 + H2; // 160

const OFF_W1: usize = 0;
const OFF_B1: usize = OFF_W1 + IN * H1;
const OFF_W2: usize = OFF_B1 + H1;
const OFF_B2: usize = OFF_W2 + H1 * H2;
const OFF_W3: usize = OFF_B2 + H2;

pub const ARCH_DESCRIPTOR: &str = "mlp-qfeat-3-10-10-1-tanh";

/// Scalar jets the layer engine can run in.
pub(crate) trait CellJet: Copy {
    fn zero() -> Self;
    /// Input with an explicit first-derivative seed with respect to the
    /// three stencil slots (the feature map is linear, so no second-order
    /// seed arises).
    fn input_seeded(v: f64, grad: [f64; 3]) -> Self;
    /// acc + w * self
    fn mul_add(self, w: f64, acc: Self) -> Self;
    fn add_value(self, b: f64) -> Self;
    fn tanh(self) -> Self;
}

/// Lean jet for training: value, gradient over the three stencil slots, and
/// the single mixed second derivative ∂²/∂a∂b. Closed under the network's
/// primitives, so the component set stays exact.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct Jet5 {
    pub v: f64,
    pub g: [f64; 3],
    pub h01: f64,
}

impl Jet5 {
    #[inline]
    pub fn scale(self, w: f64) -> Self {
        Jet5 {
            v: w * self.v,
            g: [w * self.g[0], w * self.g[1], w * self.g[2]],
            h01: w * self.h01,
        }
    }

    #[inline]
    pub fn add(self, o: Self) -> Self {
        Jet5 {
            v: self.v + o.v,
            g: [
                self.g[0] + o.g[0],
                self.g[1] + o.g[1],
                self.g[2] + o.g[2],
            ],
            h01: self.h01 + o.h01,
        }
    }

    /// Component dot product: the parameter adjoint of w in z = w * x is
    /// ⟨z̄, x⟩ over all jet components.
    #[inline]
    pub fn dot(&self, x: &Self) -> f64 {
        self.v * x.v
            + self.g[0] * x.g[0]
            + self.g[1] * x.g[1]
            + self.g[2] * x.g[2]
            + self.h01 * x.h01
    }

    /// Adjoint of z = tanh(x): given the forward input components and the
    /// output adjoint, returns the input adjoint.
    #[inline]
    pub fn tanh_pullback(x: &Self, zbar: &Self) -> Self {
        let t = x.v.tanh();
        let s = 1.0 - t * t;
        let d2 = -2.0 * t * s;
        let d3 = -2.0 * s * s + 4.0 * t * t * s;
        Jet5 {
            v: s * zbar.v
                + d2 * (zbar.g[0] * x.g[0] + zbar.g[1] * x.g[1] + zbar.g[2] * x.g[2])
                + zbar.h01 * (d2 * x.h01 + d3 * x.g[0] * x.g[1]),
            g: [
                s * zbar.g[0] + d2 * zbar.h01 * x.g[1],
                s * zbar.g[1] + d2 * zbar.h01 * x.g[0],
                s * zbar.g[2],
            ],
            h01: s * zbar.h01,
        }
    }
}

impl CellJet for Jet5 {
    #[inline]
    fn zero() -> Self {
        Jet5::default()
    }

    #[inline]
    fn input_seeded(v: f64, grad: [f64; 3]) -> Self {
        Jet5 {
            v,
            g: grad,
            h01: 0.0,
        }
    }

    #[inline]
    fn mul_add(self, w: f64, acc: Self) -> Self {
        acc.add(self.scale(w))
    }

    #[inline]
    fn add_value(self, b: f64) -> Self {
        Jet5 {
            v: self.v + b,
            ..self
        }
    }

    #[inline]
    fn tanh(self) -> Self {
        let t = self.v.tanh();
        let s = 1.0 - t * t;
        Jet5 {
            v: t,
            g: [s * self.g[0], s * self.g[1], s * self.g[2]],
            h01: s * self.h01 + (-2.0 * t * s) * self.g[0] * self.g[1],
        }
    }
}

impl CellJet for Dual2<3> {
    fn zero() -> Self {
        Dual2::ZERO
    }

    fn input_seeded(v: f64, grad: [f64; 3]) -> Self {
        let mut x = Dual2::constant(v);
        x.g = grad;
        x
    }

    fn mul_add(self, w: f64, acc: Self) -> Self {
        acc + self.scale(w)
    }

    fn add_value(self, b: f64) -> Self {
        self + b
    }

    fn tanh(self) -> Self {
        Dual2::tanh(self)
    }
}

impl CellJet for f64 {
    fn zero() -> Self {
        0.0
    }

    fn input_seeded(v: f64, _grad: [f64; 3]) -> Self {
        v
    }

    fn mul_add(self, w: f64, acc: Self) -> Self {
        acc + w * self
    }

    fn add_value(self, b: f64) -> Self {
        self + b
    }

    fn tanh(self) -> Self {
        f64::tanh(self)
    }
}

/// All forward activations of one stencil evaluation, kept for the pullback.
pub(crate) struct CellActs<J> {
    pub x: [J; IN],
    pub z1: [J; H1],
    pub a1: [J; H1],
    pub z2: [J; H2],
    pub a2: [J; H2],
    pub y: J,
}

/// Value and the stencil derivatives consumed by residual assembly and the
/// solvability regulariser.
#[derive(Debug, Clone, Copy, Default)]
pub struct CellDerivs {
    pub value: f64,
    pub d1: f64,
    pub d2: f64,
    pub d3: f64,
    pub d12: f64,
}

/// Weights of a linear functional of (d1, d2, d3, d12); the pullback
/// accumulates its exact parameter gradient.
#[derive(Debug, Clone, Copy, Default)]
pub struct CellAdjoint {
    pub w_d1: f64,
    pub w_d2: f64,
    pub w_d3: f64,
    pub w_d12: f64,
}

impl CellAdjoint {
    pub fn is_zero(&self) -> bool {
        self.w_d1 == 0.0 && self.w_d2 == 0.0 && self.w_d3 == 0.0 && self.w_d12 == 0.0
    }
}

/// The network reads the stencil through the difference-quotient features
/// (a, (b−a)/Δt, (c−a)/Δx) — the discrete counterparts of (u, u_t, u_x),
/// the arguments of the continuous Lagrangian. The map is linear and
/// invertible, so the represented function class on (a, b, c) is unchanged;
/// it decides the conditioning: with raw stencil values the kinetic valley
/// has curvature ~1/Δt² across it, which gradient training cannot track.
#[derive(Debug, Clone)]
pub struct NeuralDensity {
    params: Vec<f64>,
    dt: f64,
    dx: f64,
}

impl NeuralDensity {
    /// Reproducible initialisation: per layer, weights and biases uniform in
    /// [−√(1/fan_in), +√(1/fan_in)], drawn in a fixed order. The mesh widths
    /// fix the input feature map.
    pub fn init(seed: u64, dt: f64, dx: f64) -> NeuralDensity {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut params = vec![0.0; PARAM_COUNT];
        let bound1 = (1.0f64 / IN as f64).sqrt();
        let bound2 = (1.0f64 / H1 as f64).sqrt();
        let bound3 = (1.0f64 / H2 as f64).sqrt();
        let draw = |bound: f64, rng: &mut ChaCha12Rng| bound * (2.0 * rng.gen::<f64>() - 1.0);
        for p in params.iter_mut().take(OFF_B1) {
            *p = draw(bound1, &mut rng);
        }
        for p in params.iter_mut().take(OFF_W2).skip(OFF_B1) {
            *p = draw(bound1, &mut rng);
        }
        for p in params.iter_mut().take(OFF_B2).skip(OFF_W2) {
            *p = draw(bound2, &mut rng);
        }
        for p in params.iter_mut().take(OFF_W3).skip(OFF_B2) {
            *p = draw(bound2, &mut rng);
        }
        for p in params.iter_mut().skip(OFF_W3) {
            *p = draw(bound3, &mut rng);
        }
        NeuralDensity { params, dt, dx }
    }

    pub fn from_params(params: Vec<f64>, dt: f64, dx: f64) -> Result<NeuralDensity> {
        if params.len() != PARAM_COUNT {
            return Err(Error::DimensionMismatch {
                expected: PARAM_COUNT,
                got: params.len(),
            });
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFinite("neural density parameters".into()));
        }
        if !(dt > 0.0) || !(dx > 0.0) {
            return Err(Error::InvalidConfig("mesh widths must be positive".into()));
        }
        Ok(NeuralDensity { params, dt, dx })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }

    pub fn param_count(&self) -> usize {
        PARAM_COUNT
    }

    pub fn set_params(&mut self, params: &[f64]) {
        assert_eq!(params.len(), PARAM_COUNT);
        self.params.copy_from_slice(params);
    }

    pub(crate) fn forward<J: CellJet>(&self, xv: [f64; IN]) -> CellActs<J> {
        let p = &self.params;
        let (rdt, rdx) = (1.0 / self.dt, 1.0 / self.dx);
        let x = [
            J::input_seeded(xv[0], [1.0, 0.0, 0.0]),
            J::input_seeded((xv[1] - xv[0]) * rdt, [-rdt, rdt, 0.0]),
            J::input_seeded((xv[2] - xv[0]) * rdx, [-rdx, 0.0, rdx]),
        ];
        let mut z1 = [J::zero(); H1];
        let mut a1 = [J::zero(); H1];
        for u in 0..H1 {
            let mut acc = J::zero();
            for (k, xk) in x.iter().enumerate() {
                acc = xk.mul_add(p[OFF_W1 + u * IN + k], acc);
            }
            z1[u] = acc.add_value(p[OFF_B1 + u]);
            a1[u] = z1[u].tanh();
        }
        let mut z2 = [J::zero(); H2];
        let mut a2 = [J::zero(); H2];
        for v in 0..H2 {
            let mut acc = J::zero();
            for (u, au) in a1.iter().enumerate() {
                acc = au.mul_add(p[OFF_W2 + v * H1 + u], acc);
            }
            z2[v] = acc.add_value(p[OFF_B2 + v]);
            a2[v] = z2[v].tanh();
        }
        let mut y = J::zero();
        for (v, av) in a2.iter().enumerate() {
            y = av.mul_add(p[OFF_W3 + v], y);
        }
        CellActs {
            x,
            z1,
            a1,
            z2,
            a2,
            y,
        }
    }

    /// Value plus the stencil derivatives the losses and the solver consume.
    pub fn cell_derivs(&self, x: [f64; IN]) -> CellDerivs {
        let acts = self.forward::<Jet5>(x);
        Self::derivs_of(&acts)
    }

    fn derivs_of(acts: &CellActs<Jet5>) -> CellDerivs {
        CellDerivs {
            value: acts.y.v,
            d1: acts.y.g[0],
            d2: acts.y.g[1],
            d3: acts.y.g[2],
            d12: acts.y.h01,
        }
    }

    /// Forward pass keeping the activations, so a later pullback can reuse
    /// them (the training loop needs derivatives of all three stencil cells
    /// of a residual before it can seed any pullback).
    pub(crate) fn forward_acts(&self, x: [f64; IN]) -> (CellActs<Jet5>, CellDerivs) {
        let acts = self.forward::<Jet5>(x);
        let derivs = Self::derivs_of(&acts);
        (acts, derivs)
    }

    pub(crate) fn pullback_acts(&self, acts: &CellActs<Jet5>, seed: &CellAdjoint, grad: &mut [f64]) {
        if seed.is_zero() {
            return;
        }
        let ybar = Jet5 {
            v: 0.0,
            g: [seed.w_d1, seed.w_d2, seed.w_d3],
            h01: seed.w_d12,
        };
        self.pullback(acts, ybar, grad);
    }

    /// Accumulates d/dθ of `seed.w_d1·d1 + seed.w_d2·d2 + seed.w_d3·d3 +
    /// seed.w_d12·d12` at the stencil into `grad` (added in place).
    pub fn cell_backprop(&self, x: [f64; IN], seed: &CellAdjoint, grad: &mut [f64]) {
        if seed.is_zero() {
            return;
        }
        let acts = self.forward::<Jet5>(x);
        let ybar = Jet5 {
            v: 0.0,
            g: [seed.w_d1, seed.w_d2, seed.w_d3],
            h01: seed.w_d12,
        };
        self.pullback(&acts, ybar, grad);
    }

    fn pullback(&self, acts: &CellActs<Jet5>, ybar: Jet5, grad: &mut [f64]) {
        debug_assert_eq!(grad.len(), PARAM_COUNT);
        let p = &self.params;
        let mut z2bar = [Jet5::default(); H2];
        for v in 0..H2 {
            grad[OFF_W3 + v] += ybar.dot(&acts.a2[v]);
            let a2bar = ybar.scale(p[OFF_W3 + v]);
            z2bar[v] = Jet5::tanh_pullback(&acts.z2[v], &a2bar);
            grad[OFF_B2 + v] += z2bar[v].v;
        }
        for u in 0..H1 {
            let mut a1bar = Jet5::default();
            for (v, zb) in z2bar.iter().enumerate() {
                grad[OFF_W2 + v * H1 + u] += zb.dot(&acts.a1[u]);
                a1bar = a1bar.add(zb.scale(p[OFF_W2 + v * H1 + u]));
            }
            let z1bar = Jet5::tanh_pullback(&acts.z1[u], &a1bar);
            grad[OFF_B1 + u] += z1bar.v;
            for (k, xk) in acts.x.iter().enumerate() {
                grad[OFF_W1 + u * IN + k] += z1bar.dot(xk);
            }
        }
    }
}

impl DensityModel for NeuralDensity {
    fn dim(&self) -> usize {
        1
    }

    fn eval(&self, a: &[f64], b: &[f64], c: &[f64]) -> f64 {
        self.forward::<f64>([a[0], b[0], c[0]]).y
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
        let cd = self.cell_derivs([a[0], b[0], c[0]]);
        d1[0] = cd.d1;
        d2[0] = cd.d2;
        d3[0] = cd.d3;
    }

    fn d12(&self, a: &[f64], b: &[f64], c: &[f64], out: &mut [f64]) {
        out[0] = self.cell_derivs([a[0], b[0], c[0]]).d12;
    }

    fn grad_hess(&self, a: &[f64], b: &[f64], c: &[f64], grad: &mut [f64], hess: &mut [f64]) {
        let acts = self.forward::<Dual2<3>>([a[0], b[0], c[0]]);
        grad.copy_from_slice(&acts.y.g);
        for i in 0..3 {
            for j in 0..3 {
                hess[i * 3 + j] = acts.y.h[i][j];
            }
        }
    }

    fn params(&self) -> &[f64] {
        &self.params
    }
}
