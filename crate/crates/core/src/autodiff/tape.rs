//! Parameter-gradient tape.
//!
//! A `Tape<N>` is an ordered record of primitive operations defining a scalar
//! expression of N seeded inputs and P parameters. Forward replay evaluates
//! the expression in `Dual2<N>` arithmetic (value, input gradient, input
//! Hessian); the pullback runs the record in reverse with `Dual2`-shaped
//! adjoints and accumulates the derivative of any linear functional of the
//! output components with respect to the parameters. Since the output
//! components already contain second input derivatives, the parameter
//! gradient of a functional touching the Hessian slots is a third-order
//! mixed derivative, still exact.

use super::dual::Dual2;

#[derive(Debug, Clone, Copy)]
enum Op {
    Input(usize),
    Param(usize),
    Const(f64),
    Add(usize, usize),
    Sub(usize, usize),
    Neg(usize),
    Mul(usize, usize),
    Recip(usize),
    Tanh(usize),
    Exp(usize),
}

/// Node handle inside a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Node(usize);

pub struct Tape<const N: usize> {
    ops: Vec<Op>,
    n_params: usize,
    output: Option<Node>,
}

impl<const N: usize> Tape<N> {
    pub fn new(n_params: usize) -> Self {
        Tape {
            ops: Vec::new(),
            n_params,
            output: None,
        }
    }

    fn push(&mut self, op: Op) -> Node {
        self.ops.push(op);
        Node(self.ops.len() - 1)
    }

    /// Seeded input k (0 <= k < N).
    pub fn input(&mut self, k: usize) -> Node {
        assert!(k < N, "input index {k} out of range for {N} seeds");
        self.push(Op::Input(k))
    }

    pub fn param(&mut self, p: usize) -> Node {
        assert!(p < self.n_params, "param index {p} out of range");
        self.push(Op::Param(p))
    }

    pub fn constant(&mut self, v: f64) -> Node {
        self.push(Op::Const(v))
    }

    pub fn add(&mut self, a: Node, b: Node) -> Node {
        self.push(Op::Add(a.0, b.0))
    }

    pub fn sub(&mut self, a: Node, b: Node) -> Node {
        self.push(Op::Sub(a.0, b.0))
    }

    pub fn neg(&mut self, a: Node) -> Node {
        self.push(Op::Neg(a.0))
    }

    pub fn mul(&mut self, a: Node, b: Node) -> Node {
        self.push(Op::Mul(a.0, b.0))
    }

    pub fn recip(&mut self, a: Node) -> Node {
        self.push(Op::Recip(a.0))
    }

    pub fn div(&mut self, a: Node, b: Node) -> Node {
        let r = self.recip(b);
        self.mul(a, r)
    }

    pub fn tanh(&mut self, a: Node) -> Node {
        self.push(Op::Tanh(a.0))
    }

    pub fn exp(&mut self, a: Node) -> Node {
        self.push(Op::Exp(a.0))
    }

    pub fn powi(&mut self, a: Node, n: u32) -> Node {
        match n {
            0 => self.constant(1.0),
            _ => {
                let mut acc = a;
                for _ in 1..n {
                    acc = self.mul(acc, a);
                }
                acc
            }
        }
    }

    pub fn set_output(&mut self, node: Node) {
        self.output = Some(node);
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    pub fn n_params(&self) -> usize {
        self.n_params
    }

    /// Replays the record forward. Node values land in `values` (reused
    /// buffer); returns the output node's `Dual2`.
    pub fn forward(&self, inputs: &[f64; N], params: &[f64], values: &mut Vec<Dual2<N>>) -> Dual2<N> {
        assert_eq!(params.len(), self.n_params);
        let out = self.output.expect("tape output not set");
        values.clear();
        values.reserve(self.ops.len());
        for op in &self.ops {
            let v = match *op {
                Op::Input(k) => Dual2::variable(inputs[k], k),
                Op::Param(p) => Dual2::constant(params[p]),
                Op::Const(c) => Dual2::constant(c),
                Op::Add(a, b) => values[a] + values[b],
                Op::Sub(a, b) => values[a] - values[b],
                Op::Neg(a) => -values[a],
                Op::Mul(a, b) => values[a] * values[b],
                Op::Recip(a) => values[a].recip(),
                Op::Tanh(a) => values[a].tanh(),
                Op::Exp(a) => values[a].exp(),
            };
            values.push(v);
        }
        values[out.0]
    }

    /// Convenience forward pass with a scratch buffer.
    pub fn eval(&self, inputs: &[f64; N], params: &[f64]) -> Dual2<N> {
        let mut values = Vec::new();
        self.forward(inputs, params, &mut values)
    }

    /// Reverse sweep: accumulates d/d(params) of the scalar
    /// `phi = seed.v * out.v + Σ seed.g[i] * out.g[i] + Σ seed.h[i][j] * out.h[i][j]`
    /// into `param_grad` (added, not overwritten). `values` must come from a
    /// `forward` call with the same inputs and params.
    pub fn pullback(
        &self,
        values: &[Dual2<N>],
        seed: &Dual2<N>,
        param_grad: &mut [f64],
        adjoints: &mut Vec<Dual2<N>>,
    ) {
        assert_eq!(param_grad.len(), self.n_params);
        let out = self.output.expect("tape output not set");
        adjoints.clear();
        adjoints.resize(self.ops.len(), Dual2::ZERO);
        adjoints[out.0] = *seed;
        for (idx, op) in self.ops.iter().enumerate().rev() {
            let zbar = adjoints[idx];
            if is_zero(&zbar) {
                continue;
            }
            match *op {
                Op::Input(_) | Op::Const(_) => {}
                Op::Param(p) => {
                    // A parameter perturbation moves only the value slot.
                    param_grad[p] += zbar.v;
                }
                Op::Add(a, b) => {
                    acc(&mut adjoints[a], &zbar, 1.0);
                    acc(&mut adjoints[b], &zbar, 1.0);
                }
                Op::Sub(a, b) => {
                    acc(&mut adjoints[a], &zbar, 1.0);
                    acc(&mut adjoints[b], &zbar, -1.0);
                }
                Op::Neg(a) => {
                    acc(&mut adjoints[a], &zbar, -1.0);
                }
                Op::Mul(a, b) => {
                    let (xa, xb) = (values[a], values[b]);
                    mul_adjoint(&mut adjoints[a], &zbar, &xb);
                    mul_adjoint(&mut adjoints[b], &zbar, &xa);
                }
                Op::Recip(a) => {
                    let x = values[a].v;
                    let r = 1.0 / x;
                    let r2 = r * r;
                    unary_adjoint(&mut adjoints[a], &zbar, &values[a], -r2, 2.0 * r2 * r, -6.0 * r2 * r2);
                }
                Op::Tanh(a) => {
                    let t = x_tanh(values[a].v);
                    let s = 1.0 - t * t;
                    let d2 = -2.0 * t * s;
                    let d3 = -2.0 * s * s + 4.0 * t * t * s;
                    unary_adjoint(&mut adjoints[a], &zbar, &values[a], s, d2, d3);
                }
                Op::Exp(a) => {
                    let e = values[a].v.exp();
                    unary_adjoint(&mut adjoints[a], &zbar, &values[a], e, e, e);
                }
            }
        }
    }

    /// d(phi)/d(params) for the linear functional `seed` of the output
    /// components, freshly allocated.
    pub fn param_grad(&self, inputs: &[f64; N], params: &[f64], seed: &Dual2<N>) -> Vec<f64> {
        let mut values = Vec::new();
        let mut adjoints = Vec::new();
        self.forward(inputs, params, &mut values);
        let mut grad = vec![0.0; self.n_params];
        self.pullback(&values, seed, &mut grad, &mut adjoints);
        grad
    }
}

#[inline]
fn x_tanh(v: f64) -> f64 {
    v.tanh()
}

fn is_zero<const N: usize>(z: &Dual2<N>) -> bool {
    z.v == 0.0 && z.g.iter().all(|&x| x == 0.0) && z.h.iter().flatten().all(|&x| x == 0.0)
}

#[inline]
fn acc<const N: usize>(dst: &mut Dual2<N>, src: &Dual2<N>, w: f64) {
    dst.v += w * src.v;
    for i in 0..N {
        dst.g[i] += w * src.g[i];
    }
    for i in 0..N {
        for j in 0..N {
            dst.h[i][j] += w * src.h[i][j];
        }
    }
}

/// Adjoint of one factor of z = x * y given the other factor's forward value:
/// component-wise transpose of the bilinear forward rule.
#[inline]
fn mul_adjoint<const N: usize>(xbar: &mut Dual2<N>, zbar: &Dual2<N>, y: &Dual2<N>) {
    let mut v = zbar.v * y.v;
    for i in 0..N {
        v += zbar.g[i] * y.g[i];
    }
    for i in 0..N {
        for j in 0..N {
            v += zbar.h[i][j] * y.h[i][j];
        }
    }
    xbar.v += v;
    for i in 0..N {
        let mut gi = zbar.g[i] * y.v;
        for j in 0..N {
            gi += (zbar.h[i][j] + zbar.h[j][i]) * y.g[j];
        }
        xbar.g[i] += gi;
    }
    for i in 0..N {
        for j in 0..N {
            xbar.h[i][j] += zbar.h[i][j] * y.v;
        }
    }
}

/// Adjoint of z = phi(x) from derivatives d1, d2, d3 of phi at x.v and the
/// forward components of x.
#[inline]
fn unary_adjoint<const N: usize>(
    xbar: &mut Dual2<N>,
    zbar: &Dual2<N>,
    x: &Dual2<N>,
    d1: f64,
    d2: f64,
    d3: f64,
) {
    let mut v = d1 * zbar.v;
    for i in 0..N {
        v += d2 * zbar.g[i] * x.g[i];
    }
    for i in 0..N {
        for j in 0..N {
            v += zbar.h[i][j] * (d2 * x.h[i][j] + d3 * x.g[i] * x.g[j]);
        }
    }
    xbar.v += v;
    for i in 0..N {
        let mut cross = 0.0;
        for j in 0..N {
            cross += (zbar.h[i][j] + zbar.h[j][i]) * x.g[j];
        }
        xbar.g[i] += d1 * zbar.g[i] + d2 * cross;
    }
    for i in 0..N {
        for j in 0..N {
            xbar.h[i][j] += d1 * zbar.h[i][j];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// theta^T theta on the tape: gradient must be exactly 2 theta.
    #[test]
    fn quadratic_parameter_loss() {
        let mut tape = Tape::<1>::new(4);
        let mut acc = tape.constant(0.0);
        for p in 0..4 {
            let t = tape.param(p);
            let sq = tape.mul(t, t);
            acc = tape.add(acc, sq);
        }
        tape.set_output(acc);
        let theta = [0.3, -1.7, 2.0, 0.0];
        let seed = Dual2::<1>::constant(1.0); // phi = value slot
        let grad = tape.param_grad(&[0.0], &theta, &seed);
        for p in 0..4 {
            assert_eq!(grad[p], 2.0 * theta[p]);
        }
    }

    /// Forward replay reproduces the plain evaluation bit-for-bit.
    #[test]
    fn replay_is_bit_exact() {
        let mut tape = Tape::<2>::new(2);
        let x0 = tape.input(0);
        let x1 = tape.input(1);
        let w0 = tape.param(0);
        let w1 = tape.param(1);
        let m = tape.mul(x0, w0);
        let s = tape.add(m, x1);
        let t = tape.tanh(s);
        let e = tape.exp(w1);
        let q = tape.div(t, e);
        tape.set_output(q);
        let inputs = [0.7, -0.2];
        let params = [1.3, 0.4];
        let out = tape.eval(&inputs, &params);
        let plain = ((0.7f64 * 1.3 + -0.2).tanh()) * (1.0 / 0.4f64.exp());
        assert_eq!(out.v.to_bits(), plain.to_bits());
    }

    /// Builds a tiny MLP on the tape and checks the parameter gradient of a
    /// functional touching value, gradient and Hessian slots against central
    /// finite differences — the full third-order path.
    #[test]
    fn third_order_param_grad_matches_fd() {
        const IN: usize = 3;
        const HID: usize = 4;
        let n_params = HID * IN + HID + HID; // w1, b1, w2
        let mut tape = Tape::<IN>::new(n_params);
        let xs: Vec<Node> = (0..IN).map(|k| tape.input(k)).collect();
        let mut out = tape.constant(0.0);
        for u in 0..HID {
            let mut z = tape.constant(0.0);
            for k in 0..IN {
                let w = tape.param(u * IN + k);
                let m = tape.mul(w, xs[k]);
                z = tape.add(z, m);
            }
            let b = tape.param(HID * IN + u);
            z = tape.add(z, b);
            let a = tape.tanh(z);
            let w2 = tape.param(HID * IN + HID + u);
            let m = tape.mul(a, w2);
            out = tape.add(out, m);
        }
        tape.set_output(out);

        use rand::prelude::*;
        use rand_chacha::ChaCha12Rng;
        let mut rng = ChaCha12Rng::seed_from_u64(99);
        let params: Vec<f64> = (0..n_params).map(|_| rng.gen::<f64>() - 0.5).collect();
        let inputs = [0.3, -0.8, 1.1];

        // phi mixes all component kinds: value + weighted gradient + mixed Hessian entry
        let mut seed = Dual2::<IN>::constant(0.7);
        seed.g = [1.0, -2.0, 0.5];
        seed.h[0][1] = 3.0;
        let phi = |p: &[f64]| -> f64 {
            let o = tape.eval(&inputs, p);
            0.7 * o.v + o.g[0] - 2.0 * o.g[1] + 0.5 * o.g[2] + 3.0 * o.h[0][1]
        };

        let grad = tape.param_grad(&inputs, &params, &seed);
        let h = 1e-5;
        for p in 0..n_params {
            let mut pp = params.clone();
            let mut pm = params.clone();
            pp[p] += h;
            pm[p] -= h;
            let fd = (phi(&pp) - phi(&pm)) / (2.0 * h);
            let tol = 1e-5 * (1.0 + fd.abs()) + 1e-8;
            assert!(
                (grad[p] - fd).abs() <= tol,
                "param {p}: exact {} vs fd {fd}",
                grad[p]
            );
        }
    }

    #[test]
    fn powi_and_recip_adjoints_match_fd() {
        let mut tape = Tape::<1>::new(2);
        let x = tape.input(0);
        let a = tape.param(0);
        let b = tape.param(1);
        let ax = tape.mul(a, x);
        let cube = tape.powi(ax, 3);
        let shifted = tape.add(cube, b);
        let inv = tape.recip(shifted);
        tape.set_output(inv);
        let params = [1.3, 2.1];
        let inputs = [0.6];
        let mut seed = Dual2::<1>::ZERO;
        seed.h[0][0] = 1.0; // phi = second derivative of output wrt input
        let phi = |p: &[f64]| tape.eval(&inputs, p).h[0][0];
        let grad = tape.param_grad(&inputs, &params, &seed);
        let h = 1e-6;
        for p in 0..2 {
            let mut pp = params.to_vec();
            let mut pm = params.to_vec();
            pp[p] += h;
            pm[p] -= h;
            let fd = (phi(&pp) - phi(&pm)) / (2.0 * h);
            assert!(
                (grad[p] - fd).abs() <= 1e-5 * (1.0 + fd.abs()),
                "param {p}: {} vs {fd}",
                grad[p]
            );
        }
    }
}
