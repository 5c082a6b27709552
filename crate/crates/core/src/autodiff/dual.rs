//! Second-order forward-mode scalars.
//!
//! `Dual2<N>` carries a value together with exact first and second derivatives
//! with respect to N seed directions. The supported primitive set is
//! {+, -, *, /, tanh, exp, integer powers}; every rule propagates the full
//! gradient and Hessian, so no finite differencing is involved anywhere.

use std::ops::{Add, Div, Mul, Neg, Sub};

/// Value, gradient and Hessian over N seed variables.
///
/// The Hessian is stored as a full matrix; all update rules are symmetric in
/// the index pair, so `h[i][j] == h[j][i]` holds exactly (bitwise) after any
/// arithmetic chain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dual2<const N: usize> {
    pub v: f64,
    pub g: [f64; N],
    pub h: [[f64; N]; N],
}

impl<const N: usize> Dual2<N> {
    pub const ZERO: Dual2<N> = Dual2 {
        v: 0.0,
        g: [0.0; N],
        h: [[0.0; N]; N],
    };

    pub fn constant(v: f64) -> Self {
        Dual2 { v, ..Self::ZERO }
    }

    /// Seeds the k-th independent variable: unit first derivative in slot k.
    pub fn variable(v: f64, k: usize) -> Self {
        let mut x = Self::constant(v);
        x.g[k] = 1.0;
        x
    }

    pub fn is_finite(&self) -> bool {
        self.v.is_finite()
            && self.g.iter().all(|x| x.is_finite())
            && self.h.iter().flatten().all(|x| x.is_finite())
    }

    /// Chain rule for a smooth unary function with derivatives d1, d2 at `self.v`.
    /// The Hessian is mirror-written so symmetry holds bitwise.
    #[inline]
    fn unary(self, value: f64, d1: f64, d2: f64) -> Self {
        let mut out = Self::constant(value);
        for i in 0..N {
            out.g[i] = d1 * self.g[i];
        }
        for i in 0..N {
            for j in i..N {
                let v = d1 * self.h[i][j] + d2 * self.g[i] * self.g[j];
                out.h[i][j] = v;
                out.h[j][i] = v;
            }
        }
        out
    }

    pub fn tanh(self) -> Self {
        let t = self.v.tanh();
        let s = 1.0 - t * t;
        self.unary(t, s, -2.0 * t * s)
    }

    pub fn exp(self) -> Self {
        let e = self.v.exp();
        self.unary(e, e, e)
    }

    pub fn recip(self) -> Self {
        let r = 1.0 / self.v;
        self.unary(r, -r * r, 2.0 * r * r * r)
    }

    pub fn powi(self, n: i32) -> Self {
        match n {
            0 => Self::constant(1.0),
            1 => self,
            _ => {
                let v = self.v;
                let value = v.powi(n);
                let d1 = n as f64 * v.powi(n - 1);
                let d2 = (n as f64) * (n as f64 - 1.0) * v.powi(n - 2);
                self.unary(value, d1, d2)
            }
        }
    }

    pub fn scale(self, w: f64) -> Self {
        let mut out = Self::constant(w * self.v);
        for i in 0..N {
            out.g[i] = w * self.g[i];
        }
        for i in 0..N {
            for j in 0..N {
                out.h[i][j] = w * self.h[i][j];
            }
        }
        out
    }
}

impl<const N: usize> Add for Dual2<N> {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        let mut out = self;
        out.v += rhs.v;
        for i in 0..N {
            out.g[i] += rhs.g[i];
        }
        for i in 0..N {
            for j in 0..N {
                out.h[i][j] += rhs.h[i][j];
            }
        }
        out
    }
}

impl<const N: usize> Sub for Dual2<N> {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        let mut out = self;
        out.v -= rhs.v;
        for i in 0..N {
            out.g[i] -= rhs.g[i];
        }
        for i in 0..N {
            for j in 0..N {
                out.h[i][j] -= rhs.h[i][j];
            }
        }
        out
    }
}

impl<const N: usize> Neg for Dual2<N> {
    type Output = Self;
    fn neg(self) -> Self {
        self.scale(-1.0)
    }
}

impl<const N: usize> Mul for Dual2<N> {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        let (x, y) = (self, rhs);
        let mut out = Self::constant(x.v * y.v);
        for i in 0..N {
            out.g[i] = x.v * y.g[i] + y.v * x.g[i];
        }
        for i in 0..N {
            for j in i..N {
                let v = x.v * y.h[i][j] + y.v * x.h[i][j] + x.g[i] * y.g[j] + x.g[j] * y.g[i];
                out.h[i][j] = v;
                out.h[j][i] = v;
            }
        }
        out
    }
}

impl<const N: usize> Div for Dual2<N> {
    type Output = Self;
    fn div(self, rhs: Self) -> Self {
        self * rhs.recip()
    }
}

impl<const N: usize> Add<f64> for Dual2<N> {
    type Output = Self;
    fn add(self, rhs: f64) -> Self {
        let mut out = self;
        out.v += rhs;
        out
    }
}

impl<const N: usize> Sub<f64> for Dual2<N> {
    type Output = Self;
    fn sub(self, rhs: f64) -> Self {
        let mut out = self;
        out.v -= rhs;
        out
    }
}

impl<const N: usize> Mul<f64> for Dual2<N> {
    type Output = Self;
    fn mul(self, rhs: f64) -> Self {
        self.scale(rhs)
    }
}

impl<const N: usize> Mul<Dual2<N>> for f64 {
    type Output = Dual2<N>;
    fn mul(self, rhs: Dual2<N>) -> Dual2<N> {
        rhs.scale(self)
    }
}

/// Exact value, gradient and Hessian of `f` at `x` (no finite differencing).
pub fn grad_hess<const N: usize, F>(f: F, x: &[f64; N]) -> (f64, [f64; N], [[f64; N]; N])
where
    F: FnOnce(&[Dual2<N>; N]) -> Dual2<N>,
{
    let mut seeded = [Dual2::<N>::ZERO; N];
    for (k, (s, &v)) in seeded.iter_mut().zip(x.iter()).enumerate() {
        *s = Dual2::variable(v, k);
    }
    let out = f(&seeded);
    (out.v, out.g, out.h)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_close(a: f64, b: f64, tol: f64, what: &str) {
        assert!((a - b).abs() <= tol * (1.0 + a.abs().max(b.abs())), "{what}: {a} vs {b}");
    }

    #[test]
    fn quadratic() {
        let (v, g, h) = grad_hess(|x| x[0] * x[0], &[3.0]);
        assert_eq!(v, 9.0);
        assert_eq!(g, [6.0]);
        assert_eq!(h, [[2.0]]);
    }

    #[test]
    fn tanh_of_product_at_origin() {
        let (v, g, h) = grad_hess(|x| (x[0] * x[1]).tanh(), &[0.0, 0.0]);
        assert_eq!(v, 0.0);
        assert_eq!(g, [0.0, 0.0]);
        assert_eq!(h, [[0.0, 1.0], [1.0, 0.0]]);
    }

    #[test]
    fn value_slot_matches_plain_eval_bitwise() {
        // Identical op sequence on f64 and Dual2 must agree bit-for-bit.
        let x: [f64; 3] = [0.37, -1.2, 2.1];
        let plain = {
            let (a, b, c) = (x[0], x[1], x[2]);
            ((a * b).tanh() + c.exp() * a - b / c).powi(3)
        };
        let (v, _, _) = grad_hess(
            |x| {
                let (a, b, c) = (x[0], x[1], x[2]);
                ((a * b).tanh() + c.exp() * a - b / c).powi(3)
            },
            &x,
        );
        assert_eq!(v.to_bits(), plain.to_bits());
    }

    /// Central finite differences of f, step 1e-4.
    fn fd_grad_hess<const N: usize>(
        f: &dyn Fn(&[f64; N]) -> f64,
        x: &[f64; N],
    ) -> ([f64; N], [[f64; N]; N]) {
        let h = 1e-4;
        let mut g = [0.0; N];
        let mut hess = [[0.0; N]; N];
        for i in 0..N {
            let mut xp = *x;
            let mut xm = *x;
            xp[i] += h;
            xm[i] -= h;
            g[i] = (f(&xp) - f(&xm)) / (2.0 * h);
        }
        for i in 0..N {
            for j in 0..N {
                let mut xpp = *x;
                let mut xpm = *x;
                let mut xmp = *x;
                let mut xmm = *x;
                xpp[i] += h;
                xpp[j] += h;
                xpm[i] += h;
                xpm[j] -= h;
                xmp[i] -= h;
                xmp[j] += h;
                xmm[i] -= h;
                xmm[j] -= h;
                hess[i][j] = (f(&xpp) - f(&xpm) - f(&xmp) + f(&xmm)) / (4.0 * h * h);
            }
        }
        (g, hess)
    }

    #[test]
    fn random_mlp_matches_finite_differences() {
        use rand::prelude::*;
        use rand_chacha::ChaCha12Rng;
        let mut rng = ChaCha12Rng::seed_from_u64(123);
        for _ in 0..10 {
            let w1: Vec<f64> = (0..15).map(|_| rng.gen::<f64>() - 0.5).collect();
            let b1: Vec<f64> = (0..5).map(|_| rng.gen::<f64>() - 0.5).collect();
            let w2: Vec<f64> = (0..5).map(|_| rng.gen::<f64>() - 0.5).collect();
            let x: [f64; 3] = [
                rng.gen::<f64>() * 2.0 - 1.0,
                rng.gen::<f64>() * 2.0 - 1.0,
                rng.gen::<f64>() * 2.0 - 1.0,
            ];
            let fd_f = |x: &[f64; 3]| -> f64 {
                let mut out = 0.0;
                for u in 0..5 {
                    let mut acc = 0.0;
                    for k in 0..3 {
                        acc += x[k] * w1[u * 3 + k];
                    }
                    acc += b1[u];
                    out += acc.tanh() * w2[u];
                }
                out
            };
            let (_, g, h) = grad_hess(
                |x| {
                    let mut out = Dual2::<3>::ZERO;
                    for u in 0..5 {
                        let mut acc = Dual2::<3>::ZERO;
                        for k in 0..3 {
                            acc = acc + x[k] * w1[u * 3 + k];
                        }
                        acc = acc + b1[u];
                        out = out + acc.tanh() * w2[u];
                    }
                    out
                },
                &x,
            );
            let (fg, fh) = fd_grad_hess(&fd_f, &x);
            for i in 0..3 {
                assert_close(g[i], fg[i], 1e-6, "gradient");
                for j in 0..3 {
                    assert_close(h[i][j], fh[i][j], 1e-6, "hessian");
                }
            }
        }
    }

    #[test]
    fn hessian_exactly_symmetric_along_chains() {
        use rand::prelude::*;
        use rand_chacha::ChaCha12Rng;
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        for _ in 0..100 {
            let x: [f64; 3] = [
                rng.gen::<f64>() * 4.0 - 2.0,
                rng.gen::<f64>() * 4.0 - 2.0,
                rng.gen::<f64>() * 4.0 - 2.0,
            ];
            let (_, _, h) = grad_hess(
                |x| {
                    let p = x[0] * x[1] * x[2];
                    let q = (x[0] + x[2] * 0.3).exp();
                    let r = (x[1] - x[0]).tanh();
                    p * q + r.powi(3) - q / (p * p + 1.0)
                },
                &x,
            );
            for i in 0..3 {
                for j in 0..3 {
                    assert_eq!(h[i][j].to_bits(), h[j][i].to_bits());
                }
            }
        }
    }

    #[test]
    fn division_and_powers() {
        let (v, g, h) = grad_hess(|x| x[0].powi(3) / x[1], &[2.0, 4.0]);
        assert_close(v, 2.0, 1e-15, "value");
        assert_close(g[0], 3.0, 1e-12, "d/da a^3/b");
        assert_close(g[1], -0.5, 1e-12, "d/db a^3/b");
        assert_close(h[0][0], 3.0, 1e-12, "h00");
        assert_close(h[0][1], -0.75, 1e-12, "h01");
        assert_close(h[1][1], 0.25, 1e-12, "h11");
    }
}
