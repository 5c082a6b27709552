//! Gauge-transformed densities.
//!
//! L(a,b,c) = s·L̃(a,b,c) + χ₁(a) − χ₁(b) + χ₂(a) − χ₂(c) + χ₃(b) − χ₃(c)
//! has Euler–Lagrange residuals exactly s times those of the base density:
//! the χ contributions telescope across the three stencil terms. Wrapping a
//! density this way preserves its solution set, which is what makes the
//! density non-identifiable from data alone.

use super::{DensityModel, Potential};
use crate::error::{Error, Result};

pub struct GaugedDensity<D, X1, X2, X3>
where
    D: DensityModel,
    X1: Potential,
    X2: Potential,
    X3: Potential,
{
    base: D,
    s: f64,
    chi1: X1,
    chi2: X2,
    chi3: X3,
}

/// Wraps `base` with scale `s` (nonzero) and gauge functions χ₁, χ₂, χ₃.
pub fn gauge_wrap<D, X1, X2, X3>(
    base: D,
    s: f64,
    chi1: X1,
    chi2: X2,
    chi3: X3,
) -> Result<GaugedDensity<D, X1, X2, X3>>
where
    D: DensityModel,
    X1: Potential,
    X2: Potential,
    X3: Potential,
{
    if s == 0.0 || !s.is_finite() {
        return Err(Error::ZeroGaugeScale);
    }
    Ok(GaugedDensity {
        base,
        s,
        chi1,
        chi2,
        chi3,
    })
}

impl<D, X1, X2, X3> DensityModel for GaugedDensity<D, X1, X2, X3>
where
    D: DensityModel,
    X1: Potential,
    X2: Potential,
    X3: Potential,
{
    fn dim(&self) -> usize {
        self.base.dim()
    }

    fn eval(&self, a: &[f64], b: &[f64], c: &[f64]) -> f64 {
        self.s * self.base.eval(a, b, c)
            + self.chi1.value(a)
            - self.chi1.value(b)
            + self.chi2.value(a)
            - self.chi2.value(c)
            + self.chi3.value(b)
            - self.chi3.value(c)
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
        let d = self.dim();
        self.base.first_partials(a, b, c, d1, d2, d3);
        let mut tmp = vec![0.0; d];
        for v in [d1.iter_mut(), d2.iter_mut(), d3.iter_mut()] {
            for x in v {
                *x *= self.s;
            }
        }
        self.chi1.grad(a, &mut tmp);
        for p in 0..d {
            d1[p] += tmp[p];
        }
        self.chi2.grad(a, &mut tmp);
        for p in 0..d {
            d1[p] += tmp[p];
        }
        self.chi1.grad(b, &mut tmp);
        for p in 0..d {
            d2[p] -= tmp[p];
        }
        self.chi3.grad(b, &mut tmp);
        for p in 0..d {
            d2[p] += tmp[p];
        }
        self.chi2.grad(c, &mut tmp);
        for p in 0..d {
            d3[p] -= tmp[p];
        }
        self.chi3.grad(c, &mut tmp);
        for p in 0..d {
            d3[p] -= tmp[p];
        }
    }

    fn d12(&self, a: &[f64], b: &[f64], c: &[f64], out: &mut [f64]) {
        // The gauge terms are separable in the slots, so the mixed block is
        // the scaled base block.
        self.base.d12(a, b, c, out);
        for x in out.iter_mut() {
            *x *= self.s;
        }
    }

    fn grad_hess(&self, a: &[f64], b: &[f64], c: &[f64], grad: &mut [f64], hess: &mut [f64]) {
        let d = self.dim();
        let n = 3 * d;
        self.base.grad_hess(a, b, c, grad, hess);
        for x in grad.iter_mut() {
            *x *= self.s;
        }
        for x in hess.iter_mut() {
            *x *= self.s;
        }
        let mut tmp = vec![0.0; d];
        let mut tmp2 = vec![0.0; d * d];
        self.chi1.grad(a, &mut tmp);
        for p in 0..d {
            grad[p] += tmp[p];
        }
        self.chi2.grad(a, &mut tmp);
        for p in 0..d {
            grad[p] += tmp[p];
        }
        self.chi1.grad(b, &mut tmp);
        for p in 0..d {
            grad[d + p] -= tmp[p];
        }
        self.chi3.grad(b, &mut tmp);
        for p in 0..d {
            grad[d + p] += tmp[p];
        }
        self.chi2.grad(c, &mut tmp);
        for p in 0..d {
            grad[2 * d + p] -= tmp[p];
        }
        self.chi3.grad(c, &mut tmp);
        for p in 0..d {
            grad[2 * d + p] -= tmp[p];
        }
        // diagonal blocks
        self.chi1.hess(a, &mut tmp2);
        for p in 0..d {
            for q in 0..d {
                hess[p * n + q] += tmp2[p * d + q];
            }
        }
        self.chi2.hess(a, &mut tmp2);
        for p in 0..d {
            for q in 0..d {
                hess[p * n + q] += tmp2[p * d + q];
            }
        }
        self.chi1.hess(b, &mut tmp2);
        for p in 0..d {
            for q in 0..d {
                hess[(d + p) * n + (d + q)] -= tmp2[p * d + q];
            }
        }
        self.chi3.hess(b, &mut tmp2);
        for p in 0..d {
            for q in 0..d {
                hess[(d + p) * n + (d + q)] += tmp2[p * d + q];
            }
        }
        self.chi2.hess(c, &mut tmp2);
        for p in 0..d {
            for q in 0..d {
                hess[(2 * d + p) * n + (2 * d + q)] -= tmp2[p * d + q];
            }
        }
        self.chi3.hess(c, &mut tmp2);
        for p in 0..d {
            for q in 0..d {
                hess[(2 * d + p) * n + (2 * d + q)] -= tmp2[p * d + q];
            }
        }
    }
}

/// L ≡ const: consistent with any observed dynamics (all residuals vanish),
/// the degenerate model the solvability regulariser exists to exclude.
#[derive(Debug, Clone, Copy)]
pub struct ConstantDensity {
    pub value: f64,
    pub dim: usize,
}

impl ConstantDensity {
    pub fn new(value: f64, dim: usize) -> Self {
        ConstantDensity { value, dim }
    }
}

impl DensityModel for ConstantDensity {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, _a: &[f64], _b: &[f64], _c: &[f64]) -> f64 {
        self.value
    }

    fn first_partials(
        &self,
        _a: &[f64],
        _b: &[f64],
        _c: &[f64],
        d1: &mut [f64],
        d2: &mut [f64],
        d3: &mut [f64],
    ) {
        d1.fill(0.0);
        d2.fill(0.0);
        d3.fill(0.0);
    }

    fn d12(&self, _a: &[f64], _b: &[f64], _c: &[f64], out: &mut [f64]) {
        out.fill(0.0);
    }

    fn grad_hess(&self, _a: &[f64], _b: &[f64], _c: &[f64], grad: &mut [f64], hess: &mut [f64]) {
        grad.fill(0.0);
        hess.fill(0.0);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::test_support::fd_partial;
    use crate::density::{ClosurePotential, WaveDensity, ZeroPotential};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn identity_gauge_is_identity() {
        let base = WaveDensity::new(0.1, 0.2, 1);
        let wrapped = gauge_wrap(
            WaveDensity::new(0.1, 0.2, 1),
            1.0,
            ZeroPotential,
            ZeroPotential,
            ZeroPotential,
        )
        .unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        for _ in 0..20 {
            let a = [rng.gen::<f64>() * 2.0 - 1.0];
            let b = [rng.gen::<f64>() * 2.0 - 1.0];
            let c = [rng.gen::<f64>() * 2.0 - 1.0];
            assert_eq!(wrapped.eval(&a, &b, &c), base.eval(&a, &b, &c));
        }
    }

    #[test]
    fn zero_scale_rejected() {
        assert!(gauge_wrap(
            WaveDensity::new(0.1, 0.2, 1),
            0.0,
            ZeroPotential,
            ZeroPotential,
            ZeroPotential
        )
        .is_err());
    }

    #[test]
    fn gauged_partials_match_finite_differences() {
        let cubic = ClosurePotential {
            value_fn: |u: &[f64]| u[0].powi(3),
            grad_fn: |u: &[f64], out: &mut [f64]| out[0] = 3.0 * u[0] * u[0],
            hess_fn: |u: &[f64], out: &mut [f64]| out[0] = 6.0 * u[0],
        };
        let poly = ClosurePotential {
            value_fn: |u: &[f64]| 0.5 * u[0] * u[0] - 2.0 * u[0],
            grad_fn: |u: &[f64], out: &mut [f64]| out[0] = u[0] - 2.0,
            hess_fn: |_u: &[f64], out: &mut [f64]| out[0] = 1.0,
        };
        let linear = ClosurePotential {
            value_fn: |u: &[f64]| u[0],
            grad_fn: |_u: &[f64], out: &mut [f64]| out[0] = 1.0,
            hess_fn: |_u: &[f64], out: &mut [f64]| out[0] = 0.0,
        };
        let g = gauge_wrap(WaveDensity::new(0.1, 0.2, 1), 1.7, cubic, poly, linear).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(8);
        for _ in 0..30 {
            let a = [rng.gen::<f64>() * 2.0 - 1.0];
            let b = [rng.gen::<f64>() * 2.0 - 1.0];
            let c = [rng.gen::<f64>() * 2.0 - 1.0];
            let (mut d1, mut d2, mut d3) = (vec![0.0], vec![0.0], vec![0.0]);
            g.first_partials(&a, &b, &c, &mut d1, &mut d2, &mut d3);
            for (slot, exact) in [(0, d1[0]), (1, d2[0]), (2, d3[0])] {
                let fd = fd_partial(&g, &a, &b, &c, slot, 0, 1e-6);
                assert!(
                    (exact - fd).abs() <= 1e-6 * (1.0 + fd.abs()),
                    "slot {slot}: {exact} vs {fd}"
                );
            }
            // grad_hess diagonal-block corrections against finite differences
            let mut grad = vec![0.0; 3];
            let mut hess = vec![0.0; 9];
            g.grad_hess(&a, &b, &c, &mut grad, &mut hess);
            let h = 1e-5;
            let eval_at = |xs: &[f64; 3]| g.eval(&[xs[0]], &[xs[1]], &[xs[2]]);
            let x0 = [a[0], b[0], c[0]];
            for i in 0..3 {
                for j in 0..3 {
                    let mut pp = x0;
                    let mut pm = x0;
                    let mut mp = x0;
                    let mut mm = x0;
                    pp[i] += h;
                    pp[j] += h;
                    pm[i] += h;
                    pm[j] -= h;
                    mp[i] -= h;
                    mp[j] += h;
                    mm[i] -= h;
                    mm[j] -= h;
                    let fd2 = (eval_at(&pp) - eval_at(&pm) - eval_at(&mp) + eval_at(&mm))
                        / (4.0 * h * h);
                    assert!(
                        (hess[i * 3 + j] - fd2).abs() <= 2e-4 * (1.0 + fd2.abs()),
                        "hess {i}{j}: {} vs {fd2}",
                        hess[i * 3 + j]
                    );
                }
            }
        }
    }

    #[test]
    fn constant_density_has_zero_derivatives() {
        let cd = ConstantDensity::new(4.2, 2);
        assert_eq!(cd.eval(&[1.0, 2.0], &[0.0, 0.0], &[3.0, 1.0]), 4.2);
        let (mut d1, mut d2, mut d3) = (vec![9.0; 2], vec![9.0; 2], vec![9.0; 2]);
        cd.first_partials(&[1.0, 2.0], &[0.0, 0.0], &[3.0, 1.0], &mut d1, &mut d2, &mut d3);
        assert!(d1.iter().chain(&d2).chain(&d3).all(|&x| x == 0.0));
    }
}
