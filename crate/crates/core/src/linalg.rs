//! Dense linear algebra for small matrices (field dimension d is 1..=3 in all
//! targeted experiments, so everything here is direct and allocation-light).

/// Row-major d×d matrix view helpers operate on plain slices of length d*d.
///
/// Solves A x = b in place via partial-pivot LU. Returns false when A is
/// numerically singular.
pub fn solve_in_place(a: &mut [f64], b: &mut [f64], d: usize) -> bool {
    debug_assert_eq!(a.len(), d * d);
    debug_assert_eq!(b.len(), d);
    for col in 0..d {
        let mut pivot = col;
        let mut best = a[col * d + col].abs();
        for row in col + 1..d {
            let v = a[row * d + col].abs();
            if v > best {
                best = v;
                pivot = row;
            }
        }
        if best == 0.0 || !best.is_finite() {
            return false;
        }
        if pivot != col {
            for k in 0..d {
                a.swap(col * d + k, pivot * d + k);
            }
            b.swap(col, pivot);
        }
        let diag = a[col * d + col];
        for row in col + 1..d {
            let factor = a[row * d + col] / diag;
            if factor != 0.0 {
                for k in col..d {
                    a[row * d + k] -= factor * a[col * d + k];
                }
                b[row] -= factor * b[col];
            }
        }
    }
    for col in (0..d).rev() {
        let mut sum = b[col];
        for k in col + 1..d {
            sum -= a[col * d + k] * b[k];
        }
        b[col] = sum / a[col * d + col];
    }
    b.iter().all(|v| v.is_finite())
}

/// Smallest singular value of a d×d matrix.
///
/// d = 1: |a|. d = 2: closed form from the eigenvalues of AᵀA. d ≥ 3:
/// inverse iteration on AᵀA, converged to 1e-10 relative.
pub fn smallest_singular_value(a: &[f64], d: usize) -> f64 {
    debug_assert_eq!(a.len(), d * d);
    match d {
        1 => a[0].abs(),
        2 => {
            let g = gram(a, d);
            let (lo, _hi) = sym2_eigenvalues(&g);
            lo.max(0.0).sqrt()
        }
        _ => {
            let g = gram(a, d);
            smallest_eigenvalue_sym(&g, d).max(0.0).sqrt()
        }
    }
}

/// Spectral norm (largest singular value).
pub fn spectral_norm(a: &[f64], d: usize) -> f64 {
    debug_assert_eq!(a.len(), d * d);
    match d {
        1 => a[0].abs(),
        2 => {
            let g = gram(a, d);
            let (_lo, hi) = sym2_eigenvalues(&g);
            hi.max(0.0).sqrt()
        }
        _ => {
            let g = gram(a, d);
            largest_eigenvalue_sym(&g, d).max(0.0).sqrt()
        }
    }
}

/// Spectral norm of A⁻¹, i.e. the reciprocal of the smallest singular value.
/// Returns None when A is singular.
pub fn inverse_spectral_norm(a: &[f64], d: usize) -> Option<f64> {
    let sigma = smallest_singular_value(a, d);
    if sigma == 0.0 || !sigma.is_finite() {
        None
    } else {
        Some(1.0 / sigma)
    }
}

fn gram(a: &[f64], d: usize) -> Vec<f64> {
    let mut g = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            let mut s = 0.0;
            for k in 0..d {
                s += a[k * d + i] * a[k * d + j];
            }
            g[i * d + j] = s;
        }
    }
    g
}

/// Eigenvalues (ascending) of a symmetric 2×2 matrix given row-major.
fn sym2_eigenvalues(g: &[f64]) -> (f64, f64) {
    let (a, b, c) = (g[0], g[1], g[3]);
    let tr = a + c;
    let disc = (0.25 * (a - c) * (a - c) + b * b).sqrt();
    (0.5 * tr - disc, 0.5 * tr + disc)
}

/// Smallest eigenvalue of a symmetric positive semidefinite matrix via inverse
/// iteration with a small shift, converged to 1e-10 relative.
fn smallest_eigenvalue_sym(g: &[f64], d: usize) -> f64 {
    // Shift keeps the solve well posed when the matrix is near-singular.
    let scale = g
        .iter()
        .fold(0.0f64, |m, &v| m.max(v.abs()))
        .max(f64::MIN_POSITIVE);
    let shift = scale * 1e-14;
    let mut v = vec![0.0; d];
    v[0] = 1.0;
    for k in 1..d {
        v[k] = 1.0 / (k as f64 + 2.0); // deterministic non-axis start
    }
    normalize(&mut v);
    let mut lambda = rayleigh(g, &v, d);
    for _ in 0..200 {
        let mut m = g.to_vec();
        for i in 0..d {
            m[i * d + i] += shift;
        }
        let mut w = v.clone();
        if !solve_in_place(&mut m, &mut w, d) {
            // (G + shift) singular means smallest eigenvalue ~ -shift ~ 0.
            return 0.0;
        }
        normalize(&mut w);
        let next = rayleigh(g, &w, d);
        let done = (next - lambda).abs() <= 1e-10 * next.abs().max(1e-300);
        v = w;
        lambda = next;
        if done {
            break;
        }
    }
    lambda
}

fn largest_eigenvalue_sym(g: &[f64], d: usize) -> f64 {
    let mut v = vec![0.0; d];
    v[0] = 1.0;
    for k in 1..d {
        v[k] = 1.0 / (k as f64 + 2.0);
    }
    normalize(&mut v);
    let mut lambda = rayleigh(g, &v, d);
    for _ in 0..500 {
        let mut w = vec![0.0; d];
        for i in 0..d {
            let mut s = 0.0;
            for j in 0..d {
                s += g[i * d + j] * v[j];
            }
            w[i] = s;
        }
        normalize(&mut w);
        let next = rayleigh(g, &w, d);
        let done = (next - lambda).abs() <= 1e-12 * next.abs().max(1e-300);
        v = w;
        lambda = next;
        if done {
            break;
        }
    }
    lambda
}

fn rayleigh(g: &[f64], v: &[f64], d: usize) -> f64 {
    let mut num = 0.0;
    for i in 0..d {
        let mut s = 0.0;
        for j in 0..d {
            s += g[i * d + j] * v[j];
        }
        num += v[i] * s;
    }
    num
}

fn normalize(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        for x in v.iter_mut() {
            *x /= n;
        }
    }
}
