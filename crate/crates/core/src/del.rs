//! Discrete Euler–Lagrange residual assembly.
//!
//! The residual at an interior node (i, j), 1 <= i <= N-1, is the derivative
//! of the action sum with respect to u_j^i: the three density terms that
//! contain u_j^i contribute their slot partials,
//!
//!   DEL(i,j) = ∂₁L(u_j^i, u_j^{i+1}, u_{j+1}^i)
//!            + ∂₂L(u_j^{i-1}, u_j^i, u_{j+1}^{i-1})
//!            + ∂₃L(u_{j-1}^i, u_{j-1}^{i+1}, u_j^i),
//!
//! all spatial indices modulo M. The dt·dx prefactor of the action is
//! omitted, so losses built from these residuals are prefactor-free.

use std::path::Path;

use crate::density::DensityModel;
use crate::error::{Error, Result};
use crate::grid::{self, FieldGrid, Mesh};
use crate::textkv;

/// Residuals on the interior rows: entry (i, j) for i = 1..N-1 holds
/// DEL(i, j) ∈ ℝ^d.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualField {
    mesh: Mesh,
    d: usize,
    values: Vec<f64>, // (N-1) * M * d, time-major starting at i = 1
}

impl ResidualField {
    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    /// Residual at physical time index i (1 <= i <= N-1).
    pub fn get(&self, i: usize, j: usize) -> &[f64] {
        assert!((1..self.mesh.n()).contains(&i), "interior time index");
        let k = ((i - 1) * self.mesh.m() + (j % self.mesh.m())) * self.d;
        &self.values[k..k + self.d]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Sum over nodes of the squared Euclidean residual norm.
    pub fn sum_squares(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// DEL residual at one interior node.
pub fn del_residual<D: DensityModel + ?Sized>(
    ld: &D,
    u: &FieldGrid,
    i: usize,
    j: usize,
) -> Result<Vec<f64>> {
    let n = u.mesh().n();
    if i == 0 || i >= n {
        return Err(Error::TimeIndexOutOfRange { index: i, max: n - 1 });
    }
    let d = ld.dim();
    let m = u.mesh().m();
    let jp = (j + 1) % m;
    let jm = (j + m - 1) % m;
    let mut out = vec![0.0; d];
    let mut s1 = vec![0.0; d];
    let mut s2 = vec![0.0; d];
    let mut s3 = vec![0.0; d];
    // ∂₁ of the cell anchored at (i, j)
    ld.first_partials(u.get(i, j), u.get(i + 1, j), u.get(i, jp), &mut s1, &mut s2, &mut s3);
    for p in 0..d {
        out[p] = s1[p];
    }
    // ∂₂ of the cell anchored at (i-1, j)
    ld.first_partials(
        u.get(i - 1, j),
        u.get(i, j),
        u.get(i - 1, jp),
        &mut s1,
        &mut s2,
        &mut s3,
    );
    for p in 0..d {
        out[p] += s2[p];
    }
    // ∂₃ of the cell anchored at (i, j-1)
    ld.first_partials(
        u.get(i, jm),
        u.get(i + 1, jm),
        u.get(i, j),
        &mut s1,
        &mut s2,
        &mut s3,
    );
    for p in 0..d {
        out[p] += s3[p];
    }
    Ok(out)
}

/// Residual at every interior node. One density evaluation per cell; each
/// cell's partials feed the three residuals that reference it.
pub fn del_field<D: DensityModel + ?Sized>(ld: &D, u: &FieldGrid) -> Result<ResidualField> {
    if ld.dim() != u.dim() {
        return Err(Error::DimensionMismatch {
            expected: ld.dim(),
            got: u.dim(),
        });
    }
    let mesh = *u.mesh();
    let (n, m, d) = (mesh.n(), mesh.m(), ld.dim());
    let mut values = vec![0.0; (n - 1) * m * d];
    fill_rows(ld, u, 1, n, &mut values);
    let field = ResidualField { mesh, d, values };
    if !field.is_finite() {
        return Err(Error::NonFinite("DEL residual field".into()));
    }
    Ok(field)
}

/// Same field, rows evaluated in `threads` parallel chunks. Results are
/// bitwise identical to the sequential evaluation: every residual is the
/// same fixed-order three-term sum of pure per-cell evaluations.
pub fn del_field_threads<D: DensityModel + Sync + ?Sized>(
    ld: &D,
    u: &FieldGrid,
    threads: usize,
) -> Result<ResidualField> {
    if ld.dim() != u.dim() {
        return Err(Error::DimensionMismatch {
            expected: ld.dim(),
            got: u.dim(),
        });
    }
    let mesh = *u.mesh();
    let (n, m, d) = (mesh.n(), mesh.m(), ld.dim());
    let mut values = vec![0.0; (n - 1) * m * d];
    let threads = threads.max(1).min(n - 1);
    if threads == 1 {
        fill_rows(ld, u, 1, n, &mut values);
    } else {
        let rows_per = (n - 1).div_ceil(threads);
        let mut chunks: Vec<(usize, usize, &mut [f64])> = Vec::new();
        let mut rest = values.as_mut_slice();
        let mut row = 1;
        while row < n {
            let hi = (row + rows_per).min(n);
            let (head, tail) = rest.split_at_mut((hi - row) * m * d);
            chunks.push((row, hi, head));
            rest = tail;
            row = hi;
        }
        std::thread::scope(|scope| {
            for (lo, hi, chunk) in chunks {
                scope.spawn(move || fill_rows(ld, u, lo, hi, chunk));
            }
        });
    }
    let field = ResidualField { mesh, d, values };
    if !field.is_finite() {
        return Err(Error::NonFinite("DEL residual field".into()));
    }
    Ok(field)
}

/// Residuals for rows lo..hi (physical indices) into a chunk starting at row lo.
fn fill_rows<D: DensityModel + ?Sized>(
    ld: &D,
    u: &FieldGrid,
    lo: usize,
    hi: usize,
    out: &mut [f64],
) {
    let m = u.mesh().m();
    let d = ld.dim();
    // Per-cell partials for cell rows lo-1..hi; cell row i holds the cells
    // anchored at time i.
    let rows = hi - lo + 1;
    let mut cd1 = vec![0.0; rows * m * d];
    let mut cd2 = vec![0.0; rows * m * d];
    let mut cd3 = vec![0.0; rows * m * d];
    for (r, i) in (lo - 1..hi).enumerate() {
        for j in 0..m {
            let k = (r * m + j) * d;
            ld.first_partials(
                u.get(i, j),
                u.get(i + 1, j),
                u.get(i, (j + 1) % m),
                &mut cd1[k..k + d],
                &mut cd2[k..k + d],
                &mut cd3[k..k + d],
            );
        }
    }
    for (r, _i) in (lo..hi).enumerate() {
        for j in 0..m {
            let jm = (j + m - 1) % m;
            let out_k = (r * m + j) * d;
            let k_cell = ((r + 1) * m + j) * d; // cell (i, j)
            let k_prev = (r * m + j) * d; // cell (i-1, j)
            let k_left = ((r + 1) * m + jm) * d; // cell (i, j-1)
            for p in 0..d {
                out[out_k + p] = cd1[k_cell + p] + cd2[k_prev + p] + cd3[k_left + p];
            }
        }
    }
}

/// Residual fields reuse the grid file format with a RESIDUAL marker.
pub fn write_residual_string(r: &ResidualField) -> String {
    grid::grid_payload_string(*r.mesh(), r.d, r.mesh().n() - 1, &r.values, true)
}

pub fn read_residual_string(path: &str, text: &str) -> Result<ResidualField> {
    let (mesh, d, values) = grid::grid_payload_parse(path, text, true)?;
    Ok(ResidualField { mesh, d, values })
}

pub fn write_residual_file(r: &ResidualField, path: &Path) -> Result<()> {
    textkv::write_string(path, &write_residual_string(r))
}

pub fn read_residual_file(path: &Path) -> Result<ResidualField> {
    let text = textkv::read_to_string(path)?;
    read_residual_string(&path.display().to_string(), &text)
}
