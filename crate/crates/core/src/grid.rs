//! Space-time mesh and field-grid data model.
//!
//! The mesh is uniform and rectangular: N time steps of width dt = T/N over
//! [0, T], M spatial cells of width dx = l/M over the periodic interval
//! [0, l]. Field values live on the (N+1) × M nodes; spatial indexing is
//! modulo M everywhere. Storage is row-major by time index so a time
//! propagation writes one contiguous row per step.

use std::path::Path;

use crate::error::{Error, Result};
use crate::textkv::{self, Document, Writer};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mesh {
    t_final: f64,
    period: f64,
    n: usize,
    m: usize,
}

impl Mesh {
    pub fn new(t_final: f64, period: f64, n: usize, m: usize) -> Result<Mesh> {
        if !(t_final > 0.0) || !t_final.is_finite() {
            return Err(Error::InvalidConfig(format!("T must be positive, got {t_final}")));
        }
        if !(period > 0.0) || !period.is_finite() {
            return Err(Error::InvalidConfig(format!("l must be positive, got {period}")));
        }
        if n < 2 || m < 2 {
            return Err(Error::InvalidConfig(format!(
                "mesh needs N >= 2 and M >= 2, got N={n}, M={m}"
            )));
        }
        Ok(Mesh {
            t_final,
            period,
            n,
            m,
        })
    }

    /// Builds the mesh from step widths instead of the final time.
    pub fn from_steps(dt: f64, dx: f64, n: usize, m: usize) -> Result<Mesh> {
        Mesh::new(dt * n as f64, dx * m as f64, n, m)
    }

    pub fn t_final(&self) -> f64 {
        self.t_final
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    /// Number of time steps (the grid has N + 1 time rows).
    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of spatial cells.
    pub fn m(&self) -> usize {
        self.m
    }

    pub fn dt(&self) -> f64 {
        self.t_final / self.n as f64
    }

    pub fn dx(&self) -> f64 {
        self.period / self.m as f64
    }

    /// Mesh with the same widths extended (or truncated) to `n` time steps.
    pub fn with_time_steps(&self, n: usize) -> Result<Mesh> {
        Mesh::new(self.dt() * n as f64, self.period, n, self.m)
    }
}

/// Three stencil values (u_j^i, u_j^{i+1}, u_{j+1}^i), all of dimension d.
#[derive(Debug, Clone, PartialEq)]
pub struct Stencil {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
}

impl Stencil {
    pub fn new(a: Vec<f64>, b: Vec<f64>, c: Vec<f64>) -> Result<Stencil> {
        if a.len() != b.len() || a.len() != c.len() {
            return Err(Error::DimensionMismatch {
                expected: a.len(),
                got: if a.len() != b.len() { b.len() } else { c.len() },
            });
        }
        Ok(Stencil { a, b, c })
    }

    pub fn dim(&self) -> usize {
        self.a.len()
    }
}

/// Field values on the space-time mesh: entry (i, j) holds u_j^i ∈ ℝ^d.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldGrid {
    mesh: Mesh,
    d: usize,
    values: Vec<f64>, // (N+1) * M * d, time-major
}

impl FieldGrid {
    pub fn zeros(mesh: Mesh, d: usize) -> FieldGrid {
        FieldGrid {
            mesh,
            d,
            values: vec![0.0; (mesh.n + 1) * mesh.m * d],
        }
    }

    pub fn from_values(mesh: Mesh, d: usize, values: Vec<f64>) -> Result<FieldGrid> {
        let expected = (mesh.n + 1) * mesh.m * d;
        if values.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                got: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("field grid values".into()));
        }
        Ok(FieldGrid { mesh, d, values })
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        (i * self.mesh.m + j) * self.d
    }

    /// Value u_j^i; the spatial index wraps modulo M.
    #[inline]
    pub fn get(&self, i: usize, j: usize) -> &[f64] {
        let j = j % self.mesh.m;
        let k = self.idx(i, j);
        &self.values[k..k + self.d]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: &[f64]) {
        let j = j % self.mesh.m;
        let k = self.idx(i, j);
        self.values[k..k + self.d].copy_from_slice(value);
    }

    /// Whole time row i as a contiguous slice of length M * d.
    pub fn row(&self, i: usize) -> &[f64] {
        let k = self.idx(i, 0);
        &self.values[k..k + self.mesh.m * self.d]
    }

    pub fn set_row(&mut self, i: usize, row: &[f64]) {
        let k = self.idx(i, 0);
        self.values[k..k + self.mesh.m * self.d].copy_from_slice(row);
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Sum of squares of all entries (discrete l² norm squared).
    pub fn l2_norm_squared(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Stencil (u_j^i, u_j^{i+1}, u_{j+1 mod M}^i). The time index must satisfy
/// 0 <= i <= N-1 so the advanced row exists.
pub fn stencil_at(u: &FieldGrid, i: usize, j: usize) -> Result<Stencil> {
    let n = u.mesh.n;
    if i + 1 > n {
        return Err(Error::TimeIndexOutOfRange {
            index: i,
            max: n - 1,
        });
    }
    Ok(Stencil {
        a: u.get(i, j).to_vec(),
        b: u.get(i + 1, j).to_vec(),
        c: u.get(i, (j + 1) % u.mesh.m).to_vec(),
    })
}

/// Sup-norm distance max |U - V| over all nodes and components.
pub fn sup_norm_diff(u: &FieldGrid, v: &FieldGrid) -> Result<f64> {
    if u.mesh != v.mesh {
        return Err(Error::MeshMismatch(
            "sup_norm_diff requires identical meshes".into(),
        ));
    }
    if u.d != v.d {
        return Err(Error::DimensionMismatch {
            expected: u.d,
            got: v.d,
        });
    }
    Ok(u.values
        .iter()
        .zip(&v.values)
        .fold(0.0f64, |acc, (a, b)| acc.max((a - b).abs())))
}

const GRID_KEYS: &[&str] = &["T", "l", "N", "M", "d", "RESIDUAL"];

/// Serialises a grid in the text format: `T/l/N/M/d` header, then
/// (N+1)·M data lines of d comma-separated values, row i then column j.
pub fn write_grid_string(u: &FieldGrid) -> String {
    grid_payload_string(u.mesh, u.d, u.mesh.n + 1, &u.values, false)
}

pub(crate) fn grid_payload_string(
    mesh: Mesh,
    d: usize,
    rows: usize,
    values: &[f64],
    residual: bool,
) -> String {
    let mut w = Writer::new();
    w.kv_f64("T", mesh.t_final)
        .kv_f64("l", mesh.period)
        .kv("N", mesh.n)
        .kv("M", mesh.m)
        .kv("d", d);
    if residual {
        w.kv("RESIDUAL", 1);
    }
    w.blank();
    let mut line = String::new();
    for i in 0..rows {
        for j in 0..mesh.m {
            line.clear();
            let k = (i * mesh.m + j) * d;
            for p in 0..d {
                if p > 0 {
                    line.push(',');
                }
                line.push_str(&textkv::fmt_f64(values[k + p]));
            }
            w.line(&line);
        }
    }
    w.finish()
}

pub fn read_grid_string(path: &str, text: &str) -> Result<FieldGrid> {
    let (mesh, d, values) = grid_payload_parse(path, text, false)?;
    FieldGrid::from_values(mesh, d, values)
}

pub(crate) fn grid_payload_parse(
    path: &str,
    text: &str,
    residual: bool,
) -> Result<(Mesh, usize, Vec<f64>)> {
    let doc = Document::parse(path, text)?;
    doc.reject_unknown(GRID_KEYS)?;
    let mesh = Mesh::new(
        doc.get_f64("T")?,
        doc.get_f64("l")?,
        doc.get_usize("N")?,
        doc.get_usize("M")?,
    )?;
    let d = doc.get_usize("d")?;
    if d == 0 {
        return Err(Error::parse(path, "field dimension d must be >= 1"));
    }
    let has_marker = doc.get_opt("RESIDUAL").map(|v| v == "1").unwrap_or(false);
    if has_marker != residual {
        return Err(Error::parse(
            path,
            if residual {
                "expected a residual-field file (RESIDUAL = 1)"
            } else {
                "file is a residual field, not a field grid"
            },
        ));
    }
    let rows = if residual { mesh.n - 1 } else { mesh.n + 1 };
    let expected_lines = rows * mesh.m;
    if doc.data.len() != expected_lines {
        return Err(Error::parse(
            path,
            format!("expected {expected_lines} data lines, found {}", doc.data.len()),
        ));
    }
    let mut values = Vec::with_capacity(expected_lines * d);
    for line in &doc.data {
        let mut count = 0;
        for field in line.split(',') {
            values.push(textkv::parse_f64(path, field)?);
            count += 1;
        }
        if count != d {
            return Err(Error::parse(
                path,
                format!("expected {d} comma-separated values per line, found {count}"),
            ));
        }
    }
    Ok((mesh, d, values))
}

pub fn write_grid_file(u: &FieldGrid, path: &Path) -> Result<()> {
    textkv::write_string(path, &write_grid_string(u))
}

pub fn read_grid_file(path: &Path) -> Result<FieldGrid> {
    let text = textkv::read_to_string(path)?;
    read_grid_string(&path.display().to_string(), &text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    pub(crate) fn small_mesh() -> Mesh {
        Mesh::new(0.5, 1.0, 5, 4).unwrap()
    }

    fn random_grid(mesh: Mesh, d: usize, seed: u64) -> FieldGrid {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let values = (0..(mesh.n() + 1) * mesh.m() * d)
            .map(|_| rng.gen::<f64>() * 6.0 - 3.0)
            .collect();
        FieldGrid::from_values(mesh, d, values).unwrap()
    }

    #[test]
    fn mesh_widths() {
        let mesh = Mesh::new(0.5, 1.0, 20, 20).unwrap();
        assert!((mesh.dt() - 0.025).abs() <= f64::EPSILON);
        assert!((mesh.dx() - 0.05).abs() <= f64::EPSILON);
        // dt*N = T and dx*M = l to within one unit of roundoff
        assert!((mesh.dt() * 20.0 - 0.5).abs() <= 0.5 * f64::EPSILON);
        assert!((mesh.dx() * 20.0 - 1.0).abs() <= f64::EPSILON);
    }

    #[test]
    fn mesh_invariants_enforced() {
        assert!(Mesh::new(0.0, 1.0, 4, 4).is_err());
        assert!(Mesh::new(1.0, -1.0, 4, 4).is_err());
        assert!(Mesh::new(1.0, 1.0, 1, 4).is_err());
        assert!(Mesh::new(1.0, 1.0, 4, 1).is_err());
    }

    #[test]
    fn stencil_constant_grid() {
        let mesh = small_mesh();
        let mut u = FieldGrid::zeros(mesh, 1);
        for i in 0..=mesh.n() {
            for j in 0..mesh.m() {
                u.set(i, j, &[2.5]);
            }
        }
        let s = stencil_at(&u, 1, 2).unwrap();
        assert_eq!((s.a[0], s.b[0], s.c[0]), (2.5, 2.5, 2.5));
    }

    #[test]
    fn stencil_wraparound() {
        // u_j^i = i + j/M on a 1-field mesh: at (0, M-1) the stencil is
        // (1 - 1/M, 2 - 1/M, 1) after wrapping.
        let mesh = small_mesh();
        let m = mesh.m() as f64;
        let mut u = FieldGrid::zeros(mesh, 1);
        for i in 0..=mesh.n() {
            for j in 0..mesh.m() {
                u.set(i, j, &[i as f64 + j as f64 / m]);
            }
        }
        let s = stencil_at(&u, 0, mesh.m() - 1).unwrap();
        assert_eq!(s.a[0], 0.0 + (m - 1.0) / m);
        assert_eq!(s.b[0], 1.0 + (m - 1.0) / m);
        assert_eq!(s.c[0], 0.0); // wrapped to column 0
        // row index rewritten in the spec's 1-based style: a = 1 - 1/M + (i=0)
        assert!((s.a[0] - (1.0 - 1.0 / m)).abs() < 1e-15);
    }

    #[test]
    fn stencil_matches_direct_reads() {
        let mesh = small_mesh();
        let u = random_grid(mesh, 2, 42);
        for i in 0..mesh.n() {
            for j in 0..mesh.m() {
                let s = stencil_at(&u, i, j).unwrap();
                assert_eq!(s.a, u.get(i, j));
                assert_eq!(s.b, u.get(i + 1, j));
                assert_eq!(s.c, u.get(i, (j + 1) % mesh.m()));
            }
        }
    }

    #[test]
    fn stencil_time_range_error() {
        let mesh = small_mesh();
        let u = FieldGrid::zeros(mesh, 1);
        assert!(stencil_at(&u, mesh.n(), 0).is_err());
        assert!(stencil_at(&u, mesh.n() - 1, 0).is_ok());
    }

    #[test]
    fn periodicity_assertable() {
        let mesh = small_mesh();
        let u = random_grid(mesh, 1, 3);
        for i in 0..mesh.n() {
            let s = stencil_at(&u, i, mesh.m() - 1).unwrap();
            assert_eq!(s.c, u.get(i, 0));
        }
    }

    #[test]
    fn sup_norm_basics() {
        let mesh = small_mesh();
        let u = random_grid(mesh, 1, 9);
        assert_eq!(sup_norm_diff(&u, &u).unwrap(), 0.0);
        let mut v = u.clone();
        let base = v.get(2, 1)[0];
        v.set(2, 1, &[base + 0.5]);
        assert!((sup_norm_diff(&u, &v).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn sup_norm_matches_flat_scan() {
        let mesh = small_mesh();
        let u = random_grid(mesh, 2, 10);
        let v = random_grid(mesh, 2, 11);
        let scan = u
            .values()
            .iter()
            .zip(v.values())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert_eq!(sup_norm_diff(&u, &v).unwrap(), scan);
    }

    #[test]
    fn sup_norm_mesh_mismatch() {
        let u = FieldGrid::zeros(small_mesh(), 1);
        let v = FieldGrid::zeros(Mesh::new(0.5, 1.0, 6, 4).unwrap(), 1);
        assert!(sup_norm_diff(&u, &v).is_err());
    }

    #[test]
    fn file_round_trip_bit_exact() {
        let mesh = small_mesh();
        let u = random_grid(mesh, 2, 77);
        let text = write_grid_string(&u);
        let back = read_grid_string("mem", &text).unwrap();
        assert_eq!(u.values(), back.values());
        assert_eq!(u.mesh(), back.mesh());
        assert_eq!(write_grid_string(&back), text);
    }

    #[test]
    fn file_rejects_nan_and_bad_shape() {
        let mesh = small_mesh();
        let u = random_grid(mesh, 1, 5);
        let mut text = write_grid_string(&u);
        text = text.replacen(&textkv::fmt_f64(u.get(0, 0)[0]), "NaN", 1);
        assert!(read_grid_string("mem", &text).is_err());
        let truncated: String = write_grid_string(&u)
            .lines()
            .take(10)
            .collect::<Vec<_>>()
            .join("\n");
        assert!(read_grid_string("mem", &truncated).is_err());
    }

    proptest! {
        // sup_norm_diff is a metric: symmetry and the triangle inequality on
        // random grid triples (zero-iff-equal is covered above).
        #[test]
        fn sup_norm_is_a_metric(sa in 0u64..1000, sb in 0u64..1000, sc in 0u64..1000) {
            let mesh = small_mesh();
            let a = random_grid(mesh, 1, sa);
            let b = random_grid(mesh, 1, sb.wrapping_add(7_000));
            let c = random_grid(mesh, 1, sc.wrapping_add(14_000));
            let dab = sup_norm_diff(&a, &b).unwrap();
            let dba = sup_norm_diff(&b, &a).unwrap();
            prop_assert_eq!(dab, dba);
            let dac = sup_norm_diff(&a, &c).unwrap();
            let dcb = sup_norm_diff(&c, &b).unwrap();
            prop_assert!(dab <= dac + dcb + 1e-15);
            prop_assert_eq!(dab == 0.0, a == b);
        }
    }
}
