//! Newton iteration on the discrete Euler–Lagrange equations and full time
//! propagation from two initial rows.
//!
//! At node (i, j) the residual as a function of the unknown v = u_j^{i+1} is
//! F(v) = ∂₁L(u_j^i, v, u_{j+1}^i) + const: only the first stencil term of
//! the residual contains v, so the Newton Jacobian is exactly the mixed block
//! ∂²L/∂a∂b of that term. The solver reports ρ* = ‖(∂²L/∂a∂b)⁻¹‖ (spectral
//! norm) at the accepted solution; it governs the Newton convergence
//! constant, which is why training regularises it.

use crate::density::DensityModel;
use crate::error::{Error, Result};
use crate::grid::{FieldGrid, Mesh};
use crate::linalg;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GuessStrategy {
    /// u_j^i, the value one step below.
    PreviousValue,
    /// 2 u_j^i − u_j^{i−1}.
    LinearExtrapolation,
}

#[derive(Debug, Clone, Copy)]
pub struct SolverConfig {
    pub residual_tolerance: f64,
    pub max_iterations: usize,
    pub initial_guess_strategy: GuessStrategy,
    /// Cap on whole-row re-sweeps closing the periodic seam (the j = 0 solve
    /// lags the wrap neighbour u_{M-1}^{i+1} by one sweep).
    pub max_row_sweeps: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            residual_tolerance: 1e-12,
            max_iterations: 50,
            initial_guess_strategy: GuessStrategy::PreviousValue,
            max_row_sweeps: 50,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.residual_tolerance > 0.0) {
            return Err(Error::InvalidConfig(
                "residual_tolerance must be positive".into(),
            ));
        }
        if self.max_iterations < 1 || self.max_row_sweeps < 1 {
            return Err(Error::InvalidConfig(
                "max_iterations and max_row_sweeps must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Convergence record of one Newton solve.
#[derive(Debug, Clone)]
pub struct NewtonReport {
    pub iterations: usize,
    pub final_residual_norm: f64,
    /// ‖(∂²L/∂a∂b)⁻¹‖ at the accepted solution (spectral norm).
    pub rho_star: f64,
    /// Residual norms at the initial guess and after each update.
    pub per_iteration_errors: Vec<f64>,
    /// The iterates themselves, initial guess first, accepted value last.
    pub iterates: Vec<Vec<f64>>,
}

/// The six known stencil neighbours of the unknown u_j^{i+1}.
#[derive(Debug, Clone, Copy)]
pub struct NewtonNeighbours<'a> {
    /// u_j^i
    pub center: &'a [f64],
    /// u_{j+1}^i
    pub right: &'a [f64],
    /// u_j^{i-1}
    pub below: &'a [f64],
    /// u_{j+1}^{i-1}
    pub below_right: &'a [f64],
    /// u_{j-1}^i
    pub left: &'a [f64],
    /// u_{j-1}^{i+1}
    pub above_left: &'a [f64],
}

/// Solves the node residual for u_j^{i+1} by Newton iteration.
pub fn newton_step_solve<D: DensityModel + ?Sized>(
    ld: &D,
    nb: &NewtonNeighbours,
    guess: &[f64],
    cfg: &SolverConfig,
) -> Result<(Vec<f64>, NewtonReport)> {
    cfg.validate()?;
    let d = ld.dim();
    let mut s1 = vec![0.0; d];
    let mut s2 = vec![0.0; d];
    let mut s3 = vec![0.0; d];

    // Constant part of the residual: the second and third stencil terms do
    // not contain the unknown.
    let mut constant = vec![0.0; d];
    ld.first_partials(nb.below, nb.center, nb.below_right, &mut s1, &mut s2, &mut s3);
    for p in 0..d {
        constant[p] += s2[p];
    }
    ld.first_partials(nb.left, nb.above_left, nb.center, &mut s1, &mut s2, &mut s3);
    for p in 0..d {
        constant[p] += s3[p];
    }

    let mut v = guess.to_vec();
    let mut residual = vec![0.0; d];
    let mut jac = vec![0.0; d * d];
    let mut report = NewtonReport {
        iterations: 0,
        final_residual_norm: f64::INFINITY,
        rho_star: f64::INFINITY,
        per_iteration_errors: Vec::new(),
        iterates: Vec::new(),
    };
    loop {
        ld.first_partials(nb.center, &v, nb.right, &mut s1, &mut s2, &mut s3);
        let mut norm2 = 0.0;
        for p in 0..d {
            residual[p] = s1[p] + constant[p];
            norm2 += residual[p] * residual[p];
        }
        let norm = norm2.sqrt();
        if !norm.is_finite() {
            return Err(Error::NonFinite("Newton residual".into()));
        }
        report.per_iteration_errors.push(norm);
        report.iterates.push(v.clone());
        if norm <= cfg.residual_tolerance {
            report.final_residual_norm = norm;
            break;
        }
        if report.iterations >= cfg.max_iterations {
            return Err(Error::NoConvergence {
                i: 0,
                j: 0,
                iterations: report.iterations,
                residual: norm,
            });
        }
        ld.d12(nb.center, &v, nb.right, &mut jac);
        let mut step = residual.clone();
        if !linalg::solve_in_place(&mut jac, &mut step, d) {
            return Err(Error::SingularJacobian { i: 0, j: 0 });
        }
        for p in 0..d {
            v[p] -= step[p];
        }
        report.iterations += 1;
    }
    ld.d12(nb.center, &v, nb.right, &mut jac);
    report.rho_star = linalg::inverse_spectral_norm(&jac, d).unwrap_or(f64::INFINITY);
    Ok((v, report))
}

fn annotate(err: Error, i: usize, j: usize) -> Error {
    match err {
        Error::SingularJacobian { .. } => Error::SingularJacobian { i, j },
        Error::NoConvergence {
            iterations,
            residual,
            ..
        } => Error::NoConvergence {
            i,
            j,
            iterations,
            residual,
        },
        other => other,
    }
}

/// Propagates the field from two initial rows by solving the residual at
/// every node of each new row.
///
/// The j-sweep runs 0..M-1 using the current row values for the periodic
/// wrap term and re-sweeps until the whole row's residual stabilises below
/// the tolerance. Rows 0 and 1 of the result equal the inputs bit-for-bit.
pub fn propagate<D: DensityModel + ?Sized>(
    ld: &D,
    row0: &[f64],
    row1: &[f64],
    mesh: &Mesh,
    cfg: &SolverConfig,
) -> Result<FieldGrid> {
    propagate_observed(ld, row0, row1, mesh, cfg, &mut |_, _, _| {})
}

/// `propagate` with a per-solve observer receiving (i, j) of the residual
/// node and the Newton report, for verbose reporting.
pub fn propagate_observed<D: DensityModel + ?Sized>(
    ld: &D,
    row0: &[f64],
    row1: &[f64],
    mesh: &Mesh,
    cfg: &SolverConfig,
    observer: &mut dyn FnMut(usize, usize, &NewtonReport),
) -> Result<FieldGrid> {
    cfg.validate()?;
    let d = ld.dim();
    let m = mesh.m();
    if row0.len() != m * d || row1.len() != m * d {
        return Err(Error::DimensionMismatch {
            expected: m * d,
            got: row0.len().max(row1.len()),
        });
    }
    let mut u = FieldGrid::zeros(*mesh, d);
    u.set_row(0, row0);
    u.set_row(1, row1);

    let mut residual = vec![0.0; d];
    for i in 1..mesh.n() {
        // Seed the new row from the guess strategy; these values also serve
        // as the lagged wrap neighbours during the first sweep.
        for j in 0..m {
            let mut g = vec![0.0; d];
            for p in 0..d {
                g[p] = match cfg.initial_guess_strategy {
                    GuessStrategy::PreviousValue => u.get(i, j)[p],
                    GuessStrategy::LinearExtrapolation => {
                        2.0 * u.get(i, j)[p] - u.get(i - 1, j)[p]
                    }
                };
            }
            u.set(i + 1, j, &g);
        }
        let mut sweeps = 0;
        loop {
            for j in 0..m {
                let jp = (j + 1) % m;
                let jm = (j + m - 1) % m;
                let guess = u.get(i + 1, j).to_vec();
                let (v, report) = {
                    let nb = NewtonNeighbours {
                        center: u.get(i, j),
                        right: u.get(i, jp),
                        below: u.get(i - 1, j),
                        below_right: u.get(i - 1, jp),
                        left: u.get(i, jm),
                        above_left: u.get(i + 1, jm),
                    };
                    newton_step_solve(ld, &nb, &guess, cfg).map_err(|e| annotate(e, i, j))?
                };
                observer(i, j, &report);
                u.set(i + 1, j, &v);
            }
            sweeps += 1;
            // Row closure: residuals at time i with the completed row.
            let mut worst = 0.0f64;
            let mut worst_j = 0;
            for j in 0..m {
                node_residual(ld, &u, i, j, &mut residual);
                let norm = residual.iter().map(|x| x * x).sum::<f64>().sqrt();
                if norm > worst {
                    worst = norm;
                    worst_j = j;
                }
            }
            if worst <= cfg.residual_tolerance {
                break;
            }
            if sweeps >= cfg.max_row_sweeps {
                return Err(Error::NoConvergence {
                    i,
                    j: worst_j,
                    iterations: sweeps,
                    residual: worst,
                });
            }
        }
    }
    if !u.is_finite() {
        return Err(Error::NonFinite("propagated grid".into()));
    }
    Ok(u)
}

/// DEL residual at (i, j) without allocation (rows i-1..i+1 must be filled).
fn node_residual<D: DensityModel + ?Sized>(
    ld: &D,
    u: &FieldGrid,
    i: usize,
    j: usize,
    out: &mut [f64],
) {
    let d = ld.dim();
    let m = u.mesh().m();
    let jp = (j + 1) % m;
    let jm = (j + m - 1) % m;
    let mut s1 = vec![0.0; d];
    let mut s2 = vec![0.0; d];
    let mut s3 = vec![0.0; d];
    ld.first_partials(u.get(i, j), u.get(i + 1, j), u.get(i, jp), &mut s1, &mut s2, &mut s3);
    out.copy_from_slice(&s1);
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
}
