//! Travelling waves of a discrete field theory.
//!
//! A travelling-wave candidate is a speed c and an l-periodic profile given
//! as a discrete Fourier series with M coefficients (conjugate-symmetric, so
//! profile values are real). Sampling the advected profile on the space-time
//! mesh, u_j^i = f(jΔx − c·iΔt), turns the travelling-wave functional
//! equation into the grid residual: the TW loss sums squared Euler–Lagrange
//! residuals of that grid, plus a barrier exp(−100‖U‖²) that penalises the
//! trivial zero solution.

use std::f64::consts::PI;
use std::path::Path;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::datagen::standard_normal;
use crate::del::del_field;
use crate::density::DensityModel;
use crate::error::{Error, Result};
use crate::grid::{FieldGrid, Mesh};
use crate::textkv::{self, Document, Writer};
use crate::train::{adam_step, AdamState, TrainConfig};

/// Wave speed plus the M Fourier coefficients of the profile, mode indices
/// running from −⌊(M−1)/2⌋ to ⌊M/2⌋ with the reality constraint
/// f̂_{−m} = conj(f̂_m).
#[derive(Debug, Clone, PartialEq)]
pub struct TravellingWaveState {
    c: f64,
    fhat: Vec<Complex64>,
    period: f64,
}

impl TravellingWaveState {
    pub fn new(c: f64, fhat: Vec<Complex64>, period: f64) -> Result<TravellingWaveState> {
        if fhat.is_empty() {
            return Err(Error::InvalidConfig("empty coefficient vector".into()));
        }
        if !(period > 0.0) {
            return Err(Error::InvalidConfig("period must be positive".into()));
        }
        let state = TravellingWaveState { c, fhat, period };
        let m_count = state.fhat.len();
        let scale = state
            .fhat
            .iter()
            .fold(1.0f64, |s, z| s.max(z.norm()));
        for m in 1..=(m_count - 1) / 2 {
            let pos = state.coeff(m as i64);
            let neg = state.coeff(-(m as i64));
            if (neg - pos.conj()).norm() > 1e-12 * scale {
                return Err(Error::InvalidConfig(format!(
                    "reality constraint violated at mode {m}"
                )));
            }
        }
        Ok(state)
    }

    /// All-zero profile with speed zero.
    pub fn zero(m_count: usize, period: f64) -> TravellingWaveState {
        TravellingWaveState {
            c: 0.0,
            fhat: vec![Complex64::new(0.0, 0.0); m_count],
            period,
        }
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    pub fn mode_count(&self) -> usize {
        self.fhat.len()
    }

    fn mode_min(&self) -> i64 {
        -((self.fhat.len() as i64 - 1) / 2)
    }

    fn mode_max(&self) -> i64 {
        self.fhat.len() as i64 / 2
    }

    /// Coefficient of mode m.
    pub fn coeff(&self, m: i64) -> Complex64 {
        debug_assert!(m >= self.mode_min() && m <= self.mode_max());
        self.fhat[(m - self.mode_min()) as usize]
    }

    fn coeff_mut(&mut self, m: i64) -> &mut Complex64 {
        let lo = self.mode_min();
        &mut self.fhat[(m - lo) as usize]
    }

    /// Packs the optimisation variables: (c, Re f̂_m, Im f̂_m) for the
    /// non-negative modes; the negative modes are implied by conjugation.
    pub fn pack(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(1 + 2 * (self.mode_max() as usize + 1));
        out.push(self.c);
        for m in 0..=self.mode_max() {
            let z = self.coeff(m);
            out.push(z.re);
            out.push(z.im);
        }
        out
    }

    /// Inverse of `pack`.
    pub fn unpack(params: &[f64], m_count: usize, period: f64) -> TravellingWaveState {
        let mut state = TravellingWaveState::zero(m_count, period);
        state.c = params[0];
        let m_max = state.mode_max();
        for m in 0..=m_max {
            let z = Complex64::new(params[1 + 2 * m as usize], params[2 + 2 * m as usize]);
            *state.coeff_mut(m) = z;
            if m > 0 && -m >= state.mode_min() {
                *state.coeff_mut(-m) = z.conj();
            }
        }
        state
    }

    /// Adds N(0, σ²) noise to the speed and to the real and imaginary parts
    /// of every stored optimisation coefficient, reproducibly.
    pub fn perturbed(&self, sigma: f64, seed: u64) -> TravellingWaveState {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut params = self.pack();
        for p in params.iter_mut() {
            *p += sigma * standard_normal(&mut rng);
        }
        TravellingWaveState::unpack(&params, self.mode_count(), self.period)
    }
}

/// Real profile value f(ξ) = Re Σ f̂_m exp(i·m·(2π/l)·ξ).
pub fn profile_eval(state: &TravellingWaveState, xi: f64) -> f64 {
    let omega = 2.0 * PI / state.period;
    let mut acc = 0.0;
    for m in state.mode_min()..=state.mode_max() {
        let phase = m as f64 * omega * xi;
        let e = Complex64::new(phase.cos(), phase.sin());
        acc += (state.coeff(m) * e).re;
    }
    acc
}

/// dϕ/dξ of the profile, needed for the speed gradient.
pub fn profile_deriv(state: &TravellingWaveState, xi: f64) -> f64 {
    let omega = 2.0 * PI / state.period;
    let mut acc = 0.0;
    for m in state.mode_min()..=state.mode_max() {
        let w = m as f64 * omega;
        let phase = w * xi;
        let e = Complex64::new(phase.cos(), phase.sin());
        acc += (state.coeff(m) * Complex64::new(0.0, w) * e).re;
    }
    acc
}

/// Samples the advected profile on the mesh: u_j^i = f(jΔx − c·iΔt).
pub fn tw_grid(state: &TravellingWaveState, mesh: &Mesh) -> FieldGrid {
    let mut u = FieldGrid::zeros(*mesh, 1);
    let (dt, dx) = (mesh.dt(), mesh.dx());
    for i in 0..=mesh.n() {
        for j in 0..mesh.m() {
            let xi = j as f64 * dx - state.c * i as f64 * dt;
            u.set(i, j, &[profile_eval(state, xi)]);
        }
    }
    u
}

/// Wave speed of one Fourier mode of the discrete wave equation with
/// quadratic potential.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DispersionRoot {
    pub n: i64,
    pub c: f64,
    /// No real speed exists (the discrete dispersion relation has no root,
    /// or the mode is the degenerate n = 0 case).
    pub resonant: bool,
}

/// Right-hand side of the dispersion relation for mode n:
/// cos(κ_n c Δt) = 1 − Δt²/2 + (Δt²/Δx²)(cos(κ_n Δx) − 1).
pub fn dispersion_rhs(n: i64, mesh: &Mesh) -> f64 {
    let kappa = 2.0 * PI * n as f64 / mesh.period();
    let (dt, dx) = (mesh.dt(), mesh.dx());
    1.0 - dt * dt / 2.0 + (dt * dt) / (dx * dx) * ((kappa * dx).cos() - 1.0)
}

/// Principal non-negative dispersion root for mode n.
pub fn dispersion_root(n: i64, mesh: &Mesh) -> Result<DispersionRoot> {
    if n.unsigned_abs() as usize > mesh.m() / 2 {
        return Err(Error::InvalidMode { n, m: mesh.m() });
    }
    if n == 0 {
        // cos(0) = 1 can never equal 1 − Δt²/2: the zero mode is degenerate.
        return Ok(DispersionRoot {
            n,
            c: 0.0,
            resonant: true,
        });
    }
    let rhs = dispersion_rhs(n, mesh);
    if rhs.abs() > 1.0 {
        return Err(Error::ResonantMode { n });
    }
    let kappa = 2.0 * PI * n as f64 / mesh.period();
    let c = rhs.acos() / (kappa.abs() * mesh.dt());
    Ok(DispersionRoot {
        n,
        c,
        resonant: false,
    })
}

/// Exact travelling wave of the discrete wave equation (quadratic
/// potential): profile α·sin(κ_n ξ) + β·cos(κ_n ξ) with the principal
/// dispersion speed. The n = 0 mode returns a constant profile flagged
/// resonant/degenerate.
pub fn exact_wave_tw(
    n: i64,
    alpha: f64,
    beta: f64,
    mesh: &Mesh,
) -> Result<(TravellingWaveState, DispersionRoot)> {
    let root = dispersion_root(n, mesh)?;
    let mut state = TravellingWaveState::zero(mesh.m(), mesh.period());
    state.c = root.c;
    if n == 0 {
        *state.coeff_mut(0) = Complex64::new(beta, 0.0);
        return Ok((state, root));
    }
    if n.unsigned_abs() as usize == mesh.m() / 2 && mesh.m() % 2 == 0 && n > 0 {
        // unpaired Nyquist mode
        *state.coeff_mut(n) = Complex64::new(beta, -alpha);
    } else {
        *state.coeff_mut(n) = Complex64::new(0.5 * beta, -0.5 * alpha);
        *state.coeff_mut(-n) = Complex64::new(0.5 * beta, 0.5 * alpha);
    }
    Ok((state, root))
}

/// ℓ_TW: sum of squared Euler–Lagrange residuals of the sampled grid.
pub fn tw_residual<D: DensityModel + ?Sized>(
    ld: &D,
    state: &TravellingWaveState,
    mesh: &Mesh,
) -> Result<f64> {
    let u = tw_grid(state, mesh);
    Ok(del_field(ld, &u)?.sum_squares())
}

/// Anti-trivial barrier exp(−100·‖U‖²) on the sampled grid.
pub fn tw_regulariser(state: &TravellingWaveState, mesh: &Mesh) -> f64 {
    let u = tw_grid(state, mesh);
    (-100.0 * u.l2_norm_squared()).exp()
}

/// Total loss ℓ_TW + ℓ_TW_reg.
pub fn tw_loss<D: DensityModel + ?Sized>(
    ld: &D,
    state: &TravellingWaveState,
    mesh: &Mesh,
) -> Result<f64> {
    Ok(tw_residual(ld, state, mesh)? + tw_regulariser(state, mesh))
}

/// Loss and its exact gradient with respect to the packed variables
/// (c, Re f̂_m, Im f̂_m for m ≥ 0).
///
/// Residuals are differentiated through the per-cell density Hessians;
/// grid-point sensitivities then chain through the trigonometric sampling
/// map. `use_regulariser` selects the full loss or ℓ_TW alone.
pub fn tw_loss_grad<D: DensityModel + ?Sized>(
    ld: &D,
    state: &TravellingWaveState,
    mesh: &Mesh,
    use_regulariser: bool,
) -> Result<(f64, Vec<f64>)> {
    if ld.dim() != 1 {
        return Err(Error::DimensionMismatch {
            expected: 1,
            got: ld.dim(),
        });
    }
    let (n, m) = (mesh.n(), mesh.m());
    let (dt, dx) = (mesh.dt(), mesh.dx());
    let u = tw_grid(state, mesh);

    // Per-cell gradient and Hessian of the density.
    let cells = n * m;
    let mut cg = vec![[0.0; 3]; cells];
    let mut ch = vec![[0.0; 9]; cells];
    {
        let mut grad = [0.0; 3];
        let mut hess = [0.0; 9];
        for i in 0..n {
            for j in 0..m {
                ld.grad_hess(u.get(i, j), u.get(i + 1, j), u.get(i, j + 1), &mut grad, &mut hess);
                let k = i * m + j;
                cg[k] = grad;
                ch[k].copy_from_slice(&hess);
            }
        }
    }

    // Residuals on interior rows and the loss value.
    let mut r = vec![0.0; n * m];
    let mut loss = 0.0;
    for i in 1..n {
        for j in 0..m {
            let jm = (j + m - 1) % m;
            let rij = cg[i * m + j][0] + cg[(i - 1) * m + j][1] + cg[i * m + jm][2];
            r[i * m + j] = rij;
            loss += rij * rij;
        }
    }

    // d(loss)/du at every grid node: each cell's Hessian rows scatter the
    // residual adjoints onto the cell's three points.
    let mut dldu = vec![0.0; (n + 1) * m];
    for i in 0..n {
        for j in 0..m {
            let jp = (j + 1) % m;
            let h = &ch[i * m + j];
            let points = [i * m + j, (i + 1) * m + j, i * m + jp];
            let weights = [
                if i >= 1 { 2.0 * r[i * m + j] } else { 0.0 },
                if i + 1 < n { 2.0 * r[(i + 1) * m + j] } else { 0.0 },
                if i >= 1 { 2.0 * r[i * m + jp] } else { 0.0 },
            ];
            for (slot, &w) in weights.iter().enumerate() {
                if w != 0.0 {
                    for k in 0..3 {
                        dldu[points[k]] += w * h[slot * 3 + k];
                    }
                }
            }
        }
    }

    if use_regulariser {
        let norm2 = u.l2_norm_squared();
        let reg = (-100.0 * norm2).exp();
        loss += reg;
        if reg > 0.0 {
            for i in 0..=n {
                for j in 0..m {
                    dldu[i * m + j] += -200.0 * u.get(i, j)[0] * reg;
                }
            }
        }
    }

    // Chain through the sampling map u(i, j) = f(jΔx − c·iΔt).
    let m_max = state.mode_max();
    let omega = 2.0 * PI / state.period();
    let mut grad = vec![0.0; 1 + 2 * (m_max as usize + 1)];
    for i in 0..=n {
        for j in 0..m {
            let w = dldu[i * m + j];
            if w == 0.0 {
                continue;
            }
            let xi = j as f64 * dx - state.c() * i as f64 * dt;
            grad[0] += w * (-(i as f64) * dt) * profile_deriv(state, xi);
            // e^{i m ω ξ} by repeated multiplication
            let step = Complex64::new((omega * xi).cos(), (omega * xi).sin());
            let mut zm = Complex64::new(1.0, 0.0);
            for mm in 0..=m_max {
                // modes with a conjugate partner contribute twice
                let factor = if mm > 0 && -mm >= state.mode_min() {
                    2.0
                } else {
                    1.0
                };
                grad[1 + 2 * mm as usize] += w * factor * zm.re;
                grad[2 + 2 * mm as usize] += w * (-factor * zm.im);
                zm *= step;
            }
        }
    }
    Ok((loss, grad))
}

#[derive(Debug, Clone, Copy)]
pub struct TwSearchConfig {
    pub steps: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub use_regulariser: bool,
}

impl Default for TwSearchConfig {
    fn default() -> Self {
        TwSearchConfig {
            steps: 10_000,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            use_regulariser: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TwSearchResult {
    /// The best state visited (adam keeps moving near flat minima, so the
    /// last iterate is not necessarily the best one).
    pub state: TravellingWaveState,
    /// Loss of the returned state.
    pub best_loss: f64,
    /// Loss value at the initial state and after every step.
    pub history: Vec<f64>,
    pub aborted: Option<String>,
}

/// Minimises the TW loss from the given initialisation by adam on the packed
/// variables. Deterministic: all randomness lives in the caller's choice of
/// initial state.
pub fn find_tw<D: DensityModel + ?Sized>(
    ld: &D,
    init: &TravellingWaveState,
    mesh: &Mesh,
    cfg: &TwSearchConfig,
) -> Result<TwSearchResult> {
    let m_count = init.mode_count();
    let period = init.period();
    let mut params = init.pack();
    let adam_cfg = TrainConfig {
        learning_rate: cfg.learning_rate,
        beta1: cfg.beta1,
        beta2: cfg.beta2,
        epsilon: cfg.epsilon,
        ..TrainConfig::default()
    };
    let mut adam = AdamState::new(params.len());
    let mut history = Vec::with_capacity(cfg.steps + 1);
    let mut best_params = params.clone();
    let mut best_loss = f64::INFINITY;
    let mut aborted = None;

    for step in 0..=cfg.steps {
        let state = TravellingWaveState::unpack(&params, m_count, period);
        let (loss, grad) = tw_loss_grad(ld, &state, mesh, cfg.use_regulariser)?;
        if !loss.is_finite() {
            aborted = Some(format!("non-finite loss at step {step}"));
            break;
        }
        history.push(loss);
        if loss < best_loss {
            best_loss = loss;
            best_params.copy_from_slice(&params);
        }
        if step == cfg.steps {
            break;
        }
        if let Err(e) = adam_step(&mut params, &grad, &mut adam, &adam_cfg) {
            aborted = Some(e.to_string());
            break;
        }
    }
    Ok(TwSearchResult {
        state: TravellingWaveState::unpack(&best_params, m_count, period),
        best_loss,
        history,
        aborted,
    })
}

const TW_FILE_KEYS: &[&str] = &["c", "M", "l", "final_loss", "T", "N"];

/// TW result file: speed, mesh echo, final loss and the mode-indexed
/// coefficient table (one `m, re, im` line per mode).
pub fn write_tw_string(state: &TravellingWaveState, mesh: &Mesh, final_loss: f64) -> String {
    let mut w = Writer::new();
    w.kv_f64("c", state.c())
        .kv("M", state.mode_count())
        .kv_f64("l", state.period())
        .kv_f64("final_loss", final_loss)
        .kv_f64("T", mesh.t_final())
        .kv("N", mesh.n())
        .blank();
    for m in state.mode_min()..=state.mode_max() {
        let z = state.coeff(m);
        w.line(&format!(
            "{m}, {}, {}",
            textkv::fmt_f64(z.re),
            textkv::fmt_f64(z.im)
        ));
    }
    w.finish()
}

pub fn read_tw_string(path: &str, text: &str) -> Result<(TravellingWaveState, f64)> {
    let doc = Document::parse(path, text)?;
    doc.reject_unknown(TW_FILE_KEYS)?;
    let c = doc.get_f64("c")?;
    let m_count = doc.get_usize("M")?;
    let period = doc.get_f64("l")?;
    let final_loss = doc.get_f64("final_loss")?;
    if doc.data.len() != m_count {
        return Err(Error::parse(
            path,
            format!("expected {m_count} coefficient lines, found {}", doc.data.len()),
        ));
    }
    let mut fhat = vec![Complex64::new(0.0, 0.0); m_count];
    let lo = -((m_count as i64 - 1) / 2);
    for line in &doc.data {
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 3 {
            return Err(Error::parse(path, format!("bad coefficient line `{line}`")));
        }
        let m: i64 = parts[0]
            .trim()
            .parse()
            .map_err(|_| Error::parse(path, format!("bad mode index `{}`", parts[0])))?;
        let re = textkv::parse_f64(path, parts[1])?;
        let im = textkv::parse_f64(path, parts[2])?;
        let idx = m - lo;
        if idx < 0 || idx as usize >= m_count {
            return Err(Error::parse(path, format!("mode {m} out of range")));
        }
        fhat[idx as usize] = Complex64::new(re, im);
    }
    Ok((TravellingWaveState::new(c, fhat, period)?, final_loss))
}

pub fn write_tw_file(
    state: &TravellingWaveState,
    mesh: &Mesh,
    final_loss: f64,
    path: &Path,
) -> Result<()> {
    textkv::write_string(path, &write_tw_string(state, mesh, final_loss))
}

pub fn read_tw_file(path: &Path) -> Result<(TravellingWaveState, f64)> {
    let text = textkv::read_to_string(path)?;
    read_tw_string(&path.display().to_string(), &text)
}
