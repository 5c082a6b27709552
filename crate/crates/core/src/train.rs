//! Loss assembly, the adam optimiser and the batch-training loop.
//!
//! The data-consistency loss sums squared Euler–Lagrange residuals over every
//! interior node of every trajectory. The solvability regulariser sums the
//! squared spectral norm of the inverse mixed block ∂²L/∂a∂b over the same
//! index set, rewarding densities whose implicit time steps stay well
//! conditioned; without it, L ≡ const fits any data perfectly and is useless
//! for propagation.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::del::del_field;
use crate::density::{CellAdjoint, DensityModel, NeuralDensity};
use crate::error::{Error, Result};
use crate::grid::FieldGrid;
use crate::linalg;
use crate::textkv::{self, Document, Writer};

#[derive(Debug, Clone, Copy)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Weight multiplying the solvability regulariser in the total loss.
    pub reg_weight: f64,
    /// Floor for the squared smallest singular value inside the regulariser.
    pub lambda_floor: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 1320,
            batch_size: 10,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            reg_weight: 1.0,
            lambda_floor: 1e-8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 1 {
            return Err(Error::InvalidConfig("batch_size must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidConfig("learning_rate must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::InvalidConfig("adam betas must lie in [0, 1)".into()));
        }
        if !(self.lambda_floor > 0.0) {
            return Err(Error::InvalidConfig("lambda_floor must be positive".into()));
        }
        Ok(())
    }
}

/// Number of residual summands in a batch: grids × interior rows × columns.
fn summand_count(batch: &[&FieldGrid]) -> usize {
    batch
        .iter()
        .map(|g| (g.mesh().n() - 1) * g.mesh().m())
        .sum()
}

/// Data-consistency loss: squared Euclidean DEL residual, averaged over all
/// (grid, interior node) summands.
///
/// Averaging keeps the value comparable across dataset and batch sizes;
/// per-summand statements (each summand is the squared residual at one node)
/// are unaffected.
pub fn loss_del<D: DensityModel + ?Sized>(ld: &D, batch: &[&FieldGrid]) -> Result<f64> {
    check_batch(ld, batch)?;
    let mut total = 0.0;
    for grid in batch {
        total += del_field(ld, grid)?.sum_squares();
    }
    let count = summand_count(batch);
    Ok(if count == 0 { 0.0 } else { total / count as f64 })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegLoss {
    pub value: f64,
    /// Number of summands clamped at the floor.
    pub floored: usize,
}

/// Solvability regulariser: 1 / max(σ_min², lambda_floor) with σ_min the
/// smallest singular value of the mixed block at the cell stencil, averaged
/// over the same summand set as the data loss.
pub fn loss_reg<D: DensityModel + ?Sized>(
    ld: &D,
    batch: &[&FieldGrid],
    lambda_floor: f64,
) -> Result<f64> {
    loss_reg_detailed(ld, batch, lambda_floor).map(|r| r.value)
}

pub fn loss_reg_detailed<D: DensityModel + ?Sized>(
    ld: &D,
    batch: &[&FieldGrid],
    lambda_floor: f64,
) -> Result<RegLoss> {
    check_batch(ld, batch)?;
    let d = ld.dim();
    let mut block = vec![0.0; d * d];
    let mut value = 0.0;
    let mut floored = 0;
    for grid in batch {
        let (n, m) = (grid.mesh().n(), grid.mesh().m());
        for i in 1..n {
            for j in 0..m {
                ld.d12(grid.get(i, j), grid.get(i + 1, j), grid.get(i, j + 1), &mut block);
                let sigma2 = if d == 1 {
                    block[0] * block[0]
                } else {
                    let s = linalg::smallest_singular_value(&block, d);
                    s * s
                };
                if sigma2 > lambda_floor {
                    value += 1.0 / sigma2;
                } else {
                    value += 1.0 / lambda_floor;
                    floored += 1;
                }
            }
        }
    }
    let count = summand_count(batch);
    if count > 0 {
        value /= count as f64;
    }
    Ok(RegLoss { value, floored })
}

fn check_batch<D: DensityModel + ?Sized>(ld: &D, batch: &[&FieldGrid]) -> Result<()> {
    if let Some(first) = batch.first() {
        for grid in batch {
            if grid.mesh() != first.mesh() {
                return Err(Error::MeshMismatch(
                    "batch grids must share one mesh".into(),
                ));
            }
            if grid.dim() != ld.dim() {
                return Err(Error::DimensionMismatch {
                    expected: ld.dim(),
                    got: grid.dim(),
                });
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl AdamState {
    pub fn new(n_params: usize) -> AdamState {
        AdamState {
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }
}

/// One adam update with bias correction, in place.
pub fn adam_step(
    theta: &mut [f64],
    gradient: &[f64],
    state: &mut AdamState,
    cfg: &TrainConfig,
) -> Result<()> {
    if gradient.len() != theta.len() || state.m.len() != theta.len() {
        return Err(Error::DimensionMismatch {
            expected: theta.len(),
            got: gradient.len(),
        });
    }
    if gradient.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("adam gradient".into()));
    }
    state.t += 1;
    let t = state.t as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for p in 0..theta.len() {
        let g = gradient[p];
        state.m[p] = cfg.beta1 * state.m[p] + (1.0 - cfg.beta1) * g;
        state.v[p] = cfg.beta2 * state.v[p] + (1.0 - cfg.beta2) * g * g;
        let m_hat = state.m[p] / bc1;
        let v_hat = state.v[p] / bc2;
        theta[p] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
    }
    Ok(())
}

/// Exact gradient of the unnormalised per-grid loss (sum of squared
/// residuals plus reg_weight times the summed regulariser), accumulated into
/// `grad`. Returns the raw sums and the floored-summand count; batch
/// assembly divides by the summand count to obtain the mean losses.
pub fn neural_loss_grad(
    net: &NeuralDensity,
    grid: &FieldGrid,
    reg_weight: f64,
    lambda_floor: f64,
    grad: &mut [f64],
) -> (f64, f64, usize) {
    let (n, m) = (grid.mesh().n(), grid.mesh().m());
    // Pass 1: one jet evaluation per cell.
    let mut d1 = vec![0.0; n * m];
    let mut d2 = vec![0.0; n * m];
    let mut d3 = vec![0.0; n * m];
    let mut d12 = vec![0.0; n * m];
    for i in 0..n {
        for j in 0..m {
            let cd = net.cell_derivs([
                grid.get(i, j)[0],
                grid.get(i + 1, j)[0],
                grid.get(i, j + 1)[0],
            ]);
            let k = i * m + j;
            d1[k] = cd.d1;
            d2[k] = cd.d2;
            d3[k] = cd.d3;
            d12[k] = cd.d12;
        }
    }
    // Residuals on interior rows and both loss values.
    let mut r = vec![0.0; n * m]; // rows 1..n-1 used
    let mut l_del = 0.0;
    let mut l_reg = 0.0;
    let mut floored = 0;
    for i in 1..n {
        for j in 0..m {
            let jm = (j + m - 1) % m;
            let rij = d1[i * m + j] + d2[(i - 1) * m + j] + d3[i * m + jm];
            r[i * m + j] = rij;
            l_del += rij * rij;
            let a = d12[i * m + j];
            let sigma2 = a * a;
            if sigma2 > lambda_floor {
                l_reg += 1.0 / sigma2;
            } else {
                l_reg += 1.0 / lambda_floor;
                floored += 1;
            }
        }
    }
    // Pass 2: per-cell adjoints. Cell (i, j) feeds residuals (i, j) through
    // its first slot, (i+1, j) through its second and (i, j+1) through its
    // third; the regulariser touches its mixed block on interior rows.
    for i in 0..n {
        for j in 0..m {
            let jp = (j + 1) % m;
            let w_d1 = if i >= 1 { 2.0 * r[i * m + j] } else { 0.0 };
            let w_d2 = if i + 1 < n { 2.0 * r[(i + 1) * m + j] } else { 0.0 };
            let w_d3 = if i >= 1 { 2.0 * r[i * m + jp] } else { 0.0 };
            let mut w_d12 = 0.0;
            if i >= 1 && reg_weight != 0.0 {
                let a = d12[i * m + j];
                if a * a > lambda_floor {
                    w_d12 = reg_weight * (-2.0 / (a * a * a));
                }
            }
            let seed = CellAdjoint {
                w_d1,
                w_d2,
                w_d3,
                w_d12,
            };
            if !seed.is_zero() {
                net.cell_backprop(
                    [
                        grid.get(i, j)[0],
                        grid.get(i + 1, j)[0],
                        grid.get(i, jp)[0],
                    ],
                    &seed,
                    grad,
                );
            }
        }
    }
    (l_del, l_reg, floored)
}

/// Batch gradient: per-grid gradients computed independently (optionally in
/// parallel) and reduced in grid order, so results are bitwise independent of
/// the thread count.
pub fn batch_loss_grad(
    net: &NeuralDensity,
    grids: &[&FieldGrid],
    reg_weight: f64,
    lambda_floor: f64,
    threads: usize,
    grad: &mut [f64],
) -> (f64, f64, usize) {
    let n_params = grad.len();
    let mut per_grid: Vec<(Vec<f64>, (f64, f64, usize))> = Vec::with_capacity(grids.len());
    if threads <= 1 || grids.len() <= 1 {
        for grid in grids {
            let mut g = vec![0.0; n_params];
            let losses = neural_loss_grad(net, grid, reg_weight, lambda_floor, &mut g);
            per_grid.push((g, losses));
        }
    } else {
        let chunk = grids.len().div_ceil(threads);
        let results: Vec<Vec<(Vec<f64>, (f64, f64, usize))>> = std::thread::scope(|scope| {
            let mut handles = Vec::new();
            for part in grids.chunks(chunk) {
                handles.push(scope.spawn(move || {
                    part.iter()
                        .map(|grid| {
                            let mut g = vec![0.0; n_params];
                            let losses =
                                neural_loss_grad(net, grid, reg_weight, lambda_floor, &mut g);
                            (g, losses)
                        })
                        .collect()
                }));
            }
            handles.into_iter().map(|h| h.join().unwrap()).collect()
        });
        for part in results {
            per_grid.extend(part);
        }
    }
    let count: usize = grids
        .iter()
        .map(|g| (g.mesh().n() - 1) * g.mesh().m())
        .sum();
    let scale = if count == 0 { 0.0 } else { 1.0 / count as f64 };
    let (mut l_del, mut l_reg, mut floored) = (0.0, 0.0, 0usize);
    for (g, (ld, lr, fl)) in &per_grid {
        for p in 0..n_params {
            grad[p] += scale * g[p];
        }
        l_del += ld;
        l_reg += lr;
        floored += fl;
    }
    (l_del * scale, l_reg * scale, floored)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub l_del: f64,
    pub l_reg: f64,
    pub seconds: f64,
}

/// Full provenance of a training run.
#[derive(Debug, Clone)]
pub struct TrainRecord {
    pub config: TrainConfig,
    /// Epoch 0 is the evaluation of the freshly initialised model.
    pub epochs: Vec<EpochRecord>,
    pub adam_steps: u64,
    pub floored_events: usize,
    pub best_epoch: usize,
    pub best_total_loss: f64,
    /// Set when a numerical failure stopped the run early; the returned
    /// density is the best checkpoint recorded before the failure.
    pub aborted: Option<String>,
}

impl TrainRecord {
    pub fn final_l_del(&self) -> f64 {
        self.epochs.last().map(|e| e.l_del).unwrap_or(f64::NAN)
    }

    pub fn final_l_reg(&self) -> f64 {
        self.epochs.last().map(|e| e.l_reg).unwrap_or(f64::NAN)
    }
}

/// Trains a fresh neural density on K trajectories.
pub fn train(data: &[FieldGrid], cfg: &TrainConfig) -> Result<(NeuralDensity, TrainRecord)> {
    train_threads(data, cfg, 1)
}

pub fn train_threads(
    data: &[FieldGrid],
    cfg: &TrainConfig,
    threads: usize,
) -> Result<(NeuralDensity, TrainRecord)> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidConfig("training data is empty".into()));
    }
    let refs: Vec<&FieldGrid> = data.iter().collect();
    let mesh = *data[0].mesh();
    let mut net = NeuralDensity::init(cfg.seed, mesh.dt(), mesh.dx());
    check_batch(&net, &refs)?;

    // Batching unit: interior residual nodes across the whole dataset. One
    // epoch visits every node once in a shuffled order.
    let mut points: Vec<(u32, u32, u32)> = Vec::new();
    for (k, g) in data.iter().enumerate() {
        for i in 1..g.mesh().n() {
            for j in 0..g.mesh().m() {
                points.push((k as u32, i as u32, j as u32));
            }
        }
    }

    let mut state = AdamState::new(net.param_count());
    // Shuffle draws come from a dedicated stream of the seeded generator so
    // they stay decoupled from the parameter initialisation.
    let mut shuffle_rng = ChaCha12Rng::seed_from_u64(cfg.seed);
    shuffle_rng.set_stream(1);
    let mut record = TrainRecord {
        config: *cfg,
        epochs: Vec::with_capacity(cfg.epochs + 1),
        adam_steps: 0,
        floored_events: 0,
        best_epoch: 0,
        best_total_loss: f64::INFINITY,
        aborted: None,
    };

    let mut best_params = net.params().to_vec();
    let start = Instant::now();
    let evaluate = |net: &NeuralDensity,
                    epoch: usize,
                    record: &mut TrainRecord,
                    best_params: &mut Vec<f64>,
                    elapsed: f64|
     -> Result<()> {
        let l_del = loss_del(net, &refs)?;
        let reg = loss_reg_detailed(net, &refs, cfg.lambda_floor)?;
        record.epochs.push(EpochRecord {
            epoch,
            l_del,
            l_reg: reg.value,
            seconds: elapsed,
        });
        let total = l_del + cfg.reg_weight * reg.value;
        if total < record.best_total_loss {
            record.best_total_loss = total;
            record.best_epoch = epoch;
            best_params.copy_from_slice(net.params());
        }
        Ok(())
    };
    evaluate(&net, 0, &mut record, &mut best_params, 0.0)?;

    let mut grad = vec![0.0; net.param_count()];
    let mut theta = net.params().to_vec();
    'epochs: for epoch in 1..=cfg.epochs {
        // Fisher-Yates shuffle of the node order, seeded stream.
        for k in (1..points.len()).rev() {
            let swap = shuffle_rng.gen_range(0..=k);
            points.swap(k, swap);
        }
        for chunk in points.chunks(cfg.batch_size) {
            grad.fill(0.0);
            let floored = point_batch_grad(
                &net,
                data,
                chunk,
                cfg.reg_weight,
                cfg.lambda_floor,
                threads,
                &mut grad,
            );
            record.floored_events += floored;
            theta.copy_from_slice(net.params());
            if let Err(e) = adam_step(&mut theta, &grad, &mut state, cfg) {
                record.aborted = Some(e.to_string());
                break 'epochs;
            }
            net.set_params(&theta);
            record.adam_steps = state.step_count();
        }
        evaluate(
            &net,
            epoch,
            &mut record,
            &mut best_params,
            start.elapsed().as_secs_f64(),
        )?;
    }

    let best = NeuralDensity::from_params(best_params, mesh.dt(), mesh.dx())?;
    Ok((best, record))
}

/// Mean gradient of the loss over a batch of residual nodes, accumulated into
/// `grad`; returns the number of floored regulariser summands. Nodes are
/// processed in slice order (or in deterministically merged per-thread
/// chunks), so results do not depend on the thread count.
fn point_batch_grad(
    net: &NeuralDensity,
    data: &[FieldGrid],
    chunk: &[(u32, u32, u32)],
    reg_weight: f64,
    lambda_floor: f64,
    threads: usize,
    grad: &mut [f64],
) -> usize {
    let scale = 1.0 / chunk.len() as f64;
    if threads <= 1 || chunk.len() < 4 {
        point_grad_slice(net, data, chunk, reg_weight, lambda_floor, scale, grad)
    } else {
        let n_params = grad.len();
        let per = chunk.len().div_ceil(threads);
        let results: Vec<(Vec<f64>, usize)> = std::thread::scope(|scope| {
            let mut handles = Vec::new();
            for part in chunk.chunks(per) {
                handles.push(scope.spawn(move || {
                    let mut g = vec![0.0; n_params];
                    let fl =
                        point_grad_slice(net, data, part, reg_weight, lambda_floor, scale, &mut g);
                    (g, fl)
                }));
            }
            handles.into_iter().map(|h| h.join().unwrap()).collect()
        });
        let mut floored = 0;
        for (g, fl) in results {
            for p in 0..grad.len() {
                grad[p] += g[p];
            }
            floored += fl;
        }
        floored
    }
}

fn point_grad_slice(
    net: &NeuralDensity,
    data: &[FieldGrid],
    chunk: &[(u32, u32, u32)],
    reg_weight: f64,
    lambda_floor: f64,
    scale: f64,
    grad: &mut [f64],
) -> usize {
    let mut floored = 0;
    for &(k, i, j) in chunk {
        let g = &data[k as usize];
        let (i, j) = (i as usize, j as usize);
        let m = g.mesh().m();
        let jm = (j + m - 1) % m;
        let x_own = [g.get(i, j)[0], g.get(i + 1, j)[0], g.get(i, j + 1)[0]];
        let x_below = [g.get(i - 1, j)[0], g.get(i, j)[0], g.get(i - 1, j + 1)[0]];
        let x_left = [g.get(i, jm)[0], g.get(i + 1, jm)[0], g.get(i, j)[0]];
        let (acts_own, own) = net.forward_acts(x_own);
        let (acts_below, below) = net.forward_acts(x_below);
        let (acts_left, left) = net.forward_acts(x_left);
        let r = own.d1 + below.d2 + left.d3;
        let w_r = 2.0 * r * scale;
        let a = own.d12;
        let w_a = if reg_weight != 0.0 {
            if a * a > lambda_floor {
                reg_weight * (-2.0 / (a * a * a)) * scale
            } else {
                floored += 1;
                0.0
            }
        } else {
            0.0
        };
        net.pullback_acts(
            &acts_own,
            &CellAdjoint {
                w_d1: w_r,
                w_d2: 0.0,
                w_d3: 0.0,
                w_d12: w_a,
            },
            grad,
        );
        net.pullback_acts(
            &acts_below,
            &CellAdjoint {
                w_d1: 0.0,
                w_d2: w_r,
                w_d3: 0.0,
                w_d12: 0.0,
            },
            grad,
        );
        net.pullback_acts(
            &acts_left,
            &CellAdjoint {
                w_d1: 0.0,
                w_d2: 0.0,
                w_d3: w_r,
                w_d12: 0.0,
            },
            grad,
        );
    }
    floored
}

const TRAIN_RECORD_KEYS: &[&str] = &[
    "epochs",
    "batch_size",
    "learning_rate",
    "reg_weight",
    "lambda_floor",
    "seed",
    "adam_steps",
    "floored_events",
    "best_epoch",
    "best_total_loss",
    "aborted",
];

/// One line per epoch: epoch, l_del, l_reg, seconds.
pub fn write_record_string(record: &TrainRecord) -> String {
    let mut w = Writer::new();
    w.kv("epochs", record.config.epochs)
        .kv("batch_size", record.config.batch_size)
        .kv_f64("learning_rate", record.config.learning_rate)
        .kv_f64("reg_weight", record.config.reg_weight)
        .kv_f64("lambda_floor", record.config.lambda_floor)
        .kv("seed", record.config.seed)
        .kv("adam_steps", record.adam_steps)
        .kv("floored_events", record.floored_events)
        .kv("best_epoch", record.best_epoch)
        .kv_f64("best_total_loss", record.best_total_loss);
    if let Some(msg) = &record.aborted {
        w.kv("aborted", msg);
    }
    w.blank();
    for e in &record.epochs {
        w.line(&format!(
            "{}, {}, {}, {}",
            e.epoch,
            textkv::fmt_f64(e.l_del),
            textkv::fmt_f64(e.l_reg),
            textkv::fmt_f64(e.seconds)
        ));
    }
    w.finish()
}

pub fn read_record_epochs(path: &str, text: &str) -> Result<Vec<EpochRecord>> {
    let doc = Document::parse(path, text)?;
    doc.reject_unknown(TRAIN_RECORD_KEYS)?;
    let mut out = Vec::new();
    for line in &doc.data {
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 4 {
            return Err(Error::parse(path, format!("bad epoch line `{line}`")));
        }
        out.push(EpochRecord {
            epoch: textkv::parse_usize(path, parts[0])?,
            l_del: textkv::parse_f64(path, parts[1])?,
            l_reg: textkv::parse_f64(path, parts[2])?,
            seconds: textkv::parse_f64(path, parts[3])?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::{ConstantDensity, WaveDensity};
    use crate::grid::Mesh;

    fn mesh() -> Mesh {
        Mesh::new(0.25, 1.0, 4, 4).unwrap()
    }

    /// Small discrete-wave trajectory via the explicit update.
    fn wave_grid(mesh: Mesh, seed: u64) -> FieldGrid {
        let (dt, dx, m) = (mesh.dt(), mesh.dx(), mesh.m());
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut u = FieldGrid::zeros(mesh, 1);
        for j in 0..m {
            let x = j as f64 * dx;
            let v = (2.0 * std::f64::consts::PI * x).cos() * (0.5 + rng.gen::<f64>());
            u.set(0, j, &[v]);
            u.set(1, j, &[v + dt * (rng.gen::<f64>() - 0.5)]);
        }
        let lam = dt * dt / (dx * dx);
        for i in 1..mesh.n() {
            for j in 0..m {
                let jm = (j + m - 1) % m;
                let jp = (j + 1) % m;
                let next = 2.0 * u.get(i, j)[0] - u.get(i - 1, j)[0]
                    + lam * (u.get(i, jm)[0] - 2.0 * u.get(i, j)[0] + u.get(i, jp)[0])
                    - dt * dt * u.get(i, j)[0];
                u.set(i + 1, j, &[next]);
            }
        }
        u
    }

    #[test]
    fn loss_del_vanishes_on_exact_solutions() {
        let mesh = mesh();
        let w = WaveDensity::new(mesh.dt(), mesh.dx(), 1);
        let grids = [wave_grid(mesh, 1), wave_grid(mesh, 2)];
        let refs: Vec<&FieldGrid> = grids.iter().collect();
        let l = loss_del(&w, &refs).unwrap();
        assert!(l <= 1e-18, "loss {l}");
    }

    #[test]
    fn constant_density_is_the_degenerate_minimum_of_loss_del() {
        let mesh = mesh();
        let cd = ConstantDensity::new(3.7, 1);
        let grids = [wave_grid(mesh, 3)];
        let refs: Vec<&FieldGrid> = grids.iter().collect();
        assert_eq!(loss_del(&cd, &refs).unwrap(), 0.0);
        // and the regulariser pins every summand at the floor, exactly
        let floor = 1e-8;
        let reg = loss_reg_detailed(&cd, &refs, floor).unwrap();
        let n_pts = (mesh.n() - 1) * mesh.m();
        assert_eq!(reg.value, 1.0 / floor);
        assert_eq!(reg.floored, n_pts);
    }

    #[test]
    fn loss_del_single_point_matches_residual_square() {
        let mesh = Mesh::new(0.2, 1.0, 2, 2).unwrap();
        let net = NeuralDensity::init(4, 0.025, 0.05);
        let g = wave_grid(mesh, 5);
        let refs = [&g];
        let l = loss_del(&net, &refs).unwrap();
        let mut expect = 0.0;
        for j in 0..mesh.m() {
            let r = crate::del::del_residual(&net, &g, 1, j).unwrap()[0];
            expect += r * r;
        }
        expect /= mesh.m() as f64; // single interior row: mean over its nodes
        assert!((l - expect).abs() <= 1e-15 * (1.0 + expect));
    }

    #[test]
    fn wave_density_reg_summands_are_dt_fourth() {
        let mesh = Mesh::new(0.5, 1.0, 20, 20).unwrap();
        let dt = mesh.dt();
        let w = WaveDensity::new(dt, mesh.dx(), 1);
        let g = wave_grid(mesh, 6);
        let refs = [&g];
        let reg = loss_reg_detailed(&w, &refs, 1e-8).unwrap();
        // every summand equals dt⁴, so the mean does too
        let summand = dt.powi(4);
        assert!((reg.value - summand).abs() <= 1e-12 * summand);
        assert!((summand - 3.90625e-7).abs() <= 1e-18);
        assert_eq!(reg.floored, 0);
    }

    #[test]
    fn reg_scalar_and_diagonal_examples() {
        // d = 1, block value 2 at one node: summand ¼.
        struct FixedBlock(f64);
        impl DensityModel for FixedBlock {
            fn dim(&self) -> usize {
                1
            }
            fn eval(&self, _: &[f64], _: &[f64], _: &[f64]) -> f64 {
                0.0
            }
            fn first_partials(
                &self,
                _: &[f64],
                _: &[f64],
                _: &[f64],
                d1: &mut [f64],
                d2: &mut [f64],
                d3: &mut [f64],
            ) {
                d1.fill(0.0);
                d2.fill(0.0);
                d3.fill(0.0);
            }
            fn d12(&self, _: &[f64], _: &[f64], _: &[f64], out: &mut [f64]) {
                out[0] = self.0;
            }
            fn grad_hess(&self, _: &[f64], _: &[f64], _: &[f64], g: &mut [f64], h: &mut [f64]) {
                g.fill(0.0);
                h.fill(0.0);
            }
        }
        let mesh = Mesh::new(0.2, 1.0, 2, 2).unwrap();
        let g = FieldGrid::zeros(mesh, 1);
        let refs = [&g];
        let reg = loss_reg(&FixedBlock(2.0), &refs, 1e-8).unwrap();
        // every summand is 0.25
        assert_eq!(reg, 0.25);

        // d = 2 diagonal block diag(2, 0.5): summand 1/0.25 = 4 per node.
        struct DiagBlock;
        impl DensityModel for DiagBlock {
            fn dim(&self) -> usize {
                2
            }
            fn eval(&self, _: &[f64], _: &[f64], _: &[f64]) -> f64 {
                0.0
            }
            fn first_partials(
                &self,
                _: &[f64],
                _: &[f64],
                _: &[f64],
                d1: &mut [f64],
                d2: &mut [f64],
                d3: &mut [f64],
            ) {
                d1.fill(0.0);
                d2.fill(0.0);
                d3.fill(0.0);
            }
            fn d12(&self, _: &[f64], _: &[f64], _: &[f64], out: &mut [f64]) {
                out.copy_from_slice(&[2.0, 0.0, 0.0, 0.5]);
            }
            fn grad_hess(&self, _: &[f64], _: &[f64], _: &[f64], g: &mut [f64], h: &mut [f64]) {
                g.fill(0.0);
                h.fill(0.0);
            }
        }
        let g2 = FieldGrid::zeros(mesh, 2);
        let refs2 = [&g2];
        let reg2 = loss_reg(&DiagBlock, &refs2, 1e-8).unwrap();
        assert!((reg2 - 4.0).abs() < 1e-12);
    }

    #[test]
    fn adam_zero_gradient_is_identity() {
        let cfg = TrainConfig::default();
        let mut theta = vec![0.3, -1.0, 2.5];
        let mut state = AdamState::new(3);
        adam_step(&mut theta, &[0.0, 0.0, 0.0], &mut state, &cfg).unwrap();
        assert_eq!(theta, vec![0.3, -1.0, 2.5]);
    }

    #[test]
    fn adam_constant_gradient_approaches_signed_learning_rate() {
        let cfg = TrainConfig {
            learning_rate: 1e-3,
            ..TrainConfig::default()
        };
        let mut theta = vec![0.0, 0.0];
        let mut state = AdamState::new(2);
        let g = [0.37, -120.0];
        let mut last = theta.clone();
        for _ in 0..500 {
            last.copy_from_slice(&theta);
            adam_step(&mut theta, &g, &mut state, &cfg).unwrap();
        }
        let step0 = theta[0] - last[0];
        let step1 = theta[1] - last[1];
        assert!((step0 + cfg.learning_rate).abs() <= 1e-6 * cfg.learning_rate);
        assert!((step1 - cfg.learning_rate).abs() <= 1e-6 * cfg.learning_rate);
    }

    #[test]
    fn adam_descends_a_quadratic() {
        let cfg = TrainConfig {
            learning_rate: 0.1,
            ..TrainConfig::default()
        };
        let mut theta: Vec<f64> = vec![1.0];
        let mut state = AdamState::new(1);
        let mut prev = theta[0].abs();
        for _ in 0..10 {
            let g = [2.0 * theta[0]];
            adam_step(&mut theta, &g, &mut state, &cfg).unwrap();
            assert!(theta[0].abs() < prev, "|theta| not decreasing");
            prev = theta[0].abs();
        }
    }

    #[test]
    fn adam_rejects_non_finite_gradient() {
        let cfg = TrainConfig::default();
        let mut theta = vec![0.0];
        let mut state = AdamState::new(1);
        assert!(adam_step(&mut theta, &[f64::NAN], &mut state, &cfg).is_err());
    }

    #[test]
    fn neural_total_loss_gradient_matches_finite_differences() {
        let mesh = mesh();
        let grids = [wave_grid(mesh, 7), wave_grid(mesh, 8)];
        let refs: Vec<&FieldGrid> = grids.iter().collect();
        // Scale the deeper layers so the mixed block is O(1): the finite
        // difference oracle is only trustworthy when 1/A² is not stiff.
        let mut params = NeuralDensity::init(12, 0.025, 0.05).params().to_vec();
        for p in params.iter_mut().skip(40) {
            *p *= 3.0;
        }
        for p in params.iter_mut().skip(150) {
            *p *= 20.0;
        }
        let net = NeuralDensity::from_params(params, 0.025, 0.05).unwrap();
        let (reg_weight, floor) = (1.0, 1e-8);
        let mut grad = vec![0.0; net.param_count()];
        let (l_del, l_reg, _) = batch_loss_grad(&net, &refs, reg_weight, floor, 1, &mut grad);
        // cross-check the forward losses against the public operations
        assert!((l_del - loss_del(&net, &refs).unwrap()).abs() <= 1e-12 * (1.0 + l_del));
        assert!((l_reg - loss_reg(&net, &refs, floor).unwrap()).abs() <= 1e-9 * (1.0 + l_reg));

        let phi = |params: &[f64]| {
            let n = NeuralDensity::from_params(params.to_vec(), 0.025, 0.05).unwrap();
            loss_del(&n, &refs).unwrap() + reg_weight * loss_reg(&n, &refs, floor).unwrap()
        };
        let h = 1e-5;
        for p in 0..net.param_count() {
            let mut pp = net.params().to_vec();
            let mut pm = net.params().to_vec();
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
    fn batch_gradient_is_mean_consistent_with_per_grid_gradients() {
        // the full-batch gradient equals the summand-count-weighted mean of
        // per-grid gradients of the mean losses
        let mesh = mesh();
        let grids = [wave_grid(mesh, 9), wave_grid(mesh, 10), wave_grid(mesh, 11)];
        let refs: Vec<&FieldGrid> = grids.iter().collect();
        let net = NeuralDensity::init(13, 0.025, 0.05);
        let mut full = vec![0.0; net.param_count()];
        batch_loss_grad(&net, &refs, 1.0, 1e-8, 1, &mut full);
        let mut raw_sum = vec![0.0; net.param_count()];
        for g in &refs {
            neural_loss_grad(&net, g, 1.0, 1e-8, &mut raw_sum);
        }
        let count = (3 * (mesh.n() - 1) * mesh.m()) as f64;
        for p in 0..full.len() {
            let expect = raw_sum[p] / count;
            assert!(
                (full[p] - expect).abs() <= 1e-12 * (1.0 + expect.abs()),
                "param {p}"
            );
        }
    }

    #[test]
    fn batch_gradient_parallel_matches_sequential_bitwise() {
        let mesh = mesh();
        let grids: Vec<FieldGrid> = (0..5).map(|k| wave_grid(mesh, 20 + k)).collect();
        let refs: Vec<&FieldGrid> = grids.iter().collect();
        let net = NeuralDensity::init(14, 0.025, 0.05);
        let mut seq = vec![0.0; net.param_count()];
        let a = batch_loss_grad(&net, &refs, 1.0, 1e-8, 1, &mut seq);
        let mut par = vec![0.0; net.param_count()];
        let b = batch_loss_grad(&net, &refs, 1.0, 1e-8, 3, &mut par);
        assert_eq!(a, b);
        for p in 0..seq.len() {
            assert_eq!(seq[p].to_bits(), par[p].to_bits());
        }
    }

    #[test]
    fn one_epoch_steps_count_is_point_batches() {
        // one epoch performs exactly ceil(residual nodes / batch_size) steps
        let mesh = mesh();
        let data = vec![wave_grid(mesh, 30)];
        let nodes = (mesh.n() - 1) * mesh.m();
        let cfg = TrainConfig {
            epochs: 1,
            ..TrainConfig::default()
        };
        let (_, record) = train(&data, &cfg).unwrap();
        assert_eq!(record.adam_steps as usize, nodes.div_ceil(cfg.batch_size));
        assert_eq!(record.epochs.len(), 2); // epoch 0 evaluation + epoch 1

        // a batch as large as the dataset gives one step per epoch
        let cfg_full = TrainConfig {
            epochs: 1,
            batch_size: nodes,
            ..TrainConfig::default()
        };
        let (_, record) = train(&data, &cfg_full).unwrap();
        assert_eq!(record.adam_steps, 1);
    }

    #[test]
    fn zero_epochs_returns_initialisation() {
        let mesh = mesh();
        let data = vec![wave_grid(mesh, 31)];
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        let (net, record) = train(&data, &cfg).unwrap();
        assert_eq!(record.adam_steps, 0);
        assert_eq!(record.epochs.len(), 1);
        assert_eq!(
            net.params(),
            NeuralDensity::init(cfg.seed, mesh.dt(), mesh.dx()).params()
        );
    }

    #[test]
    fn training_is_deterministic() {
        let mesh = mesh();
        let data: Vec<FieldGrid> = (0..4).map(|k| wave_grid(mesh, 40 + k)).collect();
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 2,
            ..TrainConfig::default()
        };
        let (a, ra) = train(&data, &cfg).unwrap();
        let (b, rb) = train(&data, &cfg).unwrap();
        assert_eq!(a.params(), b.params());
        for (x, y) in ra.epochs.iter().zip(&rb.epochs) {
            assert_eq!(x.epoch, y.epoch);
            assert_eq!(x.l_del.to_bits(), y.l_del.to_bits());
            assert_eq!(x.l_reg.to_bits(), y.l_reg.to_bits());
        }
    }

    #[test]
    fn short_training_reduces_loss() {
        let mesh = mesh();
        let data: Vec<FieldGrid> = (0..6).map(|k| wave_grid(mesh, 50 + k)).collect();
        let cfg = TrainConfig {
            epochs: 60,
            batch_size: 3,
            ..TrainConfig::default()
        };
        let (_, record) = train(&data, &cfg).unwrap();
        let first = record.epochs.first().unwrap();
        let last = record.epochs.last().unwrap();
        let total0 = first.l_del + first.l_reg;
        let total1 = last.l_del + last.l_reg;
        assert!(
            total1 < total0,
            "loss did not improve: {total0} -> {total1}"
        );
        let nodes = 6 * (mesh.n() - 1) * mesh.m();
        assert_eq!(record.adam_steps as usize, 60 * nodes.div_ceil(3));
    }

    #[test]
    fn record_round_trip() {
        let mesh = mesh();
        let data = vec![wave_grid(mesh, 60)];
        let cfg = TrainConfig {
            epochs: 2,
            ..TrainConfig::default()
        };
        let (_, record) = train(&data, &cfg).unwrap();
        let text = write_record_string(&record);
        let epochs = read_record_epochs("mem", &text).unwrap();
        assert_eq!(epochs.len(), record.epochs.len());
        for (a, b) in epochs.iter().zip(&record.epochs) {
            assert_eq!(a.l_del.to_bits(), b.l_del.to_bits());
            assert_eq!(a.l_reg.to_bits(), b.l_reg.to_bits());
        }
    }
}
