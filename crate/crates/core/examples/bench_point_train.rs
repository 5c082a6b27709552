use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use std::time::Instant;
use varfield::datagen::{generate_dataset, GenConfig};
use varfield::density::{CellAdjoint, DensityModel, NeuralDensity};
use varfield::grid::FieldGrid;
use varfield::train::{adam_step, loss_del, loss_reg, AdamState, TrainConfig};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let epochs: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(30);
    let lr: f64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(1e-3);
    let seed: u64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(0);
    let data = generate_dataset(&GenConfig::default()).unwrap();
    let refs: Vec<&FieldGrid> = data.iter().collect();
    let (n, m) = (data[0].mesh().n(), data[0].mesh().m());
    let mut points: Vec<(usize, usize, usize)> = Vec::new();
    for k in 0..data.len() {
        for i in 1..n {
            for j in 0..m {
                points.push((k, i, j));
            }
        }
    }
    let mut net = NeuralDensity::init(seed, data[0].mesh().dt(), data[0].mesh().dx());
    let init_scale: f64 = args.get(5).and_then(|s| s.parse().ok()).unwrap_or(1.0);
    let w1_scale: f64 = args.get(6).and_then(|s| s.parse().ok()).unwrap_or(1.0);
    if init_scale != 1.0 || w1_scale != 1.0 {
        let mut params = net.params().to_vec();
        for (k, p) in params.iter_mut().enumerate() {
            *p *= init_scale;
            if k < 30 {
                *p *= w1_scale;
            }
        }
        net = NeuralDensity::from_params(params, data[0].mesh().dt(), data[0].mesh().dx()).unwrap();
    }
    let beta2: f64 = args.get(8).and_then(|s| s.parse().ok()).unwrap_or(0.999);
    let epsilon: f64 = args.get(9).and_then(|s| s.parse().ok()).unwrap_or(1e-8);
    let beta1: f64 = args.get(10).and_then(|s| s.parse().ok()).unwrap_or(0.9);
    let reg_weight: f64 = args.get(12).and_then(|s| s.parse().ok()).unwrap_or(1.0);
    let cfg = TrainConfig {
        learning_rate: lr,
        beta1,
        beta2,
        epsilon,
        reg_weight,
        ..TrainConfig::default()
    };
    let mut adam = AdamState::new(net.param_count());
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let batch: usize = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(10);
    let floor: f64 = args.get(7).and_then(|s| s.parse().ok()).unwrap_or(1e-8);
    let mut grad = vec![0.0; net.param_count()];
    let mut theta = net.params().to_vec();
    // Polyak tail average of the iterates (EMA, configurable horizon)
    let horizon: f64 = args.get(11).and_then(|s| s.parse().ok()).unwrap_or(50.0);
    let gamma: f64 = 1.0 / (3040.0 * horizon);
    let mut theta_avg = net.params().to_vec();
    let t0 = Instant::now();
    for epoch in 1..=epochs {
        for k in (1..points.len()).rev() {
            let s = rng.gen_range(0..=k);
            points.swap(k, s);
        }
        for chunk in points.chunks(batch) {
            grad.fill(0.0);
            let scale = 1.0 / chunk.len() as f64;
            for &(k, i, j) in chunk {
                let g = &data[k];
                let jm = (j + m - 1) % m;
                let x_own = [g.get(i, j)[0], g.get(i + 1, j)[0], g.get(i, j + 1)[0]];
                let x_below = [g.get(i - 1, j)[0], g.get(i, j)[0], g.get(i - 1, j + 1)[0]];
                let x_left = [g.get(i, jm)[0], g.get(i + 1, jm)[0], g.get(i, j)[0]];
                let own = net.cell_derivs(x_own);
                let below = net.cell_derivs(x_below);
                let left = net.cell_derivs(x_left);
                let r = own.d1 + below.d2 + left.d3;
                let a = own.d12;
                let w_r = 2.0 * r * scale;
                let w_a = if a * a > floor {
                    cfg.reg_weight * (-2.0 / (a * a * a)) * scale
                } else {
                    0.0
                };
                net.cell_backprop(
                    x_own,
                    &CellAdjoint {
                        w_d1: w_r,
                        w_d2: 0.0,
                        w_d3: 0.0,
                        w_d12: w_a,
                    },
                    &mut grad,
                );
                net.cell_backprop(
                    x_below,
                    &CellAdjoint {
                        w_d1: 0.0,
                        w_d2: w_r,
                        w_d3: 0.0,
                        w_d12: 0.0,
                    },
                    &mut grad,
                );
                net.cell_backprop(
                    x_left,
                    &CellAdjoint {
                        w_d1: 0.0,
                        w_d2: 0.0,
                        w_d3: w_r,
                        w_d12: 0.0,
                    },
                    &mut grad,
                );
            }
            theta.copy_from_slice(net.params());
            adam_step(&mut theta, &grad, &mut adam, &cfg).unwrap();
            net.set_params(&theta);
            for (avg, cur) in theta_avg.iter_mut().zip(&theta) {
                *avg += gamma * (*cur - *avg);
            }
        }
        if epoch % 10 == 0 || epoch == 1 {
            let ld = loss_del(&net, &refs).unwrap();
            let lr_ = loss_reg(&net, &refs, floor).unwrap();
            let avg_net = NeuralDensity::from_params(
                theta_avg.clone(),
                data[0].mesh().dt(),
                data[0].mesh().dx(),
            )
            .unwrap();
            let lda = loss_del(&avg_net, &refs).unwrap();
            let lra = loss_reg(&avg_net, &refs, floor).unwrap();
            println!(
                "epoch {epoch:5}: l_del {ld:.3e} l_reg {lr_:.3e} | avg: l_del {lda:.3e} l_reg {lra:.3e} ({:.1} s)",
                t0.elapsed().as_secs_f64()
            );
        }
    }
}
