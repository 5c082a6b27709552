use std::time::Instant;
use varfield::datagen::{generate_dataset, GenConfig};
use varfield::density::{DensityModel, NeuralDensity};
use varfield::grid::FieldGrid;
use varfield::train::{adam_step, batch_loss_grad, loss_del, loss_reg, AdamState, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let epochs: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(100);
    let lr: f64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(1e-3);
    let seed: u64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(0);
    let floor: f64 = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(1.0);
    let data = generate_dataset(&GenConfig::default()).unwrap();
    let refs: Vec<&FieldGrid> = data.iter().collect();
    let mesh = *data[0].mesh();
    let mut net = NeuralDensity::init(seed, mesh.dt(), mesh.dx());
    let cfg = TrainConfig {
        learning_rate: lr,
        ..TrainConfig::default()
    };
    let mut adam = AdamState::new(net.param_count());
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut grad = vec![0.0; net.param_count()];
    let mut theta = net.params().to_vec();
    let t0 = Instant::now();
    for epoch in 1..=epochs {
        for k in (1..order.len()).rev() {
            let s = rng.gen_range(0..=k);
            order.swap(k, s);
        }
        for ids in order.chunks(10) {
            let batch: Vec<&FieldGrid> = ids.iter().map(|&k| &data[k]).collect();
            grad.fill(0.0);
            batch_loss_grad(&net, &batch, 1.0, floor, 1, &mut grad);
            theta.copy_from_slice(net.params());
            adam_step(&mut theta, &grad, &mut adam, &cfg).unwrap();
            net.set_params(&theta);
        }
        if epoch % 100 == 0 || epoch == 1 {
            println!(
                "epoch {epoch:5}: l_del {:.3e} l_reg {:.3e} ({:.1} s)",
                loss_del(&net, &refs).unwrap(),
                loss_reg(&net, &refs, floor).unwrap(),
                t0.elapsed().as_secs_f64()
            );
        }
    }
}
