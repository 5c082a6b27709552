use std::time::Instant;
use varfield::datagen::{generate_dataset, GenConfig};
use varfield::train::{train_threads, TrainConfig};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let epochs: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(20);
    let threads: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(1);
    let lr: f64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(1e-3);
    let seed: u64 = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(0);
    let cfg = GenConfig::default();
    let t0 = Instant::now();
    let data = generate_dataset(&cfg).unwrap();
    println!("dataset: {:?} ({} grids)", t0.elapsed(), data.len());
    let tcfg = TrainConfig {
        epochs,
        learning_rate: lr,
        seed,
        ..TrainConfig::default()
    };
    let t0 = Instant::now();
    let (_, record) = train_threads(&data, &tcfg, threads).unwrap();
    let dt = t0.elapsed();
    for e in record.epochs.iter().step_by(100.max(epochs / 20).max(1)) {
        println!(
            "epoch {:5}: l_del {:.3e} l_reg {:.3e}",
            e.epoch, e.l_del, e.l_reg
        );
    }
    println!(
        "lr {lr} seed {seed}: {} epochs in {:?} ({:.1} ms/epoch) -> l_del {:.3e} l_reg {:.3e} (best epoch {})",
        epochs,
        dt,
        dt.as_secs_f64() * 1000.0 / epochs.max(1) as f64,
        record.final_l_del(),
        record.final_l_reg(),
        record.best_epoch
    );
}
