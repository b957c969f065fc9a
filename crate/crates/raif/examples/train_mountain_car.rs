//! End-to-end training on the pixel mountain car (long run; use --release).
//!
//!     cargo run --release -p raif --example train_mountain_car [total_steps]

use raif::config::TrainConfig;
use raif::trainer::run_training;
use std::path::PathBuf;

fn main() {
    let total_steps: u64 = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(20_000);
    let cfg = TrainConfig {
        total_steps,
        checkpoint_every: 25_000,
        ..TrainConfig::mountain_car_desk()
    };
    let out = PathBuf::from("raif-out/train-mountain-car");
    let summary = run_training(&cfg, &out).expect("training failed");
    println!(
        "finished: {} env steps, {} episodes, SR over last 50 episodes {:.2}",
        summary.env_steps,
        summary.episodes,
        summary.success_rate_tail(50)
    );
    if let Some((acr, sr, stability)) = summary.final_eval {
        println!("eval: acr {acr:.1}, sr {sr:.2}, stability {stability:.3}");
    }
}
