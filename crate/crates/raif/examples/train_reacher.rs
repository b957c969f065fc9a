//! Short end-to-end training run on the varied-goal pixel reacher, with a
//! metrics plot at the end. Use `--release`; the full desk run takes a while.
//!
//!     cargo run --release -p raif --example train_reacher [total_steps]

use raif::config::TrainConfig;
use raif::plot::render_svg;
use raif::trainer::run_training;
use std::path::PathBuf;

fn main() {
    let total_steps: u64 = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(4_000);
    let cfg = TrainConfig {
        total_steps,
        seed_steps: 1_000,
        checkpoint_every: 0,
        eval_episodes: 10,
        ..TrainConfig::default()
    };
    let out = PathBuf::from("raif-out/train-reacher");
    let start = std::time::Instant::now();
    let summary = run_training(&cfg, &out).expect("training failed");
    let secs = start.elapsed().as_secs_f64();
    println!(
        "finished: {} env steps, {} gradient steps, {} episodes in {:.1}s ({:.1} env steps/s)",
        summary.env_steps,
        summary.grad_steps,
        summary.episodes,
        secs,
        summary.env_steps as f64 / secs
    );
    println!("success rate over last 50 episodes: {:.2}", summary.success_rate_tail(50));
    if let Some((acr, sr, stability)) = summary.final_eval {
        println!("eval: acr {acr:.1}, sr {sr:.2}, stability {stability:.3}");
    }

    let (events, _) = raif::metrics::read_metrics(&out.join("metrics.jsonl")).unwrap();
    let returns: Vec<(f64, f64)> = events
        .iter()
        .filter_map(|e| match e {
            raif::metrics::MetricEvent::Episode { step, ret, .. } => Some((*step as f64, *ret)),
            _ => None,
        })
        .collect();
    let svg = render_svg("reacher episode returns", &[("return".into(), returns)]);
    std::fs::write(out.join("returns.svg"), svg).unwrap();
    println!("metrics: {}", out.join("metrics.jsonl").display());
}
