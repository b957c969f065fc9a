//! Pilot for the end-to-end reacher comparison: full agent vs full ablation.
//! args: steps seed ablate(0/1) [lr_world] [lr_actor] [refresh_scale] [pathwise(0/1)]

use raif::config::TrainConfig;
use raif::trainer::run_training;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let steps: u64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(10_000);
    let seed: u64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(0);
    let ablate: bool = args.get(3).map(|s| s == "1").unwrap_or(false);
    let lr_world: f64 = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(1e-3);
    let lr_actor: f64 = args.get(5).and_then(|s| s.parse().ok()).unwrap_or(1e-4);
    let refresh_scale: f64 = args.get(6).and_then(|s| s.parse().ok()).unwrap_or(1.0);
    let pathwise: bool = args.get(7).map(|s| s != "0").unwrap_or(true);
    let cfg = TrainConfig {
        refresh_scale,
        pathwise,
        total_steps: steps,
        seed,
        seed_steps: 1_000,
        lr_world,
        lr_crspp: lr_world,
        lr_ensemble: lr_world,
        lr_actor,
        lr_value: lr_actor,
        disable_crspp_sim: ablate,
        disable_ig: ablate,
        disable_refresh: ablate,
        checkpoint_every: 0,
        eval_episodes: 20,
        ..TrainConfig::default()
    };
    let out = std::path::PathBuf::from(format!(
        "raif-out/pilot9-{}-s{}-{}-r{}-p{}",
        steps,
        seed,
        if ablate { "ablated" } else { "full" },
        refresh_scale,
        pathwise as u8
    ));
    let t0 = std::time::Instant::now();
    let summary = run_training(&cfg, &out).expect("run failed");
    let n = summary.episode_successes.len();
    // print SR over trailing windows
    let window_sr = |k: usize| -> f64 {
        let take = summary.episode_successes.iter().rev().take(k);
        let n = take.len().max(1);
        summary.episode_successes.iter().rev().take(k).filter(|&&s| s).count() as f64 / n as f64
    };
    println!(
        "[{}] {} eps, SR last50 {:.2}, last20 {:.2}, eval {:?}, {:.0}s",
        out.display(),
        n,
        window_sr(50),
        window_sr(20),
        summary.final_eval,
        t0.elapsed().as_secs_f64()
    );
}
