//! Briefly trains on the reacher, then decodes the preference model's
//! imagined goal states through the world-model decoder as PNGs.
//!
//!     cargo run --release -p raif --example goal_imagination [env_steps]

use raif::config::TrainConfig;
use raif::png::{chw_to_rgb8, write_rgb};
use raif::rng::Rng;
use raif::trainer::{run_training, Agent};
use std::path::PathBuf;

fn main() {
    let steps: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(3_000);
    let out = PathBuf::from("raif-out/goal-imagination");
    let cfg = TrainConfig {
        total_steps: steps,
        checkpoint_every: 0,
        eval_episodes: 0,
        ..TrainConfig::default()
    };
    run_training(&cfg, &out).expect("training failed");
    let (agent, cfg, _) = Agent::load_checkpoint(&out.join("ckpt-final")).unwrap();

    let mut env = raif::envs::make_env(&cfg.env, cfg.img_hw).unwrap();
    let mut rng = Rng::from_seed(123);
    let obs = env.reset(5);
    let init = agent.wm.initial_state(&agent.store, &mut rng);
    let (wm_state, _) = agent.wm.observe_step(&agent.store, &init, &[0.0, 0.0], &obs, &mut rng);
    let crspp_init = agent.crspp.initial_state(&agent.store, &mut rng);
    let pref = agent.crspp.preference_step(&agent.store, &crspp_init, Some(&obs), &mut rng);

    let (_, goals) = agent
        .crspp
        .imagine_preferred(&agent.store, &agent.wm, &pref, &wm_state.h, 8, &mut rng);
    std::fs::create_dir_all(&out).unwrap();
    write_rgb(&out.join("observation.png"), cfg.img_hw, cfg.img_hw, &chw_to_rgb8(&obs, cfg.img_hw)).unwrap();
    for (tau, goal) in goals.iter().enumerate() {
        let rgb = chw_to_rgb8(goal, cfg.img_hw);
        write_rgb(&out.join(format!("goal-{tau:02}.png")), cfg.img_hw, cfg.img_hw, &rgb).unwrap();
    }
    println!("wrote observation.png and {} imagined goal frames under {}", goals.len(), out.display());
}
