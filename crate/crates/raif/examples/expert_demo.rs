//! Runs the scripted privileged-state experts on both environments, printing
//! returns and dumping a few rendered frames as PNGs.
//!
//!     cargo run --release -p raif --example expert_demo

use raif::envs::make_env;
use raif::png::{chw_to_rgb8, write_rgb};
use std::path::PathBuf;

fn main() {
    let out = PathBuf::from("raif-out/expert-demo");
    std::fs::create_dir_all(&out).unwrap();
    for name in ["reacher", "mountain_car"] {
        let mut env = make_env(name, 64).unwrap();
        let mut returns = Vec::new();
        for seed in 0..5u64 {
            let mut obs = env.reset(seed);
            let mut ret = 0.0;
            let mut steps = 0;
            loop {
                if seed == 0 && steps % 20 == 0 {
                    let rgb = chw_to_rgb8(&obs, env.img_hw());
                    write_rgb(&out.join(format!("{name}-{steps:03}.png")), 64, 64, &rgb).unwrap();
                }
                let action = env.expert_action();
                let step = env.step(&action).unwrap();
                ret += step.reward;
                obs = step.obs;
                steps += 1;
                if step.done {
                    break;
                }
            }
            returns.push(ret);
        }
        println!("{name:13} expert returns over 5 seeds: {returns:?}");
    }
    println!("frames written under {}", out.display());
}
