//! Loads a checkpoint directory and runs mean-action evaluation episodes.
//!
//!     cargo run --release -p raif --example evaluate_checkpoint <ckpt_dir> [episodes]

use raif::trainer::{evaluate, Agent};
use std::path::PathBuf;

fn main() {
    let dir = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .expect("usage: evaluate_checkpoint <ckpt_dir> [episodes]");
    let episodes: usize = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(20);
    let (agent, cfg, state) = Agent::load_checkpoint(&dir).expect("load checkpoint");
    println!(
        "loaded {} at env step {} ({} parameters)",
        dir.display(),
        state.env_steps,
        agent.store.total_len()
    );
    let (acr, sr, stability) = evaluate(&agent, &cfg, episodes, 7);
    println!("ACR {acr:.1}  SR {sr:.2}  stability {stability:.3}  over {episodes} episodes");
}
