//! Overfits the world model on a handful of recorded reacher episodes and
//! reports reconstruction and reward-prediction quality.
//!
//!     cargo run --release -p raif --example world_model_overfit [grad_steps]

use raif::autodiff::Tape;
use raif::config::TrainConfig;
use raif::nn::Adam;
use raif::num::{symexp, symlog};
use raif::replay::DualBuffer;
use raif::rng::Rng;
use raif::trainer::{collect_seed_data, Agent};
use raif::world_model::LatentMode;

fn wm_metrics(agent: &Agent, buffer: &mut DualBuffer, rng: &mut Rng) -> (f64, f64) {
    // Reconstruction MSE in symlog pixel space and reward-sign accuracy over
    // a probe batch of stored steps.
    let mut mse_acc = 0.0;
    let mut n_px = 0usize;
    let mut correct = 0usize;
    let mut total = 0usize;
    for probe in 0..8 {
        let (batch, _, _) = buffer.sample_batch(probe * 2, 8, 8, rng).unwrap();
        let mut t = Tape::new(&agent.store);
        let (_, _, rollout) = agent.wm.loss_on_tape(&mut t, &batch, LatentMode::Sample, rng);
        drop(t);
        let h_det = agent.wm.cfg.h_det;
        let flat_dim = agent.wm.cfg.flat_dim();
        let obs_dim = agent.wm.cfg.obs_dim();
        for row in 0..batch.batch * batch.steps {
            if batch.mask[row] == 0.0 {
                continue;
            }
            let state = raif::world_model::LatentState {
                h: rollout.h[row * h_det..(row + 1) * h_det].to_vec(),
                code: raif::num::CategoricalCode {
                    k: agent.wm.cfg.k,
                    c: agent.wm.cfg.c,
                    logits: vec![0.0; flat_dim],
                    probs: vec![0.0; flat_dim],
                    sample: rollout.flat[row * flat_dim..(row + 1) * flat_dim].to_vec(),
                },
            };
            let (img, r_symlog, _) = agent.wm.decode_heads(&agent.store, &state);
            for j in 0..obs_dim {
                let d = symlog(img[j]) - symlog(batch.obs[row * obs_dim + j]);
                mse_acc += d * d;
            }
            n_px += obs_dim;
            let pred_zero = symexp(r_symlog) > -0.5;
            let true_zero = batch.rewards[row] == 0.0;
            if pred_zero == true_zero {
                correct += 1;
            }
            total += 1;
        }
    }
    (mse_acc / n_px as f64, correct as f64 / total as f64)
}

fn main() {
    let grad_steps: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(2000);
    let cfg = TrainConfig::default();
    let agent = Agent::from_config(&cfg).unwrap();
    let mut agent = agent;
    let mut env = raif::envs::make_env("reacher", 32).unwrap();
    // 8 expert episodes (the reacher runs to its step cap, so 8 x 100 steps)
    let eps = collect_seed_data(&agent, env.as_mut(), 750, 5).unwrap();
    println!("recorded {} episodes", eps.len());
    let mut buffer = DualBuffer::new(100_000, 100_000);
    for ep in eps {
        buffer.add_seed_episode(ep).unwrap();
    }
    let mut rng = Rng::from_seed(8);
    let mut probe_rng = Rng::from_seed(9);
    let (mse0, acc0) = wm_metrics(&agent, &mut buffer, &mut probe_rng.clone());
    println!("initial: recon mse {mse0:.5}, reward sign accuracy {acc0:.3}");
    let lr = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(cfg.lr_world);
    let mut opt = Adam::new(&agent.store, agent.wm.params().to_vec(), lr, cfg.grad_clip);
    let start = std::time::Instant::now();
    for step in 0..grad_steps {
        let (batch, _, _) = buffer.sample_batch(step as u64, 8, 8, &mut rng).unwrap();
        let grads = {
            let mut t = Tape::new(&agent.store);
            let (total, bd, _) = agent.wm.loss_on_tape(&mut t, &batch, LatentMode::Sample, &mut rng);
            bd.check_finite().unwrap();
            if step % 250 == 0 {
                println!(
                    "step {step}: total {:.2} img {:.2} reward {:.4} cont {:.4} kl {:.3}",
                    bd.total, bd.accuracy_image, bd.accuracy_reward, bd.accuracy_continue, bd.complexity
                );
            }
            t.backward(total)
        };
        opt.step(&mut agent.store, &grads);
    }
    let secs = start.elapsed().as_secs_f64();
    let (mse1, acc1) = wm_metrics(&agent, &mut buffer, &mut probe_rng.clone());
    println!("after {grad_steps} steps ({secs:.0}s): recon mse {mse1:.5}, reward sign accuracy {acc1:.3}");
    println!("mse drop: {:.1}%", 100.0 * (1.0 - mse1 / mse0));
}
