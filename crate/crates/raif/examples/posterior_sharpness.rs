//! Diagnostic: how sharp is the world-model posterior after brief training,
//! and what sample-agreement ceiling does that imply for the preference
//! similarity?

use raif::autodiff::Tape;
use raif::config::TrainConfig;
use raif::nn::Adam;
use raif::replay::DualBuffer;
use raif::rng::Rng;
use raif::trainer::{collect_seed_data, Agent};
use raif::world_model::LatentMode;

fn main() {
    let wm_steps: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1000);
    let free_bits: f64 = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(1.0);
    let mut cfg = TrainConfig::default();
    cfg.free_bits = free_bits;
    let mut agent = Agent::from_config(&cfg).unwrap();
    let mut env = raif::envs::make_env("reacher", 32).unwrap();
    let eps = collect_seed_data(&agent, env.as_mut(), 600, 11).unwrap();
    let mut buf = DualBuffer::new(100_000, 100_000);
    for ep in eps {
        buf.add_seed_episode(ep).unwrap();
    }
    let mut rng = Rng::from_seed(3);
    let mut opt = Adam::new(&agent.store, agent.wm.params().to_vec(), 1e-3, 100.0);
    for step in 0..wm_steps {
        let (batch, _, _) = buf.sample_batch(step as u64, 8, 8, &mut rng).unwrap();
        let grads = {
            let mut t = Tape::new(&agent.store);
            let (total, bd, _) = agent.wm.loss_on_tape(&mut t, &batch, LatentMode::Sample, &mut rng);
            bd.check_finite().unwrap();
            t.backward(total)
        };
        opt.step(&mut agent.store, &grads);
    }
    // posterior stats over a probe episode
    let obs0 = env.reset(77);
    let init = agent.wm.initial_state(&agent.store, &mut rng);
    let (mut post, _) = agent.wm.observe_step(&agent.store, &init, &[0.0, 0.0], &obs0, &mut rng);
    let mut pmax_acc = 0.0;
    let mut agree_acc = 0.0;
    let mut rows = 0.0;
    for _ in 0..60 {
        let a = vec![rng.uniform_in(-1.0, 1.0), rng.uniform_in(-1.0, 1.0)];
        let s = env.step(&a).unwrap();
        let (next, _) = agent.wm.observe_step(&agent.store, &post, &a, &s.obs, &mut rng);
        post = next;
        let k = agent.wm.cfg.k;
        let c = agent.wm.cfg.c;
        for row in 0..k {
            let p = &post.code.probs[row * c..(row + 1) * c];
            pmax_acc += p.iter().cloned().fold(0.0f64, f64::max);
            agree_acc += p.iter().map(|&x| x * x).sum::<f64>();
            rows += 1.0;
        }
        if s.done {
            break;
        }
    }
    println!(
        "after {wm_steps} wm steps (free_bits {free_bits}): mean p_max {:.3}, mean sample-agreement ceiling {:.3}",
        pmax_acc / rows,
        agree_acc / rows
    );
}
