//! Trains the preference model against a frozen world model on labeled
//! trajectories (expert episodes positive, random episodes negative) and
//! reports the similarity separation between the two sets.
//!
//!     cargo run --release -p raif --example preference_separation [crspp_steps] [wm_steps]

use raif::autodiff::Tape;
use raif::config::TrainConfig;
use raif::nn::Adam;
use raif::replay::DualBuffer;
use raif::rng::Rng;
use raif::trainer::{collect_seed_data, Agent};
use raif::world_model::LatentMode;

fn main() {
    let crspp_steps: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1000);
    let wm_steps: usize = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(800);
    let mut cfg = TrainConfig::default();
    cfg.soft_similarity = true;
    let mut agent = Agent::from_config(&cfg).unwrap();
    let mut env = raif::envs::make_env("reacher", 32).unwrap();

    // Positive set: expert episodes (rho = +1 past the first step).
    // Negative set: uniform-random-action episodes (rho = -1).
    let expert_eps = collect_seed_data(&agent, env.as_mut(), 600, 11).unwrap();
    let mut pos = DualBuffer::new(100_000, 100_000);
    for mut ep in expert_eps {
        let t = ep.len();
        let mut rho = vec![1.0; t];
        rho[0] = 0.0;
        ep.rho = Some(rho);
        pos.add_seed_episode(ep).unwrap();
    }
    let mut neg = DualBuffer::new(100_000, 100_000);
    let mut act_rng = Rng::from_seed(12);
    let mut lat_rng = Rng::from_seed(21);
    for seed in 0..6u64 {
        let obs0 = env.reset(1000 + seed);
        let mut obs_list = vec![obs0.clone()];
        let mut actions = vec![vec![0.0, 0.0]];
        let mut rewards = vec![0.0];
        let mut conts = vec![1.0];
        let mut succ = vec![false];
        let mut states = Vec::new();
        let init = agent.wm.initial_state(&agent.store, &mut lat_rng);
        states.push(init.clone());
        let (mut post, _) = agent.wm.observe_step(&agent.store, &init, &[0.0, 0.0], &obs0, &mut lat_rng);
        states.push(post.clone());
        loop {
            let a = vec![act_rng.uniform_in(-1.0, 1.0), act_rng.uniform_in(-1.0, 1.0)];
            let s = env.step(&a).unwrap();
            let (next, _) = agent.wm.observe_step(&agent.store, &post, &a, &s.obs, &mut lat_rng);
            post = next;
            states.push(post.clone());
            obs_list.push(s.obs.clone());
            actions.push(a);
            rewards.push(s.reward);
            conts.push(if s.done { 0.0 } else { 1.0 });
            succ.push(s.success);
            if s.done {
                break;
            }
        }
        let t = rewards.len();
        let mut rho = vec![-1.0; t];
        rho[0] = 0.0;
        let (k, c, h_det) = (agent.wm.cfg.k, agent.wm.cfg.c, agent.wm.cfg.h_det);
        let mut latent_h = Vec::new();
        let mut latent_code = Vec::new();
        for st in &states {
            latent_h.extend_from_slice(&st.h);
            for row in 0..k {
                let sl = &st.code.sample[row * c..(row + 1) * c];
                latent_code.push(sl.iter().position(|&x| x == 1.0).unwrap_or(0) as u8);
            }
        }
        let ep = raif::replay::EpisodeRecord {
            obs_dim: 3 * 32 * 32,
            action_dim: 2,
            obs: obs_list.iter().flatten().map(|&v| raif::replay::quantize_obs(v)).collect(),
            actions: actions.into_iter().flatten().collect(),
            rewards,
            expert: vec![false; t],
            success: succ.clone(),
            continues: conts,
            succeeded_once: succ.iter().any(|&d| d),
            rho: Some(rho),
            latent_h,
            latent_code,
            h_det,
            latent_k: k,
            latent_c: c,
        };
        neg.add_episode(ep).unwrap();
    }

    // Brief world-model pretraining on the mixed data, then freeze.
    let mut rng = Rng::from_seed(13);
    let mut wm_opt = Adam::new(&agent.store, agent.wm.params().to_vec(), 1e-3, cfg.grad_clip);
    for step in 0..wm_steps {
        let src = if step % 2 == 0 { &mut pos } else { &mut neg };
        let (batch, _, _) = src.sample_batch(0, 8, 8, &mut rng).unwrap();
        let grads = {
            let mut t = Tape::new(&agent.store);
            let (total, bd, _) = agent.wm.loss_on_tape(&mut t, &batch, LatentMode::Sample, &mut rng);
            bd.check_finite().unwrap();
            t.backward(total)
        };
        wm_opt.step(&mut agent.store, &grads);
    }
    println!("world model pretrained for {wm_steps} steps; now frozen");

    let sims_of = |agent: &Agent, buf: &mut DualBuffer, rng: &mut Rng| -> f64 {
        let mut acc = 0.0;
        let mut n = 0.0;
        for probe in 0..6 {
            let (batch, _, _) = buf.sample_batch(probe * 2, 8, 8, rng).unwrap();
            let mut t = Tape::new(&agent.store);
            let (_, _, rollout) = agent.wm.loss_on_tape(&mut t, &batch, LatentMode::Sample, rng);
            drop(t);
            let wm_side = if agent.crspp.cfg.soft_similarity { &rollout.flat_probs } else { &rollout.flat };
            let mut t2 = Tape::new(&agent.store);
            let (_, stats, _) = agent
                .crspp
                .loss_on_tape(&mut t2, &batch, wm_side, LatentMode::Sample, rng);
            acc += stats.mean_sim;
            n += 1.0;
        }
        acc / n
    };

    let mut probe_rng = Rng::from_seed(14);
    println!(
        "before: positive sim {:.3}, negative sim {:.3}",
        sims_of(&agent, &mut pos, &mut probe_rng.clone()),
        sims_of(&agent, &mut neg, &mut probe_rng.clone())
    );

    let mut crspp_opt = Adam::new(&agent.store, agent.crspp.params().to_vec(), 1e-3, cfg.grad_clip);
    let start = std::time::Instant::now();
    for step in 0..crspp_steps {
        let src = if step % 2 == 0 { &mut pos } else { &mut neg };
        let (batch, _, _) = src.sample_batch(0, 8, 8, &mut rng).unwrap();
        let rollout = {
            let mut t = Tape::new(&agent.store);
            let (_, _, r) = agent.wm.loss_on_tape(&mut t, &batch, LatentMode::Sample, &mut rng);
            r
        };
        let grads = {
            let wm_side = if agent.crspp.cfg.soft_similarity { &rollout.flat_probs } else { &rollout.flat };
            let mut t = Tape::new(&agent.store);
            let (total, stats, _) =
                agent.crspp.loss_on_tape(&mut t, &batch, wm_side, LatentMode::Sample, &mut rng);
            assert!(stats.total.is_finite());
            t.backward(total)
        };
        crspp_opt.step(&mut agent.store, &grads);
    }
    let secs = start.elapsed().as_secs_f64();
    let pos_sim = sims_of(&agent, &mut pos, &mut probe_rng.clone());
    let neg_sim = sims_of(&agent, &mut neg, &mut probe_rng.clone());
    println!("after {crspp_steps} steps ({secs:.0}s): positive sim {pos_sim:.3}, negative sim {neg_sim:.3}");
    println!(
        "criteria: pos >= 0.8 -> {}, neg <= 0.5*pos -> {}",
        pos_sim >= 0.8,
        neg_sim <= 0.5 * pos_sim
    );
}
