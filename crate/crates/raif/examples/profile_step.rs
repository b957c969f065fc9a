//! Rough timing of the pieces of one gradient step at the desk preset.

use raif::autodiff::Tape;
use raif::config::TrainConfig;
use raif::num::PemaState;
use raif::replay::DualBuffer;
use raif::rng::Rng;
use raif::trainer::{collect_seed_data, Agent};
use raif::world_model::LatentMode;
use std::time::Instant;

fn main() {
    let cfg = TrainConfig::default();
    let mut agent = Agent::from_config(&cfg).unwrap();
    let mut env = raif::envs::make_env(&cfg.env, cfg.img_hw).unwrap();
    let eps = collect_seed_data(&agent, env.as_mut(), 800, 1).unwrap();
    let mut buffer = DualBuffer::new(cfg.cap_normal, cfg.cap_positive);
    for ep in eps {
        buffer.add_seed_episode(ep).unwrap();
    }
    let mut rng = Rng::from_seed(2);
    let (batch, _, _) = buffer.sample_batch(0, cfg.batch, cfg.seq_len, &mut rng).unwrap();

    let reps = 10;
    let t0 = Instant::now();
    let mut rollout_keep = None;
    for _ in 0..reps {
        let mut t = Tape::new(&agent.store);
        let (total, _, rollout) = agent.wm.loss_on_tape(&mut t, &batch, LatentMode::Sample, &mut rng.clone());
        let _ = t.backward(total);
        rollout_keep = Some(rollout);
    }
    println!("wm loss+backward      {:7.1} ms", t0.elapsed().as_secs_f64() * 1000.0 / reps as f64);
    let rollout = rollout_keep.unwrap();

    let t0 = Instant::now();
    let mut crspp_keep = None;
    for _ in 0..reps {
        let mut t = Tape::new(&agent.store);
        let (total, _, cr) = agent.crspp.loss_on_tape(&mut t, &batch, &rollout.flat, LatentMode::Sample, &mut rng.clone());
        let _ = t.backward(total);
        crspp_keep = Some(cr);
    }
    println!("crspp loss+backward   {:7.1} ms", t0.elapsed().as_secs_f64() * 1000.0 / reps as f64);
    let crspp_rollout = crspp_keep.unwrap();

    let n = cfg.imagination_starts;
    let h_det = agent.wm.cfg.h_det;
    let flat_dim = agent.wm.cfg.flat_dim();
    let starts_h = rollout.h[0..n * h_det].to_vec();
    let starts_flat = rollout.flat[0..n * flat_dim].to_vec();
    let ch = crspp_rollout.h[0..n * h_det].to_vec();
    let cf = crspp_rollout.flat[0..n * flat_dim].to_vec();

    let t0 = Instant::now();
    let mut pref_keep = None;
    for _ in 0..reps {
        pref_keep = Some(agent.crspp.rollout_preferred(&agent.store, &ch, &cf, n, cfg.horizon, &mut rng.clone()));
    }
    println!("preferred rollout     {:7.1} ms", t0.elapsed().as_secs_f64() * 1000.0 / reps as f64);
    let preferred = pref_keep.unwrap();

    let mut pema = PemaState::new(0.99);
    let t0 = Instant::now();
    let mut traj_keep = None;
    for _ in 0..reps {
        let (g, traj, _) = agent
            .ac
            .actor_step(&agent.store, &agent.wm, &agent.ensemble, &starts_h, &starts_flat, n, &preferred, None, &mut pema, LatentMode::Sample, &mut rng.clone())
            .unwrap();
        let _ = g;
        traj_keep = Some(traj);
    }
    println!("actor step            {:7.1} ms", t0.elapsed().as_secs_f64() * 1000.0 / reps as f64);
    let traj = traj_keep.unwrap();

    let feat_dim = agent.ac.cfg.feat_dim;
    let mut feats = Vec::with_capacity(cfg.horizon * n * feat_dim);
    for tau in 0..cfg.horizon {
        for i in 0..n {
            let row = tau * n + i;
            feats.extend_from_slice(&traj.states_h[row * h_det..(row + 1) * h_det]);
            feats.extend_from_slice(&traj.states_flat[row * flat_dim..(row + 1) * flat_dim]);
        }
    }
    let t0 = Instant::now();
    for _ in 0..reps {
        let _ = agent.ac.value_step(&agent.store, &feats, cfg.horizon * n, &traj.targets).unwrap();
    }
    println!("value step            {:7.1} ms", t0.elapsed().as_secs_f64() * 1000.0 / reps as f64);

    // env-side costs
    let mut post = agent.wm.initial_state(&agent.store, &mut rng);
    let obs = vec![0.3; agent.wm.cfg.obs_dim()];
    let action = vec![0.0, 0.0];
    let t0 = Instant::now();
    for _ in 0..200 {
        let (p, _) = agent.wm.observe_step(&agent.store, &post, &action, &obs, &mut rng);
        post = p;
    }
    println!("observe_step          {:7.2} ms", t0.elapsed().as_secs_f64() * 1000.0 / 200.0);
    let t0 = Instant::now();
    for _ in 0..200 {
        let _ = agent.ac.policy_forward(&agent.store, &post, &mut rng, false);
    }
    println!("policy_forward        {:7.2} ms", t0.elapsed().as_secs_f64() * 1000.0 / 200.0);
}
