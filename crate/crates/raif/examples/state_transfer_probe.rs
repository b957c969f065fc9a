//! Diagnostic: does a BC policy trained on replayed-chunk posterior states
//! transfer to online filtered states? Compares policy-vs-expert action
//! agreement on both state families.

use raif::autodiff::Tape;
use raif::config::TrainConfig;
use raif::nn::Adam;
use raif::num::PemaState;
use raif::replay::DualBuffer;
use raif::rng::Rng;
use raif::trainer::{collect_seed_data, Agent};
use raif::world_model::LatentMode;

fn main() {
    let mut cfg = TrainConfig::default();
    cfg.disable_crspp_sim = true;
    cfg.disable_ig = true;
    let mut agent = Agent::from_config(&cfg).unwrap();
    let mut env = raif::envs::make_env("reacher", 32).unwrap();
    let eps = collect_seed_data(&agent, env.as_mut(), 1000, 0).unwrap();
    let mut buffer = DualBuffer::new(100_000, 100_000);
    for ep in eps {
        buffer.add_seed_episode(ep).unwrap();
    }
    let mut rng = Rng::from_seed(1);
    let mut wm_opt = Adam::new(&agent.store, agent.wm.params().to_vec(), 1e-3, 100.0);
    for step in 0..1200 {
        let (batch, _, _) = buffer.sample_batch(step as u64, 16, 8, &mut rng).unwrap();
        let grads = {
            let mut t = Tape::new(&agent.store);
            let (total, _, _) = agent.wm.loss_on_tape(&mut t, &batch, LatentMode::Sample, &mut rng);
            t.backward(total)
        };
        wm_opt.step(&mut agent.store, &grads);
    }
    // BC training identical to bc_probe
    let mut actor_opt = Adam::new(&agent.store, agent.ac.policy_params().to_vec(), 3e-4, 100.0);
    let mut pema = PemaState::new(0.99);
    let h_det = agent.wm.cfg.h_det;
    let flat_dim = agent.wm.cfg.flat_dim();
    agent.ac.cfg.refresh_scale = 100.0;
    for step in 0..600 {
        let (batch, _, _) = buffer.sample_batch(step as u64, 16, 8, &mut rng).unwrap();
        let rollout = {
            let mut t = Tape::new(&agent.store);
            let (_, _, r) = agent.wm.loss_on_tape(&mut t, &batch, LatentMode::Sample, &mut rng);
            r
        };
        let mut refresh = raif::actor_critic::RefreshBatch::default();
        let (b, l) = (batch.batch, batch.steps);
        for t_idx in 1..l {
            for bi in 0..b {
                let row = t_idx * b + bi;
                let prev = row - b;
                if batch.mask[row] > 0.0 && batch.mask[prev] > 0.0 && batch.rho[row] > 0.0 {
                    refresh.h.extend_from_slice(&rollout.h[prev * h_det..(prev + 1) * h_det]);
                    refresh.flat.extend_from_slice(&rollout.flat[prev * flat_dim..(prev + 1) * flat_dim]);
                    refresh.actions.extend_from_slice(&batch.prev_actions[row * 2..(row + 1) * 2]);
                    refresh.rho.push(batch.rho[row]);
                    refresh.n += 1;
                }
            }
        }
        let starts_h = rollout.h[0..4 * h_det].to_vec();
        let starts_flat = rollout.flat[0..4 * flat_dim].to_vec();
        let preferred: Vec<Vec<f64>> = (0..agent.ac.cfg.horizon)
            .map(|_| {
                let mut p = vec![0.0; 4 * flat_dim];
                for row in 0..4 * agent.wm.cfg.k {
                    p[row * agent.wm.cfg.c] = 1.0;
                }
                p
            })
            .collect();
        let (grads, _, _) = agent
            .ac
            .actor_step(&agent.store, &agent.wm, &agent.ensemble, &starts_h, &starts_flat, 4,
                &preferred, Some(&refresh), &mut pema, LatentMode::Sample, &mut rng)
            .unwrap();
        actor_opt.step(&mut agent.store, &grads);
    }

    // agreement on replayed chunk states
    let mut dot_replay = 0.0;
    let mut n_replay = 0.0;
    for probe in 0..4 {
        let (batch, _, _) = buffer.sample_batch(probe, 16, 8, &mut rng).unwrap();
        let rollout = {
            let mut t = Tape::new(&agent.store);
            let (_, _, r) = agent.wm.loss_on_tape(&mut t, &batch, LatentMode::Sample, &mut rng);
            r
        };
        let (b, l) = (batch.batch, batch.steps);
        for t_idx in 0..l - 1 {
            for bi in 0..b {
                let row = t_idx * b + bi;
                let next = row + b;
                if batch.mask[row] == 0.0 || batch.mask[next] == 0.0 {
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
                let (a, _, _) = agent.ac.policy_forward(&agent.store, &state, &mut rng, true);
                let expert = &batch.prev_actions[next * 2..(next + 1) * 2];
                let na = (a[0] * a[0] + a[1] * a[1]).sqrt().max(1e-9);
                let ne = (expert[0] * expert[0] + expert[1] * expert[1]).sqrt().max(1e-9);
                dot_replay += (a[0] * expert[0] + a[1] * expert[1]) / (na * ne);
                n_replay += 1.0;
            }
        }
    }
    println!("replayed states: mean action cosine vs expert = {:.3}", dot_replay / n_replay);

    // agreement on online filtered states (fresh episodes, expert-driven so
    // the visited states match the data distribution)
    let mut dot_online = 0.0;
    let mut n_online = 0.0;
    for seed in 100..104u64 {
        let obs = env.reset(seed);
        let init = agent.wm.initial_state(&agent.store, &mut rng);
        let (mut post, _) = agent.wm.observe_step(&agent.store, &init, &[0.0, 0.0], &obs, &mut rng);
        loop {
            let expert = env.expert_action();
            let (a, _, _) = agent.ac.policy_forward(&agent.store, &post, &mut rng, true);
            let na = (a[0] * a[0] + a[1] * a[1]).sqrt().max(1e-9);
            let ne = (expert[0] * expert[0] + expert[1] * expert[1]).sqrt().max(1e-9);
            dot_online += (a[0] * expert[0] + a[1] * expert[1]) / (na * ne);
            n_online += 1.0;
            let step = env.step(&expert).unwrap();
            let (next, _) = agent.wm.observe_step(&agent.store, &post, &expert, &step.obs, &mut rng);
            post = next;
            if step.done {
                break;
            }
        }
    }
    println!("online states:   mean action cosine vs expert = {:.3}", dot_online / n_online);

    // policy-driven rollout trace
    let renv = raif::envs::Reacher::new(32);
    let mut renv = renv;
    use raif::envs::Env;
    let obs = renv.reset(555);
    let init = agent.wm.initial_state(&agent.store, &mut rng);
    let (mut post, _) = agent.wm.observe_step(&agent.store, &init, &[0.0, 0.0], &obs, &mut rng);
    println!("goal at ({:.2}, {:.2})", renv.goal[0], renv.goal[1]);
    for step in 0..40 {
        let (a, _, _) = agent.ac.policy_forward(&agent.store, &post, &mut rng, true);
        let expert = renv.expert_action();
        if step % 4 == 0 {
            println!(
                "  step {step:3}: agent ({:.2}, {:.2}) action ({:+.2}, {:+.2}) expert ({:+.2}, {:+.2})",
                renv.agent[0], renv.agent[1], a[0], a[1], expert[0], expert[1]
            );
        }
        let r = renv.step(&a).unwrap();
        let (next, _) = agent.wm.observe_step(&agent.store, &post, &a, &r.obs, &mut rng);
        post = next;
        if r.success {
            println!("  reached the goal at step {step}");
            break;
        }
    }
}
