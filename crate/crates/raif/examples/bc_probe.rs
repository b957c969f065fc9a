//! Diagnostic: can the policy imitate the expert purely from replayed
//! positive steps (refresh term) on top of a briefly-pretrained, frozen
//! world model? Reports evaluation success rate after BC-only updates.
//! args: [wm_steps] [bc_steps] [lr_actor]

use raif::autodiff::Tape;
use raif::config::TrainConfig;
use raif::nn::Adam;
use raif::num::PemaState;
use raif::replay::DualBuffer;
use raif::rng::Rng;
use raif::trainer::{collect_seed_data, evaluate, Agent};
use raif::world_model::LatentMode;

fn main() {
    let wm_steps: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1200);
    let bc_steps: usize = std::env::args().nth(2).and_then(|s| s.parse().ok()).unwrap_or(800);
    let lr_actor: f64 = std::env::args().nth(3).and_then(|s| s.parse().ok()).unwrap_or(3e-4);
    let mut cfg = TrainConfig::default();
    cfg.disable_crspp_sim = true;
    cfg.disable_ig = true;
    if let Ok(geo) = std::env::var("RAIF_GEOMETRY") {
        let parts: Vec<usize> = geo.split(',').map(|x| x.parse().unwrap()).collect();
        cfg.latent_k = parts[0];
        cfg.latent_c = parts[1];
        cfg.h_det = parts[2];
        cfg.embed = parts[3];
    }
    let mut agent = Agent::from_config(&cfg).unwrap();
    let mut env = raif::envs::make_env("reacher", 32).unwrap();
    let eps = collect_seed_data(&agent, env.as_mut(), 1000, 0).unwrap();
    let mut buffer = DualBuffer::new(100_000, 100_000);
    for ep in eps {
        buffer.add_seed_episode(ep).unwrap();
    }
    let mut rng = Rng::from_seed(1);
    let mut wm_opt = Adam::new(&agent.store, agent.wm.params().to_vec(), 1e-3, 100.0);
    for step in 0..wm_steps {
        let (batch, _, _) = buffer.sample_batch(step as u64, 16, 8, &mut rng).unwrap();
        let grads = {
            let mut t = Tape::new(&agent.store);
            let (total, bd, _) = agent.wm.loss_on_tape(&mut t, &batch, LatentMode::Sample, &mut rng);
            bd.check_finite().unwrap();
            t.backward(total)
        };
        wm_opt.step(&mut agent.store, &grads);
    }
    println!("wm pretrained {wm_steps} steps");
    buffer.refresh_pinned(|ep| raif::trainer::refilter_episode(&agent, ep, &mut Rng::from_seed(77)));

    let mut actor_opt = Adam::new(&agent.store, agent.ac.policy_params().to_vec(), lr_actor, 100.0);
    let mut pema = PemaState::new(0.99);
    let h_det = agent.wm.cfg.h_det;
    let flat_dim = agent.wm.cfg.flat_dim();
    for step in 0..bc_steps {
        let (batch, _, _) = buffer.sample_batch(step as u64, 16, 8, &mut rng).unwrap();
        let rollout = {
            let mut t = Tape::new(&agent.store);
            let (_, _, r) = agent.wm.loss_on_tape(&mut t, &batch, LatentMode::Sample, &mut rng);
            r
        };
        // refresh rows: all (prev, action-into-row, rho_row > 0)
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
        // tiny rollout set so the advantage path exists but BC dominates
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
        agent.ac.cfg.refresh_scale = 100.0;
        let (grads, _, stats) = agent
            .ac
            .actor_step(
                &agent.store, &agent.wm, &agent.ensemble, &starts_h, &starts_flat, 4,
                &preferred, Some(&refresh), &mut pema, LatentMode::Sample, &mut rng,
            )
            .unwrap();
        actor_opt.step(&mut agent.store, &grads);
        if step % 200 == 0 {
            println!("bc step {step}: refresh {:.2}", stats.refresh_term / 100.0);
        }
    }
    // per-class fit: approach pairs (strong expert actions) vs sitting pairs
    let mut stats = [(0.0f64, 0.0f64, 0.0f64); 2]; // (count, cos_sum, mag_sum)
    for probe in 0..6 {
        let (batch, _, _) = buffer.sample_batch(probe * 2 + 1, 16, 8, &mut rng).unwrap();
        let rollout = {
            let mut t = Tape::new(&agent.store);
            let (_, _, r) = agent.wm.loss_on_tape(&mut t, &batch, LatentMode::Sample, &mut rng);
            r
        };
        let (b, l) = (batch.batch, batch.steps);
        for t_idx in 1..l {
            for bi in 0..b {
                let row = t_idx * b + bi;
                let prev = row - b;
                if batch.mask[row] == 0.0 || batch.mask[prev] == 0.0 {
                    continue;
                }
                let expert = &batch.prev_actions[row * 2..(row + 1) * 2];
                let mag = (expert[0] * expert[0] + expert[1] * expert[1]).sqrt();
                let class = if mag > 0.9 { 0 } else if mag < 0.1 { 1 } else { continue };
                let state = raif::world_model::LatentState {
                    h: rollout.h[prev * h_det..(prev + 1) * h_det].to_vec(),
                    code: raif::num::CategoricalCode {
                        k: agent.wm.cfg.k,
                        c: agent.wm.cfg.c,
                        logits: vec![0.0; flat_dim],
                        probs: vec![0.0; flat_dim],
                        sample: rollout.flat[prev * flat_dim..(prev + 1) * flat_dim].to_vec(),
                    },
                };
                let (a, _, _) = agent.ac.policy_forward(&agent.store, &state, &mut rng, true);
                let na = (a[0] * a[0] + a[1] * a[1]).sqrt();
                let cos = if mag > 1e-6 && na > 1e-6 {
                    (a[0] * expert[0] + a[1] * expert[1]) / (na * mag)
                } else {
                    0.0
                };
                stats[class].0 += 1.0;
                stats[class].1 += cos;
                stats[class].2 += na;
            }
        }
    }
    for (name, s) in ["approach", "sitting"].iter().zip(&stats) {
        println!(
            "{name:9} pairs n={:4.0}: mean cosine {:+.3}, mean |action| {:.3}",
            s.0,
            s.1 / s.0.max(1.0),
            s.2 / s.0.max(1.0)
        );
    }
    let (acr, sr, stability) = evaluate(&agent, &cfg, 20, 99);
    println!("BC-only eval: ACR {acr:.1} SR {sr:.2} stability {stability:.3}");
}
