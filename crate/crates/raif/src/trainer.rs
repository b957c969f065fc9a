//! End-to-end training orchestration: seed-data collection, environment
//! interaction, the alternating-buffer gradient schedule, imagination-phase
//! construction, metric logging, and checkpointing.
//!
//! The default loop is fully sequential and bitwise deterministic for a
//! fixed seed. The optional pipelined mode overlaps environment stepping
//! with gradient updates under a single-writer/single-reader contract and
//! forfeits bitwise determinism (and says so on stderr).

use crate::actor_critic::{AcConfig, ActorCritic, ActorStats, ImaginedTrajectory, RefreshBatch};
use crate::autodiff::{Grads, ParamId, ParamStore, Tape};
use crate::checkpoint::{self, RunState};
use crate::config::{render_config, TrainConfig};
use crate::crspp::{Crspp, CrsppConfig, CrsppLossStats, CrsppRollout};
use crate::ensemble::{EnsembleConfig, IgEnsemble};
use crate::envs::{make_env, Env};
use crate::metrics::{MetricEvent, MetricsWriter};
use crate::nn::Adam;
use crate::num::PemaState;
use crate::replay::{quantize_obs, BufferSource, DualBuffer, EpisodeRecord};
use crate::rng::Rng;
use crate::self_revision::{compute_preference_rates, EpisodeFlags, RevisionConfig};
use crate::world_model::{
    LatentMode, PosteriorRollout, WmBatch, WmConfig, WmLossBreakdown, WorldModel,
};
use std::path::Path;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Mutex, RwLock};

const EVAL_SEED_SALT: u64 = 0xE7A1_5EED;
const REFRESH_ROW_CAP: usize = 96;

/// The five learnable components plus their parameter store.
pub struct Agent {
    pub store: ParamStore,
    pub wm: WorldModel,
    pub crspp: Crspp,
    pub ensemble: IgEnsemble,
    pub ac: ActorCritic,
    pub revision: RevisionConfig,
}

impl Agent {
    pub fn from_config(cfg: &TrainConfig) -> Result<Agent, String> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        let mut rng = Rng::stream(cfg.seed, "init");
        let action_dim = match cfg.env.as_str() {
            "mountain_car" => 1,
            _ => 2,
        };
        let wm_cfg = WmConfig {
            img_hw: cfg.img_hw,
            k: cfg.latent_k,
            c: cfg.latent_c,
            h_det: cfg.h_det,
            embed: cfg.embed,
            channels: cfg.channels,
            hidden: cfg.hidden,
            action_dim,
            free_bits: cfg.free_bits,
            eta_rep: cfg.eta_rep,
            eta_dyn: cfg.eta_dyn,
        };
        let wm = WorldModel::new(&mut store, wm_cfg, &mut rng);
        let crspp_cfg = CrsppConfig {
            img_hw: cfg.img_hw,
            k: cfg.latent_k,
            c: cfg.latent_c,
            h_det: cfg.h_det,
            embed: cfg.crspp_embed,
            channels: cfg.crspp_channels,
            hidden: cfg.crspp_hidden,
            soft_similarity: cfg.soft_similarity,
        };
        let crspp = Crspp::new(&mut store, crspp_cfg, &mut rng);
        let flat_dim = cfg.latent_k * cfg.latent_c;
        let ens_cfg = EnsembleConfig {
            n_members: cfg.ensemble_members,
            in_dim: cfg.h_det + flat_dim + action_dim,
            out_dim: flat_dim,
            hidden: cfg.ensemble_hidden,
            bias_correction: true,
        };
        let ensemble = IgEnsemble::new(&mut store, ens_cfg, &mut rng);
        let ac_cfg = AcConfig {
            action_dim,
            feat_dim: cfg.h_det + flat_dim,
            hidden: cfg.actor_hidden,
            horizon: cfg.horizon,
            gamma: cfg.gamma,
            lambda: cfg.lambda,
            zeta: cfg.zeta,
            eta: cfg.eta,
            refresh_scale: cfg.refresh_scale,
            disable_sim: cfg.disable_crspp_sim,
            disable_ig: cfg.disable_ig,
            disable_refresh: cfg.disable_refresh,
            disable_wm_entropy: cfg.disable_wm_entropy,
            pathwise: cfg.pathwise,
        };
        let ac = ActorCritic::new(&mut store, ac_cfg, &mut rng);
        let revision = RevisionConfig {
            alpha: cfg.revision_alpha,
            beta: cfg.revision_beta,
            epsilon: cfg.revision_epsilon,
        };
        Ok(Agent {
            store,
            wm,
            crspp,
            ensemble,
            ac,
            revision,
        })
    }

    pub fn param_groups(&self) -> Vec<(&'static str, Vec<ParamId>)> {
        vec![
            ("world_model", self.wm.params().to_vec()),
            ("crspp", self.crspp.params().to_vec()),
            ("ensemble", self.ensemble.params().to_vec()),
            ("actor", self.ac.policy_params().to_vec()),
            ("value", self.ac.value_params().to_vec()),
        ]
    }

    pub fn save_checkpoint(
        &self,
        dir: &Path,
        cfg: &TrainConfig,
        state: &RunState,
    ) -> Result<(), String> {
        let groups = self.param_groups();
        let refs: Vec<(&str, &[ParamId])> =
            groups.iter().map(|(n, ids)| (*n, ids.as_slice())).collect();
        checkpoint::save(dir, &self.store, &refs, &render_config(cfg), state)
    }

    pub fn load_checkpoint(dir: &Path) -> Result<(Agent, TrainConfig, RunState), String> {
        let ckpt = checkpoint::load(dir)?;
        let cfg = crate::config::parse_config(&ckpt.config_text)
            .map_err(|e| format!("checkpoint config: {e}"))?;
        let mut agent = Agent::from_config(&cfg)?;
        checkpoint::restore_into(&mut agent.store, &ckpt)?;
        Ok((agent, cfg, ckpt.state))
    }
}

struct EpisodeBuilder {
    obs_dim: usize,
    action_dim: usize,
    h_det: usize,
    latent_k: usize,
    latent_c: usize,
    obs: Vec<u8>,
    actions: Vec<f64>,
    rewards: Vec<f64>,
    expert: Vec<bool>,
    success: Vec<bool>,
    continues: Vec<f64>,
    latent_h: Vec<f64>,
    latent_code: Vec<u8>,
}

impl EpisodeBuilder {
    fn new(obs_dim: usize, action_dim: usize, wm_cfg: &WmConfig) -> Self {
        Self {
            obs_dim,
            action_dim,
            h_det: wm_cfg.h_det,
            latent_k: wm_cfg.k,
            latent_c: wm_cfg.c,
            obs: Vec::new(),
            actions: Vec::new(),
            rewards: Vec::new(),
            expert: Vec::new(),
            success: Vec::new(),
            continues: Vec::new(),
            latent_h: Vec::new(),
            latent_code: Vec::new(),
        }
    }

    /// Records one act-time belief state (called T+1 times per episode:
    /// the initial latent, then each posterior).
    fn push_latent(&mut self, state: &crate::world_model::LatentState) {
        debug_assert_eq!(state.h.len(), self.h_det);
        self.latent_h.extend_from_slice(&state.h);
        for row in 0..self.latent_k {
            let s = &state.code.sample[row * self.latent_c..(row + 1) * self.latent_c];
            let idx = s.iter().position(|&x| x == 1.0).unwrap_or(0);
            self.latent_code.push(idx as u8);
        }
    }

    fn push(
        &mut self,
        obs: &[f64],
        prev_action: &[f64],
        reward: f64,
        cont: f64,
        success: bool,
        expert: bool,
    ) {
        debug_assert_eq!(obs.len(), self.obs_dim);
        debug_assert_eq!(prev_action.len(), self.action_dim);
        self.obs.extend(obs.iter().map(|&v| quantize_obs(v)));
        self.actions.extend_from_slice(prev_action);
        self.rewards.push(reward);
        self.expert.push(expert);
        self.success.push(success);
        self.continues.push(cont);
    }

    fn len(&self) -> usize {
        self.rewards.len()
    }

    fn finish(self, revision: &RevisionConfig) -> Result<EpisodeRecord, String> {
        let succeeded_once = self.success.iter().any(|&d| d);
        let flags = EpisodeFlags::new(self.expert.clone(), self.success.clone(), succeeded_once)?;
        let rho = compute_preference_rates(&flags, revision)?;
        let ep = EpisodeRecord {
            obs_dim: self.obs_dim,
            action_dim: self.action_dim,
            obs: self.obs,
            actions: self.actions,
            rewards: self.rewards,
            expert: self.expert,
            success: self.success,
            continues: self.continues,
            succeeded_once,
            rho: Some(rho),
            latent_h: self.latent_h,
            latent_code: self.latent_code,
            h_det: self.h_det,
            latent_k: self.latent_k,
            latent_c: self.latent_c,
        };
        ep.validate()?;
        Ok(ep)
    }
}

/// Runs the scripted expert until `n_steps` environment steps have been
/// recorded, keeping only episodes that reached the goal. The agent's world
/// model filters alongside so the records carry act-time latents (refreshed
/// later as the model trains). Aborts if the expert produces no usable
/// success within ten times the budget.
pub fn collect_seed_data(
    agent: &Agent,
    env: &mut dyn Env,
    n_steps: u64,
    seed: u64,
) -> Result<Vec<EpisodeRecord>, String> {
    let mut seed_rng = Rng::stream(seed, "seed-episodes");
    let mut latent_rng = Rng::stream(seed, "seed-latents");
    let obs_dim = 3 * env.img_hw() * env.img_hw();
    let zero_action = vec![0.0; env.action_dim()];
    let mut episodes = Vec::new();
    let mut kept_steps = 0u64;
    let mut spent = 0u64;
    while kept_steps < n_steps {
        if spent > 10 * n_steps.max(1) {
            return Err(format!(
                "expert produced no usable successes within {spent} steps (budget {n_steps})"
            ));
        }
        let obs = env.reset(seed_rng.next_u64());
        let mut builder = EpisodeBuilder::new(obs_dim, env.action_dim(), &agent.wm.cfg);
        let init = agent.wm.initial_state(&agent.store, &mut latent_rng);
        builder.push_latent(&init);
        let (mut posterior, _) =
            agent
                .wm
                .observe_step(&agent.store, &init, &zero_action, &obs, &mut latent_rng);
        builder.push(&obs, &zero_action, 0.0, 1.0, false, true);
        builder.push_latent(&posterior);
        loop {
            let action = env.expert_action();
            let step = env.step(&action)?;
            spent += 1;
            builder.push(
                &step.obs,
                &action,
                step.reward,
                if step.done { 0.0 } else { 1.0 },
                step.success,
                true,
            );
            let (next, _) = agent.wm.observe_step(
                &agent.store,
                &posterior,
                &action,
                &step.obs,
                &mut latent_rng,
            );
            posterior = next;
            builder.push_latent(&posterior);
            if step.done {
                break;
            }
        }
        let ep = builder.finish(&agent.revision)?;
        if ep.succeeded_once {
            kept_steps += ep.len() as u64;
            episodes.push(ep);
        }
    }
    Ok(episodes)
}

/// Re-filters an episode's stored latent trajectory under the current world
/// model (used to keep pinned seed episodes' chunk-start states fresh).
pub fn refilter_episode(agent: &Agent, ep: &EpisodeRecord, rng: &mut Rng) -> EpisodeRecord {
    let mut out = ep.clone();
    let cfgk = agent.wm.cfg.k;
    let h_det = agent.wm.cfg.h_det;
    out.latent_h.clear();
    out.latent_code.clear();
    out.h_det = h_det;
    out.latent_k = cfgk;
    out.latent_c = agent.wm.cfg.c;
    let push = |st: &crate::world_model::LatentState, out: &mut EpisodeRecord| {
        out.latent_h.extend_from_slice(&st.h);
        for row in 0..cfgk {
            let s = &st.code.sample[row * agent.wm.cfg.c..(row + 1) * agent.wm.cfg.c];
            out.latent_code.push(s.iter().position(|&x| x == 1.0).unwrap_or(0) as u8);
        }
    };
    let mut state = agent.wm.initial_state(&agent.store, rng);
    push(&state, &mut out);
    for t in 0..ep.len() {
        let obs: Vec<f64> = ep.obs[t * ep.obs_dim..(t + 1) * ep.obs_dim]
            .iter()
            .map(|&q| crate::replay::dequantize_obs(q))
            .collect();
        let action = &ep.actions[t * ep.action_dim..(t + 1) * ep.action_dim];
        let (next, _) = agent.wm.observe_step(&agent.store, &state, action, &obs, rng);
        state = next;
        push(&state, &mut out);
    }
    out
}

#[derive(Debug, Clone, Default)]
pub struct RunSummary {
    pub env_steps: u64,
    pub grad_steps: u64,
    pub episodes: u64,
    pub episode_returns: Vec<f64>,
    pub episode_successes: Vec<bool>,
    pub final_eval: Option<(f64, f64, f64)>,
}

impl RunSummary {
    /// Success rate over the last `n` training episodes.
    pub fn success_rate_tail(&self, n: usize) -> f64 {
        if self.episode_successes.is_empty() {
            return 0.0;
        }
        let tail: Vec<&bool> = self.episode_successes.iter().rev().take(n).collect();
        tail.iter().filter(|&&&s| s).count() as f64 / tail.len() as f64
    }
}

struct Optimizers {
    wm: Adam,
    crspp: Adam,
    ensemble: Adam,
    actor: Adam,
    value: Adam,
}

impl Optimizers {
    fn new(
        store: &ParamStore,
        wm: &WorldModel,
        crspp: &Crspp,
        ensemble: &IgEnsemble,
        ac: &ActorCritic,
        cfg: &TrainConfig,
    ) -> Self {
        Self {
            wm: Adam::new(store, wm.params().to_vec(), cfg.lr_world, cfg.grad_clip),
            crspp: Adam::new(store, crspp.params().to_vec(), cfg.lr_crspp, cfg.grad_clip),
            ensemble: Adam::new(store, ensemble.params().to_vec(), cfg.lr_ensemble, cfg.grad_clip),
            actor: Adam::new(store, ac.policy_params().to_vec(), cfg.lr_actor, cfg.grad_clip),
            value: Adam::new(store, ac.value_params().to_vec(), cfg.lr_value, cfg.grad_clip),
        }
    }
}

/// Named random streams for the training loop, all derived from the run seed.
struct TrainStreams {
    episode_seeds: Rng,
    policy: Rng,
    latents: Rng,
    batches: Rng,
    update_latents: Rng,
    imagination: Rng,
}

impl TrainStreams {
    fn new(seed: u64) -> Self {
        Self {
            episode_seeds: Rng::stream(seed, "episode-seeds"),
            policy: Rng::stream(seed, "policy"),
            latents: Rng::stream(seed, "latents"),
            batches: Rng::stream(seed, "batches"),
            update_latents: Rng::stream(seed, "update-latents"),
            imagination: Rng::stream(seed, "imagination"),
        }
    }
}

// ---- gradient-step sub-computations (shared by both loop modes) ------------

fn wm_forward(
    store: &ParamStore,
    wm: &WorldModel,
    batch: &WmBatch,
    rng: &mut Rng,
) -> Result<(Grads, WmLossBreakdown, PosteriorRollout), String> {
    let mut t = Tape::new(store);
    let (total, breakdown, rollout) = wm.loss_on_tape(&mut t, batch, LatentMode::Sample, rng);
    breakdown.check_finite()?;
    Ok((t.backward(total), breakdown, rollout))
}

fn crspp_forward(
    store: &ParamStore,
    crspp: &Crspp,
    batch: &WmBatch,
    wm_flat: &[f64],
    rng: &mut Rng,
) -> Result<(Grads, CrsppLossStats, CrsppRollout), String> {
    let mut t = Tape::new(store);
    let (total, stats, rollout) = crspp.loss_on_tape(&mut t, batch, wm_flat, LatentMode::Sample, rng);
    if !stats.total.is_finite() {
        return Err(format!("preference loss is non-finite ({})", stats.total));
    }
    Ok((t.backward(total), stats, rollout))
}

/// Consecutive real transitions of a batch, as ensemble inputs and targets.
fn ensemble_transitions(
    wm: &WorldModel,
    batch: &WmBatch,
    rollout: &PosteriorRollout,
) -> (Vec<f64>, Vec<f64>, usize) {
    let (b, l) = (batch.batch, batch.steps);
    let h_det = wm.cfg.h_det;
    let flat_dim = wm.cfg.flat_dim();
    let action_dim = wm.cfg.action_dim;
    let mut inputs = Vec::new();
    let mut targets = Vec::new();
    let mut n = 0;
    for t_idx in 0..l.saturating_sub(1) {
        for bi in 0..b {
            let row = t_idx * b + bi;
            let next = (t_idx + 1) * b + bi;
            if batch.mask[row] > 0.0 && batch.mask[next] > 0.0 {
                inputs.extend_from_slice(&rollout.h[row * h_det..(row + 1) * h_det]);
                inputs.extend_from_slice(&rollout.flat[row * flat_dim..(row + 1) * flat_dim]);
                inputs.extend_from_slice(
                    &batch.prev_actions[next * action_dim..(next + 1) * action_dim],
                );
                targets.extend_from_slice(&rollout.flat[next * flat_dim..(next + 1) * flat_dim]);
                n += 1;
            }
        }
    }
    (inputs, targets, n)
}

fn ensemble_forward(
    store: &ParamStore,
    ensemble: &IgEnsemble,
    inputs: Vec<f64>,
    targets: &[f64],
    n: usize,
) -> Result<(Grads, f64), String> {
    let mut t = Tape::new(store);
    let x = t.constant(&[n, ensemble.cfg.in_dim], inputs);
    let loss = ensemble.nll_loss_on_tape(&mut t, x, targets);
    let v = t.scalar_value(loss);
    if !v.is_finite() {
        return Err(format!("ensemble NLL is non-finite ({v})"));
    }
    Ok((t.backward(loss), v))
}

struct ImaginationInputs {
    starts_h: Vec<f64>,
    starts_flat: Vec<f64>,
    crspp_h: Vec<f64>,
    crspp_flat: Vec<f64>,
    refresh: RefreshBatch,
}

/// Chooses imagination start states (uniform over real rows), the matching
/// preference-model states, and the positive-preference refresh rows.
fn imagination_inputs(
    cfg: &TrainConfig,
    wm: &WorldModel,
    batch: &WmBatch,
    rollout: &PosteriorRollout,
    crspp_rollout: &CrsppRollout,
    rng: &mut Rng,
) -> Result<ImaginationInputs, String> {
    let (b, l) = (batch.batch, batch.steps);
    let h_det = wm.cfg.h_det;
    let flat_dim = wm.cfg.flat_dim();
    let action_dim = wm.cfg.action_dim;
    let real_rows: Vec<usize> = (0..l * b).filter(|&r| batch.mask[r] > 0.0).collect();
    if real_rows.is_empty() {
        return Err("replay batch contained no real steps".into());
    }
    let n_starts = cfg.imagination_starts;
    let mut out = ImaginationInputs {
        starts_h: Vec::with_capacity(n_starts * h_det),
        starts_flat: Vec::with_capacity(n_starts * flat_dim),
        crspp_h: Vec::with_capacity(n_starts * h_det),
        crspp_flat: Vec::with_capacity(n_starts * flat_dim),
        refresh: RefreshBatch::default(),
    };
    for _ in 0..n_starts {
        let row = real_rows[rng.below(real_rows.len())];
        out.starts_h
            .extend_from_slice(&rollout.h[row * h_det..(row + 1) * h_det]);
        out.starts_flat
            .extend_from_slice(&rollout.flat[row * flat_dim..(row + 1) * flat_dim]);
        out.crspp_h
            .extend_from_slice(&crspp_rollout.h[row * h_det..(row + 1) * h_det]);
        out.crspp_flat
            .extend_from_slice(&crspp_rollout.flat[row * flat_dim..(row + 1) * flat_dim]);
    }

    if !cfg.disable_refresh {
        // Replayed (state, action) pairs whose resulting step carries
        // positive preference: the action into row t is credited with rho_t.
        let mut candidates: Vec<usize> = Vec::new();
        for t_idx in 1..l {
            for bi in 0..b {
                let row = t_idx * b + bi;
                let prev = (t_idx - 1) * b + bi;
                if batch.mask[row] > 0.0 && batch.mask[prev] > 0.0 && batch.rho[row] > 0.0 {
                    candidates.push(row);
                }
            }
        }
        let take = candidates.len().min(REFRESH_ROW_CAP);
        for i in 0..take {
            let row = if candidates.len() <= REFRESH_ROW_CAP {
                candidates[i]
            } else {
                candidates[rng.below(candidates.len())]
            };
            let prev = row - b;
            out.refresh
                .h
                .extend_from_slice(&rollout.h[prev * h_det..(prev + 1) * h_det]);
            out.refresh
                .flat
                .extend_from_slice(&rollout.flat[prev * flat_dim..(prev + 1) * flat_dim]);
            out.refresh
                .actions
                .extend_from_slice(&batch.prev_actions[row * action_dim..(row + 1) * action_dim]);
            out.refresh.rho.push(batch.rho[row]);
            out.refresh.n += 1;
        }
    }
    Ok(out)
}

/// Value-head features for imagined states 0..H-1 over all rollouts.
fn value_features(
    wm: &WorldModel,
    traj: &ImaginedTrajectory,
    n_starts: usize,
    horizon: usize,
) -> Vec<f64> {
    let h_det = wm.cfg.h_det;
    let flat_dim = wm.cfg.flat_dim();
    let mut feats = Vec::with_capacity(horizon * n_starts * (h_det + flat_dim));
    for tau in 0..horizon {
        for i in 0..n_starts {
            let row = tau * n_starts + i;
            feats.extend_from_slice(&traj.states_h[row * h_det..(row + 1) * h_det]);
            feats.extend_from_slice(&traj.states_flat[row * flat_dim..(row + 1) * flat_dim]);
        }
    }
    feats
}

#[allow(clippy::too_many_arguments)]
fn update_event(
    env_steps: u64,
    grad_index: u64,
    source: BufferSource,
    fallback: bool,
    breakdown: &WmLossBreakdown,
    crspp_stats: &CrsppLossStats,
    ensemble_nll: f64,
    actor_stats: &ActorStats,
    value_loss: f64,
) -> MetricEvent {
    MetricEvent::Update {
        step: env_steps,
        grad_step: grad_index,
        source: source.as_str().to_string(),
        fallback,
        wm_total: breakdown.total,
        wm_complexity: breakdown.complexity,
        wm_image: breakdown.accuracy_image,
        wm_reward: breakdown.accuracy_reward,
        wm_continue: breakdown.accuracy_continue,
        crspp_loss: crspp_stats.total,
        crspp_kl: crspp_stats.mean_kl,
        crspp_sim: crspp_stats.mean_sim,
        ensemble_nll,
        actor_objective: actor_stats.objective,
        value_loss,
        ig_mean: actor_stats.mean_ig,
        sim_mean: actor_stats.mean_sim,
        policy_entropy: actor_stats.mean_policy_entropy,
        pema_range: actor_stats.pema_range,
        refresh: actor_stats.refresh_term,
    }
}

/// One full gradient step over all five parameter groups (sequential mode).
#[allow(clippy::too_many_arguments)]
fn gradient_step(
    agent: &mut Agent,
    cfg: &TrainConfig,
    buffer: &mut DualBuffer,
    opts: &mut Optimizers,
    pema: &mut PemaState,
    streams: &mut TrainStreams,
    grad_index: u64,
    env_steps: u64,
) -> Result<MetricEvent, String> {
    let (batch, source, fallback) =
        buffer.sample_batch(grad_index, cfg.batch, cfg.seq_len, &mut streams.batches)?;

    let (wm_grads, breakdown, rollout) =
        wm_forward(&agent.store, &agent.wm, &batch, &mut streams.update_latents)?;
    opts.wm.step(&mut agent.store, &wm_grads);

    let wm_side = if agent.crspp.cfg.soft_similarity {
        &rollout.flat_probs
    } else {
        &rollout.flat
    };
    let (crspp_grads, crspp_stats, crspp_rollout) = crspp_forward(
        &agent.store,
        &agent.crspp,
        &batch,
        wm_side,
        &mut streams.update_latents,
    )?;
    opts.crspp.step(&mut agent.store, &crspp_grads);

    let (ens_in, ens_tgt, n_trans) = ensemble_transitions(&agent.wm, &batch, &rollout);
    let mut ensemble_nll = 0.0;
    if n_trans > 0 {
        let (grads, nll) = ensemble_forward(&agent.store, &agent.ensemble, ens_in, &ens_tgt, n_trans)?;
        ensemble_nll = nll;
        opts.ensemble.step(&mut agent.store, &grads);
    }

    let im = imagination_inputs(
        cfg,
        &agent.wm,
        &batch,
        &rollout,
        &crspp_rollout,
        &mut streams.imagination,
    )?;
    let preferred = agent.crspp.rollout_preferred(
        &agent.store,
        &im.crspp_h,
        &im.crspp_flat,
        cfg.imagination_starts,
        cfg.horizon,
        &mut streams.imagination,
    );
    let refresh_opt = if im.refresh.n > 0 { Some(&im.refresh) } else { None };
    let (actor_grads, traj, actor_stats) = agent.ac.actor_step(
        &agent.store,
        &agent.wm,
        &agent.ensemble,
        &im.starts_h,
        &im.starts_flat,
        cfg.imagination_starts,
        &preferred,
        refresh_opt,
        pema,
        LatentMode::Sample,
        &mut streams.imagination,
    )?;
    opts.actor.step(&mut agent.store, &actor_grads);

    let feats = value_features(&agent.wm, &traj, cfg.imagination_starts, cfg.horizon);
    let (value_loss, value_grads) = agent.ac.value_step(
        &agent.store,
        &feats,
        cfg.horizon * cfg.imagination_starts,
        &traj.targets,
    )?;
    opts.value.step(&mut agent.store, &value_grads);

    Ok(update_event(
        env_steps,
        grad_index,
        source,
        fallback,
        &breakdown,
        &crspp_stats,
        ensemble_nll,
        &actor_stats,
        value_loss,
    ))
}

/// Full training run. Writes `metrics.jsonl` and checkpoints under `out_dir`
/// and returns a summary of the run.
pub fn run_training(cfg: &TrainConfig, out_dir: &Path) -> Result<RunSummary, String> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|e| format!("create {out_dir:?}: {e}"))?;
    let mut metrics = MetricsWriter::create(&out_dir.join("metrics.jsonl"))
        .map_err(|e| format!("metrics file: {e}"))?;

    let mut agent = Agent::from_config(cfg)?;
    let mut buffer = DualBuffer::new(cfg.cap_normal, cfg.cap_positive);
    let mut env = make_env(&cfg.env, cfg.img_hw)?;

    // Seed demonstrations, pinned into the positive buffer.
    if cfg.seed_steps > 0 {
        let seed_eps = collect_seed_data(&agent, env.as_mut(), cfg.seed_steps, cfg.seed)?;
        for ep in seed_eps {
            let len = ep.len();
            let ret = ep.return_sum();
            metrics
                .write(&MetricEvent::Episode {
                    step: 0,
                    episode: 0,
                    ret,
                    length: len,
                    success: true,
                    expert_steps: len,
                })
                .map_err(|e| e.to_string())?;
            buffer.add_seed_episode(ep)?;
        }
    }

    if cfg.pipelined {
        eprintln!(
            "pipelined mode: environment and gradient threads overlap; bitwise determinism is off"
        );
        return run_pipelined(cfg, out_dir, agent, buffer, env, metrics);
    }

    let mut opts = Optimizers::new(
        &agent.store,
        &agent.wm,
        &agent.crspp,
        &agent.ensemble,
        &agent.ac,
        cfg,
    );
    let mut pema = PemaState::new(0.99);
    let mut streams = TrainStreams::new(cfg.seed);
    let mut summary = RunSummary::default();

    let obs_dim = 3 * cfg.img_hw * cfg.img_hw;
    let action_dim = env.action_dim();
    let zero_action = vec![0.0; action_dim];

    let mut env_steps: u64 = 0;
    let mut grad_steps: u64 = 0;
    let mut episodes: u64 = 0;

    'outer: while env_steps < cfg.total_steps {
        let obs = env.reset(streams.episode_seeds.next_u64());
        let init = agent.wm.initial_state(&agent.store, &mut streams.latents);
        let mut builder = EpisodeBuilder::new(obs_dim, action_dim, &agent.wm.cfg);
        builder.push_latent(&init);
        let (mut posterior, _) =
            agent
                .wm
                .observe_step(&agent.store, &init, &zero_action, &obs, &mut streams.latents);
        builder.push(&obs, &zero_action, 0.0, 1.0, false, false);
        builder.push_latent(&posterior);

        loop {
            let (action, _, _) =
                agent
                    .ac
                    .policy_forward(&agent.store, &posterior, &mut streams.policy, false);
            let step = env.step(&action)?;
            env_steps += 1;
            builder.push(
                &step.obs,
                &action,
                step.reward,
                if step.done { 0.0 } else { 1.0 },
                step.success,
                false,
            );
            let (next_post, _) = agent.wm.observe_step(
                &agent.store,
                &posterior,
                &action,
                &step.obs,
                &mut streams.latents,
            );
            posterior = next_post;
            builder.push_latent(&posterior);

            let episode_over = step.done || env_steps >= cfg.total_steps;
            if episode_over {
                episodes += 1;
                let ret = builder.rewards.iter().sum::<f64>();
                let len = builder.len();
                let finished = std::mem::replace(
                    &mut builder,
                    EpisodeBuilder::new(obs_dim, action_dim, &agent.wm.cfg),
                );
                let ep = finished.finish(&agent.revision)?;
                let success = ep.succeeded_once;
                buffer.add_episode(ep)?;
                summary.episode_returns.push(ret);
                summary.episode_successes.push(success);
                metrics
                    .write(&MetricEvent::Episode {
                        step: env_steps,
                        episode: episodes,
                        ret,
                        length: len,
                        success,
                        expert_steps: 0,
                    })
                    .map_err(|e| e.to_string())?;
            }

            if env_steps % cfg.update_every == 0 {
                for _ in 0..cfg.grad_steps_per_update {
                    let event = gradient_step(
                        &mut agent,
                        cfg,
                        &mut buffer,
                        &mut opts,
                        &mut pema,
                        &mut streams,
                        grad_steps,
                        env_steps,
                    )?;
                    grad_steps += 1;
                    metrics.write(&event).map_err(|e| e.to_string())?;
                    if cfg.latent_refresh_every > 0 && grad_steps % cfg.latent_refresh_every == 0 {
                        buffer.refresh_pinned(|ep| {
                            refilter_episode(&agent, ep, &mut streams.latents)
                        });
                    }
                }
            }

            if cfg.checkpoint_every > 0 && env_steps % cfg.checkpoint_every == 0 {
                let state = RunState {
                    env_steps,
                    grad_steps,
                    episodes,
                    pema_range: pema.range_ema,
                    pema_initialized: pema.initialized,
                };
                agent.save_checkpoint(&out_dir.join(format!("ckpt-{env_steps}")), cfg, &state)?;
            }

            if env_steps >= cfg.total_steps {
                break 'outer;
            }
            if step.done {
                break;
            }
        }
    }

    let state = RunState {
        env_steps,
        grad_steps,
        episodes,
        pema_range: pema.range_ema,
        pema_initialized: pema.initialized,
    };
    agent.save_checkpoint(&out_dir.join("ckpt-final"), cfg, &state)?;

    if cfg.eval_episodes > 0 {
        let (acr, sr, stability) = evaluate(&agent, cfg, cfg.eval_episodes, cfg.seed ^ EVAL_SEED_SALT);
        metrics
            .write(&MetricEvent::Eval {
                step: env_steps,
                episodes: cfg.eval_episodes,
                acr,
                sr,
                stability,
            })
            .map_err(|e| e.to_string())?;
        summary.final_eval = Some((acr, sr, stability));
    }

    summary.env_steps = env_steps;
    summary.grad_steps = grad_steps;
    summary.episodes = episodes;
    Ok(summary)
}

/// Mean-action rollouts from a trained agent: returns (average cumulative
/// reward, success rate, stability proxy). The stability proxy is the return
/// standard deviation over the window divided by the return range; it is not
/// the relative-stability statistic from the literature (whose definition
/// lives in external work).
pub fn evaluate(agent: &Agent, cfg: &TrainConfig, n_episodes: usize, seed: u64) -> (f64, f64, f64) {
    let mut env = make_env(&cfg.env, cfg.img_hw).expect("validated env name");
    let mut seeds = Rng::stream(seed, "eval-seeds");
    let mut latent_rng = Rng::stream(seed, "eval-latents");
    let zero_action = vec![0.0; env.action_dim()];
    let mut returns = Vec::with_capacity(n_episodes);
    let mut successes = 0usize;
    for _ in 0..n_episodes {
        let obs = env.reset(seeds.next_u64());
        let init = agent.wm.initial_state(&agent.store, &mut latent_rng);
        let (mut posterior, _) =
            agent
                .wm
                .observe_step(&agent.store, &init, &zero_action, &obs, &mut latent_rng);
        let mut ret = 0.0;
        let mut succeeded = false;
        loop {
            let (action, _, _) =
                agent
                    .ac
                    .policy_forward(&agent.store, &posterior, &mut latent_rng, true);
            let step = env.step(&action).expect("evaluation step failed");
            ret += step.reward;
            succeeded |= step.success;
            let (next, _) = agent.wm.observe_step(
                &agent.store,
                &posterior,
                &action,
                &step.obs,
                &mut latent_rng,
            );
            posterior = next;
            if step.done {
                break;
            }
        }
        returns.push(ret);
        if succeeded {
            successes += 1;
        }
    }
    let acr = returns.iter().sum::<f64>() / n_episodes as f64;
    let sr = successes as f64 / n_episodes as f64;
    let var = returns.iter().map(|r| (r - acr) * (r - acr)).sum::<f64>() / n_episodes as f64;
    let lo = returns.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = returns.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let stability = var.sqrt() / (hi - lo + 1e-8);
    (acr, sr, stability)
}

/// Pipelined loop: an environment thread interacts and stores episodes while
/// the gradient thread trains, pacing itself to the configured update ratio.
/// Parameter reads are shared; each optimizer update holds the write lock.
fn run_pipelined(
    cfg: &TrainConfig,
    out_dir: &Path,
    agent: Agent,
    buffer: DualBuffer,
    mut env: Box<dyn Env>,
    metrics: MetricsWriter,
) -> Result<RunSummary, String> {
    let Agent {
        store,
        wm,
        crspp,
        ensemble,
        ac,
        revision,
    } = agent;
    let store = RwLock::new(store);
    let buffer = Mutex::new(buffer);
    let metrics = Mutex::new(metrics);
    let env_steps = AtomicU64::new(0);
    let env_done = AtomicBool::new(false);
    let failure: Mutex<Option<String>> = Mutex::new(None);
    let summary = Mutex::new(RunSummary::default());

    let obs_dim = 3 * cfg.img_hw * cfg.img_hw;
    let action_dim = env.action_dim();

    std::thread::scope(|scope| {
        let env_thread = scope.spawn(|| {
            let mut streams = TrainStreams::new(cfg.seed);
            let zero_action = vec![0.0; action_dim];
            let mut episodes = 0u64;
            while env_steps.load(Ordering::SeqCst) < cfg.total_steps
                && failure.lock().unwrap().is_none()
            {
                let obs = env.reset(streams.episode_seeds.next_u64());
                let mut builder = EpisodeBuilder::new(obs_dim, action_dim, &wm.cfg);
                let (mut posterior, _) = {
                    let guard = store.read().expect("store lock");
                    let init = wm.initial_state(&guard, &mut streams.latents);
                    builder.push_latent(&init);
                    wm.observe_step(&guard, &init, &zero_action, &obs, &mut streams.latents)
                };
                builder.push(&obs, &zero_action, 0.0, 1.0, false, false);
                builder.push_latent(&posterior);
                loop {
                    let action = {
                        let guard = store.read().expect("store lock");
                        ac.policy_forward(&guard, &posterior, &mut streams.policy, false).0
                    };
                    let step = match env.step(&action) {
                        Ok(s) => s,
                        Err(e) => {
                            *failure.lock().unwrap() = Some(e);
                            break;
                        }
                    };
                    let n = env_steps.fetch_add(1, Ordering::SeqCst) + 1;
                    builder.push(
                        &step.obs,
                        &action,
                        step.reward,
                        if step.done { 0.0 } else { 1.0 },
                        step.success,
                        false,
                    );
                    {
                        let guard = store.read().expect("store lock");
                        let (next, _) = wm.observe_step(
                            &guard,
                            &posterior,
                            &action,
                            &step.obs,
                            &mut streams.latents,
                        );
                        posterior = next;
                    }
                    builder.push_latent(&posterior);
                    if step.done || n >= cfg.total_steps {
                        episodes += 1;
                        let ret = builder.rewards.iter().sum::<f64>();
                        let len = builder.len();
                        let finished = std::mem::replace(
                            &mut builder,
                            EpisodeBuilder::new(obs_dim, action_dim, &wm.cfg),
                        );
                        match finished.finish(&revision) {
                            Ok(ep) => {
                                let success = ep.succeeded_once;
                                buffer.lock().unwrap().add_episode(ep).ok();
                                let mut s = summary.lock().unwrap();
                                s.episode_returns.push(ret);
                                s.episode_successes.push(success);
                                s.episodes = episodes;
                                drop(s);
                                metrics
                                    .lock()
                                    .unwrap()
                                    .write(&MetricEvent::Episode {
                                        step: n,
                                        episode: episodes,
                                        ret,
                                        length: len,
                                        success,
                                        expert_steps: 0,
                                    })
                                    .ok();
                            }
                            Err(e) => {
                                *failure.lock().unwrap() = Some(e);
                            }
                        }
                        break;
                    }
                }
            }
            env_done.store(true, Ordering::SeqCst);
        });

        let grad_thread = scope.spawn(|| {
            let mut streams = TrainStreams::new(cfg.seed ^ 0x9E37_79B9_7F4A_7C15);
            let mut pema = PemaState::new(0.99);
            let mut opts = {
                let guard = store.read().expect("store lock");
                Optimizers::new(&guard, &wm, &crspp, &ensemble, &ac, cfg)
            };
            let mut grad_steps = 0u64;
            loop {
                let steps_now = env_steps.load(Ordering::SeqCst);
                let target = steps_now / cfg.update_every * cfg.grad_steps_per_update;
                if grad_steps >= target {
                    if env_done.load(Ordering::SeqCst) {
                        break;
                    }
                    std::thread::sleep(std::time::Duration::from_millis(2));
                    continue;
                }
                let step_result = (|| -> Result<MetricEvent, String> {
                    let (batch, source, fallback) = buffer.lock().unwrap().sample_batch(
                        grad_steps,
                        cfg.batch,
                        cfg.seq_len,
                        &mut streams.batches,
                    )?;
                    let (wm_grads, breakdown, rollout) = {
                        let guard = store.read().expect("store lock");
                        wm_forward(&guard, &wm, &batch, &mut streams.update_latents)?
                    };
                    opts.wm.step(&mut store.write().expect("store lock"), &wm_grads);

                    let (crspp_grads, crspp_stats, crspp_rollout) = {
                        let guard = store.read().expect("store lock");
                        let wm_side = if crspp.cfg.soft_similarity {
                            &rollout.flat_probs
                        } else {
                            &rollout.flat
                        };
                        crspp_forward(&guard, &crspp, &batch, wm_side, &mut streams.update_latents)?
                    };
                    opts.crspp.step(&mut store.write().expect("store lock"), &crspp_grads);

                    let (ens_in, ens_tgt, n_trans) = ensemble_transitions(&wm, &batch, &rollout);
                    let mut ensemble_nll = 0.0;
                    if n_trans > 0 {
                        let (grads, nll) = {
                            let guard = store.read().expect("store lock");
                            ensemble_forward(&guard, &ensemble, ens_in, &ens_tgt, n_trans)?
                        };
                        ensemble_nll = nll;
                        opts.ensemble.step(&mut store.write().expect("store lock"), &grads);
                    }

                    let im = imagination_inputs(
                        cfg,
                        &wm,
                        &batch,
                        &rollout,
                        &crspp_rollout,
                        &mut streams.imagination,
                    )?;
                    let (actor_grads, traj, actor_stats, value_loss, value_grads) = {
                        let guard = store.read().expect("store lock");
                        let preferred = crspp.rollout_preferred(
                            &guard,
                            &im.crspp_h,
                            &im.crspp_flat,
                            cfg.imagination_starts,
                            cfg.horizon,
                            &mut streams.imagination,
                        );
                        let refresh_opt = if im.refresh.n > 0 { Some(&im.refresh) } else { None };
                        let (actor_grads, traj, actor_stats) = ac.actor_step(
                            &guard,
                            &wm,
                            &ensemble,
                            &im.starts_h,
                            &im.starts_flat,
                            cfg.imagination_starts,
                            &preferred,
                            refresh_opt,
                            &mut pema,
                            LatentMode::Sample,
                            &mut streams.imagination,
                        )?;
                        let feats = value_features(&wm, &traj, cfg.imagination_starts, cfg.horizon);
                        let (value_loss, value_grads) = ac.value_step(
                            &guard,
                            &feats,
                            cfg.horizon * cfg.imagination_starts,
                            &traj.targets,
                        )?;
                        (actor_grads, traj, actor_stats, value_loss, value_grads)
                    };
                    let _ = traj;
                    opts.actor.step(&mut store.write().expect("store lock"), &actor_grads);
                    opts.value.step(&mut store.write().expect("store lock"), &value_grads);

                    Ok(update_event(
                        steps_now,
                        grad_steps,
                        source,
                        fallback,
                        &breakdown,
                        &crspp_stats,
                        ensemble_nll,
                        &actor_stats,
                        value_loss,
                    ))
                })();
                match step_result {
                    Ok(event) => {
                        grad_steps += 1;
                        metrics.lock().unwrap().write(&event).ok();
                    }
                    Err(e) => {
                        if e.contains("empty") && !env_done.load(Ordering::SeqCst) {
                            std::thread::sleep(std::time::Duration::from_millis(5));
                        } else {
                            *failure.lock().unwrap() = Some(e);
                            break;
                        }
                    }
                }
            }
            summary.lock().unwrap().grad_steps = grad_steps;
        });

        env_thread.join().expect("environment thread panicked");
        grad_thread.join().expect("gradient thread panicked");
    });

    if let Some(err) = failure.into_inner().unwrap() {
        return Err(err);
    }
    let mut summary = summary.into_inner().unwrap();
    summary.env_steps = env_steps.into_inner();
    let agent = Agent {
        store: store.into_inner().unwrap(),
        wm,
        crspp,
        ensemble,
        ac,
        revision,
    };
    let state = RunState {
        env_steps: summary.env_steps,
        grad_steps: summary.grad_steps,
        episodes: summary.episodes,
        pema_range: 0.0,
        pema_initialized: false,
    };
    agent.save_checkpoint(&out_dir.join("ckpt-final"), cfg, &state)?;
    if cfg.eval_episodes > 0 {
        let (acr, sr, stability) = evaluate(&agent, cfg, cfg.eval_episodes, cfg.seed ^ EVAL_SEED_SALT);
        summary.final_eval = Some((acr, sr, stability));
        metrics
            .into_inner()
            .unwrap()
            .write(&MetricEvent::Eval {
                step: summary.env_steps,
                episodes: cfg.eval_episodes,
                acr,
                sr,
                stability,
            })
            .ok();
    }
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fast_cfg() -> TrainConfig {
        TrainConfig {
            env: "reacher".into(),
            img_hw: 16,
            total_steps: 120,
            seed_steps: 60,
            update_every: 16,
            grad_steps_per_update: 2,
            batch: 3,
            seq_len: 5,
            horizon: 4,
            imagination_starts: 6,
            latent_k: 4,
            latent_c: 4,
            h_det: 16,
            embed: 16,
            channels: 2,
            hidden: 16,
            crspp_embed: 8,
            crspp_channels: 2,
            crspp_hidden: 8,
            actor_hidden: 16,
            ensemble_members: 2,
            ensemble_hidden: 8,
            checkpoint_every: 0,
            eval_episodes: 2,
            ..TrainConfig::default()
        }
    }

    fn tmp_dir(name: &str) -> std::path::PathBuf {
        let mut p = std::env::temp_dir();
        p.push(format!("raif-trainer-{name}-{}", std::process::id()));
        std::fs::remove_dir_all(&p).ok();
        p
    }

    #[test]
    fn seed_collection_is_all_expert_and_successful() {
        let agent = Agent::from_config(&fast_cfg()).unwrap();
        let mut env = make_env("reacher", 16).unwrap();
        let eps = collect_seed_data(&agent, env.as_mut(), 100, 7).unwrap();
        assert!(!eps.is_empty());
        for ep in &eps {
            assert!(ep.succeeded_once);
            assert!(ep.expert.iter().all(|&p| p));
            let rho = ep.rho.as_ref().unwrap();
            assert!(rho.iter().all(|&r| r >= 0.0), "seed rho must be nonnegative");
        }
    }

    #[test]
    fn mountain_car_seed_budget_yields_expected_episode_count() {
        let cfg = TrainConfig {
            env: "mountain_car".into(),
            ..fast_cfg()
        };
        let agent = Agent::from_config(&cfg).unwrap();
        let mut env = make_env("mountain_car", 16).unwrap();
        let eps = collect_seed_data(&agent, env.as_mut(), 1000, 3).unwrap();
        let count = eps.len();
        assert!(
            (5..=22).contains(&count),
            "expected a handful of seed episodes for a 1000-step budget, got {count}"
        );
        assert!(eps.iter().all(|e| e.succeeded_once));
    }

    #[test]
    fn dry_run_schedules_expected_gradient_steps() {
        let cfg = TrainConfig {
            total_steps: 100,
            ..fast_cfg()
        };
        let dir = tmp_dir("schedule");
        let summary = run_training(&cfg, &dir).unwrap();
        // floor(100 / 16) * 2 = 12
        assert_eq!(summary.grad_steps, 12);
        assert_eq!(summary.env_steps, 100);
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn deterministic_runs_produce_identical_metrics() {
        let cfg = fast_cfg();
        let d1 = tmp_dir("det1");
        let d2 = tmp_dir("det2");
        run_training(&cfg, &d1).unwrap();
        run_training(&cfg, &d2).unwrap();
        let a = std::fs::read(d1.join("metrics.jsonl")).unwrap();
        let b = std::fs::read(d2.join("metrics.jsonl")).unwrap();
        assert_eq!(a, b, "deterministic mode must reproduce metrics byte for byte");
        std::fs::remove_dir_all(&d1).ok();
        std::fs::remove_dir_all(&d2).ok();
    }

    #[test]
    fn checkpoint_reload_reproduces_evaluation() {
        let cfg = fast_cfg();
        let dir = tmp_dir("reload");
        run_training(&cfg, &dir).unwrap();
        let (agent, cfg2, state) = Agent::load_checkpoint(&dir.join("ckpt-final")).unwrap();
        assert_eq!(state.env_steps, cfg.total_steps);
        let e1 = evaluate(&agent, &cfg2, 3, 99);
        let (agent2, _, _) = Agent::load_checkpoint(&dir.join("ckpt-final")).unwrap();
        let e2 = evaluate(&agent2, &cfg2, 3, 99);
        assert_eq!(e1, e2);
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn ablation_flags_reach_the_actor() {
        let cfg = TrainConfig {
            disable_crspp_sim: true,
            disable_ig: true,
            disable_refresh: true,
            ..fast_cfg()
        };
        let dir = tmp_dir("ablate");
        let summary = run_training(&cfg, &dir).unwrap();
        assert!(summary.grad_steps > 0);
        let (events, _) = crate::metrics::read_metrics(&dir.join("metrics.jsonl")).unwrap();
        for ev in events {
            if let MetricEvent::Update { ig_mean, sim_mean, refresh, .. } = ev {
                assert_eq!(ig_mean, 0.0);
                assert_eq!(sim_mean, 0.0);
                assert_eq!(refresh, 0.0);
            }
        }
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn buffer_parity_is_audited_in_metrics() {
        let cfg = fast_cfg();
        let dir = tmp_dir("parity");
        run_training(&cfg, &dir).unwrap();
        let (events, _) = crate::metrics::read_metrics(&dir.join("metrics.jsonl")).unwrap();
        let mut saw_update = false;
        for ev in events {
            if let MetricEvent::Update { grad_step, source, fallback, .. } = ev {
                saw_update = true;
                if grad_step % 2 == 0 {
                    assert_eq!(source, "normal");
                } else {
                    assert!(source == "positive" || fallback, "odd step must draw positive or log fallback");
                }
            }
        }
        assert!(saw_update);
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn pipelined_mode_completes_and_checkpoints() {
        let cfg = TrainConfig {
            pipelined: true,
            deterministic: false,
            total_steps: 80,
            ..fast_cfg()
        };
        let dir = tmp_dir("pipelined");
        let summary = run_training(&cfg, &dir).unwrap();
        assert!(summary.env_steps >= 80);
        assert!(dir.join("ckpt-final").join("manifest.txt").exists());
        std::fs::remove_dir_all(&dir).ok();
    }
}
