//! Policy and value learning in imagination.
//!
//! The policy rolls latent trajectories through the world model's prior;
//! every imagined transition carries an augmented reward: predicted
//! environment reward, plus similarity to the preferred state from the
//! preference model, minus information gain. Lambda-returns over these
//! rewards form value targets; the actor maximizes the PEMA-normalized
//! advantage plus transition-prior and policy entropy bonuses, and an
//! optional refresh term that pulls the policy toward replayed
//! positive-preference actions.
//!
//! Gradient discipline: the actor tape freezes world-model, ensemble, and
//! value parameters (values still flow pathwise through imagined states);
//! the value tape sees only constant features and stopped targets.

use crate::autodiff::{Grads, Id, ParamId, ParamStore, Tape};
use crate::ensemble::IgEnsemble;
use crate::nn::{rowwise_cosine, Mlp};
use crate::num::{PemaState, SquashedGaussian, ATANH_CLAMP};
use crate::rng::Rng;
use crate::world_model::{LatentState, WorldModel};

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;
const SCALE_MIN: f64 = 1e-3;
const SCALE_MAX: f64 = 2.0;
/// Pre-squash regression cap for replayed actions (tanh(2) ~ 0.964).
const REFRESH_ATANH_CAP: f64 = 2.0;

#[derive(Debug, Clone)]
pub struct AcConfig {
    pub action_dim: usize,
    pub feat_dim: usize,
    pub hidden: usize,
    pub horizon: usize,
    pub gamma: f64,
    pub lambda: f64,
    /// Transition-prior entropy coefficient.
    pub zeta: f64,
    /// Policy entropy coefficient.
    pub eta: f64,
    pub refresh_scale: f64,
    pub disable_sim: bool,
    pub disable_ig: bool,
    pub disable_refresh: bool,
    pub disable_wm_entropy: bool,
    /// Pathwise (reparameterized) actor gradient; the alternative is a
    /// score-function estimator on the same normalized advantage.
    pub pathwise: bool,
}

impl AcConfig {
    pub fn desk(h_det: usize, flat_dim: usize, action_dim: usize) -> Self {
        Self {
            action_dim,
            feat_dim: h_det + flat_dim,
            hidden: 128,
            horizon: 15,
            gamma: 0.99,
            lambda: 0.95,
            zeta: 3e-4,
            eta: 3e-4,
            refresh_scale: 1.0,
            disable_sim: false,
            disable_ig: false,
            disable_refresh: false,
            disable_wm_entropy: false,
            pathwise: true,
        }
    }
}

/// Lambda-return targets over one imagined trajectory.
///
/// `rewards`, `sims`, `igs`, `continues` have length `H` (one entry per
/// transition); `values` has length `H + 1` (bootstrap tail). The recursion is
/// `G_tau = r'_tau + gamma * c_tau * ((1 - lambda) * v_{tau+1} + lambda * G_{tau+1})`
/// with `G_H = v_H` and `r' = r + sim - ig`.
pub fn lambda_return_targets(
    rewards: &[f64],
    sims: &[f64],
    igs: &[f64],
    continues: &[f64],
    values: &[f64],
    gamma: f64,
    lambda: f64,
) -> Result<Vec<f64>, String> {
    let h = rewards.len();
    if sims.len() != h || igs.len() != h || continues.len() != h {
        return Err("lambda_return_targets: transition array length mismatch".into());
    }
    if values.len() != h + 1 {
        return Err(format!(
            "lambda_return_targets: values must have length H+1 = {} (got {})",
            h + 1,
            values.len()
        ));
    }
    let all = rewards
        .iter()
        .chain(sims)
        .chain(igs)
        .chain(continues)
        .chain(values);
    for &v in all {
        if !v.is_finite() {
            return Err("lambda_return_targets: non-finite input".into());
        }
    }
    let mut g = vec![0.0; h + 1];
    g[h] = values[h];
    for tau in (0..h).rev() {
        let r = rewards[tau] + sims[tau] - igs[tau];
        g[tau] = r + gamma * continues[tau] * ((1.0 - lambda) * values[tau + 1] + lambda * g[tau + 1]);
    }
    g.truncate(h);
    Ok(g)
}

/// Batched imagination record, row-major over `n` parallel rollouts.
#[derive(Debug, Clone)]
pub struct ImaginedTrajectory {
    pub n: usize,
    pub horizon: usize,
    pub states_h: Vec<f64>,
    pub states_flat: Vec<f64>,
    pub actions: Vec<f64>,
    pub rewards: Vec<f64>,
    pub continues: Vec<f64>,
    pub preferred: Vec<f64>,
    pub ig: Vec<f64>,
    pub sims: Vec<f64>,
    pub values: Vec<f64>,
    pub targets: Vec<f64>,
}

impl ImaginedTrajectory {
    pub fn check(&self, h_det: usize, flat_dim: usize, action_dim: usize) -> Result<(), String> {
        let (n, h) = (self.n, self.horizon);
        let checks = [
            ("states_h", self.states_h.len(), (h + 1) * n * h_det),
            ("states_flat", self.states_flat.len(), (h + 1) * n * flat_dim),
            ("actions", self.actions.len(), h * n * action_dim),
            ("rewards", self.rewards.len(), h * n),
            ("continues", self.continues.len(), h * n),
            ("preferred", self.preferred.len(), h * n * flat_dim),
            ("ig", self.ig.len(), h * n),
            ("sims", self.sims.len(), h * n),
            ("values", self.values.len(), (h + 1) * n),
            ("targets", self.targets.len(), h * n),
        ];
        for (name, got, want) in checks {
            if got != want {
                return Err(format!("imagined trajectory: {name} has {got} elements, want {want}"));
            }
        }
        if self.targets.iter().any(|v| !v.is_finite()) {
            return Err("imagined trajectory: non-finite target".into());
        }
        Ok(())
    }
}

/// Replayed positive-preference steps for the actor refresh term.
#[derive(Debug, Clone, Default)]
pub struct RefreshBatch {
    pub n: usize,
    pub h: Vec<f64>,
    pub flat: Vec<f64>,
    pub actions: Vec<f64>,
    pub rho: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ActorStats {
    pub objective: f64,
    pub mean_ig: f64,
    pub mean_sim: f64,
    pub mean_policy_entropy: f64,
    pub pema_range: f64,
    pub refresh_term: f64,
}

pub struct ActorCritic {
    pub cfg: AcConfig,
    pub policy: Mlp,
    pub value: Mlp,
    policy_params: Vec<ParamId>,
    value_params: Vec<ParamId>,
}

impl ActorCritic {
    pub fn new(store: &mut ParamStore, cfg: AcConfig, rng: &mut Rng) -> Self {
        let policy = Mlp::with_head_scale(
            store,
            "actor",
            &[cfg.feat_dim, cfg.hidden, cfg.hidden, 2 * cfg.action_dim],
            0.1,
            rng,
        );
        let value = Mlp::with_head_scale(
            store,
            "critic",
            &[cfg.feat_dim, cfg.hidden, cfg.hidden, 1],
            0.1,
            rng,
        );
        let policy_params = policy.params();
        let value_params = value.params();
        Self {
            cfg,
            policy,
            value,
            policy_params,
            value_params,
        }
    }

    pub fn policy_params(&self) -> &[ParamId] {
        &self.policy_params
    }

    pub fn value_params(&self) -> &[ParamId] {
        &self.value_params
    }

    /// Mean and bounded scale heads for a `[n, feat]` input.
    pub fn policy_dist_on_tape(&self, t: &mut Tape, feat: Id) -> (Id, Id) {
        let out = self.policy.forward(t, feat);
        let a = self.cfg.action_dim;
        let mu = t.slice_cols(out, 0, a);
        let raw = t.slice_cols(out, a, a);
        let sig = t.sigmoid(raw);
        let scaled = t.mul_scalar(sig, SCALE_MAX - SCALE_MIN);
        let scale = t.add_scalar(scaled, SCALE_MIN);
        (mu, scale)
    }

    /// Runtime policy head for environment stepping and evaluation.
    pub fn policy_forward(
        &self,
        store: &ParamStore,
        state: &LatentState,
        rng: &mut Rng,
        deterministic: bool,
    ) -> (Vec<f64>, f64, f64) {
        let mut t = Tape::new(store);
        let mut feat = Vec::with_capacity(self.cfg.feat_dim);
        feat.extend_from_slice(&state.h);
        feat.extend_from_slice(state.flat());
        let f = t.constant(&[1, self.cfg.feat_dim], feat);
        let (mu, scale) = self.policy_dist_on_tape(&mut t, f);
        let dist = SquashedGaussian::new(t.value(mu).to_vec(), t.value(scale).to_vec())
            .expect("policy scale head is bounded positive");
        let action = if deterministic {
            dist.mode()
        } else {
            let mut noise = vec![0.0; self.cfg.action_dim];
            rng.fill_normal(&mut noise);
            dist.rsample(&noise)
        };
        let log_prob = dist.log_prob(&action);
        let entropy = dist.base_entropy();
        (action, log_prob, entropy)
    }

    /// Value estimate for constant features `[n, feat]`.
    fn value_rows(&self, t: &mut Tape, feat: Id) -> Id {
        let n = t.shape(feat)[0];
        let v = self.value.forward(t, feat);
        t.reshape(v, &[n])
    }

    /// Builds the imagination rollout and the actor objective on one tape,
    /// updates the PEMA state from the fresh targets, and returns gradients
    /// for the policy parameters together with the full trajectory record.
    #[allow(clippy::too_many_arguments)]
    pub fn actor_step(
        &self,
        store: &ParamStore,
        wm: &WorldModel,
        ensemble: &IgEnsemble,
        starts_h: &[f64],
        starts_flat: &[f64],
        n: usize,
        preferred: &[Vec<f64>],
        refresh: Option<&RefreshBatch>,
        pema: &mut PemaState,
        mode: crate::world_model::LatentMode,
        rng: &mut Rng,
    ) -> Result<(Grads, ImaginedTrajectory, ActorStats), String> {
        let cfg = &self.cfg;
        let h_det = wm.cfg.h_det;
        let flat_dim = wm.cfg.flat_dim();
        assert_eq!(preferred.len(), cfg.horizon, "need one preferred code set per step");

        let mut t = Tape::new(store);
        t.freeze(wm.params());
        t.freeze(ensemble.params());
        t.freeze(&self.value_params);

        let mut h = t.constant(&[n, h_det], starts_h.to_vec());
        let mut flat = t.constant(&[n, flat_dim], starts_flat.to_vec());

        let mut traj = ImaginedTrajectory {
            n,
            horizon: cfg.horizon,
            states_h: Vec::with_capacity((cfg.horizon + 1) * n * h_det),
            states_flat: Vec::with_capacity((cfg.horizon + 1) * n * flat_dim),
            actions: Vec::with_capacity(cfg.horizon * n * cfg.action_dim),
            rewards: Vec::with_capacity(cfg.horizon * n),
            continues: Vec::with_capacity(cfg.horizon * n),
            preferred: Vec::with_capacity(cfg.horizon * n * flat_dim),
            ig: Vec::with_capacity(cfg.horizon * n),
            sims: Vec::with_capacity(cfg.horizon * n),
            values: Vec::with_capacity((cfg.horizon + 1) * n),
            targets: Vec::with_capacity(cfg.horizon * n),
        };
        traj.states_h.extend_from_slice(starts_h);
        traj.states_flat.extend_from_slice(starts_flat);

        let mut values: Vec<Id> = Vec::with_capacity(cfg.horizon + 1);
        let mut rewards: Vec<Id> = Vec::with_capacity(cfg.horizon);
        let mut sims: Vec<Id> = Vec::with_capacity(cfg.horizon);
        let mut igs: Vec<Id> = Vec::with_capacity(cfg.horizon);
        let mut continues: Vec<Id> = Vec::with_capacity(cfg.horizon);
        let mut policy_ents: Vec<Id> = Vec::with_capacity(cfg.horizon);
        let mut prior_ents: Vec<Id> = Vec::with_capacity(cfg.horizon);
        let mut log_probs: Vec<Id> = Vec::with_capacity(cfg.horizon);

        for step in 0..cfg.horizon {
            let feat = t.concat_cols(&[h, flat]);
            values.push(self.value_rows(&mut t, feat));

            let (mu, scale) = self.policy_dist_on_tape(&mut t, feat);
            let mut eps = vec![0.0; n * cfg.action_dim];
            rng.fill_normal(&mut eps);
            let eps_id = t.constant(&[n, cfg.action_dim], eps);
            let noise_scaled = t.mul(scale, eps_id);
            let pre = t.add(mu, noise_scaled);
            let squashed = t.tanh(pre);
            let action = t.clamp(squashed, -ATANH_CLAMP, ATANH_CLAMP);

            // Policy entropy of the pre-squash Gaussian.
            let ln_scale = t.ln(scale);
            let ent_row = t.row_sum(ln_scale);
            let pol_ent = t.add_scalar(ent_row, cfg.action_dim as f64 * (HALF_LN_2PI + 0.5));
            policy_ents.push(pol_ent);

            // Score-function log-density of the sampled action (used only by
            // the likelihood-ratio estimator).
            if !cfg.pathwise {
                let pre_const = t.stop_grad(pre);
                let diff = t.sub(pre_const, mu);
                let z = t.div(diff, scale);
                let z2 = t.mul(z, z);
                let half_z2 = t.mul_scalar(z2, 0.5);
                let lp_elems = t.add(half_z2, ln_scale);
                let lp_row = t.row_sum(lp_elems);
                let neg = t.mul_scalar(lp_row, -1.0);
                let gauss_lp = t.add_scalar(neg, -(cfg.action_dim as f64) * HALF_LN_2PI);
                // tanh correction: - sum ln(1 - a^2), constant w.r.t. psi here
                let a_const = t.stop_grad(action);
                let a2 = t.mul(a_const, a_const);
                let neg_a2 = t.mul_scalar(a2, -1.0);
                let one_m = t.add_scalar(neg_a2, 1.0);
                let ln_om = t.ln(one_m);
                let corr = t.row_sum(ln_om);
                let lp = t.sub(gauss_lp, corr);
                log_probs.push(lp);
            }

            // World-model transition under the frozen dynamics.
            let h_next = wm.recur(&mut t, h, flat, action);
            let prior_lp = wm.prior_log_probs(&mut t, h_next);
            let probs = t.exp(prior_lp);
            let ent_elems = t.mul(probs, prior_lp);
            let ent_rows_kc = t.reshape(ent_elems, &[n, flat_dim]);
            let ent_sum = t.row_sum(ent_rows_kc);
            let prior_ent = t.mul_scalar(ent_sum, -1.0);
            prior_ents.push(prior_ent);

            let mut code_noise = vec![0.0; n * wm.cfg.k];
            rng.fill_uniform(&mut code_noise);
            let flat_next = wm.code_from_log_probs(&mut t, prior_lp, &code_noise, mode);

            let feat_next = t.concat_cols(&[h_next, flat_next]);
            let r_symlog = wm.reward_head.forward(&mut t, feat_next);
            let r_rows = t.reshape(r_symlog, &[n]);
            let reward = t.symexp(r_rows);
            rewards.push(reward);

            let c_logit = wm.cont_head.forward(&mut t, feat_next);
            let c_rows = t.reshape(c_logit, &[n]);
            let cont = t.sigmoid(c_rows);
            continues.push(cont);

            let sim = if cfg.disable_sim {
                t.constant(&[n], vec![0.0; n])
            } else {
                let pref = t.constant(&[n, flat_dim], preferred[step].clone());
                rowwise_cosine(&mut t, flat_next, pref)
            };
            sims.push(sim);

            let ig = if cfg.disable_ig {
                t.constant(&[n], vec![0.0; n])
            } else {
                let x = t.concat_cols(&[h_next, flat_next, action]);
                let mut ig_noise = vec![0.0; ensemble.cfg.n_members * n * flat_dim];
                rng.fill_normal(&mut ig_noise);
                ensemble.information_gain_on_tape(&mut t, x, &ig_noise)
            };
            igs.push(ig);

            traj.actions.extend_from_slice(t.value(action));
            traj.states_h.extend_from_slice(t.value(h_next));
            traj.states_flat.extend_from_slice(t.value(flat_next));
            traj.rewards.extend_from_slice(t.value(reward));
            traj.continues.extend_from_slice(t.value(cont));
            traj.preferred.extend_from_slice(&preferred[step]);
            traj.sims.extend_from_slice(t.value(sim));
            traj.ig.extend_from_slice(t.value(ig));

            h = h_next;
            flat = flat_next;
        }
        let feat_last = t.concat_cols(&[h, flat]);
        values.push(self.value_rows(&mut t, feat_last));
        for &v in &values {
            traj.values.extend_from_slice(t.value(v));
        }

        // Lambda-return recursion on tape.
        let mut targets: Vec<Id> = vec![values[cfg.horizon]; cfg.horizon + 1];
        for tau in (0..cfg.horizon).rev() {
            let sim_m_ig = t.sub(sims[tau], igs[tau]);
            let r_aug = t.add(rewards[tau], sim_m_ig);
            let v_next = t.mul_scalar(values[tau + 1], 1.0 - cfg.lambda);
            let g_next = t.mul_scalar(targets[tau + 1], cfg.lambda);
            let boot = t.add(v_next, g_next);
            let disc = t.mul(continues[tau], boot);
            let disc = t.mul_scalar(disc, cfg.gamma);
            targets[tau] = t.add(r_aug, disc);
        }
        targets.truncate(cfg.horizon);
        for &g in &targets {
            traj.targets.extend_from_slice(t.value(g));
        }
        traj.check(h_det, flat_dim, cfg.action_dim)?;

        // PEMA normalization: update the range EMA from the fresh targets,
        // then apply the divisor as a constant.
        let divisor = pema.update(&traj.targets);

        let mut obj_terms: Vec<Id> = Vec::with_capacity(cfg.horizon);
        for tau in 0..cfg.horizon {
            let adv = t.sub(targets[tau], values[tau]);
            let adv = t.mul_scalar(adv, 1.0 / divisor);
            let mut term = if cfg.pathwise {
                adv
            } else {
                let adv_const = t.stop_grad(adv);
                t.mul(adv_const, log_probs[tau])
            };
            if !cfg.disable_wm_entropy {
                let zeta_term = t.mul_scalar(prior_ents[tau], cfg.zeta);
                term = t.add(term, zeta_term);
            }
            let eta_term = t.mul_scalar(policy_ents[tau], cfg.eta);
            term = t.add(term, eta_term);
            obj_terms.push(term);
        }
        let stacked = t.concat_rows(&obj_terms);
        let flat_terms = t.reshape(stacked, &[cfg.horizon * n]);
        let mut objective = t.mean_all(flat_terms);

        let mut refresh_value = 0.0;
        if !cfg.disable_refresh {
            if let Some(batch) = refresh {
                if batch.n > 0 {
                    let refresh_term = self.refresh_on_tape(&mut t, batch);
                    let scaled = t.mul_scalar(refresh_term, cfg.refresh_scale);
                    refresh_value = t.scalar_value(scaled);
                    objective = t.add(objective, scaled);
                }
            }
        }

        let obj_value = t.scalar_value(objective);
        if !obj_value.is_finite() {
            return Err(format!(
                "actor objective is non-finite ({obj_value}); ig mean {}, sim mean {}",
                mean(&traj.ig),
                mean(&traj.sims)
            ));
        }

        // Maximize the objective: descend on its negation.
        let loss = t.neg(objective);
        let grads = t.backward(loss);
        for pid in wm.params().iter().chain(self.value_params.iter()) {
            debug_assert!(grads.get(*pid).is_none(), "frozen parameter received gradient");
        }

        let stats = ActorStats {
            objective: obj_value,
            mean_ig: mean(&traj.ig),
            mean_sim: mean(&traj.sims),
            mean_policy_entropy: {
                let mut acc = 0.0;
                for &e in &policy_ents {
                    acc += mean(t.value(e));
                }
                acc / cfg.horizon as f64
            },
            pema_range: pema.range_ema,
            refresh_term: refresh_value,
        };
        Ok((grads, traj, stats))
    }

    /// `sum(rho * ln pi(a|s)) / sum(rho)` over replayed positive steps.
    fn refresh_on_tape(&self, t: &mut Tape, batch: &RefreshBatch) -> Id {
        let n = batch.n;
        let a = self.cfg.action_dim;
        let mut feat = Vec::with_capacity(n * self.cfg.feat_dim);
        let h_det = self.cfg.feat_dim - (batch.flat.len() / n);
        for i in 0..n {
            feat.extend_from_slice(&batch.h[i * h_det..(i + 1) * h_det]);
            let fd = batch.flat.len() / n;
            feat.extend_from_slice(&batch.flat[i * fd..(i + 1) * fd]);
        }
        let feat = t.constant(&[n, self.cfg.feat_dim], feat);
        let (mu, scale) = self.policy_dist_on_tape(t, feat);

        let mut u = Vec::with_capacity(n * a);
        let mut tanh_corr = vec![0.0; n];
        for i in 0..n {
            for j in 0..a {
                let act = batch.actions[i * a + j].clamp(-ATANH_CLAMP, ATANH_CLAMP);
                // saturated actions would otherwise regress the pre-squash
                // mean toward atanh(1-1e-6) ~ 7.25; cap the pull
                u.push(act.atanh().clamp(-REFRESH_ATANH_CAP, REFRESH_ATANH_CAP));
                tanh_corr[i] -= (1.0 - act * act).ln();
            }
        }
        let u = t.constant(&[n, a], u);
        let diff = t.sub(u, mu);
        let z = t.div(diff, scale);
        let z2 = t.mul(z, z);
        let half_z2 = t.mul_scalar(z2, 0.5);
        let ln_scale = t.ln(scale);
        let elems = t.add(half_z2, ln_scale);
        let row = t.row_sum(elems);
        let neg = t.mul_scalar(row, -1.0);
        let gauss = t.add_scalar(neg, -(a as f64) * HALF_LN_2PI);
        let corr = t.constant(&[n], tanh_corr);
        let lp = t.add(gauss, corr);

        let rho_sum: f64 = batch.rho.iter().sum::<f64>().max(1e-12);
        let w = t.constant(&[n], batch.rho.clone());
        let weighted = t.mul(lp, w);
        let s = t.sum_all(weighted);
        t.mul_scalar(s, 1.0 / rho_sum)
    }

    /// MSE value regression on constant features against stopped targets.
    /// Returns the loss scalar and gradients for the value parameters.
    pub fn value_step(
        &self,
        store: &ParamStore,
        feats: &[f64],
        n: usize,
        targets: &[f64],
    ) -> Result<(f64, Grads), String> {
        assert_eq!(targets.len(), n, "value targets length mismatch");
        let mut t = Tape::new(store);
        let feat = t.constant(&[n, self.cfg.feat_dim], feats.to_vec());
        let v = self.value_rows(&mut t, feat);
        let target = t.constant(&[n], targets.to_vec());
        let diff = t.sub(v, target);
        let sq = t.mul(diff, diff);
        let loss = t.mean_all(sq);
        let value = t.scalar_value(loss);
        if !value.is_finite() {
            return Err(format!("value loss is non-finite ({value})"));
        }
        let grads = t.backward(loss);
        Ok((value, grads))
    }

    /// Value predictions for constant features (used when assembling targets
    /// outside the actor tape, e.g. in tests).
    pub fn predict_values(&self, store: &ParamStore, feats: &[f64], n: usize) -> Vec<f64> {
        let mut t = Tape::new(store);
        let feat = t.constant(&[n, self.cfg.feat_dim], feats.to_vec());
        let v = self.value_rows(&mut t, feat);
        t.value(v).to_vec()
    }
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}
