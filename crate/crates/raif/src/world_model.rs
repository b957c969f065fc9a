//! The generative world model: a recurrent state space model with GRU memory,
//! a discrete-categorical stochastic code, convolutional image codec, and
//! reward/continue heads, trained by free-energy minimization with KL
//! balancing and a free-bits floor.

use crate::autodiff::{Id, ParamId, ParamStore, Tape};
use crate::nn::{ConvDecoder, ConvEncoder, GruCell, Mlp};
use crate::num::{symexp, symlog, CategoricalCode};
use crate::rng::Rng;

#[derive(Debug, Clone)]
pub struct WmConfig {
    pub img_hw: usize,
    pub k: usize,
    pub c: usize,
    pub h_det: usize,
    pub embed: usize,
    pub channels: usize,
    pub hidden: usize,
    pub action_dim: usize,
    pub free_bits: f64,
    pub eta_rep: f64,
    pub eta_dyn: f64,
}

impl WmConfig {
    /// Desk-scale preset; the full-scale default latent geometry is
    /// K = 32, C = 32, H_det = 256.
    pub fn desk(img_hw: usize, action_dim: usize) -> Self {
        Self {
            img_hw,
            k: 8,
            c: 8,
            h_det: 64,
            embed: 64,
            channels: 4,
            hidden: 128,
            action_dim,
            free_bits: 1.0,
            eta_rep: 0.1,
            eta_dyn: 0.5,
        }
    }

    /// Tiny configuration for finite-difference checks (8x8 images).
    pub fn tiny(action_dim: usize) -> Self {
        Self {
            img_hw: 8,
            k: 4,
            c: 4,
            h_det: 16,
            embed: 8,
            channels: 2,
            hidden: 8,
            action_dim,
            free_bits: 0.0,
            eta_rep: 0.1,
            eta_dyn: 0.5,
        }
    }

    pub fn flat_dim(&self) -> usize {
        self.k * self.c
    }

    pub fn obs_dim(&self) -> usize {
        3 * self.img_hw * self.img_hw
    }
}

/// Whether stochastic codes enter downstream computation as one-hot
/// straight-through samples or as the probability vectors themselves. Soft
/// mode makes every loss an ordinary differentiable function, which is what
/// finite-difference checks require.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LatentMode {
    Sample,
    Soft,
}

/// The agent's belief state: deterministic memory plus the categorical code.
#[derive(Debug, Clone)]
pub struct LatentState {
    pub h: Vec<f64>,
    pub code: CategoricalCode,
}

impl LatentState {
    /// Row-major flattening of the code sample, the `K*C` feature vector
    /// consumed by every head.
    pub fn flat(&self) -> &[f64] {
        &self.code.sample
    }
}

/// Posterior latents for a full replay batch, kept as plain values for
/// downstream consumers (imagination starts, CRSPP targets, ensemble
/// targets). Row `t * batch + b` holds sequence position `t` of batch
/// element `b`.
#[derive(Debug, Clone)]
pub struct PosteriorRollout {
    pub batch: usize,
    pub steps: usize,
    pub h: Vec<f64>,
    pub flat: Vec<f64>,
    /// Posterior probabilities flattened per row, for soft-similarity
    /// consumers.
    pub flat_probs: Vec<f64>,
    pub mask: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct WmLossBreakdown {
    pub complexity: f64,
    pub accuracy_image: f64,
    pub accuracy_reward: f64,
    pub accuracy_continue: f64,
    pub total: f64,
}

impl WmLossBreakdown {
    pub fn check_finite(&self) -> Result<(), String> {
        for (name, v) in [
            ("complexity", self.complexity),
            ("accuracy_image", self.accuracy_image),
            ("accuracy_reward", self.accuracy_reward),
            ("accuracy_continue", self.accuracy_continue),
            ("total", self.total),
        ] {
            if !v.is_finite() {
                return Err(format!("world model loss term '{name}' is non-finite ({v})"));
            }
        }
        Ok(())
    }
}

/// Time-major training batch: index `[t * batch + b]`.
#[derive(Debug, Clone, Default)]
pub struct WmBatch {
    pub batch: usize,
    pub steps: usize,
    /// Raw pixels in [0,1], `[steps * batch, 3*hw*hw]`.
    pub obs: Vec<f64>,
    /// Action that led into each step, `[steps * batch, action_dim]`.
    pub prev_actions: Vec<f64>,
    /// Reward observed with each step.
    pub rewards: Vec<f64>,
    /// 1.0 while the episode continues at this step, 0.0 at termination.
    pub continues: Vec<f64>,
    /// 1.0 for real steps, 0.0 for front padding.
    pub mask: Vec<f64>,
    /// Preference rate per step.
    pub rho: Vec<f64>,
    /// Stored act-time latent at the chunk start, `[batch, h_det]`; zeros
    /// (with `init_flat` empty or zero) fall back to the cold-start
    /// convention.
    pub init_h: Vec<f64>,
    /// Stored flat code at the chunk start, `[batch, k*c]`.
    pub init_flat: Vec<f64>,
}

pub struct WorldModel {
    pub cfg: WmConfig,
    pub encoder: ConvEncoder,
    pub gru: GruCell,
    pub prior_head: Mlp,
    pub post_head: Mlp,
    pub decoder: ConvDecoder,
    pub reward_head: Mlp,
    pub cont_head: Mlp,
    params: Vec<ParamId>,
}

impl WorldModel {
    pub fn new(store: &mut ParamStore, cfg: WmConfig, rng: &mut Rng) -> Self {
        let flat = cfg.flat_dim();
        let encoder = ConvEncoder::new(store, "wm.enc", cfg.img_hw, cfg.channels, cfg.embed, rng);
        let gru = GruCell::new(store, "wm.gru", flat + cfg.action_dim, cfg.h_det, rng);
        let prior_head = Mlp::new(store, "wm.prior", &[cfg.h_det, cfg.hidden, flat], rng);
        let post_head = Mlp::new(
            store,
            "wm.post",
            &[cfg.h_det + cfg.embed, cfg.hidden, flat],
            rng,
        );
        let decoder = ConvDecoder::new(
            store,
            "wm.dec",
            cfg.img_hw,
            cfg.channels,
            cfg.h_det + flat,
            rng,
        );
        let reward_head = Mlp::with_head_scale(
            store,
            "wm.reward",
            &[cfg.h_det + flat, cfg.hidden, 1],
            0.1,
            rng,
        );
        let cont_head = Mlp::with_head_scale(
            store,
            "wm.cont",
            &[cfg.h_det + flat, cfg.hidden, 1],
            0.1,
            rng,
        );
        let mut params = Vec::new();
        params.extend(encoder.params());
        params.extend(gru.params());
        params.extend(prior_head.params());
        params.extend(post_head.params());
        params.extend(decoder.params());
        params.extend(reward_head.params());
        params.extend(cont_head.params());
        Self {
            cfg,
            encoder,
            gru,
            prior_head,
            post_head,
            decoder,
            reward_head,
            cont_head,
            params,
        }
    }

    pub fn params(&self) -> &[ParamId] {
        &self.params
    }

    /// GRU recurrence: `h' = GRU(h, [prev_flat, prev_action])`.
    pub fn recur(&self, t: &mut Tape, h: Id, prev_flat: Id, prev_action: Id) -> Id {
        let x = t.concat_cols(&[prev_flat, prev_action]);
        self.gru.forward(t, x, h)
    }

    /// Prior code log-probabilities, shaped `[m*k, c]`.
    pub fn prior_log_probs(&self, t: &mut Tape, h: Id) -> Id {
        let m = t.shape(h)[0];
        let logits = self.prior_head.forward(t, h);
        let grouped = t.reshape(logits, &[m * self.cfg.k, self.cfg.c]);
        t.log_softmax_rows(grouped)
    }

    /// Posterior code log-probabilities from memory and image embedding.
    pub fn post_log_probs(&self, t: &mut Tape, h: Id, embed: Id) -> Id {
        let m = t.shape(h)[0];
        let x = t.concat_cols(&[h, embed]);
        let logits = self.post_head.forward(t, x);
        let grouped = t.reshape(logits, &[m * self.cfg.k, self.cfg.c]);
        t.log_softmax_rows(grouped)
    }

    /// Draws the flat `[m, k*c]` code from `[m*k, c]` log-probabilities.
    pub fn code_from_log_probs(
        &self,
        t: &mut Tape,
        log_probs: Id,
        noise: &[f64],
        mode: LatentMode,
    ) -> Id {
        let rows = t.shape(log_probs)[0];
        let m = rows / self.cfg.k;
        let probs = t.exp(log_probs);
        let flat = match mode {
            LatentMode::Sample => t.straight_through(probs, noise),
            LatentMode::Soft => probs,
        };
        t.reshape(flat, &[m, self.cfg.flat_dim()])
    }

    /// Symlog-compressed observation constant for the tape.
    pub fn obs_input(&self, t: &mut Tape, obs_raw: &[f64], m: usize) -> Id {
        let data: Vec<f64> = obs_raw.iter().map(|&x| symlog(x)).collect();
        t.constant(&[m, self.cfg.obs_dim()], data)
    }

    /// Decoder heads on tape: image (symlog space), reward (symlog space),
    /// continue logit.
    pub fn decode_on_tape(&self, t: &mut Tape, h: Id, flat: Id) -> (Id, Id, Id) {
        let feat = t.concat_cols(&[h, flat]);
        let img = self.decoder.forward(t, feat);
        let reward = self.reward_head.forward(t, feat);
        let cont_logit = self.cont_head.forward(t, feat);
        (img, reward, cont_logit)
    }

    /// Fresh start-of-episode belief: zero memory, code sampled from the
    /// prior head on that memory.
    pub fn initial_state(&self, store: &ParamStore, rng: &mut Rng) -> LatentState {
        let mut t = Tape::new(store);
        let h0 = t.constant(&[1, self.cfg.h_det], vec![0.0; self.cfg.h_det]);
        let lp = self.prior_log_probs(&mut t, h0);
        let mut noise = vec![0.0; self.cfg.k];
        rng.fill_uniform(&mut noise);
        let probs: Vec<f64> = t.value(lp).iter().map(|&x| x.exp()).collect();
        let code = CategoricalCode {
            k: self.cfg.k,
            c: self.cfg.c,
            logits: t.value(lp).to_vec(),
            sample: crate::num::sample_onehot_rows(&probs, self.cfg.k, self.cfg.c, &noise),
            probs,
        };
        LatentState {
            h: vec![0.0; self.cfg.h_det],
            code,
        }
    }

    /// One filtering step: advance memory with the previous action, then
    /// condition the code on the new observation. Returns the posterior state
    /// and the prior code for the same step.
    pub fn observe_step(
        &self,
        store: &ParamStore,
        prev: &LatentState,
        prev_action: &[f64],
        obs_raw: &[f64],
        rng: &mut Rng,
    ) -> (LatentState, CategoricalCode) {
        assert_eq!(prev_action.len(), self.cfg.action_dim, "action dim mismatch");
        assert_eq!(obs_raw.len(), self.cfg.obs_dim(), "observation shape mismatch");
        let mut t = Tape::new(store);
        let h = t.constant(&[1, self.cfg.h_det], prev.h.clone());
        let prev_flat = t.constant(&[1, self.cfg.flat_dim()], prev.flat().to_vec());
        let act = t.constant(&[1, self.cfg.action_dim], prev_action.to_vec());
        let h1 = self.recur(&mut t, h, prev_flat, act);
        let prior_lp = self.prior_log_probs(&mut t, h1);
        let obs = self.obs_input(&mut t, obs_raw, 1);
        let embed = self.encoder.forward(&mut t, obs);
        let post_lp = self.post_log_probs(&mut t, h1, embed);

        let mut noise = vec![0.0; self.cfg.k];
        rng.fill_uniform(&mut noise);
        let post_probs: Vec<f64> = t.value(post_lp).iter().map(|&x| x.exp()).collect();
        let prior_probs: Vec<f64> = t.value(prior_lp).iter().map(|&x| x.exp()).collect();
        let post_code = CategoricalCode {
            k: self.cfg.k,
            c: self.cfg.c,
            logits: t.value(post_lp).to_vec(),
            sample: crate::num::sample_onehot_rows(&post_probs, self.cfg.k, self.cfg.c, &noise),
            probs: post_probs,
        };
        let prior_code = CategoricalCode {
            k: self.cfg.k,
            c: self.cfg.c,
            logits: t.value(prior_lp).to_vec(),
            sample: vec![0.0; self.cfg.flat_dim()],
            probs: prior_probs,
        };
        (
            LatentState {
                h: t.value(h1).to_vec(),
                code: post_code,
            },
            prior_code,
        )
    }

    /// One imagination step: same recurrence, code drawn from the prior.
    pub fn imagine_step(
        &self,
        store: &ParamStore,
        prev: &LatentState,
        action: &[f64],
        rng: &mut Rng,
    ) -> LatentState {
        let mut t = Tape::new(store);
        let h = t.constant(&[1, self.cfg.h_det], prev.h.clone());
        let prev_flat = t.constant(&[1, self.cfg.flat_dim()], prev.flat().to_vec());
        let act = t.constant(&[1, self.cfg.action_dim], action.to_vec());
        let h1 = self.recur(&mut t, h, prev_flat, act);
        let prior_lp = self.prior_log_probs(&mut t, h1);
        let mut noise = vec![0.0; self.cfg.k];
        rng.fill_uniform(&mut noise);
        let probs: Vec<f64> = t.value(prior_lp).iter().map(|&x| x.exp()).collect();
        let code = CategoricalCode {
            k: self.cfg.k,
            c: self.cfg.c,
            logits: t.value(prior_lp).to_vec(),
            sample: crate::num::sample_onehot_rows(&probs, self.cfg.k, self.cfg.c, &noise),
            probs,
        };
        LatentState {
            h: t.value(h1).to_vec(),
            code,
        }
    }

    /// Decodes a single latent state to (image in [0,1] units, reward in
    /// symlog space, continue probability).
    pub fn decode_heads(&self, store: &ParamStore, state: &LatentState) -> (Vec<f64>, f64, f64) {
        let mut t = Tape::new(store);
        let h = t.constant(&[1, self.cfg.h_det], state.h.clone());
        let flat = t.constant(&[1, self.cfg.flat_dim()], state.flat().to_vec());
        let (img, reward, cont_logit) = self.decode_on_tape(&mut t, h, flat);
        let image: Vec<f64> = t.value(img).iter().map(|&x| symexp(x)).collect();
        let reward_symlog = t.value(reward)[0];
        let cont_prob = crate::autodiff::sigmoid(t.value(cont_logit)[0]);
        (image, reward_symlog, cont_prob)
    }

    /// Full sequence loss over a batch. Returns the loss breakdown (tape
    /// scalars evaluated), the posterior rollout for downstream modules, and
    /// the tape scalar id of the total for backward.
    pub fn loss_on_tape(
        &self,
        t: &mut Tape,
        batch: &WmBatch,
        mode: LatentMode,
        rng: &mut Rng,
    ) -> (Id, WmLossBreakdown, PosteriorRollout) {
        let b = batch.batch;
        let l = batch.steps;
        let flat_dim = self.cfg.flat_dim();
        let obs_dim = self.cfg.obs_dim();
        assert!(b >= 1 && l >= 1, "world model loss needs a non-empty batch");
        assert_eq!(batch.obs.len(), b * l * obs_dim, "obs buffer shape mismatch");

        // Encode all frames in one batched pass (time-major rows).
        let obs_all = self.obs_input(t, &batch.obs, l * b);
        let embed_all = self.encoder.forward(t, obs_all);

        // Chunk recurrences start from the stored act-time latents; without
        // them, fall back to the cold-start convention (zero memory, prior
        // code). Neither variant carries gradient.
        let (mut h, mut flat_prev) = if batch.init_h.len() == b * self.cfg.h_det
            && batch.init_flat.len() == b * flat_dim
        {
            let h0 = t.constant(&[b, self.cfg.h_det], batch.init_h.clone());
            let f0 = t.constant(&[b, flat_dim], batch.init_flat.clone());
            (h0, f0)
        } else {
            let h0 = t.constant(&[b, self.cfg.h_det], vec![0.0; b * self.cfg.h_det]);
            let prior0 = self.prior_log_probs(t, h0);
            let mut noise0 = vec![0.0; b * self.cfg.k];
            rng.fill_uniform(&mut noise0);
            let f0 = self.code_from_log_probs(t, prior0, &noise0, mode);
            let f0 = t.stop_grad(f0);
            (h0, f0)
        };
        let _ = &mut h;
        let _ = &mut flat_prev;

        let mut kl_terms: Vec<Id> = Vec::with_capacity(l);
        let mut feats: Vec<Id> = Vec::with_capacity(l);
        let mut post_flats: Vec<Id> = Vec::with_capacity(l);
        let mut post_probs: Vec<Id> = Vec::with_capacity(l);
        let mut h_steps: Vec<Id> = Vec::with_capacity(l);

        for step in 0..l {
            let act = t.constant(
                &[b, self.cfg.action_dim],
                batch.prev_actions[step * b * self.cfg.action_dim..(step + 1) * b * self.cfg.action_dim]
                    .to_vec(),
            );
            h = self.recur(t, h, flat_prev, act);
            let prior_lp = self.prior_log_probs(t, h);
            let embed = t.slice_rows(embed_all, step * b, b);
            let post_lp = self.post_log_probs(t, h, embed);

            // KL balancing: eta_rep * KL(post || sg(prior)) + eta_dyn * KL(sg(post) || prior)
            let sg_prior = t.stop_grad(prior_lp);
            let sg_post = t.stop_grad(post_lp);
            let p_live = t.exp(post_lp);
            let d_rep = t.sub(post_lp, sg_prior);
            let rep_elems = t.mul(p_live, d_rep);
            let p_stop = t.exp(sg_post);
            let d_dyn = t.sub(sg_post, prior_lp);
            let dyn_elems = t.mul(p_stop, d_dyn);
            let rep_rows = t.reshape(rep_elems, &[b, flat_dim]);
            let dyn_rows = t.reshape(dyn_elems, &[b, flat_dim]);
            let kl_rep = t.row_sum(rep_rows);
            let kl_dyn = t.row_sum(dyn_rows);
            let rep_w = t.mul_scalar(kl_rep, self.cfg.eta_rep);
            let dyn_w = t.mul_scalar(kl_dyn, self.cfg.eta_dyn);
            let balanced = t.add(rep_w, dyn_w);
            let clamped = t.max_const(balanced, self.cfg.free_bits);
            kl_terms.push(clamped);

            let mut noise = vec![0.0; b * self.cfg.k];
            rng.fill_uniform(&mut noise);
            let flat = self.code_from_log_probs(t, post_lp, &noise, mode);
            let probs = t.exp(post_lp);
            let probs_flat = t.reshape(probs, &[b, flat_dim]);
            let feat = t.concat_cols(&[h, flat]);
            feats.push(feat);
            post_flats.push(flat);
            post_probs.push(probs_flat);
            h_steps.push(h);
            flat_prev = flat;
        }

        // Decode every step in one batched pass.
        let feat_all = t.concat_rows(&feats);
        let img_pred = self.decoder.forward(t, feat_all);
        let reward_pred = self.reward_head.forward(t, feat_all);
        let cont_logit = self.cont_head.forward(t, feat_all);

        let img_target: Vec<f64> = batch.obs.iter().map(|&x| symlog(x)).collect();
        let img_target = t.constant(&[l * b, obs_dim], img_target);
        let img_diff = t.sub(img_pred, img_target);
        let img_sq = t.mul(img_diff, img_diff);
        let img_rows = t.row_sum(img_sq);
        let img_nll = t.mul_scalar(img_rows, 0.5);

        let r_target: Vec<f64> = batch.rewards.iter().map(|&r| symlog(r)).collect();
        let r_target = t.constant(&[l * b, 1], r_target);
        let r_diff = t.sub(reward_pred, r_target);
        let r_sq = t.mul(r_diff, r_diff);
        let r_rows = t.reshape(r_sq, &[l * b]);
        let r_nll = t.mul_scalar(r_rows, 0.5);

        // BCE with logits: y*softplus(-x) + (1-y)*softplus(x)
        let y = t.constant(&[l * b], batch.continues.clone());
        let x = t.reshape(cont_logit, &[l * b]);
        let neg_x = t.neg(x);
        let sp_neg = t.softplus(neg_x);
        let sp_pos = t.softplus(x);
        let ones = t.constant(&[l * b], vec![1.0; l * b]);
        let one_m_y = t.sub(ones, y);
        let term1 = t.mul(y, sp_neg);
        let term2 = t.mul(one_m_y, sp_pos);
        let cont_bce = t.add(term1, term2);

        // Mask and average each component over real steps.
        let mask = t.constant(&[l * b], batch.mask.clone());
        let n_real: f64 = batch.mask.iter().sum::<f64>().max(1.0);
        let kl_all = t.concat_rows(&kl_terms);
        let kl_flat = t.reshape(kl_all, &[l * b]);
        let masked_mean = |t: &mut Tape, v: Id| -> Id {
            let mv = t.mul(v, mask);
            let s = t.sum_all(mv);
            t.mul_scalar(s, 1.0 / n_real)
        };
        let complexity = masked_mean(t, kl_flat);
        let acc_img = masked_mean(t, img_nll);
        let acc_rew = masked_mean(t, r_nll);
        let acc_cont = masked_mean(t, cont_bce);

        let s1 = t.add(complexity, acc_img);
        let s2 = t.add(s1, acc_rew);
        let total = t.add(s2, acc_cont);

        let breakdown = WmLossBreakdown {
            complexity: t.scalar_value(complexity),
            accuracy_image: t.scalar_value(acc_img),
            accuracy_reward: t.scalar_value(acc_rew),
            accuracy_continue: t.scalar_value(acc_cont),
            total: t.scalar_value(total),
        };

        let mut h_all = Vec::with_capacity(l * b * self.cfg.h_det);
        for &hs in &h_steps {
            h_all.extend_from_slice(t.value(hs));
        }
        let mut flat_all = Vec::with_capacity(l * b * flat_dim);
        for &fs in &post_flats {
            flat_all.extend_from_slice(t.value(fs));
        }
        let mut probs_all = Vec::with_capacity(l * b * flat_dim);
        for &ps in &post_probs {
            probs_all.extend_from_slice(t.value(ps));
        }
        let rollout = PosteriorRollout {
            batch: b,
            steps: l,
            h: h_all,
            flat: flat_all,
            flat_probs: probs_all,
            mask: batch.mask.clone(),
        };
        (total, breakdown, rollout)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck;

    fn tiny_model() -> (ParamStore, WorldModel) {
        let mut store = ParamStore::new();
        let mut rng = Rng::from_seed(11);
        let wm = WorldModel::new(&mut store, WmConfig::tiny(2), &mut rng);
        (store, wm)
    }

    fn tiny_batch(b: usize, l: usize, cfg: &WmConfig, rng: &mut Rng) -> WmBatch {
        let obs_dim = cfg.obs_dim();
        let mut obs = vec![0.0; b * l * obs_dim];
        rng.fill_uniform(&mut obs);
        let mut prev_actions = vec![0.0; b * l * cfg.action_dim];
        for a in &mut prev_actions {
            *a = rng.uniform_in(-1.0, 1.0);
        }
        let rewards: Vec<f64> = (0..b * l).map(|_| if rng.uniform() < 0.2 { 0.0 } else { -1.0 }).collect();
        let continues = vec![1.0; b * l];
        let mask = vec![1.0; b * l];
        let rho = vec![0.0; b * l];
        WmBatch {
            batch: b,
            steps: l,
            obs,
            prev_actions,
            rewards,
            continues,
            mask,
            rho,
            init_h: Vec::new(),
            init_flat: Vec::new(),
        }
    }

    #[test]
    fn observe_step_shapes_and_determinism() {
        let (store, wm) = tiny_model();
        let mut rng = Rng::from_seed(3);
        let init = wm.initial_state(&store, &mut rng);
        let obs = vec![0.3; wm.cfg.obs_dim()];
        let a = vec![0.1, -0.2];
        let (s1, prior1) = wm.observe_step(&store, &init, &a, &obs, &mut Rng::from_seed(7));
        let (s2, prior2) = wm.observe_step(&store, &init, &a, &obs, &mut Rng::from_seed(7));
        assert_eq!(s1.h.len(), wm.cfg.h_det);
        assert_eq!(s1.code.probs.len(), wm.cfg.flat_dim());
        assert_eq!(s1.h, s2.h);
        assert_eq!(s1.code.sample, s2.code.sample);
        assert_eq!(prior1.probs, prior2.probs);
        // posterior and prior rows are stochastic
        for row in 0..wm.cfg.k {
            let p: f64 = s1.code.probs[row * wm.cfg.c..(row + 1) * wm.cfg.c].iter().sum();
            let q: f64 = prior1.probs[row * wm.cfg.c..(row + 1) * wm.cfg.c].iter().sum();
            assert!((p - 1.0).abs() < 1e-6);
            assert!((q - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn imagine_chain_produces_valid_states() {
        let (store, wm) = tiny_model();
        let mut rng = Rng::from_seed(5);
        let mut s = wm.initial_state(&store, &mut rng);
        for _ in 0..15 {
            s = wm.imagine_step(&store, &s, &[0.5, 0.5], &mut rng);
            assert_eq!(s.h.len(), wm.cfg.h_det);
            let ones = s.flat().iter().filter(|&&x| x == 1.0).count();
            assert_eq!(ones, wm.cfg.k);
        }
    }

    #[test]
    fn imagine_sampling_matches_prior_frequencies() {
        let (store, wm) = tiny_model();
        let mut rng = Rng::from_seed(5);
        let s = wm.initial_state(&store, &mut rng);
        let action = vec![0.0, 0.0];
        // One step ahead from a fixed state: sampled code frequencies should
        // track the prior probabilities.
        let next = wm.imagine_step(&store, &s, &action, &mut rng.clone());
        let probs = next.code.probs.clone();
        let k = wm.cfg.k;
        let c = wm.cfg.c;
        let mut counts = vec![0.0; k * c];
        let n = 10_000;
        for _ in 0..n {
            let st = wm.imagine_step(&store, &s, &action, &mut rng);
            for (cnt, &v) in counts.iter_mut().zip(st.flat()) {
                *cnt += v;
            }
        }
        for i in 0..k * c {
            let freq = counts[i] / n as f64;
            let p = probs[i];
            let se = (p * (1.0 - p) / n as f64).sqrt();
            assert!(
                (freq - p).abs() < 6.0 * se + 1e-3,
                "cell {i}: freq {freq:.4} vs prob {p:.4}"
            );
        }
    }

    #[test]
    fn decode_heads_contracts() {
        let (store, wm) = tiny_model();
        let mut rng = Rng::from_seed(9);
        let s = wm.initial_state(&store, &mut rng);
        let (img, _r, cont) = wm.decode_heads(&store, &s);
        assert_eq!(img.len(), wm.cfg.obs_dim());
        assert!(img.iter().all(|v| v.is_finite()));
        assert!((0.0..=1.0).contains(&cont));
    }

    #[test]
    fn loss_finite_at_init_and_floor_active_when_posterior_equals_prior() {
        let (store, wm) = tiny_model();
        let mut rng = Rng::from_seed(21);
        let batch = tiny_batch(2, 3, &wm.cfg, &mut rng);
        let mut t = Tape::new(&store);
        let (_, breakdown, rollout) =
            wm.loss_on_tape(&mut t, &batch, LatentMode::Sample, &mut Rng::from_seed(1));
        breakdown.check_finite().unwrap();
        assert_eq!(rollout.h.len(), 2 * 3 * wm.cfg.h_det);
        assert_eq!(rollout.flat.len(), 2 * 3 * wm.cfg.flat_dim());

        // A model with free_bits above any achievable KL clamps complexity to the floor.
        let mut store2 = ParamStore::new();
        let mut cfg2 = WmConfig::tiny(2);
        cfg2.free_bits = 100.0;
        let wm2 = WorldModel::new(&mut store2, cfg2, &mut Rng::from_seed(11));
        let mut t2 = Tape::new(&store2);
        let (_, bd2, _) = wm2.loss_on_tape(&mut t2, &batch, LatentMode::Sample, &mut Rng::from_seed(1));
        assert!((bd2.complexity - 100.0).abs() < 1e-9);
    }

    #[test]
    fn free_bits_floor_zeroes_complexity_gradient() {
        let (mut store, wm) = tiny_model();
        let batch = tiny_batch(1, 2, &wm.cfg, &mut Rng::from_seed(2));

        // Loss evaluated with a huge floor: complexity contributes a constant,
        // so prior-head gradients must be exactly zero (no other term touches
        // the prior head).
        let mut cfg = wm.cfg.clone();
        cfg.free_bits = 1e6;
        let wm_floor = WorldModel {
            cfg,
            ..destructure(wm)
        };
        let mut t = Tape::new(&store);
        let (total, _, _) =
            wm_floor.loss_on_tape(&mut t, &batch, LatentMode::Soft, &mut Rng::from_seed(4));
        let grads = t.backward(total);
        for pid in wm_floor.prior_head.params() {
            let g = grads.get(pid);
            let max = g
                .map(|g| g.iter().fold(0.0f64, |m, &x| m.max(x.abs())))
                .unwrap_or(0.0);
            assert!(
                max == 0.0,
                "prior head {} has gradient {max} under an active free-bits floor",
                store.name(pid)
            );
        }
        let _ = &mut store;
    }

    fn destructure(wm: WorldModel) -> WorldModel {
        wm
    }

    #[test]
    fn loss_gradients_match_finite_differences() {
        let (mut store, wm) = tiny_model();
        let batch = tiny_batch(1, 2, &wm.cfg, &mut Rng::from_seed(8));
        let noise_base = Rng::from_seed(17);

        // Base pass: gradients plus the stop-gradient branch values; the FD
        // closure pins those branches so it probes the function the tape
        // actually differentiates.
        let (grads, sg_values) = {
            let mut t = Tape::new(&store);
            let (total, _, _) = wm.loss_on_tape(&mut t, &batch, LatentMode::Soft, &mut noise_base.clone());
            (t.backward(total), t.stop_grad_values())
        };
        let mut f = |s: &ParamStore| {
            let mut t = Tape::new(s);
            t.override_stop_grads(sg_values.clone());
            let (total, _, _) = wm.loss_on_tape(&mut t, &batch, LatentMode::Soft, &mut noise_base.clone());
            t.scalar_value(total)
        };
        let params = wm.params().to_vec();
        gradcheck::check_random_coords(
            &mut store,
            &params,
            &mut f,
            &grads,
            30,
            1e-5,
            1e-3,
            &mut Rng::from_seed(99),
        );
    }

    #[test]
    fn kl_balancing_scalar_and_gradient_contract() {
        // On random small categorical pairs: balanced scalar equals
        // (eta_rep + eta_dyn) * KL, and the posterior-side gradient equals
        // eta_rep times the full-KL posterior gradient.
        let mut rng = Rng::from_seed(31);
        for _ in 0..20 {
            let k = 2 + rng.below(3);
            let c = 2 + rng.below(4);
            let mut store = ParamStore::new();
            let mut post_logits = vec![0.0; k * c];
            let mut prior_logits = vec![0.0; k * c];
            rng.fill_normal(&mut post_logits);
            rng.fill_normal(&mut prior_logits);
            let post_id = store.alloc("post", &[k * c], post_logits);
            let prior_id = store.alloc("prior", &[k * c], prior_logits);
            let (eta_rep, eta_dyn) = (0.1, 0.5);

            let balanced_eval = |s: &ParamStore| -> (f64, Vec<f64>) {
                let mut t = Tape::new(s);
                let po = t.param(post_id);
                let pr = t.param(prior_id);
                let po2 = t.reshape(po, &[k, c]);
                let pr2 = t.reshape(pr, &[k, c]);
                let post_lp = t.log_softmax_rows(po2);
                let prior_lp = t.log_softmax_rows(pr2);
                let sg_prior = t.stop_grad(prior_lp);
                let sg_post = t.stop_grad(post_lp);
                let p_live = t.exp(post_lp);
                let d1 = t.sub(post_lp, sg_prior);
                let e1 = t.mul(p_live, d1);
                let p_stop = t.exp(sg_post);
                let d2 = t.sub(sg_post, prior_lp);
                let e2 = t.mul(p_stop, d2);
                let s1 = t.sum_all(e1);
                let s2 = t.sum_all(e2);
                let w1 = t.mul_scalar(s1, eta_rep);
                let w2 = t.mul_scalar(s2, eta_dyn);
                let total = t.add(w1, w2);
                let g = t.backward(total);
                (t.scalar_value(total), g.get(post_id).unwrap().to_vec())
            };
            let full_kl_eval = |s: &ParamStore| -> (f64, Vec<f64>) {
                let mut t = Tape::new(s);
                let po = t.param(post_id);
                let pr = t.param(prior_id);
                let po2 = t.reshape(po, &[k, c]);
                let pr2 = t.reshape(pr, &[k, c]);
                let post_lp = t.log_softmax_rows(po2);
                let prior_lp = t.log_softmax_rows(pr2);
                let sg_prior = t.stop_grad(prior_lp);
                let p = t.exp(post_lp);
                let d = t.sub(post_lp, sg_prior);
                let e = t.mul(p, d);
                let kl = t.sum_all(e);
                let g = t.backward(kl);
                (t.scalar_value(kl), g.get(post_id).unwrap().to_vec())
            };

            let (bal, g_bal) = balanced_eval(&store);
            let (kl, g_full) = full_kl_eval(&store);
            assert!(
                (bal - (eta_rep + eta_dyn) * kl).abs() <= 1e-6 * (1.0 + kl.abs()),
                "balanced {bal} vs {} * kl {kl}",
                eta_rep + eta_dyn
            );
            for (gb, gf) in g_bal.iter().zip(&g_full) {
                assert!(
                    (gb - eta_rep * gf).abs() <= 1e-6 * (1.0 + gf.abs()),
                    "posterior grad {gb} vs eta_rep * {gf}"
                );
            }
        }
    }
}
