//! Episode storage with a dual-buffer scheme: a normal ring over every
//! episode and a positive ring restricted to episodes that reached the goal
//! at least once. Gradient steps alternate their sampling source by parity
//! (even: normal, odd: positive), falling back to the normal buffer when no
//! positive episode exists yet. Seed demonstrations are pinned into the
//! positive side and never evicted, so the positive signal cannot vanish
//! early in training.
//!
//! Observations are stored quantized to 1/254 steps (the renderer palette is
//! {0, 0.5, 1}, which quantizes exactly); sampled sequences never cross
//! episode boundaries, and episodes shorter than the sequence length are
//! front-padded with their first step under a zero mask.

use crate::world_model::WmBatch;
use std::collections::VecDeque;
use std::sync::Arc;

const OBS_QUANT: f64 = 254.0;

pub fn quantize_obs(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * OBS_QUANT).round() as u8
}

pub fn dequantize_obs(q: u8) -> f64 {
    q as f64 / OBS_QUANT
}

/// One finished episode. Step `t` holds the observation arriving at `t`, the
/// action that led into it (zeros at t = 0), the reward observed with it, and
/// the per-step flags; `rho` is filled by the self-revision pass before the
/// episode may be stored.
///
/// The record also carries the act-time belief trajectory (`latent_h`,
/// `latent_code`): entry 0 is the pre-observation initial latent and entry
/// t+1 the posterior after step t. Replay chunks initialize their recurrence
/// from these stored latents so trained states match the filtering
/// distribution the policy acts on.
#[derive(Debug, Clone)]
pub struct EpisodeRecord {
    pub obs_dim: usize,
    pub action_dim: usize,
    pub obs: Vec<u8>,
    pub actions: Vec<f64>,
    pub rewards: Vec<f64>,
    pub expert: Vec<bool>,
    pub success: Vec<bool>,
    pub continues: Vec<f64>,
    pub succeeded_once: bool,
    pub rho: Option<Vec<f64>>,
    /// `(T+1) * h_det` stored memories.
    pub latent_h: Vec<f64>,
    /// `(T+1) * k` stored code class indices.
    pub latent_code: Vec<u8>,
    pub h_det: usize,
    pub latent_k: usize,
    pub latent_c: usize,
}

impl EpisodeRecord {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn return_sum(&self) -> f64 {
        self.rewards.iter().sum()
    }

    pub fn validate(&self) -> Result<(), String> {
        let t = self.len();
        if t == 0 {
            return Err("episode record is empty".into());
        }
        if self.obs.len() != t * self.obs_dim
            || self.actions.len() != t * self.action_dim
            || self.expert.len() != t
            || self.success.len() != t
            || self.continues.len() != t
        {
            return Err("episode record arrays are inconsistent".into());
        }
        if let Some(rho) = &self.rho {
            if rho.len() != t {
                return Err("rho length mismatch".into());
            }
            if rho[0] != 0.0 {
                return Err("rho must start neutral".into());
            }
            if rho.iter().any(|r| !(-1.0..=1.0).contains(r)) {
                return Err("rho out of [-1, 1]".into());
            }
        }
        if self.latent_h.len() != (t + 1) * self.h_det
            || self.latent_code.len() != (t + 1) * self.latent_k
        {
            return Err("stored latent arrays are inconsistent".into());
        }
        if self.success.iter().any(|&d| d) && !self.succeeded_once {
            return Err("success flag set but episode marked unsuccessful".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BufferSource {
    Normal,
    Positive,
}

impl BufferSource {
    pub fn as_str(&self) -> &'static str {
        match self {
            BufferSource::Normal => "normal",
            BufferSource::Positive => "positive",
        }
    }
}

pub struct DualBuffer {
    normal: VecDeque<Arc<EpisodeRecord>>,
    positive: VecDeque<Arc<EpisodeRecord>>,
    pinned: Vec<Arc<EpisodeRecord>>,
    normal_steps: usize,
    positive_steps: usize,
    cap_normal_steps: usize,
    cap_positive_steps: usize,
    pub fallback_events: u64,
}

impl DualBuffer {
    pub fn new(cap_normal_steps: usize, cap_positive_steps: usize) -> Self {
        Self {
            normal: VecDeque::new(),
            positive: VecDeque::new(),
            pinned: Vec::new(),
            normal_steps: 0,
            positive_steps: 0,
            cap_normal_steps,
            cap_positive_steps,
            fallback_events: 0,
        }
    }

    pub fn normal_episodes(&self) -> usize {
        self.normal.len()
    }

    pub fn positive_episodes(&self) -> usize {
        self.positive.len() + self.pinned.len()
    }

    pub fn total_steps(&self) -> usize {
        self.normal_steps
    }

    /// Stores a finished episode; it joins the positive side only if it
    /// succeeded at least once. Oldest episodes are evicted when a ring
    /// exceeds its step capacity.
    pub fn add_episode(&mut self, ep: EpisodeRecord) -> Result<(), String> {
        ep.validate()?;
        if ep.rho.is_none() {
            return Err("episode must carry preference rates before storage".into());
        }
        let ep = Arc::new(ep);
        self.normal_steps += ep.len();
        self.normal.push_back(Arc::clone(&ep));
        while self.normal_steps > self.cap_normal_steps && self.normal.len() > 1 {
            if let Some(old) = self.normal.pop_front() {
                self.normal_steps -= old.len();
            }
        }
        if ep.succeeded_once {
            self.positive_steps += ep.len();
            self.positive.push_back(ep);
            while self.positive_steps > self.cap_positive_steps && self.positive.len() > 1 {
                if let Some(old) = self.positive.pop_front() {
                    self.positive_steps -= old.len();
                }
            }
        }
        Ok(())
    }

    /// Stores a seed demonstration: pinned on the positive side (never
    /// evicted) and present in the normal ring like any other episode.
    pub fn add_seed_episode(&mut self, ep: EpisodeRecord) -> Result<(), String> {
        ep.validate()?;
        if ep.rho.is_none() {
            return Err("seed episode must carry preference rates".into());
        }
        if !ep.succeeded_once {
            return Err("seed episodes must be successful".into());
        }
        let ep = Arc::new(ep);
        self.pinned.push(Arc::clone(&ep));
        self.normal_steps += ep.len();
        self.normal.push_back(ep);
        while self.normal_steps > self.cap_normal_steps && self.normal.len() > 1 {
            if let Some(old) = self.normal.pop_front() {
                self.normal_steps -= old.len();
            }
        }
        Ok(())
    }

    /// Recomputes pinned (seed) episodes through `refilter`, replacing their
    /// stored latents in both buffers so chunk starts track the current model.
    pub fn refresh_pinned(&mut self, mut refilter: impl FnMut(&EpisodeRecord) -> EpisodeRecord) {
        for slot in 0..self.pinned.len() {
            let old = Arc::clone(&self.pinned[slot]);
            let fresh = Arc::new(refilter(&old));
            for ep in self.normal.iter_mut() {
                if Arc::ptr_eq(ep, &old) {
                    *ep = Arc::clone(&fresh);
                }
            }
            self.pinned[slot] = fresh;
        }
    }

    fn source_for(&self, grad_step_index: u64) -> (BufferSource, bool) {
        if grad_step_index % 2 == 0 {
            (BufferSource::Normal, false)
        } else if self.positive.is_empty() && self.pinned.is_empty() {
            (BufferSource::Normal, true)
        } else {
            (BufferSource::Positive, false)
        }
    }

    /// Draws `batch` sequences of length `seq_len`, alternating the source
    /// buffer by gradient-step parity. Returns the batch, the source used,
    /// and whether an empty positive buffer forced a fallback.
    pub fn sample_batch(
        &mut self,
        grad_step_index: u64,
        batch: usize,
        seq_len: usize,
        rng: &mut crate::rng::Rng,
    ) -> Result<(WmBatch, BufferSource, bool), String> {
        let (source, fallback) = self.source_for(grad_step_index);
        if fallback {
            self.fallback_events += 1;
        }
        let episodes: Vec<&Arc<EpisodeRecord>> = match source {
            BufferSource::Normal => self.normal.iter().collect(),
            BufferSource::Positive => self.pinned.iter().chain(self.positive.iter()).collect(),
        };
        if episodes.is_empty() {
            return Err("both replay buffers are empty".into());
        }

        // Uniform over valid (episode, start) pairs.
        let mut cum: Vec<usize> = Vec::with_capacity(episodes.len());
        let mut total = 0usize;
        for ep in &episodes {
            let t = ep.len();
            total += if t >= seq_len { t - seq_len + 1 } else { 1 };
            cum.push(total);
        }

        let obs_dim = episodes[0].obs_dim;
        let action_dim = episodes[0].action_dim;
        let h_det = episodes[0].h_det;
        let k = episodes[0].latent_k;
        let c = episodes[0].latent_c;
        let mut out = WmBatch {
            batch,
            steps: seq_len,
            obs: vec![0.0; seq_len * batch * obs_dim],
            prev_actions: vec![0.0; seq_len * batch * action_dim],
            rewards: vec![0.0; seq_len * batch],
            continues: vec![0.0; seq_len * batch],
            mask: vec![0.0; seq_len * batch],
            rho: vec![0.0; seq_len * batch],
            init_h: vec![0.0; batch * h_det],
            init_flat: vec![0.0; batch * k * c],
        };

        for b in 0..batch {
            let pick = rng.below(total);
            let ep_idx = cum.partition_point(|&c| c <= pick);
            let ep = episodes[ep_idx];
            let prev_cum = if ep_idx == 0 { 0 } else { cum[ep_idx - 1] };
            let within = pick - prev_cum;
            let t_len = ep.len();
            let rho = ep.rho.as_ref().expect("validated on insert");

            let (start, pad) = if t_len >= seq_len {
                (within, 0)
            } else {
                (0, seq_len - t_len)
            };
            // chunk recurrence starts from the stored act-time latent
            out.init_h[b * h_det..(b + 1) * h_det]
                .copy_from_slice(&ep.latent_h[start * h_det..(start + 1) * h_det]);
            for kk in 0..k {
                let class = ep.latent_code[start * k + kk] as usize;
                out.init_flat[b * k * c + kk * c + class] = 1.0;
            }
            for s in 0..seq_len {
                let row = s * batch + b;
                let src = if s < pad { start } else { start + (s - pad) };
                for j in 0..obs_dim {
                    out.obs[row * obs_dim + j] = dequantize_obs(ep.obs[src * obs_dim + j]);
                }
                out.prev_actions[row * action_dim..(row + 1) * action_dim]
                    .copy_from_slice(&ep.actions[src * action_dim..(src + 1) * action_dim]);
                out.rewards[row] = ep.rewards[src];
                out.continues[row] = ep.continues[src];
                out.rho[row] = rho[src];
                out.mask[row] = if s < pad { 0.0 } else { 1.0 };
            }
        }
        Ok((out, source, fallback))
    }
}
