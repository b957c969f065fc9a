//! Information-gain network ensemble.
//!
//! A set of small Gaussian MLPs that each predict the next flattened
//! stochastic code from the current latent state and action. Training
//! minimizes the Gaussian negative log-likelihood against stopped world-model
//! codes. At query time the ensemble's disagreement yields the information
//! gain: the entropy of the per-dimension spread of one sample per member,
//! minus the members' own average entropy.
//!
//! The spread entropy uses a chi-square log-moment correction (exact under
//! the identical-member null), so an ensemble with no disagreement yields
//! zero information gain in expectation rather than the negative bias of the
//! raw one-sample estimator. The correction is a per-ensemble-size constant
//! and can be disabled.

use crate::autodiff::{Id, ParamId, ParamStore, Tape};
use crate::nn::Mlp;
use crate::num::digamma_half_integer;
use crate::rng::Rng;
use crate::world_model::LatentState;

pub const SIGMA_FLOOR: f64 = 1e-4;
const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

#[derive(Debug, Clone)]
pub struct EnsembleConfig {
    pub n_members: usize,
    /// Input width: `h_det + k*c + action_dim`.
    pub in_dim: usize,
    /// Predicted width: the flattened code, `k*c`.
    pub out_dim: usize,
    pub hidden: usize,
    pub bias_correction: bool,
}

impl EnsembleConfig {
    pub fn desk(h_det: usize, flat_dim: usize, action_dim: usize) -> Self {
        Self {
            n_members: 5,
            in_dim: h_det + flat_dim + action_dim,
            out_dim: flat_dim,
            hidden: 48,
            bias_correction: true,
        }
    }
}

/// `ln 2 + psi((n-1)/2) - ln n`: the expected log of a population variance of
/// `n` iid standard normals.
pub fn log_variance_bias(n_members: usize) -> f64 {
    assert!(n_members >= 2);
    std::f64::consts::LN_2 + digamma_half_integer((n_members - 1) as u32)
        - (n_members as f64).ln()
}

pub struct IgEnsemble {
    pub cfg: EnsembleConfig,
    members: Vec<Mlp>,
    params: Vec<ParamId>,
}

impl IgEnsemble {
    pub fn new(store: &mut ParamStore, cfg: EnsembleConfig, rng: &mut Rng) -> Self {
        assert!(cfg.n_members >= 2, "information gain needs at least 2 members");
        let mut members = Vec::with_capacity(cfg.n_members);
        let mut params = Vec::new();
        for i in 0..cfg.n_members {
            let m = Mlp::new(
                store,
                &format!("ig.{i}"),
                &[cfg.in_dim, cfg.hidden, cfg.hidden, 2 * cfg.out_dim],
                rng,
            );
            params.extend(m.params());
            members.push(m);
        }
        Self {
            cfg,
            members,
            params,
        }
    }

    pub fn params(&self) -> &[ParamId] {
        &self.params
    }

    pub fn member_params(&self, i: usize) -> Vec<ParamId> {
        self.members[i].params()
    }

    /// Mean and softplus-floored scale for one member over `[n, in_dim]` input.
    pub fn member_forward(&self, t: &mut Tape, i: usize, x: Id) -> (Id, Id) {
        let d = self.cfg.out_dim;
        let out = self.members[i].forward(t, x);
        let mu = t.slice_cols(out, 0, d);
        let sigma_raw = t.slice_cols(out, d, d);
        let sp = t.softplus(sigma_raw);
        let sigma = t.add_scalar(sp, SIGMA_FLOOR);
        (mu, sigma)
    }

    /// Summed member NLLs against stopped next codes, averaged over the batch.
    ///
    /// Per member and sample: `sum_d [ 0.5 ln(2 pi sigma_d^2) + (s_d - mu_d)^2 / (2 sigma_d^2) ]`.
    pub fn nll_loss_on_tape(&self, t: &mut Tape, x: Id, next_flat: &[f64]) -> Id {
        let n = t.shape(x)[0];
        let d = self.cfg.out_dim;
        assert_eq!(next_flat.len(), n * d, "next code shape mismatch");
        let target = t.constant(&[n, d], next_flat.to_vec());
        let mut member_terms: Vec<Id> = Vec::with_capacity(self.cfg.n_members);
        for i in 0..self.cfg.n_members {
            let (mu, sigma) = self.member_forward(t, i, x);
            let diff = t.sub(target, mu);
            let sq = t.mul(diff, diff);
            let var = t.mul(sigma, sigma);
            let two_var = t.mul_scalar(var, 2.0);
            let quad = t.div(sq, two_var);
            let ln_sigma = t.ln(sigma);
            let s1 = t.add(quad, ln_sigma);
            let elems = t.add_scalar(s1, HALF_LN_2PI);
            let rows = t.row_sum(elems);
            member_terms.push(rows);
        }
        let mut acc = member_terms[0];
        for &term in &member_terms[1..] {
            acc = t.add(acc, term);
        }
        t.mean_all(acc)
    }

    /// Per-row information gain on tape. `noise` holds `n_members * n * d`
    /// standard normals (member-major); member parameters should be frozen by
    /// the caller when only the state-action path may carry gradient.
    pub fn information_gain_on_tape(&self, t: &mut Tape, x: Id, noise: &[f64]) -> Id {
        let n = t.shape(x)[0];
        let d = self.cfg.out_dim;
        let nm = self.cfg.n_members;
        assert_eq!(noise.len(), nm * n * d, "ig noise shape mismatch");

        let mut samples: Vec<Id> = Vec::with_capacity(nm);
        let mut member_ent_rows: Vec<Id> = Vec::with_capacity(nm);
        for i in 0..nm {
            let (mu, sigma) = self.member_forward(t, i, x);
            let eps = t.constant(&[n, d], noise[i * n * d..(i + 1) * n * d].to_vec());
            let scaled = t.mul(sigma, eps);
            let s = t.add(mu, scaled);
            samples.push(s);
            // mean over dims of ent(sigma) = 0.5 ln(2 pi sigma^2) + 0.5
            let ln_sigma = t.ln(sigma);
            let ent = t.add_scalar(ln_sigma, HALF_LN_2PI + 0.5);
            let row = t.row_sum(ent);
            member_ent_rows.push(t.mul_scalar(row, 1.0 / d as f64));
        }

        // Population variance across members, per (row, dim).
        let mut mean = samples[0];
        for &s in &samples[1..] {
            mean = t.add(mean, s);
        }
        let mean = t.mul_scalar(mean, 1.0 / nm as f64);
        let mut var = {
            let diff = t.sub(samples[0], mean);
            t.mul(diff, diff)
        };
        for &s in &samples[1..] {
            let diff = t.sub(s, mean);
            let sq = t.mul(diff, diff);
            var = t.add(var, sq);
        }
        let var = t.mul_scalar(var, 1.0 / nm as f64);
        let var = t.max_const(var, 1e-30);

        // mean over dims of ent(std) = 0.5 ln(2 pi var) + 0.5
        let ln_var = t.ln(var);
        let half_ln_var = t.mul_scalar(ln_var, 0.5);
        let ent_spread = t.add_scalar(half_ln_var, HALF_LN_2PI + 0.5);
        let spread_rows = t.row_sum(ent_spread);
        let spread_mean = t.mul_scalar(spread_rows, 1.0 / d as f64);

        let mut avg_member_ent = member_ent_rows[0];
        for &r in &member_ent_rows[1..] {
            avg_member_ent = t.add(avg_member_ent, r);
        }
        let avg_member_ent = t.mul_scalar(avg_member_ent, 1.0 / nm as f64);

        let raw = t.sub(spread_mean, avg_member_ent);
        if self.cfg.bias_correction {
            t.add_scalar(raw, -0.5 * log_variance_bias(nm))
        } else {
            raw
        }
    }

    /// Runtime query for a single state-action pair.
    pub fn information_gain(
        &self,
        store: &ParamStore,
        state: &LatentState,
        action: &[f64],
        rng: &mut Rng,
    ) -> Result<f64, String> {
        if self.cfg.n_members < 2 {
            return Err("information gain requires an ensemble of at least 2".into());
        }
        let mut input = Vec::with_capacity(self.cfg.in_dim);
        input.extend_from_slice(&state.h);
        input.extend_from_slice(state.flat());
        input.extend_from_slice(action);
        assert_eq!(input.len(), self.cfg.in_dim, "ig input width mismatch");
        let mut t = Tape::new(store);
        let x = t.constant(&[1, self.cfg.in_dim], input);
        let mut noise = vec![0.0; self.cfg.n_members * self.cfg.out_dim];
        rng.fill_normal(&mut noise);
        let ig = self.information_gain_on_tape(&mut t, x, &noise);
        let v = t.value(ig)[0];
        if !v.is_finite() {
            return Err(format!("information gain is non-finite ({v})"));
        }
        Ok(v)
    }
}

/// Reference Gaussian NLL used by tests and sanity checks:
/// `sum_d [0.5 ln(2 pi sigma_d^2) + (target_d - mu_d)^2 / (2 sigma_d^2)]`.
pub fn gaussian_nll(mu: &[f64], sigma: &[f64], target: &[f64]) -> f64 {
    assert!(mu.len() == sigma.len() && mu.len() == target.len());
    mu.iter()
        .zip(sigma)
        .zip(target)
        .map(|((&m, &s), &x)| HALF_LN_2PI + s.ln() + (x - m) * (x - m) / (2.0 * s * s))
        .sum()
}
