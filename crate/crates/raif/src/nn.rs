//! Network building blocks over the autodiff tape: linear and convolution
//! layers, a GRU cell, small MLPs, and the Adam optimizer with per-group
//! learning rates and gradient-norm clipping.
//!
//! Parameters are held at f32 precision between optimizer steps (compute
//! stays f64); this matches the checkpoint format exactly, so a saved and
//! reloaded model is bitwise identical to the live one.

use crate::autodiff::{Grads, Id, ParamId, ParamStore, Tape};
use crate::rng::Rng;

/// Dense layer `y = x W + b` with `W: [in, out]`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, rng: &mut Rng) -> Self {
        Self::with_scale(store, name, fan_in, fan_out, 1.0, rng)
    }

    /// `scale` multiplies the default 1/sqrt(fan_in) weight deviation; output
    /// heads use a smaller scale so fresh predictions start near zero.
    pub fn with_scale(
        store: &mut ParamStore,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        scale: f64,
        rng: &mut Rng,
    ) -> Self {
        let std = scale / (fan_in as f64).sqrt();
        let mut w = vec![0.0; fan_in * fan_out];
        for v in &mut w {
            *v = quantize(rng.normal() * std);
        }
        let w = store.alloc(&format!("{name}.w"), &[fan_in, fan_out], w);
        let b = store.alloc(&format!("{name}.b"), &[fan_out], vec![0.0; fan_out]);
        Self { w, b }
    }

    pub fn forward(&self, t: &mut Tape, x: Id) -> Id {
        let w = t.param(self.w);
        let b = t.param(self.b);
        let y = t.matmul(x, w);
        t.add_row(y, b)
    }

    pub fn params(&self) -> Vec<ParamId> {
        vec![self.w, self.b]
    }
}

/// Multi-layer perceptron with SiLU hidden activations and a linear head.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

impl Mlp {
    /// `dims` runs input..output, e.g. `[in, hidden, hidden, out]`.
    pub fn new(store: &mut ParamStore, name: &str, dims: &[usize], rng: &mut Rng) -> Self {
        Self::with_head_scale(store, name, dims, 1.0, rng)
    }

    pub fn with_head_scale(
        store: &mut ParamStore,
        name: &str,
        dims: &[usize],
        head_scale: f64,
        rng: &mut Rng,
    ) -> Self {
        assert!(dims.len() >= 2);
        let mut layers = Vec::new();
        for i in 0..dims.len() - 1 {
            let scale = if i + 2 == dims.len() { head_scale } else { 1.0 };
            layers.push(Linear::with_scale(
                store,
                &format!("{name}.{i}"),
                dims[i],
                dims[i + 1],
                scale,
                rng,
            ));
        }
        Self { layers }
    }

    pub fn forward(&self, t: &mut Tape, x: Id) -> Id {
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(t, h);
            if i + 1 < self.layers.len() {
                h = t.silu(h);
            }
        }
        h
    }

    pub fn params(&self) -> Vec<ParamId> {
        self.layers.iter().flat_map(Linear::params).collect()
    }
}

/// Standard GRU cell; bias lives on the input-side transform.
#[derive(Debug, Clone)]
pub struct GruCell {
    pub wx: ParamId,
    pub wh: ParamId,
    pub b: ParamId,
    pub hidden: usize,
}

impl GruCell {
    pub fn new(store: &mut ParamStore, name: &str, input: usize, hidden: usize, rng: &mut Rng) -> Self {
        let mut wx = vec![0.0; input * 3 * hidden];
        let stdx = 1.0 / (input as f64).sqrt();
        for v in &mut wx {
            *v = quantize(rng.normal() * stdx);
        }
        let mut wh = vec![0.0; hidden * 3 * hidden];
        let stdh = 1.0 / (hidden as f64).sqrt();
        for v in &mut wh {
            *v = quantize(rng.normal() * stdh);
        }
        let wx = store.alloc(&format!("{name}.wx"), &[input, 3 * hidden], wx);
        let wh = store.alloc(&format!("{name}.wh"), &[hidden, 3 * hidden], wh);
        let b = store.alloc(&format!("{name}.b"), &[3 * hidden], vec![0.0; 3 * hidden]);
        Self { wx, wh, b, hidden }
    }

    /// `x: [m, input]`, `h: [m, hidden]` -> next hidden `[m, hidden]`.
    pub fn forward(&self, t: &mut Tape, x: Id, h: Id) -> Id {
        let n = self.hidden;
        let wx = t.param(self.wx);
        let wh = t.param(self.wh);
        let b = t.param(self.b);
        let gx = t.matmul(x, wx);
        let gx = t.add_row(gx, b);
        let gh = t.matmul(h, wh);

        let gx_r = t.slice_cols(gx, 0, n);
        let gx_z = t.slice_cols(gx, n, n);
        let gx_n = t.slice_cols(gx, 2 * n, n);
        let gh_r = t.slice_cols(gh, 0, n);
        let gh_z = t.slice_cols(gh, n, n);
        let gh_n = t.slice_cols(gh, 2 * n, n);

        let r_pre = t.add(gx_r, gh_r);
        let r = t.sigmoid(r_pre);
        let z_pre = t.add(gx_z, gh_z);
        let z = t.sigmoid(z_pre);
        let rn = t.mul(r, gh_n);
        let n_pre = t.add(gx_n, rn);
        let cand = t.tanh(n_pre);

        // h' = (1 - z) * cand + z * h
        let zc = t.mul(z, cand);
        let zh = t.mul(z, h);
        let diff = t.sub(cand, zc);
        t.add(diff, zh)
    }

    pub fn params(&self) -> Vec<ParamId> {
        vec![self.wx, self.wh, self.b]
    }
}

/// Convolutional image encoder: stride-2 4x4 convolutions (SiLU between)
/// until the spatial extent reaches 4 or less, then a linear projection.
#[derive(Debug, Clone)]
pub struct ConvEncoder {
    convs: Vec<(ParamId, ParamId)>,
    fc: Linear,
    pub img_hw: usize,
    pub channels: Vec<usize>,
    pub embed: usize,
}

impl ConvEncoder {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        img_hw: usize,
        base_channels: usize,
        embed: usize,
        rng: &mut Rng,
    ) -> Self {
        let stages = encoder_stages(img_hw);
        let mut channels = vec![3];
        for s in 0..stages {
            channels.push(base_channels << s.min(3));
        }
        let mut convs = Vec::new();
        for s in 0..stages {
            let (cin, cout) = (channels[s], channels[s + 1]);
            let fan_in = cin * 16;
            let std = 1.0 / (fan_in as f64).sqrt();
            let mut w = vec![0.0; cout * cin * 16];
            for v in &mut w {
                *v = quantize(rng.normal() * std);
            }
            let w = store.alloc(&format!("{name}.conv{s}.w"), &[cout, cin, 4, 4], w);
            let b = store.alloc(&format!("{name}.conv{s}.b"), &[cout], vec![0.0; cout]);
            convs.push((w, b));
        }
        let spatial = img_hw >> stages;
        let flat = channels[stages] * spatial * spatial;
        let fc = Linear::new(store, &format!("{name}.fc"), flat, embed, rng);
        Self {
            convs,
            fc,
            img_hw,
            channels,
            embed,
        }
    }

    /// `obs: [m, 3*hw*hw]` already in symlog space -> `[m, embed]`.
    pub fn forward(&self, t: &mut Tape, obs: Id) -> Id {
        let m = t.shape(obs)[0];
        let hw = self.img_hw;
        let mut x = t.reshape(obs, &[m, 3, hw, hw]);
        for (i, &(w, b)) in self.convs.iter().enumerate() {
            let wp = t.param(w);
            let bp = t.param(b);
            x = t.conv2d(x, wp, bp, 2, 1);
            let _ = i;
            x = t.silu(x);
        }
        let flat_len: usize = t.shape(x)[1..].iter().product();
        let flat = t.reshape(x, &[m, flat_len]);
        self.fc.forward(t, flat)
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut p: Vec<ParamId> = self.convs.iter().flat_map(|&(w, b)| [w, b]).collect();
        p.extend(self.fc.params());
        p
    }
}

/// Mirror of [`ConvEncoder`]: linear to a 4x4-or-smaller feature map, then
/// stride-2 transposed convolutions back to a 3-channel image (linear output,
/// interpreted in symlog pixel space).
#[derive(Debug, Clone)]
pub struct ConvDecoder {
    fc: Linear,
    deconvs: Vec<(ParamId, ParamId)>,
    pub img_hw: usize,
    start_spatial: usize,
    start_channels: usize,
}

impl ConvDecoder {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        img_hw: usize,
        base_channels: usize,
        input_dim: usize,
        rng: &mut Rng,
    ) -> Self {
        let stages = encoder_stages(img_hw);
        let mut channels = vec![3];
        for s in 0..stages {
            channels.push(base_channels << s.min(3));
        }
        let start_spatial = img_hw >> stages;
        let start_channels = channels[stages];
        let fc = Linear::new(
            store,
            &format!("{name}.fc"),
            input_dim,
            start_channels * start_spatial * start_spatial,
            rng,
        );
        let mut deconvs = Vec::new();
        for s in (0..stages).rev() {
            let (cin, cout) = (channels[s + 1], channels[s]);
            let fan_in = cin * 16;
            let std = 1.0 / (fan_in as f64).sqrt();
            let mut w = vec![0.0; cin * cout * 16];
            for v in &mut w {
                *v = quantize(rng.normal() * std);
            }
            let w = store.alloc(&format!("{name}.deconv{s}.w"), &[cin, cout, 4, 4], w);
            let b = store.alloc(&format!("{name}.deconv{s}.b"), &[cout], vec![0.0; cout]);
            deconvs.push((w, b));
        }
        Self {
            fc,
            deconvs,
            img_hw,
            start_spatial,
            start_channels,
        }
    }

    /// `[m, input_dim]` -> `[m, 3*hw*hw]` in symlog pixel space.
    pub fn forward(&self, t: &mut Tape, z: Id) -> Id {
        let m = t.shape(z)[0];
        let h = self.fc.forward(t, z);
        let h = t.silu(h);
        let mut x = t.reshape(h, &[m, self.start_channels, self.start_spatial, self.start_spatial]);
        let n = self.deconvs.len();
        for (i, &(w, b)) in self.deconvs.iter().enumerate() {
            let wp = t.param(w);
            let bp = t.param(b);
            x = t.conv2d_transpose(x, wp, bp, 2, 1);
            if i + 1 < n {
                x = t.silu(x);
            }
        }
        let hw = self.img_hw;
        t.reshape(x, &[m, 3 * hw * hw])
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut p = self.fc.params();
        p.extend(self.deconvs.iter().flat_map(|&(w, b)| [w, b]));
        p
    }
}

/// Number of stride-2 stages that bring `img_hw` down to a 4px (or smaller)
/// feature map: 64 -> 4, 32 -> 3, 16 -> 2, 8 -> 1.
pub fn encoder_stages(img_hw: usize) -> usize {
    assert!(img_hw >= 8 && img_hw.is_power_of_two(), "image size must be a power of two >= 8");
    let mut stages = 0;
    let mut s = img_hw;
    while s > 4 {
        s /= 2;
        stages += 1;
    }
    stages
}

/// Adam with global gradient-norm clipping, applied to one parameter group.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub clip: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    ids: Vec<ParamId>,
}

impl Adam {
    pub fn new(store: &ParamStore, ids: Vec<ParamId>, lr: f64, clip: f64) -> Self {
        let m = ids.iter().map(|&id| vec![0.0; store.value(id).len()]).collect();
        let v = ids.iter().map(|&id| vec![0.0; store.value(id).len()]).collect();
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip,
            step: 0,
            m,
            v,
            ids,
        }
    }

    pub fn ids(&self) -> &[ParamId] {
        &self.ids
    }

    /// Applies one update from the given gradients. Gradients missing for a
    /// parameter are treated as zero. Returns the pre-clip gradient norm.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Grads) -> f64 {
        self.step += 1;
        let mut norm_sq = 0.0;
        for &id in &self.ids {
            if let Some(g) = grads.get(id) {
                norm_sq += g.iter().map(|&x| x * x).sum::<f64>();
            }
        }
        let norm = norm_sq.sqrt();
        let scale = if norm > self.clip { self.clip / norm } else { 1.0 };

        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (slot, &id) in self.ids.iter().enumerate() {
            let g = match grads.get(id) {
                Some(g) => g,
                None => continue,
            };
            let m = &mut self.m[slot];
            let v = &mut self.v[slot];
            let data = store.value_mut(id);
            for i in 0..data.len() {
                let gi = g[i] * scale;
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                data[i] = quantize(data[i] - self.lr * mhat / (vhat.sqrt() + self.eps));
            }
        }
        norm
    }
}

/// Cosine similarity per row between two `[m, d]` matrices, on tape.
pub fn rowwise_cosine(t: &mut Tape, a: Id, b: Id) -> Id {
    let prod = t.mul(a, b);
    let dot = t.row_sum(prod);
    let aa = t.mul(a, a);
    let na2 = t.row_sum(aa);
    let na = t.sqrt(na2);
    let bb = t.mul(b, b);
    let nb2 = t.row_sum(bb);
    let nb = t.sqrt(nb2);
    let denom = t.mul(na, nb);
    t.div(dot, denom)
}

/// Rounds through f32; parameters are kept at serialized precision.
pub fn quantize(x: f64) -> f64 {
    x as f32 as f64
}

pub fn quantize_store(store: &mut ParamStore) {
    let ids: Vec<ParamId> = store.ids().collect();
    for id in ids {
        for v in store.value_mut(id) {
            *v = quantize(*v);
        }
    }
}
