//! Shared numeric kernels: symlog transforms, categorical and squashed-Gaussian
//! distribution math, cosine similarity, percentiles, and PEMA return
//! normalization. Everything here is pure `f64` math with no learned state;
//! the autodiff tape re-derives the differentiable variants it needs.

use std::sync::atomic::{AtomicBool, Ordering};

/// Sign-preserving logarithmic compression: `sign(x) * ln(|x| + 1)`.
pub fn symlog(x: f64) -> f64 {
    if x >= 0.0 {
        (x + 1.0).ln()
    } else {
        -((-x + 1.0).ln())
    }
}

/// Inverse of [`symlog`]: `sign(y) * (exp(|y|) - 1)`.
pub fn symexp(y: f64) -> f64 {
    if y >= 0.0 {
        y.exp() - 1.0
    } else {
        -((-y).exp() - 1.0)
    }
}

/// Checked variant used at module boundaries; rejects non-finite input.
pub fn symlog_checked(x: f64) -> Result<f64, String> {
    if !x.is_finite() {
        return Err(format!("symlog: non-finite input {x}"));
    }
    Ok(symlog(x))
}

static COSINE_WARNED: AtomicBool = AtomicBool::new(false);

/// Cosine similarity of two equal-length vectors, in [-1, 1].
///
/// A zero-norm argument yields similarity 0 (degenerate latents can occur at
/// initialization and must not abort training); the first such occurrence is
/// logged to stderr.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "cosine_similarity: length mismatch");
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        if !COSINE_WARNED.swap(true, Ordering::Relaxed) {
            eprintln!("warning: cosine_similarity on zero-norm vector, returning 0");
        }
        return 0.0;
    }
    let sim = dot / (na.sqrt() * nb.sqrt());
    sim.clamp(-1.0, 1.0)
}

/// Percentile with linear interpolation between order statistics.
///
/// `q` is in [0, 100]. Input order does not matter; the slice is copied and
/// sorted internally.
pub fn percentile(values: &[f64], q: f64) -> f64 {
    assert!(!values.is_empty(), "percentile of empty slice");
    assert!((0.0..=100.0).contains(&q), "percentile q out of range");
    let mut v: Vec<f64> = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("percentile: NaN in input"));
    let rank = q / 100.0 * (v.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    if lo == hi {
        v[lo]
    } else {
        let w = rank - lo as f64;
        v[lo] * (1.0 - w) + v[hi] * w
    }
}

/// Running exponential moving average of the 5th-95th percentile return range,
/// used to normalize advantages. The first observation initializes the EMA
/// directly; the divisor never drops below 1.
#[derive(Debug, Clone, PartialEq)]
pub struct PemaState {
    pub range_ema: f64,
    pub decay: f64,
    pub initialized: bool,
}

impl PemaState {
    pub fn new(decay: f64) -> Self {
        assert!(decay > 0.0 && decay < 1.0, "pema decay must be in (0,1)");
        Self {
            range_ema: 0.0,
            decay,
            initialized: false,
        }
    }

    /// Folds the current batch's percentile spread into the EMA and returns
    /// the updated state's divisor `max(1, range_ema)`.
    pub fn update(&mut self, returns: &[f64]) -> f64 {
        let spread = percentile(returns, 95.0) - percentile(returns, 5.0);
        if self.initialized {
            self.range_ema = self.decay * self.range_ema + (1.0 - self.decay) * spread;
        } else {
            self.range_ema = spread;
            self.initialized = true;
        }
        self.range_ema.max(1.0)
    }
}

/// Normalizes `(returns - values) / max(1, S)` where `S` is the freshly
/// updated percentile range EMA. Returns the normalized vector and the
/// updated state.
pub fn pema_normalize(
    returns: &[f64],
    values: &[f64],
    state: &PemaState,
) -> (Vec<f64>, PemaState) {
    assert_eq!(returns.len(), values.len(), "pema_normalize: length mismatch");
    assert!(!returns.is_empty(), "pema_normalize: empty input");
    let mut next = state.clone();
    let divisor = next.update(returns);
    let normalized = returns
        .iter()
        .zip(values)
        .map(|(&g, &v)| (g - v) / divisor)
        .collect();
    (normalized, next)
}

/// A vector of `k` discrete distributions with `c` classes each: logits,
/// row-stochastic probabilities, and a one-hot sample per row.
#[derive(Debug, Clone)]
pub struct CategoricalCode {
    pub k: usize,
    pub c: usize,
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
    pub sample: Vec<f64>,
}

impl CategoricalCode {
    /// Builds probabilities from logits and draws one straight-through sample
    /// per row using the provided uniform noise (one draw in [0,1) per row).
    pub fn from_logits(k: usize, c: usize, logits: &[f64], row_noise: &[f64]) -> Self {
        assert!(k >= 1 && c >= 2, "categorical code needs k >= 1, c >= 2");
        assert_eq!(logits.len(), k * c, "logits length mismatch");
        assert_eq!(row_noise.len(), k, "noise length mismatch");
        let probs = softmax_rows(logits, k, c);
        let sample = sample_onehot_rows(&probs, k, c, row_noise);
        Self {
            k,
            c,
            logits: logits.to_vec(),
            probs,
            sample,
        }
    }

    /// Deterministic variant whose "sample" is the probability vector itself;
    /// used by gradient checks and the soft-similarity path.
    pub fn from_logits_soft(k: usize, c: usize, logits: &[f64]) -> Self {
        let probs = softmax_rows(logits, k, c);
        Self {
            k,
            c,
            logits: logits.to_vec(),
            probs: probs.clone(),
            sample: probs,
        }
    }

    /// Sum over rows of `KL(p_row || q_row)`; non-negative, zero iff equal.
    pub fn kl(&self, other: &CategoricalCode) -> f64 {
        assert!(
            self.k == other.k && self.c == other.c,
            "categorical kl: mismatched shapes ({}x{} vs {}x{})",
            self.k,
            self.c,
            other.k,
            other.c
        );
        categorical_kl(&self.probs, &other.probs)
    }

    /// Sum over rows of the Shannon entropy, in [0, k ln c].
    pub fn entropy(&self) -> f64 {
        categorical_entropy(&self.probs)
    }
}

/// Row-wise softmax over a `k x c` logits matrix (row-major).
pub fn softmax_rows(logits: &[f64], k: usize, c: usize) -> Vec<f64> {
    assert_eq!(logits.len(), k * c);
    let mut out = vec![0.0; k * c];
    for row in 0..k {
        let l = &logits[row * c..(row + 1) * c];
        let m = l.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for (j, &v) in l.iter().enumerate() {
            let e = (v - m).exp();
            out[row * c + j] = e;
            z += e;
        }
        for j in 0..c {
            out[row * c + j] /= z;
        }
    }
    out
}

/// Draws one one-hot sample per row by inverse CDF on the given uniforms.
pub fn sample_onehot_rows(probs: &[f64], k: usize, c: usize, row_noise: &[f64]) -> Vec<f64> {
    let mut sample = vec![0.0; k * c];
    for row in 0..k {
        let u = row_noise[row];
        let mut acc = 0.0;
        let mut idx = c - 1;
        for j in 0..c {
            acc += probs[row * c + j];
            if u < acc {
                idx = j;
                break;
            }
        }
        sample[row * c + idx] = 1.0;
    }
    sample
}

/// Sum over rows of KL between two row-stochastic matrices of equal shape.
pub fn categorical_kl(p: &[f64], q: &[f64]) -> f64 {
    assert_eq!(p.len(), q.len());
    let mut kl = 0.0;
    for (&pi, &qi) in p.iter().zip(q) {
        if pi > 0.0 {
            kl += pi * (pi.ln() - qi.max(1e-300).ln());
        }
    }
    kl.max(0.0)
}

/// Sum over rows of Shannon entropy of a row-stochastic matrix.
pub fn categorical_entropy(p: &[f64]) -> f64 {
    let mut h = 0.0;
    for &pi in p {
        if pi > 0.0 {
            h -= pi * pi.ln();
        }
    }
    h
}

/// Diagonal Gaussian squashed through tanh; `mean` and strictly positive
/// `scale` per dimension. Samples lie in (-1, 1).
#[derive(Debug, Clone)]
pub struct SquashedGaussian {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

pub const ATANH_CLAMP: f64 = 1.0 - 1e-6;

impl SquashedGaussian {
    pub fn new(mean: Vec<f64>, scale: Vec<f64>) -> Result<Self, String> {
        if mean.len() != scale.len() {
            return Err("squashed gaussian: mean/scale length mismatch".into());
        }
        if scale.iter().any(|&s| s <= 0.0 || !s.is_finite()) {
            return Err("squashed gaussian: scale must be strictly positive".into());
        }
        Ok(Self { mean, scale })
    }

    /// Log-density of a squashed action: Gaussian log-density at atanh(a)
    /// minus the tanh change-of-variable correction. Actions are clamped to
    /// +-(1 - 1e-6) before atanh.
    pub fn log_prob(&self, action: &[f64]) -> f64 {
        assert_eq!(action.len(), self.mean.len());
        let mut lp = 0.0;
        for ((&a, &mu), &sig) in action.iter().zip(&self.mean).zip(&self.scale) {
            let a = a.clamp(-ATANH_CLAMP, ATANH_CLAMP);
            let u = a.atanh();
            let z = (u - mu) / sig;
            lp += -0.5 * (2.0 * std::f64::consts::PI).ln() - sig.ln() - 0.5 * z * z;
            lp -= (1.0 - a * a).ln();
        }
        lp
    }

    /// Entropy of the pre-squash Gaussian: `sum_d 0.5 ln(2 pi scale_d^2) + 0.5`.
    pub fn base_entropy(&self) -> f64 {
        self.scale
            .iter()
            .map(|&s| 0.5 * (2.0 * std::f64::consts::PI * s * s).ln() + 0.5)
            .sum()
    }

    /// Reparameterized sample: `tanh(mean + scale * noise)`, kept strictly
    /// inside (-1, 1) so atanh stays finite (f64 tanh saturates to 1 exactly
    /// for large arguments).
    pub fn rsample(&self, noise: &[f64]) -> Vec<f64> {
        assert_eq!(noise.len(), self.mean.len());
        self.mean
            .iter()
            .zip(&self.scale)
            .zip(noise)
            .map(|((&mu, &sig), &e)| (mu + sig * e).tanh().clamp(-ATANH_CLAMP, ATANH_CLAMP))
            .collect()
    }

    /// Deterministic evaluation action: `tanh(mean)`.
    pub fn mode(&self) -> Vec<f64> {
        self.mean
            .iter()
            .map(|&mu| mu.tanh().clamp(-ATANH_CLAMP, ATANH_CLAMP))
            .collect()
    }
}

/// Gaussian differential entropy for a scalar standard deviation.
pub fn gaussian_entropy(sigma: f64) -> f64 {
    0.5 * (2.0 * std::f64::consts::PI * sigma * sigma).ln() + 0.5
}

/// Digamma function for positive half-integer arguments `n/2`, `n >= 1`.
/// Only this family is needed (chi-square log-moment corrections).
pub fn digamma_half_integer(two_x: u32) -> f64 {
    const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;
    assert!(two_x >= 1, "digamma argument must be >= 1/2");
    if two_x % 2 == 0 {
        // psi(m) = -gamma + sum_{k=1}^{m-1} 1/k
        let m = two_x / 2;
        let mut s = -EULER_GAMMA;
        for k in 1..m {
            s += 1.0 / k as f64;
        }
        s
    } else {
        // psi(m + 1/2) = -gamma - 2 ln 2 + 2 sum_{k=1}^{m} 1/(2k-1)
        let m = (two_x - 1) / 2;
        let mut s = -EULER_GAMMA - 2.0 * std::f64::consts::LN_2;
        for k in 1..=m {
            s += 2.0 / (2.0 * k as f64 - 1.0);
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symlog_fixed_points() {
        assert_eq!(symlog(0.0), 0.0);
        let e = std::f64::consts::E;
        assert!((symlog(e - 1.0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn symlog_symexp_inverse_pair() {
        let x = -12_345.678;
        let rt = symexp(symlog(x));
        assert!((rt - x).abs() / x.abs() < 1e-9, "roundtrip drift: {rt}");
    }

    #[test]
    fn symlog_odd_and_monotone() {
        let xs = [-1e6, -3.7, -0.1, 0.0, 0.1, 3.7, 1e6];
        for &x in &xs {
            assert!((symlog(-x) + symlog(x)).abs() < 1e-12);
        }
        for w in xs.windows(2) {
            assert!(symlog(w[0]) < symlog(w[1]) || w[0] == w[1]);
            assert!(symexp(symlog(w[0])) <= symexp(symlog(w[1])) + 1e-12);
        }
    }

    #[test]
    fn symlog_checked_rejects_nonfinite() {
        assert!(symlog_checked(f64::NAN).is_err());
        assert!(symlog_checked(f64::INFINITY).is_err());
        assert!(symlog_checked(1.0).is_ok());
    }

    #[test]
    fn cosine_basics() {
        assert!((cosine_similarity(&[1.0, 0.0], &[0.0, 1.0])).abs() < 1e-12);
        assert!((cosine_similarity(&[1.0, 2.0], &[2.0, 4.0]) - 1.0).abs() < 1e-12);
        let v = [0.3, -1.2, 4.0];
        let neg: Vec<f64> = v.iter().map(|x| -x).collect();
        assert!((cosine_similarity(&v, &neg) + 1.0).abs() < 1e-12);
    }

    #[test]
    fn cosine_zero_norm_is_zero() {
        assert_eq!(cosine_similarity(&[0.0, 0.0], &[1.0, 2.0]), 0.0);
    }

    #[test]
    fn cosine_scale_invariant() {
        let a = [0.5, -2.0, 1.0];
        let b = [1.5, 0.3, -0.7];
        let a2: Vec<f64> = a.iter().map(|x| x * 17.0).collect();
        let s1 = cosine_similarity(&a, &b);
        let s2 = cosine_similarity(&a2, &b);
        assert!((s1 - s2).abs() < 1e-12);
    }

    #[test]
    fn categorical_kl_closed_forms() {
        // identical codes -> kl = 0
        let logits = [0.3, -0.7, 1.1, 0.0];
        let a = CategoricalCode::from_logits_soft(2, 2, &logits);
        let b = CategoricalCode::from_logits_soft(2, 2, &logits);
        assert!(a.kl(&b).abs() < 1e-12);

        // K=1, p=(1,0), q=(0.5,0.5) -> kl = ln 2
        let kl = categorical_kl(&[1.0, 0.0], &[0.5, 0.5]);
        assert!((kl - std::f64::consts::LN_2).abs() < 1e-9, "kl = {kl}");

        // K=1, uniform over C=4 -> entropy = ln 4
        let h = categorical_entropy(&[0.25; 4]);
        assert!((h - 4.0f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn categorical_sample_rows_are_onehot() {
        let logits: Vec<f64> = (0..12).map(|i| (i as f64) * 0.1 - 0.5).collect();
        let code = CategoricalCode::from_logits(3, 4, &logits, &[0.1, 0.5, 0.9]);
        for row in 0..3 {
            let r = &code.sample[row * 4..(row + 1) * 4];
            assert_eq!(r.iter().filter(|&&x| x == 1.0).count(), 1);
            assert_eq!(r.iter().filter(|&&x| x == 0.0).count(), 3);
            let p = &code.probs[row * 4..(row + 1) * 4];
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    #[should_panic(expected = "mismatched shapes")]
    fn categorical_kl_shape_mismatch_rejected() {
        let a = CategoricalCode::from_logits_soft(2, 2, &[0.0; 4]);
        let b = CategoricalCode::from_logits_soft(1, 4, &[0.0; 4]);
        let _ = a.kl(&b);
    }

    #[test]
    fn squashed_gaussian_closed_forms() {
        let g = SquashedGaussian::new(vec![0.0], vec![1.0]).unwrap();
        // D=1, mean=0, scale=1, action=0 -> log_prob = -0.918939
        let lp = g.log_prob(&[0.0]);
        assert!((lp - (-0.918_938_533_204_672_7)).abs() < 1e-9, "lp = {lp}");
        // D=1, scale=1 -> base_entropy = 1.418939
        let h = g.base_entropy();
        assert!((h - 1.418_938_533_204_672_7).abs() < 1e-9, "h = {h}");
    }

    #[test]
    fn squashed_gaussian_rsample_in_bounds() {
        let g = SquashedGaussian::new(vec![5.0, -5.0], vec![3.0, 0.1]).unwrap();
        for i in 0..100 {
            let e = (i as f64 - 50.0) / 10.0;
            let a = g.rsample(&[e, -e]);
            assert!(a.iter().all(|&x| x > -1.0 && x < 1.0));
        }
    }

    #[test]
    fn squashed_gaussian_rejects_bad_scale() {
        assert!(SquashedGaussian::new(vec![0.0], vec![0.0]).is_err());
        assert!(SquashedGaussian::new(vec![0.0], vec![-1.0]).is_err());
    }

    #[test]
    fn percentile_linear_interpolation() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert!((percentile(&v, 0.0) - 1.0).abs() < 1e-12);
        assert!((percentile(&v, 100.0) - 4.0).abs() < 1e-12);
        assert!((percentile(&v, 50.0) - 2.5).abs() < 1e-12);
    }

    #[test]
    fn pema_first_call_sets_ema_directly() {
        // spread 0.5 -> divisor max(1, 0.5) = 1 -> normalized = returns - values
        let returns = [0.0, 0.25, 0.5];
        let values = [0.1, 0.1, 0.1];
        let state = PemaState::new(0.99);
        let (norm, next) = pema_normalize(&returns, &values, &state);
        assert!(next.initialized);
        for (n, (&g, &v)) in norm.iter().zip(returns.iter().zip(&values)) {
            assert!((n - (g - v)).abs() < 1e-12);
        }
    }

    #[test]
    fn pema_shift_invariant() {
        let returns = [0.0, 1.0, 2.0, 10.0];
        let values = [0.5, 0.5, 0.5, 0.5];
        let state = PemaState::new(0.99);
        let (a, _) = pema_normalize(&returns, &values, &state);
        let rs: Vec<f64> = returns.iter().map(|x| x + 42.0).collect();
        let vs: Vec<f64> = values.iter().map(|x| x + 42.0).collect();
        let (b, _) = pema_normalize(&rs, &vs, &state);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn pema_divisor_from_spread() {
        let wide = [0.0, 10.0, 5.0, 2.5, 7.5, 1.0, 9.0, 4.0, 6.0, 3.0, 8.0];
        let spread = percentile(&wide, 95.0) - percentile(&wide, 5.0);
        assert!(spread > 1.0);
        let values = vec![0.0; wide.len()];
        let (norm, next) = pema_normalize(&wide, &values, &PemaState::new(0.99));
        assert!((next.range_ema - spread).abs() < 1e-12);
        for (n, &g) in norm.iter().zip(&wide) {
            assert!((n - g / spread).abs() < 1e-12);
        }
    }

    #[test]
    fn pema_output_bounded_by_raw_advantage() {
        let returns = [-30.0, 5.0, 80.0];
        let values = [1.0, 1.0, 1.0];
        let (norm, _) = pema_normalize(&returns, &values, &PemaState::new(0.99));
        for (n, (&g, &v)) in norm.iter().zip(returns.iter().zip(&values)) {
            assert!(n.abs() <= (g - v).abs() + 1e-12);
        }
    }

    #[test]
    fn digamma_half_integers() {
        const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;
        assert!((digamma_half_integer(2) - (-EULER_GAMMA)).abs() < 1e-12);
        assert!((digamma_half_integer(4) - (1.0 - EULER_GAMMA)).abs() < 1e-12);
        let psi_half = -EULER_GAMMA - 2.0 * std::f64::consts::LN_2;
        assert!((digamma_half_integer(1) - psi_half).abs() < 1e-12);
        assert!((digamma_half_integer(3) - (psi_half + 2.0)).abs() < 1e-12);
    }
}
