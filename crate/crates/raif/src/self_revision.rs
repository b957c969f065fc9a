//! Post-episode preference rates.
//!
//! After an episode finishes, every step receives a scalar rate in [-1, 1]
//! that the preference model's contrastive loss is gated and weighted by.
//! Positive credit spreads backward from success steps with discount `alpha`
//! (quantized to zero below `epsilon`), expert steps are valued at full
//! weight, and failed episodes receive a backward negative decay with rate
//! `beta`. The first step of every episode is neutral.
//!
//! One deliberate deviation from the procedure as usually printed: the final
//! clip range is [-1, 1], not [0, 1]. A [0, 1] clip would erase every
//! negative rate, contradicting both the stated range of the rate and the
//! contrastive objective's need for a negative push on failed episodes.

/// Per-episode flags recorded while acting.
#[derive(Debug, Clone)]
pub struct EpisodeFlags {
    /// Step was driven by the scripted expert.
    pub expert: Vec<bool>,
    /// Goal was satisfied at this step.
    pub success: Vec<bool>,
    /// Goal was satisfied at least once in the episode.
    pub succeeded_once: bool,
}

impl EpisodeFlags {
    pub fn new(expert: Vec<bool>, success: Vec<bool>, succeeded_once: bool) -> Result<Self, String> {
        if expert.len() != success.len() {
            return Err("episode flags: expert/success length mismatch".into());
        }
        if success.iter().any(|&d| d) && !succeeded_once {
            return Err("episode flags: success step present but succeeded_once = false".into());
        }
        Ok(Self {
            expert,
            success,
            succeeded_once,
        })
    }

    pub fn len(&self) -> usize {
        self.expert.len()
    }

    pub fn is_empty(&self) -> bool {
        self.expert.is_empty()
    }
}

/// Rates controlling the backward credit passes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RevisionConfig {
    /// Successful discount rate.
    pub alpha: f64,
    /// Failure decay rate.
    pub beta: f64,
    /// Positive signal quantization threshold.
    pub epsilon: f64,
}

impl Default for RevisionConfig {
    fn default() -> Self {
        // Positive credit spans ~60 steps, negative ~100, at desk horizons.
        Self {
            alpha: 0.95,
            beta: 0.97,
            epsilon: 0.05,
        }
    }
}

impl RevisionConfig {
    pub fn validate(&self) -> Result<(), String> {
        for (name, v) in [
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("epsilon", self.epsilon),
        ] {
            if !(v > 0.0 && v < 1.0) {
                return Err(format!("revision config: {name} = {v} not in (0,1)"));
            }
        }
        Ok(())
    }
}

/// Computes the per-step preference rate for a finished episode.
///
/// The result is a pure function of the inputs: same flags and config give
/// bitwise-identical output.
pub fn compute_preference_rates(
    flags: &EpisodeFlags,
    cfg: &RevisionConfig,
) -> Result<Vec<f64>, String> {
    cfg.validate()?;
    let t_len = flags.len();
    if t_len == 0 {
        return Err("compute_preference_rates: empty episode".into());
    }
    let k = if flags.succeeded_once { 1.0 } else { 0.0 };

    // Expert flags only count inside successful episodes.
    let p: Vec<f64> = flags
        .expert
        .iter()
        .map(|&e| if e { k } else { 0.0 })
        .collect();
    let d: Vec<f64> = flags
        .success
        .iter()
        .map(|&s| if s { 1.0 } else { 0.0 })
        .collect();

    // Positive pass, decaying backward from the episode end.
    let mut m_pos = vec![0.0; t_len];
    let mut carry = p[t_len - 1].max(0.0);
    for t in (0..t_len).rev() {
        carry = (carry * cfg.alpha).max(d[t]);
        if carry < cfg.epsilon {
            carry = 0.0;
        }
        m_pos[t] = carry;
    }
    for t in 0..t_len {
        m_pos[t] = (p[t] + m_pos[t]).clamp(0.0, 1.0);
    }

    // Negative pass: plain geometric decay backward, suppressed entirely in
    // successful episodes and on expert steps.
    let mut m_neg = vec![0.0; t_len];
    let mut carry = -1.0 / cfg.beta;
    for t in (0..t_len).rev() {
        carry *= cfg.beta;
        m_neg[t] = carry;
    }
    for t in 0..t_len {
        m_neg[t] *= (1.0 - k) * (1.0 - p[t]);
    }

    let mut rho = vec![0.0; t_len];
    for t in 1..t_len {
        rho[t] = (m_pos[t] + m_neg[t]).clamp(-1.0, 1.0);
    }
    Ok(rho)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flags(expert: &[bool], success: &[bool]) -> EpisodeFlags {
        let k = success.iter().any(|&d| d);
        EpisodeFlags::new(expert.to_vec(), success.to_vec(), k).unwrap()
    }

    #[test]
    fn failed_episode_decays_negative() {
        let f = flags(&[false; 4], &[false; 4]);
        let cfg = RevisionConfig {
            alpha: 0.95,
            beta: 0.95,
            epsilon: 0.05,
        };
        let rho = compute_preference_rates(&f, &cfg).unwrap();
        let expected = [0.0, -0.9025, -0.95, -1.0];
        for (r, e) in rho.iter().zip(&expected) {
            assert!((r - e).abs() < 1e-12, "rho = {rho:?}");
        }
    }

    #[test]
    fn success_spreads_positive_credit_backward() {
        let f = flags(&[false; 5], &[false, false, true, false, false]);
        let cfg = RevisionConfig {
            alpha: 0.9,
            beta: 0.97,
            epsilon: 0.05,
        };
        let rho = compute_preference_rates(&f, &cfg).unwrap();
        let expected = [0.0, 0.9, 1.0, 0.0, 0.0];
        for (r, e) in rho.iter().zip(&expected) {
            assert!((r - e).abs() < 1e-12, "rho = {rho:?}");
        }
    }

    #[test]
    fn all_expert_all_success_saturates() {
        let f = flags(&[true; 6], &[true; 6]);
        let rho = compute_preference_rates(&f, &RevisionConfig::default()).unwrap();
        assert_eq!(rho[0], 0.0);
        for &r in &rho[1..] {
            assert_eq!(r, 1.0);
        }
    }

    #[test]
    fn quantization_cuts_off_geometric_tail() {
        // alpha = 0.9, eps = 0.05: 0.9^28 ~ 0.0523 survives, 0.9^29 ~ 0.0471 is cut.
        let t_len = 40;
        let mut success = vec![false; t_len];
        success[t_len - 1] = true;
        let f = flags(&vec![false; t_len], &success);
        let cfg = RevisionConfig {
            alpha: 0.9,
            beta: 0.97,
            epsilon: 0.05,
        };
        let rho = compute_preference_rates(&f, &cfg).unwrap();
        for offset in 0..t_len - 1 {
            let t = t_len - 1 - offset;
            if t == 0 {
                continue; // first step is pinned to 0
            }
            if offset <= 28 {
                assert!(
                    (rho[t] - 0.9f64.powi(offset as i32)).abs() < 1e-12,
                    "offset {offset}: rho = {}",
                    rho[t]
                );
            } else {
                assert_eq!(rho[t], 0.0, "offset {offset} should be quantized away");
            }
        }
    }

    #[test]
    fn first_step_always_neutral() {
        let f = flags(&[true, true], &[true, true]);
        let rho = compute_preference_rates(&f, &RevisionConfig::default()).unwrap();
        assert_eq!(rho[0], 0.0);
    }

    #[test]
    fn sign_structure_follows_outcome() {
        let cfg = RevisionConfig::default();
        let f_ok = flags(&[false, true, false], &[false, false, true]);
        for &r in &compute_preference_rates(&f_ok, &cfg).unwrap() {
            assert!(r >= 0.0);
        }
        let f_bad = flags(&[false, true, false], &[false, false, false]);
        let rho = compute_preference_rates(&f_bad, &cfg).unwrap();
        for &r in &rho {
            assert!(r <= 0.0);
        }
        assert_eq!(*rho.last().unwrap(), -1.0);
    }

    #[test]
    fn expert_flag_ignored_when_episode_failed() {
        // k = 0 masks expert flags, so negative decay applies on expert steps too.
        let cfg = RevisionConfig::default();
        let f = flags(&[false, true, false], &[false, false, false]);
        let g = flags(&[false, false, false], &[false, false, false]);
        assert_eq!(
            compute_preference_rates(&f, &cfg).unwrap(),
            compute_preference_rates(&g, &cfg).unwrap()
        );
    }

    #[test]
    fn empty_episode_rejected() {
        let f = EpisodeFlags::new(vec![], vec![], false).unwrap();
        assert!(compute_preference_rates(&f, &RevisionConfig::default()).is_err());
    }

    #[test]
    fn inconsistent_flags_rejected() {
        assert!(EpisodeFlags::new(vec![false], vec![true], false).is_err());
    }

    #[test]
    fn bad_config_rejected() {
        let f = flags(&[false], &[false]);
        let cfg = RevisionConfig {
            alpha: 1.0,
            beta: 0.5,
            epsilon: 0.1,
        };
        assert!(compute_preference_rates(&f, &cfg).is_err());
    }

    #[test]
    fn rates_bounded() {
        let cfg = RevisionConfig::default();
        for pattern in 0u32..64 {
            let expert: Vec<bool> = (0..3).map(|i| pattern >> i & 1 == 1).collect();
            let success: Vec<bool> = (0..3).map(|i| pattern >> (i + 3) & 1 == 1).collect();
            let f = flags(&expert, &success);
            let rho = compute_preference_rates(&f, &cfg).unwrap();
            for &r in &rho {
                assert!((-1.0..=1.0).contains(&r));
            }
        }
    }
}
