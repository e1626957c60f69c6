//! Guided sampling over codec tokens and latents.
//!
//! Models are abstract traits; the samplers own all randomness. Scores are
//! unnormalised log-probabilities over the token vocabulary.

mod ar;
mod flow;
mod maskgit;
mod ngram;
mod oracle;

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::CodecError;
use crate::params::{slots, ParamKind};

pub use ar::{ar_generate, ArModel, ClassifierModel, Guidance};
pub use flow::{euler_sample, gaussian_latent, VelocityModel};
pub use maskgit::{maskgit_generate, CodegramShape, MaskSchedule, MaskedModel, MASK};
pub use ngram::NgramModel;
pub use oracle::{FixedSequenceModel, OracleClassifier, OracleMaskedModel, OracleVelocity, ScaledVelocity};

#[derive(Debug, Error)]
pub enum SamplingError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("degenerate distribution: {0}")]
    Degenerate(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("model failed at step {step}: {message}")]
    Model { step: usize, message: String },
    #[error("non-finite velocity at step {step}")]
    Divergence { step: usize },
    #[error(transparent)]
    Codec(#[from] CodecError),
}

/// Unnormalised log-probabilities over the vocabulary.
pub type ScoreVector = Vec<f64>;

/// `(1 + w) * cond - w * uncond`, elementwise.
pub fn cfg_combine(cond: &[f64], uncond: &[f64], w: f64) -> Result<ScoreVector, SamplingError> {
    if cond.len() != uncond.len() {
        return Err(SamplingError::Shape(format!(
            "conditional has {} scores, unconditional {}",
            cond.len(),
            uncond.len()
        )));
    }
    if w == 0.0 {
        return Ok(cond.to_vec());
    }
    Ok(cond.iter().zip(uncond).map(|(c, u)| (1.0 + w) * c - w * u).collect())
}

/// `lambda * ar + sum_k w_k * classifier_k`, elementwise and unnormalised.
pub fn cg_combine(ar: &[f64], classifier_terms: &[(ScoreVector, f64)], lambda: f64) -> Result<ScoreVector, SamplingError> {
    let mut out: Vec<f64> = ar.iter().map(|a| lambda * a).collect();
    for (i, (term, w)) in classifier_terms.iter().enumerate() {
        if term.len() != ar.len() {
            return Err(SamplingError::Shape(format!(
                "classifier term {i} has {} scores, expected {}",
                term.len(),
                ar.len()
            )));
        }
        if *w == 0.0 {
            continue;
        }
        for (o, t) in out.iter_mut().zip(term) {
            *o += w * t;
        }
    }
    Ok(out)
}

/// Default classifier weight for a parameter kind: 1/sqrt(3 N_b) with
/// N_b = 9 scopes (eight bands and broadband) for reverberation times,
/// 1/sqrt(2 N_b) for C80 and D50, and 1 for SRD.
pub fn default_classifier_weight(kind: ParamKind) -> f64 {
    const SCOPES: f64 = 9.0;
    match kind {
        ParamKind::T30 | ParamKind::T15 | ParamKind::Edt => 1.0 / (3.0 * SCOPES).sqrt(),
        ParamKind::C80 | ParamKind::D50 => 1.0 / (2.0 * SCOPES).sqrt(),
        ParamKind::Srd => 1.0,
    }
}

/// Default weight for every slot, keyed by slot name.
pub fn default_classifier_weights() -> BTreeMap<String, f64> {
    slots().iter().map(|s| (s.name(), default_classifier_weight(s.kind))).collect()
}

fn default_lambda() -> f64 {
    1.0
}

fn default_temperature() -> f64 {
    1.0
}

/// Knobs shared by the samplers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GuidanceConfig {
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default = "default_classifier_weights")]
    pub classifier_weights: BTreeMap<String, f64>,
    #[serde(default)]
    pub cfg_weight: f64,
    /// `None` keeps the whole vocabulary.
    #[serde(default)]
    pub top_k: Option<usize>,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        Self {
            lambda: default_lambda(),
            classifier_weights: default_classifier_weights(),
            cfg_weight: 0.0,
            top_k: None,
            temperature: default_temperature(),
        }
    }
}

impl GuidanceConfig {
    pub fn validate(&self, vocab: usize) -> Result<(), SamplingError> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(SamplingError::Config(format!("temperature must be > 0, got {}", self.temperature)));
        }
        if let Some(k) = self.top_k {
            if k == 0 || k > vocab {
                return Err(SamplingError::Config(format!("top_k must be in [1, {vocab}], got {k}")));
            }
        }
        if !(self.cfg_weight >= 0.0) {
            return Err(SamplingError::Config(format!("cfg weight must be >= 0, got {}", self.cfg_weight)));
        }
        let known = default_classifier_weights();
        if let Some(bad) = self.classifier_weights.keys().find(|k| !known.contains_key(*k)) {
            return Err(SamplingError::Config(format!("unknown classifier slot {bad:?}")));
        }
        Ok(())
    }

    pub fn top_k_for(&self, vocab: usize) -> usize {
        self.top_k.unwrap_or(vocab)
    }
}

/// Draw a token and return it with its post-temperature probability.
pub(crate) fn topk_sample_with_prob(
    scores: &[f64],
    top_k: usize,
    temperature: f64,
    rng: &mut impl Rng,
) -> Result<(usize, f64), SamplingError> {
    if top_k == 0 {
        return Err(SamplingError::Config("top_k must be at least 1".into()));
    }
    if !(temperature > 0.0) {
        return Err(SamplingError::Config(format!("temperature must be > 0, got {temperature}")));
    }
    if scores.iter().any(|s| s.is_nan() || *s == f64::INFINITY) {
        return Err(SamplingError::Degenerate("scores contain NaN or +inf".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order.truncate(top_k);
    let best = order.first().map(|&i| scores[i]).unwrap_or(f64::NEG_INFINITY);
    if best == f64::NEG_INFINITY {
        return Err(SamplingError::Degenerate("every candidate score is -inf".into()));
    }
    let weights: Vec<f64> = order.iter().map(|&i| ((scores[i] - best) / temperature).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut u = rng.random_range(0.0..total);
    for (&i, &w) in order.iter().zip(&weights) {
        if u < w {
            return Ok((i, w / total));
        }
        u -= w;
    }
    // Rounding can leave u just past the last positive weight.
    let (i, w) = order.iter().zip(&weights).rev().find(|(_, &w)| w > 0.0).expect("best weight is 1");
    Ok((*i, w / total))
}

/// Keep the `top_k` highest scores, divide by `temperature`, softmax and draw one index.
pub fn topk_sample(scores: &[f64], top_k: usize, temperature: f64, rng: &mut impl Rng) -> Result<usize, SamplingError> {
    topk_sample_with_prob(scores, top_k, temperature, rng).map(|(i, _)| i)
}

/// Log-softmax of `scores`.
pub fn log_softmax(scores: &[f64]) -> Vec<f64> {
    let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return scores.to_vec();
    }
    let lse = m + scores.iter().map(|s| (s - m).exp()).sum::<f64>().ln();
    scores.iter().map(|s| s - lse).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{prop_assert, proptest};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn cfg_examples() {
        assert_eq!(cfg_combine(&[1.0, 2.0], &[0.0, 0.0], 1.0).unwrap(), vec![2.0, 4.0]);
        assert_eq!(cfg_combine(&[0.3, -1.0], &[5.0, 7.0], 0.0).unwrap(), vec![0.3, -1.0]);
        assert!(matches!(cfg_combine(&[1.0], &[1.0, 2.0], 1.0), Err(SamplingError::Shape(_))));
    }

    #[test]
    fn cg_degenerates_to_ar() {
        let ar = vec![0.1, -2.0, 3.5];
        let terms = vec![(vec![9.0, 8.0, 7.0], 0.0), (vec![1.0, 1.0, 1.0], 0.0)];
        assert_eq!(cg_combine(&ar, &terms, 1.0).unwrap(), ar);
        let only = cg_combine(&ar, &[(vec![9.0, 8.0, 7.0], 1.0)], 0.0).unwrap();
        assert_eq!(only, vec![9.0, 8.0, 7.0]);
    }

    #[test]
    fn default_weights_follow_scope_count() {
        assert!((default_classifier_weight(ParamKind::T30) - 1.0 / 27f64.sqrt()).abs() < 1e-12);
        assert!((default_classifier_weight(ParamKind::Edt) - 0.19245).abs() < 1e-5);
        assert!((default_classifier_weight(ParamKind::D50) - 0.23570).abs() < 1e-5);
        assert_eq!(default_classifier_weight(ParamKind::Srd), 1.0);
        assert_eq!(default_classifier_weights().len(), crate::params::NUM_SLOTS);
    }

    #[test]
    fn top_one_is_argmax() {
        let scores = [0.2, 3.0, -1.0, 2.9];
        for seed in 0..50 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            assert_eq!(topk_sample(&scores, 1, 7.0, &mut rng).unwrap(), 1);
        }
    }

    #[test]
    fn uniform_scores_draw_uniformly() {
        let k = 8;
        let n = 10_000;
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut counts = vec![0usize; k];
        for _ in 0..n {
            counts[topk_sample(&vec![0.0; k], k, 1.0, &mut rng).unwrap()] += 1;
        }
        let p = 1.0 / k as f64;
        let sigma = (n as f64 * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!((c as f64 - n as f64 * p).abs() < 3.0 * sigma, "{c}");
        }
    }

    #[test]
    fn cold_temperature_concentrates_on_argmax() {
        let scores = [1.0, 0.9, 0.8, 0.5, 0.0];
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let hits = (0..10_000).filter(|_| topk_sample(&scores, 5, 0.01, &mut rng).unwrap() == 0).count();
        assert!(hits > 9_900, "{hits}");
    }

    #[test]
    fn all_minus_infinity_is_degenerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let r = topk_sample(&[f64::NEG_INFINITY; 3], 3, 1.0, &mut rng);
        assert!(matches!(r, Err(SamplingError::Degenerate(_))));
    }

    #[test]
    fn top_k_excludes_tail() {
        let scores = [5.0, 4.0, 0.0, 0.0];
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..1000 {
            assert!(topk_sample(&scores, 2, 10.0, &mut rng).unwrap() < 2);
        }
    }

    proptest! {
        #[test]
        fn cfg_is_identity_when_estimates_agree(v in proptest::collection::vec(-50.0f64..50.0, 1..20), w in 0.0f64..10.0) {
            let out = cfg_combine(&v, &v, w).unwrap();
            for (a, b) in out.iter().zip(&v) {
                prop_assert!((a - b).abs() <= 1e-9 * (1.0 + b.abs()));
            }
        }

        #[test]
        fn cg_is_linear_in_lambda(
            ar in proptest::collection::vec(-10.0f64..10.0, 4),
            t in proptest::collection::vec(-10.0f64..10.0, 4),
            l1 in -3.0f64..3.0,
            l2 in -3.0f64..3.0,
        ) {
            let terms = vec![(t, 0.4)];
            let a = cg_combine(&ar, &terms, l1 + l2).unwrap();
            let b = cg_combine(&ar, &terms, l1).unwrap();
            for i in 0..4 {
                prop_assert!((a[i] - (b[i] + l2 * ar[i])).abs() < 1e-9);
            }
        }
    }
}
