use std::collections::HashMap;

use super::{ArModel, SamplingError, ScoreVector};
use crate::params::QuantizedParams;

/// Additively smoothed n-gram over flattened token sequences.
///
/// The context is the previous `order - 1` tokens (fewer near the start)
/// together with the position modulo `period`, so a frame-major sequence
/// keeps a separate distribution per codec stage. Conditioning is ignored.
#[derive(Debug, Clone)]
pub struct NgramModel {
    order: usize,
    vocab: usize,
    period: usize,
    alpha: f64,
    counts: HashMap<(usize, Vec<u16>), Vec<u32>>,
}

impl NgramModel {
    pub fn train(corpus: &[Vec<u16>], order: usize, vocab: usize, period: usize, alpha: f64) -> Result<Self, SamplingError> {
        if order == 0 || vocab == 0 || period == 0 {
            return Err(SamplingError::Config("order, vocabulary and period must be positive".into()));
        }
        if !(alpha > 0.0) {
            return Err(SamplingError::Config(format!("smoothing must be > 0, got {alpha}")));
        }
        if corpus.iter().all(Vec::is_empty) {
            return Err(SamplingError::Config("n-gram corpus is empty".into()));
        }
        let mut counts: HashMap<(usize, Vec<u16>), Vec<u32>> = HashMap::new();
        for seq in corpus {
            for (i, &tok) in seq.iter().enumerate() {
                if tok as usize >= vocab {
                    return Err(SamplingError::Config(format!("token {tok} outside vocabulary {vocab}")));
                }
                let ctx = seq[i.saturating_sub(order - 1)..i].to_vec();
                counts.entry((i % period, ctx)).or_insert_with(|| vec![0; vocab])[tok as usize] += 1;
            }
        }
        Ok(Self { order, vocab, period, alpha, counts })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// Normalised log-probabilities of the next token.
    pub fn log_probs(&self, prefix: &[u16]) -> ScoreVector {
        let i = prefix.len();
        let ctx = &prefix[i.saturating_sub(self.order - 1)..];
        let denom_extra = self.alpha * self.vocab as f64;
        match self.counts.get(&(i % self.period, ctx.to_vec())) {
            Some(c) => {
                let total: f64 = c.iter().map(|&v| v as f64).sum::<f64>() + denom_extra;
                c.iter().map(|&v| ((v as f64 + self.alpha) / total).ln()).collect()
            }
            None => vec![-(self.vocab as f64).ln(); self.vocab],
        }
    }

    /// Per-token perplexity of `seq`.
    pub fn perplexity(&self, seq: &[u16]) -> f64 {
        if seq.is_empty() {
            return f64::NAN;
        }
        let nll: f64 = (0..seq.len()).map(|i| -self.log_probs(&seq[..i])[seq[i] as usize]).sum();
        (nll / seq.len() as f64).exp()
    }
}

impl ArModel for NgramModel {
    fn vocab_size(&self) -> usize {
        self.vocab
    }

    fn scores(&self, prefix: &[u16], _condition: Option<&QuantizedParams>) -> Result<ScoreVector, SamplingError> {
        Ok(self.log_probs(prefix))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::log_softmax;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn repeated_token_dominates() {
        let m = NgramModel::train(&[vec![3; 50]], 1, 6, 1, 0.1).unwrap();
        for prefix in [vec![], vec![0, 1], vec![5; 7]] {
            let s = m.log_probs(&prefix);
            let arg = (0..6).max_by(|&a, &b| s[a].total_cmp(&s[b])).unwrap();
            assert_eq!(arg, 3);
        }
    }

    #[test]
    fn scores_are_normalised() {
        let m = NgramModel::train(&[vec![0, 1, 2, 1, 0, 2, 2]], 2, 4, 1, 0.5).unwrap();
        for prefix in [vec![], vec![2], vec![1, 3]] {
            let s = m.log_probs(&prefix);
            let total: f64 = log_softmax(&s).iter().map(|v| v.exp()).sum();
            assert!((total - 1.0).abs() < 1e-9);
            let direct: f64 = s.iter().map(|v| v.exp()).sum();
            assert!((direct - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn bigram_beats_unigram_on_markov_data() {
        // A sticky order-2 chain: stay with probability 0.8, else jump uniformly.
        let chain = |seed: u64, n: usize| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut x = 0u16;
            (0..n)
                .map(|_| {
                    if !rng.random_bool(0.8) {
                        x = rng.random_range(0..5);
                    }
                    x
                })
                .collect::<Vec<u16>>()
        };
        let train = vec![chain(1, 5000)];
        let held = chain(2, 2000);
        let uni = NgramModel::train(&train, 1, 5, 1, 0.1).unwrap();
        let bi = NgramModel::train(&train, 2, 5, 1, 0.1).unwrap();
        assert!(bi.perplexity(&held) <= uni.perplexity(&held));
    }

    #[test]
    fn empty_corpus_is_rejected() {
        assert!(matches!(NgramModel::train(&[], 2, 4, 1, 0.1), Err(SamplingError::Config(_))));
        assert!(matches!(NgramModel::train(&[vec![]], 2, 4, 1, 0.1), Err(SamplingError::Config(_))));
    }
}
