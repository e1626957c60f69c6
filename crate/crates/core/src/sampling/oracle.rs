//! Deterministic reference models for exercising the samplers.

use super::{log_softmax, ArModel, ClassifierModel, MaskedModel, SamplingError, ScoreVector, VelocityModel};
use crate::codec::{Codegram, LatentSequence};
use crate::dsp::{analyze, Waveform};
use crate::params::{slots, GridSet, QuantizedParams};

fn one_hot_scores(vocab: usize, hot: usize) -> ScoreVector {
    let mut s = vec![f64::NEG_INFINITY; vocab];
    s[hot] = 0.0;
    s
}

/// AR model that always puts all mass on the next token of a fixed sequence.
#[derive(Debug, Clone)]
pub struct FixedSequenceModel {
    pub sequence: Vec<u16>,
    pub vocab: usize,
}

impl ArModel for FixedSequenceModel {
    fn vocab_size(&self) -> usize {
        self.vocab
    }

    fn scores(&self, prefix: &[u16], _condition: Option<&QuantizedParams>) -> Result<ScoreVector, SamplingError> {
        let next = self
            .sequence
            .get(prefix.len())
            .ok_or_else(|| SamplingError::Shape(format!("no token after position {}", prefix.len())))?;
        Ok(one_hot_scores(self.vocab, *next as usize))
    }
}

/// Masked model that predicts a fixed codegram with full confidence.
#[derive(Debug, Clone)]
pub struct OracleMaskedModel {
    pub target: Codegram,
}

impl MaskedModel for OracleMaskedModel {
    fn predict(&self, codes: &[Vec<u16>], _condition: Option<&QuantizedParams>) -> Result<Vec<Vec<ScoreVector>>, SamplingError> {
        let t = &self.target;
        if codes.len() != t.num_stages || codes.first().map_or(0, Vec::len) != t.frames() {
            return Err(SamplingError::Shape("masked codegram does not match the oracle target".into()));
        }
        Ok((0..t.frames())
            .map(|f| (0..t.num_stages).map(|s| one_hot_scores(t.codebook_size, t.codes[s][f] as usize)).collect())
            .collect())
    }
}

/// Straight-path velocity toward a fixed latent: `(target - x) / (1 - t)`.
/// Euler integration from any start lands on the target.
#[derive(Debug, Clone)]
pub struct OracleVelocity {
    pub target: LatentSequence,
}

impl VelocityModel for OracleVelocity {
    fn velocity(&self, x: &LatentSequence, t: f64, _condition: Option<&QuantizedParams>) -> Result<LatentSequence, SamplingError> {
        if x.frames.len() != self.target.frames.len() {
            return Err(SamplingError::Shape("latent does not match the oracle target".into()));
        }
        let remaining = 1.0 - t;
        let frames = x
            .frames
            .iter()
            .zip(&self.target.frames)
            .map(|(xf, tf)| xf.iter().zip(tf).map(|(a, b)| (b - a) / remaining).collect())
            .collect();
        Ok(LatentSequence { frame_len: x.frame_len, frames })
    }
}

/// Linear field `v(x) = gain * x`.
#[derive(Debug, Clone, Copy)]
pub struct ScaledVelocity {
    pub gain: f64,
}

impl VelocityModel for ScaledVelocity {
    fn velocity(&self, x: &LatentSequence, _t: f64, _condition: Option<&QuantizedParams>) -> Result<LatentSequence, SamplingError> {
        Ok(LatentSequence {
            frame_len: x.frame_len,
            frames: x.frames.iter().map(|f| f.iter().map(|v| self.gain * v).collect()).collect(),
        })
    }
}

/// Classifier that analyses the partial RIR and scores classes by their
/// distance from the measured class: `log p(j) ~ -sharpness * |j - measured|`.
/// Slots the analysis cannot measure get a uniform distribution.
#[derive(Debug, Clone, Copy)]
pub struct OracleClassifier {
    pub grids: GridSet,
    pub sharpness: f64,
}

impl ClassifierModel for OracleClassifier {
    fn log_probs(&self, partial: &Waveform) -> Result<Vec<Vec<f64>>, SamplingError> {
        let measured = analyze(partial).ok();
        Ok(slots()
            .iter()
            .map(|s| {
                let grid = self.grids.get(s.kind);
                let n = grid.num_classes;
                let class = measured.as_ref().and_then(|p| s.value_in(p)).and_then(|v| grid.quantize(v).ok());
                match class {
                    Some(c) => log_softmax(
                        &(0..n).map(|j| -self.sharpness * (j as f64 - c as f64).abs()).collect::<Vec<_>>(),
                    ),
                    None => vec![-(n as f64).ln(); n],
                }
            })
            .collect())
    }
}
