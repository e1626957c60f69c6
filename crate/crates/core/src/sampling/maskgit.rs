use std::f64::consts::FRAC_PI_2;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{cfg_combine, topk_sample_with_prob, SamplingError, ScoreVector};
use crate::codec::Codegram;
use crate::params::QuantizedParams;

/// Sentinel for a masked position.
pub const MASK: u16 = u16::MAX;

/// Model filling in masked frames of a codegram.
pub trait MaskedModel: Sync {
    /// Scores indexed `[frame][stage][token]` for the stage-major `codes`,
    /// where masked frames hold [`MASK`] in every stage. Rows for unmasked
    /// frames are ignored.
    fn predict(&self, codes: &[Vec<u16>], condition: Option<&QuantizedParams>)
        -> Result<Vec<Vec<ScoreVector>>, SamplingError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodegramShape {
    pub num_stages: usize,
    pub codebook_size: usize,
    pub frames: usize,
}

/// Cosine unmasking schedule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MaskSchedule {
    pub total_steps: usize,
}

impl Default for MaskSchedule {
    fn default() -> Self {
        Self { total_steps: 20 }
    }
}

impl MaskSchedule {
    /// `ceil(frames * cos(pi/2 * step / total_steps))`.
    pub fn cosine_count(&self, frames: usize, step: usize) -> usize {
        let x = frames as f64 * (FRAC_PI_2 * step as f64 / self.total_steps as f64).cos();
        (x - 1e-9).ceil().max(0.0) as usize
    }

    /// Masked-frame counts before step 1 through after the last step. Each
    /// step unmasks at least one frame and the last step unmasks the rest.
    pub fn counts(&self, frames: usize) -> Result<Vec<usize>, SamplingError> {
        let s = self.total_steps;
        if s == 0 {
            return Err(SamplingError::Config("mask schedule needs at least one step".into()));
        }
        if s > frames {
            return Err(SamplingError::Config(format!(
                "{s} steps cannot unmask {frames} frames with progress at every step"
            )));
        }
        let mut out = vec![frames];
        for step in 1..s {
            let prev = out[step - 1];
            out.push(self.cosine_count(frames, step).min(prev - 1).max(s - step));
        }
        out.push(0);
        Ok(out)
    }
}

/// Iterative parallel decoding from a fully masked codegram.
///
/// Every step predicts all masked frames, samples each stage, and commits
/// the frames with the highest confidence (product of the sampled tokens'
/// post-temperature probabilities; ties go to the lower frame index) until
/// the scheduled masked count is reached. Committed frames are never
/// re-predicted.
pub fn maskgit_generate(
    model: &dyn MaskedModel,
    condition: Option<&QuantizedParams>,
    shape: CodegramShape,
    schedule: &MaskSchedule,
    cfg_weight: f64,
    temperature: f64,
    rng: &mut impl Rng,
) -> Result<Codegram, SamplingError> {
    let counts = schedule.counts(shape.frames)?;
    if !(temperature > 0.0) {
        return Err(SamplingError::Config(format!("temperature must be > 0, got {temperature}")));
    }
    let (l, k) = (shape.num_stages, shape.codebook_size);
    if l == 0 || k == 0 || k > MASK as usize {
        return Err(SamplingError::Config(format!("bad codegram shape L={l} K={k}")));
    }
    let mut codes = vec![vec![MASK; shape.frames]; l];
    for step in 1..counts.len() {
        let fail = |e: SamplingError| SamplingError::Model { step, message: e.to_string() };
        let guided = cfg_weight != 0.0 && condition.is_some();
        let cond = model.predict(&codes, condition).map_err(fail)?;
        let uncond = if guided { Some(model.predict(&codes, None).map_err(fail)?) } else { None };

        let mut proposals: Vec<(usize, Vec<u16>, f64)> = Vec::new();
        for t in (0..shape.frames).filter(|&t| codes[0][t] == MASK) {
            let mut toks = Vec::with_capacity(l);
            let mut confidence = 0.0;
            for s in 0..l {
                let c = cond.get(t).and_then(|f| f.get(s)).filter(|v| v.len() == k);
                let c = c.ok_or_else(|| fail(SamplingError::Shape(format!("no {k} scores for frame {t}, stage {s}"))))?;
                let scores = match &uncond {
                    Some(u) => {
                        let u = u.get(t).and_then(|f| f.get(s)).ok_or_else(|| {
                            fail(SamplingError::Shape(format!("no unconditional scores for frame {t}, stage {s}")))
                        })?;
                        cfg_combine(c, u, cfg_weight)?
                    }
                    None => c.clone(),
                };
                let (tok, p) = topk_sample_with_prob(&scores, k, temperature, rng)?;
                toks.push(tok as u16);
                confidence += p.ln();
            }
            proposals.push((t, toks, confidence));
        }
        let commit = counts[step - 1] - counts[step];
        proposals.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)));
        for (t, toks, _) in proposals.into_iter().take(commit) {
            for (row, tok) in codes.iter_mut().zip(toks) {
                row[t] = tok;
            }
        }
    }
    let out = Codegram { num_stages: l, codebook_size: k, codes, valid_len: 0 };
    out.validate()?;
    Ok(out)
}
