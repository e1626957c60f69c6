//! Residual vector quantisation codec over fixed-length waveform frames.
//!
//! Frames are non-overlapping, zero-padded blocks of `frame_len` samples.
//! Stage 0 quantises the frame, every later stage the residual left by the
//! stages before it. Every stage reserves code 0 for the zero vector, so
//! no stage increases the residual of any frame.

use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dsp::Waveform;

#[derive(Debug, Error)]
pub enum CodecError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("corrupt codegram: {0}")]
    CorruptCodegram(String),
    #[error("corrupt token sequence: {0}")]
    CorruptSequence(String),
    #[error("bad codec file: {0}")]
    Format(String),
    #[error("codec i/o: {0}")]
    Io(#[from] std::io::Error),
}

const CODEBOOK_MAGIC: &[u8; 4] = b"RVQ1";
const CODEGRAM_MAGIC: &[u8; 4] = b"CGR1";
const FINGERPRINT_LEN: usize = 32;

/// Training settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RvqConfig {
    pub num_stages: usize,
    pub codebook_size: usize,
    pub frame_len: usize,
    pub iterations: usize,
    pub seed: u64,
}

impl Default for RvqConfig {
    fn default() -> Self {
        Self { num_stages: 4, codebook_size: 256, frame_len: 512, iterations: 20, seed: 0 }
    }
}

impl RvqConfig {
    fn validate(&self) -> Result<(), CodecError> {
        if self.num_stages == 0 || self.frame_len == 0 {
            return Err(CodecError::Config("num_stages and frame_len must be positive".into()));
        }
        if !(2..=u16::MAX as usize + 1).contains(&self.codebook_size) {
            return Err(CodecError::Config(format!(
                "codebook_size must be in [2, 65536], got {}",
                self.codebook_size
            )));
        }
        Ok(())
    }
}

/// Trained codebooks: `num_stages` tables of `codebook_size` vectors of `frame_len` samples.
#[derive(Debug, Clone, PartialEq)]
pub struct RvqCodebooks {
    num_stages: usize,
    codebook_size: usize,
    frame_len: usize,
    sample_rate: u32,
    /// Stage-major, then code, then sample.
    vectors: Vec<f32>,
    trained_on: String,
}

/// An L x T matrix of code indices, stage-major.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Codegram {
    pub num_stages: usize,
    pub codebook_size: usize,
    /// `codes[stage][frame]`.
    pub codes: Vec<Vec<u16>>,
    /// Samples of real signal before zero padding.
    pub valid_len: usize,
}

/// Per-frame reconstructions before concatenation.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentSequence {
    pub frame_len: usize,
    pub frames: Vec<Vec<f64>>,
}

fn frames_of(x: &[f64], frame_len: usize) -> Vec<Vec<f64>> {
    let t = x.len().div_ceil(frame_len).max(1);
    (0..t)
        .map(|i| {
            let mut f = vec![0.0; frame_len];
            let start = i * frame_len;
            let end = (start + frame_len).min(x.len());
            if start < end {
                f[..end - start].copy_from_slice(&x[start..end]);
            }
            f
        })
        .collect()
}

fn sq_dist(a: &[f64], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(x, &c)| (x - c as f64).powi(2)).sum()
}

fn sq_dist64(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

/// Index of the nearest centroid; ties go to the lowest index.
fn nearest(x: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (k, c) in centroids.iter().enumerate() {
        let d = sq_dist64(x, c);
        if d < best.1 {
            best = (k, d);
        }
    }
    best
}

/// k-means++ seeding followed by Lloyd iterations. With `fixed_zero`,
/// centroid 0 is pinned at the origin.
fn kmeans(points: &[Vec<f64>], k: usize, iterations: usize, fixed_zero: bool, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let dim = points[0].len();
    let mut centroids: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut min_d: Vec<f64> = if fixed_zero {
        centroids.push(vec![0.0; dim]);
        points.iter().map(|p| p.iter().map(|v| v * v).sum()).collect()
    } else {
        let first = rng.random_range(0..points.len());
        centroids.push(points[first].clone());
        points.par_iter().map(|p| sq_dist64(p, &points[first])).collect()
    };
    while centroids.len() < k {
        let total: f64 = min_d.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random_range(0.0..total);
            let mut pick = points.len() - 1;
            for (i, &d) in min_d.iter().enumerate() {
                if u < d {
                    pick = i;
                    break;
                }
                u -= d;
            }
            pick
        } else {
            rng.random_range(0..points.len())
        };
        let c = points[pick].clone();
        min_d.par_iter_mut().zip(points.par_iter()).for_each(|(m, p)| *m = m.min(sq_dist64(p, &c)));
        centroids.push(c);
    }

    let start = usize::from(fixed_zero);
    for _ in 0..iterations {
        let assign: Vec<(usize, f64)> = points.par_iter().map(|p| nearest(p, &centroids)).collect();
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &(a, _)) in points.iter().zip(&assign) {
            counts[a] += 1;
            for (s, v) in sums[a].iter_mut().zip(p) {
                *s += v;
            }
        }
        // Empty clusters take the points worst served by their centroid.
        let mut worst: Vec<usize> = (0..points.len()).collect();
        worst.sort_by(|&a, &b| assign[b].1.total_cmp(&assign[a].1).then(a.cmp(&b)));
        let mut spare = worst.into_iter();
        let mut moved = false;
        for j in start..k {
            if counts[j] > 0 {
                let n = counts[j] as f64;
                let next: Vec<f64> = sums[j].iter().map(|s| s / n).collect();
                moved |= next != centroids[j];
                centroids[j] = next;
            } else if let Some(i) = spare.next() {
                centroids[j] = points[i].clone();
                moved = true;
            }
        }
        if !moved {
            break;
        }
    }
    centroids
}

fn fingerprint(chunks: &[Vec<f64>]) -> String {
    let mut h = Sha256::new();
    for c in chunks {
        for v in c {
            h.update(v.to_le_bytes());
        }
    }
    h.finalize()[..FINGERPRINT_LEN / 2].iter().map(|b| format!("{b:02x}")).collect()
}

/// Train codebooks stage by stage on the frames of `corpus`.
///
/// Deterministic given the configuration. The corpus must yield at least
/// ten frames per code.
pub fn train_rvq(corpus: &[Waveform], cfg: &RvqConfig) -> Result<RvqCodebooks, CodecError> {
    cfg.validate()?;
    let Some(first) = corpus.first() else {
        return Err(CodecError::Config("empty training corpus".into()));
    };
    let sample_rate = first.sample_rate();
    if corpus.iter().any(|w| w.sample_rate() != sample_rate) {
        return Err(CodecError::Config("training corpus mixes sample rates".into()));
    }
    let mut points: Vec<Vec<f64>> = corpus.iter().flat_map(|w| frames_of(w.samples(), cfg.frame_len)).collect();
    let need = 10 * cfg.codebook_size;
    if points.len() < need {
        return Err(CodecError::Config(format!(
            "training needs at least {need} frames of {} samples, corpus gives {}",
            cfg.frame_len,
            points.len()
        )));
    }
    let trained_on = fingerprint(&points);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut vectors = Vec::with_capacity(cfg.num_stages * cfg.codebook_size * cfg.frame_len);
    for stage in 0..cfg.num_stages {
        let centroids = kmeans(&points, cfg.codebook_size, cfg.iterations, true, &mut rng);
        // Store at file precision and quantise the residual with what is stored.
        let stored: Vec<Vec<f32>> =
            centroids.iter().map(|c| c.iter().map(|&v| v as f32).collect()).collect();
        points.par_iter_mut().for_each(|p| {
            let (k, _) = nearest_stored(p, &stored);
            for (v, &c) in p.iter_mut().zip(&stored[k]) {
                *v -= c as f64;
            }
        });
        vectors.extend(stored.into_iter().flatten());
        log::debug!("rvq stage {stage} trained");
    }
    Ok(RvqCodebooks {
        num_stages: cfg.num_stages,
        codebook_size: cfg.codebook_size,
        frame_len: cfg.frame_len,
        sample_rate,
        vectors,
        trained_on,
    })
}

fn nearest_stored(x: &[f64], book: &[Vec<f32>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (k, c) in book.iter().enumerate() {
        let d = sq_dist(x, c);
        if d < best.1 {
            best = (k, d);
        }
    }
    best
}

impl RvqCodebooks {
    /// Build from raw vectors, laid out stage, code, sample.
    pub fn from_vectors(
        num_stages: usize,
        codebook_size: usize,
        frame_len: usize,
        sample_rate: u32,
        vectors: Vec<f32>,
        trained_on: impl Into<String>,
    ) -> Result<Self, CodecError> {
        if num_stages == 0 || codebook_size == 0 || frame_len == 0 || codebook_size > u16::MAX as usize + 1 {
            return Err(CodecError::Format(format!(
                "bad shape L={num_stages} K={codebook_size} frame_len={frame_len}"
            )));
        }
        if vectors.len() != num_stages * codebook_size * frame_len {
            return Err(CodecError::Format(format!(
                "expected {} values, got {}",
                num_stages * codebook_size * frame_len,
                vectors.len()
            )));
        }
        if vectors.iter().any(|v| !v.is_finite()) {
            return Err(CodecError::Format("non-finite codebook value".into()));
        }
        Ok(Self { num_stages, codebook_size, frame_len, sample_rate, vectors, trained_on: trained_on.into() })
    }

    pub fn num_stages(&self) -> usize {
        self.num_stages
    }

    pub fn codebook_size(&self) -> usize {
        self.codebook_size
    }

    pub fn frame_len(&self) -> usize {
        self.frame_len
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    /// Fingerprint of the training frames.
    pub fn trained_on(&self) -> &str {
        &self.trained_on
    }

    pub fn vector(&self, stage: usize, code: usize) -> &[f32] {
        let start = (stage * self.codebook_size + code) * self.frame_len;
        &self.vectors[start..start + self.frame_len]
    }

    /// Number of frames a signal of `len` samples occupies.
    pub fn frames_for(&self, len: usize) -> usize {
        len.div_ceil(self.frame_len).max(1)
    }

    fn nearest_code(&self, stage: usize, x: &[f64]) -> usize {
        let mut best = (0, f64::INFINITY);
        for k in 0..self.codebook_size {
            let d = sq_dist(x, self.vector(stage, k));
            if d < best.1 {
                best = (k, d);
            }
        }
        best.0
    }

    fn check_rate(&self, w: &Waveform) -> Result<(), CodecError> {
        if w.sample_rate() != self.sample_rate {
            return Err(CodecError::Config(format!(
                "codebooks are for {} Hz, signal is {} Hz",
                self.sample_rate,
                w.sample_rate()
            )));
        }
        Ok(())
    }

    /// Nearest codevector per stage on the running residual, frame by frame.
    pub fn encode(&self, w: &Waveform) -> Result<Codegram, CodecError> {
        Ok(self.encode_with_residuals(w)?.0)
    }

    /// Encode and also return, per frame, the residual energy before stage 0
    /// and after each stage (`num_stages + 1` values).
    pub fn encode_with_residuals(&self, w: &Waveform) -> Result<(Codegram, Vec<Vec<f64>>), CodecError> {
        self.check_rate(w)?;
        let frames = frames_of(w.samples(), self.frame_len);
        let per_frame: Vec<(Vec<u16>, Vec<f64>)> = frames
            .into_par_iter()
            .map(|mut r| {
                let mut codes = Vec::with_capacity(self.num_stages);
                let mut energies = vec![r.iter().map(|v| v * v).sum::<f64>()];
                for stage in 0..self.num_stages {
                    let k = self.nearest_code(stage, &r);
                    for (v, &c) in r.iter_mut().zip(self.vector(stage, k)) {
                        *v -= c as f64;
                    }
                    codes.push(k as u16);
                    energies.push(r.iter().map(|v| v * v).sum());
                }
                (codes, energies)
            })
            .collect();
        let mut codes = vec![Vec::with_capacity(per_frame.len()); self.num_stages];
        let mut residuals = Vec::with_capacity(per_frame.len());
        for (c, e) in per_frame {
            for (row, k) in codes.iter_mut().zip(c) {
                row.push(k);
            }
            residuals.push(e);
        }
        let cg = Codegram { num_stages: self.num_stages, codebook_size: self.codebook_size, codes, valid_len: w.len() };
        Ok((cg, residuals))
    }

    fn check_codegram(&self, c: &Codegram) -> Result<(), CodecError> {
        c.validate()?;
        if c.num_stages != self.num_stages || c.codebook_size != self.codebook_size {
            return Err(CodecError::CorruptCodegram(format!(
                "codegram is L={} K={}, codebooks are L={} K={}",
                c.num_stages, c.codebook_size, self.num_stages, self.codebook_size
            )));
        }
        Ok(())
    }

    /// Per-frame sums of the codevectors of the first `stages` stages.
    pub fn reconstruct_latent_prefix(&self, c: &Codegram, stages: usize) -> Result<LatentSequence, CodecError> {
        self.check_codegram(c)?;
        let stages = stages.min(self.num_stages);
        let frames = (0..c.frames())
            .map(|t| {
                let mut f = vec![0.0; self.frame_len];
                for s in 0..stages {
                    for (v, &x) in f.iter_mut().zip(self.vector(s, c.codes[s][t] as usize)) {
                        *v += x as f64;
                    }
                }
                f
            })
            .collect();
        Ok(LatentSequence { frame_len: self.frame_len, frames })
    }

    pub fn reconstruct_latent(&self, c: &Codegram) -> Result<LatentSequence, CodecError> {
        self.reconstruct_latent_prefix(c, self.num_stages)
    }

    /// Concatenated frames, `frames * frame_len` samples (padding kept).
    pub fn decode(&self, c: &Codegram) -> Result<Waveform, CodecError> {
        self.decode_prefix(c, self.num_stages)
    }

    pub fn decode_prefix(&self, c: &Codegram, stages: usize) -> Result<Waveform, CodecError> {
        self.latent_to_waveform(&self.reconstruct_latent_prefix(c, stages)?)
    }

    pub fn latent_to_waveform(&self, z: &LatentSequence) -> Result<Waveform, CodecError> {
        let samples = z.concatenated()?;
        Waveform::new(samples, self.sample_rate).map_err(|e| CodecError::CorruptCodegram(e.to_string()))
    }

    /// Frames of `w` as a latent sequence (zero padded).
    pub fn frames_as_latent(&self, w: &Waveform) -> LatentSequence {
        LatentSequence { frame_len: self.frame_len, frames: frames_of(w.samples(), self.frame_len) }
    }

    pub fn write_to(&self, mut out: impl Write) -> Result<(), CodecError> {
        out.write_all(CODEBOOK_MAGIC)?;
        for v in [self.num_stages, self.codebook_size, self.frame_len, self.sample_rate as usize] {
            out.write_all(&(v as u32).to_le_bytes())?;
        }
        let mut fp = [b'0'; FINGERPRINT_LEN];
        let bytes = self.trained_on.as_bytes();
        let n = bytes.len().min(FINGERPRINT_LEN);
        fp[..n].copy_from_slice(&bytes[..n]);
        out.write_all(&fp)?;
        let mut buf = Vec::with_capacity(self.vectors.len() * 4);
        for v in &self.vectors {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        out.write_all(&buf)?;
        Ok(())
    }

    pub fn read_from(mut input: impl Read) -> Result<Self, CodecError> {
        let mut magic = [0u8; 4];
        input.read_exact(&mut magic)?;
        if &magic != CODEBOOK_MAGIC {
            return Err(CodecError::Format("not an RVQ1 codebook file".into()));
        }
        let mut h = [0u32; 4];
        for v in h.iter_mut() {
            *v = read_u32(&mut input)?;
        }
        let mut fp = [0u8; FINGERPRINT_LEN];
        input.read_exact(&mut fp)?;
        let trained_on = String::from_utf8(fp.to_vec()).map_err(|_| CodecError::Format("bad fingerprint".into()))?;
        let (l, k, f) = (h[0] as usize, h[1] as usize, h[2] as usize);
        let count = l
            .checked_mul(k)
            .and_then(|n| n.checked_mul(f))
            .ok_or_else(|| CodecError::Format("header overflows".into()))?;
        let mut raw = Vec::new();
        input.read_to_end(&mut raw)?;
        if raw.len() != count * 4 {
            return Err(CodecError::Format(format!("expected {} data bytes, found {}", count * 4, raw.len())));
        }
        let vectors = raw.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect();
        Self::from_vectors(l, k, f, h[3], vectors, trained_on)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CodecError> {
        let f = std::fs::File::create(path)?;
        self.write_to(std::io::BufWriter::new(f))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CodecError> {
        Self::read_from(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

fn read_u32(r: &mut impl Read) -> Result<u32, CodecError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

impl LatentSequence {
    pub fn zeros(frames: usize, frame_len: usize) -> Self {
        Self { frame_len, frames: vec![vec![0.0; frame_len]; frames] }
    }

    pub fn num_frames(&self) -> usize {
        self.frames.len()
    }

    pub fn concatenated(&self) -> Result<Vec<f64>, CodecError> {
        let mut out = Vec::with_capacity(self.frames.len() * self.frame_len);
        for f in &self.frames {
            if f.len() != self.frame_len {
                return Err(CodecError::CorruptCodegram(format!(
                    "latent frame has {} values, expected {}",
                    f.len(),
                    self.frame_len
                )));
            }
            if f.iter().any(|v| !v.is_finite()) {
                return Err(CodecError::CorruptCodegram("non-finite latent value".into()));
            }
            out.extend_from_slice(f);
        }
        Ok(out)
    }
}

impl Codegram {
    pub fn frames(&self) -> usize {
        self.codes.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<(), CodecError> {
        if self.codes.len() != self.num_stages || self.num_stages == 0 {
            return Err(CodecError::CorruptCodegram(format!(
                "expected {} stage rows, found {}",
                self.num_stages,
                self.codes.len()
            )));
        }
        let t = self.frames();
        for (s, row) in self.codes.iter().enumerate() {
            if row.len() != t {
                return Err(CodecError::CorruptCodegram(format!("stage {s} has {} frames, stage 0 has {t}", row.len())));
            }
            if let Some((f, &c)) = row.iter().enumerate().find(|(_, &c)| c as usize >= self.codebook_size) {
                return Err(CodecError::CorruptCodegram(format!(
                    "code {c} at stage {s}, frame {f} is outside [0, {})",
                    self.codebook_size
                )));
            }
        }
        Ok(())
    }

    /// Frame-major tokens: frame 0 stages 0..L-1, then frame 1, and so on.
    pub fn flatten(&self) -> Vec<u16> {
        (0..self.frames()).flat_map(|t| self.codes.iter().map(move |row| row[t])).collect()
    }

    /// Inverse of [`Codegram::flatten`].
    pub fn unflatten(tokens: &[u16], num_stages: usize, codebook_size: usize) -> Result<Self, CodecError> {
        if num_stages == 0 || tokens.len() % num_stages != 0 {
            return Err(CodecError::CorruptSequence(format!(
                "length {} is not a multiple of {num_stages} stages",
                tokens.len()
            )));
        }
        let t = tokens.len() / num_stages;
        let codes = (0..num_stages).map(|s| (0..t).map(|f| tokens[f * num_stages + s]).collect()).collect();
        let c = Self { num_stages, codebook_size, codes, valid_len: 0 };
        c.validate().map_err(|e| CodecError::CorruptSequence(e.to_string()))?;
        Ok(c)
    }

    /// Raw form: magic, L, T, K, valid_len as little-endian u32, then the
    /// codes as little-endian u16, stage-major.
    pub fn write_raw(&self, mut out: impl Write) -> Result<(), CodecError> {
        self.validate()?;
        out.write_all(CODEGRAM_MAGIC)?;
        for v in [self.num_stages, self.frames(), self.codebook_size, self.valid_len] {
            let v = u32::try_from(v).map_err(|_| CodecError::Format("header field exceeds u32".into()))?;
            out.write_all(&v.to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(self.num_stages * self.frames() * 2);
        for row in &self.codes {
            for c in row {
                buf.extend_from_slice(&c.to_le_bytes());
            }
        }
        out.write_all(&buf)?;
        Ok(())
    }

    pub fn read_raw(mut input: impl Read) -> Result<Self, CodecError> {
        let mut magic = [0u8; 4];
        input.read_exact(&mut magic)?;
        if &magic != CODEGRAM_MAGIC {
            return Err(CodecError::Format("not a CGR1 codegram file".into()));
        }
        let l = read_u32(&mut input)? as usize;
        let t = read_u32(&mut input)? as usize;
        let k = read_u32(&mut input)? as usize;
        let valid_len = read_u32(&mut input)? as usize;
        let mut raw = Vec::new();
        input.read_to_end(&mut raw)?;
        if raw.len() != l * t * 2 {
            return Err(CodecError::Format(format!("expected {} code bytes, found {}", l * t * 2, raw.len())));
        }
        let all: Vec<u16> = raw.chunks_exact(2).map(|b| u16::from_le_bytes([b[0], b[1]])).collect();
        let codes = if t == 0 { vec![Vec::new(); l] } else { all.chunks(t).map(<[u16]>::to_vec).collect() };
        let c = Self { num_stages: l, codebook_size: k, codes, valid_len };
        c.validate()?;
        Ok(c)
    }

    /// JSON when the path ends in `.json`, raw otherwise.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CodecError> {
        let path = path.as_ref();
        if path.extension().is_some_and(|e| e == "json") {
            self.validate()?;
            let s = serde_json::to_string(self).map_err(|e| CodecError::Format(e.to_string()))?;
            std::fs::write(path, s)?;
            Ok(())
        } else {
            self.write_raw(std::io::BufWriter::new(std::fs::File::create(path)?))
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CodecError> {
        let path = path.as_ref();
        if path.extension().is_some_and(|e| e == "json") {
            let c: Self = serde_json::from_str(&std::fs::read_to_string(path)?)
                .map_err(|e| CodecError::Format(e.to_string()))?;
            c.validate()?;
            Ok(c)
        } else {
            Self::read_raw(std::io::BufReader::new(std::fs::File::open(path)?))
        }
    }
}

/// Signal-to-error ratio in dB over the overlapping samples; infinite for an exact match.
pub fn snr_db(reference: &[f64], estimate: &[f64]) -> f64 {
    let n = reference.len().min(estimate.len());
    let sig: f64 = reference[..n].iter().map(|v| v * v).sum();
    let err: f64 = reference[..n].iter().zip(&estimate[..n]).map(|(a, b)| (a - b).powi(2)).sum();
    if err == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (sig / err).log10()
    }
}
