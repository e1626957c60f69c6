use serde::{Deserialize, Serialize};

use super::DspError;

/// Lowest sample rate accepted anywhere in the toolkit.
pub const MIN_SAMPLE_RATE: u32 = 8000;

/// A mono sample buffer with its sample rate.
///
/// Construction validates that the buffer is non-empty, finite and sampled
/// at no less than [`MIN_SAMPLE_RATE`].
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self, DspError> {
        if samples.is_empty() {
            return Err(DspError::InvalidWaveform("no samples".into()));
        }
        if sample_rate < MIN_SAMPLE_RATE {
            return Err(DspError::InvalidWaveform(format!(
                "sample rate {sample_rate} Hz is below {MIN_SAMPLE_RATE} Hz"
            )));
        }
        if let Some(i) = samples.iter().position(|x| !x.is_finite()) {
            return Err(DspError::InvalidWaveform(format!("non-finite sample at index {i}")));
        }
        Ok(Self { samples, sample_rate })
    }

    /// Build a waveform of `len` samples from a function of the sample index.
    pub fn from_fn(len: usize, sample_rate: u32, f: impl FnMut(usize) -> f64) -> Result<Self, DspError> {
        Self::new((0..len).map(f).collect(), sample_rate)
    }

    /// All-zero waveform of the given duration.
    pub fn silence(len: usize, sample_rate: u32) -> Result<Self, DspError> {
        Self::new(vec![0.0; len], sample_rate)
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0f64, |m, x| m.max(x.abs()))
    }

    /// Sum of squared samples.
    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|x| x * x).sum()
    }

    pub fn is_silent(&self) -> bool {
        self.peak() == 0.0
    }

    pub fn seconds_to_samples(&self, seconds: f64) -> usize {
        (seconds * self.sample_rate as f64).round() as usize
    }

    pub fn scaled(&self, gain: f64) -> Waveform {
        Waveform {
            samples: self.samples.iter().map(|x| x * gain).collect(),
            sample_rate: self.sample_rate,
        }
    }

    /// Scale so that the peak absolute amplitude is one. Silent input is returned unchanged.
    pub fn peak_normalized(&self) -> Waveform {
        let peak = self.peak();
        if peak > 0.0 {
            self.scaled(1.0 / peak)
        } else {
            self.clone()
        }
    }

    /// Samples from `start` to the end. `start` is clamped so at least one sample remains.
    pub fn tail_from(&self, start: usize) -> Waveform {
        let start = start.min(self.samples.len() - 1);
        Waveform {
            samples: self.samples[start..].to_vec(),
            sample_rate: self.sample_rate,
        }
    }

    /// Truncate or zero-pad to exactly `len` samples.
    pub fn with_len(&self, len: usize) -> Waveform {
        let mut samples = self.samples.clone();
        samples.resize(len.max(1), 0.0);
        Waveform { samples, sample_rate: self.sample_rate }
    }
}

/// Ordered list of band center frequencies for octave-band analysis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandSet {
    centers_hz: Vec<f64>,
}

impl BandSet {
    pub const OCTAVE_CENTERS_HZ: [f64; 8] = [63.0, 125.0, 250.0, 500.0, 1000.0, 2000.0, 4000.0, 8000.0];

    pub fn new(centers_hz: Vec<f64>) -> Result<Self, DspError> {
        if centers_hz.is_empty() {
            return Err(DspError::Config("band set is empty".into()));
        }
        if centers_hz.iter().any(|c| !c.is_finite() || *c <= 0.0) {
            return Err(DspError::Config("band centers must be positive".into()));
        }
        if centers_hz.windows(2).any(|w| w[1] <= w[0]) {
            return Err(DspError::Config("band centers must be strictly increasing".into()));
        }
        Ok(Self { centers_hz })
    }

    pub fn octaves() -> Self {
        Self { centers_hz: Self::OCTAVE_CENTERS_HZ.to_vec() }
    }

    pub fn centers_hz(&self) -> &[f64] {
        &self.centers_hz
    }

    pub fn len(&self) -> usize {
        self.centers_hz.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers_hz.is_empty()
    }

    /// Octave-wide passband edges around `center`.
    pub fn octave_edges(center: f64) -> (f64, f64) {
        (center / std::f64::consts::SQRT_2, center * std::f64::consts::SQRT_2)
    }

    /// Check every center against the Nyquist frequency of `sample_rate`.
    pub fn check_nyquist(&self, sample_rate: u32) -> Result<(), DspError> {
        let nyquist = sample_rate as f64 / 2.0;
        match self.centers_hz.iter().find(|&&c| c >= nyquist) {
            Some(c) => Err(DspError::Config(format!(
                "band centered at {c} Hz is not below the Nyquist frequency {nyquist} Hz"
            ))),
            None => Ok(()),
        }
    }
}

impl Default for BandSet {
    fn default() -> Self {
        Self::octaves()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_input() {
        assert!(Waveform::new(vec![], 44100).is_err());
        assert!(Waveform::new(vec![0.0], 4000).is_err());
        assert!(Waveform::new(vec![0.0, f64::NAN], 44100).is_err());
        assert!(Waveform::new(vec![0.0, 1.0], 44100).is_ok());
    }

    #[test]
    fn band_set_validation() {
        assert!(BandSet::new(vec![100.0, 50.0]).is_err());
        let bands = BandSet::octaves();
        assert!(bands.check_nyquist(44100).is_ok());
        let err = bands.check_nyquist(16000).unwrap_err().to_string();
        assert!(err.contains("8000"), "{err}");
    }
}
