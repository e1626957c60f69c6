use serde::{Deserialize, Serialize};

use super::fft::power_spectrum;
use super::{DspError, Waveform};

pub const NUM_MEL_BANDS: usize = 20;
const MEL_LOW_HZ: f64 = 20.0;
const MEL_HIGH_HZ: f64 = 20_000.0;

/// Triangular mel-spaced bands over 20 Hz to 20 kHz.
#[derive(Debug, Clone, PartialEq)]
pub struct MelScale {
    /// NUM_MEL_BANDS + 2 edge frequencies; band k spans points k..k+2 and peaks at k+1.
    points_hz: Vec<f64>,
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

impl MelScale {
    pub fn new() -> Self {
        let (lo, hi) = (hz_to_mel(MEL_LOW_HZ), hz_to_mel(MEL_HIGH_HZ));
        let step = (hi - lo) / (NUM_MEL_BANDS + 1) as f64;
        let points_hz = (0..NUM_MEL_BANDS + 2).map(|i| mel_to_hz(lo + step * i as f64)).collect();
        Self { points_hz }
    }

    pub fn points_hz(&self) -> &[f64] {
        &self.points_hz
    }

    pub fn center_hz(&self, band: usize) -> f64 {
        self.points_hz[band + 1]
    }

    /// Unit-height triangle of `band` at `f`.
    pub fn triangle(&self, band: usize, f: f64) -> f64 {
        let (a, b, c) = (self.points_hz[band], self.points_hz[band + 1], self.points_hz[band + 2]);
        if f <= a || f >= c {
            0.0
        } else if f <= b {
            (f - a) / (b - a)
        } else {
            (c - f) / (c - b)
        }
    }

    /// Area-normalised triangle used for energy measurement, so a flat
    /// spectrum puts equal energy in every band.
    pub fn weight(&self, band: usize, f: f64) -> f64 {
        self.triangle(band, f) * 2.0 / (self.points_hz[band + 2] - self.points_hz[band])
    }

    /// Partition-of-unity weights used for equalisation: unit triangles
    /// between the first and last band peaks, held flat beyond them.
    pub fn interpolation_weights(&self, f: f64) -> [f64; NUM_MEL_BANDS] {
        let mut w = [0.0; NUM_MEL_BANDS];
        if f <= self.center_hz(0) {
            w[0] = 1.0;
        } else if f >= self.center_hz(NUM_MEL_BANDS - 1) {
            w[NUM_MEL_BANDS - 1] = 1.0;
        } else {
            for (k, wk) in w.iter_mut().enumerate() {
                *wk = self.triangle(k, f);
            }
        }
        w
    }

    /// Band energies of a one-sided power spectrum (not normalised).
    pub fn band_energies(&self, power: &[f64], bin_hz: f64) -> [f64; NUM_MEL_BANDS] {
        let mut e = [0.0; NUM_MEL_BANDS];
        for (i, &p) in power.iter().enumerate() {
            let f = i as f64 * bin_hz;
            if f <= self.points_hz[0] || f >= self.points_hz[NUM_MEL_BANDS + 1] {
                continue;
            }
            for (k, ek) in e.iter_mut().enumerate() {
                let w = self.weight(k, f);
                if w > 0.0 {
                    *ek += w * p;
                }
            }
        }
        e
    }
}

impl Default for MelScale {
    fn default() -> Self {
        Self::new()
    }
}

/// Spectral energy in 20 mel bands, normalised to sum to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MelEnergyProfile {
    energies: Vec<f64>,
}

impl MelEnergyProfile {
    pub fn new(energies: Vec<f64>) -> Result<Self, DspError> {
        if energies.len() != NUM_MEL_BANDS {
            return Err(DspError::Config(format!(
                "mel profile needs {NUM_MEL_BANDS} values, got {}",
                energies.len()
            )));
        }
        if energies.iter().any(|e| !(e.is_finite() && *e >= 0.0)) {
            return Err(DspError::Config("mel energies must be finite and non-negative".into()));
        }
        let sum: f64 = energies.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(DspError::Config(format!("mel energies must sum to 1, got {sum}")));
        }
        Ok(Self { energies })
    }

    /// Normalise arbitrary non-negative band energies.
    pub fn from_unnormalized(raw: &[f64]) -> Result<Self, DspError> {
        let sum: f64 = raw.iter().sum();
        if !(sum > 0.0) {
            return Err(DspError::DegenerateSignal("no energy in any mel band".into()));
        }
        Self::new(raw.iter().map(|e| e / sum).collect())
    }

    pub fn energies(&self) -> &[f64] {
        &self.energies
    }
}

pub fn mel_energy_profile(w: &Waveform) -> Result<MelEnergyProfile, DspError> {
    if w.is_silent() {
        return Err(DspError::DegenerateSignal("all-zero input".into()));
    }
    let spec = power_spectrum(w.samples(), w.sample_rate());
    let raw = MelScale::new().band_energies(&spec.power, spec.bin_hz);
    MelEnergyProfile::from_unnormalized(&raw)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    const FS: u32 = 44100;

    #[test]
    fn scale_endpoints() {
        let m = MelScale::new();
        assert!((m.points_hz()[0] - 20.0).abs() < 1e-9);
        assert!((m.points_hz()[NUM_MEL_BANDS + 1] - 20_000.0).abs() < 1e-6);
        for f in [10.0, 100.0, 1000.0, 9000.0, 19_000.0, 21_000.0] {
            let s: f64 = m.interpolation_weights(f).iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn white_noise_spreads_evenly() {
        let mut acc = [0.0; NUM_MEL_BANDS];
        for seed in 0..10u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let w = Waveform::from_fn(FS as usize / 2, FS, |_| rng.random_range(-1.0..1.0)).unwrap();
            for (a, e) in acc.iter_mut().zip(mel_energy_profile(&w).unwrap().energies()) {
                *a += e / 10.0;
            }
        }
        for (k, a) in acc.iter().enumerate() {
            assert!(*a <= 0.15, "band {k} holds {a}");
        }
    }

    #[test]
    fn sine_concentrates_near_its_frequency() {
        let w = Waveform::from_fn(FS as usize, FS, |i| (2.0 * PI * 1000.0 * i as f64 / FS as f64).sin())
            .unwrap();
        let p = mel_energy_profile(&w).unwrap();
        let m = MelScale::new();
        let covering: f64 = (0..NUM_MEL_BANDS)
            .filter(|&k| m.triangle(k, 1000.0) > 0.0)
            .map(|k| p.energies()[k])
            .sum();
        assert!((0..NUM_MEL_BANDS).filter(|&k| m.triangle(k, 1000.0) > 0.0).count() <= 2);
        assert!(covering >= 0.9, "{covering}");
    }

    #[test]
    fn profile_is_scale_free() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w = Waveform::from_fn(8000, FS, |_| rng.random_range(-1.0..1.0)).unwrap();
        let a = mel_energy_profile(&w).unwrap();
        let b = mel_energy_profile(&w.scaled(0.5)).unwrap();
        for (x, y) in a.energies().iter().zip(b.energies()) {
            assert!((x - y).abs() < 1e-12);
        }
        let sum: f64 = a.energies().iter().sum();
        assert!((sum - 1.0).abs() < 1e-9);
    }

    #[test]
    fn silence_and_bad_profiles_rejected() {
        assert!(mel_energy_profile(&Waveform::silence(100, FS).unwrap()).is_err());
        assert!(MelEnergyProfile::new(vec![0.05; 19]).is_err());
        assert!(MelEnergyProfile::new(vec![0.1; 20]).is_err());
        assert!(MelEnergyProfile::new(vec![0.05; 20]).is_ok());
    }
}
