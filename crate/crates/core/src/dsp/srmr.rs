use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::filter::{Biquad, FilterChain};
use super::{DspError, Waveform};

const ACOUSTIC_BANDS: usize = 23;
const LOWEST_CENTER_HZ: f64 = 125.0;
const ENVELOPE_CUTOFF_HZ: f64 = 30.0;
const MOD_BANDS: usize = 8;
const MOD_Q: f64 = 2.0;
const ENVELOPE_RATE_HZ: f64 = 1000.0;

fn erb_hz(fc: f64) -> f64 {
    24.7 * (4.37 * fc / 1000.0 + 1.0)
}

fn acoustic_centers(sample_rate: u32) -> Vec<f64> {
    let hi = sample_rate as f64 / 4.0;
    let step = (hi / LOWEST_CENTER_HZ).ln() / (ACOUSTIC_BANDS - 1) as f64;
    (0..ACOUSTIC_BANDS).map(|i| LOWEST_CENTER_HZ * (step * i as f64).exp()).collect()
}

fn modulation_centers() -> [f64; MOD_BANDS] {
    std::array::from_fn(|k| 4.0 * 32f64.powf(k as f64 / (MOD_BANDS - 1) as f64))
}

/// Temporal envelope of one band, decimated to roughly 1 kHz with its mean removed.
fn band_envelope(x: &[f64], center: f64, fs: f64, decim: usize) -> Vec<f64> {
    let erb = erb_hz(center);
    let mut y = x.to_vec();
    FilterChain::butterworth_bandpass(center - erb / 2.0, center + erb / 2.0, fs).process_in_place(&mut y);
    for v in y.iter_mut() {
        *v = v.abs();
    }
    Biquad::lowpass_first_order(ENVELOPE_CUTOFF_HZ, fs).process_in_place(&mut y);
    if decim > 1 {
        FilterChain::butterworth_lowpass4(0.4 * fs / decim as f64, fs).process_in_place(&mut y);
    }
    let mut env: Vec<f64> = y.into_iter().step_by(decim).collect();
    let mean = env.iter().sum::<f64>() / env.len() as f64;
    for v in env.iter_mut() {
        *v -= mean;
    }
    env
}

/// Simplified speech-to-reverberation modulation energy ratio.
///
/// Each of 23 log-spaced auditory bands (125 Hz to a quarter of the sample
/// rate) is rectified and smoothed into an envelope, which is split by eight
/// modulation band-passes centered from 4 to 128 Hz. The score is the energy
/// in the four lowest modulation bands over the four highest, summed across
/// auditory bands. Only meaningful when comparing signals.
pub fn srmr_lite(w: &Waveform) -> Result<f64, DspError> {
    if w.duration_s() < 1.0 {
        return Err(DspError::Config(format!(
            "srmr needs at least 1 s of signal, got {:.3} s",
            w.duration_s()
        )));
    }
    if w.is_silent() {
        return Err(DspError::DegenerateSignal("all-zero input".into()));
    }
    let fs = w.sample_rate() as f64;
    let decim = ((fs / ENVELOPE_RATE_HZ).floor() as usize).max(1);
    let env_fs = fs / decim as f64;
    let mod_filters: Vec<Biquad> = modulation_centers()
        .iter()
        .map(|&fc| Biquad::bandpass(fc, MOD_Q, env_fs))
        .collect();

    let mut energy = [0.0; MOD_BANDS];
    for center in acoustic_centers(w.sample_rate()) {
        let env = band_envelope(w.samples(), center, fs, decim);
        for (e, f) in energy.iter_mut().zip(&mod_filters) {
            let mut m = env.clone();
            f.process_in_place(&mut m);
            *e += m.iter().map(|v| v * v).sum::<f64>();
        }
    }
    let low: f64 = energy[..4].iter().sum();
    let high: f64 = energy[4..].iter().sum();
    if !(high > 0.0) {
        return Err(DspError::DegenerateSignal("no high modulation energy".into()));
    }
    Ok(low / high)
}

/// Seeded speech-like test signal: a gliding harmonic source with a few
/// formant resonances, gated into syllables of 120–300 ms with short pauses,
/// plus occasional noise bursts. Peak-normalised to 0.5.
pub fn speech_like(duration_s: f64, sample_rate: u32, seed: u64) -> Result<Waveform, DspError> {
    let fs = sample_rate as f64;
    let n = (duration_s * fs).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base_f0 = rng.random_range(95.0..220.0);

    let mut gate = vec![0.0; n];
    let mut voiced = vec![true; n];
    let mut pos = (rng.random_range(0.02..0.08) * fs) as usize;
    while pos < n {
        let len = (rng.random_range(0.12..0.30) * fs) as usize;
        let is_voiced = rng.random_bool(0.8);
        for i in 0..len.min(n - pos) {
            let x = i as f64 / len as f64;
            gate[pos + i] = (PI * x).sin().powi(2);
            voiced[pos + i] = is_voiced;
        }
        pos += len + (rng.random_range(0.04..0.16) * fs) as usize;
    }

    let mut phase = 0.0;
    let mut src = vec![0.0; n];
    for i in 0..n {
        let t = i as f64 / fs;
        let f0 = base_f0 * (1.0 + 0.08 * (2.0 * PI * 0.7 * t).sin());
        phase += 2.0 * PI * f0 / fs;
        src[i] = if voiced[i] {
            let kmax = ((4000.0 / f0) as usize).max(1);
            (1..=kmax).map(|k| (k as f64 * phase).sin() / k as f64).sum::<f64>()
        } else {
            rng.random_range(-1.0..1.0)
        };
    }

    let formants = [(500.0, 4.0), (1500.0, 6.0), (2500.0, 8.0)];
    let mut out = vec![0.0; n];
    for (fc, q) in formants {
        if fc >= fs / 2.0 {
            continue;
        }
        let mut y = src.clone();
        Biquad::bandpass(fc, q, fs).process_in_place(&mut y);
        for (o, v) in out.iter_mut().zip(y) {
            *o += v;
        }
    }
    for (o, g) in out.iter_mut().zip(&gate) {
        *o *= g;
    }
    let w = Waveform::new(out, sample_rate)?;
    let peak = w.peak();
    Ok(if peak > 0.0 { w.scaled(0.5 / peak) } else { w })
}

#[cfg(test)]
mod tests {
    use super::*;

    const FS: u32 = 16000;

    #[test]
    fn modulation_centers_span_4_to_128() {
        let c = modulation_centers();
        assert!((c[0] - 4.0).abs() < 1e-12);
        assert!((c[7] - 128.0).abs() < 1e-9);
    }

    #[test]
    fn too_short_is_config_error() {
        let w = Waveform::from_fn(FS as usize / 2, FS, |i| (i as f64).sin()).unwrap();
        assert!(matches!(srmr_lite(&w), Err(DspError::Config(_))));
    }

    #[test]
    fn score_is_scale_free() {
        let w = speech_like(1.5, FS, 1).unwrap();
        let a = srmr_lite(&w).unwrap();
        let b = srmr_lite(&w.scaled(2.0)).unwrap();
        assert!(((a - b) / a).abs() < 1e-6);
    }

    #[test]
    fn white_noise_scores_near_one() {
        let mut total = 0.0;
        for seed in 0..4u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let w = Waveform::from_fn(2 * FS as usize, FS, |_| rng.random_range(-1.0..1.0)).unwrap();
            total += srmr_lite(&w).unwrap();
        }
        let mean = total / 4.0;
        assert!((0.5..=1.5).contains(&mean), "mean score {mean}");
    }

    #[test]
    fn speech_like_is_deterministic_and_modulated() {
        let a = speech_like(2.0, FS, 7).unwrap();
        assert_eq!(a, speech_like(2.0, FS, 7).unwrap());
        assert_ne!(a, speech_like(2.0, FS, 8).unwrap());
        assert!(srmr_lite(&a).unwrap() > 1.5);
    }
}
