use rustfft::num_complex::Complex64;

use crate::dsp::{
    analysis_fft_len, forward, inverse_real, mel_energy_profile, DspError, MelEnergyProfile, MelScale, Waveform,
    NUM_MEL_BANDS,
};

const GAIN_MIN: f64 = 0.01;
const GAIN_MAX: f64 = 100.0;
const MAX_PASSES: usize = 40;
const MATCH_DB: f64 = 0.01;

/// Per-bin pair of (band, weight) used to interpolate log gains between band centers.
struct GainCurve {
    bins: Vec<[(usize, f64); 2]>,
}

impl GainCurve {
    fn new(n_fft: usize, sample_rate: u32) -> Self {
        let scale = MelScale::new();
        let bin_hz = sample_rate as f64 / n_fft as f64;
        let bins = (0..=n_fft / 2)
            .map(|i| {
                let w = scale.interpolation_weights(i as f64 * bin_hz);
                let mut pair = [(0, 0.0); 2];
                let mut j = 0;
                for (k, &wk) in w.iter().enumerate() {
                    if wk > 0.0 && j < 2 {
                        pair[j] = (k, wk);
                        j += 1;
                    }
                }
                pair
            })
            .collect();
        Self { bins }
    }

    fn apply(&self, spec: &[Complex64], gains: &[f64; NUM_MEL_BANDS]) -> Vec<Complex64> {
        let n = spec.len();
        let logg = gains.map(f64::ln);
        let g: Vec<f64> = self
            .bins
            .iter()
            .map(|p| (p[0].1 * logg[p[0].0] + p[1].1 * logg[p[1].0]).exp())
            .collect();
        spec.iter()
            .enumerate()
            .map(|(i, x)| x * g[if i <= n / 2 { i } else { n - i }])
            .collect()
    }
}

/// Equalise `w` so its mel energy profile matches `target`.
///
/// Gains live at the 20 band centers and are interpolated geometrically in
/// between, applied as a zero-phase spectral weighting. They start at
/// sqrt(target / measured) and are refined against the measured output
/// profile. Gains are limited to [0.01, 100]; bands whose target is zero sit
/// at the lower limit. Output energy equals input energy.
pub fn apply_mel_eq_with_gains(
    w: &Waveform,
    target: &MelEnergyProfile,
) -> Result<(Waveform, [f64; NUM_MEL_BANDS]), DspError> {
    let measured = mel_energy_profile(w)?;
    let len = w.len();
    let n_fft = analysis_fft_len(len);
    let spec = forward(w.samples(), n_fft);
    let curve = GainCurve::new(n_fft, w.sample_rate());
    let t = target.energies();

    let step = |g: f64, t: f64, m: f64| {
        if t == 0.0 {
            GAIN_MIN
        } else if m == 0.0 {
            g
        } else {
            (g * (t / m).sqrt()).clamp(GAIN_MIN, GAIN_MAX)
        }
    };
    let mut gains = [1.0; NUM_MEL_BANDS];
    for (k, g) in gains.iter_mut().enumerate() {
        *g = step(1.0, t[k], measured.energies()[k]);
    }

    let render = |gains: &[f64; NUM_MEL_BANDS]| -> Result<Waveform, DspError> {
        let mut y = inverse_real(curve.apply(&spec, gains));
        y.truncate(len);
        Waveform::new(y, w.sample_rate())
    };

    let mut out = render(&gains)?;
    for _ in 0..MAX_PASSES {
        let m = mel_energy_profile(&out)?;
        let m = m.energies();
        let worst = (0..NUM_MEL_BANDS)
            .filter(|&k| t[k] > 0.0 && m[k] > 0.0)
            .filter(|&k| {
                // Bands pinned at a gain limit cannot move further.
                let up = t[k] > m[k];
                !(up && gains[k] >= GAIN_MAX || !up && gains[k] <= GAIN_MIN)
            })
            .map(|k| (10.0 * (m[k] / t[k]).log10()).abs())
            .fold(0.0, f64::max);
        if worst < MATCH_DB {
            break;
        }
        for (k, g) in gains.iter_mut().enumerate() {
            *g = step(*g, t[k], m[k]);
        }
        out = render(&gains)?;
    }

    let e_out = out.energy();
    if !(e_out > 0.0) {
        return Err(DspError::DegenerateSignal("equaliser removed all energy".into()));
    }
    Ok((out.scaled((w.energy() / e_out).sqrt()), gains))
}

pub fn apply_mel_eq(w: &Waveform, target: &MelEnergyProfile) -> Result<Waveform, DspError> {
    apply_mel_eq_with_gains(w, target).map(|(y, _)| y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const FS: u32 = 44100;

    fn noise(seed: u64, len: usize) -> Waveform {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Waveform::from_fn(len, FS, |_| rng.random_range(-1.0..1.0)).unwrap()
    }

    fn decaying_noise(seed: u64) -> Waveform {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Waveform::from_fn(FS as usize / 2, FS, |i| {
            rng.random_range(-1.0..1.0) * (-(i as f64) / 4000.0).exp()
        })
        .unwrap()
    }

    fn db_gap(a: &MelEnergyProfile, b: &MelEnergyProfile) -> f64 {
        a.energies()
            .iter()
            .zip(b.energies())
            .filter(|(x, y)| **x > 0.0 && **y > 0.0)
            .map(|(x, y)| (10.0 * (x / y).log10()).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn own_profile_is_a_fixed_point() {
        let w = decaying_noise(1);
        let p = mel_energy_profile(&w).unwrap();
        let (y, gains) = apply_mel_eq_with_gains(&w, &p).unwrap();
        assert!(gains.iter().all(|g| (g - 1.0).abs() < 1e-3));
        let err = y.samples().iter().zip(w.samples()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn tilted_target_is_reached_within_1_db() {
        let w = decaying_noise(2);
        let raw: Vec<f64> = (0..NUM_MEL_BANDS).map(|k| 1.0 / (1.0 + k as f64)).collect();
        let target = MelEnergyProfile::from_unnormalized(&raw).unwrap();
        let y = apply_mel_eq(&w, &target).unwrap();
        let got = mel_energy_profile(&y).unwrap();
        assert!(db_gap(&got, &target) < 1.0, "{:?}", got.energies());
    }

    #[test]
    fn energy_confined_to_selected_bands() {
        let w = noise(3, FS as usize / 2);
        let mut raw = vec![0.0; NUM_MEL_BANDS];
        raw[5..9].iter_mut().for_each(|v| *v = 1.0);
        let target = MelEnergyProfile::from_unnormalized(&raw).unwrap();
        let y = apply_mel_eq(&w, &target).unwrap();
        let got = mel_energy_profile(&y).unwrap();
        let inside: f64 = got.energies()[5..9].iter().sum();
        assert!(inside >= 0.95, "{inside}");
    }

    #[test]
    fn empty_bands_do_not_blow_up() {
        // A tone leaves most mel bands (nearly) empty.
        let w = Waveform::from_fn(8000, FS, |i| (2.0 * std::f64::consts::PI * 1000.0 * i as f64 / FS as f64).sin())
            .unwrap();
        let target = MelEnergyProfile::new(vec![0.05; NUM_MEL_BANDS]).unwrap();
        let (y, gains) = apply_mel_eq_with_gains(&w, &target).unwrap();
        assert!(y.samples().iter().all(|x| x.is_finite()));
        assert!(gains.iter().all(|g| (GAIN_MIN..=GAIN_MAX).contains(g)));
    }

    #[test]
    fn second_pass_changes_little() {
        let w = decaying_noise(4);
        let raw: Vec<f64> = (0..NUM_MEL_BANDS).map(|k| 1.0 + (k % 3) as f64).collect();
        let target = MelEnergyProfile::from_unnormalized(&raw).unwrap();
        let once = apply_mel_eq(&w, &target).unwrap();
        let twice = apply_mel_eq(&once, &target).unwrap();
        let gap = db_gap(&mel_energy_profile(&once).unwrap(), &mel_energy_profile(&twice).unwrap());
        assert!(gap < 0.1, "{gap}");
    }

    #[test]
    fn silence_is_rejected() {
        let w = Waveform::silence(100, FS).unwrap();
        let target = MelEnergyProfile::new(vec![0.05; NUM_MEL_BANDS]).unwrap();
        assert!(apply_mel_eq(&w, &target).is_err());
    }
}
