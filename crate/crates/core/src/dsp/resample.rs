use std::f64::consts::PI;

use super::{DspError, Waveform};

/// Zero crossings of the sinc kernel on each side, at the output cutoff.
const ZERO_CROSSINGS: f64 = 32.0;

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

fn blackman(x: f64, half_width: f64) -> f64 {
    if x.abs() >= half_width {
        return 0.0;
    }
    let r = PI * x / half_width;
    0.42 + 0.5 * r.cos() + 0.08 * (2.0 * r).cos()
}

/// Band-limited resampling with a Blackman-windowed sinc kernel.
///
/// When downsampling, the kernel cutoff follows the new Nyquist frequency.
/// Output length is `round(len * to / from)`.
pub fn resample(w: &Waveform, to_hz: u32) -> Result<Waveform, DspError> {
    let from_hz = w.sample_rate();
    if from_hz == to_hz {
        return Ok(w.clone());
    }
    let ratio = to_hz as f64 / from_hz as f64;
    let cutoff = ratio.min(1.0);
    let half_width = ZERO_CROSSINGS / cutoff;
    let x = w.samples();
    let out_len = ((x.len() as f64 * ratio).round() as usize).max(1);

    let out = (0..out_len)
        .map(|n| {
            let t = n as f64 / ratio;
            let lo = (t - half_width).ceil().max(0.0) as usize;
            let hi = ((t + half_width).floor() as usize).min(x.len() - 1);
            (lo..=hi)
                .map(|k| {
                    let d = t - k as f64;
                    x[k] * cutoff * sinc(cutoff * d) * blackman(d, half_width)
                })
                .sum()
        })
        .collect();
    Waveform::new(out, to_hz)
}

/// Resample to `rate_hz` and truncate or zero-pad to `seconds`.
pub fn conform(w: &Waveform, rate_hz: u32, seconds: f64) -> Result<Waveform, DspError> {
    if !(seconds > 0.0) {
        return Err(DspError::Config(format!("duration must be positive, got {seconds}")));
    }
    Ok(resample(w, rate_hz)?.with_len((seconds * rate_hz as f64).round() as usize))
}
