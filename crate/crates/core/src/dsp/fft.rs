use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

/// One-sided power spectrum of a zero-padded signal.
#[derive(Debug, Clone)]
pub struct Spectrum {
    /// |X_k|^2 for k = 0..=n_fft/2.
    pub power: Vec<f64>,
    pub n_fft: usize,
    pub bin_hz: f64,
}

impl Spectrum {
    pub fn freq(&self, bin: usize) -> f64 {
        bin as f64 * self.bin_hz
    }
}

/// FFT size used for whole-signal spectra: at least twice the signal length.
pub(crate) fn analysis_fft_len(len: usize) -> usize {
    (2 * len).next_power_of_two()
}

pub(crate) fn forward(samples: &[f64], n_fft: usize) -> Vec<Complex64> {
    let mut buf: Vec<Complex64> = samples.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    buf.resize(n_fft, Complex64::new(0.0, 0.0));
    FftPlanner::new().plan_fft_forward(n_fft).process(&mut buf);
    buf
}

/// Inverse transform, returning the scaled real part.
pub(crate) fn inverse_real(mut spec: Vec<Complex64>) -> Vec<f64> {
    let n = spec.len();
    FftPlanner::new().plan_fft_inverse(n).process(&mut spec);
    spec.into_iter().map(|c| c.re / n as f64).collect()
}

pub fn power_spectrum(samples: &[f64], sample_rate: u32) -> Spectrum {
    let n_fft = analysis_fft_len(samples.len());
    let spec = forward(samples, n_fft);
    Spectrum {
        power: spec[..=n_fft / 2].iter().map(|c| c.norm_sqr()).collect(),
        n_fft,
        bin_hz: sample_rate as f64 / n_fft as f64,
    }
}

/// Full linear convolution, length `a.len() + b.len() - 1`.
pub fn convolve(a: &[f64], b: &[f64]) -> Vec<f64> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let out_len = a.len() + b.len() - 1;
    let n = out_len.next_power_of_two();
    let fa = forward(a, n);
    let fb = forward(b, n);
    let prod = fa.into_iter().zip(fb).map(|(x, y)| x * y).collect();
    let mut out = inverse_real(prod);
    out.truncate(out_len);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn convolution_matches_direct_sum() {
        let a = [1.0, -2.0, 0.5, 3.0];
        let b = [0.25, 1.0, -1.0];
        let mut direct = vec![0.0; a.len() + b.len() - 1];
        for (i, x) in a.iter().enumerate() {
            for (j, y) in b.iter().enumerate() {
                direct[i + j] += x * y;
            }
        }
        let fast = convolve(&a, &b);
        assert_eq!(fast.len(), direct.len());
        for (f, d) in fast.iter().zip(&direct) {
            assert!((f - d).abs() < 1e-12);
        }
    }

    #[test]
    fn parseval_holds_for_padded_spectrum() {
        let x: Vec<f64> = (0..300).map(|i| ((i * 7919) % 13) as f64 - 6.0).collect();
        let s = power_spectrum(&x, 8000);
        // Two-sided sum reconstructed from the one-sided half.
        let n = s.n_fft;
        let two_sided: f64 = s.power[0] + s.power[n / 2] + 2.0 * s.power[1..n / 2].iter().sum::<f64>();
        let energy: f64 = x.iter().map(|v| v * v).sum();
        assert!((two_sided / n as f64 - energy).abs() < 1e-8 * energy);
    }
}
