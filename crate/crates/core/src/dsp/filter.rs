use std::f64::consts::PI;

use rustfft::num_complex::Complex64;

use super::{BandSet, DspError, Waveform};

/// Second-order IIR section, transposed direct form II.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b0: f64,
    pub b1: f64,
    pub b2: f64,
    pub a1: f64,
    pub a2: f64,
}

impl Biquad {
    pub fn process_in_place(&self, x: &mut [f64]) {
        let (mut z1, mut z2) = (0.0, 0.0);
        for v in x.iter_mut() {
            let input = *v;
            let out = self.b0 * input + z1;
            z1 = self.b1 * input - self.a1 * out + z2;
            z2 = self.b2 * input - self.a2 * out;
            *v = out;
        }
    }

    /// Complex frequency response at normalized angular frequency `omega` (rad/sample).
    pub fn response(&self, omega: f64) -> Complex64 {
        let z1 = Complex64::from_polar(1.0, -omega);
        let z2 = z1 * z1;
        (self.b0 + self.b1 * z1 + self.b2 * z2) / (1.0 + self.a1 * z1 + self.a2 * z2)
    }

    /// First-order Butterworth low-pass stored as a degenerate biquad.
    pub fn lowpass_first_order(cutoff_hz: f64, sample_rate: f64) -> Self {
        let k = (PI * cutoff_hz / sample_rate).tan();
        let b0 = k / (1.0 + k);
        Self { b0, b1: b0, b2: 0.0, a1: (k - 1.0) / (k + 1.0), a2: 0.0 }
    }

    /// Bilinear second-order low-pass with quality factor `q`.
    pub fn lowpass(cutoff_hz: f64, q: f64, sample_rate: f64) -> Self {
        let w0 = 2.0 * PI * cutoff_hz / sample_rate;
        let (sin, cos) = w0.sin_cos();
        let alpha = sin / (2.0 * q);
        let a0 = 1.0 + alpha;
        Self {
            b0: (1.0 - cos) / 2.0 / a0,
            b1: (1.0 - cos) / a0,
            b2: (1.0 - cos) / 2.0 / a0,
            a1: -2.0 * cos / a0,
            a2: (1.0 - alpha) / a0,
        }
    }

    /// Constant 0 dB peak-gain band-pass with quality factor `q`.
    pub fn bandpass(center_hz: f64, q: f64, sample_rate: f64) -> Self {
        let w0 = 2.0 * PI * center_hz / sample_rate;
        let (sin, cos) = w0.sin_cos();
        let alpha = sin / (2.0 * q);
        let a0 = 1.0 + alpha;
        Self {
            b0: alpha / a0,
            b1: 0.0,
            b2: -alpha / a0,
            a1: -2.0 * cos / a0,
            a2: (1.0 - alpha) / a0,
        }
    }
}

/// Cascade of biquad sections.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterChain {
    sections: Vec<Biquad>,
}

impl FilterChain {
    pub fn new(sections: Vec<Biquad>) -> Self {
        Self { sections }
    }

    pub fn sections(&self) -> &[Biquad] {
        &self.sections
    }

    pub fn process_in_place(&self, x: &mut [f64]) {
        for s in &self.sections {
            s.process_in_place(x);
        }
    }

    pub fn magnitude(&self, freq_hz: f64, sample_rate: f64) -> f64 {
        let omega = 2.0 * PI * freq_hz / sample_rate;
        self.sections.iter().map(|s| s.response(omega)).product::<Complex64>().norm()
    }

    /// Fourth-order Butterworth low-pass (two sections).
    pub fn butterworth_lowpass4(cutoff_hz: f64, sample_rate: f64) -> Self {
        let q1 = 1.0 / (2.0 * (PI / 8.0).cos());
        let q2 = 1.0 / (2.0 * (3.0 * PI / 8.0).cos());
        Self::new(vec![
            Biquad::lowpass(cutoff_hz, q1, sample_rate),
            Biquad::lowpass(cutoff_hz, q2, sample_rate),
        ])
    }

    /// Fourth-order Butterworth band-pass between `low_hz` and `high_hz`.
    ///
    /// A second-order analog Butterworth prototype is mapped low-pass to
    /// band-pass around the prewarped edges and discretised with the bilinear
    /// transform. Each resulting pole pair becomes one section with zeros at
    /// z = 1 and z = -1; the cascade is normalised to unit gain at the center.
    pub fn butterworth_bandpass(low_hz: f64, high_hz: f64, sample_rate: f64) -> Self {
        let fs2 = 2.0 * sample_rate;
        let warp = |f: f64| fs2 * (PI * f / sample_rate).tan();
        let (wl, wh) = (warp(low_hz), warp(high_hz));
        let w0 = (wl * wh).sqrt();
        let bw = wh - wl;

        let proto = Complex64::from_polar(1.0, 3.0 * PI / 4.0);
        let pb = proto * bw;
        let disc = (pb * pb - 4.0 * w0 * w0).sqrt();
        let analog = [(pb + disc) / 2.0, (pb - disc) / 2.0];

        let center_omega = 2.0 * (w0 / fs2).atan();
        let sections = analog
            .iter()
            .map(|&s| {
                let z = (1.0 + s / fs2) / (1.0 - s / fs2);
                let raw = Biquad { b0: 1.0, b1: 0.0, b2: -1.0, a1: -2.0 * z.re, a2: z.norm_sqr() };
                let g = 1.0 / raw.response(center_omega).norm();
                Biquad { b0: g, b2: -g, ..raw }
            })
            .collect();
        Self::new(sections)
    }
}

/// Zero-phase filtering: the signal is zero-extended by `pad` samples on
/// both sides, run forward and backward through `chain`, and cropped back.
pub fn filtfilt(chain: &FilterChain, x: &[f64], pad: usize) -> Vec<f64> {
    let mut buf = vec![0.0; x.len() + 2 * pad];
    buf[pad..pad + x.len()].copy_from_slice(x);
    chain.process_in_place(&mut buf);
    buf.reverse();
    chain.process_in_place(&mut buf);
    buf.reverse();
    buf.truncate(pad + x.len());
    buf.drain(..pad);
    buf
}

/// Octave band-pass chain for one band, with the upper edge kept below Nyquist.
pub(crate) fn octave_chain(center_hz: f64, sample_rate: u32) -> FilterChain {
    let fs = sample_rate as f64;
    let (lo, hi) = BandSet::octave_edges(center_hz);
    FilterChain::butterworth_bandpass(lo, hi.min(0.98 * fs / 2.0), fs)
}

/// Padding long enough for the band filter's ringing to die out.
pub(crate) fn octave_pad(center_hz: f64, sample_rate: u32) -> usize {
    let (lo, _) = BandSet::octave_edges(center_hz);
    (6.0 * sample_rate as f64 / lo).ceil() as usize
}

/// Split `w` into zero-phase octave bands, one output per center in `bands`.
pub fn bandpass_filterbank(w: &Waveform, bands: &BandSet) -> Result<Vec<Waveform>, DspError> {
    bands.check_nyquist(w.sample_rate())?;
    bands
        .centers_hz()
        .iter()
        .map(|&c| {
            let chain = octave_chain(c, w.sample_rate());
            let y = filtfilt(&chain, w.samples(), octave_pad(c, w.sample_rate()));
            Waveform::new(y, w.sample_rate())
        })
        .collect()
}
