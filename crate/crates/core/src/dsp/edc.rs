use serde::{Deserialize, Serialize};

use super::{DspError, Waveform};

/// Level assigned to EDC samples whose remaining energy is zero.
pub const EDC_FLOOR_DB: f64 = -300.0;

/// Fraction of the signal, at its end, whose mean power is taken as the noise floor.
const FLOOR_TAIL_FRACTION: f64 = 0.1;
/// Window of the local RMS power used to find the noise-floor crossing.
const LOCAL_POWER_WINDOW_S: f64 = 0.005;
/// Integration stops after the last sample this far above the floor.
const TRUNCATION_MARGIN_DB: f64 = 6.0;
/// Line fits must end where the local power is still this far above the floor.
const FIT_MARGIN_DB: f64 = 16.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DecayKind {
    T30,
    T15,
    Edt,
}

impl DecayKind {
    /// Upper and lower EDC levels of the line-fit interval, in dB.
    pub fn fit_interval_db(self) -> (f64, f64) {
        match self {
            DecayKind::T30 => (-5.0, -35.0),
            DecayKind::T15 => (-5.0, -20.0),
            DecayKind::Edt => (0.0, -10.0),
        }
    }
}

/// Schroeder backward-integrated energy decay, in dB re. the total energy.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyDecayCurve {
    pub values_db: Vec<f64>,
    pub sample_rate_hz: u32,
    /// Exclusive end of the integration; samples from here on are noise.
    pub truncation_index: usize,
    /// Last index a decay fit may use before truncation bends the curve.
    pub fit_limit_index: usize,
    /// Estimated noise floor power relative to the peak sample power, in dB.
    pub noise_floor_db: f64,
}

impl EnergyDecayCurve {
    /// Wrap precomputed levels. The curve must start at 0 dB and never rise.
    pub fn from_db(values_db: Vec<f64>, sample_rate_hz: u32) -> Result<Self, DspError> {
        if values_db.first() != Some(&0.0) {
            return Err(DspError::InvalidWaveform("decay curve must start at exactly 0 dB".into()));
        }
        if values_db.windows(2).any(|w| !(w[1] <= w[0])) {
            return Err(DspError::InvalidWaveform("decay curve must be non-increasing".into()));
        }
        let n = values_db.len();
        Ok(Self {
            values_db,
            sample_rate_hz,
            truncation_index: n,
            fit_limit_index: n,
            noise_floor_db: f64::NEG_INFINITY,
        })
    }
}

/// Mean power over a centered window of `win` samples at every index.
///
/// Sums are taken from the end backwards so the low-level tail, where the
/// floor comparison happens, keeps full precision.
fn local_power(x: &[f64], win: usize) -> Vec<f64> {
    let n = x.len();
    let mut suffix = vec![0.0; n + 1];
    for i in (0..n).rev() {
        suffix[i] = suffix[i + 1] + x[i] * x[i];
    }
    let half = win / 2;
    (0..n)
        .map(|i| {
            let a = i.saturating_sub(half);
            let b = (i + win - half).min(n);
            (suffix[a] - suffix[b]).max(0.0) / (b - a) as f64
        })
        .collect()
}

fn floor_power(x: &[f64]) -> f64 {
    let n = x.len();
    let tail = ((n as f64 * FLOOR_TAIL_FRACTION).ceil() as usize).clamp(1, n);
    x[n - tail..].iter().map(|v| v * v).sum::<f64>() / tail as f64
}

/// Noise floor (mean power of the final 10 %) relative to peak power, in dB.
pub fn noise_floor_db(w: &Waveform) -> Result<f64, DspError> {
    let peak = w.peak();
    if peak == 0.0 {
        return Err(DspError::DegenerateSignal("all-zero input".into()));
    }
    Ok(10.0 * (floor_power(w.samples()) / (peak * peak)).log10())
}

/// Schroeder integral with noise-floor truncation.
///
/// The floor is the mean power of the last 10 % of the signal. Integration
/// runs backwards from the last sample whose 5 ms local power exceeds the
/// floor by 6 dB; everything after it is treated as noise.
pub fn energy_decay_curve(w: &Waveform) -> Result<EnergyDecayCurve, DspError> {
    let x = w.samples();
    let peak = w.peak();
    if peak == 0.0 {
        return Err(DspError::DegenerateSignal("all-zero input".into()));
    }
    let n = x.len();
    let floor = floor_power(x);
    let win = w.seconds_to_samples(LOCAL_POWER_WINDOW_S).max(1);
    let local = local_power(x, win);

    let last_above = |margin_db: f64| {
        let threshold = floor * 10f64.powf(margin_db / 10.0);
        local.iter().rposition(|&p| p > threshold)
    };
    let (truncation_index, fit_limit_index) = match last_above(TRUNCATION_MARGIN_DB) {
        Some(i) => (i + 1, last_above(FIT_MARGIN_DB).unwrap_or(0)),
        None => (n, 0),
    };

    let mut energy = vec![0.0; n];
    let mut acc = 0.0;
    for i in (0..truncation_index).rev() {
        acc += x[i] * x[i];
        energy[i] = acc;
    }
    let total = energy[0];
    if total == 0.0 {
        return Err(DspError::DegenerateSignal("no energy before the noise floor".into()));
    }
    let values_db = energy
        .iter()
        .map(|&e| if e > 0.0 { (10.0 * (e / total).log10()).max(EDC_FLOOR_DB) } else { EDC_FLOOR_DB })
        .collect();

    Ok(EnergyDecayCurve {
        values_db,
        sample_rate_hz: w.sample_rate(),
        truncation_index,
        fit_limit_index,
        noise_floor_db: 10.0 * (floor / (peak * peak)).log10(),
    })
}

/// Reverberation time from a least-squares line through the fit interval of
/// `kind`, extrapolated to -60 dB.
pub fn reverb_time(edc: &EnergyDecayCurve, kind: DecayKind) -> Result<f64, DspError> {
    let (upper, lower) = kind.fit_interval_db();
    let insufficient = || DspError::InsufficientDecay { kind, lower_db: lower };
    let v = &edc.values_db;

    let start = v.iter().position(|&d| d <= upper).ok_or_else(insufficient)?;
    let end = v.iter().position(|&d| d <= lower).ok_or_else(insufficient)?;
    let limit = edc.fit_limit_index.min(edc.truncation_index.saturating_sub(1));
    if end > limit || end < start + 2 || v[end] <= EDC_FLOOR_DB {
        return Err(insufficient());
    }

    let fs = edc.sample_rate_hz as f64;
    let n = (end - start + 1) as f64;
    let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
    for (i, &y) in v.iter().enumerate().take(end + 1).skip(start) {
        let t = i as f64 / fs;
        sx += t;
        sy += y;
        sxx += t * t;
        sxy += t * y;
    }
    let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    if !(slope < 0.0) {
        return Err(insufficient());
    }
    Ok(-60.0 / slope)
}
