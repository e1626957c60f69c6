use serde::{Deserialize, Serialize};

use super::edc::{energy_decay_curve, reverb_time, DecayKind};
use super::filter::bandpass_filterbank;
use super::{BandSet, DspError, Waveform};
use crate::SPEED_OF_SOUND;

/// Number of octave bands carried by [`AcousticParams`].
pub const NUM_BANDS: usize = 8;

pub const SRD_MIN_M: f64 = 0.3;
pub const SRD_MAX_M: f64 = 30.0;

/// Onset threshold relative to the global peak.
const ONSET_THRESHOLD_DB: f64 = -20.0;

/// The five measures reported both broadband and per band.
///
/// `None` marks a measure that could not be computed (insufficient decay,
/// degenerate clarity, too little signal after the onset).
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Measures {
    pub t30_s: Option<f64>,
    pub t15_s: Option<f64>,
    pub edt_s: Option<f64>,
    pub c80_db: Option<f64>,
    pub d50_pct: Option<f64>,
}

impl Measures {
    /// All five values present.
    pub fn new(t30_s: f64, t15_s: f64, edt_s: f64, c80_db: f64, d50_pct: f64) -> Self {
        Self {
            t30_s: Some(t30_s),
            t15_s: Some(t15_s),
            edt_s: Some(edt_s),
            c80_db: Some(c80_db),
            d50_pct: Some(d50_pct),
        }
    }

    pub fn is_complete(&self) -> bool {
        self.t30_s.is_some()
            && self.t15_s.is_some()
            && self.edt_s.is_some()
            && self.c80_db.is_some()
            && self.d50_pct.is_some()
    }
}

/// A measure that could not be extracted, with the reason.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Issue {
    /// `None` for broadband, otherwise the band index.
    pub band: Option<usize>,
    pub measure: String,
    pub reason: String,
}

/// Broadband and octave-band acoustic parameters of one RIR.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcousticParams {
    pub broadband: Measures,
    pub per_band: Vec<Measures>,
    pub srd_m: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub issues: Vec<Issue>,
}

impl AcousticParams {
    /// The same measures in the broadband slot and in every band.
    pub fn uniform(measures: Measures, srd_m: f64) -> Self {
        Self { broadband: measures, per_band: vec![measures; NUM_BANDS], srd_m, issues: Vec::new() }
    }

    /// Number of (broadband, band-wise) values: always (6, 40) for a valid set.
    pub fn value_counts(&self) -> (usize, usize) {
        (6, 5 * self.per_band.len())
    }

    pub fn is_complete(&self) -> bool {
        self.per_band.len() == NUM_BANDS
            && self.broadband.is_complete()
            && self.per_band.iter().all(Measures::is_complete)
    }

    /// Check the value invariants of a complete parameter set.
    pub fn validate(&self) -> Result<(), DspError> {
        let bad = |msg: String| Err(DspError::InvalidWaveform(msg));
        if self.per_band.len() != NUM_BANDS {
            return bad(format!("expected {NUM_BANDS} bands, got {}", self.per_band.len()));
        }
        if !(self.srd_m > 0.0) {
            return bad(format!("srd_m must be positive, got {}", self.srd_m));
        }
        for m in std::iter::once(&self.broadband).chain(&self.per_band) {
            for t in [m.t30_s, m.t15_s, m.edt_s].into_iter().flatten() {
                if !(t > 0.0) {
                    return bad(format!("reverberation time must be positive, got {t}"));
                }
            }
            if let Some(d) = m.d50_pct {
                if !(d >= 0.0 && d <= 100.0) {
                    return bad(format!("d50_pct out of range: {d}"));
                }
            }
        }
        Ok(())
    }
}

/// First sample whose magnitude exceeds the peak by no more than 20 dB.
pub fn detect_onset(w: &Waveform) -> Result<usize, DspError> {
    let peak = w.peak();
    if peak == 0.0 {
        return Err(DspError::DegenerateSignal("cannot find the onset of silence".into()));
    }
    let threshold = peak * 10f64.powf(ONSET_THRESHOLD_DB / 20.0);
    Ok(w.samples().iter().position(|x| x.abs() > threshold).unwrap_or(0))
}

/// Source-receiver distance from the direct-path delay, clamped to [0.3, 30] m.
pub fn estimate_srd(w: &Waveform) -> Result<f64, DspError> {
    let onset = detect_onset(w)?;
    let delay_s = onset as f64 / w.sample_rate() as f64;
    Ok((delay_s * SPEED_OF_SOUND).clamp(SRD_MIN_M, SRD_MAX_M))
}

fn energy(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

fn window_end(w: &Waveform, onset: usize, seconds: f64, what: &str) -> Result<usize, DspError> {
    if onset >= w.len() {
        return Err(DspError::Config(format!("onset {onset} is outside the signal")));
    }
    let end = onset + w.seconds_to_samples(seconds);
    if end > w.len() {
        return Err(DspError::Config(format!(
            "{what} needs {:.0} ms of signal after the onset",
            seconds * 1e3
        )));
    }
    Ok(end)
}

/// Clarity: early (first 80 ms) to late energy ratio in dB.
///
/// Zero late energy yields `f64::INFINITY`, which callers must treat as a
/// degenerate sentinel rather than a value.
pub fn clarity_c80(w: &Waveform, onset: usize) -> Result<f64, DspError> {
    let split = window_end(w, onset, 0.080, "C80")?;
    let early = energy(&w.samples()[onset..split]);
    let late = energy(&w.samples()[split..]);
    if late == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (early / late).log10())
}

/// Definition: percentage of the energy after the onset arriving in the first 50 ms.
pub fn definition_d50(w: &Waveform, onset: usize) -> Result<f64, DspError> {
    let split = window_end(w, onset, 0.050, "D50")?;
    let total = energy(&w.samples()[onset..]);
    if total == 0.0 {
        return Err(DspError::DegenerateSignal("no energy after the onset".into()));
    }
    Ok(100.0 * energy(&w.samples()[onset..split]) / total)
}

fn measure_all(w: &Waveform, onset: usize, band: Option<usize>, issues: &mut Vec<Issue>) -> Measures {
    let mut note = |measure: &str, reason: String| {
        issues.push(Issue { band, measure: measure.to_string(), reason });
    };
    let mut m = Measures::default();

    match energy_decay_curve(&w.tail_from(onset)) {
        Ok(edc) => {
            for (kind, slot, name) in [
                (DecayKind::T30, &mut m.t30_s, "t30_s"),
                (DecayKind::T15, &mut m.t15_s, "t15_s"),
                (DecayKind::Edt, &mut m.edt_s, "edt_s"),
            ] {
                match reverb_time(&edc, kind) {
                    Ok(t) => *slot = Some(t),
                    Err(e) => note(name, e.to_string()),
                }
            }
        }
        Err(e) => {
            for name in ["t30_s", "t15_s", "edt_s"] {
                note(name, e.to_string());
            }
        }
    }
    match clarity_c80(w, onset) {
        Ok(c) if c.is_finite() => m.c80_db = Some(c),
        Ok(_) => note("c80_db", "degenerate: no late energy".into()),
        Err(e) => note("c80_db", e.to_string()),
    }
    match definition_d50(w, onset) {
        Ok(d) => m.d50_pct = Some(d),
        Err(e) => note("d50_pct", e.to_string()),
    }
    m
}

/// Extract the full parameter set from a time-domain RIR.
///
/// Broadband measures use the whole signal, band measures the zero-phase
/// octave-band outputs; all windows and decay curves start at the broadband
/// onset. Measures that cannot be computed are left empty and listed in
/// `issues`.
pub fn analyze(w: &Waveform) -> Result<AcousticParams, DspError> {
    if w.is_silent() {
        return Err(DspError::DegenerateSignal("all-zero input".into()));
    }
    let bands = bandpass_filterbank(w, &BandSet::octaves())?;
    let onset = detect_onset(w)?;
    let srd_m = estimate_srd(w)?;

    let mut issues = Vec::new();
    let broadband = measure_all(w, onset, None, &mut issues);
    let per_band = bands
        .iter()
        .enumerate()
        .map(|(b, band)| {
            if band.is_silent() {
                issues.push(Issue { band: Some(b), measure: "all".into(), reason: "silent band".into() });
                Measures::default()
            } else {
                measure_all(band, onset, Some(b), &mut issues)
            }
        })
        .collect();
    Ok(AcousticParams { broadband, per_band, srd_m, issues })
}
