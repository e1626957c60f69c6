use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsp::{analyze, conform, convolve, read_wav, srmr_lite, AcousticParams, BandSet, DspError, Waveform};
use crate::manifest::{Manifest, ManifestError, ManifestRow};
use crate::params::{ParamKind, Slot};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Manifest(#[from] ManifestError),
    #[error(transparent)]
    Dsp(#[from] DspError),
}

/// Metrics in report order. The five decay and clarity metrics are the
/// A-weighted octave-band aggregates; `*_broadband` use the broadband values.
pub const METRICS: [&str; 12] = [
    "t30",
    "t15",
    "edt",
    "c80",
    "d50",
    "srd",
    "srmr",
    "t30_broadband",
    "t15_broadband",
    "edt_broadband",
    "c80_broadband",
    "d50_broadband",
];

const BAND_METRIC_KINDS: [ParamKind; 5] = ParamKind::BAND_KINDS;

fn plain_relative(feat: f64, reference: f64) -> Option<f64> {
    let d = (feat - reference).abs() / reference;
    (reference != 0.0 && d.is_finite()).then_some(d)
}

/// |feat - ref| / ref, with C80 compared in the linear energy domain.
///
/// `None` marks an excluded comparison: zero reference or non-finite input.
pub fn relative_error(feat: f64, reference: f64, kind: ParamKind) -> Option<f64> {
    if !feat.is_finite() || !reference.is_finite() {
        return None;
    }
    match kind {
        ParamKind::C80 => plain_relative(10f64.powf(feat / 10.0), 10f64.powf(reference / 10.0)),
        _ => plain_relative(feat, reference),
    }
}

fn r_a(f: f64) -> f64 {
    let f2 = f * f;
    let c1 = 20.6f64.powi(2);
    let c2 = 107.7f64.powi(2);
    let c3 = 737.9f64.powi(2);
    let c4 = 12194f64.powi(2);
    c4 * f2 * f2 / ((f2 + c1) * ((f2 + c2) * (f2 + c3)).sqrt() * (f2 + c4))
}

/// A-weighting response in dB, 0 dB at 1 kHz.
pub fn a_weight_db(f_hz: f64) -> f64 {
    20.0 * (r_a(f_hz) / r_a(1000.0)).log10()
}

/// A-weighted mean of per-band errors, weights 10^(A(f_b)/10).
pub fn a_weighted_aggregate(band_errors: &[f64], bands: &BandSet) -> Result<f64, EvalError> {
    if band_errors.len() != bands.len() {
        return Err(EvalError::Config(format!("{} band errors for {} bands", band_errors.len(), bands.len())));
    }
    let partial: Vec<Option<f64>> = band_errors.iter().map(|&e| Some(e)).collect();
    aggregate_available(&partial, bands).ok_or_else(|| EvalError::Config("band errors must be finite".into()))
}

/// Aggregate over the bands that have a valid comparison, renormalising the weights.
fn aggregate_available(band_errors: &[Option<f64>], bands: &BandSet) -> Option<f64> {
    let (num, den) = band_errors
        .iter()
        .zip(bands.centers_hz())
        .filter_map(|(e, &f)| e.filter(|v| v.is_finite()).map(|v| (v, 10f64.powf(a_weight_db(f) / 10.0))))
        .fold((0.0, 0.0), |(n, d), (v, g)| (n + g * v, d + g));
    (den > 0.0).then(|| num / den)
}

fn reverberant(dry: &Waveform, rir: &Waveform) -> Result<Waveform, DspError> {
    Waveform::new(convolve(dry.samples(), rir.samples()), dry.sample_rate())
}

fn srmr_or_excluded(w: &Waveform) -> Result<Option<f64>, EvalError> {
    match srmr_lite(w) {
        Ok(s) if s > 0.0 && s.is_finite() => Ok(Some(s)),
        Ok(_) | Err(DspError::DegenerateSignal(_)) => Ok(None),
        Err(e) => Err(e.into()),
    }
}

/// Mean relative SRMR difference of the dry signals convolved with each RIR.
///
/// `Ok(None)` when any score is degenerate.
pub fn srmr_deviation(gen: &Waveform, reference: &Waveform, dry: &[Waveform]) -> Result<Option<f64>, EvalError> {
    if dry.is_empty() {
        return Err(EvalError::Config("at least one dry signal is required".into()));
    }
    let fs = reference.sample_rate();
    if gen.sample_rate() != fs || dry.iter().any(|d| d.sample_rate() != fs) {
        return Err(EvalError::Config("sample rates of RIRs and dry signals differ".into()));
    }
    let mut total = 0.0;
    for d in dry {
        let (Some(g), Some(r)) =
            (srmr_or_excluded(&reverberant(d, gen)?)?, srmr_or_excluded(&reverberant(d, reference)?)?)
        else {
            return Ok(None);
        };
        match plain_relative(g, r) {
            Some(v) => total += v,
            None => return Ok(None),
        }
    }
    Ok(Some(total / dry.len() as f64))
}

/// Mean and percentile confidence bounds of a sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub mean: f64,
    pub lower: f64,
    pub upper: f64,
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Percentile bootstrap of the mean.
///
/// The reported mean is the plain mean of `values`; the bounds are the
/// (1 - level)/2 and (1 + level)/2 quantiles (linear interpolation) of the
/// resampled means, widened if needed so that they contain the mean.
pub fn bootstrap_ci(values: &[f64], n_resamples: usize, level: f64, seed: u64) -> Result<Interval, EvalError> {
    if values.len() < 2 {
        return Err(EvalError::Config(format!("bootstrap needs at least 2 values, got {}", values.len())));
    }
    if n_resamples == 0 || !(level > 0.0 && level < 1.0) {
        return Err(EvalError::Config(format!("invalid bootstrap settings: {n_resamples} resamples, level {level}")));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(EvalError::Config("bootstrap values must be finite".into()));
    }
    let n = values.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut means: Vec<f64> = (0..n_resamples)
        .map(|_| (0..n).map(|_| values[rng.random_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    let m = mean(values);
    let tail = (1.0 - level) / 2.0;
    Ok(Interval { mean: m, lower: quantile(&means, tail).min(m), upper: quantile(&means, 1.0 - tail).max(m) })
}

/// One metric of one method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub metric: String,
    /// `None` when fewer than two comparisons were valid.
    pub interval: Option<Interval>,
    pub count: usize,
    pub excluded: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub method: String,
    pub samples: usize,
    pub excluded_samples: usize,
    pub n_resamples: usize,
    pub level: f64,
    pub seed: u64,
    pub metrics: Vec<MetricSummary>,
}

impl EvalReport {
    pub fn metric(&self, name: &str) -> Option<&MetricSummary> {
        self.metrics.iter().find(|m| m.metric == name)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises")
    }
}

/// Table with one row per method and one column per metric. Cells hold the
/// mean and its distances to the upper and lower bounds, all in percent.
pub fn reports_to_csv(reports: &[EvalReport]) -> String {
    let mut out = String::from("method");
    for m in METRICS {
        out.push(',');
        out.push_str(m);
    }
    out.push('\n');
    for r in reports {
        out.push_str(&r.method);
        for name in METRICS {
            out.push(',');
            if let Some(i) = r.metric(name).and_then(|m| m.interval) {
                out.push_str(&format!(
                    "{:.2} +{:.2}/-{:.2}",
                    100.0 * i.mean,
                    100.0 * (i.upper - i.mean),
                    100.0 * (i.mean - i.lower)
                ));
            }
        }
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOptions {
    pub n_resamples: usize,
    pub level: f64,
    pub seed: u64,
    pub session_rate: u32,
    pub clip_seconds: f64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self { n_resamples: 2000, level: 0.95, seed: 0, session_rate: crate::DEFAULT_SAMPLE_RATE, clip_seconds: 2.0 }
    }
}

/// Per-metric relative errors of one pair, in [`METRICS`] order.
pub fn sample_errors(gen: &AcousticParams, reference: &AcousticParams, srmr: Option<f64>) -> [Option<f64>; 12] {
    let bands = BandSet::octaves();
    let mut out = [None; 12];
    for (i, &kind) in BAND_METRIC_KINDS.iter().enumerate() {
        let per_band: Vec<Option<f64>> = (0..bands.len())
            .map(|b| {
                let slot = Slot { band: Some(b), kind };
                relative_error(slot.value_in(gen)?, slot.value_in(reference)?, kind)
            })
            .collect();
        out[i] = aggregate_available(&per_band, &bands);
        let slot = Slot { band: None, kind };
        out[7 + i] = slot
            .value_in(gen)
            .zip(slot.value_in(reference))
            .and_then(|(g, r)| relative_error(g, r, kind));
    }
    out[5] = relative_error(gen.srd_m, reference.srd_m, ParamKind::Srd);
    out[6] = srmr;
    out
}

struct Loaded {
    wave: Waveform,
    params: AcousticParams,
}

fn load_row(m: &Manifest, row: &ManifestRow, opts: &EvalOptions) -> Result<Loaded, String> {
    if !row.valid {
        return Err(row.exclusion_reason.clone().unwrap_or_else(|| "marked invalid".into()));
    }
    let raw = read_wav(m.wav_path(row)).map_err(|e| e.to_string())?;
    let wave = conform(&raw, opts.session_rate, opts.clip_seconds).map_err(|e| e.to_string())?;
    let params = match &row.params {
        Some(p) => p.clone(),
        None => analyze(&wave).map_err(|e| e.to_string())?,
    };
    Ok(Loaded { wave, params })
}

/// Compare a generated set against its references, matched by id.
///
/// Samples are processed in id order, so the report does not depend on row
/// order. Rows that are invalid or unreadable on either side are excluded
/// from every metric; single comparisons that are undefined are excluded
/// from their metric only.
pub fn evaluate_set(
    method: &str,
    generated: &Manifest,
    reference: &Manifest,
    dry: &[Waveform],
    opts: &EvalOptions,
) -> Result<EvalReport, EvalError> {
    generated.check_same_ids(reference)?;
    if dry.is_empty() {
        return Err(EvalError::Config("at least one dry signal is required".into()));
    }
    let dry: Vec<Waveform> = dry.iter().map(|d| crate::dsp::resample(d, opts.session_rate)).collect::<Result<_, _>>()?;
    let ids: Vec<&str> = generated.ids().into_iter().collect();

    let per_sample: Vec<Option<[Option<f64>; 12]>> = ids
        .par_iter()
        .map(|id| -> Result<_, EvalError> {
            let g = load_row(generated, generated.get(id).expect("id present"), opts);
            let r = load_row(reference, reference.get(id).expect("id present"), opts);
            let (g, r) = match (g, r) {
                (Ok(g), Ok(r)) => (g, r),
                (Err(e), _) | (_, Err(e)) => {
                    log::warn!("excluding {id}: {e}");
                    return Ok(None);
                }
            };
            let srmr = srmr_deviation(&g.wave, &r.wave, &dry)?;
            Ok(Some(sample_errors(&g.params, &r.params, srmr)))
        })
        .collect::<Result<_, _>>()?;

    let excluded_samples = per_sample.iter().filter(|s| s.is_none()).count();
    let metrics = METRICS
        .iter()
        .enumerate()
        .map(|(k, name)| {
            let values: Vec<f64> = per_sample.iter().flatten().filter_map(|s| s[k]).collect();
            let interval = if values.len() >= 2 {
                Some(bootstrap_ci(&values, opts.n_resamples, opts.level, opts.seed.wrapping_add(k as u64))?)
            } else {
                None
            };
            let excluded = ids.len() - values.len();
            if excluded > 0 {
                log::info!("{name}: {excluded} of {} comparisons excluded", ids.len());
            }
            Ok(MetricSummary { metric: name.to_string(), interval, count: values.len(), excluded })
        })
        .collect::<Result<_, EvalError>>()?;

    Ok(EvalReport {
        method: method.to_string(),
        samples: ids.len(),
        excluded_samples,
        n_resamples: opts.n_resamples,
        level: opts.level,
        seed: opts.seed,
        metrics,
    })
}
