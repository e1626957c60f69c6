//! Parameter-matched RIR synthesis, mel-band equalisation and the noise anchor.
//!
//! Each octave band is band-limited Gaussian noise under a two-slope power
//! envelope (EDT slope for the first 10 dB of decay, T30 slope after) plus a
//! band-limited direct impulse at the SRD delay. Gains for the direct sound
//! and the 0–50 ms and 50–80 ms segments are solved from D50 and C80; a
//! short loop then re-analyses the result and corrects the per-band controls.

mod eq;
mod target;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dsp::{
    analyze, filtfilt, octave_chain, octave_pad, AcousticParams, BandSet, DspError, MelEnergyProfile, Measures,
    Waveform, NUM_BANDS,
};
use crate::params::{default_grids, GridSet, ParamKind};
use crate::{Result, SPEED_OF_SOUND};

pub use eq::{apply_mel_eq, apply_mel_eq_with_gains};
pub use target::{coherent_grid_target, natural_clarity};

/// Power decay rate, per second, of a 60 dB drop in `t` seconds.
fn decay_rate(t: f64) -> f64 {
    6.0 * std::f64::consts::LN_10 / t
}

const DEFAULT_MAX_ITERATIONS: usize = 10;

fn default_duration() -> f64 {
    2.0
}

fn default_sample_rate() -> u32 {
    crate::DEFAULT_SAMPLE_RATE
}

fn default_max_iterations() -> usize {
    DEFAULT_MAX_ITERATIONS
}

/// What to synthesise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthTarget {
    pub params: AcousticParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eq_profile: Option<MelEnergyProfile>,
    #[serde(default = "default_duration")]
    pub duration_s: f64,
    #[serde(default = "default_sample_rate")]
    pub sample_rate_hz: u32,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_max_iterations")]
    pub max_iterations: usize,
}

impl SynthTarget {
    pub fn new(params: AcousticParams, seed: u64) -> Self {
        Self {
            params,
            eq_profile: None,
            duration_s: default_duration(),
            sample_rate_hz: default_sample_rate(),
            seed,
            max_iterations: DEFAULT_MAX_ITERATIONS,
        }
    }

    /// Band measures missing from `params` are taken from the broadband ones.
    /// Fails if a broadband measure is itself missing.
    pub fn filled(params: &AcousticParams, seed: u64) -> Result<Self> {
        let b = params.broadband;
        if !b.is_complete() {
            return Err(DspError::Config("target needs every broadband measure".into()).into());
        }
        let mut p = params.clone();
        p.per_band.resize(NUM_BANDS, b);
        for m in &mut p.per_band {
            m.t30_s = m.t30_s.or(b.t30_s);
            m.t15_s = m.t15_s.or(b.t15_s);
            m.edt_s = m.edt_s.or(b.edt_s);
            m.c80_db = m.c80_db.or(b.c80_db);
            m.d50_pct = m.d50_pct.or(b.d50_pct);
        }
        p.issues.clear();
        Ok(Self::new(p, seed))
    }

    /// Check shape and duration, and return the params clamped into the grid ranges.
    fn clamped(&self, grids: &GridSet) -> Result<AcousticParams> {
        let cfg = |m: String| -> crate::Error { DspError::Config(m).into() };
        if !self.params.is_complete() {
            return Err(cfg("target parameters are incomplete".into()));
        }
        BandSet::octaves().check_nyquist(self.sample_rate_hz)?;
        if self.max_iterations == 0 {
            return Err(cfg("max_iterations must be at least 1".into()));
        }
        let clamp = |v: Option<f64>, k: ParamKind| {
            let g = grids.get(k);
            v.map(|v| v.clamp(g.min, g.max))
        };
        let clamp_m = |m: &Measures| Measures {
            t30_s: clamp(m.t30_s, ParamKind::T30),
            t15_s: clamp(m.t15_s, ParamKind::T15),
            edt_s: clamp(m.edt_s, ParamKind::Edt),
            c80_db: clamp(m.c80_db, ParamKind::C80),
            d50_pct: clamp(m.d50_pct, ParamKind::D50),
        };
        let p = AcousticParams {
            broadband: clamp_m(&self.params.broadband),
            per_band: self.params.per_band.iter().map(clamp_m).collect(),
            srd_m: self.params.srd_m.clamp(grids.srd.min, grids.srd.max),
            issues: Vec::new(),
        };
        let longest = p.per_band.iter().chain([&p.broadband]).filter_map(|m| m.t30_s).fold(0.0, f64::max);
        if !(self.duration_s >= 1.2 * longest) {
            return Err(cfg(format!(
                "duration {} s is shorter than 1.2 x the longest T30 ({longest} s)",
                self.duration_s
            )));
        }
        Ok(p)
    }
}

/// Acceptance window for a synthesised parameter set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerance {
    pub t30_rel: f64,
    pub t15_rel: f64,
    pub edt_rel: f64,
    pub c80_db: f64,
    pub d50_pct: f64,
}

impl Default for Tolerance {
    fn default() -> Self {
        Self { t30_rel: 0.10, t15_rel: 0.10, edt_rel: 0.15, c80_db: 1.0, d50_pct: 5.0 }
    }
}

impl Tolerance {
    /// Per-measure errors scaled by their tolerance (<= 1 passes); a
    /// missing achieved value counts as 10.
    pub fn normalized_errors(&self, target: &Measures, achieved: &Measures) -> [f64; 5] {
        let rel = |t: Option<f64>, a: Option<f64>, tol: f64| match (t, a) {
            (Some(t), Some(a)) => (a - t).abs() / t.abs() / tol,
            (None, _) => 0.0,
            (Some(_), None) => 10.0,
        };
        let abs = |t: Option<f64>, a: Option<f64>, tol: f64| match (t, a) {
            (Some(t), Some(a)) => (a - t).abs() / tol,
            (None, _) => 0.0,
            (Some(_), None) => 10.0,
        };
        [
            rel(target.t30_s, achieved.t30_s, self.t30_rel),
            rel(target.t15_s, achieved.t15_s, self.t15_rel),
            rel(target.edt_s, achieved.edt_s, self.edt_rel),
            abs(target.c80_db, achieved.c80_db, self.c80_db),
            abs(target.d50_pct, achieved.d50_pct, self.d50_pct),
        ]
    }

    pub fn passes(&self, target: &Measures, achieved: &Measures) -> bool {
        self.normalized_errors(target, achieved).iter().all(|&e| e <= 1.0)
    }
}

/// Error of one synthesised slot against its target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotError {
    pub slot: String,
    pub target: f64,
    pub achieved: Option<f64>,
    /// |achieved - target| / |target|; C80 compared as linear energy ratios.
    pub relative_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthReport {
    pub achieved: AcousticParams,
    pub iterations: usize,
    /// Broadband measures and every band T30 reached the loop tolerances.
    pub converged: bool,
    pub errors: Vec<SlotError>,
    /// Notes about targets that could not be honoured exactly.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
}

fn slot_errors(target: &AcousticParams, achieved: &AcousticParams) -> Vec<SlotError> {
    let mut out = Vec::new();
    let mut push = |slot: String, t: Option<f64>, a: Option<f64>, kind: ParamKind| {
        let Some(t) = t else { return };
        let rel = a.map(|a| {
            if kind == ParamKind::C80 {
                let (la, lt) = (10f64.powf(a / 10.0), 10f64.powf(t / 10.0));
                (la - lt).abs() / lt
            } else {
                (a - t).abs() / t.abs()
            }
        });
        out.push(SlotError { slot, target: t, achieved: a, relative_error: rel });
    };
    let mut measures = |scope: &str, t: &Measures, a: &Measures| {
        push(format!("{scope}.t30_s"), t.t30_s, a.t30_s, ParamKind::T30);
        push(format!("{scope}.t15_s"), t.t15_s, a.t15_s, ParamKind::T15);
        push(format!("{scope}.edt_s"), t.edt_s, a.edt_s, ParamKind::Edt);
        push(format!("{scope}.c80_db"), t.c80_db, a.c80_db, ParamKind::C80);
        push(format!("{scope}.d50_pct"), t.d50_pct, a.d50_pct, ParamKind::D50);
    };
    measures("broadband", &target.broadband, &achieved.broadband);
    for (b, c) in BandSet::OCTAVE_CENTERS_HZ.iter().enumerate() {
        measures(&format!("band_{c}"), &target.per_band[b], &achieved.per_band[b]);
    }
    out.push(SlotError {
        slot: "srd_m".into(),
        target: target.srd_m,
        achieved: Some(achieved.srd_m),
        relative_error: Some((achieved.srd_m - target.srd_m).abs() / target.srd_m),
    });
    out
}

/// Knobs of one band's generator, moved by the refinement loop.
#[derive(Debug, Clone, Copy)]
struct BandControl {
    edt_s: f64,
    t30_s: f64,
    /// Early (0–50 ms) energy fraction.
    d: f64,
    /// Early-to-late (80 ms) energy ratio, linear.
    c: f64,
    /// Power gain of the 0–50 ms noise relative to the 50–80 ms noise;
    /// sets how the early energy splits between direct sound and noise.
    early: f64,
}

impl BandControl {
    fn from_target(m: &Measures) -> Self {
        Self {
            edt_s: m.edt_s.unwrap(),
            t30_s: m.t30_s.unwrap(),
            d: m.d50_pct.unwrap() / 100.0,
            c: 10f64.powf(m.c80_db.unwrap() / 10.0),
            early: 1.0,
        }
    }

    /// Apply corrections: log ratios for EDT and T30, a logit shift for the
    /// early fraction, a dB shift for clarity, and a T15 log ratio that
    /// moves early energy between the direct sound and the noise.
    fn correct(&mut self, d: [f64; 5]) {
        let lim = 2f64.ln();
        self.t30_s = (self.t30_s * d[0].clamp(-lim, lim).exp()).clamp(0.03, 6.0);
        self.edt_s = (self.edt_s * d[1].clamp(-lim, lim).exp()).clamp(0.03, 6.0);
        let z = logit(self.d) + d[2];
        self.d = (1.0 / (1.0 + (-z).exp())).clamp(0.01, 0.999);
        let db = (10.0 * self.c.log10() + d[3].clamp(-10.0, 10.0)).clamp(-20.0, 40.0);
        self.c = 10f64.powf(db / 10.0);
        self.early = (self.early * (-2.0 * d[4].clamp(-lim, lim)).exp()).clamp(0.05, 20.0);
    }

    /// Unscaled tail power `n` samples after the direct sound: EDT slope
    /// up to `knee_s`, T30 slope after, continuous at the knee.
    fn tail_power(&self, n: usize, fs: f64, knee_s: f64) -> f64 {
        let tau = n as f64 / fs;
        let (ke, kt) = (decay_rate(self.edt_s), decay_rate(self.t30_s));
        if tau < knee_s {
            (-ke * tau).exp()
        } else {
            (-ke * knee_s - kt * (tau - knee_s)).exp()
        }
    }
}

fn logit(p: f64) -> f64 {
    let p = p.clamp(1e-4, 1.0 - 1e-4);
    (p / (1.0 - p)).ln()
}

/// Target-minus-achieved offsets in the domains the controls move in
/// (log T30, log EDT, logit D50, C80 dB, log T15).
fn offsets(target: &Measures, achieved: &Measures) -> [Option<f64>; 5] {
    let log_ratio = |t: Option<f64>, a: Option<f64>| match (t, a) {
        (Some(t), Some(a)) if a > 0.0 => Some((t / a).ln()),
        _ => None,
    };
    [
        log_ratio(target.t30_s, achieved.t30_s),
        log_ratio(target.edt_s, achieved.edt_s),
        target.d50_pct.zip(achieved.d50_pct).map(|(t, a)| logit(t / 100.0) - logit(a / 100.0)),
        target.c80_db.zip(achieved.c80_db).map(|(t, a)| t - a),
        log_ratio(target.t15_s, achieved.t15_s),
    ]
}

/// Per-band corrections, shifted so that their mean equals the broadband
/// correction. Bands keep their relative adjustments while the broadband
/// measures are steered directly. The T15 term is broadband only.
fn band_corrections(goal: &AcousticParams, achieved: &AcousticParams) -> Vec<[f64; 5]> {
    let broad = offsets(&goal.broadband, &achieved.broadband);
    let mut per: Vec<[f64; 5]> = goal
        .per_band
        .iter()
        .zip(&achieved.per_band)
        .map(|(t, a)| {
            let o = offsets(t, a);
            std::array::from_fn(|i| o[i].or(broad[i]).unwrap_or(0.0))
        })
        .collect();
    for (i, b) in broad.iter().enumerate() {
        if let Some(b) = b {
            let mean = per.iter().map(|d| d[i]).sum::<f64>() / per.len() as f64;
            per.iter_mut().for_each(|d| d[i] += b - mean);
        }
    }
    // Band T15 readings are too noisy to steer the early split per band.
    let t15 = broad[4].unwrap_or(0.0);
    per.iter_mut().for_each(|d| d[4] = t15);
    per
}

struct BandPlan {
    /// Power gains of the 0-50 ms, 50-80 ms and later segments.
    gains: [f64; 3],
    direct_energy: f64,
    knee_s: f64,
    flag: Option<String>,
}

/// Fixed random material of one synthesis run.
struct Material {
    fs: f64,
    len: usize,
    direct_at: usize,
    /// Band-limited unit-power noise per band.
    noise: Vec<Vec<f64>>,
    /// Band-limited unit-energy impulse at `direct_at`, per band.
    direct: Vec<Vec<f64>>,
}

impl Material {
    fn new(len: usize, sample_rate: u32, srd_m: f64, seed: u64) -> Self {
        let fs = sample_rate as f64;
        let direct_at = ((srd_m / SPEED_OF_SOUND * fs).round() as usize).min(len - 1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut noise = Vec::with_capacity(NUM_BANDS);
        let mut direct = Vec::with_capacity(NUM_BANDS);
        for &c in &BandSet::OCTAVE_CENTERS_HZ {
            let chain = octave_chain(c, sample_rate);
            let pad = octave_pad(c, sample_rate);
            let white: Vec<f64> = (0..len).map(|_| StandardNormal.sample(&mut rng)).collect();
            let mut n = filtfilt(&chain, &white, pad);
            let p = n.iter().map(|v| v * v).sum::<f64>() / len as f64;
            n.iter_mut().for_each(|v| *v /= p.sqrt());
            noise.push(n);

            let mut imp = vec![0.0; len];
            imp[direct_at] = 1.0;
            let mut d = filtfilt(&chain, &imp, pad);
            // Drop the pre-ringing so nothing precedes the direct sound.
            d[..direct_at].iter_mut().for_each(|v| *v = 0.0);
            let e = d.iter().map(|v| v * v).sum::<f64>().sqrt();
            d.iter_mut().for_each(|v| *v /= e);
            direct.push(d);
        }
        Self { fs, len, direct_at, noise, direct }
    }

    /// Solve one band's envelope and gains for unit total energy.
    ///
    /// The knee between the EDT and T30 slopes is placed where the band's
    /// designed decay curve (direct sound included) reaches -10 dB; that
    /// level falls monotonically with the knee position, so it is bisected.
    fn plan_band(&self, b: usize, ctl: &BandControl) -> BandPlan {
        let n50 = (0.05 * self.fs).round() as usize;
        let n80 = (0.08 * self.fs).round() as usize;
        let noise = &self.noise[b][self.direct_at..];
        let len = noise.len();

        let mut flag = None;
        let e3 = 1.0 / (1.0 + ctl.c);
        let e1 = ctl.d;
        let mut e2 = 1.0 - e1 - e3;
        if e2 < 0.0 {
            flag = Some(format!("band {b}: C80 below what D50 implies; 50-80 ms segment silenced"));
            e2 = 0.0;
        }

        // Plan for a knee at sample `k`, plus the energy remaining after it.
        let solve = |k: usize| -> (BandPlan, f64) {
            let knee_s = k as f64 / self.fs;
            let env: Vec<f64> = (0..len).map(|n| ctl.tail_power(n, self.fs, knee_s) * noise[n] * noise[n]).collect();
            let seg = |a: usize, z: usize| -> f64 { env[a.min(len)..z.min(len)].iter().sum() };
            let (s1, s2, s3) = (seg(0, n50), seg(n50, n80), seg(n80, len));
            let g3 = if s3 > 0.0 { e3 / s3 } else { 0.0 };
            let g2 = if s2 > 0.0 { e2 / s2 } else { 0.0 };
            let g1 = ctl.early * g2;
            let (mut g1, mut a2) = (g1, e1 - g1 * s1);
            if a2 < 0.0 {
                a2 = 0.0;
                g1 = if s1 > 0.0 { e1 / s1 } else { 0.0 };
            }
            let gains = [g1, g2, g3];
            let after: f64 = (k.min(len)..len)
                .map(|n| gains[if n < n50 { 0 } else if n < n80 { 1 } else { 2 }] * env[n])
                .sum();
            (BandPlan { gains, direct_energy: a2, knee_s, flag: None }, after)
        };

        let (mut lo, mut hi) = (0, len);
        if solve(0).1 > 0.1 {
            while hi - lo > 1 {
                let mid = (lo + hi) / 2;
                if solve(mid).1 > 0.1 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
        } else {
            hi = 0;
        }
        let mut plan = solve(hi).0;
        plan.flag = flag;
        plan
    }

    fn render_band(&self, b: usize, ctl: &BandControl, out: &mut [f64]) -> Option<String> {
        let n50 = (0.05 * self.fs).round() as usize;
        let n80 = (0.08 * self.fs).round() as usize;
        let plan = self.plan_band(b, ctl);
        let noise = &self.noise[b][self.direct_at..];
        for (n, o) in out[self.direct_at..].iter_mut().enumerate() {
            let g = plan.gains[if n < n50 { 0 } else if n < n80 { 1 } else { 2 }];
            *o += (g * ctl.tail_power(n, self.fs, plan.knee_s)).sqrt() * noise[n];
        }
        let a = plan.direct_energy.sqrt();
        for (o, d) in out.iter_mut().zip(&self.direct[b]) {
            *o += a * d;
        }
        plan.flag
    }

    fn render(&self, controls: &[BandControl], flags: &mut Vec<String>) -> Result<Waveform, DspError> {
        let mut out = vec![0.0; self.len];
        for (b, ctl) in controls.iter().enumerate() {
            if let Some(f) = self.render_band(b, ctl, &mut out) {
                if !flags.contains(&f) {
                    flags.push(f);
                }
            }
        }
        Waveform::new(out, self.fs as u32)
    }
}

/// How far an analysis is from its target; lower is better.
fn score(tol: &Tolerance, target: &AcousticParams, achieved: &AcousticParams) -> f64 {
    let max = |e: [f64; 5]| e.into_iter().fold(0.0, f64::max);
    let broadband = max(tol.normalized_errors(&target.broadband, &achieved.broadband));
    let bands = target
        .per_band
        .iter()
        .zip(&achieved.per_band)
        .map(|(t, a)| max(tol.normalized_errors(t, a)))
        .sum::<f64>()
        / NUM_BANDS as f64;
    broadband + 0.25 * bands
}

fn converged(tol: &Tolerance, target: &AcousticParams, achieved: &AcousticParams) -> bool {
    tol.passes(&target.broadband, &achieved.broadband)
        && target.per_band.iter().zip(&achieved.per_band).all(|(t, a)| match (t.t30_s, a.t30_s) {
            (Some(t), Some(a)) => (a - t).abs() / t <= tol.t30_rel,
            _ => true,
        })
}

/// Synthesise an RIR whose analysis matches `target`.
///
/// Deterministic in the target (including its seed). Targets that cannot be
/// met exactly still produce the best candidate found, with `flags` and the
/// per-slot errors in the report describing the shortfall. The result is
/// normalised to unit peak.
pub fn synth_rir(target: &SynthTarget) -> Result<(Waveform, SynthReport)> {
    let grids = default_grids();
    let goal = target.clamped(&grids)?;
    let len = (target.duration_s * target.sample_rate_hz as f64).round() as usize;
    let material = Material::new(len, target.sample_rate_hz, goal.srd_m, target.seed);
    let tol = Tolerance::default();

    let mut controls: Vec<BandControl> = goal.per_band.iter().map(BandControl::from_target).collect();
    let mut flags = Vec::new();
    let mut best: Option<(f64, Waveform, AcousticParams)> = None;
    let mut iterations = 0;
    let mut done = false;

    while iterations < target.max_iterations && !done {
        iterations += 1;
        let w = material.render(&controls, &mut flags)?.peak_normalized();
        let achieved = analyze(&w)?;
        let s = score(&tol, &goal, &achieved);
        done = converged(&tol, &goal, &achieved);
        log::debug!("synth iteration {iterations}: score {s:.3}");
        for (ctl, d) in controls.iter_mut().zip(band_corrections(&goal, &achieved)) {
            ctl.correct(d);
        }
        if best.as_ref().is_none_or(|(bs, _, _)| s < *bs) {
            best = Some((s, w, achieved));
        }
    }

    let (_, mut w, mut achieved) = best.expect("at least one iteration runs");
    if let Some(profile) = &target.eq_profile {
        w = apply_mel_eq(&w, profile)?;
        w = w.peak_normalized();
        achieved = analyze(&w)?;
    }
    let report = SynthReport {
        converged: converged(&tol, &goal, &achieved),
        errors: slot_errors(&goal, &achieved),
        achieved,
        iterations,
        flags,
    };
    Ok((w, report))
}

/// The listening-test anchor: 0.5 s of uniform white noise at unit peak.
pub fn anchor_rir(sample_rate_hz: u32) -> Result<Waveform> {
    anchor_rir_seeded(sample_rate_hz, 0)
}

pub fn anchor_rir_seeded(sample_rate_hz: u32, seed: u64) -> Result<Waveform> {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len = sample_rate_hz as usize / 2;
    let w = Waveform::from_fn(len, sample_rate_hz, |_| rng.random_range(-1.0..1.0))?;
    Ok(w.peak_normalized())
}
