//! Acoustic parameter class grids and conditioning vectors.
//!
//! Slot order, used by every flat representation (index lists, raw and
//! one-hot conditioning vectors):
//!
//! 1. broadband T30, T15, EDT, C80, D50, SRD
//! 2. for each band from 63 Hz to 8 kHz: T30, T15, EDT, C80, D50
//!
//! giving 6 + 8 × 5 = 46 slots.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsp::{AcousticParams, BandSet, Measures, NUM_BANDS};

pub const NUM_SLOTS: usize = 6 + 5 * NUM_BANDS;

/// Guards quantization against round-off just below a class boundary.
const BOUNDARY_EPS: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum ParamsError {
    #[error("invalid value: {0}")]
    InvalidValue(String),
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("missing {measure} for {scope}")]
    Missing { measure: &'static str, scope: String },
    #[error("shape mismatch: {0}")]
    Shape(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    T30,
    T15,
    Edt,
    C80,
    D50,
    Srd,
}

impl ParamKind {
    /// The five measures carried per band, in slot order.
    pub const BAND_KINDS: [ParamKind; 5] = [Self::T30, Self::T15, Self::Edt, Self::C80, Self::D50];

    pub fn name(self) -> &'static str {
        match self {
            Self::T30 => "t30_s",
            Self::T15 => "t15_s",
            Self::Edt => "edt_s",
            Self::C80 => "c80_db",
            Self::D50 => "d50_pct",
            Self::Srd => "srd_m",
        }
    }

    pub fn is_reverb_time(self) -> bool {
        matches!(self, Self::T30 | Self::T15 | Self::Edt)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Spacing {
    Linear,
    Log,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassGrid {
    pub kind: ParamKind,
    pub min: f64,
    pub max: f64,
    pub num_classes: usize,
    pub spacing: Spacing,
}

impl ClassGrid {
    pub fn new(kind: ParamKind, min: f64, max: f64, num_classes: usize, spacing: Spacing) -> Result<Self, ParamsError> {
        let g = Self { kind, min, max, num_classes, spacing };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<(), ParamsError> {
        let bad = |m: String| Err(ParamsError::InvalidGrid(m));
        if !(self.min.is_finite() && self.max.is_finite() && self.min < self.max) {
            return bad(format!("{:?}: need finite min < max, got [{}, {}]", self.kind, self.min, self.max));
        }
        if self.num_classes < 2 {
            return bad(format!("{:?}: need at least 2 classes", self.kind));
        }
        let want = if self.kind == ParamKind::Srd { Spacing::Log } else { Spacing::Linear };
        if self.spacing != want {
            return bad(format!("{:?} grid must use {want:?} spacing", self.kind));
        }
        if self.spacing == Spacing::Log && self.min <= 0.0 {
            return bad(format!("{:?}: log grid needs a positive minimum", self.kind));
        }
        Ok(())
    }

    fn to_axis(&self, v: f64) -> f64 {
        match self.spacing {
            Spacing::Linear => v,
            Spacing::Log => v.log10(),
        }
    }

    fn from_axis(&self, a: f64) -> f64 {
        match self.spacing {
            Spacing::Linear => a,
            Spacing::Log => 10f64.powf(a),
        }
    }

    /// Class width on the grid axis (physical units, or decades for log grids).
    pub fn width(&self) -> f64 {
        (self.to_axis(self.max) - self.to_axis(self.min)) / self.num_classes as f64
    }

    /// Class index of `value`, clamping out-of-range values to the end classes.
    pub fn quantize(&self, value: f64) -> Result<usize, ParamsError> {
        if value.is_nan() {
            return Err(ParamsError::InvalidValue(format!("{} is NaN", self.kind.name())));
        }
        let v = value.clamp(self.min, self.max);
        let pos = (self.to_axis(v) - self.to_axis(self.min)) / self.width();
        Ok(((pos + BOUNDARY_EPS).floor().max(0.0) as usize).min(self.num_classes - 1))
    }

    /// Center of class `index` (geometric center on log grids).
    pub fn dequantize(&self, index: usize) -> Result<f64, ParamsError> {
        if index >= self.num_classes {
            return Err(ParamsError::InvalidValue(format!(
                "class {index} out of range for {} ({} classes)",
                self.kind.name(),
                self.num_classes
            )));
        }
        Ok(self.from_axis(self.to_axis(self.min) + (index as f64 + 0.5) * self.width()))
    }
}

/// One grid per parameter kind.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSet {
    pub t30: ClassGrid,
    pub t15: ClassGrid,
    pub edt: ClassGrid,
    pub c80: ClassGrid,
    pub d50: ClassGrid,
    pub srd: ClassGrid,
}

impl GridSet {
    pub fn get(&self, kind: ParamKind) -> &ClassGrid {
        match kind {
            ParamKind::T30 => &self.t30,
            ParamKind::T15 => &self.t15,
            ParamKind::Edt => &self.edt,
            ParamKind::C80 => &self.c80,
            ParamKind::D50 => &self.d50,
            ParamKind::Srd => &self.srd,
        }
    }

    pub fn validate(&self) -> Result<(), ParamsError> {
        for k in [ParamKind::T30, ParamKind::T15, ParamKind::Edt, ParamKind::C80, ParamKind::D50, ParamKind::Srd] {
            let g = self.get(k);
            if g.kind != k {
                return Err(ParamsError::InvalidGrid(format!("{k:?} slot holds a {:?} grid", g.kind)));
            }
            g.validate()?;
        }
        Ok(())
    }

    /// Class counts per slot, in slot order.
    pub fn slot_sizes(&self) -> Vec<usize> {
        slots().iter().map(|s| self.get(s.kind).num_classes).collect()
    }

    pub fn one_hot_len(&self) -> usize {
        self.slot_sizes().iter().sum()
    }
}

impl Default for GridSet {
    fn default() -> Self {
        default_grids()
    }
}

pub fn default_grids() -> GridSet {
    let lin = |kind, min, max, n| ClassGrid { kind, min, max, num_classes: n, spacing: Spacing::Linear };
    GridSet {
        t30: lin(ParamKind::T30, 0.1, 1.5, 15),
        t15: lin(ParamKind::T15, 0.1, 1.5, 15),
        edt: lin(ParamKind::Edt, 0.1, 1.5, 15),
        c80: lin(ParamKind::C80, 0.0, 20.0, 11),
        d50: lin(ParamKind::D50, 40.0, 100.0, 13),
        srd: ClassGrid { kind: ParamKind::Srd, min: 0.3, max: 30.0, num_classes: 10, spacing: Spacing::Log },
    }
}

/// A position in the flat parameter layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Slot {
    /// `None` for broadband.
    pub band: Option<usize>,
    pub kind: ParamKind,
}

impl Slot {
    /// Dotted name such as `broadband.t30_s` or `band_500.c80_db`.
    pub fn name(&self) -> String {
        match self.band {
            None => format!("broadband.{}", self.kind.name()),
            Some(b) => format!("band_{}.{}", BandSet::OCTAVE_CENTERS_HZ[b], self.kind.name()),
        }
    }

    /// The slot's value in `p`, if measured.
    pub fn value_in(&self, p: &AcousticParams) -> Option<f64> {
        let m = match (self.band, self.kind) {
            (None, ParamKind::Srd) => return Some(p.srd_m),
            (Some(_), ParamKind::Srd) => return None,
            (None, _) => &p.broadband,
            (Some(b), _) => p.per_band.get(b)?,
        };
        match self.kind {
            ParamKind::T30 => m.t30_s,
            ParamKind::T15 => m.t15_s,
            ParamKind::Edt => m.edt_s,
            ParamKind::C80 => m.c80_db,
            ParamKind::D50 => m.d50_pct,
            ParamKind::Srd => None,
        }
    }
}

/// All 46 slots in canonical order.
pub fn slots() -> Vec<Slot> {
    let broadband = [ParamKind::T30, ParamKind::T15, ParamKind::Edt, ParamKind::C80, ParamKind::D50, ParamKind::Srd]
        .map(|kind| Slot { band: None, kind });
    let bands = (0..NUM_BANDS).flat_map(|b| ParamKind::BAND_KINDS.map(|kind| Slot { band: Some(b), kind }));
    broadband.into_iter().chain(bands).collect()
}

/// Class indices of the five per-band measures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MeasureClasses {
    pub t30: usize,
    pub t15: usize,
    pub edt: usize,
    pub c80: usize,
    pub d50: usize,
}

impl MeasureClasses {
    fn get(&self, kind: ParamKind) -> usize {
        match kind {
            ParamKind::T30 => self.t30,
            ParamKind::T15 => self.t15,
            ParamKind::Edt => self.edt,
            ParamKind::C80 => self.c80,
            ParamKind::D50 => self.d50,
            ParamKind::Srd => unreachable!("srd is not a per-band measure"),
        }
    }

    fn quantize(m: &Measures, grids: &GridSet, scope: &str) -> Result<Self, ParamsError> {
        let q = |v: Option<f64>, kind: ParamKind| match v {
            Some(v) => grids.get(kind).quantize(v),
            None => Err(ParamsError::Missing { measure: kind.name(), scope: scope.to_string() }),
        };
        Ok(Self {
            t30: q(m.t30_s, ParamKind::T30)?,
            t15: q(m.t15_s, ParamKind::T15)?,
            edt: q(m.edt_s, ParamKind::Edt)?,
            c80: q(m.c80_db, ParamKind::C80)?,
            d50: q(m.d50_pct, ParamKind::D50)?,
        })
    }

    fn dequantize(&self, grids: &GridSet) -> Result<Measures, ParamsError> {
        Ok(Measures::new(
            grids.t30.dequantize(self.t30)?,
            grids.t15.dequantize(self.t15)?,
            grids.edt.dequantize(self.edt)?,
            grids.c80.dequantize(self.c80)?,
            grids.d50.dequantize(self.d50)?,
        ))
    }
}

/// Class indices for all 46 parameters, together with the grids used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantizedParams {
    pub broadband: MeasureClasses,
    pub per_band: Vec<MeasureClasses>,
    pub srd: usize,
    pub grids: GridSet,
}

impl QuantizedParams {
    /// Quantize a complete parameter set. Missing measures are an error.
    pub fn from_params(p: &AcousticParams, grids: &GridSet) -> Result<Self, ParamsError> {
        if p.per_band.len() != NUM_BANDS {
            return Err(ParamsError::Shape(format!("expected {NUM_BANDS} bands, got {}", p.per_band.len())));
        }
        let per_band = p
            .per_band
            .iter()
            .enumerate()
            .map(|(b, m)| MeasureClasses::quantize(m, grids, &format!("band {b}")))
            .collect::<Result<_, _>>()?;
        Ok(Self {
            broadband: MeasureClasses::quantize(&p.broadband, grids, "broadband")?,
            per_band,
            srd: grids.srd.quantize(p.srd_m)?,
            grids: *grids,
        })
    }

    /// Build from 46 indices in slot order.
    pub fn from_indices(indices: &[usize], grids: &GridSet) -> Result<Self, ParamsError> {
        if indices.len() != NUM_SLOTS {
            return Err(ParamsError::Shape(format!("expected {NUM_SLOTS} indices, got {}", indices.len())));
        }
        let block = |s: &[usize]| MeasureClasses { t30: s[0], t15: s[1], edt: s[2], c80: s[3], d50: s[4] };
        let q = Self {
            broadband: block(&indices[..5]),
            srd: indices[5],
            per_band: indices[6..].chunks(5).map(block).collect(),
            grids: *grids,
        };
        q.validate()?;
        Ok(q)
    }

    /// Indices in slot order.
    pub fn indices(&self) -> Vec<usize> {
        slots()
            .iter()
            .map(|s| match (s.band, s.kind) {
                (None, ParamKind::Srd) => self.srd,
                (None, k) => self.broadband.get(k),
                (Some(b), k) => self.per_band[b].get(k),
            })
            .collect()
    }

    pub fn validate(&self) -> Result<(), ParamsError> {
        self.grids.validate()?;
        if self.per_band.len() != NUM_BANDS {
            return Err(ParamsError::Shape(format!("expected {NUM_BANDS} bands, got {}", self.per_band.len())));
        }
        for (slot, idx) in slots().iter().zip(self.indices()) {
            let n = self.grids.get(slot.kind).num_classes;
            if idx >= n {
                return Err(ParamsError::InvalidValue(format!(
                    "class {idx} out of range for {} ({n} classes)",
                    slot.kind.name()
                )));
            }
        }
        Ok(())
    }

    /// Bin-center physical values.
    pub fn dequantize(&self) -> Result<AcousticParams, ParamsError> {
        Ok(AcousticParams {
            broadband: self.broadband.dequantize(&self.grids)?,
            per_band: self.per_band.iter().map(|m| m.dequantize(&self.grids)).collect::<Result<_, _>>()?,
            srd_m: self.grids.srd.dequantize(self.srd)?,
            issues: Vec::new(),
        })
    }

    pub fn to_conditioning_vector(&self, mode: ConditioningMode) -> ConditioningVector {
        let idx = self.indices();
        match mode {
            ConditioningMode::Raw => ConditioningVector::Raw { values: idx.iter().map(|&i| i as f64).collect() },
            ConditioningMode::OneHot => {
                let mut values = Vec::with_capacity(self.grids.one_hot_len());
                for (i, n) in idx.iter().zip(self.grids.slot_sizes()) {
                    let start = values.len();
                    values.resize(start + n, 0.0);
                    values[start + i] = 1.0;
                }
                ConditioningVector::OneHot { values }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConditioningMode {
    Raw,
    OneHot,
}

/// Model-facing encoding of a [`QuantizedParams`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum ConditioningVector {
    /// 46 class indices stored as reals.
    Raw { values: Vec<f64> },
    /// Concatenated one-hot blocks, one per slot.
    OneHot { values: Vec<f64> },
}

impl ConditioningVector {
    pub fn values(&self) -> &[f64] {
        match self {
            Self::Raw { values } | Self::OneHot { values } => values,
        }
    }

    pub fn mode(&self) -> ConditioningMode {
        match self {
            Self::Raw { .. } => ConditioningMode::Raw,
            Self::OneHot { .. } => ConditioningMode::OneHot,
        }
    }

    /// Recover the slot indices.
    pub fn to_indices(&self, grids: &GridSet) -> Result<Vec<usize>, ParamsError> {
        match self {
            Self::Raw { values } => {
                if values.len() != NUM_SLOTS {
                    return Err(ParamsError::Shape(format!("raw vector has {} entries", values.len())));
                }
                values
                    .iter()
                    .map(|&v| {
                        if v >= 0.0 && v.fract() == 0.0 {
                            Ok(v as usize)
                        } else {
                            Err(ParamsError::InvalidValue(format!("{v} is not a class index")))
                        }
                    })
                    .collect()
            }
            Self::OneHot { values } => {
                let sizes = grids.slot_sizes();
                if values.len() != sizes.iter().sum::<usize>() {
                    return Err(ParamsError::Shape(format!("one-hot vector has {} entries", values.len())));
                }
                let mut out = Vec::with_capacity(NUM_SLOTS);
                let mut start = 0;
                for n in sizes {
                    let block = &values[start..start + n];
                    let ones: Vec<usize> = (0..n).filter(|&i| block[i] == 1.0).collect();
                    if ones.len() != 1 || block.iter().any(|&v| v != 0.0 && v != 1.0) {
                        return Err(ParamsError::InvalidValue(format!("malformed one-hot block at offset {start}")));
                    }
                    out.push(ones[0]);
                    start += n;
                }
                Ok(out)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn default_grid_arithmetic() {
        let g = default_grids();
        assert!((g.t30.width() - 1.4 / 15.0).abs() < 1e-15);
        assert!((g.srd.width() - 0.2).abs() < 1e-12);
        assert_eq!(g.c80.num_classes, 11);
        g.validate().unwrap();
    }

    #[test]
    fn quantize_spot_checks() {
        let g = default_grids();
        assert_eq!(g.t30.quantize(0.1).unwrap(), 0);
        assert_eq!(g.t30.quantize(1.5).unwrap(), 14);
        assert_eq!(g.t30.quantize(0.8).unwrap(), 7);
        assert_eq!(g.srd.quantize(3.0).unwrap(), 5);
        assert_eq!(g.srd.quantize(1e9).unwrap(), 9);
        assert_eq!(g.c80.quantize(-40.0).unwrap(), 0);
        assert!(g.t30.quantize(f64::NAN).is_err());
    }

    #[test]
    fn dequantize_spot_checks() {
        let g = default_grids();
        assert!((g.t30.dequantize(0).unwrap() - (0.1 + 1.4 / 30.0)).abs() < 1e-12);
        assert!((g.srd.dequantize(0).unwrap() - 0.377_677_623_538_250_2).abs() < 1e-9);
        assert!(g.srd.dequantize(10).is_err());
    }

    #[test]
    fn bad_grids_rejected() {
        assert!(ClassGrid::new(ParamKind::T30, 1.0, 0.5, 3, Spacing::Linear).is_err());
        assert!(ClassGrid::new(ParamKind::T30, 0.1, 1.5, 1, Spacing::Linear).is_err());
        assert!(ClassGrid::new(ParamKind::Srd, 0.3, 30.0, 10, Spacing::Linear).is_err());
        assert!(ClassGrid::new(ParamKind::C80, 0.0, 20.0, 11, Spacing::Log).is_err());
    }

    #[test]
    fn slot_layout() {
        let s = slots();
        assert_eq!(s.len(), NUM_SLOTS);
        assert_eq!(s[5], Slot { band: None, kind: ParamKind::Srd });
        assert_eq!(s[6], Slot { band: Some(0), kind: ParamKind::T30 });
        assert_eq!(s[45], Slot { band: Some(7), kind: ParamKind::D50 });
        assert_eq!(default_grids().one_hot_len(), 631);
    }

    fn sample_quantized() -> QuantizedParams {
        let idx: Vec<usize> = slots()
            .iter()
            .enumerate()
            .map(|(i, s)| i % default_grids().get(s.kind).num_classes)
            .collect();
        QuantizedParams::from_indices(&idx, &default_grids()).unwrap()
    }

    #[test]
    fn one_hot_blocks_sum_to_one() {
        let q = sample_quantized();
        let v = q.to_conditioning_vector(ConditioningMode::OneHot);
        assert_eq!(v.values().len(), 631);
        let mut start = 0;
        for n in q.grids.slot_sizes() {
            assert_eq!(v.values()[start..start + n].iter().sum::<f64>(), 1.0);
            start += n;
        }
        assert_eq!(v.to_indices(&q.grids).unwrap(), q.indices());
        let raw = q.to_conditioning_vector(ConditioningMode::Raw);
        assert_eq!(raw.values().len(), 46);
    }

    #[test]
    fn params_roundtrip_through_classes() {
        let q = sample_quantized();
        let p = q.dequantize().unwrap();
        assert_eq!(QuantizedParams::from_params(&p, &q.grids).unwrap(), q);
    }

    #[test]
    fn missing_measure_is_reported() {
        let mut p = sample_quantized().dequantize().unwrap();
        p.per_band[3].c80_db = None;
        let err = QuantizedParams::from_params(&p, &default_grids()).unwrap_err();
        assert!(err.to_string().contains("c80_db") && err.to_string().contains("band 3"));
    }

    #[test]
    fn json_field_names() {
        let q = sample_quantized();
        let s = serde_json::to_string(&q).unwrap();
        assert!(s.contains("\"per_band\"") && s.contains("\"srd\""));
        let v = q.to_conditioning_vector(ConditioningMode::OneHot);
        let js = serde_json::to_string(&v).unwrap();
        assert!(js.starts_with("{\"mode\":\"one_hot\""));
    }

    fn any_kind() -> impl Strategy<Value = ParamKind> {
        prop_oneof![
            Just(ParamKind::T30),
            Just(ParamKind::T15),
            Just(ParamKind::Edt),
            Just(ParamKind::C80),
            Just(ParamKind::D50),
            Just(ParamKind::Srd),
        ]
    }

    proptest! {
        #[test]
        fn quantize_is_idempotent(kind in any_kind(), v in -1e6f64..1e6) {
            let g = *default_grids().get(kind);
            let k = g.quantize(v).unwrap();
            prop_assert_eq!(g.quantize(g.dequantize(k).unwrap()).unwrap(), k);
        }

        #[test]
        fn quantize_is_monotone(kind in any_kind(), a in -100f64..200.0, b in -100f64..200.0) {
            let g = *default_grids().get(kind);
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(g.quantize(lo).unwrap() <= g.quantize(hi).unwrap());
        }

        #[test]
        fn quantize_is_total(kind in any_kind(), v in proptest::num::f64::NORMAL | proptest::num::f64::INFINITE | proptest::num::f64::ZERO) {
            let g = *default_grids().get(kind);
            prop_assert!(g.quantize(v).unwrap() < g.num_classes);
        }

        #[test]
        fn conditioning_vector_survives_json(seed in proptest::collection::vec(0usize..1000, NUM_SLOTS), one_hot: bool) {
            let grids = default_grids();
            let idx: Vec<usize> = slots().iter().zip(&seed).map(|(s, r)| r % grids.get(s.kind).num_classes).collect();
            let q = QuantizedParams::from_indices(&idx, &grids).unwrap();
            let mode = if one_hot { ConditioningMode::OneHot } else { ConditioningMode::Raw };
            let v = q.to_conditioning_vector(mode);
            let back: ConditioningVector = serde_json::from_str(&serde_json::to_string(&v).unwrap()).unwrap();
            prop_assert_eq!(&back, &v);
            prop_assert_eq!(back.to_indices(&grids).unwrap(), idx);
        }
    }
}
