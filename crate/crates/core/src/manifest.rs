use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsp::AcousticParams;
use crate::params::QuantizedParams;

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("duplicate id {0:?}")]
    DuplicateId(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("ids do not match: missing from generated {missing_in_generated:?}, missing from reference {missing_in_reference:?}")]
    IdMismatch { missing_in_generated: Vec<String>, missing_in_reference: Vec<String> },
    #[error("manifest i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// One line of a manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub id: String,
    pub wav_path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<AcousticParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quantized: Option<QuantizedParams>,
    pub valid: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exclusion_reason: Option<String>,
}

impl ManifestRow {
    pub fn valid(id: impl Into<String>, wav_path: impl Into<String>) -> Self {
        Self { id: id.into(), wav_path: wav_path.into(), params: None, quantized: None, valid: true, exclusion_reason: None }
    }

    pub fn invalid(id: impl Into<String>, wav_path: impl Into<String>, reason: impl Into<String>) -> Self {
        Self { valid: false, exclusion_reason: Some(reason.into()), ..Self::valid(id, wav_path) }
    }
}

/// A list of rows with unique ids, stored as JSON lines.
///
/// Relative `wav_path`s are resolved against `base_dir`, which is the
/// manifest's own directory when loaded from disk.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Manifest {
    rows: Vec<ManifestRow>,
    base_dir: PathBuf,
}

impl Manifest {
    pub fn new(rows: Vec<ManifestRow>) -> Result<Self, ManifestError> {
        let mut seen = BTreeSet::new();
        for r in &rows {
            if !seen.insert(r.id.as_str()) {
                return Err(ManifestError::DuplicateId(r.id.clone()));
            }
        }
        Ok(Self { rows, base_dir: PathBuf::new() })
    }

    pub fn with_base_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.base_dir = dir.into();
        self
    }

    pub fn rows(&self) -> &[ManifestRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn base_dir(&self) -> &Path {
        &self.base_dir
    }

    pub fn get(&self, id: &str) -> Option<&ManifestRow> {
        self.rows.iter().find(|r| r.id == id)
    }

    pub fn ids(&self) -> BTreeSet<&str> {
        self.rows.iter().map(|r| r.id.as_str()).collect()
    }

    pub fn wav_path(&self, row: &ManifestRow) -> PathBuf {
        let p = Path::new(&row.wav_path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// Check that `other` holds exactly the same ids.
    pub fn check_same_ids(&self, other: &Manifest) -> Result<(), ManifestError> {
        let (a, b) = (self.ids(), other.ids());
        if a == b {
            return Ok(());
        }
        Err(ManifestError::IdMismatch {
            missing_in_generated: b.difference(&a).map(|s| s.to_string()).collect(),
            missing_in_reference: a.difference(&b).map(|s| s.to_string()).collect(),
        })
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.rows {
            out.push_str(&serde_json::to_string(r).expect("rows serialise"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self, ManifestError> {
        let rows = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| serde_json::from_str(l).map_err(|e| ManifestError::Parse { line: i + 1, message: e.to_string() }))
            .collect::<Result<_, _>>()?;
        Self::new(rows)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ManifestError> {
        let path = path.as_ref();
        let m = Self::from_jsonl(&fs::read_to_string(path)?)?;
        Ok(m.with_base_dir(path.parent().unwrap_or(Path::new(""))))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ManifestError> {
        fs::write(path, self.to_jsonl())?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::Measures;
    use crate::params::default_grids;

    fn sample() -> Manifest {
        let p = AcousticParams::uniform(Measures::new(0.5, 0.5, 0.45, 6.0, 60.0), 3.0);
        let q = QuantizedParams::from_params(&p, &default_grids()).unwrap();
        let good = ManifestRow { params: Some(p), quantized: Some(q), ..ManifestRow::valid("a", "a.wav") };
        Manifest::new(vec![good, ManifestRow::invalid("b", "/abs/b.wav", "degenerate-signal")]).unwrap()
    }

    #[test]
    fn jsonl_round_trip() {
        let m = sample();
        let text = m.to_jsonl();
        assert_eq!(text.lines().count(), 2);
        assert_eq!(Manifest::from_jsonl(&text).unwrap(), m);
        assert!(!text.lines().nth(1).unwrap().contains("params"));
    }

    #[test]
    fn duplicate_ids_rejected() {
        let rows = vec![ManifestRow::valid("x", "1.wav"), ManifestRow::valid("x", "2.wav")];
        assert!(matches!(Manifest::new(rows), Err(ManifestError::DuplicateId(id)) if id == "x"));
    }

    #[test]
    fn parse_error_names_line() {
        let err = Manifest::from_jsonl("{\"id\":\"a\",\"wav_path\":\"a.wav\",\"valid\":true}\nnot json\n").unwrap_err();
        assert!(matches!(err, ManifestError::Parse { line: 2, .. }));
    }

    #[test]
    fn paths_resolve_against_base() {
        let m = sample().with_base_dir("/data/set");
        assert_eq!(m.wav_path(&m.rows()[0]), PathBuf::from("/data/set/a.wav"));
        assert_eq!(m.wav_path(&m.rows()[1]), PathBuf::from("/abs/b.wav"));
    }

    #[test]
    fn id_mismatch_lists_both_sides() {
        let a = Manifest::new(vec![ManifestRow::valid("x", "x.wav"), ManifestRow::valid("y", "y.wav")]).unwrap();
        let b = Manifest::new(vec![ManifestRow::valid("y", "y.wav"), ManifestRow::valid("z", "z.wav")]).unwrap();
        match a.check_same_ids(&b).unwrap_err() {
            ManifestError::IdMismatch { missing_in_generated, missing_in_reference } => {
                assert_eq!(missing_in_generated, vec!["z"]);
                assert_eq!(missing_in_reference, vec!["x"]);
            }
            e => panic!("{e}"),
        }
    }
}
