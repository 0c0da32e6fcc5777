use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::AnnotationRecord;

/// One recording. `audio_path` is relative to the manifest's directory
/// unless absolute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub audio_path: PathBuf,
    pub source_id: String,
    pub vessel_type: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distance: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub location: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wind: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_rate_hz: Option<u32>,
    /// Further string annotations, usable as template slots.
    #[serde(flatten)]
    pub extra: BTreeMap<String, String>,
}

fn blank_to_none(v: &mut Option<String>) {
    if v.as_deref().is_some_and(|s| s.trim().is_empty()) {
        *v = None;
    }
}

impl ManifestRow {
    pub fn annotation(&self) -> AnnotationRecord {
        AnnotationRecord {
            vessel_type: self.vessel_type.clone(),
            distance: self.distance.clone(),
            depth: self.depth.clone(),
            location: self.location.clone(),
            wind: self.wind.clone(),
            extra: self.extra.clone(),
        }
    }
}

/// JSON Lines manifest: one [`ManifestRow`] per non-empty line.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub dir: PathBuf,
    pub rows: Vec<ManifestRow>,
}

impl DatasetManifest {
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut rows = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let row_err = |message: String| Error::Manifest {
                path: path.to_path_buf(),
                row: i + 1,
                message,
            };
            let value: serde_json::Value =
                serde_json::from_str(line).map_err(|e| row_err(format!("not JSON: {e}")))?;
            let vt = value.get("vessel_type").and_then(|v| v.as_str());
            if vt.is_none_or(|s| s.trim().is_empty()) {
                return Err(row_err("missing required field `vessel_type`".into()));
            }
            let mut row: ManifestRow =
                serde_json::from_value(value).map_err(|e| row_err(e.to_string()))?;
            if row.source_id.trim().is_empty() {
                return Err(row_err("empty `source_id`".into()));
            }
            for f in [
                &mut row.distance,
                &mut row.depth,
                &mut row.location,
                &mut row.wind,
            ] {
                blank_to_none(f);
            }
            row.extra.retain(|_, v| !v.trim().is_empty());
            rows.push(row);
        }
        let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Self { dir, rows })
    }

    /// Parse and check that every audio file exists.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m = Self::parse(&text, path)?;
        for (i, row) in m.rows.iter().enumerate() {
            let p = m.resolve(row);
            if !p.is_file() {
                return Err(Error::Manifest {
                    path: path.to_path_buf(),
                    row: i + 1,
                    message: format!("audio file {} does not exist", p.display()),
                });
            }
        }
        Ok(m)
    }

    pub fn resolve(&self, row: &ManifestRow) -> PathBuf {
        if row.audio_path.is_absolute() {
            row.audio_path.clone()
        } else {
            self.dir.join(&row.audio_path)
        }
    }

    pub fn to_jsonl(&self) -> String {
        self.rows
            .iter()
            .map(|r| serde_json::to_string(r).expect("rows serialise") + "\n")
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_jsonl().as_bytes())
            .map_err(|e| Error::io(path, e))
    }

    /// Distinct source ids with the vessel type of their first row, in
    /// first-seen order.
    pub fn sources(&self) -> Vec<(String, String)> {
        let mut seen = BTreeMap::new();
        let mut out = Vec::new();
        for r in &self.rows {
            if seen.insert(r.source_id.clone(), ()).is_none() {
                out.push((r.source_id.clone(), r.vessel_type.clone()));
            }
        }
        out
    }
}
