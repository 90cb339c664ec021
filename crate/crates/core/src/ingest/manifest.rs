use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::{IngestError, RecordingId};
use crate::{Activity, Modality};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    /// As written in the manifest; relative paths are resolved against the
    /// manifest's directory.
    pub path: PathBuf,
    pub subject_id: u32,
    pub activity: Activity,
    pub trial: u32,
    pub modality: Modality,
}

impl ManifestEntry {
    pub fn id(&self) -> RecordingId {
        RecordingId {
            subject_id: self.subject_id,
            activity: self.activity,
            trial: self.trial,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DatasetManifest {
    pub base_dir: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn resolve(&self, entry: &ManifestEntry) -> PathBuf {
        if entry.path.is_absolute() {
            entry.path.clone()
        } else {
            self.base_dir.join(&entry.path)
        }
    }

    pub fn of_modality(&self, modality: Modality) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.modality == modality)
    }

    /// Parse manifest text. `base_dir` anchors relative paths.
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self, IngestError> {
        let mut entries = Vec::new();
        let mut seen = HashSet::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = trimmed.split(',').map(str::trim).collect();
            const NAMES: [&str; 5] = ["path", "subject", "activity", "trial", "modality"];
            if fields.len() != NAMES.len() {
                let field = NAMES.get(fields.len()).copied().unwrap_or("modality");
                return Err(IngestError::ParseError {
                    line,
                    field,
                    reason: format!("expected 5 comma-separated fields, got {}", fields.len()),
                });
            }
            let err = |field: &'static str, reason: String| IngestError::ParseError { line, field, reason };
            if fields[0].is_empty() {
                return Err(err("path", "empty path".into()));
            }
            let subject_id = fields[1]
                .parse()
                .map_err(|_| err("subject", format!("`{}` is not a non-negative integer", fields[1])))?;
            let activity = fields[2].parse().map_err(|e: String| err("activity", e))?;
            let trial = fields[3]
                .parse()
                .map_err(|_| err("trial", format!("`{}` is not a non-negative integer", fields[3])))?;
            let modality = fields[4].parse().map_err(|e: String| err("modality", e))?;
            let path = PathBuf::from(fields[0]);
            if !seen.insert(path.clone()) {
                return Err(IngestError::DuplicatePath(path));
            }
            entries.push(ManifestEntry { path, subject_id, activity, trial, modality });
        }
        Ok(DatasetManifest {
            base_dir: base_dir.to_path_buf(),
            entries,
        })
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("# path,subject,activity,trial,modality\n");
        for e in &self.entries {
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                e.path.display(),
                e.subject_id,
                e.activity,
                e.trial,
                e.modality
            );
        }
        s
    }
}

pub fn load_manifest(path: &Path) -> Result<DatasetManifest, IngestError> {
    let text = fs::read_to_string(path).map_err(|e| IngestError::io(path, e))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    DatasetManifest::parse(&text, base)
}

pub fn write_manifest(manifest: &DatasetManifest, path: &Path) -> Result<(), IngestError> {
    fs::write(path, manifest.to_text()).map_err(|e| IngestError::io(path, e))
}
