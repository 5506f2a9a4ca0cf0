use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

pub const MANIFEST_HEADER: [&str; 4] = ["clip_id", "path", "speaker_id", "label"];

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub clip_id: String,
    pub path: PathBuf,
    pub speaker_id: String,
    pub label: String,
}

/// A labeled set of clips for one downstream task.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Manifest {
    pub task_name: String,
    pub entries: Vec<ManifestEntry>,
    /// Whether inter-speaker splits keep each speaker on one side only.
    pub speaker_independent: bool,
}

impl Manifest {
    /// Builds a manifest and checks every invariant except file existence.
    pub fn new(task_name: impl Into<String>, entries: Vec<ManifestEntry>) -> Result<Self> {
        let m = Self {
            task_name: task_name.into(),
            entries,
            speaker_independent: true,
        };
        m.check_ids()?;
        Ok(m)
    }

    fn check_ids(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        let dups: BTreeSet<&str> = self
            .entries
            .iter()
            .filter(|e| !seen.insert(e.clip_id.as_str()))
            .map(|e| e.clip_id.as_str())
            .collect();
        if !dups.is_empty() {
            return Err(Error::Validation(format!(
                "duplicate clip_id: {}",
                dups.into_iter().collect::<Vec<_>>().join(", ")
            )));
        }
        Ok(())
    }

    fn check_files(&self) -> Result<()> {
        let missing: Vec<String> = self
            .entries
            .iter()
            .filter(|e| !e.path.is_file())
            .map(|e| e.path.display().to_string())
            .collect();
        if !missing.is_empty() {
            return Err(Error::Validation(format!("missing files: {}", missing.join(", "))));
        }
        Ok(())
    }

    /// Rejects manifests with fewer than two distinct labels.
    pub fn check_classification(&self) -> Result<()> {
        let n = self.labels().len();
        if n < 2 {
            return Err(Error::Validation(format!(
                "task `{}` has {} distinct label(s); classification needs at least 2",
                self.task_name, n
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Distinct labels in sorted order.
    pub fn labels(&self) -> Vec<String> {
        self.entries
            .iter()
            .map(|e| e.label.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    /// Distinct speakers in sorted order.
    pub fn speakers(&self) -> Vec<String> {
        self.entries
            .iter()
            .map(|e| e.speaker_id.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    /// Entry indices grouped by speaker.
    pub fn by_speaker(&self) -> BTreeMap<String, Vec<usize>> {
        let mut map: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, e) in self.entries.iter().enumerate() {
            map.entry(e.speaker_id.clone()).or_default().push(i);
        }
        map
    }

    /// The speaker-identification task over the same clips: labels become
    /// speaker ids and splits may share speakers.
    pub fn speaker_id_task(&self) -> Manifest {
        Manifest {
            task_name: format!("{}-speaker", self.task_name),
            entries: self
                .entries
                .iter()
                .map(|e| ManifestEntry {
                    label: e.speaker_id.clone(),
                    ..e.clone()
                })
                .collect(),
            speaker_independent: false,
        }
    }

    /// Writes the manifest as CSV, storing paths relative to the manifest's
    /// directory when possible.
    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let base = path.parent().unwrap_or(Path::new(""));
        let mut out = String::from("clip_id,path,speaker_id,label\n");
        for e in &self.entries {
            let p = e.path.strip_prefix(base).unwrap_or(&e.path);
            let mut w = csv::WriterBuilder::new()
                .has_headers(false)
                .terminator(csv::Terminator::Any(b'\n'))
                .from_writer(vec![]);
            w.write_record([
                e.clip_id.as_str(),
                &p.to_string_lossy(),
                e.speaker_id.as_str(),
                e.label.as_str(),
            ])
            .and_then(|_| w.flush().map_err(Into::into))
            .map_err(|err| Error::Validation(format!("cannot encode row {}: {}", e.clip_id, err)))?;
            let bytes = w.into_inner().map_err(|err| Error::Validation(err.to_string()))?;
            out.push_str(&String::from_utf8_lossy(&bytes));
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

/// Reads a `clip_id,path,speaker_id,label` CSV; relative paths resolve
/// against the manifest's directory. The task name is the file stem.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Manifest> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new(""));
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(text.as_bytes());
    let header = reader
        .headers()
        .map_err(|e| Error::Validation(format!("{}: {}", path.display(), e)))?
        .clone();
    if header.iter().collect::<Vec<_>>() != MANIFEST_HEADER {
        return Err(Error::Validation(format!(
            "{}: header must be `{}`, found `{}`",
            path.display(),
            MANIFEST_HEADER.join(","),
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut entries = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| {
            Error::Validation(format!("{} row {}: {}", path.display(), line + 2, e))
        })?;
        let rel = PathBuf::from(&record[1]);
        entries.push(ManifestEntry {
            clip_id: record[0].to_string(),
            path: if rel.is_absolute() { rel } else { base.join(rel) },
            speaker_id: record[2].to_string(),
            label: record[3].to_string(),
        });
    }
    let task = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "task".into());
    let manifest = Manifest::new(task, entries)?;
    manifest.check_files()?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn touch(dir: &Path, name: &str) {
        std::fs::write(dir.join(name), b"").unwrap();
    }

    #[test]
    fn two_row_manifest_parses() {
        let dir = tempfile::tempdir().unwrap();
        touch(dir.path(), "a.wav");
        touch(dir.path(), "b.wav");
        let p = dir.path().join("task.csv");
        std::fs::write(&p, "clip_id,path,speaker_id,label\nc1,a.wav,s1,yes\nc2,b.wav,s2,no\n").unwrap();
        let m = load_manifest(&p).unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!(m.task_name, "task");
        assert_eq!(m.entries[0].path, dir.path().join("a.wav"));
        assert!(m.speaker_independent);
        m.check_classification().unwrap();
    }

    #[test]
    fn duplicate_clip_id_is_named() {
        let dir = tempfile::tempdir().unwrap();
        touch(dir.path(), "a.wav");
        let p = dir.path().join("m.csv");
        std::fs::write(&p, "clip_id,path,speaker_id,label\ndup,a.wav,s1,x\ndup,a.wav,s1,y\n").unwrap();
        match load_manifest(&p) {
            Err(Error::Validation(msg)) => assert!(msg.contains("dup"), "{msg}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn missing_files_are_listed() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        std::fs::write(&p, "clip_id,path,speaker_id,label\nc1,nope.wav,s1,x\nc2,gone.wav,s1,y\n").unwrap();
        match load_manifest(&p) {
            Err(Error::Validation(msg)) => {
                assert!(msg.contains("nope.wav") && msg.contains("gone.wav"), "{msg}")
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn wrong_header_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.csv");
        std::fs::write(&p, "id,path,speaker,label\n").unwrap();
        assert!(matches!(load_manifest(&p), Err(Error::Validation(_))));
    }

    #[test]
    fn single_label_fails_classification_check() {
        let e = |id: &str| ManifestEntry {
            clip_id: id.into(),
            path: "x".into(),
            speaker_id: "s".into(),
            label: "only".into(),
        };
        let m = Manifest::new("t", vec![e("a"), e("b")]).unwrap();
        assert!(m.check_classification().is_err());
    }

    #[test]
    fn write_then_load_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        touch(dir.path(), "a,b.wav");
        let m = Manifest::new(
            "rt",
            vec![ManifestEntry {
                clip_id: "c1".into(),
                path: dir.path().join("a,b.wav"),
                speaker_id: "s1".into(),
                label: "l".into(),
            }],
        )
        .unwrap();
        let p = dir.path().join("rt.csv");
        m.write(&p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.contains("\"a,b.wav\""));
        assert!(!text.contains('\r'));
        assert_eq!(load_manifest(&p).unwrap(), m);
    }
}
