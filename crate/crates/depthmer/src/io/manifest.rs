//! Corpus manifests: the structured-text index of a dataset on disk.
//!
//! A manifest is a TOML document listing intrinsics, the ordered class
//! vocabulary, and one `[[samples]]` entry per onset/apex pair. Frame paths
//! are stored as written, resolved relative to the manifest's directory on
//! use, so a corpus stays relocatable.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::camera::{CameraIntrinsics, CropRect};
use crate::error::{Error, Result};

/// Camera parameters as stored in a manifest.
///
/// `focal_y` defaults to `focal_x`; a missing principal point means "the
/// center of each sample's crop rect".
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestIntrinsics {
    pub focal_x: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub focal_y: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub principal_x: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub principal_y: Option<f64>,
    pub depth_scale: f64,
}

/// One labeled onset/apex pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub sample_id: String,
    pub subject_id: String,
    pub onset: PathBuf,
    pub apex: PathBuf,
    pub crop: CropRect,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_emotion: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_objective: Option<String>,
}

/// Which label field drives training and evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelKind {
    Emotion,
    Objective,
}

impl std::fmt::Display for LabelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LabelKind::Emotion => write!(f, "emotion"),
            LabelKind::Objective => write!(f, "objective"),
        }
    }
}

impl std::str::FromStr for LabelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "emotion" => Ok(LabelKind::Emotion),
            "objective" => Ok(LabelKind::Objective),
            other => Err(Error::InvalidConfig(format!(
                "unknown label kind {other:?}, expected emotion or objective"
            ))),
        }
    }
}

impl ManifestEntry {
    pub fn label(&self, kind: LabelKind) -> Option<&str> {
        match kind {
            LabelKind::Emotion => self.label_emotion.as_deref(),
            LabelKind::Objective => self.label_objective.as_deref(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct ManifestDoc {
    intrinsics: ManifestIntrinsics,
    #[serde(default)]
    class_vocabulary: Vec<String>,
    #[serde(default)]
    samples: Vec<ManifestEntry>,
}

/// A loaded corpus index.
#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub intrinsics: ManifestIntrinsics,
    /// Ordered class names; label strings index into this list.
    pub class_vocabulary: Vec<String>,
    pub samples: Vec<ManifestEntry>,
    /// Directory frame paths are resolved against.
    pub base_dir: PathBuf,
}

impl Manifest {
    pub fn new(
        intrinsics: ManifestIntrinsics,
        class_vocabulary: Vec<String>,
        samples: Vec<ManifestEntry>,
        base_dir: PathBuf,
    ) -> Result<Self> {
        let m = Manifest {
            intrinsics,
            class_vocabulary,
            samples,
            base_dir,
        };
        m.validate_labels()?;
        Ok(m)
    }

    /// Absolute path of an entry-relative frame path.
    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    /// Index of a class name in the vocabulary.
    pub fn class_index(&self, name: &str) -> Option<usize> {
        self.class_vocabulary.iter().position(|c| c == name)
    }

    /// Full-frame intrinsics for one entry, applying the manifest defaults.
    pub fn intrinsics_for(&self, entry: &ManifestEntry) -> Result<CameraIntrinsics> {
        let i = &self.intrinsics;
        let principal_x = i
            .principal_x
            .unwrap_or(entry.crop.left as f64 + (entry.crop.width as f64 - 1.0) / 2.0);
        let principal_y = i
            .principal_y
            .unwrap_or(entry.crop.top as f64 + (entry.crop.height as f64 - 1.0) / 2.0);
        CameraIntrinsics::new(
            i.focal_x,
            i.focal_y.unwrap_or(i.focal_x),
            principal_x,
            principal_y,
            i.depth_scale,
        )
    }

    /// Restricts the vocabulary to its first `n` classes and keeps only
    /// samples labeled within them under `kind`.
    pub fn restrict_classes(&self, n: usize, kind: LabelKind) -> Result<Manifest> {
        if n == 0 || n > self.class_vocabulary.len() {
            return Err(Error::InvalidConfig(format!(
                "cannot restrict a {}-class vocabulary to {n} classes",
                self.class_vocabulary.len()
            )));
        }
        let vocab: Vec<String> = self.class_vocabulary[..n].to_vec();
        let samples = self
            .samples
            .iter()
            .filter(|e| match e.label(kind) {
                Some(l) => vocab.iter().any(|v| v == l),
                None => false,
            })
            .cloned()
            .collect();
        Manifest::new(self.intrinsics.clone(), vocab, samples, self.base_dir.clone())
    }

    fn validate_labels(&self) -> Result<()> {
        let mut names = BTreeSet::new();
        for name in &self.class_vocabulary {
            if !names.insert(name) {
                return Err(Error::ManifestFormat(format!(
                    "class {name:?} appears twice in the vocabulary"
                )));
            }
        }
        let mut ids = BTreeSet::new();
        for entry in &self.samples {
            if !ids.insert(&entry.sample_id) {
                return Err(Error::ManifestValidation {
                    entry: entry.sample_id.clone(),
                    msg: "duplicate sample id".into(),
                });
            }
            for label in [&entry.label_emotion, &entry.label_objective]
                .into_iter()
                .flatten()
            {
                if !self.class_vocabulary.iter().any(|v| v == label) {
                    return Err(Error::UnknownLabel {
                        label: label.clone(),
                        sample_id: entry.sample_id.clone(),
                    });
                }
            }
        }
        Ok(())
    }

    /// Checks that every referenced frame file exists.
    pub fn validate_files(&self) -> Result<()> {
        for entry in &self.samples {
            for path in [&entry.onset, &entry.apex] {
                let resolved = self.resolve(path);
                if !resolved.is_file() {
                    return Err(Error::ManifestValidation {
                        entry: entry.sample_id.clone(),
                        msg: format!("missing frame file {}", resolved.display()),
                    });
                }
            }
        }
        Ok(())
    }
}

/// Parses and validates a manifest file. File existence is checked here;
/// crop bounds are only checkable once frames are read.
/// Parses and validates a manifest. Frame files are not checked here;
/// callers that want an upfront scan use [`Manifest::validate_files`],
/// everything else surfaces missing files when the sample is read.
pub fn load_manifest(path: &Path) -> Result<Manifest> {
    let text = std::fs::read_to_string(path).map_err(Error::file(path))?;
    let doc: ManifestDoc =
        toml::from_str(&text).map_err(|e| Error::ManifestFormat(e.to_string()))?;
    let base_dir = path.parent().unwrap_or(Path::new(".")).to_path_buf();
    Manifest::new(doc.intrinsics, doc.class_vocabulary, doc.samples, base_dir)
}

/// Writes a manifest as TOML. Paths are stored exactly as held in memory.
pub fn save_manifest(path: &Path, manifest: &Manifest) -> Result<()> {
    let doc = ManifestDoc {
        intrinsics: manifest.intrinsics.clone(),
        class_vocabulary: manifest.class_vocabulary.clone(),
        samples: manifest.samples.clone(),
    };
    let text =
        toml::to_string_pretty(&doc).map_err(|e| Error::ManifestFormat(e.to_string()))?;
    std::fs::write(path, text).map_err(Error::file(path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::DepthFrame;
    use crate::io::depth::write_depth;

    fn intrinsics() -> ManifestIntrinsics {
        ManifestIntrinsics {
            focal_x: 1324.65,
            focal_y: None,
            principal_x: None,
            principal_y: None,
            depth_scale: 1000.0,
        }
    }

    fn entry(id: &str, subject: &str, label: Option<&str>) -> ManifestEntry {
        ManifestEntry {
            sample_id: id.into(),
            subject_id: subject.into(),
            onset: PathBuf::from(format!("{id}_onset.pgm")),
            apex: PathBuf::from(format!("{id}_apex.pgm")),
            crop: CropRect::new(2, 4, 8, 6),
            label_emotion: label.map(String::from),
            label_objective: label.map(String::from),
        }
    }

    fn write_frames(manifest: &Manifest) {
        let frame = DepthFrame::new(16, 12, vec![500; 16 * 12]).unwrap();
        for e in &manifest.samples {
            write_depth(&manifest.resolve(&e.onset), &frame).unwrap();
            write_depth(&manifest.resolve(&e.apex), &frame).unwrap();
        }
    }

    #[test]
    fn roundtrip_preserves_everything() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = Manifest::new(
            intrinsics(),
            vec!["a".into(), "b".into()],
            vec![entry("s01_x", "s01", Some("a")), entry("s02_y", "s02", Some("b"))],
            dir.path().to_path_buf(),
        )
        .unwrap();
        write_frames(&manifest);
        let path = dir.path().join("manifest.toml");
        save_manifest(&path, &manifest).unwrap();
        let loaded = load_manifest(&path).unwrap();
        assert_eq!(loaded.intrinsics, manifest.intrinsics);
        assert_eq!(loaded.class_vocabulary, manifest.class_vocabulary);
        assert_eq!(loaded.samples, manifest.samples);
    }

    #[test]
    fn duplicate_sample_ids_are_rejected() {
        let err = Manifest::new(
            intrinsics(),
            vec!["a".into()],
            vec![entry("same", "s01", Some("a")), entry("same", "s02", Some("a"))],
            PathBuf::new(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::ManifestValidation { .. }));
    }

    #[test]
    fn labels_outside_vocabulary_are_rejected() {
        let err = Manifest::new(
            intrinsics(),
            vec!["a".into()],
            vec![entry("x", "s01", Some("mystery"))],
            PathBuf::new(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::UnknownLabel { .. }));
    }

    #[test]
    fn missing_frame_files_name_the_entry() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = Manifest::new(
            intrinsics(),
            vec!["a".into()],
            vec![entry("lost", "s01", Some("a"))],
            dir.path().to_path_buf(),
        )
        .unwrap();
        let path = dir.path().join("manifest.toml");
        save_manifest(&path, &manifest).unwrap();
        // Loading succeeds without the frames; the explicit scan names the
        // offending entry.
        let loaded = load_manifest(&path).unwrap();
        let err = loaded.validate_files().unwrap_err();
        match err {
            Error::ManifestValidation { entry, .. } => assert_eq!(entry, "lost"),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn principal_point_defaults_to_crop_center() {
        let manifest = Manifest::new(intrinsics(), vec![], vec![], PathBuf::new()).unwrap();
        let e = entry("x", "s01", None);
        let intr = manifest.intrinsics_for(&e).unwrap();
        // Crop (2, 4, 8, 6): center column 2 + 3.5, center row 4 + 2.5.
        assert_eq!(intr.principal_x, 5.5);
        assert_eq!(intr.principal_y, 6.5);
        assert_eq!(intr.focal_y, intr.focal_x);
    }

    #[test]
    fn explicit_principal_point_wins() {
        let mut i = intrinsics();
        i.principal_x = Some(100.0);
        i.principal_y = Some(50.0);
        i.focal_y = Some(1200.0);
        let manifest = Manifest::new(i, vec![], vec![], PathBuf::new()).unwrap();
        let intr = manifest.intrinsics_for(&entry("x", "s01", None)).unwrap();
        assert_eq!(intr.principal_x, 100.0);
        assert_eq!(intr.principal_y, 50.0);
        assert_eq!(intr.focal_y, 1200.0);
    }

    #[test]
    fn class_restriction_filters_samples() {
        let manifest = Manifest::new(
            intrinsics(),
            vec!["a".into(), "b".into(), "c".into()],
            vec![
                entry("x", "s01", Some("a")),
                entry("y", "s01", Some("c")),
                entry("z", "s02", Some("b")),
            ],
            PathBuf::new(),
        )
        .unwrap();
        let small = manifest.restrict_classes(2, LabelKind::Emotion).unwrap();
        assert_eq!(small.class_vocabulary, vec!["a", "b"]);
        let ids: Vec<&str> = small.samples.iter().map(|e| e.sample_id.as_str()).collect();
        assert_eq!(ids, vec!["x", "z"]);
        assert!(manifest.restrict_classes(4, LabelKind::Emotion).is_err());
    }
}
