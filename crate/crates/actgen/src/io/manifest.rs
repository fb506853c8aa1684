//! Clip manifests: the dataset record that drives every expansion recipe.

use super::{io_err, IoError, Result};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

/// One source clip: an action performed by a subject, with its skeleton
/// trajectory and (optionally) extracted frames and a background plate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipEntry {
    pub clip_id: String,
    pub action_label: String,
    pub subject_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frames_dir: Option<PathBuf>,
    pub skeleton_file: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub background: Option<PathBuf>,
}

/// A reference appearance frame: the image plus the skeleton that locates
/// the person in it (one frame of a skeleton-sequence file).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceFrame {
    pub image: PathBuf,
    pub skeleton_file: PathBuf,
    #[serde(default)]
    pub frame: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectEntry {
    pub subject_id: String,
    pub reference_frames: Vec<ReferenceFrame>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ClipManifest {
    pub clips: Vec<ClipEntry>,
    pub subjects: Vec<SubjectEntry>,
    #[serde(default)]
    pub backgrounds: Vec<PathBuf>,
    /// Directory all relative paths resolve against; set by the loader.
    #[serde(skip)]
    pub root: PathBuf,
}

impl ClipManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
        let mut manifest: ClipManifest = serde_json::from_str(&text)
            .map_err(|e| IoError::Json { path: path.display().to_string(), source: e })?;
        manifest.root = path.parent().unwrap_or_else(|| Path::new(".")).to_path_buf();
        manifest.validate(path)?;
        Ok(manifest)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| IoError::Json { path: path.display().to_string(), source: e })?;
        std::fs::write(path, text).map_err(|e| io_err(path, e))
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    pub fn subject(&self, id: &str) -> Option<&SubjectEntry> {
        self.subjects.iter().find(|s| s.subject_id == id)
    }

    /// Referential integrity. Collects every violation instead of stopping
    /// at the first, so one load error names everything to fix.
    pub fn validate(&self, path: &Path) -> Result<()> {
        let mut violations = Vec::new();

        let mut seen_clips = std::collections::HashSet::new();
        for clip in &self.clips {
            if !seen_clips.insert(clip.clip_id.as_str()) {
                violations.push(format!("duplicate clip_id {:?}", clip.clip_id));
            }
        }
        let mut seen_subjects = std::collections::HashSet::new();
        for subject in &self.subjects {
            if !seen_subjects.insert(subject.subject_id.as_str()) {
                violations.push(format!("duplicate subject_id {:?}", subject.subject_id));
            }
        }
        for clip in &self.clips {
            if !seen_subjects.contains(clip.subject_id.as_str()) {
                violations.push(format!(
                    "clip {:?} references unknown subject_id {:?}",
                    clip.clip_id, clip.subject_id
                ));
            }
            // Frame/skeleton agreement is only checkable when the frames
            // actually exist on disk.
            if let Some(frames_dir) = &clip.frames_dir {
                let dir = self.resolve(frames_dir);
                if dir.is_dir() {
                    let frame_count = count_pngs(&dir);
                    match super::skeleton_json::load_skeleton_sequence(
                        &self.resolve(&clip.skeleton_file),
                    ) {
                        Ok(seq) => {
                            if seq.len() != frame_count {
                                violations.push(format!(
                                    "clip {:?}: {} frames on disk but {} skeleton frames",
                                    clip.clip_id,
                                    frame_count,
                                    seq.len()
                                ));
                            }
                        }
                        Err(e) => violations
                            .push(format!("clip {:?}: unreadable skeleton file: {e}", clip.clip_id)),
                    }
                }
            }
        }

        if violations.is_empty() {
            Ok(())
        } else {
            Err(IoError::InvalidManifest { path: path.display().to_string(), violations })
        }
    }
}

fn count_pngs(dir: &Path) -> usize {
    std::fs::read_dir(dir)
        .map(|entries| {
            entries
                .flatten()
                .filter(|e| {
                    e.path().extension().map(|ext| ext.eq_ignore_ascii_case("png")).unwrap_or(false)
                })
                .count()
        })
        .unwrap_or(0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal_manifest_json() -> &'static str {
        r#"{
            "clips": [
                {"clip_id": "c0", "action_label": "wave", "subject_id": "s0",
                 "skeleton_file": "skeletons/c0.json"}
            ],
            "subjects": [
                {"subject_id": "s0", "reference_frames": [
                    {"image": "refs/s0_0.png", "skeleton_file": "skeletons/s0.json", "frame": 0}
                ]}
            ],
            "backgrounds": ["bg/office.png"]
        }"#
    }

    #[test]
    fn minimal_valid_manifest_loads() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        std::fs::write(&path, minimal_manifest_json()).unwrap();
        let m = ClipManifest::load(&path).unwrap();
        assert_eq!(m.clips.len(), 1);
        assert_eq!(m.subjects.len(), 1);
        assert_eq!(m.root, dir.path());
    }

    #[test]
    fn unknown_subject_id_names_the_clip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        let json = r#"{
            "clips": [
                {"clip_id": "c0", "action_label": "wave", "subject_id": "ghost",
                 "skeleton_file": "skeletons/c0.json"}
            ],
            "subjects": [{"subject_id": "s0", "reference_frames": []}]
        }"#;
        std::fs::write(&path, json).unwrap();
        let err = ClipManifest::load(&path).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("c0") && msg.contains("ghost"), "error must name the clip: {msg}");
    }

    #[test]
    fn all_violations_are_reported_together() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        let json = r#"{
            "clips": [
                {"clip_id": "dup", "action_label": "a", "subject_id": "missing1", "skeleton_file": "x.json"},
                {"clip_id": "dup", "action_label": "b", "subject_id": "missing2", "skeleton_file": "y.json"}
            ],
            "subjects": []
        }"#;
        std::fs::write(&path, json).unwrap();
        let err = ClipManifest::load(&path).unwrap_err();
        match err {
            IoError::InvalidManifest { violations, .. } => {
                assert_eq!(violations.len(), 3, "duplicate id + two dangling subjects: {violations:?}");
            }
            other => panic!("expected InvalidManifest, got {other}"),
        }
    }

    #[test]
    fn save_load_round_trips_canonical_form() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        std::fs::write(&path, minimal_manifest_json()).unwrap();
        let m = ClipManifest::load(&path).unwrap();
        let path2 = dir.path().join("m2.json");
        m.save(&path2).unwrap();
        let m2 = ClipManifest::load(&path2).unwrap();
        assert_eq!(m.clips, m2.clips);
        assert_eq!(m.subjects, m2.subjects);
        assert_eq!(m.backgrounds, m2.backgrounds);
        // Canonical form: saving again yields identical bytes.
        let path3 = dir.path().join("m3.json");
        m2.save(&path3).unwrap();
        assert_eq!(std::fs::read(&path2).unwrap(), std::fs::read(&path3).unwrap());
    }
}
