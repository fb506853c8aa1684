//! Skeleton sequence files.
//!
//! Schema: `{"width": int, "height": int, "frames": [[[x, y, v] x 18] ..]}`
//! with x, y in pixels and v in {0,1}. The loader normalizes coordinates on
//! ingest; the writer emits pixels again. Externally extracted poses ship in
//! the same schema.

use super::{io_err, IoError, Result};
use crate::geom::{Skeleton, SkeletonSequence, JOINT_COUNT};
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Serialize, Deserialize)]
struct SkeletonFile {
    width: u32,
    height: u32,
    frames: Vec<Vec<[f64; 3]>>,
}

pub fn load_skeleton_sequence(path: &Path) -> Result<SkeletonSequence> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let file: SkeletonFile = serde_json::from_str(&text)
        .map_err(|e| IoError::Json { path: path.display().to_string(), source: e })?;
    let invalid = |reason: String| IoError::InvalidSkeleton {
        path: path.display().to_string(),
        reason,
    };
    if file.width == 0 || file.height == 0 {
        return Err(invalid(format!("dimensions {}x{} must be positive", file.width, file.height)));
    }
    if file.frames.is_empty() {
        return Err(invalid("no frames".to_string()));
    }
    let mut frames = Vec::with_capacity(file.frames.len());
    for (t, frame) in file.frames.iter().enumerate() {
        if frame.len() != JOINT_COUNT {
            return Err(invalid(format!(
                "frame {t} has {} joints, expected {JOINT_COUNT}",
                frame.len()
            )));
        }
        let mut joints = [(0.0, 0.0); JOINT_COUNT];
        let mut visible = [false; JOINT_COUNT];
        for (i, &[x, y, v]) in frame.iter().enumerate() {
            visible[i] = v != 0.0;
            joints[i] = (x, y);
        }
        let pixel_space = Skeleton::new(joints, visible);
        frames.push(pixel_space.normalize(file.width, file.height)?);
    }
    SkeletonSequence::new(frames, file.width, file.height).map_err(IoError::from)
}

pub fn save_skeleton_sequence(path: &Path, seq: &SkeletonSequence) -> Result<()> {
    let frames = seq
        .frames()
        .iter()
        .map(|sk| {
            let px = sk.denormalize(seq.source_width, seq.source_height)?;
            Ok((0..JOINT_COUNT)
                .map(|i| {
                    let (x, y) = px.joint(i);
                    [x, y, if px.is_visible(i) { 1.0 } else { 0.0 }]
                })
                .collect())
        })
        .collect::<Result<Vec<Vec<[f64; 3]>>>>()?;
    let file = SkeletonFile { width: seq.source_width, height: seq.source_height, frames };
    let text = serde_json::to_string_pretty(&file)
        .map_err(|e| IoError::Json { path: path.display().to_string(), source: e })?;
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Skeleton;

    fn sample_sequence() -> SkeletonSequence {
        let mut frames = Vec::new();
        for t in 0..4 {
            let mut joints = [(0.0, 0.0); JOINT_COUNT];
            for (i, j) in joints.iter_mut().enumerate() {
                *j = (0.1 + 0.03 * i as f64, 0.15 + 0.02 * i as f64 + 0.01 * t as f64);
            }
            let mut vis = [true; JOINT_COUNT];
            vis[17] = false;
            frames.push(Skeleton::new(joints, vis));
        }
        SkeletonSequence::new(frames, 320, 240).unwrap()
    }

    #[test]
    fn round_trip_preserves_sequence() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("seq.json");
        let seq = sample_sequence();
        save_skeleton_sequence(&path, &seq).unwrap();
        let loaded = load_skeleton_sequence(&path).unwrap();
        assert_eq!(loaded.len(), seq.len());
        assert_eq!(loaded.source_width, 320);
        for (a, b) in seq.frames().iter().zip(loaded.frames()) {
            for i in 0..JOINT_COUNT {
                assert_eq!(a.is_visible(i), b.is_visible(i));
                let (ax, ay) = a.joint(i);
                let (bx, by) = b.joint(i);
                assert!((ax - bx).abs() < 1e-9 && (ay - by).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn wrong_joint_count_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.json");
        std::fs::write(&path, r#"{"width":10,"height":10,"frames":[[[1,2,1]]]}"#).unwrap();
        let err = load_skeleton_sequence(&path).unwrap_err();
        assert!(matches!(err, IoError::InvalidSkeleton { .. }), "{err}");
    }

    #[test]
    fn unparseable_file_is_a_json_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("garbage.json");
        std::fs::write(&path, "not json").unwrap();
        assert!(matches!(load_skeleton_sequence(&path), Err(IoError::Json { .. })));
    }
}
