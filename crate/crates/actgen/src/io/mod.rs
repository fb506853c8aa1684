//! File formats: skeleton-sequence JSON, clip manifests, PNG images and the
//! binary checkpoint container. JSON for anything a human may want to diff,
//! binary only for checkpoints and images.

pub mod checkpoint;
pub mod images;
pub mod manifest;
pub mod skeleton_json;

pub use checkpoint::{checkpoint_sha256, load_checkpoint, save_checkpoint};
pub use images::{load_png, save_png};
pub use manifest::{ClipEntry, ClipManifest, ReferenceFrame, SubjectEntry};
pub use skeleton_json::{load_skeleton_sequence, save_skeleton_sequence};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("json error in {path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("image error on {path}: {source}")]
    Image {
        path: String,
        #[source]
        source: image::ImageError,
    },
    #[error("checkpoint {path} has bad magic (expected \"AFCK\")")]
    BadMagic { path: String },
    #[error("checkpoint {path} has unsupported version {version}")]
    UnsupportedVersion { path: String, version: u32 },
    #[error("checkpoint {path} is truncated")]
    Truncated { path: String },
    #[error("checkpoint {path} failed its checksum; the file is corrupt")]
    ChecksumMismatch { path: String },
    #[error("invalid skeleton file {path}: {reason}")]
    InvalidSkeleton { path: String, reason: String },
    #[error("invalid manifest {path}:\n{}", violations.join("\n"))]
    InvalidManifest { path: String, violations: Vec<String> },
    #[error(transparent)]
    Geom(#[from] crate::geom::GeomError),
}

pub type Result<T, E = IoError> = std::result::Result<T, E>;

pub(crate) fn io_err(path: &std::path::Path, source: std::io::Error) -> IoError {
    IoError::Io { path: path.display().to_string(), source }
}
