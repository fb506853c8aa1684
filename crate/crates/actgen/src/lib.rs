//! Synthesizes labeled human-action video clips from small seed datasets.
//!
//! Two conditional GANs do the generative work: one maps an action label and
//! noise to an 8-step skeleton trajectory, the other composites a
//! photo-realistic-style frame from a background, a target skeleton and a set
//! of warped reference images. A pipeline layer turns trained checkpoints
//! into dataset-expansion recipes (new subjects, new actions, full M x N^2
//! expansion, perspective augmentation).
//!
//! Compute-heavy inner loops are data-parallel via rayon when the default
//! `parallel` feature is on; disabling it falls back to identical sequential
//! code paths (bit-for-bit, not just numerically close).

pub mod cli;
pub mod geom;
pub mod io;
pub mod rng;
pub mod tensor;
