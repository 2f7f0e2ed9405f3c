//! Micro-expression recognition from depth-map pairs.
//!
//! The pipeline turns an onset/apex pair of 16-bit depth frames into a
//! fixed-size motion feature set and classifies it with a small point-set
//! network:
//!
//! 1. [`camera`] crops and back-projects depth grids into metric point
//!    clouds with per-point pixel provenance.
//! 2. [`motion`] differences index-aligned clouds, encodes each displacement
//!    as spherical channels, normalizes them, and keeps the top-k points by
//!    channel magnitude.
//! 3. [`net`] trains a from-scratch PointNet-style classifier on the
//!    resulting `k x 6` feature sets.
//! 4. [`eval`] runs leave-one-subject-out and cross-corpus protocols and
//!    reports UF1/UAR over pooled confusion matrices.
//! 5. [`synth`] generates a depth-face corpus with exact motion ground truth
//!    for end-to-end validation.
//! 6. [`io`] reads and writes the on-disk formats: 16-bit PGM and raw depth
//!    grids, binary PLY exports, corpus manifests, feature caches, and model
//!    checkpoints.
//!
//! The `examples/` directory holds one runnable program per capability;
//! start with `cargo run --example extract_features`. A thin `depthmer`
//! binary wraps the same entry points for batch use.

pub mod camera;
pub mod cli;
pub mod error;
pub mod eval;
pub mod io;
pub mod motion;
pub mod net;
pub mod pipeline;
pub mod synth;

pub use error::{Error, Result};
