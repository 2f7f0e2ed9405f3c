//! File formats: depth frames, corpus manifests, feature caches, model
//! checkpoints, and point-cloud export.

pub mod cache;
pub mod checkpoint;
pub mod depth;
pub mod manifest;
pub mod ply;

pub use cache::{config_hash, FeatureCache};
pub use checkpoint::{read_checkpoint, write_checkpoint};
pub use depth::{read_depth, write_depth};
pub use manifest::{load_manifest, save_manifest, LabelKind, Manifest, ManifestEntry, ManifestIntrinsics};
pub use ply::write_ply;
