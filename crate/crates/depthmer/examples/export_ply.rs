//! Extracts motion features for one sample and writes them as a binary PLY
//! point cloud, positions plus motion channels mapped to RGB, so any mesh
//! viewer can show where the face moved.
//!
//! Run with `cargo run --example export_ply [output.ply]`.

use std::path::PathBuf;

use depthmer::camera::CameraIntrinsics;
use depthmer::io::ply::write_ply;
use depthmer::motion::{extract_features, PipelineConfig};
use depthmer::synth::{face_bbox, generate_sample, SyntheticSpec};

fn main() -> depthmer::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("depthmer_motion.ply"));

    let spec = SyntheticSpec::default();
    let (onset, apex, _) = generate_sample(&spec, 0, 1)?;
    let rect = face_bbox(spec.frame_width, spec.frame_height);
    let intr = CameraIntrinsics::centered_default(spec.frame_width, spec.frame_height);
    let set = extract_features(&onset, &apex, &rect, &intr, &PipelineConfig::default())?;

    write_ply(&out, &set)?;
    println!("wrote {} points to {}", set.features.len(), out.display());
    println!("red = amplitude, green = direction angle, blue = elevation");
    Ok(())
}
