//! Runs the full motion feature pipeline on one onset/apex pair and prints
//! what comes out: point count, channel ranges, and the first few rows.
//!
//! Run with `cargo run --example extract_features`.

use depthmer::camera::CameraIntrinsics;
use depthmer::motion::{extract_features, PipelineConfig};
use depthmer::synth::{face_bbox, generate_sample, SyntheticSpec};

fn main() -> depthmer::Result<()> {
    let spec = SyntheticSpec::default();
    let (onset, apex, truth) = generate_sample(&spec, 0, 0)?;
    let rect = face_bbox(spec.frame_width, spec.frame_height);
    let intr = CameraIntrinsics::centered_default(spec.frame_width, spec.frame_height);

    let config = PipelineConfig {
        k: 2048,
        ..PipelineConfig::default()
    };
    let set = extract_features(&onset, &apex, &rect, &intr, &config)?;

    println!(
        "selected {} points ({} grid cells actually moved)",
        set.features.len(),
        truth.moved_count()
    );
    let names = ["x", "y", "z", "r", "theta", "phi"];
    for (c, name) in names.iter().enumerate() {
        let lo = set.features.iter().map(|f| f[c]).fold(f64::INFINITY, f64::min);
        let hi = set
            .features
            .iter()
            .map(|f| f[c])
            .fold(f64::NEG_INFINITY, f64::max);
        println!("channel {name:<6} range [{lo:+.4}, {hi:+.4}]");
    }
    println!("\nfirst rows (position, then normalized motion channels):");
    for (row, cell) in set.features.iter().zip(&set.pixel_index).take(5) {
        println!(
            "  cell ({:>3},{:>3})  pos ({:+.3}, {:+.3}, {:+.3})  motion ({:.3}, {:.3}, {:.3})",
            cell[0], cell[1], row[0], row[1], row[2], row[3], row[4], row[5]
        );
    }
    Ok(())
}
