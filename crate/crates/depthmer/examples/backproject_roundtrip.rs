//! Back-projects a depth frame to a point cloud and projects it back onto
//! the grid, then reports how far the round trip drifted.
//!
//! Run with `cargo run --example backproject_roundtrip`.

use depthmer::camera::{backproject, project, CameraIntrinsics};
use depthmer::synth::{generate_sample, SyntheticSpec};

fn main() -> depthmer::Result<()> {
    let spec = SyntheticSpec {
        frame_width: 320,
        frame_height: 320,
        ..SyntheticSpec::default()
    };
    let (onset, _, _) = generate_sample(&spec, 0, 0)?;
    let intr = CameraIntrinsics::centered_default(onset.width(), onset.height());

    let cloud = backproject(&onset, &intr)?;
    println!(
        "frame {}x{} with {} valid cells -> {} points",
        onset.width(),
        onset.height(),
        onset.valid_count(),
        cloud.len()
    );

    let replayed = project(&cloud, &intr, onset.width(), onset.height())?;
    let mut worst = 0u16;
    let mut covered = 0usize;
    for v in 0..onset.height() {
        for u in 0..onset.width() {
            if !onset.is_valid(u, v) || !replayed.is_valid(u, v) {
                continue;
            }
            covered += 1;
            let drift = onset.raw_at(u, v).abs_diff(replayed.raw_at(u, v));
            worst = worst.max(drift);
        }
    }
    println!(
        "round trip covered {covered} cells, worst drift {worst} raw unit(s)"
    );
    Ok(())
}
