//! Binary PLY export of motion feature sets.
//!
//! Each feature row becomes one vertex: positions as 32-bit floats,
//! channels as 8-bit colors (`channel * 255`, rounded half up). The header
//! is fixed:
//!
//! ```text
//! ply
//! format binary_little_endian 1.0
//! element vertex <k>
//! property float x
//! property float y
//! property float z
//! property uchar red
//! property uchar green
//! property uchar blue
//! end_header
//! ```

use std::path::Path;

use crate::error::{Error, Result};
use crate::motion::MotionFeatureSet;

/// Serializes a feature set into PLY bytes.
pub fn encode_ply(set: &MotionFeatureSet) -> Vec<u8> {
    let mut out = format!(
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\n\
         property float x\nproperty float y\nproperty float z\n\
         property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n",
        set.features.len()
    )
    .into_bytes();
    out.reserve(set.features.len() * 15);
    for row in &set.features {
        for p in &row[..3] {
            out.extend_from_slice(&(*p as f32).to_le_bytes());
        }
        for c in &row[3..] {
            out.push(color_byte(*c));
        }
    }
    out
}

/// Writes a feature set to `path`.
pub fn write_ply(path: &Path, set: &MotionFeatureSet) -> Result<()> {
    std::fs::write(path, encode_ply(set)).map_err(Error::file(path))
}

/// Maps a normalized channel to a color byte, rounding half up.
fn color_byte(c: f64) -> u8 {
    (c.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
}
