//! Pinhole camera geometry between depth grids and metric point clouds.
//!
//! A depth frame stores raw 16-bit sensor readings on a pixel grid. Raw
//! value `d` at pixel `(u, v)` back-projects to camera coordinates
//!
//! ```text
//! z = d / depth_scale
//! x = (u - principal_x) * z / focal_x
//! y = (v - principal_y) * z / focal_y
//! ```
//!
//! with `+z` pointing away from the camera. [`project`] inverts the map by
//! rounding to the nearest grid cell (half away from zero) and keeping the
//! nearer point when two land on the same cell. A raw value of zero always
//! means "no reading"; such cells never produce points.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Pinhole intrinsics plus the raw-unit-per-meter depth scale.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub focal_x: f64,
    pub focal_y: f64,
    pub principal_x: f64,
    pub principal_y: f64,
    /// Raw depth units per meter.
    pub depth_scale: f64,
}

/// Focal length of the reference depth camera, in pixels.
pub const DEFAULT_FOCAL: f64 = 1324.65;

/// Raw depth units per meter for the reference depth camera.
pub const DEFAULT_DEPTH_SCALE: f64 = 1000.0;

impl CameraIntrinsics {
    pub fn new(
        focal_x: f64,
        focal_y: f64,
        principal_x: f64,
        principal_y: f64,
        depth_scale: f64,
    ) -> Result<Self> {
        let intr = CameraIntrinsics {
            focal_x,
            focal_y,
            principal_x,
            principal_y,
            depth_scale,
        };
        intr.validate()?;
        Ok(intr)
    }

    /// Equal focal lengths with the principal point at the grid center.
    pub fn centered(focal: f64, depth_scale: f64, width: usize, height: usize) -> Result<Self> {
        CameraIntrinsics::new(
            focal,
            focal,
            (width as f64 - 1.0) / 2.0,
            (height as f64 - 1.0) / 2.0,
            depth_scale,
        )
    }

    /// Reference-camera intrinsics centered on a `width` x `height` grid.
    pub fn centered_default(width: usize, height: usize) -> Self {
        CameraIntrinsics::centered(DEFAULT_FOCAL, DEFAULT_DEPTH_SCALE, width, height)
            .expect("default intrinsics are valid")
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.focal_x > 0.0 && self.focal_x.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "focal_x must be positive, got {}",
                self.focal_x
            )));
        }
        if !(self.focal_y > 0.0 && self.focal_y.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "focal_y must be positive, got {}",
                self.focal_y
            )));
        }
        if !(self.depth_scale > 0.0 && self.depth_scale.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "depth_scale must be positive, got {}",
                self.depth_scale
            )));
        }
        if !self.principal_x.is_finite() || !self.principal_y.is_finite() {
            return Err(Error::InvalidConfig("principal point must be finite".into()));
        }
        Ok(())
    }

    /// Shifts the principal point into the local coordinates of `rect`.
    pub fn for_crop(&self, rect: &CropRect) -> Self {
        CameraIntrinsics {
            principal_x: self.principal_x - rect.left as f64,
            principal_y: self.principal_y - rect.top as f64,
            ..*self
        }
    }
}

/// Rectangular pixel region, `left`/`top` inclusive.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropRect {
    pub left: usize,
    pub top: usize,
    pub width: usize,
    pub height: usize,
}

impl CropRect {
    pub fn new(left: usize, top: usize, width: usize, height: usize) -> Self {
        CropRect {
            left,
            top,
            width,
            height,
        }
    }
}

/// One 16-bit depth grid with a validity mask.
///
/// Invariant: a raw value of zero is never marked valid. The converse does
/// not hold; pairing two frames may invalidate cells that still carry a
/// nonzero reading.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DepthFrame {
    width: usize,
    height: usize,
    raw: Vec<u16>,
    valid: Vec<bool>,
}

impl DepthFrame {
    /// Builds a frame whose mask marks exactly the nonzero cells valid.
    pub fn new(width: usize, height: usize, raw: Vec<u16>) -> Result<Self> {
        if raw.len() != width * height {
            return Err(Error::DimensionMismatch {
                expected: width * height,
                got: raw.len(),
            });
        }
        let valid = raw.iter().map(|&d| d != 0).collect();
        Ok(DepthFrame {
            width,
            height,
            raw,
            valid,
        })
    }

    /// Builds a frame with an explicit mask. Zero-depth cells must be invalid.
    pub fn with_mask(width: usize, height: usize, raw: Vec<u16>, valid: Vec<bool>) -> Result<Self> {
        if raw.len() != width * height {
            return Err(Error::DimensionMismatch {
                expected: width * height,
                got: raw.len(),
            });
        }
        if valid.len() != raw.len() {
            return Err(Error::DimensionMismatch {
                expected: raw.len(),
                got: valid.len(),
            });
        }
        if let Some(index) = raw
            .iter()
            .zip(&valid)
            .position(|(&d, &m)| d == 0 && m)
        {
            return Err(Error::InvalidMask { index });
        }
        Ok(DepthFrame {
            width,
            height,
            raw,
            valid,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn raw(&self) -> &[u16] {
        &self.raw
    }

    pub fn valid(&self) -> &[bool] {
        &self.valid
    }

    pub fn raw_at(&self, u: usize, v: usize) -> u16 {
        self.raw[v * self.width + u]
    }

    pub fn is_valid(&self, u: usize, v: usize) -> bool {
        self.valid[v * self.width + u]
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&m| m).count()
    }

    /// Returns both frames restricted to the cells valid in each.
    ///
    /// Raw readings are preserved; only the masks shrink. Frames must share
    /// dimensions.
    pub fn intersect_validity(a: &DepthFrame, b: &DepthFrame) -> Result<(DepthFrame, DepthFrame)> {
        if a.width != b.width || a.height != b.height {
            return Err(Error::FrameSizeMismatch {
                left_width: a.width,
                left_height: a.height,
                right_width: b.width,
                right_height: b.height,
            });
        }
        let shared: Vec<bool> = a
            .valid
            .iter()
            .zip(&b.valid)
            .map(|(&x, &y)| x && y)
            .collect();
        let left = DepthFrame {
            width: a.width,
            height: a.height,
            raw: a.raw.clone(),
            valid: shared.clone(),
        };
        let right = DepthFrame {
            width: b.width,
            height: b.height,
            raw: b.raw.clone(),
            valid: shared,
        };
        Ok((left, right))
    }
}

/// Metric points with the grid cell each one came from.
///
/// `points[i]` and `pixel_index[i]` describe the same reading; the two lists
/// always have equal length and every `z` is positive.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    pub points: Vec<[f64; 3]>,
    pub pixel_index: Vec<[u32; 2]>,
}

impl PointCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Copies the rectangle `rect` out of `frame`, raw values and mask alike.
pub fn crop_depth(frame: &DepthFrame, rect: &CropRect) -> Result<DepthFrame> {
    if rect.width == 0 || rect.height == 0 {
        return Err(Error::EmptyRect);
    }
    let right = rect.left.checked_add(rect.width);
    let bottom = rect.top.checked_add(rect.height);
    match (right, bottom) {
        (Some(r), Some(b)) if r <= frame.width && b <= frame.height => {}
        _ => {
            return Err(Error::RectOutOfBounds {
                rect: *rect,
                width: frame.width,
                height: frame.height,
            })
        }
    }
    let mut raw = Vec::with_capacity(rect.width * rect.height);
    let mut valid = Vec::with_capacity(rect.width * rect.height);
    for v in rect.top..rect.top + rect.height {
        let row = v * frame.width;
        raw.extend_from_slice(&frame.raw[row + rect.left..row + rect.left + rect.width]);
        valid.extend_from_slice(&frame.valid[row + rect.left..row + rect.left + rect.width]);
    }
    Ok(DepthFrame {
        width: rect.width,
        height: rect.height,
        raw,
        valid,
    })
}

/// Back-projects every valid cell, scanning rows top to bottom.
pub fn backproject(frame: &DepthFrame, intr: &CameraIntrinsics) -> Result<PointCloud> {
    intr.validate()?;
    let mut points = Vec::with_capacity(frame.valid_count());
    let mut pixel_index = Vec::with_capacity(points.capacity());
    for v in 0..frame.height {
        for u in 0..frame.width {
            if !frame.valid[v * frame.width + u] {
                continue;
            }
            let d = frame.raw[v * frame.width + u] as f64;
            let z = d / intr.depth_scale;
            let x = (u as f64 - intr.principal_x) * z / intr.focal_x;
            let y = (v as f64 - intr.principal_y) * z / intr.focal_y;
            points.push([x, y, z]);
            pixel_index.push([u as u32, v as u32]);
        }
    }
    Ok(PointCloud {
        points,
        pixel_index,
    })
}

/// Projects points back onto a `width` x `height` grid.
///
/// Points landing outside the grid or with non-positive `z` are dropped.
/// When several points round to the same cell the nearest one wins.
pub fn project(
    cloud: &PointCloud,
    intr: &CameraIntrinsics,
    width: usize,
    height: usize,
) -> Result<DepthFrame> {
    intr.validate()?;
    let mut raw = vec![0u16; width * height];
    let mut zbuf = vec![f64::INFINITY; width * height];
    for p in &cloud.points {
        let [x, y, z] = *p;
        if z <= 0.0 {
            continue;
        }
        let u = (intr.principal_x + x * intr.focal_x / z).round();
        let v = (intr.principal_y + y * intr.focal_y / z).round();
        if u < 0.0 || v < 0.0 || u >= width as f64 || v >= height as f64 {
            continue;
        }
        let cell = v as usize * width + u as usize;
        if z >= zbuf[cell] {
            continue;
        }
        let d = (z * intr.depth_scale).round();
        if d < 0.0 || d > u16::MAX as f64 {
            continue;
        }
        zbuf[cell] = z;
        raw[cell] = d as u16;
    }
    let valid = raw.iter().map(|&d| d != 0).collect();
    Ok(DepthFrame {
        width,
        height,
        raw,
        valid,
    })
}
