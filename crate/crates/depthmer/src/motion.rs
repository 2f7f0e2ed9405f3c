//! Per-point motion features between an onset and an apex point cloud.
//!
//! Given two clouds back-projected from the same pixels, each point carries
//! a displacement `delta = apex - onset`. The displacement is encoded in
//! spherical form,
//!
//! ```text
//! r     = |delta|
//! theta = atan2(delta_y, delta_x)            in (-pi, pi]
//! phi   = atan2(delta_z, hypot(delta_x, delta_y))   in [-pi/2, pi/2]
//! ```
//!
//! with the zero vector mapping to `(0, 0, 0)` so motionless points rank
//! last. Channels are min-max normalized to `[0, 1]` and the top `k` points
//! by channel magnitude form the fixed-size feature set handed to the
//! classifier.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::camera::{self, CameraIntrinsics, CropRect, DepthFrame, PointCloud};
use crate::error::{Error, Result};

/// Index-aligned displacement field.
///
/// `positions[i]` is the onset-frame location of the point whose motion is
/// `deltas[i]`; `pixel_index[i]` is the source grid cell of both.
#[derive(Clone, Debug, PartialEq)]
pub struct MotionField {
    pub positions: Vec<[f64; 3]>,
    pub deltas: Vec<[f64; 3]>,
    pub pixel_index: Vec<[u32; 2]>,
}

impl MotionField {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

/// Displacements in spherical channels `(r, theta, phi)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SphericalMotion {
    pub positions: Vec<[f64; 3]>,
    pub channels: Vec<[f64; 3]>,
    pub pixel_index: Vec<[u32; 2]>,
    /// True once every channel has been scaled into `[0, 1]`.
    pub normalized: bool,
}

impl SphericalMotion {
    pub fn len(&self) -> usize {
        self.positions.len()
    }
}

/// Fixed-size classifier input: `k` rows of `(x, y, z, c1, c2, c3)`.
#[derive(Clone, Debug, PartialEq)]
pub struct MotionFeatureSet {
    pub k: usize,
    pub features: Vec<[f64; 6]>,
    /// Source grid cell per row. Padded rows repeat their origin's cell.
    pub pixel_index: Vec<[u32; 2]>,
    /// Class index into the owning manifest's vocabulary, when known.
    pub label: Option<usize>,
    pub subject_id: String,
}

/// Point selection strategy for the final feature set.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Selection {
    /// Top-k by channel magnitude, ties broken by ascending input index.
    Sorted,
    /// k points drawn uniformly without replacement from the seeded RNG.
    Random,
}

impl std::fmt::Display for Selection {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Selection::Sorted => write!(f, "sorted"),
            Selection::Random => write!(f, "random"),
        }
    }
}

impl std::str::FromStr for Selection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sorted" => Ok(Selection::Sorted),
            "random" => Ok(Selection::Random),
            other => Err(Error::InvalidConfig(format!(
                "unknown selection {other:?}, expected sorted or random"
            ))),
        }
    }
}

/// How channels are scaled into `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormalizationMode {
    /// Per-channel min-max over the observed values.
    Observed,
    /// Angles scaled from their full signed ranges; `r` from its observed
    /// maximum.
    FixedRange,
}

impl std::fmt::Display for NormalizationMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            NormalizationMode::Observed => write!(f, "observed"),
            NormalizationMode::FixedRange => write!(f, "fixedrange"),
        }
    }
}

impl std::str::FromStr for NormalizationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "observed" => Ok(NormalizationMode::Observed),
            "fixedrange" => Ok(NormalizationMode::FixedRange),
            other => Err(Error::InvalidConfig(format!(
                "unknown normalization {other:?}, expected observed or fixedrange"
            ))),
        }
    }
}

/// Everything that determines feature extraction for one sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    /// Number of points kept per sample.
    pub k: usize,
    pub selection: Selection,
    /// Background cutoff as a multiple of the mean distance to the centroid.
    pub filter_factor: f64,
    /// Recenter selected positions to their centroid and scale into the
    /// unit ball.
    pub center_positions: bool,
    /// Drop points whose raw amplitude exceeds this percentile, if set.
    pub amplitude_cap_percentile: Option<f64>,
    pub normalization: NormalizationMode,
    pub rng_seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            k: 2048,
            selection: Selection::Sorted,
            filter_factor: 1.5,
            center_positions: true,
            amplitude_cap_percentile: Some(99.5),
            normalization: NormalizationMode::Observed,
            rng_seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidConfig("k must be at least 1".into()));
        }
        if !(self.filter_factor > 0.0 && self.filter_factor.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "filter_factor must be positive, got {}",
                self.filter_factor
            )));
        }
        if let Some(q) = self.amplitude_cap_percentile {
            if !(q > 0.0 && q <= 100.0) {
                return Err(Error::InvalidConfig(format!(
                    "amplitude_cap_percentile must lie in (0, 100], got {q}"
                )));
            }
        }
        Ok(())
    }
}

/// Differences two index-aligned clouds, `apex - onset`.
pub fn compute_displacement(onset: &PointCloud, apex: &PointCloud) -> Result<MotionField> {
    if onset.len() != apex.len() {
        return Err(Error::CloudMismatch {
            left: onset.len(),
            right: apex.len(),
        });
    }
    if let Some(index) = onset
        .pixel_index
        .iter()
        .zip(&apex.pixel_index)
        .position(|(a, b)| a != b)
    {
        return Err(Error::PixelMisalignment { index });
    }
    let deltas = onset
        .points
        .iter()
        .zip(&apex.points)
        .map(|(o, a)| [a[0] - o[0], a[1] - o[1], a[2] - o[2]])
        .collect();
    Ok(MotionField {
        positions: onset.points.clone(),
        deltas,
        pixel_index: onset.pixel_index.clone(),
    })
}

/// Drops points whose distance to the position centroid exceeds
/// `factor` times the mean distance.
pub fn filter_background(field: &MotionField, factor: f64) -> Result<MotionField> {
    if field.is_empty() {
        return Err(Error::EmptyCloud);
    }
    if !(factor > 0.0 && factor.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "filter_factor must be positive, got {factor}"
        )));
    }
    let n = field.len() as f64;
    let mut centroid = [0.0f64; 3];
    for p in &field.positions {
        for k in 0..3 {
            centroid[k] += p[k];
        }
    }
    for c in &mut centroid {
        *c /= n;
    }
    let distances: Vec<f64> = field
        .positions
        .iter()
        .map(|p| {
            let dx = p[0] - centroid[0];
            let dy = p[1] - centroid[1];
            let dz = p[2] - centroid[2];
            (dx * dx + dy * dy + dz * dz).sqrt()
        })
        .collect();
    let mean = distances.iter().sum::<f64>() / n;
    let cutoff = factor * mean;
    let mut out = MotionField {
        positions: Vec::new(),
        deltas: Vec::new(),
        pixel_index: Vec::new(),
    };
    for (i, &d) in distances.iter().enumerate() {
        if d <= cutoff {
            out.positions.push(field.positions[i]);
            out.deltas.push(field.deltas[i]);
            out.pixel_index.push(field.pixel_index[i]);
        }
    }
    Ok(out)
}

/// Encodes every displacement in spherical channels.
pub fn to_spherical(field: &MotionField) -> SphericalMotion {
    let channels = field
        .deltas
        .iter()
        .map(|d| {
            let [dx, dy, dz] = *d;
            let lateral = dx.hypot(dy);
            let r = (dx * dx + dy * dy + dz * dz).sqrt();
            if r == 0.0 {
                return [0.0, 0.0, 0.0];
            }
            let mut theta = dy.atan2(dx);
            // atan2 yields -pi for a negative-zero y component; fold it onto
            // +pi so theta stays within (-pi, pi].
            if theta == -std::f64::consts::PI {
                theta = std::f64::consts::PI;
            }
            let phi = dz.atan2(lateral);
            [r, theta, phi]
        })
        .collect();
    SphericalMotion {
        positions: field.positions.clone(),
        channels,
        pixel_index: field.pixel_index.clone(),
        normalized: false,
    }
}

/// Drops points whose raw amplitude exceeds the `percentile`-th value.
///
/// The percentile is nearest-rank over the observed `r` channel, so at
/// least `percentile` percent of the points always survive. Must run
/// before normalization.
pub fn cap_amplitude(sm: &SphericalMotion, percentile: f64) -> Result<SphericalMotion> {
    if sm.normalized {
        return Err(Error::AlreadyNormalized);
    }
    if sm.channels.is_empty() {
        return Err(Error::EmptyCloud);
    }
    if !(percentile > 0.0 && percentile <= 100.0) {
        return Err(Error::InvalidConfig(format!(
            "percentile must lie in (0, 100], got {percentile}"
        )));
    }
    let mut amplitudes: Vec<f64> = sm.channels.iter().map(|c| c[0]).collect();
    amplitudes.sort_unstable_by(|a, b| a.partial_cmp(b).expect("amplitudes are finite"));
    let rank = ((percentile / 100.0 * amplitudes.len() as f64).ceil() as usize)
        .clamp(1, amplitudes.len());
    let threshold = amplitudes[rank - 1];
    let mut out = SphericalMotion {
        positions: Vec::new(),
        channels: Vec::new(),
        pixel_index: Vec::new(),
        normalized: false,
    };
    for i in 0..sm.len() {
        if sm.channels[i][0] <= threshold {
            out.positions.push(sm.positions[i]);
            out.channels.push(sm.channels[i]);
            out.pixel_index.push(sm.pixel_index[i]);
        }
    }
    Ok(out)
}

/// Scales every channel into `[0, 1]` using observed per-channel min-max.
pub fn normalize_channels(sm: &SphericalMotion) -> Result<SphericalMotion> {
    normalize_channels_with(sm, NormalizationMode::Observed)
}

/// Scales every channel into `[0, 1]` with the given mode.
///
/// A channel without spread collapses to all zeros in either mode.
pub fn normalize_channels_with(
    sm: &SphericalMotion,
    mode: NormalizationMode,
) -> Result<SphericalMotion> {
    if sm.normalized {
        return Err(Error::AlreadyNormalized);
    }
    if sm.channels.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for c in &sm.channels {
        for k in 0..3 {
            lo[k] = lo[k].min(c[k]);
            hi[k] = hi[k].max(c[k]);
        }
    }
    if let NormalizationMode::FixedRange = mode {
        use std::f64::consts::{FRAC_PI_2, PI};
        // r keeps its observed scale; the angles use their full signed
        // ranges regardless of what was observed.
        lo[1] = -PI;
        hi[1] = PI;
        lo[2] = -FRAC_PI_2;
        hi[2] = FRAC_PI_2;
    }
    let channels = sm
        .channels
        .iter()
        .map(|c| {
            let mut out = [0.0f64; 3];
            for k in 0..3 {
                let range = hi[k] - lo[k];
                out[k] = if range == 0.0 {
                    0.0
                } else {
                    (c[k] - lo[k]) / range
                };
            }
            out
        })
        .collect();
    Ok(SphericalMotion {
        positions: sm.positions.clone(),
        channels,
        pixel_index: sm.pixel_index.clone(),
        normalized: true,
    })
}

/// Channel magnitude used for ranking.
fn score(c: &[f64; 3]) -> f64 {
    (c[0] * c[0] + c[1] * c[1] + c[2] * c[2]).sqrt()
}

/// Picks `cfg.k` rows from normalized motion, padding cyclically when the
/// cloud is smaller than `k`.
pub fn rank_and_select(sm: &SphericalMotion, cfg: &PipelineConfig) -> Result<MotionFeatureSet> {
    cfg.validate()?;
    if !sm.normalized {
        return Err(Error::NotNormalized);
    }
    let n = sm.len();
    if n == 0 {
        return Err(Error::EmptyCloud);
    }
    let take = cfg.k.min(n);
    let chosen: Vec<usize> = match cfg.selection {
        Selection::Sorted => {
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| {
                score(&sm.channels[b])
                    .partial_cmp(&score(&sm.channels[a]))
                    .expect("normalized channels are finite")
                    .then(a.cmp(&b))
            });
            order.truncate(take);
            order
        }
        Selection::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
            let mut pool: Vec<usize> = (0..n).collect();
            for i in 0..take {
                let j = rng.gen_range(i..n);
                pool.swap(i, j);
            }
            pool.truncate(take);
            pool
        }
    };
    let mut features = Vec::with_capacity(cfg.k);
    let mut pixel_index = Vec::with_capacity(cfg.k);
    for row in 0..cfg.k {
        let i = chosen[row % chosen.len()];
        let p = sm.positions[i];
        let c = sm.channels[i];
        features.push([p[0], p[1], p[2], c[0], c[1], c[2]]);
        pixel_index.push(sm.pixel_index[i]);
    }
    if cfg.center_positions {
        center_unit_ball(&mut features);
    }
    Ok(MotionFeatureSet {
        k: cfg.k,
        features,
        pixel_index,
        label: None,
        subject_id: String::new(),
    })
}

/// Recenters row positions to their centroid and scales them into the unit
/// ball. Duplicated padding rows count toward the centroid.
fn center_unit_ball(features: &mut [[f64; 6]]) {
    let n = features.len() as f64;
    let mut centroid = [0.0f64; 3];
    for row in features.iter() {
        for k in 0..3 {
            centroid[k] += row[k];
        }
    }
    for c in &mut centroid {
        *c /= n;
    }
    let mut max_radius: f64 = 0.0;
    for row in features.iter_mut() {
        for k in 0..3 {
            row[k] -= centroid[k];
        }
        let norm = (row[0] * row[0] + row[1] * row[1] + row[2] * row[2]).sqrt();
        max_radius = max_radius.max(norm);
    }
    if max_radius > 0.0 {
        for row in features.iter_mut() {
            for k in 0..3 {
                row[k] /= max_radius;
            }
        }
    }
}

/// Runs the whole per-sample pipeline on an onset/apex frame pair.
///
/// Both frames are cropped to `rect`, restricted to their shared validity
/// mask, and back-projected with `intr` (given in full-frame pixel
/// coordinates). The result carries no label or subject; callers attach
/// identity afterwards. Deterministic for a fixed `cfg.rng_seed`.
pub fn extract_features(
    onset: &DepthFrame,
    apex: &DepthFrame,
    rect: &CropRect,
    intr: &CameraIntrinsics,
    cfg: &PipelineConfig,
) -> Result<MotionFeatureSet> {
    cfg.validate()?;
    let onset_crop = camera::crop_depth(onset, rect)?;
    let apex_crop = camera::crop_depth(apex, rect)?;
    let (onset_crop, apex_crop) = DepthFrame::intersect_validity(&onset_crop, &apex_crop)?;
    let local = intr.for_crop(rect);
    let onset_cloud = camera::backproject(&onset_crop, &local)?;
    let apex_cloud = camera::backproject(&apex_crop, &local)?;
    let field = compute_displacement(&onset_cloud, &apex_cloud)?;
    let field = filter_background(&field, cfg.filter_factor)?;
    let mut sm = to_spherical(&field);
    if let Some(q) = cfg.amplitude_cap_percentile {
        sm = cap_amplitude(&sm, q)?;
    }
    let sm = normalize_channels_with(&sm, cfg.normalization)?;
    rank_and_select(&sm, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

    fn cloud(points: Vec<[f64; 3]>) -> PointCloud {
        let pixel_index = (0..points.len()).map(|i| [i as u32, 0]).collect();
        PointCloud {
            points,
            pixel_index,
        }
    }

    fn spherical(channels: Vec<[f64; 3]>, normalized: bool) -> SphericalMotion {
        let n = channels.len();
        SphericalMotion {
            positions: (0..n).map(|i| [i as f64, 0.0, 1.0]).collect(),
            channels,
            pixel_index: (0..n).map(|i| [i as u32, 0]).collect(),
            normalized,
        }
    }

    #[test]
    fn identical_clouds_have_zero_motion() {
        let a = cloud(vec![[0.1, 0.2, 1.0], [0.3, -0.4, 2.0]]);
        let field = compute_displacement(&a, &a).unwrap();
        assert!(field.deltas.iter().all(|d| *d == [0.0, 0.0, 0.0]));
    }

    #[test]
    fn displacement_is_apex_minus_onset() {
        let onset = cloud(vec![[0.0, 0.0, 1.0]]);
        let apex = cloud(vec![[0.0, 0.0, 1.002]]);
        let field = compute_displacement(&onset, &apex).unwrap();
        assert!((field.deltas[0][2] - 0.002).abs() < 1e-15);
        assert_eq!(field.positions[0], [0.0, 0.0, 1.0]);
    }

    #[test]
    fn swapping_frames_negates_deltas() {
        let a = cloud(vec![[0.1, 0.2, 1.0], [0.5, 0.1, 1.4]]);
        let b = cloud(vec![[0.2, 0.1, 1.1], [0.4, 0.3, 1.2]]);
        let fwd = compute_displacement(&a, &b).unwrap();
        let rev = compute_displacement(&b, &a).unwrap();
        for (f, r) in fwd.deltas.iter().zip(&rev.deltas) {
            for k in 0..3 {
                assert_eq!(f[k], -r[k]);
            }
        }
    }

    #[test]
    fn misaligned_clouds_are_rejected() {
        let a = cloud(vec![[0.0, 0.0, 1.0], [0.0, 0.0, 1.0]]);
        let mut b = a.clone();
        b.pixel_index[1] = [9, 9];
        assert!(matches!(
            compute_displacement(&a, &b),
            Err(Error::PixelMisalignment { index: 1 })
        ));
        let c = cloud(vec![[0.0, 0.0, 1.0]]);
        assert!(matches!(
            compute_displacement(&a, &c),
            Err(Error::CloudMismatch { left: 2, right: 1 })
        ));
    }

    #[test]
    fn equidistant_points_survive_background_filter() {
        let positions = vec![
            [1.0, 0.0, 1.0],
            [-1.0, 0.0, 1.0],
            [0.0, 1.0, 1.0],
            [0.0, -1.0, 1.0],
        ];
        let field = MotionField {
            deltas: vec![[0.0; 3]; 4],
            pixel_index: (0..4).map(|i| [i, 0]).collect(),
            positions,
        };
        let kept = filter_background(&field, 1.5).unwrap();
        assert_eq!(kept.len(), 4);
    }

    #[test]
    fn background_filter_matches_independent_threshold() {
        // 100 points near the unit circle plus one far outlier.
        let mut positions: Vec<[f64; 3]> = (0..100)
            .map(|i| {
                let a = i as f64 / 100.0 * 2.0 * PI;
                [a.cos(), a.sin(), 1.0]
            })
            .collect();
        positions.push([10.0, 0.0, 1.0]);
        let n = positions.len();
        let field = MotionField {
            deltas: vec![[0.0; 3]; n],
            pixel_index: (0..n as u32).map(|i| [i, 0]).collect(),
            positions: positions.clone(),
        };

        // Independent recomputation of the retention rule.
        let mut centroid = [0.0f64; 3];
        for p in &positions {
            for k in 0..3 {
                centroid[k] += p[k] / n as f64;
            }
        }
        let dist = |p: &[f64; 3]| -> f64 {
            ((p[0] - centroid[0]).powi(2)
                + (p[1] - centroid[1]).powi(2)
                + (p[2] - centroid[2]).powi(2))
            .sqrt()
        };
        let mean = positions.iter().map(dist).sum::<f64>() / n as f64;
        let expected: Vec<usize> = (0..n)
            .filter(|&i| dist(&positions[i]) <= 1.5 * mean)
            .collect();

        let kept = filter_background(&field, 1.5).unwrap();
        let kept_indices: Vec<usize> =
            kept.pixel_index.iter().map(|p| p[0] as usize).collect();
        assert_eq!(kept_indices, expected);
        assert!(!kept_indices.contains(&100), "outlier must be dropped");
        assert_eq!(kept.len(), 100);
    }

    #[test]
    fn empty_field_is_an_error() {
        let field = MotionField {
            positions: vec![],
            deltas: vec![],
            pixel_index: vec![],
        };
        assert!(matches!(
            filter_background(&field, 1.5),
            Err(Error::EmptyCloud)
        ));
    }

    #[test]
    fn spherical_hand_values() {
        let field = MotionField {
            positions: vec![[0.0, 0.0, 1.0]; 3],
            deltas: vec![
                [0.0, 0.0, 0.0],
                [1.0, 1.0, std::f64::consts::SQRT_2],
                [-1.0, 0.0, 0.0],
            ],
            pixel_index: vec![[0, 0], [1, 0], [2, 0]],
        };
        let sm = to_spherical(&field);
        assert_eq!(sm.channels[0], [0.0, 0.0, 0.0]);
        let [r, theta, phi] = sm.channels[1];
        assert!((r - 2.0).abs() < 1e-15);
        assert!((theta - FRAC_PI_4).abs() < 1e-15);
        assert!((phi - FRAC_PI_4).abs() < 1e-15);
        let [r, theta, phi] = sm.channels[2];
        assert_eq!(r, 1.0);
        assert_eq!(theta, PI);
        assert_eq!(phi, 0.0);
    }

    #[test]
    fn theta_folds_negative_pi_onto_positive() {
        let field = MotionField {
            positions: vec![[0.0, 0.0, 1.0]],
            deltas: vec![[-1.0, -0.0, 0.0]],
            pixel_index: vec![[0, 0]],
        };
        let sm = to_spherical(&field);
        assert_eq!(sm.channels[0][1], PI);
    }

    #[test]
    fn spherical_channels_reconstruct_their_vector() {
        // Independent oracle: rebuild the Cartesian displacement from the
        // channels and require agreement.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let deltas: Vec<[f64; 3]> = (0..1000)
            .map(|_| {
                [
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                ]
            })
            .collect();
        let n = deltas.len();
        let field = MotionField {
            positions: vec![[0.0, 0.0, 1.0]; n],
            deltas: deltas.clone(),
            pixel_index: (0..n as u32).map(|i| [i, 0]).collect(),
        };
        let sm = to_spherical(&field);
        for (d, c) in deltas.iter().zip(&sm.channels) {
            let [r, theta, phi] = *c;
            let rebuilt = [
                r * phi.cos() * theta.cos(),
                r * phi.cos() * theta.sin(),
                r * phi.sin(),
            ];
            let norm = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
            for k in 0..3 {
                assert!(
                    (rebuilt[k] - d[k]).abs() <= 1e-9 * norm.max(1e-300),
                    "reconstruction off: {rebuilt:?} vs {d:?}"
                );
            }
            assert!(theta > -PI && theta <= PI);
            assert!((-FRAC_PI_2..=FRAC_PI_2).contains(&phi));
        }
    }

    #[test]
    fn amplitude_is_rotation_invariant() {
        let onset = cloud(vec![[0.1, 0.0, 1.0], [0.0, 0.2, 1.1], [0.3, 0.1, 0.9]]);
        let apex = cloud(vec![[0.12, 0.01, 1.0], [0.0, 0.18, 1.15], [0.33, 0.1, 0.88]]);
        // Rotation by 0.7 rad about z then 0.3 rad about x.
        let rotate = |p: &[f64; 3]| -> [f64; 3] {
            let (s1, c1) = 0.7f64.sin_cos();
            let (x, y, z) = (c1 * p[0] - s1 * p[1], s1 * p[0] + c1 * p[1], p[2]);
            let (s2, c2) = 0.3f64.sin_cos();
            [x, c2 * y - s2 * z, s2 * y + c2 * z]
        };
        let rot = |c: &PointCloud| PointCloud {
            points: c.points.iter().map(rotate).collect(),
            pixel_index: c.pixel_index.clone(),
        };
        let plain = to_spherical(&compute_displacement(&onset, &apex).unwrap());
        let rotated = to_spherical(&compute_displacement(&rot(&onset), &rot(&apex)).unwrap());
        for (a, b) in plain.channels.iter().zip(&rotated.channels) {
            assert!((a[0] - b[0]).abs() <= 1e-9 * a[0].abs().max(1e-300));
        }
    }

    #[test]
    fn minmax_normalization_hand_case() {
        let sm = spherical(
            vec![[0.0, -1.0, 0.5], [1.0, 0.0, 0.5], [2.0, 1.0, 0.5]],
            false,
        );
        let out = normalize_channels(&sm).unwrap();
        assert_eq!(
            out.channels,
            vec![[0.0, 0.0, 0.0], [0.5, 0.5, 0.0], [1.0, 1.0, 0.0]]
        );
        assert!(out.normalized);
    }

    #[test]
    fn normalization_preserves_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let channels: Vec<[f64; 3]> = (0..64)
            .map(|_| {
                [
                    rng.gen_range(0.0..0.01),
                    rng.gen_range(-PI..PI),
                    rng.gen_range(-FRAC_PI_2..FRAC_PI_2),
                ]
            })
            .collect();
        let sm = spherical(channels.clone(), false);
        let out = normalize_channels(&sm).unwrap();
        for k in 0..3 {
            for i in 0..channels.len() {
                for j in 0..channels.len() {
                    assert_eq!(
                        channels[i][k] < channels[j][k],
                        out.channels[i][k] < out.channels[j][k]
                    );
                }
            }
        }
    }

    #[test]
    fn normalization_is_idempotent_on_unit_range() {
        let sm = spherical(vec![[0.0, 0.3, 0.9], [1.0, 0.1, 0.2], [0.4, 0.8, 0.0]], false);
        let once = normalize_channels(&sm).unwrap();
        let again = normalize_channels(&SphericalMotion {
            normalized: false,
            ..once.clone()
        })
        .unwrap();
        assert_eq!(once.channels, again.channels);
    }

    #[test]
    fn double_normalization_is_rejected() {
        let sm = spherical(vec![[0.1, 0.2, 0.3]], true);
        assert!(matches!(
            normalize_channels(&sm),
            Err(Error::AlreadyNormalized)
        ));
    }

    #[test]
    fn fixed_range_normalization_uses_signed_angle_ranges() {
        let sm = spherical(vec![[1.0, 0.0, 0.0], [2.0, FRAC_PI_2, -FRAC_PI_2]], false);
        let out = normalize_channels_with(&sm, NormalizationMode::FixedRange).unwrap();
        assert_eq!(out.channels[0], [0.0, 0.5, 0.5]);
        assert_eq!(out.channels[1], [1.0, 0.75, 0.0]);
    }

    #[test]
    fn amplitude_cap_drops_top_percentile_only() {
        let mut channels: Vec<[f64; 3]> = (0..200)
            .map(|i| [i as f64 / 1000.0, 0.0, 0.0])
            .collect();
        channels.push([5.0, 0.0, 0.0]);
        let sm = spherical(channels, false);
        let capped = cap_amplitude(&sm, 99.5).unwrap();
        assert_eq!(capped.len(), 200);
        assert!(capped.channels.iter().all(|c| c[0] < 5.0));
        // A full-percentile cap keeps everything.
        let kept = cap_amplitude(&sm, 100.0).unwrap();
        assert_eq!(kept.len(), 201);
    }

    fn sorted_cfg(k: usize) -> PipelineConfig {
        PipelineConfig {
            k,
            center_positions: false,
            ..PipelineConfig::default()
        }
    }

    #[test]
    fn top_k_picks_highest_scores() {
        let sm = spherical(
            vec![[0.9, 0.0, 0.0], [0.1, 0.0, 0.0], [0.5, 0.0, 0.0]],
            true,
        );
        let set = rank_and_select(&sm, &sorted_cfg(2)).unwrap();
        let picked: Vec<u32> = set.pixel_index.iter().map(|p| p[0]).collect();
        assert_eq!(picked, vec![0, 2]);
    }

    #[test]
    fn equal_scores_break_ties_by_index() {
        let sm = spherical(
            vec![[0.5, 0.0, 0.0], [0.5, 0.0, 0.0], [0.5, 0.0, 0.0]],
            true,
        );
        let set = rank_and_select(&sm, &sorted_cfg(2)).unwrap();
        let picked: Vec<u32> = set.pixel_index.iter().map(|p| p[0]).collect();
        assert_eq!(picked, vec![0, 1]);
    }

    #[test]
    fn short_clouds_pad_cyclically_in_score_order() {
        let sm = spherical(
            vec![[0.2, 0.0, 0.0], [0.9, 0.0, 0.0], [0.4, 0.0, 0.0]],
            true,
        );
        let set = rank_and_select(&sm, &sorted_cfg(5)).unwrap();
        let picked: Vec<u32> = set.pixel_index.iter().map(|p| p[0]).collect();
        assert_eq!(picked, vec![1, 2, 0, 1, 2]);
        assert_eq!(set.features[0], set.features[3]);
        assert_eq!(set.features[1], set.features[4]);
    }

    #[test]
    fn selection_matches_brute_force_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        for _ in 0..100 {
            let n = rng.gen_range(1..200);
            let k = rng.gen_range(1..=n);
            let channels: Vec<[f64; 3]> = (0..n)
                .map(|_| [rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>()])
                .collect();
            let sm = spherical(channels.clone(), true);

            // Oracle: full sort of (score, index) pairs, descending score,
            // ascending index.
            let mut oracle: Vec<(f64, usize)> = channels
                .iter()
                .enumerate()
                .map(|(i, c)| ((c[0] * c[0] + c[1] * c[1] + c[2] * c[2]).sqrt(), i))
                .collect();
            oracle.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
            let expected: Vec<u32> = oracle[..k].iter().map(|&(_, i)| i as u32).collect();

            let set = rank_and_select(&sm, &sorted_cfg(k)).unwrap();
            let picked: Vec<u32> = set.pixel_index.iter().map(|p| p[0]).collect();
            assert_eq!(picked, expected);

            // Optimality: worst selected score >= best unselected score.
            if k < n {
                let min_sel = oracle[..k].iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
                let max_unsel = oracle[k..].iter().map(|p| p.0).fold(0.0, f64::max);
                assert!(min_sel >= max_unsel);
            }
        }
    }

    #[test]
    fn random_selection_is_seed_deterministic() {
        let channels: Vec<[f64; 3]> = (0..50).map(|i| [i as f64 / 50.0, 0.0, 0.0]).collect();
        let sm = spherical(channels, true);
        let cfg = PipelineConfig {
            k: 10,
            selection: Selection::Random,
            center_positions: false,
            rng_seed: 77,
            ..PipelineConfig::default()
        };
        let a = rank_and_select(&sm, &cfg).unwrap();
        let b = rank_and_select(&sm, &cfg).unwrap();
        assert_eq!(a, b);
        let mut other = cfg.clone();
        other.rng_seed = 78;
        let c = rank_and_select(&sm, &other).unwrap();
        assert_ne!(a.pixel_index, c.pixel_index);
        // Draws are distinct when the cloud is large enough.
        let mut seen = a.pixel_index.clone();
        seen.sort_unstable();
        seen.dedup();
        assert_eq!(seen.len(), 10);
    }

    #[test]
    fn unnormalized_input_cannot_be_ranked() {
        let sm = spherical(vec![[1.0, 0.0, 0.0]], false);
        assert!(matches!(
            rank_and_select(&sm, &sorted_cfg(1)),
            Err(Error::NotNormalized)
        ));
    }

    #[test]
    fn centered_positions_fit_the_unit_ball() {
        let mut sm = spherical(
            (0..20).map(|i| [i as f64 / 20.0, 0.0, 0.0]).collect(),
            true,
        );
        for (i, p) in sm.positions.iter_mut().enumerate() {
            *p = [i as f64, (i % 3) as f64 * 4.0, 1.0 + i as f64 * 0.1];
        }
        let cfg = PipelineConfig {
            k: 20,
            ..PipelineConfig::default()
        };
        let set = rank_and_select(&sm, &cfg).unwrap();
        let mut centroid = [0.0f64; 3];
        let mut max_norm: f64 = 0.0;
        for row in &set.features {
            for k in 0..3 {
                centroid[k] += row[k] / 20.0;
            }
            max_norm = max_norm.max((row[0] * row[0] + row[1] * row[1] + row[2] * row[2]).sqrt());
        }
        assert!(max_norm <= 1.0 + 1e-12);
        assert!((max_norm - 1.0).abs() < 1e-9);
        for c in centroid {
            assert!(c.abs() < 1e-9);
        }
    }
}
