//! Synthetic depth corpora with known motion ground truth.
//!
//! Each sample is an onset/apex frame pair over a convex elliptical dome
//! (the "face") in front of a flat background. The apex adds one smooth
//! radial bump inside a class-specific region, so which pixels moved, by how
//! much, and under which label are all known exactly. That ground truth
//! drives localization and classification checks that real footage cannot
//! provide.
//!
//! Values are quantized to the 16-bit depth grid before differencing, and
//! sensor noise is truncated just under half a quantization step. A cell
//! outside the bump therefore reads back bit-identical in both frames: the
//! only nonzero displacements a pipeline can observe are the injected ones.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::camera::{CropRect, DepthFrame, DEFAULT_DEPTH_SCALE, DEFAULT_FOCAL};
use crate::error::{Error, Result};
use crate::io::depth::write_depth;
use crate::io::manifest::{save_manifest, Manifest, ManifestEntry, ManifestIntrinsics};

/// Fraction of the frame occupied by the face dome's bounding box.
const DOME_EXTENT_NUM: usize = 3;
const DOME_EXTENT_DEN: usize = 5;

/// Dome peak elevation toward the camera, meters, before subject jitter.
const DOME_HEIGHT: f64 = 0.04;

/// Background plane distance behind the dome rim, meters.
const BACKGROUND_OFFSET: f64 = 0.5;

/// Sensor noise is clipped to this many quantization steps so that cells
/// without injected motion stay bit-identical across the pair.
const NOISE_TRUNCATION_QUANTA: f64 = 0.45;

/// One class of motion: a region of the face box and a displacement.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ClassSpec {
    pub name: String,
    /// Region center as (u, v) fractions of the face box.
    pub region_center: (f64, f64),
    /// Region radius as a fraction of the face box's shorter side.
    pub region_radius: f64,
    /// Peak displacement magnitude, meters.
    pub amplitude: f64,
    /// Unit displacement direction in camera coordinates. Only the z
    /// component survives depth differencing; it must stay well away from
    /// zero for the motion to register at all.
    pub direction: [f64; 3],
}

/// Full description of a generated corpus.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SyntheticSpec {
    pub subjects: usize,
    /// Samples per (subject, class) pair; each repetition draws fresh noise.
    pub repetitions: usize,
    pub classes: Vec<ClassSpec>,
    /// Sensor noise standard deviation, meters.
    pub noise_sigma: f64,
    pub frame_width: usize,
    pub frame_height: usize,
    /// Depth of the dome rim, meters.
    pub base_depth: f64,
    /// Prefix for subject and sample ids, keeping corpora distinguishable.
    pub corpus_tag: String,
    pub rng_seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        let classes = vec![
            ClassSpec {
                name: "left_cheek".into(),
                region_center: (0.26, 0.64),
                region_radius: 0.14,
                amplitude: 0.004,
                direction: [0.0, 0.0, 1.0],
            },
            ClassSpec {
                name: "chin".into(),
                region_center: (0.50, 0.82),
                region_radius: 0.14,
                amplitude: 0.004,
                direction: [0.0, 0.0, 1.0],
            },
            ClassSpec {
                name: "right_cheek".into(),
                region_center: (0.74, 0.64),
                region_radius: 0.14,
                amplitude: 0.004,
                direction: [0.0, 0.0, 1.0],
            },
        ];
        SyntheticSpec {
            subjects: 8,
            repetitions: 1,
            classes,
            noise_sigma: 0.0004,
            frame_width: 448,
            frame_height: 448,
            base_depth: 1.0,
            corpus_tag: "synth".into(),
            rng_seed: 7,
        }
    }
}

/// Known answer for one generated sample.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    pub sample_id: String,
    pub class_label: String,
    width: usize,
    height: usize,
    mask: Vec<bool>,
}

impl GroundTruth {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// True when the full-frame cell (u, v) moved more than the noise floor.
    pub fn contains(&self, u: usize, v: usize) -> bool {
        u < self.width && v < self.height && self.mask[v * self.width + u]
    }

    pub fn moved_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Grows the mask by a Euclidean disk of `radius` pixels.
    pub fn dilate(&self, radius: usize) -> GroundTruth {
        let r = radius as i64;
        let mut grown = vec![false; self.mask.len()];
        for v in 0..self.height as i64 {
            for u in 0..self.width as i64 {
                if !self.mask[v as usize * self.width + u as usize] {
                    continue;
                }
                for dv in -r..=r {
                    for du in -r..=r {
                        if du * du + dv * dv > r * r {
                            continue;
                        }
                        let (nu, nv) = (u + du, v + dv);
                        if nu >= 0 && nv >= 0 && nu < self.width as i64 && nv < self.height as i64
                        {
                            grown[nv as usize * self.width + nu as usize] = true;
                        }
                    }
                }
            }
        }
        GroundTruth {
            sample_id: self.sample_id.clone(),
            class_label: self.class_label.clone(),
            width: self.width,
            height: self.height,
            mask: grown,
        }
    }
}

/// Bounding box of the face dome: the central region used as crop rect.
pub fn face_bbox(frame_width: usize, frame_height: usize) -> CropRect {
    let bw = frame_width * DOME_EXTENT_NUM / DOME_EXTENT_DEN;
    let bh = frame_height * DOME_EXTENT_NUM / DOME_EXTENT_DEN;
    CropRect::new((frame_width - bw) / 2, (frame_height - bh) / 2, bw, bh)
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.subjects == 0 {
            return Err(Error::InvalidSpec("subject count must be positive".into()));
        }
        if self.repetitions == 0 {
            return Err(Error::InvalidSpec("repetitions must be positive".into()));
        }
        if self.classes.is_empty() {
            return Err(Error::InvalidSpec("at least one class is required".into()));
        }
        if self.frame_width < 40 || self.frame_height < 40 {
            return Err(Error::InvalidSpec(format!(
                "frame {}x{} is too small for a usable face box",
                self.frame_width, self.frame_height
            )));
        }
        if !(self.base_depth > 0.0) || !self.base_depth.is_finite() {
            return Err(Error::InvalidSpec("base depth must be positive".into()));
        }
        if !(self.noise_sigma >= 0.0) || !self.noise_sigma.is_finite() {
            return Err(Error::InvalidSpec("noise sigma must be nonnegative".into()));
        }
        let scale = DEFAULT_DEPTH_SCALE;
        if self.noise_sigma * scale > NOISE_TRUNCATION_QUANTA {
            return Err(Error::InvalidSpec(format!(
                "noise sigma {} exceeds {} quantization steps; cells without \
                 injected motion could no longer be kept static",
                self.noise_sigma, NOISE_TRUNCATION_QUANTA
            )));
        }
        if self.corpus_tag.is_empty() {
            return Err(Error::InvalidSpec("corpus tag must be nonempty".into()));
        }

        let bbox = face_bbox(self.frame_width, self.frame_height);
        let short_side = bbox.width.min(bbox.height) as f64;
        let mut max_amplitude: f64 = 0.0;
        let mut names = std::collections::BTreeSet::new();
        for class in &self.classes {
            if !names.insert(class.name.as_str()) {
                return Err(Error::InvalidSpec(format!(
                    "class name {:?} appears twice",
                    class.name
                )));
            }
            if !(class.amplitude > 0.0) || !class.amplitude.is_finite() {
                return Err(Error::InvalidSpec(format!(
                    "class {:?} amplitude must be positive",
                    class.name
                )));
            }
            if class.amplitude < 5.0 * self.noise_sigma {
                return Err(Error::InvalidSpec(format!(
                    "class {:?} amplitude {} is below five times noise sigma {}",
                    class.name, class.amplitude, self.noise_sigma
                )));
            }
            let norm = class
                .direction
                .iter()
                .map(|c| c * c)
                .sum::<f64>()
                .sqrt();
            if (norm - 1.0).abs() > 1e-6 {
                return Err(Error::InvalidSpec(format!(
                    "class {:?} direction must be a unit vector (norm {norm})",
                    class.name
                )));
            }
            if class.direction[2].abs() < 0.1 {
                return Err(Error::InvalidSpec(format!(
                    "class {:?} direction is nearly parallel to the image plane; \
                     depth differencing cannot observe it",
                    class.name
                )));
            }
            if class.region_radius * short_side < 2.0 {
                return Err(Error::InvalidSpec(format!(
                    "class {:?} region spans under two pixels",
                    class.name
                )));
            }
            let (cu, cv) = class.region_center;
            let ru = class.region_radius * short_side / bbox.width as f64;
            let rv = class.region_radius * short_side / bbox.height as f64;
            if cu - ru < 0.0 || cu + ru > 1.0 || cv - rv < 0.0 || cv + rv > 1.0 {
                return Err(Error::InvalidSpec(format!(
                    "class {:?} region leaves the face box",
                    class.name
                )));
            }
            // Normalized ellipse coordinates: the dome rim sits at norm 1.
            // The 0.97 margin absorbs per-subject jitter of the dome shape.
            let nx = 2.0 * (cu - 0.5);
            let ny = 2.0 * (cv - 0.5);
            let disk = 2.0 * ru.max(rv);
            if (nx * nx + ny * ny).sqrt() + disk > 0.97 {
                return Err(Error::InvalidSpec(format!(
                    "class {:?} region leaves the face dome",
                    class.name
                )));
            }
            max_amplitude = max_amplitude.max(class.amplitude);
        }

        let nearest = (self.base_depth - DOME_HEIGHT * 1.25 - max_amplitude) * scale;
        let farthest = (self.base_depth + BACKGROUND_OFFSET + max_amplitude) * scale;
        if nearest < 1.0 || farthest > u16::MAX as f64 - 1.0 {
            return Err(Error::InvalidSpec(format!(
                "depth range [{nearest}, {farthest}] raw units leaves the 16-bit grid"
            )));
        }
        Ok(())
    }

    /// Copy with every amplitude scaled by `factor` under a new tag. Regions
    /// and noise stay identical, so the corpora differ only in motion
    /// strength.
    pub fn amplified(&self, factor: f64, tag: &str) -> Result<SyntheticSpec> {
        if !(factor > 0.0) || !factor.is_finite() {
            return Err(Error::InvalidSpec("amplitude factor must be positive".into()));
        }
        let mut spec = self.clone();
        spec.corpus_tag = tag.into();
        for class in &mut spec.classes {
            class.amplitude *= factor;
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn subject_id(&self, subject_index: usize) -> String {
        format!("{}_s{:02}", self.corpus_tag, subject_index + 1)
    }

    pub fn sample_id(&self, subject_index: usize, class_index: usize, repetition: usize) -> String {
        format!(
            "{}_{}_r{:02}",
            self.subject_id(subject_index),
            self.classes[class_index].name,
            repetition + 1
        )
    }
}

/// Per-subject dome shape after jitter.
struct Dome {
    center_u: f64,
    center_v: f64,
    axis_u: f64,
    axis_v: f64,
    height: f64,
}

impl Dome {
    /// Squared normalized radius: < 1 inside the dome.
    fn rho2(&self, u: usize, v: usize) -> f64 {
        let nu = (u as f64 - self.center_u) / self.axis_u;
        let nv = (v as f64 - self.center_v) / self.axis_v;
        nu * nu + nv * nv
    }
}

fn dome_for_subject(spec: &SyntheticSpec, subject_index: usize) -> Dome {
    let bbox = face_bbox(spec.frame_width, spec.frame_height);
    let mut rng =
        ChaCha8Rng::seed_from_u64(derive_seed(spec.rng_seed, &[1, subject_index as u64]));
    let height = DOME_HEIGHT * (1.0 + rng.gen_range(-0.2..=0.2));
    let axis_u = (bbox.width as f64 - 1.0) / 2.0 * (1.0 + rng.gen_range(-0.01..=0.01));
    let axis_v = (bbox.height as f64 - 1.0) / 2.0 * (1.0 + rng.gen_range(-0.01..=0.01));
    let center_u = bbox.left as f64 + (bbox.width as f64 - 1.0) / 2.0 + rng.gen_range(-1.0..=1.0);
    let center_v = bbox.top as f64 + (bbox.height as f64 - 1.0) / 2.0 + rng.gen_range(-1.0..=1.0);
    Dome {
        center_u,
        center_v,
        axis_u,
        axis_v,
        height,
    }
}

/// First sample of a (subject, class) cell; see [`generate_repeat`].
pub fn generate_sample(
    spec: &SyntheticSpec,
    subject_index: usize,
    class_index: usize,
) -> Result<(DepthFrame, DepthFrame, GroundTruth)> {
    generate_repeat(spec, subject_index, class_index, 0)
}

/// Builds one onset/apex pair plus ground truth.
///
/// The onset depth is quantized first; the apex applies the quantized
/// displacement on top, so every cell outside the bump is exactly static.
/// The truth mask marks cells whose injected displacement magnitude exceeds
/// `noise_sigma`.
pub fn generate_repeat(
    spec: &SyntheticSpec,
    subject_index: usize,
    class_index: usize,
    repetition: usize,
) -> Result<(DepthFrame, DepthFrame, GroundTruth)> {
    spec.validate()?;
    if subject_index >= spec.subjects {
        return Err(Error::InvalidSpec(format!(
            "subject index {subject_index} out of range for {} subjects",
            spec.subjects
        )));
    }
    if class_index >= spec.classes.len() {
        return Err(Error::InvalidSpec(format!(
            "class index {class_index} out of range for {} classes",
            spec.classes.len()
        )));
    }
    if repetition >= spec.repetitions {
        return Err(Error::InvalidSpec(format!(
            "repetition {repetition} out of range for {}",
            spec.repetitions
        )));
    }

    let (w, h) = (spec.frame_width, spec.frame_height);
    let scale = DEFAULT_DEPTH_SCALE;
    let dome = dome_for_subject(spec, subject_index);
    let bbox = face_bbox(w, h);
    let class = &spec.classes[class_index];
    let region_u = bbox.left as f64 + class.region_center.0 * (bbox.width as f64 - 1.0);
    let region_v = bbox.top as f64 + class.region_center.1 * (bbox.height as f64 - 1.0);
    let region_r = class.region_radius * bbox.width.min(bbox.height) as f64;

    let mut onset_raw = vec![0u16; w * h];
    for v in 0..h {
        for u in 0..w {
            let rho2 = dome.rho2(u, v);
            let depth = if rho2 < 1.0 {
                spec.base_depth - dome.height * (1.0 - rho2).sqrt()
            } else {
                spec.base_depth + BACKGROUND_OFFSET
            };
            onset_raw[v * w + u] = (depth * scale).round() as u16;
        }
    }

    let mut noise_rng = ChaCha8Rng::seed_from_u64(derive_seed(
        spec.rng_seed,
        &[2, subject_index as u64, class_index as u64, repetition as u64],
    ));
    let normal = (spec.noise_sigma > 0.0)
        .then(|| Normal::new(0.0, spec.noise_sigma).expect("validated sigma"));
    let noise_limit = NOISE_TRUNCATION_QUANTA / scale;

    let mut apex_raw = onset_raw.clone();
    let mut mask = vec![false; w * h];
    for v in 0..h {
        for u in 0..w {
            if dome.rho2(u, v) >= 1.0 {
                continue;
            }
            let du = u as f64 - region_u;
            let dv = v as f64 - region_v;
            let d = (du * du + dv * dv).sqrt() / region_r;
            let taper = if d < 1.0 {
                0.5 + 0.5 * (std::f64::consts::PI * d).cos()
            } else {
                0.0
            };
            let noise = match &normal {
                Some(dist) => loop {
                    let n = dist.sample(&mut noise_rng);
                    if n.abs() <= noise_limit {
                        break n;
                    }
                },
                None => 0.0,
            };
            let idx = v * w + u;
            let shift = ((class.amplitude * taper * class.direction[2] + noise) * scale).round();
            apex_raw[idx] = (onset_raw[idx] as f64 + shift) as u16;
            mask[idx] = class.amplitude * taper > spec.noise_sigma;
        }
    }

    let truth = GroundTruth {
        sample_id: spec.sample_id(subject_index, class_index, repetition),
        class_label: class.name.clone(),
        width: w,
        height: h,
        mask,
    };
    Ok((
        DepthFrame::new(w, h, onset_raw)?,
        DepthFrame::new(w, h, apex_raw)?,
        truth,
    ))
}

/// Writes a full corpus (frames plus `manifest.toml`) into `out_dir`.
///
/// Emotion and objective labels both carry the class name, and the crop rect
/// of every sample is the face box. Samples are generated in parallel.
pub fn generate_corpus(spec: &SyntheticSpec, out_dir: &Path) -> Result<Manifest> {
    spec.validate()?;
    std::fs::create_dir_all(out_dir).map_err(Error::file(out_dir))?;

    let mut cells = Vec::new();
    for subject in 0..spec.subjects {
        for class in 0..spec.classes.len() {
            for rep in 0..spec.repetitions {
                cells.push((subject, class, rep));
            }
        }
    }

    let bbox = face_bbox(spec.frame_width, spec.frame_height);
    let entries: Vec<ManifestEntry> = cells
        .par_iter()
        .map(|&(subject, class, rep)| -> Result<ManifestEntry> {
            let (onset, apex, truth) = generate_repeat(spec, subject, class, rep)?;
            let onset_name = format!("{}_onset.pgm", truth.sample_id);
            let apex_name = format!("{}_apex.pgm", truth.sample_id);
            write_depth(&out_dir.join(&onset_name), &onset)?;
            write_depth(&out_dir.join(&apex_name), &apex)?;
            Ok(ManifestEntry {
                sample_id: truth.sample_id,
                subject_id: spec.subject_id(subject),
                onset: onset_name.into(),
                apex: apex_name.into(),
                crop: bbox,
                label_emotion: Some(truth.class_label.clone()),
                label_objective: Some(truth.class_label),
            })
        })
        .collect::<Result<_>>()?;

    let intrinsics = ManifestIntrinsics {
        focal_x: DEFAULT_FOCAL,
        focal_y: None,
        principal_x: None,
        principal_y: None,
        depth_scale: DEFAULT_DEPTH_SCALE,
    };
    let vocabulary = spec.classes.iter().map(|c| c.name.clone()).collect();
    let manifest = Manifest::new(intrinsics, vocabulary, entries, out_dir.to_path_buf())?;
    save_manifest(&out_dir.join("manifest.toml"), &manifest)?;
    Ok(manifest)
}

/// Splitmix-style avalanche over a seed and context words, giving every
/// (purpose, subject, class, repetition) tuple its own generator stream.
fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    let mut state = base;
    for &p in parts {
        state = splitmix64(state ^ p.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    }
    splitmix64(state)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
