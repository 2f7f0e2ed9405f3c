//! Set-abstraction point cloud classifier, built from scratch on flat
//! parameter vectors.
//!
//! Two variants share one parameter layout scheme:
//!
//! * `pointnet`: one shared per-point MLP over the raw 6-channel rows,
//!   a global max-pool, and a fully connected head. Exactly permutation
//!   invariant.
//! * `pointnet2`: a stack of set-abstraction levels (farthest point
//!   sampling, ball-query grouping, shared MLP over relative coordinates
//!   concatenated with features, per-group max-pool) feeding the same
//!   global stage and head.
//!
//! All parameters live in one `Vec<f64>`; a [`Layout`] records where each
//! weight matrix and bias vector sits. Gradients come from hand-written
//! reverse-mode passes, with max-pool subgradients routed to the lowest
//! winning row index. No batch normalization, no dropout: every forward
//! pass is a pure function of parameters and input.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::motion::MotionFeatureSet;

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Input row width: three position components plus three motion channels.
const ROW_DIM: usize = 6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    PointNet,
    PointNet2,
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Variant::PointNet => write!(f, "pointnet"),
            Variant::PointNet2 => write!(f, "pointnet2"),
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pointnet" => Ok(Variant::PointNet),
            "pointnet2" => Ok(Variant::PointNet2),
            other => Err(Error::InvalidConfig(format!(
                "unknown model variant {other:?}, expected pointnet or pointnet2"
            ))),
        }
    }
}

/// One set-abstraction level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SaLevel {
    /// Number of farthest-point-sampled centroids.
    pub centroids: usize,
    /// Ball query radius in position units.
    pub radius: f64,
    /// Points gathered per centroid.
    pub group_size: usize,
    /// Shared MLP widths, applied with rectifier activations.
    pub mlp_widths: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variant: Variant,
    pub sa_levels: Vec<SaLevel>,
    /// Widths of the shared MLP feeding the global max-pool.
    pub global_widths: Vec<usize>,
    /// Hidden widths of the fully connected head; the final linear map to
    /// `class_count` logits is implicit.
    pub head_widths: Vec<usize>,
    pub class_count: usize,
    pub rng_seed: u64,
}

impl ModelConfig {
    /// Permutation-invariant baseline on raw rows.
    pub fn pointnet(class_count: usize) -> Self {
        ModelConfig {
            variant: Variant::PointNet,
            sa_levels: vec![],
            global_widths: vec![64, 128, 256],
            head_widths: vec![128],
            class_count,
            rng_seed: 0,
        }
    }

    /// Two-level set abstraction sized for k = 2048 inputs.
    pub fn pointnet2(class_count: usize) -> Self {
        ModelConfig {
            variant: Variant::PointNet2,
            sa_levels: vec![
                SaLevel {
                    centroids: 256,
                    radius: 0.2,
                    group_size: 32,
                    mlp_widths: vec![64, 64, 128],
                },
                SaLevel {
                    centroids: 64,
                    radius: 0.4,
                    group_size: 64,
                    mlp_widths: vec![128, 128, 256],
                },
            ],
            global_widths: vec![256, 512, 1024],
            head_widths: vec![512, 256],
            class_count,
            rng_seed: 0,
        }
    }

    /// Narrow two-level variant for single-core training runs; same shape
    /// of computation as [`ModelConfig::pointnet2`] at a fraction of the
    /// arithmetic.
    pub fn pointnet2_lite(class_count: usize) -> Self {
        ModelConfig {
            variant: Variant::PointNet2,
            sa_levels: vec![
                SaLevel {
                    centroids: 64,
                    radius: 0.3,
                    group_size: 16,
                    mlp_widths: vec![24, 32],
                },
                SaLevel {
                    centroids: 16,
                    radius: 0.6,
                    group_size: 8,
                    mlp_widths: vec![48, 64],
                },
            ],
            global_widths: vec![64, 96],
            head_widths: vec![48],
            class_count,
            rng_seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.class_count < 2 {
            return Err(Error::InvalidConfig(format!(
                "class count {} is below two",
                self.class_count
            )));
        }
        if self.global_widths.is_empty() {
            return Err(Error::InvalidConfig("global MLP needs at least one width".into()));
        }
        match self.variant {
            Variant::PointNet => {
                if !self.sa_levels.is_empty() {
                    return Err(Error::InvalidConfig(
                        "pointnet variant takes no set-abstraction levels".into(),
                    ));
                }
            }
            Variant::PointNet2 => {
                if self.sa_levels.is_empty() {
                    return Err(Error::InvalidConfig(
                        "pointnet2 variant needs at least one set-abstraction level".into(),
                    ));
                }
            }
        }
        let mut prev_centroids = usize::MAX;
        for (i, level) in self.sa_levels.iter().enumerate() {
            if level.centroids == 0 {
                return Err(Error::InvalidConfig(format!("level {i} has zero centroids")));
            }
            if level.centroids >= prev_centroids {
                return Err(Error::InvalidConfig(
                    "centroid counts must strictly decrease across levels".into(),
                ));
            }
            if !(level.radius > 0.0) || !level.radius.is_finite() {
                return Err(Error::InvalidConfig(format!("level {i} radius must be positive")));
            }
            if level.group_size == 0 {
                return Err(Error::InvalidConfig(format!("level {i} group size is zero")));
            }
            if level.mlp_widths.is_empty() || level.mlp_widths.iter().any(|&w| w == 0) {
                return Err(Error::InvalidConfig(format!(
                    "level {i} MLP widths must be nonempty and positive"
                )));
            }
            prev_centroids = level.centroids;
        }
        if self.global_widths.iter().any(|&w| w == 0) || self.head_widths.iter().any(|&w| w == 0)
        {
            return Err(Error::InvalidConfig("layer widths must be positive".into()));
        }
        Ok(())
    }
}

/// Optimization settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Decoupled decay applied to weight matrices only, never biases.
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub rng_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.001,
            weight_decay: 0.0001,
            batch_size: 24,
            epochs: 60,
            rng_seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::InvalidConfig("learning rate must be positive".into()));
        }
        if !(self.weight_decay >= 0.0) || !self.weight_decay.is_finite() {
            return Err(Error::InvalidConfig("weight decay must be nonnegative".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch size must be at least one".into()));
        }
        Ok(())
    }
}

/// One dense layer's slot in the flat parameter vector. Weights are stored
/// row-major by output dimension, biases directly after.
#[derive(Clone, Copy, Debug)]
struct LinearSpec {
    in_dim: usize,
    out_dim: usize,
    weight_offset: usize,
    bias_offset: usize,
}

impl LinearSpec {
    fn len(&self) -> usize {
        self.in_dim * self.out_dim + self.out_dim
    }
}

#[derive(Clone, Debug)]
struct Layout {
    sa: Vec<Vec<LinearSpec>>,
    global: Vec<LinearSpec>,
    head: Vec<LinearSpec>,
    total: usize,
}

impl Layout {
    fn build(cfg: &ModelConfig) -> Layout {
        let mut offset = 0;
        let push = |offset: &mut usize, in_dim: usize, out_dim: usize| {
            let spec = LinearSpec {
                in_dim,
                out_dim,
                weight_offset: *offset,
                bias_offset: *offset + in_dim * out_dim,
            };
            *offset += spec.len();
            spec
        };

        let mut sa = Vec::with_capacity(cfg.sa_levels.len());
        let mut feature_width = ROW_DIM;
        for level in &cfg.sa_levels {
            let mut specs = Vec::with_capacity(level.mlp_widths.len());
            let mut in_dim = 3 + feature_width;
            for &w in &level.mlp_widths {
                specs.push(push(&mut offset, in_dim, w));
                in_dim = w;
            }
            feature_width = in_dim;
            sa.push(specs);
        }

        let mut global = Vec::with_capacity(cfg.global_widths.len());
        let mut in_dim = match cfg.variant {
            Variant::PointNet => ROW_DIM,
            Variant::PointNet2 => 3 + feature_width,
        };
        for &w in &cfg.global_widths {
            global.push(push(&mut offset, in_dim, w));
            in_dim = w;
        }

        let mut head = Vec::with_capacity(cfg.head_widths.len() + 1);
        for &w in cfg.head_widths.iter().chain(std::iter::once(&cfg.class_count)) {
            head.push(push(&mut offset, in_dim, w));
            in_dim = w;
        }

        Layout {
            sa,
            global,
            head,
            total: offset,
        }
    }

    fn all_specs(&self) -> impl Iterator<Item = &LinearSpec> {
        self.sa
            .iter()
            .flatten()
            .chain(self.global.iter())
            .chain(self.head.iter())
    }

    /// True at indices belonging to weight matrices (decay targets).
    fn weight_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.total];
        for spec in self.all_specs() {
            for i in spec.weight_offset..spec.bias_offset {
                mask[i] = true;
            }
        }
        mask
    }
}

/// Greedy farthest point sampling.
///
/// Starts at the point with the largest coordinate norm and repeatedly takes
/// the point maximizing the minimum distance to everything selected so far.
/// Both rules break ties toward the lowest index, making the result a pure
/// function of the coordinate multiset order.
pub fn farthest_point_sample(points: &[[f64; 3]], m: usize) -> Result<Vec<usize>> {
    let n = points.len();
    if m == 0 || m > n {
        return Err(Error::SampleSize {
            requested: m,
            available: n,
        });
    }
    let mut start = 0;
    let mut best = f64::NEG_INFINITY;
    for (i, p) in points.iter().enumerate() {
        let norm = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
        if norm > best {
            best = norm;
            start = i;
        }
    }
    let mut selected = Vec::with_capacity(m);
    selected.push(start);
    let mut min_dist: Vec<f64> = points.iter().map(|p| dist2(p, &points[start])).collect();
    while selected.len() < m {
        let mut next = 0;
        let mut far = f64::NEG_INFINITY;
        for (i, &d) in min_dist.iter().enumerate() {
            if d > far {
                far = d;
                next = i;
            }
        }
        selected.push(next);
        for (i, d) in min_dist.iter_mut().enumerate() {
            let nd = dist2(&points[i], &points[next]);
            if nd < *d {
                *d = nd;
            }
        }
    }
    Ok(selected)
}

fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

/// Gathers up to `group_size` in-radius points per centroid, in ascending
/// index order, padding by repetition of the first qualifier. A centroid
/// with no qualifiers fills its group with itself.
pub fn ball_query(
    points: &[[f64; 3]],
    centroids: &[usize],
    radius: f64,
    group_size: usize,
) -> Vec<Vec<usize>> {
    let r2 = radius * radius;
    centroids
        .iter()
        .map(|&c| {
            let mut group = Vec::with_capacity(group_size);
            for (i, p) in points.iter().enumerate() {
                if group.len() == group_size {
                    break;
                }
                if dist2(p, &points[c]) <= r2 {
                    group.push(i);
                }
            }
            if group.is_empty() {
                group.push(c);
            }
            while group.len() < group_size {
                group.push(group[0]);
            }
            group
        })
        .collect()
}

/// Point selection and grouping for one input cloud. Depends only on the
/// positions, so one plan serves every forward and backward pass over the
/// same sample.
#[derive(Clone, Debug)]
pub struct GroupingPlan {
    input_len: usize,
    levels: Vec<LevelPlan>,
}

#[derive(Clone, Debug)]
struct LevelPlan {
    /// Group member indices into the previous level's point list.
    groups: Vec<Vec<usize>>,
    /// Centroid positions, which become the next level's point list.
    positions: Vec<[f64; 3]>,
}

#[derive(Clone, Debug)]
pub struct PointModel {
    config: ModelConfig,
    layout: Layout,
    params: Vec<f64>,
}

impl PointModel {
    /// Seeded uniform initialization in ±√(6 / (fan_in + fan_out)) per
    /// matrix; biases start at zero.
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let layout = Layout::build(&config);
        let mut params = vec![0.0; layout.total];
        let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
        for spec in layout.all_specs() {
            let limit = (6.0 / (spec.in_dim + spec.out_dim) as f64).sqrt();
            for w in &mut params[spec.weight_offset..spec.bias_offset] {
                *w = rng.gen_range(-limit..=limit);
            }
        }
        Ok(PointModel {
            config,
            layout,
            params,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn param_count(&self) -> usize {
        self.layout.total
    }

    /// Replaces every parameter; the vector must match the layout exactly.
    pub fn set_params(&mut self, params: Vec<f64>) -> Result<()> {
        if params.len() != self.layout.total {
            return Err(Error::DimensionMismatch {
                expected: self.layout.total,
                got: params.len(),
            });
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidConfig("parameters must be finite".into()));
        }
        self.params = params;
        Ok(())
    }

    /// Builds the sampling/grouping plan for one input cloud.
    pub fn plan(&self, feats: &MotionFeatureSet) -> Result<GroupingPlan> {
        if feats.features.is_empty() {
            return Err(Error::EmptyCloud);
        }
        let mut positions: Vec<[f64; 3]> = feats
            .features
            .iter()
            .map(|row| [row[0], row[1], row[2]])
            .collect();
        let input_len = positions.len();
        let mut levels = Vec::with_capacity(self.config.sa_levels.len());
        for level in &self.config.sa_levels {
            let centroids = farthest_point_sample(&positions, level.centroids)?;
            let groups = ball_query(&positions, &centroids, level.radius, level.group_size);
            let next: Vec<[f64; 3]> = centroids.iter().map(|&c| positions[c]).collect();
            levels.push(LevelPlan {
                groups,
                positions: next.clone(),
            });
            positions = next;
        }
        Ok(GroupingPlan { input_len, levels })
    }

    /// Raw class logits for one feature set.
    pub fn forward(&self, feats: &MotionFeatureSet) -> Result<Vec<f64>> {
        let plan = self.plan(feats)?;
        self.forward_with_plan(feats, &plan)
    }

    /// Forward pass reusing a precomputed plan for this sample.
    pub fn forward_with_plan(
        &self,
        feats: &MotionFeatureSet,
        plan: &GroupingPlan,
    ) -> Result<Vec<f64>> {
        Ok(self.forward_traced(feats, plan)?.logits())
    }

    /// Predicted class: argmax of the logits, ties to the lowest index.
    pub fn predict(&self, feats: &MotionFeatureSet) -> Result<usize> {
        let logits = self.forward(feats)?;
        Ok(argmax(&logits))
    }

    /// Mean cross-entropy over the batch and its gradient with respect to
    /// every parameter.
    pub fn loss_and_gradients(&self, batch: &[&MotionFeatureSet]) -> Result<(f64, Vec<f64>)> {
        let plans: Vec<GroupingPlan> = batch.iter().map(|f| self.plan(f)).collect::<Result<_>>()?;
        let refs: Vec<(&MotionFeatureSet, &GroupingPlan)> =
            batch.iter().copied().zip(plans.iter()).collect();
        self.batch_gradients(&refs)
    }

    fn batch_gradients(
        &self,
        batch: &[(&MotionFeatureSet, &GroupingPlan)],
    ) -> Result<(f64, Vec<f64>)> {
        if batch.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let mut grads = vec![0.0; self.layout.total];
        let mut loss = 0.0;
        let scale = 1.0 / batch.len() as f64;
        for &(feats, plan) in batch {
            let label = feats.label.ok_or_else(|| Error::MissingLabel {
                sample_id: feats.subject_id.clone(),
            })?;
            if label >= self.config.class_count {
                return Err(Error::LabelOutOfRange {
                    label,
                    classes: self.config.class_count,
                });
            }
            let trace = self.forward_traced(feats, plan)?;
            let logits = trace.logits();
            let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
            let sum: f64 = exps.iter().sum();
            loss -= scale * ((exps[label] / sum).ln());
            let grad_logits: Vec<f64> = exps
                .iter()
                .enumerate()
                .map(|(i, e)| scale * (e / sum - if i == label { 1.0 } else { 0.0 }))
                .collect();
            self.backward(plan, &trace, &grad_logits, &mut grads);
        }
        Ok((loss, grads))
    }

    /// Trains in place with Adam plus decoupled weight decay, returning the
    /// mean loss per epoch. Deterministic for fixed config and train seeds.
    pub fn fit(&mut self, train: &[&MotionFeatureSet], cfg: &TrainConfig) -> Result<Vec<f64>> {
        cfg.validate()?;
        if train.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let plans: Vec<GroupingPlan> = train.iter().map(|f| self.plan(f)).collect::<Result<_>>()?;
        let decay_mask = self.layout.weight_mask();
        let mut adam = Adam::new(self.layout.total);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
        let mut order: Vec<usize> = (0..train.len()).collect();
        let mut epoch_losses = Vec::with_capacity(cfg.epochs);
        for _ in 0..cfg.epochs {
            order.shuffle(&mut rng);
            let mut epoch_loss = 0.0;
            let mut batches = 0usize;
            for chunk in order.chunks(cfg.batch_size) {
                let batch: Vec<(&MotionFeatureSet, &GroupingPlan)> =
                    chunk.iter().map(|&i| (train[i], &plans[i])).collect();
                let (loss, grads) = self.batch_gradients(&batch)?;
                adam.step(
                    &mut self.params,
                    &grads,
                    &decay_mask,
                    cfg.learning_rate,
                    cfg.weight_decay,
                );
                epoch_loss += loss;
                batches += 1;
            }
            epoch_losses.push(epoch_loss / batches as f64);
        }
        Ok(epoch_losses)
    }

    fn forward_traced(&self, feats: &MotionFeatureSet, plan: &GroupingPlan) -> Result<ForwardTrace> {
        if feats.features.is_empty() {
            return Err(Error::EmptyCloud);
        }
        if plan.input_len != feats.features.len() || plan.levels.len() != self.config.sa_levels.len()
        {
            return Err(Error::CloudMismatch {
                left: plan.input_len,
                right: feats.features.len(),
            });
        }

        let mut level_traces = Vec::with_capacity(plan.levels.len());
        let global_rows: Vec<Vec<f64>> = match self.config.variant {
            Variant::PointNet => feats.features.iter().map(|r| r.to_vec()).collect(),
            Variant::PointNet2 => {
                let mut positions: Vec<[f64; 3]> = feats
                    .features
                    .iter()
                    .map(|row| [row[0], row[1], row[2]])
                    .collect();
                let mut features: Vec<Vec<f64>> =
                    feats.features.iter().map(|r| r.to_vec()).collect();
                for (level, specs) in plan.levels.iter().zip(&self.layout.sa) {
                    let mut stages = Vec::with_capacity(level.groups.len());
                    let mut pooled = Vec::with_capacity(level.groups.len());
                    for (group, center) in level.groups.iter().zip(&level.positions) {
                        let rows: Vec<Vec<f64>> = group
                            .iter()
                            .map(|&i| {
                                let mut row = Vec::with_capacity(3 + features[i].len());
                                row.push(positions[i][0] - center[0]);
                                row.push(positions[i][1] - center[1]);
                                row.push(positions[i][2] - center[2]);
                                row.extend_from_slice(&features[i]);
                                row
                            })
                            .collect();
                        let trace = stage_forward(&self.params, specs, rows);
                        pooled.push(trace.pooled.clone());
                        stages.push(trace);
                    }
                    level_traces.push(stages);
                    positions = level.positions.clone();
                    features = pooled;
                }
                positions
                    .iter()
                    .zip(&features)
                    .map(|(p, f)| {
                        let mut row = Vec::with_capacity(3 + f.len());
                        row.extend_from_slice(p);
                        row.extend_from_slice(f);
                        row
                    })
                    .collect()
            }
        };

        let global = stage_forward(&self.params, &self.layout.global, global_rows);
        let head = head_forward(&self.params, &self.layout.head, global.pooled.clone());
        Ok(ForwardTrace {
            levels: level_traces,
            global,
            head,
        })
    }

    fn backward(
        &self,
        plan: &GroupingPlan,
        trace: &ForwardTrace,
        grad_logits: &[f64],
        grads: &mut [f64],
    ) {
        let grad_global_pooled = head_backward(
            &self.params,
            grads,
            &self.layout.head,
            &trace.head,
            grad_logits.to_vec(),
        );
        let sparse_rows = stage_backward(
            &self.params,
            grads,
            &self.layout.global,
            &trace.global,
            &grad_global_pooled,
        );
        if self.config.variant == Variant::PointNet {
            return;
        }

        // Feature gradients for the final level's points, stripped of the
        // absolute-coordinate prefix the global rows carry.
        let last = plan.levels.last().expect("pointnet2 has levels");
        let feat_width = self.layout.sa.last().unwrap().last().unwrap().out_dim;
        let mut grad_feats = vec![vec![0.0; feat_width]; last.positions.len()];
        for (row, grad) in sparse_rows {
            for (d, g) in grad[3..].iter().enumerate() {
                grad_feats[row][d] += g;
            }
        }

        for (idx, (level, specs)) in plan.levels.iter().zip(&self.layout.sa).enumerate().rev() {
            let below_width = specs[0].in_dim - 3;
            let below_len = if idx == 0 {
                plan.input_len
            } else {
                plan.levels[idx - 1].positions.len()
            };
            let mut grad_below = vec![vec![0.0; below_width]; below_len];
            for (c, stage) in trace.levels[idx].iter().enumerate() {
                if grad_feats[c].iter().all(|&g| g == 0.0) {
                    continue;
                }
                let sparse = stage_backward(&self.params, grads, specs, stage, &grad_feats[c]);
                if idx == 0 {
                    // The level consumes raw input rows; nothing below
                    // receives gradients, but parameter gradients above are
                    // already accumulated.
                    continue;
                }
                for (r, grad_row) in sparse {
                    let member = level.groups[c][r];
                    for (d, g) in grad_row[3..].iter().enumerate() {
                        grad_below[member][d] += g;
                    }
                }
            }
            grad_feats = grad_below;
        }
    }
}

struct ForwardTrace {
    levels: Vec<Vec<StageTrace>>,
    global: StageTrace,
    head: HeadTrace,
}

impl ForwardTrace {
    fn logits(&self) -> Vec<f64> {
        self.head.acts.last().expect("head has layers").clone()
    }
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

fn affine(params: &[f64], spec: &LinearSpec, x: &[f64], out: &mut [f64]) {
    for d in 0..spec.out_dim {
        let row = spec.weight_offset + d * spec.in_dim;
        let mut acc = params[spec.bias_offset + d];
        for (i, &xi) in x.iter().enumerate() {
            acc += params[row + i] * xi;
        }
        out[d] = acc;
    }
}

/// Shared MLP over rows followed by a per-dimension max-pool. `acts[0]` is
/// the input; `acts[l + 1]` the rectified output of layer `l`.
struct StageTrace {
    acts: Vec<Vec<Vec<f64>>>,
    argmax: Vec<usize>,
    pooled: Vec<f64>,
}

fn stage_forward(params: &[f64], specs: &[LinearSpec], rows: Vec<Vec<f64>>) -> StageTrace {
    let mut acts = Vec::with_capacity(specs.len() + 1);
    acts.push(rows);
    for spec in specs {
        let prev = acts.last().unwrap();
        let mut next = Vec::with_capacity(prev.len());
        for row in prev {
            let mut out = vec![0.0; spec.out_dim];
            affine(params, spec, row, &mut out);
            for v in &mut out {
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
            next.push(out);
        }
        acts.push(next);
    }
    let last = acts.last().unwrap();
    let width = specs.last().unwrap().out_dim;
    let mut pooled = vec![f64::NEG_INFINITY; width];
    let mut argmax = vec![0usize; width];
    for (r, row) in last.iter().enumerate() {
        for d in 0..width {
            if row[d] > pooled[d] {
                pooled[d] = row[d];
                argmax[d] = r;
            }
        }
    }
    StageTrace {
        acts,
        argmax,
        pooled,
    }
}

/// Reverse pass through a stage. Max-pool routes each pooled dimension's
/// gradient to its recorded winning row (lowest index on ties). Returns the
/// nonzero input-row gradients as (row, gradient) pairs.
fn stage_backward(
    params: &[f64],
    grads: &mut [f64],
    specs: &[LinearSpec],
    trace: &StageTrace,
    grad_pooled: &[f64],
) -> Vec<(usize, Vec<f64>)> {
    let width = grad_pooled.len();
    let mut current: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for d in 0..width {
        if grad_pooled[d] == 0.0 {
            continue;
        }
        current
            .entry(trace.argmax[d])
            .or_insert_with(|| vec![0.0; width])[d] += grad_pooled[d];
    }
    for (l, spec) in specs.iter().enumerate().rev() {
        let mut below: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        for (&r, grad_out) in &current {
            let out_act = &trace.acts[l + 1][r];
            let input = &trace.acts[l][r];
            let mut grad_in = vec![0.0; spec.in_dim];
            for d in 0..spec.out_dim {
                if out_act[d] <= 0.0 || grad_out[d] == 0.0 {
                    continue;
                }
                let g = grad_out[d];
                grads[spec.bias_offset + d] += g;
                let row = spec.weight_offset + d * spec.in_dim;
                for i in 0..spec.in_dim {
                    grads[row + i] += g * input[i];
                    grad_in[i] += g * params[row + i];
                }
            }
            below.insert(r, grad_in);
        }
        current = below;
    }
    current.into_iter().collect()
}

/// Plain MLP on one vector: rectified hidden layers, linear final layer.
struct HeadTrace {
    acts: Vec<Vec<f64>>,
}

fn head_forward(params: &[f64], specs: &[LinearSpec], x: Vec<f64>) -> HeadTrace {
    let mut acts = Vec::with_capacity(specs.len() + 1);
    acts.push(x);
    for (l, spec) in specs.iter().enumerate() {
        let input = acts.last().unwrap();
        let mut out = vec![0.0; spec.out_dim];
        affine(params, spec, input, &mut out);
        if l + 1 < specs.len() {
            for v in &mut out {
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
        }
        acts.push(out);
    }
    HeadTrace { acts }
}

fn head_backward(
    params: &[f64],
    grads: &mut [f64],
    specs: &[LinearSpec],
    trace: &HeadTrace,
    grad_out: Vec<f64>,
) -> Vec<f64> {
    let mut grad = grad_out;
    for (l, spec) in specs.iter().enumerate().rev() {
        let is_output = l + 1 == specs.len();
        let out_act = &trace.acts[l + 1];
        let input = &trace.acts[l];
        let mut grad_in = vec![0.0; spec.in_dim];
        for d in 0..spec.out_dim {
            let pass = is_output || out_act[d] > 0.0;
            if !pass || grad[d] == 0.0 {
                continue;
            }
            let g = grad[d];
            grads[spec.bias_offset + d] += g;
            let row = spec.weight_offset + d * spec.in_dim;
            for i in 0..spec.in_dim {
                grads[row + i] += g * input[i];
                grad_in[i] += g * params[row + i];
            }
        }
        grad = grad_in;
    }
    grad
}

/// Adam with decoupled weight decay; decay multiplies the pre-step value of
/// weight-matrix entries only.
struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    fn new(len: usize) -> Self {
        Adam {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    fn step(
        &mut self,
        params: &mut [f64],
        grads: &[f64],
        decay_mask: &[bool],
        learning_rate: f64,
        weight_decay: f64,
    ) {
        self.t += 1;
        let bc1 = 1.0 - BETA1.powi(self.t as i32);
        let bc2 = 1.0 - BETA2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = BETA1 * self.m[i] + (1.0 - BETA1) * g;
            self.v[i] = BETA2 * self.v[i] + (1.0 - BETA2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            let decay = if decay_mask[i] { weight_decay * params[i] } else { 0.0 };
            params[i] -= learning_rate * (m_hat / (v_hat.sqrt() + ADAM_EPS) + decay);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn feature_set(rows: Vec<[f64; 6]>, label: Option<usize>) -> MotionFeatureSet {
        let k = rows.len();
        MotionFeatureSet {
            k,
            features: rows,
            pixel_index: (0..k).map(|i| [i as u32, 0]).collect(),
            label,
            subject_id: "t".into(),
        }
    }

    fn random_rows(n: usize, seed: u64) -> Vec<[f64; 6]> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let mut row = [0.0; 6];
                for (j, c) in row.iter_mut().enumerate() {
                    *c = if j < 3 {
                        rng.gen_range(-1.0..=1.0)
                    } else {
                        rng.gen_range(0.0..=1.0)
                    };
                }
                row
            })
            .collect()
    }

    fn tiny_pointnet(classes: usize, seed: u64) -> PointModel {
        let mut cfg = ModelConfig::pointnet(classes);
        cfg.global_widths = vec![5, 7];
        cfg.head_widths = vec![4];
        cfg.rng_seed = seed;
        PointModel::new(cfg).unwrap()
    }

    fn tiny_pointnet2(classes: usize, seed: u64) -> PointModel {
        let cfg = ModelConfig {
            variant: Variant::PointNet2,
            sa_levels: vec![
                SaLevel {
                    centroids: 4,
                    radius: 1.5,
                    group_size: 3,
                    mlp_widths: vec![5],
                },
                SaLevel {
                    centroids: 2,
                    radius: 3.0,
                    group_size: 2,
                    mlp_widths: vec![6],
                },
            ],
            global_widths: vec![7],
            head_widths: vec![4],
            class_count: classes,
            rng_seed: seed,
        };
        PointModel::new(cfg).unwrap()
    }

    #[test]
    fn fps_starts_at_max_norm_and_spreads() {
        let corners = vec![
            [0.0, 0.0, 0.0],
            [1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [1.0, 1.0, 0.0],
        ];
        // (1,1) has the largest norm; the farthest point from it is (0,0);
        // the remaining two tie and the lower index wins.
        assert_eq!(farthest_point_sample(&corners, 3).unwrap(), vec![3, 0, 1]);
        assert_eq!(farthest_point_sample(&corners, 1).unwrap(), vec![3]);

        let all = farthest_point_sample(&corners, 4).unwrap();
        let mut sorted = all.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, vec![0, 1, 2, 3]);

        assert!(matches!(
            farthest_point_sample(&corners, 5),
            Err(Error::SampleSize { .. })
        ));
    }

    #[test]
    fn fps_matches_brute_force_on_random_clouds() {
        for seed in 0..5 {
            let rows = random_rows(24, seed);
            let pts: Vec<[f64; 3]> = rows.iter().map(|r| [r[0], r[1], r[2]]).collect();
            let got = farthest_point_sample(&pts, 9).unwrap();

            let mut start = 0;
            for i in 1..pts.len() {
                let n = |p: &[f64; 3]| (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
                if n(&pts[i]) > n(&pts[start]) {
                    start = i;
                }
            }
            let mut expect = vec![start];
            while expect.len() < 9 {
                let mut best = (0, f64::NEG_INFINITY);
                for i in 0..pts.len() {
                    let d = expect
                        .iter()
                        .map(|&s| dist2(&pts[i], &pts[s]))
                        .fold(f64::INFINITY, f64::min);
                    if d > best.1 {
                        best = (i, d);
                    }
                }
                expect.push(best.0);
            }
            assert_eq!(got, expect, "seed {seed}");
        }
    }

    #[test]
    fn ball_query_orders_pads_and_self_fills() {
        let line = vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]];
        // Middle centroid, radius covering all three, group of four.
        let groups = ball_query(&line, &[1], 1.5, 4);
        assert_eq!(groups, vec![vec![0, 1, 2, 0]]);

        // Radius below every pairwise distance: groups collapse to self.
        let groups = ball_query(&line, &[2], 0.5, 3);
        assert_eq!(groups, vec![vec![2, 2, 2]]);

        // Radius beyond the diameter: lowest-index points fill the group.
        let groups = ball_query(&line, &[2], 10.0, 2);
        assert_eq!(groups, vec![vec![0, 1]]);
    }

    #[test]
    fn zero_parameters_give_zero_logits() {
        let rows = random_rows(12, 1);
        let feats = feature_set(rows, None);
        for mut model in [tiny_pointnet(3, 1), tiny_pointnet2(3, 1)] {
            model.set_params(vec![0.0; model.param_count()]).unwrap();
            let logits = model.forward(&feats).unwrap();
            assert_eq!(logits, vec![0.0; 3]);
        }
    }

    #[test]
    fn pointnet_is_permutation_and_duplication_invariant() {
        let model = tiny_pointnet(3, 5);
        let rows = random_rows(10, 2);
        let base = model.forward(&feature_set(rows.clone(), None)).unwrap();

        let mut reversed = rows.clone();
        reversed.reverse();
        let permuted = model.forward(&feature_set(reversed, None)).unwrap();
        assert_eq!(base, permuted);

        let mut doubled = rows.clone();
        doubled.extend_from_slice(&rows);
        let dup = model.forward(&feature_set(doubled, None)).unwrap();
        assert_eq!(base, dup);
    }

    #[test]
    fn forward_is_deterministic_and_plan_reusable() {
        let model = tiny_pointnet2(2, 9);
        let feats = feature_set(random_rows(16, 3), None);
        let a = model.forward(&feats).unwrap();
        let b = model.forward(&feats).unwrap();
        assert_eq!(a, b);
        let plan = model.plan(&feats).unwrap();
        let c = model.forward_with_plan(&feats, &plan).unwrap();
        assert_eq!(a, c);
    }

    #[test]
    fn uniform_logits_cost_ln_class_count() {
        let mut model = tiny_pointnet(4, 2);
        model.set_params(vec![0.0; model.param_count()]).unwrap();
        let feats = feature_set(random_rows(6, 4), Some(2));
        let (loss, _) = model.loss_and_gradients(&[&feats]).unwrap();
        assert!((loss - 4.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn analytic_gradients_match_finite_differences() {
        for (name, mut model) in [
            ("pointnet", tiny_pointnet(2, 11)),
            ("pointnet2", tiny_pointnet2(2, 12)),
        ] {
            let batch_rows = [random_rows(8, 21), random_rows(8, 22)];
            let sets: Vec<MotionFeatureSet> = batch_rows
                .iter()
                .enumerate()
                .map(|(i, rows)| feature_set(rows.clone(), Some(i % 2)))
                .collect();
            let batch: Vec<&MotionFeatureSet> = sets.iter().collect();
            let (_, analytic) = model.loss_and_gradients(&batch).unwrap();

            let step = 1e-5;
            let base = model.params().to_vec();
            for i in 0..base.len() {
                let mut plus = base.clone();
                plus[i] += step;
                model.set_params(plus).unwrap();
                let (lp, _) = model.loss_and_gradients(&batch).unwrap();
                let mut minus = base.clone();
                minus[i] -= step;
                model.set_params(minus).unwrap();
                let (lm, _) = model.loss_and_gradients(&batch).unwrap();
                let numeric = (lp - lm) / (2.0 * step);
                let denom = analytic[i].abs().max(numeric.abs()).max(1.0);
                assert!(
                    (analytic[i] - numeric).abs() / denom < 1e-4,
                    "{name} param {i}: analytic {} numeric {numeric}",
                    analytic[i]
                );
            }
            model.set_params(base).unwrap();
        }
    }

    #[test]
    fn decoupled_decay_shrinks_weights_only() {
        let lr = 0.001;
        let wd = 0.0001;
        let mut params = vec![2.0, -3.0, 0.5];
        let mask = vec![true, true, false];
        let mut adam = Adam::new(3);
        adam.step(&mut params, &[0.0; 3], &mask, lr, wd);
        assert_eq!(params[0], 2.0 - lr * (wd * 2.0));
        assert_eq!(params[1], -3.0 - lr * (wd * -3.0));
        assert_eq!(params[2], 0.5);
        assert!(params[1].abs() < 3.0);
    }

    #[test]
    fn toy_two_class_task_reaches_full_training_accuracy() {
        let mut rng = ChaCha8Rng::seed_from_u64(40);
        let mut sets = Vec::new();
        for i in 0..16 {
            let label = i % 2;
            let offset = if label == 0 { -0.5 } else { 0.5 };
            let rows: Vec<[f64; 6]> = (0..12)
                .map(|_| {
                    [
                        offset + rng.gen_range(-0.2..=0.2),
                        rng.gen_range(-0.2..=0.2),
                        rng.gen_range(-0.2..=0.2),
                        rng.gen_range(0.0..=1.0),
                        rng.gen_range(0.0..=1.0),
                        rng.gen_range(0.0..=1.0),
                    ]
                })
                .collect();
            sets.push(feature_set(rows, Some(label)));
        }
        let refs: Vec<&MotionFeatureSet> = sets.iter().collect();
        let mut model = tiny_pointnet(2, 77);
        let losses = model
            .fit(
                &refs,
                &TrainConfig {
                    epochs: 200,
                    batch_size: 8,
                    ..TrainConfig::default()
                },
            )
            .unwrap();
        assert!(losses.last().unwrap() < &losses[0]);
        let correct = sets
            .iter()
            .filter(|s| model.predict(s).unwrap() == s.label.unwrap())
            .count();
        assert_eq!(correct, sets.len());
    }

    #[test]
    fn training_is_deterministic() {
        let sets: Vec<MotionFeatureSet> = (0..6)
            .map(|i| feature_set(random_rows(10, 60 + i), Some((i % 2) as usize)))
            .collect();
        let refs: Vec<&MotionFeatureSet> = sets.iter().collect();
        let cfg = TrainConfig {
            epochs: 5,
            batch_size: 4,
            ..TrainConfig::default()
        };
        let mut a = tiny_pointnet2(2, 3);
        let mut b = tiny_pointnet2(2, 3);
        a.fit(&refs, &cfg).unwrap();
        b.fit(&refs, &cfg).unwrap();
        assert_eq!(a.params(), b.params());
    }

    #[test]
    fn label_problems_are_reported() {
        let model = tiny_pointnet(2, 8);
        let unlabeled = feature_set(random_rows(4, 7), None);
        assert!(matches!(
            model.loss_and_gradients(&[&unlabeled]),
            Err(Error::MissingLabel { .. })
        ));
        let wild = feature_set(random_rows(4, 7), Some(9));
        assert!(matches!(
            model.loss_and_gradients(&[&wild]),
            Err(Error::LabelOutOfRange { label: 9, classes: 2 })
        ));
        assert!(matches!(
            model.loss_and_gradients(&[]),
            Err(Error::EmptyBatch)
        ));
    }

    #[test]
    fn predict_breaks_ties_toward_lowest_class() {
        assert_eq!(argmax(&[0.1, 0.9, 0.3]), 1);
        assert_eq!(argmax(&[0.5, 0.5, 0.5]), 0);
        let mut model = tiny_pointnet(3, 6);
        model.set_params(vec![0.0; model.param_count()]).unwrap();
        let feats = feature_set(random_rows(5, 5), None);
        assert_eq!(model.predict(&feats).unwrap(), 0);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        assert!(PointModel::new(ModelConfig::pointnet(1)).is_err());

        let mut with_levels = ModelConfig::pointnet(3);
        with_levels.sa_levels = vec![SaLevel {
            centroids: 4,
            radius: 0.5,
            group_size: 4,
            mlp_widths: vec![8],
        }];
        assert!(PointModel::new(with_levels).is_err());

        let mut growing = ModelConfig::pointnet2(3);
        growing.sa_levels[1].centroids = growing.sa_levels[0].centroids + 1;
        assert!(PointModel::new(growing).is_err());

        let mut empty_mlp = ModelConfig::pointnet2(3);
        empty_mlp.sa_levels[0].mlp_widths.clear();
        assert!(PointModel::new(empty_mlp).is_err());

        let mut no_global = ModelConfig::pointnet(3);
        no_global.global_widths.clear();
        assert!(PointModel::new(no_global).is_err());
    }

    #[test]
    fn too_few_points_for_sampling_is_an_error() {
        let model = tiny_pointnet2(2, 4);
        let feats = feature_set(random_rows(2, 9), Some(0));
        assert!(matches!(
            model.forward(&feats),
            Err(Error::SampleSize { .. })
        ));
    }
}
