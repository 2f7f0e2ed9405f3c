//! Evaluation protocols and metrics.
//!
//! Leave-one-subject-out runs train one fresh model per fold and pool every
//! fold's predictions into a single confusion matrix before computing UF1
//! (unweighted mean of per-class F1) and UAR (unweighted mean of per-class
//! recall). Per-fold matrices are kept alongside for diagnosis; the pooled
//! matrix always equals their elementwise sum. The cross-corpus protocol is
//! one fit on the training corpus and one evaluation pass over the test
//! corpus, with no fold structure.
//!
//! Folds are independent and run in parallel, each with its own model
//! initialized from the same seed.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::manifest::Manifest;
use crate::motion::MotionFeatureSet;
use crate::net::{ModelConfig, PointModel, TrainConfig};
use crate::pipeline::{extract_all, ExtractedSample, ExtractionOptions};

/// Prediction counts; rows index the true class, columns the predicted one.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    class_names: Vec<String>,
    counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(class_names: Vec<String>) -> Result<Self> {
        let c = class_names.len();
        if c < 2 {
            return Err(Error::InvalidConfig(format!(
                "confusion matrix needs at least two classes, got {c}"
            )));
        }
        Ok(ConfusionMatrix {
            class_names,
            counts: vec![vec![0; c]; c],
        })
    }

    pub fn class_count(&self) -> usize {
        self.class_names.len()
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn record(&mut self, truth: usize, predicted: usize) -> Result<()> {
        let c = self.class_count();
        for label in [truth, predicted] {
            if label >= c {
                return Err(Error::LabelOutOfRange { label, classes: c });
            }
        }
        self.counts[truth][predicted] += 1;
        Ok(())
    }

    /// Elementwise accumulation; both matrices must share the vocabulary.
    pub fn absorb(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if self.class_names != other.class_names {
            return Err(Error::VocabularyMismatch);
        }
        for (mine, theirs) in self.counts.iter_mut().zip(&other.counts) {
            for (m, t) in mine.iter_mut().zip(theirs) {
                *m += t;
            }
        }
        Ok(())
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn true_positives(&self, class: usize) -> u64 {
        self.counts[class][class]
    }

    pub fn false_positives(&self, class: usize) -> u64 {
        self.counts.iter().map(|row| row[class]).sum::<u64>() - self.counts[class][class]
    }

    pub fn false_negatives(&self, class: usize) -> u64 {
        self.counts[class].iter().sum::<u64>() - self.counts[class][class]
    }

    /// True-class sample count for one row.
    pub fn class_total(&self, class: usize) -> u64 {
        self.counts[class].iter().sum()
    }

    /// Overall fraction of correct predictions.
    pub fn accuracy(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            return 0.0;
        }
        let diag: u64 = (0..self.class_count()).map(|c| self.counts[c][c]).sum();
        diag as f64 / total as f64
    }
}

/// Per-class F1 scores. A class with no true samples, no predictions, and
/// no confusions scores 0 rather than dividing by zero.
pub fn per_class_f1(cm: &ConfusionMatrix) -> Vec<f64> {
    (0..cm.class_count())
        .map(|c| {
            let tp = cm.true_positives(c) as f64;
            let denom = 2.0 * tp + cm.false_positives(c) as f64 + cm.false_negatives(c) as f64;
            if denom == 0.0 {
                0.0
            } else {
                2.0 * tp / denom
            }
        })
        .collect()
}

/// Unweighted mean of per-class F1.
pub fn uf1(cm: &ConfusionMatrix) -> f64 {
    let scores = per_class_f1(cm);
    scores.iter().sum::<f64>() / scores.len() as f64
}

/// Per-class recalls; a class that never occurs as truth has no recall.
pub fn per_class_recall(cm: &ConfusionMatrix) -> Result<Vec<f64>> {
    (0..cm.class_count())
        .map(|c| {
            let n = cm.class_total(c);
            if n == 0 {
                return Err(Error::UndefinedClass {
                    class: cm.class_names[c].clone(),
                });
            }
            Ok(cm.true_positives(c) as f64 / n as f64)
        })
        .collect()
}

/// Unweighted average recall.
pub fn uar(cm: &ConfusionMatrix) -> Result<f64> {
    let recalls = per_class_recall(cm)?;
    Ok(recalls.iter().sum::<f64>() / recalls.len() as f64)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FoldOutcome {
    pub subject_id: String,
    pub matrix: ConfusionMatrix,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MetricsReport {
    pub uf1: f64,
    pub uar: f64,
    pub per_class_f1: Vec<f64>,
    pub per_class_recall: Vec<f64>,
    pub pooled: ConfusionMatrix,
    pub per_fold: Vec<FoldOutcome>,
    pub warnings: Vec<String>,
}

impl MetricsReport {
    fn assemble(
        pooled: ConfusionMatrix,
        per_fold: Vec<FoldOutcome>,
        mut warnings: Vec<String>,
    ) -> Result<MetricsReport> {
        let f1 = per_class_f1(&pooled);
        for (c, score) in f1.iter().enumerate() {
            let empty = pooled.true_positives(c) == 0
                && pooled.false_positives(c) == 0
                && pooled.false_negatives(c) == 0;
            if empty {
                warnings.push(format!(
                    "class {} has no samples or predictions; its F1 counts as {score}",
                    pooled.class_names[c]
                ));
            }
        }
        let recall = per_class_recall(&pooled)?;
        Ok(MetricsReport {
            uf1: f1.iter().sum::<f64>() / f1.len() as f64,
            uar: recall.iter().sum::<f64>() / recall.len() as f64,
            per_class_f1: f1,
            per_class_recall: recall,
            pooled,
            per_fold,
            warnings,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub held_out_subject: String,
    pub train_sample_ids: Vec<String>,
    pub test_sample_ids: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub folds: Vec<Fold>,
    pub warnings: Vec<String>,
}

/// One fold per distinct subject, ordered by subject id. Sample ids within
/// each fold are sorted, so the plan is independent of manifest row order.
pub fn loso_splits(manifest: &Manifest) -> Result<FoldPlan> {
    if manifest.samples.is_empty() {
        return Err(Error::InvalidConfig("manifest contains no samples".into()));
    }
    let mut by_subject: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for entry in &manifest.samples {
        by_subject
            .entry(entry.subject_id.as_str())
            .or_default()
            .push(entry.sample_id.as_str());
    }
    let mut warnings = Vec::new();
    if by_subject.len() == 1 {
        warnings.push(format!(
            "manifest has a single subject {}; its fold trains on nothing",
            by_subject.keys().next().unwrap()
        ));
    }
    let folds = by_subject
        .keys()
        .map(|&held| {
            let mut train = Vec::new();
            let mut test = Vec::new();
            for (&subject, ids) in &by_subject {
                let bucket = if subject == held { &mut test } else { &mut train };
                bucket.extend(ids.iter().map(|s| s.to_string()));
            }
            train.sort_unstable();
            test.sort_unstable();
            Fold {
                held_out_subject: held.to_string(),
                train_sample_ids: train,
                test_sample_ids: test,
            }
        })
        .collect();
    Ok(FoldPlan { folds, warnings })
}

fn indexed<'a>(
    samples: &'a [ExtractedSample],
) -> BTreeMap<&'a str, &'a MotionFeatureSet> {
    samples
        .iter()
        .map(|s| (s.sample_id.as_str(), &s.features))
        .collect()
}

fn require_labels(samples: &[ExtractedSample]) -> Result<()> {
    for s in samples {
        if s.features.label.is_none() {
            return Err(Error::MissingLabel {
                sample_id: s.sample_id.clone(),
            });
        }
    }
    Ok(())
}

fn score_fold(
    fold: &Fold,
    sets: &BTreeMap<&str, &MotionFeatureSet>,
    manifest: &Manifest,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
) -> Result<(FoldOutcome, PointModel)> {
    let train: Vec<&MotionFeatureSet> = fold
        .train_sample_ids
        .iter()
        .map(|id| *sets.get(id.as_str()).expect("plan ids come from samples"))
        .collect();
    let mut model = PointModel::new(model_cfg.clone())?;
    model.fit(&train, train_cfg)?;
    let mut matrix = ConfusionMatrix::new(manifest.class_vocabulary.clone())?;
    for id in &fold.test_sample_ids {
        let set = sets.get(id.as_str()).expect("plan ids come from samples");
        let truth = set.label.expect("labels checked before folding");
        let predicted = model.predict(set)?;
        matrix.record(truth, predicted)?;
    }
    let outcome = FoldOutcome {
        subject_id: fold.held_out_subject.clone(),
        matrix,
    };
    Ok((outcome, model))
}

/// Full leave-one-subject-out evaluation: extract every sample once, train
/// one model per fold (in parallel), pool the predictions, and compute the
/// metrics. Deterministic for fixed seeds regardless of manifest row order.
pub fn run_loso(
    manifest: &Manifest,
    opts: &ExtractionOptions,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
) -> Result<MetricsReport> {
    Ok(run_loso_with_models(manifest, opts, model_cfg, train_cfg)?.0)
}

/// [`run_loso`] variant that also hands back each fold's trained model,
/// keyed by held-out subject, for checkpointing.
pub fn run_loso_with_models(
    manifest: &Manifest,
    opts: &ExtractionOptions,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
) -> Result<(MetricsReport, Vec<(String, PointModel)>)> {
    model_cfg.validate()?;
    let plan = loso_splits(manifest)?;
    let samples = extract_all(manifest, opts)?;
    require_labels(&samples)?;
    let sets = indexed(&samples);
    let scored: Vec<(FoldOutcome, PointModel)> = plan
        .folds
        .par_iter()
        .map(|fold| score_fold(fold, &sets, manifest, model_cfg, train_cfg))
        .collect::<Result<_>>()?;
    let mut per_fold = Vec::with_capacity(scored.len());
    let mut models = Vec::with_capacity(scored.len());
    for (outcome, model) in scored {
        models.push((outcome.subject_id.clone(), model));
        per_fold.push(outcome);
    }
    let mut pooled = ConfusionMatrix::new(manifest.class_vocabulary.clone())?;
    for fold in &per_fold {
        pooled.absorb(&fold.matrix)?;
    }
    let report = MetricsReport::assemble(pooled, per_fold, plan.warnings)?;
    Ok((report, models))
}

/// Trains once on one corpus and evaluates on another. The two manifests
/// must agree on the class vocabulary, and their sample ids must either be
/// fully disjoint or fully identical; the latter is the degenerate
/// train-equals-test smoke protocol and is flagged in the report.
pub fn cross_corpus_eval(
    train_manifest: &Manifest,
    test_manifest: &Manifest,
    opts: &ExtractionOptions,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
) -> Result<MetricsReport> {
    model_cfg.validate()?;
    if train_manifest.class_vocabulary != test_manifest.class_vocabulary {
        return Err(Error::VocabularyMismatch);
    }
    let train_ids: std::collections::BTreeSet<&str> = train_manifest
        .samples
        .iter()
        .map(|e| e.sample_id.as_str())
        .collect();
    let test_ids: std::collections::BTreeSet<&str> = test_manifest
        .samples
        .iter()
        .map(|e| e.sample_id.as_str())
        .collect();
    let mut warnings = Vec::new();
    if train_ids == test_ids {
        warnings.push(
            "train and test corpora are identical; the report measures training accuracy".into(),
        );
    } else if let Some(shared) = train_ids.intersection(&test_ids).next() {
        return Err(Error::OverlappingSamples {
            sample_id: shared.to_string(),
        });
    }

    let train_samples = extract_all(train_manifest, opts)?;
    require_labels(&train_samples)?;
    let test_samples = extract_all(test_manifest, opts)?;
    require_labels(&test_samples)?;

    let train: Vec<&MotionFeatureSet> = train_samples.iter().map(|s| &s.features).collect();
    let mut model = PointModel::new(model_cfg.clone())?;
    model.fit(&train, train_cfg)?;

    let mut per_subject: BTreeMap<&str, ConfusionMatrix> = BTreeMap::new();
    for sample in &test_samples {
        let truth = sample.features.label.expect("labels checked above");
        let predicted = model.predict(&sample.features)?;
        per_subject
            .entry(sample.features.subject_id.as_str())
            .or_insert(ConfusionMatrix::new(test_manifest.class_vocabulary.clone())?)
            .record(truth, predicted)?;
    }
    let per_fold: Vec<FoldOutcome> = per_subject
        .into_iter()
        .map(|(subject_id, matrix)| FoldOutcome {
            subject_id: subject_id.to_string(),
            matrix,
        })
        .collect();
    let mut pooled = ConfusionMatrix::new(test_manifest.class_vocabulary.clone())?;
    for fold in &per_fold {
        pooled.absorb(&fold.matrix)?;
    }
    MetricsReport::assemble(pooled, per_fold, warnings)
}
