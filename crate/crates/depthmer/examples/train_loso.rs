//! Leave-one-subject-out evaluation on a generated corpus: every subject is
//! held out once, a fresh classifier is trained on the rest, and the pooled
//! confusion matrix yields unweighted F1 and recall.
//!
//! Run with `cargo run --release --example train_loso`. Release mode is
//! worth it here; training runs one model per subject.

use depthmer::eval::run_loso;
use depthmer::io::manifest::LabelKind;
use depthmer::motion::PipelineConfig;
use depthmer::net::{ModelConfig, TrainConfig};
use depthmer::pipeline::ExtractionOptions;
use depthmer::synth::{generate_corpus, SyntheticSpec};

fn main() -> depthmer::Result<()> {
    let dir = tempfile::tempdir().expect("scratch directory");
    let spec = SyntheticSpec {
        subjects: 4,
        repetitions: 2,
        frame_width: 224,
        frame_height: 224,
        ..SyntheticSpec::default()
    };
    println!(
        "generating {} subjects x {} classes x {} repetitions...",
        spec.subjects,
        spec.classes.len(),
        spec.repetitions
    );
    let manifest = generate_corpus(&spec, dir.path())?;

    let config = PipelineConfig {
        k: 512,
        ..PipelineConfig::default()
    };
    let opts = ExtractionOptions::new(config, LabelKind::Emotion);
    let model = ModelConfig::pointnet2_lite(manifest.class_vocabulary.len());
    let train = TrainConfig {
        epochs: 30,
        batch_size: 6,
        ..TrainConfig::default()
    };

    let report = run_loso(&manifest, &opts, &model, &train)?;
    println!("\nUF1 {:.4}  UAR {:.4}", report.uf1, report.uar);
    for (name, f1) in manifest.class_vocabulary.iter().zip(&report.per_class_f1) {
        println!("  {name:<16} f1 {f1:.4}");
    }
    for fold in &report.per_fold {
        println!(
            "  held out {:<12} accuracy {:.4}",
            fold.subject_id,
            fold.matrix.accuracy()
        );
    }
    Ok(())
}
