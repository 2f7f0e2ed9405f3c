//! Writes a complete synthetic depth corpus to disk: onset/apex PGM pairs
//! for every subject and motion class, plus a manifest describing them.
//!
//! Run with `cargo run --example generate_corpus [output_dir]`.

use std::path::PathBuf;

use depthmer::synth::{generate_corpus, SyntheticSpec};

fn main() -> depthmer::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("depthmer_corpus"));

    let spec = SyntheticSpec {
        subjects: 4,
        repetitions: 2,
        ..SyntheticSpec::default()
    };
    std::fs::create_dir_all(&out).expect("output directory");
    let manifest = generate_corpus(&spec, &out)?;

    println!(
        "wrote {} samples across {} classes to {}",
        manifest.samples.len(),
        manifest.class_vocabulary.len(),
        out.display()
    );
    for entry in manifest.samples.iter().take(4) {
        println!(
            "  {}  subject {}  class {:?}",
            entry.sample_id,
            entry.subject_id,
            entry.label(depthmer::io::manifest::LabelKind::Emotion)
        );
    }
    println!("  ...");
    println!("manifest: {}", out.join("manifest.toml").display());
    Ok(())
}
