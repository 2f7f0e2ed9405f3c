//! Command line front end.
//!
//! Six subcommands wire the library together for batch use: `extract`,
//! `loso`, `cross`, `ablate`, `synth`, and `export-ply`. Every run writes
//! its outputs under one directory and embeds a provenance block (resolved
//! configs plus seeds plus tool version) sufficient to reproduce the run.
//! No timestamps appear in any output, so identical seeds produce
//! byte-identical files.
//!
//! Exit codes: 0 on success, 1 when any sample failed or data was bad,
//! 2 for configuration and usage errors.
//!
//! The feature cache directory resolves in order: `--cache-dir`, the
//! `DEPTHMER_CACHE_DIR` environment variable, then `<out>/cache`;
//! `--no-cache` disables caching. Seeds are capped at 2^63 - 1 so they
//! survive the TOML round trip in reports.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::eval::{cross_corpus_eval, run_loso, run_loso_with_models, MetricsReport};
use crate::io::cache::FeatureCache;
use crate::io::checkpoint::write_checkpoint;
use crate::io::manifest::{load_manifest, LabelKind, Manifest};
use crate::io::ply::write_ply;
use crate::motion::{MotionFeatureSet, NormalizationMode, PipelineConfig, Selection};
use crate::net::{ModelConfig, TrainConfig};
use crate::pipeline::{extract_sample, ExtractionOptions};
use crate::synth::{generate_corpus, SyntheticSpec};

const CACHE_ENV: &str = "DEPTHMER_CACHE_DIR";
const MAX_SEED: u64 = i64::MAX as u64;

#[derive(Parser)]
#[command(
    name = "depthmer",
    version,
    about = "Depth-map micro-expression pipeline: motion features, point-set training, evaluation"
)]
struct Cli {
    /// Worker threads for extraction and fold evaluation (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Extract motion features for every manifest sample into the cache.
    Extract {
        #[arg(long)]
        manifest: PathBuf,
        /// Output directory for the summary and the default cache location.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        pipeline: PipelineFlags,
    },
    /// Leave-one-subject-out evaluation with one fresh model per fold.
    Loso {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        pipeline: PipelineFlags,
        #[command(flatten)]
        model: ModelFlags,
        #[command(flatten)]
        train: TrainFlags,
        /// Write each fold's trained model under <out>/checkpoints.
        #[arg(long)]
        save_checkpoints: bool,
    },
    /// Train on one corpus and evaluate on another.
    Cross {
        #[arg(long)]
        train_manifest: PathBuf,
        #[arg(long)]
        test_manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        pipeline: PipelineFlags,
        #[command(flatten)]
        model: ModelFlags,
        #[command(flatten)]
        train: TrainFlags,
    },
    /// Grid of LOSO runs over point selections and cloud sizes.
    Ablate {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        pipeline: PipelineFlags,
        #[command(flatten)]
        model: ModelFlags,
        #[command(flatten)]
        train: TrainFlags,
        /// Selection strategies to sweep.
        #[arg(long, value_delimiter = ',', default_value = "sorted,random")]
        selections: Vec<Selection>,
        /// Cloud sizes to sweep.
        #[arg(long, value_delimiter = ',', default_value = "1024,2048,4096")]
        k_values: Vec<usize>,
    },
    /// Generate a synthetic depth corpus with ground-truth motion classes.
    Synth {
        #[arg(long)]
        out: PathBuf,
        /// Full generator spec TOML; flags below override its fields.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        subjects: Option<usize>,
        #[arg(long)]
        repetitions: Option<usize>,
        #[arg(long)]
        noise_sigma: Option<f64>,
        #[arg(long)]
        frame_width: Option<usize>,
        #[arg(long)]
        frame_height: Option<usize>,
        #[arg(long)]
        base_depth: Option<f64>,
        /// Corpus tag used as the sample id prefix.
        #[arg(long)]
        tag: Option<String>,
        #[arg(long, value_parser = clap::value_parser!(u64).range(..=MAX_SEED))]
        rng_seed: Option<u64>,
        /// Scale every class amplitude, e.g. 2.5 for a macro-motion corpus.
        #[arg(long)]
        amplify: Option<f64>,
    },
    /// Export one sample's motion features as a binary PLY point cloud.
    ExportPly {
        #[arg(long)]
        manifest: PathBuf,
        /// Sample id to export.
        #[arg(long)]
        sample: String,
        /// Output PLY file path.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        pipeline: PipelineFlags,
    },
}

/// Extraction settings; names mirror the pipeline config fields.
#[derive(Args)]
struct PipelineFlags {
    /// Points kept per sample.
    #[arg(long, default_value_t = 2048)]
    k: usize,
    /// Point selection: sorted | random.
    #[arg(long, default_value = "sorted")]
    selection: Selection,
    /// Background cutoff as a multiple of the mean centroid distance.
    #[arg(long, default_value_t = 1.5)]
    filter_factor: f64,
    /// Recenter selected positions into the unit ball.
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    center_positions: bool,
    /// Percentile above which displacement amplitudes are dropped.
    #[arg(long, default_value_t = 99.5)]
    amplitude_cap_percentile: f64,
    /// Disable the amplitude cap.
    #[arg(long)]
    no_amplitude_cap: bool,
    /// Channel scaling: observed | fixedrange.
    #[arg(long, default_value = "observed")]
    normalization: NormalizationMode,
    /// Base seed for random point selection.
    #[arg(long, alias = "seed", default_value_t = 0, value_parser = clap::value_parser!(u64).range(..=MAX_SEED))]
    rng_seed: u64,
    /// Label column: emotion | objective.
    #[arg(long, default_value = "emotion")]
    label_kind: LabelKind,
    /// Keep only the first N vocabulary classes and their samples.
    #[arg(long)]
    classes: Option<usize>,
    /// Feature cache directory.
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    /// Disable the feature cache.
    #[arg(long)]
    no_cache: bool,
}

impl PipelineFlags {
    fn config(&self) -> PipelineConfig {
        PipelineConfig {
            k: self.k,
            selection: self.selection,
            filter_factor: self.filter_factor,
            center_positions: self.center_positions,
            amplitude_cap_percentile: if self.no_amplitude_cap {
                None
            } else {
                Some(self.amplitude_cap_percentile)
            },
            normalization: self.normalization,
            rng_seed: self.rng_seed,
        }
    }

    fn cache(&self, out: &Path) -> Result<Option<FeatureCache>> {
        if self.no_cache {
            return Ok(None);
        }
        let dir = self
            .cache_dir
            .clone()
            .or_else(|| std::env::var_os(CACHE_ENV).map(PathBuf::from))
            .unwrap_or_else(|| out.join("cache"));
        Ok(Some(FeatureCache::open(dir)?))
    }

    fn options(&self, out: &Path) -> Result<ExtractionOptions> {
        let mut opts = ExtractionOptions::new(self.config(), self.label_kind);
        opts.cache = self.cache(out)?;
        Ok(opts)
    }

    /// Loads the manifest and applies the class restriction.
    fn manifest(&self, path: &Path) -> Result<Manifest> {
        let manifest = load_manifest(path)?;
        match self.classes {
            Some(n) => manifest.restrict_classes(n, self.label_kind),
            None => Ok(manifest),
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModelPreset {
    Pointnet,
    Pointnet2,
    Pointnet2Lite,
}

#[derive(Args)]
struct ModelFlags {
    /// Network preset; pointnet2-lite fits single-core training budgets.
    #[arg(long, value_enum, default_value_t = ModelPreset::Pointnet2)]
    model: ModelPreset,
    /// Full model config TOML; overrides the preset except class count.
    #[arg(long)]
    model_config: Option<PathBuf>,
    /// Parameter initialization seed.
    #[arg(long, value_parser = clap::value_parser!(u64).range(..=MAX_SEED))]
    model_seed: Option<u64>,
}

impl ModelFlags {
    fn config(&self, class_count: usize) -> Result<ModelConfig> {
        let mut cfg = match &self.model_config {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(Error::file(path))?;
                let mut cfg: ModelConfig = toml::from_str(&text)
                    .map_err(|e| Error::InvalidConfig(format!("model config: {e}")))?;
                cfg.class_count = class_count;
                cfg
            }
            None => match self.model {
                ModelPreset::Pointnet => ModelConfig::pointnet(class_count),
                ModelPreset::Pointnet2 => ModelConfig::pointnet2(class_count),
                ModelPreset::Pointnet2Lite => ModelConfig::pointnet2_lite(class_count),
            },
        };
        if let Some(seed) = self.model_seed {
            cfg.rng_seed = seed;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct TrainFlags {
    #[arg(long, default_value_t = 0.001)]
    learning_rate: f64,
    #[arg(long, default_value_t = 0.0001)]
    weight_decay: f64,
    #[arg(long, default_value_t = 24)]
    batch_size: usize,
    #[arg(long, default_value_t = 60)]
    epochs: usize,
    /// Minibatch shuffle seed.
    #[arg(long, default_value_t = 0, value_parser = clap::value_parser!(u64).range(..=MAX_SEED))]
    train_seed: u64,
}

impl TrainFlags {
    fn config(&self) -> Result<TrainConfig> {
        let cfg = TrainConfig {
            learning_rate: self.learning_rate,
            weight_decay: self.weight_decay,
            batch_size: self.batch_size,
            epochs: self.epochs,
            rng_seed: self.train_seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Everything needed to reproduce a run, embedded in each output file.
#[derive(Serialize)]
struct Provenance {
    tool: &'static str,
    version: &'static str,
    command: String,
    manifests: Vec<String>,
    label_kind: String,
    classes: Option<usize>,
    pipeline: PipelineConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    model: Option<ModelConfig>,
    #[serde(skip_serializing_if = "Option::is_none")]
    train: Option<TrainConfig>,
}

impl Provenance {
    fn new(command: &str, manifests: &[&Path], flags: &PipelineFlags) -> Provenance {
        Provenance {
            tool: "depthmer",
            version: env!("CARGO_PKG_VERSION"),
            command: command.to_string(),
            manifests: manifests.iter().map(|p| p.display().to_string()).collect(),
            label_kind: flags.label_kind.to_string(),
            classes: flags.classes,
            pipeline: flags.config(),
            model: None,
            train: None,
        }
    }

    fn with_training(mut self, model: &ModelConfig, train: &TrainConfig) -> Provenance {
        self.model = Some(model.clone());
        self.train = Some(train.clone());
        self
    }

    fn text(&self) -> String {
        let mut s = format!(
            "tool {} {} command {}\nmanifests: {}\nlabel kind {}, classes {}\n",
            self.tool,
            self.version,
            self.command,
            self.manifests.join(", "),
            self.label_kind,
            self.classes.map_or("all".to_string(), |n| n.to_string()),
        );
        let p = &self.pipeline;
        let cap = p
            .amplitude_cap_percentile
            .map_or("off".to_string(), |v| v.to_string());
        let _ = writeln!(
            s,
            "pipeline: k {} selection {} filter-factor {} center {} cap {} normalization {} seed {}",
            p.k, p.selection, p.filter_factor, p.center_positions, cap, p.normalization, p.rng_seed
        );
        if let Some(m) = &self.model {
            let _ = writeln!(
                s,
                "model: {} with {} abstraction levels, {} classes, seed {}",
                m.variant,
                m.sa_levels.len(),
                m.class_count,
                m.rng_seed
            );
        }
        if let Some(t) = &self.train {
            let _ = writeln!(
                s,
                "train: lr {} decay {} batch {} epochs {} seed {}",
                t.learning_rate, t.weight_decay, t.batch_size, t.epochs, t.rng_seed
            );
        }
        s
    }
}

pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        // clap handles help/version and usage errors with its own codes.
        Err(e) => e.exit(),
    };
    if let Some(workers) = cli.workers {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(workers.max(1))
            .build_global();
    }
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::InvalidConfig(_) | Error::InvalidSpec(_) | Error::ManifestFormat(_) => 2,
                _ => 1,
            }
        }
    }
}

fn dispatch(command: Command) -> Result<i32> {
    match command {
        Command::Extract {
            manifest,
            out,
            pipeline,
        } => cmd_extract(&manifest, &out, &pipeline),
        Command::Loso {
            manifest,
            out,
            pipeline,
            model,
            train,
            save_checkpoints,
        } => cmd_loso(&manifest, &out, &pipeline, &model, &train, save_checkpoints),
        Command::Cross {
            train_manifest,
            test_manifest,
            out,
            pipeline,
            model,
            train,
        } => cmd_cross(&train_manifest, &test_manifest, &out, &pipeline, &model, &train),
        Command::Ablate {
            manifest,
            out,
            pipeline,
            model,
            train,
            selections,
            k_values,
        } => cmd_ablate(&manifest, &out, &pipeline, &model, &train, &selections, &k_values),
        Command::Synth {
            out,
            spec,
            subjects,
            repetitions,
            noise_sigma,
            frame_width,
            frame_height,
            base_depth,
            tag,
            rng_seed,
            amplify,
        } => cmd_synth(
            &out,
            spec.as_deref(),
            subjects,
            repetitions,
            noise_sigma,
            frame_width,
            frame_height,
            base_depth,
            tag,
            rng_seed,
            amplify,
        ),
        Command::ExportPly {
            manifest,
            sample,
            out,
            pipeline,
        } => cmd_export_ply(&manifest, &sample, &out, &pipeline),
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(Error::file(dir))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(Error::file(path))
}

fn toml_doc<T: Serialize>(doc: &T) -> Result<String> {
    toml::to_string_pretty(doc)
        .map_err(|e| Error::InvalidConfig(format!("report does not serialize: {e}")))
}

#[derive(Serialize)]
struct SampleSummary {
    sample_id: String,
    points: usize,
    distinct_pixels: usize,
    mean_amplitude: f64,
}

#[derive(Serialize)]
struct ExtractDoc {
    provenance: Provenance,
    samples: Vec<SampleSummary>,
    failures: Vec<FailureRow>,
}

#[derive(Serialize)]
struct FailureRow {
    sample_id: String,
    error: String,
}

fn summarize(sample_id: &str, set: &MotionFeatureSet) -> SampleSummary {
    let distinct: BTreeSet<[u32; 2]> = set.pixel_index.iter().copied().collect();
    let mean_amplitude = if set.features.is_empty() {
        0.0
    } else {
        set.features.iter().map(|row| row[3]).sum::<f64>() / set.features.len() as f64
    };
    SampleSummary {
        sample_id: sample_id.to_string(),
        points: set.features.len(),
        distinct_pixels: distinct.len(),
        mean_amplitude,
    }
}

fn cmd_extract(manifest_path: &Path, out: &Path, flags: &PipelineFlags) -> Result<i32> {
    if flags.no_cache {
        return Err(Error::InvalidConfig(
            "extract writes the feature cache; --no-cache contradicts it".into(),
        ));
    }
    ensure_dir(out)?;
    let manifest = flags.manifest(manifest_path)?;
    let opts = flags.options(out)?;

    let results: Vec<(String, Result<MotionFeatureSet>)> = manifest
        .samples
        .par_iter()
        .map(|entry| {
            (
                entry.sample_id.clone(),
                extract_sample(&manifest, entry, &opts),
            )
        })
        .collect();

    let mut samples = Vec::new();
    let mut failures = Vec::new();
    for (sample_id, result) in results {
        match result {
            Ok(set) => samples.push(summarize(&sample_id, &set)),
            Err(e) => failures.push(FailureRow {
                sample_id,
                error: e.to_string(),
            }),
        }
    }
    samples.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
    failures.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));

    let provenance = Provenance::new("extract", &[manifest_path], flags);
    let mut text = provenance.text();
    let _ = writeln!(text, "\nextracted {} of {} samples", samples.len(), manifest.samples.len());
    let _ = writeln!(text, "{:<32} {:>8} {:>10} {:>16}", "sample", "points", "distinct", "mean amplitude");
    for s in &samples {
        let _ = writeln!(
            text,
            "{:<32} {:>8} {:>10} {:>16.6}",
            s.sample_id, s.points, s.distinct_pixels, s.mean_amplitude
        );
    }
    if !failures.is_empty() {
        let _ = writeln!(text, "\nfailures:");
        for f in &failures {
            let _ = writeln!(text, "{:<32} {}", f.sample_id, f.error);
        }
    }
    let failed = !failures.is_empty();
    let doc = ExtractDoc {
        provenance,
        samples,
        failures,
    };
    write_text(&out.join("extract_summary.txt"), &text)?;
    write_text(&out.join("extract_summary.toml"), &toml_doc(&doc)?)?;
    println!("{text}");
    Ok(if failed { 1 } else { 0 })
}

#[derive(Serialize)]
struct ReportDoc {
    provenance: Provenance,
    metrics: MetricsReport,
}

fn report_text(provenance: &Provenance, report: &MetricsReport) -> String {
    let mut s = provenance.text();
    let _ = writeln!(s);
    let _ = writeln!(s, "UF1 {:.6}", report.uf1);
    let _ = writeln!(s, "UAR {:.6}", report.uar);
    let names = report.pooled.class_names();
    for (i, name) in names.iter().enumerate() {
        let _ = writeln!(
            s,
            "class {:<24} f1 {:.6} recall {:.6}",
            name, report.per_class_f1[i], report.per_class_recall[i]
        );
    }
    let width = names.iter().map(|n| n.len()).max().unwrap_or(4).max(6) + 2;
    let _ = writeln!(s, "\npooled confusion matrix (rows true, columns predicted)");
    let mut header = format!("{:w$}", "", w = width);
    for name in names {
        let _ = write!(header, "{name:>w$}", w = width);
    }
    let _ = writeln!(s, "{header}");
    for (t, row) in report.pooled.counts().iter().enumerate() {
        let mut line = format!("{:<w$}", names[t], w = width);
        for &n in row {
            let _ = write!(line, "{n:>w$}", w = width);
        }
        let _ = writeln!(s, "{line}");
    }
    let _ = writeln!(s, "\nper-fold accuracy");
    for fold in &report.per_fold {
        let _ = writeln!(
            s,
            "{:<24} {:>4} samples  accuracy {:.6}",
            fold.subject_id,
            fold.matrix.total(),
            fold.matrix.accuracy()
        );
    }
    if !report.warnings.is_empty() {
        let _ = writeln!(s, "\nwarnings:");
        for w in &report.warnings {
            let _ = writeln!(s, "  - {w}");
        }
    }
    s
}

fn filesystem_name(id: &str) -> String {
    id.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '.' || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

fn cmd_loso(
    manifest_path: &Path,
    out: &Path,
    flags: &PipelineFlags,
    model_flags: &ModelFlags,
    train_flags: &TrainFlags,
    save_checkpoints: bool,
) -> Result<i32> {
    ensure_dir(out)?;
    let manifest = flags.manifest(manifest_path)?;
    let opts = flags.options(out)?;
    let model_cfg = model_flags.config(manifest.class_vocabulary.len())?;
    let train_cfg = train_flags.config()?;

    let (report, models) = run_loso_with_models(&manifest, &opts, &model_cfg, &train_cfg)?;
    if save_checkpoints {
        let dir = out.join("checkpoints");
        ensure_dir(&dir)?;
        for (subject, model) in &models {
            write_checkpoint(&dir.join(format!("{}.dmck", filesystem_name(subject))), model)?;
        }
    }

    let provenance =
        Provenance::new("loso", &[manifest_path], flags).with_training(&model_cfg, &train_cfg);
    let text = report_text(&provenance, &report);
    write_text(&out.join("report.txt"), &text)?;
    let doc = ReportDoc {
        provenance,
        metrics: report,
    };
    write_text(&out.join("report.toml"), &toml_doc(&doc)?)?;
    println!("{text}");
    Ok(0)
}

fn cmd_cross(
    train_path: &Path,
    test_path: &Path,
    out: &Path,
    flags: &PipelineFlags,
    model_flags: &ModelFlags,
    train_flags: &TrainFlags,
) -> Result<i32> {
    ensure_dir(out)?;
    let train_manifest = flags.manifest(train_path)?;
    let test_manifest = flags.manifest(test_path)?;
    let opts = flags.options(out)?;
    let model_cfg = model_flags.config(train_manifest.class_vocabulary.len())?;
    let train_cfg = train_flags.config()?;

    let report = cross_corpus_eval(&train_manifest, &test_manifest, &opts, &model_cfg, &train_cfg)?;
    let provenance = Provenance::new("cross", &[train_path, test_path], flags)
        .with_training(&model_cfg, &train_cfg);
    let text = report_text(&provenance, &report);
    write_text(&out.join("report.txt"), &text)?;
    let doc = ReportDoc {
        provenance,
        metrics: report,
    };
    write_text(&out.join("report.toml"), &toml_doc(&doc)?)?;
    println!("{text}");
    Ok(0)
}

#[derive(Serialize)]
struct AblationCell {
    selection: Selection,
    k: usize,
    uf1: f64,
    uar: f64,
    rng_seed: u64,
    model_seed: u64,
    train_seed: u64,
}

#[derive(Serialize)]
struct AblationDoc {
    provenance: Provenance,
    cells: Vec<AblationCell>,
}

fn cmd_ablate(
    manifest_path: &Path,
    out: &Path,
    flags: &PipelineFlags,
    model_flags: &ModelFlags,
    train_flags: &TrainFlags,
    selections: &[Selection],
    k_values: &[usize],
) -> Result<i32> {
    if selections.is_empty() || k_values.is_empty() {
        return Err(Error::InvalidConfig("ablation grid is empty".into()));
    }
    ensure_dir(out)?;
    let manifest = flags.manifest(manifest_path)?;
    let model_cfg = model_flags.config(manifest.class_vocabulary.len())?;
    let train_cfg = train_flags.config()?;

    let mut cells = Vec::new();
    for &selection in selections {
        for &k in k_values {
            let mut opts = flags.options(out)?;
            opts.config.selection = selection;
            opts.config.k = k;
            let report = run_loso(&manifest, &opts, &model_cfg, &train_cfg)?;
            cells.push(AblationCell {
                selection,
                k,
                uf1: report.uf1,
                uar: report.uar,
                rng_seed: flags.rng_seed,
                model_seed: model_cfg.rng_seed,
                train_seed: train_cfg.rng_seed,
            });
        }
    }

    let provenance =
        Provenance::new("ablate", &[manifest_path], flags).with_training(&model_cfg, &train_cfg);
    let mut text = provenance.text();
    let _ = writeln!(text);
    let _ = writeln!(
        text,
        "{:<10} {:>6} {:>10} {:>10} {:>12} {:>12} {:>12}",
        "selection", "k", "UF1", "UAR", "rng seed", "model seed", "train seed"
    );
    for c in &cells {
        let _ = writeln!(
            text,
            "{:<10} {:>6} {:>10.6} {:>10.6} {:>12} {:>12} {:>12}",
            c.selection.to_string(),
            c.k,
            c.uf1,
            c.uar,
            c.rng_seed,
            c.model_seed,
            c.train_seed
        );
    }
    write_text(&out.join("ablation.txt"), &text)?;
    let doc = AblationDoc { provenance, cells };
    write_text(&out.join("ablation.toml"), &toml_doc(&doc)?)?;
    println!("{text}");
    Ok(0)
}

#[derive(Serialize)]
struct SynthDoc {
    tool: &'static str,
    version: &'static str,
    command: String,
    spec: SyntheticSpec,
    samples_written: usize,
}

#[allow(clippy::too_many_arguments)]
fn cmd_synth(
    out: &Path,
    spec_path: Option<&Path>,
    subjects: Option<usize>,
    repetitions: Option<usize>,
    noise_sigma: Option<f64>,
    frame_width: Option<usize>,
    frame_height: Option<usize>,
    base_depth: Option<f64>,
    tag: Option<String>,
    rng_seed: Option<u64>,
    amplify: Option<f64>,
) -> Result<i32> {
    let mut spec = match spec_path {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(Error::file(path))?;
            toml::from_str::<SyntheticSpec>(&text)
                .map_err(|e| Error::InvalidSpec(format!("generator spec: {e}")))?
        }
        None => SyntheticSpec::default(),
    };
    if let Some(v) = subjects {
        spec.subjects = v;
    }
    if let Some(v) = repetitions {
        spec.repetitions = v;
    }
    if let Some(v) = noise_sigma {
        spec.noise_sigma = v;
    }
    if let Some(v) = frame_width {
        spec.frame_width = v;
    }
    if let Some(v) = frame_height {
        spec.frame_height = v;
    }
    if let Some(v) = base_depth {
        spec.base_depth = v;
    }
    if let Some(v) = tag {
        spec.corpus_tag = v;
    }
    if let Some(v) = rng_seed {
        spec.rng_seed = v;
    }
    if let Some(factor) = amplify {
        let tag = spec.corpus_tag.clone();
        spec = spec.amplified(factor, &tag)?;
    }

    ensure_dir(out)?;
    let manifest = generate_corpus(&spec, out)?;
    let doc = SynthDoc {
        tool: "depthmer",
        version: env!("CARGO_PKG_VERSION"),
        command: "synth".to_string(),
        spec,
        samples_written: manifest.samples.len(),
    };
    write_text(&out.join("synth.toml"), &toml_doc(&doc)?)?;
    println!(
        "wrote {} samples ({} subjects x {} classes x {} repetitions) to {}",
        manifest.samples.len(),
        doc.spec.subjects,
        doc.spec.classes.len(),
        doc.spec.repetitions,
        out.display()
    );
    Ok(0)
}

fn cmd_export_ply(
    manifest_path: &Path,
    sample: &str,
    out: &Path,
    flags: &PipelineFlags,
) -> Result<i32> {
    let manifest = flags.manifest(manifest_path)?;
    let entry = manifest
        .samples
        .iter()
        .find(|e| e.sample_id == sample)
        .ok_or_else(|| {
            Error::InvalidConfig(format!("sample {sample:?} is not in the manifest"))
        })?;
    // The output here is a file, so only an explicit cache location is used.
    let mut opts = ExtractionOptions::new(flags.config(), flags.label_kind);
    if !flags.no_cache {
        if let Some(dir) = flags
            .cache_dir
            .clone()
            .or_else(|| std::env::var_os(CACHE_ENV).map(PathBuf::from))
        {
            opts.cache = Some(FeatureCache::open(dir)?);
        }
    }
    let set = extract_sample(&manifest, entry, &opts)?;
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            ensure_dir(parent)?;
        }
    }
    write_ply(out, &set)?;
    println!("wrote {} points to {}", set.features.len(), out.display());
    Ok(0)
}
