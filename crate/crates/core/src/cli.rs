//! Command-line front end: generate, train, evaluate, extract, baseline.
//!
//! Every run writes a manifest holding its fully resolved configuration.
//! Passing a manifest to `--config` reruns exactly that configuration.

use std::fmt::Write as _;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::baseline::{evaluate_baseline, Lexicon};
use crate::checkpoint;
use crate::data::{
    generate, keep_spans, parse_dataset, split, write_dataset, Attribute, ClassDistribution, DataPoint,
    GeneratorConfig, ATTRIBUTES,
};
use crate::embedding::EmbeddingSource;
use crate::error::{Error, Result};
use crate::metrics::{evaluate, evaluate_predictions, oracle_predictions, EvalReport};
use crate::model::{Model, ModelConfig};
use crate::projections::{ProjectionConfig, ProjectionKind};
use crate::scorers::{ScorerKind, TaScoreConfig};
use crate::training::{train, tune_thresholds, FusedmaxStar, OptimizerConfig, TrainConfig};

pub const SEED_ENV: &str = "SPANATTN_SEED";

#[derive(Parser, Debug)]
#[command(name = "spanattn", version, about = "Span extraction through sparse attention bottlenecks")]
struct Cli {
    /// Rerun the configuration recorded in a manifest file.
    #[arg(long, global = true, value_name = "MANIFEST")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset and split it into train/val/test files.
    Generate(GenerateArgs),
    /// Train a model and write a checkpoint plus per-epoch history.
    Train(TrainArgs),
    /// Score a checkpoint (or the gold-echoing oracle) on a dataset.
    Evaluate(EvalArgs),
    /// Write predicted spans as inline bracket tags plus a JSONL sidecar.
    Extract(ExtractArgs),
    /// Score the phrase-lexicon baseline on a dataset.
    Baseline(BaselineArgs),
}

#[derive(Args, Debug)]
struct GenerateArgs {
    #[arg(long, default_value = "data")]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 2000)]
    n: usize,
    #[arg(long, env = SEED_ENV, default_value_t = 0)]
    seed: u64,
    /// Comma-separated train,val,test fractions.
    #[arg(long, value_delimiter = ',', default_values_t = [0.8, 0.1, 0.1])]
    split_fractions: Vec<f64>,
    /// Keep span labels on only this many training examples.
    #[arg(long)]
    train_span_labels: Option<usize>,
    #[arg(long, default_value_t = 1.0)]
    span_label_fraction: f64,
    #[arg(long, default_value_t = 0.77)]
    multi_medication_fraction: f64,
    /// Comma-separated frequency,route,change label noise rates.
    #[arg(long, value_delimiter = ',', default_values_t = [0.22, 0.36, 0.15])]
    label_noise_rates: Vec<f64>,
    #[arg(long, default_value = "table2")]
    class_distribution: ClassDistribution,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    train: PathBuf,
    /// Validation set used to tune softmax extraction thresholds.
    #[arg(long)]
    val: Option<PathBuf>,
    #[arg(long, default_value = "model.ckpt")]
    out: PathBuf,
    #[arg(long, env = SEED_ENV, default_value_t = 0)]
    seed: u64,

    #[arg(long, default_value = "tascore")]
    scorer: ScorerKind,
    #[arg(long, default_value = "softmax")]
    projection: ProjectionKind,
    #[arg(long, default_value_t = 1.0)]
    temperature: f64,
    #[arg(long, default_value_t = 1.0)]
    tv_weight: f64,
    /// Train with softmax, then switch to fusedmax for the final epochs.
    #[arg(long)]
    fusedmax_star: bool,
    #[arg(long, default_value_t = 0.25)]
    swap_fraction: f64,

    #[arg(long, default_value_t = 30)]
    epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    learning_rate: f64,
    #[arg(long, default_value_t = 1.0)]
    lambda_id: f64,
    #[arg(long, default_value_t = 32)]
    batch_size: usize,
    #[arg(long, default_value = "adam", value_parser = ["adam", "sgd"])]
    optimizer: String,
    #[arg(long, default_value_t = 0.9)]
    beta1: f64,
    #[arg(long, default_value_t = 0.999)]
    beta2: f64,
    #[arg(long, default_value_t = 1e-8)]
    eps: f64,
    #[arg(long, default_value_t = 0.0)]
    momentum: f64,

    /// Precomputed embedding file; replaces the frozen random embedder.
    #[arg(long)]
    embedding_file: Option<PathBuf>,
    #[arg(long, default_value_t = 64)]
    embedding_dim: usize,
    #[arg(long, default_value_t = 0)]
    embedding_seed: u64,
    #[arg(long, default_value_t = 3)]
    embedding_window: usize,
    #[arg(long, default_value_t = 256)]
    max_seq_len: usize,
    #[arg(long, default_value_t = 2)]
    speaker_dim: usize,
    #[arg(long, default_value_t = 32)]
    d_model: usize,
    #[arg(long, default_value_t = 32)]
    ff_hidden: usize,
    #[arg(long, default_value_t = 2)]
    layers: usize,
    #[arg(long, default_value_t = 1)]
    heads: usize,
    #[arg(long, default_value_t = 0.2)]
    dropout: f64,
    #[arg(long, default_value_t = 16)]
    head_hidden: usize,
    #[arg(long, default_value_t = 512)]
    classifier_hidden: usize,
    #[arg(long, default_value_t = 0.2)]
    classifier_dropout: f64,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint path, or `oracle` for a model that echoes the gold labels.
    #[arg(long)]
    model: String,
    /// Evaluate under this projection instead of the one in the checkpoint.
    #[arg(long)]
    projection: Option<ProjectionKind>,
    #[arg(long, default_value = "report.json")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ExtractArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    projection: Option<ProjectionKind>,
    /// Annotated text; the sidecar goes next to it with a `.jsonl` extension.
    #[arg(long, default_value = "extract.txt")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct BaselineArgs {
    #[arg(long)]
    data: PathBuf,
    /// Tab-separated `attribute class phrase` lines; the built-in table otherwise.
    #[arg(long)]
    lexicon: Option<PathBuf>,
    #[arg(long, default_value = "baseline.json")]
    out: PathBuf,
}

/// Fully resolved configuration of one run, as stored in its manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "lowercase", deny_unknown_fields)]
pub enum RunConfig {
    Generate {
        out_dir: PathBuf,
        generator: GeneratorConfig,
        split_fractions: Vec<f64>,
        train_span_labels: Option<usize>,
    },
    Train {
        train: PathBuf,
        val: Option<PathBuf>,
        out: PathBuf,
        model: ModelConfig,
        training: TrainConfig,
    },
    Evaluate {
        data: PathBuf,
        model: String,
        projection: Option<ProjectionKind>,
        out: PathBuf,
    },
    Extract {
        data: PathBuf,
        model: PathBuf,
        projection: Option<ProjectionKind>,
        out: PathBuf,
    },
    Baseline {
        data: PathBuf,
        lexicon: Option<PathBuf>,
        out: PathBuf,
    },
}

impl RunConfig {
    /// Where this run's manifest is written.
    pub fn manifest_path(&self) -> PathBuf {
        match self {
            RunConfig::Generate { out_dir, .. } => out_dir.join("manifest.json"),
            RunConfig::Train { out, .. }
            | RunConfig::Evaluate { out, .. }
            | RunConfig::Extract { out, .. }
            | RunConfig::Baseline { out, .. } => sibling(out, "manifest.json"),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// `dir/name.ckpt` -> `dir/name.ckpt.<suffix>`.
fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".");
    s.push(suffix);
    PathBuf::from(s)
}

fn resolve(cmd: Command) -> Result<RunConfig> {
    Ok(match cmd {
        Command::Generate(a) => {
            let noise: [f64; 3] = a
                .label_noise_rates
                .as_slice()
                .try_into()
                .map_err(|_| Error::Invalid("--label-noise-rates needs exactly 3 values".into()))?;
            RunConfig::Generate {
                out_dir: a.out_dir,
                generator: GeneratorConfig {
                    n_examples: a.n,
                    span_label_fraction: a.span_label_fraction,
                    multi_medication_fraction: a.multi_medication_fraction,
                    label_noise_rates: noise,
                    class_distribution: a.class_distribution,
                    seed: a.seed,
                },
                split_fractions: a.split_fractions,
                train_span_labels: a.train_span_labels,
            }
        }
        Command::Train(a) => {
            let embedding = match a.embedding_file {
                Some(path) => EmbeddingSource::PrecomputedFile { path },
                None => EmbeddingSource::FrozenRandom {
                    dim: a.embedding_dim,
                    seed: a.embedding_seed,
                    window: a.embedding_window,
                },
            };
            let optimizer = match a.optimizer.as_str() {
                "sgd" => OptimizerConfig::Sgd { momentum: a.momentum },
                _ => OptimizerConfig::Adam {
                    beta1: a.beta1,
                    beta2: a.beta2,
                    eps: a.eps,
                },
            };
            RunConfig::Train {
                train: a.train,
                val: a.val,
                out: a.out,
                model: ModelConfig {
                    embedding,
                    max_seq_len: a.max_seq_len,
                    speaker_dim: a.speaker_dim,
                    scorer: a.scorer,
                    tascore: TaScoreConfig {
                        d_model: a.d_model,
                        ff_hidden: a.ff_hidden,
                        layers: a.layers,
                        heads: a.heads,
                        dropout: a.dropout,
                        head_hidden: a.head_hidden,
                        max_len: a.max_seq_len,
                    },
                    classifier_hidden: a.classifier_hidden,
                    classifier_dropout: a.classifier_dropout,
                    projection: ProjectionConfig {
                        kind: a.projection,
                        temperature: a.temperature,
                        tv_weight: a.tv_weight,
                    },
                    seed: a.seed,
                },
                training: TrainConfig {
                    epochs: a.epochs,
                    learning_rate: a.learning_rate,
                    lambda_id: a.lambda_id,
                    optimizer,
                    fusedmax_star: FusedmaxStar {
                        enabled: a.fusedmax_star,
                        swap_fraction: a.swap_fraction,
                    },
                    seed: a.seed,
                    batch_size: a.batch_size,
                },
            }
        }
        Command::Evaluate(a) => RunConfig::Evaluate {
            data: a.data,
            model: a.model,
            projection: a.projection,
            out: a.out,
        },
        Command::Extract(a) => RunConfig::Extract {
            data: a.data,
            model: a.model,
            projection: a.projection,
            out: a.out,
        },
        Command::Baseline(a) => RunConfig::Baseline {
            data: a.data,
            lexicon: a.lexicon,
            out: a.out,
        },
    })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, text)?;
    Ok(())
}

fn load_model(path: &Path, projection: Option<ProjectionKind>) -> Result<Model> {
    let mut model = checkpoint::load(path).map_err(|e| Error::Invalid(format!("{}: {e}", path.display())))?;
    if let Some(kind) = projection {
        if kind != model.cfg.projection.kind {
            model.set_projection(model.cfg.projection.with_kind(kind));
        }
    }
    Ok(model)
}

fn write_report(report: &EvalReport, out: &Path) -> Result<String> {
    write_text(out, &format!("{}\n", report.to_json_line()))?;
    Ok(report.to_table())
}

/// Inline annotation of one example: `[speaker]` utterance prefixes and
/// `[attribute]...[/attribute]` around predicted spans.
pub fn annotate(dp: &DataPoint, classes: &[usize; 3], masks: &[Vec<bool>; 3]) -> String {
    let mut out = format!("# {} medication: {}\n", dp.id, dp.medication.tokens.join(" "));
    for a in ATTRIBUTES {
        let _ = writeln!(out, "# {}: {}", a.name(), a.class_name(classes[a.index()]));
    }
    let mut j = 0;
    for u in &dp.utterances {
        let mut words = vec![format!("[{}]", u.speaker.tag())];
        for t in &u.tokens {
            let mut w = String::new();
            for a in ATTRIBUTES {
                let m = &masks[a.index()];
                if m[j] && (j == 0 || !m[j - 1]) {
                    let _ = write!(w, "[{}]", a.name());
                }
            }
            w.push_str(t);
            for a in ATTRIBUTES.iter().rev() {
                let m = &masks[a.index()];
                if m[j] && (j + 1 == m.len() || !m[j + 1]) {
                    let _ = write!(w, "[/{}]", a.name());
                }
            }
            words.push(w);
            j += 1;
        }
        out.push_str(&words.join(" "));
        out.push('\n');
    }
    out
}

/// `[start, end)` runs of set positions.
pub fn mask_spans(mask: &[bool]) -> Vec<(usize, usize)> {
    let mut spans = Vec::new();
    let mut start = None;
    for (j, &m) in mask.iter().chain(std::iter::once(&false)).enumerate() {
        match (m, start) {
            (true, None) => start = Some(j),
            (false, Some(s)) => {
                spans.push((s, j));
                start = None;
            }
            _ => {}
        }
    }
    spans
}

#[derive(Serialize)]
struct ExtractRecord<'a> {
    id: &'a str,
    frequency: AttrPrediction,
    route: AttrPrediction,
    change: AttrPrediction,
}

#[derive(Serialize)]
struct AttrPrediction {
    class: &'static str,
    spans: Vec<(usize, usize)>,
    text: Vec<String>,
}

fn attr_prediction(dp: &DataPoint, a: Attribute, class: usize, mask: &[bool]) -> AttrPrediction {
    let spans = mask_spans(mask);
    AttrPrediction {
        class: a.class_name(class),
        text: spans.iter().map(|&(s, e)| dp.tokens()[s..e].join(" ")).collect(),
        spans,
    }
}

/// Executes a resolved configuration and returns what to print on stdout.
pub fn execute(cfg: &RunConfig) -> Result<String> {
    let mut msg = String::new();
    match cfg {
        RunConfig::Generate {
            out_dir,
            generator,
            split_fractions,
            train_span_labels,
        } => {
            let data = generate(generator)?;
            let mut parts = split(data, split_fractions, generator.seed)?;
            if let Some(k) = *train_span_labels {
                let mut rng = ChaCha8Rng::seed_from_u64(generator.seed ^ 0x5eed);
                keep_spans(&mut parts[0], k, &mut rng);
            }
            std::fs::create_dir_all(out_dir)?;
            let names = ["train", "val", "test"];
            for (i, part) in parts.iter().enumerate() {
                let name = names.get(i).map_or_else(|| format!("part{i}"), |s| s.to_string());
                let path = out_dir.join(format!("{name}.jsonl"));
                write_dataset(&path, part)?;
                let _ = writeln!(msg, "{}: {} examples", path.display(), part.len());
            }
        }
        RunConfig::Train {
            train: train_path,
            val,
            out,
            model: mcfg,
            training,
        } => {
            let data = parse_dataset(train_path)?;
            let val = val.as_ref().map(parse_dataset).transpose()?;
            let mut model = Model::new(mcfg.clone())?;
            let mut history = String::new();
            train(&mut model, &data, training, |r| {
                history.push_str(&r.to_json_line());
                history.push('\n');
            })?;
            if let Some(val) = val.filter(|v| v.iter().any(DataPoint::has_spans)) {
                model.thresholds = tune_thresholds(&model, &val)?;
            }
            if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)?;
            }
            checkpoint::save(&model, out)?;
            write_text(&sibling(out, "history.jsonl"), &history)?;
            msg.push_str(&history);
            let _ = writeln!(msg, "thresholds {:?}", model.thresholds.0);
            let _ = writeln!(msg, "wrote {}", out.display());
        }
        RunConfig::Evaluate {
            data,
            model,
            projection,
            out,
        } => {
            let data = parse_dataset(data)?;
            let report = if model == "oracle" {
                evaluate_predictions("oracle", &data, &oracle_predictions(&data))?
            } else {
                evaluate(&load_model(Path::new(model), *projection)?, &data)?
            };
            msg = write_report(&report, out)?;
        }
        RunConfig::Extract {
            data,
            model,
            projection,
            out,
        } => {
            let sidecar = out.with_extension("jsonl");
            if &sidecar == out {
                return Err(Error::Invalid("--out must not itself end in .jsonl".into()));
            }
            let data = parse_dataset(data)?;
            let model = load_model(model, *projection)?;
            let mut text = String::new();
            let mut jsonl = String::new();
            for dp in &data {
                let p = model.predict_point(dp)?;
                text.push_str(&annotate(dp, &p.classes, &p.masks));
                text.push('\n');
                let [f, r, c] = ATTRIBUTES.map(|a| attr_prediction(dp, a, p.classes[a.index()], &p.masks[a.index()]));
                let rec = ExtractRecord {
                    id: &dp.id,
                    frequency: f,
                    route: r,
                    change: c,
                };
                jsonl.push_str(&serde_json::to_string(&rec)?);
                jsonl.push('\n');
            }
            write_text(out, &text)?;
            write_text(&sidecar, &jsonl)?;
            let _ = writeln!(msg, "wrote {} and {}", out.display(), sidecar.display());
        }
        RunConfig::Baseline { data, lexicon, out } => {
            let data = parse_dataset(data)?;
            let lex = match lexicon {
                Some(p) => Lexicon::load(p)?,
                None => Lexicon::default_lexicon(),
            };
            msg = write_report(&evaluate_baseline(&data, &lex)?, out)?;
        }
    }
    let manifest = cfg.manifest_path();
    write_text(&manifest, &format!("{}\n", serde_json::to_string_pretty(cfg)?))?;
    Ok(msg)
}

/// Runs the command line and returns the process exit code: 0 on success,
/// 1 on a runtime failure, 2 on a usage error.
pub fn run<I, T>(argv: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 {
                write!(stdout, "{text}")
            } else {
                write!(stderr, "{text}")
            };
            return code;
        }
    };
    let cfg = match (cli.config, cli.command) {
        (Some(path), None) => RunConfig::load(&path).map_err(|e| Error::Invalid(format!("{}: {e}", path.display()))),
        (None, Some(cmd)) => resolve(cmd),
        (Some(_), Some(_)) => {
            let _ = writeln!(stderr, "error: --config replays a manifest and takes no subcommand");
            return 2;
        }
        (None, None) => {
            let _ = writeln!(stderr, "error: a subcommand or --config is required\n\nRun with --help for usage.");
            return 2;
        }
    };
    match cfg.and_then(|c| execute(&c)) {
        Ok(msg) => {
            let _ = write!(stdout, "{msg}");
            0
        }
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            1
        }
    }
}

/// Process entry point.
pub fn main() -> i32 {
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    let mut out = BufWriter::new(stdout.lock());
    let code = run(std::env::args_os(), &mut out, &mut stderr.lock());
    let _ = out.flush();
    code
}
