use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use tsqnet::config::RunConfig;
use tsqnet::data::SynthConfig;
use tsqnet::experiment::Policy;
use tsqnet::{Result, TsqError};

#[derive(Debug, Parser)]
#[command(
    name = "tsqnet",
    version,
    about = "Class-specific salient-frame selection with temporal saliency queries",
    arg_required_else_help = true
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic benchmark with planted salient frames
    SynthGen(SynthGenArgs),
    /// Fit the probe, the query networks and the recognizer; write a checkpoint
    Train(TrainArgs),
    /// Select frames for one or all videos with a trained checkpoint
    Sample(SampleArgs),
    /// Score sampling policies with the frozen recognizer
    Eval(EvalArgs),
    /// Print a per-component GFLOPs breakdown
    Flops(FlopsArgs),
    /// Compare analytic gradients against central differences
    Gradcheck(GradcheckArgs),
    /// Train and evaluate every point of a settings grid
    Ablate(AblateArgs),
}

/// Synthetic benchmark shape. Unset flags keep the generator defaults.
#[derive(Debug, Args, Default)]
pub struct SynthFlags {
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long)]
    pub frames: Option<usize>,
    /// Frame feature dimension
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long)]
    pub objects: Option<usize>,
    #[arg(long)]
    pub embed_dim: Option<usize>,
    #[arg(long)]
    pub per_class: Option<usize>,
    /// Planted salient frames per video
    #[arg(long)]
    pub salient: Option<usize>,
    #[arg(long)]
    pub noise: Option<f64>,
}

impl SynthFlags {
    pub fn config(&self) -> SynthConfig {
        let d = SynthConfig::default();
        SynthConfig {
            classes: self.classes.unwrap_or(d.classes),
            frames: self.frames.unwrap_or(d.frames),
            feature_dim: self.dim.unwrap_or(d.feature_dim),
            objects: self.objects.unwrap_or(d.objects),
            embed_dim: self.embed_dim.unwrap_or(d.embed_dim),
            per_class: self.per_class.unwrap_or(d.per_class),
            salient: self.salient.unwrap_or(d.salient),
            noise: self.noise.unwrap_or(d.noise),
        }
    }
}

#[derive(Debug, Args)]
pub struct SynthGenArgs {
    #[command(flatten)]
    pub synth: SynthFlags,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory (dataset.jsonl, vocab.json, their .bin payloads, synth.json)
    #[arg(long)]
    pub out: PathBuf,
}

/// Run-configuration file plus per-field overrides.
#[derive(Debug, Args, Default)]
pub struct ConfigFlags {
    /// Run configuration JSON, or any artifact that echoes one (checkpoint, log, report)
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub m_percent: Option<f64>,
    #[arg(long)]
    pub reduced_dim: Option<usize>,
    /// Drop the learnable positional table
    #[arg(long)]
    pub no_positional: bool,
    /// Object categories kept per frame; the object count means all
    #[arg(long)]
    pub top_objects: Option<usize>,
    /// Pre-sampled frames T
    #[arg(long)]
    pub presample: Option<usize>,
    /// Selected frames K
    #[arg(long)]
    pub budget: Option<usize>,
    #[arg(long)]
    pub lambda_v: Option<f64>,
    #[arg(long)]
    pub top_classes: Option<usize>,
    /// Any other setting, e.g. --set classifier=agnostic (repeatable)
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

impl ConfigFlags {
    /// Applies the flags on top of `cfg`, in a fixed order.
    pub fn apply(&self, cfg: &mut RunConfig) -> Result<()> {
        let pairs: [(&str, Option<String>); 14] = [
            ("epochs", self.epochs.map(|v| v.to_string())),
            ("batch", self.batch.map(|v| v.to_string())),
            ("lr", self.lr.map(|v| v.to_string())),
            ("alpha", self.alpha.map(|v| v.to_string())),
            ("beta", self.beta.map(|v| v.to_string())),
            ("seed", self.seed.map(|v| v.to_string())),
            ("m_percent", self.m_percent.map(|v| v.to_string())),
            ("reduced_dim", self.reduced_dim.map(|v| v.to_string())),
            ("top_objects", self.top_objects.map(|v| v.to_string())),
            ("presample", self.presample.map(|v| v.to_string())),
            ("budget", self.budget.map(|v| v.to_string())),
            ("lambda_v", self.lambda_v.map(|v| v.to_string())),
            ("top_classes", self.top_classes.map(|v| v.to_string())),
            (
                "positional",
                self.no_positional.then(|| "false".to_string()),
            ),
        ];
        for (key, value) in pairs {
            if let Some(v) = value {
                cfg.set(key, &v)?;
            }
        }
        for kv in &self.set {
            let (k, v) = kv.split_once('=').ok_or_else(|| {
                TsqError::InvalidConfig(format!("--set expects KEY=VALUE, got '{kv}'"))
            })?;
            cfg.set(k.trim(), v.trim())?;
        }
        Ok(())
    }
}

#[derive(Debug, Args)]
pub struct DataFlags {
    /// Dataset manifest (JSON lines); defaults to the path in the config
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Vocabulary manifest; defaults to the path in the config
    #[arg(long)]
    pub vocab: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataFlags,
    #[command(flatten)]
    pub cfg: ConfigFlags,
    /// Checkpoint manifest to write (payload goes next to it as .bin)
    #[arg(long)]
    pub out: PathBuf,
    /// Training log (JSON lines); defaults to <out>.log.jsonl
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub data: DataFlags,
    /// Only this video
    #[arg(long)]
    pub video: Option<String>,
    #[arg(long, default_value = "tsq")]
    pub policy: Policy,
    #[arg(long)]
    pub budget: Option<usize>,
    #[arg(long)]
    pub presample: Option<usize>,
    #[arg(long)]
    pub lambda_v: Option<f64>,
    #[arg(long)]
    pub top_classes: Option<usize>,
    /// Seed of the random policy; defaults to the training seed
    #[arg(long)]
    pub seed: Option<u64>,
    /// Write {config, policy, seed, selections} here instead of JSON lines on stdout
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Split {
    /// The videos held out from training
    Holdout,
    All,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[command(flatten)]
    pub data: DataFlags,
    #[arg(long, value_enum, default_value_t = Split::Holdout)]
    pub split: Split,
    /// Comma-separated policies; all by default
    #[arg(long, value_delimiter = ',')]
    pub policies: Vec<Policy>,
    /// Comma-separated budgets K; the checkpoint's budget by default
    #[arg(long, value_delimiter = ',')]
    pub budgets: Vec<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Report file; .csv writes CSV, anything else JSON
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Accuracy-vs-GFLOPs curve (CSV)
    #[arg(long)]
    pub curve: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FlopsArgs {
    /// Cost table JSON ({"components": [...], "heads": [...]})
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Without --config: pre-sampled frames of the default pipeline
    #[arg(long, default_value_t = 16)]
    pub presample: usize,
    /// Without --config: selected frames of the default pipeline
    #[arg(long, default_value_t = 5)]
    pub budget: usize,
    /// Also print the unrounded total
    #[arg(long)]
    pub raw: bool,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 4)]
    pub classes: usize,
    #[arg(long, default_value_t = 6)]
    pub frames: usize,
    #[arg(long, default_value_t = 8)]
    pub dim: usize,
    #[arg(long, default_value_t = 6)]
    pub embed_dim: usize,
    #[arg(long, default_value_t = 12)]
    pub objects: usize,
    #[arg(long, default_value_t = 4)]
    pub reduced_dim: usize,
    #[arg(long, default_value_t = 4)]
    pub top_objects: usize,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
    /// Deliberately corrupt the analytic gradient of this tensor
    #[arg(long, value_name = "TENSOR")]
    pub corrupt: Option<String>,
    /// Model toggles, e.g. --set classifier=agnostic (repeatable)
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    /// Grid axis KEY=V1,V2,... (repeatable; axes combine as a product)
    #[arg(long, required = true)]
    pub grid: Vec<String>,
    /// Seeds per setting, counting up from the base seed
    #[arg(long, default_value_t = 1)]
    pub repeats: u64,
    #[command(flatten)]
    pub cfg: ConfigFlags,
    #[command(flatten)]
    pub data: DataFlags,
    #[command(flatten)]
    pub synth: SynthFlags,
    /// Summary file; .csv writes CSV, anything else JSON
    #[arg(long)]
    pub out: Option<PathBuf>,
}
