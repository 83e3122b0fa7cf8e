use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use icl_lens::experiments::{run_experiment, ExperimentConfig, IngestPaths};
use icl_lens::io::{plot_curves, PlotStyle};

#[derive(Parser)]
#[command(
    name = "icl-lens",
    version,
    about = "Layer-wise geometry of in-context learning in toy transformers"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML experiment config; unspecified keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides every seed in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Trained model to load instead of training one.
    #[arg(long, global = true)]
    checkpoint: Option<String>,
    /// Output directory (default `$ICL_LENS_OUT/<kind>`).
    #[arg(long, global = true)]
    out: Option<String>,
    /// Config override as a dotted TOML assignment, e.g. `train.steps=500`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SweepKind {
    Noise,
    Position,
    K,
    Size,
    RepeatDistinct,
}

impl SweepKind {
    fn experiment(self) -> &'static str {
        match self {
            SweepKind::Noise => "noise_sweep",
            SweepKind::Position => "position_sweep",
            SweepKind::K => "k_sweep",
            SweepKind::Size => "size_sweep",
            SweepKind::RepeatDistinct => "repeat_distinct",
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Sample prompts and write them as a tab-separated dump.
    GenData,
    /// Train a model and save it as a checkpoint.
    Train,
    /// Dump per-layer representations to a tensor container.
    Trace,
    /// Layer-wise TDNV curves for every representation kind.
    Tdnv,
    /// TDNV at every (layer, separator) pair.
    GridTdnv,
    /// Task-vector, early-exit and saliency probes.
    Probes,
    /// Bias and variance of task means across K.
    BiasVariance,
    /// Monte-Carlo check of the linear-attention variance and mean-shift rates.
    Theorem,
    /// TDNV at the optimal layer across noise, position, K, model size or repetition.
    Sweep {
        #[arg(long, value_enum)]
        kind: SweepKind,
    },
    /// Fine-tune with and without the contrastive term and compare.
    ContrastiveCompare,
    /// Render CSV results to SVG.
    Plot {
        #[arg(required = true)]
        csv: Vec<PathBuf>,
        #[arg(long, short)]
        output: Option<PathBuf>,
        /// Column for the x axis (defaults to the schema's declared plot).
        #[arg(long)]
        x: Option<String>,
        #[arg(long, value_delimiter = ',')]
        y: Vec<String>,
    },
    /// TDNV of representations dumped by another tool.
    Ingest {
        #[arg(long)]
        container: String,
        #[arg(long)]
        layout: String,
    },
}

impl Command {
    fn kind(&self) -> Option<&'static str> {
        Some(match self {
            Command::GenData => "gen_data",
            Command::Train => "train",
            Command::Trace => "trace",
            Command::Tdnv => "tdnv",
            Command::GridTdnv => "grid_tdnv",
            Command::Probes => "probes",
            Command::BiasVariance => "bias_variance",
            Command::Theorem => "theorem",
            Command::Sweep { kind } => kind.experiment(),
            Command::ContrastiveCompare => "contrastive_compare",
            Command::Ingest { .. } => "ingest",
            Command::Plot { .. } => return None,
        })
    }
}

fn apply_set(root: &mut toml::Value, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .with_context(|| format!("`{assignment}` is not KEY=VALUE"))?;
    let value: toml::Value = match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let mut node = root;
    let parts: Vec<&str> = key.trim().split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let table = node
            .as_table_mut()
            .with_context(|| format!("`{key}`: {part} is not a table"))?;
        if i + 1 == parts.len() {
            table.insert(part.to_string(), value);
            return Ok(());
        }
        node = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(Default::default()));
    }
    bail!("empty key in `{assignment}`")
}

fn build_config(common: &Common, kind: &str) -> Result<ExperimentConfig> {
    let base = match &common.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    let mut value = toml::Value::try_from(&base)?;
    for s in &common.sets {
        apply_set(&mut value, s)?;
    }
    let mut cfg: ExperimentConfig = value.try_into().context("invalid config override")?;
    cfg.kind = kind.to_string();
    if let Some(seed) = common.seed {
        cfg.override_seed(seed);
    }
    if let Some(c) = &common.checkpoint {
        cfg.checkpoint = Some(c.clone());
    }
    if let Some(o) = &common.out {
        cfg.out_dir = Some(o.clone());
    }
    Ok(cfg)
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Command::Plot { csv, output, x, y } = &cli.command {
        let style = match x {
            Some(x) => Some(PlotStyle {
                x: x.clone(),
                y: if y.is_empty() {
                    vec!["value".into()]
                } else {
                    y.clone()
                },
                ..PlotStyle::default()
            }),
            None => None,
        };
        let svg = plot_curves(csv, style.as_ref())?;
        let path = output
            .clone()
            .unwrap_or_else(|| csv[0].with_extension("svg"));
        std::fs::write(&path, svg).with_context(|| format!("writing {}", path.display()))?;
        println!("{}", path.display());
        return Ok(());
    }
    let kind = cli.command.kind().expect("non-plot command");
    let mut cfg = build_config(&cli.common, kind)?;
    if let Command::Ingest { container, layout } = &cli.command {
        cfg.ingest = Some(IngestPaths {
            container: container.clone(),
            layout: layout.clone(),
        });
    }
    let report = run_experiment(cfg)?;
    for a in &report.manifest.artifacts {
        println!("{}", report.dir.join(&a.path).display());
    }
    Ok(())
}
