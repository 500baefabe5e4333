//! `wavecls`: prepare splits, train, evaluate, sweep segment sizes, predict, and export
//! embeddings for the raw-waveform artist classifier.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use wavecls_core::{Channel, Granularity, Level, Split, SplitRatios, ToyConfig};

use crate::config::{Overrides, RunConfig};

#[derive(Parser, Debug)]
#[command(name = "wavecls", version, about = "Artist classification from raw audio waveforms")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// JSON run configuration; flags override its values.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    #[arg(long, value_name = "F")]
    segment_seconds: Option<f64>,
    /// Evaluation level.
    #[arg(long, value_enum, default_value_t = LevelArg::Both)]
    level: LevelArg,
    /// Reduce gradients in a fixed order so reruns are bit-identical.
    #[arg(long)]
    deterministic: bool,
}

impl Common {
    fn overrides(&self, manifest: Option<PathBuf>) -> Overrides {
        Overrides {
            seed: self.seed,
            out: self.out.clone(),
            segment_seconds: self.segment_seconds,
            deterministic: self.deterministic,
            manifest,
        }
    }

    fn run_config(&self, manifest: Option<PathBuf>) -> Result<RunConfig> {
        RunConfig::resolve(self.config.as_deref(), &self.overrides(manifest))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum LevelArg {
    Segment,
    Song,
    Both,
}

impl LevelArg {
    fn levels(self) -> Vec<Level> {
        match self {
            LevelArg::Segment => vec![Level::Segment],
            LevelArg::Song => vec![Level::Song],
            LevelArg::Both => vec![Level::Segment, Level::Song],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum SplitArg {
    Train,
    Valid,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Valid => Split::Valid,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum ChannelArg {
    Mono,
    Left,
    Right,
}

impl From<ChannelArg> for Channel {
    fn from(c: ChannelArg) -> Self {
        match c {
            ChannelArg::Mono => Channel::Mono,
            ChannelArg::Left => Channel::Left,
            ChannelArg::Right => Channel::Right,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum GranularityArg {
    Segment,
    Track,
}

impl From<GranularityArg> for Granularity {
    fn from(g: GranularityArg) -> Self {
        match g {
            GranularityArg::Segment => Granularity::Segment,
            GranularityArg::Track => Granularity::Track,
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Assign tracks to train/valid/test splits, stratified by artist.
    Prepare {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "PATH")]
        manifest: Option<PathBuf>,
        /// Train,valid,test fractions summing to 1.
        #[arg(long, value_name = "T,V,E")]
        ratios: Option<String>,
    },
    /// Train a model and keep the checkpoint with the best validation accuracy.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "PATH")]
        manifest: Option<PathBuf>,
    },
    /// Evaluate a checkpoint at segment and/or song level.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
        #[arg(long, value_name = "PATH")]
        manifest: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = SplitArg::Test)]
        split: SplitArg,
    },
    /// Train and evaluate one model per segment length.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "PATH")]
        manifest: Option<PathBuf>,
        /// Segment lengths in seconds.
        #[arg(long, value_delimiter = ',', default_value = "0.5,1.0,1.5,2.0")]
        sizes: Vec<f64>,
        #[arg(long, value_enum, default_value_t = SplitArg::Valid)]
        split: SplitArg,
    },
    /// Predict the artist of one WAV file by voting over its segments.
    Predict {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
        #[arg(value_name = "WAV")]
        wav: PathBuf,
        #[arg(long, value_enum, default_value_t = ChannelArg::Mono)]
        channel: ChannelArg,
    },
    /// Project bottleneck vectors to 2-D with t-SNE and write them as CSV.
    Embed {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_name = "PATH")]
        checkpoint: PathBuf,
        #[arg(long, value_name = "PATH")]
        manifest: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = SplitArg::Test)]
        split: SplitArg,
        #[arg(long, value_enum, default_value_t = GranularityArg::Segment)]
        granularity: GranularityArg,
        #[arg(long)]
        perplexity: Option<f64>,
    },
    /// Write a synthetic oscillator dataset (WAV files and an unsplit manifest).
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 4)]
        classes: usize,
        #[arg(long, default_value_t = 5)]
        tracks_per_class: usize,
        #[arg(long, default_value_t = 10.0)]
        seconds: f64,
    },
}

fn parse_ratios(s: &str) -> Result<SplitRatios> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .with_context(|| format!("invalid ratios `{s}`"))?;
    let [a, b, c] = parts[..] else {
        bail!("expected three comma-separated ratios, got `{s}`");
    };
    Ok(SplitRatios::new(a, b, c)?)
}

/// Applies `WAVECLS_THREADS`; 0 means serial execution with deterministic reduction.
fn configure_threads() -> Result<bool> {
    let Ok(v) = std::env::var("WAVECLS_THREADS") else {
        return Ok(false);
    };
    let n: usize = v.trim().parse().with_context(|| format!("WAVECLS_THREADS must be an integer, got `{v}`"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n.max(1))
        .build_global()
        .context("configuring the worker pool")?;
    Ok(n == 0)
}

fn run(cli: Cli) -> Result<()> {
    let serial = configure_threads()?;
    let with_serial = |mut cfg: RunConfig| {
        cfg.train.deterministic |= serial;
        cfg
    };
    match cli.command {
        Command::Prepare {
            common,
            manifest,
            ratios,
        } => {
            let cfg = common.run_config(manifest)?;
            let ratios = match ratios {
                Some(r) => parse_ratios(&r)?,
                None => cfg.ratios()?,
            };
            commands::cmd_prepare(cfg.manifest_path()?, ratios, cfg.seed, &cfg.out_dir)?;
        }
        Command::Train { common, manifest } => {
            commands::cmd_train(&with_serial(common.run_config(manifest)?))?;
        }
        Command::Eval {
            common,
            checkpoint,
            manifest,
            split,
        } => {
            let cfg = common.run_config(manifest)?;
            commands::cmd_eval(&cfg, &checkpoint, common.segment_seconds, split.into(), &common.level.levels())?;
        }
        Command::Sweep {
            common,
            manifest,
            sizes,
            split,
        } => {
            if let Some(bad) = sizes.iter().find(|s| !(s.is_finite() && **s > 0.0)) {
                bail!("segment sizes must be positive, got {bad}");
            }
            commands::cmd_sweep(&with_serial(common.run_config(manifest)?), &sizes, split.into())?;
        }
        Command::Predict {
            common,
            checkpoint,
            wav,
            channel,
        } => {
            commands::cmd_predict(&checkpoint, &wav, channel.into(), common.segment_seconds)?;
        }
        Command::Embed {
            common,
            checkpoint,
            manifest,
            split,
            granularity,
            perplexity,
        } => {
            let cfg = common.run_config(manifest)?;
            commands::cmd_embed(
                &cfg,
                &checkpoint,
                common.segment_seconds,
                split.into(),
                granularity.into(),
                perplexity,
            )?;
        }
        Command::Synth {
            common,
            classes,
            tracks_per_class,
            seconds,
        } => {
            let cfg = common.run_config(None)?;
            let toy = ToyConfig {
                n_classes: classes,
                tracks_per_class,
                seconds_per_track: seconds,
                seed: cfg.seed,
                ..ToyConfig::default()
            };
            commands::cmd_synth(&toy, &cfg.out_dir)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
