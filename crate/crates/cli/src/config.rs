use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use wavecls_core::audio::seconds_to_samples;
use wavecls_core::{EncoderConfig, HeadConfig, ModelConfig, SplitRatios, TrainConfig, TsneConfig};

/// Segment lengths the model was designed around; others work but are untested territory.
pub const STANDARD_SEGMENT_SECONDS: [f64; 4] = [0.5, 1.0, 1.5, 2.0];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Relative paths are resolved against the config file's directory.
    pub manifest: Option<PathBuf>,
    pub segment_seconds: f64,
    pub encoder: EncoderConfig,
    pub head: HeadConfig,
    pub train: TrainConfig,
    pub tsne: TsneConfig,
    /// Train, valid, test fractions.
    pub split_ratios: [f64; 3],
    pub out_dir: PathBuf,
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            manifest: None,
            segment_seconds: 1.0,
            encoder: EncoderConfig::default(),
            head: HeadConfig::default(),
            train: TrainConfig::default(),
            tsne: TsneConfig::default(),
            split_ratios: [0.8, 0.1, 0.1],
            out_dir: PathBuf::from("runs"),
            seed: 0,
        }
    }
}

/// Flags shared by every subcommand; set values win over the config file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub segment_seconds: Option<f64>,
    pub deterministic: bool,
    pub manifest: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: RunConfig =
            serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        if let (Some(m), Some(dir)) = (&cfg.manifest, path.parent()) {
            if m.is_relative() {
                cfg.manifest = Some(dir.join(m));
            }
        }
        Ok(cfg)
    }

    pub fn resolve(config: Option<&Path>, o: &Overrides) -> Result<Self> {
        let mut cfg = match config {
            Some(p) => Self::load(p)?,
            None => Self::default(),
        };
        if let Some(s) = o.seed {
            cfg.seed = s;
        }
        if let Some(out) = &o.out {
            cfg.out_dir = out.clone();
        }
        if let Some(s) = o.segment_seconds {
            cfg.segment_seconds = s;
        }
        if let Some(m) = &o.manifest {
            cfg.manifest = Some(m.clone());
        }
        if o.deterministic {
            cfg.train.deterministic = true;
        }
        cfg.train.seed = cfg.seed;
        cfg.tsne.seed = cfg.seed;
        cfg.check_segment_seconds()?;
        Ok(cfg)
    }

    pub fn check_segment_seconds(&self) -> Result<()> {
        let s = self.segment_seconds;
        if !(s.is_finite() && s > 0.0) {
            bail!("segment length must be a positive number of seconds, got {s}");
        }
        if !STANDARD_SEGMENT_SECONDS.contains(&s) {
            log::warn!("segment length {s} s is outside the standard set {STANDARD_SEGMENT_SECONDS:?}");
        }
        Ok(())
    }

    pub fn seg_len(&self) -> usize {
        seconds_to_samples(self.segment_seconds)
    }

    pub fn manifest_path(&self) -> Result<&Path> {
        self.manifest
            .as_deref()
            .context("no dataset manifest given (use --manifest or the `manifest` config key)")
    }

    pub fn ratios(&self) -> Result<SplitRatios> {
        let [a, b, c] = self.split_ratios;
        Ok(SplitRatios::new(a, b, c)?)
    }

    /// Model configuration with the segment length and class count filled in.
    pub fn model_config(&self, n_classes: usize) -> Result<ModelConfig> {
        let mut encoder = self.encoder.clone();
        encoder.seg_len = self.seg_len();
        let mut head = self.head.clone();
        head.n_classes = n_classes;
        let cfg = ModelConfig { encoder, head };
        cfg.validate()?;
        Ok(cfg)
    }
}
