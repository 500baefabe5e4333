//! Synthetic oscillator dataset: each "artist" is a waveform shape; a track is a run of
//! notes with random pitch and level plus additive noise.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::audio::{encode_wav, to_pcm16, AudioTrack, Channel, SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::manifest::{save_manifest, DatasetManifest, ManifestEntry, Split};
use crate::nn::init::sub_seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Timbre {
    Sine,
    Square,
    Sawtooth,
    /// 10% duty-cycle pulse train.
    Pulse,
    Triangle,
}

impl Timbre {
    pub const ALL: [Timbre; 5] = [Timbre::Sine, Timbre::Square, Timbre::Sawtooth, Timbre::Pulse, Timbre::Triangle];

    pub fn name(self) -> &'static str {
        match self {
            Timbre::Sine => "sine",
            Timbre::Square => "square",
            Timbre::Sawtooth => "sawtooth",
            Timbre::Pulse => "pulse",
            Timbre::Triangle => "triangle",
        }
    }

    /// Waveform value at phase `x` in `[0, 1)`, range `[-1, 1]`.
    pub fn eval(self, x: f64) -> f64 {
        match self {
            Timbre::Sine => (std::f64::consts::TAU * x).sin(),
            Timbre::Square => {
                if x < 0.5 {
                    1.0
                } else {
                    -1.0
                }
            }
            Timbre::Sawtooth => 2.0 * x - 1.0,
            Timbre::Pulse => {
                if x < 0.1 {
                    1.0
                } else {
                    -0.1
                }
            }
            Timbre::Triangle => 1.0 - 4.0 * (x - 0.5).abs(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyConfig {
    /// At most 5.
    pub n_classes: usize,
    pub tracks_per_class: usize,
    pub seconds_per_track: f64,
    pub note_seconds: f64,
    pub min_freq: f64,
    pub max_freq: f64,
    pub min_amplitude: f64,
    pub max_amplitude: f64,
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            n_classes: 4,
            tracks_per_class: 5,
            seconds_per_track: 10.0,
            note_seconds: 0.25,
            min_freq: 200.0,
            max_freq: 800.0,
            min_amplitude: 0.3,
            max_amplitude: 0.8,
            noise_std: 0.05,
            seed: 0,
        }
    }
}

impl ToyConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = (1..=Timbre::ALL.len()).contains(&self.n_classes)
            && self.tracks_per_class >= 1
            && self.seconds_per_track > 0.0
            && self.note_seconds > 0.0
            && 0.0 < self.min_freq
            && self.min_freq <= self.max_freq
            && 0.0 <= self.min_amplitude
            && self.min_amplitude <= self.max_amplitude
            && self.max_amplitude + 4.0 * self.noise_std <= 1.0
            && self.noise_std >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid toy dataset configuration: {self:?}")))
        }
    }
}

/// Class names of the toy set, already in sorted (class-index) order.
pub fn toy_classes(n_classes: usize) -> Vec<String> {
    let mut names: Vec<String> = Timbre::ALL[..n_classes].iter().map(|t| t.name().to_string()).collect();
    names.sort();
    names
}

/// Generates all tracks, ordered by class then track number.
pub fn toy_tracks(cfg: &ToyConfig) -> Result<Vec<AudioTrack>> {
    cfg.validate()?;
    let classes = toy_classes(cfg.n_classes);
    let n = (cfg.seconds_per_track * SAMPLE_RATE as f64).round() as usize;
    let noise = Normal::new(0.0, cfg.noise_std).map_err(|e| Error::Config(e.to_string()))?;
    let mut tracks = Vec::with_capacity(cfg.n_classes * cfg.tracks_per_class);
    for (label, name) in classes.iter().enumerate() {
        let timbre = *Timbre::ALL.iter().find(|t| t.name() == name).expect("known timbre");
        for k in 0..cfg.tracks_per_class {
            let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(cfg.seed, (label * 10_000 + k) as u64));
            let note_len = ((cfg.note_seconds * SAMPLE_RATE as f64).round() as usize).max(1);
            let mut samples = Vec::with_capacity(n);
            let mut phase: f64 = rng.random_range(0.0..1.0);
            while samples.len() < n {
                // log-uniform pitch
                let freq = (rng.random_range(cfg.min_freq.ln()..=cfg.max_freq.ln())).exp();
                let amp = rng.random_range(cfg.min_amplitude..=cfg.max_amplitude);
                let step = freq / SAMPLE_RATE as f64;
                for _ in 0..note_len.min(n - samples.len()) {
                    samples.push((amp * timbre.eval(phase) + noise.sample(&mut rng)) as f32);
                    phase = (phase + step).fract();
                }
            }
            tracks.push(AudioTrack::new(format!("{name}_{k:02}"), samples, label, name.clone()));
        }
    }
    Ok(tracks)
}

/// Writes one mono WAV per track under `dir/audio/` and an unsplit `dir/manifest.csv`.
pub fn write_toy_dataset(dir: &Path, cfg: &ToyConfig) -> Result<DatasetManifest> {
    let audio = dir.join("audio");
    std::fs::create_dir_all(&audio).map_err(|e| Error::io(&audio, e))?;
    let mut entries = Vec::new();
    for track in toy_tracks(cfg)? {
        let rel = format!("audio/{}.wav", track.track_id);
        let path = dir.join(&rel);
        let bytes = encode_wav(&to_pcm16(&track.samples), 1, SAMPLE_RATE)?;
        std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        entries.push(ManifestEntry {
            track_id: track.track_id,
            path: rel.into(),
            artist: track.artist_name,
            split: Split::Unassigned,
            channel: Channel::Mono,
        });
    }
    let manifest = DatasetManifest::new(entries)?;
    save_manifest(&manifest, dir.join("manifest.csv"))?;
    Ok(manifest)
}
