//! Dataset manifests (`track_id,path,artist,split,channel` CSV) and song-level splitting.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::audio::{decode_wav, segment_track, AudioTrack, Channel, Segment};
use crate::error::{Error, Result};
use crate::nn::init::sub_seed;

pub const MANIFEST_HEADER: [&str; 5] = ["track_id", "path", "artist", "split", "channel"];

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
    #[default]
    Unassigned,
}

impl Split {
    pub const ASSIGNED: [Split; 3] = [Split::Train, Split::Valid, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
            Split::Unassigned => "unassigned",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "valid" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            "unassigned" => Ok(Split::Unassigned),
            other => Err(Error::Manifest(format!("unknown split `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub track_id: String,
    pub path: PathBuf,
    pub artist: String,
    pub split: Split,
    pub channel: Channel,
}

#[derive(Deserialize, Serialize)]
struct Row {
    track_id: String,
    path: String,
    artist: String,
    split: String,
    channel: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn new(entries: Vec<ManifestEntry>) -> Result<Self> {
        let m = Self { entries };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for e in &self.entries {
            if !seen.insert(e.track_id.as_str()) {
                return Err(Error::Manifest(format!("duplicate track_id `{}`", e.track_id)));
            }
        }
        Ok(())
    }

    /// Artist names in class-index order (sorted).
    pub fn classes(&self) -> Vec<String> {
        self.class_index().into_keys().collect()
    }

    /// Dense class indices assigned by sorted artist name.
    pub fn class_index(&self) -> BTreeMap<String, usize> {
        let mut names: Vec<&str> = self.entries.iter().map(|e| e.artist.as_str()).collect();
        names.sort_unstable();
        names.dedup();
        names.into_iter().enumerate().map(|(i, n)| (n.to_string(), i)).collect()
    }

    pub fn entries_in(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    pub fn count(&self, split: Split) -> usize {
        self.entries_in(split).count()
    }
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_manifest(file)
}

pub fn read_manifest(reader: impl std::io::Read) -> Result<DatasetManifest> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != MANIFEST_HEADER {
        return Err(Error::Manifest(format!(
            "manifest header must be `{}`, got `{}`",
            MANIFEST_HEADER.join(","),
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut entries = Vec::new();
    for row in rdr.deserialize::<Row>() {
        let row = row.map_err(|e| Error::Manifest(e.to_string()))?;
        entries.push(ManifestEntry {
            track_id: row.track_id,
            path: PathBuf::from(row.path),
            artist: row.artist,
            split: row.split.parse()?,
            channel: row.channel.parse()?,
        });
    }
    DatasetManifest::new(entries)
}

pub fn save_manifest(manifest: &DatasetManifest, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_manifest(manifest, file)
}

pub fn write_manifest(manifest: &DatasetManifest, writer: impl std::io::Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for e in &manifest.entries {
        w.serialize(Row {
            track_id: e.track_id.clone(),
            path: e.path.to_string_lossy().into_owned(),
            artist: e.artist.clone(),
            split: e.split.as_str().into(),
            channel: e.channel.as_str().into(),
        })?;
    }
    if manifest.entries.is_empty() {
        w.write_record(MANIFEST_HEADER)?;
    }
    w.flush().map_err(|e| Error::io("<manifest>", e))?;
    Ok(())
}

/// Train/valid/test fractions.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitRatios {
    pub train: f64,
    pub valid: f64,
    pub test: f64,
}

impl SplitRatios {
    pub fn new(train: f64, valid: f64, test: f64) -> Result<Self> {
        let r = Self { train, valid, test };
        if [train, valid, test].iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Config(format!("split ratios must be non-negative: {r:?}")));
        }
        if (train + valid + test - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("split ratios must sum to 1: {r:?}")));
        }
        Ok(r)
    }
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.8,
            valid: 0.1,
            test: 0.1,
        }
    }
}

/// `(train, valid, test)` track counts for an artist with `n >= 3` tracks.
fn split_counts(n: usize, r: SplitRatios) -> (usize, usize, usize) {
    let mut valid = ((n as f64 * r.valid).round() as usize).max(1);
    let mut test = ((n as f64 * r.test).round() as usize).max(1);
    while valid + test > n - 1 {
        if valid >= test && valid > 1 {
            valid -= 1;
        } else {
            test -= 1;
        }
    }
    (n - valid - test, valid, test)
}

/// Assigns whole tracks to train/valid/test, stratified per artist.
///
/// Each artist's tracks (sorted by id) are shuffled with a seed derived from
/// `seed` and the artist's class index, then cut by the ratios with at least
/// one track in every split.
pub fn split_by_song(manifest: &DatasetManifest, ratios: SplitRatios, seed: u64) -> Result<DatasetManifest> {
    manifest.validate()?;
    let classes = manifest.class_index();
    let mut by_artist: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, e) in manifest.entries.iter().enumerate() {
        by_artist.entry(e.artist.as_str()).or_default().push(i);
    }
    let mut out = manifest.clone();
    for (artist, mut idx) in by_artist {
        if idx.len() < 3 {
            return Err(Error::Stratification(format!(
                "artist `{artist}` has {} track(s), need at least 3",
                idx.len()
            )));
        }
        idx.sort_by(|&a, &b| manifest.entries[a].track_id.cmp(&manifest.entries[b].track_id));
        let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(seed, classes[artist] as u64));
        idx.shuffle(&mut rng);
        let (n_train, n_valid, _) = split_counts(idx.len(), ratios);
        for (k, &i) in idx.iter().enumerate() {
            out.entries[i].split = if k < n_train {
                Split::Train
            } else if k < n_train + n_valid {
                Split::Valid
            } else {
                Split::Test
            };
        }
    }
    Ok(out)
}

/// Resolves an entry path against the manifest's directory.
pub fn resolve(base_dir: &Path, entry: &ManifestEntry) -> PathBuf {
    if entry.path.is_absolute() {
        entry.path.clone()
    } else {
        base_dir.join(&entry.path)
    }
}

/// Decodes one manifest entry into a labelled track.
pub fn load_track(base_dir: &Path, entry: &ManifestEntry, classes: &BTreeMap<String, usize>) -> Result<AudioTrack> {
    let path = resolve(base_dir, entry);
    let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let mut track = decode_wav(&bytes, entry.channel).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        other => other,
    })?;
    track.track_id = entry.track_id.clone();
    track.artist_name = entry.artist.clone();
    track.label = *classes
        .get(&entry.artist)
        .ok_or_else(|| Error::Manifest(format!("artist `{}` has no class index", entry.artist)))?;
    Ok(track)
}

/// Decodes and segments every track of `split`, in manifest order.
pub fn load_segments(
    manifest: &DatasetManifest,
    base_dir: &Path,
    split: Split,
    seg_len: usize,
    classes: &BTreeMap<String, usize>,
) -> Result<Vec<Segment>> {
    let entries: Vec<&ManifestEntry> = manifest.entries_in(split).collect();
    let per_track: Vec<Vec<Segment>> = entries
        .par_iter()
        .map(|e| load_track(base_dir, e, classes).map(|t| segment_track(&t, seg_len)))
        .collect::<Result<_>>()?;
    Ok(per_track.into_iter().flatten().collect())
}
