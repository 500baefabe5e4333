use std::collections::BTreeMap;
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, ensure, Context, Result};
use log::{info, warn};
use wavecls_core::audio::{seconds_to_samples, wav_frames};
use wavecls_core::embed::write_embedding_csv;
use wavecls_core::eval::write_predictions_csv;
use wavecls_core::trainer::predict_segments;
use wavecls_core::{
    decode_wav, evaluate, extract_embeddings, load_checkpoint, load_manifest, save_checkpoint, save_manifest,
    segment_track, song_vote, split_by_song, train, tsne, Channel, Checkpoint, DatasetManifest, EvalReport,
    Granularity, Level, Model, PredictionRecord, Segment, Split, SplitRatios, TrainOutcome, SAMPLE_RATE,
};

use crate::config::RunConfig;

pub const CHECKPOINT_FILE: &str = "best.ckpt";
pub const HISTORY_FILE: &str = "history.json";
pub const SWEEP_FILE: &str = "sweep.csv";
pub const EMBEDDING_FILE: &str = "embedding.csv";

pub const SWEEP_HEADER: [&str; 9] = [
    "segment_seconds",
    "segment_accuracy",
    "segment_precision",
    "segment_recall",
    "segment_f1",
    "song_accuracy",
    "song_precision",
    "song_recall",
    "song_f1",
];

/// `Hh Mmin`, rounded to the nearest minute.
pub fn hours_minutes(seconds: f64) -> String {
    let minutes = (seconds / 60.0).round() as u64;
    format!("{}h {}min", minutes / 60, minutes % 60)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn base_dir(manifest_path: &Path) -> PathBuf {
    match manifest_path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

pub struct Dataset {
    pub manifest: DatasetManifest,
    pub base_dir: PathBuf,
    pub classes: Vec<String>,
    pub class_index: BTreeMap<String, usize>,
}

impl Dataset {
    pub fn load(path: &Path) -> Result<Self> {
        let manifest = load_manifest(path).with_context(|| format!("loading manifest {}", path.display()))?;
        Ok(Self {
            classes: manifest.classes(),
            class_index: manifest.class_index(),
            base_dir: base_dir(path),
            manifest,
        })
    }

    pub fn segments(&self, split: Split, seg_len: usize) -> Result<Vec<Segment>> {
        ensure!(
            self.manifest.count(split) > 0,
            "the manifest has no `{split}` tracks (run `prepare` to assign splits)"
        );
        let segs = wavecls_core::manifest::load_segments(&self.manifest, &self.base_dir, split, seg_len, &self.class_index)?;
        ensure!(!segs.is_empty(), "`{split}` tracks are all shorter than one segment");
        Ok(segs)
    }

    fn check_checkpoint(&self, ckpt: &Checkpoint) -> Result<()> {
        ckpt.expect_classes(self.classes.len())?;
        ensure!(
            ckpt.classes == self.classes,
            "checkpoint artists {:?} differ from manifest artists {:?}",
            ckpt.classes,
            self.classes
        );
        Ok(())
    }
}

pub fn cmd_prepare(manifest_path: &Path, ratios: SplitRatios, seed: u64, out_dir: &Path) -> Result<PathBuf> {
    let ds = Dataset::load(manifest_path)?;
    let mut split = split_by_song(&ds.manifest, ratios, seed)?;
    create_dir(out_dir)?;
    let same_dir = fs::canonicalize(out_dir).ok() == fs::canonicalize(&ds.base_dir).ok();
    let mut seconds: BTreeMap<Split, (usize, f64)> = BTreeMap::new();
    for e in &mut split.entries {
        let path = wavecls_core::manifest::resolve(&ds.base_dir, e);
        let bytes = fs::read(&path).with_context(|| format!("reading {}", path.display()))?;
        let frames = wav_frames(&bytes).with_context(|| format!("reading {}", path.display()))?;
        let slot = seconds.entry(e.split).or_default();
        slot.0 += 1;
        slot.1 += frames as f64 / SAMPLE_RATE as f64;
        if !same_dir && e.path.is_relative() {
            e.path = fs::canonicalize(&path)?;
        }
    }
    let out = out_dir.join("manifest.csv");
    save_manifest(&split, &out)?;
    println!("{:<8}{:>8}{:>14}", "split", "tracks", "duration");
    for s in Split::ASSIGNED {
        let (n, secs) = seconds.get(&s).copied().unwrap_or_default();
        println!("{:<8}{:>8}{:>14}", s.as_str(), n, hours_minutes(secs));
    }
    println!("wrote {}", out.display());
    Ok(out)
}

/// Trains on the manifest's train split with validation-based early stopping and
/// writes the best checkpoint and history into `out_dir`.
pub fn train_run(cfg: &RunConfig, out_dir: &Path) -> Result<TrainOutcome> {
    let ds = Dataset::load(cfg.manifest_path()?)?;
    let model_cfg = cfg.model_config(ds.classes.len())?;
    let seg_len = cfg.seg_len();
    let train_set = ds.segments(Split::Train, seg_len)?;
    let valid_set = ds.segments(Split::Valid, seg_len)?;
    info!(
        "{} training and {} validation segments of {seg_len} samples, {} classes",
        train_set.len(),
        valid_set.len(),
        ds.classes.len()
    );
    let model = Model::build(&model_cfg, cfg.seed)?;
    info!("model has {} parameters", model.param_count());
    let started = Instant::now();
    let outcome = train(model, &ds.classes, &train_set, &valid_set, &cfg.train)?;
    create_dir(out_dir)?;
    save_checkpoint(&outcome.best, out_dir.join(CHECKPOINT_FILE))?;
    outcome.history.save(out_dir.join(HISTORY_FILE))?;
    let resolved = serde_json::to_string_pretty(cfg)? + "\n";
    fs::write(out_dir.join("run_config.json"), resolved)?;
    println!(
        "trained {} epochs in {:.1}s; best epoch {} with valid accuracy {:.4}{}",
        outcome.history.epochs.len(),
        started.elapsed().as_secs_f64(),
        outcome.best.meta.epoch,
        outcome.best.meta.valid_accuracy,
        if outcome.history.stopped_early { " (early stop)" } else { "" }
    );
    Ok(outcome)
}

pub fn cmd_train(cfg: &RunConfig) -> Result<()> {
    train_run(cfg, &cfg.out_dir)?;
    println!("wrote {}", cfg.out_dir.join(CHECKPOINT_FILE).display());
    Ok(())
}

/// Loads a checkpoint and confirms an explicitly requested segment length matches it.
fn open_checkpoint(path: &Path, segment_seconds: Option<f64>) -> Result<Checkpoint> {
    let ckpt = load_checkpoint(path).with_context(|| format!("loading checkpoint {}", path.display()))?;
    if let Some(s) = segment_seconds {
        ensure!(
            seconds_to_samples(s) == ckpt.model.seg_len(),
            "checkpoint was trained on {} s segments, not {s} s",
            ckpt.model.seg_len() as f64 / SAMPLE_RATE as f64
        );
    }
    Ok(ckpt)
}

fn segment_records(ckpt: &Checkpoint, segments: &[Segment]) -> Result<Vec<PredictionRecord>> {
    let logits = predict_segments(&ckpt.model, segments)?;
    Ok(segments
        .iter()
        .zip(&logits)
        .map(|(s, l)| PredictionRecord::from_logits(s.id(), &s.parent_track_id, s.label, l))
        .collect())
}

/// Evaluates `ckpt` on one split, writing report, confusion, and prediction files per level.
pub fn eval_run(ckpt: &Checkpoint, ds: &Dataset, split: Split, levels: &[Level], out_dir: &Path) -> Result<Vec<EvalReport>> {
    ds.check_checkpoint(ckpt)?;
    let segments = ds.segments(split, ckpt.model.seg_len())?;
    let records = segment_records(ckpt, &segments)?;
    let n = ds.classes.len();
    create_dir(out_dir)?;
    let mut reports = Vec::new();
    for &level in levels {
        let report = evaluate(&records, n, level)?;
        let items = match level {
            Level::Segment => records.clone(),
            Level::Song => song_vote(&records)?,
        };
        fs::write(out_dir.join(format!("eval_{level}.json")), report.to_json()? + "\n")?;
        let file = fs::File::create(out_dir.join(format!("confusion_{level}.csv")))?;
        report.confusion_matrix().write_csv(&ds.classes, BufWriter::new(file))?;
        let file = fs::File::create(out_dir.join(format!("predictions_{level}.csv")))?;
        write_predictions_csv(&items, n, BufWriter::new(file))?;
        reports.push(report);
    }
    Ok(reports)
}

pub fn print_reports(reports: &[EvalReport]) {
    println!(
        "{:<8}{:>7}{:>10}{:>11}{:>9}{:>9}{:>12}",
        "level", "items", "accuracy", "precision", "recall", "f1", "mc_accuracy"
    );
    for r in reports {
        let m = &r.macro_;
        println!(
            "{:<8}{:>7}{:>10.4}{:>11.4}{:>9.4}{:>9.4}{:>12.4}",
            r.level.as_str(),
            r.n_items,
            m.accuracy,
            m.precision,
            m.recall,
            m.f1,
            m.multiclass_accuracy
        );
    }
}

pub fn cmd_eval(
    cfg: &RunConfig,
    checkpoint: &Path,
    segment_seconds: Option<f64>,
    split: Split,
    levels: &[Level],
) -> Result<Vec<EvalReport>> {
    let ckpt = open_checkpoint(checkpoint, segment_seconds)?;
    let ds = Dataset::load(cfg.manifest_path()?)?;
    let reports = eval_run(&ckpt, &ds, split, levels, &cfg.out_dir)?;
    print_reports(&reports);
    Ok(reports)
}

pub fn cmd_sweep(cfg: &RunConfig, sizes: &[f64], split: Split) -> Result<PathBuf> {
    ensure!(!sizes.is_empty(), "no segment sizes given");
    let ds = Dataset::load(cfg.manifest_path()?)?;
    create_dir(&cfg.out_dir)?;
    let out = cfg.out_dir.join(SWEEP_FILE);
    let mut w = csv::Writer::from_path(&out)?;
    w.write_record(SWEEP_HEADER)?;
    for &s in sizes {
        let mut run = cfg.clone();
        run.segment_seconds = s;
        run.check_segment_seconds()?;
        let dir = cfg.out_dir.join(format!("size_{s}"));
        info!("segment size {s} s -> {}", dir.display());
        let outcome = train_run(&run, &dir)?;
        let reports = eval_run(&outcome.best, &ds, split, &[Level::Segment, Level::Song], &dir)?;
        print_reports(&reports);
        let mut row = vec![s.to_string()];
        for r in &reports {
            let m = &r.macro_;
            row.extend([m.accuracy, m.precision, m.recall, m.f1].iter().map(|v| format!("{v:.6}")));
        }
        w.write_record(&row)?;
        w.flush()?;
    }
    println!("wrote {}", out.display());
    Ok(out)
}

pub fn cmd_predict(checkpoint: &Path, wav: &Path, channel: Channel, segment_seconds: Option<f64>) -> Result<()> {
    let ckpt = open_checkpoint(checkpoint, segment_seconds)?;
    let bytes = fs::read(wav).with_context(|| format!("reading {}", wav.display()))?;
    let mut track = decode_wav(&bytes, channel).with_context(|| format!("decoding {}", wav.display()))?;
    track.track_id = wav.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let seg_len = ckpt.model.seg_len();
    if track.samples.len() < seg_len {
        return Err(wavecls_core::Error::TooShort {
            frames: track.samples.len(),
            needed: seg_len,
        })
        .with_context(|| format!("{} is too short for one segment", wav.display()));
    }
    let segments = segment_track(&track, seg_len);
    let records = segment_records(&ckpt, &segments)?;
    let song = &song_vote(&records)?[0];
    let name = |c: usize| ckpt.classes[c].as_str();

    println!("predicted artist: {}", name(song.pred_label));
    let mut votes = vec![0usize; ckpt.classes.len()];
    for r in &records {
        votes[r.pred_label] += 1;
    }
    let mut order: Vec<usize> = (0..votes.len()).filter(|&c| votes[c] > 0).collect();
    order.sort_by(|&a, &b| votes[b].cmp(&votes[a]).then(a.cmp(&b)));
    println!("votes:");
    for c in order {
        println!("  {:<24}{:>4}/{}", name(c), votes[c], records.len());
    }
    println!("{:<8}{:>10}  {:<24}{:>8}", "segment", "start_s", "artist", "prob");
    for (i, (s, r)) in segments.iter().zip(&records).enumerate() {
        println!(
            "{:<8}{:>10.3}  {:<24}{:>8.4}",
            i,
            s.offset as f64 / SAMPLE_RATE as f64,
            name(r.pred_label),
            r.probs[r.pred_label]
        );
    }
    Ok(())
}

pub fn cmd_embed(
    cfg: &RunConfig,
    checkpoint: &Path,
    segment_seconds: Option<f64>,
    split: Split,
    granularity: Granularity,
    perplexity: Option<f64>,
) -> Result<PathBuf> {
    let ckpt = open_checkpoint(checkpoint, segment_seconds)?;
    let ds = Dataset::load(cfg.manifest_path()?)?;
    ds.check_checkpoint(&ckpt)?;
    let segments = ds.segments(split, ckpt.model.seg_len())?;
    let set = extract_embeddings(&ckpt, &segments, ds.classes.len(), granularity)?;
    let m = set.len();
    let mut tsne_cfg = cfg.tsne.clone();
    match perplexity {
        Some(p) => tsne_cfg.perplexity = p,
        None if !tsne_cfg.feasible(m) => {
            let p = 0.9 * m as f64 / 3.0;
            if p <= 1.0 {
                bail!("{m} points are too few for t-SNE");
            }
            warn!("perplexity {} is infeasible for {m} points; using {p:.3}", tsne_cfg.perplexity);
            tsne_cfg.perplexity = p;
        }
        None => {}
    }
    let result = tsne(&set.points_f64(), &tsne_cfg)?;
    let worst = result.entropy_errors.iter().cloned().fold(0.0, f64::max);
    info!(
        "t-SNE on {m} points: KL {:.4} -> {:.4}, worst entropy error {worst:.2e} bits",
        result.initial_kl, result.final_kl
    );
    create_dir(&cfg.out_dir)?;
    let out = cfg.out_dir.join(EMBEDDING_FILE);
    let file = fs::File::create(&out)?;
    write_embedding_csv(&result.coords, &set.labels, &set.ids, &ds.classes, BufWriter::new(file))?;
    println!("wrote {} ({m} rows)", out.display());
    Ok(out)
}

pub fn cmd_synth(cfg: &wavecls_core::ToyConfig, out_dir: &Path) -> Result<()> {
    let manifest = wavecls_core::write_toy_dataset(out_dir, cfg)?;
    println!(
        "wrote {} tracks of {} artists to {}",
        manifest.entries.len(),
        manifest.classes().len(),
        out_dir.display()
    );
    Ok(())
}
