//! One-vs-rest metrics, confusion matrices, and segment/song evaluation.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::head::argmax;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub segment_id: String,
    pub track_id: String,
    pub true_label: usize,
    pub pred_label: usize,
    pub probs: Vec<f64>,
}

impl PredictionRecord {
    /// Builds a record from raw logits via a numerically stable softmax.
    pub fn from_logits(segment_id: impl Into<String>, track_id: impl Into<String>, true_label: usize, logits: &[f32]) -> Self {
        let max = logits.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v as f64));
        let exp: Vec<f64> = logits.iter().map(|&v| (v as f64 - max).exp()).collect();
        let z: f64 = exp.iter().sum();
        let probs: Vec<f64> = exp.into_iter().map(|e| e / z).collect();
        Self {
            segment_id: segment_id.into(),
            track_id: track_id.into(),
            true_label,
            pred_label: argmax(&probs),
            probs,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Segment,
    Song,
}

impl Level {
    pub fn as_str(self) -> &'static str {
        match self {
            Level::Segment => "segment",
            Level::Song => "song",
        }
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Level {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "segment" => Ok(Level::Segment),
            "song" => Ok(Level::Song),
            other => Err(Error::Config(format!("unknown evaluation level `{other}`"))),
        }
    }
}

/// Row = ground truth, column = prediction.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    n_classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(n_classes: usize) -> Self {
        Self {
            n_classes,
            counts: vec![0; n_classes * n_classes],
        }
    }

    pub fn from_pairs(n_classes: usize, pairs: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let mut cm = Self::new(n_classes);
        for (t, p) in pairs {
            cm.add(t, p)?;
        }
        Ok(cm)
    }

    pub fn add(&mut self, truth: usize, pred: usize) -> Result<()> {
        for label in [truth, pred] {
            if label >= self.n_classes {
                return Err(Error::LabelOutOfRange {
                    label,
                    n_classes: self.n_classes,
                });
            }
        }
        self.counts[truth * self.n_classes + pred] += 1;
        Ok(())
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.n_classes + pred]
    }

    /// Row-major counts.
    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn row_sum(&self, truth: usize) -> u64 {
        (0..self.n_classes).map(|p| self.get(truth, p)).sum()
    }

    pub fn col_sum(&self, pred: usize) -> u64 {
        (0..self.n_classes).map(|t| self.get(t, pred)).sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.n_classes).map(|c| self.get(c, c)).sum()
    }

    /// One-vs-rest counts for class `c`.
    pub fn one_vs_rest(&self, c: usize) -> BinaryCounts {
        let tp = self.get(c, c);
        let fp = self.col_sum(c) - tp;
        let fn_ = self.row_sum(c) - tp;
        BinaryCounts {
            tp,
            fp,
            fn_,
            tn: self.total() - tp - fp - fn_,
        }
    }

    /// CSV with artist names labelling both rows (truth) and columns (prediction).
    pub fn write_csv(&self, classes: &[String], writer: impl Write) -> Result<()> {
        if classes.len() != self.n_classes {
            return Err(Error::Config(format!(
                "{} class names for a {}-class confusion matrix",
                classes.len(),
                self.n_classes
            )));
        }
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec![String::from("truth\\pred")];
        header.extend(classes.iter().cloned());
        w.write_record(&header)?;
        for (t, name) in classes.iter().enumerate() {
            let mut row = vec![name.clone()];
            row.extend((0..self.n_classes).map(|p| self.get(t, p).to_string()));
            w.write_record(&row)?;
        }
        w.flush().map_err(|e| Error::io("<confusion csv>", e))?;
        Ok(())
    }
}

pub fn confusion(records: &[PredictionRecord], n_classes: usize) -> Result<ConfusionMatrix> {
    ConfusionMatrix::from_pairs(n_classes, records.iter().map(|r| (r.true_label, r.pred_label)))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BinaryCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl BinaryCounts {
    pub fn metrics(&self) -> ClassMetrics {
        let ratio = |num: u64, den: u64| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        let precision = ratio(self.tp, self.tp + self.fp);
        let recall = ratio(self.tp, self.tp + self.fn_);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        let total = self.tp + self.fp + self.fn_ + self.tn;
        ClassMetrics {
            accuracy: ratio(self.tp + self.tn, total),
            precision,
            recall,
            f1,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

pub fn per_class_metrics(cm: &ConfusionMatrix) -> Vec<ClassMetrics> {
    (0..cm.n_classes()).map(|c| cm.one_vs_rest(c).metrics()).collect()
}

/// Unweighted mean over classes of each one-vs-rest metric.
pub fn macro_metrics(per_class: &[ClassMetrics]) -> ClassMetrics {
    let n = per_class.len() as f64;
    let mean = |f: fn(&ClassMetrics) -> f64| per_class.iter().map(f).sum::<f64>() / n;
    ClassMetrics {
        accuracy: mean(|m| m.accuracy),
        precision: mean(|m| m.precision),
        recall: mean(|m| m.recall),
        f1: mean(|m| m.f1),
    }
}

/// Macro averages plus plain multi-class accuracy (trace / total), which differs from
/// the mean one-vs-rest accuracy.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MacroMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub multiclass_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub level: Level,
    pub n_classes: usize,
    pub n_items: usize,
    #[serde(rename = "macro")]
    pub macro_: MacroMetrics,
    pub per_class: Vec<ClassMetrics>,
    /// Row-major `n_classes x n_classes` counts, row = truth.
    pub confusion: Vec<u64>,
}

impl EvalReport {
    pub fn confusion_matrix(&self) -> ConfusionMatrix {
        ConfusionMatrix {
            n_classes: self.n_classes,
            counts: self.confusion.clone(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let r: Self = serde_json::from_str(s)?;
        if r.confusion.len() != r.n_classes * r.n_classes {
            return Err(Error::Format("confusion array does not match n_classes".into()));
        }
        Ok(r)
    }
}

/// Majority vote per track over segment predictions.
///
/// Plurality of predicted labels wins; ties go to the larger summed probability of the
/// tied class, then to the lowest class index. Track probabilities are the mean of the
/// segment probabilities, so the voted label need not be their argmax. Output is sorted
/// by track id and does not depend on record order.
pub fn song_vote(records: &[PredictionRecord]) -> Result<Vec<PredictionRecord>> {
    if records.is_empty() {
        return Err(Error::Empty("no segment records to vote over".into()));
    }
    let mut groups: BTreeMap<&str, Vec<&PredictionRecord>> = BTreeMap::new();
    for r in records {
        groups.entry(r.track_id.as_str()).or_default().push(r);
    }
    let n_classes = records[0].probs.len();
    let mut out = Vec::with_capacity(groups.len());
    for (track, mut group) in groups {
        // fixed summation order
        group.sort_by(|a, b| a.segment_id.cmp(&b.segment_id));
        let true_label = group[0].true_label;
        let mut votes = vec![0usize; n_classes];
        let mut prob_sum = vec![0.0f64; n_classes];
        for r in &group {
            if r.true_label != true_label {
                return Err(Error::Config(format!("track `{track}` has segments with different labels")));
            }
            if r.probs.len() != n_classes {
                return Err(Error::Shape(format!(
                    "record `{}` has {} probabilities, expected {n_classes}",
                    r.segment_id,
                    r.probs.len()
                )));
            }
            if r.pred_label >= n_classes {
                return Err(Error::LabelOutOfRange {
                    label: r.pred_label,
                    n_classes,
                });
            }
            votes[r.pred_label] += 1;
            for (s, p) in prob_sum.iter_mut().zip(&r.probs) {
                *s += p;
            }
        }
        let mut winner = 0;
        for c in 1..n_classes {
            if (votes[c], prob_sum[c]) > (votes[winner], prob_sum[winner]) {
                winner = c;
            }
        }
        let n = group.len() as f64;
        out.push(PredictionRecord {
            segment_id: track.to_string(),
            track_id: track.to_string(),
            true_label,
            pred_label: winner,
            probs: prob_sum.into_iter().map(|s| s / n).collect(),
        });
    }
    Ok(out)
}

/// Metrics over records as given (segment level) or after [`song_vote`] (song level).
pub fn evaluate(records: &[PredictionRecord], n_classes: usize, level: Level) -> Result<EvalReport> {
    if records.is_empty() {
        return Err(Error::Empty("no records to evaluate".into()));
    }
    let voted;
    let items = match level {
        Level::Segment => records,
        Level::Song => {
            voted = song_vote(records)?;
            &voted[..]
        }
    };
    let cm = confusion(items, n_classes)?;
    let per_class = per_class_metrics(&cm);
    let m = macro_metrics(&per_class);
    Ok(EvalReport {
        level,
        n_classes,
        n_items: items.len(),
        macro_: MacroMetrics {
            accuracy: m.accuracy,
            precision: m.precision,
            recall: m.recall,
            f1: m.f1,
            multiclass_accuracy: cm.trace() as f64 / cm.total() as f64,
        },
        per_class,
        confusion: cm.counts,
    })
}

/// `segment_id,track_id,true_label,pred_label,p0,p1,...` with probabilities to 6 decimals.
pub fn write_predictions_csv(records: &[PredictionRecord], n_classes: usize, writer: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = ["segment_id", "track_id", "true_label", "pred_label"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend((0..n_classes).map(|c| format!("p{c}")));
    w.write_record(&header)?;
    for r in records {
        if r.probs.len() != n_classes {
            return Err(Error::Shape(format!("record `{}` has {} probabilities", r.segment_id, r.probs.len())));
        }
        let mut row = vec![
            r.segment_id.clone(),
            r.track_id.clone(),
            r.true_label.to_string(),
            r.pred_label.to_string(),
        ];
        row.extend(r.probs.iter().map(|p| format!("{p:.6}")));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io("<predictions csv>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rec(track: &str, seg: usize, truth: usize, pred: usize, probs: Vec<f64>) -> PredictionRecord {
        PredictionRecord {
            segment_id: format!("{track}@{seg}"),
            track_id: track.into(),
            true_label: truth,
            pred_label: pred,
            probs,
        }
    }

    fn onehot(n: usize, c: usize) -> Vec<f64> {
        (0..n).map(|i| if i == c { 1.0 } else { 0.0 }).collect()
    }

    fn hand_example() -> ConfusionMatrix {
        ConfusionMatrix::from_pairs(3, [(0, 0), (1, 1), (2, 1), (2, 2)]).unwrap()
    }

    #[test]
    fn confusion_counts() {
        let cm = hand_example();
        assert_eq!(cm.get(2, 1), 1);
        assert_eq!((cm.get(0, 0), cm.get(1, 1), cm.get(2, 2)), (1, 1, 1));
        assert_eq!(cm.total(), 4);
        assert_eq!(cm.counts().iter().filter(|&&c| c == 0).count(), 5);
        assert!(matches!(
            ConfusionMatrix::from_pairs(3, [(0, 3)]),
            Err(Error::LabelOutOfRange { label: 3, .. })
        ));
    }

    #[test]
    fn hand_metrics() {
        let pc = per_class_metrics(&hand_example());
        assert_eq!(pc[0].f1, 1.0);
        assert_eq!((pc[1].precision, pc[1].recall), (0.5, 1.0));
        assert_eq!((pc[2].precision, pc[2].recall), (1.0, 0.5));
        for c in [1, 2] {
            assert!((pc[c].f1 - 2.0 / 3.0).abs() < 1e-15);
        }
        // class 1: tp 1, fp 1, fn 0, tn 2
        assert_eq!(pc[1].accuracy, 0.75);
        let m = macro_metrics(&pc);
        let oracle = (1.0 + 2.0 / 3.0 + 2.0 / 3.0) / 3.0;
        assert!((m.f1 - oracle).abs() < 1e-12);
        assert!((m.f1 - 7.0 / 9.0).abs() < 1e-12);
    }

    #[test]
    fn absent_class_convention() {
        let cm = ConfusionMatrix::from_pairs(3, [(0, 0), (1, 1)]).unwrap();
        let pc = per_class_metrics(&cm);
        assert_eq!(pc[2], ClassMetrics { accuracy: 1.0, precision: 0.0, recall: 0.0, f1: 0.0 });
    }

    #[test]
    fn diagonal_is_perfect() {
        let cm = ConfusionMatrix::from_pairs(4, (0..4).flat_map(|c| [(c, c), (c, c)])).unwrap();
        let m = macro_metrics(&per_class_metrics(&cm));
        assert_eq!(m, ClassMetrics { accuracy: 1.0, precision: 1.0, recall: 1.0, f1: 1.0 });
    }

    #[test]
    fn macro_of_identical_values() {
        let v = ClassMetrics { accuracy: 0.3, precision: 0.7, recall: 0.1, f1: 0.2 };
        let m = macro_metrics(&[v; 5]);
        for (a, b) in [(m.accuracy, 0.3), (m.precision, 0.7), (m.recall, 0.1), (m.f1, 0.2)] {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn plurality_vote() {
        let rs = vec![
            rec("t", 0, 0, 0, onehot(2, 0)),
            rec("t", 1, 0, 0, onehot(2, 0)),
            rec("t", 2, 0, 1, onehot(2, 1)),
        ];
        assert_eq!(song_vote(&rs).unwrap()[0].pred_label, 0);
    }

    #[test]
    fn tie_broken_by_probability_mass() {
        let rs = vec![rec("t", 0, 0, 0, vec![0.9, 0.1]), rec("t", 1, 0, 1, vec![0.5, 0.5 + 1e-9])];
        // mass: class0 1.4, class1 ~0.6
        assert_eq!(song_vote(&rs).unwrap()[0].pred_label, 0);
        let rs = vec![rec("t", 0, 0, 0, vec![0.6, 0.4]), rec("t", 1, 0, 1, vec![0.1, 0.9])];
        assert_eq!(song_vote(&rs).unwrap()[0].pred_label, 1);
        let rs = vec![rec("t", 0, 0, 0, vec![0.5, 0.5]), rec("t", 1, 0, 1, vec![0.5, 0.5])];
        assert_eq!(song_vote(&rs).unwrap()[0].pred_label, 0, "lowest index");
    }

    #[test]
    fn song_records_one_per_track() {
        let rs: Vec<_> = (0..12).map(|i| rec(&format!("t{}", i % 4), i, i % 2, i % 2, onehot(2, i % 2))).collect();
        let songs = song_vote(&rs).unwrap();
        assert_eq!(songs.len(), 4);
        assert_eq!(evaluate(&rs, 2, Level::Song).unwrap().n_items, 4);
        let r = evaluate(&rs, 2, Level::Segment).unwrap();
        assert_eq!(r.n_items, 12);
        assert_eq!(r.macro_.f1, 1.0);
    }

    #[test]
    fn empty_inputs() {
        assert!(matches!(song_vote(&[]), Err(Error::Empty(_))));
        assert!(matches!(evaluate(&[], 3, Level::Segment), Err(Error::Empty(_))));
    }

    #[test]
    fn mixed_track_labels_rejected() {
        let rs = vec![rec("t", 0, 0, 0, onehot(2, 0)), rec("t", 1, 1, 0, onehot(2, 0))];
        assert!(song_vote(&rs).is_err());
    }

    #[test]
    fn report_json_keys() {
        let rs = vec![rec("a", 0, 0, 0, onehot(2, 0)), rec("b", 0, 1, 0, onehot(2, 0))];
        let report = evaluate(&rs, 2, Level::Segment).unwrap();
        let json = report.to_json().unwrap();
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(v["level"], "segment");
        assert_eq!(v["macro"]["multiclass_accuracy"], 0.5);
        assert_eq!(v["confusion"], serde_json::json!([1, 0, 1, 0]));
        assert_eq!(v["per_class"].as_array().unwrap().len(), 2);
        assert_eq!(EvalReport::from_json(&json).unwrap(), report);
    }

    #[test]
    fn predictions_csv_format() {
        let rs = vec![rec("a", 0, 1, 0, vec![0.25, 0.75])];
        let mut buf = Vec::new();
        write_predictions_csv(&rs, 2, &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "segment_id,track_id,true_label,pred_label,p0,p1\na@0,a,1,0,0.250000,0.750000\n"
        );
    }

    #[test]
    fn confusion_csv_has_names() {
        let mut buf = Vec::new();
        hand_example()
            .write_csv(&["x".into(), "y".into(), "z".into()], &mut buf)
            .unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert_eq!(s.lines().next().unwrap(), "truth\\pred,x,y,z");
        assert_eq!(s.lines().nth(3).unwrap(), "z,0,1,1");
    }

    #[test]
    fn from_logits_softmax() {
        let r = PredictionRecord::from_logits("s", "t", 0, &[1000.0, 1000.0, 0.0]);
        assert_eq!(r.pred_label, 0);
        assert!((r.probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((r.probs[0] - 0.5).abs() < 1e-12);
    }

    fn random_records() -> impl Strategy<Value = (usize, Vec<(usize, usize, usize, Vec<f64>)>)> {
        (2usize..6).prop_flat_map(|n| {
            let rec = (0usize..5, 0..n, 0..n, proptest::collection::vec(0.0f64..1.0, n));
            (Just(n), proptest::collection::vec(rec, 1..60))
        })
    }

    proptest! {
        #[test]
        fn confusion_identities((n, raw) in random_records()) {
            let cm = ConfusionMatrix::from_pairs(n, raw.iter().map(|r| (r.1, r.2))).unwrap();
            prop_assert_eq!(cm.total() as usize, raw.len());
            for c in 0..n {
                let b = cm.one_vs_rest(c);
                prop_assert_eq!(b.tp + b.fp + b.fn_ + b.tn, cm.total());
                prop_assert_eq!(cm.row_sum(c) as usize, raw.iter().filter(|r| r.1 == c).count());
                let m = b.metrics();
                for v in [m.accuracy, m.precision, m.recall, m.f1] {
                    prop_assert!((0.0..=1.0).contains(&v));
                }
            }
        }

        #[test]
        fn binary_macro_is_mean_of_two_binary_runs(raw in proptest::collection::vec((0usize..2, 0usize..2), 1..80)) {
            let cm = ConfusionMatrix::from_pairs(2, raw.iter().copied()).unwrap();
            let m = macro_metrics(&per_class_metrics(&cm));
            // independent binary evaluations with each class as positive
            let binary = |pos: usize| {
                let (mut tp, mut fp, mut fn_, mut tn) = (0.0, 0.0, 0.0, 0.0);
                for &(t, p) in &raw {
                    match (t == pos, p == pos) {
                        (true, true) => tp += 1.0,
                        (false, true) => fp += 1.0,
                        (true, false) => fn_ += 1.0,
                        (false, false) => tn += 1.0,
                    }
                }
                let pr: f64 = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
                let rc: f64 = if tp + fn_ > 0.0 { tp / (tp + fn_) } else { 0.0 };
                let f1 = if pr + rc > 0.0 { 2.0 * pr * rc / (pr + rc) } else { 0.0 };
                ((tp + tn) / (tp + fp + fn_ + tn), pr, rc, f1)
            };
            let (a, b) = (binary(0), binary(1));
            prop_assert!((m.accuracy - (a.0 + b.0) / 2.0).abs() < 1e-12);
            prop_assert!((m.precision - (a.1 + b.1) / 2.0).abs() < 1e-12);
            prop_assert!((m.recall - (a.2 + b.2) / 2.0).abs() < 1e-12);
            prop_assert!((m.f1 - (a.3 + b.3) / 2.0).abs() < 1e-12);
        }

        #[test]
        fn vote_is_permutation_invariant((n, raw) in random_records(), shift in 0usize..60) {
            let mut rs: Vec<PredictionRecord> = raw
                .iter()
                .enumerate()
                .map(|(i, (t, _, p, probs))| rec(&format!("t{t}"), i, *t % n, *p, probs.clone()))
                .collect();
            let a = song_vote(&rs).unwrap();
            rs.reverse();
            let k = shift % rs.len();
            rs.rotate_left(k);
            prop_assert_eq!(song_vote(&rs).unwrap(), a);
        }
    }
}
