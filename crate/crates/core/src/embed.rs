//! Bottleneck embeddings and exact t-SNE projection to 2-D.

use std::collections::BTreeMap;
use std::io::Write;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::audio::Segment;
use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Granularity {
    #[default]
    Segment,
    /// Mean of a track's segment vectors.
    Track,
}

impl FromStr for Granularity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "segment" => Ok(Granularity::Segment),
            "track" => Ok(Granularity::Track),
            other => Err(Error::Config(format!("unknown granularity `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct EmbeddingSet {
    pub points: Vec<Vec<f32>>,
    pub labels: Vec<usize>,
    pub ids: Vec<String>,
}

impl EmbeddingSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points_f64(&self) -> Vec<Vec<f64>> {
        self.points
            .iter()
            .map(|p| p.iter().map(|&v| v as f64).collect())
            .collect()
    }
}

/// One bottleneck (logit) vector per segment, or per track when averaging.
pub fn extract_embeddings(
    checkpoint: &Checkpoint,
    segments: &[Segment],
    n_classes: usize,
    granularity: Granularity,
) -> Result<EmbeddingSet> {
    checkpoint.expect_classes(n_classes)?;
    let model = &checkpoint.model;
    let vectors: Vec<Vec<f32>> = segments
        .par_iter()
        .map(|s| {
            let features = model.features(&model.segment_tensor(&s.samples)?)?;
            Ok(model.head.bottleneck(&s.id(), &features)?.values)
        })
        .collect::<Result<_>>()?;
    match granularity {
        Granularity::Segment => Ok(EmbeddingSet {
            labels: segments.iter().map(|s| s.label).collect(),
            ids: segments.iter().map(Segment::id).collect(),
            points: vectors,
        }),
        Granularity::Track => {
            let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
            for (i, s) in segments.iter().enumerate() {
                groups.entry(&s.parent_track_id).or_default().push(i);
            }
            let mut set = EmbeddingSet::default();
            for (track, mut idx) in groups {
                idx.sort_by_key(|&i| segments[i].offset);
                let mut mean = vec![0.0f64; n_classes];
                for &i in &idx {
                    for (m, &v) in mean.iter_mut().zip(&vectors[i]) {
                        *m += v as f64;
                    }
                }
                set.points.push(mean.iter().map(|&m| (m / idx.len() as f64) as f32).collect());
                set.labels.push(segments[idx[0]].label);
                set.ids.push(track.to_string());
            }
            Ok(set)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub early_exaggeration: f64,
    pub exaggeration_iters: usize,
    pub initial_momentum: f64,
    pub final_momentum: f64,
    pub momentum_switch_iter: usize,
    pub seed: u64,
}

impl Default for TsneConfig {
    fn default() -> Self {
        Self {
            perplexity: 30.0,
            iterations: 1000,
            learning_rate: 100.0,
            early_exaggeration: 4.0,
            exaggeration_iters: 100,
            initial_momentum: 0.5,
            final_momentum: 0.8,
            momentum_switch_iter: 250,
            seed: 0,
        }
    }
}

impl TsneConfig {
    /// Largest perplexity accepted for `m` points is just under `m / 3`.
    pub fn feasible(&self, m: usize) -> bool {
        self.perplexity > 1.0 && self.perplexity < m as f64 / 3.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TsneResult {
    pub coords: Vec<[f64; 2]>,
    pub initial_kl: f64,
    pub final_kl: f64,
    /// |H(P_i) - log2(perplexity)| in bits, per point.
    pub entropy_errors: Vec<f64>,
}

const ENTROPY_TOL: f64 = 1e-5;
const MAX_BISECTIONS: usize = 200;

fn squared_distances(x: &[Vec<f64>]) -> Vec<f64> {
    let m = x.len();
    let mut d = vec![0.0; m * m];
    d.par_chunks_mut(m).enumerate().for_each(|(i, row)| {
        for (j, out) in row.iter_mut().enumerate() {
            *out = x[i].iter().zip(&x[j]).map(|(a, b)| (a - b) * (a - b)).sum();
        }
    });
    d
}

/// Conditional distribution of row `i` at precision `beta`, with its entropy in bits.
fn conditional_row(dist: &[f64], i: usize, beta: f64, out: &mut [f64]) -> f64 {
    let d_min = dist
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(_, &v)| v)
        .fold(f64::INFINITY, f64::min);
    let mut sum = 0.0;
    let mut weighted = 0.0;
    for (j, (&d, p)) in dist.iter().zip(out.iter_mut()).enumerate() {
        if j == i {
            *p = 0.0;
            continue;
        }
        let shifted = d - d_min;
        *p = (-beta * shifted).exp();
        sum += *p;
        weighted += *p * shifted;
    }
    for p in out.iter_mut() {
        *p /= sum;
    }
    (sum.ln() + beta * weighted / sum) / std::f64::consts::LN_2
}

/// Row-normalized affinities whose entropies match `log2(perplexity)`.
pub fn conditional_affinities(dist: &[f64], m: usize, perplexity: f64) -> (Vec<f64>, Vec<f64>) {
    let target = perplexity.log2();
    let mut p = vec![0.0; m * m];
    let errors: Vec<f64> = p
        .par_chunks_mut(m)
        .enumerate()
        .map(|(i, row)| {
            let drow = &dist[i * m..(i + 1) * m];
            let (mut lo, mut hi) = (0.0f64, f64::INFINITY);
            let mut beta = 1.0;
            let mut h = conditional_row(drow, i, beta, row);
            for _ in 0..MAX_BISECTIONS {
                if (h - target).abs() < ENTROPY_TOL {
                    break;
                }
                // entropy falls as beta grows
                if h > target {
                    lo = beta;
                    beta = if hi.is_finite() { (beta + hi) / 2.0 } else { beta * 2.0 };
                } else {
                    hi = beta;
                    beta = (beta + lo) / 2.0;
                }
                h = conditional_row(drow, i, beta, row);
            }
            (h - target).abs()
        })
        .collect();
    (p, errors)
}

/// Symmetric joint affinities `(P_{j|i} + P_{i|j}) / 2M`.
pub fn joint_affinities(cond: &[f64], m: usize) -> Vec<f64> {
    let mut p = vec![0.0; m * m];
    for i in 0..m {
        for j in 0..m {
            p[i * m + j] = (cond[i * m + j] + cond[j * m + i]) / (2.0 * m as f64);
        }
    }
    p
}

/// Student-t kernel values `1 / (1 + |y_i - y_j|^2)` (zero diagonal) and their sum.
fn student_t(y: &[[f64; 2]]) -> (Vec<f64>, f64) {
    let m = y.len();
    let mut num = vec![0.0; m * m];
    let row_sums: Vec<f64> = num
        .par_chunks_mut(m)
        .enumerate()
        .map(|(i, row)| {
            let mut s = 0.0;
            for (j, v) in row.iter_mut().enumerate() {
                if i != j {
                    let dx = y[i][0] - y[j][0];
                    let dy = y[i][1] - y[j][1];
                    *v = 1.0 / (1.0 + dx * dx + dy * dy);
                    s += *v;
                }
            }
            s
        })
        .collect();
    (num, row_sums.iter().sum())
}

pub fn kl_divergence(p: &[f64], y: &[[f64; 2]]) -> f64 {
    let (num, z) = student_t(y);
    p.iter()
        .zip(&num)
        .filter(|(&pij, _)| pij > 0.0)
        .map(|(&pij, &n)| pij * (pij / (n / z).max(f64::MIN_POSITIVE)).ln())
        .sum()
}

fn center(y: &mut [[f64; 2]]) {
    let m = y.len() as f64;
    let mean = y.iter().fold([0.0, 0.0], |a, p| [a[0] + p[0], a[1] + p[1]]);
    let mean = [mean[0] / m, mean[1] / m];
    for p in y.iter_mut() {
        p[0] -= mean[0];
        p[1] -= mean[1];
    }
}

/// Exact O(M^2) t-SNE with early exaggeration, momentum, and per-coordinate gains.
pub fn tsne(points: &[Vec<f64>], cfg: &TsneConfig) -> Result<TsneResult> {
    let m = points.len();
    if m == 0 {
        return Err(Error::Tsne("no points to embed".into()));
    }
    if m == 1 {
        return Ok(TsneResult {
            coords: vec![[0.0, 0.0]],
            initial_kl: 0.0,
            final_kl: 0.0,
            entropy_errors: vec![0.0],
        });
    }
    if m < 4 {
        return Err(Error::Tsne(format!("need at least 4 points, got {m}")));
    }
    if !cfg.feasible(m) {
        return Err(Error::Tsne(format!(
            "perplexity {} infeasible for {m} points (need 1 < perplexity < {:.3})",
            cfg.perplexity,
            m as f64 / 3.0
        )));
    }
    let dim = points[0].len();
    if points.iter().any(|p| p.len() != dim || p.iter().any(|v| !v.is_finite())) {
        return Err(Error::Tsne("points must be finite and of equal dimension".into()));
    }

    let dist = squared_distances(points);
    let (cond, entropy_errors) = conditional_affinities(&dist, m, cfg.perplexity);
    let p = joint_affinities(&cond, m);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut y: Vec<[f64; 2]> = (0..m)
        .map(|_| {
            let a: f64 = StandardNormal.sample(&mut rng);
            let b: f64 = StandardNormal.sample(&mut rng);
            [1e-4 * a, 1e-4 * b]
        })
        .collect();
    center(&mut y);
    let initial_kl = kl_divergence(&p, &y);

    let mut update = vec![[0.0f64; 2]; m];
    let mut gains = vec![[1.0f64; 2]; m];
    let mut grad = vec![[0.0f64; 2]; m];
    for iter in 0..cfg.iterations {
        let exaggeration = if iter < cfg.exaggeration_iters { cfg.early_exaggeration } else { 1.0 };
        let momentum = if iter < cfg.momentum_switch_iter { cfg.initial_momentum } else { cfg.final_momentum };
        let (num, z) = student_t(&y);
        grad.par_iter_mut().enumerate().for_each(|(i, g)| {
            let mut acc = [0.0, 0.0];
            for j in 0..m {
                if i == j {
                    continue;
                }
                let n = num[i * m + j];
                let w = (exaggeration * p[i * m + j] - n / z) * n;
                acc[0] += w * (y[i][0] - y[j][0]);
                acc[1] += w * (y[i][1] - y[j][1]);
            }
            *g = [4.0 * acc[0], 4.0 * acc[1]];
        });
        for i in 0..m {
            for k in 0..2 {
                let same_sign = (grad[i][k] > 0.0) == (update[i][k] > 0.0);
                gains[i][k] = if same_sign { gains[i][k] * 0.8 } else { gains[i][k] + 0.2 };
                gains[i][k] = gains[i][k].max(0.01);
                update[i][k] = momentum * update[i][k] - cfg.learning_rate * gains[i][k] * grad[i][k];
                y[i][k] += update[i][k];
            }
        }
        center(&mut y);
    }
    let final_kl = kl_divergence(&p, &y);
    if !final_kl.is_finite() || y.iter().any(|c| !c[0].is_finite() || !c[1].is_finite()) {
        return Err(Error::Tsne("optimization diverged".into()));
    }
    Ok(TsneResult {
        coords: y,
        initial_kl,
        final_kl,
        entropy_errors,
    })
}

pub const EMBEDDING_HEADER: [&str; 5] = ["id", "label", "artist", "x", "y"];

/// `id,label,artist,x,y` with coordinates to 6 decimals.
pub fn write_embedding_csv(
    coords: &[[f64; 2]],
    labels: &[usize],
    ids: &[String],
    classes: &[String],
    writer: impl Write,
) -> Result<()> {
    if coords.len() != labels.len() || coords.len() != ids.len() {
        return Err(Error::Shape(format!(
            "{} coordinates, {} labels, {} ids",
            coords.len(),
            labels.len(),
            ids.len()
        )));
    }
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(EMBEDDING_HEADER)?;
    for ((c, &label), id) in coords.iter().zip(labels).zip(ids) {
        let artist = classes.get(label).ok_or(Error::LabelOutOfRange {
            label,
            n_classes: classes.len(),
        })?;
        w.write_record([
            id.clone(),
            label.to_string(),
            artist.clone(),
            format!("{:.6}", c[0]),
            format!("{:.6}", c[1]),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<embedding csv>", e))?;
    Ok(())
}

pub fn export_embedding_csv(
    coords: &[[f64; 2]],
    labels: &[usize],
    ids: &[String],
    classes: &[String],
    path: impl AsRef<std::path::Path>,
) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_embedding_csv(coords, labels, ids, classes, std::io::BufWriter::new(file))
}
