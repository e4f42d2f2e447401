//! Ranking of last-hidden-layer features and their expansion into
//! input-space connectivity patterns.
//!
//! For two classes the score difference decomposes exactly as
//! `S(0) - S(1) = Σ_j diff_j · A_j + (b_0 - b_1)` with
//! `diff_j = w_{0,j} - w_{1,j}`, so `|diff_j|` measures how much neuron `j`
//! can move the decision. Neurons with `diff > 0` vote for class 0, the others
//! for class 1.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::connectivity::{nodes_for_dim, ConnectivityMatrix, FeatureSet};
use crate::error::{Error, Result};
use crate::network::{softmax, DropoutMasks, Network, Prediction};
use crate::table::{Cell, Table};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankedFeature {
    pub neuron_index: usize,
    /// `w_{0,j} - w_{1,j}` on the softmax layer.
    pub diff: f64,
    pub magnitude: f64,
    pub assigned_class: usize,
    /// 1-based.
    pub rank_within_class: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRanking {
    pub class0: Vec<RankedFeature>,
    pub class1: Vec<RankedFeature>,
}

impl FeatureRanking {
    pub fn class(&self, class: usize) -> &[RankedFeature] {
        if class == 0 {
            &self.class0
        } else {
            &self.class1
        }
    }

    /// Neurons in the top `k` of each class (all of a class if it has fewer).
    pub fn top_pairs(&self, k: usize) -> BTreeSet<usize> {
        for (c, list) in [&self.class0, &self.class1].iter().enumerate() {
            if list.len() < k {
                log::info!(
                    "class {c} has {} ranked neurons, fewer than {k}; using all",
                    list.len()
                );
            }
        }
        self.class0
            .iter()
            .take(k)
            .chain(self.class1.iter().take(k))
            .map(|f| f.neuron_index)
            .collect()
    }

    pub fn to_table(&self) -> Table {
        let mut t = Table::new(["class", "rank", "neuron", "diff", "magnitude"]);
        for f in self.class0.iter().chain(&self.class1) {
            t.push(vec![
                f.assigned_class.into(),
                f.rank_within_class.into(),
                f.neuron_index.into(),
                f.diff.into(),
                f.magnitude.into(),
            ]);
        }
        t
    }
}

/// Ranks last-hidden-layer neurons by `|w_{0,j} - w_{1,j}|`, descending, ties
/// by neuron index. Zero-diff neurons go to class 0 and land last.
pub fn rank_features(net: &Network) -> Result<FeatureRanking> {
    if net.spec().n_classes != 2 {
        return Err(Error::Unsupported(format!(
            "feature ranking needs exactly two classes, network has {}",
            net.spec().n_classes
        )));
    }
    if net.spec().n_hidden() == 0 {
        return Err(Error::Unsupported("network has no hidden layer".into()));
    }
    let w = net.weights().last().expect("readout layer");
    let mut all: Vec<(usize, f64)> = (0..w.ncols()).map(|j| (j, w[(0, j)] - w[(1, j)])).collect();
    all.sort_by(|a, b| b.1.abs().total_cmp(&a.1.abs()).then(a.0.cmp(&b.0)));

    let mut ranking = FeatureRanking {
        class0: Vec::new(),
        class1: Vec::new(),
    };
    for (j, diff) in all {
        let class = if diff >= 0.0 { 0 } else { 1 };
        let list = if class == 0 {
            &mut ranking.class0
        } else {
            &mut ranking.class1
        };
        list.push(RankedFeature {
            neuron_index: j,
            diff,
            magnitude: diff.abs(),
            assigned_class: class,
            rank_within_class: list.len() + 1,
        });
    }
    Ok(ranking)
}

/// Which lower-level connections an expansion follows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExpansionPolicy {
    All,
    /// Keep weights with `|w| >= t`.
    MagnitudeThreshold(f64),
    /// Keep the `k` largest `|w|` of each expanded neuron (ties by index).
    TopK(usize),
}

impl fmt::Display for ExpansionPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExpansionPolicy::All => write!(f, "all"),
            ExpansionPolicy::MagnitudeThreshold(t) => write!(f, "threshold:{t}"),
            ExpansionPolicy::TopK(k) => write!(f, "top:{k}"),
        }
    }
}

impl FromStr for ExpansionPolicy {
    type Err = Error;

    /// `all`, `threshold:<t>` or `top:<k>`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || {
            Error::InvalidArgument(format!(
                "bad expansion policy {s:?} (all | threshold:T | top:K)"
            ))
        };
        match s.split_once(':') {
            None if s == "all" => Ok(Self::All),
            Some(("threshold", t)) => {
                let t: f64 = t.parse().map_err(|_| bad())?;
                if !(t.is_finite() && t >= 0.0) {
                    return Err(bad());
                }
                Ok(Self::MagnitudeThreshold(t))
            }
            Some(("top", k)) => Ok(Self::TopK(k.parse().map_err(|_| bad())?)),
            _ => Err(bad()),
        }
    }
}

impl ExpansionPolicy {
    fn keep_mask(&self, row: ndarray::ArrayView1<'_, f64>) -> Vec<bool> {
        match *self {
            ExpansionPolicy::All => vec![true; row.len()],
            ExpansionPolicy::MagnitudeThreshold(t) => row.iter().map(|w| w.abs() >= t).collect(),
            ExpansionPolicy::TopK(k) => {
                let mut idx: Vec<usize> = (0..row.len()).collect();
                idx.sort_by(|&a, &b| row[b].abs().total_cmp(&row[a].abs()).then(a.cmp(&b)));
                let mut keep = vec![false; row.len()];
                for &j in idx.iter().take(k) {
                    keep[j] = true;
                }
                keep
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternSource {
    /// 1-based hidden layer.
    pub layer: usize,
    pub neuron: usize,
    pub policy: ExpansionPolicy,
    /// `+1` if the neuron votes for class 0, `-1` for class 1. Multiplying the
    /// vector by it points every pattern in the class-0-minus-class-1 direction.
    pub orientation: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InputPattern {
    pub vector: Vec<f64>,
    pub source: PatternSource,
}

impl InputPattern {
    /// The vector as a symmetric connectivity matrix (zero diagonal).
    pub fn matrix_view(&self) -> Result<ConnectivityMatrix> {
        let n = nodes_for_dim(self.vector.len()).ok_or_else(|| {
            Error::InvalidInput(format!(
                "pattern length {} is not n(n-1)/2 for any n",
                self.vector.len()
            ))
        })?;
        ConnectivityMatrix::devectorize(&self.vector, n)
    }

    pub fn oriented(&self) -> Vec<f64> {
        self.vector
            .iter()
            .map(|v| v * self.source.orientation)
            .collect()
    }
}

/// Expands hidden neuron `neuron` of hidden layer `layer` (1-based) into input
/// space: `F¹_k` is row `k` of the first weight matrix and
/// `F^{l+1}_k = Σ_{j∈J} w_{k,j} F^l_j`, with `J` chosen by `policy` at every
/// level. The orientation is `+1`; see [`back_project_ranked`].
pub fn back_project(
    net: &Network,
    layer: usize,
    neuron: usize,
    policy: ExpansionPolicy,
) -> Result<InputPattern> {
    let n_hidden = net.spec().n_hidden();
    if layer == 0 || layer > n_hidden {
        return Err(Error::InvalidArgument(format!(
            "layer {layer} outside 1..={n_hidden}"
        )));
    }
    let width = net.spec().hidden_sizes[layer - 1];
    if neuron >= width {
        return Err(Error::InvalidArgument(format!(
            "neuron {neuron} outside layer {layer} of width {width}"
        )));
    }

    // Coefficients over the neurons of the current level, and which of them
    // the expansion actually reaches.
    let mut coef = vec![0.0; width];
    coef[neuron] = 1.0;
    let mut reached = vec![false; width];
    reached[neuron] = true;

    for level in (2..=layer).rev() {
        let w = &net.weights()[level - 1];
        let mut next = vec![0.0; w.ncols()];
        let mut next_reached = vec![false; w.ncols()];
        for k in (0..w.nrows()).filter(|&k| reached[k]) {
            let row = w.row(k);
            let keep = policy.keep_mask(row);
            if !keep.iter().any(|&b| b) {
                return Err(Error::EmptySelection {
                    layer: level,
                    neuron: k,
                });
            }
            for (j, (&wkj, &kept)) in row.iter().zip(&keep).enumerate() {
                if kept {
                    next[j] += coef[k] * wkj;
                    next_reached[j] = true;
                }
            }
        }
        coef = next;
        reached = next_reached;
    }

    let first = &net.weights()[0];
    let mut vector = vec![0.0; first.ncols()];
    for (j, c) in coef.iter().enumerate().filter(|&(j, _)| reached[j]) {
        for (v, w) in vector.iter_mut().zip(first.row(j)) {
            *v += c * w;
        }
    }
    Ok(InputPattern {
        vector,
        source: PatternSource {
            layer,
            neuron,
            policy,
            orientation: 1.0,
        },
    })
}

/// [`back_project`] for a ranked last-layer feature, oriented by its diff.
pub fn back_project_ranked(
    net: &Network,
    feature: &RankedFeature,
    policy: ExpansionPolicy,
) -> Result<InputPattern> {
    let mut p = back_project(net, net.spec().n_hidden(), feature.neuron_index, policy)?;
    p.source.orientation = if feature.diff >= 0.0 { 1.0 } else { -1.0 };
    Ok(p)
}

/// How many feature pairs a truncated prediction keeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KPairs {
    All,
    Top(usize),
}

impl fmt::Display for KPairs {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KPairs::All => write!(f, "all"),
            KPairs::Top(k) => write!(f, "{k}"),
        }
    }
}

/// Class probabilities for each row of `x` when only the last-hidden-layer
/// neurons in `keep` contribute (`None` keeps all). Readout biases stay.
pub fn masked_readout(
    net: &Network,
    x: ArrayView2<'_, f64>,
    keep: Option<&BTreeSet<usize>>,
) -> Result<Array2<f64>> {
    if x.ncols() != net.spec().input_dim {
        return Err(Error::DimensionMismatch {
            expected: net.spec().input_dim,
            actual: x.ncols(),
        });
    }
    if net.spec().n_hidden() == 0 {
        return Err(Error::Unsupported("network has no hidden layer".into()));
    }
    let f = net.forward_batch(x, &DropoutMasks::weight_average(net.spec()));
    let mut last = f.passed.last().expect("hidden layer").clone();
    if let Some(keep) = keep {
        for (j, mut col) in last.axis_iter_mut(Axis(1)).enumerate() {
            if !keep.contains(&j) {
                col.fill(0.0);
            }
        }
    }
    Ok(net.readout(last.view()).1)
}

fn keep_set(net: &Network, k: KPairs) -> Result<Option<BTreeSet<usize>>> {
    match k {
        KPairs::All => Ok(None),
        KPairs::Top(0) => Err(Error::InvalidArgument("k_pairs must be >= 1".into())),
        KPairs::Top(k) => Ok(Some(rank_features(net)?.top_pairs(k))),
    }
}

/// Prediction from the top `k` class-0 and top `k` class-1 features only.
pub fn truncated_predict(net: &Network, x: &[f64], k: KPairs) -> Result<Prediction> {
    let keep = keep_set(net, k)?;
    let xb = ArrayView2::from_shape((1, x.len()), x).expect("row view");
    let probs = masked_readout(net, xb, keep.as_ref())?;
    Ok(Prediction::from_probs(probs.row(0).to_vec()))
}

/// Accuracy and mean cross-entropy of truncated predictions over a set.
pub fn truncated_metrics(net: &Network, data: &FeatureSet, k: KPairs) -> Result<(f64, f64)> {
    let keep = keep_set(net, k)?;
    let probs = masked_readout(net, data.inputs.view(), keep.as_ref())?;
    Ok((
        accuracy_of(&probs, &data.labels),
        Network::cross_entropy(&probs, &data.labels),
    ))
}

/// Mean cross-entropy (no penalty) when only the `rank`-th class-0 and the
/// `rank`-th class-1 neuron contribute.
pub fn pair_loss(net: &Network, data: &FeatureSet, rank: usize) -> Result<f64> {
    if rank == 0 {
        return Err(Error::InvalidArgument("rank is 1-based".into()));
    }
    let r = rank_features(net)?;
    let (Some(a), Some(b)) = (r.class0.get(rank - 1), r.class1.get(rank - 1)) else {
        return Err(Error::InvalidArgument(format!(
            "rank {rank} exceeds ranked features ({} class 0, {} class 1)",
            r.class0.len(),
            r.class1.len()
        )));
    };
    let keep = BTreeSet::from([a.neuron_index, b.neuron_index]);
    let probs = masked_readout(net, data.inputs.view(), Some(&keep))?;
    Ok(Network::cross_entropy(&probs, &data.labels))
}

pub(crate) fn accuracy_of(probs: &Array2<f64>, labels: &[usize]) -> f64 {
    let correct = probs
        .rows()
        .into_iter()
        .zip(labels)
        .filter(|(row, &y)| crate::network::argmax(row.as_slice().expect("contiguous")) == y)
        .count();
    correct as f64 / labels.len() as f64
}

/// `S(0) - S(1)` rebuilt from the ranking identity, for checking.
pub fn score_difference_from_features(net: &Network, x: &[f64]) -> Result<f64> {
    let a = net.forward(x, crate::network::ForwardMode::Deterministic)?;
    let w = net.weights().last().expect("readout");
    let b = net.biases().last().expect("readout");
    let last = a
        .passed
        .last()
        .ok_or_else(|| Error::Unsupported("no hidden layer".into()))?;
    let sum: f64 = (0..w.ncols())
        .map(|j| (w[(0, j)] - w[(1, j)]) * last[j])
        .sum();
    Ok(sum + (b[0] - b[1]))
}

/// Pearson correlation of two vectors; `None` if either has zero variance.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return None;
    }
    Some((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

/// All unordered pairwise correlations `(i, j)`, `i < j`, in row-major pair
/// order. With `align`, each pattern is first multiplied by its orientation.
pub fn feature_correlation(patterns: &[InputPattern], align: bool) -> Result<Vec<Option<f64>>> {
    if patterns.len() < 2 {
        return Err(Error::InsufficientData("need at least two patterns".into()));
    }
    let len = patterns[0].vector.len();
    if let Some(p) = patterns.iter().find(|p| p.vector.len() != len) {
        return Err(Error::DimensionMismatch {
            expected: len,
            actual: p.vector.len(),
        });
    }
    let vecs: Vec<Vec<f64>> = patterns
        .iter()
        .map(|p| {
            if align {
                p.oriented()
            } else {
                p.vector.clone()
            }
        })
        .collect();
    let mut out = Vec::with_capacity(vecs.len() * (vecs.len() - 1) / 2);
    for i in 0..vecs.len() {
        for j in i + 1..vecs.len() {
            out.push(pearson(&vecs[i], &vecs[j]));
        }
    }
    Ok(out)
}

/// Distribution of the defined correlations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationSummary {
    pub n_patterns: usize,
    pub n_pairs: usize,
    pub n_undefined: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

impl CorrelationSummary {
    pub fn from_pairs(n_patterns: usize, pairs: &[Option<f64>]) -> Self {
        let mut v: Vec<f64> = pairs.iter().flatten().copied().collect();
        v.sort_by(f64::total_cmp);
        let q = |p: f64| quantile(&v, p);
        Self {
            n_patterns,
            n_pairs: pairs.len(),
            n_undefined: pairs.len() - v.len(),
            min: q(0.0),
            q1: q(0.25),
            median: q(0.5),
            q3: q(0.75),
            max: q(1.0),
        }
    }
}

/// Linear-interpolation quantile of sorted data (NaN when empty).
pub(crate) fn quantile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let h = p * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Serialize)]
struct PatternSidecar<'a> {
    network_sha256: &'a str,
    layer: usize,
    neuron: usize,
    policy: String,
    orientation: f64,
    rank: Option<usize>,
    class: Option<usize>,
    diff: Option<f64>,
}

/// Writes `<stem>.csv` (devectorized matrix) and `<stem>.json` (provenance).
pub fn export_pattern(
    pattern: &InputPattern,
    network_sha256: &str,
    feature: Option<&RankedFeature>,
    dir: &Path,
    stem: &str,
) -> Result<(PathBuf, PathBuf)> {
    let m = pattern.matrix_view()?;
    let mut t = Table::new((0..m.n_nodes()).map(|j| format!("n{j}")));
    for i in 0..m.n_nodes() {
        t.push(m.row(i).iter().map(|&v| Cell::Float(v)).collect());
    }
    let csv_path = dir.join(format!("{stem}.csv"));
    t.write_csv(&csv_path)?;
    let side = PatternSidecar {
        network_sha256,
        layer: pattern.source.layer,
        neuron: pattern.source.neuron,
        policy: pattern.source.policy.to_string(),
        orientation: pattern.source.orientation,
        rank: feature.map(|f| f.rank_within_class),
        class: feature.map(|f| f.assigned_class),
        diff: feature.map(|f| f.diff),
    };
    let json_path = dir.join(format!("{stem}.json"));
    fs::write(&json_path, serde_json::to_string_pretty(&side)? + "\n")
        .map_err(|e| Error::io(&json_path, e))?;
    Ok((csv_path, json_path))
}

/// Convenience for callers holding a single softmax-layer score vector.
pub fn probs_from_scores(scores: &Array1<f64>) -> Vec<f64> {
    softmax(scores.as_slice().expect("contiguous"))
}
