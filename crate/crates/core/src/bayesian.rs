//! Monte Carlo dropout testing: repeated stochastic forward passes give a
//! predictive mean and a per-input model uncertainty.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::index::sample;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::connectivity::{mix, ConnectivityMatrix, Dataset};
use crate::error::{Error, Result};
use crate::network::{argmax, Network};
use crate::rng::{derive_seed, stream, tag};
use crate::table::Table;

pub const DEFAULT_PASSES: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropoutVariant {
    /// Each target neuron dropped independently with probability `p`.
    Rate(f64),
    /// Exactly `m` target neurons kept, uniformly chosen per pass.
    RetainExact(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DropoutPolicy {
    pub variant: DropoutVariant,
    /// 1-based hidden layer; `None` means the last hidden layer.
    pub target_layer: Option<usize>,
}

impl DropoutPolicy {
    pub fn rate(p: f64) -> Self {
        Self {
            variant: DropoutVariant::Rate(p),
            target_layer: None,
        }
    }

    pub fn retain_exact(m: usize) -> Self {
        Self {
            variant: DropoutVariant::RetainExact(m),
            target_layer: None,
        }
    }

    pub fn on_layer(mut self, layer: usize) -> Self {
        self.target_layer = Some(layer);
        self
    }

    /// 0-based target layer, checked against the network.
    fn resolve(&self, net: &Network) -> Result<usize> {
        let n_hidden = net.spec().n_hidden();
        if n_hidden == 0 {
            return Err(Error::Unsupported("MC dropout needs a hidden layer".into()));
        }
        let layer = self.target_layer.unwrap_or(n_hidden);
        if layer == 0 || layer > n_hidden {
            return Err(Error::InvalidArgument(format!(
                "target layer {layer} outside 1..={n_hidden}"
            )));
        }
        let width = net.spec().hidden_sizes[layer - 1];
        match self.variant {
            DropoutVariant::Rate(p) if !(0.0..1.0).contains(&p) => Err(Error::InvalidArgument(
                format!("dropout rate {p} outside [0, 1)"),
            )),
            DropoutVariant::RetainExact(0) => {
                Err(Error::InvalidArgument("retain count must be >= 1".into()))
            }
            DropoutVariant::RetainExact(m) if m > width => Err(Error::InvalidArgument(format!(
                "cannot retain {m} neurons of a {width}-neuron layer"
            ))),
            _ => Ok(layer - 1),
        }
    }

    fn sample_mask<R: Rng>(&self, width: usize, rng: &mut R, out: &mut [f64]) {
        match self.variant {
            DropoutVariant::Rate(p) => {
                for v in out.iter_mut() {
                    *v = if p > 0.0 && rng.random::<f64>() < p {
                        0.0
                    } else {
                        1.0
                    };
                }
            }
            DropoutVariant::RetainExact(m) => {
                out.fill(0.0);
                for j in sample(rng, width, m) {
                    out[j] = 1.0;
                }
            }
        }
    }
}

impl fmt::Display for DropoutPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.variant {
            DropoutVariant::Rate(p) => write!(f, "rate:{p}")?,
            DropoutVariant::RetainExact(m) => write!(f, "retain:{m}")?,
        }
        if let Some(l) = self.target_layer {
            write!(f, "@{l}")?;
        }
        Ok(())
    }
}

impl FromStr for DropoutPolicy {
    type Err = Error;

    /// `rate:P`, `retain:M`, a bare rate, or `RM` (e.g. `R2`), optionally
    /// followed by `@LAYER`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || {
            Error::InvalidArgument(format!(
                "bad dropout policy {s:?} (rate:P | retain:M | R<M>)[@LAYER]"
            ))
        };
        let (body, layer) = match s.split_once('@') {
            Some((b, l)) => (b, Some(l.parse::<usize>().map_err(|_| bad())?)),
            None => (s, None),
        };
        let variant = if let Some(p) = body.strip_prefix("rate:") {
            DropoutVariant::Rate(p.parse().map_err(|_| bad())?)
        } else if let Some(m) = body
            .strip_prefix("retain:")
            .or_else(|| body.strip_prefix('R'))
        {
            DropoutVariant::RetainExact(m.parse().map_err(|_| bad())?)
        } else {
            DropoutVariant::Rate(body.parse().map_err(|_| bad())?)
        };
        if let DropoutVariant::Rate(p) = variant {
            if !(0.0..1.0).contains(&p) {
                return Err(bad());
            }
        }
        Ok(Self {
            variant,
            target_layer: layer,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BayesianPrediction {
    pub mean_probs: Vec<f64>,
    /// Per-class sample variance over passes (0 when `T = 1`).
    pub variance: Vec<f64>,
    /// Variance of the class-0 probability.
    pub uncertainty: f64,
    pub label: usize,
    pub passes: usize,
}

impl BayesianPrediction {
    fn from_samples(q: &Array2<f64>) -> Self {
        let t = q.nrows();
        let first = q.row(0).to_owned();
        // Mean shifted by the first sample: exact when every pass agrees.
        let mut mean = first.clone();
        let mut dev_sum = Array1::<f64>::zeros(q.ncols());
        for row in q.rows() {
            dev_sum += &(&row - &first);
        }
        mean += &(dev_sum / t as f64);
        let variance: Vec<f64> = if t == 1 {
            vec![0.0; q.ncols()]
        } else {
            q.axis_iter(Axis(1))
                .zip(&mean)
                .map(|(col, m)| col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (t - 1) as f64)
                .collect()
        };
        let mean_probs = mean.to_vec();
        Self {
            label: argmax(&mean_probs),
            uncertainty: variance[0],
            mean_probs,
            variance,
            passes: t,
        }
    }
}

/// Activations entering the target layer's gate, with every earlier layer
/// weight-averaged.
fn target_activations(net: &Network, x: ArrayView2<'_, f64>, target: usize) -> Array2<f64> {
    let rates = &net.spec().dropout_rates;
    let mut a = net.hidden_layer(0, x);
    for l in 0..target {
        if rates[l] != 0.0 {
            a *= 1.0 - rates[l];
        }
        a = net.hidden_layer(l + 1, a.view());
    }
    a
}

/// Sampled class probabilities (`T × classes`) for one input given its
/// target-layer activation.
fn sample_passes(
    net: &Network,
    h: ArrayView1<'_, f64>,
    target: usize,
    passes: usize,
    policy: &DropoutPolicy,
    seed: u64,
) -> Array2<f64> {
    let width = h.len();
    let mut gated = Array2::zeros((passes, width));
    let mut mask = vec![0.0; width];
    for (t, mut row) in gated.rows_mut().into_iter().enumerate() {
        let mut rng = stream(seed, &[tag::MC_PASS, t as u64]);
        policy.sample_mask(width, &mut rng, &mut mask);
        for ((d, &hv), &m) in row.iter_mut().zip(h).zip(&mask) {
            *d = hv * m;
        }
    }
    let rates = &net.spec().dropout_rates;
    let mut a = gated;
    for l in target + 1..net.spec().n_hidden() {
        a = net.hidden_layer(l, a.view());
        if rates[l] != 0.0 {
            a *= 1.0 - rates[l];
        }
    }
    net.readout(a.view()).1
}

fn check_passes(passes: usize) -> Result<()> {
    if passes == 0 {
        return Err(Error::InvalidArgument(
            "number of passes T must be >= 1".into(),
        ));
    }
    Ok(())
}

/// `T` stochastic passes with `policy` on the target layer; other layers use
/// weight averaging. Deterministic per `seed`.
pub fn mc_dropout_predict(
    net: &Network,
    x: &[f64],
    passes: usize,
    policy: &DropoutPolicy,
    seed: u64,
) -> Result<BayesianPrediction> {
    let xb = ArrayView2::from_shape((1, x.len()), x).expect("row view");
    Ok(mc_dropout_batch_seeded(net, xb, passes, policy, |_| seed)?.remove(0))
}

/// [`mc_dropout_predict`] for every row of `x`; row `i` uses the seed
/// derived from `(seed, i)`, so results do not depend on thread scheduling.
pub fn mc_dropout_batch(
    net: &Network,
    x: ArrayView2<'_, f64>,
    passes: usize,
    policy: &DropoutPolicy,
    seed: u64,
) -> Result<Vec<BayesianPrediction>> {
    mc_dropout_batch_seeded(net, x, passes, policy, |i| derive_seed(seed, &[i as u64]))
}

fn mc_dropout_batch_seeded(
    net: &Network,
    x: ArrayView2<'_, f64>,
    passes: usize,
    policy: &DropoutPolicy,
    seed_of: impl Fn(usize) -> u64 + Sync,
) -> Result<Vec<BayesianPrediction>> {
    check_passes(passes)?;
    let target = policy.resolve(net)?;
    if x.ncols() != net.spec().input_dim {
        return Err(Error::DimensionMismatch {
            expected: net.spec().input_dim,
            actual: x.ncols(),
        });
    }
    let h = target_activations(net, x, target);
    Ok((0..h.nrows())
        .into_par_iter()
        .map(|i| {
            let q = sample_passes(net, h.row(i), target, passes, policy, seed_of(i));
            BayesianPrediction::from_samples(&q)
        })
        .collect())
}

/// Weight-averaging accuracy of `net` on labelled inputs.
pub fn weight_average_accuracy(
    net: &Network,
    x: ArrayView2<'_, f64>,
    labels: &[usize],
) -> Result<f64> {
    let probs = net.predict_batch(x)?;
    Ok(crate::attribution::accuracy_of(&probs, labels))
}

fn mc_accuracy(preds: &[BayesianPrediction], labels: &[usize]) -> f64 {
    preds
        .iter()
        .zip(labels)
        .filter(|(p, &y)| p.label == y)
        .count() as f64
        / labels.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateSweepRow {
    pub policy: DropoutPolicy,
    pub mc_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateSweep {
    pub passes: usize,
    pub weight_avg_accuracy: f64,
    pub rows: Vec<RateSweepRow>,
}

impl RateSweep {
    /// Columns `policy,mc_accuracy,wa_accuracy`.
    pub fn to_table(&self) -> Table {
        let mut t = Table::new(["policy", "mc_accuracy", "wa_accuracy"]);
        for r in &self.rows {
            t.push(vec![
                r.policy.to_string().into(),
                r.mc_accuracy.into(),
                self.weight_avg_accuracy.into(),
            ]);
        }
        t
    }
}

/// MC accuracy for each policy against the single weight-averaging accuracy.
pub fn dropout_rate_sweep(
    net: &Network,
    x: ArrayView2<'_, f64>,
    labels: &[usize],
    policies: &[DropoutPolicy],
    passes: usize,
    seed: u64,
) -> Result<RateSweep> {
    let weight_avg_accuracy = weight_average_accuracy(net, x, labels)?;
    let rows = policies
        .iter()
        .enumerate()
        .map(|(k, policy)| {
            let preds = mc_dropout_batch(net, x, passes, policy, derive_seed(seed, &[k as u64]))?;
            Ok(RateSweepRow {
                policy: *policy,
                mc_accuracy: mc_accuracy(&preds, labels),
            })
        })
        .collect::<Result<_>>()?;
    Ok(RateSweep {
        passes,
        weight_avg_accuracy,
        rows,
    })
}

/// Which representation mixed subjects are combined in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum MixStage {
    /// Raw correlations, then the full preprocessing chain.
    Raw,
    /// Preprocessed model inputs.
    #[default]
    Normalized,
}

/// Class index playing the "F" role; the suite mixes toward it.
pub const F_CLASS: usize = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Subset {
    pub name: String,
    /// Weight on the class-F source.
    pub alpha: f64,
    pub eval_label: usize,
    /// `(F source id, M source id)`; one side is absent for pure subsets.
    pub sources: Vec<(Option<String>, Option<String>)>,
    #[serde(skip)]
    pub inputs: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubsetSuite {
    pub subsets: Vec<Subset>,
    pub stage: MixStage,
}

const SUITE: [(&str, f64); 5] = [
    ("F", 1.0),
    ("F1", 0.75),
    ("FM", 0.5),
    ("M1", 0.25),
    ("M", 0.0),
];

fn preprocess_raw(v: &[f64], n_nodes: usize) -> Result<Vec<f64>> {
    ConnectivityMatrix::devectorize(v, n_nodes)?.preprocess()
}

/// Draws `n_per_subset` subjects of each class without replacement and builds
/// the F, F1, FM, M1, M subsets. Each mixed subset pairs the drawn F and M
/// subjects under its own random matching, so every source is used once per
/// subset. FM is evaluated as class F.
pub fn build_subset_suite(
    test: &Dataset,
    n_per_subset: usize,
    seed: u64,
    stage: MixStage,
) -> Result<SubsetSuite> {
    if n_per_subset == 0 {
        return Err(Error::InvalidArgument("subset size must be >= 1".into()));
    }
    let counts = test.class_counts();
    let m_class = 1 - F_CLASS;
    if counts[F_CLASS] < n_per_subset || counts[m_class] < n_per_subset {
        return Err(Error::InsufficientData(format!(
            "need {n_per_subset} subjects per class, have {} ({}) and {} ({})",
            counts[m_class],
            test.class_names()[m_class],
            counts[F_CLASS],
            test.class_names()[F_CLASS]
        )));
    }
    let features = test.features()?;
    let source = match stage {
        MixStage::Normalized => features.inputs.clone(),
        MixStage::Raw => test.raw_vectors(),
    };
    let pick = |class: usize, t: u64| -> Vec<usize> {
        let pool = features.class_indices(class);
        let mut rng = stream(seed, &[tag::SUBSET, t]);
        sample(&mut rng, pool.len(), n_per_subset)
            .into_iter()
            .map(|k| pool[k])
            .collect()
    };
    let f_idx = pick(F_CLASS, 0);
    let m_idx = pick(m_class, 1);
    let dim = features.input_dim();

    let mut subsets = Vec::with_capacity(SUITE.len());
    for (s, &(name, alpha)) in SUITE.iter().enumerate() {
        let mut inputs = Array2::zeros((n_per_subset, dim));
        let mut sources = Vec::with_capacity(n_per_subset);
        let pairing: Vec<usize> = {
            let mut rng = stream(seed, &[tag::SUBSET, 2, s as u64]);
            sample(&mut rng, n_per_subset, n_per_subset).into_vec()
        };
        for (i, mut row) in inputs.rows_mut().into_iter().enumerate() {
            let fi = f_idx[i];
            let mi = m_idx[pairing[i]];
            let v: Vec<f64> = if alpha == 1.0 {
                sources.push((Some(features.ids[fi].clone()), None));
                features.inputs.row(fi).to_vec()
            } else if alpha == 0.0 {
                sources.push((None, Some(features.ids[m_idx[i]].clone())));
                features.inputs.row(m_idx[i]).to_vec()
            } else {
                sources.push((
                    Some(features.ids[fi].clone()),
                    Some(features.ids[mi].clone()),
                ));
                let mixed = mix(
                    source.row(fi).as_slice().expect("contiguous"),
                    source.row(mi).as_slice().expect("contiguous"),
                    alpha,
                )?;
                match stage {
                    MixStage::Normalized => mixed,
                    MixStage::Raw => preprocess_raw(&mixed, test.n_nodes())?,
                }
            };
            row.assign(&ArrayView1::from(&v[..]));
        }
        subsets.push(Subset {
            name: name.into(),
            alpha,
            eval_label: if alpha >= 0.5 { F_CLASS } else { m_class },
            sources,
            inputs,
        });
    }
    Ok(SubsetSuite { subsets, stage })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetResult {
    pub subset: String,
    pub accuracy: f64,
    pub mean_uncertainty: f64,
    pub predictions: Vec<BayesianPrediction>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertaintySweep {
    pub policy: DropoutPolicy,
    pub passes: usize,
    pub stage: MixStage,
    pub subsets: Vec<SubsetResult>,
}

impl UncertaintySweep {
    /// Columns `subset,accuracy,mean_uncertainty`.
    pub fn to_table(&self) -> Table {
        let mut t = Table::new(["subset", "accuracy", "mean_uncertainty"]);
        for s in &self.subsets {
            t.push(vec![
                s.subset.as_str().into(),
                s.accuracy.into(),
                s.mean_uncertainty.into(),
            ]);
        }
        t
    }

    pub fn get(&self, name: &str) -> Option<&SubsetResult> {
        self.subsets.iter().find(|s| s.subset == name)
    }
}

/// Accuracy against each subset's evaluation label and the mean per-input
/// uncertainty.
pub fn uncertainty_sweep(
    net: &Network,
    suite: &SubsetSuite,
    passes: usize,
    policy: &DropoutPolicy,
    seed: u64,
) -> Result<UncertaintySweep> {
    let subsets = suite
        .subsets
        .iter()
        .enumerate()
        .map(|(k, s)| {
            let preds = mc_dropout_batch(
                net,
                s.inputs.view(),
                passes,
                policy,
                derive_seed(seed, &[k as u64]),
            )?;
            let labels = vec![s.eval_label; preds.len()];
            Ok(SubsetResult {
                subset: s.name.clone(),
                accuracy: mc_accuracy(&preds, &labels),
                mean_uncertainty: preds.iter().map(|p| p.uncertainty).sum::<f64>()
                    / preds.len() as f64,
                predictions: preds,
            })
        })
        .collect::<Result<_>>()?;
    Ok(UncertaintySweep {
        policy: *policy,
        passes,
        stage: suite.stage,
        subsets,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::connectivity::{generate_synthetic, SyntheticConfig};
    use crate::network::NetworkSpec;

    fn net() -> Network {
        Network::init(NetworkSpec::new(6, vec![10, 8], 2, 0.2), 3).unwrap()
    }

    const X: [f64; 6] = [0.3, -1.0, 2.0, 0.1, -0.4, 0.8];

    #[test]
    fn rate_zero_is_exact() {
        let net = net();
        let p = mc_dropout_predict(&net, &X, 50, &DropoutPolicy::rate(0.0), 1).unwrap();
        assert!(p.variance.iter().all(|&v| v == 0.0));
        assert_eq!(p.uncertainty, 0.0);
        let reference = net
            .with_dropout_rates(vec![0.0, 0.0])
            .unwrap()
            .predict(&X)
            .unwrap();
        assert_eq!(p.mean_probs, reference.probs);
    }

    #[test]
    fn retain_all_equals_rate_zero() {
        let net = net();
        let a = mc_dropout_predict(&net, &X, 20, &DropoutPolicy::retain_exact(8), 4).unwrap();
        let b = mc_dropout_predict(&net, &X, 20, &DropoutPolicy::rate(0.0), 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn same_seed_same_prediction() {
        let net = net();
        let pol = DropoutPolicy::rate(0.5);
        let a = mc_dropout_predict(&net, &X, 30, &pol, 11).unwrap();
        assert_eq!(a, mc_dropout_predict(&net, &X, 30, &pol, 11).unwrap());
        assert_ne!(a, mc_dropout_predict(&net, &X, 30, &pol, 12).unwrap());
        assert!((a.mean_probs.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert!(a.uncertainty > 0.0);
        assert!((a.variance[0] - a.variance[1]).abs() < 1e-15);
    }

    #[test]
    fn single_pass_has_zero_variance() {
        let p = mc_dropout_predict(&net(), &X, 1, &DropoutPolicy::rate(0.5), 0).unwrap();
        assert_eq!(p.variance, vec![0.0, 0.0]);
        assert_eq!(p.passes, 1);
    }

    #[test]
    fn invalid_policies() {
        let net = net();
        assert!(mc_dropout_predict(&net, &X, 0, &DropoutPolicy::rate(0.1), 0).is_err());
        assert!(mc_dropout_predict(&net, &X, 5, &DropoutPolicy::retain_exact(9), 0).is_err());
        assert!(mc_dropout_predict(&net, &X, 5, &DropoutPolicy::rate(1.0), 0).is_err());
        assert!(mc_dropout_predict(&net, &X, 5, &DropoutPolicy::rate(0.1).on_layer(3), 0).is_err());
        assert!(
            mc_dropout_predict(&net, &X, 5, &DropoutPolicy::retain_exact(9).on_layer(1), 0).is_ok()
        );
    }

    #[test]
    fn retain_exact_keeps_m_neurons() {
        let pol = DropoutPolicy::retain_exact(3);
        let mut rng = stream(5, &[]);
        let mut m = vec![0.0; 10];
        for _ in 0..20 {
            pol.sample_mask(10, &mut rng, &mut m);
            assert_eq!(m.iter().sum::<f64>(), 3.0);
        }
    }

    #[test]
    fn batch_rows_match_single_calls() {
        let net = net();
        let x = Array2::from_shape_fn((4, 6), |(i, j)| (i as f64 - j as f64) * 0.3);
        let pol = DropoutPolicy::rate(0.3);
        let batch = mc_dropout_batch(&net, x.view(), 10, &pol, 8).unwrap();
        for (i, b) in batch.iter().enumerate() {
            let single = mc_dropout_predict(
                &net,
                x.row(i).as_slice().unwrap(),
                10,
                &pol,
                derive_seed(8, &[i as u64]),
            )
            .unwrap();
            for (u, v) in b.mean_probs.iter().zip(&single.mean_probs) {
                assert!((u - v).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn policy_strings() {
        assert_eq!(
            "rate:0.2".parse::<DropoutPolicy>().unwrap(),
            DropoutPolicy::rate(0.2)
        );
        assert_eq!(
            "R2".parse::<DropoutPolicy>().unwrap(),
            DropoutPolicy::retain_exact(2)
        );
        assert_eq!(
            "retain:2@1".parse::<DropoutPolicy>().unwrap(),
            DropoutPolicy::retain_exact(2).on_layer(1)
        );
        assert_eq!(
            "0.5".parse::<DropoutPolicy>().unwrap(),
            DropoutPolicy::rate(0.5)
        );
        assert!("rate:1".parse::<DropoutPolicy>().is_err());
        for p in [
            DropoutPolicy::rate(0.2),
            DropoutPolicy::retain_exact(2).on_layer(3),
        ] {
            assert_eq!(p.to_string().parse::<DropoutPolicy>().unwrap(), p);
        }
    }

    fn small_data() -> Dataset {
        let cfg = SyntheticConfig {
            n_subjects: 20,
            n_nodes: 6,
            n_timepoints: 40,
            ..SyntheticConfig::default()
        };
        generate_synthetic(&cfg, 2).unwrap()
    }

    #[test]
    fn suite_shapes_and_mixing() {
        let data = small_data();
        let suite = build_subset_suite(&data, 6, 1, MixStage::Normalized).unwrap();
        let names: Vec<&str> = suite.subsets.iter().map(|s| s.name.as_str()).collect();
        assert_eq!(names, ["F", "F1", "FM", "M1", "M"]);
        let feats = data.features().unwrap();
        let row_of = |id: &str| feats.ids.iter().position(|x| x == id).unwrap();
        for s in &suite.subsets {
            assert_eq!(s.inputs.nrows(), 6);
            let mut f_ids: Vec<_> = s.sources.iter().filter_map(|p| p.0.clone()).collect();
            f_ids.sort();
            f_ids.dedup();
            assert!(f_ids.len() == 6 || s.name == "M");
        }
        let f = &suite.subsets[0];
        for (i, (fid, _)) in f.sources.iter().enumerate() {
            let r = row_of(fid.as_ref().unwrap());
            assert_eq!(feats.labels[r], F_CLASS);
            assert_eq!(f.inputs.row(i), feats.inputs.row(r));
        }
        let fm = &suite.subsets[2];
        assert_eq!(fm.eval_label, F_CLASS);
        assert_eq!(suite.subsets[3].eval_label, 1 - F_CLASS);
        for (i, (a, b)) in fm.sources.iter().enumerate() {
            let (ra, rb) = (row_of(a.as_ref().unwrap()), row_of(b.as_ref().unwrap()));
            for k in 0..feats.input_dim() {
                let mid = 0.5 * feats.inputs[(ra, k)] + 0.5 * feats.inputs[(rb, k)];
                assert_eq!(fm.inputs[(i, k)], mid);
            }
        }
        assert!(build_subset_suite(&data, 11, 1, MixStage::Normalized).is_err());
    }

    #[test]
    fn raw_stage_outputs_are_normalized() {
        let suite = build_subset_suite(&small_data(), 4, 3, MixStage::Raw).unwrap();
        for row in suite.subsets[2].inputs.rows() {
            let (m, v) = crate::connectivity::population_moments(row.as_slice().unwrap());
            assert!(m.abs() < 1e-10 && (v - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn sweep_with_rate_zero_has_no_uncertainty() {
        let data = small_data();
        let suite = build_subset_suite(&data, 4, 3, MixStage::Normalized).unwrap();
        let net = Network::init(NetworkSpec::new(data.input_dim(), vec![5], 2, 0.2), 0).unwrap();
        let sweep = uncertainty_sweep(&net, &suite, 10, &DropoutPolicy::rate(0.0), 1).unwrap();
        assert_eq!(sweep.subsets.len(), 5);
        for s in &sweep.subsets {
            assert_eq!(s.mean_uncertainty, 0.0);
        }
        assert_eq!(sweep.to_table().rows.len(), 5);
    }

    #[test]
    fn single_pass_rate_zero_sweep_matches_deterministic() {
        let data = small_data();
        let f = data.features().unwrap();
        let net = Network::init(NetworkSpec::new(data.input_dim(), vec![5], 2, 0.0), 4).unwrap();
        let s = dropout_rate_sweep(
            &net,
            f.inputs.view(),
            &f.labels,
            &[DropoutPolicy::rate(0.0)],
            1,
            0,
        )
        .unwrap();
        assert_eq!(s.rows[0].mc_accuracy, s.weight_avg_accuracy);
    }
}
