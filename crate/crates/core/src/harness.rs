//! Randomly permuted k-fold cross-validation, structure sweeps and feature
//! repeatability.
//!
//! Permutation `p` shuffles subjects with a stream derived from
//! `(master_seed, PERMUTATION, p)` and the model of fold `k` is trained with
//! the seed derived from `(master_seed, FOLD, p, k)`. Every cell is therefore
//! reproducible in isolation, and results do not depend on the worker count.
//! All structures in a sweep see the same splits.

use std::fs;
use std::path::Path;

use ndarray::ArrayView2;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::attribution::{
    back_project_ranked, feature_correlation, rank_features, CorrelationSummary, ExpansionPolicy,
    InputPattern,
};
use crate::baselines::{predict_linear, train_linear_svm, LinearModel, SvmConfig};
use crate::connectivity::FeatureSet;
use crate::error::{Error, Result};
use crate::network::{argmax, train, Network, NetworkSpec, TrainConfig};
use crate::rng::{derive_seed, stream, tag};
use crate::table::Table;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CvConfig {
    pub n_permutations: usize,
    pub n_folds: usize,
    pub master_seed: u64,
    /// Worker threads; 0 uses every core. Never affects results.
    #[serde(skip)]
    pub jobs: usize,
    /// Deal each class round-robin over folds instead of a label-blind split.
    pub stratified: bool,
}

impl Default for CvConfig {
    fn default() -> Self {
        Self {
            n_permutations: 50,
            n_folds: 2,
            master_seed: 0,
            jobs: 0,
            stratified: false,
        }
    }
}

impl CvConfig {
    pub fn validate(&self, n_subjects: usize) -> Result<()> {
        if self.n_folds < 2 {
            return Err(Error::InvalidArgument("n_folds must be >= 2".into()));
        }
        if self.n_permutations == 0 {
            return Err(Error::InvalidArgument("n_permutations must be >= 1".into()));
        }
        if n_subjects < 2 * self.n_folds {
            return Err(Error::InsufficientData(format!(
                "{n_subjects} subjects cannot fill {} folds of at least 2",
                self.n_folds
            )));
        }
        Ok(())
    }

    fn pool(&self) -> Result<rayon::ThreadPool> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.jobs)
            .build()
            .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))
    }
}

/// Test-fold index of every subject for permutation `p`.
pub fn fold_assignment(labels: &[usize], cfg: &CvConfig, permutation: usize) -> Vec<usize> {
    let n = labels.len();
    let mut rng = stream(cfg.master_seed, &[tag::PERMUTATION, permutation as u64]);
    let mut fold = vec![0; n];
    if cfg.stratified {
        let mut order = Vec::with_capacity(n);
        for class in 0..2 {
            let mut idx: Vec<usize> = (0..n).filter(|&i| labels[i] == class).collect();
            idx.shuffle(&mut rng);
            order.extend(idx);
        }
        for (pos, &i) in order.iter().enumerate() {
            fold[i] = pos % cfg.n_folds;
        }
    } else {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        for k in 0..cfg.n_folds {
            for &i in &order[k * n / cfg.n_folds..(k + 1) * n / cfg.n_folds] {
                fold[i] = k;
            }
        }
    }
    fold
}

/// `(train, test)` indices of a seeded half split: the first permutation
/// of a 2-fold assignment, testing on fold 0.
pub fn holdout_split(labels: &[usize], seed: u64) -> (Vec<usize>, Vec<usize>) {
    let cfg = CvConfig {
        n_permutations: 1,
        n_folds: 2,
        master_seed: seed,
        ..CvConfig::default()
    };
    let fold = fold_assignment(labels, &cfg, 0);
    (0..labels.len()).partition(|&i| fold[i] == 1)
}

pub fn fold_seed(master_seed: u64, permutation: usize, fold: usize) -> u64 {
    derive_seed(master_seed, &[tag::FOLD, permutation as u64, fold as u64])
}

/// A trained model the harness can score.
pub trait Classifier {
    fn predict_labels(&self, x: ArrayView2<'_, f64>) -> Result<Vec<usize>>;

    /// Mean cross-entropy on `data`, if the model is probabilistic.
    fn test_loss(&self, _data: &FeatureSet) -> Result<Option<f64>> {
        Ok(None)
    }

    /// Stable identifier of the fitted parameters.
    fn reference(&self) -> Result<String>;
}

pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl Classifier for Network {
    fn predict_labels(&self, x: ArrayView2<'_, f64>) -> Result<Vec<usize>> {
        let p = self.predict_batch(x)?;
        Ok(p.rows()
            .into_iter()
            .map(|r| argmax(r.as_slice().expect("contiguous")))
            .collect())
    }

    fn test_loss(&self, data: &FeatureSet) -> Result<Option<f64>> {
        let p = self.predict_batch(data.inputs.view())?;
        Ok(Some(Network::cross_entropy(&p, &data.labels)))
    }

    fn reference(&self) -> Result<String> {
        Ok(format!("sha256:{}", sha256_hex(self.to_json()?.as_bytes())))
    }
}

impl Classifier for LinearModel {
    fn predict_labels(&self, x: ArrayView2<'_, f64>) -> Result<Vec<usize>> {
        x.rows()
            .into_iter()
            .map(|r| predict_linear(self, r))
            .collect()
    }

    fn reference(&self) -> Result<String> {
        Ok(format!("sha256:{}", sha256_hex(self.to_json()?.as_bytes())))
    }
}

/// Always predicts one class.
#[derive(Debug, Clone, Copy)]
pub struct ConstantClassifier(pub usize);

impl Classifier for ConstantClassifier {
    fn predict_labels(&self, x: ArrayView2<'_, f64>) -> Result<Vec<usize>> {
        Ok(vec![self.0; x.nrows()])
    }

    fn reference(&self) -> Result<String> {
        Ok(format!("constant:{}", self.0))
    }
}

/// Serializable model recipe used by the CLI and the sweeps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelSpec {
    Dnn {
        hidden_sizes: Vec<usize>,
        train: TrainConfig,
    },
    LinearSvm(SvmConfig),
}

/// Either kind of fitted model.
#[derive(Debug, Clone)]
pub enum TrainedModel {
    Dnn(Network),
    LinearSvm(LinearModel),
}

impl ModelSpec {
    pub fn dnn(hidden_sizes: Vec<usize>, train: TrainConfig) -> Self {
        ModelSpec::Dnn {
            hidden_sizes,
            train,
        }
    }

    /// `(layers, first-layer neurons)`, `(0, 0)` for the linear SVM.
    pub fn shape(&self) -> (usize, usize) {
        match self {
            ModelSpec::Dnn { hidden_sizes, .. } => (
                hidden_sizes.len(),
                hidden_sizes.first().copied().unwrap_or(0),
            ),
            ModelSpec::LinearSvm(_) => (0, 0),
        }
    }

    pub fn fit(&self, data: &FeatureSet, seed: u64) -> Result<TrainedModel> {
        match self {
            ModelSpec::Dnn {
                hidden_sizes,
                train: cfg,
            } => Ok(TrainedModel::Dnn(fit_dnn(data, hidden_sizes, cfg, seed)?)),
            ModelSpec::LinearSvm(cfg) => {
                let cfg = SvmConfig {
                    seed,
                    ..cfg.clone()
                };
                Ok(TrainedModel::LinearSvm(train_linear_svm(data, &cfg)?.model))
            }
        }
    }
}

/// Initializes and trains a network, both seeded from `seed`.
pub fn fit_dnn(
    data: &FeatureSet,
    hidden_sizes: &[usize],
    cfg: &TrainConfig,
    seed: u64,
) -> Result<Network> {
    let spec = NetworkSpec::new(data.input_dim(), hidden_sizes.to_vec(), 2, cfg.dropout_rate);
    let net = Network::init(spec, seed)?;
    let cfg = TrainConfig {
        seed,
        ..cfg.clone()
    };
    Ok(train(&net, data, &cfg)?.network)
}

impl Classifier for TrainedModel {
    fn predict_labels(&self, x: ArrayView2<'_, f64>) -> Result<Vec<usize>> {
        match self {
            TrainedModel::Dnn(n) => n.predict_labels(x),
            TrainedModel::LinearSvm(m) => m.predict_labels(x),
        }
    }

    fn test_loss(&self, data: &FeatureSet) -> Result<Option<f64>> {
        match self {
            TrainedModel::Dnn(n) => n.test_loss(data),
            TrainedModel::LinearSvm(m) => m.test_loss(data),
        }
    }

    fn reference(&self) -> Result<String> {
        match self {
            TrainedModel::Dnn(n) => n.reference(),
            TrainedModel::LinearSvm(m) => m.reference(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldRecord {
    pub fold: usize,
    pub seed: u64,
    pub n_train: usize,
    pub n_test: usize,
    pub correct: usize,
    pub accuracy: f64,
    pub loss: Option<f64>,
    pub model: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PermutationRecord {
    pub permutation: usize,
    /// Pooled over folds; `None` if any fold failed.
    pub accuracy: Option<f64>,
    pub error: Option<String>,
    pub folds: Vec<FoldRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub model: String,
    pub cv: CvConfig,
    pub n_subjects: usize,
    pub n_nodes: usize,
    pub permutations: Vec<PermutationRecord>,
    pub n_failed: usize,
    pub mean_acc: f64,
    /// Sample standard deviation (`n - 1`) of per-permutation accuracies.
    pub std_acc: f64,
}

/// Mean and sample standard deviation (0 for fewer than two values).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (mean, (ss / (n - 1.0)).sqrt())
}

impl ExperimentReport {
    pub fn accuracies(&self) -> Vec<f64> {
        self.permutations
            .iter()
            .filter_map(|p| p.accuracy)
            .collect()
    }

    fn aggregate(&mut self) {
        let acc = self.accuracies();
        self.n_failed = self.permutations.len() - acc.len();
        (self.mean_acc, self.std_acc) = mean_std(&acc);
    }

    /// Recomputes the aggregates from the raw records.
    pub fn check_aggregates(&self) -> Result<()> {
        let (m, s) = mean_std(&self.accuracies());
        let same = |a: f64, b: f64| (a.is_nan() && b.is_nan()) || (a - b).abs() <= 1e-12;
        if !(same(m, self.mean_acc) && same(s, self.std_acc)) {
            return Err(Error::Format(format!(
                "report aggregates ({}, {}) disagree with records ({m}, {s})",
                self.mean_acc, self.std_acc
            )));
        }
        for p in &self.permutations {
            if p.accuracy.is_some_and(|a| !(0.0..=1.0).contains(&a)) {
                return Err(Error::Format(format!(
                    "permutation {} accuracy out of range",
                    p.permutation
                )));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        self.check_aggregates()?;
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn failures(&self) -> impl Iterator<Item = &PermutationRecord> {
        self.permutations.iter().filter(|p| p.error.is_some())
    }
}

/// Cross-validation core: `factory` fits a model per fold and `visit` may
/// extract a payload from each fitted model. A failing fold marks its
/// permutation failed and the run continues.
pub fn cross_validate<M, P, F, V>(
    data: &FeatureSet,
    cfg: &CvConfig,
    model_name: &str,
    factory: F,
    visit: V,
) -> Result<(ExperimentReport, Vec<Vec<P>>)>
where
    M: Classifier,
    P: Send,
    F: Fn(&FeatureSet, u64) -> Result<M> + Sync,
    V: Fn(&M, usize, usize) -> Result<P> + Sync,
{
    cfg.validate(data.len())?;
    let run_perm = |p: usize| -> (PermutationRecord, Vec<P>) {
        let assign = fold_assignment(&data.labels, cfg, p);
        let mut folds = Vec::with_capacity(cfg.n_folds);
        let mut payloads = Vec::new();
        let mut run = || -> Result<()> {
            for k in 0..cfg.n_folds {
                let test_idx: Vec<usize> = (0..data.len()).filter(|&i| assign[i] == k).collect();
                let train_idx: Vec<usize> = (0..data.len()).filter(|&i| assign[i] != k).collect();
                let (tr, te) = (data.select(&train_idx), data.select(&test_idx));
                let seed = fold_seed(cfg.master_seed, p, k);
                let model = factory(&tr, seed)?;
                let pred = model.predict_labels(te.inputs.view())?;
                let correct = pred.iter().zip(&te.labels).filter(|(a, b)| a == b).count();
                folds.push(FoldRecord {
                    fold: k,
                    seed,
                    n_train: tr.len(),
                    n_test: te.len(),
                    correct,
                    accuracy: correct as f64 / te.len() as f64,
                    loss: model.test_loss(&te)?,
                    model: model.reference()?,
                });
                payloads.push(visit(&model, p, k)?);
            }
            Ok(())
        };
        let outcome = run();
        let (accuracy, error) = match outcome {
            Ok(()) => {
                let correct: usize = folds.iter().map(|f| f.correct).sum();
                (Some(correct as f64 / data.len() as f64), None)
            }
            Err(e) => {
                log::warn!("permutation {p} failed: {e}");
                (None, Some(format!("{}: {e}", e.kind())))
            }
        };
        (
            PermutationRecord {
                permutation: p,
                accuracy,
                error,
                folds,
            },
            payloads,
        )
    };
    let results: Vec<(PermutationRecord, Vec<P>)> = cfg.pool()?.install(|| {
        (0..cfg.n_permutations)
            .into_par_iter()
            .map(run_perm)
            .collect()
    });
    let (permutations, payloads): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    let mut report = ExperimentReport {
        model: model_name.to_string(),
        cv: cfg.clone(),
        n_subjects: data.len(),
        n_nodes: data.n_nodes,
        permutations,
        n_failed: 0,
        mean_acc: 0.0,
        std_acc: 0.0,
    };
    report.aggregate();
    Ok((report, payloads))
}

/// Permuted CV with an arbitrary model factory.
pub fn permuted_cv<M, F>(
    data: &FeatureSet,
    cfg: &CvConfig,
    model_name: &str,
    factory: F,
) -> Result<ExperimentReport>
where
    M: Classifier,
    F: Fn(&FeatureSet, u64) -> Result<M> + Sync,
{
    Ok(cross_validate(data, cfg, model_name, factory, |_, _, _| Ok(()))?.0)
}

/// Permuted CV of a [`ModelSpec`].
pub fn permuted_cv_spec(
    data: &FeatureSet,
    cfg: &CvConfig,
    spec: &ModelSpec,
) -> Result<ExperimentReport> {
    let name = serde_json::to_string(spec)?;
    permuted_cv(data, cfg, &name, |tr, seed| spec.fit(tr, seed))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub layers: usize,
    pub neurons: usize,
    pub hidden_sizes: Vec<usize>,
    pub report: ExperimentReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub cells: Vec<SweepCell>,
}

impl SweepReport {
    /// Columns `layers,neurons,scale,mean_acc,std_acc`; linear SVM rows have
    /// `layers = neurons = 0`.
    pub fn summary(&self) -> Table {
        let mut t = Table::new(["layers", "neurons", "scale", "mean_acc", "std_acc"]);
        for c in &self.cells {
            t.push(vec![
                c.layers.into(),
                c.neurons.into(),
                c.report.n_nodes.into(),
                c.report.mean_acc.into(),
                c.report.std_acc.into(),
            ]);
        }
        t
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        for c in &self.cells {
            c.report.check_aggregates()?;
        }
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join("report.json");
        fs::write(&path, serde_json::to_string_pretty(self)? + "\n")
            .map_err(|e| Error::io(&path, e))?;
        self.summary().write_csv(&dir.join("summary.csv"))
    }
}

/// One permuted CV per `(layers, neurons)` cell, with hidden sizes from the
/// halving rule, plus an optional linear-SVM row.
pub fn structure_sweep(
    data: &FeatureSet,
    layer_counts: &[usize],
    first_layer: &[usize],
    train_cfg: &TrainConfig,
    svm: Option<&SvmConfig>,
    cfg: &CvConfig,
) -> Result<SweepReport> {
    if layer_counts.is_empty() || first_layer.is_empty() {
        return Err(Error::InvalidArgument("structure grid is empty".into()));
    }
    let mut cells = Vec::new();
    for &layers in layer_counts {
        for &neurons in first_layer {
            let hidden = NetworkSpec::halving_sizes(layers, neurons);
            let spec = ModelSpec::dnn(hidden.clone(), train_cfg.clone());
            log::info!("structure {hidden:?}");
            cells.push(SweepCell {
                layers,
                neurons,
                hidden_sizes: hidden,
                report: permuted_cv_spec(data, cfg, &spec)?,
            });
        }
    }
    if let Some(svm) = svm {
        cells.push(SweepCell {
            layers: 0,
            neurons: 0,
            hidden_sizes: vec![],
            report: permuted_cv_spec(data, cfg, &ModelSpec::LinearSvm(svm.clone()))?,
        });
    }
    Ok(SweepReport { cells })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepeatabilityReport {
    pub hidden_sizes: Vec<usize>,
    pub policy: ExpansionPolicy,
    pub cv: CvConfig,
    /// One summary per class, over the top-ranked pattern of every fold model.
    pub class0: CorrelationSummary,
    pub class1: CorrelationSummary,
    pub class0_pairs: Vec<Option<f64>>,
    pub class1_pairs: Vec<Option<f64>>,
}

/// Collects the top-ranked class-0 and class-1 back-projected patterns from
/// every (permutation, fold) model and summarizes their pairwise
/// correlations, sign-aligned.
pub fn repeatability_study(
    data: &FeatureSet,
    hidden_sizes: &[usize],
    train_cfg: &TrainConfig,
    policy: ExpansionPolicy,
    cfg: &CvConfig,
) -> Result<RepeatabilityReport> {
    let factory = |tr: &FeatureSet, seed: u64| fit_dnn(tr, hidden_sizes, train_cfg, seed);
    let visit = |net: &Network, _: usize, _: usize| -> Result<[Option<InputPattern>; 2]> {
        let r = rank_features(net)?;
        let top = |c: usize| {
            r.class(c)
                .first()
                .map(|f| back_project_ranked(net, f, policy))
                .transpose()
        };
        Ok([top(0)?, top(1)?])
    };
    let (report, payloads) = cross_validate(data, cfg, "repeatability", factory, visit)?;
    if let Some(p) = report.failures().next() {
        return Err(Error::InvalidInput(format!(
            "permutation {} failed: {}",
            p.permutation,
            p.error.as_deref().unwrap_or("")
        )));
    }
    let mut by_class: [Vec<InputPattern>; 2] = [Vec::new(), Vec::new()];
    for fold in payloads.into_iter().flatten() {
        for (c, p) in fold.into_iter().enumerate() {
            by_class[c].extend(p);
        }
    }
    let summarize = |ps: &[InputPattern]| -> Result<(CorrelationSummary, Vec<Option<f64>>)> {
        let pairs = feature_correlation(ps, true)?;
        Ok((CorrelationSummary::from_pairs(ps.len(), &pairs), pairs))
    };
    let (class0, class0_pairs) = summarize(&by_class[0])?;
    let (class1, class1_pairs) = summarize(&by_class[1])?;
    Ok(RepeatabilityReport {
        hidden_sizes: hidden_sizes.to_vec(),
        policy,
        cv: cfg.clone(),
        class0,
        class1,
        class0_pairs,
        class1_pairs,
    })
}
