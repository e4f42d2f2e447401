//! Linear SVM baseline trained by the Pegasos stochastic subgradient method.
//!
//! Class 1 maps to `+1` and class 0 to `-1`. The bias is handled as the weight
//! of a constant unit feature, so it is regularized along with `w`; this keeps
//! the `1/(λt)` step stable for the bias too.

use std::fs;
use std::path::Path;

use ndarray::{Array1, ArrayView1, ArrayView2};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::connectivity::FeatureSet;
use crate::error::{Error, Result};
use crate::rng::{stream, tag};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SvmConfig {
    pub lambda: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for SvmConfig {
    fn default() -> Self {
        Self {
            lambda: 1e-2,
            epochs: 40,
            seed: 0,
        }
    }
}

impl SvmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda.is_finite() && self.lambda > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "lambda must be > 0, got {}",
                self.lambda
            )));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidArgument("epochs must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub w: Array1<f64>,
    pub b: f64,
    pub lambda: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedSvm {
    pub model: LinearModel,
    /// Objective of the averaged iterate after each epoch.
    pub objective_trace: Vec<f64>,
}

impl LinearModel {
    pub fn decision(&self, x: ArrayView1<'_, f64>) -> Result<f64> {
        if x.len() != self.w.len() {
            return Err(Error::DimensionMismatch {
                expected: self.w.len(),
                actual: x.len(),
            });
        }
        Ok(self.w.dot(&x) + self.b)
    }

    /// `λ/2 (‖w‖² + b²) + mean hinge loss`.
    pub fn objective(&self, x: ArrayView2<'_, f64>, labels: &[usize]) -> f64 {
        let hinge: f64 = x
            .rows()
            .into_iter()
            .zip(labels)
            .map(|(row, &y)| (1.0 - sign_of(y) * (self.w.dot(&row) + self.b)).max(0.0))
            .sum();
        0.5 * self.lambda * (self.w.dot(&self.w) + self.b * self.b) + hinge / labels.len() as f64
    }
}

fn sign_of(label: usize) -> f64 {
    if label == 1 {
        1.0
    } else {
        -1.0
    }
}

/// Class 1 when `w·x + b > 0`, otherwise class 0.
pub fn predict_linear(model: &LinearModel, x: ArrayView1<'_, f64>) -> Result<usize> {
    Ok(usize::from(model.decision(x)? > 0.0))
}

pub fn linear_accuracy(model: &LinearModel, data: &FeatureSet) -> Result<f64> {
    let mut correct = 0;
    for (row, &y) in data.inputs.rows().into_iter().zip(&data.labels) {
        correct += usize::from(predict_linear(model, row)? == y);
    }
    Ok(correct as f64 / data.len() as f64)
}

/// Pegasos with step `1/(λt)`, projection onto the `1/√λ` ball and uniform
/// iterate averaging. Each epoch visits every example once in a seeded random order.
pub fn train_linear_svm(data: &FeatureSet, cfg: &SvmConfig) -> Result<TrainedSvm> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::InsufficientData("no training examples".into()));
    }
    let dim = data.input_dim();
    let lambda = cfg.lambda;
    let radius = 1.0 / lambda.sqrt();
    let mut w = Array1::<f64>::zeros(dim);
    let mut b = 0.0;
    let mut avg_w = Array1::<f64>::zeros(dim);
    let mut avg_b = 0.0;
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut rng = stream(cfg.seed, &[tag::SVM]);
    let mut trace = Vec::with_capacity(cfg.epochs);
    let mut t = 0usize;

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            t += 1;
            let eta = 1.0 / (lambda * t as f64);
            let x = data.input(i);
            let y = sign_of(data.labels[i]);
            let margin = y * (w.dot(&x) + b);
            let shrink = 1.0 - eta * lambda;
            w *= shrink;
            b *= shrink;
            if margin < 1.0 {
                w.scaled_add(eta * y, &x);
                b += eta * y;
            }
            let norm = (w.dot(&w) + b * b).sqrt();
            if norm > radius {
                let s = radius / norm;
                w *= s;
                b *= s;
            }
            let k = 1.0 / t as f64;
            avg_w.zip_mut_with(&w, |a, &v| *a += (v - *a) * k);
            avg_b += (b - avg_b) * k;
        }
        if !(avg_b.is_finite() && avg_w.iter().all(|v| v.is_finite())) {
            return Err(Error::Diverged { iteration: epoch });
        }
        let model = LinearModel {
            w: avg_w.clone(),
            b: avg_b,
            lambda,
        };
        trace.push(model.objective(data.inputs.view(), &data.labels));
    }
    Ok(TrainedSvm {
        model: LinearModel {
            w: avg_w,
            b: avg_b,
            lambda,
        },
        objective_trace: trace,
    })
}

const FORMAT_NAME: &str = "connlab-linear-svm";
const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Document {
    format: String,
    version: u32,
    input_dim: usize,
    lambda: f64,
    w: Vec<f64>,
    b: f64,
}

impl LinearModel {
    pub fn to_json(&self) -> Result<String> {
        let doc = Document {
            format: FORMAT_NAME.into(),
            version: FORMAT_VERSION,
            input_dim: self.w.len(),
            lambda: self.lambda,
            w: self.w.to_vec(),
            b: self.b,
        };
        Ok(serde_json::to_string_pretty(&doc)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: Document = serde_json::from_str(text)?;
        if doc.format != FORMAT_NAME || doc.version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "expected {FORMAT_NAME} version {FORMAT_VERSION}, got {} version {}",
                doc.format, doc.version
            )));
        }
        if doc.w.len() != doc.input_dim {
            return Err(Error::Format(format!(
                "weight vector has {} entries, input_dim is {}",
                doc.w.len(),
                doc.input_dim
            )));
        }
        if !(doc.b.is_finite() && doc.w.iter().all(|v| v.is_finite())) {
            return Err(Error::Format("non-finite parameter".into()));
        }
        Ok(Self {
            w: Array1::from(doc.w),
            b: doc.b,
            lambda: doc.lambda,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
