//! Elastic-net regularized cross-entropy, backpropagation and gradient descent.
//!
//! The data term is the batch mean of `-log q(label)`; the penalty is
//! `β Σ‖W‖₁ + (γ/2) Σ‖W‖₂²` over weight matrices only (biases are not
//! penalized). The trace and the convergence target refer to this averaged
//! objective.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{DropoutMasks, Network};
use crate::connectivity::FeatureSet;
use crate::error::{Error, Result};
use crate::rng::{self, tag};

/// Lower guard inside the log of the data term.
pub const LOG_GUARD: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Regularization {
    /// β
    pub l1: f64,
    /// γ
    pub l2: f64,
}

impl Regularization {
    pub const NONE: Self = Self { l1: 0.0, l2: 0.0 };
}

impl Default for Regularization {
    fn default() -> Self {
        Self { l1: 1e-6, l2: 1e-4 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub data_loss: f64,
    pub l1_term: f64,
    pub l2_term: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BatchMode {
    Full,
    MiniBatch { size: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub iterations: usize,
    /// β
    pub l1_weight: f64,
    /// γ
    pub l2_weight: f64,
    /// Rate placed on the last hidden layer when a spec is built from this
    /// config. [`train`] itself uses the rates stored in the network's spec.
    pub dropout_rate: f64,
    pub batch_mode: BatchMode,
    pub seed: u64,
    /// Reported, not enforced: whether the final trace value got this low.
    pub target_loss: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.5,
            iterations: 300,
            l1_weight: 1e-6,
            l2_weight: 1e-4,
            dropout_rate: 0.2,
            batch_mode: BatchMode::Full,
            seed: 0,
            target_loss: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn regularization(&self) -> Regularization {
        Regularization {
            l1: self.l1_weight,
            l2: self.l2_weight,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "learning_rate must be finite and >= 0, got {}",
                self.learning_rate
            )));
        }
        if self.iterations == 0 {
            return Err(Error::InvalidArgument("iterations must be >= 1".into()));
        }
        if self.l1_weight < 0.0 || self.l2_weight < 0.0 {
            return Err(Error::InvalidArgument(
                "regularization weights must be >= 0".into(),
            ));
        }
        if let BatchMode::MiniBatch { size: 0 } = self.batch_mode {
            return Err(Error::InvalidArgument(
                "mini-batch size must be >= 1".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::InvalidArgument(
                "dropout_rate must be in [0, 1)".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub network: Network,
    /// Total (regularized) loss of each iteration, evaluated under that
    /// iteration's dropout masks before its update.
    pub loss_trace: Vec<f64>,
    pub reached_target: bool,
}

impl Network {
    /// Penalty terms of the current weights.
    pub fn penalty(&self, reg: Regularization) -> (f64, f64) {
        let l1: f64 = self
            .weights()
            .iter()
            .map(|w| w.iter().map(|v| v.abs()).sum::<f64>())
            .sum();
        let l2: f64 = self
            .weights()
            .iter()
            .map(|w| w.iter().map(|v| v * v).sum::<f64>())
            .sum();
        (reg.l1 * l1, 0.5 * reg.l2 * l2)
    }

    /// Weight-averaged loss over a batch.
    pub fn loss(
        &self,
        x: ArrayView2<'_, f64>,
        labels: &[usize],
        reg: Regularization,
    ) -> Result<LossBreakdown> {
        self.loss_with(x, labels, &DropoutMasks::weight_average(self.spec()), reg)
    }

    /// Loss under explicit dropout gates.
    pub fn loss_with(
        &self,
        x: ArrayView2<'_, f64>,
        labels: &[usize],
        masks: &DropoutMasks,
        reg: Regularization,
    ) -> Result<LossBreakdown> {
        self.check_batch(x, labels, masks)?;
        let f = self.forward_batch(x, masks);
        Ok(self.breakdown(&f.probs, labels, reg))
    }

    /// Mean cross-entropy of a probability matrix against labels.
    pub fn cross_entropy(probs: &Array2<f64>, labels: &[usize]) -> f64 {
        let sum: f64 = labels
            .iter()
            .enumerate()
            .map(|(i, &y)| -probs[(i, y)].max(LOG_GUARD).ln())
            .sum();
        sum / labels.len() as f64
    }

    fn breakdown(
        &self,
        probs: &Array2<f64>,
        labels: &[usize],
        reg: Regularization,
    ) -> LossBreakdown {
        let data_loss = Self::cross_entropy(probs, labels);
        let (l1_term, l2_term) = self.penalty(reg);
        LossBreakdown {
            data_loss,
            l1_term,
            l2_term,
            total: data_loss + l1_term + l2_term,
        }
    }

    fn check_batch(
        &self,
        x: ArrayView2<'_, f64>,
        labels: &[usize],
        masks: &DropoutMasks,
    ) -> Result<()> {
        if labels.is_empty() {
            return Err(Error::InsufficientData("empty batch".into()));
        }
        if x.nrows() != labels.len() {
            return Err(Error::DimensionMismatch {
                expected: labels.len(),
                actual: x.nrows(),
            });
        }
        if x.ncols() != self.spec().input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.spec().input_dim,
                actual: x.ncols(),
            });
        }
        if let Some(&y) = labels.iter().find(|&&y| y >= self.spec().n_classes) {
            return Err(Error::InvalidInput(format!("label {y} out of range")));
        }
        if masks.0.len() != self.spec().n_hidden() {
            return Err(Error::DimensionMismatch {
                expected: self.spec().n_hidden(),
                actual: masks.0.len(),
            });
        }
        for (g, &h) in masks.0.iter().zip(&self.spec().hidden_sizes) {
            if let super::Gate::Mask(m) = g {
                if m.dim() != (labels.len(), h) {
                    return Err(Error::InvalidInput(format!(
                        "mask shape {:?}, expected ({}, {h})",
                        m.dim(),
                        labels.len()
                    )));
                }
            }
        }
        Ok(())
    }

    /// Loss and its exact gradient under the given gates. The L1 subgradient
    /// is `sign(w)` with `0` at `w = 0`.
    pub fn gradients(
        &self,
        x: ArrayView2<'_, f64>,
        labels: &[usize],
        masks: &DropoutMasks,
        reg: Regularization,
    ) -> Result<(LossBreakdown, Gradients)> {
        self.check_batch(x, labels, masks)?;
        let f = self.forward_batch(x, masks);
        let loss = self.breakdown(&f.probs, labels, reg);
        let n = labels.len() as f64;

        // softmax + cross-entropy: dL/dS = (q - p) / n
        let mut delta = f.probs.clone();
        for (i, &y) in labels.iter().enumerate() {
            delta[(i, y)] -= 1.0;
        }
        delta /= n;

        let n_layers = self.weights().len();
        let mut gw = vec![Array2::zeros((0, 0)); n_layers];
        let mut gb = vec![Array1::zeros(0); n_layers];
        for l in (0..n_layers).rev() {
            let input = if l == 0 { x } else { f.passed[l - 1].view() };
            gw[l] = delta.t().dot(&input);
            gb[l] = delta.sum_axis(Axis(0));
            if l > 0 {
                let d_passed = delta.dot(&self.weights()[l]);
                let h = &f.hidden[l - 1];
                let d_hidden = masks.0[l - 1].apply_grad(d_passed);
                delta = d_hidden * &h.mapv(|a| a * (1.0 - a));
            }
        }
        for (g, w) in gw.iter_mut().zip(self.weights()) {
            if reg.l1 != 0.0 || reg.l2 != 0.0 {
                ndarray::Zip::from(g).and(w).for_each(|g, &w| {
                    let sign = if w > 0.0 {
                        1.0
                    } else if w < 0.0 {
                        -1.0
                    } else {
                        0.0
                    };
                    *g += reg.l1 * sign + reg.l2 * w;
                });
            }
        }
        Ok((
            loss,
            Gradients {
                weights: gw,
                biases: gb,
            },
        ))
    }

    fn step(&mut self, grads: &Gradients, lr: f64) {
        let (weights, biases) = self.params_mut();
        for (w, g) in weights.iter_mut().zip(&grads.weights) {
            w.scaled_add(-lr, g);
        }
        for (b, g) in biases.iter_mut().zip(&grads.biases) {
            b.scaled_add(-lr, g);
        }
    }

    fn all_finite(&self) -> bool {
        self.weights()
            .iter()
            .all(|w| w.iter().all(|v| v.is_finite()))
            && self
                .biases()
                .iter()
                .all(|b| b.iter().all(|v| v.is_finite()))
    }
}

/// Gradient descent on a private copy of `net`. Dropout masks are resampled
/// every step from a stream seeded by `cfg.seed`.
pub fn train(net: &Network, data: &FeatureSet, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.input_dim() != net.spec().input_dim {
        return Err(Error::DimensionMismatch {
            expected: net.spec().input_dim,
            actual: data.input_dim(),
        });
    }
    if data.is_empty() {
        return Err(Error::InsufficientData("empty training set".into()));
    }
    let reg = cfg.regularization();
    let mut rng = rng::stream(cfg.seed, &[tag::TRAIN]);
    let mut net = net.clone();
    let mut trace = Vec::with_capacity(cfg.iterations);
    let mut order: Vec<usize> = (0..data.len()).collect();

    for it in 0..cfg.iterations {
        let loss = match cfg.batch_mode {
            BatchMode::Full => {
                let masks = DropoutMasks::sample(net.spec(), data.len(), &mut rng);
                let (loss, g) = net.gradients(data.inputs.view(), &data.labels, &masks, reg)?;
                if loss.total.is_finite() {
                    net.step(&g, cfg.learning_rate);
                }
                loss.total
            }
            BatchMode::MiniBatch { size } => {
                order.shuffle(&mut rng);
                let mut sum = 0.0;
                let mut count = 0;
                for chunk in order.chunks(size) {
                    let x = data.inputs.select(Axis(0), chunk);
                    let y: Vec<usize> = chunk.iter().map(|&i| data.labels[i]).collect();
                    let masks = DropoutMasks::sample(net.spec(), chunk.len(), &mut rng);
                    let (loss, g) = net.gradients(x.view(), &y, &masks, reg)?;
                    if !loss.total.is_finite() {
                        sum = f64::NAN;
                        break;
                    }
                    net.step(&g, cfg.learning_rate);
                    sum += loss.total * chunk.len() as f64;
                    count += chunk.len();
                }
                sum / count.max(1) as f64
            }
        };
        if !loss.is_finite() || !net.all_finite() {
            return Err(Error::Diverged { iteration: it });
        }
        trace.push(loss);
    }
    let reached_target = trace.last().is_some_and(|&l| l <= cfg.target_loss);
    if !reached_target {
        log::debug!(
            "training finished at loss {:.4} above target {}",
            trace.last().copied().unwrap_or(f64::NAN),
            cfg.target_loss
        );
    }
    Ok(TrainOutcome {
        network: net,
        loss_trace: trace,
        reached_target,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{Gate, NetworkSpec};
    use ndarray::{array, Array1};

    fn two_point_set() -> FeatureSet {
        FeatureSet {
            inputs: array![[1.0, 0.0, 0.5], [-1.0, 0.5, 0.0]],
            labels: vec![0, 1],
            ids: vec!["a".into(), "b".into()],
            n_nodes: 3,
            class_names: ["A".into(), "B".into()],
        }
    }

    #[test]
    fn half_probability_gives_ln2() {
        let spec = NetworkSpec::new(2, vec![2], 2, 0.0);
        let net = Network::from_parts(
            spec,
            vec![Array2::zeros((2, 2)), Array2::zeros((2, 2))],
            vec![Array1::zeros(2), Array1::zeros(2)],
        )
        .unwrap();
        let l = net
            .loss(array![[1.0, 2.0]].view(), &[1], Regularization::NONE)
            .unwrap();
        assert!((l.total - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn certain_prediction_has_zero_data_loss_and_gradient() {
        // A huge output bias drives q(label) to exactly 1 in f64.
        let spec = NetworkSpec::new(2, vec![2], 2, 0.0);
        let net = Network::from_parts(
            spec.clone(),
            vec![Array2::from_elem((2, 2), 0.1), Array2::zeros((2, 2))],
            vec![Array1::zeros(2), array![800.0, 0.0]],
        )
        .unwrap();
        let x = array![[1.0, 2.0], [0.0, -1.0]];
        let l = net.loss(x.view(), &[0, 0], Regularization::NONE).unwrap();
        assert_eq!(l.data_loss, 0.0);
        let (_, g) = net
            .gradients(
                x.view(),
                &[0, 0],
                &DropoutMasks::keep_all(&spec),
                Regularization::NONE,
            )
            .unwrap();
        let norm: f64 = g
            .weights
            .iter()
            .map(|w| w.iter().map(|v| v * v).sum::<f64>())
            .sum::<f64>()
            + g.biases
                .iter()
                .map(|b| b.iter().map(|v| v * v).sum::<f64>())
                .sum::<f64>();
        assert_eq!(norm, 0.0);
    }

    #[test]
    fn unit_weights_penalty_arithmetic() {
        let spec = NetworkSpec::new(3, vec![2], 2, 0.0);
        let w0 = array![[1.0, -1.0, 1.0], [-1.0, 1.0, 1.0]];
        let w1 = array![[1.0, 1.0], [-1.0, -1.0]];
        let net = Network::from_parts(spec, vec![w0, w1], vec![Array1::zeros(2), Array1::zeros(2)])
            .unwrap();
        let m = net.n_weights() as f64;
        let (l1, l2) = net.penalty(Regularization { l1: 1.0, l2: 2.0 });
        assert_eq!((l1, l2), (m, m));
    }

    #[test]
    fn zero_weight_gets_no_l1_push() {
        let spec = NetworkSpec::new(2, vec![2], 2, 0.0);
        let net = Network::from_parts(
            spec.clone(),
            vec![
                array![[0.0, 0.3], [0.2, -0.1]],
                array![[0.5, -0.5], [0.1, 0.2]],
            ],
            vec![Array1::zeros(2), Array1::zeros(2)],
        )
        .unwrap();
        let x = array![[1.0, 1.0]];
        let masks = DropoutMasks::keep_all(&spec);
        let (_, plain) = net
            .gradients(x.view(), &[1], &masks, Regularization::NONE)
            .unwrap();
        let (_, reg) = net
            .gradients(x.view(), &[1], &masks, Regularization { l1: 0.7, l2: 0.0 })
            .unwrap();
        assert_eq!(plain.weights[0][(0, 0)], reg.weights[0][(0, 0)]);
        assert_eq!(reg.weights[0][(0, 1)] - plain.weights[0][(0, 1)], 0.7);
    }

    #[test]
    fn zero_learning_rate_leaves_network_unchanged() {
        let data = two_point_set();
        let net = Network::init(NetworkSpec::new(3, vec![4], 2, 0.2), 1).unwrap();
        let cfg = TrainConfig {
            learning_rate: 0.0,
            iterations: 5,
            ..TrainConfig::default()
        };
        assert_eq!(train(&net, &data, &cfg).unwrap().network, net);
    }

    #[test]
    fn training_is_seed_deterministic() {
        let data = two_point_set();
        let net = Network::init(NetworkSpec::new(3, vec![4], 2, 0.2), 1).unwrap();
        let cfg = TrainConfig {
            iterations: 20,
            seed: 4,
            ..TrainConfig::default()
        };
        let a = train(&net, &data, &cfg).unwrap();
        let b = train(&net, &data, &cfg).unwrap();
        assert_eq!(a.network, b.network);
        assert_eq!(a.loss_trace, b.loss_trace);
        let c = train(&net, &data, &TrainConfig { seed: 5, ..cfg }).unwrap();
        assert_ne!(a.network, c.network);
    }

    #[test]
    fn separable_pair_is_fit() {
        let data = two_point_set();
        let net = Network::init(NetworkSpec::new(3, vec![4], 2, 0.0), 2).unwrap();
        let cfg = TrainConfig {
            learning_rate: 0.5,
            iterations: 2000,
            l1_weight: 0.0,
            l2_weight: 0.0,
            ..TrainConfig::default()
        };
        let out = train(&net, &data, &cfg).unwrap();
        let l = out
            .network
            .loss(data.inputs.view(), &data.labels, Regularization::NONE)
            .unwrap();
        assert!(l.data_loss < 1e-3, "{}", l.data_loss);
    }

    #[test]
    fn mini_batch_mode_trains() {
        let data = two_point_set();
        let net = Network::init(NetworkSpec::new(3, vec![4], 2, 0.0), 2).unwrap();
        let cfg = TrainConfig {
            iterations: 200,
            batch_mode: BatchMode::MiniBatch { size: 1 },
            ..TrainConfig::default()
        };
        let out = train(&net, &data, &cfg).unwrap();
        assert!(out.loss_trace.last().unwrap() < &out.loss_trace[0]);
    }

    #[test]
    fn huge_learning_rate_diverges_with_iteration() {
        let data = two_point_set();
        let net = Network::init(NetworkSpec::new(3, vec![4], 2, 0.0), 2).unwrap();
        let cfg = TrainConfig {
            learning_rate: 1e308,
            iterations: 10,
            l2_weight: 1.0,
            ..TrainConfig::default()
        };
        assert!(matches!(
            train(&net, &data, &cfg),
            Err(Error::Diverged { .. })
        ));
    }

    #[test]
    fn mask_shape_is_checked() {
        let net = Network::init(NetworkSpec::new(2, vec![3], 2, 0.5), 0).unwrap();
        let masks = DropoutMasks(vec![Gate::Mask(Array2::ones((2, 3)))]);
        let r = net.gradients(
            array![[1.0, 2.0]].view(),
            &[0],
            &masks,
            Regularization::NONE,
        );
        assert!(r.is_err());
    }
}
