//! Fully connected sigmoid network with a softmax readout.
//!
//! Dropout is standard (non-inverted): a dropped neuron outputs 0 and a kept
//! one passes its activation unscaled. The deterministic forward pass uses
//! weight averaging instead, scaling each dropout layer's outgoing
//! contribution by its retain probability `1 - p`.

mod io;
mod train;

pub use io::{load_network, save_network, FORMAT_VERSION};
pub use train::{
    train, BatchMode, Gradients, LossBreakdown, Regularization, TrainConfig, TrainOutcome,
};

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::distr::{Distribution, Uniform};
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, tag};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input_dim: usize,
    pub hidden_sizes: Vec<usize>,
    pub n_classes: usize,
    /// One rate per hidden layer, each in `[0, 1)`.
    pub dropout_rates: Vec<f64>,
}

impl NetworkSpec {
    /// Spec with dropout rate `last_dropout` on the last hidden layer only.
    pub fn new(
        input_dim: usize,
        hidden_sizes: Vec<usize>,
        n_classes: usize,
        last_dropout: f64,
    ) -> Self {
        let mut dropout_rates = vec![0.0; hidden_sizes.len()];
        if let Some(last) = dropout_rates.last_mut() {
            *last = last_dropout;
        }
        Self {
            input_dim,
            hidden_sizes,
            n_classes,
            dropout_rates,
        }
    }

    /// `first` neurons in the first hidden layer and `first / 2` in each of
    /// the following ones: `(3, 20)` gives `[20, 10, 10]`.
    pub fn halving_sizes(layers: usize, first: usize) -> Vec<usize> {
        (0..layers)
            .map(|l| if l == 0 { first } else { (first / 2).max(1) })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::InvalidArgument("input_dim must be positive".into()));
        }
        if self.n_classes < 2 {
            return Err(Error::InvalidArgument("need at least two classes".into()));
        }
        if self.hidden_sizes.contains(&0) {
            return Err(Error::InvalidArgument(
                "hidden layer sizes must be positive".into(),
            ));
        }
        if self.dropout_rates.len() != self.hidden_sizes.len() {
            return Err(Error::InvalidArgument(format!(
                "{} dropout rates for {} hidden layers",
                self.dropout_rates.len(),
                self.hidden_sizes.len()
            )));
        }
        if let Some(p) = self.dropout_rates.iter().find(|p| !(0.0..1.0).contains(*p)) {
            return Err(Error::InvalidArgument(format!(
                "dropout rate {p} outside [0, 1)"
            )));
        }
        Ok(())
    }

    /// Layer widths from input to output.
    pub fn widths(&self) -> Vec<usize> {
        let mut w = Vec::with_capacity(self.hidden_sizes.len() + 2);
        w.push(self.input_dim);
        w.extend(&self.hidden_sizes);
        w.push(self.n_classes);
        w
    }

    pub fn n_hidden(&self) -> usize {
        self.hidden_sizes.len()
    }
}

/// Per-hidden-layer dropout applied to a batch.
#[derive(Debug, Clone, PartialEq)]
pub enum Gate {
    /// Every activation multiplied by the same factor (`1 - p` for weight
    /// averaging, `1` for no dropout).
    Scale(f64),
    /// Batch × width matrix of 0/1 keep flags.
    Mask(Array2<f64>),
}

impl Gate {
    fn apply(&self, h: &Array2<f64>) -> Array2<f64> {
        match self {
            Gate::Scale(s) if *s == 1.0 => h.clone(),
            Gate::Scale(s) => h * *s,
            Gate::Mask(m) => h * m,
        }
    }

    fn apply_grad(&self, g: Array2<f64>) -> Array2<f64> {
        match self {
            Gate::Scale(s) if *s == 1.0 => g,
            Gate::Scale(s) => g * *s,
            Gate::Mask(m) => g * m,
        }
    }
}

/// One [`Gate`] per hidden layer.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMasks(pub Vec<Gate>);

impl DropoutMasks {
    /// Weight-averaging gates: `Scale(1 - p)` per layer.
    pub fn weight_average(spec: &NetworkSpec) -> Self {
        Self(
            spec.dropout_rates
                .iter()
                .map(|p| Gate::Scale(1.0 - p))
                .collect(),
        )
    }

    /// No dropout anywhere.
    pub fn keep_all(spec: &NetworkSpec) -> Self {
        Self(vec![Gate::Scale(1.0); spec.n_hidden()])
    }

    /// Fresh Bernoulli keep masks for a batch, using each layer's rate.
    /// Layers with rate 0 get `Scale(1)`.
    pub fn sample<R: Rng + ?Sized>(spec: &NetworkSpec, batch: usize, rng: &mut R) -> Self {
        Self(
            spec.dropout_rates
                .iter()
                .zip(&spec.hidden_sizes)
                .map(|(&p, &h)| {
                    if p == 0.0 {
                        Gate::Scale(1.0)
                    } else {
                        Gate::Mask(Array2::from_shape_simple_fn((batch, h), || {
                            if rng.random::<f64>() < p {
                                0.0
                            } else {
                                1.0
                            }
                        }))
                    }
                })
                .collect(),
        )
    }

    /// Single-input masks from keep flags (`true` = kept).
    pub fn from_keep_flags(flags: &[Vec<bool>]) -> Self {
        Self(
            flags
                .iter()
                .map(|f| {
                    Gate::Mask(Array2::from_shape_fn((1, f.len()), |(_, j)| {
                        if f[j] {
                            1.0
                        } else {
                            0.0
                        }
                    }))
                })
                .collect(),
        )
    }
}

pub enum ForwardMode<'a> {
    /// Weight averaging: dropout layers scaled by their retain probability.
    Deterministic,
    /// Explicit keep flags, one vector per hidden layer.
    TrainDropout(&'a [Vec<bool>]),
    /// Fresh masks drawn from each layer's dropout rate.
    McDropout(&'a mut dyn RngCore),
}

/// Result of a single-input forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Activations {
    /// Sigmoid outputs of each hidden layer.
    pub hidden: Vec<Vec<f64>>,
    /// What each hidden layer passes on after dropout or weight averaging.
    pub passed: Vec<Vec<f64>>,
    /// Pre-softmax class scores `S`.
    pub scores: Vec<f64>,
    /// Class probabilities `q`.
    pub probs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub probs: Vec<f64>,
    pub label: usize,
}

impl Prediction {
    pub fn from_probs(probs: Vec<f64>) -> Self {
        let label = argmax(&probs);
        Self { probs, label }
    }
}

/// Batch forward pass, all layers kept.
#[derive(Debug, Clone)]
pub(crate) struct BatchForward {
    pub hidden: Vec<Array2<f64>>,
    pub passed: Vec<Array2<f64>>,
    pub scores: Array2<f64>,
    pub probs: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    spec: NetworkSpec,
    /// `weights[l]` maps layer `l` to layer `l + 1`: shape `(next, prev)`.
    weights: Vec<Array2<f64>>,
    biases: Vec<Array1<f64>>,
}

impl Network {
    /// Uniform `±sqrt(6 / (fan_in + fan_out))` weights, zero biases.
    pub fn init(spec: NetworkSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = rng::stream(seed, &[tag::INIT]);
        let widths = spec.widths();
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for pair in widths.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let dist = Uniform::new_inclusive(-limit, limit).expect("finite bounds");
            weights.push(Array2::from_shape_simple_fn((fan_out, fan_in), || {
                dist.sample(&mut rng)
            }));
            biases.push(Array1::zeros(fan_out));
        }
        Ok(Self {
            spec,
            weights,
            biases,
        })
    }

    pub fn from_parts(
        spec: NetworkSpec,
        weights: Vec<Array2<f64>>,
        biases: Vec<Array1<f64>>,
    ) -> Result<Self> {
        spec.validate()?;
        let widths = spec.widths();
        if weights.len() != widths.len() - 1 || biases.len() != widths.len() - 1 {
            return Err(Error::InvalidInput(format!(
                "expected {} weight layers, got {} weights and {} biases",
                widths.len() - 1,
                weights.len(),
                biases.len()
            )));
        }
        for (l, pair) in widths.windows(2).enumerate() {
            if weights[l].dim() != (pair[1], pair[0]) {
                return Err(Error::InvalidInput(format!(
                    "layer {l} weights have shape {:?}, expected ({}, {})",
                    weights[l].dim(),
                    pair[1],
                    pair[0]
                )));
            }
            if biases[l].len() != pair[1] {
                return Err(Error::InvalidInput(format!(
                    "layer {l} bias has length {}, expected {}",
                    biases[l].len(),
                    pair[1]
                )));
            }
        }
        let finite = weights.iter().all(|w| w.iter().all(|v| v.is_finite()))
            && biases.iter().all(|b| b.iter().all(|v| v.is_finite()));
        if !finite {
            return Err(Error::InvalidInput("non-finite network parameter".into()));
        }
        Ok(Self {
            spec,
            weights,
            biases,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn weights(&self) -> &[Array2<f64>] {
        &self.weights
    }

    pub fn biases(&self) -> &[Array1<f64>] {
        &self.biases
    }

    pub(crate) fn params_mut(&mut self) -> (&mut [Array2<f64>], &mut [Array1<f64>]) {
        (&mut self.weights, &mut self.biases)
    }

    /// Same parameters, different dropout rates.
    pub fn with_dropout_rates(&self, rates: Vec<f64>) -> Result<Self> {
        let spec = NetworkSpec {
            dropout_rates: rates,
            ..self.spec.clone()
        };
        spec.validate()?;
        Ok(Self {
            spec,
            weights: self.weights.clone(),
            biases: self.biases.clone(),
        })
    }

    pub fn n_weights(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum()
    }

    pub fn forward(&self, x: &[f64], mode: ForwardMode<'_>) -> Result<Activations> {
        self.check_dim(x.len())?;
        let masks = match mode {
            ForwardMode::Deterministic => DropoutMasks::weight_average(&self.spec),
            ForwardMode::TrainDropout(flags) => {
                if flags.len() != self.spec.n_hidden() {
                    return Err(Error::DimensionMismatch {
                        expected: self.spec.n_hidden(),
                        actual: flags.len(),
                    });
                }
                for (f, &h) in flags.iter().zip(&self.spec.hidden_sizes) {
                    if f.len() != h {
                        return Err(Error::DimensionMismatch {
                            expected: h,
                            actual: f.len(),
                        });
                    }
                }
                DropoutMasks::from_keep_flags(flags)
            }
            ForwardMode::McDropout(rng) => DropoutMasks::sample(&self.spec, 1, rng),
        };
        let xb = ArrayView2::from_shape((1, x.len()), x).expect("row view");
        let f = self.forward_batch(xb, &masks);
        let row = |a: &Array2<f64>| a.row(0).to_vec();
        Ok(Activations {
            hidden: f.hidden.iter().map(row).collect(),
            passed: f.passed.iter().map(row).collect(),
            scores: row(&f.scores),
            probs: row(&f.probs),
        })
    }

    /// Weight-averaged prediction; ties go to the lower class index.
    pub fn predict(&self, x: &[f64]) -> Result<Prediction> {
        Ok(Prediction::from_probs(
            self.forward(x, ForwardMode::Deterministic)?.probs,
        ))
    }

    /// Weight-averaged class probabilities for every row of `x`.
    pub fn predict_batch(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.check_dim(x.ncols())?;
        Ok(self
            .forward_batch(x, &DropoutMasks::weight_average(&self.spec))
            .probs)
    }

    fn check_dim(&self, got: usize) -> Result<()> {
        if got != self.spec.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.spec.input_dim,
                actual: got,
            });
        }
        Ok(())
    }

    /// `sigmoid(input · Wᵀ + b)` for weight layer `layer` (a hidden layer).
    pub(crate) fn hidden_layer(&self, layer: usize, input: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut z = input.dot(&self.weights[layer].t());
        z += &self.biases[layer];
        z.mapv_inplace(sigmoid);
        z
    }

    /// Scores and softmax probabilities from the last hidden layer's passed output.
    pub(crate) fn readout(&self, passed: ArrayView2<'_, f64>) -> (Array2<f64>, Array2<f64>) {
        let last = self.weights.len() - 1;
        let mut scores = passed.dot(&self.weights[last].t());
        scores += &self.biases[last];
        let mut probs = scores.clone();
        for mut row in probs.axis_iter_mut(Axis(0)) {
            let q = softmax(row.as_slice().expect("contiguous"));
            row.assign(&Array1::from(q));
        }
        (scores, probs)
    }

    pub(crate) fn forward_batch(
        &self,
        x: ArrayView2<'_, f64>,
        masks: &DropoutMasks,
    ) -> BatchForward {
        let n_hidden = self.spec.n_hidden();
        let mut hidden = Vec::with_capacity(n_hidden);
        let mut passed: Vec<Array2<f64>> = Vec::with_capacity(n_hidden);
        for l in 0..n_hidden {
            let h = match passed.last() {
                None => self.hidden_layer(l, x),
                Some(p) => self.hidden_layer(l, p.view()),
            };
            passed.push(masks.0[l].apply(&h));
            hidden.push(h);
        }
        let (scores, probs) = match passed.last() {
            None => self.readout(x),
            Some(p) => self.readout(p.view()),
        };
        BatchForward {
            hidden,
            passed,
            scores,
            probs,
        }
    }
}

/// `1 / (1 + e^-x)`, branching on sign so neither tail overflows.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softmax(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Index of the largest value; the first one wins ties.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;

    /// `e^x` by its Taylor series, inverting for negative arguments.
    fn exp_oracle(x: f64) -> f64 {
        if x < 0.0 {
            return 1.0 / exp_oracle(-x);
        }
        let mut term = 1.0;
        let mut sum = 1.0;
        for n in 1..80 {
            term *= x / n as f64;
            sum += term;
        }
        sum
    }

    fn zero_net(spec: NetworkSpec) -> Network {
        let widths = spec.widths();
        let weights = widths
            .windows(2)
            .map(|p| Array2::zeros((p[1], p[0])))
            .collect();
        let biases = widths.windows(2).map(|p| Array1::zeros(p[1])).collect();
        Network::from_parts(spec, weights, biases).unwrap()
    }

    #[test]
    fn sigmoid_values() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert_abs_diff_eq!(
            sigmoid(2.0),
            1.0 / (1.0 + exp_oracle(-2.0)),
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(sigmoid(2.0), 0.880_797_077_977_882_3, epsilon = 1e-15);
        for x in [-1e3, -30.0, -1.5, 0.3, 7.0, 1e3] {
            assert_abs_diff_eq!(sigmoid(x) + sigmoid(-x), 1.0, epsilon = 1e-15);
            assert!(sigmoid(x).is_finite());
        }
    }

    #[test]
    fn softmax_of_one_zero() {
        let q = softmax(&[1.0, 0.0]);
        let e = exp_oracle(1.0);
        assert_abs_diff_eq!(q[0], e / (e + 1.0), epsilon = 1e-15);
        assert_abs_diff_eq!(q[0], 0.731_058_578_630_004_9, epsilon = 1e-15);
        assert_abs_diff_eq!(q[1], 0.268_941_421_369_995_1, epsilon = 1e-15);
    }

    #[test]
    fn zero_network_is_uniform() {
        let net = zero_net(NetworkSpec::new(4, vec![3, 2], 2, 0.0));
        let a = net
            .forward(&[1.0, -2.0, 0.5, 3.0], ForwardMode::Deterministic)
            .unwrap();
        assert!(a.hidden.iter().flatten().all(|&v| v == 0.5));
        assert_eq!(a.probs, vec![0.5, 0.5]);
        assert_eq!(net.predict(&[0.0; 4]).unwrap().label, 0);
    }

    #[test]
    fn init_is_deterministic_with_zero_biases() {
        let spec = NetworkSpec::new(30, vec![20, 10], 2, 0.2);
        let a = Network::init(spec.clone(), 5).unwrap();
        let b = Network::init(spec.clone(), 5).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, Network::init(spec, 6).unwrap());
        assert!(a.biases().iter().flatten().all(|&b| b == 0.0));
    }

    #[test]
    fn init_weight_mean_near_zero() {
        let spec = NetworkSpec::new(300, vec![200, 100], 2, 0.0);
        let net = Network::init(spec, 1).unwrap();
        for (w, pair) in net.weights().iter().zip(net.spec().widths().windows(2)) {
            let limit = (6.0 / (pair[0] + pair[1]) as f64).sqrt();
            let count = w.len() as f64;
            let sd = limit / 3f64.sqrt();
            let mean = w.sum() / count;
            assert!(mean.abs() < 3.0 * sd / count.sqrt(), "mean {mean}");
            assert!(w.iter().all(|v| v.abs() <= limit));
        }
    }

    #[test]
    fn zero_rate_modes_agree_exactly() {
        let net = Network::init(NetworkSpec::new(6, vec![5, 4], 2, 0.0), 3).unwrap();
        let x = [0.3, -1.0, 2.0, 0.1, 0.0, -0.4];
        let det = net.forward(&x, ForwardMode::Deterministic).unwrap();
        let flags = vec![vec![true; 5], vec![true; 4]];
        let tr = net.forward(&x, ForwardMode::TrainDropout(&flags)).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mc = net.forward(&x, ForwardMode::McDropout(&mut rng)).unwrap();
        assert_eq!(det.probs, tr.probs);
        assert_eq!(det.probs, mc.probs);
    }

    #[test]
    fn dropped_neurons_output_zero_and_kept_pass_unscaled() {
        let net = Network::init(NetworkSpec::new(3, vec![4], 2, 0.5), 2).unwrap();
        let flags = vec![vec![true, false, true, false]];
        let a = net
            .forward(&[1.0, 2.0, 3.0], ForwardMode::TrainDropout(&flags))
            .unwrap();
        assert_eq!(a.passed[0][1], 0.0);
        assert_eq!(a.passed[0][0], a.hidden[0][0]);
        let d = net
            .forward(&[1.0, 2.0, 3.0], ForwardMode::Deterministic)
            .unwrap();
        assert_eq!(d.passed[0][1], 0.5 * d.hidden[0][1]);
    }

    #[test]
    fn forward_rejects_wrong_length() {
        let net = Network::init(NetworkSpec::new(3, vec![2], 2, 0.0), 0).unwrap();
        assert!(matches!(
            net.forward(&[1.0], ForwardMode::Deterministic),
            Err(Error::DimensionMismatch {
                expected: 3,
                actual: 1
            })
        ));
    }

    #[test]
    fn predict_matches_forward_argmax() {
        let net = Network::init(NetworkSpec::new(5, vec![6], 3, 0.2), 9).unwrap();
        for i in 0..20 {
            let x: Vec<f64> = (0..5)
                .map(|j| ((i * 7 + j * 3) % 11) as f64 - 5.0)
                .collect();
            let p = net.predict(&x).unwrap();
            let a = net.forward(&x, ForwardMode::Deterministic).unwrap();
            assert_eq!(p.label, argmax(&a.probs));
            assert_eq!(p.probs, a.probs);
        }
    }

    #[test]
    fn halving_sizes_follow_first_layer() {
        assert_eq!(NetworkSpec::halving_sizes(1, 20), vec![20]);
        assert_eq!(NetworkSpec::halving_sizes(3, 20), vec![20, 10, 10]);
        assert_eq!(NetworkSpec::halving_sizes(3, 200), vec![200, 100, 100]);
        assert_eq!(NetworkSpec::halving_sizes(2, 50), vec![50, 25]);
    }

    #[test]
    fn weight_averaging_is_dropout_expectation_for_linear_readout() {
        // One dropout layer feeding a linear readout: E[w · (m ⊙ h)] = (1 - p) w · h.
        let net = Network::init(NetworkSpec::new(4, vec![16], 2, 0.3), 4).unwrap();
        let x = [0.5, -1.0, 0.25, 2.0];
        let det = net.forward(&x, ForwardMode::Deterministic).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
        let n = 20_000;
        let samples: Vec<f64> = (0..n)
            .map(|_| {
                net.forward(&x, ForwardMode::McDropout(&mut rng))
                    .unwrap()
                    .scores[0]
            })
            .collect();
        let mean = samples.iter().sum::<f64>() / n as f64;
        let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let se = (var / n as f64).sqrt();
        assert!(
            (mean - det.scores[0]).abs() < 3.0 * se,
            "{mean} vs {}",
            det.scores[0]
        );
    }

    proptest! {
        #[test]
        fn softmax_sums_to_one_and_is_shift_invariant(
            s in prop::collection::vec(-700.0f64..700.0, 2..6),
            c in -50.0f64..50.0,
        ) {
            let q = softmax(&s);
            prop_assert!((q.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(q.iter().all(|&v| (0.0..=1.0).contains(&v)));
            let shifted: Vec<f64> = s.iter().map(|v| v + c).collect();
            for (a, b) in q.iter().zip(softmax(&shifted)) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn argmax_invariant_under_positive_temperature(
            s in prop::collection::vec(-50.0f64..50.0, 2..6),
            t in 0.01f64..100.0,
        ) {
            let scaled: Vec<f64> = s.iter().map(|v| v * t).collect();
            prop_assert_eq!(argmax(&softmax(&s)), argmax(&softmax(&scaled)));
        }
    }
}
