//! Versioned JSON network documents.
//!
//! ```json
//! {
//!   "format": "connlab-network",
//!   "version": 1,
//!   "spec": { "input_dim": 2, "hidden_sizes": [2], "n_classes": 2, "dropout_rates": [0.0] },
//!   "weights": [ [[w00, w01], [w10, w11]], [[...], [...]] ],
//!   "biases":  [ [b0, b1], [b0, b1] ]
//! }
//! ```
//!
//! `weights[l]` holds the rows of the `(next, prev)` matrix of layer `l`.
//! Floats are written in shortest round-trip form, so loading is bit-exact.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::{Network, NetworkSpec};
use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;
const FORMAT_NAME: &str = "connlab-network";

#[derive(Serialize, Deserialize)]
struct Document {
    format: String,
    version: u32,
    spec: NetworkSpec,
    weights: Vec<Vec<Vec<f64>>>,
    biases: Vec<Vec<f64>>,
}

impl Network {
    pub fn to_json(&self) -> Result<String> {
        let doc = Document {
            format: FORMAT_NAME.into(),
            version: FORMAT_VERSION,
            spec: self.spec().clone(),
            weights: self
                .weights()
                .iter()
                .map(|w| w.rows().into_iter().map(|r| r.to_vec()).collect())
                .collect(),
            biases: self.biases().iter().map(|b| b.to_vec()).collect(),
        };
        Ok(serde_json::to_string_pretty(&doc)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: Document = serde_json::from_str(text)?;
        if doc.format != FORMAT_NAME {
            return Err(Error::Format(format!(
                "not a network document: {:?}",
                doc.format
            )));
        }
        if doc.version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "network format version {} not supported (expected {FORMAT_VERSION})",
                doc.version
            )));
        }
        let weights = doc
            .weights
            .into_iter()
            .enumerate()
            .map(|(l, rows)| {
                let nrows = rows.len();
                let ncols = rows.first().map_or(0, Vec::len);
                if rows.iter().any(|r| r.len() != ncols) {
                    return Err(Error::Format(format!("layer {l} weights are ragged")));
                }
                Array2::from_shape_vec((nrows, ncols), rows.into_iter().flatten().collect())
                    .map_err(|e| Error::Format(e.to_string()))
            })
            .collect::<Result<Vec<_>>>()?;
        let biases = doc.biases.into_iter().map(Array1::from).collect();
        Network::from_parts(doc.spec, weights, biases)
            .map_err(|e| Error::Format(format!("shape mismatch: {e}")))
    }
}

pub fn save_network(net: &Network, path: &Path) -> Result<()> {
    fs::write(path, net.to_json()?).map_err(|e| Error::io(path, e))
}

pub fn load_network(path: &Path) -> Result<Network> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Network::from_json(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::ForwardMode;

    #[test]
    fn round_trip_is_bit_identical() {
        let net = Network::init(NetworkSpec::new(7, vec![5, 3], 2, 0.2), 8).unwrap();
        let back = Network::from_json(&net.to_json().unwrap()).unwrap();
        assert_eq!(back, net);
        for (a, b) in net.weights().iter().zip(back.weights()) {
            for (x, y) in a.iter().zip(b) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn truncated_document_is_an_error() {
        let text = Network::init(NetworkSpec::new(3, vec![2], 2, 0.0), 0)
            .unwrap()
            .to_json()
            .unwrap();
        let cut = &text[..text.len() / 2];
        assert!(matches!(Network::from_json(cut), Err(Error::Json(_))));
    }

    #[test]
    fn version_and_shape_are_checked() {
        let net = Network::init(NetworkSpec::new(3, vec![2], 2, 0.0), 0).unwrap();
        let text = net.to_json().unwrap();
        let bumped = text.replace("\"version\": 1", "\"version\": 9");
        assert!(Network::from_json(&bumped)
            .unwrap_err()
            .to_string()
            .contains("version"));
        let bad = text.replace("\"input_dim\": 3", "\"input_dim\": 4");
        assert!(Network::from_json(&bad)
            .unwrap_err()
            .to_string()
            .contains("shape"));
    }

    #[test]
    fn hand_written_2_2_2_network() {
        let text = r#"{
            "format": "connlab-network",
            "version": 1,
            "spec": {"input_dim": 2, "hidden_sizes": [2], "n_classes": 2, "dropout_rates": [0.0]},
            "weights": [[[1.0, 0.0], [0.0, 1.0]], [[1.0, -1.0], [-1.0, 1.0]]],
            "biases": [[0.0, 0.0], [0.0, 0.0]]
        }"#;
        let net = Network::from_json(text).unwrap();
        let a = net
            .forward(&[2.0, 0.0], ForwardMode::Deterministic)
            .unwrap();
        // hidden = (sigmoid(2), 0.5); S = (h0 - h1, h1 - h0)
        let h0 = 1.0 / (1.0 + (-2.0f64).exp());
        let d = h0 - 0.5;
        assert!((a.scores[0] - d).abs() < 1e-15);
        let q0 = 1.0 / (1.0 + (-2.0 * d).exp());
        assert!((a.probs[0] - q0).abs() < 1e-15);
        assert_eq!(net.predict(&[2.0, 0.0]).unwrap().label, 0);
    }
}
