//! Functional-connectivity inputs: the per-subject correlation matrix, the
//! preprocessing chain (Fisher r-to-z, upper-triangle standardization,
//! vectorization), datasets, file I/O and a synthetic generator.

mod dataset;
mod io;
mod synthetic;

pub use dataset::{Dataset, FeatureSet, SubjectRecord};
pub use io::{dataset_files, load_dataset, save_dataset, MANIFEST_FILE};
pub use synthetic::{generate_synthetic, SyntheticConfig};

use crate::error::{Error, Result};

/// Correlations are clamped to `±(1 - R_CLAMP)` before `atanh`.
pub const R_CLAMP: f64 = 1e-9;

/// Asymmetry accepted by [`ConnectivityMatrix::new`]; the stored matrix is
/// symmetrized exactly.
pub const SYMMETRY_TOL: f64 = 1e-9;

/// Length of the feature vector for an `n`-node matrix.
pub fn input_dim(n_nodes: usize) -> usize {
    n_nodes * n_nodes.saturating_sub(1) / 2
}

/// Inverse of [`input_dim`], if `dim` is a triangular number.
pub fn nodes_for_dim(dim: usize) -> Option<usize> {
    let n = ((1.0 + (1.0 + 8.0 * dim as f64).sqrt()) / 2.0).round() as usize;
    (n >= 2 && input_dim(n) == dim).then_some(n)
}

/// Symmetric `n × n` matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ConnectivityMatrix {
    n_nodes: usize,
    values: Vec<f64>,
}

impl ConnectivityMatrix {
    /// Builds a matrix from row-major values. Finite mirrored pairs may differ
    /// by at most [`SYMMETRY_TOL`]; they are replaced by their average.
    pub fn new(n_nodes: usize, mut values: Vec<f64>) -> Result<Self> {
        if n_nodes == 0 {
            return Err(Error::InvalidInput("matrix needs at least one node".into()));
        }
        if values.len() != n_nodes * n_nodes {
            return Err(Error::DimensionMismatch {
                expected: n_nodes * n_nodes,
                actual: values.len(),
            });
        }
        for i in 0..n_nodes {
            for j in i + 1..n_nodes {
                let (a, b) = (values[i * n_nodes + j], values[j * n_nodes + i]);
                if a.is_finite() && b.is_finite() {
                    if (a - b).abs() > SYMMETRY_TOL {
                        return Err(Error::InvalidInput(format!(
                            "matrix not symmetric at ({i}, {j}): {a} vs {b}"
                        )));
                    }
                    let m = 0.5 * (a + b);
                    values[i * n_nodes + j] = m;
                    values[j * n_nodes + i] = m;
                }
            }
        }
        Ok(Self { n_nodes, values })
    }

    pub fn from_fn(n_nodes: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut values = vec![0.0; n_nodes * n_nodes];
        for i in 0..n_nodes {
            for j in i..n_nodes {
                let v = f(i, j);
                values[i * n_nodes + j] = v;
                values[j * n_nodes + i] = v;
            }
        }
        Self::new(n_nodes, values)
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n_nodes + j]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n_nodes..(i + 1) * self.n_nodes]
    }

    /// Off-diagonal `z = atanh(r)` with `|r|` clamped to `1 - R_CLAMP`; the
    /// diagonal is zeroed since it never enters the feature vector.
    pub fn fisher_z(&self) -> Result<Self> {
        let n = self.n_nodes;
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                let r = self.get(i, j);
                if !r.is_finite() {
                    return Err(Error::InvalidInput(format!(
                        "non-finite correlation at cell ({i}, {j}): {r}"
                    )));
                }
                if i == j {
                    continue;
                }
                if r.abs() > 1.0 + 1e-6 {
                    return Err(Error::InvalidInput(format!(
                        "correlation outside [-1, 1] at cell ({i}, {j}): {r}"
                    )));
                }
                let lim = 1.0 - R_CLAMP;
                out[i * n + j] = atanh(r.clamp(-lim, lim));
            }
        }
        Ok(Self {
            n_nodes: n,
            values: out,
        })
    }

    /// Standardizes the upper-triangle off-diagonal entries to zero mean and
    /// unit population variance, mirroring to keep symmetry. The diagonal is
    /// left at zero.
    pub fn normalize(&self) -> Result<Self> {
        let upper = self.vectorize();
        if upper.is_empty() {
            return Err(Error::Degenerate(
                "matrix has no off-diagonal entries".into(),
            ));
        }
        let (mean, var) = population_moments(&upper);
        if var <= 0.0 || upper.iter().all(|&v| v == upper[0]) {
            return Err(Error::Degenerate(
                "off-diagonal entries have zero variance".into(),
            ));
        }
        let sd = var.sqrt();
        let scaled: Vec<f64> = upper.iter().map(|v| (v - mean) / sd).collect();
        Self::devectorize(&scaled, self.n_nodes)
    }

    /// Upper-triangle off-diagonal entries in row-major order (`i < j`).
    pub fn vectorize(&self) -> Vec<f64> {
        let n = self.n_nodes;
        let mut out = Vec::with_capacity(input_dim(n));
        for i in 0..n {
            out.extend_from_slice(&self.row(i)[i + 1..]);
        }
        out
    }

    /// Rebuilds the symmetric matrix from a [`vectorize`](Self::vectorize)d
    /// vector, with a zero diagonal.
    pub fn devectorize(v: &[f64], n_nodes: usize) -> Result<Self> {
        if v.len() != input_dim(n_nodes) {
            return Err(Error::DimensionMismatch {
                expected: input_dim(n_nodes),
                actual: v.len(),
            });
        }
        let mut values = vec![0.0; n_nodes * n_nodes];
        let mut k = 0;
        for i in 0..n_nodes {
            for j in i + 1..n_nodes {
                values[i * n_nodes + j] = v[k];
                values[j * n_nodes + i] = v[k];
                k += 1;
            }
        }
        Ok(Self { n_nodes, values })
    }

    /// Full chain applied to every subject: `vectorize(normalize(fisher_z(m)))`.
    pub fn preprocess(&self) -> Result<Vec<f64>> {
        Ok(self.fisher_z()?.normalize()?.vectorize())
    }
}

/// Elementwise `alpha * a + (1 - alpha) * b`.
pub fn mix(a: &[f64], b: &[f64], alpha: f64) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidArgument(format!(
            "mixing weight {alpha} outside [0, 1]"
        )));
    }
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            actual: b.len(),
        });
    }
    Ok(a.iter()
        .zip(b)
        .map(|(x, y)| alpha * x + (1.0 - alpha) * y)
        .collect())
}

/// `atanh` evaluated on `|x|` and signed afterwards, so it is exactly odd and
/// keeps full precision near -1 (where `f64::atanh` loses digits).
pub fn atanh(x: f64) -> f64 {
    let a = x.abs();
    let z = 0.5 * (2.0 * a / (1.0 - a)).ln_1p();
    z.copysign(x)
}

pub(crate) fn population_moments(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    /// `atanh(x) = sum_k x^(2k+1) / (2k+1)`, summed until terms vanish.
    /// Independent of `f64::atanh`; converges fast for |x| <= 0.5.
    fn atanh_series(x: f64) -> f64 {
        let x2 = x * x;
        let mut term = x;
        let mut sum = 0.0;
        for k in 0..200 {
            sum += term / (2 * k + 1) as f64;
            term *= x2;
        }
        sum
    }

    fn three_node(a: f64, b: f64, c: f64) -> ConnectivityMatrix {
        ConnectivityMatrix::new(3, vec![1.0, a, b, a, 1.0, c, b, c, 1.0]).unwrap()
    }

    #[test]
    fn fisher_z_known_values() {
        let z = three_node(0.0, 0.5, -0.5).fisher_z().unwrap();
        assert_eq!(z.get(0, 1), 0.0);
        assert_abs_diff_eq!(z.get(0, 2), atanh_series(0.5), epsilon = 1e-12);
        assert_abs_diff_eq!(z.get(0, 2), 0.549_306_144_334_054_8, epsilon = 1e-12);
        assert_abs_diff_eq!(z.get(1, 2), -atanh_series(0.5), epsilon = 1e-12);
        for i in 0..3 {
            assert_eq!(z.get(i, i), 0.0);
        }
    }

    #[test]
    fn fisher_z_clamps_unit_correlation() {
        let z = three_node(1.0, -1.0, 0.2).fisher_z().unwrap();
        let lim = (1.0 - R_CLAMP).atanh();
        assert_eq!(z.get(0, 1), lim);
        assert_eq!(z.get(0, 2), -lim);
        assert!(z.values().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn fisher_z_names_non_finite_cell() {
        let m = ConnectivityMatrix::new(2, vec![1.0, f64::NAN, f64::NAN, 1.0]).unwrap();
        let err = m.fisher_z().unwrap_err().to_string();
        assert!(err.contains("(0, 1)"), "{err}");
    }

    #[test]
    fn normalize_three_node_example() {
        let m = three_node(1.0, 2.0, 3.0).normalize().unwrap();
        let s = (2.0f64 / 3.0).sqrt();
        assert_abs_diff_eq!(m.get(0, 1), -1.0 / s, epsilon = 1e-12);
        assert_abs_diff_eq!(m.get(0, 2), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(m.get(1, 2), 1.0 / s, epsilon = 1e-12);
        assert_abs_diff_eq!(m.get(0, 1), -1.224_744_871_391_589, epsilon = 1e-12);
    }

    #[test]
    fn normalize_rejects_constant() {
        let err = three_node(0.3, 0.3, 0.3).normalize().unwrap_err();
        assert!(matches!(err, Error::Degenerate(_)));
    }

    #[test]
    fn vectorize_order_and_lengths() {
        assert_eq!(three_node(0.1, 0.2, 0.3).vectorize(), vec![0.1, 0.2, 0.3]);
        assert_eq!(input_dim(25), 300);
        assert_eq!(input_dim(300), 44850);
        assert_eq!(nodes_for_dim(300), Some(25));
        assert_eq!(nodes_for_dim(44850), Some(300));
        assert_eq!(nodes_for_dim(7), None);
    }

    #[test]
    fn asymmetric_matrix_rejected() {
        assert!(ConnectivityMatrix::new(2, vec![1.0, 0.5, 0.4, 1.0]).is_err());
        let m = ConnectivityMatrix::new(2, vec![1.0, 0.5, 0.5 + 1e-12, 1.0]).unwrap();
        assert_eq!(m.get(0, 1), m.get(1, 0));
    }

    #[test]
    fn mix_cases() {
        let a = [2.0, 0.0];
        let b = [0.0, 2.0];
        assert_eq!(mix(&a, &b, 1.0).unwrap(), a.to_vec());
        assert_eq!(mix(&a, &b, 0.5).unwrap(), vec![1.0, 1.0]);
        assert_eq!(mix(&a, &b, 0.75).unwrap(), vec![1.5, 0.5]);
        assert!(matches!(mix(&a, &b, 1.5), Err(Error::InvalidArgument(_))));
        assert!(mix(&a, &[1.0], 0.5).is_err());
    }

    fn arb_corr(max_n: usize) -> impl Strategy<Value = ConnectivityMatrix> {
        (3..max_n).prop_flat_map(|n| {
            prop::collection::vec(-0.999f64..0.999, input_dim(n)).prop_map(move |v| {
                let mut m = ConnectivityMatrix::devectorize(&v, n).unwrap();
                for i in 0..n {
                    m.values[i * n + i] = 1.0;
                }
                m
            })
        })
    }

    proptest! {
        #[test]
        fn fisher_z_is_odd(m in arb_corr(9)) {
            let neg = ConnectivityMatrix::from_fn(m.n_nodes(), |i, j| {
                if i == j { 1.0 } else { -m.get(i, j) }
            }).unwrap();
            let (zp, zn) = (m.fisher_z().unwrap(), neg.fisher_z().unwrap());
            for (a, b) in zp.values().iter().zip(zn.values()) {
                prop_assert!((a + b).abs() <= 1e-12);
            }
        }

        #[test]
        fn normalize_moments_and_idempotence(m in arb_corr(12)) {
            let z = m.fisher_z().unwrap();
            let once = z.normalize().unwrap();
            let (mean, var) = population_moments(&once.vectorize());
            prop_assert!(mean.abs() < 1e-10);
            prop_assert!((var - 1.0).abs() < 1e-10);
            let twice = once.normalize().unwrap();
            for (a, b) in once.values().iter().zip(twice.values()) {
                prop_assert!((a - b).abs() < 1e-10);
            }
            for i in 0..once.n_nodes() {
                for j in 0..once.n_nodes() {
                    prop_assert_eq!(once.get(i, j), once.get(j, i));
                }
            }
        }

        #[test]
        fn devectorize_round_trip(n in 2usize..12, seed in any::<u64>()) {
            let v: Vec<f64> = (0..input_dim(n))
                .map(|k| crate::rng::splitmix64(seed ^ k as u64) as f64 / u64::MAX as f64)
                .collect();
            let m = ConnectivityMatrix::devectorize(&v, n).unwrap();
            prop_assert_eq!(m.vectorize(), v);
        }
    }
}
