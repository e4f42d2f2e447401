//! Desk-scale stand-in for a real cohort.
//!
//! Each subject gets a latent covariance made of a shared low-rank factor
//! structure, a subject-specific perturbation of the factor loadings and a
//! class-specific offset on a few node-pair blocks. A multivariate time
//! series is drawn from that covariance, observation noise is added, and the
//! subject's Pearson correlation matrix is returned. The preprocessing chain
//! therefore sees the same kind of input a real pipeline would produce.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::seq::index::sample;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{ConnectivityMatrix, Dataset, SubjectRecord};
use crate::error::{Error, Result};
use crate::rng::{self, tag};

/// Eigenvalue floor used when a constructed covariance is not positive definite.
pub const EIGEN_FLOOR: f64 = 1e-6;

/// Spread of the subject-specific factor-loading perturbation.
const SUBJECT_LOADING_SD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub n_subjects: usize,
    pub n_nodes: usize,
    pub n_timepoints: usize,
    pub class_effect_size: f64,
    pub n_effect_blocks: usize,
    pub noise_sd: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_subjects: 500,
            n_nodes: 25,
            n_timepoints: 200,
            class_effect_size: 0.2,
            n_effect_blocks: 4,
            noise_sd: 0.5,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_subjects < 4 || !self.n_subjects.is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!(
                "n_subjects must be even and >= 4, got {}",
                self.n_subjects
            )));
        }
        if self.n_nodes < 3 {
            return Err(Error::InvalidArgument("n_nodes must be >= 3".into()));
        }
        if self.n_timepoints < 3 {
            return Err(Error::InvalidArgument("n_timepoints must be >= 3".into()));
        }
        if !(self.class_effect_size.is_finite() && self.class_effect_size >= 0.0) {
            return Err(Error::InvalidArgument(
                "class_effect_size must be finite and non-negative".into(),
            ));
        }
        if !(self.noise_sd.is_finite() && self.noise_sd >= 0.0) {
            return Err(Error::InvalidArgument(
                "noise_sd must be finite and non-negative".into(),
            ));
        }
        if self.n_timepoints <= self.n_nodes {
            log::warn!(
                "n_timepoints ({}) <= n_nodes ({}): correlation matrices will be rank deficient",
                self.n_timepoints,
                self.n_nodes
            );
        }
        Ok(())
    }

    fn factor_rank(&self) -> usize {
        (self.n_nodes / 5).max(2)
    }

    fn block_size(&self) -> usize {
        (self.n_nodes / 8).max(2).min(self.n_nodes / 2)
    }
}

/// Generates a balanced two-class dataset (labels alternate 0, 1, 0, ...).
/// Bit-identical for a fixed `(cfg, seed)`.
pub fn generate_synthetic(cfg: &SyntheticConfig, seed: u64) -> Result<Dataset> {
    cfg.validate()?;
    let n = cfg.n_nodes;
    let k = cfg.factor_rank();

    let mut base_rng = rng::stream(seed, &[tag::SYNTH_BASE]);
    let loadings = DMatrix::from_fn(n, k, |_, _| base_rng.sample::<f64, _>(StandardNormal));
    let effect = effect_pattern(cfg, seed);

    let results: Vec<(SubjectRecord, bool)> = (0..cfg.n_subjects)
        .into_par_iter()
        .map(|s| {
            let label = s % 2;
            let mut r = rng::stream(seed, &[tag::SYNTH_SUBJECT, s as u64]);
            let subj = DMatrix::from_fn(n, k, |i, j| {
                loadings[(i, j)] + SUBJECT_LOADING_SD * r.sample::<f64, _>(StandardNormal)
            });
            let mut cov = &subj * subj.transpose() / k as f64 + DMatrix::identity(n, n);
            let sign = if label == 0 { 0.5 } else { -0.5 };
            cov += &effect * (sign * cfg.class_effect_size);
            let (factor, clipped) = psd_factor(cov);
            let matrix = sample_correlation(&factor, cfg, &mut r)?;
            Ok((
                SubjectRecord {
                    subject_id: format!("sub-{s:05}"),
                    label,
                    matrix,
                },
                clipped,
            ))
        })
        .collect::<Result<_>>()?;

    let clipped = results.iter().filter(|(_, c)| *c).count();
    if clipped > 0 {
        log::info!(
            "{clipped} of {} subject covariances projected to positive definite (eigenvalue floor {EIGEN_FLOOR:e})",
            cfg.n_subjects
        );
    }
    Dataset::new(
        results.into_iter().map(|(r, _)| r).collect(),
        ["M".to_string(), "F".to_string()],
    )
}

/// Symmetric ±1 pattern on `n_effect_blocks` random node-pair blocks.
fn effect_pattern(cfg: &SyntheticConfig, seed: u64) -> DMatrix<f64> {
    let n = cfg.n_nodes;
    let b = cfg.block_size();
    let mut r = rng::stream(seed, &[tag::SYNTH_BLOCKS]);
    let mut e = DMatrix::zeros(n, n);
    for _ in 0..cfg.n_effect_blocks {
        let nodes = sample(&mut r, n, 2 * b).into_vec();
        let (a, c) = nodes.split_at(b);
        let sign = if r.random::<bool>() { 1.0 } else { -1.0 };
        for &i in a {
            for &j in c {
                e[(i, j)] += sign;
                e[(j, i)] += sign;
            }
        }
    }
    e
}

/// Returns `F` with `F Fᵀ = cov`, clipping eigenvalues below [`EIGEN_FLOOR`].
fn psd_factor(cov: DMatrix<f64>) -> (DMatrix<f64>, bool) {
    let eig = SymmetricEigen::new(cov);
    let mut clipped = false;
    let mut f = eig.eigenvectors;
    for (j, &lambda) in eig.eigenvalues.iter().enumerate() {
        let l = if lambda < EIGEN_FLOOR {
            clipped = true;
            EIGEN_FLOOR
        } else {
            lambda
        };
        f.column_mut(j).scale_mut(l.sqrt());
    }
    (f, clipped)
}

fn sample_correlation<R: Rng>(
    factor: &DMatrix<f64>,
    cfg: &SyntheticConfig,
    r: &mut R,
) -> Result<ConnectivityMatrix> {
    let n = cfg.n_nodes;
    let t = cfg.n_timepoints;
    let z = DMatrix::from_fn(n, t, |_, _| r.sample::<f64, _>(StandardNormal));
    let mut x = factor * z;
    if cfg.noise_sd > 0.0 {
        for v in x.iter_mut() {
            *v += cfg.noise_sd * r.sample::<f64, _>(StandardNormal);
        }
    }
    pearson_rows(&x)
}

/// Pearson correlation between the rows of `x`.
pub(crate) fn pearson_rows(x: &DMatrix<f64>) -> Result<ConnectivityMatrix> {
    let n = x.nrows();
    let t = x.ncols() as f64;
    let mut centered = x.clone();
    for mut row in centered.row_iter_mut() {
        let m = row.sum() / t;
        row.add_scalar_mut(-m);
    }
    let sds: Vec<f64> = centered.row_iter().map(|r| r.norm()).collect();
    if let Some(i) = sds.iter().position(|&s| s == 0.0) {
        return Err(Error::Degenerate(format!("time series {i} is constant")));
    }
    let gram = &centered * centered.transpose();
    ConnectivityMatrix::from_fn(n, |i, j| {
        if i == j {
            1.0
        } else {
            (gram[(i, j)] / (sds[i] * sds[j])).clamp(-1.0, 1.0)
        }
    })
}
