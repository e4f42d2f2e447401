use ndarray::{Array2, ArrayView1};

use super::{input_dim, ConnectivityMatrix};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SubjectRecord {
    pub subject_id: String,
    pub label: usize,
    pub matrix: ConnectivityMatrix,
}

/// Two-class collection of raw connectivity matrices sharing one node count.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    records: Vec<SubjectRecord>,
    n_nodes: usize,
    class_names: [String; 2],
}

impl Dataset {
    pub fn new(records: Vec<SubjectRecord>, class_names: [String; 2]) -> Result<Self> {
        let first = records
            .first()
            .ok_or_else(|| Error::InsufficientData("no records".into()))?;
        let n_nodes = first.matrix.n_nodes();
        let mut seen = [false; 2];
        let mut ids = std::collections::HashSet::new();
        for r in &records {
            if !ids.insert(r.subject_id.as_str()) {
                return Err(Error::InvalidInput(format!(
                    "duplicate subject id {}",
                    r.subject_id
                )));
            }
            if r.matrix.n_nodes() != n_nodes {
                return Err(Error::InvalidInput(format!(
                    "subject {} has {} nodes, expected {n_nodes}",
                    r.subject_id,
                    r.matrix.n_nodes()
                )));
            }
            if r.label > 1 {
                return Err(Error::InvalidInput(format!(
                    "subject {} has label {} (expected 0 or 1)",
                    r.subject_id, r.label
                )));
            }
            seen[r.label] = true;
        }
        if !(seen[0] && seen[1]) {
            return Err(Error::InsufficientData(
                "both classes must be present".into(),
            ));
        }
        Ok(Self {
            records,
            n_nodes,
            class_names,
        })
    }

    pub fn records(&self) -> &[SubjectRecord] {
        &self.records
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn input_dim(&self) -> usize {
        input_dim(self.n_nodes)
    }

    pub fn class_names(&self) -> &[String; 2] {
        &self.class_names
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn class_counts(&self) -> [usize; 2] {
        let mut c = [0; 2];
        for r in &self.records {
            c[r.label] += 1;
        }
        c
    }

    /// Records at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        Dataset::new(
            indices.iter().map(|&i| self.records[i].clone()).collect(),
            self.class_names.clone(),
        )
    }

    /// Runs the preprocessing chain on every subject.
    pub fn features(&self) -> Result<FeatureSet> {
        let dim = self.input_dim();
        let mut inputs = Array2::zeros((self.records.len(), dim));
        for (row, r) in inputs.rows_mut().into_iter().zip(&self.records) {
            let v = r
                .matrix
                .preprocess()
                .map_err(|e| Error::InvalidInput(format!("subject {}: {e}", r.subject_id)))?;
            ndarray::Zip::from(row).and(&v[..]).for_each(|d, &s| *d = s);
        }
        Ok(FeatureSet {
            inputs,
            labels: self.records.iter().map(|r| r.label).collect(),
            ids: self.records.iter().map(|r| r.subject_id.clone()).collect(),
            n_nodes: self.n_nodes,
            class_names: self.class_names.clone(),
        })
    }

    /// Raw upper-triangle vectors, without Fisher transform or normalization.
    pub fn raw_vectors(&self) -> Array2<f64> {
        let mut out = Array2::zeros((self.records.len(), self.input_dim()));
        for (mut row, r) in out.rows_mut().into_iter().zip(&self.records) {
            row.assign(&ArrayView1::from(&r.matrix.vectorize()[..]));
        }
        out
    }
}

/// Preprocessed, vectorized inputs: one row per subject.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    pub inputs: Array2<f64>,
    pub labels: Vec<usize>,
    pub ids: Vec<String>,
    pub n_nodes: usize,
    pub class_names: [String; 2],
}

impl FeatureSet {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn input(&self, i: usize) -> ArrayView1<'_, f64> {
        self.inputs.row(i)
    }

    /// Rows at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> FeatureSet {
        FeatureSet {
            inputs: self.inputs.select(ndarray::Axis(0), indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            ids: indices.iter().map(|&i| self.ids[i].clone()).collect(),
            n_nodes: self.n_nodes,
            class_names: self.class_names.clone(),
        }
    }

    pub fn class_indices(&self, class: usize) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| self.labels[i] == class)
            .collect()
    }
}
