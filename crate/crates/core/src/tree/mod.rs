//! From-scratch regression-tree learners: exact CART with variance-reduction
//! splits, a bagged random forest for the mean structure, and quantile-loss
//! gradient boosting with early stopping, plus the tail-oversampling routine
//! feeding the quantile learner.

mod cart;
mod forest;
mod gbm;

pub use cart::{fit_cart, LeafStatistic};
pub use forest::{fit_random_forest, ForestModel, RfParams};
pub use gbm::{
    fit_gbm_quantile, negative_gradient, oversample_tail, pinball_loss, GbmFit, GbmModel,
    GbmParams, OversampleReport,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TreeError {
    #[error("training table is empty")]
    EmptyInput,
    #[error("targets ({targets}) and rows ({rows}) differ in length")]
    LengthMismatch { rows: usize, targets: usize },
    #[error("non-finite value in column `{column}` at row {row}")]
    NonFinite { column: String, row: usize },
    #[error("model expects {expected} features, got {actual}")]
    FeatureCountMismatch { expected: usize, actual: usize },
    #[error("need at least {needed} samples, got {actual}")]
    TooFewSamples { needed: usize, actual: usize },
    #[error("validation split is degenerate (train or validation side empty)")]
    DegenerateValidationSplit,
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
}

/// Column-major numeric table with named features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataMatrix {
    names: Vec<String>,
    columns: Vec<Vec<f64>>,
    n_rows: usize,
}

impl DataMatrix {
    pub fn from_columns(names: Vec<String>, columns: Vec<Vec<f64>>) -> Result<Self, TreeError> {
        if columns.is_empty() || columns[0].is_empty() {
            return Err(TreeError::EmptyInput);
        }
        let n_rows = columns[0].len();
        for (name, col) in names.iter().zip(&columns) {
            if col.len() != n_rows {
                return Err(TreeError::LengthMismatch {
                    rows: n_rows,
                    targets: col.len(),
                });
            }
            if let Some(row) = col.iter().position(|v| !v.is_finite()) {
                return Err(TreeError::NonFinite {
                    column: name.clone(),
                    row,
                });
            }
        }
        Ok(DataMatrix {
            names,
            columns,
            n_rows,
        })
    }

    pub fn from_rows(names: Vec<String>, rows: &[Vec<f64>]) -> Result<Self, TreeError> {
        if rows.is_empty() {
            return Err(TreeError::EmptyInput);
        }
        let d = names.len();
        let mut columns = vec![Vec::with_capacity(rows.len()); d];
        for row in rows {
            for (j, v) in row.iter().enumerate() {
                columns[j].push(*v);
            }
        }
        Self::from_columns(names, columns)
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_features(&self) -> usize {
        self.columns.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn column(&self, j: usize) -> &[f64] {
        &self.columns[j]
    }

    pub fn column_by_name(&self, name: &str) -> Option<&[f64]> {
        self.names.iter().position(|n| n == name).map(|j| self.column(j))
    }

    pub fn row(&self, i: usize, out: &mut Vec<f64>) {
        out.clear();
        out.extend(self.columns.iter().map(|c| c[i]));
    }

    pub fn row_vec(&self, i: usize) -> Vec<f64> {
        self.columns.iter().map(|c| c[i]).collect()
    }

    /// New matrix containing the given rows, in order (duplicates allowed).
    pub fn gather_rows(&self, idx: &[usize]) -> DataMatrix {
        let columns = self
            .columns
            .iter()
            .map(|c| idx.iter().map(|&i| c[i]).collect())
            .collect();
        DataMatrix {
            names: self.names.clone(),
            columns,
            n_rows: idx.len(),
        }
    }
}

/// Shared training knobs; the learner-specific parameter structs embed this.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainParams {
    pub seed: u64,
    pub min_samples_leaf: usize,
    pub max_depth: Option<usize>,
    pub early_stop_patience: usize,
    pub early_stop_tol: f64,
}

impl Default for TrainParams {
    fn default() -> Self {
        TrainParams {
            seed: 0,
            min_samples_leaf: 1,
            max_depth: None,
            early_stop_patience: 10,
            early_stop_tol: 1e-4,
        }
    }
}

impl TrainParams {
    pub fn validate(&self) -> Result<(), TreeError> {
        if self.min_samples_leaf < 1 {
            return Err(TreeError::InvalidParam("min_samples_leaf must be >= 1".into()));
        }
        if self.early_stop_patience < 1 {
            return Err(TreeError::InvalidParam("early_stop_patience must be >= 1".into()));
        }
        if self.early_stop_tol < 0.0 {
            return Err(TreeError::InvalidParam("early_stop_tol must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TreeNode {
    Split {
        feature_index: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        value: f64,
        n_samples: usize,
    },
}

/// A regression tree stored as a node arena with the root at index 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub nodes: Vec<TreeNode>,
    pub max_depth_used: usize,
}

impl DecisionTree {
    pub fn predict_row(&self, x: &[f64]) -> f64 {
        let mut node = 0usize;
        loop {
            match &self.nodes[node] {
                TreeNode::Leaf { value, .. } => return *value,
                TreeNode::Split {
                    feature_index,
                    threshold,
                    left,
                    right,
                } => {
                    node = if x[*feature_index] <= *threshold {
                        *left
                    } else {
                        *right
                    };
                }
            }
        }
    }

    /// Index of the leaf the row falls into.
    pub fn leaf_index(&self, x: &[f64]) -> usize {
        let mut node = 0usize;
        loop {
            match &self.nodes[node] {
                TreeNode::Leaf { .. } => return node,
                TreeNode::Split {
                    feature_index,
                    threshold,
                    left,
                    right,
                } => {
                    node = if x[*feature_index] <= *threshold {
                        *left
                    } else {
                        *right
                    };
                }
            }
        }
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, TreeNode::Leaf { .. }))
            .count()
    }

    /// Feature indices used by at least one split.
    pub fn used_features(&self) -> std::collections::BTreeSet<usize> {
        self.nodes
            .iter()
            .filter_map(|n| match n {
                TreeNode::Split { feature_index, .. } => Some(*feature_index),
                TreeNode::Leaf { .. } => None,
            })
            .collect()
    }
}

/// Anything that maps a feature row to a prediction. Implemented by the tree
/// ensembles and by closure wrappers used for analytic test models.
pub trait Regressor: Sync {
    fn n_features(&self) -> usize;
    fn predict_row(&self, x: &[f64]) -> f64;

    fn predict_matrix(&self, data: &DataMatrix) -> Result<Vec<f64>, TreeError> {
        if data.n_features() != self.n_features() {
            return Err(TreeError::FeatureCountMismatch {
                expected: self.n_features(),
                actual: data.n_features(),
            });
        }
        let mut buf = Vec::with_capacity(data.n_features());
        Ok((0..data.n_rows())
            .map(|i| {
                data.row(i, &mut buf);
                self.predict_row(&buf)
            })
            .collect())
    }
}

/// Closure-backed regressor for analytic models in tests and diagnostics.
pub struct FnRegressor<F: Fn(&[f64]) -> f64 + Sync> {
    n_features: usize,
    f: F,
}

impl<F: Fn(&[f64]) -> f64 + Sync> FnRegressor<F> {
    pub fn new(n_features: usize, f: F) -> Self {
        FnRegressor { n_features, f }
    }
}

impl<F: Fn(&[f64]) -> f64 + Sync> Regressor for FnRegressor<F> {
    fn n_features(&self) -> usize {
        self.n_features
    }

    fn predict_row(&self, x: &[f64]) -> f64 {
        (self.f)(x)
    }
}
