//! Exact CART regression trees: splits maximize variance (SSE) reduction over
//! every midpoint between consecutive distinct sorted feature values; ties in
//! gain break toward the lowest feature index, then the lowest threshold.

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use super::{DataMatrix, DecisionTree, TrainParams, TreeError, TreeNode};
use crate::numeric::quantile_sorted;

/// How leaf values summarize the targets routed to them.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LeafStatistic {
    Mean,
    Quantile(f64),
}

/// Fit a regression tree on the full feature set.
pub fn fit_cart(
    data: &DataMatrix,
    y: &[f64],
    params: &TrainParams,
    leaf_statistic: LeafStatistic,
) -> Result<DecisionTree, TreeError> {
    fit_cart_impl(data, y, params, leaf_statistic, None)
}

/// Fit with `feature_subset = Some((k, rng))` to restrict every split to `k`
/// features drawn without replacement per node (the random-forest rule).
pub(super) fn fit_cart_impl(
    data: &DataMatrix,
    y: &[f64],
    params: &TrainParams,
    leaf_statistic: LeafStatistic,
    feature_subset: Option<(usize, &mut ChaCha8Rng)>,
) -> Result<DecisionTree, TreeError> {
    params.validate()?;
    if data.n_rows() == 0 {
        return Err(TreeError::EmptyInput);
    }
    if y.len() != data.n_rows() {
        return Err(TreeError::LengthMismatch {
            rows: data.n_rows(),
            targets: y.len(),
        });
    }
    if let Some(row) = y.iter().position(|v| !v.is_finite()) {
        return Err(TreeError::NonFinite {
            column: "<target>".into(),
            row,
        });
    }
    if let LeafStatistic::Quantile(tau) = leaf_statistic {
        if !(0.0..=1.0).contains(&tau) {
            return Err(TreeError::InvalidParam(format!("leaf quantile {tau} outside [0,1]")));
        }
    }

    let mut idx: Vec<usize> = (0..data.n_rows()).collect();
    let (subset_k, mut rng) = match feature_subset {
        Some((k, rng)) => (Some(k), Some(rng)),
        None => (None, None),
    };
    let mut builder = Builder {
        data,
        y,
        params,
        leaf_statistic,
        subset_k,
        nodes: Vec::new(),
        max_depth_used: 0,
        feature_scratch: (0..data.n_features()).collect(),
    };
    builder.build(&mut idx, 0, &mut rng);
    Ok(DecisionTree {
        nodes: builder.nodes,
        max_depth_used: builder.max_depth_used,
    })
}

struct Builder<'a> {
    data: &'a DataMatrix,
    y: &'a [f64],
    params: &'a TrainParams,
    leaf_statistic: LeafStatistic,
    subset_k: Option<usize>,
    nodes: Vec<TreeNode>,
    max_depth_used: usize,
    feature_scratch: Vec<usize>,
}

struct BestSplit {
    gain: f64,
    feature: usize,
    threshold: f64,
}

impl Builder<'_> {
    fn build(&mut self, idx: &mut [usize], depth: usize, rng: &mut Option<&mut ChaCha8Rng>) -> usize {
        self.max_depth_used = self.max_depth_used.max(depth);
        let m = idx.len();

        let first = self.y[idx[0]];
        let constant = idx.iter().all(|&i| self.y[i] == first);
        let depth_capped = self.params.max_depth.is_some_and(|d| depth >= d);

        if constant || depth_capped || m < 2 * self.params.min_samples_leaf {
            return self.push_leaf(idx);
        }

        let candidates: Vec<usize> = match self.subset_k {
            None => (0..self.data.n_features()).collect(),
            Some(k) => {
                let rng = rng.as_deref_mut().expect("subset mode carries an rng");
                let k = k.min(self.data.n_features());
                self.feature_scratch.shuffle(rng);
                let mut chosen: Vec<usize> = self.feature_scratch[..k].to_vec();
                // Tie-breaking is defined on the original feature order.
                chosen.sort_unstable();
                chosen
            }
        };

        let Some(best) = self.best_split(idx, &candidates) else {
            return self.push_leaf(idx);
        };

        let split_at = partition(idx, |i| self.data.column(best.feature)[i] <= best.threshold);
        debug_assert!(split_at > 0 && split_at < m);

        let node_slot = self.nodes.len();
        self.nodes.push(TreeNode::Leaf {
            value: 0.0,
            n_samples: 0,
        });
        let (left_idx, right_idx) = idx.split_at_mut(split_at);
        let left = self.build(left_idx, depth + 1, rng);
        let right = self.build(right_idx, depth + 1, rng);
        self.nodes[node_slot] = TreeNode::Split {
            feature_index: best.feature,
            threshold: best.threshold,
            left,
            right,
        };
        node_slot
    }

    fn push_leaf(&mut self, idx: &[usize]) -> usize {
        let mut values: Vec<f64> = idx.iter().map(|&i| self.y[i]).collect();
        let value = match self.leaf_statistic {
            LeafStatistic::Mean => values.iter().sum::<f64>() / values.len() as f64,
            LeafStatistic::Quantile(tau) => {
                values.sort_unstable_by(|a, b| a.total_cmp(b));
                quantile_sorted(&values, tau)
            }
        };
        self.nodes.push(TreeNode::Leaf {
            value,
            n_samples: idx.len(),
        });
        self.nodes.len() - 1
    }

    fn best_split(&self, idx: &[usize], candidates: &[usize]) -> Option<BestSplit> {
        let m = idx.len();
        let msl = self.params.min_samples_leaf;
        let total_sum: f64 = idx.iter().map(|&i| self.y[i]).sum();
        let total_sumsq: f64 = idx.iter().map(|&i| self.y[i] * self.y[i]).sum();
        let parent_sse = total_sumsq - total_sum * total_sum / m as f64;

        let mut best: Option<BestSplit> = None;
        let mut pairs: Vec<(f64, f64)> = Vec::with_capacity(m);
        for &feature in candidates {
            let col = self.data.column(feature);
            pairs.clear();
            pairs.extend(idx.iter().map(|&i| (col[i], self.y[i])));
            pairs.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));

            let mut left_sum = 0.0;
            let mut left_sumsq = 0.0;
            for p in 0..m - 1 {
                let (x, yv) = pairs[p];
                left_sum += yv;
                left_sumsq += yv * yv;
                let x_next = pairs[p + 1].0;
                if x == x_next {
                    continue;
                }
                let left_n = p + 1;
                let right_n = m - left_n;
                if left_n < msl || right_n < msl {
                    continue;
                }
                let right_sum = total_sum - left_sum;
                let right_sumsq = total_sumsq - left_sumsq;
                let sse_left = left_sumsq - left_sum * left_sum / left_n as f64;
                let sse_right = right_sumsq - right_sum * right_sum / right_n as f64;
                let gain = parent_sse - sse_left - sse_right;
                if gain > 0.0 && best.as_ref().is_none_or(|b| gain > b.gain) {
                    best = Some(BestSplit {
                        gain,
                        feature,
                        threshold: 0.5 * (x + x_next),
                    });
                }
            }
        }
        best
    }
}

/// Stable partition: reorder `idx` so rows satisfying `pred` come first;
/// returns the boundary.
fn partition(idx: &mut [usize], pred: impl Fn(usize) -> bool) -> usize {
    let mut left = Vec::with_capacity(idx.len());
    let mut right = Vec::with_capacity(idx.len());
    for &i in idx.iter() {
        if pred(i) {
            left.push(i);
        } else {
            right.push(i);
        }
    }
    let boundary = left.len();
    idx[..boundary].copy_from_slice(&left);
    idx[boundary..].copy_from_slice(&right);
    boundary
}
