//! Quantile-loss gradient boosting: shallow trees fitted to pinball negative
//! gradients, leaf values refined to the in-leaf residual quantile, early
//! stopping on a held-out validation fraction. Includes the tail-oversampling
//! routine that rebalances extremes for the quantile learner.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::cart::{fit_cart, LeafStatistic};
use super::{DataMatrix, DecisionTree, Regressor, TrainParams, TreeError, TreeNode};
use crate::numeric::{quantile, quantile_sorted};

/// Pinball (quantile) loss; its minimizer is the tau-quantile.
pub fn pinball_loss(y: f64, pred: f64, tau: f64) -> f64 {
    if y >= pred {
        tau * (y - pred)
    } else {
        (1.0 - tau) * (pred - y)
    }
}

/// Negative gradient of the pinball loss with respect to the prediction.
pub fn negative_gradient(y: f64, pred: f64, tau: f64) -> f64 {
    if y > pred {
        tau
    } else if y < pred {
        tau - 1.0
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GbmParams {
    pub learning_rate: f64,
    pub tau: f64,
    pub max_stages: usize,
    pub validation_fraction: f64,
    #[serde(flatten)]
    pub train: TrainParams,
}

impl Default for GbmParams {
    fn default() -> Self {
        GbmParams {
            learning_rate: 0.05,
            tau: 0.90,
            max_stages: 1000,
            validation_fraction: 0.1,
            train: TrainParams {
                min_samples_leaf: 5,
                max_depth: Some(5),
                ..TrainParams::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbmModel {
    /// Empirical tau-quantile of the (inner) training targets.
    pub init_value: f64,
    pub trees: Vec<DecisionTree>,
    pub learning_rate: f64,
    pub tau: f64,
    pub stages_used: usize,
    pub seed: u64,
    pub feature_names: Vec<String>,
    pub params: GbmParams,
}

impl Regressor for GbmModel {
    fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    fn predict_row(&self, x: &[f64]) -> f64 {
        let staged: f64 = self.trees.iter().map(|t| t.predict_row(x)).sum();
        self.init_value + self.learning_rate * staged
    }
}

/// The fitted model plus per-stage loss diagnostics (not serialized with the
/// model).
#[derive(Debug)]
pub struct GbmFit {
    pub model: GbmModel,
    pub train_losses: Vec<f64>,
    pub validation_losses: Vec<f64>,
}

pub fn fit_gbm_quantile(
    data: &DataMatrix,
    y: &[f64],
    params: &GbmParams,
) -> Result<GbmFit, TreeError> {
    params.train.validate()?;
    if !(0.0..1.0).contains(&params.tau) || params.tau == 0.0 {
        return Err(TreeError::InvalidParam(format!("tau {} outside (0,1)", params.tau)));
    }
    if y.len() != data.n_rows() {
        return Err(TreeError::LengthMismatch {
            rows: data.n_rows(),
            targets: y.len(),
        });
    }
    if data.n_rows() < 20 {
        return Err(TreeError::TooFewSamples {
            needed: 20,
            actual: data.n_rows(),
        });
    }
    if let Some(row) = y.iter().position(|v| !v.is_finite()) {
        return Err(TreeError::NonFinite {
            column: "<target>".into(),
            row,
        });
    }

    let n = data.n_rows();
    let mut rng = ChaCha8Rng::seed_from_u64(params.train.seed);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let n_val = ((params.validation_fraction * n as f64).round() as usize).max(1);
    if n_val >= n {
        return Err(TreeError::DegenerateValidationSplit);
    }
    let (val_idx, train_idx) = order.split_at(n_val);

    let train_data = data.gather_rows(train_idx);
    let train_y: Vec<f64> = train_idx.iter().map(|&i| y[i]).collect();
    let val_data = data.gather_rows(val_idx);
    let val_y: Vec<f64> = val_idx.iter().map(|&i| y[i]).collect();

    let init_value = quantile(&train_y, params.tau);

    let mut f_train = vec![init_value; train_y.len()];
    let mut f_val = vec![init_value; val_y.len()];
    let mut trees: Vec<DecisionTree> = Vec::new();
    let mut train_losses = Vec::new();
    let mut validation_losses = Vec::new();

    let mean_pinball = |ys: &[f64], preds: &[f64]| -> f64 {
        ys.iter()
            .zip(preds)
            .map(|(yv, p)| pinball_loss(*yv, *p, params.tau))
            .sum::<f64>()
            / ys.len() as f64
    };

    let mut best_val = mean_pinball(&val_y, &f_val);
    let mut stale = 0usize;
    let mut row_buf = Vec::with_capacity(data.n_features());

    for _stage in 0..params.max_stages {
        let gradients: Vec<f64> = train_y
            .iter()
            .zip(&f_train)
            .map(|(yv, p)| negative_gradient(*yv, *p, params.tau))
            .collect();
        if gradients.iter().all(|g| *g == 0.0) {
            break;
        }

        // Structure from the gradients, values refined to the residual
        // tau-quantile per leaf.
        let mut tree = fit_cart(&train_data, &gradients, &params.train, LeafStatistic::Mean)?;
        refine_leaves(
            &mut tree,
            &train_data,
            &train_y,
            &f_train,
            params.tau,
            &mut row_buf,
        );

        for (i, f) in f_train.iter_mut().enumerate() {
            train_data.row(i, &mut row_buf);
            *f += params.learning_rate * tree.predict_row(&row_buf);
        }
        for (i, f) in f_val.iter_mut().enumerate() {
            val_data.row(i, &mut row_buf);
            *f += params.learning_rate * tree.predict_row(&row_buf);
        }
        trees.push(tree);

        train_losses.push(mean_pinball(&train_y, &f_train));
        let val_loss = mean_pinball(&val_y, &f_val);
        validation_losses.push(val_loss);

        if best_val - val_loss > params.train.early_stop_tol {
            best_val = val_loss;
            stale = 0;
        } else {
            stale += 1;
            if stale >= params.train.early_stop_patience {
                break;
            }
        }
    }

    let stages_used = trees.len();
    Ok(GbmFit {
        model: GbmModel {
            init_value,
            trees,
            learning_rate: params.learning_rate,
            tau: params.tau,
            stages_used,
            seed: params.train.seed,
            feature_names: data.names().to_vec(),
            params: *params,
        },
        train_losses,
        validation_losses,
    })
}

/// Overwrite each leaf with the tau-quantile of the residuals (y - F) of the
/// training rows routed to it.
fn refine_leaves(
    tree: &mut DecisionTree,
    data: &DataMatrix,
    y: &[f64],
    current: &[f64],
    tau: f64,
    row_buf: &mut Vec<f64>,
) {
    let mut residuals: Vec<Vec<f64>> = vec![Vec::new(); tree.nodes.len()];
    for i in 0..data.n_rows() {
        data.row(i, row_buf);
        let leaf = tree.leaf_index(row_buf);
        residuals[leaf].push(y[i] - current[i]);
    }
    for (node, res) in tree.nodes.iter_mut().zip(residuals) {
        if let TreeNode::Leaf { value, .. } = node {
            if !res.is_empty() {
                let mut sorted = res;
                sorted.sort_unstable_by(|a, b| a.total_cmp(b));
                *value = quantile_sorted(&sorted, tau);
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OversampleReport {
    pub threshold: f64,
    pub n_before: usize,
    pub n_after: usize,
    pub extremes_before: usize,
    pub extremes_after: usize,
    /// Set when there is no meaningful tail to oversample.
    pub degenerate: bool,
}

/// Duplicate rows with y at or above the empirical `quantile_level` quantile
/// until extremes make up `target_fraction` of the augmented set (within one
/// row). Duplicates are drawn in full passes over the extreme pool, sampling
/// without replacement within the final partial pass. Non-extreme rows appear
/// exactly once.
pub fn oversample_tail(
    data: &DataMatrix,
    y: &[f64],
    quantile_level: f64,
    target_fraction: f64,
    seed: u64,
) -> Result<(DataMatrix, Vec<f64>, OversampleReport), TreeError> {
    if !(0.0..1.0).contains(&target_fraction) || target_fraction == 0.0 {
        return Err(TreeError::InvalidParam(format!(
            "target_fraction {target_fraction} outside (0,1)"
        )));
    }
    if y.len() != data.n_rows() {
        return Err(TreeError::LengthMismatch {
            rows: data.n_rows(),
            targets: y.len(),
        });
    }
    if y.is_empty() {
        return Err(TreeError::EmptyInput);
    }

    let threshold = quantile(y, quantile_level);
    let extremes: Vec<usize> = (0..y.len()).filter(|&i| y[i] >= threshold).collect();
    let m = extremes.len();
    let n = y.len();
    let n_non = n - m;

    let mut report = OversampleReport {
        threshold,
        n_before: n,
        n_after: n,
        extremes_before: m,
        extremes_after: m,
        degenerate: m == 0 || m == n,
    };
    if report.degenerate {
        return Ok((data.clone(), y.to_vec(), report));
    }

    let desired = (target_fraction / (1.0 - target_fraction) * n_non as f64).round() as usize;
    if desired <= m {
        return Ok((data.clone(), y.to_vec(), report));
    }

    let mut extra = desired - m;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked: Vec<usize> = Vec::with_capacity(extra);
    while extra >= m {
        picked.extend_from_slice(&extremes);
        extra -= m;
    }
    if extra > 0 {
        let mut pool = extremes.clone();
        pool.shuffle(&mut rng);
        picked.extend_from_slice(&pool[..extra]);
    }

    let mut all_rows: Vec<usize> = (0..n).collect();
    all_rows.extend_from_slice(&picked);
    let out_y: Vec<f64> = all_rows.iter().map(|&i| y[i]).collect();
    let out_data = data.gather_rows(&all_rows);
    report.n_after = out_y.len();
    report.extremes_after = desired;
    Ok((out_data, out_y, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn pinball_hand_values() {
        assert_eq!(pinball_loss(1.0, 1.0, 0.9), 0.0);
        assert!((pinball_loss(1.0, 0.0, 0.9) - 0.9).abs() < 1e-15);
        assert!((pinball_loss(0.0, 1.0, 0.9) - 0.1).abs() < 1e-15);
        assert_eq!(negative_gradient(1.0, 0.0, 0.9), 0.9);
        assert!((negative_gradient(0.0, 1.0, 0.9) - (-0.1)).abs() < 1e-15);
        assert_eq!(negative_gradient(1.0, 1.0, 0.9), 0.0);
    }

    fn uninformative_data(n: usize, seed: u64) -> DataMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let col: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
        DataMatrix::from_columns(vec!["x".into()], vec![col]).unwrap()
    }

    #[test]
    fn constant_target_stops_immediately() {
        let data = uninformative_data(40, 1);
        let y = vec![5.0; 40];
        let fit = fit_gbm_quantile(&data, &y, &GbmParams::default()).unwrap();
        assert_eq!(fit.model.stages_used, 0);
        assert_eq!(fit.model.init_value, 5.0);
        assert_eq!(fit.model.predict_row(&[0.5]), 5.0);
    }

    #[test]
    fn uniform_target_converges_to_ninth_decile() {
        let n = 5000;
        let data = uninformative_data(n, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
        let fit = fit_gbm_quantile(&data, &y, &GbmParams::default()).unwrap();
        let preds = fit.model.predict_matrix(&data).unwrap();
        let mean_pred = preds.iter().sum::<f64>() / preds.len() as f64;
        assert!(
            (mean_pred - 0.9).abs() <= 0.03,
            "mean prediction {mean_pred} should be near 0.9"
        );
    }

    #[test]
    fn training_pinball_loss_is_non_increasing() {
        let n = 500;
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
        let y: Vec<f64> = x.iter().map(|v| v + rng.random_range(-0.3..0.3)).collect();
        let data = DataMatrix::from_columns(vec!["x".into()], vec![x]).unwrap();
        let fit = fit_gbm_quantile(&data, &y, &GbmParams::default()).unwrap();
        for w in fit.train_losses.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "loss increased: {} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn coverage_calibrated_on_noisy_linear_target() {
        let n = 10_000;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..4.0)).collect();
        let y: Vec<f64> = x
            .iter()
            .map(|v| {
                v + rand_distr::Distribution::sample(
                    &rand_distr::Normal::new(0.0, 1.0).unwrap(),
                    &mut rng,
                )
            })
            .collect();
        let train: Vec<usize> = (0..n).filter(|i| i % 4 != 0).collect();
        let test: Vec<usize> = (0..n).filter(|i| i % 4 == 0).collect();
        let data = DataMatrix::from_columns(vec!["x".into()], vec![x]).unwrap();
        let fit = fit_gbm_quantile(
            &data.gather_rows(&train),
            &train.iter().map(|&i| y[i]).collect::<Vec<_>>(),
            &GbmParams::default(),
        )
        .unwrap();
        let preds = fit.model.predict_matrix(&data.gather_rows(&test)).unwrap();
        let covered = test
            .iter()
            .zip(&preds)
            .filter(|(&i, &p)| y[i] <= p)
            .count() as f64
            / test.len() as f64;
        assert!(
            (0.85..=0.95).contains(&covered),
            "coverage {covered} outside [0.85, 0.95]"
        );
    }

    #[test]
    fn too_few_samples_rejected() {
        let data = uninformative_data(10, 6);
        let y = vec![1.0; 10];
        assert!(matches!(
            fit_gbm_quantile(&data, &y, &GbmParams::default()),
            Err(TreeError::TooFewSamples { needed: 20, .. })
        ));
    }

    #[test]
    fn oversample_untouched_when_extremes_already_dominate() {
        // Two-point mass: 40 % of rows sit at the max, so they are all >= P90.
        let n = 10;
        let y: Vec<f64> = (0..n).map(|i| if i < 6 { 0.0 } else { 10.0 }).collect();
        let data = uninformative_data(n, 7);
        let (out, oy, report) = oversample_tail(&data, &y, 0.9, 0.3, 1).unwrap();
        assert_eq!(out.n_rows(), n);
        assert_eq!(oy, y);
        assert!(!report.degenerate);
    }

    #[test]
    fn oversample_hits_target_fraction_within_one_row() {
        let n = 100;
        let y: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let data = uninformative_data(n, 8);
        let (out, oy, report) = oversample_tail(&data, &y, 0.9, 0.3, 2).unwrap();
        // 10 extremes (90..99); k/(90+k) = 0.3 -> k = 38.57 -> 39 extreme rows.
        assert_eq!(report.extremes_before, 10);
        assert_eq!(report.extremes_after, 39);
        assert_eq!(out.n_rows(), 129);
        let extreme_count = oy.iter().filter(|&&v| v >= report.threshold).count();
        assert_eq!(extreme_count, 39);
        let frac = extreme_count as f64 / oy.len() as f64;
        assert!((frac - 0.3).abs() * oy.len() as f64 <= 1.0 + 1e-9);
        // Non-extreme rows appear exactly once.
        for i in 0..90 {
            assert_eq!(oy.iter().filter(|&&v| v == i as f64).count(), 1);
        }
        // Determinism.
        let (_, oy2, _) = oversample_tail(&data, &y, 0.9, 0.3, 2).unwrap();
        assert_eq!(oy, oy2);
    }

    #[test]
    fn oversample_constant_target_flagged_degenerate() {
        let n = 20;
        let y = vec![3.0; n];
        let data = uninformative_data(n, 9);
        let (out, oy, report) = oversample_tail(&data, &y, 0.9, 0.3, 3).unwrap();
        assert_eq!(out.n_rows(), n);
        assert_eq!(oy, y);
        assert!(report.degenerate);
    }

    #[test]
    fn predict_rejects_feature_mismatch() {
        let data = uninformative_data(30, 10);
        let y: Vec<f64> = (0..30).map(|i| i as f64).collect();
        let model = fit_gbm_quantile(&data, &y, &GbmParams::default()).unwrap().model;
        let wide = DataMatrix::from_columns(
            vec!["a".into(), "b".into()],
            vec![vec![1.0], vec![2.0]],
        )
        .unwrap();
        assert!(matches!(
            model.predict_matrix(&wide),
            Err(TreeError::FeatureCountMismatch { expected: 1, actual: 2 })
        ));
    }

    #[test]
    fn gbm_serialization_is_deterministic() {
        let data = uninformative_data(100, 11);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let y: Vec<f64> = (0..100).map(|_| rng.random_range(0.0..1.0)).collect();
        let params = GbmParams {
            max_stages: 25,
            ..GbmParams::default()
        };
        let a = fit_gbm_quantile(&data, &y, &params).unwrap().model;
        let b = fit_gbm_quantile(&data, &y, &params).unwrap().model;
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
    }
}
