//! Year-wise HI downscaling: assemble the predictor table from a stack,
//! split 70:30, train the mean-structure random forest and the tail-aware
//! quantile booster, combine by pixelwise maximum, and evaluate.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{FeatureStack, Grid, GridError, GridHeader, NormalizationRecord};
use crate::tree::{
    fit_gbm_quantile, fit_random_forest, oversample_tail, DataMatrix, ForestModel, GbmModel,
    GbmParams, OversampleReport, Regressor, RfParams, TreeError,
};

#[derive(Debug, Error)]
pub enum DownscaleError {
    #[error("target grid header does not match the stack")]
    TargetHeaderMismatch,
    #[error("no pixel is valid in both the stack and the target")]
    EmptyIntersection,
    #[error("need at least {needed} rows, got {actual}")]
    TooFewRows { needed: usize, actual: usize },
    #[error("train fraction {0} outside (0,1)")]
    BadTrainFraction(f64),
    #[error("predictions ({pred}) and observations ({obs}) differ in length")]
    LengthMismatch { pred: usize, obs: usize },
    #[error("every feature has zero variance on the training rows")]
    AllFeaturesConstant,
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Tree(#[from] TreeError),
}

/// Random train/test partition specification.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            train_fraction: 0.70,
            seed: 7,
        }
    }
}

/// Flat training table extracted from a stack/target pair; rows are the
/// pixels valid in both, in row-major order.
#[derive(Debug, Clone)]
pub struct TrainingTable {
    pub data: DataMatrix,
    pub y: Vec<f64>,
    /// Row-major linear pixel index of each row.
    pub pixel_indices: Vec<usize>,
    pub header: GridHeader,
}

pub fn make_training_table(
    stack: &FeatureStack,
    target: &Grid,
) -> Result<TrainingTable, DownscaleError> {
    if !target.header.bit_identical(stack.header()) {
        return Err(DownscaleError::TargetHeaderMismatch);
    }
    let mut rows = Vec::new();
    let mut y = Vec::new();
    let mut pixel_indices = Vec::new();
    let mut buf = Vec::with_capacity(stack.n_layers());
    for (i, (&stack_ok, tv)) in stack
        .joint_valid_mask()
        .iter()
        .zip(target.values())
        .enumerate()
    {
        if stack_ok && !tv.is_nan() {
            stack.pixel_features(i, &mut buf);
            rows.push(buf.clone());
            y.push(*tv);
            pixel_indices.push(i);
        }
    }
    if rows.is_empty() {
        return Err(DownscaleError::EmptyIntersection);
    }
    let data = DataMatrix::from_rows(stack.names().to_vec(), &rows)?;
    Ok(TrainingTable {
        data,
        y,
        pixel_indices,
        header: *stack.header(),
    })
}

/// Disjoint, exhaustive train/test split of row indices; |train| =
/// round(train_fraction * n). Deterministic in the seed. Returned index lists
/// are sorted ascending.
pub fn split_train_test(
    n_rows: usize,
    spec: &SplitSpec,
) -> Result<(Vec<usize>, Vec<usize>), DownscaleError> {
    if !(0.0..1.0).contains(&spec.train_fraction) || spec.train_fraction == 0.0 {
        return Err(DownscaleError::BadTrainFraction(spec.train_fraction));
    }
    if n_rows < 10 {
        return Err(DownscaleError::TooFewRows {
            needed: 10,
            actual: n_rows,
        });
    }
    let mut order: Vec<usize> = (0..n_rows).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    order.shuffle(&mut rng);
    let n_train = (spec.train_fraction * n_rows as f64).round() as usize;
    let (train, test) = order.split_at(n_train);
    let mut train = train.to_vec();
    let mut test = test.to_vec();
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

/// The per-year two-learner ensemble and the normalization needed to apply it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnsembleModel {
    pub rf: ForestModel,
    pub q90: GbmModel,
    pub feature_names: Vec<String>,
    pub year: i32,
    pub normalization: Vec<NormalizationRecord>,
}

impl EnsembleModel {
    fn normalize_in_place(&self, x: &mut [f64]) {
        for (v, rec) in x.iter_mut().zip(&self.normalization) {
            *v = (*v - rec.mean) / rec.std;
        }
    }
}

impl Regressor for EnsembleModel {
    fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    /// Pixelwise maximum of the two learners; input is a raw feature row.
    fn predict_row(&self, x: &[f64]) -> f64 {
        let mut z = x.to_vec();
        self.normalize_in_place(&mut z);
        self.rf.predict_row(&z).max(self.q90.predict_row(&z))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n: usize,
    pub r: f64,
    pub mae: f64,
    pub rmse: f64,
    /// Mean of model minus observation.
    pub bias: f64,
    pub r2: f64,
    /// Constant observations leave r and r2 undefined (NaN serialized null).
    pub degenerate_constant_obs: bool,
}

pub fn evaluate(pred: &[f64], obs: &[f64]) -> Result<EvalReport, DownscaleError> {
    if pred.len() != obs.len() {
        return Err(DownscaleError::LengthMismatch {
            pred: pred.len(),
            obs: obs.len(),
        });
    }
    if pred.len() < 2 {
        return Err(DownscaleError::TooFewRows {
            needed: 2,
            actual: pred.len(),
        });
    }
    let n = pred.len();
    let nf = n as f64;
    let mae = pred
        .iter()
        .zip(obs)
        .map(|(p, o)| (p - o).abs())
        .sum::<f64>()
        / nf;
    let mse = pred
        .iter()
        .zip(obs)
        .map(|(p, o)| (p - o) * (p - o))
        .sum::<f64>()
        / nf;
    let bias = pred.iter().zip(obs).map(|(p, o)| p - o).sum::<f64>() / nf;

    let obs_mean = obs.iter().sum::<f64>() / nf;
    let ss_tot: f64 = obs.iter().map(|o| (o - obs_mean) * (o - obs_mean)).sum();
    let degenerate = ss_tot == 0.0;

    let (r, r2) = if degenerate {
        (f64::NAN, f64::NAN)
    } else {
        let pred_mean = pred.iter().sum::<f64>() / nf;
        let mut cov = 0.0;
        let mut var_p = 0.0;
        for (p, o) in pred.iter().zip(obs) {
            cov += (p - pred_mean) * (o - obs_mean);
            var_p += (p - pred_mean) * (p - pred_mean);
        }
        let r = if var_p == 0.0 {
            f64::NAN
        } else {
            cov / (var_p.sqrt() * ss_tot.sqrt())
        };
        let ss_res: f64 = pred.iter().zip(obs).map(|(p, o)| (o - p) * (o - p)).sum();
        (r, 1.0 - ss_res / ss_tot)
    };

    Ok(EvalReport {
        n,
        r,
        mae,
        rmse: mse.sqrt(),
        bias,
        r2,
        degenerate_constant_obs: degenerate,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DownscaleParams {
    pub split: SplitSpec,
    pub rf: RfParams,
    pub gbm: GbmParams,
    pub oversample_quantile: f64,
    pub oversample_fraction: f64,
    pub oversample_seed: u64,
    pub year: i32,
    pub season: String,
}

impl Default for DownscaleParams {
    fn default() -> Self {
        DownscaleParams {
            split: SplitSpec::default(),
            rf: RfParams::default(),
            gbm: GbmParams::default(),
            oversample_quantile: 0.90,
            oversample_fraction: 0.30,
            oversample_seed: 0,
            year: 0,
            season: "MAM".to_string(),
        }
    }
}

/// Everything a manifest needs to record about one year's training run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    pub year: i32,
    pub n_rows: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub rf_seed: u64,
    pub gbm_seed: u64,
    pub split_seed: u64,
    pub oversample_seed: u64,
    pub stages_used: usize,
    pub oversample: OversampleReport,
    pub dropped_constant_features: Vec<String>,
    pub eval_rf: EvalReport,
    pub eval_q90: EvalReport,
    pub eval_ensemble: EvalReport,
}

/// Train the year ensemble: the RF sees the raw 70 % training rows; the
/// quantile booster sees the tail-oversampled copy. Feature normalization is
/// fit on the training rows only and applied everywhere. Zero-variance
/// features are dropped and recorded.
pub fn train_year(
    table: &TrainingTable,
    params: &DownscaleParams,
) -> Result<(EnsembleModel, TrainReport), DownscaleError> {
    let (train_idx, test_idx) = split_train_test(table.data.n_rows(), &params.split)?;

    // Fit normalization on the training rows.
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    let mut records = Vec::new();
    for j in 0..table.data.n_features() {
        let col = table.data.column(j);
        let train_vals: Vec<f64> = train_idx.iter().map(|&i| col[i]).collect();
        let mean = crate::numeric::mean(&train_vals);
        let std = crate::numeric::pop_std(&train_vals);
        if std == 0.0 {
            dropped.push(table.data.names()[j].clone());
            continue;
        }
        kept.push(j);
        records.push(NormalizationRecord {
            feature: table.data.names()[j].clone(),
            mean,
            std,
            year: params.year,
            season: params.season.clone(),
        });
    }
    if kept.is_empty() {
        return Err(DownscaleError::AllFeaturesConstant);
    }

    let feature_names: Vec<String> = kept
        .iter()
        .map(|&j| table.data.names()[j].clone())
        .collect();
    let normalized_columns: Vec<Vec<f64>> = kept
        .iter()
        .zip(&records)
        .map(|(&j, rec)| {
            table
                .data
                .column(j)
                .iter()
                .map(|v| (v - rec.mean) / rec.std)
                .collect()
        })
        .collect();
    let normalized = DataMatrix::from_columns(feature_names.clone(), normalized_columns)?;

    let train_data = normalized.gather_rows(&train_idx);
    let train_y: Vec<f64> = train_idx.iter().map(|&i| table.y[i]).collect();
    let test_data = normalized.gather_rows(&test_idx);
    let test_y: Vec<f64> = test_idx.iter().map(|&i| table.y[i]).collect();

    let rf = fit_random_forest(&train_data, &train_y, &params.rf)?;

    let (gbm_data, gbm_y, oversample) = oversample_tail(
        &train_data,
        &train_y,
        params.oversample_quantile,
        params.oversample_fraction,
        params.oversample_seed,
    )?;
    let q90 = fit_gbm_quantile(&gbm_data, &gbm_y, &params.gbm)?.model;

    let rf_pred = rf.predict_matrix(&test_data)?;
    let q90_pred = q90.predict_matrix(&test_data)?;
    let ens_pred: Vec<f64> = rf_pred
        .iter()
        .zip(&q90_pred)
        .map(|(a, b)| a.max(*b))
        .collect();

    let report = TrainReport {
        year: params.year,
        n_rows: table.data.n_rows(),
        n_train: train_idx.len(),
        n_test: test_idx.len(),
        rf_seed: params.rf.train.seed,
        gbm_seed: params.gbm.train.seed,
        split_seed: params.split.seed,
        oversample_seed: params.oversample_seed,
        stages_used: q90.stages_used,
        oversample,
        dropped_constant_features: dropped,
        eval_rf: evaluate(&rf_pred, &test_y)?,
        eval_q90: evaluate(&q90_pred, &test_y)?,
        eval_ensemble: evaluate(&ens_pred, &test_y)?,
    };

    Ok((
        EnsembleModel {
            rf,
            q90,
            feature_names,
            year: params.year,
            normalization: records,
        },
        report,
    ))
}

/// Apply a trained ensemble at every pixel of the stack's joint valid mask:
/// per pixel the maximum of the two learners, nodata elsewhere. Stack layers
/// are looked up by the model's feature names; a missing layer is an error.
pub fn predict_ensemble(model: &EnsembleModel, stack: &FeatureStack) -> Result<Grid, DownscaleError> {
    let selected = stack.select(&model.feature_names)?;
    let header = *selected.header();
    let mut values = vec![f64::NAN; header.n_cells()];
    let mut buf = Vec::with_capacity(model.feature_names.len());
    for i in 0..header.n_cells() {
        if selected.joint_valid_mask()[i] {
            selected.pixel_features(i, &mut buf);
            values[i] = model.predict_row(&buf);
        }
    }
    Ok(Grid::new(header, values, "degC")?)
}

/// Serialized model envelope written by the CLI and the pipeline.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "model_type", rename_all = "snake_case")]
pub enum ModelFile {
    RandomForest(ForestModel),
    GbmQuantile(GbmModel),
    Ensemble(EnsembleModel),
}

impl ModelFile {
    pub fn save(&self, path: &std::path::Path) -> Result<(), DownscaleError> {
        let json = serde_json::to_vec_pretty(self).map_err(GridError::from)?;
        std::fs::write(path, json).map_err(GridError::from)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<ModelFile, DownscaleError> {
        let bytes = std::fs::read(path).map_err(GridError::from)?;
        Ok(serde_json::from_slice(&bytes).map_err(GridError::from)?)
    }

    pub fn as_forest(&self) -> Option<&ForestModel> {
        match self {
            ModelFile::RandomForest(m) => Some(m),
            _ => None,
        }
    }

    pub fn as_regressor(&self) -> &dyn Regressor {
        match self {
            ModelFile::RandomForest(m) => m,
            ModelFile::GbmQuantile(m) => m,
            ModelFile::Ensemble(m) => m,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::align_stack;

    fn header(rows: usize, cols: usize) -> GridHeader {
        GridHeader::new(rows, cols, 20.0, 70.0, 0.1).unwrap()
    }

    fn stack_3x3() -> FeatureStack {
        let h = header(3, 3);
        let a: Vec<f64> = (0..9).map(|i| i as f64).collect();
        let b: Vec<f64> = (0..9).map(|i| (i * i) as f64).collect();
        align_stack(vec![
            ("A".into(), Grid::new(h, a, "x").unwrap()),
            ("B".into(), Grid::new(h, b, "x").unwrap()),
        ])
        .unwrap()
    }

    #[test]
    fn table_is_row_major_over_valid_pixels() {
        let stack = stack_3x3();
        let target = Grid::constant(header(3, 3), 1.0, "degC").unwrap();
        let table = make_training_table(&stack, &target).unwrap();
        assert_eq!(table.data.n_rows(), 9);
        assert_eq!(table.pixel_indices, (0..9).collect::<Vec<_>>());
        assert_eq!(table.data.column(0), (0..9).map(|i| i as f64).collect::<Vec<_>>());
    }

    #[test]
    fn table_skips_invalid_target_pixel() {
        let stack = stack_3x3();
        let mut vals = vec![1.0; 9];
        vals[4] = f64::NAN;
        let target = Grid::new(header(3, 3), vals, "degC").unwrap();
        let table = make_training_table(&stack, &target).unwrap();
        assert_eq!(table.data.n_rows(), 8);
        assert!(!table.pixel_indices.contains(&4));
    }

    #[test]
    fn table_respects_stack_mask() {
        let h = header(3, 3);
        let mut vals: Vec<f64> = (0..9).map(|i| i as f64).collect();
        for c in 0..3 {
            vals[3 + c] = f64::NAN; // middle row invalid in one layer
        }
        let a = Grid::new(h, vals, "x").unwrap();
        let b = Grid::constant(h, 2.0, "x").unwrap();
        let stack = align_stack(vec![("A".into(), a), ("B".into(), b)]).unwrap();
        let target = Grid::constant(h, 1.0, "degC").unwrap();
        let table = make_training_table(&stack, &target).unwrap();
        assert_eq!(table.data.n_rows(), 6);
    }

    #[test]
    fn table_empty_intersection_errors() {
        let h = header(1, 2);
        let a = Grid::new(h, vec![1.0, f64::NAN], "x").unwrap();
        let stack = align_stack(vec![("A".into(), a)]).unwrap();
        let target = Grid::new(h, vec![f64::NAN, 1.0], "degC").unwrap();
        assert!(matches!(
            make_training_table(&stack, &target),
            Err(DownscaleError::EmptyIntersection)
        ));
    }

    #[test]
    fn split_sizes_and_partition() {
        let spec = SplitSpec::default();
        let (train, test) = split_train_test(10, &spec).unwrap();
        assert_eq!(train.len(), 7);
        assert_eq!(test.len(), 3);
        let mut all: Vec<usize> = train.iter().chain(&test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());

        let (train2, test2) = split_train_test(10, &spec).unwrap();
        assert_eq!(train, train2);
        assert_eq!(test, test2);
    }

    #[test]
    fn split_too_small_errors() {
        assert!(matches!(
            split_train_test(9, &SplitSpec::default()),
            Err(DownscaleError::TooFewRows { needed: 10, .. })
        ));
    }

    #[test]
    fn evaluate_identity() {
        let obs = [1.0, 2.0, 3.0];
        let rep = evaluate(&obs, &obs).unwrap();
        assert_eq!(rep.mae, 0.0);
        assert_eq!(rep.rmse, 0.0);
        assert_eq!(rep.bias, 0.0);
        assert!((rep.r - 1.0).abs() < 1e-15);
        assert!((rep.r2 - 1.0).abs() < 1e-15);
    }

    #[test]
    fn evaluate_shifted_hand_values() {
        let obs = [1.0, 2.0, 3.0];
        let pred = [2.0, 3.0, 4.0];
        let rep = evaluate(&pred, &obs).unwrap();
        assert!((rep.mae - 1.0).abs() < 1e-12);
        assert!((rep.rmse - 1.0).abs() < 1e-12);
        assert!((rep.bias - 1.0).abs() < 1e-12);
        assert!((rep.r - 1.0).abs() < 1e-12);
        assert!((rep.r2 - (-0.5)).abs() < 1e-12, "R² {}", rep.r2);
    }

    #[test]
    fn evaluate_third_hand_example() {
        let obs = [1.0, 2.0, 3.0];
        let pred = [1.0, 2.0, 4.0];
        let rep = evaluate(&pred, &obs).unwrap();
        assert!((rep.mae - 1.0 / 3.0).abs() < 1e-12);
        assert!((rep.bias - 1.0 / 3.0).abs() < 1e-12);
        assert!((rep.rmse - 1.0 / 3.0_f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn evaluate_rmse_dominates_mae() {
        let obs = [1.0, 5.0, 2.0, 8.0];
        let pred = [2.0, 4.5, 3.0, 6.0];
        let rep = evaluate(&pred, &obs).unwrap();
        assert!(rep.rmse >= rep.mae);
    }

    #[test]
    fn evaluate_errors() {
        assert!(matches!(
            evaluate(&[1.0], &[1.0, 2.0]),
            Err(DownscaleError::LengthMismatch { .. })
        ));
        assert!(matches!(
            evaluate(&[1.0], &[1.0]),
            Err(DownscaleError::TooFewRows { .. })
        ));
        let rep = evaluate(&[1.0, 2.0], &[3.0, 3.0]).unwrap();
        assert!(rep.degenerate_constant_obs);
        assert!(rep.r.is_nan() && rep.r2.is_nan());
    }

    fn small_params(year: i32) -> DownscaleParams {
        DownscaleParams {
            rf: RfParams {
                n_estimators: 20,
                ..RfParams::default()
            },
            gbm: GbmParams {
                max_stages: 60,
                ..GbmParams::default()
            },
            year,
            ..DownscaleParams::default()
        }
    }

    fn constant_target_table() -> TrainingTable {
        let h = GridHeader::new(8, 8, 20.0, 70.0, 0.1).unwrap();
        let a: Vec<f64> = (0..64).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..64).map(|i| (i as f64 * 0.11).cos()).collect();
        let stack = align_stack(vec![
            ("A".into(), Grid::new(h, a, "x").unwrap()),
            ("B".into(), Grid::new(h, b, "x").unwrap()),
        ])
        .unwrap();
        let target = Grid::constant(h, 30.0, "degC").unwrap();
        make_training_table(&stack, &target).unwrap()
    }

    #[test]
    fn constant_target_gives_constant_ensemble() {
        let table = constant_target_table();
        let (model, report) = train_year(&table, &small_params(2003)).unwrap();
        let mut buf = Vec::new();
        table.data.row(0, &mut buf);
        assert_eq!(model.predict_row(&buf), 30.0);
        assert_eq!(report.eval_ensemble.mae, 0.0);
        assert_eq!(report.stages_used, 0);
    }

    #[test]
    fn constant_feature_is_dropped_and_recorded() {
        let h = GridHeader::new(8, 8, 20.0, 70.0, 0.1).unwrap();
        let a: Vec<f64> = (0..64).map(|i| (i as f64 * 0.37).sin()).collect();
        let stack = align_stack(vec![
            ("A".into(), Grid::new(h, a.clone(), "x").unwrap()),
            ("FLAT".into(), Grid::constant(h, 3.0, "x").unwrap()),
        ])
        .unwrap();
        let target = Grid::new(h, a.iter().map(|v| 2.0 * v + 30.0).collect(), "degC").unwrap();
        let table = make_training_table(&stack, &target).unwrap();
        let (model, report) = train_year(&table, &small_params(2004)).unwrap();
        assert_eq!(report.dropped_constant_features, vec!["FLAT".to_string()]);
        assert_eq!(model.feature_names, vec!["A".to_string()]);
        // Prediction still works against the full stack.
        let grid = predict_ensemble(&model, &stack).unwrap();
        assert_eq!(grid.n_valid(), 64);
    }

    #[test]
    fn ensemble_dominates_rf_everywhere() {
        let table = {
            let h = GridHeader::new(10, 10, 20.0, 70.0, 0.1).unwrap();
            let a: Vec<f64> = (0..100).map(|i| (i as f64 * 0.17).sin()).collect();
            let b: Vec<f64> = (0..100).map(|i| (i as f64 * 0.05).cos()).collect();
            let stack = align_stack(vec![
                ("A".into(), Grid::new(h, a.clone(), "x").unwrap()),
                ("B".into(), Grid::new(h, b.clone(), "x").unwrap()),
            ])
            .unwrap();
            let y: Vec<f64> = a
                .iter()
                .zip(&b)
                .map(|(x, z)| 30.0 + 3.0 * x - 2.0 * z)
                .collect();
            let target = Grid::new(h, y, "degC").unwrap();
            make_training_table(&stack, &target).unwrap()
        };
        let (model, _) = train_year(&table, &small_params(2005)).unwrap();
        let mut buf = Vec::new();
        for i in 0..table.data.n_rows() {
            table.data.row(i, &mut buf);
            let mut z = buf.clone();
            model.normalize_in_place(&mut z);
            let rf = model.rf.predict_row(&z);
            let q90 = model.q90.predict_row(&z);
            let ens = model.predict_row(&buf);
            assert!(ens >= rf && ens >= q90);
            assert_eq!(ens, rf.max(q90));
        }
    }

    #[test]
    fn predict_ensemble_missing_layer_errors() {
        let table = constant_target_table();
        let (model, _) = train_year(&table, &small_params(2006)).unwrap();
        let h = GridHeader::new(8, 8, 20.0, 70.0, 0.1).unwrap();
        let stack = align_stack(vec![(
            "A".into(),
            Grid::constant(h, 1.0, "x").unwrap(),
        )])
        .unwrap();
        assert!(predict_ensemble(&model, &stack).is_err());
    }

    #[test]
    fn model_file_round_trip() {
        let table = constant_target_table();
        let (model, _) = train_year(&table, &small_params(2007)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        ModelFile::Ensemble(model.clone()).save(&path).unwrap();
        let loaded = ModelFile::load(&path).unwrap();
        let mut buf = Vec::new();
        table.data.row(3, &mut buf);
        assert_eq!(
            loaded.as_regressor().predict_row(&buf),
            model.predict_row(&buf)
        );
    }
}
