//! Bagged random forest for the mean structure: 150 trees by default, each on
//! a bootstrap resample, each split restricted to ceil(sqrt(d)) features
//! drawn without replacement per node, no depth cap.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::cart::{fit_cart_impl, LeafStatistic};
use super::{DataMatrix, DecisionTree, Regressor, TrainParams, TreeError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RfParams {
    pub n_estimators: usize,
    #[serde(flatten)]
    pub train: TrainParams,
    /// Track out-of-bag predictions and record the OOB R².
    pub compute_oob: bool,
}

impl Default for RfParams {
    fn default() -> Self {
        RfParams {
            n_estimators: 150,
            train: TrainParams::default(),
            compute_oob: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub trees: Vec<DecisionTree>,
    pub n_estimators: usize,
    pub max_features_rule: String,
    /// Per-tree bootstrap seeds, derived deterministically from the master seed.
    pub seeds: Vec<u64>,
    pub feature_names: Vec<String>,
    pub params: RfParams,
    pub oob_r2: Option<f64>,
}

impl Regressor for ForestModel {
    fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    fn predict_row(&self, x: &[f64]) -> f64 {
        let sum: f64 = self.trees.iter().map(|t| t.predict_row(x)).sum();
        sum / self.trees.len() as f64
    }
}

pub fn fit_random_forest(
    data: &DataMatrix,
    y: &[f64],
    params: &RfParams,
) -> Result<ForestModel, TreeError> {
    params.train.validate()?;
    if params.n_estimators < 1 {
        return Err(TreeError::InvalidParam("n_estimators must be >= 1".into()));
    }
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

    let n = data.n_rows();
    let k = (data.n_features() as f64).sqrt().ceil() as usize;

    let mut seeder = ChaCha8Rng::seed_from_u64(params.train.seed);
    let seeds: Vec<u64> = (0..params.n_estimators).map(|_| seeder.random()).collect();

    let fits: Vec<(DecisionTree, Vec<bool>)> = seeds
        .par_iter()
        .map(|&seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut in_bag = vec![false; n];
            let bootstrap: Vec<usize> = (0..n)
                .map(|_| {
                    let i = rng.random_range(0..n);
                    in_bag[i] = true;
                    i
                })
                .collect();
            let bag_data = data.gather_rows(&bootstrap);
            let bag_y: Vec<f64> = bootstrap.iter().map(|&i| y[i]).collect();
            let tree = fit_cart_impl(
                &bag_data,
                &bag_y,
                &params.train,
                LeafStatistic::Mean,
                Some((k, &mut rng)),
            )
            .expect("bootstrap sample is non-empty and finite");
            (tree, in_bag)
        })
        .collect();

    let oob_r2 = if params.compute_oob {
        oob_r_squared(data, y, &fits)
    } else {
        None
    };
    let trees = fits.into_iter().map(|(t, _)| t).collect();

    Ok(ForestModel {
        trees,
        n_estimators: params.n_estimators,
        max_features_rule: "sqrt".to_string(),
        seeds,
        feature_names: data.names().to_vec(),
        params: *params,
        oob_r2,
    })
}

fn oob_r_squared(data: &DataMatrix, y: &[f64], fits: &[(DecisionTree, Vec<bool>)]) -> Option<f64> {
    let n = data.n_rows();
    let mut sums = vec![0.0f64; n];
    let mut counts = vec![0usize; n];
    let mut buf = Vec::with_capacity(data.n_features());
    for (tree, in_bag) in fits {
        for i in 0..n {
            if !in_bag[i] {
                data.row(i, &mut buf);
                sums[i] += tree.predict_row(&buf);
                counts[i] += 1;
            }
        }
    }
    let covered: Vec<usize> = (0..n).filter(|&i| counts[i] > 0).collect();
    if covered.len() < 2 {
        return None;
    }
    let y_mean = covered.iter().map(|&i| y[i]).sum::<f64>() / covered.len() as f64;
    let ss_tot: f64 = covered.iter().map(|&i| (y[i] - y_mean) * (y[i] - y_mean)).sum();
    if ss_tot == 0.0 {
        return None;
    }
    let ss_res: f64 = covered
        .iter()
        .map(|&i| {
            let pred = sums[i] / counts[i] as f64;
            (y[i] - pred) * (y[i] - pred)
        })
        .sum();
    Some(1.0 - ss_res / ss_tot)
}
