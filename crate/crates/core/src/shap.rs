//! Interventional TreeSHAP attribution against a compressed background, plus
//! the aggregation and pairwise joint-effect summaries built on top of it.
//!
//! The background distribution is compressed with MiniBatch K-means to a
//! small set of weighted centroids; those fix the expected value that anchors
//! all attributions. Attribution per pixel is exact for the coalition game
//! v(S) = f(x_S composed with centroid outside S), averaged over centroids.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{FeatureStack, GridError, GridHeader, DOWNSCALING_LAYERS, EXPLANATION_LAYERS, LCZ_PREFIX};
use crate::tree::{
    fit_random_forest, DataMatrix, DecisionTree, ForestModel, Regressor, RfParams, TreeError,
    TreeNode,
};

#[derive(Debug, Error)]
pub enum ShapError {
    #[error("K = {k} exceeds the {n} available samples")]
    KTooLarge { k: usize, n: usize },
    #[error("K must be at least 1")]
    KZero,
    #[error("background set is empty")]
    EmptyBackground,
    #[error("query has {actual} features, model expects {expected}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("feature `{0}` is a downscaling predictor; explaining HI with its own drivers leaks between stages")]
    LeakageFeature(String),
    #[error("feature `{0}` is not a greening/urban-form predictor (EVI, LAI, FPAR, NTL, LCZ_*)")]
    UnknownExplanationFeature(String),
    #[error("efficiency violated: max |base + sum(phi) - f(x)| = {0}")]
    EfficiencyViolation(f64),
    #[error("SHAP matrix does not contain feature `{0}`")]
    MissingFeature(String),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Tree(#[from] TreeError),
}

/// Weighted centroids standing in for the full background distribution.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BackgroundSet {
    pub centroids: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    pub source_sample_size: usize,
    pub feature_names: Vec<String>,
}

/// Compress `samples` to K weighted centroids with MiniBatch K-means
/// (batch 256, at most 100 iterations, k-means++ seeding). Weights are
/// proportional to final assignment counts.
pub fn compress_background(
    samples: &DataMatrix,
    k: usize,
    seed: u64,
) -> Result<BackgroundSet, ShapError> {
    let n = samples.n_rows();
    if k == 0 {
        return Err(ShapError::KZero);
    }
    if k > n {
        return Err(ShapError::KTooLarge { k, n });
    }

    let rows: Vec<Vec<f64>> = (0..n).map(|i| samples.row_vec(i)).collect();
    if k == n {
        return Ok(BackgroundSet {
            centroids: rows,
            weights: vec![1.0 / n as f64; n],
            source_sample_size: n,
            feature_names: samples.names().to_vec(),
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = kmeans_plus_plus(&rows, k, &mut rng);

    let batch = 256.min(n);
    let mut counts = vec![0usize; k];
    for _iter in 0..100 {
        for _ in 0..batch {
            let i = rng.random_range(0..n);
            let c = nearest_centroid(&rows[i], &centroids);
            counts[c] += 1;
            let eta = 1.0 / counts[c] as f64;
            for (cv, sv) in centroids[c].iter_mut().zip(&rows[i]) {
                *cv = (1.0 - eta) * *cv + eta * *sv;
            }
        }
    }

    let mut final_counts = vec![0usize; k];
    for row in &rows {
        final_counts[nearest_centroid(row, &centroids)] += 1;
    }
    let weights = final_counts.iter().map(|&c| c as f64 / n as f64).collect();

    Ok(BackgroundSet {
        centroids,
        weights,
        source_sample_size: n,
        feature_names: samples.names().to_vec(),
    })
}

fn kmeans_plus_plus(rows: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = rows.len();
    let mut centroids: Vec<Vec<f64>> = Vec::with_capacity(k);
    centroids.push(rows[rng.random_range(0..n)].clone());
    let mut d2: Vec<f64> = rows.iter().map(|r| sq_dist(r, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random_range(0.0..total);
            let mut chosen = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if target < d {
                    chosen = i;
                    break;
                }
                target -= d;
            }
            chosen
        } else {
            // All remaining points coincide with a centroid; any pick works.
            rng.random_range(0..n)
        };
        centroids.push(rows[next].clone());
        for (d, row) in d2.iter_mut().zip(rows) {
            *d = d.min(sq_dist(row, centroids.last().unwrap()));
        }
    }
    centroids
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest_centroid(row: &[f64], centroids: &[Vec<f64>]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, c) in centroids.iter().enumerate() {
        let d = sq_dist(row, c);
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    best
}

/// Train the pooled explainer forest on greening/urban predictors only.
/// Any downscaling predictor name in the table is a hard error, and the
/// out-of-bag R² is recorded for provenance.
pub fn fit_explainer(
    data: &DataMatrix,
    y: &[f64],
    params: &RfParams,
) -> Result<ForestModel, ShapError> {
    for name in data.names() {
        if DOWNSCALING_LAYERS.contains(&name.as_str()) {
            return Err(ShapError::LeakageFeature(name.clone()));
        }
        if !EXPLANATION_LAYERS.contains(&name.as_str()) && !name.starts_with(LCZ_PREFIX) {
            return Err(ShapError::UnknownExplanationFeature(name.clone()));
        }
    }
    let params = RfParams {
        compute_oob: true,
        ..*params
    };
    Ok(fit_random_forest(data, y, &params)?)
}

/// Per-pixel signed attributions plus the shared base value; every row
/// satisfies base + sum(phi) = prediction.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ShapMatrix {
    pub base_value: f64,
    /// Row-major: pixel-major, feature-minor.
    pub phi: Vec<f64>,
    pub predictions: Vec<f64>,
    pub feature_names: Vec<String>,
    /// Row-major linear pixel index of each explained row.
    pub pixel_indices: Vec<usize>,
    pub header: GridHeader,
    pub efficiency_max_abs_error: f64,
}

impl ShapMatrix {
    pub fn n_pixels(&self) -> usize {
        self.pixel_indices.len()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn phi_row(&self, row: usize) -> &[f64] {
        let d = self.n_features();
        &self.phi[row * d..(row + 1) * d]
    }

    pub fn feature_index(&self, name: &str) -> Result<usize, ShapError> {
        self.feature_names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| ShapError::MissingFeature(name.to_string()))
    }

    /// Column of attributions for one feature.
    pub fn phi_column(&self, feature: usize) -> Vec<f64> {
        let d = self.n_features();
        (0..self.n_pixels()).map(|i| self.phi[i * d + feature]).collect()
    }
}

/// Exact interventional Shapley values of a forest at one query point.
/// Returns (phi, base value).
pub fn tree_shap_interventional(
    model: &ForestModel,
    x: &[f64],
    background: &BackgroundSet,
) -> Result<(Vec<f64>, f64), ShapError> {
    if background.centroids.is_empty() {
        return Err(ShapError::EmptyBackground);
    }
    if x.len() != model.n_features() {
        return Err(ShapError::DimensionMismatch {
            expected: model.n_features(),
            actual: x.len(),
        });
    }
    let engine = ShapEngine::new(model);
    Ok(engine.explain(x, background))
}

/// Precomputed binomial table shared across pixels of one explanation run.
struct ShapEngine<'a> {
    model: &'a ForestModel,
    /// binom[n][r] = C(n, r); rows up to the deepest path + 1.
    binom: Vec<Vec<f64>>,
}

#[derive(Clone, Copy, PartialEq)]
enum Constraint {
    Free,
    Include,
    Exclude,
}

impl<'a> ShapEngine<'a> {
    fn new(model: &'a ForestModel) -> Self {
        let max_depth = model
            .trees
            .iter()
            .map(|t| t.max_depth_used)
            .max()
            .unwrap_or(0);
        let rows = max_depth + 2;
        let mut binom = vec![vec![0.0; rows]; rows];
        for n in 0..rows {
            binom[n][0] = 1.0;
            for r in 1..=n {
                binom[n][r] = binom[n - 1][r - 1] + if r < n { binom[n - 1][r] } else { 0.0 };
            }
        }
        ShapEngine { model, binom }
    }

    /// Weighted expected prediction over the background centroids.
    fn base_value(&self, background: &BackgroundSet) -> f64 {
        background
            .centroids
            .iter()
            .zip(&background.weights)
            .map(|(z, w)| w * self.model.predict_row(z))
            .sum()
    }

    fn explain(&self, x: &[f64], background: &BackgroundSet) -> (Vec<f64>, f64) {
        (self.explain_phi(x, background), self.base_value(background))
    }

    fn explain_phi(&self, x: &[f64], background: &BackgroundSet) -> Vec<f64> {
        let d = x.len();
        let k = background.centroids.len();
        let n_trees = self.model.trees.len() as f64;
        let mut phi = vec![0.0; d];
        // Per-centroid final scale applied as leaves settle.
        let scales: Vec<f64> = background.weights.iter().map(|w| w / n_trees).collect();
        let mut walk = BatchWalk {
            engine: self,
            x,
            centroids: &background.centroids,
            scales: &scales,
            state: vec![Constraint::Free; k * d],
            n_include: vec![0; k],
            n_constrained: vec![0; k],
            d,
            tree: &self.model.trees[0],
            phi: &mut phi,
        };
        let all: Vec<u32> = (0..k as u32).collect();
        for tree in &self.model.trees {
            walk.tree = tree;
            walk.descend(0, &all);
        }
        phi
    }
}

/// Tree walk shared by every background centroid: actives carry the centroid
/// ids still consistent with the path, and per-centroid include/exclude
/// constraint states are updated as the walk branches. Centroids that share
/// routes share the subtree exploration.
struct BatchWalk<'a, 'b> {
    engine: &'a ShapEngine<'a>,
    tree: &'a DecisionTree,
    x: &'a [f64],
    centroids: &'a [Vec<f64>],
    scales: &'a [f64],
    /// Flattened centroid-major constraint matrix (k x d).
    state: Vec<Constraint>,
    n_include: Vec<u16>,
    n_constrained: Vec<u16>,
    d: usize,
    phi: &'b mut [f64],
}

impl BatchWalk<'_, '_> {
    fn descend(&mut self, node: usize, actives: &[u32]) {
        if actives.is_empty() {
            return;
        }
        match &self.tree.nodes[node] {
            TreeNode::Leaf { value, .. } => self.settle_leaf(*value, actives),
            TreeNode::Split {
                feature_index,
                threshold,
                left,
                right,
            } => {
                let f = *feature_index;
                let x_left = self.x[f] <= *threshold;
                let (x_child, z_child) = if x_left {
                    (*left, *right)
                } else {
                    (*right, *left)
                };

                let mut x_side: Vec<u32> = Vec::with_capacity(actives.len());
                let mut z_side: Vec<u32> = Vec::new();
                // Centroids newly constrained on this branch, for undo.
                let mut x_new: Vec<u32> = Vec::new();
                let mut z_new: Vec<u32> = Vec::new();
                for &c in actives {
                    let z_left = self.centroids[c as usize][f] <= *threshold;
                    if z_left == x_left {
                        // No constraint: the centroid agrees with the query.
                        x_side.push(c);
                        continue;
                    }
                    match self.state[c as usize * self.d + f] {
                        Constraint::Include => x_side.push(c),
                        Constraint::Exclude => z_side.push(c),
                        Constraint::Free => {
                            x_side.push(c);
                            x_new.push(c);
                            z_side.push(c);
                            z_new.push(c);
                        }
                    }
                }

                if !x_side.is_empty() {
                    for &c in &x_new {
                        self.state[c as usize * self.d + f] = Constraint::Include;
                        self.n_include[c as usize] += 1;
                        self.n_constrained[c as usize] += 1;
                    }
                    self.descend(x_child, &x_side);
                    for &c in &x_new {
                        self.state[c as usize * self.d + f] = Constraint::Free;
                        self.n_include[c as usize] -= 1;
                        self.n_constrained[c as usize] -= 1;
                    }
                }
                if !z_side.is_empty() {
                    for &c in &z_new {
                        self.state[c as usize * self.d + f] = Constraint::Exclude;
                        self.n_constrained[c as usize] += 1;
                    }
                    self.descend(z_child, &z_side);
                    for &c in &z_new {
                        self.state[c as usize * self.d + f] = Constraint::Free;
                        self.n_constrained[c as usize] -= 1;
                    }
                }
            }
        }
    }

    /// Shapley contributions of a leaf for every centroid that can reach it:
    /// with a included and b excluded features (k = a + b), each included
    /// feature gains leaf * (a-1)! b! / k! and each excluded feature loses
    /// leaf * a! (b-1)! / k!, scaled by the centroid weight.
    fn settle_leaf(&mut self, leaf: f64, actives: &[u32]) {
        let binom = &self.engine.binom;
        for &c in actives {
            let ci = c as usize;
            let k = self.n_constrained[ci] as usize;
            if k == 0 {
                continue;
            }
            let a = self.n_include[ci] as usize;
            let scaled = leaf * self.scales[ci];
            let w_include = if a > 0 {
                scaled / (k as f64 * binom[k - 1][a - 1])
            } else {
                0.0
            };
            let w_exclude = if k - a > 0 {
                scaled / (k as f64 * binom[k - 1][a])
            } else {
                0.0
            };
            let row_start = ci * self.d;
            for f in 0..self.d {
                match self.state[row_start + f] {
                    Constraint::Include => self.phi[f] += w_include,
                    Constraint::Exclude => self.phi[f] -= w_exclude,
                    Constraint::Free => {}
                }
            }
        }
    }
}

/// Chunked per-pixel attribution over the valid pixels of a stack.
/// Memory stays O(chunk); the efficiency identity is audited per chunk and a
/// violation beyond 1e-6 °C aborts.
pub fn explain_region(
    model: &ForestModel,
    stack: &FeatureStack,
    background: &BackgroundSet,
    chunk_size: usize,
) -> Result<ShapMatrix, ShapError> {
    let selected = stack.select(&model.feature_names)?;
    let d = model.n_features();
    let pixels: Vec<usize> = selected
        .joint_valid_mask()
        .iter()
        .enumerate()
        .filter_map(|(i, &ok)| ok.then_some(i))
        .collect();

    let engine = ShapEngine::new(model);
    let chunk_size = chunk_size.max(1);
    let mut phi = Vec::with_capacity(pixels.len() * d);
    let mut predictions = Vec::with_capacity(pixels.len());
    let base_value = engine.base_value(background);
    let mut max_err = 0.0f64;

    for chunk in pixels.chunks(chunk_size) {
        let results: Vec<(Vec<f64>, f64)> = chunk
            .par_iter()
            .map(|&pix| {
                let mut row = Vec::with_capacity(d);
                selected.pixel_features(pix, &mut row);
                let phi_row = engine.explain_phi(&row, background);
                let pred = model.predict_row(&row);
                (phi_row, pred)
            })
            .collect();
        for (phi_row, pred) in results {
            let total: f64 = phi_row.iter().sum();
            max_err = max_err.max((base_value + total - pred).abs());
            phi.extend_from_slice(&phi_row);
            predictions.push(pred);
        }
        if max_err > 1e-6 {
            return Err(ShapError::EfficiencyViolation(max_err));
        }
    }

    Ok(ShapMatrix {
        base_value,
        phi,
        predictions,
        feature_names: model.feature_names.clone(),
        pixel_indices: pixels,
        header: *selected.header(),
        efficiency_max_abs_error: max_err,
    })
}

/// One feature's aggregate importance plus the two share conventions the
/// donut summaries can be read as.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeatureRank {
    pub feature: String,
    pub mean_abs_phi: f64,
    pub mean_signed_phi: f64,
    /// Share of the total sum of mean |phi| across features.
    pub abs_share: f64,
    /// Share of pixels where this feature has the largest |phi|.
    pub dominant_pixel_share: f64,
}

/// Rank features by mean absolute attribution, descending; ties break
/// alphabetically.
pub fn rank_features(shap: &ShapMatrix) -> Vec<FeatureRank> {
    let d = shap.n_features();
    let n = shap.n_pixels().max(1);
    let mut mean_abs = vec![0.0; d];
    let mut mean_signed = vec![0.0; d];
    let mut dominant = vec![0usize; d];
    for row in 0..shap.n_pixels() {
        let phi = shap.phi_row(row);
        let mut best = 0usize;
        for (j, v) in phi.iter().enumerate() {
            mean_abs[j] += v.abs();
            mean_signed[j] += v;
            if v.abs() > phi[best].abs() {
                best = j;
            }
        }
        dominant[best] += 1;
    }
    for j in 0..d {
        mean_abs[j] /= n as f64;
        mean_signed[j] /= n as f64;
    }
    let total_abs: f64 = mean_abs.iter().sum();

    let mut ranks: Vec<FeatureRank> = (0..d)
        .map(|j| FeatureRank {
            feature: shap.feature_names[j].clone(),
            mean_abs_phi: mean_abs[j],
            mean_signed_phi: mean_signed[j],
            abs_share: if total_abs > 0.0 {
                mean_abs[j] / total_abs
            } else {
                0.0
            },
            dominant_pixel_share: dominant[j] as f64 / n as f64,
        })
        .collect();
    ranks.sort_by(|a, b| {
        b.mean_abs_phi
            .partial_cmp(&a.mean_abs_phi)
            .unwrap()
            .then_with(|| a.feature.cmp(&b.feature))
    });
    ranks
}

/// Net joint effect of a feature pair: domain mean, joint-high mean, and
/// cooling coverage.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairwiseJointSummary {
    pub pair: (String, String),
    pub mu_all: f64,
    /// None when no pixel is jointly high (flagged undefined).
    pub mu_hh: Option<f64>,
    /// Percentage of pixels with net SHAP < 0.
    pub cooling_coverage_pct: f64,
    pub sd_all: f64,
    pub joint_high_quantile: f64,
    pub n_pixels: usize,
    pub n_joint_high: usize,
}

/// Summarize the combined attribution of two features. "Joint high" means
/// both raw feature values sit at or above their own `joint_high_quantile`
/// over the explained pixels.
pub fn pairwise_joint_summary(
    shap: &ShapMatrix,
    stack: &FeatureStack,
    pair: (&str, &str),
    joint_high_quantile: f64,
) -> Result<PairwiseJointSummary, ShapError> {
    let ja = shap.feature_index(pair.0)?;
    let jb = shap.feature_index(pair.1)?;
    let grid_a = stack.layer(pair.0)?;
    let grid_b = stack.layer(pair.1)?;

    let vals_a: Vec<f64> = shap.pixel_indices.iter().map(|&i| grid_a.values()[i]).collect();
    let vals_b: Vec<f64> = shap.pixel_indices.iter().map(|&i| grid_b.values()[i]).collect();
    let qa = crate::numeric::quantile(&vals_a, joint_high_quantile);
    let qb = crate::numeric::quantile(&vals_b, joint_high_quantile);

    let n = shap.n_pixels();
    let mut net = Vec::with_capacity(n);
    let mut hh_sum = 0.0;
    let mut hh_n = 0usize;
    let mut cooling = 0usize;
    for row in 0..n {
        let phi = shap.phi_row(row);
        let v = phi[ja] + phi[jb];
        net.push(v);
        if v < 0.0 {
            cooling += 1;
        }
        if vals_a[row] >= qa && vals_b[row] >= qb {
            hh_sum += v;
            hh_n += 1;
        }
    }

    Ok(PairwiseJointSummary {
        pair: (pair.0.to_string(), pair.1.to_string()),
        mu_all: crate::numeric::mean(&net),
        mu_hh: (hh_n > 0).then(|| hh_sum / hh_n as f64),
        cooling_coverage_pct: 100.0 * cooling as f64 / n as f64,
        sd_all: crate::numeric::pop_std(&net),
        joint_high_quantile,
        n_pixels: n,
        n_joint_high: hh_n,
    })
}
