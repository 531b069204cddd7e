//! Accumulated Local Effects in one and two dimensions, zero-crossing
//! isolines, the Friedman–Popescu H² interaction statistic, and the
//! stability-based strongest-pair selection rule.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numeric::{mean, pop_std, quantile_sorted};
use crate::tree::{DataMatrix, Regressor, TreeError};

#[derive(Debug, Error)]
pub enum AleError {
    #[error("data table is empty")]
    EmptyData,
    #[error("table has no feature named `{0}`")]
    MissingFeature(String),
    #[error("feature `{0}` is constant")]
    ConstantFeature(String),
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("no interaction scores supplied")]
    NoScores,
    #[error(transparent)]
    Tree(#[from] TreeError),
}

/// Centered 1-D effect curve over quantile bins; `effects` holds one value
/// per bin edge, `counts` one per bin.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AleCurve {
    pub feature: String,
    pub bin_edges: Vec<f64>,
    pub effects: Vec<f64>,
    pub counts: Vec<usize>,
}

/// Centered 2-D effect surface; `effects` holds corner values on the
/// (edges_x, edges_y) lattice, `counts` per-cell sample counts (zero marks an
/// imputed cell).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AleSurface {
    pub pair: (String, String),
    pub edges_x: Vec<f64>,
    pub edges_y: Vec<f64>,
    pub effects: Vec<Vec<f64>>,
    pub counts: Vec<Vec<usize>>,
    pub imputed_cells: Vec<(usize, usize)>,
}

/// Quantile bin edges, duplicates merged.
fn quantile_edges(values: &[f64], n_bins: usize) -> Vec<f64> {
    let mut sorted = values.to_vec();
    sorted.sort_unstable_by(|a, b| a.total_cmp(b));
    let mut edges: Vec<f64> = (0..=n_bins)
        .map(|i| quantile_sorted(&sorted, i as f64 / n_bins as f64))
        .collect();
    edges.dedup();
    edges
}

/// Bin of `v` given edges: bin k covers (e_k, e_{k+1}], with the first bin
/// closed below.
fn bin_of(v: f64, edges: &[f64]) -> usize {
    let k = edges[1..edges.len() - 1].partition_point(|e| *e < v);
    k.min(edges.len() - 2)
}

pub fn ale_1d<M: Regressor + ?Sized>(
    model: &M,
    data: &DataMatrix,
    feature: &str,
    n_bins: usize,
) -> Result<AleCurve, AleError> {
    if data.n_rows() == 0 {
        return Err(AleError::EmptyData);
    }
    if n_bins == 0 {
        return Err(AleError::InvalidParam("n_bins must be >= 1".into()));
    }
    let j = data
        .names()
        .iter()
        .position(|n| n == feature)
        .ok_or_else(|| AleError::MissingFeature(feature.to_string()))?;
    let col = data.column(j);

    let edges = quantile_edges(col, n_bins);
    if edges.len() < 2 {
        // Constant feature: single-bin zero curve.
        return Ok(AleCurve {
            feature: feature.to_string(),
            bin_edges: vec![edges[0], edges[0]],
            effects: vec![0.0, 0.0],
            counts: vec![data.n_rows()],
        });
    }
    let n_bins = edges.len() - 1;

    let mut counts = vec![0usize; n_bins];
    let mut bins = Vec::with_capacity(data.n_rows());
    for &v in col {
        let b = bin_of(v, &edges);
        counts[b] += 1;
        bins.push(b);
    }

    // Per-sample upper/lower edge differences, accumulated per bin.
    let diffs: Vec<(usize, f64)> = (0..data.n_rows())
        .into_par_iter()
        .map(|i| {
            let b = bins[i];
            let mut row = data.row_vec(i);
            row[j] = edges[b + 1];
            let hi = model.predict_row(&row);
            row[j] = edges[b];
            let lo = model.predict_row(&row);
            (b, hi - lo)
        })
        .collect();
    let mut local = vec![0.0; n_bins];
    for (b, d) in diffs {
        local[b] += d;
    }
    for (l, &c) in local.iter_mut().zip(&counts) {
        if c > 0 {
            *l /= c as f64;
        }
    }

    let mut effects = vec![0.0; n_bins + 1];
    for k in 0..n_bins {
        effects[k + 1] = effects[k] + local[k];
    }

    // Center on the count-weighted mean of bin-midpoint effects.
    let total: usize = counts.iter().sum();
    let center: f64 = counts
        .iter()
        .enumerate()
        .map(|(k, &c)| c as f64 * 0.5 * (effects[k] + effects[k + 1]))
        .sum::<f64>()
        / total as f64;
    for e in &mut effects {
        *e -= center;
    }

    Ok(AleCurve {
        feature: feature.to_string(),
        bin_edges: edges,
        effects,
        counts,
    })
}

pub fn ale_2d<M: Regressor + ?Sized>(
    model: &M,
    data: &DataMatrix,
    pair: (&str, &str),
    n_bins: usize,
) -> Result<AleSurface, AleError> {
    if data.n_rows() == 0 {
        return Err(AleError::EmptyData);
    }
    if n_bins == 0 {
        return Err(AleError::InvalidParam("n_bins must be >= 1".into()));
    }
    let jx = data
        .names()
        .iter()
        .position(|n| n == pair.0)
        .ok_or_else(|| AleError::MissingFeature(pair.0.to_string()))?;
    let jy = data
        .names()
        .iter()
        .position(|n| n == pair.1)
        .ok_or_else(|| AleError::MissingFeature(pair.1.to_string()))?;

    let edges_x = quantile_edges(data.column(jx), n_bins);
    let edges_y = quantile_edges(data.column(jy), n_bins);
    if edges_x.len() < 2 {
        return Err(AleError::ConstantFeature(pair.0.to_string()));
    }
    if edges_y.len() < 2 {
        return Err(AleError::ConstantFeature(pair.1.to_string()));
    }
    let kx = edges_x.len() - 1;
    let ky = edges_y.len() - 1;

    let mut counts = vec![vec![0usize; ky]; kx];
    let mut cells = Vec::with_capacity(data.n_rows());
    for i in 0..data.n_rows() {
        let bx = bin_of(data.column(jx)[i], &edges_x);
        let by = bin_of(data.column(jy)[i], &edges_y);
        counts[bx][by] += 1;
        cells.push((bx, by));
    }

    // Mean second difference per cell.
    let diffs: Vec<((usize, usize), f64)> = (0..data.n_rows())
        .into_par_iter()
        .map(|i| {
            let (bx, by) = cells[i];
            let mut row = data.row_vec(i);
            let eval = |x: f64, y: f64, row: &mut Vec<f64>| {
                row[jx] = x;
                row[jy] = y;
                model.predict_row(row)
            };
            let d = eval(edges_x[bx + 1], edges_y[by + 1], &mut row)
                - eval(edges_x[bx + 1], edges_y[by], &mut row)
                - eval(edges_x[bx], edges_y[by + 1], &mut row)
                + eval(edges_x[bx], edges_y[by], &mut row);
            ((bx, by), d)
        })
        .collect();
    let mut second = vec![vec![0.0; ky]; kx];
    for ((bx, by), d) in diffs {
        second[bx][by] += d;
    }
    for (row, crow) in second.iter_mut().zip(&counts) {
        for (v, &c) in row.iter_mut().zip(crow) {
            if c > 0 {
                *v /= c as f64;
            }
        }
    }

    // Impute empty cells from the nearest populated cell.
    let mut imputed_cells = Vec::new();
    for j in 0..kx {
        for k in 0..ky {
            if counts[j][k] == 0 {
                if let Some((sj, sk)) = nearest_populated(&counts, j, k) {
                    second[j][k] = second[sj][sk];
                }
                imputed_cells.push((j, k));
            }
        }
    }

    // Double cumulative sum onto corners.
    let mut h = vec![vec![0.0; ky + 1]; kx + 1];
    for a in 1..=kx {
        for b in 1..=ky {
            h[a][b] = second[a - 1][b - 1] + h[a - 1][b] + h[a][b - 1] - h[a - 1][b - 1];
        }
    }

    // Fractional sample positions inside their cells, for interpolated strip
    // means during first-order removal.
    let fracs: Vec<(f64, f64)> = (0..data.n_rows())
        .map(|i| {
            let (bx, by) = cells[i];
            let tx = frac_in(data.column(jx)[i], edges_x[bx], edges_x[bx + 1]);
            let ty = frac_in(data.column(jy)[i], edges_y[by], edges_y[by + 1]);
            (tx, ty)
        })
        .collect();

    // Remove accumulated first-order effects: after this, the count-weighted
    // mean step across every strip is exactly zero on both axes (no residual
    // first-order content). Then center on the count-weighted global mean.
    remove_first_order(&mut h, &counts, &cells, &fracs);
    let total: usize = counts.iter().flatten().sum();
    let mut global = 0.0;
    for j in 0..kx {
        for k in 0..ky {
            global += counts[j][k] as f64 * midpoint(&h, j, k);
        }
    }
    global /= total as f64;
    for row in &mut h {
        for v in row.iter_mut() {
            *v -= global;
        }
    }

    Ok(AleSurface {
        pair: (pair.0.to_string(), pair.1.to_string()),
        edges_x,
        edges_y,
        effects: h,
        counts,
        imputed_cells,
    })
}

fn nearest_populated(counts: &[Vec<usize>], j: usize, k: usize) -> Option<(usize, usize)> {
    let mut best: Option<(usize, (usize, usize))> = None;
    for (cj, row) in counts.iter().enumerate() {
        for (ck, &c) in row.iter().enumerate() {
            if c > 0 {
                let dj = cj.abs_diff(j);
                let dk = ck.abs_diff(k);
                let d = dj * dj + dk * dk;
                if best.is_none_or(|(bd, _)| d < bd) {
                    best = Some((d, (cj, ck)));
                }
            }
        }
    }
    best.map(|(_, cell)| cell)
}

fn midpoint(h: &[Vec<f64>], j: usize, k: usize) -> f64 {
    0.25 * (h[j][k] + h[j + 1][k] + h[j][k + 1] + h[j + 1][k + 1])
}

fn frac_in(v: f64, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        ((v - lo) / (hi - lo)).clamp(0.0, 1.0)
    } else {
        0.5
    }
}

/// Removal of the accumulated per-axis first-order effects. Strip means are
/// taken over the samples of each strip with the surface interpolated at the
/// sample's actual position along the other axis, which avoids cell-midpoint
/// quantization bias.
fn remove_first_order(
    h: &mut [Vec<f64>],
    counts: &[Vec<usize>],
    cells: &[(usize, usize)],
    fracs: &[(f64, f64)],
) {
    let kx = counts.len();
    let ky = counts[0].len();

    let mut step_sum = vec![0.0; kx];
    let mut strip_n = vec![0usize; kx];
    for (&(bx, by), &(_, ty)) in cells.iter().zip(fracs) {
        let hi = h[bx + 1][by] * (1.0 - ty) + h[bx + 1][by + 1] * ty;
        let lo = h[bx][by] * (1.0 - ty) + h[bx][by + 1] * ty;
        step_sum[bx] += hi - lo;
        strip_n[bx] += 1;
    }
    let mut fj1 = vec![0.0; kx + 1];
    for j in 0..kx {
        let step = if strip_n[j] > 0 {
            step_sum[j] / strip_n[j] as f64
        } else {
            0.0
        };
        fj1[j + 1] = fj1[j] + step;
    }
    for a in 0..=kx {
        for b in 0..=ky {
            h[a][b] -= fj1[a];
        }
    }

    let mut step_sum = vec![0.0; ky];
    let mut strip_n = vec![0usize; ky];
    for (&(bx, by), &(tx, _)) in cells.iter().zip(fracs) {
        let hi = h[bx][by + 1] * (1.0 - tx) + h[bx + 1][by + 1] * tx;
        let lo = h[bx][by] * (1.0 - tx) + h[bx + 1][by] * tx;
        step_sum[by] += hi - lo;
        strip_n[by] += 1;
    }
    let mut fj2 = vec![0.0; ky + 1];
    for k in 0..ky {
        let step = if strip_n[k] > 0 {
            step_sum[k] / strip_n[k] as f64
        } else {
            0.0
        };
        fj2[k + 1] = fj2[k] + step;
    }
    for row in h.iter_mut() {
        for (b, v) in row.iter_mut().enumerate() {
            *v -= fj2[b];
        }
    }
}

/// A polyline in feature space.
pub type Polyline = Vec<(f64, f64)>;

/// Marching-squares contour of the surface at level zero, with linear
/// interpolation along lattice edges. A surface of uniform sign yields an
/// empty set.
pub fn zero_crossing_isolines(surface: &AleSurface) -> Vec<Polyline> {
    let nx = surface.edges_x.len();
    let ny = surface.edges_y.len();
    let val = |a: usize, b: usize| surface.effects[a][b];
    let pos = |v: f64| v > 0.0;

    let mut segments: Vec<((f64, f64), (f64, f64))> = Vec::new();
    let interp = |x0: f64, v0: f64, x1: f64, v1: f64| -> f64 {
        if (v1 - v0).abs() < f64::EPSILON {
            0.5 * (x0 + x1)
        } else {
            x0 + (0.0 - v0) / (v1 - v0) * (x1 - x0)
        }
    };

    for a in 0..nx.saturating_sub(1) {
        for b in 0..ny.saturating_sub(1) {
            let (x0, x1) = (surface.edges_x[a], surface.edges_x[a + 1]);
            let (y0, y1) = (surface.edges_y[b], surface.edges_y[b + 1]);
            let v00 = val(a, b);
            let v10 = val(a + 1, b);
            let v01 = val(a, b + 1);
            let v11 = val(a + 1, b + 1);
            let case = (pos(v00) as usize)
                | (pos(v10) as usize) << 1
                | (pos(v11) as usize) << 2
                | (pos(v01) as usize) << 3;
            if case == 0 || case == 15 {
                continue;
            }
            // Crossing points on the four cell edges.
            let bottom = (interp(x0, v00, x1, v10), y0);
            let top = (interp(x0, v01, x1, v11), y1);
            let left = (x0, interp(y0, v00, y1, v01));
            let right = (x1, interp(y0, v10, y1, v11));
            match case {
                1 | 14 => segments.push((left, bottom)),
                2 | 13 => segments.push((bottom, right)),
                3 | 12 => segments.push((left, right)),
                4 | 11 => segments.push((right, top)),
                6 | 9 => segments.push((bottom, top)),
                7 | 8 => segments.push((left, top)),
                5 | 10 => {
                    // Saddle: disambiguate with the cell-center value.
                    let center = 0.25 * (v00 + v10 + v01 + v11);
                    if (case == 5) == pos(center) {
                        segments.push((left, bottom));
                        segments.push((right, top));
                    } else {
                        segments.push((left, top));
                        segments.push((bottom, right));
                    }
                }
                _ => unreachable!(),
            }
        }
    }

    stitch_segments(segments)
}

fn stitch_segments(mut segments: Vec<((f64, f64), (f64, f64))>) -> Vec<Polyline> {
    let eps = 1e-9;
    let close = |a: (f64, f64), b: (f64, f64)| (a.0 - b.0).abs() < eps && (a.1 - b.1).abs() < eps;
    let mut polylines = Vec::new();
    while let Some((start, end)) = segments.pop() {
        let mut line = vec![start, end];
        loop {
            let head = *line.last().unwrap();
            let Some(i) = segments
                .iter()
                .position(|(a, b)| close(*a, head) || close(*b, head))
            else {
                break;
            };
            let (a, b) = segments.swap_remove(i);
            line.push(if close(a, head) { b } else { a });
        }
        loop {
            let tail = line[0];
            let Some(i) = segments
                .iter()
                .position(|(a, b)| close(*a, tail) || close(*b, tail))
            else {
                break;
            };
            let (a, b) = segments.swap_remove(i);
            line.insert(0, if close(a, tail) { b } else { a });
        }
        polylines.push(line);
    }
    polylines
}

/// Friedman–Popescu H² interaction strength of a feature pair, estimated from
/// centered partial-dependence functions over an evaluation subsample.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InteractionScore {
    pub pair: (String, String),
    /// Clamped into [0, 1].
    pub h2: f64,
    pub h2_raw: f64,
    pub year: i32,
    pub degenerate: bool,
}

pub fn h2_interaction<M: Regressor + ?Sized>(
    model: &M,
    data: &DataMatrix,
    pair: (&str, &str),
    eval_sample_size: usize,
    year: i32,
) -> Result<InteractionScore, AleError> {
    if data.n_rows() == 0 {
        return Err(AleError::EmptyData);
    }
    if eval_sample_size == 0 {
        return Err(AleError::InvalidParam("eval_sample_size must be >= 1".into()));
    }
    let jx = data
        .names()
        .iter()
        .position(|n| n == pair.0)
        .ok_or_else(|| AleError::MissingFeature(pair.0.to_string()))?;
    let jy = data
        .names()
        .iter()
        .position(|n| n == pair.1)
        .ok_or_else(|| AleError::MissingFeature(pair.1.to_string()))?;

    // Deterministic, evenly strided evaluation subsample.
    let n = data.n_rows();
    let m = eval_sample_size.min(n);
    let idx: Vec<usize> = (0..m).map(|i| i * n / m).collect();
    let rows: Vec<Vec<f64>> = idx.iter().map(|&i| data.row_vec(i)).collect();

    let pd = |set: &(dyn Fn(&mut Vec<f64>, &[f64]) + Sync)| -> Vec<f64> {
        let mut values: Vec<f64> = rows
            .par_iter()
            .map(|anchor| {
                let mut acc = 0.0;
                let mut row = Vec::new();
                for context in &rows {
                    row.clear();
                    row.extend_from_slice(context);
                    set(&mut row, anchor);
                    acc += model.predict_row(&row);
                }
                acc / m as f64
            })
            .collect();
        let mu = mean(&values);
        values.iter_mut().for_each(|v| *v -= mu);
        values
    };

    let pd_x = pd(&|row, anchor| row[jx] = anchor[jx]);
    let pd_y = pd(&|row, anchor| row[jy] = anchor[jy]);
    let pd_xy = pd(&|row, anchor| {
        row[jx] = anchor[jx];
        row[jy] = anchor[jy];
    });

    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..m {
        let d = pd_xy[i] - pd_x[i] - pd_y[i];
        num += d * d;
        den += pd_xy[i] * pd_xy[i];
    }

    let (h2_raw, degenerate) = if den < 1e-12 {
        (0.0, true)
    } else {
        (num / den, false)
    };
    Ok(InteractionScore {
        pair: (pair.0.to_string(), pair.1.to_string()),
        h2: h2_raw.clamp(0.0, 1.0),
        h2_raw,
        year,
        degenerate,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionRationale {
    /// Recent leader accepted: last-5-year mean within max(std, 0.02) of the
    /// long-run mean.
    StableRecent,
    /// Recent leader rejected as unstable; long-run leader returned.
    LongRunFallback,
    /// Fewer than 5 yearly scores; all-years leader returned.
    ShortSeries,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairSelection {
    pub selected: (String, String),
    pub rationale: SelectionRationale,
    pub candidate: (String, String),
    pub candidate_mean_recent: f64,
    pub candidate_mean_all: f64,
    pub candidate_std_all: f64,
    pub stability_threshold: f64,
}

/// Select the strongest interacting pair from yearly H² series: take the pair
/// with the highest last-5-year mean if that mean sits within one standard
/// deviation (or 0.02 at minimum) of its long-run mean, otherwise fall back
/// to the long-run leader.
pub fn select_strongest_pair(scores: &[InteractionScore]) -> Result<PairSelection, AleError> {
    if scores.is_empty() {
        return Err(AleError::NoScores);
    }
    let mut by_pair: std::collections::BTreeMap<(String, String), Vec<(i32, f64)>> =
        std::collections::BTreeMap::new();
    for s in scores {
        by_pair
            .entry(s.pair.clone())
            .or_default()
            .push((s.year, s.h2));
    }
    for series in by_pair.values_mut() {
        series.sort_by_key(|(y, _)| *y);
    }

    let stats: Vec<(&(String, String), f64, f64, Option<f64>)> = by_pair
        .iter()
        .map(|(pair, series)| {
            let values: Vec<f64> = series.iter().map(|(_, v)| *v).collect();
            let mean_all = mean(&values);
            let std_all = pop_std(&values);
            let mean_recent = (values.len() >= 5)
                .then(|| mean(&values[values.len() - 5..]));
            (pair, mean_all, std_all, mean_recent)
        })
        .collect();

    let long_run_leader = stats
        .iter()
        .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then_with(|| b.0.cmp(a.0)))
        .expect("non-empty");

    if stats.iter().any(|(_, _, _, recent)| recent.is_none()) {
        return Ok(PairSelection {
            selected: long_run_leader.0.clone(),
            rationale: SelectionRationale::ShortSeries,
            candidate: long_run_leader.0.clone(),
            candidate_mean_recent: f64::NAN,
            candidate_mean_all: long_run_leader.1,
            candidate_std_all: long_run_leader.2,
            stability_threshold: long_run_leader.2.max(0.02),
        });
    }

    let candidate = stats
        .iter()
        .max_by(|a, b| {
            a.3.unwrap()
                .partial_cmp(&b.3.unwrap())
                .unwrap()
                .then_with(|| b.0.cmp(a.0))
        })
        .expect("non-empty");
    let mean_recent = candidate.3.unwrap();
    let threshold = candidate.2.max(0.02);

    if (mean_recent - candidate.1).abs() <= threshold {
        Ok(PairSelection {
            selected: candidate.0.clone(),
            rationale: SelectionRationale::StableRecent,
            candidate: candidate.0.clone(),
            candidate_mean_recent: mean_recent,
            candidate_mean_all: candidate.1,
            candidate_std_all: candidate.2,
            stability_threshold: threshold,
        })
    } else {
        Ok(PairSelection {
            selected: long_run_leader.0.clone(),
            rationale: SelectionRationale::LongRunFallback,
            candidate: candidate.0.clone(),
            candidate_mean_recent: mean_recent,
            candidate_mean_all: candidate.1,
            candidate_std_all: candidate.2,
            stability_threshold: threshold,
        })
    }
}
