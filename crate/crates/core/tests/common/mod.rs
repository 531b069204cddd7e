//! Independent oracles shared by the integration and acceptance suites.
//! These deliberately re-derive results from first principles and must stay
//! independent of the implementation paths they check.

#![allow(dead_code)]

use heatlens::shap::BackgroundSet;
use heatlens::tree::{ForestModel, Regressor};

/// Independent re-evaluation of the NOAA/NWS Heat Index chain, written with
/// explicit powers rather than the implementation's factored products.
pub fn hi_oracle_f(t: f64, rh: f64) -> f64 {
    let simple = 0.5 * (t + 61.0 + (t - 68.0) * 1.2 + rh * 0.094);
    let screening = 0.5 * (simple + t);
    if screening < 80.0 {
        return simple;
    }
    let t2 = t.powi(2);
    let r2 = rh.powi(2);
    let mut hi = -42.379;
    hi += 2.04901523 * t;
    hi += 10.14333127 * rh;
    hi += -0.22475541 * t * rh;
    hi += -0.00683783 * t2;
    hi += -0.05481717 * r2;
    hi += 0.00122874 * t2 * rh;
    hi += 0.00085282 * t * r2;
    hi += -0.00000199 * t2 * r2;
    if rh < 13.0 && t >= 80.0 && t <= 112.0 {
        hi -= (13.0 - rh) / 4.0 * ((17.0 - (t - 95.0).abs()) / 17.0).sqrt();
    }
    if rh > 85.0 && t >= 80.0 && t <= 87.0 {
        hi += (rh - 85.0) / 10.0 * ((87.0 - t) / 5.0);
    }
    hi
}

/// Exact Shapley values of the weighted-background interventional game by
/// full 2^d coalition enumeration.
pub fn brute_force_shap(
    model: &ForestModel,
    x: &[f64],
    background: &BackgroundSet,
) -> (Vec<f64>, f64) {
    let d = x.len();
    assert!(d <= 20, "brute force is exponential in d");
    let n_masks = 1usize << d;

    // Game value per coalition mask.
    let mut v = vec![0.0f64; n_masks];
    let mut row = vec![0.0f64; d];
    for (mask, value) in v.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (z, w) in background.centroids.iter().zip(&background.weights) {
            for j in 0..d {
                row[j] = if mask & (1 << j) != 0 { x[j] } else { z[j] };
            }
            acc += w * model.predict_row(&row);
        }
        *value = acc;
    }

    let mut fact = vec![1.0f64; d + 1];
    for i in 1..=d {
        fact[i] = fact[i - 1] * i as f64;
    }

    let mut phi = vec![0.0f64; d];
    for mask in 0..n_masks {
        let s = mask.count_ones() as usize;
        if s == d {
            continue; // full coalition: no player left to add
        }
        let weight = fact[s] * fact[d - s - 1] / fact[d];
        for (j, p) in phi.iter_mut().enumerate() {
            if mask & (1 << j) == 0 {
                *p += weight * (v[mask | (1 << j)] - v[mask]);
            }
        }
    }
    (phi, v[0])
}

/// Exhaustive ECDF-gap evaluation of the two-sample KS statistic.
pub fn ks_oracle(a: &[f64], b: &[f64]) -> f64 {
    let ecdf = |s: &[f64], v: f64| s.iter().filter(|&&x| x <= v).count() as f64 / s.len() as f64;
    let mut d = 0.0f64;
    for &v in a.iter().chain(b) {
        d = d.max((ecdf(a, v) - ecdf(b, v)).abs());
    }
    d
}
