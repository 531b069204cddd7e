//! Distributional and trend statistics: two-sample Kolmogorov–Smirnov with
//! significance tiers, OLS linear trends with t-test p-values, standardized
//! SHAP effect sizes, and the (city, year) block bootstrap.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::downscale::EvalReport;
use crate::numeric::{mean, quantile};
use crate::shap::ShapMatrix;

#[derive(Debug, Error)]
pub enum StatsError {
    #[error("sample is empty")]
    EmptySample,
    #[error("need at least {needed} points, got {actual}")]
    TooFewPoints { needed: usize, actual: usize },
    #[error("years are all equal; trend is undefined")]
    DegenerateYears,
    #[error("standard deviation of the response is zero")]
    ZeroResponseSd,
    #[error("RMSE is zero; relative effect size undefined")]
    ZeroRmse,
    #[error("block bootstrap needs at least 2 distinct blocks, got {0}")]
    TooFewBlocks(usize),
}

/// Significance stars: p < 0.10 (*), p < 0.05 (**), p < 0.01 (***).
pub fn significance_stars(p: f64) -> &'static str {
    if p < 0.01 {
        "***"
    } else if p < 0.05 {
        "**"
    } else if p < 0.10 {
        "*"
    } else {
        ""
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KsResult {
    pub d_statistic: f64,
    pub p_value: f64,
    pub n1: usize,
    pub n2: usize,
    pub stars: String,
}

/// Two-sample KS test: D by a merged-sort sweep over both empirical CDFs,
/// p-value from the asymptotic Kolmogorov distribution with effective
/// n = n1*n2/(n1+n2).
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<KsResult, StatsError> {
    if a.is_empty() || b.is_empty() {
        return Err(StatsError::EmptySample);
    }
    let mut xs = a.to_vec();
    let mut ys = b.to_vec();
    xs.sort_unstable_by(|p, q| p.total_cmp(q));
    ys.sort_unstable_by(|p, q| p.total_cmp(q));

    let (n1, n2) = (xs.len(), ys.len());
    let mut i = 0usize;
    let mut j = 0usize;
    let mut d = 0.0f64;
    while i < n1 || j < n2 {
        let v = match (xs.get(i), ys.get(j)) {
            (Some(x), Some(y)) => x.min(*y),
            (Some(x), None) => *x,
            (None, Some(y)) => *y,
            (None, None) => break,
        };
        while i < n1 && xs[i] <= v {
            i += 1;
        }
        while j < n2 && ys[j] <= v {
            j += 1;
        }
        let gap = (i as f64 / n1 as f64 - j as f64 / n2 as f64).abs();
        d = d.max(gap);
    }

    let n_eff = (n1 * n2) as f64 / (n1 + n2) as f64;
    let p_value = kolmogorov_sf(n_eff.sqrt() * d);
    Ok(KsResult {
        d_statistic: d,
        p_value,
        n1,
        n2,
        stars: significance_stars(p_value).to_string(),
    })
}

/// Survival function of the Kolmogorov distribution, Q(t) = P(K > t).
/// Evaluated with the two classical series (each capped at 100 terms): the
/// alternating exponential form for large t and its Jacobi-theta dual for
/// small t, where the alternating form converges too slowly.
pub fn kolmogorov_sf(t: f64) -> f64 {
    if t <= 0.0 {
        return 1.0;
    }
    if t < 1.0 {
        let factor = std::f64::consts::PI.sqrt() * (2.0f64).sqrt() / t * 0.5;
        // sqrt(2*pi)/(2t) * sum over odd k of exp(-(2k-1)^2 pi^2 / (8 t^2))
        let mut cdf = 0.0;
        for k in 1..=100 {
            let m = (2 * k - 1) as f64;
            let term = (-m * m * std::f64::consts::PI * std::f64::consts::PI / (8.0 * t * t)).exp();
            cdf += term;
            if term < 1e-18 {
                break;
            }
        }
        (1.0 - factor * 2.0 * cdf).clamp(0.0, 1.0)
    } else {
        let mut q = 0.0;
        for k in 1..=100 {
            let kf = k as f64;
            let term = (-2.0 * kf * kf * t * t).exp();
            let signed = if k % 2 == 1 { term } else { -term };
            q += signed;
            if term < 1e-18 {
                break;
            }
        }
        (2.0 * q).clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrendResult {
    /// °C per year.
    pub slope: f64,
    pub intercept: f64,
    pub p_value: f64,
    pub significant_05: bool,
    pub n: usize,
}

/// OLS linear trend with a two-sided t-test on the slope (n - 2 degrees of
/// freedom). A perfect fit with nonzero slope yields p = 0; a perfectly flat
/// series yields slope 0, p = 1.
pub fn linear_trend(years: &[i32], values: &[f64]) -> Result<TrendResult, StatsError> {
    if years.len() != values.len() || years.len() < 3 {
        return Err(StatsError::TooFewPoints {
            needed: 3,
            actual: years.len().min(values.len()),
        });
    }
    let n = years.len();
    let xs: Vec<f64> = years.iter().map(|&y| y as f64).collect();
    let x_mean = mean(&xs);
    let y_mean = mean(values);
    let sxx: f64 = xs.iter().map(|x| (x - x_mean) * (x - x_mean)).sum();
    if sxx == 0.0 {
        return Err(StatsError::DegenerateYears);
    }
    let sxy: f64 = xs
        .iter()
        .zip(values)
        .map(|(x, y)| (x - x_mean) * (y - y_mean))
        .sum();
    let slope = sxy / sxx;
    let intercept = y_mean - slope * x_mean;

    let ss_res: f64 = xs
        .iter()
        .zip(values)
        .map(|(x, y)| {
            let fit = intercept + slope * x;
            (y - fit) * (y - fit)
        })
        .sum();
    let dof = (n - 2) as f64;
    let se = (ss_res / dof / sxx).sqrt();

    let p_value = if se == 0.0 {
        if slope == 0.0 {
            1.0
        } else {
            0.0
        }
    } else {
        let t = slope / se;
        2.0 * student_t_sf(t.abs(), dof)
    };

    Ok(TrendResult {
        slope,
        intercept,
        p_value,
        significant_05: p_value < 0.05,
        n,
    })
}

/// Survival function of Student's t with `dof` degrees of freedom, via the
/// regularized incomplete beta function.
fn student_t_sf(t: f64, dof: f64) -> f64 {
    let x = dof / (dof + t * t);
    0.5 * incomplete_beta_reg(0.5 * dof, 0.5, x)
}

/// Regularized incomplete beta I_x(a, b) by Lentz's continued fraction.
fn incomplete_beta_reg(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = a * x.ln() + b * (1.0 - x).ln() - ln_beta(a, b);
    if x < (a + 1.0) / (a + b + 2.0) {
        (ln_front.exp() * beta_cf(a, b, x)) / a
    } else {
        1.0 - (((b * (1.0 - x).ln() + a * x.ln() - ln_beta(a, b)).exp()) * beta_cf(b, a, 1.0 - x))
            / b
    }
}

fn ln_beta(a: f64, b: f64) -> f64 {
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

/// Lanczos approximation of ln Γ.
#[allow(clippy::excessive_precision)]
fn ln_gamma(x: f64) -> f64 {
    const COEFFS: [f64; 8] = [
        676.5203681218851,
        -1259.1392167224028,
        771.32342877765313,
        -176.61502916214059,
        12.507343278686905,
        -0.13857109526572012,
        9.9843695780195716e-6,
        1.5056327351493116e-7,
    ];
    if x < 0.5 {
        let pi = std::f64::consts::PI;
        (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x)
    } else {
        let x = x - 1.0;
        let mut acc = 0.99999999999980993;
        for (i, c) in COEFFS.iter().enumerate() {
            acc += c / (x + i as f64 + 1.0);
        }
        let t = x + 7.5;
        0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
    }
}

fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    let tiny = 1e-300;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < tiny {
        d = tiny;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..300 {
        let mf = m as f64;
        let m2 = 2.0 * mf;
        let aa = mf * (b - mf) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < tiny {
            d = tiny;
        }
        c = 1.0 + aa / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + mf) * (qab + mf) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < tiny {
            d = tiny;
        }
        c = 1.0 + aa / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < 1e-14 {
            break;
        }
    }
    h
}

/// A feature's effect magnitude scaled by response variability and by
/// predictive error; the numerator is the feature's mean absolute SHAP.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EffectSizes {
    pub feature: String,
    pub r_sd: f64,
    pub r_rmse: f64,
}

pub fn effect_sizes(
    shap: &ShapMatrix,
    hi_values: &[f64],
    eval_report: &EvalReport,
) -> Result<Vec<EffectSizes>, StatsError> {
    if shap.n_pixels() == 0 || hi_values.is_empty() {
        return Err(StatsError::EmptySample);
    }
    let sd = crate::numeric::pop_std(hi_values);
    if sd == 0.0 {
        return Err(StatsError::ZeroResponseSd);
    }
    if !(eval_report.rmse > 0.0) {
        return Err(StatsError::ZeroRmse);
    }
    let n = shap.n_pixels() as f64;
    Ok(shap
        .feature_names
        .iter()
        .enumerate()
        .map(|(j, name)| {
            let mean_abs = shap.phi_column(j).iter().map(|v| v.abs()).sum::<f64>() / n;
            EffectSizes {
                feature: name.clone(),
                r_sd: mean_abs / sd,
                r_rmse: mean_abs / eval_report.rmse,
            }
        })
        .collect())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BootstrapResult {
    pub n_replicates: usize,
    pub n_blocks: usize,
    pub point_estimate: f64,
    pub lo_2_5: f64,
    pub hi_97_5: f64,
    pub replicates: Vec<f64>,
}

/// Block bootstrap: resample whole blocks (e.g. (city, year) groups) with
/// replacement, recompute the summary per replicate, and report the 2.5/97.5
/// percentile interval. Deterministic in the seed, with per-replicate derived
/// seeds so replicates are order-independent.
pub fn block_bootstrap<T, K, S>(
    records: &[T],
    block_key: impl Fn(&T) -> K,
    summary: S,
    n_replicates: usize,
    seed: u64,
) -> Result<BootstrapResult, StatsError>
where
    K: Ord,
    S: Fn(&[&T]) -> f64,
{
    if records.is_empty() {
        return Err(StatsError::EmptySample);
    }
    let mut blocks: std::collections::BTreeMap<K, Vec<&T>> = std::collections::BTreeMap::new();
    for r in records {
        blocks.entry(block_key(r)).or_default().push(r);
    }
    let blocks: Vec<Vec<&T>> = blocks.into_values().collect();
    if blocks.len() < 2 {
        return Err(StatsError::TooFewBlocks(blocks.len()));
    }

    let all: Vec<&T> = records.iter().collect();
    let point_estimate = summary(&all);

    let mut seeder = ChaCha8Rng::seed_from_u64(seed);
    let replicate_seeds: Vec<u64> = (0..n_replicates).map(|_| seeder.random()).collect();

    let replicates: Vec<f64> = replicate_seeds
        .iter()
        .map(|&s| {
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            let mut sample: Vec<&T> = Vec::with_capacity(records.len());
            for _ in 0..blocks.len() {
                let b = rng.random_range(0..blocks.len());
                sample.extend_from_slice(&blocks[b]);
            }
            summary(&sample)
        })
        .collect();

    Ok(BootstrapResult {
        n_replicates,
        n_blocks: blocks.len(),
        point_estimate,
        lo_2_5: quantile(&replicates, 0.025),
        hi_97_5: quantile(&replicates, 0.975),
        replicates,
    })
}
