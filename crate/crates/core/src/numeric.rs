//! Small shared numeric helpers.

/// Linear-interpolation empirical quantile (R type 7) of a sorted slice.
pub fn quantile_sorted(sorted: &[f64], tau: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    debug_assert!((0.0..=1.0).contains(&tau));
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = (n - 1) as f64 * tau;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        let frac = pos - lo as f64;
        sorted[lo] + frac * (sorted[hi] - sorted[lo])
    }
}

/// Quantile of an unsorted slice (copies and sorts).
pub fn quantile(values: &[f64], tau: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_unstable_by(|a, b| a.total_cmp(b));
    quantile_sorted(&v, tau)
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Population standard deviation.
pub fn pop_std(values: &[f64]) -> f64 {
    let m = mean(values);
    (values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / values.len() as f64).sqrt()
}
