//! NOAA/NWS Heat Index: the Steadman-consistent simple formula, the full
//! Rothfusz regression with both humidity-range adjustments, and seasonal
//! (MAM) aggregation of HI grids.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{Grid, GridError};

#[derive(Debug, Error)]
pub enum HiError {
    #[error("relative humidity {0} outside [0, 100]")]
    HumidityOutOfRange(f64),
    #[error("relative humidity {value} outside [0, 100] at pixel {index}")]
    HumidityOutOfRangeAt { index: usize, value: f64 },
    #[error("temperature and humidity grids have different headers")]
    HeaderMismatch,
    #[error("seasonal aggregation needs at least one input field")]
    NoFields,
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// One near-surface temperature/humidity observation.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MeteoSample {
    pub t_celsius: f64,
    pub rh_percent: f64,
}

/// Every intermediate of the Heat Index computation, kept for debugging and
/// the scalar CLI mode.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct HiBreakdown {
    pub hi_simple_f: f64,
    pub hi_test_f: f64,
    pub used_full_regression: bool,
    /// Signed humidity-range adjustment actually applied (°F); negative for
    /// the low-humidity subtraction, positive for the high-humidity addition.
    pub adjustment_f: f64,
    pub hi_f: f64,
    pub hi_c: f64,
}

impl HiBreakdown {
    /// False when a NaN input propagated through.
    pub fn is_valid(&self) -> bool {
        !self.hi_f.is_nan()
    }

    fn nan() -> Self {
        HiBreakdown {
            hi_simple_f: f64::NAN,
            hi_test_f: f64::NAN,
            used_full_regression: false,
            adjustment_f: f64::NAN,
            hi_f: f64::NAN,
            hi_c: f64::NAN,
        }
    }
}

pub fn celsius_to_fahrenheit(t_c: f64) -> f64 {
    1.8 * t_c + 32.0
}

pub fn fahrenheit_to_celsius(t_f: f64) -> f64 {
    (t_f - 32.0) / 1.8
}

/// Heat Index from temperature (°F) and relative humidity (%).
///
/// The simple formula is screened against 80 °F; at or above that, the full
/// nine-coefficient Rothfusz regression applies, minus the low-humidity
/// adjustment when RH < 13 and 80 <= T_F <= 112, plus the high-humidity
/// adjustment when RH > 85 and 80 <= T_F <= 87. NaN inputs yield a NaN
/// breakdown flagged invalid.
pub fn heat_index_f(t_f: f64, rh: f64) -> Result<HiBreakdown, HiError> {
    if t_f.is_nan() || rh.is_nan() {
        return Ok(HiBreakdown::nan());
    }
    if !(0.0..=100.0).contains(&rh) {
        return Err(HiError::HumidityOutOfRange(rh));
    }

    let hi_simple = 0.5 * (t_f + 61.0 + 1.2 * (t_f - 68.0) + 0.094 * rh);
    let hi_test = (hi_simple + t_f) / 2.0;

    if hi_test < 80.0 {
        return Ok(HiBreakdown {
            hi_simple_f: hi_simple,
            hi_test_f: hi_test,
            used_full_regression: false,
            adjustment_f: 0.0,
            hi_f: hi_simple,
            hi_c: fahrenheit_to_celsius(hi_simple),
        });
    }

    let hi_reg = rothfusz_regression(t_f, rh);
    let mut adjustment = 0.0;
    if rh < 13.0 && (80.0..=112.0).contains(&t_f) {
        adjustment = -((13.0 - rh) / 4.0) * ((17.0 - (t_f - 95.0).abs()) / 17.0).sqrt();
    } else if rh > 85.0 && (80.0..=87.0).contains(&t_f) {
        adjustment = ((rh - 85.0) / 10.0) * ((87.0 - t_f) / 5.0);
    }
    let hi = hi_reg + adjustment;

    Ok(HiBreakdown {
        hi_simple_f: hi_simple,
        hi_test_f: hi_test,
        used_full_regression: true,
        adjustment_f: adjustment,
        hi_f: hi,
        hi_c: fahrenheit_to_celsius(hi),
    })
}

fn rothfusz_regression(t: f64, r: f64) -> f64 {
    -42.379 + 2.04901523 * t + 10.14333127 * r
        - 0.22475541 * t * r
        - 0.00683783 * t * t
        - 0.05481717 * r * r
        + 0.00122874 * t * t * r
        + 0.00085282 * t * r * r
        - 0.00000199 * t * t * r * r
}

/// Heat Index from a Celsius sample.
pub fn heat_index_c(sample: MeteoSample) -> Result<HiBreakdown, HiError> {
    heat_index_f(celsius_to_fahrenheit(sample.t_celsius), sample.rh_percent)
}

/// Per-pixel Heat Index from aligned temperature (°C) and humidity (%) grids,
/// reported in °C. A pixel is valid only where both inputs are valid.
pub fn heat_index_grid(t_grid: &Grid, rh_grid: &Grid) -> Result<Grid, HiError> {
    if !t_grid.header.bit_identical(&rh_grid.header) {
        return Err(HiError::HeaderMismatch);
    }
    let mut values = Vec::with_capacity(t_grid.values().len());
    for (i, (t, rh)) in t_grid.values().iter().zip(rh_grid.values()).enumerate() {
        if t.is_nan() || rh.is_nan() {
            values.push(f64::NAN);
            continue;
        }
        let bd = heat_index_c(MeteoSample {
            t_celsius: *t,
            rh_percent: *rh,
        })
        .map_err(|e| match e {
            HiError::HumidityOutOfRange(value) => HiError::HumidityOutOfRangeAt { index: i, value },
            other => other,
        })?;
        values.push(bd.hi_c);
    }
    Ok(Grid::new(t_grid.header, values, "degC")?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MamMonth {
    Mar,
    Apr,
    May,
}

impl MamMonth {
    pub fn parse(tag: &str) -> Option<MamMonth> {
        match tag.to_ascii_lowercase().as_str() {
            "mar" | "march" | "3" | "03" => Some(MamMonth::Mar),
            "apr" | "april" | "4" | "04" => Some(MamMonth::Apr),
            "may" | "5" | "05" => Some(MamMonth::May),
            _ => None,
        }
    }
}

/// An HI field tagged with its month and an opaque pre-converted timestamp.
#[derive(Debug, Clone)]
pub struct MonthlyHiField {
    pub month: MamMonth,
    pub timestamp: String,
    pub grid: Grid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SeasonalMode {
    /// Per-pixel monthly means, then the mean of the available monthly means.
    Mean,
    /// Per-pixel maximum over all records.
    Max,
}

/// Seasonal (MAM) aggregation of time-ordered HI fields.
///
/// Means are taken over existing records without temporal gap filling: a
/// pixel is valid if at least one month has a valid record there.
pub fn seasonal_mam_aggregate(
    fields: &[MonthlyHiField],
    mode: SeasonalMode,
) -> Result<Grid, HiError> {
    let Some(first) = fields.first() else {
        return Err(HiError::NoFields);
    };
    let header = first.grid.header;
    for f in fields {
        if !f.grid.header.bit_identical(&header) {
            return Err(HiError::HeaderMismatch);
        }
    }
    let n = header.n_cells();

    let values: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| match mode {
            SeasonalMode::Mean => {
                let mut month_sum = [0.0f64; 3];
                let mut month_count = [0usize; 3];
                for f in fields {
                    let v = f.grid.values()[i];
                    if !v.is_nan() {
                        let m = f.month as usize;
                        month_sum[m] += v;
                        month_count[m] += 1;
                    }
                }
                let mut season_sum = 0.0;
                let mut months = 0usize;
                for m in 0..3 {
                    if month_count[m] > 0 {
                        season_sum += month_sum[m] / month_count[m] as f64;
                        months += 1;
                    }
                }
                if months == 0 {
                    f64::NAN
                } else {
                    season_sum / months as f64
                }
            }
            SeasonalMode::Max => {
                let mut best = f64::NAN;
                for f in fields {
                    let v = f.grid.values()[i];
                    if !v.is_nan() && !(v <= best) {
                        best = v;
                    }
                }
                best
            }
        })
        .collect();

    Ok(Grid::new(header, values, "degC")?)
}
