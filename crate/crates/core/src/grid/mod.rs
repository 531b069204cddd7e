//! Raster data model shared by the whole pipeline: georeferenced grids with
//! nodata masks, alignment into feature stacks, resampling, and per-season
//! z-score normalization.
//!
//! Conventions used everywhere: plate carrée lat/lon grids, coordinates refer
//! to cell centers, row 0 is the northernmost row, and invalid cells read as
//! NaN.

mod io;
mod resample;

pub use io::{load_categorical, load_grid, save_categorical, save_grid, sidecar_path};
pub use resample::{resample_bilinear, resample_nearest};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Errors produced by grid construction, alignment, resampling, and I/O.
#[derive(Debug, Error)]
pub enum GridError {
    #[error("invalid header: {0}")]
    InvalidHeader(String),
    #[error("value/mask length {actual} does not match rows*cols = {expected}")]
    SizeMismatch { expected: usize, actual: usize },
    #[error("valid cell at index {index} holds non-finite value {value}")]
    NonFinite { index: usize, value: f64 },
    #[error("source and target footprints are disjoint")]
    DisjointFootprints,
    #[error("zero variance: grid has fewer than 2 distinct valid values")]
    ZeroVariance,
    #[error("layer `{layer}` header does not match the first layer")]
    HeaderMismatch { layer: String },
    #[error("cannot build a stack from zero layers")]
    EmptyStack,
    #[error("stack has no layer named `{0}`")]
    MissingLayer(String),
    #[error("code {code} is neither in the legend nor the nodata code")]
    UnknownCode { code: i16 },
    #[error("payload is {actual} bytes, expected {expected}")]
    PayloadLength { expected: usize, actual: usize },
    #[error("sidecar mismatch for {path}: {reason}")]
    SidecarMismatch { path: String, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Georeference of a regular lat/lon raster. Bounds are outer cell edges.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridHeader {
    pub rows: usize,
    pub cols: usize,
    pub lat_min: f64,
    pub lat_max: f64,
    pub lon_min: f64,
    pub lon_max: f64,
    pub cell_size: f64,
    /// Invalid cells are stored as NaN in payloads (the only policy supported).
    pub nodata_is_nan: bool,
}

impl GridHeader {
    pub fn new(
        rows: usize,
        cols: usize,
        lat_min: f64,
        lon_min: f64,
        cell_size: f64,
    ) -> Result<Self, GridError> {
        let header = GridHeader {
            rows,
            cols,
            lat_min,
            lat_max: lat_min + rows as f64 * cell_size,
            lon_min,
            lon_max: lon_min + cols as f64 * cell_size,
            cell_size,
            nodata_is_nan: true,
        };
        header.validate()?;
        Ok(header)
    }

    pub fn validate(&self) -> Result<(), GridError> {
        if self.rows < 1 || self.cols < 1 {
            return Err(GridError::InvalidHeader(format!(
                "rows={} cols={} must be >= 1",
                self.rows, self.cols
            )));
        }
        if !(self.lat_max > self.lat_min) || !(self.lon_max > self.lon_min) {
            return Err(GridError::InvalidHeader(
                "lat_max/lon_max must exceed lat_min/lon_min".into(),
            ));
        }
        if !(self.cell_size > 0.0) || !self.cell_size.is_finite() {
            return Err(GridError::InvalidHeader(format!(
                "cell_size {} must be positive and finite",
                self.cell_size
            )));
        }
        let lat_span = self.lat_max - self.lat_min;
        let lon_span = self.lon_max - self.lon_min;
        let lat_expect = self.rows as f64 * self.cell_size;
        let lon_expect = self.cols as f64 * self.cell_size;
        if (lat_span - lat_expect).abs() > 1e-9 * lat_span.max(lat_expect) {
            return Err(GridError::InvalidHeader(format!(
                "lat span {lat_span} != rows*cell_size {lat_expect}"
            )));
        }
        if (lon_span - lon_expect).abs() > 1e-9 * lon_span.max(lon_expect) {
            return Err(GridError::InvalidHeader(format!(
                "lon span {lon_span} != cols*cell_size {lon_expect}"
            )));
        }
        Ok(())
    }

    pub fn n_cells(&self) -> usize {
        self.rows * self.cols
    }

    /// Latitude of the center of row `r` (row 0 is northernmost).
    pub fn row_lat(&self, r: usize) -> f64 {
        self.lat_max - (r as f64 + 0.5) * self.cell_size
    }

    /// Longitude of the center of column `c`.
    pub fn col_lon(&self, c: usize) -> f64 {
        self.lon_min + (c as f64 + 0.5) * self.cell_size
    }

    /// Row-major linear index of the cell containing (lat, lon), if inside
    /// the footprint.
    pub fn cell_containing(&self, lat: f64, lon: f64) -> Option<usize> {
        if !(self.lat_min..=self.lat_max).contains(&lat) || !(self.lon_min..=self.lon_max).contains(&lon)
        {
            return None;
        }
        let r = (((self.lat_max - lat) / self.cell_size).floor() as usize).min(self.rows - 1);
        let c = (((lon - self.lon_min) / self.cell_size).floor() as usize).min(self.cols - 1);
        Some(r * self.cols + c)
    }

    /// Bit-for-bit header equality, the alignment requirement for stacking.
    pub fn bit_identical(&self, other: &GridHeader) -> bool {
        self.rows == other.rows
            && self.cols == other.cols
            && self.lat_min.to_bits() == other.lat_min.to_bits()
            && self.lat_max.to_bits() == other.lat_max.to_bits()
            && self.lon_min.to_bits() == other.lon_min.to_bits()
            && self.lon_max.to_bits() == other.lon_max.to_bits()
            && self.cell_size.to_bits() == other.cell_size.to_bits()
            && self.nodata_is_nan == other.nodata_is_nan
    }

    fn footprints_overlap(&self, other: &GridHeader) -> bool {
        self.lat_min < other.lat_max
            && other.lat_min < self.lat_max
            && self.lon_min < other.lon_max
            && other.lon_min < self.lon_max
    }

    pub(crate) fn require_overlap(&self, other: &GridHeader) -> Result<(), GridError> {
        if self.footprints_overlap(other) {
            Ok(())
        } else {
            Err(GridError::DisjointFootprints)
        }
    }
}

/// One georeferenced variable: row-major values plus a validity mask.
/// Invalid cells always read as NaN; valid cells are always finite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub header: GridHeader,
    pub units: String,
    values: Vec<f64>,
    valid_mask: Vec<bool>,
}

impl Grid {
    /// Build a grid from raw values; NaN values become nodata.
    pub fn new(header: GridHeader, values: Vec<f64>, units: &str) -> Result<Self, GridError> {
        let mask = values.iter().map(|v| v.is_nan().eq(&false)).collect::<Vec<_>>();
        Self::with_mask(header, values, mask, units)
    }

    /// Build a grid with an explicit mask; masked-off cells are forced to NaN.
    pub fn with_mask(
        header: GridHeader,
        mut values: Vec<f64>,
        valid_mask: Vec<bool>,
        units: &str,
    ) -> Result<Self, GridError> {
        header.validate()?;
        let expected = header.n_cells();
        if values.len() != expected || valid_mask.len() != expected {
            return Err(GridError::SizeMismatch {
                expected,
                actual: if values.len() != expected {
                    values.len()
                } else {
                    valid_mask.len()
                },
            });
        }
        for (i, (v, ok)) in values.iter_mut().zip(&valid_mask).enumerate() {
            if *ok {
                if !v.is_finite() {
                    return Err(GridError::NonFinite { index: i, value: *v });
                }
            } else {
                *v = f64::NAN;
            }
        }
        Ok(Grid {
            header,
            units: units.to_string(),
            values,
            valid_mask,
        })
    }

    /// A grid filled with one value everywhere.
    pub fn constant(header: GridHeader, value: f64, units: &str) -> Result<Self, GridError> {
        let n = header.n_cells();
        Self::with_mask(header, vec![value; n], vec![true; n], units)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn valid_mask(&self) -> &[bool] {
        &self.valid_mask
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.header.cols + c]
    }

    pub fn is_valid(&self, r: usize, c: usize) -> bool {
        self.valid_mask[r * self.header.cols + c]
    }

    pub fn n_valid(&self) -> usize {
        self.valid_mask.iter().filter(|&&m| m).count()
    }

    /// Iterator over (linear index, value) of valid cells.
    pub fn valid_values(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.values
            .iter()
            .enumerate()
            .filter(|(i, _)| self.valid_mask[*i])
            .map(|(i, v)| (i, *v))
    }

    /// Apply `f` per valid cell, producing a grid with the same mask.
    pub fn map(&self, units: &str, f: impl Fn(f64) -> f64) -> Grid {
        let values = self
            .values
            .iter()
            .zip(&self.valid_mask)
            .map(|(v, ok)| if *ok { f(*v) } else { f64::NAN })
            .collect();
        Grid::with_mask(self.header, values, self.valid_mask.clone(), units)
            .expect("mapping a valid grid keeps it valid")
    }
}

/// Categorical raster (land cover, LCZ classes) with an integer legend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoricalGrid {
    pub header: GridHeader,
    pub nodata_code: i16,
    pub legend: BTreeMap<i16, String>,
    codes: Vec<i16>,
}

impl CategoricalGrid {
    pub fn new(
        header: GridHeader,
        codes: Vec<i16>,
        legend: BTreeMap<i16, String>,
        nodata_code: i16,
    ) -> Result<Self, GridError> {
        header.validate()?;
        if codes.len() != header.n_cells() {
            return Err(GridError::SizeMismatch {
                expected: header.n_cells(),
                actual: codes.len(),
            });
        }
        for &code in &codes {
            if code != nodata_code && !legend.contains_key(&code) {
                return Err(GridError::UnknownCode { code });
            }
        }
        Ok(CategoricalGrid {
            header,
            nodata_code,
            legend,
            codes,
        })
    }

    pub fn codes(&self) -> &[i16] {
        &self.codes
    }

    pub fn get(&self, r: usize, c: usize) -> i16 {
        self.codes[r * self.header.cols + c]
    }
}

/// Per-feature normalization parameters, keyed by year and season.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationRecord {
    pub feature: String,
    pub mean: f64,
    pub std: f64,
    pub year: i32,
    pub season: String,
}

/// Z-score a grid over its valid mask using the population standard
/// deviation, returning the normalized grid and the record needed to undo it.
pub fn zscore_normalize(
    grid: &Grid,
    feature: &str,
    year: i32,
    season: &str,
) -> Result<(Grid, NormalizationRecord), GridError> {
    let mut n = 0usize;
    let mut mean = 0.0;
    for (_, v) in grid.valid_values() {
        n += 1;
        mean += v;
    }
    if n < 2 {
        return Err(GridError::ZeroVariance);
    }
    mean /= n as f64;
    let mut var = 0.0;
    let mut distinct = false;
    let first = grid.valid_values().next().map(|(_, v)| v);
    for (_, v) in grid.valid_values() {
        var += (v - mean) * (v - mean);
        if Some(v) != first {
            distinct = true;
        }
    }
    if !distinct {
        return Err(GridError::ZeroVariance);
    }
    var /= n as f64;
    let std = var.sqrt();
    let record = NormalizationRecord {
        feature: feature.to_string(),
        mean,
        std,
        year,
        season: season.to_string(),
    };
    let normalized = grid.map(&format!("z({})", grid.units), |v| (v - mean) / std);
    Ok((normalized, record))
}

/// Invert [`zscore_normalize`] with the stored record.
pub fn denormalize(grid: &Grid, record: &NormalizationRecord) -> Grid {
    grid.map(&record.feature, |v| v * record.std + record.mean)
}

/// Aligned, named predictor rasters sharing one header and a joint mask.
#[derive(Debug, Clone)]
pub struct FeatureStack {
    header: GridHeader,
    names: Vec<String>,
    layers: Vec<Grid>,
    joint_valid_mask: Vec<bool>,
}

/// Canonical downscaling predictor names; stacks fed to the downscaler must
/// contain all of them.
pub const DOWNSCALING_LAYERS: [&str; 9] = [
    "LST", "WSA", "POP", "RAD", "DPT", "IMP", "DCOAST", "LAT", "LON",
];

/// Prefixes/names of the greening and urban-form predictors allowed in the
/// explanation stage.
pub const EXPLANATION_LAYERS: [&str; 4] = ["EVI", "LAI", "FPAR", "NTL"];

/// Prefix of the Local Climate Zone fractional-cover layers.
pub const LCZ_PREFIX: &str = "LCZ_";

/// Stack aligned grids; all headers must be bit-for-bit identical. The joint
/// valid mask is the AND of the member masks.
pub fn align_stack(layers: Vec<(String, Grid)>) -> Result<FeatureStack, GridError> {
    let Some((_, first)) = layers.first() else {
        return Err(GridError::EmptyStack);
    };
    let header = first.header;
    let mut joint = vec![true; header.n_cells()];
    for (name, grid) in &layers {
        if !grid.header.bit_identical(&header) {
            return Err(GridError::HeaderMismatch { layer: name.clone() });
        }
        for (j, ok) in joint.iter_mut().zip(grid.valid_mask()) {
            *j &= *ok;
        }
    }
    let (names, grids): (Vec<_>, Vec<_>) = layers.into_iter().unzip();
    Ok(FeatureStack {
        header,
        names,
        layers: grids,
        joint_valid_mask: joint,
    })
}

impl FeatureStack {
    pub fn header(&self) -> &GridHeader {
        &self.header
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn n_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn joint_valid_mask(&self) -> &[bool] {
        &self.joint_valid_mask
    }

    pub fn layer(&self, name: &str) -> Result<&Grid, GridError> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| &self.layers[i])
            .ok_or_else(|| GridError::MissingLayer(name.to_string()))
    }

    pub fn layers(&self) -> impl Iterator<Item = (&str, &Grid)> {
        self.names.iter().map(|n| n.as_str()).zip(&self.layers)
    }

    /// Feature values of one pixel in layer order. Caller must check the
    /// joint mask first; invalid pixels yield NaNs.
    pub fn pixel_features(&self, linear_index: usize, out: &mut Vec<f64>) {
        out.clear();
        out.extend(self.layers.iter().map(|g| g.values()[linear_index]));
    }

    /// Restrict to a subset of layers, in the given order.
    pub fn select(&self, names: &[String]) -> Result<FeatureStack, GridError> {
        let layers = names
            .iter()
            .map(|n| Ok((n.clone(), self.layer(n)?.clone())))
            .collect::<Result<Vec<_>, GridError>>()?;
        align_stack(layers)
    }
}
