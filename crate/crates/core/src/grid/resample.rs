//! Resampling between grids: bilinear for continuous rasters, nearest
//! neighbour for categorical layers.

use rayon::prelude::*;

use super::{CategoricalGrid, Grid, GridError, GridHeader};

/// Bilinear interpolation of `src` onto the cells of `target`.
///
/// Target cell centers outside the source footprint become nodata. Inside the
/// footprint, coordinates are clamped to the source cell-center hull, so the
/// outer half-cell ring extends edge values. Any nodata source cell entering
/// the interpolation stencil with positive weight poisons the output cell; no
/// partial-weight renormalization is attempted.
pub fn resample_bilinear(src: &Grid, target: &GridHeader) -> Result<Grid, GridError> {
    src.header.validate()?;
    target.validate()?;
    src.header.require_overlap(target)?;

    let sh = src.header;
    let rows = target.rows;
    let cols = target.cols;

    let out_rows: Vec<Vec<f64>> = (0..rows)
        .into_par_iter()
        .map(|r| {
            let lat = target.row_lat(r);
            let mut row = Vec::with_capacity(cols);
            for c in 0..cols {
                let lon = target.col_lon(c);
                row.push(sample_bilinear(src, &sh, lat, lon));
            }
            row
        })
        .collect();

    let values: Vec<f64> = out_rows.into_iter().flatten().collect();
    Grid::new(*target, values, &src.units)
}

fn sample_bilinear(src: &Grid, sh: &GridHeader, lat: f64, lon: f64) -> f64 {
    if lat < sh.lat_min || lat > sh.lat_max || lon < sh.lon_min || lon > sh.lon_max {
        return f64::NAN;
    }
    // Continuous row/col coordinates in cell-center space, clamped to the hull.
    let rf = ((sh.lat_max - lat) / sh.cell_size - 0.5).clamp(0.0, (sh.rows - 1) as f64);
    let cf = ((lon - sh.lon_min) / sh.cell_size - 0.5).clamp(0.0, (sh.cols - 1) as f64);
    let r0 = (rf.floor() as usize).min(sh.rows.saturating_sub(2));
    let c0 = (cf.floor() as usize).min(sh.cols.saturating_sub(2));
    let fr = if sh.rows == 1 { 0.0 } else { rf - r0 as f64 };
    let fc = if sh.cols == 1 { 0.0 } else { cf - c0 as f64 };
    let r1 = if sh.rows == 1 { r0 } else { r0 + 1 };
    let c1 = if sh.cols == 1 { c0 } else { c0 + 1 };

    let mut acc = 0.0;
    for (r, c, w) in [
        (r0, c0, (1.0 - fr) * (1.0 - fc)),
        (r0, c1, (1.0 - fr) * fc),
        (r1, c0, fr * (1.0 - fc)),
        (r1, c1, fr * fc),
    ] {
        if w > 0.0 {
            if !src.is_valid(r, c) {
                return f64::NAN;
            }
            acc += w * src.get(r, c);
        }
    }
    acc
}

/// Nearest-neighbour resampling of a categorical grid. Each target cell takes
/// the code of the nearest source cell center; exact ties break toward the
/// lower (row, col) index. Cells outside the source footprint get the nodata
/// code.
pub fn resample_nearest(
    src: &CategoricalGrid,
    target: &GridHeader,
) -> Result<CategoricalGrid, GridError> {
    src.header.validate()?;
    target.validate()?;
    src.header.require_overlap(target)?;

    let sh = src.header;
    let mut codes = Vec::with_capacity(target.n_cells());
    for r in 0..target.rows {
        let lat = target.row_lat(r);
        for c in 0..target.cols {
            let lon = target.col_lon(c);
            if lat < sh.lat_min || lat > sh.lat_max || lon < sh.lon_min || lon > sh.lon_max {
                codes.push(src.nodata_code);
                continue;
            }
            let sr = nearest_index((sh.lat_max - lat) / sh.cell_size - 0.5, sh.rows);
            let sc = nearest_index((lon - sh.lon_min) / sh.cell_size - 0.5, sh.cols);
            codes.push(src.get(sr, sc));
        }
    }
    CategoricalGrid::new(*target, codes, src.legend.clone(), src.nodata_code)
}

/// Nearest integer to `x` with exact half-way ties going to the lower index,
/// clamped into [0, n).
fn nearest_index(x: f64, n: usize) -> usize {
    let floor = x.floor();
    let idx = if x - floor > 0.5 { floor + 1.0 } else { floor };
    (idx.max(0.0) as usize).min(n - 1)
}
