//! Reconstruction of humidity-adjusted Heat Index fields from temperature and
//! humidity grids, extreme-aware statistical downscaling with a random-forest
//! / quantile-boosting max-ensemble, and attribution of spatial HI
//! variability to greening and urban-form features via interventional
//! TreeSHAP and Accumulated Local Effects.
//!
//! The crate is organized around [`grid::Grid`], the universal currency of
//! the pipeline: a georeferenced raster with a nodata mask. Everything else
//! consumes and produces grids, aligned stacks of grids, or flat tables
//! extracted from them.

pub mod ale;
pub mod downscale;
pub mod grid;
pub mod heat_index;
pub mod numeric;
pub mod pipeline;
pub mod shap;
pub mod stats;
pub mod synth;
pub mod tree;
