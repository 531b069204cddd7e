//! Grid file format: a raw little-endian binary payload next to a JSON
//! sidecar. Continuous grids use float32 (`.f32`), categorical grids int16
//! (`.i16`). The sidecar carries the header, units, and optional
//! normalization record or legend. Payload byte length is validated on load.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{CategoricalGrid, Grid, GridError, GridHeader, NormalizationRecord};

#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    #[serde(flatten)]
    header: GridHeader,
    kind: String,
    units: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    normalization: Option<NormalizationRecord>,
    #[serde(skip_serializing_if = "Option::is_none")]
    legend: Option<BTreeMap<i16, String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    nodata_code: Option<i16>,
}

/// Path of the JSON sidecar belonging to a payload file.
pub fn sidecar_path(payload: &Path) -> PathBuf {
    payload.with_extension("json")
}

/// Write a grid as float32 payload + JSON sidecar. Nodata cells are NaN.
pub fn save_grid(
    path: &Path,
    grid: &Grid,
    normalization: Option<&NormalizationRecord>,
) -> Result<(), GridError> {
    let mut bytes = Vec::with_capacity(grid.values().len() * 4);
    for v in grid.values() {
        bytes.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    fs::write(path, bytes)?;
    let sidecar = Sidecar {
        header: grid.header,
        kind: "float32".to_string(),
        units: grid.units.clone(),
        normalization: normalization.cloned(),
        legend: None,
        nodata_code: None,
    };
    fs::write(sidecar_path(path), serde_json::to_vec_pretty(&sidecar)?)?;
    Ok(())
}

/// Load a float32 grid, validating the payload length against the sidecar.
pub fn load_grid(path: &Path) -> Result<(Grid, Option<NormalizationRecord>), GridError> {
    let sidecar: Sidecar = serde_json::from_slice(&fs::read(sidecar_path(path))?)?;
    if sidecar.kind != "float32" {
        return Err(GridError::SidecarMismatch {
            path: path.display().to_string(),
            reason: format!("kind `{}` is not float32", sidecar.kind),
        });
    }
    let bytes = fs::read(path)?;
    let expected = sidecar.header.n_cells() * 4;
    if bytes.len() != expected {
        return Err(GridError::PayloadLength {
            expected,
            actual: bytes.len(),
        });
    }
    let values = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
        .collect();
    let grid = Grid::new(sidecar.header, values, &sidecar.units)?;
    Ok((grid, sidecar.normalization))
}

/// Write a categorical grid as int16 payload + JSON sidecar.
pub fn save_categorical(path: &Path, grid: &CategoricalGrid) -> Result<(), GridError> {
    let mut bytes = Vec::with_capacity(grid.codes().len() * 2);
    for code in grid.codes() {
        bytes.extend_from_slice(&code.to_le_bytes());
    }
    fs::write(path, bytes)?;
    let sidecar = Sidecar {
        header: grid.header,
        kind: "int16".to_string(),
        units: "category".to_string(),
        normalization: None,
        legend: Some(grid.legend.clone()),
        nodata_code: Some(grid.nodata_code),
    };
    fs::write(sidecar_path(path), serde_json::to_vec_pretty(&sidecar)?)?;
    Ok(())
}

/// Load an int16 categorical grid, validating the payload length.
pub fn load_categorical(path: &Path) -> Result<CategoricalGrid, GridError> {
    let sidecar: Sidecar = serde_json::from_slice(&fs::read(sidecar_path(path))?)?;
    if sidecar.kind != "int16" {
        return Err(GridError::SidecarMismatch {
            path: path.display().to_string(),
            reason: format!("kind `{}` is not int16", sidecar.kind),
        });
    }
    let bytes = fs::read(path)?;
    let expected = sidecar.header.n_cells() * 2;
    if bytes.len() != expected {
        return Err(GridError::PayloadLength {
            expected,
            actual: bytes.len(),
        });
    }
    let codes = bytes
        .chunks_exact(2)
        .map(|b| i16::from_le_bytes([b[0], b[1]]))
        .collect();
    CategoricalGrid::new(
        sidecar.header,
        codes,
        sidecar.legend.unwrap_or_default(),
        sidecar.nodata_code.unwrap_or(i16::MIN),
    )
}
