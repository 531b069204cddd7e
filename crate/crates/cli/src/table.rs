//! Minimal CSV readers for the numeric tables the CLI consumes. First line is
//! a header; fields are comma-separated with no quoting.

use std::path::Path;

use heatlens::tree::DataMatrix;

fn read_lines(path: &Path) -> Result<Vec<Vec<String>>, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    Ok(text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| l.split(',').map(|f| f.trim().to_string()).collect())
        .collect())
}

/// Feature table: header row of names, numeric body.
pub fn read_table(path: &Path) -> Result<DataMatrix, String> {
    let lines = read_lines(path)?;
    let Some((header, body)) = lines.split_first() else {
        return Err(format!("{}: empty file", path.display()));
    };
    let mut rows = Vec::with_capacity(body.len());
    for (i, line) in body.iter().enumerate() {
        if line.len() != header.len() {
            return Err(format!(
                "{}: line {} has {} fields, expected {}",
                path.display(),
                i + 2,
                line.len(),
                header.len()
            ));
        }
        let row: Vec<f64> = line
            .iter()
            .map(|f| f.parse().map_err(|e| format!("line {}: {e}", i + 2)))
            .collect::<Result<_, _>>()?;
        rows.push(row);
    }
    DataMatrix::from_rows(header.to_vec(), &rows).map_err(|e| e.to_string())
}

/// Feature table with one column split out as the target.
pub fn read_table_with_target(path: &Path, target: &str) -> Result<(DataMatrix, Vec<f64>), String> {
    let full = read_table(path)?;
    let target_idx = full
        .names()
        .iter()
        .position(|n| n == target)
        .ok_or_else(|| format!("{}: no column `{target}`", path.display()))?;
    let y = full.column(target_idx).to_vec();
    let names: Vec<String> = full
        .names()
        .iter()
        .enumerate()
        .filter(|(j, _)| *j != target_idx)
        .map(|(_, n)| n.clone())
        .collect();
    let columns: Vec<Vec<f64>> = (0..full.n_features())
        .filter(|j| *j != target_idx)
        .map(|j| full.column(j).to_vec())
        .collect();
    let data = DataMatrix::from_columns(names, columns).map_err(|e| e.to_string())?;
    Ok((data, y))
}

/// Single numeric column (header ignored).
pub fn read_column_csv(path: &Path) -> Result<Vec<f64>, String> {
    let lines = read_lines(path)?;
    let mut values = Vec::new();
    for (i, line) in lines.iter().enumerate().skip(1) {
        values.push(
            line[0]
                .parse()
                .map_err(|e| format!("{}: line {}: {e}", path.display(), i + 1))?,
        );
    }
    if values.is_empty() {
        return Err(format!("{}: no data rows", path.display()));
    }
    Ok(values)
}

/// year,value series.
pub fn read_year_value_csv(path: &Path) -> Result<(Vec<i32>, Vec<f64>), String> {
    let lines = read_lines(path)?;
    let mut years = Vec::new();
    let mut values = Vec::new();
    for (i, line) in lines.iter().enumerate().skip(1) {
        if line.len() < 2 {
            return Err(format!("{}: line {} needs year,value", path.display(), i + 1));
        }
        years.push(
            line[0]
                .parse()
                .map_err(|e| format!("line {}: {e}", i + 1))?,
        );
        values.push(
            line[1]
                .parse()
                .map_err(|e| format!("line {}: {e}", i + 1))?,
        );
    }
    Ok((years, values))
}

/// city,year,value records for the block bootstrap.
pub fn read_block_csv(path: &Path) -> Result<Vec<(String, i32, f64)>, String> {
    let lines = read_lines(path)?;
    let mut records = Vec::new();
    for (i, line) in lines.iter().enumerate().skip(1) {
        if line.len() < 3 {
            return Err(format!(
                "{}: line {} needs city,year,value",
                path.display(),
                i + 1
            ));
        }
        records.push((
            line[0].clone(),
            line[1]
                .parse()
                .map_err(|e| format!("line {}: {e}", i + 1))?,
            line[2]
                .parse()
                .map_err(|e| format!("line {}: {e}", i + 1))?,
        ));
    }
    if records.is_empty() {
        return Err(format!("{}: no data rows", path.display()));
    }
    Ok(records)
}
