//! CSV input and output.

use std::collections::HashMap;
use std::fs::File;
use std::path::Path;

use covreg::model::{pair_index, pair_table};
use covreg::CoefficientStack;
use nalgebra::DMatrix;

use crate::error::{CliError, Result};

pub const INTERCEPT: &str = "(intercept)";

/// Numeric matrix read from a CSV file with a header row.
#[derive(Debug, Clone)]
pub struct Table {
    pub names: Vec<String>,
    pub values: DMatrix<f64>,
}

impl Table {
    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }
}

pub fn read_table(path: &Path) -> Result<Table> {
    let shown = path.display();
    let file = File::open(path).map_err(|e| CliError::Input(format!("{shown}: {e}")))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(file);
    let names: Vec<String> = reader
        .headers()
        .map_err(|e| CliError::Input(format!("{shown}:1: {e}")))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    if names.iter().all(|n| n.is_empty()) {
        return Err(CliError::Input(format!("{shown}:1: missing header row")));
    }
    let mut seen = HashMap::new();
    for (c, name) in names.iter().enumerate() {
        if name.is_empty() {
            return Err(CliError::Input(format!("{shown}:1:{}: empty column name", c + 1)));
        }
        if let Some(prev) = seen.insert(name.as_str(), c) {
            return Err(CliError::Input(format!(
                "{shown}:1:{}: duplicate column name '{name}' (first at column {})",
                c + 1,
                prev + 1
            )));
        }
    }
    let cols = names.len();
    let mut data = Vec::new();
    let mut rows = 0;
    for record in reader.records() {
        let record = record.map_err(|e| CliError::Input(format!("{shown}: {e}")))?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() == 1 && record[0].trim().is_empty() {
            continue;
        }
        if record.len() != cols {
            return Err(CliError::Input(format!(
                "{shown}:{line}: expected {cols} fields, found {}",
                record.len()
            )));
        }
        for (c, cell) in record.iter().enumerate() {
            let cell = cell.trim();
            let v: f64 = cell.parse().map_err(|_| {
                CliError::Input(format!("{shown}:{line}:{}: non-numeric value '{cell}'", c + 1))
            })?;
            if !v.is_finite() {
                return Err(CliError::Input(format!("{shown}:{line}:{}: non-finite value '{cell}'", c + 1)));
            }
            data.push(v);
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(CliError::Input(format!("{shown}: no data rows")));
    }
    Ok(Table {
        names,
        values: DMatrix::from_row_slice(rows, cols, &data),
    })
}

/// 17 significant digits, enough to reproduce every `f64` exactly.
pub fn num(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn create_writer(path: &Path) -> Result<csv::Writer<File>> {
    csv::Writer::from_path(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

/// Long format `layer,l_name,j_name,k_name,value` with `j ≤ k`: every nonzero
/// entry plus all diagonal entries of `B₀`.
pub fn write_coefficients(
    path: &Path,
    stack: &CoefficientStack,
    covariates: &[String],
    responses: &[String],
) -> Result<()> {
    let mut w = create_writer(path)?;
    w.write_record(["layer", "l_name", "j_name", "k_name", "value"])?;
    let table = pair_table(stack.p());
    for l in 0..stack.n_layers() {
        let l_name = layer_name(l, covariates);
        for (&(j, k), &v) in table.iter().zip(stack.layer(l)) {
            if v != 0.0 || (l == 0 && j == k) {
                w.write_record([&l.to_string(), l_name, &responses[j], &responses[k], &num(v)])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn layer_name(l: usize, covariates: &[String]) -> &str {
    if l == 0 {
        INTERCEPT
    } else {
        &covariates[l - 1]
    }
}

/// Reads a coefficient file written by [`write_coefficients`]. Entries that
/// are absent are zero. Names must match the data headers.
pub fn read_coefficients(path: &Path, covariates: &[String], responses: &[String]) -> Result<CoefficientStack> {
    let shown = path.display();
    let p = responses.len();
    let index: HashMap<&str, usize> = responses.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
    let mut stack = CoefficientStack::zeros(p, covariates.len());
    let mut reader = csv::Reader::from_path(path).map_err(|e| CliError::Input(format!("{shown}: {e}")))?;
    let headers = reader.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["layer", "l_name", "j_name", "k_name", "value"] {
        return Err(CliError::Input(format!(
            "{shown}:1: expected header layer,l_name,j_name,k_name,value"
        )));
    }
    for record in reader.records() {
        let record = record.map_err(|e| CliError::Input(format!("{shown}: {e}")))?;
        let line = record.position().map_or(0, |p| p.line());
        let at = |c: usize, msg: String| CliError::Input(format!("{shown}:{line}:{c}: {msg}"));
        let l: usize = record[0].parse().map_err(|_| at(1, format!("bad layer '{}'", &record[0])))?;
        if l > covariates.len() {
            return Err(at(1, format!("layer {l} but the covariate file has {} columns", covariates.len())));
        }
        if record[1] != *layer_name(l, covariates) {
            return Err(at(
                2,
                format!("layer {l} is '{}' in the data, '{}' in the file", layer_name(l, covariates), &record[1]),
            ));
        }
        let j = *index
            .get(&record[2])
            .ok_or_else(|| at(3, format!("unknown response '{}'", &record[2])))?;
        let k = *index
            .get(&record[3])
            .ok_or_else(|| at(4, format!("unknown response '{}'", &record[3])))?;
        let v: f64 = record[4].parse().map_err(|_| at(5, format!("non-numeric value '{}'", &record[4])))?;
        if !v.is_finite() {
            return Err(at(5, format!("non-finite value '{}'", &record[4])));
        }
        stack.layer_mut(l)[pair_index(p, j, k)] = v;
    }
    Ok(stack)
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}
