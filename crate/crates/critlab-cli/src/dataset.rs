//! Dataset loading for the three config source kinds.

use crate::config::{DatasetSource, InlineData};
use anyhow::{bail, Context};
use critlab_core::net::Dataset;
use std::fs;
use std::path::Path;

/// Materialize the configured dataset. Relative file paths are resolved
/// against `base_dir` (the config file's directory) so runs do not depend
/// on the invocation directory.
pub fn resolve_dataset(source: &DatasetSource, base_dir: &Path) -> anyhow::Result<Dataset> {
    match source {
        DatasetSource::Inline(data) => {
            Ok(Dataset::new(data.inputs.clone(), data.targets.clone())?)
        }
        DatasetSource::Csv(file) => {
            let path = base_dir.join(&file.path);
            load_csv(&path).with_context(|| format!("loading dataset {}", path.display()))
        }
        DatasetSource::Json(file) => {
            let path = base_dir.join(&file.path);
            load_json(&path).with_context(|| format!("loading dataset {}", path.display()))
        }
    }
}

/// CSV layout: a header row `x_0,..,x_{a-1},y_0,..,y_{b-1}` followed by one
/// sample per row. The input/target split is read off the header, so the
/// file is self-describing.
fn load_csv(path: &Path) -> anyhow::Result<Dataset> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    let (input_dim, target_dim) = split_from_headers(&headers)?;

    let mut inputs = Vec::new();
    let mut targets = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        if record.len() != input_dim + target_dim {
            bail!(
                "row {} has {} fields, header promises {}",
                row + 2,
                record.len(),
                input_dim + target_dim
            );
        }
        let values: Vec<f64> = record
            .iter()
            .enumerate()
            .map(|(col, field)| {
                field.trim().parse::<f64>().with_context(|| {
                    format!("row {}, column {}: not a number: {field:?}", row + 2, col + 1)
                })
            })
            .collect::<anyhow::Result<_>>()?;
        inputs.push(values[..input_dim].to_vec());
        targets.push(values[input_dim..].to_vec());
    }
    Ok(Dataset::new(inputs, targets)?)
}

fn split_from_headers(headers: &csv::StringRecord) -> anyhow::Result<(usize, usize)> {
    let names: Vec<&str> = headers.iter().map(str::trim).collect();
    let input_dim = names.iter().take_while(|h| h.starts_with("x_")).count();
    let target_dim = names.len() - input_dim;
    if input_dim == 0 || target_dim == 0 {
        bail!("header must list x_0.. columns then y_0.. columns, got {names:?}");
    }
    for (i, name) in names.iter().enumerate() {
        let expected = if i < input_dim {
            format!("x_{i}")
        } else {
            format!("y_{}", i - input_dim)
        };
        if *name != expected {
            bail!("header column {} is {name:?}, expected {expected:?}", i + 1);
        }
    }
    Ok((input_dim, target_dim))
}

/// JSON layout mirrors the inline config form:
/// `{"inputs": [[..]], "targets": [[..]]}`.
fn load_json(path: &Path) -> anyhow::Result<Dataset> {
    let text = fs::read_to_string(path)?;
    let data: InlineData = serde_json::from_str(&text)?;
    Ok(Dataset::new(data.inputs, data.targets)?)
}
