use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{Array1, Array2};

use super::{DomainDataset, DomainId};
use crate::error::{Error, Result};

/// Reads a headed, comma-delimited CSV into one dataset per domain value.
///
/// Every column other than the response and (optional) domain column is a
/// feature. Without a domain column the whole file is a single target
/// dataset. Datasets come back ordered by domain id; rows keep file order.
pub fn load_csv(
    path: impl AsRef<Path>,
    response_column: &str,
    domain_column: Option<&str>,
) -> Result<Vec<DomainDataset>> {
    load_csv_with_header(path, response_column, domain_column).map(|(_, ds)| ds)
}

/// Like [`load_csv`], also returning the feature column names in file order.
pub fn load_csv_with_header(
    path: impl AsRef<Path>,
    response_column: &str,
    domain_column: Option<&str>,
) -> Result<(Vec<String>, Vec<DomainDataset>)> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    if text.trim().is_empty() {
        return Err(Error::EmptyInput(format!("{} is empty", path.display())));
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header: Vec<String> = reader.headers()?.iter().map(str::to_owned).collect();

    let find = |name: &str| {
        header.iter().position(|h| h == name).ok_or_else(|| Error::Schema {
            column: name.to_owned(),
        })
    };
    let response_idx = find(response_column)?;
    let domain_idx = domain_column.map(find).transpose()?;
    let feature_idx: Vec<usize> = (0..header.len())
        .filter(|&c| c != response_idx && Some(c) != domain_idx)
        .collect();
    let feature_names = feature_idx.iter().map(|&c| header[c].clone()).collect();

    let parse = |row: usize, col: usize, cell: &str| -> Result<f64> {
        cell.parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| Error::Parse {
                row,
                column: header[col].clone(),
                value: cell.to_owned(),
            })
    };

    // domain -> (flattened features, responses)
    let mut groups: BTreeMap<DomainId, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    let mut rows = 0usize;
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let row = i + 1;
        rows += 1;
        let domain = match domain_idx {
            Some(c) => {
                let v = parse(row, c, &record[c])?;
                if v < 0.0 || v.fract() != 0.0 || v > DomainId::MAX as f64 {
                    return Err(Error::Parse {
                        row,
                        column: header[c].clone(),
                        value: record[c].to_owned(),
                    });
                }
                v as DomainId
            }
            None => super::TARGET_DOMAIN,
        };
        let entry = groups.entry(domain).or_default();
        for &c in &feature_idx {
            entry.0.push(parse(row, c, &record[c])?);
        }
        entry.1.push(parse(row, response_idx, &record[response_idx])?);
    }
    if rows == 0 {
        return Err(Error::EmptyInput(format!("{} has no data rows", path.display())));
    }

    let d = feature_idx.len();
    let datasets = groups
        .into_iter()
        .map(|(domain, (flat, ys))| {
            let n = ys.len();
            let x = Array2::from_shape_vec((n, d), flat).expect("row-major shape");
            DomainDataset::new(x, Array1::from(ys), domain)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((feature_names, datasets))
}

/// Writes datasets back out in the format [`load_csv`] reads.
///
/// With `domain_column` set, a domain column is appended and all datasets go
/// into one file; otherwise the datasets are concatenated.
pub fn write_csv(
    path: impl AsRef<Path>,
    feature_names: &[String],
    response_column: &str,
    domain_column: Option<&str>,
    datasets: &[DomainDataset],
) -> Result<()> {
    let path = path.as_ref();
    let mut writer = csv::Writer::from_path(path)?;
    let mut header: Vec<&str> = feature_names.iter().map(String::as_str).collect();
    header.push(response_column);
    if let Some(dc) = domain_column {
        header.push(dc);
    }
    writer.write_record(&header)?;
    for ds in datasets {
        if ds.dim() != feature_names.len() {
            return Err(Error::invalid(format!(
                "dataset has d={} but {} feature names were given",
                ds.dim(),
                feature_names.len()
            )));
        }
        for i in 0..ds.len() {
            let mut rec: Vec<String> = ds.row(i).iter().map(|v| v.to_string()).collect();
            rec.push(ds.responses()[i].to_string());
            if domain_column.is_some() {
                rec.push(ds.domain_id().to_string());
            }
            writer.write_record(&rec)?;
        }
    }
    writer.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}
