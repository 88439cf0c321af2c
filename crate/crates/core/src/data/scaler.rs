use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use super::{common_dim, DomainDataset};
use crate::error::{Error, Result};

/// Per-feature affine map `x -> (x - mean) / scale`.
///
/// Constant features are stored with mean 0 and scale 1, so they pass
/// through unchanged.
#[derive(Clone, Debug, PartialEq)]
pub struct Scaler {
    names: Vec<String>,
    means: Array1<f64>,
    scales: Array1<f64>,
}

#[derive(Serialize, Deserialize)]
struct ScalerRow {
    feature: String,
    mean: f64,
    scale: f64,
}

impl Scaler {
    /// Pooled population statistics over every row of every dataset.
    pub fn fit(datasets: &[DomainDataset]) -> Result<Self> {
        if datasets.is_empty() {
            return Err(Error::EmptyInput("standardize needs at least one dataset".into()));
        }
        let d = common_dim(datasets)?;
        let n: usize = datasets.iter().map(DomainDataset::len).sum();
        if n == 0 {
            return Err(Error::EmptyInput("all datasets are empty".into()));
        }
        let mut sum = Array1::<f64>::zeros(d);
        for ds in datasets {
            sum += &ds.features().sum_axis(Axis(0));
        }
        let mean = sum / n as f64;
        let mut sq = Array1::<f64>::zeros(d);
        for ds in datasets {
            for row in ds.features().rows() {
                for j in 0..d {
                    let c = row[j] - mean[j];
                    sq[j] += c * c;
                }
            }
        }
        let mut means = mean;
        let mut scales = (sq / n as f64).mapv(f64::sqrt);
        for j in 0..d {
            if scales[j] <= 1e-12 * means[j].abs().max(1.0) {
                means[j] = 0.0;
                scales[j] = 1.0;
            }
        }
        Ok(Self {
            names: (0..d).map(|j| format!("x{j}")).collect(),
            means,
            scales,
        })
    }

    pub fn with_feature_names(mut self, names: &[String]) -> Result<Self> {
        if names.len() != self.means.len() {
            return Err(Error::invalid(format!(
                "{} names for {} features",
                names.len(),
                self.means.len()
            )));
        }
        self.names = names.to_vec();
        Ok(self)
    }

    pub fn identity(d: usize) -> Self {
        Self {
            names: (0..d).map(|j| format!("x{j}")).collect(),
            means: Array1::zeros(d),
            scales: Array1::ones(d),
        }
    }

    pub fn dim(&self) -> usize {
        self.means.len()
    }

    pub fn means(&self) -> &Array1<f64> {
        &self.means
    }

    pub fn scales(&self) -> &Array1<f64> {
        &self.scales
    }

    pub fn transform(&self, x: &Array2<f64>) -> Array2<f64> {
        (x - &self.means) / &self.scales
    }

    pub fn inverse_transform(&self, z: &Array2<f64>) -> Array2<f64> {
        z * &self.scales + &self.means
    }

    pub fn transform_dataset(&self, ds: &DomainDataset) -> DomainDataset {
        ds.with_features(self.transform(ds.features()))
    }

    /// Sidecar file with one `feature,mean,scale` row per feature.
    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path.as_ref())?;
        for j in 0..self.dim() {
            w.serialize(ScalerRow {
                feature: self.names[j].clone(),
                mean: self.means[j],
                scale: self.scales[j],
            })?;
        }
        w.flush().map_err(|e| Error::io(path.as_ref(), e))?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let mut r = csv::Reader::from_path(path.as_ref())?;
        let rows: Vec<ScalerRow> = r.deserialize().collect::<Result<_, _>>()?;
        if rows.iter().any(|row| !(row.scale > 0.0) || !row.mean.is_finite()) {
            return Err(Error::invalid("scaler file has a non-positive scale or bad mean"));
        }
        Ok(Self {
            names: rows.iter().map(|r| r.feature.clone()).collect(),
            means: rows.iter().map(|r| r.mean).collect(),
            scales: rows.iter().map(|r| r.scale).collect(),
        })
    }
}

/// Standardizes every dataset with statistics pooled across all domains.
/// Responses are untouched.
pub fn standardize(datasets: &[DomainDataset]) -> Result<(Vec<DomainDataset>, Scaler)> {
    let scaler = Scaler::fit(datasets)?;
    let out = datasets.iter().map(|ds| scaler.transform_dataset(ds)).collect();
    Ok((out, scaler))
}
