//! Domain datasets, CSV ingestion, pooled standardization and random streams.

mod csv_io;
mod rng;
mod scaler;

pub use csv_io::{load_csv, load_csv_with_header, write_csv};
pub use rng::RngStream;
pub use scaler::{standardize, Scaler};

use ndarray::{Array1, Array2, ArrayView1};

use crate::error::{Error, Result};

/// Domain label 0 is the target; 1..=K are sources.
pub type DomainId = u32;

pub const TARGET_DOMAIN: DomainId = 0;

/// Observations from one domain: an `n × d` feature matrix and `n` responses.
#[derive(Clone, Debug, PartialEq)]
pub struct DomainDataset {
    features: Array2<f64>,
    responses: Array1<f64>,
    domain_id: DomainId,
}

impl DomainDataset {
    pub fn new(features: Array2<f64>, responses: Array1<f64>, domain_id: DomainId) -> Result<Self> {
        if features.nrows() != responses.len() {
            return Err(Error::invalid(format!(
                "feature rows ({}) do not match response length ({})",
                features.nrows(),
                responses.len()
            )));
        }
        if let Some(pos) = features.iter().position(|v| !v.is_finite()) {
            let d = features.ncols().max(1);
            return Err(Error::invalid(format!(
                "non-finite feature at row {}, column {}",
                pos / d,
                pos % d
            )));
        }
        if let Some(row) = responses.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("non-finite response at row {row}")));
        }
        Ok(Self {
            features,
            responses,
            domain_id,
        })
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn responses(&self) -> &Array1<f64> {
        &self.responses
    }

    pub fn domain_id(&self) -> DomainId {
        self.domain_id
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.features.row(i)
    }

    pub fn with_domain_id(mut self, domain_id: DomainId) -> Self {
        self.domain_id = domain_id;
        self
    }

    /// Same responses, features replaced (used after standardization).
    pub(crate) fn with_features(&self, features: Array2<f64>) -> Self {
        debug_assert_eq!(features.nrows(), self.len());
        Self {
            features,
            responses: self.responses.clone(),
            domain_id: self.domain_id,
        }
    }
}

/// Checks that every dataset shares one feature dimension and returns it.
pub fn common_dim<'a>(datasets: impl IntoIterator<Item = &'a DomainDataset>) -> Result<usize> {
    let mut dim = None;
    for ds in datasets {
        match dim {
            None => dim = Some(ds.dim()),
            Some(d) if d != ds.dim() => {
                return Err(Error::invalid(format!(
                    "feature dimension mismatch: domain {} has d={}, expected d={}",
                    ds.domain_id(),
                    ds.dim(),
                    d
                )))
            }
            _ => {}
        }
    }
    dim.ok_or_else(|| Error::EmptyInput("no datasets".into()))
}
