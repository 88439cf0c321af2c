//! Weighted empirical risk minimizers with squared loss.
//!
//! Target-only training is the special case of unit weights on the target
//! rows; augmented training feeds target rows (weight 1) and calibrated
//! source rows (density-ratio weights) through the same code.

mod cv;
mod krr;
mod mlp;

pub use cv::{cross_validate, krr_grid, mlp_grid, tune_and_fit, Candidate, CvReport, LearnerKind};
pub use krr::{fit_weighted_krr, KrrModel};
pub use mlp::{fit_weighted_mlp, MlpRegressor};

use ndarray::{Array1, Array2, ArrayView2};

use crate::data::DomainDataset;
use crate::error::{Error, Result};

/// Features, responses and nonnegative per-row loss weights.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightedTrainingSet {
    features: Array2<f64>,
    responses: Array1<f64>,
    weights: Array1<f64>,
}

impl WeightedTrainingSet {
    pub fn new(features: Array2<f64>, responses: Array1<f64>, weights: Array1<f64>) -> Result<Self> {
        let n = features.nrows();
        if responses.len() != n || weights.len() != n {
            return Err(Error::invalid(format!(
                "training set lengths disagree: {} rows, {} responses, {} weights",
                n,
                responses.len(),
                weights.len()
            )));
        }
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::invalid("weights must be finite and nonnegative"));
        }
        if !weights.iter().any(|&w| w > 0.0) {
            return Err(Error::invalid("at least one weight must be positive"));
        }
        if features.iter().chain(responses.iter()).any(|v| !v.is_finite()) {
            return Err(Error::invalid("training data must be finite"));
        }
        Ok(Self {
            features,
            responses,
            weights,
        })
    }

    /// Unit weights on every row.
    pub fn unweighted(data: &DomainDataset) -> Result<Self> {
        Self::new(
            data.features().clone(),
            data.responses().clone(),
            Array1::ones(data.len()),
        )
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn responses(&self) -> &Array1<f64> {
        &self.responses
    }

    pub fn weights(&self) -> &Array1<f64> {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }

    pub(crate) fn subset(&self, rows: &[usize]) -> Self {
        Self {
            features: self.features.select(ndarray::Axis(0), rows),
            responses: self.responses.select(ndarray::Axis(0), rows),
            weights: self.weights.select(ndarray::Axis(0), rows),
        }
    }
}

pub trait Regressor {
    fn predict(&self, x: ArrayView2<'_, f64>) -> Array1<f64>;
}

/// A fitted model of either learner kind.
#[derive(Clone, Debug)]
pub enum FittedModel {
    Krr(KrrModel),
    Mlp(MlpRegressor),
}

impl Regressor for FittedModel {
    fn predict(&self, x: ArrayView2<'_, f64>) -> Array1<f64> {
        match self {
            FittedModel::Krr(m) => m.predict(x),
            FittedModel::Mlp(m) => m.predict(x),
        }
    }
}

/// Mean squared prediction error on a held-out dataset.
pub fn evaluate_mse(model: &dyn Regressor, test: &DomainDataset) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::invalid("test set is empty"));
    }
    let pred = model.predict(test.features().view());
    Ok(mse(&pred, test.responses()))
}

pub(crate) fn mse(pred: &Array1<f64>, y: &Array1<f64>) -> f64 {
    pred.iter()
        .zip(y.iter())
        .map(|(p, t)| (t - p) * (t - p))
        .sum::<f64>()
        / y.len() as f64
}
