use ndarray::{Array1, ArrayView2};

use super::{Regressor, WeightedTrainingSet};
use crate::data::RngStream;
use crate::error::{Error, Result};
use crate::nn::{Adam, Mlp};

/// ReLU network regressor fitted to weighted squared loss.
///
/// Responses are centered by their weighted mean before training and the
/// offset is added back at prediction time.
#[derive(Clone, Debug)]
pub struct MlpRegressor {
    net: Mlp,
    offset: f64,
    loss_trace: Vec<f64>,
}

impl MlpRegressor {
    pub fn loss_trace(&self) -> &[f64] {
        &self.loss_trace
    }

    pub fn final_loss(&self) -> f64 {
        *self.loss_trace.last().expect("at least one epoch")
    }
}

impl Regressor for MlpRegressor {
    fn predict(&self, x: ArrayView2<'_, f64>) -> Array1<f64> {
        self.net.predict(x) + self.offset
    }
}

/// Full-batch Adam on `(1/Σw) Σ w_i (y_i - f(x_i))²`.
pub fn fit_weighted_mlp(
    data: &WeightedTrainingSet,
    hidden: &[usize],
    lr: f64,
    epochs: usize,
    rng: &mut RngStream,
) -> Result<MlpRegressor> {
    let n = data.len();
    if n < 2 {
        return Err(Error::invalid("MLP regression needs at least 2 rows"));
    }
    if hidden.iter().any(|&h| h == 0) || epochs == 0 || !(lr > 0.0) {
        return Err(Error::invalid("hidden sizes, epochs and lr must be positive"));
    }
    let x = data.features().view();
    let w = data.weights();
    let total_w = w.sum();
    let offset = w.dot(data.responses()) / total_w;
    let target = data.responses() - offset;

    let mut net = Mlp::new(x.ncols(), hidden, rng);
    let mut adam = Adam::new(&net, lr);
    let mut trace = Vec::with_capacity(epochs);
    for epoch in 0..epochs {
        let (out, cache) = net.forward(x);
        let resid = &out - &target;
        let loss = (&resid * &resid * w).sum() / total_w;
        if !loss.is_finite() {
            return Err(Error::TrainingDivergence { epoch, learning_rate: lr });
        }
        trace.push(loss);
        let grad = &resid * w * (2.0 / total_w);
        let g = net.backward(&cache, &grad);
        adam.step(&mut net, &g);
    }
    if !net.is_finite() {
        return Err(Error::TrainingDivergence {
            epoch: epochs,
            learning_rate: lr,
        });
    }
    Ok(MlpRegressor {
        net,
        offset,
        loss_trace: trace,
    })
}
