//! A small dense ReLU network with a scalar output, manual backprop and Adam.
//!
//! Shared by the engression generator (inputs `[x, eta]`) and the weighted
//! MLP regressor (inputs `x`).

use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::data::RngStream;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub(crate) struct Dense {
    /// `fan_in × fan_out`
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

/// Multilayer perceptron: ReLU hidden layers, linear scalar output.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    layers: Vec<Dense>,
}

/// Per-layer activations kept from a forward pass for backprop.
pub(crate) struct ForwardCache {
    /// `inputs[l]` is the input to layer `l` (post-activation of layer l-1).
    inputs: Vec<Array2<f64>>,
    /// Pre-activations of each hidden layer.
    pre: Vec<Array2<f64>>,
}

/// Gradients with the same layout as the network parameters.
#[derive(Clone, Debug)]
pub(crate) struct Gradients {
    pub layers: Vec<Dense>,
}

impl Mlp {
    /// Glorot-uniform weights, zero biases.
    pub fn new(input_dim: usize, hidden: &[usize], rng: &mut RngStream) -> Self {
        let mut sizes = Vec::with_capacity(hidden.len() + 2);
        sizes.push(input_dim);
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        let layers = sizes
            .windows(2)
            .map(|pair| {
                let (fan_in, fan_out) = (pair[0], pair[1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let w = Array2::from_shape_simple_fn((fan_in, fan_out), || {
                    (2.0 * rng.uniform() - 1.0) * limit
                });
                Dense {
                    w,
                    b: Array1::zeros(fan_out),
                }
            })
            .collect();
        Self { layers }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].w.nrows()
    }

    pub fn hidden_sizes(&self) -> Vec<usize> {
        self.layers[..self.layers.len() - 1]
            .iter()
            .map(|l| l.w.ncols())
            .collect()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.w.iter().chain(l.b.iter()).all(|v| v.is_finite()))
    }

    pub fn predict(&self, x: ArrayView2<'_, f64>) -> Array1<f64> {
        let mut a = x.to_owned();
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = a.dot(&layer.w);
            z += &layer.b;
            if l < last {
                z.mapv_inplace(relu);
            }
            a = z;
        }
        a.remove_axis(Axis(1))
    }

    pub(crate) fn forward(&self, x: ArrayView2<'_, f64>) -> (Array1<f64>, ForwardCache) {
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(last);
        let mut a = x.to_owned();
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = a.dot(&layer.w);
            z += &layer.b;
            inputs.push(a);
            if l < last {
                a = z.mapv(relu);
                pre.push(z);
            } else {
                a = z;
            }
        }
        (a.remove_axis(Axis(1)), ForwardCache { inputs, pre })
    }

    /// Backprop of `d loss / d output` (one entry per row) through the net.
    pub(crate) fn backward(&self, cache: &ForwardCache, grad_out: &Array1<f64>) -> Gradients {
        let n = grad_out.len();
        let mut delta = grad_out.clone().into_shape_with_order((n, 1)).expect("column");
        let mut grads: Vec<Dense> = Vec::with_capacity(self.layers.len());
        for l in (0..self.layers.len()).rev() {
            let input = &cache.inputs[l];
            let gw = input.t().dot(&delta);
            let gb = delta.sum_axis(Axis(0));
            if l > 0 {
                let mut prev = delta.dot(&self.layers[l].w.t());
                prev.zip_mut_with(&cache.pre[l - 1], |d, &z| {
                    if z <= 0.0 {
                        *d = 0.0;
                    }
                });
                delta = prev;
            }
            grads.push(Dense { w: gw, b: gb });
        }
        grads.reverse();
        Gradients { layers: grads }
    }

    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend(l.w.iter().copied());
            out.extend(l.b.iter().copied());
        }
        out
    }

    pub fn set_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::invalid(format!(
                "expected {} parameters, got {}",
                self.num_params(),
                flat.len()
            )));
        }
        let mut it = flat.iter().copied();
        for l in &mut self.layers {
            l.w.iter_mut().for_each(|v| *v = it.next().unwrap());
            l.b.iter_mut().for_each(|v| *v = it.next().unwrap());
        }
        Ok(())
    }

    pub(crate) fn to_record(&self) -> Vec<LayerRecord> {
        self.layers
            .iter()
            .map(|l| LayerRecord {
                fan_in: l.w.nrows(),
                fan_out: l.w.ncols(),
                weights: l.w.iter().copied().collect(),
                bias: l.b.to_vec(),
            })
            .collect()
    }

    pub(crate) fn from_record(layers: Vec<LayerRecord>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::invalid("network has no layers"));
        }
        let mut out = Vec::with_capacity(layers.len());
        for (i, rec) in layers.into_iter().enumerate() {
            if rec.bias.len() != rec.fan_out {
                return Err(Error::invalid(format!("layer {i}: bias length mismatch")));
            }
            let w = Array2::from_shape_vec((rec.fan_in, rec.fan_out), rec.weights)
                .map_err(|e| Error::invalid(format!("layer {i}: {e}")))?;
            out.push(Dense {
                w,
                b: Array1::from(rec.bias),
            });
        }
        for pair in out.windows(2) {
            if pair[0].w.ncols() != pair[1].w.nrows() {
                return Err(Error::invalid("consecutive layer shapes do not chain"));
            }
        }
        if out.last().unwrap().w.ncols() != 1 {
            return Err(Error::invalid("output layer must be scalar"));
        }
        Ok(Self { layers: out })
    }
}

impl Gradients {
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend(l.w.iter().copied());
            out.extend(l.b.iter().copied());
        }
        out
    }
}

/// Row-major serialized layer.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub(crate) struct LayerRecord {
    pub fan_in: usize,
    pub fan_out: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[inline]
fn relu(v: f64) -> f64 {
    v.max(0.0)
}

/// Adam with bias correction; no weight decay.
pub(crate) struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: i32,
    m: Vec<Dense>,
    v: Vec<Dense>,
}

impl Adam {
    pub fn new(net: &Mlp, lr: f64) -> Self {
        let zeros = || {
            net.layers
                .iter()
                .map(|l| Dense {
                    w: Array2::zeros(l.w.raw_dim()),
                    b: Array1::zeros(l.b.len()),
                })
                .collect::<Vec<_>>()
        };
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn step(&mut self, net: &mut Mlp, grads: &Gradients) {
        self.t += 1;
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        let lr = self.lr;
        let update = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
        };
        for (((layer, g), m), v) in net
            .layers
            .iter_mut()
            .zip(&grads.layers)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            ndarray::Zip::from(&mut layer.w)
                .and(&g.w)
                .and(&mut m.w)
                .and(&mut v.w)
                .for_each(|p, &g, m, v| update(p, g, m, v));
            ndarray::Zip::from(&mut layer.b)
                .and(&g.b)
                .and(&mut m.b)
                .and(&mut v.b)
                .for_each(|p, &g, m, v| update(p, g, m, v));
        }
    }
}
