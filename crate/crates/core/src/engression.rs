//! Conditional generative models trained with the energy score.
//!
//! A generator `g(x, eta)` is a ReLU network fed the covariates concatenated
//! with a noise vector. Training minimizes, per observation,
//!
//! ```text
//! (1/m) sum_j |y - g_j|  -  1/(2m(m-1)) sum_j sum_j' |g_j - g_j'|
//! ```
//!
//! over `m` noise draws, which is a proper scoring rule for the conditional
//! law of `y` given `x`. Sampling at `x` pushes fresh noise through the net.

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::data::{DomainDataset, RngStream};
use crate::error::{Error, Result};
use crate::nn::{Adam, LayerRecord, Mlp};

/// Law of the injected noise vector.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseLaw {
    #[default]
    StandardNormal,
    /// Uniform on (0, 1).
    Uniform,
}

impl NoiseLaw {
    fn draw(self, rng: &mut RngStream) -> f64 {
        match self {
            NoiseLaw::StandardNormal => rng.normal(),
            NoiseLaw::Uniform => rng.uniform(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EngressionConfig {
    pub hidden_sizes: Vec<usize>,
    pub noise_dim: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    /// Noise draws per observation in each loss evaluation.
    pub m_train: usize,
    /// `None` means full batch when `n <= 512`, otherwise 256.
    pub batch_size: Option<usize>,
    pub noise_law: NoiseLaw,
}

impl Default for EngressionConfig {
    fn default() -> Self {
        Self {
            hidden_sizes: vec![100, 100],
            noise_dim: 5,
            learning_rate: 1e-3,
            epochs: 1000,
            m_train: 2,
            batch_size: None,
            noise_law: NoiseLaw::StandardNormal,
        }
    }
}

impl EngressionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_sizes.iter().any(|&h| h == 0) {
            return Err(Error::invalid("hidden layer sizes must be positive"));
        }
        if self.noise_dim == 0 {
            return Err(Error::invalid("noise_dim must be positive"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning_rate must be positive"));
        }
        if self.epochs == 0 {
            return Err(Error::invalid("epochs must be positive"));
        }
        if self.m_train < 2 {
            return Err(Error::invalid("m_train must be at least 2"));
        }
        if self.batch_size == Some(0) {
            return Err(Error::invalid("batch_size must be positive"));
        }
        Ok(())
    }

    pub fn effective_batch_size(&self, n: usize) -> usize {
        match self.batch_size {
            Some(b) => b.min(n),
            None if n <= 512 => n,
            None => 256,
        }
    }
}

/// Energy score of one observation against `m >= 2` generated samples.
pub fn energy_loss(y: f64, samples: &[f64]) -> Result<f64> {
    let m = samples.len();
    if m < 2 {
        return Err(Error::invalid(format!("energy loss needs at least 2 samples, got {m}")));
    }
    let fit: f64 = samples.iter().map(|g| (y - g).abs()).sum::<f64>() / m as f64;
    let mut spread = 0.0;
    for a in samples {
        for b in samples {
            spread += (a - b).abs();
        }
    }
    Ok(fit - spread / (2.0 * m as f64 * (m - 1) as f64))
}

fn sign(u: f64) -> f64 {
    // subgradient of |u| at 0 is taken as 0
    if u > 0.0 {
        1.0
    } else if u < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Mean energy loss over observations and its derivative with respect to
/// every generated value. `g` is observation-major: `g[i*m + j]`.
fn batch_energy_loss(g: &[f64], y: &[f64], m: usize) -> (f64, Array1<f64>) {
    let n = y.len();
    let mut grad = Array1::<f64>::zeros(g.len());
    let inv_m = 1.0 / m as f64;
    let inv_pair = 1.0 / (2.0 * m as f64 * (m - 1) as f64);
    let scale = 1.0 / n as f64;
    let mut total = 0.0;
    for (i, &yi) in y.iter().enumerate() {
        let block = &g[i * m..(i + 1) * m];
        let mut loss = 0.0;
        for (j, &gj) in block.iter().enumerate() {
            loss += inv_m * (yi - gj).abs();
            let mut d = inv_m * sign(gj - yi);
            for &gk in block {
                loss -= inv_pair * (gj - gk).abs();
                // each unordered pair appears twice in the ordered double sum
                d -= 2.0 * inv_pair * sign(gj - gk);
            }
            grad[i * m + j] = d * scale;
        }
        total += loss;
    }
    (total * scale, grad)
}

/// A trained conditional sampler `x -> g(x, eta)`.
#[derive(Clone, Debug, PartialEq)]
pub struct EngressionModel {
    net: Mlp,
    input_dim: usize,
    config: EngressionConfig,
    loss_trace: Vec<f64>,
}

impl EngressionModel {
    /// Untrained generator with freshly initialized weights.
    pub fn init(input_dim: usize, config: &EngressionConfig, rng: &mut RngStream) -> Result<Self> {
        config.validate()?;
        if input_dim == 0 {
            return Err(Error::invalid("input dimension must be positive"));
        }
        Ok(Self {
            net: Mlp::new(input_dim + config.noise_dim, &config.hidden_sizes, rng),
            input_dim,
            config: config.clone(),
            loss_trace: Vec::new(),
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn noise_dim(&self) -> usize {
        self.config.noise_dim
    }

    pub fn noise_law(&self) -> NoiseLaw {
        self.config.noise_law
    }

    pub fn config(&self) -> &EngressionConfig {
        &self.config
    }

    /// Average training loss per epoch.
    pub fn loss_trace(&self) -> &[f64] {
        &self.loss_trace
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.loss_trace.last().copied()
    }

    pub fn params(&self) -> Vec<f64> {
        self.net.params()
    }

    pub fn set_params(&mut self, flat: &[f64]) -> Result<()> {
        self.net.set_params(flat)
    }

    pub fn is_finite(&self) -> bool {
        self.net.is_finite()
    }

    fn check_dim(&self, d: usize) -> Result<()> {
        if d != self.input_dim {
            return Err(Error::invalid(format!(
                "feature dimension {d} does not match model input dimension {}",
                self.input_dim
            )));
        }
        Ok(())
    }

    /// Network inputs for `x` rows each repeated `m` times, noise attached.
    fn stack_inputs(&self, x: ArrayView2<'_, f64>, rows: &[usize], m: usize, noise: ArrayView2<'_, f64>) -> Array2<f64> {
        let d = self.input_dim;
        let mut input = Array2::<f64>::zeros((rows.len() * m, d + self.noise_dim()));
        for (bi, &i) in rows.iter().enumerate() {
            for j in 0..m {
                let r = bi * m + j;
                let mut row = input.row_mut(r);
                row.slice_mut(ndarray::s![..d]).assign(&x.row(i));
                row.slice_mut(ndarray::s![d..]).assign(&noise.row(r));
            }
        }
        input
    }

    fn draw_noise(&self, rows: usize, rng: &mut RngStream) -> Array2<f64> {
        let law = self.noise_law();
        Array2::from_shape_simple_fn((rows, self.noise_dim()), || law.draw(rng))
    }

    /// Generator output for explicit noise: row `r` of `noise` is paired with
    /// `x` row `r / m`.
    pub fn generate_with_noise(&self, x: ArrayView2<'_, f64>, noise: ArrayView2<'_, f64>, m: usize) -> Result<Array1<f64>> {
        self.check_dim(x.ncols())?;
        if noise.nrows() != x.nrows() * m || noise.ncols() != self.noise_dim() {
            return Err(Error::invalid("noise matrix shape does not match x and m"));
        }
        let rows: Vec<usize> = (0..x.nrows()).collect();
        Ok(self.net.predict(self.stack_inputs(x, &rows, m, noise).view()))
    }

    /// Mean empirical energy loss over `(x, y)` with frozen noise and its
    /// gradient with respect to [`Self::params`].
    pub fn objective_and_gradient(
        &self,
        x: ArrayView2<'_, f64>,
        y: ArrayView1<'_, f64>,
        noise: ArrayView2<'_, f64>,
        m: usize,
    ) -> Result<(f64, Vec<f64>)> {
        self.check_dim(x.ncols())?;
        if m < 2 {
            return Err(Error::invalid("m must be at least 2"));
        }
        if noise.nrows() != x.nrows() * m || y.len() != x.nrows() {
            return Err(Error::invalid("noise/response shape does not match x and m"));
        }
        let rows: Vec<usize> = (0..x.nrows()).collect();
        let input = self.stack_inputs(x, &rows, m, noise);
        let (g, cache) = self.net.forward(input.view());
        let (loss, dg) = batch_energy_loss(g.as_slice().unwrap(), y.as_slice().unwrap(), m);
        Ok((loss, self.net.backward(&cache, &dg).flatten()))
    }

    /// `count` independent draws of `g(x, eta)`.
    pub fn sample(&self, x: ArrayView1<'_, f64>, count: usize, rng: &mut RngStream) -> Result<Vec<f64>> {
        let x2 = x.insert_axis(Axis(0));
        Ok(self.sample_rows(x2, count, rng)?.into_raw_vec_and_offset().0)
    }

    /// `per_row` draws at each row of `x`; result is `n × per_row`.
    pub fn sample_rows(&self, x: ArrayView2<'_, f64>, per_row: usize, rng: &mut RngStream) -> Result<Array2<f64>> {
        self.check_dim(x.ncols())?;
        if per_row == 0 {
            return Err(Error::invalid("sample count must be at least 1"));
        }
        let n = x.nrows();
        let mut out = Array2::<f64>::zeros((n, per_row));
        // keep the stacked input around 16k rows
        let rows_per_chunk = (16_384 / per_row).max(1);
        let idx: Vec<usize> = (0..n).collect();
        for chunk in idx.chunks(rows_per_chunk) {
            if per_row > 16_384 {
                // a single row with a huge draw count: split the draws instead
                let i = chunk[0];
                let mut done = 0;
                while done < per_row {
                    let take = (per_row - done).min(16_384);
                    let noise = self.draw_noise(take, rng);
                    let input = self.stack_inputs(x, &[i], take, noise.view());
                    let g = self.net.predict(input.view());
                    out.row_mut(i).slice_mut(ndarray::s![done..done + take]).assign(&g);
                    done += take;
                }
                continue;
            }
            let noise = self.draw_noise(chunk.len() * per_row, rng);
            let input = self.stack_inputs(x, chunk, per_row, noise.view());
            let g = self.net.predict(input.view());
            for (bi, &i) in chunk.iter().enumerate() {
                out.row_mut(i)
                    .assign(&g.slice(ndarray::s![bi * per_row..(bi + 1) * per_row]));
            }
        }
        Ok(out)
    }

    /// Row means of `count` draws at each row of `x`.
    pub fn conditional_mean(&self, x: ArrayView2<'_, f64>, count: usize, rng: &mut RngStream) -> Result<Array1<f64>> {
        Ok(self.sample_rows(x, count, rng)?.mean_axis(Axis(1)).expect("count >= 1"))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = ModelFile {
            format: MODEL_FORMAT.to_owned(),
            input_dim: self.input_dim,
            config: self.config.clone(),
            loss_trace: self.loss_trace.clone(),
            layers: self.net.to_record(),
        };
        let text = toml::to_string(&file).map_err(|e| Error::Config(e.to_string()))?;
        std::fs::write(path.as_ref(), text).map_err(|e| Error::io(path.as_ref(), e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| Error::io(path.as_ref(), e))?;
        let file: ModelFile = toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
        if file.format != MODEL_FORMAT {
            return Err(Error::Config(format!("unsupported model format {:?}", file.format)));
        }
        file.config.validate()?;
        let net = Mlp::from_record(file.layers)?;
        if net.input_dim() != file.input_dim + file.config.noise_dim
            || net.hidden_sizes() != file.config.hidden_sizes
        {
            return Err(Error::Config("layer shapes disagree with the stored config".into()));
        }
        Ok(Self {
            net,
            input_dim: file.input_dim,
            config: file.config,
            loss_trace: file.loss_trace,
        })
    }
}

const MODEL_FORMAT: &str = "tlcqm-engression-v1";

#[derive(Serialize, Deserialize)]
struct ModelFile {
    format: String,
    input_dim: usize,
    config: EngressionConfig,
    loss_trace: Vec<f64>,
    layers: Vec<LayerRecord>,
}

/// Fits a generator to one domain with Adam on mini-batches, redrawing the
/// noise for every batch.
pub fn train_engression(data: &DomainDataset, config: &EngressionConfig, rng: &mut RngStream) -> Result<EngressionModel> {
    config.validate()?;
    let n = data.len();
    if n < 2 {
        return Err(Error::invalid(format!("engression needs n >= 2, got {n}")));
    }
    let mut model = EngressionModel::init(data.dim(), config, rng)?;
    let m = config.m_train;
    let batch = config.effective_batch_size(n);
    let mut adam = Adam::new(&model.net, config.learning_rate);
    let x = data.features().view();
    let y = data.responses();
    let mut order: Vec<usize> = (0..n).collect();
    let mut y_batch = Vec::with_capacity(batch);

    for epoch in 0..config.epochs {
        if batch < n {
            rng.shuffle(&mut order);
        }
        let mut epoch_loss = 0.0;
        for rows in order.chunks(batch) {
            let noise = model.draw_noise(rows.len() * m, rng);
            let input = model.stack_inputs(x, rows, m, noise.view());
            y_batch.clear();
            y_batch.extend(rows.iter().map(|&i| y[i]));
            let (g, cache) = model.net.forward(input.view());
            let (loss, dg) = batch_energy_loss(g.as_slice().unwrap(), &y_batch, m);
            if !loss.is_finite() {
                return Err(Error::TrainingDivergence {
                    epoch,
                    learning_rate: config.learning_rate,
                });
            }
            let grads = model.net.backward(&cache, &dg);
            adam.step(&mut model.net, &grads);
            epoch_loss += loss * rows.len() as f64;
        }
        model.loss_trace.push(epoch_loss / n as f64);
    }
    if !model.net.is_finite() {
        return Err(Error::TrainingDivergence {
            epoch: config.epochs,
            learning_rate: config.learning_rate,
        });
    }
    Ok(model)
}
