//! End-to-end augmentation of a small target sample with calibrated
//! synthetic responses from source domains.
//!
//! 1. Fit one engression generator per source domain.
//! 2. Draw `M` responses from every generator at each target covariate.
//! 3. Fit the quantile-matching coefficients against the target responses.
//! 4. Predict each source row from every generator and calibrate it.
//! 5. Optionally weight source rows by a KMM density-ratio estimate.
//!
//! Generators and KMM run on pooled-standardized features; the augmented
//! output keeps the caller's original coordinates.

use std::path::Path;

use ndarray::{concatenate, s, Array1, Array2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{common_dim, load_csv_with_header, standardize, DomainDataset, DomainId, RngStream, Scaler, TARGET_DOMAIN};
use crate::density_ratio::{estimate_weights, DensityRatioWeights, KmmConfig};
use crate::engression::{train_engression, EngressionConfig, EngressionModel};
use crate::error::{Error, Result};
use crate::learners::WeightedTrainingSet;
use crate::quantile_match::{fit, FitOptions, QuantileMatchFit, SyntheticDesign};

/// How a source row's generated response is summarized before calibration.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictMode {
    /// Mean of `m_pred` draws.
    #[default]
    Mean,
    /// One draw.
    SingleDraw,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub engression: EngressionConfig,
    /// Generated responses per target covariate and source.
    pub m: usize,
    /// Draws averaged per source row when predicting.
    pub m_pred: usize,
    pub predict_mode: PredictMode,
    pub quantile: FitOptions,
    pub use_density_ratio: bool,
    pub kmm: KmmConfig,
    pub standardize: bool,
    /// Supplied by the caller; never read from a config file.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            engression: EngressionConfig::default(),
            m: 3000,
            m_pred: 512,
            predict_mode: PredictMode::Mean,
            quantile: FitOptions::default(),
            use_density_ratio: true,
            kmm: KmmConfig::default(),
            standardize: true,
            seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.engression.validate()?;
        self.kmm.validate()?;
        if self.m == 0 || self.m_pred == 0 {
            return Err(Error::invalid("M and M_pred must be at least 1"));
        }
        Ok(())
    }
}

/// Target rows followed by calibrated source rows, in domain order.
#[derive(Clone, Debug, PartialEq)]
pub struct AugmentedDataset {
    features: Array2<f64>,
    y_tilde: Array1<f64>,
    weights: Array1<f64>,
    origin: Vec<DomainId>,
    /// `counts[k]` rows came from domain `k` (0 = target).
    counts: Vec<usize>,
}

impl AugmentedDataset {
    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn responses(&self) -> &Array1<f64> {
        &self.y_tilde
    }

    pub fn weights(&self) -> &Array1<f64> {
        &self.weights
    }

    pub fn origin(&self) -> &[DomainId] {
        &self.origin
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn len(&self) -> usize {
        self.y_tilde.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y_tilde.is_empty()
    }

    pub fn to_training_set(&self) -> Result<WeightedTrainingSet> {
        WeightedTrainingSet::new(self.features.clone(), self.y_tilde.clone(), self.weights.clone())
    }

    /// Feature columns, then `y_tilde,weight,origin`.
    pub fn write_csv(&self, path: impl AsRef<Path>, feature_names: &[String]) -> Result<()> {
        if feature_names.len() != self.features.ncols() {
            return Err(Error::invalid("feature name count does not match the data"));
        }
        let mut w = csv::Writer::from_path(path.as_ref())?;
        let mut header: Vec<&str> = feature_names.iter().map(String::as_str).collect();
        header.extend(["y_tilde", "weight", "origin"]);
        w.write_record(&header)?;
        for i in 0..self.len() {
            let mut rec: Vec<String> = self.features.row(i).iter().map(|v| v.to_string()).collect();
            rec.push(self.y_tilde[i].to_string());
            rec.push(self.weights[i].to_string());
            rec.push(self.origin[i].to_string());
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(path.as_ref(), e))
    }

    fn target_only(target: &DomainDataset) -> Self {
        Self {
            features: target.features().clone(),
            y_tilde: target.responses().clone(),
            weights: Array1::ones(target.len()),
            origin: vec![TARGET_DOMAIN; target.len()],
            counts: vec![target.len()],
        }
    }
}

/// Reads a file written by [`AugmentedDataset::write_csv`], returning the
/// feature names alongside the data.
pub fn read_augmented_csv(path: impl AsRef<Path>) -> Result<(Vec<String>, AugmentedDataset)> {
    let (mut names, domains) = load_csv_with_header(path, "y_tilde", Some("origin"))?;
    let wcol = names.iter().position(|n| n == "weight").ok_or_else(|| Error::Schema {
        column: "weight".to_owned(),
    })?;
    names.remove(wcol);
    let keep: Vec<usize> = (0..=names.len()).filter(|&c| c != wcol).collect();
    let mut features = Vec::with_capacity(domains.len());
    let mut y = Vec::with_capacity(domains.len());
    let mut w = Vec::with_capacity(domains.len());
    let mut origin = Vec::new();
    let mut counts = Vec::with_capacity(domains.len());
    for ds in &domains {
        features.push(ds.features().select(Axis(1), &keep));
        y.push(ds.responses().view());
        w.push(ds.features().column(wcol));
        origin.extend(std::iter::repeat_n(ds.domain_id(), ds.len()));
        counts.push(ds.len());
    }
    let views: Vec<_> = features.iter().map(|f| f.view()).collect();
    let data = AugmentedDataset {
        features: concatenate(Axis(0), &views).expect("common width"),
        y_tilde: concatenate(Axis(0), &y).expect("1-d"),
        weights: concatenate(Axis(0), &w).expect("1-d"),
        origin,
        counts,
    };
    if data.weights.iter().any(|&v| v < 0.0) {
        return Err(Error::invalid("negative weight in augmented file"));
    }
    Ok((names, data))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
struct KmmDiagnostics {
    feasible: bool,
    objective: f64,
    bandwidth: f64,
    iterations: usize,
    weight_sum: f64,
}

#[derive(Clone, Debug)]
pub struct Diagnostics {
    /// Trained generators, one per source, on standardized features.
    pub models: Vec<EngressionModel>,
    pub engression_final_loss: Vec<f64>,
    /// One entry per source; empty when the density ratio is disabled.
    pub kmm: Vec<DensityRatioWeights>,
    pub scaler: Scaler,
    /// Per source: `n_k × (K+1)` predicted design rows at its covariates.
    pub source_design: Vec<Array2<f64>>,
    /// Per generator: largest absolute generated value over every evaluated point.
    pub generated_max_abs: Vec<f64>,
}

#[derive(Serialize)]
struct DiagnosticsFile<'a> {
    n_per_domain: &'a [usize],
    engression_final_loss: &'a [f64],
    quantile_fit: Option<&'a QuantileMatchFit>,
    kmm: Vec<KmmDiagnostics>,
}

#[derive(Clone, Debug)]
pub struct Augmentation {
    pub data: AugmentedDataset,
    /// `None` only when there were no source domains.
    pub fit: Option<QuantileMatchFit>,
    pub diagnostics: Diagnostics,
}

impl Augmentation {
    pub fn write_diagnostics(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = DiagnosticsFile {
            n_per_domain: self.data.counts(),
            engression_final_loss: &self.diagnostics.engression_final_loss,
            quantile_fit: self.fit.as_ref(),
            kmm: self
                .diagnostics
                .kmm
                .iter()
                .map(|w| KmmDiagnostics {
                    feasible: w.feasible,
                    objective: w.objective_value,
                    bandwidth: w.bandwidth,
                    iterations: w.iterations,
                    weight_sum: w.zeta.sum(),
                })
                .collect(),
        };
        let text = toml::to_string(&file).map_err(|e| Error::Config(e.to_string()))?;
        std::fs::write(path.as_ref(), text).map_err(|e| Error::io(path.as_ref(), e))
    }
}

/// `(n0·M) × (K+1)` design: row `i·M + j` holds `(1, g_1(x_i, η), ..., g_K(x_i, η))`
/// with independent noise for every generator and draw.
pub fn build_synthetic_design(
    target: &DomainDataset,
    models: &[EngressionModel],
    m: usize,
    rng: &RngStream,
) -> Result<SyntheticDesign> {
    if models.is_empty() {
        return Err(Error::invalid("at least one source model is required"));
    }
    if m == 0 {
        return Err(Error::invalid("M must be at least 1"));
    }
    let n0 = target.len();
    let mut v = Array2::<f64>::ones((n0 * m, models.len() + 1));
    for (k, model) in models.iter().enumerate() {
        let draws = model.sample_rows(target.features().view(), m, &mut rng.child(k as u64))?;
        let flat = draws.into_shape_with_order(n0 * m).expect("contiguous");
        v.column_mut(k + 1).assign(&flat);
    }
    SyntheticDesign::new(v, n0, m)
}

/// Row `i` is `(1, ŷ_1(x_i), ..., ŷ_K(x_i))` for each source row `x_i`, where
/// `ŷ_j` is the mean of `m_pred` draws (or a single draw).
pub fn predict_source_features(
    models: &[EngressionModel],
    source: &DomainDataset,
    m_pred: usize,
    mode: PredictMode,
    rng: &RngStream,
) -> Result<Array2<f64>> {
    if m_pred == 0 {
        return Err(Error::invalid("M_pred must be at least 1"));
    }
    let mut out = Array2::<f64>::ones((source.len(), models.len() + 1));
    for (j, model) in models.iter().enumerate() {
        let mut stream = rng.child(j as u64);
        let col = match mode {
            PredictMode::Mean => model.conditional_mean(source.features().view(), m_pred, &mut stream)?,
            PredictMode::SingleDraw => model
                .sample_rows(source.features().view(), 1, &mut stream)?
                .column(0)
                .to_owned(),
        };
        out.column_mut(j + 1).assign(&col);
    }
    Ok(out)
}

/// Runs all five augmentation steps. Deterministic given `config.seed`.
pub fn run_augmentation(target: &DomainDataset, sources: &[DomainDataset], config: &PipelineConfig) -> Result<Augmentation> {
    config.validate()?;
    if target.len() < 2 {
        return Err(Error::invalid(format!("target needs n0 >= 2, got {}", target.len())));
    }
    if let Some((k, s)) = sources.iter().enumerate().find(|(_, s)| s.len() < 2) {
        return Err(Error::invalid(format!("source {} has n = {} < 2", k + 1, s.len())));
    }
    let d = common_dim(std::iter::once(target).chain(sources))?;

    if sources.is_empty() {
        return Ok(Augmentation {
            data: AugmentedDataset::target_only(target),
            fit: None,
            diagnostics: Diagnostics {
                models: Vec::new(),
                engression_final_loss: Vec::new(),
                kmm: Vec::new(),
                scaler: Scaler::identity(d),
                source_design: Vec::new(),
                generated_max_abs: Vec::new(),
            },
        });
    }

    let mut all = Vec::with_capacity(sources.len() + 1);
    all.push(target.clone());
    all.extend(sources.iter().cloned());
    let (scaled, scaler) = if config.standardize {
        standardize(&all)?
    } else {
        (all, Scaler::identity(d))
    };
    let target_std = &scaled[0];
    let sources_std = &scaled[1..];
    let root = RngStream::new(config.seed, 0);

    // Step 1
    let models: Vec<EngressionModel> = sources_std
        .par_iter()
        .enumerate()
        .map(|(k, src)| train_engression(src, &config.engression, &mut root.child(100 + k as u64)))
        .collect::<Result<_>>()
        .map_err(|e| e.at_step("step 1 (engression)"))?;

    // Step 2
    let design = build_synthetic_design(target_std, &models, config.m, &root.child(2))
        .map_err(|e| e.at_step("step 2 (synthetic design)"))?;

    // Step 3
    let fit = fit(target.responses().as_slice().unwrap(), &design, &config.quantile)
        .map_err(|e| e.at_step("step 3 (quantile matching)"))?;
    let beta = Array1::from(fit.beta.clone());

    // Step 4
    let source_design: Vec<Array2<f64>> = sources_std
        .iter()
        .enumerate()
        .map(|(k, src)| predict_source_features(&models, src, config.m_pred, config.predict_mode, &root.child(400 + k as u64)))
        .collect::<Result<_>>()
        .map_err(|e| e.at_step("step 4 (source predictions)"))?;

    let mut generated_max_abs = vec![0.0f64; models.len()];
    for block in std::iter::once(design.matrix()).chain(source_design.iter()) {
        for (j, slot) in generated_max_abs.iter_mut().enumerate() {
            let col_max = block.column(j + 1).iter().fold(0.0f64, |m, v| m.max(v.abs()));
            *slot = slot.max(col_max);
        }
    }

    // Step 5
    let kmm: Vec<DensityRatioWeights> = if config.use_density_ratio {
        sources_std
            .par_iter()
            .map(|src| estimate_weights(src, target_std, &config.kmm))
            .collect::<Result<_>>()
            .map_err(|e| e.at_step("step 5 (density ratio)"))?
    } else {
        Vec::new()
    };
    let weights: Vec<Array1<f64>> = if config.use_density_ratio {
        kmm.iter().map(|w| w.zeta.clone()).collect()
    } else {
        sources.iter().map(|s| Array1::ones(s.len())).collect()
    };

    let mut features = vec![target.features().view()];
    let mut y = vec![target.responses().clone()];
    let mut w = vec![Array1::ones(target.len())];
    let mut origin = vec![TARGET_DOMAIN; target.len()];
    let mut counts = vec![target.len()];
    for (k, src) in sources.iter().enumerate() {
        features.push(src.features().view());
        y.push(source_design[k].dot(&beta));
        w.push(weights[k].clone());
        origin.extend(std::iter::repeat_n(k as DomainId + 1, src.len()));
        counts.push(src.len());
    }
    let features = concatenate(Axis(0), &features).expect("common dimension checked");
    let y_views: Vec<_> = y.iter().map(|a| a.view()).collect();
    let w_views: Vec<_> = w.iter().map(|a| a.view()).collect();
    let data = AugmentedDataset {
        features,
        y_tilde: concatenate(Axis(0), &y_views).expect("1-d"),
        weights: concatenate(Axis(0), &w_views).expect("1-d"),
        origin,
        counts,
    };
    debug_assert_eq!(data.len(), data.counts.iter().sum::<usize>());
    debug_assert!(data.features.slice(s![..target.len(), ..]) == target.features());

    Ok(Augmentation {
        data,
        fit: Some(fit),
        diagnostics: Diagnostics {
            engression_final_loss: models.iter().map(|m| m.final_loss().unwrap_or(f64::NAN)).collect(),
            models,
            kmm,
            scaler,
            source_design,
            generated_max_abs,
        },
    })
}
