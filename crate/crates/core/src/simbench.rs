//! Monte Carlo benchmark comparing target-only, augmented and oracle training.
//!
//! Covariates are 6-dimensional. The two source domains draw `X ~ N(1, I)`
//! with responses `sin(3θᵀX) + 1 + ε` and `cos(3θᵀX) + 1 + ε`; the target
//! draws `X ~ N(0, I/4)` with `sin(3θᵀX)/3 - 3 + ε`, where
//! `θ = (1, 1/2, ..., 1/6)` and `ε ~ N(0, 0.5²)`.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{Array1, Array2};
use rand::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{DomainDataset, RngStream};
use crate::error::{Error, Result};
use crate::learners::{evaluate_mse, tune_and_fit, LearnerKind, WeightedTrainingSet};
use crate::pipeline::{run_augmentation, PipelineConfig};

pub const DIM: usize = 6;
pub const TEST_SIZE: usize = 2000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    TargetOnly,
    Tlcqm,
    Oracle,
}

impl Regime {
    pub const ALL: [Regime; 3] = [Regime::TargetOnly, Regime::Tlcqm, Regime::Oracle];

    pub fn name(self) -> &'static str {
        match self {
            Regime::TargetOnly => "target_only",
            Regime::Tlcqm => "tlcqm",
            Regime::Oracle => "oracle",
        }
    }
}

impl std::str::FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Regime::ALL
            .into_iter()
            .find(|r| r.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown regime `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimScenario {
    pub n0: usize,
    pub ratio: f64,
    pub noise_sd: f64,
}

impl SimScenario {
    pub fn new(n0: usize, ratio: f64) -> Self {
        Self { n0, ratio, noise_sd: 0.5 }
    }

    pub fn source_size(&self) -> usize {
        (self.ratio * self.n0 as f64).round() as usize
    }

    pub fn theta() -> [f64; DIM] {
        std::array::from_fn(|j| 1.0 / (j + 1) as f64)
    }
}

/// One draw of every dataset a repetition needs.
#[derive(Clone, Debug)]
pub struct ScenarioData {
    pub target: DomainDataset,
    pub sources: Vec<DomainDataset>,
    /// Target-law sample of size `n0 + Σ n_k`.
    pub oracle: DomainDataset,
    pub test: DomainDataset,
}

fn theta_dot(x: &[f64]) -> f64 {
    SimScenario::theta().iter().zip(x).map(|(t, v)| t * v).sum()
}

/// Noise-free target response `sin(3θᵀx)/3 - 3`.
pub fn target_regression(x: &[f64]) -> f64 {
    (3.0 * theta_dot(x)).sin() / 3.0 - 3.0
}

/// Noise-free response of source `k` (1 or 2).
pub fn source_regression(k: u32, x: &[f64]) -> f64 {
    let u = 3.0 * theta_dot(x);
    if k == 1 {
        u.sin() + 1.0
    } else {
        u.cos() + 1.0
    }
}

fn draw_domain(
    id: u32,
    n: usize,
    noise_sd: f64,
    shift: f64,
    scale: f64,
    f: impl Fn(&[f64]) -> f64,
    rng: &mut RngStream,
) -> Result<DomainDataset> {
    let x = Array2::from_shape_simple_fn((n, DIM), || shift + scale * rng.normal());
    let y = Array1::from_iter(
        x.rows()
            .into_iter()
            .map(|r| f(r.as_slice().unwrap()) + noise_sd * rng.normal()),
    );
    DomainDataset::new(x, y, id)
}

fn target_domain(n: usize, noise_sd: f64, rng: &mut RngStream) -> Result<DomainDataset> {
    draw_domain(0, n, noise_sd, 0.0, 0.5, target_regression, rng)
}

fn source_domain(k: u32, n: usize, noise_sd: f64, rng: &mut RngStream) -> Result<DomainDataset> {
    draw_domain(k, n, noise_sd, 1.0, 1.0, |x| source_regression(k, x), rng)
}

pub fn generate_scenario(scenario: &SimScenario, rng: &RngStream) -> Result<ScenarioData> {
    if scenario.n0 < 2 || scenario.source_size() < 2 {
        return Err(Error::invalid("scenario needs n0 >= 2 and round(ratio·n0) >= 2"));
    }
    let nk = scenario.source_size();
    let sd = scenario.noise_sd;
    Ok(ScenarioData {
        target: target_domain(scenario.n0, sd, &mut rng.child(0))?,
        sources: vec![
            source_domain(1, nk, sd, &mut rng.child(1))?,
            source_domain(2, nk, sd, &mut rng.child(2))?,
        ],
        oracle: target_domain(scenario.n0 + 2 * nk, sd, &mut rng.child(3))?,
        test: target_domain(TEST_SIZE, sd, &mut rng.child(4))?,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchConfig {
    pub n0: Vec<usize>,
    pub ratio: Vec<f64>,
    pub repetitions: usize,
    pub learners: Vec<LearnerKind>,
    pub folds: usize,
    pub mlp_epochs: usize,
    /// Fraction of failed repetitions above which the run aborts.
    pub max_failure_rate: f64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            n0: vec![50, 100],
            ratio: vec![5.0, 10.0],
            repetitions: 50,
            learners: vec![LearnerKind::Krr, LearnerKind::Mlp],
            folds: 5,
            mlp_epochs: 1000,
            max_failure_rate: 0.1,
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n0.is_empty() || self.ratio.is_empty() || self.learners.is_empty() {
            return Err(Error::invalid("n0, ratio and learners must be non-empty"));
        }
        if self.repetitions == 0 {
            return Err(Error::invalid("repetitions must be at least 1"));
        }
        if self.n0.iter().any(|&n| n < 2) || self.ratio.iter().any(|&r| !(r >= 1.0) || !r.is_finite()) {
            return Err(Error::invalid("need n0 >= 2 and finite ratio >= 1"));
        }
        if self.folds < 2 || self.mlp_epochs == 0 {
            return Err(Error::invalid("need folds >= 2 and mlp_epochs >= 1"));
        }
        if !(0.0..=1.0).contains(&self.max_failure_rate) {
            return Err(Error::invalid("max_failure_rate must lie in [0, 1]"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RepRecord {
    pub repetition: usize,
    pub learner: LearnerKind,
    pub regime: Regime,
    pub n0: usize,
    pub ratio: f64,
    pub mse: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub learner: LearnerKind,
    pub regime: Regime,
    pub n0: usize,
    pub ratio: f64,
    pub mean_mse: f64,
    pub sd_mse: f64,
    pub repetitions: usize,
}

#[derive(Clone, Debug)]
pub struct BenchResult {
    pub records: Vec<RepRecord>,
    pub summary: Vec<SummaryRow>,
    /// `(n0, ratio, repetition, message)` for each skipped repetition.
    pub failures: Vec<(usize, f64, usize, String)>,
}

impl BenchResult {
    pub fn write_results_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        write_rows(path.as_ref(), &self.records)
    }

    pub fn write_summary_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        write_rows(path.as_ref(), &self.summary)
    }

    pub fn find(&self, learner: LearnerKind, regime: Regime, n0: usize, ratio: f64) -> Option<&SummaryRow> {
        self.summary
            .iter()
            .find(|s| s.learner == learner && s.regime == regime && s.n0 == n0 && s.ratio == ratio)
    }
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_results_csv(path: impl AsRef<Path>) -> Result<Vec<RepRecord>> {
    let mut r = csv::Reader::from_path(path.as_ref())?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

/// Mean and sample standard deviation per (learner, regime, n0, ratio).
pub fn summarize(records: &[RepRecord]) -> Vec<SummaryRow> {
    let mut groups: BTreeMap<(LearnerKind, Regime, usize, u64), Vec<f64>> = BTreeMap::new();
    for r in records {
        groups
            .entry((r.learner, r.regime, r.n0, r.ratio.to_bits()))
            .or_default()
            .push(r.mse);
    }
    groups
        .into_iter()
        .map(|((learner, regime, n0, ratio), v)| {
            let n = v.len() as f64;
            let mean = v.iter().sum::<f64>() / n;
            let sd = if v.len() > 1 {
                (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
            } else {
                0.0
            };
            SummaryRow {
                learner,
                regime,
                n0,
                ratio: f64::from_bits(ratio),
                mean_mse: mean,
                sd_mse: sd,
                repetitions: v.len(),
            }
        })
        .collect()
}

fn learner_tag(kind: LearnerKind) -> u64 {
    match kind {
        LearnerKind::Krr => 0,
        LearnerKind::Mlp => 1,
    }
}

fn regime_tag(regime: Regime) -> u64 {
    match regime {
        Regime::TargetOnly => 0,
        Regime::Tlcqm => 1,
        Regime::Oracle => 2,
    }
}

/// One repetition of one scenario: every requested learner under every regime.
pub fn run_repetition(
    scenario: &SimScenario,
    bench: &BenchConfig,
    pipeline: &PipelineConfig,
    rng: &RngStream,
) -> Result<Vec<(LearnerKind, Regime, f64)>> {
    let data = generate_scenario(scenario, &rng.child(0))?;
    let mut pcfg = pipeline.clone();
    pcfg.seed = rng.child(1).next_u64();
    let augmented = run_augmentation(&data.target, &data.sources, &pcfg)?.data.to_training_set()?;
    let target_only = WeightedTrainingSet::unweighted(&data.target)?;
    let oracle = WeightedTrainingSet::unweighted(&data.oracle)?;

    let mut out = Vec::with_capacity(bench.learners.len() * 3);
    for &kind in &bench.learners {
        for regime in Regime::ALL {
            let train = match regime {
                Regime::TargetOnly => &target_only,
                Regime::Tlcqm => &augmented,
                Regime::Oracle => &oracle,
            };
            let mut cv_rng = rng.child(16 + 4 * learner_tag(kind) + regime_tag(regime));
            let (model, _) = tune_and_fit(train, kind, bench.mlp_epochs, bench.folds, &mut cv_rng)?;
            out.push((kind, regime, evaluate_mse(&model, &data.test)?));
        }
    }
    Ok(out)
}

/// Runs every (n0, ratio) cell for `bench.repetitions` repetitions.
///
/// Repetition `r` of cell `c` uses the stream `RngStream::new(seed, c)`
/// child `r`, so any repetition can be rerun alone.
pub fn run_benchmark(bench: &BenchConfig, pipeline: &PipelineConfig, seed: u64) -> Result<BenchResult> {
    bench.validate()?;
    pipeline.validate()?;
    let mut jobs = Vec::new();
    for (i, &n0) in bench.n0.iter().enumerate() {
        for (j, &ratio) in bench.ratio.iter().enumerate() {
            let cell = (i * bench.ratio.len() + j) as u64;
            for rep in 0..bench.repetitions {
                jobs.push((SimScenario::new(n0, ratio), cell, rep));
            }
        }
    }
    let outcomes: Vec<_> = jobs
        .par_iter()
        .map(|(sc, cell, rep)| run_repetition(sc, bench, pipeline, &RngStream::new(seed, *cell).child(*rep as u64)))
        .collect();

    let mut records = Vec::new();
    let mut failures = Vec::new();
    for ((sc, _, rep), outcome) in jobs.iter().zip(outcomes) {
        match outcome {
            Ok(rows) => records.extend(rows.into_iter().map(|(learner, regime, mse)| RepRecord {
                repetition: *rep,
                learner,
                regime,
                n0: sc.n0,
                ratio: sc.ratio,
                mse,
            })),
            Err(e) => failures.push((sc.n0, sc.ratio, *rep, e.to_string())),
        }
    }
    if failures.len() as f64 > bench.max_failure_rate * jobs.len() as f64 {
        let (n0, ratio, rep, msg) = &failures[0];
        return Err(Error::TooManyFailures {
            failed: failures.len(),
            total: jobs.len(),
            first: format!("n0={n0}, ratio={ratio}, repetition {rep}: {msg}"),
        });
    }
    let summary = summarize(&records);
    Ok(BenchResult {
        records,
        summary,
        failures,
    })
}
