//! Linear calibration of generated responses by quantile matching.
//!
//! Given `n0` target responses and, for each target covariate, `M` rows of
//! generated source responses `v = (1, y^(1), ..., y^(K))`, find `beta`
//! minimizing the mean squared gap between the sorted target responses and
//! the sorted values `betaᵀv`. The target sample is `M` times smaller than
//! the prediction sample, so prediction rank `r` (1-based) is paired with
//! target order statistic `ceil(r / M)`.
//!
//! The objective has no closed form. The solver alternates between two
//! exact block minimizations: fix the pairing by sorting the current
//! predictions, then refit `beta` by least squares against the paired
//! target order statistics. Neither step can increase the objective.

use std::cmp::Ordering;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1};
use rayon::slice::ParallelSliceMut;
use serde::{Deserialize, Serialize};

use crate::data::RngStream;
use crate::error::{Error, Result};
use crate::linalg::{nnls_gram, solve_gram};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintMode {
    #[default]
    Unconstrained,
    /// Source coefficients `beta[1..]` are kept nonnegative; the intercept is free.
    NonnegSlopes,
}

/// Generated responses at the target covariates, one row per `(i, j)` with
/// `i` the target observation and `j` the draw: row `i * m + j`.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticDesign {
    v: Array2<f64>,
    n0: usize,
    m: usize,
}

impl SyntheticDesign {
    /// `v` must carry the intercept column of ones first.
    pub fn new(v: Array2<f64>, n0: usize, m: usize) -> Result<Self> {
        if n0 == 0 || m == 0 {
            return Err(Error::invalid("design needs n0 >= 1 and M >= 1"));
        }
        if v.nrows() != n0 * m {
            return Err(Error::invalid(format!(
                "design has {} rows, expected n0*M = {}",
                v.nrows(),
                n0 * m
            )));
        }
        if v.ncols() < 2 {
            return Err(Error::invalid("design needs an intercept and at least one source column"));
        }
        if v.column(0).iter().any(|&c| c != 1.0) {
            return Err(Error::invalid("design column 0 must be all ones"));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("design has non-finite entries"));
        }
        Ok(Self { v, n0, m })
    }

    /// Builds the design from the `n0*M × K` matrix of generated responses.
    pub fn from_sources(sources: Array2<f64>, n0: usize, m: usize) -> Result<Self> {
        let (rows, k) = sources.dim();
        let mut v = Array2::<f64>::ones((rows, k + 1));
        v.slice_mut(ndarray::s![.., 1..]).assign(&sources);
        Self::new(v, n0, m)
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.v
    }

    pub fn n0(&self) -> usize {
        self.n0
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn num_sources(&self) -> usize {
        self.v.ncols() - 1
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantileMatchFit {
    pub beta: Vec<f64>,
    /// Objective at the initial point and after every update.
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub constraint_mode: ConstraintMode,
    /// Set when a least-squares step fell back to the pseudo-inverse.
    pub rank_deficient: bool,
}

impl QuantileMatchFit {
    pub fn final_objective(&self) -> f64 {
        *self.objective_trace.last().expect("trace is never empty")
    }

    /// `betaᵀ row` for one design-like row `(1, y^(1), ..., y^(K))`.
    pub fn apply(&self, row: ArrayView1<'_, f64>) -> f64 {
        self.beta.iter().zip(row.iter()).map(|(b, v)| b * v).sum()
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let text = toml::to_string(self).map_err(|e| Error::Config(e.to_string()))?;
        std::fs::write(path.as_ref(), text).map_err(|e| Error::io(path.as_ref(), e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| Error::io(path.as_ref(), e))?;
        toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitOptions {
    pub constraint_mode: ConstraintMode,
    pub tol: f64,
    pub max_iter: usize,
    /// Ridge penalty on the source coefficients, added to the mean objective.
    pub ridge: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            constraint_mode: ConstraintMode::Unconstrained,
            tol: 1e-8,
            max_iter: 200,
            ridge: 0.0,
        }
    }
}

fn sorted(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.par_sort_unstable_by(f64::total_cmp);
    v
}

/// Mean squared gap between sorted predictions and the target order
/// statistics they pair with. `sorted_target` must be ascending.
fn paired_gap(sorted_target: &[f64], sorted_pred: &[f64]) -> f64 {
    let m = sorted_pred.len() / sorted_target.len();
    let total: f64 = sorted_pred
        .iter()
        .enumerate()
        .map(|(r, p)| {
            let d = sorted_target[r / m] - p;
            d * d
        })
        .sum();
    total / sorted_pred.len() as f64
}

/// Empirical quantile-matching objective between `n0` target responses and
/// `n0 * M` predictions.
pub fn empirical_objective(target_y: &[f64], predictions: &[f64]) -> Result<f64> {
    let n0 = target_y.len();
    if n0 == 0 || predictions.is_empty() || predictions.len() % n0 != 0 {
        return Err(Error::invalid(format!(
            "prediction count {} is not a positive multiple of target count {}",
            predictions.len(),
            n0
        )));
    }
    if target_y.iter().chain(predictions).any(|v| !v.is_finite()) {
        return Err(Error::invalid("objective inputs must be finite"));
    }
    Ok(paired_gap(&sorted(target_y), &sorted(predictions)))
}

struct Solver<'a> {
    v: &'a Array2<f64>,
    sorted_target: Vec<f64>,
    m: usize,
    gram: Array2<f64>,
    free: Vec<bool>,
    mode: ConstraintMode,
    ridge: f64,
    rank_deficient: bool,
}

impl Solver<'_> {
    /// Least squares (or slope-constrained least squares) of `z` on the design.
    fn refit(&mut self, z: &[f64]) -> Array1<f64> {
        let n = z.len() as f64;
        let p = self.v.ncols();
        let mut rhs = Array1::<f64>::zeros(p);
        for (row, &zr) in self.v.rows().into_iter().zip(z) {
            for k in 0..p {
                rhs[k] += row[k] * zr;
            }
        }
        rhs /= n;
        let sol = match self.mode {
            ConstraintMode::Unconstrained => solve_gram(&self.gram, &rhs),
            ConstraintMode::NonnegSlopes => nnls_gram(&self.gram, &rhs, &self.free),
        };
        self.rank_deficient |= sol.rank_deficient;
        sol.x
    }

    /// Prediction ranks (ties by row index) and the penalized objective.
    fn rank(&self, beta: &Array1<f64>) -> (Vec<usize>, f64) {
        let preds = self.v.dot(beta);
        let mut keyed: Vec<(f64, usize)> = preds.iter().copied().zip(0..).collect();
        keyed.par_sort_unstable_by(|a, b| match a.0.total_cmp(&b.0) {
            Ordering::Equal => a.1.cmp(&b.1),
            o => o,
        });
        let total: f64 = keyed
            .iter()
            .enumerate()
            .map(|(r, &(p, _))| {
                let d = self.sorted_target[r / self.m] - p;
                d * d
            })
            .sum();
        let penalty = self.ridge * beta.iter().skip(1).map(|b| b * b).sum::<f64>();
        let order = keyed.into_iter().map(|(_, i)| i).collect();
        (order, total / preds.len() as f64 + penalty)
    }

    fn pseudo_targets(&self, order: &[usize]) -> Vec<f64> {
        let mut z = vec![0.0; order.len()];
        for (r, &row) in order.iter().enumerate() {
            z[row] = self.sorted_target[r / self.m];
        }
        z
    }
}

/// Fits the calibration coefficients by alternating sort-pairing and least
/// squares, starting from the ordinary least-squares fit of the replicated
/// target responses on the design.
pub fn fit(target_y: &[f64], design: &SyntheticDesign, options: &FitOptions) -> Result<QuantileMatchFit> {
    let n0 = design.n0();
    let m = design.m();
    if target_y.len() != n0 {
        return Err(Error::invalid(format!(
            "target has {} responses but the design was built for n0 = {n0}",
            target_y.len()
        )));
    }
    if n0 < 2 {
        return Err(Error::invalid("quantile matching needs n0 >= 2"));
    }
    if target_y.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("target responses must be finite"));
    }
    if !(options.tol >= 0.0) || !(options.ridge >= 0.0) {
        return Err(Error::invalid("tol and ridge must be nonnegative"));
    }
    let v = design.matrix();
    let p = v.ncols();
    let all_constant = (1..p).all(|k| {
        let col = v.column(k);
        col.iter().all(|&x| x == col[0])
    });
    if all_constant {
        return Err(Error::invalid("every source column of the design is constant"));
    }

    let rows = v.nrows() as f64;
    let mut gram = v.t().dot(v) / rows;
    for k in 1..p {
        gram[[k, k]] += options.ridge;
    }
    let mut solver = Solver {
        v,
        sorted_target: sorted(target_y),
        m,
        gram,
        free: (0..p).map(|k| k == 0).collect(),
        mode: options.constraint_mode,
        ridge: options.ridge,
        rank_deficient: false,
    };

    let replicated: Vec<f64> = target_y
        .iter()
        .flat_map(|&y| std::iter::repeat_n(y, m))
        .collect();
    let mut beta = solver.refit(&replicated);
    let (mut order, mut objective) = solver.rank(&beta);
    let mut trace = vec![objective];
    let mut iterations = 0;
    let mut converged = false;

    while iterations < options.max_iter {
        let z = solver.pseudo_targets(&order);
        let next = solver.refit(&z);
        let (next_order, next_objective) = solver.rank(&next);
        iterations += 1;
        trace.push(next_objective);
        beta = next;
        order = next_order;
        let change = (next_objective - objective).abs();
        objective = next_objective;
        if change < options.tol {
            converged = true;
            break;
        }
    }

    Ok(QuantileMatchFit {
        beta: beta.to_vec(),
        objective_trace: trace,
        iterations,
        converged,
        constraint_mode: options.constraint_mode,
        rank_deficient: solver.rank_deficient,
    })
}

/// Monte Carlo estimate of the population objective at `beta`: `n_mc`
/// target draws against `n_mc` draws of `betaᵀV`.
///
/// All target draws are taken before the `V` draws, so two calls with
/// equal-seeded streams see the same underlying randomness.
pub fn estimate_population_objective<T, V>(
    beta: &[f64],
    mut target_sampler: T,
    mut v_sampler: V,
    n_mc: usize,
    rng: &mut RngStream,
) -> Result<f64>
where
    T: FnMut(&mut RngStream) -> f64,
    V: FnMut(&mut RngStream) -> Vec<f64>,
{
    if n_mc < 100 {
        return Err(Error::invalid(format!("n_mc must be at least 100, got {n_mc}")));
    }
    let targets: Vec<f64> = (0..n_mc).map(|_| target_sampler(rng)).collect();
    let mut preds = Vec::with_capacity(n_mc);
    for _ in 0..n_mc {
        let v = v_sampler(rng);
        if v.len() != beta.len() {
            return Err(Error::invalid(format!(
                "V sampler returned {} entries for a beta of length {}",
                v.len(),
                beta.len()
            )));
        }
        preds.push(beta.iter().zip(&v).map(|(b, x)| b * x).sum());
    }
    empirical_objective(&targets, &preds)
}
