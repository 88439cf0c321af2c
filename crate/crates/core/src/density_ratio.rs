//! Kernel mean matching estimates of the target/source density ratio at the
//! source sample points.
//!
//! Minimizes `(1/n²) ζᵀGζ - (2/n²) ζᵀκ` over `ζ ∈ [0, B]^n` with
//! `|Σζ - n| <= n·ξ`, where `G` is the source Gram matrix and
//! `κ_i = (n/n0) Σ_j G(x_i, t_j)`. This is the squared RKHS distance between
//! the reweighted source mean embedding and the target mean embedding, up to
//! a constant; its unconstrained stationary point satisfies `Gζ = κ`.

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::data::DomainDataset;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bandwidth {
    #[default]
    MedianHeuristic,
    Fixed(f64),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Slack {
    /// `0.05 * B / sqrt(n)`
    #[default]
    Auto,
    Fixed(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KmmConfig {
    pub bandwidth: Bandwidth,
    /// Upper bound on each weight.
    pub b_zeta: f64,
    /// Relative slack on the weight sum.
    pub xi: Slack,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for KmmConfig {
    fn default() -> Self {
        Self {
            bandwidth: Bandwidth::MedianHeuristic,
            b_zeta: 1000.0,
            xi: Slack::Auto,
            max_iter: 5000,
            tol: 1e-7,
        }
    }
}

impl KmmConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.b_zeta > 0.0) {
            return Err(Error::invalid("B_zeta must be positive"));
        }
        if let Slack::Fixed(xi) = self.xi {
            if !(xi >= 0.0) {
                return Err(Error::invalid("xi must be nonnegative"));
            }
        }
        if let Bandwidth::Fixed(h) = self.bandwidth {
            if !(h > 0.0) {
                return Err(Error::invalid("bandwidth must be positive"));
            }
        }
        Ok(())
    }

    pub fn xi_for(&self, n: usize) -> f64 {
        match self.xi {
            Slack::Auto => 0.05 * self.b_zeta / (n as f64).sqrt(),
            Slack::Fixed(xi) => xi,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DensityRatioWeights {
    pub zeta: Array1<f64>,
    pub objective_value: f64,
    /// Box and sum constraints hold within 1e-6 at exit.
    pub feasible: bool,
    pub bandwidth: f64,
    pub iterations: usize,
}

/// Gaussian kernel matrix `exp(-|a_i - b_j|² / (2 h²))`.
pub fn rbf_gram(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>, bandwidth: f64) -> Result<Array2<f64>> {
    if !(bandwidth > 0.0) || !bandwidth.is_finite() {
        return Err(Error::invalid(format!("bandwidth must be positive, got {bandwidth}")));
    }
    if a.ncols() != b.ncols() {
        return Err(Error::invalid(format!(
            "kernel inputs have dimensions {} and {}",
            a.ncols(),
            b.ncols()
        )));
    }
    let gamma = 1.0 / (2.0 * bandwidth * bandwidth);
    let mut out = Array2::<f64>::zeros((a.nrows(), b.nrows()));
    for (i, ai) in a.rows().into_iter().enumerate() {
        for (j, bj) in b.rows().into_iter().enumerate() {
            let d2: f64 = ai.iter().zip(bj.iter()).map(|(x, y)| (x - y) * (x - y)).sum();
            out[[i, j]] = (-gamma * d2).exp();
        }
    }
    Ok(out)
}

/// Median of all pairwise Euclidean distances among the stacked rows.
/// Falls back to 1 when every point coincides.
pub fn median_heuristic(blocks: &[ArrayView2<'_, f64>]) -> f64 {
    let rows: Vec<_> = blocks.iter().flat_map(|b| b.rows()).collect();
    let n = rows.len();
    if n < 2 {
        return 1.0;
    }
    let mut dists = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            let d2: f64 = rows[i].iter().zip(rows[j].iter()).map(|(x, y)| (x - y) * (x - y)).sum();
            dists.push(d2.sqrt());
        }
    }
    let len = dists.len();
    let mid = len / 2;
    let (_, &mut upper, _) = dists.select_nth_unstable_by(mid, f64::total_cmp);
    let med = if len % 2 == 1 {
        upper
    } else {
        let lower = dists[..mid].iter().copied().fold(f64::MIN, f64::max);
        0.5 * (lower + upper)
    };
    if med > 0.0 {
        med
    } else {
        1.0
    }
}

/// Largest eigenvalue of a symmetric PSD matrix by power iteration.
fn power_iteration(a: &Array2<f64>, iters: usize) -> f64 {
    let n = a.nrows();
    let mut v = Array1::<f64>::from_elem(n, 1.0 / (n as f64).sqrt());
    let mut lambda = 0.0;
    for _ in 0..iters {
        let w = a.dot(&v);
        let norm = w.dot(&w).sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        lambda = v.dot(&w);
        v = w / norm;
    }
    lambda.max(a.dot(&v).dot(&v))
}

/// Feasible set `[0, B]^n ∩ {lo <= Σζ <= hi}`.
struct Feasible {
    upper: f64,
    lo: f64,
    hi: f64,
}

impl Feasible {
    fn project_box(&self, x: &mut Array1<f64>) {
        x.mapv_inplace(|v| v.clamp(0.0, self.upper));
    }

    fn project_slab(&self, x: &mut Array1<f64>) {
        let s = x.sum();
        let target = s.clamp(self.lo, self.hi);
        if target != s {
            let shift = (target - s) / x.len() as f64;
            x.mapv_inplace(|v| v + shift);
        }
    }

    fn violation(&self, x: &Array1<f64>) -> f64 {
        let boxv = x
            .iter()
            .map(|&v| (-v).max(v - self.upper).max(0.0))
            .fold(0.0, f64::max);
        let s = x.sum();
        boxv.max((self.lo - s).max(s - self.hi).max(0.0))
    }

    /// Dykstra's alternating projection, ending on the box.
    fn project(&self, v: &Array1<f64>) -> Array1<f64> {
        let n = v.len();
        let mut x = v.clone();
        let mut p = Array1::<f64>::zeros(n);
        let mut q = Array1::<f64>::zeros(n);
        for _ in 0..50 {
            let mut y = &x + &p;
            self.project_slab(&mut y);
            p = &x + &p - &y;
            let mut next = &y + &q;
            self.project_box(&mut next);
            q = &y + &q - &next;
            x = next;
            if self.violation(&x) < 1e-12 * (self.hi.max(1.0)) {
                break;
            }
        }
        x
    }
}

/// Estimates the density ratio `p_target / p_source` at each source row.
pub fn estimate_weights(source: &DomainDataset, target: &DomainDataset, config: &KmmConfig) -> Result<DensityRatioWeights> {
    config.validate()?;
    if source.dim() != target.dim() {
        return Err(Error::invalid(format!(
            "source has d={} but target has d={}",
            source.dim(),
            target.dim()
        )));
    }
    let n = source.len();
    let n0 = target.len();
    if n < 2 || n0 < 1 {
        return Err(Error::invalid(format!("KMM needs n_source >= 2 and n_target >= 1 (got {n}, {n0})")));
    }
    let xs = source.features().view();
    let xt = target.features().view();
    let bandwidth = match config.bandwidth {
        Bandwidth::MedianHeuristic => median_heuristic(&[xs, xt]),
        Bandwidth::Fixed(h) => h,
    };
    let g = rbf_gram(xs, xs, bandwidth)?;
    let cross = rbf_gram(xs, xt, bandwidth)?;
    let kappa = cross.sum_axis(ndarray::Axis(1)) * (n as f64 / n0 as f64);

    let nf = n as f64;
    let inv_n2 = 1.0 / (nf * nf);
    let objective = |z: &Array1<f64>| inv_n2 * (z.dot(&g.dot(z)) - 2.0 * z.dot(&kappa));
    let lipschitz = 2.0 * inv_n2 * power_iteration(&g, 100);
    let step = if lipschitz > 0.0 { 1.0 / lipschitz } else { 0.0 };

    let xi = config.xi_for(n);
    let set = Feasible {
        upper: config.b_zeta,
        lo: nf - nf * xi,
        hi: nf + nf * xi,
    };

    let mut zeta = set.project(&Array1::ones(n));
    let mut iterations = 0;
    while iterations < config.max_iter {
        let grad = (g.dot(&zeta) - &kappa) * (2.0 * inv_n2);
        let next = set.project(&(&zeta - &(grad * step)));
        iterations += 1;
        let change = (&next - &zeta).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        zeta = next;
        if change < config.tol {
            break;
        }
    }
    let feasible = set.violation(&zeta) <= 1e-6;
    Ok(DensityRatioWeights {
        objective_value: objective(&zeta),
        zeta,
        feasible,
        bandwidth,
        iterations,
    })
}

/// QP objective of KMM at an arbitrary `ζ`, for diagnostics.
pub fn kmm_objective(source: &DomainDataset, target: &DomainDataset, bandwidth: f64, zeta: &Array1<f64>) -> Result<f64> {
    let n = source.len() as f64;
    let g = rbf_gram(source.features().view(), source.features().view(), bandwidth)?;
    let cross = rbf_gram(source.features().view(), target.features().view(), bandwidth)?;
    let kappa = cross.sum_axis(ndarray::Axis(1)) * (n / target.len() as f64);
    Ok((zeta.dot(&g.dot(zeta)) - 2.0 * zeta.dot(&kappa)) / (n * n))
}

/// Writes `row,zeta` lines.
pub fn write_weights_csv(path: impl AsRef<Path>, weights: &DensityRatioWeights) -> Result<()> {
    let mut w = csv::Writer::from_path(path.as_ref())?;
    w.write_record(["row", "zeta"])?;
    for (i, z) in weights.zeta.iter().enumerate() {
        w.write_record([i.to_string(), z.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(path.as_ref(), e))
}
