use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{fit_weighted_krr, fit_weighted_mlp, mse, FittedModel, Regressor, WeightedTrainingSet};
use crate::data::RngStream;
use crate::density_ratio::median_heuristic;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LearnerKind {
    Krr,
    Mlp,
}

impl LearnerKind {
    pub fn name(self) -> &'static str {
        match self {
            LearnerKind::Krr => "krr",
            LearnerKind::Mlp => "mlp",
        }
    }
}

impl std::str::FromStr for LearnerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "krr" => Ok(LearnerKind::Krr),
            "mlp" | "nn" => Ok(LearnerKind::Mlp),
            other => Err(Error::invalid(format!("unknown learner `{other}` (expected krr or mlp)"))),
        }
    }
}

/// One hyperparameter setting.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Candidate {
    /// Gaussian KRR; bandwidth is the median heuristic on the fitting rows.
    Krr { lambda: f64 },
    Mlp { hidden: Vec<usize>, lr: f64, epochs: usize },
}

impl Candidate {
    /// Larger means more regularized; used to break validation-error ties.
    fn strength(&self) -> (f64, f64) {
        match self {
            Candidate::Krr { lambda } => (*lambda, 0.0),
            Candidate::Mlp { hidden, lr, .. } => (-(hidden.iter().sum::<usize>() as f64), -lr),
        }
    }

    pub fn kind(&self) -> LearnerKind {
        match self {
            Candidate::Krr { .. } => LearnerKind::Krr,
            Candidate::Mlp { .. } => LearnerKind::Mlp,
        }
    }

    pub fn fit(&self, data: &WeightedTrainingSet, rng: &mut RngStream) -> Result<FittedModel> {
        match self {
            Candidate::Krr { lambda } => {
                let h = median_heuristic(&[data.features().view()]);
                fit_weighted_krr(data, *lambda, h).map(FittedModel::Krr)
            }
            Candidate::Mlp { hidden, lr, epochs } => {
                fit_weighted_mlp(data, hidden, *lr, *epochs, rng).map(FittedModel::Mlp)
            }
        }
    }
}

/// Penalties `3^k · 0.1 / n` for `k = -2..=6`.
pub fn krr_grid(n: usize) -> Vec<Candidate> {
    (-2..=6)
        .map(|k| Candidate::Krr {
            lambda: 3f64.powi(k) * 0.1 / n as f64,
        })
        .collect()
}

/// One hidden layer of 10, 50 or 100 units crossed with learning rates
/// 1e-4, 1e-3, 1e-2.
pub fn mlp_grid(epochs: usize) -> Vec<Candidate> {
    let mut out = Vec::with_capacity(9);
    for hidden in [10, 50, 100] {
        for lr in [1e-4, 1e-3, 1e-2] {
            out.push(Candidate::Mlp {
                hidden: vec![hidden],
                lr,
                epochs,
            });
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub candidates: Vec<Candidate>,
    pub mean_mse: Vec<f64>,
    pub chosen: usize,
    pub folds: usize,
}

impl CvReport {
    pub fn chosen_candidate(&self) -> &Candidate {
        &self.candidates[self.chosen]
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let text = toml::to_string(self).map_err(|e| Error::Config(e.to_string()))?;
        std::fs::write(path.as_ref(), text).map_err(|e| Error::io(path.as_ref(), e))
    }
}

/// K-fold cross-validation over `grid` on a seeded row shuffle.
///
/// Training folds use the row weights; validation error is the plain mean
/// squared error. Ties go to the most regularized candidate.
pub fn cross_validate(
    data: &WeightedTrainingSet,
    grid: &[Candidate],
    folds: usize,
    rng: &mut RngStream,
) -> Result<CvReport> {
    let n = data.len();
    if grid.is_empty() {
        return Err(Error::invalid("empty hyperparameter grid"));
    }
    if folds < 2 || folds > n {
        return Err(Error::invalid(format!("need 2 <= folds <= N, got folds={folds}, N={n}")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut order);
    let splits: Vec<(Vec<usize>, Vec<usize>)> = (0..folds)
        .map(|f| {
            let lo = f * n / folds;
            let hi = (f + 1) * n / folds;
            let valid = order[lo..hi].to_vec();
            let mut train: Vec<usize> = order[..lo].iter().chain(&order[hi..]).copied().collect();
            train.sort_unstable();
            (train, valid)
        })
        .collect();
    let base = rng.child(0x5eed);

    let mean_mse = grid
        .par_iter()
        .enumerate()
        .map(|(c, cand)| {
            let mut total = 0.0;
            for (f, (train, valid)) in splits.iter().enumerate() {
                let train_set = data.subset(train);
                if !train_set.weights().iter().any(|&w| w > 0.0) {
                    return Err(Error::invalid("a training fold has no positive weight"));
                }
                let mut fold_rng = base.child((c * folds + f) as u64);
                let model = cand.fit(&train_set, &mut fold_rng)?;
                let valid_set = data.subset(valid);
                let pred = model.predict(valid_set.features().view());
                total += mse(&pred, valid_set.responses());
            }
            Ok(total / folds as f64)
        })
        .collect::<Result<Vec<f64>>>()?;

    let mut by_strength: Vec<usize> = (0..grid.len()).collect();
    by_strength.sort_by(|&a, &b| {
        let (sa, sb) = (grid[a].strength(), grid[b].strength());
        sb.0.total_cmp(&sa.0).then(sb.1.total_cmp(&sa.1)).then(a.cmp(&b))
    });
    let mut chosen = by_strength[0];
    for &c in &by_strength[1..] {
        if mean_mse[c] < mean_mse[chosen] {
            chosen = c;
        }
    }
    Ok(CvReport {
        candidates: grid.to_vec(),
        mean_mse,
        chosen,
        folds,
    })
}

/// Cross-validates the standard grid for `kind`, then refits the winner on
/// all rows.
pub fn tune_and_fit(
    data: &WeightedTrainingSet,
    kind: LearnerKind,
    mlp_epochs: usize,
    folds: usize,
    rng: &mut RngStream,
) -> Result<(FittedModel, CvReport)> {
    let grid = match kind {
        LearnerKind::Krr => krr_grid(data.len()),
        LearnerKind::Mlp => mlp_grid(mlp_epochs),
    };
    let report = cross_validate(data, &grid, folds, rng)?;
    let mut final_rng = rng.child(0xf17);
    let model = report.chosen_candidate().fit(data, &mut final_rng)?;
    Ok((model, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{Array1, Array2};

    fn toy(n: usize, rng: &mut RngStream) -> WeightedTrainingSet {
        let x = Array2::from_shape_simple_fn((n, 2), || rng.normal());
        let y = x.column(0).mapv(|v| (2.0 * v).sin()) + Array1::from_shape_simple_fn(n, || 0.1 * rng.normal());
        WeightedTrainingSet::new(x, y, Array1::ones(n)).unwrap()
    }

    #[test]
    fn grids_match_published_sizes() {
        let g = krr_grid(100);
        assert_eq!(g.len(), 9);
        assert_eq!(g[0], Candidate::Krr { lambda: 0.1 / 9.0 / 100.0 });
        assert_eq!(g[8], Candidate::Krr { lambda: 729.0 * 0.1 / 100.0 });
        let m = mlp_grid(1000);
        assert_eq!(m.len(), 9);
        assert!(m.contains(&Candidate::Mlp { hidden: vec![50], lr: 1e-3, epochs: 1000 }));
    }

    #[test]
    fn single_candidate_is_chosen() {
        let mut rng = RngStream::new(1, 0);
        let data = toy(30, &mut rng);
        let grid = vec![Candidate::Krr { lambda: 0.01 }];
        let r = cross_validate(&data, &grid, 5, &mut rng).unwrap();
        assert_eq!(r.chosen, 0);
        assert_eq!(r.mean_mse.len(), 1);
    }

    #[test]
    fn all_zero_response_ties_go_to_strongest_penalty() {
        let mut rng = RngStream::new(2, 0);
        let x = Array2::from_shape_simple_fn((25, 2), || rng.normal());
        let data = WeightedTrainingSet::new(x, Array1::zeros(25), Array1::ones(25)).unwrap();
        let grid = krr_grid(25);
        let r = cross_validate(&data, &grid, 5, &mut rng).unwrap();
        assert!(r.mean_mse.iter().all(|&v| v == 0.0));
        assert_eq!(r.chosen, 8);
    }

    #[test]
    fn selection_minimizes_validation_error_and_is_seeded() {
        let mut rng = RngStream::new(3, 0);
        let data = toy(60, &mut rng);
        let grid = krr_grid(60);
        let a = cross_validate(&data, &grid, 5, &mut RngStream::new(9, 1)).unwrap();
        let b = cross_validate(&data, &grid, 5, &mut RngStream::new(9, 1)).unwrap();
        assert_eq!(a, b);
        let best = a.mean_mse.iter().cloned().fold(f64::INFINITY, f64::min);
        assert_eq!(a.mean_mse[a.chosen], best);
    }

    #[test]
    fn too_many_folds_is_an_error() {
        let mut rng = RngStream::new(4, 0);
        let data = toy(4, &mut rng);
        assert!(cross_validate(&data, &krr_grid(4), 5, &mut rng).is_err());
        assert!(cross_validate(&data, &[], 2, &mut rng).is_err());
    }

    #[test]
    fn learner_names_parse() {
        assert_eq!("krr".parse::<LearnerKind>().unwrap(), LearnerKind::Krr);
        assert_eq!("MLP".parse::<LearnerKind>().unwrap(), LearnerKind::Mlp);
        assert!("xgboost".parse::<LearnerKind>().is_err());
    }

    #[test]
    fn mlp_tie_break_prefers_smaller_networks() {
        let small = Candidate::Mlp { hidden: vec![10], lr: 1e-3, epochs: 1 };
        let big = Candidate::Mlp { hidden: vec![100], lr: 1e-3, epochs: 1 };
        assert!(small.strength() > big.strength());
    }
}
