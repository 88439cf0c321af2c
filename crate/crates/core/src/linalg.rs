//! Small dense solvers on top of nalgebra.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use ndarray::{Array1, Array2};

use crate::error::{Error, Result};

pub(crate) fn to_na(a: &Array2<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]])
}

/// Solution of a symmetric positive semidefinite system `q x = c`.
#[derive(Clone, Debug)]
pub(crate) struct GramSolution {
    pub x: Array1<f64>,
    /// True when the minimum-norm pseudo-inverse had to drop directions.
    pub rank_deficient: bool,
}

/// Minimum-norm solution of `q x = c` for symmetric PSD `q`, via its
/// eigendecomposition. Eigenvalues below `1e-12 * max` are treated as zero.
pub(crate) fn solve_gram(q: &Array2<f64>, c: &Array1<f64>) -> GramSolution {
    let p = c.len();
    if p == 0 {
        return GramSolution {
            x: Array1::zeros(0),
            rank_deficient: false,
        };
    }
    let mut sym = to_na(q);
    // symmetrize against round-off
    for i in 0..p {
        for j in 0..i {
            let v = 0.5 * (sym[(i, j)] + sym[(j, i)]);
            sym[(i, j)] = v;
            sym[(j, i)] = v;
        }
    }
    let eig = SymmetricEigen::new(sym);
    let max = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let cutoff = 1e-12 * max;
    let rhs = DVector::from_iterator(p, c.iter().copied());
    let proj = eig.eigenvectors.transpose() * rhs;
    let mut rank_deficient = max == 0.0;
    let mut scaled = DVector::zeros(p);
    for k in 0..p {
        let lam = eig.eigenvalues[k];
        if lam > cutoff && max > 0.0 {
            scaled[k] = proj[k] / lam;
        } else {
            rank_deficient = true;
        }
    }
    let x = &eig.eigenvectors * scaled;
    GramSolution {
        x: x.iter().copied().collect(),
        rank_deficient,
    }
}

/// Minimizes `0.5 xᵀ q x - cᵀ x` subject to `x_j >= 0` wherever `free[j]`
/// is false, by the Lawson-Hanson active-set method in Gram form.
///
/// Free coordinates start (and stay) in the passive set.
pub(crate) fn nnls_gram(q: &Array2<f64>, c: &Array1<f64>, free: &[bool]) -> GramSolution {
    let p = c.len();
    assert_eq!(free.len(), p);
    let scale = c.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-300);
    let tol = 1e-12 * scale;
    let mut passive: Vec<bool> = free.to_vec();
    let mut x = Array1::<f64>::zeros(p);
    let mut rank_deficient = false;

    let solve_passive = |passive: &[bool], rank_flag: &mut bool| -> Array1<f64> {
        let idx: Vec<usize> = (0..p).filter(|&j| passive[j]).collect();
        let mut out = Array1::zeros(p);
        if idx.is_empty() {
            return out;
        }
        let sub_q = Array2::from_shape_fn((idx.len(), idx.len()), |(a, b)| q[[idx[a], idx[b]]]);
        let sub_c = Array1::from_shape_fn(idx.len(), |a| c[idx[a]]);
        let sol = solve_gram(&sub_q, &sub_c);
        *rank_flag |= sol.rank_deficient;
        for (a, &j) in idx.iter().enumerate() {
            out[j] = sol.x[a];
        }
        out
    };

    if passive.iter().any(|&b| b) {
        x = solve_passive(&passive, &mut rank_deficient);
    }

    for _ in 0..(3 * p + 10) {
        let w = c - &q.dot(&x);
        let candidate = (0..p)
            .filter(|&j| !passive[j])
            .max_by(|&a, &b| w[a].total_cmp(&w[b]));
        let Some(j) = candidate.filter(|&j| w[j] > tol) else {
            break;
        };
        passive[j] = true;
        loop {
            let z = solve_passive(&passive, &mut rank_deficient);
            let blocking: Vec<usize> = (0..p)
                .filter(|&k| passive[k] && !free[k] && z[k] <= 0.0)
                .collect();
            if blocking.is_empty() {
                x = z;
                break;
            }
            let alpha = blocking
                .iter()
                .map(|&k| x[k] / (x[k] - z[k]))
                .fold(f64::INFINITY, f64::min);
            x = &x + &((&z - &x) * alpha);
            for k in 0..p {
                if passive[k] && !free[k] && x[k] <= 1e-15 * scale.max(1.0) {
                    passive[k] = false;
                    x[k] = 0.0;
                }
            }
        }
    }
    for k in 0..p {
        if !free[k] && x[k] < 0.0 {
            x[k] = 0.0;
        }
    }
    GramSolution { x, rank_deficient }
}

/// Solves the symmetric positive definite system `a x = b` by Cholesky.
pub(crate) fn cholesky_solve(a: &Array2<f64>, b: &Array1<f64>) -> Result<Array1<f64>> {
    let m = to_na(a);
    let diag: Vec<f64> = (0..a.nrows()).map(|i| a[[i, i]]).collect();
    let chol = m.cholesky().ok_or_else(|| {
        let max = diag.iter().cloned().fold(f64::MIN, f64::max);
        let min = diag.iter().cloned().fold(f64::MAX, f64::min);
        Error::Numerical {
            message: "matrix is not positive definite".into(),
            condition: if min > 0.0 { max / min } else { f64::INFINITY },
        }
    })?;
    let rhs = DVector::from_iterator(b.len(), b.iter().copied());
    let x = chol.solve(&rhs);
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical {
            message: "non-finite Cholesky solution".into(),
            condition: f64::INFINITY,
        });
    }
    Ok(x.iter().copied().collect())
}
