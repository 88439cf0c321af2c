use ndarray::{Array1, Array2, ArrayView2};

use super::{Regressor, WeightedTrainingSet};
use crate::density_ratio::rbf_gram;
use crate::error::{Error, Result};
use crate::linalg::cholesky_solve;

/// Gaussian-kernel ridge regression, `f(x) = Σ α_i k(x, x_i)`, no intercept.
#[derive(Clone, Debug, PartialEq)]
pub struct KrrModel {
    support: Array2<f64>,
    alpha: Array1<f64>,
    bandwidth: f64,
    lambda: f64,
}

impl KrrModel {
    pub fn alpha(&self) -> &Array1<f64> {
        &self.alpha
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }
}

impl Regressor for KrrModel {
    fn predict(&self, x: ArrayView2<'_, f64>) -> Array1<f64> {
        let k = rbf_gram(x, self.support.view(), self.bandwidth).expect("bandwidth validated at fit time");
        k.dot(&self.alpha)
    }
}

/// Exact minimizer of `Σ w_i (y_i - f(x_i))² + N λ ‖f‖²` over the RKHS.
///
/// Solves `(W½ K W½ + Nλ I) γ = W½ y` and sets `α = W½ γ`, which stays
/// well posed when some weights are zero.
pub fn fit_weighted_krr(data: &WeightedTrainingSet, lambda: f64, bandwidth: f64) -> Result<KrrModel> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::invalid(format!("lambda must be positive, got {lambda}")));
    }
    let x = data.features();
    let n = x.nrows();
    if n == 0 {
        return Err(Error::invalid("KRR needs at least one row"));
    }
    let k = rbf_gram(x.view(), x.view(), bandwidth)?;
    let s = data.weights().mapv(f64::sqrt);
    let mut a = k;
    for i in 0..n {
        for j in 0..n {
            a[[i, j]] *= s[i] * s[j];
        }
        a[[i, i]] += n as f64 * lambda;
    }
    let rhs = &s * data.responses();
    let gamma = cholesky_solve(&a, &rhs)?;
    Ok(KrrModel {
        support: x.clone(),
        alpha: &s * &gamma,
        bandwidth,
        lambda,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::RngStream;
    use ndarray::{array, concatenate, Axis};

    fn random_set(rng: &mut RngStream, n: usize) -> (Array2<f64>, Array1<f64>) {
        let x = Array2::from_shape_simple_fn((n, 2), || rng.normal());
        let y = x.column(0).mapv(f64::sin) + x.column(1).mapv(|v| 0.5 * v);
        (x, y)
    }

    #[test]
    fn huge_penalty_shrinks_to_zero() {
        let mut rng = RngStream::new(1, 0);
        let (x, y) = random_set(&mut rng, 30);
        let data = WeightedTrainingSet::new(x.clone(), y, Array1::ones(30)).unwrap();
        let model = fit_weighted_krr(&data, 1e6, 1.0).unwrap();
        assert!(model.predict(x.view()).iter().all(|p| p.abs() < 1e-3));
    }

    #[test]
    fn tiny_penalty_interpolates() {
        let mut rng = RngStream::new(2, 0);
        let (x, y) = random_set(&mut rng, 25);
        let data = WeightedTrainingSet::new(x.clone(), y.clone(), Array1::ones(25)).unwrap();
        let model = fit_weighted_krr(&data, 1e-10, 1.0).unwrap();
        let resid = (&model.predict(x.view()) - &y).mapv(f64::abs);
        assert!(resid.iter().all(|&r| r < 1e-3), "max {}", resid.fold(0.0f64, |m, &v| m.max(v)));
    }

    #[test]
    fn unit_weights_match_plain_krr() {
        let mut rng = RngStream::new(3, 0);
        let (x, y) = random_set(&mut rng, 40);
        let lambda = 0.01;
        let h = 1.3;
        let data = WeightedTrainingSet::new(x.clone(), y.clone(), Array1::ones(40)).unwrap();
        let model = fit_weighted_krr(&data, lambda, h).unwrap();
        // plain KRR: (K + Nλ I) α = y
        let mut a = rbf_gram(x.view(), x.view(), h).unwrap();
        for i in 0..40 {
            a[[i, i]] += 40.0 * lambda;
        }
        let alpha = cholesky_solve(&a, &y).unwrap();
        for (p, q) in model.alpha().iter().zip(alpha.iter()) {
            assert!((p - q).abs() < 1e-8);
        }
    }

    #[test]
    fn duplicated_row_equals_doubled_weight() {
        let mut rng = RngStream::new(4, 0);
        let (x, y) = random_set(&mut rng, 10);
        let w = Array1::from_shape_simple_fn(10, || 0.5 + rng.uniform());
        let lambda = 0.05;
        let h = 1.0;
        // row 0 appended a second time, each copy keeping weight w[0]
        let x_dup = concatenate![Axis(0), x.view(), x.slice(ndarray::s![0..1, ..])];
        let y_dup = concatenate![Axis(0), y.view(), y.slice(ndarray::s![0..1])];
        let w_dup = concatenate![Axis(0), w.view(), w.slice(ndarray::s![0..1])];
        let mut w_one = w.clone();
        w_one[0] *= 2.0;
        let dup = WeightedTrainingSet::new(x_dup, y_dup, w_dup).unwrap();
        let one = WeightedTrainingSet::new(x.clone(), y.clone(), w_one).unwrap();
        // the two objectives agree when both use the same absolute penalty N·λ
        let m_dup = fit_weighted_krr(&dup, lambda * 10.0 / 11.0, h).unwrap();
        let m_one = fit_weighted_krr(&one, lambda, h).unwrap();
        let probe = Array2::from_shape_simple_fn((15, 2), || rng.normal());
        let a = m_dup.predict(probe.view());
        let b = m_one.predict(probe.view());
        for (p, q) in a.iter().zip(b.iter()) {
            assert!((p - q).abs() < 1e-8, "{p} vs {q}");
        }
    }

    #[test]
    fn scaling_weights_and_penalty_together_is_invariant() {
        let mut rng = RngStream::new(5, 0);
        let (x, y) = random_set(&mut rng, 20);
        let w = Array1::from_shape_simple_fn(20, || rng.uniform() * 3.0);
        let c = 7.5;
        let a = fit_weighted_krr(&WeightedTrainingSet::new(x.clone(), y.clone(), w.clone()).unwrap(), 0.02, 1.0)
            .unwrap();
        let b = fit_weighted_krr(&WeightedTrainingSet::new(x.clone(), y, &w * c).unwrap(), 0.02 * c, 1.0).unwrap();
        let probe = Array2::from_shape_simple_fn((10, 2), || rng.normal());
        for (p, q) in a.predict(probe.view()).iter().zip(b.predict(probe.view()).iter()) {
            assert!((p - q).abs() < 1e-8);
        }
    }

    #[test]
    fn zero_weight_rows_carry_no_coefficient() {
        let x = array![[0.0], [1.0], [2.0]];
        let y = array![1.0, 100.0, 3.0];
        let data = WeightedTrainingSet::new(x, y, array![1.0, 0.0, 1.0]).unwrap();
        let m = fit_weighted_krr(&data, 0.1, 1.0).unwrap();
        assert_eq!(m.alpha()[1], 0.0);
    }

    #[test]
    fn rejects_nonpositive_penalty() {
        let data = WeightedTrainingSet::new(array![[0.0]], array![1.0], array![1.0]).unwrap();
        assert!(fit_weighted_krr(&data, 0.0, 1.0).is_err());
        assert!(fit_weighted_krr(&data, 1.0, 0.0).is_err());
    }
}
