use ndarray::Array2;
use rand_distr::{Distribution, Exp1};
use tlcqm::data::RngStream;
use tlcqm::quantile_match::{
    empirical_objective, estimate_population_objective, fit, ConstraintMode, FitOptions, SyntheticDesign,
};

fn sorted(v: &[f64]) -> Vec<f64> {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s
}

fn exp(rng: &mut RngStream) -> f64 {
    Exp1.sample(rng)
}

/// `n0` targets with `m` draws each of `k` sources, all standard normal.
fn random_instance(rng: &mut RngStream, n0: usize, m: usize, k: usize) -> (Vec<f64>, SyntheticDesign) {
    let y: Vec<f64> = (0..n0).map(|_| 1.0 + 2.0 * rng.normal()).collect();
    let src = Array2::from_shape_simple_fn((n0 * m, k), || rng.normal());
    (y, SyntheticDesign::from_sources(src, n0, m).unwrap())
}

#[test]
fn rearrangement_inequality_on_random_pairs() {
    // multiples of 1/64 below 2^10 in magnitude, so every sum below is exact
    let mut rng = RngStream::new(11, 0);
    let draw = |rng: &mut RngStream| (640.0 * rng.normal()).round().clamp(-65_000.0, 65_000.0) / 64.0;
    for _ in 0..1000 {
        let len = 1 + rng.below(50);
        let a: Vec<f64> = (0..len).map(|_| draw(&mut rng)).collect();
        let b: Vec<f64> = (0..len).map(|_| draw(&mut rng)).collect();
        let (sa, sb) = (sorted(&a), sorted(&b));
        let abs_sorted: f64 = sa.iter().zip(&sb).map(|(x, y)| (x - y).abs()).sum();
        let abs_raw: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum();
        let sq_sorted: f64 = sa.iter().zip(&sb).map(|(x, y)| (x - y).powi(2)).sum();
        let sq_raw: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum();
        assert!(abs_sorted <= abs_raw);
        assert!(sq_sorted <= sq_raw);
    }
}

#[test]
fn empirical_objective_spec_values() {
    assert_eq!(empirical_objective(&[0.0, 2.0], &[2.0, 0.0]).unwrap(), 0.0);
    assert_eq!(empirical_objective(&[0.0, 2.0], &[1.0, 3.0]).unwrap(), 1.0);
    assert_eq!(empirical_objective(&[0.0], &[5.0, 5.0, 5.0]).unwrap(), 25.0);
}

#[test]
fn objective_trace_never_increases() {
    let mut rng = RngStream::new(12, 0);
    for t in 0..100 {
        let n0 = 5 + rng.below(40);
        let m = 1 + rng.below(20);
        let k = 1 + rng.below(3);
        let (y, design) = random_instance(&mut rng, n0, m, k);
        let mode = if t % 2 == 0 {
            ConstraintMode::Unconstrained
        } else {
            ConstraintMode::NonnegSlopes
        };
        let f = fit(&y, &design, &FitOptions { constraint_mode: mode, ..Default::default() }).unwrap();
        for w in f.objective_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "instance {t}: {:?}", f.objective_trace);
        }
        if mode == ConstraintMode::NonnegSlopes {
            assert!(f.beta[1..].iter().all(|&b| b >= 0.0));
        }
    }
}

#[test]
fn affine_equivariance() {
    let mut rng = RngStream::new(13, 0);
    for _ in 0..20 {
        let (y, design) = random_instance(&mut rng, 40, 10, 2);
        let a = 0.5 + 3.0 * rng.uniform();
        let b = 5.0 * rng.normal();
        let base = fit(&y, &design, &FitOptions::default()).unwrap();
        let moved: Vec<f64> = y.iter().map(|v| a * v + b).collect();
        let mapped = fit(&moved, &design, &FitOptions::default()).unwrap();
        assert!((mapped.beta[0] - (a * base.beta[0] + b)).abs() < 1e-6);
        for j in 1..3 {
            assert!((mapped.beta[j] - a * base.beta[j]).abs() < 1e-6);
        }
    }
}

#[test]
fn permuting_observations_leaves_the_fit_unchanged() {
    let mut rng = RngStream::new(14, 0);
    let (n0, m) = (30, 8);
    let (y, design) = random_instance(&mut rng, n0, m, 2);
    let mut perm: Vec<usize> = (0..n0).collect();
    rng.shuffle(&mut perm);
    let y_perm: Vec<f64> = perm.iter().map(|&i| y[i]).collect();
    let v = design.matrix();
    let v_perm = Array2::from_shape_fn((n0 * m, 3), |(r, c)| v[[perm[r / m] * m + r % m, c]]);
    let a = fit(&y, &design, &FitOptions::default()).unwrap();
    let b = fit(&y_perm, &SyntheticDesign::new(v_perm, n0, m).unwrap(), &FitOptions::default()).unwrap();
    for (p, q) in a.beta.iter().zip(&b.beta) {
        assert!((p - q).abs() < 1e-9, "{:?} vs {:?}", a.beta, b.beta);
    }
}

/// Grid search over a lattice with the intercept solved in closed form:
/// for fixed slopes the sorted pairing does not depend on the intercept.
fn lattice_oracle(y: &[f64], design: &SyntheticDesign, axes: &[Vec<f64>]) -> (Vec<f64>, f64) {
    let v = design.matrix();
    let ybar = y.iter().sum::<f64>() / y.len() as f64;
    let mut best = (Vec::new(), f64::INFINITY);
    let mut idx = vec![0usize; axes.len()];
    loop {
        let slopes: Vec<f64> = idx.iter().zip(axes).map(|(&i, a)| a[i]).collect();
        let pred: Vec<f64> = v
            .rows()
            .into_iter()
            .map(|r| slopes.iter().enumerate().map(|(j, s)| s * r[j + 1]).sum())
            .collect();
        let pbar = pred.iter().sum::<f64>() / pred.len() as f64;
        let shifted: Vec<f64> = pred.iter().map(|p| p + ybar - pbar).collect();
        let obj = empirical_objective(y, &shifted).unwrap();
        if obj < best.1 {
            let mut beta = vec![ybar - pbar];
            beta.extend(slopes);
            best = (beta, obj);
        }
        let mut d = 0;
        loop {
            if d == axes.len() {
                return best;
            }
            idx[d] += 1;
            if idx[d] < axes[d].len() {
                break;
            }
            idx[d] = 0;
            d += 1;
        }
    }
}

fn axis(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let n = ((hi - lo) / step).round() as usize;
    (0..=n).map(|i| lo + step * i as f64).collect()
}

#[test]
fn two_sources_pick_the_matching_one() {
    // target y = x + e with x, e exponential; source 1 regenerates e, source 2 is unrelated noise
    let mut rng = RngStream::new(15, 0);
    let (n0, m) = (1000, 20);
    let x: Vec<f64> = (0..n0).map(|_| exp(&mut rng)).collect();
    let y: Vec<f64> = x.iter().map(|xi| xi + exp(&mut rng)).collect();
    let mut src = Array2::zeros((n0 * m, 2));
    for i in 0..n0 {
        for j in 0..m {
            src[[i * m + j, 0]] = x[i] + exp(&mut rng);
            src[[i * m + j, 1]] = rng.normal();
        }
    }
    let design = SyntheticDesign::from_sources(src, n0, m).unwrap();
    let f = fit(&y, &design, &FitOptions::default()).unwrap();
    assert!(f.final_objective() < 0.01, "{}", f.final_objective());
    let (oracle, oracle_obj) = lattice_oracle(&y, &design, &[axis(0.0, 2.0, 0.05), axis(-0.5, 0.5, 0.05)]);
    let truth = [0.0, 1.0, 0.0];
    for j in 0..3 {
        assert!((f.beta[j] - truth[j]).abs() < 0.1, "{:?}", f.beta);
        assert!((f.beta[j] - oracle[j]).abs() < 0.1, "{:?} vs oracle {:?}", f.beta, oracle);
    }
    assert!(f.final_objective() <= oracle_obj + 1e-9);
}

#[test]
fn nonnegative_slopes_match_a_constrained_grid_search() {
    // target law E1 - E2 is reached by V1 - 2 V2 with V1 = E1 + E2, V2 = E2,
    // so the sign constraint on the second slope binds
    let mut rng = RngStream::new(16, 0);
    let (n0, m) = (300, 30);
    let y: Vec<f64> = (0..n0).map(|_| exp(&mut rng) - exp(&mut rng)).collect();
    let mut src = Array2::zeros((n0 * m, 2));
    for r in 0..n0 * m {
        let (e1, e2) = (exp(&mut rng), exp(&mut rng));
        src[[r, 0]] = e1 + e2;
        src[[r, 1]] = e2;
    }
    let design = SyntheticDesign::from_sources(src, n0, m).unwrap();
    let options = FitOptions {
        constraint_mode: ConstraintMode::NonnegSlopes,
        ..Default::default()
    };
    let f = fit(&y, &design, &options).unwrap();
    assert!(f.beta[1] >= 0.0 && f.beta[2] >= 0.0);
    let (oracle, oracle_obj) = lattice_oracle(&y, &design, &[axis(0.0, 2.0, 0.02), axis(0.0, 1.0, 0.02)]);
    assert!(f.final_objective() <= oracle_obj + 1e-9, "{} vs {}", f.final_objective(), oracle_obj);
    for j in 0..3 {
        assert!((f.beta[j] - oracle[j]).abs() < 0.05, "{:?} vs oracle {:?}", f.beta, oracle);
    }
    let free = fit(&y, &design, &FitOptions::default()).unwrap();
    assert!(free.final_objective() < f.final_objective());
}

#[test]
fn population_objective_spec_values() {
    let n_mc = 100_000;
    let same = estimate_population_objective(
        &[0.0, 1.0],
        |r| r.normal(),
        |r| vec![1.0, r.normal()],
        n_mc,
        &mut RngStream::new(17, 0),
    )
    .unwrap();
    assert!(same < 0.05, "{same}");

    let shifted = estimate_population_objective(
        &[0.0, 1.0],
        |r| 3.0 + 2.0 * r.normal(),
        |r| vec![1.0, r.normal()],
        n_mc,
        &mut RngStream::new(18, 0),
    )
    .unwrap();
    assert!((shifted - 10.0).abs() < 0.5, "{shifted}");

    let c = 2.5;
    let base = estimate_population_objective(&[0.5, 1.0], |r| exp(r), |r| vec![1.0, r.normal()], 1000, &mut RngStream::new(19, 0))
        .unwrap();
    let scaled = estimate_population_objective(
        &[0.5, 1.0],
        |r| c * exp(r),
        |r| vec![c, c * r.normal()],
        1000,
        &mut RngStream::new(19, 0),
    )
    .unwrap();
    assert!((scaled - c * c * base).abs() < 1e-9 * scaled.max(1.0));
}

#[test]
fn rank_deficient_design_is_flagged_not_fatal() {
    let mut rng = RngStream::new(20, 0);
    let (n0, m) = (20, 5);
    let col: Vec<f64> = (0..n0 * m).map(|_| rng.normal()).collect();
    let src = Array2::from_shape_fn((n0 * m, 2), |(r, _)| col[r]);
    let y: Vec<f64> = (0..n0).map(|_| rng.normal()).collect();
    let f = fit(&y, &SyntheticDesign::from_sources(src, n0, m).unwrap(), &FitOptions::default()).unwrap();
    assert!(f.rank_deficient);
    assert!(f.beta.iter().all(|b| b.is_finite()));
}
