mod common;

use cocoon::embedding::EmbeddingSpace;
use cocoon::geometry::project;
use cocoon::linalg::dot;
use cocoon::stats::{ln_gamma, ols_fit, paired_t_test, regularized_incomplete_beta, t_tail_p};
use common::{gaussian_matrix, rng};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use proptest::prelude::*;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use statrs::distribution::{ContinuousCDF, StudentsT};
use statrs::function::{beta::beta_reg, gamma};

fn statrs_tail(t: f64, df: f64) -> f64 {
    2.0 * StudentsT::new(0.0, 1.0, df).unwrap().sf(t.abs())
}

#[test]
fn t_tail_closed_forms() {
    // df = 1 is Cauchy and df = 2 has p = 1 − |t|/√(2 + t²).
    for t in [0.0f64, 0.3, 1.0, 2.5, 12.7062, 100.0] {
        let cauchy = 1.0 - 2.0 * t.atan() / std::f64::consts::PI;
        assert!((t_tail_p(t, 1.0).unwrap() - cauchy).abs() < 1e-12, "t={t}");
        let two = 1.0 - t / (2.0 + t * t).sqrt();
        assert!((t_tail_p(t, 2.0).unwrap() - two).abs() < 1e-12, "t={t}");
    }
    assert!((t_tail_p(12.7062, 1.0).unwrap() - 0.05).abs() < 1e-5);
}

#[test]
fn paired_test_hand_cases() {
    let r = paired_t_test(&[0.0, 0.0, 0.0], &[1.0, 2.0, 0.0]).unwrap();
    assert!((r.t + 3f64.sqrt()).abs() < 1e-12);
    assert_eq!(r.df, 2);
    let r = paired_t_test(&[1.0, 2.0, 3.0], &[0.0; 3]).unwrap();
    assert!((r.t - 2.0 * 3f64.sqrt()).abs() < 1e-12);
}

proptest! {
    #[test]
    fn t_tail_matches_statrs(t in -50.0f64..50.0, df in 1.0f64..500.0) {
        let got = t_tail_p(t, df).unwrap();
        let want = statrs_tail(t, df);
        prop_assert!((got - want).abs() < 1e-10, "t={} df={} got={} want={}", t, df, got, want);
        prop_assert!(got > 0.0 && got <= 1.0);
    }

    #[test]
    fn incomplete_beta_matches_statrs(x in 0.0f64..=1.0, a in 0.05f64..60.0, b in 0.05f64..60.0) {
        let got = regularized_incomplete_beta(x, a, b);
        let want = beta_reg(a, b, x);
        prop_assert!((got - want).abs() < 1e-10, "x={} a={} b={} got={} want={}", x, a, b, got, want);
    }

    #[test]
    fn ln_gamma_matches_statrs(x in 0.01f64..200.0) {
        let want = gamma::ln_gamma(x);
        prop_assert!((ln_gamma(x) - want).abs() < 1e-10 * want.abs().max(1.0));
    }
}

#[test]
fn ols_matches_normal_equations() {
    let mut r = rng(5);
    for _ in 0..50 {
        let n = r.random_range(6..40);
        let p = r.random_range(1..4);
        let x: Vec<Vec<f64>> = (0..n).map(|_| (0..p).map(|_| r.random_range(-3.0..3.0)).collect()).collect();
        let y: Vec<f64> = (0..n).map(|_| r.random_range(-5.0..5.0)).collect();
        let names: Vec<String> = (0..p).map(|j| format!("x{j}")).collect();
        let names: Vec<&str> = names.iter().map(String::as_str).collect();
        let fit = ols_fit(&x, &y, &names).unwrap();

        let design = DMatrix::from_fn(n, p + 1, |i, j| if j == 0 { 1.0 } else { x[i][j - 1] });
        let xtx = design.transpose() * &design;
        let beta = xtx.clone().try_inverse().unwrap() * design.transpose() * DVector::from_vec(y.clone());
        let resid = DVector::from_vec(y.clone()) - &design * &beta;
        let sigma2 = resid.norm_squared() / (n - p - 1) as f64;
        let cov = xtx.try_inverse().unwrap() * sigma2;
        for (j, c) in fit.coefficients.iter().enumerate() {
            assert!((c.estimate - beta[j]).abs() < 1e-9);
            assert!((c.std_error - cov[(j, j)].sqrt()).abs() < 1e-9);
        }
    }
}

#[test]
fn ols_recovers_planted_coefficients() {
    let truth = [1.5, -2.0, 0.7];
    // Variance 0.01.
    let noise = Normal::new(0.0, 0.1).unwrap();
    let mut r = rng(6);
    let trials = 1000;
    let mut hits = [0usize; 3];
    for _ in 0..trials {
        let x: Vec<Vec<f64>> = (0..100).map(|_| vec![r.random_range(-2.0..2.0), r.random_range(0.0..5.0)]).collect();
        let y: Vec<f64> = x.iter().map(|row| truth[0] + truth[1] * row[0] + truth[2] * row[1] + noise.sample(&mut r)).collect();
        let fit = ols_fit(&x, &y, &["a", "b"]).unwrap();
        for (j, c) in fit.coefficients.iter().enumerate() {
            if (c.estimate - truth[j]).abs() <= 3.0 * c.std_error {
                hits[j] += 1;
            }
        }
    }
    for (j, &h) in hits.iter().enumerate() {
        assert!(h * 100 >= trials * 99, "coefficient {j}: {h}/{trials}");
    }
}

#[test]
fn pca_reconstruction_error_matches_dropped_eigenvalues() {
    let mut r = rng(7);
    for k in [2, 3] {
        let data = gaussian_matrix(10, 5, 1.0, &mut r);
        let items = cocoon::linalg::Matrix::from_rows(&data.iter_rows().take(7).collect::<Vec<_>>());
        let users = cocoon::linalg::Matrix::from_rows(&data.iter_rows().skip(7).collect::<Vec<_>>());
        let ids = |p: &str, n: usize| (0..n).map(|i| format!("{p}{i}")).collect::<Vec<_>>();
        let space = EmbeddingSpace::new(ids("i", 7), items, ids("u", 3), users).unwrap();
        let proj = project(&space, k).unwrap();

        let mean: Vec<f64> = (0..5).map(|d| data.iter_rows().map(|row| row[d]).sum::<f64>() / 10.0).collect();
        let centered = DMatrix::from_fn(10, 5, |i, j| data.get(i, j) - mean[j]);
        let cov = centered.transpose() * &centered / 9.0;
        let mut oracle: Vec<f64> = SymmetricEigen::new(cov).eigenvalues.iter().copied().collect();
        oracle.sort_by(|a, b| b.partial_cmp(a).unwrap());
        for (a, b) in proj.eigenvalues.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }

        let mut err = 0.0;
        for i in 0..10 {
            let row: Vec<f64> = (0..5).map(|j| centered[(i, j)]).collect();
            let mut recon = vec![0.0; 5];
            for c in 0..k {
                let comp = proj.components.row(c);
                let coord = dot(&row, comp);
                assert!((coord - proj.coordinates.get(i, c)).abs() < 1e-10);
                recon.iter_mut().zip(comp).for_each(|(v, w)| *v += coord * w);
            }
            err += row.iter().zip(&recon).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        }
        let dropped: f64 = oracle[k..].iter().sum();
        assert!((err / 9.0 - dropped).abs() < 1e-10, "{} vs {dropped}", err / 9.0);
    }
}
