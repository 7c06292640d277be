#![allow(dead_code)]

use nalgebra::DMatrix;
use proptest::prelude::*;
use statrs::distribution::{ChiSquared, ContinuousCDF};

pub fn chi_square_threshold(df: usize, level: f64) -> f64 {
    ChiSquared::new(df as f64).unwrap().inverse_cdf(level)
}

/// Pearson statistic; every expected count must be positive.
pub fn chi_square_stat(observed: &[u64], expected: &[f64]) -> f64 {
    assert_eq!(observed.len(), expected.len());
    observed
        .iter()
        .zip(expected)
        .map(|(&o, &e)| {
            assert!(e > 0.0, "expected count must be positive");
            let d = o as f64 - e;
            d * d / e
        })
        .sum()
}

/// Arbitrary generator matrix in the sign convention of `build_generator`:
/// off-diagonal entries nonpositive, diagonal unconstrained.
pub fn generator_matrix(n: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(0.0f64..1.0, n * n).prop_map(move |vals| {
        DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                2.0 * vals[i * n + j] - 1.0
            } else {
                -vals[i * n + j]
            }
        })
    })
}

/// Symmetric variant with strictly negative off-diagonal entries, so the
/// associated walk is irreducible.
pub fn symmetric_generator_matrix(n: usize) -> impl Strategy<Value = DMatrix<f64>> {
    prop::collection::vec(0.05f64..1.0, n * n).prop_map(move |vals| {
        DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                2.0 * vals[i * n + j] - 1.0
            } else {
                let (a, b) = (i.min(j), i.max(j));
                -vals[a * n + b]
            }
        })
    })
}

pub fn potential(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0f64..1.0, n)
}
