//! Shared helpers for the integration-test targets.
#![allow(dead_code)]

pub mod oracles;

/// Upper 5% critical values of the chi-square distribution, indexed by
/// degrees of freedom 1..=10. Standard table constants.
pub const CHI2_CRIT_5PCT: [f64; 10] = [
    3.841, 5.991, 7.815, 9.488, 11.070, 12.592, 14.067, 15.507, 16.919, 18.307,
];

/// Pearson chi-square statistic for observed counts against expected counts.
pub fn chi_square_stat(observed: &[u64], expected: &[f64]) -> f64 {
    assert_eq!(observed.len(), expected.len());
    observed
        .iter()
        .zip(expected)
        .map(|(&o, &e)| {
            assert!(e > 0.0, "expected count must be positive, got {e}");
            let d = o as f64 - e;
            d * d / e
        })
        .sum()
}
