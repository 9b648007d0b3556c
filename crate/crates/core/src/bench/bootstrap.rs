// SPDX-License-Identifier: Apache-2.0

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};

pub const DEFAULT_LEVEL: f64 = 0.95;
pub const DEFAULT_RESAMPLES: usize = 2000;

/// Linear-interpolation quantile of sorted data (`q` in `[0, 1]`).
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let rank = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    let frac = rank - lo as f64;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + (sorted[hi] - sorted[lo]) * frac
    }
}

/// Mean taken around the first sample, exact for constant data. Panics on
/// an empty slice.
pub fn mean(samples: &[f64]) -> f64 {
    let pivot = samples[0];
    pivot + samples.iter().map(|v| v - pivot).sum::<f64>() / samples.len() as f64
}

/// Percentile bootstrap interval for the mean.
pub fn bootstrap_ci(samples: &[f64], level: f64, resamples: usize, seed: u64) -> Result<(f64, f64)> {
    if samples.is_empty() {
        return Err(Error::Empty("bootstrap sample"));
    }
    if !(level > 0.0 && level < 1.0) || resamples == 0 {
        return Err(Error::InvalidArgument(format!(
            "bootstrap needs level in (0, 1) and at least one resample, got {level} and {resamples}"
        )));
    }
    let n = samples.len();
    let pivot = samples[0];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut stats: Vec<f64> = (0..resamples)
        .map(|_| pivot + (0..n).map(|_| samples[rng.random_range(0..n)] - pivot).sum::<f64>() / n as f64)
        .collect();
    stats.sort_by(f64::total_cmp);
    let alpha = (1.0 - level) / 2.0;
    Ok((quantile_sorted(&stats, alpha), quantile_sorted(&stats, 1.0 - alpha)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_samples_give_point_interval() {
        assert_eq!(bootstrap_ci(&[0.7; 3], 0.95, 500, 1).unwrap(), (0.7, 0.7));
    }

    #[test]
    fn two_point_sample_stays_in_range() {
        let (lo, hi) = bootstrap_ci(&[0.0, 1.0], 0.95, 5000, 2).unwrap();
        assert!(0.0 <= lo && lo <= 0.5 && 0.5 <= hi && hi <= 1.0);
    }

    #[test]
    fn quantiles_interpolate() {
        let s = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile_sorted(&s, 0.0), 1.0);
        assert_eq!(quantile_sorted(&s, 1.0), 4.0);
        assert!((quantile_sorted(&s, 0.5) - 2.5).abs() < 1e-12);
        assert!((quantile_sorted(&s, 0.25) - 1.75).abs() < 1e-12);
    }

    #[test]
    fn bad_arguments() {
        assert!(matches!(bootstrap_ci(&[], 0.95, 10, 0), Err(Error::Empty(_))));
        assert!(bootstrap_ci(&[1.0], 1.0, 10, 0).is_err());
        assert!(bootstrap_ci(&[1.0], 0.9, 0, 0).is_err());
    }

    #[test]
    fn seeded() {
        let s: Vec<f64> = (0..30).map(|i| (i % 7) as f64).collect();
        assert_eq!(bootstrap_ci(&s, 0.95, 200, 9).unwrap(), bootstrap_ci(&s, 0.95, 200, 9).unwrap());
    }
}
