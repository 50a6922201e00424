//! Percentile bootstrap of the mean.
//!
//! Replicates draw from independent, replicate-indexed substreams of the
//! seed, so the result is identical whether replicates run serially or in
//! parallel. Percentiles interpolate linearly between order statistics.

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::{stream, TAG_BOOTSTRAP};

/// Linear-interpolation percentile of a sorted slice, `q` in [0, 1].
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty());
    let h = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = h - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Means of `reps` resamples (with replacement, original size), one per
/// replicate-indexed substream.
pub fn bootstrap_replicate_means(samples: &[f64], reps: usize, seed: u64) -> Result<Vec<f64>> {
    if samples.is_empty() {
        return Err(Error::validation("bootstrap needs at least one sample"));
    }
    let n = samples.len();
    Ok((0..reps)
        .map(|r| {
            let mut rng = stream(seed, &[TAG_BOOTSTRAP, r as u64]);
            let mut sum = 0.0;
            for _ in 0..n {
                sum += samples[rng.gen_range(0..n)];
            }
            sum / n as f64
        })
        .collect())
}

/// Point estimate (sample mean) with the 2.5th/97.5th percentile interval
/// of the bootstrap distribution.
pub fn bootstrap_ci(samples: &[f64], reps: usize, seed: u64) -> Result<(f64, f64, f64)> {
    if samples.is_empty() {
        return Err(Error::validation("bootstrap needs at least one sample"));
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::validation("bootstrap samples must be finite"));
    }
    let mean = samples.iter().sum::<f64>() / samples.len() as f64;
    let mut reps_means = bootstrap_replicate_means(samples, reps, seed)?;
    reps_means.sort_by(|a, b| a.total_cmp(b));
    let lo = percentile(&reps_means, 0.025);
    let hi = percentile(&reps_means, 0.975);
    Ok((mean, lo, hi))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_samples_degenerate_ci() {
        let (mean, lo, hi) = bootstrap_ci(&[0.7; 12], 1000, 5).unwrap();
        assert_eq!(mean, lo);
        assert_eq!(mean, hi);
        assert!((mean - 0.7).abs() < 1e-12);
        // a sample count whose mean is exact in binary reproduces v literally
        let (mean, lo, hi) = bootstrap_ci(&[0.5; 8], 1000, 5).unwrap();
        assert_eq!((mean, lo, hi), (0.5, 0.5, 0.5));
    }

    #[test]
    fn fixed_seed_reproduces_exactly() {
        let samples: Vec<f64> = (0..25).map(|i| (i as f64 * 0.37).sin()).collect();
        let a = bootstrap_ci(&samples, 1000, 42).unwrap();
        let b = bootstrap_ci(&samples, 1000, 42).unwrap();
        assert_eq!(a, b);
        let c = bootstrap_ci(&samples, 1000, 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn empty_input_rejected() {
        assert!(bootstrap_ci(&[], 100, 0).is_err());
    }

    #[test]
    fn lo_never_exceeds_hi_and_brackets_usually_contain_mean() {
        // statistical sanity over 500 seeds: n=10 standard-normal-ish draws
        // (Box-Muller), lo < mean < hi almost always
        let mut brackets = 0;
        for seed in 0..500u64 {
            let mut rng = stream(seed, &[99]);
            let draws: Vec<f64> = (0..5)
                .flat_map(|_| {
                    let u1: f64 = rng.gen::<f64>().max(1e-12);
                    let u2: f64 = rng.gen();
                    let r = (-2.0 * u1.ln()).sqrt();
                    let th = 2.0 * std::f64::consts::PI * u2;
                    [r * th.cos(), r * th.sin()]
                })
                .collect();
            let (mean, lo, hi) = bootstrap_ci(&draws, 300, seed).unwrap();
            assert!(lo <= hi);
            if lo < mean && mean < hi {
                brackets += 1;
            }
        }
        assert!(
            brackets >= 495,
            "only {brackets}/500 seeds bracketed the mean"
        );
    }

    #[test]
    fn interval_width_shrinks_with_sample_size() {
        let widths: Vec<f64> = [10usize, 100, 1000]
            .iter()
            .map(|&n| {
                let mut per_seed = Vec::new();
                for seed in 0..20u64 {
                    let mut rng = stream(seed, &[7]);
                    let draws: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
                    let (_, lo, hi) = bootstrap_ci(&draws, 200, seed).unwrap();
                    per_seed.push(hi - lo);
                }
                per_seed.sort_by(|a, b| a.total_cmp(b));
                per_seed[per_seed.len() / 2]
            })
            .collect();
        assert!(
            widths[0] > widths[1] && widths[1] > widths[2],
            "widths {widths:?}"
        );
    }

    #[test]
    fn percentile_interpolates_linearly() {
        let sorted = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(percentile(&sorted, 0.0), 1.0);
        assert_eq!(percentile(&sorted, 1.0), 4.0);
        assert!((percentile(&sorted, 0.5) - 2.5).abs() < 1e-15);
        // q = 0.025 over 4 points: h = 0.075 -> 1.075
        assert!((percentile(&sorted, 0.025) - 1.075).abs() < 1e-12);
    }
}
