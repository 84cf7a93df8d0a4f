//! Sampling and summary-statistics helpers shared across modules.

use rand::{Rng, RngExt};

use crate::error::{Error, Result};

/// Rates at or above this use transformed rejection instead of Knuth's
/// multiplication method.
pub const POISSON_REJECTION_THRESHOLD: f64 = 30.0;

/// `ln(k!)`.
pub fn ln_factorial(k: u64) -> f64 {
    const TABLE: [f64; 10] = [
        0.0,
        0.0,
        std::f64::consts::LN_2,
        1.791_759_469_228_055,
        3.178_053_830_347_945_8,
        4.787_491_742_782_046,
        6.579_251_212_010_101,
        8.525_161_361_065_415,
        10.604_602_902_745_25,
        12.801_827_480_081_469,
    ];
    if k < 10 {
        return TABLE[k as usize];
    }
    // Stirling series for ln Gamma(k + 1).
    let x = k as f64 + 1.0;
    let inv = 1.0 / x;
    let inv2 = inv * inv;
    let series = inv * (1.0 / 12.0 - inv2 * (1.0 / 360.0 - inv2 * (1.0 / 1260.0 - inv2 / 1680.0)));
    (x - 0.5) * x.ln() - x + 0.5 * (2.0 * std::f64::consts::PI).ln() + series
}

/// One Poisson draw with rate `lambda` (non-positive rates give 0).
pub fn sample_poisson<R: Rng + ?Sized>(lambda: f64, rng: &mut R) -> u64 {
    if !(lambda > 0.0) {
        return 0;
    }
    if lambda < POISSON_REJECTION_THRESHOLD {
        let limit = (-lambda).exp();
        let mut k = 0;
        let mut prod: f64 = rng.random();
        while prod > limit {
            k += 1;
            prod *= rng.random::<f64>();
        }
        return k;
    }
    // Hormann's transformed rejection with squeeze (PTRS).
    let slam = lambda.sqrt();
    let loglam = lambda.ln();
    let b = 0.931 + 2.53 * slam;
    let a = -0.059 + 0.02483 * b;
    let inv_alpha = 1.1239 + 1.1328 / (b - 3.4);
    let vr = 0.9277 - 3.6224 / (b - 2.0);
    loop {
        let u: f64 = rng.random::<f64>() - 0.5;
        let v: f64 = rng.random();
        let us = 0.5 - u.abs();
        let k = ((2.0 * a / us + b) * u + lambda + 0.43).floor();
        if us >= 0.07 && v <= vr {
            return k as u64;
        }
        if k < 0.0 || (us < 0.013 && v > us) {
            continue;
        }
        if v.ln() + inv_alpha.ln() - (a / (us * us) + b).ln() <= -lambda + k * loglam - ln_factorial(k as u64) {
            return k as u64;
        }
    }
}

/// Linear-interpolation quantile (type 7) of an ascending-sorted sample.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> Result<f64> {
    if sorted.is_empty() {
        return Err(Error::EmptyInput);
    }
    let h = (sorted.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    Ok(sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo]))
}

pub fn quantile(values: &[f64], q: f64) -> Result<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    quantile_sorted(&v, q)
}

pub fn mean(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

/// Total-variation distance between the empirical distributions of two
/// integer samples.
pub fn total_variation(a: &[u64], b: &[u64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyInput);
    }
    let max = a.iter().chain(b).copied().max().unwrap_or(0) as usize;
    let mut ha = vec![0u64; max + 1];
    let mut hb = vec![0u64; max + 1];
    for &k in a {
        ha[k as usize] += 1;
    }
    for &k in b {
        hb[k as usize] += 1;
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    Ok(0.5 * ha.iter().zip(&hb).map(|(&x, &y)| (x as f64 / na - y as f64 / nb).abs()).sum::<f64>())
}

/// Standard normal draw.
pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(rand_distr::StandardNormal)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn moments(lambda: f64, n: usize, seed: u64) -> (f64, f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let xs: Vec<f64> = (0..n).map(|_| sample_poisson(lambda, &mut rng) as f64).collect();
        let m = xs.iter().sum::<f64>() / n as f64;
        let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64;
        (m, v)
    }

    #[test]
    fn ln_factorial_matches_direct_sum() {
        for k in 0..200u64 {
            let direct: f64 = (1..=k).map(|i| (i as f64).ln()).sum();
            assert!((ln_factorial(k) - direct).abs() < 1e-10 * direct.max(1.0), "k={k}");
        }
    }

    #[test]
    fn poisson_moments_small_rate() {
        let (m, v) = moments(3.0, 100_000, 1);
        assert!((2.94..=3.06).contains(&m), "mean {m}");
        assert!((2.8..=3.2).contains(&v), "var {v}");
    }

    #[test]
    fn poisson_moments_large_rate() {
        for lambda in [30.0, 75.0, 400.0] {
            let (m, v) = moments(lambda, 100_000, 2);
            let sd_mean = (lambda / 100_000f64).sqrt();
            assert!((m - lambda).abs() < 4.0 * sd_mean, "lambda {lambda}: mean {m}");
            assert!((v / lambda - 1.0).abs() < 0.03, "lambda {lambda}: var {v}");
        }
    }

    #[test]
    fn poisson_pmf_large_rate() {
        // Chi-square-like check of the central pmf at lambda = 40.
        let lambda = 40.0;
        let n = 200_000;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut hist = vec![0usize; 200];
        for _ in 0..n {
            hist[sample_poisson(lambda, &mut rng) as usize] += 1;
        }
        for k in 30..50u64 {
            let p = (-lambda + k as f64 * lambda.ln() - ln_factorial(k)).exp();
            let expect = p * n as f64;
            assert!((hist[k as usize] as f64 - expect).abs() < 5.0 * expect.sqrt(), "k={k}");
        }
    }

    #[test]
    fn poisson_tiny_rate_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        assert!((0..10_000).all(|_| sample_poisson(1e-12, &mut rng) == 0));
        assert_eq!(sample_poisson(0.0, &mut rng), 0);
    }

    #[test]
    fn poisson_seeded() {
        let a: Vec<u64> = {
            let mut r = ChaCha8Rng::seed_from_u64(9);
            (0..100).map(|i| sample_poisson(i as f64 * 0.7, &mut r)).collect()
        };
        let b: Vec<u64> = {
            let mut r = ChaCha8Rng::seed_from_u64(9);
            (0..100).map(|i| sample_poisson(i as f64 * 0.7, &mut r)).collect()
        };
        assert_eq!(a, b);
    }

    #[test]
    fn quantiles_and_tv() {
        let v = [3.0, 1.0, 2.0, 4.0];
        assert_eq!(quantile(&v, 0.5).unwrap(), 2.5);
        assert_eq!(quantile(&v, 0.0).unwrap(), 1.0);
        assert_eq!(quantile(&v, 1.0).unwrap(), 4.0);
        assert!(quantile(&[], 0.5).is_err());
        assert_eq!(total_variation(&[0, 0, 1], &[0, 0, 1]).unwrap(), 0.0);
        assert_eq!(total_variation(&[0, 0], &[1]).unwrap(), 1.0);
        assert!((total_variation(&[0, 1], &[0, 0]).unwrap() - 0.5).abs() < 1e-15);
    }
}
