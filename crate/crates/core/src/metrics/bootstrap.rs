use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::MetricsError;
use crate::scalar::Scalar;
use crate::util::bounded_map;

pub const DEFAULT_ITERATIONS: usize = 1_000;

/// Iterations per RNG stream. Results depend on the seed and this constant,
/// not on the number of worker threads.
const SHARD_SIZE: usize = 125;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult<T> {
    /// mean(a) - mean(b) on the full sample.
    pub delta: T,
    /// Share of resamples whose delta is <= 0.
    pub p_value: T,
    pub iterations: usize,
}

/// One-sided paired bootstrap for "a is better than b". Resamples note
/// indices with replacement; ties count against significance.
pub fn paired_bootstrap<T: Scalar>(
    a: &[T],
    b: &[T],
    iterations: usize,
    seed: u64,
) -> Result<BootstrapResult<T>, MetricsError> {
    if a.len() != b.len() {
        return Err(MetricsError::LengthMismatch(a.len(), b.len()));
    }
    if a.len() < 2 {
        return Err(MetricsError::TooFewObservations);
    }
    let n = a.len();
    let diffs: Vec<T> = a.iter().zip(b).map(|(x, y)| *x - *y).collect();
    let delta = diffs.iter().fold(T::zero(), |s, d| s + *d) / T::from_count(n);

    let shards: Vec<(u64, usize)> = (0..iterations.div_ceil(SHARD_SIZE))
        .map(|s| (s as u64, SHARD_SIZE.min(iterations - s * SHARD_SIZE)))
        .collect();
    let workers = std::thread::available_parallelism().map_or(1, |p| p.get());
    let not_better: usize = bounded_map(&shards, workers, |_, &(stream, count)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        (0..count)
            .filter(|_| {
                let sum = (0..n).fold(T::zero(), |s, _| s + diffs[rng.random_range(0..n)]);
                sum <= T::zero()
            })
            .count()
    })
    .into_iter()
    .sum();

    let p_value = if iterations == 0 {
        T::one()
    } else {
        T::from_count(not_better) / T::from_count(iterations)
    };
    Ok(BootstrapResult {
        delta,
        p_value,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_systems_are_never_significant() {
        let a: Vec<f64> = (0..200).map(|i| f64::from(i % 3 == 0)).collect();
        for seed in 0..5 {
            let r = paired_bootstrap(&a, &a, 1000, seed).unwrap();
            assert_eq!(r.delta, 0.0);
            assert_eq!(r.p_value, 1.0);
        }
    }

    #[test]
    fn dominant_system_has_zero_p() {
        let r = paired_bootstrap(&[1.0f64; 100], &[0.0; 100], 1000, 9).unwrap();
        assert_eq!((r.delta, r.p_value), (1.0, 0.0));
    }

    #[test]
    fn single_difference_is_not_significant() {
        let a: Vec<f64> = (0..1000).map(|i| f64::from(i == 17)).collect();
        let b = vec![0.0; 1000];
        let r = paired_bootstrap(&a, &b, 1000, 1).unwrap();
        // P(note 17 never drawn) = (1 - 1/1000)^1000 ~ 0.368
        assert!((0.32..0.42).contains(&r.p_value), "{}", r.p_value);
    }

    #[test]
    fn seed_determinism_and_f32() {
        let a: Vec<f32> = (0..50).map(|i| (i % 7) as f32 / 7.0).collect();
        let b: Vec<f32> = (0..50).map(|i| (i % 5) as f32 / 5.0).collect();
        let x = paired_bootstrap(&a, &b, 1000, 3).unwrap();
        let y = paired_bootstrap(&a, &b, 1000, 3).unwrap();
        assert_eq!(x.p_value.to_bits(), y.p_value.to_bits());
        assert!(paired_bootstrap(&a, &b[..3], 10, 0).is_err());
        assert!(paired_bootstrap(&a[..1], &b[..1], 10, 0).is_err());
    }

    #[test]
    fn joint_shuffle_keeps_delta() {
        let a: Vec<f64> = (0..40).map(|i| f64::from(i % 2 == 0)).collect();
        let b: Vec<f64> = (0..40).map(|i| f64::from(i % 3 == 0)).collect();
        let (mut ra, mut rb) = (a.clone(), b.clone());
        ra.reverse();
        rb.reverse();
        let x = paired_bootstrap(&a, &b, 100, 0).unwrap();
        let y = paired_bootstrap(&ra, &rb, 100, 0).unwrap();
        assert_eq!(x.delta, y.delta);
    }
}
