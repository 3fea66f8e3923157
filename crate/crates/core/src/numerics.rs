//! Scalar statistics, Pearson correlation, softmax and the deterministic
//! random streams shared by every other module.
//!
//! All arithmetic is `f64`. Transcendentals come from `libm`, which is a
//! pure software implementation, so the same inputs give the same bits on
//! every target.

use crate::error::{check_len, Error, Result};

/// Weyl increment used by the stream counter.
const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;
/// Salt mixed into the stream id before it is combined with the seed.
const STREAM_SALT: u64 = 0xD1B5_4A32_D192_ED03;

/// SplitMix64 finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Counter-based random stream.
///
/// The generator is fully specified so other implementations can match it
/// bit for bit:
///
/// ```text
/// key      = mix64(seed + mix64(stream_id ^ 0xD1B54A32D192ED03))   (wrapping add)
/// u64 #i   = mix64(key + (i + 1) * 0x9E3779B97F4A7C15)              (i = 0, 1, ...; wrapping)
/// uniform  = (u64 >> 11) * 2^-53                                     in [0, 1)
/// normal   = sqrt(-2 ln(1 - u1)) * cos(2 pi u2)                      two uniforms per draw
/// index(n) = (u64 * n) >> 64                                         128-bit product
/// ```
///
/// `mix64` is the SplitMix64 finalizer. Distinct stream ids hash to
/// unrelated keys, so streams for different clients do not overlap in
/// practice.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    key: u64,
    counter: u64,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let key = mix64(seed.wrapping_add(mix64(stream_id ^ STREAM_SALT)));
        Self {
            seed,
            stream_id,
            key,
            counter: 0,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Number of 64-bit words drawn so far.
    pub fn position(&self) -> u64 {
        self.counter
    }

    pub fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        mix64(
            self.key
                .wrapping_add(self.counter.wrapping_mul(GOLDEN_GAMMA)),
        )
    }

    /// Uniform draw in `[0, 1)` with 53 bits of resolution.
    pub fn next_uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard normal draw via Box-Muller (cosine branch only).
    pub fn next_normal(&mut self) -> f64 {
        let u1 = 1.0 - self.next_uniform();
        let u2 = self.next_uniform();
        libm::sqrt(-2.0 * libm::log(u1)) * libm::cos(2.0 * core::f64::consts::PI * u2)
    }

    /// Uniform integer in `[0, n)`. Panics if `n == 0`.
    pub fn next_index(&mut self, n: usize) -> usize {
        assert!(n > 0, "next_index requires a nonempty range");
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    /// Uniform draw in `[lo, hi)`.
    pub fn next_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_uniform()
    }
}

/// Population mean and standard deviation.
pub fn mean_std(v: &[f64]) -> Result<(f64, f64)> {
    if v.is_empty() {
        return Err(Error::InvalidArgument("mean_std of an empty vector".into()));
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    Ok((mean, libm::sqrt(var)))
}

/// Pearson correlation with population statistics.
///
/// Passing the same slice twice returns exactly 1. A zero-variance operand
/// otherwise yields 0. The result is symmetric in its arguments bit for bit
/// and clamped to `[-1, 1]`.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    check_len(a.len(), b.len())?;
    if a.len() < 2 {
        return Err(Error::InvalidArgument(
            "pearson needs at least two observations".into(),
        ));
    }
    if core::ptr::eq(a.as_ptr(), b.as_ptr()) {
        return Ok(1.0);
    }
    let n = a.len() as f64;
    let mean_a = a.iter().sum::<f64>() / n;
    let mean_b = b.iter().sum::<f64>() / n;
    let (mut cov, mut var_a, mut var_b) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (da, db) = (x - mean_a, y - mean_b);
        cov += da * db;
        var_a += da * da;
        var_b += db * db;
    }
    if var_a == 0.0 || var_b == 0.0 {
        return Ok(0.0);
    }
    if a == b {
        return Ok(1.0);
    }
    // Multiplication commutes in IEEE arithmetic, so swapping a and b
    // gives the same bits.
    let rho = (cov / n) / libm::sqrt((var_a / n) * (var_b / n));
    Ok(rho.clamp(-1.0, 1.0))
}

/// Numerically stable softmax.
pub fn softmax(r: &[f64]) -> alloc::vec::Vec<f64> {
    let max = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: alloc::vec::Vec<f64> = r.iter().map(|x| libm::exp(x - max)).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// `y += alpha * x`
#[inline]
pub fn axpy(y: &mut [f64], alpha: f64, x: &[f64]) {
    debug_assert_eq!(y.len(), x.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn l2_norm(v: &[f64]) -> f64 {
    libm::sqrt(v.iter().map(|x| x * x).sum())
}

pub fn all_finite(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite())
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use alloc::vec::Vec;

    #[test]
    fn pearson_exact_linear_relations() {
        assert_eq!(pearson(&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap(), 1.0);
        assert_eq!(pearson(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap(), -1.0);
    }

    #[test]
    fn pearson_matches_two_pass_reference() {
        // Two-pass covariance over sigma in exact rational arithmetic,
        // rounded once at the end.
        let a = [1.0, -2.0, 0.5, 3.0];
        let b = [0.9, -1.5, 0.0, 2.0];
        let expected = 0.988_499_600_587_904_9;
        assert!((pearson(&a, &b).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn pearson_degenerate_and_self() {
        let c = [2.0, 2.0, 2.0];
        assert_eq!(pearson(&c, &[1.0, 2.0, 3.0]).unwrap(), 0.0);
        assert_eq!(pearson(&c, &c).unwrap(), 1.0);
        assert_eq!(pearson(&c, &[2.0, 2.0, 2.0]).unwrap(), 0.0);
        assert!(matches!(
            pearson(&[1.0, 2.0], &[1.0, 2.0, 3.0]),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn softmax_examples() {
        let s = softmax(&[0.0, 0.0, 0.0]);
        for x in &s {
            assert!((x - 1.0 / 3.0).abs() < 1e-15);
        }
        assert_eq!(softmax(&[1.0, 1.0]), vec![0.5, 0.5]);
        let s = softmax(&[1.0, -1.0]);
        let e2 = core::f64::consts::E * core::f64::consts::E;
        assert!((s[0] - e2 / (e2 + 1.0)).abs() < 1e-15);
        assert!((s[1] - 1.0 / (e2 + 1.0)).abs() < 1e-15);
        assert!((s[0] - 0.880797).abs() < 1e-6);
    }

    #[test]
    fn mean_std_examples() {
        assert_eq!(mean_std(&[5.0, 5.0, 5.0]).unwrap(), (5.0, 0.0));
        assert_eq!(mean_std(&[0.0, 2.0]).unwrap(), (1.0, 1.0));
        let (m, s) = mean_std(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(m, 2.5);
        assert!((s - libm::sqrt(1.25)).abs() < 1e-15);
        assert!(mean_std(&[]).is_err());
    }

    #[test]
    fn rng_is_deterministic_and_streams_differ() {
        let mut a = RngStream::new(7, 3);
        let mut b = RngStream::new(7, 3);
        let mut c = RngStream::new(7, 4);
        let xs: Vec<u64> = (0..10).map(|_| a.next_u64()).collect();
        let ys: Vec<u64> = (0..10).map(|_| b.next_u64()).collect();
        let zs: Vec<u64> = (0..10).map(|_| c.next_u64()).collect();
        assert_eq!(xs, ys);
        assert!(xs.iter().zip(&zs).all(|(x, z)| x != z));
    }

    #[test]
    fn normal_draws_are_centered() {
        let mut rng = RngStream::new(2024, 0);
        let n = 100_000;
        let draws: Vec<f64> = (0..n).map(|_| rng.next_normal()).collect();
        let (mean, std) = mean_std(&draws).unwrap();
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!((std - 1.0).abs() < 0.02, "std {std}");
    }

    #[test]
    fn uniform_and_index_ranges() {
        let mut rng = RngStream::new(1, 1);
        for _ in 0..10_000 {
            let u = rng.next_uniform();
            assert!((0.0..1.0).contains(&u));
            assert!(rng.next_index(7) < 7);
        }
    }
}
