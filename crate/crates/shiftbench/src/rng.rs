//! Deterministic random number generation.
//!
//! All scenario generation runs on SplitMix64, a 64-bit counter-based
//! generator: the same seed produces the same stream on every platform and
//! every build, which is what makes benchmark reports byte-reproducible.
//! Gamma variates use the Marsaglia–Tsang squeeze method.

/// SplitMix64 generator (Steele, Lea & Flood 2014).
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        mix(self.state)
    }

    /// Uniform draw in [0, 1) with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform draw in (0, 1]; safe as a logarithm argument.
    pub fn next_f64_open(&mut self) -> f64 {
        1.0 - self.next_f64()
    }

    /// Unbiased uniform index in [0, n). Panics if n == 0.
    pub fn next_index(&mut self, n: usize) -> usize {
        assert!(n > 0, "next_index needs a nonempty range");
        let n = n as u64;
        // Rejection sampling over the largest multiple of n.
        let zone = u64::MAX - (u64::MAX % n);
        loop {
            let v = self.next_u64();
            if v < zone {
                return (v % n) as usize;
            }
        }
    }

    /// Standard normal via Box–Muller.
    pub fn next_normal(&mut self) -> f64 {
        let u1 = self.next_f64_open();
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Gamma(shape, 1) via Marsaglia–Tsang; shapes below 1 use the boost
    /// Gamma(shape) = Gamma(shape + 1) * U^(1/shape).
    pub fn next_gamma(&mut self, shape: f64) -> f64 {
        assert!(
            shape > 0.0 && shape.is_finite(),
            "gamma shape must be positive"
        );
        if shape < 1.0 {
            let boost = self.next_f64_open().powf(1.0 / shape);
            return self.next_gamma(shape + 1.0) * boost;
        }
        let d = shape - 1.0 / 3.0;
        let c = 1.0 / (9.0 * d).sqrt();
        loop {
            let x = self.next_normal();
            let base = 1.0 + c * x;
            if base <= 0.0 {
                continue;
            }
            let v = base * base * base;
            let u = self.next_f64_open();
            let x2 = x * x;
            if u < 1.0 - 0.0331 * x2 * x2 {
                return d * v;
            }
            if u.ln() < 0.5 * x2 + d * (1.0 - v + v.ln()) {
                return d * v;
            }
        }
    }

    /// Draw a class index from a probability vector by inverse CDF.
    /// The vector is assumed to sum to 1; the final class absorbs rounding.
    pub fn next_categorical(&mut self, probs: &[f64]) -> usize {
        let u = self.next_f64();
        let mut acc = 0.0;
        for (i, &p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return i;
            }
        }
        probs.len() - 1
    }

    /// Draw `count` distinct indices from [0, n) uniformly without
    /// replacement (partial Fisher–Yates). Panics if count > n.
    pub fn sample_without_replacement(&mut self, n: usize, count: usize) -> Vec<usize> {
        assert!(count <= n, "cannot draw {count} of {n} without replacement");
        let mut pool: Vec<usize> = (0..n).collect();
        for i in 0..count {
            let j = i + self.next_index(n - i);
            pool.swap(i, j);
        }
        pool.truncate(count);
        pool
    }
}

/// Derive an independent stream seed from a base seed and two indices.
/// Adding an index value never perturbs streams at other indices.
pub fn derive_seed(base: u64, stream: u64, substream: u64) -> u64 {
    mix(base
        .wrapping_add(mix(stream.wrapping_add(GOLDEN_GAMMA)))
        .wrapping_add(mix(
            substream.wrapping_mul(GOLDEN_GAMMA) ^ 0xA5A5_A5A5_A5A5_A5A5
        )))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_stream() {
        let mut a = SplitMix64::new(42);
        let mut b = SplitMix64::new(42);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn uniform_range() {
        let mut rng = SplitMix64::new(7);
        for _ in 0..10_000 {
            let u = rng.next_f64();
            assert!((0.0..1.0).contains(&u));
        }
    }

    #[test]
    fn normal_moments() {
        let mut rng = SplitMix64::new(11);
        let n = 200_000;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..n {
            let z = rng.next_normal();
            sum += z;
            sum_sq += z * z;
        }
        let mean = sum / n as f64;
        let var = sum_sq / n as f64 - mean * mean;
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!((var - 1.0).abs() < 0.02, "var {var}");
    }

    #[test]
    fn gamma_moments() {
        // E[Gamma(k,1)] = k, Var = k; check a shape below and above 1.
        for &shape in &[0.4, 3.5] {
            let mut rng = SplitMix64::new(13);
            let n = 200_000;
            let mut sum = 0.0;
            for _ in 0..n {
                sum += rng.next_gamma(shape);
            }
            let mean = sum / n as f64;
            assert!((mean - shape).abs() < 0.02, "shape {shape}: mean {mean}");
        }
    }

    #[test]
    fn sample_without_replacement_distinct() {
        let mut rng = SplitMix64::new(5);
        let picked = rng.sample_without_replacement(100, 40);
        assert_eq!(picked.len(), 40);
        let mut sorted = picked.clone();
        sorted.sort_unstable();
        sorted.dedup();
        assert_eq!(sorted.len(), 40);
        assert!(sorted.iter().all(|&i| i < 100));
    }

    #[test]
    fn derived_seeds_are_stable_under_extension() {
        let s = derive_seed(99, 2, 17);
        assert_eq!(s, derive_seed(99, 2, 17));
        assert_ne!(s, derive_seed(99, 3, 17));
        assert_ne!(s, derive_seed(99, 2, 18));
    }
}
