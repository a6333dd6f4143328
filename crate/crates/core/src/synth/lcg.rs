//! 48-bit linear congruential generator with the POSIX `drand48` constants.

/// Multiplier of the `drand48` family.
pub const LCG_MULTIPLIER: u64 = 0x5_DEEC_E66D;
/// Increment of the `drand48` family.
pub const LCG_INCREMENT: u64 = 0xB;
const MASK: u64 = (1 << 48) - 1;
const MODULUS: f64 = (1u64 << 48) as f64;

/// Generator state. The whole random stream of a run is derived from one of these,
/// so identical seeds give bitwise-identical data on every platform.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LcgState {
    state: u64,
}

impl LcgState {
    /// Seeds the way `srand48` does: high 32 bits from the seed, low 16 bits `0x330E`.
    pub fn seeded(seed: u64) -> Self {
        LcgState {
            state: ((seed << 16) | 0x330E) & MASK,
        }
    }

    /// Uses `state` (reduced mod 2^48) as the raw generator state.
    pub fn from_state(state: u64) -> Self {
        LcgState { state: state & MASK }
    }

    pub fn state(&self) -> u64 {
        self.state
    }

    fn step(&mut self) -> u64 {
        self.state = LCG_MULTIPLIER
            .wrapping_mul(self.state)
            .wrapping_add(LCG_INCREMENT)
            & MASK;
        self.state
    }

    /// Next value in `[0, 1)`: the new state divided by 2^48.
    pub fn next_u01(&mut self) -> f64 {
        self.step() as f64 / MODULUS
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_u01()
    }

    /// Uniform integer in `0..n`.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0);
        ((self.next_u01() * n as f64) as usize).min(n - 1)
    }

    /// Standard normal draw via Box-Muller (cosine branch). A zero first uniform is redrawn.
    pub fn gaussian(&mut self) -> f64 {
        let mut u1 = self.next_u01();
        while u1 == 0.0 {
            u1 = self.next_u01();
        }
        let u2 = self.next_u01();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Stream for item `index` of a collection seeded by `seed`. The pair is hashed
    /// into the 48-bit state, so distinct `(seed, index)` pairs start far apart.
    pub fn derived(seed: u64, index: u64) -> Self {
        Self::from_state(splitmix64(seed ^ splitmix64(index)))
    }
}

/// SplitMix64 finaliser, used only to spread `(seed, index)` pairs over the state space.
fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_stream() {
        let mut a = LcgState::seeded(42);
        let mut b = LcgState::seeded(42);
        for _ in 0..100 {
            assert_eq!(a.next_u01().to_bits(), b.next_u01().to_bits());
        }
        assert_ne!(LcgState::seeded(1).next_u01(), LcgState::seeded(2).next_u01());
    }

    #[test]
    fn uniform_statistics() {
        let mut s = LcgState::seeded(7);
        let n = 100_000;
        let mut sum = 0.0;
        for _ in 0..n {
            let v = s.next_u01();
            assert!((0.0..1.0).contains(&v));
            sum += v;
        }
        assert!((sum / n as f64 - 0.5).abs() < 0.01);
    }

    #[test]
    fn matches_reference_recurrence() {
        // Reference: exact integer arithmetic in u128, no masking tricks.
        let mut x: u128 = 0;
        let mut s = LcgState::from_state(0);
        for _ in 0..3 {
            x = (25_214_903_917u128 * x + 11) % (1u128 << 48);
            assert_eq!(s.next_u01(), x as f64 / 281_474_976_710_656.0);
        }
        // drand48 after srand48(0) starts from 0x330E.
        assert_eq!(LcgState::seeded(0).state(), 0x330E);
    }

    #[test]
    fn gaussian_statistics() {
        let mut s = LcgState::seeded(11);
        let n = 100_000;
        let xs: Vec<f64> = (0..n).map(|_| s.gaussian()).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        let skew = xs.iter().map(|x| (x - mean).powi(3)).sum::<f64>() / n as f64 / var.powf(1.5);
        assert!(mean.abs() < 0.02, "mean {mean}");
        assert!((var - 1.0).abs() < 0.03, "var {var}");
        assert!(skew.abs() < 0.05, "skew {skew}");
        let mut again = LcgState::seeded(11);
        assert_eq!(again.gaussian().to_bits(), xs[0].to_bits());
    }
}
