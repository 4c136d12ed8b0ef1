//! Fixed pseudo-random generator used for test data and weight
//! initialisation.
//!
//! The generator is pinned so that seeded outputs are identical on every
//! platform and can be frozen into golden tests. It is an xorshift64*
//! generator: the 64-bit state is scrambled once at construction with a
//! single splitmix64 step (which also removes the forbidden all-zero
//! state), and each draw applies
//!
//! ```text
//! x ^= x >> 12;  x ^= x << 25;  x ^= x >> 27;  output = x * 0x2545F4914F6CDD1D
//! ```
//!
//! Uniform doubles take the top 53 bits of a draw. Normal draws use the
//! Marsaglia polar method, consuming uniform pairs and caching the spare
//! value, so a sequence of normal draws is as deterministic as the
//! underlying integer stream.

const MULT: u64 = 0x2545_F491_4F6C_DD1D;

#[derive(Debug, Clone)]
pub struct XorShift64Star {
    state: u64,
    spare_normal: Option<f64>,
}

impl XorShift64Star {
    pub fn new(seed: u64) -> Self {
        // splitmix64 scramble; any seed (including 0) yields a valid state
        let mut z = seed.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
        XorShift64Star {
            state: if z == 0 { 0x9E37_79B9_7F4A_7C15 } else { z },
            spare_normal: None,
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        let mut x = self.state;
        x ^= x >> 12;
        x ^= x << 25;
        x ^= x >> 27;
        self.state = x;
        x.wrapping_mul(MULT)
    }

    /// Uniform draw in [0, 1) with 53 bits of resolution.
    pub fn next_unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform draw in [lo, hi).
    pub fn next_uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_unit()
    }

    /// Normal draw via the polar method.
    pub fn next_normal(&mut self, mean: f64, std_dev: f64) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return mean + std_dev * z;
        }
        loop {
            let u = self.next_uniform(-1.0, 1.0);
            let v = self.next_uniform(-1.0, 1.0);
            let s = u * u + v * v;
            if s > 0.0 && s < 1.0 {
                let factor = (-2.0 * s.ln() / s).sqrt();
                self.spare_normal = Some(v * factor);
                return mean + std_dev * (u * factor);
            }
        }
    }

    /// Fisher-Yates shuffle driven by this generator.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = (self.next_u64() % (i as u64 + 1)) as usize;
            items.swap(i, j);
        }
    }
}
