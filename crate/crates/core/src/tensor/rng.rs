/// Deterministic random generator with a bit-exact cross-platform stream.
///
/// The stream is xoshiro256** (Blackman & Vigna) seeded by four successive
/// SplitMix64 outputs of the 64-bit seed. Derived quantities are fixed as:
///
/// - `next_f64`: `(next_u64() >> 11) as f64 * 2^-53`, uniform on [0, 1).
/// - `next_range(n)`: unbiased modulo rejection (`threshold = n.wrapping_neg() % n`).
/// - `next_gaussian`: Box-Muller on `u1 in (0, 1]`, `u2 in [0, 1)`; the pair's
///   second value is cached and returned by the following call.
/// - `shuffle`: Fisher-Yates from the top index downwards.
#[derive(Debug, Clone)]
pub struct SeededRng {
    state: [u64; 4],
    gauss_spare: Option<f64>,
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        let mut sm = seed;
        let state = [
            splitmix64(&mut sm),
            splitmix64(&mut sm),
            splitmix64(&mut sm),
            splitmix64(&mut sm),
        ];
        Self {
            state,
            gauss_spare: None,
        }
    }

    /// Independent stream for a named role, so adding a consumer does not
    /// shift the draws seen by existing ones. The tag is folded into the seed
    /// by FNV-1a.
    pub fn with_tag(seed: u64, tag: &str) -> Self {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in tag.as_bytes() {
            h ^= u64::from(*b);
            h = h.wrapping_mul(0x0000_0100_0000_01B3);
        }
        Self::new(seed ^ h)
    }

    pub fn next_u64(&mut self) -> u64 {
        let s = &mut self.state;
        let result = s[1].wrapping_mul(5).rotate_left(7).wrapping_mul(9);
        let t = s[1] << 17;
        s[2] ^= s[0];
        s[3] ^= s[1];
        s[1] ^= s[2];
        s[0] ^= s[3];
        s[2] ^= t;
        s[3] = s[3].rotate_left(45);
        result
    }

    /// Uniform on [0, 1) with 53 random bits.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in [0, n). Panics when n == 0.
    pub fn next_range(&mut self, n: u64) -> u64 {
        assert!(n > 0, "next_range requires n > 0");
        let threshold = n.wrapping_neg() % n;
        loop {
            let r = self.next_u64();
            if r >= threshold {
                return r % n;
            }
        }
    }

    /// Standard normal draw via Box-Muller.
    pub fn next_gaussian(&mut self) -> f64 {
        if let Some(v) = self.gauss_spare.take() {
            return v;
        }
        // u1 in (0, 1] keeps the logarithm finite.
        let u1 = ((self.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64);
        let u2 = self.next_f64();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.gauss_spare = Some(r * theta.sin());
        r * theta.cos()
    }

    pub fn shuffle<T>(&mut self, slice: &mut [T]) {
        for i in (1..slice.len()).rev() {
            let j = self.next_range(i as u64 + 1) as usize;
            slice.swap(i, j);
        }
    }
}
