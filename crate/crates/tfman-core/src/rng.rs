//! Deterministic random number generation.
//!
//! All randomness in the crate flows through this module so that results are
//! reproducible bit-for-bit across runs and thread counts. Independent
//! domains (parameter init, patch sampling, degradation noise, ...) derive
//! their own streams from one master seed; per-item streams are further
//! derived from stable identifiers so work can be scheduled in any order
//! without changing outputs.

/// SplitMix64 step, used both as a stream mixer and as the generator core.
#[inline]
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stream labels keep the reproducibility domains isolated: reseeding one
/// (say, sampling more patches) never shifts another (noise, init).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamKind {
    Init,
    Patch,
    Noise,
}

impl StreamKind {
    fn tag(self) -> u64 {
        match self {
            StreamKind::Init => 0x494E_4954,  // "INIT"
            StreamKind::Patch => 0x5041_5443, // "PATC"
            StreamKind::Noise => 0x4E4F_4953, // "NOIS"
        }
    }
}

/// Small deterministic PRNG (xoshiro256++ seeded via SplitMix64).
#[derive(Debug, Clone)]
pub struct Rng {
    s: [u64; 4],
    gauss_spare: Option<f64>,
}

impl Rng {
    pub fn from_seed(seed: u64) -> Self {
        let mut sm = seed;
        let s = [
            splitmix64(&mut sm),
            splitmix64(&mut sm),
            splitmix64(&mut sm),
            splitmix64(&mut sm),
        ];
        Rng {
            s,
            gauss_spare: None,
        }
    }

    /// Derive the stream for `(master seed, domain)`.
    pub fn stream(master: u64, kind: StreamKind) -> Self {
        Self::substream(master, kind, &[])
    }

    /// Derive the stream for `(master seed, domain, item ids...)`, e.g.
    /// `(seed, Patch, [image_id, draw_index])`. Streams with different ids
    /// are independent, so per-item work is schedule-independent.
    pub fn substream(master: u64, kind: StreamKind, ids: &[u64]) -> Self {
        let mut sm = master ^ kind.tag().rotate_left(17);
        let mut acc = splitmix64(&mut sm);
        for &id in ids {
            sm ^= id.wrapping_mul(0xD134_2543_DE82_EF95);
            acc ^= splitmix64(&mut sm);
        }
        Self::from_seed(acc)
    }

    pub fn next_u64(&mut self) -> u64 {
        let s = &mut self.s;
        let result = s[0]
            .wrapping_add(s[3])
            .rotate_left(23)
            .wrapping_add(s[0]);
        let t = s[1] << 17;
        s[2] ^= s[0];
        s[3] ^= s[1];
        s[1] ^= s[2];
        s[0] ^= s[3];
        s[2] ^= t;
        s[3] = s[3].rotate_left(45);
        result
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `[lo, hi)`.
    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `[0, n)`. Plain multiply-shift; n is tiny here.
    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        ((self.next_u64() >> 11) as u128 * n as u128 >> 53) as usize
    }

    /// Standard normal via Box–Muller (cached spare for the pair).
    pub fn gaussian(&mut self) -> f64 {
        if let Some(z) = self.gauss_spare.take() {
            return z;
        }
        // u in (0,1] so ln is finite.
        let u = 1.0 - self.uniform();
        let v = self.uniform();
        let r = (-2.0 * u.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * v;
        self.gauss_spare = Some(r * theta.sin());
        r * theta.cos()
    }
}

/// Stable 64-bit hash of a string, for deriving per-file streams from stems.
pub fn hash_str(s: &str) -> u64 {
    // FNV-1a
    let mut h = 0xCBF2_9CE4_8422_2325u64;
    for b in s.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}
