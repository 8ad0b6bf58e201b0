//! Deterministic, splittable random streams.
//!
//! Every stream is identified by a 64-bit seed plus an ordered path of fork
//! labels. The pair is hashed into a 64-bit key, and draw `i` of the stream
//! is the SplitMix64 output function applied to `key + (i + 1) * GOLDEN`.
//! The generator is counter-based, so:
//!
//! * the same `(seed, path)` produces the same sequence on every platform,
//!   since only wrapping integer arithmetic is involved;
//! * forking never touches the parent's counter, and a child's sequence does
//!   not depend on how many values the parent drew before the fork.
//!
//! Key derivation: `key = mix(seed ^ SEED_TWEAK)`, then for each label
//! `key = mix(key ^ fnv1a64(label))`. FNV-1a runs over the UTF-8 bytes of the
//! label followed by a `0xff` terminator so that `["ab"]` and `["a", "b"]`
//! give different keys.
//!
//! Continuous variates (normal, gamma) go through `libm`, a pure-Rust port of
//! musl's math library, rather than the platform `libm`, keeping them
//! bit-stable across targets as well.

use crate::error::{Error, Result};

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;
const SEED_TWEAK: u64 = 0x5851_f42d_4c95_7f2d;

/// SplitMix64 finalizer.
#[inline]
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn fnv1a64(label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in label.as_bytes().iter().chain(std::iter::once(&0xffu8)) {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RandomStream {
    seed: u64,
    path: Vec<String>,
    key: u64,
    counter: u64,
}

impl RandomStream {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            path: Vec::new(),
            key: mix(seed ^ SEED_TWEAK),
            counter: 0,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn path(&self) -> &[String] {
        &self.path
    }

    /// Number of 64-bit words drawn so far.
    pub fn position(&self) -> u64 {
        self.counter
    }

    /// Derives the child stream `(seed, path + label)`.
    pub fn fork(&self, label: &str) -> Result<Self> {
        if label.is_empty() {
            return Err(Error::usage("fork label must be non-empty"));
        }
        let mut path = self.path.clone();
        path.push(label.to_string());
        Ok(Self {
            seed: self.seed,
            path,
            key: mix(self.key ^ fnv1a64(label)),
            counter: 0,
        })
    }

    /// Fork with a label built from a prefix and an index, e.g. `trial-17`.
    /// Infallible because the label is never empty.
    pub fn fork_indexed(&self, prefix: &str, index: usize) -> Self {
        self.fork(&format!("{prefix}-{index}"))
            .expect("indexed label is non-empty")
    }

    pub fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        mix(self.key.wrapping_add(self.counter.wrapping_mul(GOLDEN)))
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `[lo, hi)`; returns `lo` when the range is empty.
    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        let u = self.uniform();
        if hi <= lo {
            lo
        } else {
            lo + (hi - lo) * u
        }
    }

    /// Uniform integer in `0..n`. Panics when `n == 0`.
    pub fn below(&mut self, n: u64) -> u64 {
        assert!(n > 0, "below(0)");
        // Rejection keeps the result unbiased.
        let zone = u64::MAX - (u64::MAX % n);
        loop {
            let v = self.next_u64();
            if v < zone {
                return v % n;
            }
        }
    }

    /// Standard normal draw (Box-Muller, one output per pair of uniforms).
    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        libm::sqrt(-2.0 * libm::log(u1)) * libm::cos(std::f64::consts::TAU * u2)
    }

    /// Gamma(shape, 1) draw via Marsaglia-Tsang, boosted for `shape < 1`.
    pub fn gamma(&mut self, shape: f64) -> f64 {
        debug_assert!(shape > 0.0);
        if shape < 1.0 {
            let g = self.gamma(shape + 1.0);
            let u = 1.0 - self.uniform();
            return g * libm::pow(u, 1.0 / shape);
        }
        let d = shape - 1.0 / 3.0;
        let c = 1.0 / libm::sqrt(9.0 * d);
        loop {
            let (x, v) = loop {
                let x = self.normal();
                let v = 1.0 + c * x;
                if v > 0.0 {
                    break (x, v * v * v);
                }
            };
            let u = 1.0 - self.uniform();
            if u < 1.0 - 0.0331 * x * x * x * x {
                return d * v;
            }
            if libm::log(u) < 0.5 * x * x + d * (1.0 - v + libm::log(v)) {
                return d * v;
            }
        }
    }
}
