//! Counter-based, splittable random streams.
//!
//! A [`Key`] is a 128-bit value derived from a master seed and an ordered list
//! of 64-bit labels. A [`Stream`] is a key plus a 128-bit counter; draw `i` is
//! a fixed function of `(key, i)`, so any stream can be recreated anywhere
//! without coordination. Replicas, lattice units and purposes each get their
//! own label, which is what makes runs independent of scheduling order.
//!
//! The mixing function is the `moremur` 64-bit finalizer applied in two
//! rounds, once per key lane. For two different label lists the derived keys
//! collide with probability about `2^-128` under the usual random-function
//! heuristic. Not suitable for cryptography.

use serde::{Deserialize, Serialize};
use thiserror::Error;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;
const LANE0_SEED: u64 = 0x243F_6A88_85A3_08D3;
const LANE1_SEED: u64 = 0x1319_8A2E_0370_7344;
const LANE1_MUL: u64 = 0xA409_3822_299F_31D1;
const TWO_POW_M53: f64 = 1.0 / (1u64 << 53) as f64;

/// `moremur` finalizer: a bijective 64-bit avalanche mix.
#[inline(always)]
pub fn mix64(mut z: u64) -> u64 {
    z ^= z >> 27;
    z = z.wrapping_mul(0x3C79_AC49_2BA7_B653);
    z ^= z >> 33;
    z = z.wrapping_mul(0x1C69_B3F7_4AC4_AE35);
    z ^ (z >> 27)
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RngError {
    #[error("exponential rate must be positive and finite, got {0}")]
    Rate(f64),
    #[error("poisson mean must be finite and non-negative, got {0}")]
    Mean(f64),
    #[error("bernoulli probability must lie in [0, 1], got {0}")]
    Probability(f64),
    #[error("uniform_int needs n >= 1")]
    EmptyRange,
}

/// Seed plus an ordered label path, e.g. `[replica, unit-label, purpose]`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StreamKey {
    pub master_seed: u64,
    pub labels: Vec<u64>,
}

impl StreamKey {
    pub fn new(master_seed: u64, labels: &[u64]) -> Self {
        StreamKey {
            master_seed,
            labels: labels.to_vec(),
        }
    }

    pub fn key(&self) -> Key {
        self.labels
            .iter()
            .fold(Key::root(self.master_seed), |k, &l| k.child(l))
    }
}

/// Derived 128-bit key.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Key([u64; 2]);

impl Key {
    pub fn root(seed: u64) -> Key {
        Key([
            mix64(seed ^ LANE0_SEED),
            mix64(mix64(seed.wrapping_mul(LANE1_MUL) ^ LANE1_SEED)),
        ])
    }

    /// Key of the sub-stream labelled `label`. Order of labels matters.
    #[inline]
    pub fn child(self, label: u64) -> Key {
        let [a, b] = self.0;
        Key([
            mix64(a ^ mix64(label ^ LANE0_SEED)),
            mix64(b.wrapping_add(mix64(label.wrapping_add(LANE1_SEED)).rotate_left(17))),
        ])
    }

    pub fn stream(self) -> Stream {
        Stream {
            key: self,
            counter: 0,
        }
    }

    /// Draw `index` of this key's stream, as raw bits.
    #[inline(always)]
    pub fn bits_at(self, index: u128) -> u64 {
        let [a, b] = self.0;
        let lo = index as u64;
        let hi = (index >> 64) as u64;
        let z = mix64(a.wrapping_add(lo.wrapping_mul(GOLDEN)));
        mix64(z ^ b ^ hi.wrapping_mul(LANE1_MUL))
    }

    /// Uniform in `[0, 1)` at position `label` of this key's stream. Labels are
    /// hashed coordinates, so distinct units read distinct positions.
    #[inline(always)]
    pub fn uniform_at(self, label: u64) -> f64 {
        bits_to_unit(self.bits_at(label as u128))
    }
}

#[inline(always)]
fn bits_to_unit(x: u64) -> f64 {
    (x >> 11) as f64 * TWO_POW_M53
}

pub fn derive_stream(key: &StreamKey) -> Stream {
    key.key().stream()
}

/// Distributions offered by [`Stream::draw`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Draw {
    Uniform01,
    Exponential(f64),
    Poisson(f64),
    Bernoulli(f64),
    UniformInt(u64),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Stream {
    key: Key,
    counter: u128,
}

impl Stream {
    pub fn key(&self) -> Key {
        self.key
    }

    pub fn position(&self) -> u128 {
        self.counter
    }

    #[inline(always)]
    pub fn next_u64(&mut self) -> u64 {
        let x = self.key.bits_at(self.counter);
        self.counter += 1;
        x
    }

    /// Uniform in `[0, 1)` with 53 random bits.
    #[inline(always)]
    pub fn uniform(&mut self) -> f64 {
        bits_to_unit(self.next_u64())
    }

    /// Uniform in `(0, 1]`.
    #[inline(always)]
    pub fn uniform_pos(&mut self) -> f64 {
        ((self.next_u64() >> 11) + 1) as f64 * TWO_POW_M53
    }

    /// Inverse-CDF exponential; `rate` must be positive.
    #[inline]
    pub fn exponential(&mut self, rate: f64) -> f64 {
        -self.uniform_pos().ln() / rate
    }

    #[inline(always)]
    pub fn bernoulli(&mut self, q: f64) -> bool {
        self.uniform() < q
    }

    /// Unbiased integer in `[0, n)` (Lemire's multiply-and-reject).
    #[inline]
    pub fn below(&mut self, n: u64) -> u64 {
        debug_assert!(n > 0);
        let threshold = n.wrapping_neg() % n;
        loop {
            let m = (self.next_u64() as u128) * (n as u128);
            if (m as u64) >= threshold {
                return (m >> 64) as u64;
            }
        }
    }

    /// Poisson variate: sequential inversion for `mean <= 10`, Hörmann's
    /// transformed rejection (PTRS) above.
    pub fn poisson(&mut self, mean: f64) -> u64 {
        if mean <= 0.0 {
            return 0;
        }
        if mean <= 10.0 {
            let u = self.uniform();
            let mut prob = (-mean).exp();
            let mut cdf = prob;
            let mut k = 0u64;
            while u >= cdf {
                k += 1;
                prob *= mean / k as f64;
                cdf += prob;
                // Remaining mass is below double resolution.
                if prob <= 0.0 || k > 1000 {
                    break;
                }
            }
            return k;
        }
        let smu = mean.sqrt();
        let b = 0.931 + 2.53 * smu;
        let a = -0.059 + 0.02483 * b;
        let inv_alpha = 1.1239 + 1.1328 / (b - 3.4);
        let vr = 0.9277 - 3.6224 / (b - 2.0);
        let ln_mean = mean.ln();
        loop {
            let u = self.uniform() - 0.5;
            let v = self.uniform();
            let us = 0.5 - u.abs();
            let k = ((2.0 * a / us + b) * u + mean + 0.43).floor();
            if us >= 0.07 && v <= vr {
                return k as u64;
            }
            if k < 0.0 || (us < 0.013 && v > us) {
                continue;
            }
            let log_accept = (v * inv_alpha / (a / (us * us) + b)).ln();
            if log_accept <= -mean + k * ln_mean - statrs::function::gamma::ln_gamma(k + 1.0) {
                return k as u64;
            }
        }
    }

    /// Checked entry point covering every supported distribution.
    pub fn draw(&mut self, kind: Draw) -> Result<f64, RngError> {
        match kind {
            Draw::Uniform01 => Ok(self.uniform()),
            Draw::Exponential(rate) => {
                if !(rate > 0.0 && rate.is_finite()) {
                    return Err(RngError::Rate(rate));
                }
                Ok(self.exponential(rate))
            }
            Draw::Poisson(mean) => {
                if !(mean >= 0.0 && mean.is_finite()) {
                    return Err(RngError::Mean(mean));
                }
                Ok(self.poisson(mean) as f64)
            }
            Draw::Bernoulli(q) => {
                if !(0.0..=1.0).contains(&q) {
                    return Err(RngError::Probability(q));
                }
                Ok(if self.bernoulli(q) { 1.0 } else { 0.0 })
            }
            Draw::UniformInt(n) => {
                if n == 0 {
                    return Err(RngError::EmptyRange);
                }
                Ok(self.below(n) as f64)
            }
        }
    }
}
