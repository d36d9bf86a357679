//! Counter-based random streams.
//!
//! Every draw consumes exactly one *slot* (two `u64` words of ChaCha8
//! output), so slot `n` of a stream is a pure function of
//! `(seed, stream id, lane, n)`. That is what lets replicates be split
//! across workers arbitrarily and still reproduce bit for bit.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// ChaCha words (u32) per slot.
const WORDS_PER_SLOT: u128 = 4;

/// Lanes used to derive independent sub-streams from one stream.
pub mod lanes {
    pub const START: u64 = 1;
    pub const START_PRIME: u64 = 2;
    pub const REFRESH_FUTURE: u64 = 3;
    pub const REFRESH_PAST: u64 = 4;
    pub const ORBIT: u64 = 5;
    pub const BOOTSTRAP: u64 = 6;
    pub const SURROGATE: u64 = 7;
    pub const APPROX: u64 = 8;
}

#[derive(Debug, Error, PartialEq)]
pub enum SamplerError {
    #[error("alias table needs at least one weight")]
    Empty,
    #[error("weight {index} is negative or not finite: {value}")]
    BadWeight { index: usize, value: f64 },
    #[error("weights sum to zero")]
    ZeroMass,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[inline]
fn mul_high(x: u64, n: u64) -> u64 {
    ((x as u128 * n as u128) >> 64) as u64
}

/// Deterministic, seekable source of innovations and uniforms.
#[derive(Clone, Debug)]
pub struct InnovationStream {
    seed: u64,
    stream_id: u64,
    lane: u64,
    position: u64,
    rng: ChaCha8Rng,
}

impl InnovationStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        Self::with_lane(seed, stream_id, 0)
    }

    fn with_lane(seed: u64, stream_id: u64, lane: u64) -> Self {
        let mut key = [0u8; 32];
        key[..8].copy_from_slice(&seed.to_le_bytes());
        key[8..16].copy_from_slice(&lane.to_le_bytes());
        key[16..24].copy_from_slice(b"towerlab");
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(stream_id);
        Self {
            seed,
            stream_id,
            lane,
            position: 0,
            rng,
        }
    }

    /// An independent stream keyed by this stream's identity and `lane`.
    /// Forks of forks are distinct from forks of the root.
    pub fn fork(&self, lane: u64) -> Self {
        let derived = splitmix64(self.lane ^ splitmix64(lane.wrapping_add(1)));
        Self::with_lane(self.seed, self.stream_id, derived)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Index of the next slot to be consumed.
    pub fn position(&self) -> u64 {
        self.position
    }

    pub fn seek(&mut self, position: u64) {
        self.rng.set_word_pos(position as u128 * WORDS_PER_SLOT);
        self.position = position;
    }

    #[inline]
    pub fn next_slot(&mut self) -> (u64, u64) {
        self.position += 1;
        (self.rng.next_u64(), self.rng.next_u64())
    }

    /// Uniform on the open interval (0, 1), 53 bits of resolution.
    #[inline]
    pub fn next_uniform(&mut self) -> f64 {
        let (u, _) = self.next_slot();
        ((u >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `0..n`.
    #[inline]
    pub fn next_below(&mut self, n: u64) -> u64 {
        let (u, _) = self.next_slot();
        mul_high(u, n)
    }

    #[inline]
    pub fn next_index(&mut self, table: &AliasTable) -> usize {
        let (u, v) = self.next_slot();
        table.sample(u, v)
    }
}

/// Walker/Vose alias table: O(1) categorical sampling from one slot.
#[derive(Clone, Debug, PartialEq)]
pub struct AliasTable {
    cutoff: Vec<f64>,
    alias: Vec<u32>,
}

impl AliasTable {
    pub fn new(weights: &[f64]) -> Result<Self, SamplerError> {
        if weights.is_empty() {
            return Err(SamplerError::Empty);
        }
        for (index, &value) in weights.iter().enumerate() {
            if !(value.is_finite() && value >= 0.0) {
                return Err(SamplerError::BadWeight { index, value });
            }
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(SamplerError::ZeroMass);
        }
        let n = weights.len();
        let mut scaled: Vec<f64> = weights.iter().map(|w| w * n as f64 / total).collect();
        let mut cutoff = vec![1.0; n];
        let mut alias: Vec<u32> = (0..n as u32).collect();
        let (mut small, mut large): (Vec<usize>, Vec<usize>) =
            (0..n).partition(|&i| scaled[i] < 1.0);
        while let (Some(s), Some(&l)) = (small.pop(), large.last()) {
            cutoff[s] = scaled[s];
            alias[s] = l as u32;
            scaled[l] -= 1.0 - scaled[s];
            if scaled[l] < 1.0 {
                large.pop();
                small.push(l);
            }
        }
        // leftovers are 1 up to rounding
        Ok(Self { cutoff, alias })
    }

    pub fn len(&self) -> usize {
        self.cutoff.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cutoff.is_empty()
    }

    #[inline]
    pub fn sample(&self, u: u64, v: u64) -> usize {
        let column = mul_high(u, self.cutoff.len() as u64) as usize;
        let coin = (v >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
        if coin < self.cutoff[column] {
            column
        } else {
            self.alias[column] as usize
        }
    }

    /// Probability mass the table assigns to each index.
    pub fn probabilities(&self) -> Vec<f64> {
        let n = self.cutoff.len() as f64;
        let mut p = vec![0.0; self.cutoff.len()];
        for (i, (&c, &a)) in self.cutoff.iter().zip(&self.alias).enumerate() {
            p[i] += c / n;
            p[a as usize] += (1.0 - c) / n;
        }
        p
    }
}
