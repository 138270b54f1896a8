//! Per-site instruction stacks.
//!
//! Every site carries one raw stream of instructions. Each entry is a sleep
//! instruction with probability `λ/(1+λ)`, otherwise a move towards a
//! uniformly chosen neighbor. The movement stack `ξ_k` and the sleep gaps
//! `g_k` (number of sleep instructions between movement `k` and `k+1`) are
//! derived views of that single stream.
//!
//! The stream is counter-based: entry `k` at site `x` is a pure function of
//! `(master_seed, x, k, λ)`. Nothing is pre-sampled, and every toppling
//! order sees the same stacks.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lattice::{Direction, Site, SquareBox};

/// Identifier of the instruction generator, recorded in every output.
pub const GENERATOR_ID: &str = "arw-splitmix64-ctr/v1";

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer. Bijective on `u64`.
#[inline(always)]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives an independent child seed from `(seed, tag)`.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    mix64(mix64(seed ^ GOLDEN).wrapping_add(mix64(tag.wrapping_add(GOLDEN))))
}

/// Stream key of `site` under `master_seed`.
pub fn site_key(master_seed: u64, site: Site) -> u64 {
    let packed = ((site.x as u32 as u64) << 32) | site.y as u32 as u64;
    derive_seed(master_seed, packed)
}

#[inline(always)]
fn draw(key: u64, k: u64) -> u64 {
    mix64(key.wrapping_add(k.wrapping_mul(GOLDEN)))
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("sleep rate must be finite and non-negative, got {0}")]
pub struct InvalidSleepRate(pub f64);

/// Sleep rate `λ ≥ 0`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct SleepRate(f64);

impl SleepRate {
    pub fn new(lambda: f64) -> Result<Self, InvalidSleepRate> {
        if lambda.is_finite() && lambda >= 0.0 {
            Ok(SleepRate(lambda))
        } else {
            Err(InvalidSleepRate(lambda))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }

    /// Probability `λ/(1+λ)` that an instruction is a sleep instruction.
    pub fn sleep_probability(self) -> f64 {
        self.0 / (1.0 + self.0)
    }

    pub fn is_zero(self) -> bool {
        self.0 == 0.0
    }
}

impl TryFrom<f64> for SleepRate {
    type Error = InvalidSleepRate;
    fn try_from(v: f64) -> Result<Self, Self::Error> {
        SleepRate::new(v)
    }
}

impl From<SleepRate> for f64 {
    fn from(r: SleepRate) -> f64 {
        r.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Instruction {
    Sleep,
    Move(Direction),
}

impl Instruction {
    pub fn is_sleep(self) -> bool {
        matches!(self, Instruction::Sleep)
    }
}

/// Maps raw 64-bit draws to instructions. The top 53 bits decide sleep vs
/// move; the low two bits pick the direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Decoder {
    threshold: u64,
}

impl Decoder {
    pub fn new(rate: SleepRate) -> Self {
        let q = rate.sleep_probability();
        Decoder {
            threshold: (q * (1u64 << 53) as f64).round() as u64,
        }
    }

    #[inline(always)]
    pub fn decode(self, raw: u64) -> Instruction {
        if (raw >> 11) < self.threshold {
            Instruction::Sleep
        } else {
            Instruction::Move(Direction::from_index((raw & 3) as usize))
        }
    }
}

/// Anything that can answer "what is instruction `k` at interior site `i`".
/// Indices are dense interior indices of a [`SquareBox`]; `k` starts at 1.
pub trait InstructionSource {
    fn instruction(&self, site: usize, k: u64) -> Instruction;
}

impl<T: InstructionSource + ?Sized> InstructionSource for &T {
    #[inline]
    fn instruction(&self, site: usize, k: u64) -> Instruction {
        (**self).instruction(site, k)
    }
}

/// Counter-based stacks for every site of a box.
#[derive(Debug, Clone)]
pub struct StreamSource {
    master_seed: u64,
    rate: SleepRate,
    decoder: Decoder,
    keys: Vec<u64>,
    sites: Vec<Site>,
}

impl StreamSource {
    pub fn new(domain: &SquareBox, master_seed: u64, rate: SleepRate) -> Self {
        let sites: Vec<Site> = domain.sites().collect();
        StreamSource {
            master_seed,
            rate,
            decoder: Decoder::new(rate),
            keys: sites.iter().map(|&s| site_key(master_seed, s)).collect(),
            sites,
        }
    }

    pub fn stream(&self, site: usize) -> InstructionStream {
        InstructionStream::new(self.master_seed, self.sites[site], self.rate)
    }
}

impl InstructionSource for StreamSource {
    #[inline(always)]
    fn instruction(&self, site: usize, k: u64) -> Instruction {
        self.decoder.decode(draw(self.keys[site], k))
    }
}

/// Read-only views derived from a raw instruction stream. `instruction_at`
/// is 1-based.
pub trait SiteStream {
    fn instruction_at(&self, k: u64) -> Instruction;

    /// Stream position of the first instruction after the `m`-th movement
    /// (position 1 when `m = 0`).
    fn position_after_movement(&self, m: u64) -> u64 {
        let mut seen = 0;
        let mut k = 1;
        while seen < m {
            if !self.instruction_at(k).is_sleep() {
                seen += 1;
            }
            k += 1;
        }
        k
    }

    /// `n_{x,y}(m)` for every direction at once.
    fn movement_counts(&self, m: u64) -> [u64; 4] {
        let mut counts = [0u64; 4];
        let mut seen = 0;
        let mut k = 1;
        while seen < m {
            if let Instruction::Move(d) = self.instruction_at(k) {
                counts[d.index()] += 1;
                seen += 1;
            }
            k += 1;
        }
        counts
    }

    /// Number of times direction `d` appears among the first `m` movements.
    fn movement_count(&self, m: u64, d: Direction) -> u64 {
        self.movement_counts(m)[d.index()]
    }

    /// Sleep run length between movement `k` and movement `k + 1`; `gap(0)`
    /// precedes the first movement.
    fn gap(&self, k: u64) -> u64 {
        let mut pos = self.position_after_movement(k);
        let mut run = 0;
        while self.instruction_at(pos).is_sleep() {
            run += 1;
            pos += 1;
        }
        run
    }

    /// `χ(m) = 1{g_m > 0}`: whether the instruction right after the `m`-th
    /// movement is a sleep instruction.
    fn chi(&self, m: u64) -> bool {
        self.instruction_at(self.position_after_movement(m)).is_sleep()
    }

    /// The `k`-th movement instruction `ξ_k` (1-based).
    fn movement(&self, k: u64) -> Direction {
        assert!(k >= 1, "movement indices start at 1");
        let pos = self.position_after_movement(k - 1);
        let mut p = pos;
        loop {
            if let Instruction::Move(d) = self.instruction_at(p) {
                return d;
            }
            p += 1;
        }
    }
}

/// A single site's stream in isolation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstructionStream {
    pub master_seed: u64,
    pub site: Site,
    lambda: u64,
    key: u64,
    decoder: Decoder,
    /// Number of instructions handed out by [`InstructionStream::next_instruction`].
    pub consumed: u64,
}

impl InstructionStream {
    pub fn new(master_seed: u64, site: Site, rate: SleepRate) -> Self {
        InstructionStream {
            master_seed,
            site,
            lambda: rate.value().to_bits(),
            key: site_key(master_seed, site),
            decoder: Decoder::new(rate),
            consumed: 0,
        }
    }

    pub fn lambda(&self) -> f64 {
        f64::from_bits(self.lambda)
    }

    pub fn next_instruction(&mut self) -> Instruction {
        self.consumed += 1;
        self.instruction_at(self.consumed)
    }
}

impl SiteStream for InstructionStream {
    #[inline]
    fn instruction_at(&self, k: u64) -> Instruction {
        assert!(k >= 1, "instruction indices start at 1");
        self.decoder.decode(draw(self.key, k))
    }
}

/// One site of an [`InstructionSource`], viewed as a stream.
#[derive(Debug, Clone, Copy)]
pub struct SiteView<'a, S: ?Sized> {
    pub source: &'a S,
    pub site: usize,
}

impl<'a, S: InstructionSource + ?Sized> SiteView<'a, S> {
    pub fn new(source: &'a S, site: usize) -> Self {
        SiteView { source, site }
    }
}

impl<S: InstructionSource + ?Sized> SiteStream for SiteView<'_, S> {
    #[inline]
    fn instruction_at(&self, k: u64) -> Instruction {
        self.source.instruction(self.site, k)
    }
}
