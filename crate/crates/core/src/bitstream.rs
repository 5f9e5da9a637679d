//! Stochastic-computing bitstreams.
//!
//! A unipolar stream encodes `p ∈ [0, 1]` as its fraction of ones; a bipolar
//! stream encodes `v = 2p − 1 ∈ [−1, 1]`. For independent operands an AND gate
//! multiplies unipolar values, XNOR multiplies bipolar values, and a
//! multiplexer driven by a p = 0.5 select stream computes `(a + b)/2`.
//!
//! The products only hold when operands are independent, so streams should be
//! drawn from distinct substreams; [`StreamSource`] hands out a fresh substream
//! for every stream it encodes.

use std::fmt::Write as _;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::device::SigmoidFit;
use crate::error::{Error, Result};
use crate::rng::{rng_from_seed, substream, StreamRng};

/// Default stream length for harness experiments.
pub const DEFAULT_LENGTH: usize = 4096;

const HEADER_LEN: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Encoding {
    Unipolar,
    Bipolar,
}

impl Encoding {
    fn flag(self) -> u8 {
        match self {
            Encoding::Unipolar => 0,
            Encoding::Bipolar => 1,
        }
    }
}

/// Immutable fixed-length bit sequence, packed LSB-first into `u64` words.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitStream {
    words: Vec<u64>,
    len: usize,
    encoding: Encoding,
}

fn words_for(len: usize) -> usize {
    len.div_ceil(64)
}

impl BitStream {
    pub fn from_bits(bits: &[bool], encoding: Encoding) -> Self {
        let mut words = vec![0u64; words_for(bits.len())];
        for (i, &b) in bits.iter().enumerate() {
            if b {
                words[i / 64] |= 1 << (i % 64);
            }
        }
        Self { words, len: bits.len(), encoding }
    }

    /// Bernoulli(p) bits drawn from `rng`.
    pub fn bernoulli(p: f64, len: usize, encoding: Encoding, rng: &mut StreamRng) -> Self {
        let mut words = vec![0u64; words_for(len)];
        for (w, word) in words.iter_mut().enumerate() {
            let n = (len - w * 64).min(64);
            for i in 0..n {
                if rng.random::<f64>() < p {
                    *word |= 1 << i;
                }
            }
        }
        Self { words, len, encoding }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn encoding(&self) -> Encoding {
        self.encoding
    }

    pub fn bit(&self, i: usize) -> bool {
        assert!(i < self.len, "bit index {i} out of range {}", self.len);
        self.words[i / 64] >> (i % 64) & 1 == 1
    }

    pub fn bits(&self) -> impl Iterator<Item = bool> + '_ {
        (0..self.len).map(|i| self.bit(i))
    }

    pub fn count_ones(&self) -> u64 {
        self.words.iter().map(|w| u64::from(w.count_ones())).sum()
    }

    /// Fraction of ones.
    pub fn probability(&self) -> f64 {
        self.count_ones() as f64 / self.len as f64
    }

    /// Decoded value under the stream's encoding.
    pub fn value(&self) -> f64 {
        match self.encoding {
            Encoding::Unipolar => self.probability(),
            Encoding::Bipolar => 2.0 * self.probability() - 1.0,
        }
    }

    fn zip_words(&self, other: &Self, op: &str, f: impl Fn(u64, u64) -> u64) -> Result<Self> {
        if self.len != other.len {
            return Err(Error::Shape(format!("{op}: stream lengths differ ({} vs {})", self.len, other.len)));
        }
        let mut words: Vec<u64> = self.words.iter().zip(&other.words).map(|(&a, &b)| f(a, b)).collect();
        mask_tail(&mut words, self.len);
        Ok(Self { words, len: self.len, encoding: self.encoding })
    }

    /// Packed form: 8-byte header (`u32` LE length, encoding flag, 3 zero
    /// bytes) followed by `ceil(len/8)` bytes, bit `i` at `byte[i/8] >> (i%8)`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let len = u32::try_from(self.len).expect("stream longer than u32::MAX bits");
        let mut out = Vec::with_capacity(HEADER_LEN + self.len.div_ceil(8));
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(&[self.encoding.flag(), 0, 0, 0]);
        let body = self.words.iter().flat_map(|w| w.to_le_bytes());
        out.extend(body.take(self.len.div_ceil(8)));
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::Shape(format!("need an 8-byte header, got {} bytes", bytes.len())));
        }
        let len = u32::from_le_bytes(bytes[0..4].try_into().unwrap()) as usize;
        let encoding = match bytes[4] {
            0 => Encoding::Unipolar,
            1 => Encoding::Bipolar,
            f => return Err(Error::Domain(format!("unknown encoding flag {f}"))),
        };
        let body = &bytes[HEADER_LEN..];
        if body.len() != len.div_ceil(8) {
            return Err(Error::Shape(format!("header says {len} bits but body has {} bytes", body.len())));
        }
        let mut words = vec![0u64; words_for(len)];
        for (i, &byte) in body.iter().enumerate() {
            words[i / 8] |= u64::from(byte) << (8 * (i % 8));
        }
        mask_tail(&mut words, len);
        Ok(Self { words, len, encoding })
    }

    /// Hex dump of the packed form, 32 bytes per line.
    pub fn hex_dump(&self) -> String {
        let mut s = String::new();
        for line in self.to_bytes().chunks(32) {
            for b in line {
                let _ = write!(s, "{b:02x}");
            }
            s.push('\n');
        }
        s
    }
}

fn mask_tail(words: &mut [u64], len: usize) {
    if len % 64 != 0 {
        if let Some(last) = words.last_mut() {
            *last &= (1u64 << (len % 64)) - 1;
        }
    }
}

/// Unipolar encoding of `p` with each bit independently 1 with probability `p`.
pub fn encode(p: f64, len: usize, seed: u64) -> Result<BitStream> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Domain(format!("probability {p} outside [0, 1]")));
    }
    if len == 0 {
        return Err(Error::Domain("stream length must be >= 1".into()));
    }
    Ok(BitStream::bernoulli(p, len, Encoding::Unipolar, &mut rng_from_seed(seed)))
}

/// Bipolar encoding of `v ∈ [−1, 1]`.
pub fn encode_bipolar(v: f64, len: usize, seed: u64) -> Result<BitStream> {
    if !(-1.0..=1.0).contains(&v) {
        return Err(Error::Domain(format!("bipolar value {v} outside [-1, 1]")));
    }
    let mut s = encode((v + 1.0) / 2.0, len, seed)?;
    s.encoding = Encoding::Bipolar;
    Ok(s)
}

/// Decoded value of a stream (`ones/L`, or `2·ones/L − 1` for bipolar).
pub fn decode(stream: &BitStream) -> f64 {
    stream.value()
}

/// Unipolar multiply: bitwise AND.
pub fn multiply_and(a: &BitStream, b: &BitStream) -> Result<BitStream> {
    if a.encoding != Encoding::Unipolar || b.encoding != Encoding::Unipolar {
        return Err(Error::Domain("AND multiplication needs unipolar streams".into()));
    }
    a.zip_words(b, "multiply_and", |x, y| x & y)
}

/// Bipolar multiply: bitwise XNOR.
pub fn multiply_xnor(a: &BitStream, b: &BitStream) -> Result<BitStream> {
    if a.encoding != Encoding::Bipolar || b.encoding != Encoding::Bipolar {
        return Err(Error::Domain("XNOR multiplication needs bipolar streams".into()));
    }
    a.zip_words(b, "multiply_xnor", |x, y| !(x ^ y))
}

/// Scaled addition: `out_i = a_i` where `select_i = 1`, else `b_i`.
pub fn scaled_add_mux(a: &BitStream, b: &BitStream, select: &BitStream) -> Result<BitStream> {
    if a.encoding != b.encoding {
        return Err(Error::Domain("MUX inputs must share an encoding".into()));
    }
    let picked_a = a.zip_words(select, "scaled_add_mux", |x, s| x & s)?;
    let picked_b = b.zip_words(select, "scaled_add_mux", |y, s| y & !s)?;
    picked_a.zip_words(&picked_b, "scaled_add_mux", |x, y| x | y)
}

/// Behavioral MTJ random-bit source: each bit is 1 with the fitted switching
/// probability at `bias_current`.
pub fn mtj_rng_stream(fit: &SigmoidFit, bias_current: f64, len: usize, seed: u64) -> BitStream {
    let p = fit.probability(bias_current);
    BitStream::bernoulli(p, len, Encoding::Unipolar, &mut rng_from_seed(seed))
}

/// Hands out streams drawn from independent substreams of one master seed.
#[derive(Debug, Clone)]
pub struct StreamSource {
    master: u64,
    next: u64,
}

impl StreamSource {
    pub fn new(master: u64) -> Self {
        Self { master, next: 0 }
    }

    fn rng(&mut self) -> StreamRng {
        let rng = substream(self.master, "bitstream-operand", self.next);
        self.next += 1;
        rng
    }

    pub fn unipolar(&mut self, p: f64, len: usize) -> Result<BitStream> {
        if !(0.0..=1.0).contains(&p) || len == 0 {
            return Err(Error::Domain(format!("cannot encode p = {p} over {len} bits")));
        }
        Ok(BitStream::bernoulli(p, len, Encoding::Unipolar, &mut self.rng()))
    }

    pub fn bipolar(&mut self, v: f64, len: usize) -> Result<BitStream> {
        if !(-1.0..=1.0).contains(&v) || len == 0 {
            return Err(Error::Domain(format!("cannot encode v = {v} over {len} bits")));
        }
        Ok(BitStream::bernoulli((v + 1.0) / 2.0, len, Encoding::Bipolar, &mut self.rng()))
    }
}
