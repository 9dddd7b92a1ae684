//! Byte-oriented range coder with carry counting.
//!
//! Symbols are coded against cumulative-frequency intervals on a
//! power-of-two total, so one symbol costs `-log2(freq / 2^P)` bits plus
//! a vanishing truncation overhead. The encoder defers bytes through a
//! cache so a late carry can still ripple into them; the decoder primes
//! itself with five bytes (the first is always the encoder's zero cache)
//! and reads zeros past the end of the payload, which the final
//! normalizations of a well-formed stream are allowed to touch.

use crate::{Error, Result};

/// Renormalization threshold: coder state always keeps at least 24 bits.
const TOP: u32 = 1 << 24;

/// Largest supported cumulative-total width; must stay below the 24
/// renormalization bits so interval widths never collapse to zero.
pub const MAX_PRECISION_BITS: u32 = 16;

fn check_interval(cum_lo: u32, cum_hi: u32, precision_bits: u32) -> Result<()> {
    if precision_bits == 0 || precision_bits > MAX_PRECISION_BITS {
        return Err(Error::Config(format!(
            "precision {precision_bits} outside 1..={MAX_PRECISION_BITS} bits"
        )));
    }
    if cum_lo >= cum_hi || cum_hi > 1 << precision_bits {
        return Err(Error::Config(format!(
            "empty or out-of-range interval [{cum_lo}, {cum_hi}) at {precision_bits} bits"
        )));
    }
    Ok(())
}

#[derive(Debug, Default)]
pub struct RangeEncoder {
    low: u64,
    range: u32,
    cache: u8,
    /// Number of deferred bytes: the cache byte plus any run of 0xFF
    /// bytes that a carry could still increment.
    cache_size: u64,
    out: Vec<u8>,
}

impl RangeEncoder {
    pub fn new() -> Self {
        RangeEncoder { low: 0, range: u32::MAX, cache: 0, cache_size: 1, out: Vec::new() }
    }

    /// Narrows the coder state to the interval `[cum_lo, cum_hi)` out of
    /// `2^precision_bits`.
    pub fn encode(&mut self, cum_lo: u32, cum_hi: u32, precision_bits: u32) -> Result<()> {
        check_interval(cum_lo, cum_hi, precision_bits)?;
        let r = self.range >> precision_bits;
        self.low += r as u64 * cum_lo as u64;
        self.range = r * (cum_hi - cum_lo);
        while self.range < TOP {
            self.shift_low();
            self.range <<= 8;
        }
        Ok(())
    }

    fn shift_low(&mut self) {
        if self.low < 0xFF00_0000 || self.low > 0xFFFF_FFFF {
            let carry = (self.low >> 32) as u8;
            let mut byte = self.cache;
            while self.cache_size > 0 {
                self.out.push(byte.wrapping_add(carry));
                byte = 0xFF;
                self.cache_size -= 1;
            }
            self.cache = (self.low >> 24) as u8;
        }
        self.cache_size += 1;
        self.low = (self.low & 0x00FF_FFFF) << 8;
    }

    /// Flushes the remaining state and returns the payload.
    pub fn finish(mut self) -> Vec<u8> {
        for _ in 0..5 {
            self.shift_low();
        }
        self.out
    }
}

#[derive(Debug)]
pub struct RangeDecoder<'a> {
    data: &'a [u8],
    pos: usize,
    /// Bytes fetched beyond the payload (served as zeros).
    overrun: usize,
    code: u32,
    range: u32,
}

impl<'a> RangeDecoder<'a> {
    pub fn new(data: &'a [u8]) -> Self {
        let mut d = RangeDecoder { data, pos: 0, overrun: 0, code: 0, range: u32::MAX };
        for _ in 0..5 {
            let b = d.next_byte();
            d.code = (d.code << 8) | b as u32;
        }
        d
    }

    fn next_byte(&mut self) -> u8 {
        match self.data.get(self.pos) {
            Some(&b) => {
                self.pos += 1;
                b
            }
            None => {
                self.overrun += 1;
                0
            }
        }
    }

    /// Cumulative-frequency position of the next symbol; look it up in
    /// the table, then commit with [`RangeDecoder::consume`].
    pub fn find(&mut self, precision_bits: u32) -> Result<u32> {
        if precision_bits == 0 || precision_bits > MAX_PRECISION_BITS {
            return Err(Error::Config(format!(
                "precision {precision_bits} outside 1..={MAX_PRECISION_BITS} bits"
            )));
        }
        let r = self.range >> precision_bits;
        Ok((self.code / r).min((1 << precision_bits) - 1))
    }

    /// Narrows the decoder by the interval the found symbol occupies.
    /// Must mirror the encoder call exactly.
    pub fn consume(&mut self, cum_lo: u32, cum_hi: u32, precision_bits: u32) -> Result<()> {
        check_interval(cum_lo, cum_hi, precision_bits)?;
        let r = self.range >> precision_bits;
        self.code -= r * cum_lo;
        self.range = r * (cum_hi - cum_lo);
        while self.range < TOP {
            self.code = (self.code << 8) | self.next_byte() as u32;
            self.range <<= 8;
        }
        Ok(())
    }

    /// Zero bytes served past the end of the payload so far. A healthy
    /// stream finishes with only a few; large values mean truncation.
    pub fn overrun(&self) -> usize {
        self.overrun
    }
}
