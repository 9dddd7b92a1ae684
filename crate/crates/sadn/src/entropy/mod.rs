//! Lossless coding of quantized latents: range coder, learned symbol
//! distributions, and the stream container.

pub mod bitstream;
pub mod model;
pub mod range;

pub use bitstream::{read_stream, write_stream, Header};
pub use model::{build_table, SymbolTable, PRECISION_BITS, PROB_FLOOR};
pub use range::{RangeDecoder, RangeEncoder};

use crate::autodiff::Tensor;
use crate::{Error, Result};

/// Decoders reading further than this past the payload indicate a
/// malformed stream rather than ordinary flush slack.
pub const MAX_DECODER_OVERRUN: usize = 8;

/// Inclusive integer range of one latent channel after rounding.
pub fn symbol_range(latents: &Tensor, channel: usize) -> Result<(i64, i64)> {
    let [n, c, h, w] = latents.shape();
    if channel >= c {
        return Err(Error::Index(format!("channel {channel} of {c}")));
    }
    let mut lo = i64::MAX;
    let mut hi = i64::MIN;
    for bn in 0..n {
        for i in 0..h {
            for &v in latents.row(bn, channel, i) {
                if !v.is_finite() || v.fract() != 0.0 {
                    return Err(Error::Numeric(format!("latent {v} is not an integer")));
                }
                let k = v as i64;
                lo = lo.min(k);
                hi = hi.max(k);
            }
        }
    }
    let _ = (w, h);
    Ok((lo, hi))
}

/// Range-codes integer latents channel by channel, row-major, against one
/// table per channel.
pub fn encode_latent_planes(latents: &Tensor, tables: &[SymbolTable]) -> Result<Vec<u8>> {
    let [n, c, h, _] = latents.shape();
    if tables.len() != c {
        return Err(Error::Config(format!("{} tables for {c} latent channels", tables.len())));
    }
    let mut enc = RangeEncoder::new();
    for bn in 0..n {
        for ch in 0..c {
            let table = &tables[ch];
            for i in 0..h {
                for &v in latents.row(bn, ch, i) {
                    if !v.is_finite() || v.fract() != 0.0 {
                        return Err(Error::Numeric(format!("latent {v} is not an integer")));
                    }
                    let bin = table.bin_of(v as i64)?;
                    let (lo, hi) = table.interval(bin);
                    enc.encode(lo, hi, PRECISION_BITS)?;
                }
            }
        }
    }
    Ok(enc.finish())
}

/// Inverse of [`encode_latent_planes`] for a known latent shape.
pub fn decode_latent_planes(
    payload: &[u8],
    tables: &[SymbolTable],
    shape: [usize; 4],
) -> Result<Tensor> {
    let [n, c, h, _] = shape;
    if tables.len() != c {
        return Err(Error::Config(format!("{} tables for {c} latent channels", tables.len())));
    }
    let mut dec = RangeDecoder::new(payload);
    let mut out = Tensor::zeros(shape);
    for bn in 0..n {
        for ch in 0..c {
            let table = &tables[ch];
            for i in 0..h {
                for slot in out.row_mut(bn, ch, i) {
                    let f = dec.find(PRECISION_BITS)?;
                    let bin = table.find(f);
                    let (lo, hi) = table.interval(bin);
                    dec.consume(lo, hi, PRECISION_BITS)?;
                    *slot = table.value_of(bin) as f64;
                }
            }
        }
    }
    if dec.overrun() > MAX_DECODER_OVERRUN {
        return Err(Error::Format(format!(
            "decoder ran {} bytes past the payload",
            dec.overrun()
        )));
    }
    Ok(out)
}

/// Codelength the tables assign to these latents, in bits; the range
/// coder's output can only be longer by bounded slack.
pub fn ideal_payload_bits(latents: &Tensor, tables: &[SymbolTable]) -> Result<f64> {
    let [n, c, h, _] = latents.shape();
    if tables.len() != c {
        return Err(Error::Config(format!("{} tables for {c} latent channels", tables.len())));
    }
    let mut bits = 0.0;
    for bn in 0..n {
        for ch in 0..c {
            let table = &tables[ch];
            for i in 0..h {
                for &v in latents.row(bn, ch, i) {
                    bits += table.bits_of(table.bin_of(v as i64)?);
                }
            }
        }
    }
    Ok(bits)
}
