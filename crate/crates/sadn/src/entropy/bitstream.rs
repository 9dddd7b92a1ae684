//! Container framing for coded light fields.
//!
//! Fixed little-endian layout so streams are byte-identical across
//! platforms:
//!
//! ```text
//! offset  size  field
//!      0     4  magic "SADN"
//!      4     1  format version (currently 1)
//!      5     1  angular resolution A
//!      6     1  image channels C
//!      7     1  reserved, zero
//!      8     4  lenslet height, u32
//!     12     4  lenslet width, u32
//!     16     8  model checksum, u64
//!     24     1  lambda index into the trained rate-distortion grid
//!     25   4*M  per-latent-channel symbol range, i16 min then i16 max
//!   25+4M     8  payload length in bytes, u64
//!        ...    payload (range-coded latents)
//! ```
//!
//! The latent channel count `M` is a property of the model, so the reader
//! takes it from the caller; the checksum field is what catches a stream
//! decoded against the wrong weights.

use std::io::{Read, Write};

use crate::{Error, Result};

pub const MAGIC: [u8; 4] = *b"SADN";
pub const VERSION: u8 = 1;

/// Everything the decoder needs besides the model itself.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Header {
    pub a: u8,
    pub channels: u8,
    pub height: u32,
    pub width: u32,
    pub model_checksum: u64,
    pub lambda_index: u8,
    /// Inclusive latent range per latent channel.
    pub symbol_ranges: Vec<(i16, i16)>,
    pub payload_len: u64,
}

impl Header {
    pub fn validate(&self) -> Result<()> {
        if self.a == 0 {
            return Err(Error::Format("angular resolution 0".into()));
        }
        if self.channels == 0 {
            return Err(Error::Format("channel count 0".into()));
        }
        if self.height % self.a as u32 != 0 || self.width % self.a as u32 != 0 {
            return Err(Error::Format(format!(
                "extents {}x{} not divisible by a={}",
                self.height, self.width, self.a
            )));
        }
        for &(lo, hi) in &self.symbol_ranges {
            if lo > hi {
                return Err(Error::Format(format!("empty symbol range [{lo}, {hi}]")));
            }
        }
        Ok(())
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        self.validate()?;
        w.write_all(&MAGIC)?;
        w.write_all(&[VERSION, self.a, self.channels, 0])?;
        w.write_all(&self.height.to_le_bytes())?;
        w.write_all(&self.width.to_le_bytes())?;
        w.write_all(&self.model_checksum.to_le_bytes())?;
        w.write_all(&[self.lambda_index])?;
        for &(lo, hi) in &self.symbol_ranges {
            w.write_all(&lo.to_le_bytes())?;
            w.write_all(&hi.to_le_bytes())?;
        }
        w.write_all(&self.payload_len.to_le_bytes())?;
        Ok(())
    }

    /// Parses a header whose model has `latent_channels` channels.
    pub fn read_from(mut r: impl Read, latent_channels: usize) -> Result<Header> {
        let mut magic = [0u8; 4];
        read_exact(&mut r, &mut magic, "magic")?;
        if magic != MAGIC {
            return Err(Error::Format(format!("bad magic {magic:02x?}")));
        }
        let mut fixed = [0u8; 4];
        read_exact(&mut r, &mut fixed, "version block")?;
        let [version, a, channels, reserved] = fixed;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        if reserved != 0 {
            return Err(Error::Format(format!("reserved byte is {reserved}")));
        }
        let height = read_u32(&mut r, "height")?;
        let width = read_u32(&mut r, "width")?;
        let model_checksum = read_u64(&mut r, "model checksum")?;
        let mut lambda = [0u8; 1];
        read_exact(&mut r, &mut lambda, "lambda index")?;
        let mut symbol_ranges = Vec::with_capacity(latent_channels);
        for _ in 0..latent_channels {
            let lo = read_i16(&mut r, "symbol range")?;
            let hi = read_i16(&mut r, "symbol range")?;
            symbol_ranges.push((lo, hi));
        }
        let payload_len = read_u64(&mut r, "payload length")?;
        let header = Header {
            a,
            channels,
            height,
            width,
            model_checksum,
            lambda_index: lambda[0],
            symbol_ranges,
            payload_len,
        };
        header.validate()?;
        Ok(header)
    }
}

fn read_exact(r: &mut impl Read, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf)
        .map_err(|_| Error::Format(format!("stream truncated reading {what}")))
}

fn read_u32(r: &mut impl Read, what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read, what: &str) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b, what)?;
    Ok(u64::from_le_bytes(b))
}

fn read_i16(r: &mut impl Read, what: &str) -> Result<i16> {
    let mut b = [0u8; 2];
    read_exact(r, &mut b, what)?;
    Ok(i16::from_le_bytes(b))
}

/// Serializes header plus payload; the header's `payload_len` must match.
pub fn write_stream(header: &Header, payload: &[u8], mut w: impl Write) -> Result<()> {
    if header.payload_len != payload.len() as u64 {
        return Err(Error::Format(format!(
            "header says {} payload bytes, got {}",
            header.payload_len,
            payload.len()
        )));
    }
    header.write_to(&mut w)?;
    w.write_all(payload)?;
    Ok(())
}

/// Reads and length-checks a full stream.
pub fn read_stream(mut r: impl Read, latent_channels: usize) -> Result<(Header, Vec<u8>)> {
    let header = Header::read_from(&mut r, latent_channels)?;
    let mut payload = Vec::new();
    r.read_to_end(&mut payload)?;
    if payload.len() as u64 != header.payload_len {
        return Err(Error::Format(format!(
            "payload is {} bytes, header promised {}",
            payload.len(),
            header.payload_len
        )));
    }
    Ok((header, payload))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Header {
        Header {
            a: 4,
            channels: 3,
            height: 64,
            width: 128,
            model_checksum: 0x0123_4567_89AB_CDEF,
            lambda_index: 2,
            symbol_ranges: vec![(-5, 9), (0, 0)],
            payload_len: 3,
        }
    }

    #[test]
    fn byte_layout_is_frozen() {
        let mut buf = Vec::new();
        sample().write_to(&mut buf).unwrap();
        let expect: Vec<u8> = [
            b"SADN".as_slice(),
            &[1, 4, 3, 0],
            &64u32.to_le_bytes(),
            &128u32.to_le_bytes(),
            &0x0123_4567_89AB_CDEFu64.to_le_bytes(),
            &[2],
            &(-5i16).to_le_bytes(),
            &9i16.to_le_bytes(),
            &0i16.to_le_bytes(),
            &0i16.to_le_bytes(),
            &3u64.to_le_bytes(),
        ]
        .concat();
        assert_eq!(buf, expect);
        assert_eq!(buf.len(), 25 + 4 * 2 + 8);
    }

    #[test]
    fn stream_round_trips() {
        let header = sample();
        let mut buf = Vec::new();
        write_stream(&header, &[7, 8, 9], &mut buf).unwrap();
        let (back, payload) = read_stream(&buf[..], 2).unwrap();
        assert_eq!(back, header);
        assert_eq!(payload, vec![7, 8, 9]);
    }

    #[test]
    fn corruption_is_caught() {
        let header = sample();
        let mut buf = Vec::new();
        write_stream(&header, &[7, 8, 9], &mut buf).unwrap();

        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(read_stream(&bad[..], 2).is_err());

        let mut bad = buf.clone();
        bad[4] = 9; // version
        assert!(read_stream(&bad[..], 2).is_err());

        // truncated payload fails the length check
        let short = &buf[..buf.len() - 1];
        assert!(read_stream(short, 2).is_err());

        // truncated header
        assert!(Header::read_from(&buf[..10], 2).is_err());

        // wrong latent channel count shifts every later field
        assert!(read_stream(&buf[..], 3).is_err());
    }

    #[test]
    fn header_validation() {
        let mut h = sample();
        h.height = 63;
        assert!(h.validate().is_err());
        let mut h = sample();
        h.symbol_ranges[0] = (4, -2);
        assert!(h.validate().is_err());
        let mut h = sample();
        h.a = 0;
        assert!(h.validate().is_err());
    }
}
