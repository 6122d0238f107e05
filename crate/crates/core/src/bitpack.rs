//! LSB-first bit packing and the little-endian reader/writer shared by the
//! mask and Supermask file formats.

use crate::error::{Error, Result};

pub fn packed_len(bits: usize) -> usize {
    bits.div_ceil(8)
}

/// Pack bits LSB-first; the final byte is zero-padded.
pub fn pack_bits(bits: &[bool]) -> Vec<u8> {
    let mut out = vec![0u8; packed_len(bits.len())];
    for (i, &b) in bits.iter().enumerate() {
        if b {
            out[i / 8] |= 1 << (i % 8);
        }
    }
    out
}

/// Inverse of [`pack_bits`]. Padding bits must be zero.
pub fn unpack_bits(bytes: &[u8], bits: usize) -> Result<Vec<bool>> {
    if bytes.len() != packed_len(bits) {
        return Err(Error::Format {
            offset: 0,
            reason: format!(
                "{} packed bytes for {bits} bits, expected {}",
                bytes.len(),
                packed_len(bits)
            ),
        });
    }
    if !bits.is_multiple_of(8) {
        let last = bytes[bytes.len() - 1];
        if last >> (bits % 8) != 0 {
            return Err(Error::Format {
                offset: bytes.len() - 1,
                reason: "non-zero padding bits".into(),
            });
        }
    }
    Ok((0..bits).map(|i| bytes[i / 8] >> (i % 8) & 1 == 1).collect())
}

#[derive(Debug, Default)]
pub(crate) struct Writer {
    pub buf: Vec<u8>,
}

impl Writer {
    pub fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }

    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    /// u8 length prefix.
    pub fn short_str(&mut self, s: &str) -> Result<()> {
        let len =
            u8::try_from(s.len()).map_err(|_| Error::InvalidArgument(format!("name `{s}` longer than 255 bytes")))?;
        self.u8(len);
        self.bytes(s.as_bytes());
        Ok(())
    }
}

pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub fn pos(&self) -> usize {
        self.pos
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(Error::Format {
                offset: self.pos,
                reason: format!("truncated: needed {n} bytes, {} left", self.remaining()),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub fn short_str(&mut self) -> Result<String> {
        let at = self.pos;
        let len = self.u8()? as usize;
        let bytes = self.take(len)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| Error::Format {
            offset: at,
            reason: "name is not UTF-8".into(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn lsb_first() {
        assert_eq!(
            pack_bits(&[true, false, false, false, false, false, false, false, true]),
            vec![1, 1]
        );
    }

    #[test]
    fn padding_must_be_zero() {
        assert!(unpack_bits(&[0b1000_0001], 3).is_err());
        assert!(unpack_bits(&[0b0000_0101], 3).is_ok());
    }

    proptest! {
        #[test]
        fn roundtrip(bits in proptest::collection::vec(any::<bool>(), 0..200)) {
            let packed = pack_bits(&bits);
            prop_assert_eq!(packed.len(), packed_len(bits.len()));
            prop_assert_eq!(unpack_bits(&packed, bits.len()).unwrap(), bits);
        }
    }
}
