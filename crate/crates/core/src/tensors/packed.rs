//! Bit-packed integer tensor storage.
//!
//! Codes are stored row-major as a little-endian bitstream: the first code of
//! a row occupies the lowest bits of the row's first byte, so for 4-bit codes
//! the low nibble holds the lower column index. Each row is padded to a byte
//! boundary; 8-bit codes are one byte each and 3-bit codes form a contiguous
//! per-row stream.

use crate::error::{Error, Result};

pub const SUPPORTED_BIT_WIDTHS: [u8; 3] = [3, 4, 8];

/// Packed two's-complement (signed) or plain binary (unsigned) integer codes.
///
/// Signed storage holds symmetric-quantization codes in
/// `[-2^(w-1), 2^(w-1)-1]`; unsigned storage holds asymmetric codes in
/// `[0, 2^w - 1]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PackedIntTensor {
    rows: usize,
    cols: usize,
    bit_width: u8,
    signed: bool,
    payload: Vec<u8>,
}

pub fn code_range(bit_width: u8, signed: bool) -> (i32, i32) {
    if signed {
        (-(1 << (bit_width - 1)), (1 << (bit_width - 1)) - 1)
    } else {
        (0, (1 << bit_width) - 1)
    }
}

impl PackedIntTensor {
    /// Pack `codes` (row-major, `rows * cols` entries) at `bit_width`.
    pub fn pack(
        rows: usize,
        cols: usize,
        codes: &[i32],
        bit_width: u8,
        signed: bool,
    ) -> Result<Self> {
        if !SUPPORTED_BIT_WIDTHS.contains(&bit_width) {
            return Err(Error::Argument(format!(
                "unsupported bit width {bit_width}, expected one of {SUPPORTED_BIT_WIDTHS:?}"
            )));
        }
        if codes.len() != rows * cols {
            return Err(Error::Shape(format!(
                "codes length {} != {}x{}",
                codes.len(),
                rows,
                cols
            )));
        }
        let (lo, hi) = code_range(bit_width, signed);
        let stride = Self::row_stride(cols, bit_width);
        let mut payload = Vec::with_capacity(rows * stride);
        let mask = (1u32 << bit_width) - 1;
        for r in 0..rows {
            let mut acc: u32 = 0;
            let mut nbits: u32 = 0;
            for c in 0..cols {
                let v = codes[r * cols + c];
                if v < lo || v > hi {
                    return Err(Error::CodeRange {
                        row: r,
                        col: c,
                        value: v,
                        lo,
                        hi,
                        bits: bit_width,
                    });
                }
                acc |= ((v as u32) & mask) << nbits;
                nbits += u32::from(bit_width);
                while nbits >= 8 {
                    payload.push((acc & 0xff) as u8);
                    acc >>= 8;
                    nbits -= 8;
                }
            }
            if nbits > 0 {
                payload.push((acc & 0xff) as u8);
            }
        }
        debug_assert_eq!(payload.len(), rows * stride);
        Ok(Self {
            rows,
            cols,
            bit_width,
            signed,
            payload,
        })
    }

    /// Reconstruct a packed tensor from raw parts (tensor-file loading).
    pub fn from_payload(
        rows: usize,
        cols: usize,
        bit_width: u8,
        signed: bool,
        payload: Vec<u8>,
    ) -> Result<Self> {
        if !SUPPORTED_BIT_WIDTHS.contains(&bit_width) {
            return Err(Error::Argument(format!(
                "unsupported bit width {bit_width}"
            )));
        }
        let expect = rows * Self::row_stride(cols, bit_width);
        if payload.len() != expect {
            return Err(Error::PayloadMismatch {
                header: payload.len() as u64,
                implied: expect as u64,
            });
        }
        Ok(Self {
            rows,
            cols,
            bit_width,
            signed,
            payload,
        })
    }

    pub fn row_stride(cols: usize, bit_width: u8) -> usize {
        (cols * bit_width as usize + 7) / 8
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn bit_width(&self) -> u8 {
        self.bit_width
    }

    pub fn signed(&self) -> bool {
        self.signed
    }

    pub fn payload(&self) -> &[u8] {
        &self.payload
    }

    /// Decode all codes, row-major.
    pub fn unpack(&self) -> Vec<i32> {
        let mut out = Vec::with_capacity(self.rows * self.cols);
        let stride = Self::row_stride(self.cols, self.bit_width);
        let w = u32::from(self.bit_width);
        let mask = (1u32 << w) - 1;
        for r in 0..self.rows {
            let row = &self.payload[r * stride..(r + 1) * stride];
            let mut acc: u32 = 0;
            let mut nbits: u32 = 0;
            let mut next = 0usize;
            for _ in 0..self.cols {
                while nbits < w {
                    acc |= u32::from(row[next]) << nbits;
                    next += 1;
                    nbits += 8;
                }
                let raw = acc & mask;
                acc >>= w;
                nbits -= w;
                out.push(self.decode_raw(raw));
            }
        }
        out
    }

    pub fn get(&self, r: usize, c: usize) -> i32 {
        let stride = Self::row_stride(self.cols, self.bit_width);
        let w = usize::from(self.bit_width);
        let bit = c * w;
        let row = &self.payload[r * stride..(r + 1) * stride];
        let mut raw: u32 = 0;
        for (i, byte) in row
            .iter()
            .enumerate()
            .take((bit + w + 7) / 8)
            .skip(bit / 8)
        {
            raw |= u32::from(*byte) << ((i - bit / 8) * 8);
        }
        raw >>= bit % 8;
        self.decode_raw(raw & ((1u32 << w) - 1))
    }

    fn decode_raw(&self, raw: u32) -> i32 {
        if self.signed {
            let sign_bit = 1u32 << (self.bit_width - 1);
            if raw >= sign_bit {
                raw as i32 - (1i32 << self.bit_width)
            } else {
                raw as i32
            }
        } else {
            raw as i32
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nibble_layout_low_column_first() {
        let t = PackedIntTensor::pack(1, 2, &[-8, 7], 4, true).unwrap();
        assert_eq!(t.payload(), &[0x78]);
        assert_eq!(t.unpack(), vec![-8, 7]);
    }

    #[test]
    fn zero_byte_for_zero_code() {
        let t = PackedIntTensor::pack(1, 1, &[0], 8, true).unwrap();
        assert_eq!(t.payload(), &[0x00]);
    }

    #[test]
    fn out_of_range_code_rejected_with_position() {
        let err = PackedIntTensor::pack(1, 1, &[5], 3, true).unwrap_err();
        match err {
            Error::CodeRange { row, col, value, hi, .. } => {
                assert_eq!((row, col, value, hi), (0, 0, 5, 3));
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn rows_pad_to_byte_boundary() {
        // 5 columns of 3 bits = 15 bits -> 2 bytes per row.
        let codes: Vec<i32> = vec![1, -4, 3, 0, -1, 2, 2, 2, 2, 2];
        let t = PackedIntTensor::pack(2, 5, &codes, 3, true).unwrap();
        assert_eq!(t.payload().len(), 4);
        assert_eq!(t.unpack(), codes);
        assert_eq!(t.get(0, 1), -4);
        assert_eq!(t.get(1, 4), 2);
    }

    #[test]
    fn unsigned_range() {
        let t = PackedIntTensor::pack(1, 3, &[0, 7, 15], 4, false).unwrap();
        assert_eq!(t.unpack(), vec![0, 7, 15]);
        assert!(PackedIntTensor::pack(1, 1, &[-1], 4, false).is_err());
    }
}
