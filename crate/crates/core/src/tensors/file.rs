//! On-disk tensor container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! offset  size  field
//! 0       8     magic "ATOMTNSR"
//! 8       2     version (u16, currently 1)
//! 10      1     dtype tag: 0 = fp32 matrix, 1 = packed int
//! 11      1     flags: bit 0 = signed codes (packed only)
//! 12      1     bit width (packed only, 0 for fp32)
//! 13      3     reserved, zero
//! 16      8     rows (u64)
//! 24      8     cols (u64)
//! 32      8     payload length in bytes (u64)
//! 40      ...   payload: fp32 values (LE) or packed code bytes
//! ```
//!
//! Round trips are bit-exact for both dtypes. Loading an fp32 tensor rejects
//! NaN/Inf values.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensors::{Matrix, PackedIntTensor};

pub const MAGIC: [u8; 8] = *b"ATOMTNSR";
pub const VERSION: u16 = 1;

const DTYPE_FP32: u8 = 0;
const DTYPE_PACKED: u8 = 1;
const HEADER_LEN: usize = 40;

/// Either payload a tensor file can hold.
#[derive(Clone, Debug, PartialEq)]
pub enum TensorData {
    Fp32(Matrix<f32>),
    Packed(PackedIntTensor),
}

pub fn save(path: impl AsRef<Path>, data: &TensorData) -> Result<()> {
    fs::write(path, encode(data))?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<TensorData> {
    decode(&fs::read(path)?)
}

pub fn save_matrix(path: impl AsRef<Path>, m: &Matrix<f32>) -> Result<()> {
    save(path, &TensorData::Fp32(m.clone()))
}

pub fn load_matrix(path: impl AsRef<Path>) -> Result<Matrix<f32>> {
    match load(path)? {
        TensorData::Fp32(m) => Ok(m),
        TensorData::Packed(_) => Err(Error::Argument(
            "expected an fp32 tensor, found packed codes".into(),
        )),
    }
}

pub fn save_packed(path: impl AsRef<Path>, t: &PackedIntTensor) -> Result<()> {
    save(path, &TensorData::Packed(t.clone()))
}

pub fn load_packed(path: impl AsRef<Path>) -> Result<PackedIntTensor> {
    match load(path)? {
        TensorData::Packed(t) => Ok(t),
        TensorData::Fp32(_) => Err(Error::Argument(
            "expected packed codes, found an fp32 tensor".into(),
        )),
    }
}

pub fn encode(data: &TensorData) -> Vec<u8> {
    let (dtype, flags, bit_width, rows, cols, payload): (u8, u8, u8, u64, u64, Vec<u8>) =
        match data {
            TensorData::Fp32(m) => {
                let mut payload = Vec::with_capacity(m.data().len() * 4);
                for v in m.data() {
                    payload.extend_from_slice(&v.to_le_bytes());
                }
                (DTYPE_FP32, 0, 0, m.rows() as u64, m.cols() as u64, payload)
            }
            TensorData::Packed(t) => (
                DTYPE_PACKED,
                u8::from(t.signed()),
                t.bit_width(),
                t.rows() as u64,
                t.cols() as u64,
                t.payload().to_vec(),
            ),
        };
    let mut out = Vec::with_capacity(HEADER_LEN + payload.len());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(dtype);
    out.push(flags);
    out.push(bit_width);
    out.extend_from_slice(&[0u8; 3]);
    out.extend_from_slice(&rows.to_le_bytes());
    out.extend_from_slice(&cols.to_le_bytes());
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out.extend_from_slice(&payload);
    out
}

pub fn decode(bytes: &[u8]) -> Result<TensorData> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Truncated {
            expected: HEADER_LEN as u64,
            actual: bytes.len() as u64,
        });
    }
    let mut magic = [0u8; 8];
    magic.copy_from_slice(&bytes[0..8]);
    if magic != MAGIC {
        return Err(Error::BadMagic {
            expected: MAGIC,
            found: magic,
        });
    }
    let version = u16::from_le_bytes([bytes[8], bytes[9]]);
    if version != VERSION {
        return Err(Error::Version(version));
    }
    let dtype = bytes[10];
    let flags = bytes[11];
    let bit_width = bytes[12];
    let rows = u64::from_le_bytes(bytes[16..24].try_into().unwrap()) as usize;
    let cols = u64::from_le_bytes(bytes[24..32].try_into().unwrap()) as usize;
    let payload_len = u64::from_le_bytes(bytes[32..40].try_into().unwrap());
    let actual = (bytes.len() - HEADER_LEN) as u64;
    if actual < payload_len {
        return Err(Error::Truncated {
            expected: payload_len,
            actual,
        });
    }
    let payload = &bytes[HEADER_LEN..HEADER_LEN + payload_len as usize];
    match dtype {
        DTYPE_FP32 => {
            let implied = (rows * cols * 4) as u64;
            if payload_len != implied {
                return Err(Error::PayloadMismatch {
                    header: payload_len,
                    implied,
                });
            }
            let mut data = Vec::with_capacity(rows * cols);
            for (i, chunk) in payload.chunks_exact(4).enumerate() {
                let v = f32::from_le_bytes(chunk.try_into().unwrap());
                if !v.is_finite() {
                    return Err(Error::NonFinite {
                        row: i / cols.max(1),
                        col: i % cols.max(1),
                    });
                }
                data.push(v);
            }
            Ok(TensorData::Fp32(Matrix::from_vec(rows, cols, data)?))
        }
        DTYPE_PACKED => {
            let implied = (rows * PackedIntTensor::row_stride(cols, bit_width)) as u64;
            if payload_len != implied {
                return Err(Error::PayloadMismatch {
                    header: payload_len,
                    implied,
                });
            }
            Ok(TensorData::Packed(PackedIntTensor::from_payload(
                rows,
                cols,
                bit_width,
                flags & 1 == 1,
                payload.to_vec(),
            )?))
        }
        other => Err(Error::DType(other)),
    }
}
