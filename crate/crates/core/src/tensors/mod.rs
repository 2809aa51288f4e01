//! Dense and bit-packed tensor containers plus the on-disk container format.

mod file;
mod matrix;
mod packed;

pub use file::{
    decode, encode, load, load_matrix, load_packed, save, save_matrix, save_packed, TensorData,
    MAGIC, VERSION,
};
pub use matrix::Matrix;
pub use packed::{code_range, PackedIntTensor, SUPPORTED_BIT_WIDTHS};
