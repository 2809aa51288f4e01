//! Dense row-major matrix, the floating-point reference representation.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dense 2-D array, row-major. Immutable after construction in the public
/// API; the crate's internal builders mutate through `data_mut`.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix<T = f32> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "matrix data length {} != {}x{}",
                data.len(),
                rows,
                cols
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, n, |r, c| if r == c { T::one() } else { T::zero() })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: T) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn col(&self, c: usize) -> Vec<T> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Horizontal slice: columns `[start, start+width)`.
    pub fn slice_cols(&self, start: usize, width: usize) -> Self {
        debug_assert!(start + width <= self.cols);
        let mut data = Vec::with_capacity(self.rows * width);
        for r in 0..self.rows {
            data.extend_from_slice(&self.row(r)[start..start + width]);
        }
        Self {
            rows: self.rows,
            cols: width,
            data,
        }
    }

    /// Vertical slice: rows `[start, start+height)`.
    pub fn slice_rows(&self, start: usize, height: usize) -> Self {
        debug_assert!(start + height <= self.rows);
        let data = self.data[start * self.cols..(start + height) * self.cols].to_vec();
        Self {
            rows: height,
            cols: self.cols,
            data,
        }
    }

    /// Stack two matrices vertically.
    pub fn vcat(top: &Self, bottom: &Self) -> Result<Self> {
        if top.cols != bottom.cols {
            return Err(Error::Shape(format!(
                "vcat: {} cols vs {} cols",
                top.cols, bottom.cols
            )));
        }
        let mut data = top.data.clone();
        data.extend_from_slice(&bottom.data);
        Ok(Self {
            rows: top.rows + bottom.rows,
            cols: top.cols,
            data,
        })
    }

    /// Stack two matrices horizontally.
    pub fn hcat(left: &Self, right: &Self) -> Result<Self> {
        if left.rows != right.rows {
            return Err(Error::Shape(format!(
                "hcat: {} rows vs {} rows",
                left.rows, right.rows
            )));
        }
        let mut out = Self::zeros(left.rows, left.cols + right.cols);
        for r in 0..left.rows {
            out.row_mut(r)[..left.cols].copy_from_slice(left.row(r));
            out.row_mut(r)[left.cols..].copy_from_slice(right.row(r));
        }
        Ok(out)
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data
            .iter()
            .map(|v| {
                let x = v.widen();
                x * x
            })
            .sum::<f64>()
            .sqrt()
    }

    /// Relative Frobenius distance `|a - b|_F / |b|_F` (absolute when `b` is zero).
    pub fn rel_frobenius_distance(a: &Self, b: &Self) -> f64 {
        assert_eq!(a.shape(), b.shape(), "rel_frobenius_distance shape");
        let mut num = 0.0f64;
        let mut den = 0.0f64;
        for (x, y) in a.data.iter().zip(&b.data) {
            let d = x.widen() - y.widen();
            num += d * d;
            den += y.widen() * y.widen();
        }
        if den == 0.0 {
            num.sqrt()
        } else {
            (num / den).sqrt()
        }
    }
}
