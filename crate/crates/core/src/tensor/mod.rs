//! Dense row-major tensors.

mod io;

pub use io::{decode, encode, read_tensor, write_tensor};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    dims: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(dims: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let n = checked_len(&dims)?;
        if n != data.len() {
            return Err(Error::shape(
                "tensor",
                format!("dims {dims:?} hold {n} elements but data has {}", data.len()),
            ));
        }
        Ok(Tensor { dims, data })
    }

    pub fn zeros(dims: Vec<usize>) -> Self {
        let n = dims.iter().product();
        Tensor {
            dims,
            data: vec![T::zero(); n],
        }
    }

    pub fn filled(dims: Vec<usize>, value: T) -> Self {
        let n = dims.iter().product();
        Tensor {
            dims,
            data: vec![value; n],
        }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn rank(&self) -> usize {
        self.dims.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn reshape(self, dims: Vec<usize>) -> Result<Self> {
        Tensor::new(dims, self.data)
    }

    /// Copy of the leading-axis slices `start..end`.
    pub fn slice_outer(&self, start: usize, end: usize) -> Self {
        let inner: usize = self.dims[1..].iter().product();
        let mut dims = self.dims.clone();
        dims[0] = end - start;
        Tensor {
            dims,
            data: self.data[start * inner..end * inner].to_vec(),
        }
    }

    /// Gathers leading-axis slices by index.
    pub fn gather_outer(&self, indices: &[usize]) -> Self {
        let inner: usize = self.dims[1..].iter().product();
        let mut data = Vec::with_capacity(indices.len() * inner);
        for &i in indices {
            data.extend_from_slice(&self.data[i * inner..(i + 1) * inner]);
        }
        let mut dims = self.dims.clone();
        dims[0] = indices.len();
        Tensor { dims, data }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Fraction of entries that are exactly zero.
    pub fn zero_fraction(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        let zeros = self.data.iter().filter(|v| **v == T::zero()).count();
        zeros as f64 / self.data.len() as f64
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            dims: self.dims.clone(),
            data: self
                .data
                .iter()
                .map(|v| U::from_f64_lossy(v.to_f64_lossy()))
                .collect(),
        }
    }
}

pub(crate) fn checked_len(dims: &[usize]) -> Result<usize> {
    dims.iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::DimOverflow(dims.iter().map(|&d| d as u64).collect()))
}

/// Row-major matrix product `a[m×k] · b[k×n]`, rows computed in parallel.
pub fn matmul<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    use rayon::prelude::*;
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    let mut out = vec![T::zero(); m * n];
    if n == 0 {
        return out;
    }
    out.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
        let arow = &a[i * k..(i + 1) * k];
        for (p, &av) in arow.iter().enumerate() {
            if av == T::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    });
    out
}

pub fn transpose<T: Scalar>(a: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = vec![T::zero(); rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = a[r * cols + c];
        }
    }
    out
}
