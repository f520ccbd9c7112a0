//! Toeplitz (im2col) lowering and the per-layer forward product `Y = X·A + B𝟙`.

use crate::error::{Error, Result};
use crate::layer::{FilterBank, LayerShape};
use crate::scalar::Scalar;
use crate::tensor::{matmul, Tensor};

/// Lowers `input[k, in_c, in_h, in_w]` to the `[k·out_h·out_w, m]` Toeplitz matrix.
///
/// Column `j = c·filt_h·filt_w + r·filt_w + s` matches row `j` of the weight matrix.
pub fn im2col<T: Scalar>(input: &Tensor<T>, shape: &LayerShape) -> Result<Tensor<T>> {
    im2col_named(input, shape, "layer")
}

pub fn im2col_named<T: Scalar>(
    input: &Tensor<T>,
    shape: &LayerShape,
    layer: &str,
) -> Result<Tensor<T>> {
    shape.validate()?;
    check_input(input, shape, layer)?;
    let k = input.dims()[0];
    let (c_in, h, w) = (shape.in_c, shape.in_h, shape.in_w);
    let (fh, fw) = (shape.filt_h, shape.filt_w);
    let (oh, ow) = (shape.out_h(), shape.out_w());
    let (stride, pad) = (shape.stride, shape.pad);
    let m = shape.m();
    let x = input.data();
    let mut out = vec![T::zero(); k * oh * ow * m];
    let mut row = 0;
    for b in 0..k {
        for p in 0..oh {
            for q in 0..ow {
                let dst = &mut out[row * m..(row + 1) * m];
                let mut j = 0;
                for c in 0..c_in {
                    let plane = &x[(b * c_in + c) * h * w..(b * c_in + c + 1) * h * w];
                    for r in 0..fh {
                        let iy = (p * stride + r) as isize - pad as isize;
                        for s in 0..fw {
                            let ix = (q * stride + s) as isize - pad as isize;
                            if iy >= 0 && (iy as usize) < h && ix >= 0 && (ix as usize) < w {
                                dst[j] = plane[iy as usize * w + ix as usize];
                            }
                            j += 1;
                        }
                    }
                }
                row += 1;
            }
        }
    }
    Tensor::new(vec![k * oh * ow, m], out)
}

/// Adjoint of [`im2col`]: scatters `[k·out_h·out_w, m]` gradients back to input layout.
pub fn col2im<T: Scalar>(cols: &[T], k: usize, shape: &LayerShape) -> Tensor<T> {
    let (c_in, h, w) = (shape.in_c, shape.in_h, shape.in_w);
    let (fh, fw) = (shape.filt_h, shape.filt_w);
    let (oh, ow) = (shape.out_h(), shape.out_w());
    let (stride, pad) = (shape.stride, shape.pad);
    let m = shape.m();
    let mut out = vec![T::zero(); k * c_in * h * w];
    let mut row = 0;
    for b in 0..k {
        for p in 0..oh {
            for q in 0..ow {
                let src = &cols[row * m..(row + 1) * m];
                let mut j = 0;
                for c in 0..c_in {
                    let base = (b * c_in + c) * h * w;
                    for r in 0..fh {
                        let iy = (p * stride + r) as isize - pad as isize;
                        for s in 0..fw {
                            let ix = (q * stride + s) as isize - pad as isize;
                            if iy >= 0 && (iy as usize) < h && ix >= 0 && (ix as usize) < w {
                                out[base + iy as usize * w + ix as usize] += src[j];
                            }
                            j += 1;
                        }
                    }
                }
                row += 1;
            }
        }
    }
    Tensor::new(vec![k, c_in, h, w], out).expect("col2im dims are consistent")
}

fn check_input<T: Scalar>(input: &Tensor<T>, shape: &LayerShape, layer: &str) -> Result<()> {
    let d = input.dims();
    if d.len() != 4 {
        return Err(Error::shape(
            layer,
            format!("expected rank-4 input [k, c, h, w], got dims {d:?}"),
        ));
    }
    for (name, got, want) in [
        ("in_c", d[1], shape.in_c),
        ("in_h", d[2], shape.in_h),
        ("in_w", d[3], shape.in_w),
    ] {
        if got != want {
            return Err(Error::shape(
                layer,
                format!("{name} is {got}, layer expects {want}"),
            ));
        }
    }
    Ok(())
}

/// `X·A + B𝟙` on a lowered input; rows are output positions, columns filters.
pub fn lowered_product<T: Scalar>(cols: &Tensor<T>, bank: &FilterBank<T>) -> Vec<T> {
    let rows = cols.dims()[0];
    let (m, n) = (bank.m(), bank.n());
    let mut y = matmul(cols.data(), &bank.weights, rows, m, n);
    for r in 0..rows {
        for (v, &b) in y[r * n..(r + 1) * n].iter_mut().zip(&bank.bias) {
            *v += b;
        }
    }
    y
}

/// Reorders `[k·oh·ow, n]` lowered outputs to `[k, n, oh, ow]`.
pub fn rows_to_nchw<T: Scalar>(y: &[T], k: usize, n: usize, oh: usize, ow: usize) -> Vec<T> {
    let plane = oh * ow;
    let mut out = vec![T::zero(); k * n * plane];
    for b in 0..k {
        for pos in 0..plane {
            let src = &y[(b * plane + pos) * n..(b * plane + pos + 1) * n];
            for (i, &v) in src.iter().enumerate() {
                out[(b * n + i) * plane + pos] = v;
            }
        }
    }
    out
}

/// Inverse of [`rows_to_nchw`].
pub fn nchw_to_rows<T: Scalar>(x: &[T], k: usize, n: usize, oh: usize, ow: usize) -> Vec<T> {
    let plane = oh * ow;
    let mut out = vec![T::zero(); k * n * plane];
    for b in 0..k {
        for i in 0..n {
            for pos in 0..plane {
                out[(b * plane + pos) * n + i] = x[(b * n + i) * plane + pos];
            }
        }
    }
    out
}

/// Pre-activation output `[k, n, out_h, out_w]` of one layer. Post-ops are the caller's job.
pub fn layer_forward<T: Scalar>(x: &Tensor<T>, bank: &FilterBank<T>) -> Result<Tensor<T>> {
    let cols = im2col(x, &bank.shape)?;
    Ok(forward_from_cols(&cols, bank, x.dims()[0]))
}

pub(crate) fn forward_from_cols<T: Scalar>(
    cols: &Tensor<T>,
    bank: &FilterBank<T>,
    k: usize,
) -> Tensor<T> {
    let s = &bank.shape;
    let y = lowered_product(cols, bank);
    let data = rows_to_nchw(&y, k, s.n(), s.out_h(), s.out_w());
    Tensor::new(vec![k, s.n(), s.out_h(), s.out_w()], data).expect("forward dims are consistent")
}
