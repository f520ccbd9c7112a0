use rand::seq::index::sample;
use rand::Rng;

use crate::error::{Error, Result};
use crate::layer::FilterBank;
use crate::network::Network;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::config::ResidualNorm;

/// Sampled least-squares problem for one layer: `Ŷ ≈ X·A`.
///
/// Stored column-major so that a single input column `X_{·j}` and a single
/// filter's residual `R_i` are contiguous.
#[derive(Debug, Clone)]
pub struct LayerPruneState<T> {
    pub rows: usize,
    pub m: usize,
    pub n: usize,
    /// `m` columns of length `rows`.
    x: Vec<T>,
    /// `n` columns of length `rows`, bias removed.
    yhat: Vec<T>,
    /// `n` columns of length `rows`.
    residual: Vec<T>,
}

impl<T: Scalar> LayerPruneState<T> {
    /// From row-major `x[rows×m]` and `yhat[rows×n]`. Residuals start at `Ŷ`.
    pub fn from_rows(x_rows: &[T], yhat_rows: &[T], rows: usize, m: usize, n: usize) -> Result<Self> {
        if x_rows.len() != rows * m || yhat_rows.len() != rows * n {
            return Err(Error::shape(
                "prune state",
                format!("X has {} entries, Ŷ {}, for {rows} rows, m={m}, n={n}", x_rows.len(), yhat_rows.len()),
            ));
        }
        let x = crate::tensor::transpose(x_rows, rows, m);
        let yhat = crate::tensor::transpose(yhat_rows, rows, n);
        Ok(LayerPruneState {
            rows,
            m,
            n,
            x,
            residual: yhat.clone(),
            yhat,
        })
    }

    pub fn x_col(&self, j: usize) -> &[T] {
        &self.x[j * self.rows..(j + 1) * self.rows]
    }

    pub fn yhat_col(&self, i: usize) -> &[T] {
        &self.yhat[i * self.rows..(i + 1) * self.rows]
    }

    pub fn residual(&self, i: usize) -> &[T] {
        &self.residual[i * self.rows..(i + 1) * self.rows]
    }

    pub(crate) fn residual_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.residual[i * self.rows..(i + 1) * self.rows]
    }

    /// `Ŷ_i − X·A_i` from scratch.
    pub fn compute_residual(&self, bank: &FilterBank<T>, i: usize) -> Vec<T> {
        let mut r = self.yhat_col(i).to_vec();
        for j in 0..self.m {
            let a = bank.w(j, i);
            if a != T::zero() {
                for (rv, &xv) in r.iter_mut().zip(self.x_col(j)) {
                    *rv -= xv * a;
                }
            }
        }
        r
    }

    /// Resets every residual to match `bank`.
    pub fn reset_residuals(&mut self, bank: &FilterBank<T>) {
        for i in 0..self.n {
            let r = self.compute_residual(bank, i);
            self.residual_mut(i).copy_from_slice(&r);
        }
    }

    pub fn residual_norm(&self, i: usize, p: ResidualNorm) -> f64 {
        norm_p(self.residual(i), p)
    }

    pub fn total_residual(&self, p: ResidualNorm) -> f64 {
        (0..self.n).map(|i| self.residual_norm(i, p)).sum()
    }

    /// Column-gathered `X_{·,S}` as row-major `rows × |S|`.
    pub fn gather(&self, support: &[usize]) -> Vec<T> {
        let s = support.len();
        let mut out = vec![T::zero(); self.rows * s];
        for (c, &j) in support.iter().enumerate() {
            for (r, &v) in self.x_col(j).iter().enumerate() {
                out[r * s + c] = v;
            }
        }
        out
    }
}

/// `‖v‖₁` for L1, `‖v‖₂²` for L2 (the objective's `‖·‖_p^p`).
pub fn norm_p<T: Scalar>(v: &[T], p: ResidualNorm) -> f64 {
    match p {
        ResidualNorm::L1 => v.iter().map(|x| x.to_f64_lossy().abs()).sum(),
        ResidualNorm::L2 => v.iter().map(|x| x.to_f64_lossy().powi(2)).sum(),
    }
}

/// Records `X` and `Ŷ` for every layer from the current network on a sample of images.
///
/// CONV layers keep `positions_per_image` random output positions per image
/// (all of them if there are fewer); FC layers keep one row per image.
pub fn record_states<T: Scalar, R: Rng>(
    net: &Network<T>,
    images: &Tensor<T>,
    positions_per_image: usize,
    rng: &mut R,
) -> Result<Vec<LayerPruneState<T>>> {
    let k = images.dims()[0];
    if k == 0 {
        return Err(Error::EmptyDataset);
    }
    let out = net.forward_recorded(images, true)?;
    let mut states = Vec::with_capacity(net.len());
    for (layer, rec) in net.layers.iter().zip(out.records) {
        let s = &layer.bank.shape;
        let (m, n) = (s.m(), s.n());
        let plane = s.out_h() * s.out_w();
        let cols = rec.cols.expect("lowered inputs recorded");
        let pre = rec.pre_rows.expect("pre-activations recorded");
        let mut rows = Vec::new();
        for b in 0..k {
            if plane <= positions_per_image {
                rows.extend((0..plane).map(|p| b * plane + p));
            } else {
                let mut picked = sample(rng, plane, positions_per_image).into_vec();
                picked.sort_unstable();
                rows.extend(picked.into_iter().map(|p| b * plane + p));
            }
        }
        let mut x = Vec::with_capacity(rows.len() * m);
        let mut y = Vec::with_capacity(rows.len() * n);
        for &r in &rows {
            x.extend_from_slice(&cols.data()[r * m..(r + 1) * m]);
            for (i, &v) in pre[r * n..(r + 1) * n].iter().enumerate() {
                y.push(v - layer.bank.bias[i]);
            }
        }
        states.push(LayerPruneState::from_rows(&x, &y, rows.len(), m, n)?);
    }
    Ok(states)
}
