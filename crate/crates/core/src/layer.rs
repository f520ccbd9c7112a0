//! Layer geometry and per-layer parameters.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum LayerKind {
    Conv,
    Fc,
}

/// Shape configuration of one CONV or FC layer.
///
/// FC layers are expressed as a convolution whose filter covers the whole
/// input map, so `m = filt_h·filt_w·in_c` is always the filter length.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LayerShape {
    pub kind: LayerKind,
    pub in_h: usize,
    pub in_w: usize,
    pub in_c: usize,
    pub filt_h: usize,
    pub filt_w: usize,
    pub num_filters: usize,
    #[serde(default = "one")]
    pub stride: usize,
    #[serde(default)]
    pub pad: usize,
    #[serde(default = "one")]
    pub batch: usize,
}

fn one() -> usize {
    1
}

impl LayerShape {
    #[allow(clippy::too_many_arguments)]
    pub fn conv(
        in_c: usize,
        in_h: usize,
        in_w: usize,
        num_filters: usize,
        filt_h: usize,
        filt_w: usize,
        stride: usize,
        pad: usize,
    ) -> Self {
        LayerShape {
            kind: LayerKind::Conv,
            in_h,
            in_w,
            in_c,
            filt_h,
            filt_w,
            num_filters,
            stride,
            pad,
            batch: 1,
        }
    }

    /// FC layer over an `in_c × in_h × in_w` input.
    pub fn fc(in_c: usize, in_h: usize, in_w: usize, num_filters: usize) -> Self {
        LayerShape {
            kind: LayerKind::Fc,
            in_h,
            in_w,
            in_c,
            filt_h: in_h,
            filt_w: in_w,
            num_filters,
            stride: 1,
            pad: 0,
            batch: 1,
        }
    }

    pub fn with_batch(mut self, batch: usize) -> Self {
        self.batch = batch;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidShape(msg));
        if self.in_h == 0 || self.in_w == 0 || self.in_c == 0 {
            return bad(format!("input dims must be positive: {self:?}"));
        }
        if self.filt_h == 0 || self.filt_w == 0 {
            return bad(format!("filter dims must be positive: {self:?}"));
        }
        if self.stride == 0 {
            return bad("stride must be positive".into());
        }
        if self.in_h + 2 * self.pad < self.filt_h || self.in_w + 2 * self.pad < self.filt_w {
            return bad(format!(
                "filter {}x{} larger than padded input {}x{}",
                self.filt_h,
                self.filt_w,
                self.in_h + 2 * self.pad,
                self.in_w + 2 * self.pad
            ));
        }
        if self.kind == LayerKind::Fc
            && (self.filt_h != self.in_h
                || self.filt_w != self.in_w
                || self.stride != 1
                || self.pad != 0)
        {
            return bad("FC layer must have filter == input dims, stride 1, pad 0".into());
        }
        Ok(())
    }

    pub fn out_h(&self) -> usize {
        (self.in_h + 2 * self.pad - self.filt_h) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.in_w + 2 * self.pad - self.filt_w) / self.stride + 1
    }

    /// Weights per filter.
    pub fn m(&self) -> usize {
        self.filt_h * self.filt_w * self.in_c
    }

    pub fn n(&self) -> usize {
        self.num_filters
    }

    pub fn weight_count(&self) -> usize {
        self.m() * self.n()
    }

    pub fn input_dims(&self) -> [usize; 3] {
        [self.in_c, self.in_h, self.in_w]
    }

    pub fn output_dims(&self) -> [usize; 3] {
        [self.num_filters, self.out_h(), self.out_w()]
    }
}

/// Operation applied to a layer's output before the next layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum PostOp {
    Identity,
    Relu,
    ReluMaxPool { size: usize, stride: usize },
}

impl PostOp {
    pub fn relu_pool(size: usize) -> Self {
        PostOp::ReluMaxPool { size, stride: size }
    }

    pub fn has_relu(&self) -> bool {
        !matches!(self, PostOp::Identity)
    }

    pub fn output_dims(&self, [c, h, w]: [usize; 3]) -> Result<[usize; 3]> {
        match *self {
            PostOp::Identity | PostOp::Relu => Ok([c, h, w]),
            PostOp::ReluMaxPool { size, stride } => {
                if size == 0 || stride == 0 || size > h || size > w {
                    return Err(Error::InvalidShape(format!(
                        "max pool {size}/{stride} does not fit {h}x{w}"
                    )));
                }
                Ok([c, (h - size) / stride + 1, (w - size) / stride + 1])
            }
        }
    }
}

/// Weights `A` (m×n, column i is filter i), bias and retention mask of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterBank<T> {
    pub shape: LayerShape,
    /// Row-major m×n: entry (j, i) at `j * n + i`.
    pub weights: Vec<T>,
    pub bias: Vec<T>,
    pub mask: Vec<bool>,
}

impl<T: Scalar> FilterBank<T> {
    pub fn zeros(shape: LayerShape) -> Self {
        let mn = shape.weight_count();
        FilterBank {
            shape,
            weights: vec![T::zero(); mn],
            bias: vec![T::zero(); shape.n()],
            mask: vec![true; mn],
        }
    }

    pub fn new(shape: LayerShape, weights: Vec<T>, bias: Vec<T>, mask: Vec<bool>) -> Result<Self> {
        shape.validate()?;
        let mn = shape.weight_count();
        if weights.len() != mn || mask.len() != mn || bias.len() != shape.n() {
            return Err(Error::shape(
                "filter bank",
                format!(
                    "expected {mn} weights/mask entries and {} biases, got {}/{}/{}",
                    shape.n(),
                    weights.len(),
                    mask.len(),
                    bias.len()
                ),
            ));
        }
        let mut bank = FilterBank {
            shape,
            weights,
            bias,
            mask,
        };
        bank.apply_mask();
        Ok(bank)
    }

    pub fn dense(shape: LayerShape, weights: Vec<T>, bias: Vec<T>) -> Result<Self> {
        let mn = weights.len();
        Self::new(shape, weights, bias, vec![true; mn])
    }

    pub fn m(&self) -> usize {
        self.shape.m()
    }

    pub fn n(&self) -> usize {
        self.shape.n()
    }

    #[inline]
    pub fn w(&self, j: usize, i: usize) -> T {
        self.weights[j * self.n() + i]
    }

    /// Filter `i` as a length-m vector.
    pub fn column(&self, i: usize) -> Vec<T> {
        (0..self.m()).map(|j| self.w(j, i)).collect()
    }

    /// Number of retained weights.
    pub fn nonzeros(&self) -> usize {
        self.mask.iter().filter(|&&k| k).count()
    }

    pub fn compression_ratio(&self) -> f64 {
        let total = self.mask.len();
        if total == 0 {
            return 0.0;
        }
        1.0 - self.nonzeros() as f64 / total as f64
    }

    pub fn weight_density(&self) -> f64 {
        1.0 - self.compression_ratio()
    }

    /// Forces masked-out weights to exactly zero.
    pub fn apply_mask(&mut self) {
        for (w, &keep) in self.weights.iter_mut().zip(&self.mask) {
            if !keep {
                *w = T::zero();
            }
        }
    }

    pub fn mask_holds(&self) -> bool {
        self.weights
            .iter()
            .zip(&self.mask)
            .all(|(w, &keep)| keep || *w == T::zero())
    }

    /// Support S_i of filter `i`.
    pub fn support(&self, i: usize) -> Vec<usize> {
        (0..self.m()).filter(|&j| self.mask[j * self.n() + i]).collect()
    }
}
