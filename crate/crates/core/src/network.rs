//! Layer stack with forward recording, back-propagation and SGD.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::conv::{col2im, forward_from_cols, im2col_named, nchw_to_rows};
use crate::error::{Error, Result};
use crate::layer::{FilterBank, LayerShape, PostOp};
use crate::scalar::Scalar;
use crate::tensor::{matmul, transpose, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct NetLayer<T> {
    pub bank: FilterBank<T>,
    pub post: PostOp,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network<T> {
    pub layers: Vec<NetLayer<T>>,
}

/// What one layer saw during a recorded forward pass.
#[derive(Debug, Clone)]
pub struct LayerRecord<T> {
    /// Toeplitz input `[k·out_h·out_w, m]`, present when lowered inputs were requested.
    pub cols: Option<Tensor<T>>,
    /// Pre-activation output `[k·out_h·out_w, n]` (bias included), same condition.
    pub pre_rows: Option<Vec<T>>,
    /// Fraction of exact zeros in the layer input.
    pub input_sparsity: f64,
    /// Fraction of exact zeros in the layer output after ReLU (before pooling).
    pub output_sparsity: f64,
}

#[derive(Debug, Clone)]
pub struct ForwardOutput<T> {
    /// `[k, classes]`
    pub logits: Tensor<T>,
    pub records: Vec<LayerRecord<T>>,
}

/// Per-layer gradients with the same layout as the filter banks.
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    pub weights: Vec<Vec<T>>,
    pub bias: Vec<Vec<T>>,
}

struct Cache<T> {
    cols: Tensor<T>,
    pre: Tensor<T>,
    pool_argmax: Option<Vec<usize>>,
}

impl<T: Scalar> Network<T> {
    pub fn new(layers: Vec<NetLayer<T>>) -> Result<Self> {
        let net = Network { layers };
        net.validate()?;
        Ok(net)
    }

    /// He-normal weights, zero biases, all-true masks.
    pub fn init<R: Rng>(arch: &[(LayerShape, PostOp)], rng: &mut R) -> Result<Self> {
        let mut layers = Vec::with_capacity(arch.len());
        for &(shape, post) in arch {
            shape.validate()?;
            let std = (2.0 / shape.m() as f64).sqrt();
            let normal = Normal::new(0.0, std).expect("std is finite and positive");
            let weights = (0..shape.weight_count())
                .map(|_| T::from_f64_lossy(normal.sample(rng)))
                .collect();
            let bank = FilterBank::dense(shape, weights, vec![T::zero(); shape.n()])?;
            layers.push(NetLayer { bank, post });
        }
        Network::new(layers)
    }

    pub fn validate(&self) -> Result<()> {
        for (idx, pair) in self.layers.windows(2).enumerate() {
            let out = pair[0].post.output_dims(pair[0].bank.shape.output_dims())?;
            let next = pair[1].bank.shape.input_dims();
            if out != next {
                return Err(Error::shape(
                    format!("layer {}", idx + 1),
                    format!("previous layer emits {out:?} but this layer expects {next:?}"),
                ));
            }
        }
        for (idx, layer) in self.layers.iter().enumerate() {
            layer.bank.shape.validate()?;
            if !layer.bank.mask_holds() {
                return Err(Error::shape(
                    format!("layer {idx}"),
                    "masked weight is nonzero".to_string(),
                ));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn n_classes(&self) -> usize {
        self.layers.last().map_or(0, |l| {
            let [c, h, w] = l.bank.shape.output_dims();
            c * h * w
        })
    }

    pub fn total_weights(&self) -> usize {
        self.layers.iter().map(|l| l.bank.shape.weight_count()).sum()
    }

    pub fn nonzero_weights(&self) -> usize {
        self.layers.iter().map(|l| l.bank.nonzeros()).sum()
    }

    pub fn masks_hold(&self) -> bool {
        self.layers.iter().all(|l| l.bank.mask_holds())
    }

    pub fn forward(&self, batch: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.forward_recorded(batch, false)?.logits)
    }

    /// Forward pass recording per-layer activation sparsity and, when
    /// `keep_lowered` is set, each layer's Toeplitz input and pre-activation rows.
    pub fn forward_recorded(&self, batch: &Tensor<T>, keep_lowered: bool) -> Result<ForwardOutput<T>> {
        let mut records = Vec::with_capacity(self.layers.len());
        let mut x = batch.clone();
        for (idx, layer) in self.layers.iter().enumerate() {
            let input_sparsity = x.zero_fraction();
            let (cols, pre) = lower_and_apply(&x, &layer.bank, idx)?;
            let k = x.dims()[0];
            let (out, _) = apply_post(&pre, layer.post, false);
            let output_sparsity = if layer.post.has_relu() {
                relu_zero_fraction(pre.data())
            } else {
                pre.zero_fraction()
            };
            let (cols, pre_rows) = if keep_lowered {
                let s = &layer.bank.shape;
                let rows = nchw_to_rows(pre.data(), k, s.n(), s.out_h(), s.out_w());
                (Some(cols), Some(rows))
            } else {
                (None, None)
            };
            records.push(LayerRecord {
                cols,
                pre_rows,
                input_sparsity,
                output_sparsity,
            });
            x = out;
        }
        let k = x.dims()[0];
        let classes = x.len() / k.max(1);
        let logits = x.reshape(vec![k, classes])?;
        if !logits.all_finite() {
            return Err(Error::NonFinite("network produced non-finite logits".into()));
        }
        Ok(ForwardOutput { logits, records })
    }

    /// Mean softmax cross-entropy and its gradients.
    pub fn loss_and_gradients(&self, batch: &Tensor<T>, labels: &[usize]) -> Result<(T, Gradients<T>)> {
        let k = batch.dims().first().copied().unwrap_or(0);
        if labels.len() != k || k == 0 {
            return Err(Error::shape(
                "loss",
                format!("{} labels for batch of {k}", labels.len()),
            ));
        }
        let classes = self.n_classes();
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::Config(format!("label {bad} outside [0, {classes})")));
        }

        let mut caches = Vec::with_capacity(self.layers.len());
        let mut x = batch.clone();
        for (idx, layer) in self.layers.iter().enumerate() {
            let (cols, pre) = lower_and_apply(&x, &layer.bank, idx)?;
            let (out, pool_argmax) = apply_post(&pre, layer.post, true);
            caches.push(Cache {
                cols,
                pre,
                pool_argmax,
            });
            x = out;
        }
        let logits = x.data();
        let (loss, mut grad) = softmax_xent(logits, labels, classes);
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("loss is {loss}")));
        }

        let mut gw = vec![Vec::new(); self.layers.len()];
        let mut gb = vec![Vec::new(); self.layers.len()];
        for (idx, layer) in self.layers.iter().enumerate().rev() {
            let cache = &caches[idx];
            let s = &layer.bank.shape;
            let (m, n, oh, ow) = (s.m(), s.n(), s.out_h(), s.out_w());
            let dpre = post_backward(&grad, &cache.pre, layer.post, cache.pool_argmax.as_deref());
            let drows = nchw_to_rows(&dpre, k, n, oh, ow);
            let rows = k * oh * ow;
            let cols_t = transpose(cache.cols.data(), rows, m);
            gw[idx] = matmul(&cols_t, &drows, m, rows, n);
            let mut db = vec![T::zero(); n];
            for r in 0..rows {
                for (d, &v) in db.iter_mut().zip(&drows[r * n..(r + 1) * n]) {
                    *d += v;
                }
            }
            gb[idx] = db;
            if idx > 0 {
                let a_t = transpose(&layer.bank.weights, m, n);
                let dcols = matmul(&drows, &a_t, rows, n, m);
                grad = col2im(&dcols, k, s).into_data();
            }
        }
        Ok((
            loss,
            Gradients {
                weights: gw,
                bias: gb,
            },
        ))
    }

    pub fn mean_loss(&self, batch: &Tensor<T>, labels: &[usize]) -> Result<T> {
        let logits = self.forward(batch)?;
        Ok(softmax_xent(logits.data(), labels, self.n_classes()).0)
    }
}

fn lower_and_apply<T: Scalar>(
    x: &Tensor<T>,
    bank: &FilterBank<T>,
    idx: usize,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let cols = im2col_named(x, &bank.shape, &format!("layer {idx}"))?;
    let pre = forward_from_cols(&cols, bank, x.dims()[0]);
    Ok((cols, pre))
}

fn relu_zero_fraction<T: Scalar>(v: &[T]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.iter().filter(|&&x| x <= T::zero()).count() as f64 / v.len() as f64
}

/// Returns the post-op output and, for pooling, the flat input index each output came from.
fn apply_post<T: Scalar>(pre: &Tensor<T>, post: PostOp, want_argmax: bool) -> (Tensor<T>, Option<Vec<usize>>) {
    let relu = |v: T| if v > T::zero() { v } else { T::zero() };
    match post {
        PostOp::Identity => (pre.clone(), None),
        PostOp::Relu => {
            let data = pre.data().iter().map(|&v| relu(v)).collect();
            (Tensor::new(pre.dims().to_vec(), data).unwrap(), None)
        }
        PostOp::ReluMaxPool { size, stride } => {
            let d = pre.dims();
            let (k, c, h, w) = (d[0], d[1], d[2], d[3]);
            let (ph, pw) = ((h - size) / stride + 1, (w - size) / stride + 1);
            let x = pre.data();
            let mut out = Vec::with_capacity(k * c * ph * pw);
            let mut arg = Vec::with_capacity(if want_argmax { k * c * ph * pw } else { 0 });
            for plane in 0..k * c {
                let base = plane * h * w;
                for py in 0..ph {
                    for px in 0..pw {
                        // first maximum wins
                        let mut best = base + py * stride * w + px * stride;
                        for dy in 0..size {
                            for dx in 0..size {
                                let at = base + (py * stride + dy) * w + px * stride + dx;
                                if x[at] > x[best] {
                                    best = at;
                                }
                            }
                        }
                        out.push(relu(x[best]));
                        if want_argmax {
                            arg.push(best);
                        }
                    }
                }
            }
            (
                Tensor::new(vec![k, c, ph, pw], out).unwrap(),
                want_argmax.then_some(arg),
            )
        }
    }
}

fn post_backward<T: Scalar>(grad: &[T], pre: &Tensor<T>, post: PostOp, argmax: Option<&[usize]>) -> Vec<T> {
    let p = pre.data();
    match post {
        PostOp::Identity => grad.to_vec(),
        PostOp::Relu => grad
            .iter()
            .zip(p)
            .map(|(&g, &v)| if v > T::zero() { g } else { T::zero() })
            .collect(),
        PostOp::ReluMaxPool { .. } => {
            let arg = argmax.expect("pool argmax recorded during training forward");
            let mut out = vec![T::zero(); p.len()];
            for (&g, &at) in grad.iter().zip(arg) {
                if p[at] > T::zero() {
                    out[at] += g;
                }
            }
            out
        }
    }
}

/// Mean cross-entropy over rows of `logits[k, classes]` and `d loss / d logits`.
pub fn softmax_xent<T: Scalar>(logits: &[T], labels: &[usize], classes: usize) -> (T, Vec<T>) {
    let k = labels.len();
    let mut grad = vec![T::zero(); logits.len()];
    let mut total = 0.0f64;
    let inv_k = 1.0 / k as f64;
    for (b, &label) in labels.iter().enumerate() {
        let row = &logits[b * classes..(b + 1) * classes];
        let max = row.iter().fold(f64::NEG_INFINITY, |a, v| a.max(v.to_f64_lossy()));
        let exps: Vec<f64> = row.iter().map(|v| (v.to_f64_lossy() - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        total += sum.ln() + max - row[label].to_f64_lossy();
        for (c, e) in exps.iter().enumerate() {
            let target = if c == label { 1.0 } else { 0.0 };
            grad[b * classes + c] = T::from_f64_lossy((e / sum - target) * inv_k);
        }
    }
    (T::from_f64_lossy(total * inv_k), grad)
}

/// SGD with optional momentum. Velocity buffers are created lazily.
#[derive(Debug, Clone)]
pub struct Sgd<T> {
    pub lr: T,
    pub momentum: T,
    velocity: Vec<(Vec<T>, Vec<T>)>,
}

impl<T: Scalar> Sgd<T> {
    pub fn new(lr: T, momentum: T) -> Self {
        Sgd {
            lr,
            momentum,
            velocity: Vec::new(),
        }
    }

    /// One step on `batch`; returns the pre-step mean loss.
    ///
    /// With `mask_frozen`, gradients at masked-out weights are dropped so those
    /// weights stay exactly zero. Without it every weight trains and masks reset to dense.
    pub fn step(&mut self, net: &mut Network<T>, batch: &Tensor<T>, labels: &[usize], mask_frozen: bool) -> Result<T> {
        let (loss, grads) = net.loss_and_gradients(batch, labels)?;
        if self.velocity.len() != net.layers.len() {
            self.velocity = net
                .layers
                .iter()
                .map(|l| (vec![T::zero(); l.bank.weights.len()], vec![T::zero(); l.bank.bias.len()]))
                .collect();
        }
        for ((layer, (vw, vb)), (gw, gb)) in net
            .layers
            .iter_mut()
            .zip(self.velocity.iter_mut())
            .zip(grads.weights.iter().zip(&grads.bias))
        {
            let bank = &mut layer.bank;
            if !mask_frozen {
                bank.mask.iter_mut().for_each(|k| *k = true);
            }
            for (j, (w, (&g, v))) in bank.weights.iter_mut().zip(gw.iter().zip(vw.iter_mut())).enumerate() {
                if !bank.mask[j] {
                    *v = T::zero();
                    continue;
                }
                *v = self.momentum * *v + g;
                *w -= self.lr * *v;
            }
            for (b, (&g, v)) in bank.bias.iter_mut().zip(gb.iter().zip(vb.iter_mut())) {
                *v = self.momentum * *v + g;
                *b -= self.lr * *v;
            }
        }
        Ok(loss)
    }
}

/// Plain SGD step without momentum state; returns the pre-step mean loss.
pub fn train_step<T: Scalar>(
    net: &mut Network<T>,
    batch: &Tensor<T>,
    labels: &[usize],
    lr: T,
    mask_frozen: bool,
) -> Result<T> {
    Sgd::new(lr, T::zero()).step(net, batch, labels, mask_frozen)
}

/// Top-1 and top-`k` accuracy. Ties in logits rank the lower class index first.
pub fn evaluate<T: Scalar>(
    net: &Network<T>,
    images: &Tensor<T>,
    labels: &[usize],
    topk: usize,
) -> Result<(f64, f64)> {
    if labels.is_empty() {
        return Err(Error::EmptyDataset);
    }
    const CHUNK: usize = 256;
    let classes = net.n_classes();
    let (mut hit1, mut hitk) = (0usize, 0usize);
    for start in (0..labels.len()).step_by(CHUNK) {
        let end = (start + CHUNK).min(labels.len());
        let logits = net.forward(&images.slice_outer(start, end))?;
        for (b, &label) in labels[start..end].iter().enumerate() {
            let row = &logits.data()[b * classes..(b + 1) * classes];
            let rank = label_rank(row, label);
            hit1 += (rank == 0) as usize;
            hitk += (rank < topk) as usize;
        }
    }
    let n = labels.len() as f64;
    Ok((hit1 as f64 / n, hitk as f64 / n))
}

/// Position of `label` in the descending order of `row`, ties → lower index first.
pub fn label_rank<T: Scalar>(row: &[T], label: usize) -> usize {
    let target = row[label];
    row.iter()
        .enumerate()
        .filter(|&(c, &v)| v > target || (v == target && c < label))
        .count()
}

pub fn argmax<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}
