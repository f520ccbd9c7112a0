//! Reference implementations used only by tests. Nothing here calls the
//! code path it is used to check.
#![allow(dead_code)]

use enprune::energy::HardwareProfile;
use enprune::layer::{FilterBank, LayerShape};
use enprune::network::Network;
use enprune::tensor::Tensor;
use enprune::Scalar;

/// Direct 7-deep convolution loop: `[k, n, out_h, out_w]`.
pub fn naive_conv(x: &Tensor<f64>, bank: &FilterBank<f64>) -> Vec<f64> {
    let s = &bank.shape;
    let k = x.dims()[0];
    let (oh, ow, n) = (s.out_h(), s.out_w(), s.n());
    let mut out = vec![0.0; k * n * oh * ow];
    for b in 0..k {
        for f in 0..n {
            for p in 0..oh {
                for q in 0..ow {
                    let mut acc = bank.bias[f];
                    for c in 0..s.in_c {
                        for r in 0..s.filt_h {
                            for t in 0..s.filt_w {
                                let iy = (p * s.stride + r) as isize - s.pad as isize;
                                let ix = (q * s.stride + t) as isize - s.pad as isize;
                                if iy < 0 || ix < 0 || iy as usize >= s.in_h || ix as usize >= s.in_w {
                                    continue;
                                }
                                let xv = x.data()[((b * s.in_c + c) * s.in_h + iy as usize) * s.in_w + ix as usize];
                                let j = (c * s.filt_h + r) * s.filt_w + t;
                                acc += xv * bank.weights[j * n + f];
                            }
                        }
                    }
                    out[((b * n + f) * oh + p) * ow + q] = acc;
                }
            }
        }
    }
    out
}

/// Same loop, counting MACs whose weight and input activation are both nonzero.
/// Zero-padding positions are skipped as zero activations.
pub fn count_nonskipped(x: &Tensor<f64>, bank: &FilterBank<f64>) -> u64 {
    let s = &bank.shape;
    let k = x.dims()[0];
    let n = s.n();
    let mut count = 0u64;
    for b in 0..k {
        for f in 0..n {
            for p in 0..s.out_h() {
                for q in 0..s.out_w() {
                    for c in 0..s.in_c {
                        for r in 0..s.filt_h {
                            for t in 0..s.filt_w {
                                let iy = (p * s.stride + r) as isize - s.pad as isize;
                                let ix = (q * s.stride + t) as isize - s.pad as isize;
                                let xv = if iy < 0 || ix < 0 || iy as usize >= s.in_h || ix as usize >= s.in_w {
                                    0.0
                                } else {
                                    x.data()[((b * s.in_c + c) * s.in_h + iy as usize) * s.in_w + ix as usize]
                                };
                                let j = (c * s.filt_h + r) * s.filt_w + t;
                                if xv != 0.0 && bank.weights[j * n + f] != 0.0 {
                                    count += 1;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    count
}

/// Exhaustive search over every nested chain of divisor tiles.
///
/// Returns the lexicographically smallest optimal chain, its per-level access
/// counts `[level][ifmap, ofmap, weights]`, and its movement energy.
pub struct BruteTiling {
    pub tiles: Vec<[usize; 5]>,
    pub counts: Vec<[u64; 3]>,
    pub energy: f64,
}

fn divs(n: usize) -> Vec<usize> {
    (1..=n).filter(|d| n % d == 0).collect()
}

fn tile_words(s: &LayerShape, t: [usize; 5]) -> [u64; 3] {
    // [ifmap, ofmap, weights] resident for one tile
    // input rows touched by tP windows: overlapping runs, or disjoint ones when the stride skips rows
    let touched = |tiles: usize, filt: usize| {
        if s.stride >= filt {
            tiles * filt
        } else {
            (tiles - 1) * s.stride + filt
        }
    };
    let in_rows = std::cmp::min(touched(t[3], s.filt_h), s.in_h);
    let in_cols = std::cmp::min(touched(t[4], s.filt_w), s.in_w);
    [
        (t[0] * t[2] * in_rows * in_cols) as u64,
        (t[0] * t[1] * t[3] * t[4]) as u64,
        (t[1] * t[2] * s.filt_h * s.filt_w) as u64,
    ]
}

/// Words moved into a level holding tile `t`, counting tile origins axis by axis.
fn moved_words(s: &LayerShape, t: [usize; 5]) -> [u64; 3] {
    let bounds = [s.batch, s.num_filters, s.in_c, s.out_h(), s.out_w()];
    let per = tile_words(s, t);
    let origins: Vec<u64> = (0..5)
        .map(|a| {
            let mut count = 0u64;
            let mut o = 0;
            while o < bounds[a] {
                count += 1;
                o += t[a];
            }
            count
        })
        .collect();
    let instances: u64 = origins.iter().product();
    // a partial sum is read back for every instance that is not the first along C
    let first_along_c = instances / origins[2];
    [
        per[0] * instances,
        per[1] * instances + per[1] * (instances - first_along_c),
        per[2] * instances,
    ]
}

pub fn brute_force_tiling(s: &LayerShape, hw: &HardwareProfile) -> Option<BruteTiling> {
    let bounds = [s.batch, s.num_filters, s.in_c, s.out_h(), s.out_w()];
    let caps: Vec<u64> = hw.levels[1..].iter().map(|l| l.capacity.unwrap()).collect();
    let macs = (s.batch * s.num_filters * s.out_h() * s.out_w() * s.in_c * s.filt_h * s.filt_w) as u64;
    let depth = caps.len();

    let mut best: Option<BruteTiling> = None;
    let mut chain: Vec<[usize; 5]> = Vec::new();

    fn tiles_under(parent: [usize; 5]) -> Vec<[usize; 5]> {
        let mut out = Vec::new();
        for a in divs(parent[0]) {
            for b in divs(parent[1]) {
                for c in divs(parent[2]) {
                    for d in divs(parent[3]) {
                        for e in divs(parent[4]) {
                            out.push([a, b, c, d, e]);
                        }
                    }
                }
            }
        }
        out
    }

    #[allow(clippy::too_many_arguments)]
    fn walk(
        s: &LayerShape,
        hw: &HardwareProfile,
        caps: &[u64],
        depth: usize,
        macs: u64,
        parent: [usize; 5],
        chain: &mut Vec<[usize; 5]>,
        best: &mut Option<BruteTiling>,
    ) {
        if chain.len() == depth {
            let mut counts = vec![[0u64; 3]; depth + 1];
            for (lvl, &t) in chain.iter().enumerate() {
                let w = moved_words(s, t);
                for d in 0..3 {
                    counts[lvl][d] += w[d];
                }
            }
            counts[depth][0] += macs;
            counts[depth][1] += 2 * macs;
            counts[depth][2] += macs;
            let energy: f64 = counts
                .iter()
                .zip(&hw.levels)
                .map(|(c, l)| (c[0] + c[1] + c[2]) as f64 * l.energy)
                .sum();
            let better = match best {
                None => true,
                // strictly cheaper beyond round-off; chains arrive in lexicographic order
                Some(b) => energy < b.energy - 1e-12 * b.energy.abs().max(1.0),
            };
            if better {
                *best = Some(BruteTiling {
                    tiles: chain.clone(),
                    counts,
                    energy,
                });
            }
            return;
        }
        let lvl = chain.len();
        for t in tiles_under(parent) {
            let w = tile_words(s, t);
            if w[0] + w[1] + w[2] > caps[lvl] {
                continue;
            }
            chain.push(t);
            walk(s, hw, caps, depth, macs, t, chain, best);
            chain.pop();
        }
    }

    walk(s, hw, &caps, depth, macs, bounds, &mut chain, &mut best);
    best
}

/// Moore–Penrose solution `pinv(X)·y` via SVD (nalgebra).
pub fn pinv_solve(x_rows: &[f64], rows: usize, cols: usize, y: &[f64]) -> Vec<f64> {
    let x = nalgebra::DMatrix::from_row_slice(rows, cols, x_rows);
    let y = nalgebra::DVector::from_column_slice(y);
    let pinv = x.pseudo_inverse(1e-12).expect("svd converges");
    (pinv * y).iter().copied().collect()
}

/// `Σ|Ŷ_i − X·A_i|` recomputed from scratch for one filter.
pub fn residual_l1(x_rows: &[f64], rows: usize, m: usize, yhat_col: &[f64], a: &[f64]) -> f64 {
    (0..rows)
        .map(|r| {
            let pred: f64 = (0..m).map(|j| x_rows[r * m + j] * a[j]).sum();
            (yhat_col[r] - pred).abs()
        })
        .sum()
}

/// Central finite-difference gradient of the mean loss w.r.t. every weight and bias.
pub fn finite_difference<T: Scalar>(
    net: &Network<T>,
    x: &Tensor<T>,
    labels: &[usize],
    eps: f64,
) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let loss = |n: &Network<T>| n.mean_loss(x, labels).unwrap().to_f64().unwrap();
    let mut gw = Vec::new();
    let mut gb = Vec::new();
    for l in 0..net.len() {
        let mut lw = Vec::new();
        for j in 0..net.layers[l].bank.weights.len() {
            let mut plus = net.clone();
            let mut minus = net.clone();
            let w = plus.layers[l].bank.weights[j].to_f64().unwrap();
            plus.layers[l].bank.weights[j] = T::from_f64(w + eps).unwrap();
            minus.layers[l].bank.weights[j] = T::from_f64(w - eps).unwrap();
            lw.push((loss(&plus) - loss(&minus)) / (2.0 * eps));
        }
        let mut lb = Vec::new();
        for j in 0..net.layers[l].bank.bias.len() {
            let mut plus = net.clone();
            let mut minus = net.clone();
            let b = plus.layers[l].bank.bias[j].to_f64().unwrap();
            plus.layers[l].bank.bias[j] = T::from_f64(b + eps).unwrap();
            minus.layers[l].bank.bias[j] = T::from_f64(b - eps).unwrap();
            lb.push((loss(&plus) - loss(&minus)) / (2.0 * eps));
        }
        gw.push(lw);
        gb.push(lb);
    }
    (gw, gb)
}
