//! Randomized comparisons of library code against the oracles. Each check
//! returns a one-line summary on success and the first discrepancy on failure.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use enprune::energy::{
    fetch_once_counts, layer_energy, no_reuse_counts, nonskipped_macs, optimize_accesses, HardwareProfile, LayerStats,
    MemoryLevel,
};
use enprune::layer::{FilterBank, LayerShape, PostOp};
use enprune::network::{NetLayer, Network};
use enprune::prune::{greedy_restore, local_finetune_lsq, LayerPruneState, ResidualNorm};
use enprune::tensor::Tensor;

use super::oracles;

pub type Check = Result<String, String>;

fn normal_vec(rng: &mut ChaCha8Rng, len: usize) -> Vec<f64> {
    (0..len).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

/// Random CONV geometry with every loop bound at most 16.
pub fn random_conv(rng: &mut ChaCha8Rng, allow_pad: bool) -> LayerShape {
    loop {
        let in_c = rng.random_range(1..=4);
        let in_h = rng.random_range(2..=12);
        let in_w = rng.random_range(2..=12);
        let pad = if allow_pad { rng.random_range(0..=2) } else { 0 };
        let filt_h = rng.random_range(1..=5usize.min(in_h + 2 * pad));
        let filt_w = rng.random_range(1..=5usize.min(in_w + 2 * pad));
        let stride = rng.random_range(1..=3);
        let nf = rng.random_range(1..=6);
        let batch = rng.random_range(1..=3);
        let s = LayerShape::conv(in_c, in_h, in_w, nf, filt_h, filt_w, stride, pad).with_batch(batch);
        if s.validate().is_ok() && s.out_h() <= 16 && s.out_w() <= 16 {
            return s;
        }
    }
}

fn random_bank(rng: &mut ChaCha8Rng, shape: LayerShape, density: f64) -> FilterBank<f64> {
    let mn = shape.weight_count();
    let weights = normal_vec(rng, mn);
    let bias = normal_vec(rng, shape.n());
    let mask = (0..mn).map(|_| rng.random_bool(density)).collect();
    FilterBank::new(shape, weights, bias, mask).unwrap()
}

fn random_input(rng: &mut ChaCha8Rng, shape: &LayerShape, density: f64) -> Tensor<f64> {
    let dims = vec![shape.batch, shape.in_c, shape.in_h, shape.in_w];
    let len = dims.iter().product();
    let data = (0..len)
        .map(|_| if rng.random_bool(density) { rng.sample::<f64, _>(StandardNormal) } else { 0.0 })
        .collect();
    Tensor::new(dims, data).unwrap()
}

fn three_level(rng: &mut ChaCha8Rng, shape: &LayerShape) -> HardwareProfile {
    let unit = (shape.filt_h * shape.filt_w
        + shape.filt_h.min(shape.in_h) * shape.filt_w.min(shape.in_w)
        + 1) as u64;
    let inner = rng.random_range(unit..=unit * 8);
    let outer = rng.random_range(inner..=inner * 16);
    HardwareProfile {
        levels: vec![
            MemoryLevel { name: "dram".into(), energy: 200.0, capacity: None },
            MemoryLevel { name: "buffer".into(), energy: 6.0, capacity: Some(outer) },
            MemoryLevel { name: "rf".into(), energy: 1.0, capacity: Some(inner) },
        ],
        ..HardwareProfile::default()
    }
}

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-300)
}

/// Lowered product plus bias equals a direct convolution.
pub fn im2col_vs_direct(instances: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for case in 0..instances {
        let shape = random_conv(&mut rng, true);
        let bank = random_bank(&mut rng, shape, 0.8);
        let x = random_input(&mut rng, &shape, 0.9);
        let got = enprune::conv::layer_forward(&x, &bank).map_err(|e| format!("case {case}: {e}"))?;
        let want = oracles::naive_conv(&x, &bank);
        if got.dims() != [shape.batch, shape.n(), shape.out_h(), shape.out_w()] {
            return Err(format!("case {case}: output dims {:?}", got.dims()));
        }
        for (a, b) in got.data().iter().zip(&want) {
            let err = (a - b).abs() / b.abs().max(1.0);
            worst = worst.max(err);
            if err > 1e-10 {
                return Err(format!("case {case} {shape:?}: {a} vs {b}"));
            }
        }
    }
    Ok(format!("{instances} shapes, max error {worst:.1e}"))
}

/// The tiling optimizer agrees with exhaustive enumeration of nested tilings.
pub fn tiling_vs_brute_force(instances: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for case in 0..instances {
        let shape = random_conv(&mut rng, true);
        let hw = three_level(&mut rng, &shape);
        let plan = optimize_accesses(&shape, &hw).map_err(|e| format!("case {case}: {e}"))?;
        let brute = oracles::brute_force_tiling(&shape, &hw).ok_or(format!("case {case}: oracle found no tiling"))?;
        if plan.tiling.tiles != brute.tiles {
            return Err(format!(
                "case {case} {shape:?}: tiles {:?} vs oracle {:?}",
                plan.tiling.tiles, brute.tiles
            ));
        }
        for (lvl, (c, o)) in plan.counts.per_level.iter().zip(&brute.counts).enumerate() {
            if [c.ifmap, c.ofmap, c.weights] != *o {
                return Err(format!("case {case}: level {lvl} counts {c:?} vs oracle {o:?}"));
            }
        }
        if !rel_close(plan.energy.total(), brute.energy, 1e-12) {
            return Err(format!("case {case}: energy {} vs {}", plan.energy.total(), brute.energy));
        }
    }
    Ok(format!("{instances} layers, identical tilings and access counts"))
}

/// Refit weights equal `pinv(X_S)·Ŷ_i` on every filter's support.
pub fn lsq_vs_pinv(instances: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (rows, m, n, support) = (20, 12, 3, 5);
    let mut worst: f64 = 0.0;
    for case in 0..instances {
        let x = normal_vec(&mut rng, rows * m);
        let y = normal_vec(&mut rng, rows * n);
        let shape = LayerShape::fc(m, 1, 1, n);
        let mut mask = vec![false; m * n];
        for i in 0..n {
            for j in rand::seq::index::sample(&mut rng, m, support) {
                mask[j * n + i] = true;
            }
        }
        let bank = FilterBank::new(shape, normal_vec(&mut rng, m * n), vec![0.0; n], mask).unwrap();
        let mut state = LayerPruneState::from_rows(&x, &y, rows, m, n).unwrap();
        state.reset_residuals(&bank);
        let fit = local_finetune_lsq(&mut state, &bank).map_err(|e| format!("case {case}: {e}"))?;
        for i in 0..n {
            let s = bank.support(i);
            let xs: Vec<f64> = (0..rows).flat_map(|r| s.iter().map(move |&j| (r, j))).map(|(r, j)| x[r * m + j]).collect();
            let yi: Vec<f64> = (0..rows).map(|r| y[r * n + i]).collect();
            let want = oracles::pinv_solve(&xs, rows, s.len(), &yi);
            for (&j, w) in s.iter().zip(&want) {
                let err = (fit.w(j, i) - w).abs();
                worst = worst.max(err);
                if err > 1e-5 {
                    return Err(format!("case {case} filter {i} weight {j}: {} vs {w}", fit.w(j, i)));
                }
            }
            if (0..m).any(|j| !bank.mask[j * n + i] && fit.w(j, i) != 0.0) {
                return Err(format!("case {case}: refit touched a pruned weight"));
            }
        }
    }
    Ok(format!("{instances} problems ({rows} rows, support {support}), max error {worst:.1e}"))
}

/// One greedy restoration equals the best single restoration found by recomputing residuals.
pub fn greedy_vs_sweep(instances: usize, seed: u64, p: ResidualNorm) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (rows, m, n) = (10, 4, 2);
    for case in 0..instances {
        let x = normal_vec(&mut rng, rows * m);
        let y = normal_vec(&mut rng, rows * n);
        let shape = LayerShape::fc(m, 1, 1, n);
        let original = FilterBank::dense(shape, normal_vec(&mut rng, m * n), vec![0.0; n]).unwrap();
        let keep: Vec<bool> = (0..m * n).map(|_| rng.random_bool(0.4)).collect();
        if keep.iter().all(|&k| k) {
            continue;
        }
        let mut bank = FilterBank::new(shape, original.weights.clone(), vec![0.0; n], keep).unwrap();
        let mut state = LayerPruneState::from_rows(&x, &y, rows, m, n).unwrap();
        state.reset_residuals(&bank);

        // oracle: filter with the largest ℓ1 residual among those with pruned weights,
        // then the candidate whose restoration lowers ‖R‖_p the most
        let col = |b: &FilterBank<f64>, i: usize| (0..m).map(|j| b.w(j, i)).collect::<Vec<_>>();
        let yc = |i: usize| (0..rows).map(|r| y[r * n + i]).collect::<Vec<_>>();
        let norm = |b: &FilterBank<f64>, i: usize| {
            let a = col(b, i);
            let r: Vec<f64> = (0..rows)
                .map(|r| y[r * n + i] - (0..m).map(|j| x[r * m + j] * a[j]).sum::<f64>())
                .collect();
            match p {
                ResidualNorm::L1 => r.iter().map(|v| v.abs()).sum::<f64>(),
                ResidualNorm::L2 => r.iter().map(|v| v * v).sum::<f64>(),
            }
        };
        let filter = (0..n)
            .filter(|&i| (0..m).any(|j| !bank.mask[j * n + i]))
            .max_by(|&a, &b| {
                let la = oracles::residual_l1(&x, rows, m, &yc(a), &col(&bank, a));
                let lb = oracles::residual_l1(&x, rows, m, &yc(b), &col(&bank, b));
                la.total_cmp(&lb).then(b.cmp(&a))
            })
            .unwrap();
        let best_j = (0..m)
            .filter(|&j| !bank.mask[j * n + filter])
            .map(|j| {
                let mut trial = bank.clone();
                trial.mask[j * n + filter] = true;
                trial.weights[j * n + filter] = original.w(j, filter);
                (j, norm(&bank, filter) - norm(&trial, filter))
            })
            .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)))
            .unwrap();

        let q = bank.nonzeros() + 1;
        let log = greedy_restore(&mut state, &mut bank, &original, q, 1, p).map_err(|e| format!("case {case}: {e}"))?;
        let step = &log[0];
        if step.filter != filter || step.restored[0].0 != best_j.0 {
            return Err(format!(
                "case {case}: restored ({}, {}) but sweep picks ({filter}, {})",
                step.filter, step.restored[0].0, best_j.0
            ));
        }
        if !rel_close(step.restored[0].1, best_j.1, 1e-9) && (step.restored[0].1 - best_j.1).abs() > 1e-9 {
            return Err(format!("case {case}: gain {} vs {}", step.restored[0].1, best_j.1));
        }
    }
    Ok(format!("{instances} instances (m=4, n=2, g=1)"))
}

/// Optimal movement energy lies between fetch-once and no-reuse.
pub fn energy_bounds(instances: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for case in 0..instances {
        let shape = random_conv(&mut rng, true);
        let hw = three_level(&mut rng, &shape);
        let opt = optimize_accesses(&shape, &hw).map_err(|e| e.to_string())?.energy.total();
        let lo = fetch_once_counts(&shape, &hw).energy(&hw).total();
        let hi = no_reuse_counts(&shape, &hw).energy(&hw).total();
        if lo > opt * (1.0 + 1e-12) || opt > hi * (1.0 + 1e-12) {
            return Err(format!("case {case}: {lo} <= {opt} <= {hi} violated"));
        }
    }
    Ok(format!("{instances} layers within [fetch-once, no-reuse]"))
}

/// Computation scales with `(wb·ab)/256` and each movement term with its own bits/16.
pub fn bitwidth_scaling(instances: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for case in 0..instances {
        let shape = random_conv(&mut rng, true);
        let stats = LayerStats::independent(rng.random_range(0.1..=1.0), rng.random_range(0.1..=1.0), rng.random_range(0.1..=1.0));
        let hw = HardwareProfile::default();
        let base = layer_energy(&shape, &stats, &hw).map_err(|e| e.to_string())?;
        for wb in [2u32, 4, 8, 16] {
            for ab in [2u32, 4, 8, 16] {
                let e = layer_energy(&shape, &stats, &hw.clone().with_bits(wb, ab)).map_err(|e| e.to_string())?;
                let (fw, fa) = (wb as f64 / 16.0, ab as f64 / 16.0);
                let pairs = [
                    (e.comp, base.comp * fw * fa),
                    (e.weights, base.weights * fw),
                    (e.input_fmap, base.input_fmap * fa),
                    (e.output_fmap, base.output_fmap * fa),
                ];
                if pairs.iter().any(|&(a, b)| !rel_close(a, b, 1e-12)) {
                    return Err(format!("case {case} bits {wb}/{ab}: {e:?} vs base {base:?}"));
                }
            }
        }
    }
    Ok(format!("{instances} layers at 2/4/8/16 bits"))
}

/// Energy never increases when weight or activation density decreases.
pub fn monotone_in_sparsity(instances: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let grid: Vec<f64> = (1..=10).map(|i| i as f64 / 10.0).collect();
    let hw = HardwareProfile::default();
    for case in 0..instances {
        let shape = random_conv(&mut rng, true);
        let mut table = vec![vec![0.0; 10]; 10];
        for (a, &wd) in grid.iter().enumerate() {
            for (b, &ad) in grid.iter().enumerate() {
                table[a][b] = layer_energy(&shape, &LayerStats::independent(wd, ad, ad), &hw)
                    .map_err(|e| e.to_string())?
                    .total();
            }
        }
        for a in 0..10 {
            for b in 0..10 {
                if (a > 0 && table[a - 1][b] > table[a][b]) || (b > 0 && table[a][b - 1] > table[a][b]) {
                    return Err(format!("case {case}: energy rises as density falls at ({}, {})", grid[a], grid[b]));
                }
            }
        }
    }
    Ok(format!("{instances} layers over a 10x10 density grid"))
}

/// The independence estimate of non-skipped MACs is within 20% of an instrumented count.
pub fn nonskipped_vs_instrumented(instances: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for case in 0..instances {
        let shape = LayerShape::conv(
            rng.random_range(2..=6),
            rng.random_range(8..=14),
            rng.random_range(8..=14),
            rng.random_range(4..=8),
            3,
            3,
            1,
            0,
        )
        .with_batch(2);
        let (wd, ad) = (rng.random_range(0.2..=0.9), rng.random_range(0.2..=0.9));
        let bank = random_bank(&mut rng, shape, wd);
        let x = random_input(&mut rng, &shape, ad);
        let counted = oracles::count_nonskipped(&x, &bank) as f64;
        let stats = LayerStats::independent(bank.weight_density(), 1.0 - x.zero_fraction(), 1.0);
        let est = nonskipped_macs(&shape, &stats) as f64;
        let err = (est - counted).abs() / counted.max(1.0);
        worst = worst.max(err);
        if err > 0.2 {
            return Err(format!("case {case}: estimate {est} vs counted {counted}"));
        }
    }
    Ok(format!("{instances} sparse layers, max relative error {worst:.3}"))
}

/// Largest pool-window gap and ReLU margin must clear this so ±eps stays on one side of every kink.
const KINK_MARGIN: f64 = 0.05;

fn random_two_layer(rng: &mut ChaCha8Rng) -> (Network<f64>, Tensor<f64>, Vec<usize>) {
    let in_c = rng.random_range(1..=2);
    let side = rng.random_range(4..=6);
    let nf = rng.random_range(1..=3);
    let pool = rng.random_bool(0.5);
    let conv = LayerShape::conv(in_c, side, side, nf, 3, 3, 1, 1);
    let post = if pool { PostOp::relu_pool(2) } else { PostOp::Relu };
    let [c, h, w] = post.output_dims(conv.output_dims()).unwrap();
    let classes = rng.random_range(2..=4);
    let fc = LayerShape::fc(c, h, w, classes);
    let layer = |rng: &mut ChaCha8Rng, s: LayerShape, post| {
        let w = normal_vec(rng, s.weight_count()).iter().map(|v| v * 0.5).collect();
        let b = normal_vec(rng, s.n());
        NetLayer {
            bank: FilterBank::dense(s, w, b).unwrap(),
            post,
        }
    };
    let first = layer(rng, conv, post);
    let second = layer(rng, fc, PostOp::Identity);
    let net = Network::new(vec![first, second]).unwrap();
    let k = rng.random_range(1..=3);
    let x = Tensor::new(vec![k, in_c, side, side], normal_vec(rng, k * in_c * side * side)).unwrap();
    let labels = (0..k).map(|_| rng.random_range(0..classes)).collect();
    (net, x, labels)
}

fn near_kink(net: &Network<f64>, x: &Tensor<f64>) -> bool {
    let rec = net.forward_recorded(x, true).unwrap();
    let pre = rec.records[0].pre_rows.as_ref().unwrap();
    if pre.iter().any(|v| v.abs() < KINK_MARGIN) {
        return true;
    }
    let layer = &net.layers[0];
    if let PostOp::ReluMaxPool { size, stride } = layer.post {
        let s = &layer.bank.shape;
        let (n, oh, ow) = (s.n(), s.out_h(), s.out_w());
        let k = x.dims()[0];
        for b in 0..k {
            for f in 0..n {
                for py in 0..(oh - size) / stride + 1 {
                    for px in 0..(ow - size) / stride + 1 {
                        let mut vals: Vec<f64> = Vec::new();
                        for dy in 0..size {
                            for dx in 0..size {
                                let row = (b * oh + py * stride + dy) * ow + px * stride + dx;
                                vals.push(pre[row * n + f]);
                            }
                        }
                        vals.sort_by(|a, b| b.total_cmp(a));
                        if vals[0] - vals[1] < KINK_MARGIN {
                            return true;
                        }
                    }
                }
            }
        }
    }
    false
}

/// Backpropagated gradients match central differences on random two-layer networks.
pub fn gradient_check(instances: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let eps = 1e-3;
    let mut worst: f64 = 0.0;
    let mut done = 0;
    let mut resampled = 0;
    while done < instances {
        let (net, x, labels) = random_two_layer(&mut rng);
        if near_kink(&net, &x) {
            resampled += 1;
            if resampled > 100 * instances {
                return Err("could not sample instances away from activation kinks".into());
            }
            continue;
        }
        let (_, grads) = net.loss_and_gradients(&x, &labels).map_err(|e| e.to_string())?;
        let (fw, fb) = oracles::finite_difference(&net, &x, &labels, eps);
        let analytic: Vec<f64> = grads.weights.iter().chain(&grads.bias).flatten().copied().collect();
        let numeric: Vec<f64> = fw.iter().chain(&fb).flatten().copied().collect();
        // per coordinate; gradients below 1e-6 in magnitude are compared absolutely
        let rel = analytic
            .iter()
            .zip(&numeric)
            .map(|(a, b)| (a - b).abs() / a.abs().max(b.abs()).max(1e-6))
            .fold(0.0, f64::max);
        worst = worst.max(rel);
        if rel >= 1e-3 {
            return Err(format!("instance {done}: relative error {rel:.2e}"));
        }
        done += 1;
    }
    Ok(format!("{instances} networks, max relative error {worst:.1e} ({resampled} resampled near kinks)"))
}
