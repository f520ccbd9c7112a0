//! The per-layer pruning steps: energy ordering, magnitude removal, greedy
//! restoration and least-squares refit.

use rayon::prelude::*;

use crate::energy::{network_energy, HardwareProfile, LayerStats};
use crate::error::{Error, Result};
use crate::layer::{FilterBank, LayerShape};
use crate::linalg::least_squares;
use crate::scalar::Scalar;

use super::config::ResidualNorm;
use super::state::{norm_p, LayerPruneState};

/// Layer indices by descending estimated energy; equal energies keep index order.
pub fn order_layers_by_energy(shapes: &[LayerShape], stats: &[LayerStats], hw: &HardwareProfile) -> Result<Vec<usize>> {
    let energy = network_energy(shapes, stats, hw, &[])?;
    let totals: Vec<f64> = energy.layers.iter().map(|l| l.energy.total()).collect();
    Ok(order_by_energy(&totals))
}

pub fn order_by_energy(totals: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..totals.len()).collect();
    order.sort_by(|&a, &b| totals[b].total_cmp(&totals[a]).then(a.cmp(&b)));
    order
}

/// Masks the `⌈remove_fraction · nonzeros⌉` smallest-magnitude retained weights.
pub fn magnitude_prune<T: Scalar>(bank: &FilterBank<T>, remove_fraction: f64) -> FilterBank<T> {
    let f = remove_fraction.clamp(0.0, 1.0);
    let nnz = bank.nonzeros();
    // tolerate representation error such as 0.35 · 100 = 35.000000000000004
    let count = ((f * nnz as f64) - 1e-9).ceil().max(0.0) as usize;
    magnitude_prune_count(bank, count.min(nnz))
}

/// Masks exactly `count` retained weights, smallest `|w|` first, ties by (column, row).
pub fn magnitude_prune_count<T: Scalar>(bank: &FilterBank<T>, count: usize) -> FilterBank<T> {
    let n = bank.n();
    let mut live: Vec<usize> = (0..bank.mask.len()).filter(|&at| bank.mask[at]).collect();
    live.sort_by(|&a, &b| {
        let (wa, wb) = (bank.weights[a].abs(), bank.weights[b].abs());
        wa.partial_cmp(&wb)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then((a % n, a / n).cmp(&(b % n, b / n)))
    });
    let mut out = bank.clone();
    for &at in live.iter().take(count) {
        out.mask[at] = false;
        out.weights[at] = T::zero();
    }
    out
}

/// One greedy iteration: the filter worked on and the rows restored in it.
#[derive(Debug, Clone, PartialEq)]
pub struct RestoreStep {
    pub filter: usize,
    pub restored: Vec<(usize, f64)>,
}

/// Objective improvement `‖R‖_p^p − ‖R − x·a‖_p^p` from restoring one weight.
pub fn restore_gain<T: Scalar>(residual: &[T], x: &[T], a: T, p: ResidualNorm) -> f64 {
    let mut before = 0.0;
    let mut after = 0.0;
    for (&r, &xv) in residual.iter().zip(x) {
        let r = r.to_f64_lossy();
        let moved = r - xv.to_f64_lossy() * a.to_f64_lossy();
        match p {
            ResidualNorm::L1 => {
                before += r.abs();
                after += moved.abs();
            }
            ResidualNorm::L2 => {
                before += r * r;
                after += moved * moved;
            }
        }
    }
    before - after
}

/// Restores pruned weights to their values in `original` until `bank` has `q` nonzeros.
///
/// Each round works on the filter whose residual has the largest ℓ1 norm among
/// filters that still have restorable weights, and restores the `g` candidates
/// with the largest gain (fewer if fewer are needed or available), whatever
/// the sign of the gain. `state` residuals must match `bank` on entry and are
/// kept in sync.
pub fn greedy_restore<T: Scalar>(
    state: &mut LayerPruneState<T>,
    bank: &mut FilterBank<T>,
    original: &FilterBank<T>,
    q: usize,
    g: usize,
    p: ResidualNorm,
) -> Result<Vec<RestoreStep>> {
    let nnz = bank.nonzeros();
    if q < nnz {
        return Err(Error::TargetBelowSupport { q, nonzeros: nnz });
    }
    let (m, n) = (bank.m(), bank.n());
    let mut candidates: Vec<Vec<usize>> = (0..n)
        .map(|i| {
            (0..m)
                .filter(|&j| !bank.mask[j * n + i] && original.mask[j * n + i])
                .collect()
        })
        .collect();
    let available: usize = candidates.iter().map(Vec::len).sum();
    if q - nnz > available {
        return Err(Error::Config(format!(
            "cannot restore to {q} nonzeros: only {available} pruned weights are restorable"
        )));
    }
    let mut l1: Vec<f64> = (0..n).map(|i| state.residual_norm(i, ResidualNorm::L1)).collect();
    let mut remaining = q - nnz;
    let mut log = Vec::new();
    while remaining > 0 {
        let filter = (0..n)
            .filter(|&i| !candidates[i].is_empty())
            .fold(None, |best: Option<usize>, i| match best {
                Some(b) if l1[b] >= l1[i] => Some(b),
                _ => Some(i),
            })
            .expect("restorable weights remain");
        let residual = state.residual(filter);
        let mut scored: Vec<(usize, f64)> = candidates[filter]
            .iter()
            .map(|&j| {
                let a = original.w(j, filter);
                (j, restore_gain(residual, state.x_col(j), a, p))
            })
            .collect();
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        scored.truncate(g.min(remaining));
        for &(j, _) in &scored {
            let a = original.w(j, filter);
            bank.mask[j * n + filter] = true;
            bank.weights[j * n + filter] = a;
            let x: Vec<T> = state.x_col(j).to_vec();
            for (r, xv) in state.residual_mut(filter).iter_mut().zip(x) {
                *r -= xv * a;
            }
        }
        candidates[filter].retain(|j| !scored.iter().any(|s| s.0 == *j));
        l1[filter] = state.residual_norm(filter, ResidualNorm::L1);
        remaining -= scored.len();
        log.push(RestoreStep {
            filter,
            restored: scored,
        });
    }
    Ok(log)
}

/// Refits each filter's retained weights by least squares against `Ŷ_i`.
///
/// Filters with empty support stay zero. A refit that would raise the
/// filter's ℓ2 residual (possible only through the ridge fallback) is
/// discarded. Residuals in `state` are updated.
pub fn local_finetune_lsq<T: Scalar>(state: &mut LayerPruneState<T>, bank: &FilterBank<T>) -> Result<FilterBank<T>> {
    let n = bank.n();
    let solved: Vec<Option<(Vec<usize>, Vec<T>)>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let support = bank.support(i);
            if support.is_empty() {
                return Ok(None);
            }
            let x: Vec<f64> = state.gather(&support).iter().map(|v| v.to_f64_lossy()).collect();
            let y: Vec<f64> = state.yhat_col(i).iter().map(|v| v.to_f64_lossy()).collect();
            let beta = least_squares(&x, state.rows, support.len(), &y)?;
            Ok(Some((support, beta.into_iter().map(T::from_f64_lossy).collect())))
        })
        .collect::<Result<_>>()?;

    let mut out = bank.clone();
    for (i, fit) in solved.into_iter().enumerate() {
        let Some((support, beta)) = fit else { continue };
        let before = norm_p(state.residual(i), ResidualNorm::L2);
        let mut trial = out.clone();
        for (&j, &b) in support.iter().zip(&beta) {
            trial.weights[j * n + i] = b;
        }
        let r = state.compute_residual(&trial, i);
        if norm_p(&r, ResidualNorm::L2) <= before {
            for (&j, &b) in support.iter().zip(&beta) {
                out.weights[j * n + i] = b;
            }
            state.residual_mut(i).copy_from_slice(&r);
        }
    }
    Ok(out)
}
