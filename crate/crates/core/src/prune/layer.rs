use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::layer::FilterBank;
use crate::scalar::Scalar;

use super::config::{PruneConfig, ResidualNorm};
use super::state::LayerPruneState;
use super::steps::{greedy_restore, local_finetune_lsq, magnitude_prune_count};

/// Which of the per-layer steps to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerSteps {
    /// Magnitude removal, greedy restoration, least-squares refit.
    Full,
    /// Magnitude removal straight to the target, nothing else.
    MagnitudeOnly,
}

/// Summed residual norms over all filters of a layer.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ResidualNorms {
    pub l1: f64,
    pub l2: f64,
}

impl ResidualNorms {
    fn of<T: Scalar>(state: &LayerPruneState<T>) -> Self {
        ResidualNorms {
            l1: state.total_residual(ResidualNorm::L1),
            l2: state.total_residual(ResidualNorm::L2).sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerReport {
    pub layer: usize,
    pub target_ratio: f64,
    pub ratio_before: f64,
    pub ratio_after: f64,
    pub after_removal: ResidualNorms,
    pub after_restore: ResidualNorms,
    pub after_refit: ResidualNorms,
}

/// Runs removal, restoration and refit on one filter bank.
///
/// Step 2 leaves `round((1 − min(1, target + margin))·m·n)` weights, step 3
/// restores up to `q = round((1 − target)·m·n)` and step 4 refits the support.
/// If step 2 would remove nothing the bank is returned unchanged.
pub fn prune_bank<T: Scalar>(
    bank: &FilterBank<T>,
    state: &mut LayerPruneState<T>,
    layer: usize,
    target_ratio: f64,
    config: &PruneConfig,
    steps: LayerSteps,
) -> Result<(FilterBank<T>, LayerReport)> {
    let total = bank.mask.len();
    let nnz = bank.nonzeros();
    let keep = |ratio: f64| (((1.0 - ratio.min(1.0)) * total as f64).round() as usize).min(nnz);
    let q = keep(target_ratio);
    let removal_keep = match steps {
        LayerSteps::Full => keep(target_ratio + config.overprune_margin).min(q),
        LayerSteps::MagnitudeOnly => q,
    };
    state.reset_residuals(bank);
    let untouched = ResidualNorms::of(state);
    let mut report = LayerReport {
        layer,
        target_ratio,
        ratio_before: bank.compression_ratio(),
        ratio_after: bank.compression_ratio(),
        after_removal: untouched,
        after_restore: untouched,
        after_refit: untouched,
    };
    if removal_keep >= nnz {
        return Ok((bank.clone(), report));
    }

    let mut pruned = magnitude_prune_count(bank, nnz - removal_keep);
    state.reset_residuals(&pruned);
    report.after_removal = ResidualNorms::of(state);
    report.after_restore = report.after_removal;
    report.after_refit = report.after_removal;
    if steps == LayerSteps::Full {
        greedy_restore(state, &mut pruned, bank, q, config.restore_batch_g, config.residual_norm_p)?;
        report.after_restore = ResidualNorms::of(state);
        pruned = local_finetune_lsq(state, &pruned)?;
        report.after_refit = ResidualNorms::of(state);
    }
    report.ratio_after = pruned.compression_ratio();
    Ok((pruned, report))
}
