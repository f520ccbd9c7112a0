//! Energy-aware pruning: layers are visited in order of estimated energy,
//! magnitude-pruned past their target, greedily restored to the target by
//! output-error reduction, refit by least squares, and finally fine-tuned
//! globally with the pruned weights held at zero.

mod config;
mod layer;
mod pipeline;
mod state;
mod steps;

pub use config::{BudgetMetric, PruneConfig, RatioSchedule, ResidualNorm};
pub use layer::{prune_bank, LayerReport, LayerSteps, ResidualNorms};
pub use pipeline::{
    estimate_energy, global_finetune, measure_stats, prune_all_layers, prune_network, shapes,
    FinetuneOutcome, IterationRecord, LayerLog, PruneOutcome,
};
pub use state::{norm_p, record_states, LayerPruneState};
pub use steps::{
    greedy_restore, local_finetune_lsq, magnitude_prune, magnitude_prune_count, order_by_energy,
    order_layers_by_energy, restore_gain, RestoreStep,
};
