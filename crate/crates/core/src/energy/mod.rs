//! Per-layer inference energy: computation plus data movement through a
//! multi-level memory hierarchy, adjusted for sparsity and bitwidth.

mod model;
mod profile;
pub mod report;
mod tiling;

pub use model::{
    breakdown_from_plan, compression_factor, layer_energy, network_energy, nonskipped_macs,
    EnergyBreakdown, LayerEnergy, LayerStats, NetworkEnergy,
};
pub use profile::{HardwareProfile, MemoryLevel};
pub use tiling::{
    access_counts, boundary_words, datapath_counts, dense_macs, fetch_once_counts, footprint, loop_bounds,
    no_reuse_counts, optimize_accesses, AccessCounts, AccessPlan, DataCounts, MovementEnergy,
    Tile, TilingPoint, LOOP_NAMES,
};
