use serde::{Deserialize, Serialize};

use super::profile::HardwareProfile;
use super::tiling::{datapath_counts, dense_macs, optimize_accesses, AccessPlan};
use crate::error::{Error, Result};
use crate::layer::LayerShape;

/// Sparsity of one layer's operands.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerStats {
    pub weight_density: f64,
    pub input_act_density: f64,
    pub output_act_density: f64,
    pub nonskipped_mac_fraction: f64,
}

impl LayerStats {
    pub fn dense() -> Self {
        LayerStats::independent(1.0, 1.0, 1.0)
    }

    /// Zero positions of weights and input activations assumed independent, so a
    /// MAC survives with probability `weight_density · input_act_density`.
    pub fn independent(weight_density: f64, input_act_density: f64, output_act_density: f64) -> Self {
        LayerStats {
            weight_density,
            input_act_density,
            output_act_density,
            nonskipped_mac_fraction: weight_density * input_act_density,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("weight_density", self.weight_density),
            ("input_act_density", self.input_act_density),
            ("output_act_density", self.output_act_density),
            ("nonskipped_mac_fraction", self.nonskipped_mac_fraction),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} = {v} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

/// Energy of one layer in MAC units.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EnergyBreakdown {
    pub comp: f64,
    pub input_fmap: f64,
    pub output_fmap: f64,
    pub weights: f64,
}

impl EnergyBreakdown {
    pub fn total(&self) -> f64 {
        self.comp + self.input_fmap + self.output_fmap + self.weights
    }

    pub fn movement(&self) -> f64 {
        self.input_fmap + self.output_fmap + self.weights
    }

    pub fn add(&mut self, o: &EnergyBreakdown) {
        self.comp += o.comp;
        self.input_fmap += o.input_fmap;
        self.output_fmap += o.output_fmap;
        self.weights += o.weights;
    }
}

pub fn nonskipped_macs(shape: &LayerShape, stats: &LayerStats) -> u64 {
    (dense_macs(shape) as f64 * stats.nonskipped_mac_fraction).round() as u64
}

/// Fraction of dense words moved after compressing data of the given density.
pub fn compression_factor(density: f64, overhead: f64) -> f64 {
    (density * (1.0 + overhead)).min(1.0)
}

/// Applies sparsity and bitwidth to an already optimized access plan.
///
/// Words moved between memory levels shrink by the compression factor of
/// their datatype. Datapath accesses belong to individual MACs, so a skipped
/// MAC skips its operand reads and partial-sum update as well.
pub fn breakdown_from_plan(
    shape: &LayerShape,
    stats: &LayerStats,
    hw: &HardwareProfile,
    plan: &AccessPlan,
) -> EnergyBreakdown {
    let wb = hw.weight_bits as f64 / 16.0;
    let ab = hw.activation_bits as f64 / 16.0;
    let overhead = hw.compression_overhead;
    let raw_comp = nonskipped_macs(shape, stats) as f64 * hw.mac_energy;
    let e = plan.energy;
    let dp = datapath_counts(shape);
    let inner = hw.innermost_energy();
    let active = stats.nonskipped_mac_fraction;
    let split = |total: f64, datapath: u64, density: f64| {
        let dp = datapath as f64 * inner;
        (total - dp) * compression_factor(density, overhead) + dp * active
    };
    EnergyBreakdown {
        comp: raw_comp * (wb * ab),
        input_fmap: split(e.ifmap, dp.ifmap, stats.input_act_density) * ab,
        output_fmap: split(e.ofmap, dp.ofmap, stats.output_act_density) * ab,
        weights: split(e.weights, dp.weights, stats.weight_density) * wb,
    }
}

pub fn layer_energy(shape: &LayerShape, stats: &LayerStats, hw: &HardwareProfile) -> Result<EnergyBreakdown> {
    stats.validate()?;
    let plan = optimize_accesses(shape, hw)?;
    Ok(breakdown_from_plan(shape, stats, hw, &plan))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerEnergy {
    pub layer: String,
    pub kind: crate::layer::LayerKind,
    pub weights: u64,
    pub nonzero_weights: u64,
    pub macs: u64,
    pub nonskipped_macs: u64,
    pub energy: EnergyBreakdown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkEnergy {
    pub layers: Vec<LayerEnergy>,
    pub total: EnergyBreakdown,
}

impl NetworkEnergy {
    pub fn total_energy(&self) -> f64 {
        self.total.total()
    }

    pub fn total_macs(&self) -> u64 {
        self.layers.iter().map(|l| l.macs).sum()
    }

    pub fn total_nonskipped_macs(&self) -> u64 {
        self.layers.iter().map(|l| l.nonskipped_macs).sum()
    }

    pub fn total_weights(&self) -> u64 {
        self.layers.iter().map(|l| l.weights).sum()
    }

    pub fn total_nonzero_weights(&self) -> u64 {
        self.layers.iter().map(|l| l.nonzero_weights).sum()
    }

    /// Share of weights and of energy held by layers of `kind`.
    pub fn share(&self, kind: crate::layer::LayerKind) -> (f64, f64) {
        let (mut w, mut e) = (0u64, 0.0);
        for l in self.layers.iter().filter(|l| l.kind == kind) {
            w += l.weights;
            e += l.energy.total();
        }
        (
            w as f64 / self.total_weights().max(1) as f64,
            if self.total_energy() > 0.0 { e / self.total_energy() } else { 0.0 },
        )
    }
}

/// Per-layer breakdown in input order plus exact totals.
///
/// `names` may be empty, in which case layers are named `layer{idx}`.
pub fn network_energy(
    shapes: &[LayerShape],
    stats: &[LayerStats],
    hw: &HardwareProfile,
    names: &[String],
) -> Result<NetworkEnergy> {
    if shapes.len() != stats.len() {
        return Err(Error::Config(format!(
            "{} layers but {} stats entries",
            shapes.len(),
            stats.len()
        )));
    }
    let mut layers = Vec::with_capacity(shapes.len());
    let mut total = EnergyBreakdown::default();
    for (idx, (shape, st)) in shapes.iter().zip(stats).enumerate() {
        let name = names.get(idx).cloned().unwrap_or_else(|| format!("layer{idx}"));
        let energy = layer_energy(shape, st, hw).map_err(|e| match e {
            Error::Infeasible(msg) => Error::Infeasible(format!("{name}: {msg}")),
            Error::InvalidShape(msg) => Error::InvalidShape(format!("{name}: {msg}")),
            other => other,
        })?;
        total.add(&energy);
        let weights = shape.weight_count() as u64;
        layers.push(LayerEnergy {
            layer: name,
            kind: shape.kind,
            weights,
            nonzero_weights: (weights as f64 * st.weight_density).round() as u64,
            macs: dense_macs(shape),
            nonskipped_macs: nonskipped_macs(shape, st),
            energy,
        });
    }
    Ok(NetworkEnergy { layers, total })
}
