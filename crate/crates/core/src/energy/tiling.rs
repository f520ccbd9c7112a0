//! Loop-tiling model of memory traffic and its exhaustive optimizer.
//!
//! The layer is the 5-loop nest (batch, output channel, input channel, output
//! row, output column); the filter window is never split. Each bounded memory
//! level holds one tile of that nest, and every level's tile divides the tile
//! of the level above it. For a tile `t` held at some level, the words that
//! cross into that level from its parent are
//!
//! * weights: `t_M·t_C·R·S · iters(t)`
//! * ifmap: `t_N·t_C·rows(t_P)·cols(t_Q) · iters(t)`
//! * ofmap: written `t_N·t_M·t_P·t_Q · iters(t)` times and read back once per
//!   additional input-channel tile,
//!
//! where `iters(t) = Π_x B_x / t_x`: every loop outside the tile multiplies its
//! refetch count. Transfers are charged at the parent's access energy. The
//! datapath additionally touches the innermost level once per operand per MAC
//! (twice for the partial sum).

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::profile::HardwareProfile;
use crate::error::{Error, Result};
use crate::layer::LayerShape;

/// Tile sizes in loop order (batch, out channel, in channel, out row, out col).
pub type Tile = [usize; 5];

pub const LOOP_NAMES: [&str; 5] = ["batch", "out_channel", "in_channel", "out_row", "out_col"];

const N: usize = 0;
const M: usize = 1;
const C: usize = 2;
const P: usize = 3;
const Q: usize = 4;

/// Relative slack under which two tilings count as equally cheap.
const TIE_RTOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TilingPoint {
    /// One tile per bounded level, outermost first.
    pub tiles: Vec<Tile>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataCounts {
    pub ifmap: u64,
    pub ofmap: u64,
    pub weights: u64,
}

impl DataCounts {
    pub fn total(&self) -> u64 {
        self.ifmap + self.ofmap + self.weights
    }

    fn add(&mut self, o: DataCounts) {
        self.ifmap += o.ifmap;
        self.ofmap += o.ofmap;
        self.weights += o.weights;
    }
}

/// Accesses charged to each memory level (same indexing as the profile).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccessCounts {
    pub per_level: Vec<DataCounts>,
}

/// Movement energy split by datatype, before sparsity and bitwidth scaling.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MovementEnergy {
    pub ifmap: f64,
    pub ofmap: f64,
    pub weights: f64,
}

impl MovementEnergy {
    pub fn total(&self) -> f64 {
        self.ifmap + self.ofmap + self.weights
    }
}

impl AccessCounts {
    pub fn energy(&self, hw: &HardwareProfile) -> MovementEnergy {
        let mut e = MovementEnergy::default();
        for (c, level) in self.per_level.iter().zip(&hw.levels) {
            e.ifmap += c.ifmap as f64 * level.energy;
            e.ofmap += c.ofmap as f64 * level.energy;
            e.weights += c.weights as f64 * level.energy;
        }
        e
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccessPlan {
    pub tiling: TilingPoint,
    pub counts: AccessCounts,
    pub energy: MovementEnergy,
}

pub fn loop_bounds(shape: &LayerShape) -> Tile {
    [shape.batch, shape.n(), shape.in_c, shape.out_h(), shape.out_w()]
}

/// Words of each datatype resident for one tile.
///
/// Input rows skipped by a stride larger than the filter are not fetched.
pub fn footprint(shape: &LayerShape, t: &Tile) -> DataCounts {
    let span = |tiles: usize, filt: usize, full: usize| ((tiles - 1) * shape.stride.min(filt) + filt).min(full);
    let rows = span(t[P], shape.filt_h, shape.in_h);
    let cols = span(t[Q], shape.filt_w, shape.in_w);
    DataCounts {
        ifmap: (t[N] * t[C] * rows * cols) as u64,
        ofmap: (t[N] * t[M] * t[P] * t[Q]) as u64,
        weights: (t[M] * t[C] * shape.filt_h * shape.filt_w) as u64,
    }
}

/// Words crossing into a level that holds tile `t`.
pub fn boundary_words(shape: &LayerShape, t: &Tile) -> DataCounts {
    let bounds = loop_bounds(shape);
    let iters: Vec<u64> = (0..5).map(|x| bounds[x].div_ceil(t[x]) as u64).collect();
    let all: u64 = iters.iter().product();
    let f = footprint(shape, t);
    let c_iters = iters[C];
    let outside_c = all / c_iters;
    DataCounts {
        ifmap: f.ifmap * all,
        weights: f.weights * all,
        ofmap: f.ofmap * all + f.ofmap * outside_c * (c_iters - 1),
    }
}

pub fn dense_macs(shape: &LayerShape) -> u64 {
    (shape.batch * shape.out_h() * shape.out_w() * shape.n() * shape.m()) as u64
}

/// Operand reads and partial-sum read/write at the innermost level, one set per dense MAC.
pub fn datapath_counts(shape: &LayerShape) -> DataCounts {
    let macs = dense_macs(shape);
    DataCounts {
        ifmap: macs,
        weights: macs,
        ofmap: 2 * macs,
    }
}

/// Access counts implied by a tiling (no capacity check).
pub fn access_counts(shape: &LayerShape, hw: &HardwareProfile, tiling: &TilingPoint) -> AccessCounts {
    let mut per_level = vec![DataCounts::default(); hw.levels.len()];
    for (b, t) in tiling.tiles.iter().enumerate() {
        per_level[b].add(boundary_words(shape, t));
    }
    let inner = hw.levels.len() - 1;
    per_level[inner].add(datapath_counts(shape));
    AccessCounts { per_level }
}

/// Every datum crosses every boundary exactly once.
pub fn fetch_once_counts(shape: &LayerShape, hw: &HardwareProfile) -> AccessCounts {
    let full = loop_bounds(shape);
    let tiling = TilingPoint {
        tiles: vec![full; hw.bounded().len()],
    };
    access_counts(shape, hw, &tiling)
}

/// Unit tiles at every bounded level: one outer fetch per MAC operand.
pub fn no_reuse_counts(shape: &LayerShape, hw: &HardwareProfile) -> AccessCounts {
    let tiling = TilingPoint {
        tiles: vec![[1; 5]; hw.bounded().len()],
    };
    access_counts(shape, hw, &tiling)
}

fn divisors(n: usize) -> Vec<usize> {
    (1..=n).filter(|d| n % d == 0).collect()
}

/// All tiles whose sizes divide `bounds`, in lexicographic order.
fn divisor_tiles(bounds: &Tile) -> Vec<Tile> {
    let lists: Vec<Vec<usize>> = bounds.iter().map(|&b| divisors(b)).collect();
    let mut out = Vec::new();
    for &a in &lists[0] {
        for &b in &lists[1] {
            for &c in &lists[2] {
                for &d in &lists[3] {
                    for &e in &lists[4] {
                        out.push([a, b, c, d, e]);
                    }
                }
            }
        }
    }
    out
}

fn fits(shape: &LayerShape, t: &Tile, capacity: u64) -> bool {
    footprint(shape, t).total() <= capacity
}

/// Finds the tiling with the least data-movement energy.
///
/// Exhaustive over divisor tilings, organised as a dynamic program over levels:
/// a level's transfer cost depends only on its own tile, so the levels couple
/// only through divisibility. Ties go to the lexicographically smallest tile
/// sequence.
pub fn optimize_accesses(shape: &LayerShape, hw: &HardwareProfile) -> Result<AccessPlan> {
    shape.validate()?;
    hw.validate()?;
    let unit = [1; 5];
    for level in hw.bounded() {
        let cap = level.capacity.expect("bounded level");
        if !fits(shape, &unit, cap) {
            return Err(Error::Infeasible(format!(
                "level {} ({cap} words) cannot hold one {}x{} filter window, its input window and one partial sum ({} words)",
                level.name,
                shape.filt_h,
                shape.filt_w,
                footprint(shape, &unit).total()
            )));
        }
    }

    let bounded = hw.bounded();
    let all = divisor_tiles(&loop_bounds(shape));
    let candidates: Vec<Vec<Tile>> = bounded
        .iter()
        .map(|l| {
            let cap = l.capacity.expect("bounded level");
            all.iter().copied().filter(|t| fits(shape, t, cap)).collect()
        })
        .collect();
    let cost = |b: usize, t: &Tile| boundary_words(shape, t).total() as f64 * hw.levels[b].energy;

    // best[b][t]: cheapest transfer energy for levels b.. given tile t at level b
    let depth = bounded.len();
    let mut best: Vec<HashMap<Tile, f64>> = vec![HashMap::new(); depth];
    for b in (0..depth).rev() {
        let mut table = HashMap::with_capacity(candidates[b].len());
        for t in &candidates[b] {
            let below = if b + 1 == depth {
                Some(0.0)
            } else {
                divisor_tiles(t)
                    .iter()
                    .filter_map(|c| best[b + 1].get(c).copied())
                    .reduce(f64::min)
            };
            if let Some(below) = below {
                table.insert(*t, cost(b, t) + below);
            }
        }
        best[b] = table;
    }

    let mut tiles = Vec::with_capacity(depth);
    let mut parent: Option<Tile> = None;
    let mut budget = f64::INFINITY;
    for b in 0..depth {
        let options: Vec<Tile> = match parent {
            None => candidates[0].clone(),
            Some(p) => divisor_tiles(&p),
        };
        let scored: Vec<(Tile, f64)> = options
            .iter()
            .filter_map(|t| best[b].get(t).map(|&v| (*t, v)))
            .collect();
        let min = scored.iter().map(|s| s.1).fold(f64::INFINITY, f64::min);
        let target = if b == 0 { min } else { budget.min(min) };
        let slack = TIE_RTOL * target.abs().max(1.0);
        let (pick, value) = scored
            .into_iter()
            .find(|&(_, v)| v <= target + slack)
            .ok_or_else(|| Error::Infeasible(format!("no tiling fits level {}", bounded[b].name)))?;
        budget = value - cost(b, &pick);
        tiles.push(pick);
        parent = Some(pick);
    }

    let tiling = TilingPoint { tiles };
    let counts = access_counts(shape, hw, &tiling);
    let energy = counts.energy(hw);
    Ok(AccessPlan {
        tiling,
        counts,
        energy,
    })
}
