use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Norm used for the restoration objective `‖Ŷ_i − X·A_i‖_p^p`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum ResidualNorm {
    L1,
    L2,
}

impl From<ResidualNorm> for u8 {
    fn from(p: ResidualNorm) -> u8 {
        match p {
            ResidualNorm::L1 => 1,
            ResidualNorm::L2 => 2,
        }
    }
}

impl TryFrom<u8> for ResidualNorm {
    type Error = String;
    fn try_from(p: u8) -> std::result::Result<Self, String> {
        match p {
            1 => Ok(ResidualNorm::L1),
            2 => Ok(ResidualNorm::L2),
            other => Err(format!("residual norm p must be 1 or 2, got {other}")),
        }
    }
}

/// Which validation accuracy the drop budget is measured on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BudgetMetric {
    Top1,
    TopK,
}

/// Per-layer compression-ratio increments, one entry per outer iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioSchedule {
    pub increments: Vec<Vec<f64>>,
}

impl RatioSchedule {
    /// `step` points per iteration until each layer reaches its cap.
    pub fn stepped(step: f64, caps: &[f64]) -> Self {
        let increments = caps
            .iter()
            .map(|&cap| {
                let mut incs = Vec::new();
                let mut r = 0.0;
                while r + 1e-12 < cap {
                    let inc = step.min(cap - r);
                    incs.push(inc);
                    r += inc;
                }
                incs
            })
            .collect();
        RatioSchedule { increments }
    }

    /// Same cumulative ratios for every layer.
    pub fn uniform(layers: usize, increments: &[f64]) -> Self {
        RatioSchedule {
            increments: vec![increments.to_vec(); layers],
        }
    }

    /// Number of outer iterations the schedule spans.
    pub fn len(&self) -> usize {
        self.increments.iter().map(Vec::len).max().unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Target compression ratio of `layer` after `iteration` (0-based).
    pub fn target(&self, layer: usize, iteration: usize) -> f64 {
        self.increments
            .get(layer)
            .map_or(0.0, |incs| incs.iter().take(iteration + 1).sum::<f64>())
    }

    pub fn validate(&self, layers: usize) -> Result<()> {
        if self.increments.len() != layers {
            return Err(Error::Config(format!(
                "schedule covers {} layers, network has {layers}",
                self.increments.len()
            )));
        }
        for (l, incs) in self.increments.iter().enumerate() {
            if incs.iter().any(|&i| !(0.0..1.0).contains(&i)) {
                return Err(Error::Config(format!("layer {l}: increments must lie in [0, 1)")));
            }
            let total: f64 = incs.iter().sum();
            if total >= 1.0 {
                return Err(Error::Config(format!(
                    "layer {l}: cumulative ratio {total} must stay below 1"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneConfig {
    pub schedule: RatioSchedule,
    /// Extra fraction of all weights removed by magnitude before restoration.
    #[serde(default = "defaults::margin")]
    pub overprune_margin: f64,
    /// Weights restored per greedy iteration.
    #[serde(default = "defaults::g")]
    pub restore_batch_g: usize,
    #[serde(default = "defaults::p")]
    pub residual_norm_p: ResidualNorm,
    #[serde(default = "defaults::budget")]
    pub accuracy_drop_budget: f64,
    #[serde(default = "defaults::metric")]
    pub budget_metric: BudgetMetric,
    #[serde(default = "defaults::topk")]
    pub topk: usize,
    /// Images sampled from the training split to build X and Ŷ.
    #[serde(default = "defaults::sample_images")]
    pub sample_images: usize,
    /// Output positions kept per image for CONV layers.
    #[serde(default = "defaults::positions")]
    pub conv_position_subsample: usize,
    #[serde(default = "defaults::epochs")]
    pub finetune_epochs: usize,
    #[serde(default = "defaults::lr")]
    pub finetune_lr: f64,
    #[serde(default = "defaults::momentum")]
    pub finetune_momentum: f64,
    #[serde(default = "defaults::batch")]
    pub finetune_batch: usize,
}

mod defaults {
    use super::{BudgetMetric, ResidualNorm};
    pub fn margin() -> f64 {
        0.05
    }
    pub fn g() -> usize {
        2
    }
    pub fn p() -> ResidualNorm {
        ResidualNorm::L1
    }
    pub fn budget() -> f64 {
        0.01
    }
    pub fn metric() -> BudgetMetric {
        BudgetMetric::Top1
    }
    pub fn topk() -> usize {
        5
    }
    pub fn sample_images() -> usize {
        512
    }
    pub fn positions() -> usize {
        8
    }
    pub fn epochs() -> usize {
        2
    }
    pub fn lr() -> f64 {
        0.01
    }
    pub fn momentum() -> f64 {
        0.9
    }
    pub fn batch() -> usize {
        32
    }
}

impl PruneConfig {
    pub fn new(schedule: RatioSchedule) -> Self {
        PruneConfig {
            schedule,
            overprune_margin: defaults::margin(),
            restore_batch_g: defaults::g(),
            residual_norm_p: defaults::p(),
            accuracy_drop_budget: defaults::budget(),
            budget_metric: defaults::metric(),
            topk: defaults::topk(),
            sample_images: defaults::sample_images(),
            conv_position_subsample: defaults::positions(),
            finetune_epochs: defaults::epochs(),
            finetune_lr: defaults::lr(),
            finetune_momentum: defaults::momentum(),
            finetune_batch: defaults::batch(),
        }
    }

    pub fn validate(&self, layers: usize) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(0.0..1.0).contains(&self.overprune_margin) {
            return bad(format!("overprune_margin {} outside [0, 1)", self.overprune_margin));
        }
        if self.restore_batch_g == 0 {
            return bad("restore_batch_g must be at least 1".into());
        }
        if !(self.accuracy_drop_budget >= 0.0) {
            return bad("accuracy_drop_budget must be nonnegative".into());
        }
        if self.sample_images == 0 || self.conv_position_subsample == 0 {
            return bad("sample_images and conv_position_subsample must be positive".into());
        }
        if self.finetune_batch == 0 || self.topk == 0 {
            return bad("finetune_batch and topk must be positive".into());
        }
        if !(self.finetune_lr.is_finite() && self.finetune_lr >= 0.0) {
            return bad("finetune_lr must be finite and nonnegative".into());
        }
        self.schedule.validate(layers)
    }
}
