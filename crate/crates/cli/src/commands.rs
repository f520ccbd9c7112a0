//! The work behind each subcommand, separated from argument parsing so tests
//! and experiments can call it directly.

use std::path::Path;

use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use enprune::energy::{report, HardwareProfile, LayerStats, NetworkEnergy};
use enprune::network::{evaluate, Sgd};
use enprune::prune::{estimate_energy, measure_stats, prune_network, shapes, PruneConfig, PruneOutcome};
use enprune::{Dataset, Error, FilterBank, LayerKind, LayerShape, Network, Result, Tensor};

use crate::arch::parse_arch;
use crate::fsutil::{atomic_write, write_json};
use crate::model::{layer_names, ModelFile};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainParams {
    pub arch: String,
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub batch: usize,
    /// Batch size recorded in layer shapes for energy estimation.
    pub energy_batch: usize,
    pub topk: usize,
}

impl Default for TrainParams {
    fn default() -> Self {
        TrainParams {
            arch: crate::arch::DEFAULT_ARCH.into(),
            epochs: 12,
            lr: 0.02,
            momentum: 0.9,
            batch: 32,
            energy_batch: 32,
            topk: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epoch_losses: Vec<f64>,
    pub val_top1: f64,
    pub val_topk: f64,
}

/// Trains a dense network from a seeded initialization. Zero epochs returns the initialization.
pub fn train(ds: &Dataset, params: &TrainParams, seed: u64) -> Result<(Network, TrainReport)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let arch = parse_arch(&params.arch, ds.image_dims(), ds.n_classes(), params.energy_batch)?;
    let mut net = Network::init(&arch, &mut rng)?;
    let train = ds.train();
    let val = ds.val();
    if train.is_empty() || val.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut opt = Sgd::new(params.lr as f32, params.momentum as f32);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut epoch_losses = Vec::with_capacity(params.epochs);
    for epoch in 0..params.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (b, chunk) in order.chunks(params.batch.max(1)).enumerate() {
            let images = train.images.gather_outer(chunk);
            let labels: Vec<usize> = chunk.iter().map(|&i| train.labels[i]).collect();
            let loss = opt.step(&mut net, &images, &labels, true).map_err(|e| match e {
                Error::NonFinite(d) => Error::NonFinite(format!("training diverged at epoch {epoch}, batch {b}: {d}")),
                other => other,
            })?;
            total += loss as f64 * chunk.len() as f64;
        }
        let mean = total / train.len() as f64;
        info!("epoch {epoch}: train loss {mean:.4}");
        epoch_losses.push(mean);
    }
    let (val_top1, val_topk) = evaluate(&net, &val.images, &val.labels, params.topk)?;
    Ok((
        net,
        TrainReport {
            epoch_losses,
            val_top1,
            val_topk,
        },
    ))
}

/// Per-layer statistics: measured on `calib` when a network and images are
/// available, otherwise dense activations with mask-derived weight density.
pub fn layer_stats(shapes: &[LayerShape], net: Option<&Network>, calib: Option<&Tensor>) -> Result<Vec<LayerStats>> {
    match (net, calib) {
        (Some(net), Some(images)) => measure_stats(net, images),
        (Some(net), None) => Ok(net
            .layers
            .iter()
            .map(|l| LayerStats::independent(l.bank.weight_density(), 1.0, 1.0))
            .collect()),
        (None, _) => Ok(vec![LayerStats::dense(); shapes.len()]),
    }
}

/// Table-1-style metrics of one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub model: String,
    pub top1: f64,
    pub topk: f64,
    pub nonzero_weights: u64,
    pub nonskipped_macs: u64,
    pub energy: f64,
}

pub fn summarize(name: &str, net: &Network, ds: &Dataset, hw: &HardwareProfile, topk: usize) -> Result<SummaryRow> {
    let val = ds.val();
    let (top1, topk_acc) = evaluate(net, &val.images, &val.labels, topk)?;
    let stats = measure_stats(net, &ds.calib().images)?;
    let energy = estimate_energy(net, &stats, hw, &layer_names(&shapes(net)))?;
    Ok(SummaryRow {
        model: name.into(),
        top1,
        topk: topk_acc,
        nonzero_weights: net.nonzero_weights() as u64,
        nonskipped_macs: energy.total_nonskipped_macs(),
        energy: energy.total_energy(),
    })
}

pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut out = String::from("model,top1,topk,nonzero_weights,nonskipped_macs,energy\n");
    for r in rows {
        out.push_str(&format!(
            "{},{:.4},{:.4},{},{},{}\n",
            r.model,
            r.top1,
            r.topk,
            r.nonzero_weights,
            r.nonskipped_macs,
            report::sci(r.energy, 4)
        ));
    }
    out
}

pub fn summary_table(rows: &[SummaryRow], topk: usize) -> String {
    let mut out = format!(
        "{:<10} {:>7} {:>7} {:>16} {:>16} {:>12}\n",
        "model", "top-1", format!("top-{topk}"), "nonzero weights", "nonskipped MACs", "energy"
    );
    for r in rows {
        out.push_str(&format!(
            "{:<10} {:>6.2}% {:>6.2}% {:>16} {:>16} {:>12}\n",
            r.model,
            100.0 * r.top1,
            100.0 * r.topk,
            report::sci(r.nonzero_weights as f64, 4),
            report::sci(r.nonskipped_macs as f64, 4),
            report::sci(r.energy, 4)
        ));
    }
    out
}

pub struct PruneRun {
    pub outcome: PruneOutcome<f32>,
    pub before: SummaryRow,
    pub after: SummaryRow,
}

pub fn prune(net: &Network, ds: &Dataset, config: &PruneConfig, hw: &HardwareProfile, seed: u64) -> Result<PruneRun> {
    let before = summarize("dense", net, ds, hw, config.topk)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let outcome = prune_network(net, config, ds, hw, &mut rng)?;
    for rec in &outcome.log {
        info!(
            "iteration {}: {} top-1 {:.4}, nonzeros {}, energy {}",
            rec.iteration,
            if rec.accepted { "accepted" } else { "rejected" },
            rec.top1,
            rec.nonzero_weights,
            report::sci(rec.total_energy, 4)
        );
    }
    let after = summarize("pruned", &outcome.net, ds, hw, config.topk)?;
    Ok(PruneRun { outcome, before, after })
}

/// Writes the pruned model, the JSON-lines iteration log and the summary.
pub fn write_prune_outputs(run: &PruneRun, out: &Path) -> Result<()> {
    ModelFile::save_network(&run.outcome.net, &out.join("pruned"), Some("energy-aware pruned".into()))?;
    let mut log = String::new();
    for rec in &run.outcome.log {
        log.push_str(&serde_json::to_string(rec).map_err(|e| Error::Config(e.to_string()))?);
        log.push('\n');
    }
    atomic_write(&out.join("prune_log.jsonl"), log.as_bytes())?;
    let rows = [run.before.clone(), run.after.clone()];
    write_json(&out.join("summary.json"), &rows)?;
    atomic_write(&out.join("summary.csv"), summary_csv(&rows).as_bytes())
}

/// Keeps only the final-layer filters of `classes`, in that order.
pub fn drop_classes(net: &Network, classes: &[usize]) -> Result<Network> {
    let n_classes = net.n_classes();
    if classes.len() < 2 {
        return Err(Error::Config(format!("class subset {classes:?} has fewer than 2 classes")));
    }
    if let Some(&bad) = classes.iter().find(|&&c| c >= n_classes) {
        return Err(Error::Config(format!("class {bad} not in [0, {n_classes})")));
    }
    let mut out = net.clone();
    let last = out.layers.last_mut().expect("network has layers");
    let old = &last.bank;
    let (m, n) = (old.m(), old.n());
    let mut shape = old.shape;
    shape.num_filters = classes.len();
    let pick = |v: &[f32]| -> Vec<f32> { (0..m).flat_map(|j| classes.iter().map(move |&c| v[j * n + c])).collect() };
    let mask = (0..m).flat_map(|j| classes.iter().map(move |&c| old.mask[j * n + c])).collect();
    let bias = classes.iter().map(|&c| old.bias[c]).collect();
    last.bank = FilterBank::new(shape, pick(&old.weights), bias, mask)?;
    Network::new(out.layers)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassResult {
    pub classes: usize,
    pub dense_top1: f64,
    pub pruned_top1: f64,
    pub nonzero_weights: u64,
    pub nonskipped_macs: u64,
    pub energy: f64,
    /// Full-class dense baseline divided by this model's value.
    pub weight_reduction: f64,
    pub mac_reduction: f64,
    pub energy_reduction: f64,
}

impl ClassResult {
    /// Model size drops fastest and energy slowest.
    pub fn ordering_holds(&self) -> bool {
        self.weight_reduction >= self.mac_reduction && self.mac_reduction >= self.energy_reduction
    }
}

/// Prunes the network restricted to the first `k` classes for each `k` in
/// `subset_sizes`, comparing each result with the dense all-class model.
pub fn experiment_classes(
    net: &Network,
    ds: &Dataset,
    config: &PruneConfig,
    hw: &HardwareProfile,
    subset_sizes: &[usize],
    seed: u64,
) -> Result<(SummaryRow, Vec<ClassResult>)> {
    let n_classes = net.n_classes();
    for &k in subset_sizes {
        if k < 2 || k > n_classes {
            return Err(Error::Config(format!("class subset size {k} outside [2, {n_classes}]")));
        }
    }
    let baseline = summarize("dense", net, ds, hw, config.topk)?;
    let mut results = Vec::with_capacity(subset_sizes.len());
    for &k in subset_sizes {
        let classes: Vec<usize> = (0..k).collect();
        let sub_net = drop_classes(net, &classes)?;
        let sub_ds = ds.restrict_classes(&classes)?;
        info!("pruning the {k}-class model");
        let run = prune(&sub_net, &sub_ds, config, hw, seed)?;
        let a = &run.after;
        results.push(ClassResult {
            classes: k,
            dense_top1: run.before.top1,
            pruned_top1: a.top1,
            nonzero_weights: a.nonzero_weights,
            nonskipped_macs: a.nonskipped_macs,
            energy: a.energy,
            weight_reduction: baseline.nonzero_weights as f64 / a.nonzero_weights.max(1) as f64,
            mac_reduction: baseline.nonskipped_macs as f64 / a.nonskipped_macs.max(1) as f64,
            energy_reduction: baseline.energy / a.energy,
        });
    }
    Ok((baseline, results))
}

pub fn classes_csv(rows: &[ClassResult]) -> String {
    let mut out = String::from(
        "classes,dense_top1,pruned_top1,nonzero_weights,nonskipped_macs,energy,weight_reduction,mac_reduction,energy_reduction\n",
    );
    for r in rows {
        out.push_str(&format!(
            "{},{:.4},{:.4},{},{},{},{:.4},{:.4},{:.4}\n",
            r.classes,
            r.dense_top1,
            r.pruned_top1,
            r.nonzero_weights,
            r.nonskipped_macs,
            report::sci(r.energy, 4),
            r.weight_reduction,
            r.mac_reduction,
            r.energy_reduction
        ));
    }
    out
}

/// CONV and FC shares of weights and energy for a dense model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShareReport {
    pub conv_weight_share: f64,
    pub conv_energy_share: f64,
    pub fc_weight_share: f64,
    pub fc_energy_share: f64,
    pub energy: NetworkEnergy,
}

pub fn share_report(model: &ModelFile, hw: &HardwareProfile) -> Result<ShareReport> {
    let shapes = model.shapes();
    let stats = vec![LayerStats::dense(); shapes.len()];
    let energy = enprune::energy::network_energy(&shapes, &stats, hw, &model.names())?;
    let (cw, ce) = energy.share(LayerKind::Conv);
    let (fw, fe) = energy.share(LayerKind::Fc);
    Ok(ShareReport {
        conv_weight_share: cw,
        conv_energy_share: ce,
        fc_weight_share: fw,
        fc_energy_share: fe,
        energy,
    })
}

/// Plot-ready per-layer CSV: weights and the four energy components.
pub fn share_csv(r: &ShareReport) -> String {
    let total_w = r.energy.total_weights().max(1) as f64;
    let total_e = r.energy.total_energy();
    let mut out = String::from("layer,kind,weights,weight_share,comp,ifmap,ofmap,weight_movement,total,energy_share\n");
    for l in &r.energy.layers {
        let e = &l.energy;
        out.push_str(&format!(
            "{},{},{},{:.6},{},{},{},{},{},{:.6}\n",
            l.layer,
            match l.kind {
                LayerKind::Conv => "CONV",
                LayerKind::Fc => "FC",
            },
            l.weights,
            l.weights as f64 / total_w,
            report::sci(e.comp, 6),
            report::sci(e.input_fmap, 6),
            report::sci(e.output_fmap, 6),
            report::sci(e.weights, 6),
            report::sci(e.total(), 6),
            e.total() / total_e
        ));
    }
    out
}

/// Maps library errors onto process exit codes.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::NonFinite(_) => 3,
        Error::Infeasible(_) => 4,
        _ => 2,
    }
}
