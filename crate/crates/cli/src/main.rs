use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;

use enprune::energy::{report, HardwareProfile};
use enprune::{Dataset, Result};
use enprune_cli::commands::{self, TrainParams};
use enprune_cli::config::{check_dataset_dir, RunConfig, RunConfigFile};
use enprune_cli::fsutil::{atomic_write, save_dataset, write_json};
use enprune_cli::model::ModelFile;
use enprune_cli::toy;

#[derive(Parser)]
#[command(name = "enprune", version, about = "Energy estimation and energy-aware pruning for small CNNs")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Seed for every random choice in the run.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Hardware profile (TOML or JSON); the bundled default if omitted.
    #[arg(long, global = true)]
    profile: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Weight and activation bitwidths, e.g. `8` or `8,16`.
    #[arg(long, global = true, value_parser = parse_bits)]
    bits: Option<(u32, u32)>,
    /// Print machine-readable JSON instead of tables.
    #[arg(long, global = true)]
    json: bool,
}

fn parse_bits(s: &str) -> std::result::Result<(u32, u32), String> {
    let parse = |t: &str| {
        t.trim()
            .parse::<u32>()
            .ok()
            .filter(|&b| (1..=32).contains(&b))
            .ok_or_else(|| format!("bad bitwidth '{t}'"))
    };
    match s.split_once(',') {
        Some((w, a)) => Ok((parse(w)?, parse(a)?)),
        None => {
            let b = parse(s)?;
            Ok((b, b))
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate the procedural toy dataset.
    MakeDataset {
        #[arg(long, default_value_t = 400)]
        per_class: usize,
    },
    /// Train a dense baseline model.
    Train {
        /// Dataset directory; the toy dataset is generated into <out>/dataset if omitted.
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long, default_value = enprune_cli::arch::DEFAULT_ARCH)]
        arch: String,
        #[arg(long, default_value_t = TrainParams::default().epochs)]
        epochs: usize,
        #[arg(long, default_value_t = TrainParams::default().lr)]
        lr: f64,
        #[arg(long, default_value_t = TrainParams::default().momentum)]
        momentum: f64,
        #[arg(long, default_value_t = TrainParams::default().batch)]
        batch: usize,
        /// Batch size assumed by energy estimates of the trained model.
        #[arg(long, default_value_t = TrainParams::default().energy_batch)]
        energy_batch: usize,
        /// Images per class when generating the toy dataset.
        #[arg(long, default_value_t = 400)]
        per_class: usize,
    },
    /// Estimate per-layer energy of a model.
    Estimate {
        #[arg(long)]
        model: PathBuf,
        /// Measure activation densities on this dataset's calibration split.
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Run energy-aware pruning.
    Prune {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Run configuration (TOML).
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Prune models restricted to fewer target classes.
    ExperimentClasses {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Subset sizes; each keeps the first k classes.
        #[arg(long, value_delimiter = ',', default_values_t = [10, 4, 2])]
        classes: Vec<usize>,
    },
    /// CONV versus FC weight and energy shares of a dense shape manifest.
    Report {
        #[arg(long, default_value = "manifests/alexnet.json")]
        manifest: PathBuf,
    },
}

fn profile(g: &Global) -> Result<HardwareProfile> {
    let hw = match &g.profile {
        Some(p) => HardwareProfile::load(p)?,
        None => HardwareProfile::default(),
    };
    let hw = match g.bits {
        Some((w, a)) => hw.with_bits(w, a),
        None => hw,
    };
    hw.validate()?;
    Ok(hw)
}

fn print_json<S: serde::Serialize>(value: &S) {
    println!("{}", serde_json::to_string_pretty(value).expect("report serializes"));
}

fn load_model(path: &Path) -> Result<(ModelFile, enprune::Network)> {
    let model = ModelFile::load(path)?;
    let net = model.load_network(path)?;
    Ok((model, net))
}

fn run_config(g: &Global, config: Option<&Path>, dataset: Option<PathBuf>) -> Result<RunConfig> {
    let file = match config {
        Some(p) => RunConfigFile::load(p)?,
        None => RunConfigFile::default(),
    };
    let hw = match (&g.profile, &file.profile) {
        (None, Some(_)) => None,
        _ => Some(profile(g)?),
    };
    let mut rc = RunConfig::resolve(file, dataset, hw, g.seed, g.out.clone())?;
    if let Some((w, a)) = g.bits {
        rc.profile = rc.profile.with_bits(w, a);
    }
    rc.profile.validate()?;
    Ok(rc)
}

fn run(cli: Cli) -> Result<()> {
    let g = &cli.global;
    match cli.command {
        Command::MakeDataset { per_class } => {
            let ds = toy::generate(per_class, g.seed)?;
            let dir = g.out.join("dataset");
            save_dataset(&ds, &dir)?;
            println!("wrote {} images to {}", ds.labels.len(), dir.display());
        }
        Command::Train {
            dataset,
            arch,
            epochs,
            lr,
            momentum,
            batch,
            energy_batch,
            per_class,
        } => {
            let params = TrainParams {
                arch,
                epochs,
                lr,
                momentum,
                batch,
                energy_batch,
                ..TrainParams::default()
            };
            let ds = match dataset {
                Some(dir) => {
                    check_dataset_dir(&dir)?;
                    Dataset::load(&dir)?
                }
                None => {
                    let ds = toy::generate(per_class, g.seed)?;
                    save_dataset(&ds, &g.out.join("dataset"))?;
                    ds
                }
            };
            let (net, report) = commands::train(&ds, &params, g.seed)?;
            let path = ModelFile::save_network(&net, &g.out.join("model"), Some(params.arch.clone()))?;
            write_json(&g.out.join("train_report.json"), &report)?;
            if g.json {
                print_json(&report);
            } else {
                println!(
                    "validation top-1 {:.2}%, top-{} {:.2}%; model written to {}",
                    100.0 * report.val_top1,
                    params.topk,
                    100.0 * report.val_topk,
                    path.display()
                );
            }
        }
        Command::Estimate { model, dataset } => {
            let hw = profile(g)?;
            let file = ModelFile::load(&model)?;
            if let Some(dir) = &dataset {
                check_dataset_dir(dir)?;
            }
            let net = if file.has_weights() { Some(file.load_network(&model)?) } else { None };
            let calib = match &dataset {
                Some(dir) if net.is_some() => Some(Dataset::load(dir)?.calib().images),
                _ => None,
            };
            let shapes = file.shapes();
            let stats = commands::layer_stats(&shapes, net.as_ref(), calib.as_ref())?;
            let energy = enprune::energy::network_energy(&shapes, &stats, &hw, &file.names())?;
            atomic_write(&g.out.join("energy.csv"), report::to_csv(&energy).as_bytes())?;
            write_json(&g.out.join("energy.json"), &report::to_json(&energy))?;
            if g.json {
                print_json(&report::to_json(&energy));
            } else {
                print!("{}", report::to_csv(&energy));
            }
        }
        Command::Prune { model, dataset, config } => {
            let rc = run_config(g, config.as_deref(), dataset)?;
            let (_, net) = load_model(&model)?;
            let pc = rc.prune_config(net.len())?;
            let ds = Dataset::load(&rc.dataset)?;
            let run = commands::prune(&net, &ds, &pc, &rc.profile, rc.seed)?;
            commands::write_prune_outputs(&run, &rc.out)?;
            if g.json {
                print_json(&[&run.before, &run.after]);
            } else {
                print!("{}", commands::summary_table(&[run.before, run.after], pc.topk));
                println!("pruned model written to {}", rc.out.join("pruned").display());
            }
        }
        Command::ExperimentClasses {
            model,
            dataset,
            config,
            classes,
        } => {
            let rc = run_config(g, config.as_deref(), dataset)?;
            let (_, net) = load_model(&model)?;
            let pc = rc.prune_config(net.len())?;
            let ds = Dataset::load(&rc.dataset)?;
            let (_, rows) = commands::experiment_classes(&net, &ds, &pc, &rc.profile, &classes, rc.seed)?;
            let csv = commands::classes_csv(&rows);
            atomic_write(&rc.out.join("classes.csv"), csv.as_bytes())?;
            write_json(&rc.out.join("classes.json"), &rows)?;
            if g.json {
                print_json(&rows);
            } else {
                print!("{csv}");
            }
        }
        Command::Report { manifest } => {
            let hw = profile(g)?;
            let file = ModelFile::load(&manifest)?;
            let r = commands::share_report(&file, &hw)?;
            atomic_write(&g.out.join("report.csv"), commands::share_csv(&r).as_bytes())?;
            write_json(&g.out.join("report.json"), &r)?;
            if g.json {
                print_json(&r);
            } else {
                print!("{}", commands::share_csv(&r));
                println!(
                    "CONV: {:.1}% of weights, {:.1}% of energy; FC: {:.1}% of weights, {:.1}% of energy",
                    100.0 * r.conv_weight_share,
                    100.0 * r.conv_energy_share,
                    100.0 * r.fc_weight_share,
                    100.0 * r.fc_energy_share
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    info!("seed {}", cli.global.seed);
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(commands::exit_code(&e) as u8)
        }
    }
}
