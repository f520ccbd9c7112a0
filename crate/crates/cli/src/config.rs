//! Run configuration: a TOML file merged with command-line flags.
//!
//! ```toml
//! dataset = "out/dataset"
//! profile = "profiles/default.toml"
//!
//! [schedule]
//! step = 0.1
//! caps = [0.5, 0.8, 0.8, 0.9, 0.7]   # one per layer, or a single value for all
//!
//! [prune]
//! accuracy_drop_budget = 0.01
//! finetune_epochs = 2
//! ```
//!
//! Any `PruneConfig` field may appear under `[prune]`; the schedule is
//! expanded once the layer count is known.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use enprune::energy::HardwareProfile;
use enprune::prune::{PruneConfig, RatioSchedule};
use enprune::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScheduleSpec {
    Explicit { increments: Vec<Vec<f64>> },
    Stepped { step: f64, caps: Vec<f64> },
}

impl Default for ScheduleSpec {
    fn default() -> Self {
        ScheduleSpec::Stepped {
            step: 0.1,
            caps: vec![0.9],
        }
    }
}

impl ScheduleSpec {
    pub fn expand(&self, layers: usize) -> Result<RatioSchedule> {
        let schedule = match self {
            ScheduleSpec::Explicit { increments } => RatioSchedule {
                increments: increments.clone(),
            },
            ScheduleSpec::Stepped { step, caps } => {
                if !(*step > 0.0 && *step < 1.0) {
                    return Err(Error::Config(format!("schedule step {step} must lie in (0, 1)")));
                }
                let caps = match caps.len() {
                    1 => vec![caps[0]; layers],
                    n if n == layers => caps.clone(),
                    n => {
                        return Err(Error::Config(format!(
                            "schedule has {n} caps for a {layers}-layer network"
                        )))
                    }
                };
                RatioSchedule::stepped(*step, &caps)
            }
        };
        schedule.validate(layers)?;
        Ok(schedule)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfigFile {
    pub dataset: Option<PathBuf>,
    pub profile: Option<PathBuf>,
    #[serde(default)]
    pub schedule: ScheduleSpec,
    /// `PruneConfig` fields other than the schedule.
    #[serde(default)]
    pub prune: toml::Table,
}

/// Everything a pruning run needs, with paths checked.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub dataset: PathBuf,
    pub profile: HardwareProfile,
    pub schedule: ScheduleSpec,
    pub prune: toml::Table,
    pub seed: u64,
    pub out: PathBuf,
}

fn config_err(path: &Path, detail: impl std::fmt::Display) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        detail: detail.to_string(),
    }
}

impl RunConfigFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        toml::from_str(&text).map_err(|e| config_err(path, e))
    }
}

impl RunConfig {
    /// Merges file settings with flags (flags win) and checks every input path exists.
    pub fn resolve(
        file: RunConfigFile,
        dataset_flag: Option<PathBuf>,
        profile: Option<HardwareProfile>,
        seed: u64,
        out: PathBuf,
    ) -> Result<Self> {
        let dataset = dataset_flag
            .or(file.dataset)
            .ok_or_else(|| Error::Config("no dataset given (use --dataset or `dataset =` in the config)".into()))?;
        check_dataset_dir(&dataset)?;
        let profile = match (profile, &file.profile) {
            (Some(p), _) => p,
            (None, Some(path)) => HardwareProfile::load(path)?,
            (None, None) => HardwareProfile::default(),
        };
        // reject unknown or ill-typed prune fields before any work starts
        prune_config_from(&file.prune, RatioSchedule { increments: Vec::new() })?;
        Ok(RunConfig {
            dataset,
            profile,
            schedule: file.schedule,
            prune: file.prune,
            seed,
            out,
        })
    }

    pub fn prune_config(&self, layers: usize) -> Result<PruneConfig> {
        let config = prune_config_from(&self.prune, self.schedule.expand(layers)?)?;
        config.validate(layers)?;
        Ok(config)
    }
}

fn prune_config_from(table: &toml::Table, schedule: RatioSchedule) -> Result<PruneConfig> {
    if table.contains_key("schedule") {
        return Err(Error::Config("put the schedule in its own [schedule] table".into()));
    }
    let mut t = table.clone();
    t.insert(
        "schedule".into(),
        toml::Value::try_from(&schedule).map_err(|e| Error::Config(e.to_string()))?,
    );
    let known = toml::Value::try_from(PruneConfig::new(schedule)).map_err(|e| Error::Config(e.to_string()))?;
    if let Some(bad) = t.keys().find(|k| known.get(k.as_str()).is_none()) {
        return Err(Error::Config(format!("unknown [prune] setting '{bad}'")));
    }
    t.try_into().map_err(|e: toml::de::Error| Error::Config(format!("[prune]: {e}")))
}

pub fn check_dataset_dir(dir: &Path) -> Result<()> {
    for f in ["images.tnsr", "labels.tnsr", "split.json"] {
        if !dir.join(f).is_file() {
            return Err(Error::Config(format!("dataset {} is missing {f}", dir.display())));
        }
    }
    Ok(())
}
