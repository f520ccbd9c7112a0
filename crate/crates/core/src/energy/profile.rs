use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const DEFAULT_PROFILE: &str = include_str!("../../../../profiles/default.toml");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryLevel {
    pub name: String,
    /// Energy per 16-bit access in MAC units.
    pub energy: f64,
    /// Capacity in 16-bit words; `None` only for the outermost level.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub capacity: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HardwareProfile {
    /// Outermost first.
    #[serde(rename = "level")]
    pub levels: Vec<MemoryLevel>,
    #[serde(default = "unit")]
    pub mac_energy: f64,
    #[serde(default = "sixteen")]
    pub weight_bits: u32,
    #[serde(default = "sixteen")]
    pub activation_bits: u32,
    #[serde(default = "default_overhead")]
    pub compression_overhead: f64,
}

fn unit() -> f64 {
    1.0
}
fn sixteen() -> u32 {
    16
}
fn default_overhead() -> f64 {
    0.1
}

impl Default for HardwareProfile {
    fn default() -> Self {
        HardwareProfile::from_toml_str(DEFAULT_PROFILE).expect("bundled default profile is valid")
    }
}

impl HardwareProfile {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let p: HardwareProfile = toml::from_str(text).map_err(|e| Error::Parse {
            path: "<profile>".into(),
            detail: e.to_string(),
        })?;
        p.validate()?;
        Ok(p)
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let p: HardwareProfile = serde_json::from_str(text).map_err(|e| Error::Parse {
            path: "<profile>".into(),
            detail: e.to_string(),
        })?;
        p.validate()?;
        Ok(p)
    }

    /// Loads TOML, or JSON when the extension is `.json`.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let parsed = if path.extension().is_some_and(|e| e == "json") {
            Self::from_json_str(&text)
        } else {
            Self::from_toml_str(&text)
        };
        parsed.map_err(|e| match e {
            Error::Parse { detail, .. } => Error::Parse {
                path: path.display().to_string(),
                detail,
            },
            other => other,
        })
    }

    pub fn with_bits(mut self, weight_bits: u32, activation_bits: u32) -> Self {
        self.weight_bits = weight_bits;
        self.activation_bits = activation_bits;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidProfile(m));
        if self.levels.is_empty() {
            return bad("at least one memory level is required".into());
        }
        if self.levels[0].capacity.is_some() {
            return bad(format!("outermost level {} must be unbounded", self.levels[0].name));
        }
        for l in &self.levels[1..] {
            match l.capacity {
                None => return bad(format!("level {} is unbounded but not outermost", l.name)),
                Some(0) => return bad(format!("level {} has zero capacity", l.name)),
                Some(_) => {}
            }
        }
        for l in &self.levels {
            if !(l.energy.is_finite() && l.energy > 0.0) {
                return bad(format!("level {} energy must be positive", l.name));
            }
        }
        for pair in self.levels.windows(2) {
            if pair[1].energy >= pair[0].energy {
                return bad(format!(
                    "energies must strictly decrease inward: {} ({}) then {} ({})",
                    pair[0].name, pair[0].energy, pair[1].name, pair[1].energy
                ));
            }
        }
        if !(self.mac_energy.is_finite() && self.mac_energy >= 0.0) {
            return bad("mac_energy must be nonnegative".into());
        }
        if self.weight_bits == 0 || self.activation_bits == 0 {
            return bad("bitwidths must be positive".into());
        }
        if !(self.compression_overhead.is_finite() && self.compression_overhead >= 0.0) {
            return bad("compression_overhead must be nonnegative".into());
        }
        Ok(())
    }

    /// Bounded levels, outermost first.
    pub fn bounded(&self) -> &[MemoryLevel] {
        &self.levels[1..]
    }

    pub fn innermost_energy(&self) -> f64 {
        self.levels.last().expect("validated profile has levels").energy
    }
}
