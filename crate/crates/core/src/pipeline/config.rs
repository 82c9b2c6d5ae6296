use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::refiner::RefineConfig;
use crate::tracker::TrackingConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Preset {
    /// High quality.
    H,
    /// Real time.
    R,
}

impl std::str::FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "H" | "h" => Ok(Preset::H),
            "R" | "r" => Ok(Preset::R),
            other => Err(Error::Config(format!("unknown preset `{other}` (expected H or R)"))),
        }
    }
}

/// Refinement depth weight used by both presets. Depth residuals are in
/// meters and endoscopic depths are a few centimeters, so an unweighted
/// depth term is dwarfed by the color term and barely shapes the geometry.
pub const PRESET_DEPTH_WEIGHT: f64 = 30.0;

/// Full SLAM configuration. A config file names a preset and overrides any
/// subset of fields:
///
/// ```toml
/// preset = "R"
/// rho_e = 0.4
/// [tracking]
/// iterations = 8
/// [refine]
/// p_c = 0.5
/// ```
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SlamConfig {
    pub preset: Preset,
    pub tracking: TrackingConfig,
    pub refine: RefineConfig,
    /// Visibility below which a pixel is backprojected during expansion.
    pub rho_e: f64,
    /// Keep one expansion pixel per `stride x stride` block.
    pub expansion_stride: usize,
    /// Seed for keyframe sampling.
    pub seed: u64,
}

impl Default for SlamConfig {
    fn default() -> Self {
        Self::preset(Preset::H)
    }
}

impl SlamConfig {
    pub fn preset(preset: Preset) -> Self {
        match preset {
            Preset::H => Self {
                preset,
                tracking: TrackingConfig {
                    iterations: 15,
                    resolution_scale: 1.0,
                    ..TrackingConfig::default()
                },
                refine: RefineConfig {
                    keyframe_interval: 8,
                    refine_interval: 1,
                    iterations: 25,
                    p_c: 0.1,
                    depth_weight: PRESET_DEPTH_WEIGHT,
                    ..RefineConfig::default()
                },
                rho_e: 0.5,
                expansion_stride: 1,
                seed: 0,
            },
            Preset::R => Self {
                preset,
                tracking: TrackingConfig {
                    iterations: 5,
                    resolution_scale: 0.5,
                    ..TrackingConfig::default()
                },
                refine: RefineConfig {
                    keyframe_interval: 4,
                    refine_interval: 2,
                    iterations: 6,
                    p_c: 0.95,
                    depth_weight: PRESET_DEPTH_WEIGHT,
                    ..RefineConfig::default()
                },
                rho_e: 0.3,
                expansion_stride: 2,
                seed: 0,
            },
        }
    }

    /// Parses a TOML config: the named preset (default H) with the file's
    /// fields layered on top.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let overrides: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        let preset = match overrides.get("preset") {
            None => Preset::H,
            Some(toml::Value::String(s)) => s.parse()?,
            Some(other) => return Err(Error::Config(format!("preset must be a string, got {other}"))),
        };
        let mut base = toml::Table::try_from(Self::preset(preset)).map_err(|e| Error::Config(e.to_string()))?;
        merge(&mut base, overrides);
        let cfg: Self = toml::Value::Table(base)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        Self::from_toml_str(&text).map_err(|e| Error::file(path, e))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.tracking.validate()?;
        self.refine.validate()?;
        if !(0.0..=1.0).contains(&self.rho_e) {
            return Err(Error::Config("rho_e must lie in [0, 1]".into()));
        }
        if self.expansion_stride == 0 {
            return Err(Error::Config("expansion_stride must be at least 1".into()));
        }
        Ok(())
    }

    /// Optimizer iterations spent per frame on average (tracking plus
    /// refinement amortized over the refine cadence).
    pub fn iterations_per_frame(&self) -> f64 {
        self.tracking.iterations as f64 + self.refine.iterations as f64 / self.refine.refine_interval as f64
    }
}

fn merge(base: &mut toml::Table, overrides: toml::Table) {
    for (k, v) in overrides {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}
