//! Generator hyper-parameters and the tumor size presets.
//!
//! Defaults follow the published hyper-parameter table: vessel threshold
//! offset 15 HU, texture blur 0.6, capsule blur 0.8, capsule brightening
//! 120 HU, expansion intensity 30, edge bounds (0.4, 0.7), expansion radius
//! 1.3 r, tumor intensity U(30, μp − 10), texture scale U(1.1, 1.5), edge
//! blur U(0.6, 1.2) and half-axes U(0.75 r, 1.25 r).

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How blur standard deviations are interpreted.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SigmaUnit {
    #[default]
    Voxels,
    Millimetres,
}

impl SigmaUnit {
    /// Per-axis σ in voxels.
    pub fn to_voxels(self, sigma: f64, spacing: [f64; 3]) -> [f64; 3] {
        match self {
            SigmaUnit::Voxels => [sigma; 3],
            SigmaUnit::Millimetres => [sigma / spacing[0], sigma / spacing[1], sigma / spacing[2]],
        }
    }
}

/// Elastic shape deformation: random displacements on a coarse control
/// lattice, cubically interpolated to every voxel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ElasticConfig {
    /// Control points per axis spanning the deformed grid.
    pub control_points: usize,
    /// Displacement amplitude in voxels per unit of σe.
    pub amplitude_per_sigma: f64,
}

impl Default for ElasticConfig {
    fn default() -> Self {
        ElasticConfig {
            control_points: 3,
            amplitude_per_sigma: 1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PresetName {
    Tiny,
    Small,
    Medium,
    Large,
    Mix,
}

impl PresetName {
    pub const SIZED: [PresetName; 4] = [
        PresetName::Tiny,
        PresetName::Small,
        PresetName::Medium,
        PresetName::Large,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PresetName::Tiny => "tiny",
            PresetName::Small => "small",
            PresetName::Medium => "medium",
            PresetName::Large => "large",
            PresetName::Mix => "mix",
        }
    }
}

impl fmt::Display for PresetName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PresetName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "tiny" => PresetName::Tiny,
            "small" => PresetName::Small,
            "medium" => PresetName::Medium,
            "large" => PresetName::Large,
            "mix" => PresetName::Mix,
            other => return Err(Error::Argument(format!("unknown preset '{other}'"))),
        })
    }
}

/// One row of the size preset table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PresetRow {
    pub radius_mm: f64,
    /// σe ~ U[lo, hi].
    pub elastic_sigma: [f64; 2],
    /// Tumor count ~ discrete uniform on [lo, hi].
    pub count: [usize; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PresetTable {
    pub tiny: PresetRow,
    pub small: PresetRow,
    pub medium: PresetRow,
    pub large: PresetRow,
}

impl Default for PresetTable {
    fn default() -> Self {
        PresetTable {
            tiny: PresetRow { radius_mm: 4.0, elastic_sigma: [0.5, 1.0], count: [3, 10] },
            small: PresetRow { radius_mm: 8.0, elastic_sigma: [1.0, 2.0], count: [3, 10] },
            medium: PresetRow { radius_mm: 16.0, elastic_sigma: [3.0, 6.0], count: [2, 5] },
            large: PresetRow { radius_mm: 32.0, elastic_sigma: [5.0, 10.0], count: [1, 3] },
        }
    }
}

impl PresetTable {
    /// Row for a sized preset; `Mix` has no row of its own.
    pub fn row(&self, name: PresetName) -> Option<&PresetRow> {
        match name {
            PresetName::Tiny => Some(&self.tiny),
            PresetName::Small => Some(&self.small),
            PresetName::Medium => Some(&self.medium),
            PresetName::Large => Some(&self.large),
            PresetName::Mix => None,
        }
    }
}

/// A sized preset resolved to its parameter ranges.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SizePreset {
    pub name: PresetName,
    pub radius_mm: f64,
    pub elastic_sigma_range: [f64; 2],
    pub count_range: [usize; 2],
}

impl SizePreset {
    /// Resolve `name` against `table`. `Mix` picks one of the four sized
    /// presets uniformly with `rng`.
    pub fn resolve(name: PresetName, table: &PresetTable, rng: &mut impl Rng) -> SizePreset {
        let concrete = match name {
            PresetName::Mix => PresetName::SIZED[rng.random_range(0..PresetName::SIZED.len())],
            other => other,
        };
        let row = table.row(concrete).expect("sized preset");
        SizePreset {
            name: concrete,
            radius_mm: row.radius_mm,
            elastic_sigma_range: row.elastic_sigma,
            count_range: row.count,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    /// b: vessel threshold offset above the mean liver HU.
    pub vessel_threshold_offset: f64,
    /// Vessel pre-smoothing σa = base + per_std · σp.
    pub vessel_smoothing_base: f64,
    pub vessel_smoothing_per_std: f64,
    /// σb: texture blur.
    pub texture_blur: f64,
    /// η range.
    pub texture_scale_range: [f64; 2],
    /// μt ~ U(intensity_floor, μp − intensity_margin).
    pub intensity_floor: f64,
    pub intensity_margin: f64,
    /// Draw μt once per scan for sized presets instead of per tumor.
    pub shared_intensity: bool,
    /// σc range.
    pub edge_blur_range: [f64; 2],
    /// Half-axis length range as multiples of r.
    pub half_axis_factor_range: [f64; 2],
    /// σd: capsule blur.
    pub capsule_blur: f64,
    /// d: capsule brightening in HU.
    pub capsule_brightening: f64,
    /// (lb, ub): soft-mask band treated as tumor edge.
    pub capsule_bounds: [f64; 2],
    /// I: expansion intensity in [0, 100].
    pub expansion_intensity: f64,
    /// γmax = factor · r.
    pub expansion_radius_factor: f64,
    pub mass_effect: bool,
    pub capsule: bool,
    pub max_attempts: usize,
    /// Soft-mask level at which a voxel becomes tumor label.
    pub label_threshold: f64,
    pub sigma_unit: SigmaUnit,
    pub elastic: ElasticConfig,
    pub presets: PresetTable,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            vessel_threshold_offset: 15.0,
            vessel_smoothing_base: 0.5,
            vessel_smoothing_per_std: 0.025,
            texture_blur: 0.6,
            texture_scale_range: [1.1, 1.5],
            intensity_floor: 30.0,
            intensity_margin: 10.0,
            shared_intensity: true,
            edge_blur_range: [0.6, 1.2],
            half_axis_factor_range: [0.75, 1.25],
            capsule_blur: 0.8,
            capsule_brightening: 120.0,
            capsule_bounds: [0.4, 0.7],
            expansion_intensity: 30.0,
            expansion_radius_factor: 1.3,
            mass_effect: true,
            capsule: true,
            max_attempts: 200,
            label_threshold: 0.5,
            sigma_unit: SigmaUnit::Voxels,
            elastic: ElasticConfig::default(),
            presets: PresetTable::default(),
        }
    }
}

fn check_range(name: &str, r: [f64; 2]) -> Result<()> {
    if !(r[0].is_finite() && r[1].is_finite() && r[0] <= r[1]) {
        return Err(Error::Config(format!("{name} range {r:?} is empty")));
    }
    Ok(())
}

fn check_non_negative(name: &str, v: f64) -> Result<()> {
    if !(v.is_finite() && v >= 0.0) {
        return Err(Error::Config(format!("{name} must be >= 0, got {v}")));
    }
    Ok(())
}

impl GenConfig {
    /// Full pipeline, including mass effect and capsule; the look used for
    /// reader studies and previews.
    pub fn turing() -> Self {
        GenConfig::default()
    }

    /// Training-dataset outputs: mass effect and capsule disabled.
    pub fn training() -> Self {
        GenConfig {
            mass_effect: false,
            capsule: false,
            ..GenConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_non_negative("vessel_threshold_offset", self.vessel_threshold_offset.abs())?;
        check_non_negative("vessel_smoothing_base", self.vessel_smoothing_base)?;
        check_non_negative("vessel_smoothing_per_std", self.vessel_smoothing_per_std)?;
        check_non_negative("texture_blur", self.texture_blur)?;
        check_non_negative("capsule_blur", self.capsule_blur)?;
        check_non_negative("capsule_brightening", self.capsule_brightening)?;
        check_range("texture_scale", self.texture_scale_range)?;
        if self.texture_scale_range[0] < 1.0 {
            return Err(Error::Config("texture_scale_range must be >= 1".into()));
        }
        check_range("edge_blur", self.edge_blur_range)?;
        if self.edge_blur_range[0] <= 0.0 {
            return Err(Error::Config("edge_blur_range must be > 0".into()));
        }
        check_range("half_axis_factor", self.half_axis_factor_range)?;
        if self.half_axis_factor_range[0] <= 0.0 {
            return Err(Error::Config("half_axis_factor_range must be > 0".into()));
        }
        let [lb, ub] = self.capsule_bounds;
        if !(0.0 <= lb && lb < ub && ub <= 1.0) {
            return Err(Error::Config(format!("capsule_bounds {:?} must satisfy 0 <= lb < ub <= 1", self.capsule_bounds)));
        }
        if !(0.0..=100.0).contains(&self.expansion_intensity) {
            return Err(Error::Config(format!("expansion_intensity {} outside [0, 100]", self.expansion_intensity)));
        }
        if !(self.expansion_radius_factor.is_finite() && self.expansion_radius_factor > 0.0) {
            return Err(Error::Config("expansion_radius_factor must be > 0".into()));
        }
        if self.max_attempts == 0 {
            return Err(Error::Config("max_attempts must be >= 1".into()));
        }
        if !(self.label_threshold > 0.0 && self.label_threshold < 1.0) {
            return Err(Error::Config("label_threshold must lie in (0, 1)".into()));
        }
        if self.elastic.control_points < 2 {
            return Err(Error::Config("elastic.control_points must be >= 2".into()));
        }
        check_non_negative("elastic.amplitude_per_sigma", self.elastic.amplitude_per_sigma)?;
        for name in PresetName::SIZED {
            let row = self.presets.row(name).unwrap();
            if !(row.radius_mm.is_finite() && row.radius_mm > 0.0) {
                return Err(Error::Config(format!("preset {name}: radius must be > 0")));
            }
            check_range(&format!("preset {name} elastic_sigma"), row.elastic_sigma)?;
            if row.elastic_sigma[0] < 0.0 {
                return Err(Error::Config(format!("preset {name}: elastic_sigma must be >= 0")));
            }
            if row.count[0] > row.count[1] {
                return Err(Error::Config(format!("preset {name}: count range {:?} is empty", row.count)));
            }
        }
        Ok(())
    }

    /// μt sampling bounds for a parenchyma mean. When μp − margin falls
    /// below the floor the bounds are swapped so the range stays non-empty.
    pub fn intensity_range(&self, mu_p: f64) -> [f64; 2] {
        let hi = mu_p - self.intensity_margin;
        let lo = self.intensity_floor;
        [lo.min(hi), lo.max(hi)]
    }

    pub fn vessel_smoothing(&self, sigma_p: f64) -> f64 {
        self.vessel_smoothing_base + self.vessel_smoothing_per_std * sigma_p
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: GenConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        GenConfig::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

/// Uniform draw on `[lo, hi]` that tolerates degenerate ranges.
pub(crate) fn uniform(rng: &mut impl Rng, range: [f64; 2]) -> f64 {
    if range[0] == range[1] {
        range[0]
    } else {
        rng.random_range(range[0]..=range[1])
    }
}
