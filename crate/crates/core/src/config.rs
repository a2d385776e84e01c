//! Run configuration: a TOML file with one table per concern. Every key has
//! a default, unknown keys are rejected, and `PRIVOT__<TABLE>__<KEY>`
//! environment variables override file values.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::candidates::{AttractionRepulsionModel, FamilyMode};
use crate::covering::{AdmissibilityParams, Generator, DEFAULT_COVERING_CAP};
use crate::dp::PrivacyBudget;
use crate::error::{Error, Result};
use crate::grid::{BoxDomain, GridSpec};
use crate::semidual::ClipConfig;

/// Prefix of environment overrides; `PRIVOT__PRIVACY__EPSILON=2` sets `privacy.epsilon`.
pub const ENV_PREFIX: &str = "PRIVOT__";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub grid: GridConfig,
    pub model: AttractionRepulsionModel,
    pub family: FamilyConfig,
    pub privacy: PrivacyConfig,
    pub data: DataConfig,
    pub sweep: SweepConfig,
    pub verify: VerifyConfig,
    pub packing: PackingConfig,
    pub covering: CoveringConfig,
    pub output: OutputConfig,
}

/// A cube `[lo, hi]^d` with `m` points per axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub lo: f64,
    pub hi: f64,
    pub m: usize,
    pub d: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            lo: -0.5,
            hi: 0.5,
            m: 64,
            d: 2,
        }
    }
}

impl GridConfig {
    pub fn domain(&self) -> Result<BoxDomain> {
        BoxDomain::cube(self.lo, self.hi, self.d)
    }

    pub fn spec(&self) -> Result<GridSpec> {
        GridSpec::uniform(self.lo, self.hi, self.m, self.d)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FamilyConfig {
    /// Number of candidates `T`.
    pub size: usize,
    pub mode: FamilyMode,
}

impl Default for FamilyConfig {
    fn default() -> Self {
        Self {
            size: 2000,
            mode: FamilyMode::IncludeTrue,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrivacyConfig {
    pub epsilon: f64,
    /// Clamping constant `C`.
    pub clip: f64,
}

impl Default for PrivacyConfig {
    fn default() -> Self {
        Self {
            epsilon: 1.0,
            clip: 0.25,
        }
    }
}

impl PrivacyConfig {
    pub fn budget(&self) -> Result<PrivacyBudget> {
        PrivacyBudget::pure(self.epsilon)
    }

    pub fn clip(&self) -> Result<ClipConfig> {
        ClipConfig::new(self.clip)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub n: usize,
    pub seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self { n: 200_000, seed: 0 }
    }
}

/// Seeds run from `data.seed` to `data.seed + replicates - 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub n_values: Vec<usize>,
    pub epsilons: Vec<f64>,
    pub replicates: u64,
    /// Monte-Carlo points per error estimate.
    pub n_mc: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            n_values: vec![2000, 8000, 32000],
            epsilons: vec![1.0],
            replicates: 20,
            n_mc: 20_000,
        }
    }
}

/// Toy instance for the empirical privacy check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyConfig {
    pub n: usize,
    pub m: usize,
    pub candidates: usize,
    pub epsilon: f64,
    pub trials: u64,
    /// Neighboring pairs sampled from the exhaustive replacement list.
    pub pairs: usize,
    /// Multiplier on the calibrated sensitivity; below 1 under-noises on purpose.
    pub noise_factor: f64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            n: 10,
            m: 8,
            candidates: 3,
            epsilon: 1.0,
            trials: 100_000,
            pairs: 50,
            noise_factor: 1.0,
        }
    }
}

/// Packing family checked by `verify-packing`; `amplitude = 0` picks the default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PackingConfig {
    pub d: usize,
    pub m: usize,
    pub alpha: f64,
    pub amplitude: f64,
    pub bandwidths: Vec<f64>,
    pub tv_bandwidths: Vec<f64>,
    pub cells_per_h: usize,
    pub slope_tolerance: f64,
    pub tv_variation: f64,
}

impl Default for PackingConfig {
    fn default() -> Self {
        Self {
            d: 1,
            m: 2,
            alpha: 2.0,
            amplitude: 0.0,
            bandwidths: vec![0.04, 0.02, 0.01],
            tv_bandwidths: vec![0.02, 0.01, 0.005],
            cells_per_h: 64,
            slope_tolerance: 0.1,
            tv_variation: 0.25,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoveringConfig {
    pub generator: Generator,
    pub resolutions: Vec<u32>,
    pub d: usize,
    pub delta: f64,
    /// Admissibility constants `M`, `R` and `alpha`.
    pub m_const: f64,
    pub r: f64,
    pub alpha: f64,
    /// Points per axis of the screening grid on `[0, 1]^d`.
    pub screen_m: usize,
    pub cap: u64,
}

impl Default for CoveringConfig {
    fn default() -> Self {
        Self {
            generator: Generator::Haar,
            resolutions: vec![1, 2],
            d: 1,
            delta: 0.1,
            m_const: 3.0,
            r: 2.0,
            alpha: 2.0,
            screen_m: 33,
            cap: DEFAULT_COVERING_CAP,
        }
    }
}

impl CoveringConfig {
    pub fn params(&self) -> Result<AdmissibilityParams> {
        AdmissibilityParams::new(self.m_const, self.r, self.alpha, self.d)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: PathBuf::from("out") }
    }
}

impl RunConfig {
    /// Parses TOML text, applies overrides from `env`, and validates.
    pub fn from_toml_with_env<I>(text: &str, env: I) -> Result<Self>
    where
        I: IntoIterator<Item = (String, String)>,
    {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        for (key, value) in env {
            let Some(rest) = key.strip_prefix(ENV_PREFIX) else {
                continue;
            };
            let path: Vec<String> = rest.split("__").map(|s| s.to_ascii_lowercase()).collect();
            apply_override(&mut table, &path, &value)?;
        }
        let config: RunConfig = table.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// Reads `path` (or the defaults when `None`) with overrides from the process environment.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p)?,
            None => String::new(),
        };
        Self::from_toml_with_env(&text, std::env::vars())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Checks every section against the invariants of the module it feeds.
    pub fn validate(&self) -> Result<()> {
        let cfg = |e: Error| Error::Config(e.to_string());
        self.grid.spec().map_err(cfg)?;
        self.model.validate().map_err(cfg)?;
        if self.family.size < 1 {
            return Err(Error::Config("family.size must be at least 1".into()));
        }
        self.privacy.budget().map_err(cfg)?;
        self.privacy.clip().map_err(cfg)?;
        if self.data.n < 1 {
            return Err(Error::Config("data.n must be at least 1".into()));
        }
        let s = &self.sweep;
        if s.n_values.is_empty() || s.epsilons.is_empty() || s.replicates == 0 || s.n_mc == 0 {
            return Err(Error::Config("sweep ranges must be nonempty".into()));
        }
        if s.n_values.contains(&0) || s.epsilons.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
            return Err(Error::Config("sweep sizes and epsilons must be positive".into()));
        }
        let v = &self.verify;
        if v.n < 1 || v.m < 2 || v.candidates < 2 || v.trials == 0 || v.pairs == 0 {
            return Err(Error::Config(
                "verify needs n >= 1, m >= 2, at least 2 candidates, trials and pairs".into(),
            ));
        }
        if !(v.epsilon > 0.0 && v.epsilon.is_finite() && v.noise_factor > 0.0 && v.noise_factor.is_finite()) {
            return Err(Error::Config("verify.epsilon and verify.noise_factor must be positive".into()));
        }
        let p = &self.packing;
        if p.d < 1 || p.m < 2 || p.cells_per_h < 8 || p.bandwidths.len() < 2 {
            return Err(Error::Config(
                "packing needs d >= 1, m >= 2, cells_per_h >= 8 and two bandwidths".into(),
            ));
        }
        if !(p.amplitude >= 0.0 && p.alpha >= 1.0) {
            return Err(Error::Config("packing.amplitude must be >= 0 and alpha >= 1".into()));
        }
        self.covering.params().map_err(cfg)?;
        if self.covering.resolutions.is_empty() || !(self.covering.delta > 0.0) || self.covering.screen_m < 5 {
            return Err(Error::Config(
                "covering needs resolutions, delta > 0 and screen_m >= 5".into(),
            ));
        }
        Ok(())
    }
}

fn apply_override(table: &mut toml::Table, path: &[String], raw: &str) -> Result<()> {
    let (last, parents) = path
        .split_last()
        .ok_or_else(|| Error::Config("empty override key".into()))?;
    let mut t = table;
    for key in parents {
        t = t
            .entry(key.clone())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override path {} is not a table", path.join("."))))?;
    }
    t.insert(last.clone(), parse_value(raw));
    Ok(())
}

/// A TOML literal when `raw` parses as one, otherwise the raw string.
fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}
