use escape_core::experiments::{HoleFamily, MuSource};
use escape_core::maps::MapSpec;
use escape_core::openmap::{Hole, HoleInterval, InitialMeasure};
use escape_core::potentials::{PotentialSpec, DEFAULT_PRESSURE_BINS};
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: String, source: std::io::Error },
    #[error("cannot parse config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("unknown preset '{0}' (try `escape presets`)")]
    UnknownPreset(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Full run configuration. Every section has defaults, so a config file only
/// needs the fields it changes.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub map: MapSpec,
    pub potential: PotentialSpec,
    pub hole: HoleConfig,
    pub solver: SolverConfig,
    pub experiment: ExperimentConfig,
    pub output: OutputConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            map: MapSpec::Tent2,
            potential: PotentialSpec::Geometric { t: 1.0, allow_any_t: false },
            hole: HoleConfig::default(),
            solver: SolverConfig::default(),
            experiment: ExperimentConfig::default(),
            output: OutputConfig::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum HoleShape {
    #[default]
    Symmetric,
    LeftEnd,
    LeftEndConjugate,
}

/// Either a centred family (shape + z, radius eps) or explicit open intervals.
#[derive(Clone, Debug, Default, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct HoleConfig {
    pub shape: HoleShape,
    pub z: Option<f64>,
    pub eps: Option<f64>,
    pub intervals: Option<Vec<[f64; 2]>>,
}

impl HoleConfig {
    pub fn family(&self) -> Result<HoleFamily, ConfigError> {
        match self.shape {
            HoleShape::Symmetric => {
                let z = self.z.ok_or_else(|| ConfigError::Invalid("hole.z is required for symmetric holes".into()))?;
                Ok(HoleFamily::Symmetric { z })
            }
            HoleShape::LeftEnd => Ok(HoleFamily::LeftEnd),
            HoleShape::LeftEndConjugate => Ok(HoleFamily::LeftEndConjugate),
        }
    }

    /// The single hole used by `escape` and `accim`; no hole at all means empty.
    pub fn build(&self) -> anyhow::Result<Hole> {
        if let Some(ivs) = &self.intervals {
            if self.eps.is_some() || self.z.is_some() {
                return Err(ConfigError::Invalid("give either hole.intervals or hole.z/eps, not both".into()).into());
            }
            let ivs = ivs.iter().map(|[a, b]| HoleInterval::open(*a, *b)).collect();
            return Ok(Hole::from_intervals(ivs)?);
        }
        match self.eps {
            None if self.z.is_none() => Ok(Hole::empty()),
            None => Err(ConfigError::Invalid("hole.eps is required with hole.z".into()).into()),
            Some(e) => Ok(self.family()?.hole(e)?),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub n: usize,
    pub tol: f64,
    pub max_iter: usize,
    pub pressure_bins: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig { n: 4096, tol: 1e-10, max_iter: 100_000, pressure_bins: DEFAULT_PRESSURE_BINS }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub eps_list: Option<Vec<f64>>,
    pub grid: Option<GridConfig>,
    pub mu_source: MuSource,
    /// Allowed |extrapolated − predicted| for the scaling gate.
    pub limit_tol: f64,
    pub theta: f64,
    pub r: f64,
    pub n_max: usize,
    pub q_min: f64,
    pub plateau_tol: Option<f64>,
    pub plateau_threshold: f64,
    pub n_samples: usize,
    pub n_steps: usize,
    pub measure: Option<InitialMeasure>,
    /// Agreement gate for Monte Carlo vs spectral, in fitted standard errors.
    pub agreement_sigmas: f64,
    pub l: usize,
    pub l_max: usize,
    pub t_max: usize,
    pub domain_cap: usize,
    pub eps0: Option<f64>,
    pub semiconjugacy_samples: usize,
    pub steps: usize,
    pub mc_check: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            eps_list: None,
            grid: None,
            mu_source: MuSource::Ulam,
            limit_tol: 0.05,
            theta: 0.5,
            r: 1.0,
            n_max: 100,
            q_min: 0.0,
            plateau_tol: None,
            plateau_threshold: 0.5,
            n_samples: 1_000_000,
            n_steps: 200,
            measure: None,
            agreement_sigmas: 3.0,
            l: 2,
            l_max: 5,
            t_max: 20,
            domain_cap: 100_000,
            eps0: None,
            semiconjugacy_samples: 10_000,
            steps: 60,
            mc_check: false,
        }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: Option<String>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Read { path: path.display().to_string(), source })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }
}
