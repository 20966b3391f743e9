//! Run configuration: one TOML file describing the target, the
//! representation, the clock and every sampler knob.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baselines::GaConfig;
use crate::diffrep::{DiffRep, Geometry, LinearRep, LowPassRep, SirenConfig, SirenRep};
use crate::error::{Error, Result};
use crate::sampler::SamplerConfig;
use crate::schedule::{NoiseSchedule, RePaintParams, RePaintSchedule};
use crate::score::{AnalyticScoreModel, GaussianMixture, RemoteScoreModel, ScoreModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConditionSpec {
    pub name: String,
    /// Mixture components forming the conditional density.
    pub components: Vec<usize>,
}

/// Diagonal Gaussian mixture target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetSpec {
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub variances: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub conditions: Vec<ConditionSpec>,
}

impl TargetSpec {
    pub fn mixture(&self) -> Result<GaussianMixture> {
        GaussianMixture::new(self.weights.clone(), self.means.clone(), self.variances.clone())
    }

    pub fn analytic_model(&self) -> Result<AnalyticScoreModel> {
        let mut model = AnalyticScoreModel::new(self.mixture()?);
        for c in &self.conditions {
            model = model.with_component_condition(c.name.clone(), &c.components)?;
        }
        Ok(model)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum RepSpec {
    Identity { dim: usize },
    Linear { rows: Vec<Vec<f64>> },
    Lowpass { grid: usize, n_basis: usize },
    Siren { siren: SirenConfig, geometry: Geometry },
}

impl RepSpec {
    pub fn build(&self) -> Result<Box<dyn DiffRep>> {
        Ok(match self {
            RepSpec::Identity { dim } => Box::new(LinearRep::identity(*dim)),
            RepSpec::Linear { rows } => Box::new(LinearRep::from_rows(rows)?),
            RepSpec::Lowpass { grid, n_basis } => Box::new(LowPassRep::new(*grid, *n_basis)?),
            RepSpec::Siren { siren, geometry } => Box::new(SirenRep::new(siren.clone(), *geometry)?),
        })
    }
}

/// Either an explicit level list or power-law parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleSpec {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub levels: Option<Vec<f64>>,
    pub n_steps: usize,
    pub sigma_min: f64,
    pub sigma_max: f64,
    pub rho: f64,
}

impl Default for ScheduleSpec {
    fn default() -> Self {
        Self {
            levels: None,
            n_steps: 100,
            sigma_min: 0.002,
            sigma_max: 80.0,
            rho: 7.0,
        }
    }
}

impl ScheduleSpec {
    pub fn build(&self) -> Result<NoiseSchedule> {
        match &self.levels {
            Some(levels) => NoiseSchedule::from_levels(levels.clone()),
            None => NoiseSchedule::power_law(self.n_steps, self.sigma_min, self.sigma_max, self.rho),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricsSpec {
    /// Permutations for the MMD test against exact target samples (0 disables).
    pub mmd_permutations: usize,
    /// Fixed MMD bandwidth; the median heuristic when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bandwidth: Option<f64>,
    /// Mode radius; a quarter of the smallest inter-mean distance when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mode_radius: Option<f64>,
}

impl Default for MetricsSpec {
    fn default() -> Self {
        Self {
            mmd_permutations: 200,
            bandwidth: None,
            mode_radius: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScoreSpec {
    /// Base address of a remote noise predictor; the analytic target is used when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    #[serde(default = "default_trajectories")]
    pub trajectories: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    pub target: TargetSpec,
    pub rep: RepSpec,
    #[serde(default)]
    pub schedule: ScheduleSpec,
    #[serde(default)]
    pub score: ScoreSpec,
    #[serde(default)]
    pub sampler: SamplerConfig,
    #[serde(default)]
    pub repaint: RePaintParams,
    #[serde(default)]
    pub baseline: GaConfig,
    #[serde(default)]
    pub metrics: MetricsSpec,
}

fn default_trajectories() -> usize {
    8
}

impl RunConfig {
    /// Parses TOML; errors name the offending key path.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let de = toml::Deserializer::parse(text).map_err(|e| Error::Config {
            key: "<document>".into(),
            message: e.to_string(),
        })?;
        let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let key = e.path().to_string();
            Error::Config {
                key: if key.is_empty() || key == "." { "<root>".into() } else { key },
                message: e.into_inner().to_string(),
            }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config {
            key: "<document>".into(),
            message: e.to_string(),
        })
    }

    /// Hex SHA-256 of the canonical serialization. The output directory is
    /// excluded so that relocating a run does not change its identity.
    pub fn hash(&self) -> Result<String> {
        let canonical = RunConfig {
            output: None,
            ..self.clone()
        };
        let digest = Sha256::digest(canonical.to_toml_string()?.as_bytes());
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }

    pub fn validate(&self) -> Result<()> {
        let err = |key: &str, message: String| Error::Config {
            key: key.into(),
            message,
        };
        if self.trajectories == 0 {
            return Err(err("trajectories", "must be >= 1".into()));
        }
        let rep = self.rep.build().map_err(|e| err("rep", e.to_string()))?;
        let target = self.target.mixture().map_err(|e| err("target", e.to_string()))?;
        if target.dim() != rep.output_dim() {
            return Err(err(
                "target.means",
                format!(
                    "target dimension {} differs from the representation's view size {}",
                    target.dim(),
                    rep.output_dim()
                ),
            ));
        }
        self.target.analytic_model().map_err(|e| err("target.conditions", e.to_string()))?;
        self.schedule.build().map_err(|e| err("schedule", e.to_string()))?;
        self.sampler.validate().map_err(|e| err("sampler", e.to_string()))?;
        self.baseline.validate().map_err(|e| err("baseline", e.to_string()))?;
        self.repaint_schedule().map_err(|e| err("repaint", e.to_string()))?;
        Ok(())
    }

    pub fn repaint_schedule(&self) -> Result<RePaintSchedule> {
        RePaintSchedule::build(self.schedule.build()?.n_steps(), self.repaint)
    }

    /// Remote predictor when an endpoint is configured (or overridden), analytic otherwise.
    pub fn score_model(&self, endpoint_override: Option<&str>) -> Result<Box<dyn ScoreModel>> {
        let dim = self.target.mixture()?.dim();
        match endpoint_override.or(self.score.endpoint.as_deref()) {
            Some(endpoint) => Ok(Box::new(RemoteScoreModel::new(endpoint, dim))),
            None => Ok(Box::new(self.target.analytic_model()?)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
seed = 3
trajectories = 2

[target]
weights = [1.0]
means = [[0.0, 0.0]]
variances = [[1.0, 1.0]]

[rep]
kind = "identity"
dim = 2

[schedule]
n_steps = 8
sigma_max = 10.0
"#;

    #[test]
    fn minimal_config_parses_with_defaults() {
        let c = RunConfig::from_toml_str(MINIMAL).unwrap();
        assert_eq!(c.seed, 3);
        assert_eq!(c.schedule.rho, 7.0);
        assert_eq!(c.sampler.eta, 0.75);
        assert_eq!(c.repaint, RePaintParams::disabled());
    }

    #[test]
    fn round_trip_is_lossless() {
        let c = RunConfig::from_toml_str(MINIMAL).unwrap();
        let text = c.to_toml_string().unwrap();
        let d = RunConfig::from_toml_str(&text).unwrap();
        assert_eq!(c, d);
        assert_eq!(c.hash().unwrap(), d.hash().unwrap());
    }

    #[test]
    fn unknown_key_is_named() {
        let text = MINIMAL.replace("n_steps = 8", "n_steps = 8\nsteps = 9");
        match RunConfig::from_toml_str(&text) {
            Err(Error::Config { key, .. }) => assert!(key.contains("schedule"), "{key}"),
            other => panic!("{other:?}"),
        }
        let text = MINIMAL.replace("seed = 3", "seed = \"three\"");
        match RunConfig::from_toml_str(&text) {
            Err(Error::Config { key, .. }) => assert_eq!(key, "seed"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let text = MINIMAL.replace("dim = 2", "dim = 3");
        match RunConfig::from_toml_str(&text) {
            Err(Error::Config { key, .. }) => assert_eq!(key, "target.means"),
            other => panic!("{other:?}"),
        }
    }
}
