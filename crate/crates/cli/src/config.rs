//! Run configuration: a JSON file whose keys all have defaults; unknown keys
//! are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};
use surrogacy_core::analysis::AnalysisConfig;
use surrogacy_core::data::PopulationParams;
use surrogacy_core::sim::{Factors, RunSettings};
use surrogacy_core::synth::TrialSizes;
use surrogacy_core::trial_level::{CiMethod, DEFAULT_BOOTSTRAP_RESAMPLES};

use crate::error::{CliError, Result};

/// Environment variable holding the default worker count.
pub const THREADS_ENV: &str = "SURROGACY_THREADS";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenerateConfig {
    pub population: PopulationParams,
    pub n_trials: usize,
    pub trial_sizes: TrialSizes,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        GenerateConfig {
            population: PopulationParams::default(),
            n_trials: 10,
            trial_sizes: TrialSizes::Equal(300),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitConfig {
    /// Interval method for the R² estimates in `fit`; overrides
    /// `analysis.trial_level.ci`.
    pub ci: CiMethod,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            ci: CiMethod::TrialBootstrap {
                resamples: DEFAULT_BOOTSTRAP_RESAMPLES,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateConfig {
    pub factors: Factors,
    pub replications: usize,
    pub t_assess: f64,
    pub gamma: f64,
    pub log_lambda0: f64,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        let s = RunSettings::default();
        SimulateConfig {
            factors: Factors::default(),
            replications: s.replications,
            t_assess: s.t_assess,
            gamma: s.gamma,
            log_lambda0: s.log_lambda0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Master seed. Required by `simulate`; `generate` and `fit` fall back to 0.
    pub seed: Option<u64>,
    pub analysis: AnalysisConfig,
    pub generate: GenerateConfig,
    pub fit: FitConfig,
    pub simulate: SimulateConfig,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| CliError::config(format!("invalid configuration: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Load `path` if given, else defaults.
    pub fn load_or_default(path: Option<&Path>) -> Result<Self> {
        path.map(Self::load).unwrap_or_else(|| Ok(Self::default()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("configuration serializes")
    }

    pub fn run_settings(&self, seed: u64) -> RunSettings {
        RunSettings {
            replications: self.simulate.replications,
            master_seed: seed,
            t_assess: self.simulate.t_assess,
            gamma: self.simulate.gamma,
            log_lambda0: self.simulate.log_lambda0,
            analysis: self.analysis,
        }
    }
}

/// Worker count: explicit value, then the environment, then available cores.
pub fn resolve_threads(flag: Option<usize>) -> Result<usize> {
    if let Some(n) = flag {
        return if n == 0 {
            Err(CliError::config("--threads must be at least 1"))
        } else {
            Ok(n)
        };
    }
    match std::env::var(THREADS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(CliError::config(format!("{THREADS_ENV} must be a positive integer, got {v:?}"))),
        },
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_gives_defaults() {
        assert_eq!(RunConfig::from_json("{}").unwrap(), RunConfig::default());
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(RunConfig::from_json(r#"{"sed": 1}"#).is_err());
        assert!(RunConfig::from_json(r#"{"simulate": {"replicates": 3}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"generate": {"population": {"theta": 2}}}"#).is_err());
    }

    #[test]
    fn echo_round_trips() {
        let mut c = RunConfig::default();
        c.seed = Some(99);
        c.simulate.factors.r2_true = vec![0.1 + 0.2];
        assert_eq!(RunConfig::from_json(&c.to_json()).unwrap(), c);
    }

    #[test]
    fn nested_overrides() {
        let c = RunConfig::from_json(
            r#"{"seed": 3, "analysis": {"criteria": {"cl_applies_to": "max"}, "trial_level": {"wls_weights": "inverse_sample_size"}}}"#,
        )
        .unwrap();
        assert_eq!(c.seed, Some(3));
        assert_eq!(c.analysis.trial_level.wls_weights, surrogacy_core::trial_level::WeightScheme::InverseSampleSize);
    }
}
