//! TOML configuration. Every section rejects unknown keys.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::GridSpec;
use crate::threshold::ScoreWeights;
use crate::truncation::{Topology, TruncationRule};
use crate::variogram::VariogramModel;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub grid: GridSpec,
    pub rule: RuleConfig,
    pub variograms: Variograms,
    #[serde(default)]
    pub grades: Option<GradeConfig>,
    #[serde(default)]
    pub prior: PriorConfig,
    #[serde(default)]
    pub pipeline: PipelineConfig,
    #[serde(default)]
    pub synthetic: Option<SyntheticConfig>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuleConfig {
    pub domains: Vec<String>,
    /// Global proportions in `domains` order.
    pub proportions: Vec<f64>,
    #[serde(default)]
    pub g1_domain: Option<String>,
    pub g2_stack: Vec<String>,
}

impl RuleConfig {
    pub fn topology(&self) -> Topology {
        Topology {
            domains: self.domains.clone(),
            g1_domain: self.g1_domain.clone(),
            g2_stack: self.g2_stack.clone(),
        }
    }

    pub fn build(&self) -> Result<TruncationRule> {
        TruncationRule::from_proportions(&self.topology(), &self.proportions).map_err(config_err)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Variograms {
    pub g1: VariogramModel,
    pub g2: VariogramModel,
    /// Model for the RBIG factors of the grade prior.
    #[serde(default)]
    pub grade_factors: Option<VariogramModel>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GradeConfig {
    pub variables: Vec<String>,
    /// Observation error SD in RBIG factor units.
    #[serde(default = "default_factor_noise")]
    pub factor_noise_sd: f64,
    /// Domains with fewer grade observations in a period are skipped.
    #[serde(default = "default_min_obs")]
    pub min_domain_obs: usize,
    /// Second, univariate pass on observations above the extreme percentile.
    #[serde(default = "default_true")]
    pub tail_pass: bool,
}

fn default_factor_noise() -> f64 {
    0.1
}
fn default_min_obs() -> usize {
    5
}
fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PriorConfig {
    pub n_realizations: usize,
    /// Conditioning samples (observations CSV layout; periods ignored).
    pub data: Option<PathBuf>,
    pub max_data: usize,
    pub max_simulated: usize,
}

impl Default for PriorConfig {
    fn default() -> Self {
        PriorConfig {
            n_realizations: 50,
            data: None,
            max_data: 8,
            max_simulated: 24,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdSchedule {
    EveryPeriod,
    FinalPeriod,
    Off,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub neighbourhood_k: usize,
    pub n_assimilations: usize,
    pub localization_radius: f64,
    pub gibbs_iterations: usize,
    pub grf_obs_noise_sd: f64,
    pub extreme_percentile: f64,
    pub rbig_max_iterations: usize,
    pub threshold_search_budget: usize,
    pub rng_seed: u64,
    pub threshold_half_width: f64,
    pub score_weights: [f64; 2],
    pub threshold_schedule: ThresholdSchedule,
    /// Re-truncate every block with the final rule once all periods are done.
    pub final_retruncate: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            neighbourhood_k: 3,
            n_assimilations: 5,
            localization_radius: 50.0,
            gibbs_iterations: 200,
            grf_obs_noise_sd: 0.1,
            extreme_percentile: 0.95,
            rbig_max_iterations: crate::rbig::DEFAULT_MAX_ITERATIONS,
            threshold_search_budget: crate::threshold::DEFAULT_BUDGET,
            rng_seed: 0,
            threshold_half_width: crate::threshold::DEFAULT_HALF_WIDTH,
            score_weights: [0.5, 0.5],
            threshold_schedule: ThresholdSchedule::EveryPeriod,
            final_retruncate: true,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, why: &str| Err(Error::Config(format!("pipeline.{key}: {why}")));
        if self.n_assimilations < 1 {
            return bad("n_assimilations", "must be >= 1");
        }
        if !(self.localization_radius > 0.0) {
            return bad("localization_radius", "must be > 0");
        }
        if !(self.grf_obs_noise_sd > 0.0) {
            return bad("grf_obs_noise_sd", "must be > 0");
        }
        if !(self.extreme_percentile > 0.5 && self.extreme_percentile < 1.0) {
            return bad("extreme_percentile", "must lie in (0.5, 1)");
        }
        if self.gibbs_iterations < 1 {
            return bad("gibbs_iterations", "must be >= 1");
        }
        if self.rbig_max_iterations < 1 {
            return bad("rbig_max_iterations", "must be >= 1");
        }
        if self.threshold_search_budget < 1 {
            return bad("threshold_search_budget", "must be >= 1");
        }
        if !(self.threshold_half_width > 0.0) {
            return bad("threshold_half_width", "must be > 0");
        }
        self.weights()?;
        Ok(())
    }

    pub fn weights(&self) -> Result<ScoreWeights> {
        ScoreWeights::new(self.score_weights[0], self.score_weights[1])
            .map_err(|e| Error::Config(format!("pipeline.score_weights: {e}")))
    }
}

/// Per-domain grade moments, in `grades.variables` order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GradeTarget {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticConfig {
    pub sampling_fraction: f64,
    pub n_periods: usize,
    /// Fraction of blocks sampled as prior conditioning data.
    pub drill_fraction: f64,
    pub truth_variograms: TruthVariograms,
    /// Defaults to the prior proportions.
    #[serde(default)]
    pub truth_proportions: Option<Vec<f64>>,
    #[serde(default)]
    pub grade_targets: BTreeMap<String, GradeTarget>,
    /// Correlation of each grade with the shared latent field.
    #[serde(default = "default_latent")]
    pub latent_correlation: f64,
    #[serde(default)]
    pub seed: Option<u64>,
}

fn default_latent() -> f64 {
    0.7
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruthVariograms {
    pub g1: VariogramModel,
    pub g2: VariogramModel,
    pub grades: VariogramModel,
}

fn config_err(e: Error) -> Error {
    match e {
        Error::Config(_) => e,
        other => Error::Config(other.to_string()),
    }
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads `path`; relative data paths are resolved against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        if let (Some(data), Some(dir)) = (cfg.prior.data.as_mut(), path.parent()) {
            if data.is_relative() {
                *data = dir.join(&*data);
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.grid.validate().map_err(config_err)?;
        self.rule.build()?;
        for (key, v) in [("variograms.g1", &self.variograms.g1), ("variograms.g2", &self.variograms.g2)] {
            v.check_standard()
                .map_err(|e| Error::Config(format!("{key}: {e}")))?;
        }
        if let Some(v) = &self.variograms.grade_factors {
            v.check_standard()
                .map_err(|e| Error::Config(format!("variograms.grade_factors: {e}")))?;
        }
        if self.prior.n_realizations < 2 {
            return Err(Error::Config("prior.n_realizations: need at least 2".into()));
        }
        self.pipeline.validate()?;
        if let Some(g) = &self.grades {
            if g.variables.is_empty() {
                return Err(Error::Config("grades.variables: empty".into()));
            }
            if !(g.factor_noise_sd > 0.0) {
                return Err(Error::Config("grades.factor_noise_sd: must be > 0".into()));
            }
        }
        if let Some(s) = &self.synthetic {
            s.validate(self)?;
        }
        Ok(())
    }

    pub fn grade_variables(&self) -> Vec<String> {
        self.grades.as_ref().map_or_else(Vec::new, |g| g.variables.clone())
    }

    pub fn grade_factor_variogram(&self) -> Result<&VariogramModel> {
        self.variograms
            .grade_factors
            .as_ref()
            .ok_or_else(|| Error::Config("missing key variograms.grade_factors".into()))
    }
}

impl SyntheticConfig {
    fn validate(&self, cfg: &Config) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("synthetic.{m}")));
        if !(self.sampling_fraction > 0.0 && self.sampling_fraction <= 1.0) {
            return bad("sampling_fraction: must lie in (0, 1]".into());
        }
        if !(self.drill_fraction > 0.0 && self.drill_fraction <= 1.0) {
            return bad("drill_fraction: must lie in (0, 1]".into());
        }
        if self.n_periods < 1 {
            return bad("n_periods: must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.latent_correlation) {
            return bad("latent_correlation: must lie in [0, 1)".into());
        }
        let tv = &self.truth_variograms;
        if tv.g1 == cfg.variograms.g1 && tv.g2 == cfg.variograms.g2 {
            return bad("truth_variograms: must differ from the prior GRF variograms".into());
        }
        if let Some(p) = &self.truth_proportions {
            TruncationRule::from_proportions(&cfg.rule.topology(), p)
                .map_err(|e| Error::Config(format!("synthetic.truth_proportions: {e}")))?;
        }
        let nv = cfg.grade_variables().len();
        for d in &cfg.rule.domains {
            if nv == 0 {
                break;
            }
            let Some(t) = self.grade_targets.get(d) else {
                return bad(format!("grade_targets: missing domain {d}"));
            };
            if t.mean.len() != nv || t.sd.len() != nv {
                return bad(format!("grade_targets.{d}: expected {nv} means and SDs"));
            }
            if t.mean.iter().chain(&t.sd).any(|v| !(*v > 0.0)) {
                return bad(format!("grade_targets.{d}: means and SDs must be > 0"));
            }
        }
        if let Some(k) = self.grade_targets.keys().find(|k| !cfg.rule.domains.contains(k)) {
            return bad(format!("grade_targets: unknown domain {k}"));
        }
        Ok(())
    }

    pub fn truth_rule(&self, cfg: &Config) -> Result<TruncationRule> {
        let p = self.truth_proportions.as_ref().unwrap_or(&cfg.rule.proportions);
        TruncationRule::from_proportions(&cfg.rule.topology(), p).map_err(config_err)
    }
}

/// The bundled desk-scale example: a 100 x 80 section, five domains and
/// three grades.
pub const EXAMPLE_TOML: &str = include_str!("../data/synthetic.toml");
