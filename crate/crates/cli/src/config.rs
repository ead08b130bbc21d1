//! Run configuration: one sectioned TOML file whose defaults are the
//! published pipeline's hyperparameters. Unknown keys are errors.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use wordaad::augment::{augmented_origins, AugmentConfig};
use wordaad::baseline::{BaselineConfig, EnvelopeSynthConfig};
use wordaad::dsp::PreprocConfig;
use wordaad::eegnet::EegNetConfig;
use wordaad::eval::{ExperimentConfig, Scheme, TrainConfig, Variant};
use wordaad::synth::{plan_counts, SynthConfig};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSection {
    pub scheme: Scheme,
    pub variants: Vec<Variant>,
    pub folds: Option<Vec<usize>>,
    pub permutation_draws: usize,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        let e = ExperimentConfig::default();
        Self { scheme: e.scheme, variants: e.variants, folds: e.folds, permutation_draws: e.permutation_draws }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Master seed; `--seed` overrides it.
    pub seed: Option<u64>,
    pub synth: SynthConfig,
    pub preprocess: PreprocConfig,
    pub augment: AugmentConfig,
    pub model: EegNetConfig,
    pub train: TrainConfig,
    pub experiment: ExperimentSection,
    pub baseline: BaselineConfig,
    pub envelope: EnvelopeSynthConfig,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Config(format!("cannot read {}: {e}", p.display())))?;
                Self::parse(&text)
            }
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |e: wordaad::Error| CliError::Config(e.to_string());
        plan_counts(&self.synth, 0).map_err(bad)?;
        augmented_origins(&self.augment).map_err(bad)?;
        self.model.validate().map_err(bad)?;
        self.train.validate().map_err(bad)?;
        if self.experiment.variants.is_empty() {
            return Err(CliError::Config("experiment.variants is empty".into()));
        }
        if self.experiment.permutation_draws == 0 {
            return Err(CliError::Config("experiment.permutation_draws must be positive".into()));
        }
        if self.baseline.lags == 0 || self.baseline.lambdas.is_empty() {
            return Err(CliError::Config("baseline needs lags and a ridge grid".into()));
        }
        Ok(())
    }

    /// Seed from the command line, else the config; one must be given.
    pub fn seed(&self, flag: Option<u64>) -> Result<u64, CliError> {
        flag.or(self.seed).ok_or_else(|| CliError::Config("no master seed: pass --seed or set `seed`".into()))
    }

    pub fn experiment(&self) -> ExperimentConfig {
        ExperimentConfig {
            scheme: self.experiment.scheme,
            variants: self.experiment.variants.clone(),
            folds: self.experiment.folds.clone(),
            train: self.train.clone(),
            model: self.model.clone(),
            augment: self.augment.clone(),
            baseline: self.baseline.clone(),
            permutation_draws: self.experiment.permutation_draws,
        }
    }

    /// Canonical TOML of the effective configuration.
    pub fn canonical(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical().as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_the_default() {
        assert_eq!(RunConfig::parse("").unwrap(), RunConfig::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(matches!(RunConfig::parse("sede = 3"), Err(CliError::Config(_))));
        assert!(matches!(RunConfig::parse("[train]\npasses = 3\nlearning_rate = 0.1"), Err(CliError::Config(_))));
        assert!(matches!(RunConfig::parse("[nonsense]\nx = 1"), Err(CliError::Config(_))));
    }

    #[test]
    fn sections_override_defaults() {
        let cfg = RunConfig::parse(
            "seed = 9\n[synth]\nn_subjects = 12\n[train]\npasses = 2\n[experiment]\nscheme = \"loso\"\nvariants = [\"augmented-trained\"]\n",
        )
        .unwrap();
        assert_eq!(cfg.seed(None).unwrap(), 9);
        assert_eq!(cfg.seed(Some(4)).unwrap(), 4);
        assert_eq!(cfg.synth.n_subjects, 12);
        assert_eq!(cfg.train.passes, 2);
        assert_eq!(cfg.train.batch_size, 64);
        assert_eq!(cfg.experiment.scheme, Scheme::Loso);
    }

    #[test]
    fn invalid_values_are_config_errors() {
        assert!(matches!(RunConfig::parse("[train]\npasses = 0"), Err(CliError::Config(_))));
        assert!(matches!(RunConfig::parse("[synth]\nn_subjects = 30"), Err(CliError::Config(_))));
        assert!(matches!(RunConfig::parse("[augment]\ngains_db = [1.0]"), Err(CliError::Config(_))));
    }

    #[test]
    fn canonical_form_round_trips() {
        let cfg = RunConfig { seed: Some(3), ..Default::default() };
        assert_eq!(RunConfig::parse(&cfg.canonical()).unwrap(), cfg);
        assert_eq!(cfg.hash(), RunConfig::parse(&cfg.canonical()).unwrap().hash());
    }

    #[test]
    fn missing_seed_is_a_config_error() {
        assert!(matches!(RunConfig::default().seed(None), Err(CliError::Config(_))));
    }
}
