//! TOML run configuration. Every key is optional; command-line flags win
//! over the file.

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::Deserialize;

use droidlens::corpus::LabelRule;
use droidlens::features::{parse_name_list, ExtractionBudget, ExtractionContext, Watchlist};
use droidlens::forest::TrainConfig;
use droidlens::obfuscation::{Intensity, ToolProfile};
use droidlens::selection::{SelectionConfig, DEFAULT_CAP};

use crate::CliError;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: Option<u64>,
    pub sequential: bool,
    pub labels: LabelRule,
    pub gen: GenConfig,
    pub obfuscate: ObfuscateConfig,
    pub extract: ExtractConfig,
    pub vocab: VocabConfig,
    pub split: SplitConfig,
    pub metrics: MetricsConfig,
    pub train: TrainConfig,
    pub select: SelectConfig,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenConfig {
    pub n_apps: usize,
    pub recipe: String,
    pub dataset: String,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            n_apps: 50,
            recipe: "permissions+api;strings".into(),
            dataset: "synthetic".into(),
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ObfuscateConfig {
    pub techniques: Option<Vec<String>>,
    pub tools: Option<Vec<String>>,
    /// Extra profiles, selectable by name next to the built-in ones.
    pub profiles: Vec<ToolProfile>,
    pub intensity: Intensity,
    pub failure_rate: f64,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtractConfig {
    pub permissions: Option<PathBuf>,
    pub watchlist: Option<PathBuf>,
    pub adhoc_time_limit_secs: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VocabConfig {
    pub min_string_prevalence: f64,
}

impl Default for VocabConfig {
    fn default() -> Self {
        Self {
            min_string_prevalence: 0.01,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    /// Share of clean labeled apps held out for evaluation.
    pub eval_fraction: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self { eval_fraction: 0.5 }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    pub top_k: usize,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self { top_k: 15 }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectConfig {
    pub threshold: f64,
    pub insensitivity_threshold: Option<f64>,
    pub per_family_cap: usize,
}

impl Default for SelectConfig {
    fn default() -> Self {
        Self {
            threshold: 0.85,
            insensitivity_threshold: None,
            per_family_cap: DEFAULT_CAP,
        }
    }
}

impl Config {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).map_err(|_| CliError::MissingInput(path.to_owned()))?;
        let cfg: Config = toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        cfg.check()?;
        Ok(cfg)
    }

    fn check(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.labels.malware_min_vtd <= self.labels.goodware_vtd {
            return bad("labels.malware_min_vtd must exceed labels.goodware_vtd".into());
        }
        if !(0.0..=1.0).contains(&self.obfuscate.failure_rate) {
            return bad(format!("obfuscate.failure_rate {} outside [0, 1]", self.obfuscate.failure_rate));
        }
        if !(0.0..=1.0).contains(&self.split.eval_fraction) {
            return bad(format!("split.eval_fraction {} outside [0, 1]", self.split.eval_fraction));
        }
        if !(0.0..=1.0).contains(&self.vocab.min_string_prevalence) {
            return bad("vocab.min_string_prevalence outside [0, 1]".into());
        }
        self.obfuscate
            .intensity
            .validate()
            .map_err(|e| CliError::Config(format!("obfuscate.intensity: {e}")))?;
        Ok(())
    }

    pub fn profile(&self, name: &str) -> Option<ToolProfile> {
        self.obfuscate
            .profiles
            .iter()
            .find(|p| p.name == name)
            .cloned()
            .or_else(|| ToolProfile::builtin(name))
    }

    pub fn extraction_context(&self) -> Result<ExtractionContext, CliError> {
        let mut ctx = ExtractionContext::default();
        if let Some(p) = &self.extract.permissions {
            ctx.official_permissions = parse_name_list(&read_text(p)?);
        }
        if let Some(p) = &self.extract.watchlist {
            ctx.watchlist = Watchlist::parse(&read_text(p)?);
        }
        if let Some(s) = self.extract.adhoc_time_limit_secs {
            if !(s > 0.0 && s.is_finite()) {
                return Err(CliError::Config("extract.adhoc_time_limit_secs must be positive".into()));
            }
            ctx.budget = ExtractionBudget {
                adhoc_time_limit: Duration::from_secs_f64(s),
            };
        }
        Ok(ctx)
    }

    pub fn selection(&self, threshold: Option<f64>, seed: u64) -> SelectionConfig {
        SelectionConfig {
            threshold: threshold.unwrap_or(self.select.threshold),
            insensitivity_threshold: self.select.insensitivity_threshold,
            per_family_cap: self.select.per_family_cap,
            train: TrainConfig {
                seed,
                ..self.train.clone()
            },
        }
    }
}

fn read_text(p: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(p).map_err(|_| CliError::MissingInput(p.to_owned()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_documented_keys() {
        let cfg: Config = toml::from_str(
            r#"
            seed = 3
            [gen]
            n_apps = 10
            [obfuscate]
            tools = ["tool-b"]
            failure_rate = 0.1
            [obfuscate.intensity]
            chain_length = 2
            [train]
            n_trees = 20
            max_features = "log2"
            [select]
            threshold = 0.9
            "#,
        )
        .unwrap();
        cfg.check().unwrap();
        assert_eq!(cfg.seed, Some(3));
        assert_eq!(cfg.obfuscate.intensity.chain_length, 2);
        assert_eq!(cfg.train.n_trees, 20);
        assert_eq!(cfg.selection(None, 1).threshold, 0.9);
        assert_eq!(cfg.split.eval_fraction, 0.5);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_ranges() {
        assert!(toml::from_str::<Config>("sed = 1").is_err());
        let cfg: Config = toml::from_str("[obfuscate]\nfailure_rate = 2.0").unwrap();
        assert!(matches!(cfg.check(), Err(CliError::Config(_))));
    }
}
