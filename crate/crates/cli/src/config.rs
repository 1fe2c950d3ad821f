//! Pipeline configuration: one TOML file, relative paths resolved against the
//! file's directory, then overridden by command-line flags.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use truthprobe::probe::TrainConfig;

use crate::error::CliError;

/// Placeholder replaced by the layer number in per-layer path patterns.
pub const LAYER_PLACEHOLDER: &str = "{layer}";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Dataset recipe (topics, tables, templates) for `generate`.
    pub recipe: Option<PathBuf>,
    /// Output directory of `generate`.
    pub datasets: Option<PathBuf>,
    /// Statement index (dataset JSON lines) every matrix is bound to.
    pub index: Option<PathBuf>,
    /// Per-layer activation files, with `{layer}` in the name.
    pub activations: Option<String>,
    pub manifest: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub few_shot: Option<PathBuf>,
    /// Held-aside evaluation set (e.g. model-generated statements).
    pub generated_index: Option<PathBuf>,
    pub generated_activations: Option<String>,
    pub generated_embeddings: Option<PathBuf>,
    pub generated_few_shot: Option<PathBuf>,
    pub reports: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    /// Name of the model the activations came from, echoed in reports.
    pub name: String,
    /// Number of decoder blocks; enables "last-layer"/"middle-layer" labels.
    pub depth: Option<u32>,
    pub layers: Vec<u32>,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            name: "unknown".into(),
            depth: None,
            layers: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    /// Seeds for leave-one-topic-out runs (one training run per seed).
    pub seeds: Vec<u64>,
    /// Seeds for the generated-set protocols.
    pub generated_seeds: Vec<u64>,
    /// Restrict leave-one-topic-out to these topics; empty means all.
    pub held_out: Vec<String>,
    /// Seed of the validation/test split for threshold calibration.
    pub split_seed: u64,
    /// Few-shot variants to score when a few-shot file is configured.
    pub shots: Vec<u32>,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            seeds: vec![0, 1, 2],
            generated_seeds: (0..14).collect(),
            held_out: Vec::new(),
            split_seed: 0,
            shots: vec![3, 5],
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub paths: Paths,
    pub model: ModelSection,
    pub train: TrainConfig,
    pub eval: EvalSection,
    /// File the configuration was read from, if any.
    #[serde(skip)]
    pub source: Option<PathBuf>,
}

/// Flag values that override the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub layers: Vec<u32>,
    pub held_out: Option<String>,
    pub seeds: Option<Vec<u64>>,
    pub out: Option<PathBuf>,
}

fn rebase(base: &Path, p: &mut Option<PathBuf>) {
    if let Some(path) = p {
        if path.is_relative() {
            *path = base.join(&*path);
        }
    }
}

fn rebase_pattern(base: &Path, p: &mut Option<String>) {
    if let Some(pattern) = p {
        if Path::new(pattern.as_str()).is_relative() {
            *pattern = base.join(pattern.as_str()).to_string_lossy().into_owned();
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str, base: &Path) -> Result<Self, CliError> {
        let mut cfg: PipelineConfig =
            toml::from_str(text).map_err(|e| CliError::Config(format!("invalid configuration: {e}")))?;
        let p = &mut cfg.paths;
        for path in [
            &mut p.recipe,
            &mut p.datasets,
            &mut p.index,
            &mut p.manifest,
            &mut p.embeddings,
            &mut p.few_shot,
            &mut p.generated_index,
            &mut p.generated_embeddings,
            &mut p.generated_few_shot,
            &mut p.reports,
        ] {
            rebase(base, path);
        }
        rebase_pattern(base, &mut p.activations);
        rebase_pattern(base, &mut p.generated_activations);
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        let mut cfg = Self::from_toml(&text, base)?;
        cfg.source = Some(path.to_path_buf());
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if !o.layers.is_empty() {
            self.model.layers = o.layers.clone();
        }
        if let Some(t) = &o.held_out {
            self.eval.held_out = vec![t.clone()];
        }
        if let Some(s) = &o.seeds {
            self.eval.seeds = s.clone();
            self.eval.generated_seeds = s.clone();
        }
        if let Some(out) = &o.out {
            self.paths.reports = Some(out.clone());
            self.paths.datasets = Some(out.clone());
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.train
            .validate()
            .map_err(|e| CliError::Config(format!("[train]: {e}")))?;
        if self.eval.seeds.is_empty() || self.eval.generated_seeds.is_empty() {
            return Err(CliError::Config("seed lists must not be empty".into()));
        }
        for pattern in [&self.paths.activations, &self.paths.generated_activations]
            .into_iter()
            .flatten()
        {
            if !pattern.contains(LAYER_PLACEHOLDER) {
                return Err(CliError::Config(format!(
                    "activation path {pattern:?} must contain {LAYER_PLACEHOLDER}"
                )));
            }
        }
        Ok(())
    }

    pub fn require<'a, T>(&self, value: &'a Option<T>, key: &str) -> Result<&'a T, CliError> {
        value
            .as_ref()
            .ok_or_else(|| CliError::Config(format!("paths.{key} is not set")))
    }
}

pub fn layer_path(pattern: &str, layer: u32) -> PathBuf {
    PathBuf::from(pattern.replace(LAYER_PLACEHOLDER, &layer.to_string()))
}

/// Parses `--seeds 0,1,2`.
pub fn parse_seeds(text: &str) -> Result<Vec<u64>, String> {
    let seeds = text
        .split(',')
        .map(|s| s.trim())
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<u64>().map_err(|e| format!("bad seed {s:?}: {e}")))
        .collect::<Result<Vec<_>, _>>()?;
    if seeds.is_empty() {
        return Err("no seeds given".into());
    }
    Ok(seeds)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_paths_resolve_against_config_dir() {
        let cfg = PipelineConfig::from_toml(
            r#"
            [paths]
            index = "store/statements.jsonl"
            activations = "store/layer-{layer}.bin"
            reports = "/abs/reports"
            [model]
            layers = [32, 16]
            "#,
            Path::new("/work"),
        )
        .unwrap();
        assert_eq!(cfg.paths.index.unwrap(), PathBuf::from("/work/store/statements.jsonl"));
        assert_eq!(cfg.paths.reports.unwrap(), PathBuf::from("/abs/reports"));
        assert_eq!(
            layer_path(cfg.paths.activations.as_deref().unwrap(), 16),
            PathBuf::from("/work/store/layer-16.bin")
        );
        assert_eq!(cfg.eval.seeds, vec![0, 1, 2]);
        assert_eq!(cfg.eval.generated_seeds.len(), 14);
        assert_eq!(cfg.train, TrainConfig::default());
    }

    #[test]
    fn flags_override_file() {
        let mut cfg = PipelineConfig::default();
        cfg.apply(&Overrides {
            layers: vec![20],
            held_out: Some("cities".into()),
            seeds: Some(vec![7]),
            out: Some("o".into()),
        });
        assert_eq!(cfg.model.layers, vec![20]);
        assert_eq!(cfg.eval.held_out, vec!["cities".to_string()]);
        assert_eq!(cfg.eval.seeds, vec![7]);
        assert_eq!(cfg.eval.generated_seeds, vec![7]);
        assert_eq!(cfg.paths.reports, Some(PathBuf::from("o")));
    }

    #[test]
    fn rejects_unknown_keys_and_bad_patterns() {
        assert!(PipelineConfig::from_toml("[paths]\nindx = \"x\"", Path::new(".")).is_err());
        let cfg = PipelineConfig::from_toml("[paths]\nactivations = \"a.bin\"", Path::new(".")).unwrap();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn seed_lists() {
        assert_eq!(parse_seeds("0, 1,2").unwrap(), vec![0, 1, 2]);
        assert!(parse_seeds("").is_err());
        assert!(parse_seeds("a").is_err());
    }
}
