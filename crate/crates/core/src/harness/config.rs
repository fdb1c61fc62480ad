//! Experiment specification: one self-describing TOML file per experiment,
//! with dotted-path `--set key=value` overrides.
//!
//! Relative data paths resolve against the config file's directory. A
//! relative `output_dir` resolves against `DNE_OUTPUT_ROOT` when that is set,
//! otherwise against the config directory. All component seeds derive from
//! the single mandatory `seed`.

use std::fs;
use std::path::{Path, PathBuf};

use crate::attacks::{AttackBudget, AttackKind};
use crate::error::{Error, Result};
use crate::models::{Arch, ClassifierConfig};
use crate::seeding;
use crate::smoothing::EnsembleConfig;
use crate::training::TrainConfig;

use super::synthetic::SyntheticSpec;

pub const OUTPUT_ROOT_ENV: &str = "DNE_OUTPUT_ROOT";

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct DataSpec {
    pub embeddings: PathBuf,
    pub synonyms: PathBuf,
    pub train: PathBuf,
    pub val: PathBuf,
    pub test: PathBuf,
    pub classes: usize,
    pub embed_dim: usize,
    pub max_len: usize,
    pub symmetrize_synonyms: bool,
}

impl Default for DataSpec {
    fn default() -> Self {
        DataSpec {
            embeddings: "data/embeddings.txt".into(),
            synonyms: "data/synonyms.tsv".into(),
            train: "data/train.tsv".into(),
            val: "data/val.tsv".into(),
            test: "data/test.tsv".into(),
            classes: 2,
            embed_dim: 16,
            max_len: 32,
            symmetrize_synonyms: false,
        }
    }
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct ModelSpec {
    pub arch: Arch,
    pub hidden: usize,
    pub kernel: usize,
    pub dropout_embed: f64,
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec {
            arch: Arch::Bow,
            hidden: 100,
            kernel: 3,
            dropout_embed: 0.3,
        }
    }
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct AttackSpec {
    pub max_substitution_ratio: f64,
    pub ga_population: usize,
    pub ga_generations: usize,
    /// Size of the uniformly sampled attack subset of the test split.
    pub examples: usize,
    pub kinds: Vec<AttackKind>,
    /// Attack the base classifier even for smoothed defenses.
    pub query_base_only: bool,
}

impl Default for AttackSpec {
    fn default() -> Self {
        AttackSpec {
            max_substitution_ratio: 0.25,
            ga_population: 20,
            ga_generations: 20,
            examples: 200,
            kinds: vec![AttackKind::Pwws, AttackKind::Ga],
            query_base_only: false,
        }
    }
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct SweepSpec {
    pub alphas: Vec<f64>,
    pub lambdas: Vec<f64>,
}

impl Default for SweepSpec {
    fn default() -> Self {
        SweepSpec {
            alphas: vec![0.1, 1.0],
            lambdas: vec![0.02, 0.1, 0.5],
        }
    }
}

fn default_output_dir() -> PathBuf {
    "runs/experiment".into()
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct ExperimentSpec {
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub data: DataSpec,
    #[serde(default)]
    pub model: ModelSpec,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub ensemble: EnsembleConfig,
    #[serde(default)]
    pub attack: AttackSpec,
    #[serde(default)]
    pub sweep: SweepSpec,
    #[serde(default)]
    pub synthetic: Option<SyntheticSpec>,
}

impl ExperimentSpec {
    /// Parses a config file and applies `--set` overrides, then resolves
    /// relative paths and derives all component seeds from `seed`.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut table: toml::Table = text
            .parse()
            .map_err(|e| Error::Config(format!("{}: {}", path.display(), e)))?;
        for entry in overrides {
            apply_override(&mut table, entry)?;
        }
        let mut spec: ExperimentSpec = toml::Value::Table(table)
            .try_into()
            .map_err(|e| Error::Config(format!("{}: {}", path.display(), e)))?;
        let base = path.parent().unwrap_or(Path::new("."));
        spec.resolve(base);
        Ok(spec)
    }

    /// Fills derived seeds and anchors relative paths at `base`.
    pub fn resolve(&mut self, base: &Path) {
        for p in [
            &mut self.data.embeddings,
            &mut self.data.synonyms,
            &mut self.data.train,
            &mut self.data.val,
            &mut self.data.test,
        ] {
            if p.is_relative() {
                *p = base.join(&p);
            }
        }
        if self.output_dir.is_relative() {
            let root = std::env::var_os(OUTPUT_ROOT_ENV)
                .map(PathBuf::from)
                .unwrap_or_else(|| base.to_path_buf());
            self.output_dir = root.join(&self.output_dir);
        }
        self.train.seed = seeding::derive(self.seed, "train");
        self.ensemble.seed = seeding::derive(self.seed, "ensemble");
        if let Some(s) = &mut self.synthetic {
            s.seed = seeding::derive(self.seed, "synthetic");
        }
    }

    pub fn classifier_config(&self) -> ClassifierConfig {
        ClassifierConfig {
            arch: self.model.arch,
            embed_dim: self.data.embed_dim,
            hidden: self.model.hidden,
            kernel: self.model.kernel,
            classes: self.data.classes,
            dropout_embed: self.model.dropout_embed,
            max_len: self.data.max_len,
        }
    }

    pub fn attack_budget(&self) -> AttackBudget {
        AttackBudget {
            max_substitution_ratio: self.attack.max_substitution_ratio,
            ga_population: self.attack.ga_population,
            ga_generations: self.attack.ga_generations,
            seed: seeding::derive(self.seed, "attack"),
        }
    }

    /// Errors unless every referenced data file exists.
    pub fn check_data_paths(&self) -> Result<()> {
        for p in [
            &self.data.embeddings,
            &self.data.synonyms,
            &self.data.train,
            &self.data.val,
            &self.data.test,
        ] {
            if !p.exists() {
                return Err(Error::Config(format!(
                    "data file {} does not exist",
                    p.display()
                )));
            }
        }
        Ok(())
    }
}

/// Applies one `key.path=value` override onto the raw TOML table. The value
/// is parsed as a TOML literal when possible, else taken as a string.
fn apply_override(table: &mut toml::Table, entry: &str) -> Result<()> {
    let (key, value) = entry
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {:?} is not key=value", entry)))?;
    let parsed: toml::Value = match format!("v = {}", value).parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap(),
        Err(_) => toml::Value::String(value.to_string()),
    };
    let parts: Vec<&str> = key.split('.').collect();
    let mut cur = table;
    for part in &parts[..parts.len() - 1] {
        cur = cur
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override {:?} crosses a non-table", key)))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), parsed);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_config(content: &str) -> (tempfile::TempDir, PathBuf) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("exp.toml");
        let mut f = fs::File::create(&path).unwrap();
        f.write_all(content.as_bytes()).unwrap();
        (dir, path)
    }

    #[test]
    fn seed_is_mandatory() {
        let (_d, path) = write_config("output_dir = \"out\"\n");
        assert!(ExperimentSpec::load(&path, &[]).is_err());
    }

    #[test]
    fn defaults_fill_in_and_seeds_derive() {
        let (_d, path) = write_config("seed = 7\n");
        let spec = ExperimentSpec::load(&path, &[]).unwrap();
        assert_eq!(spec.train.adv_steps, 3);
        assert_eq!(spec.train.adv_epsilon, 10.0);
        assert_eq!(spec.ensemble.k, 16);
        assert_eq!(spec.ensemble.r, 3);
        assert_eq!(spec.attack.ga_population, 20);
        assert_eq!(spec.train.seed, seeding::derive(7, "train"));
        assert_ne!(spec.train.seed, spec.ensemble.seed);
    }

    #[test]
    fn overrides_reach_nested_keys() {
        let (_d, path) = write_config("seed = 7\n[train]\nalpha = 0.1\n");
        let spec = ExperimentSpec::load(
            &path,
            &[
                "train.alpha=1.0".to_string(),
                "train.mode=\"orig\"".to_string(),
                "model.arch=\"cnn\"".to_string(),
                "attack.examples=5".to_string(),
            ],
        )
        .unwrap();
        assert_eq!(spec.train.alpha, 1.0);
        assert_eq!(spec.train.mode, crate::training::TrainMode::Orig);
        assert_eq!(spec.model.arch, Arch::Cnn);
        assert_eq!(spec.attack.examples, 5);
    }

    #[test]
    fn bare_string_override_works_without_quotes() {
        let (_d, path) = write_config("seed = 7\n");
        let spec = ExperimentSpec::load(&path, &["train.mode=ran".to_string()]).unwrap();
        assert_eq!(spec.train.mode, crate::training::TrainMode::Ran);
    }

    #[test]
    fn relative_paths_resolve_against_config_dir() {
        let (dir, path) = write_config("seed = 7\n[data]\ntrain = \"corpus/train.tsv\"\n");
        let spec = ExperimentSpec::load(&path, &[]).unwrap();
        assert_eq!(spec.data.train, dir.path().join("corpus/train.tsv"));
    }

    #[test]
    fn missing_data_paths_are_reported() {
        let (_d, path) = write_config("seed = 7\n");
        let spec = ExperimentSpec::load(&path, &[]).unwrap();
        assert!(spec.check_data_paths().is_err());
    }
}
