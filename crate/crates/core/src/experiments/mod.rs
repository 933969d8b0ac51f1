//! Task 1 (label-arity sweep) and Task 2 (local / non-local transfer)
//! experiment orchestration, aggregation and report emission.

mod report;
mod runner;

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use report::{aggregate, aggregate_values, emit_report, load_table, render_csv, render_svg, Cell, Format, ResultTable};
pub use runner::{rebuild_table, run_experiment, run_task1, run_task2, ExperimentOutcome, RunKey, RunSummary};

use crate::corpus::VerdictMapping;
use crate::error::{Error, Result};
use crate::models::{ModelFamily, ModelSettings};
use crate::sampler::CombinationMode;
use crate::trainer::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Task {
    Task1,
    Task2,
}

impl Task {
    pub fn number(self) -> u8 {
        match self {
            Self::Task1 => 1,
            Self::Task2 => 2,
        }
    }
}

/// CV re-splits every repetition; TEST keeps one split and re-trains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Phase {
    Cv,
    Test,
}

impl Phase {
    pub fn label(self) -> &'static str {
        match self {
            Self::Cv => "CV",
            Self::Test => "Test",
        }
    }
}

/// A table column: a label arity (Task 1) or a training combination (Task 2).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Column {
    Arity(usize),
    Mode(CombinationMode),
}

impl Column {
    pub fn label(self) -> String {
        match self {
            Self::Arity(2) => "Binary".into(),
            Self::Arity(k) => format!("Multi-{k}"),
            Self::Mode(m) => m.display_name().into(),
        }
    }

    fn slug(self) -> String {
        self.label().to_ascii_lowercase()
    }
}

impl fmt::Display for Column {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

fn default_families() -> Vec<ModelFamily> {
    ModelFamily::ALL.to_vec()
}
fn default_repetitions() -> usize {
    5
}
fn default_phases() -> Vec<Phase> {
    vec![Phase::Cv, Phase::Test]
}
fn default_output_dir() -> PathBuf {
    PathBuf::from("results")
}
fn default_train_fraction() -> f64 {
    0.8
}
fn default_local_train_fraction() -> f64 {
    // floor(719 * 0.8985) = 646 local training samples, leaving 73 for test.
    0.8985
}
fn default_validation_fraction() -> f64 {
    0.1
}
fn default_true() -> bool {
    true
}
fn default_jobs() -> usize {
    1
}

/// Experiment description, read from a JSON file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub task: Task,
    /// Defaults to `[2, 3, 6]` for Task 1; Task 2 is always binary.
    #[serde(default)]
    pub arities: Vec<usize>,
    #[serde(default = "default_families")]
    pub families: Vec<ModelFamily>,
    #[serde(default = "default_repetitions")]
    pub repetitions: usize,
    #[serde(default = "default_phases")]
    pub phases: Vec<Phase>,
    #[serde(default)]
    pub base_seed: u64,
    pub fakeddit_manifest: PathBuf,
    /// A tab-separated manifest or a newline-delimited JSON export
    /// (`.ndjson` / `.jsonl`).
    #[serde(default)]
    pub real411_manifest: Option<PathBuf>,
    #[serde(default)]
    pub verdict_mapping: VerdictMapping,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
    #[serde(default = "default_local_train_fraction")]
    pub local_train_fraction: f64,
    #[serde(default = "default_validation_fraction")]
    pub validation_fraction: f64,
    #[serde(default = "default_true")]
    pub stratified: bool,
    #[serde(default)]
    pub models: ModelSettings,
    /// Per-family overrides layered over that family's training defaults.
    #[serde(default)]
    pub training: BTreeMap<ModelFamily, serde_json::Value>,
    #[serde(default = "default_jobs")]
    pub jobs: usize,
    #[serde(default = "default_true")]
    pub save_checkpoints: bool,
}

impl ExperimentSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        let mut spec: Self =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("experiment spec: {e}")))?;
        if spec.arities.is_empty() {
            spec.arities = match spec.task {
                Task::Task1 => vec![2, 3, 6],
                Task::Task2 => vec![2],
            };
        }
        spec.validate()?;
        Ok(spec)
    }

    /// Reads a spec file; relative paths inside it resolve against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut spec = Self::from_json(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        spec.resolve_paths(base);
        Ok(spec)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.fakeddit_manifest);
        if let Some(p) = self.real411_manifest.as_mut() {
            fix(p);
        }
        fix(&mut self.output_dir);
        fix(&mut self.models.weights_dir);
        if let Some(p) = self.models.warm_start.text.as_mut() {
            fix(p);
        }
        if let Some(p) = self.models.warm_start.image.as_mut() {
            fix(p);
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.repetitions == 0 {
            return bad("repetitions must be at least 1".into());
        }
        if self.families.is_empty() {
            return bad("at least one model family is required".into());
        }
        if self.phases.is_empty() {
            return bad("at least one phase is required".into());
        }
        if let Some(a) = self.arities.iter().find(|a| ![2, 3, 6].contains(*a)) {
            return bad(format!("unsupported arity {a}; expected 2, 3 or 6"));
        }
        if self.task == Task::Task2 {
            if self.arities != [2] {
                return bad("Task 2 is binary; arities must be [2]".into());
            }
            if self.real411_manifest.is_none() {
                return bad("Task 2 requires real411_manifest".into());
            }
        }
        for (name, f) in [
            ("train_fraction", self.train_fraction),
            ("local_train_fraction", self.local_train_fraction),
        ] {
            if !(f > 0.0 && f < 1.0) {
                return bad(format!("{name} must lie strictly in (0, 1), got {f}"));
            }
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction <= 0.5) {
            return bad(format!(
                "validation_fraction must lie in (0, 0.5], got {}",
                self.validation_fraction
            ));
        }
        for family in &self.families {
            self.train_config(*family)?;
        }
        Ok(())
    }

    /// Training configuration for `family`: family defaults, the spec's
    /// validation fraction, then any overrides.
    pub fn train_config(&self, family: ModelFamily) -> Result<TrainConfig> {
        let mut config = TrainConfig::for_family(family);
        config.validation_fraction = self.validation_fraction;
        if let Some(overrides) = self.training.get(&family) {
            let serde_json::Value::Object(over) = overrides else {
                return Err(Error::Config(format!("training overrides for {family} must be an object")));
            };
            let mut merged = serde_json::to_value(&config)?;
            if let serde_json::Value::Object(base) = &mut merged {
                for (k, v) in over {
                    base.insert(k.clone(), v.clone());
                }
            }
            config = serde_json::from_value(merged)
                .map_err(|e| Error::Config(format!("training overrides for {family}: {e}")))?;
        }
        config.validate()?;
        Ok(config)
    }

    pub fn columns(&self) -> Vec<Column> {
        match self.task {
            Task::Task1 => self.arities.iter().map(|&a| Column::Arity(a)).collect(),
            Task::Task2 => CombinationMode::ALL.iter().map(|&m| Column::Mode(m)).collect(),
        }
    }

    /// Content hash naming the results directory. Settings that cannot
    /// change results (output location, parallelism) are left out.
    pub fn hash(&self) -> String {
        let mut value = serde_json::to_value(self).expect("spec serializes");
        if let serde_json::Value::Object(map) = &mut value {
            map.remove("output_dir");
            map.remove("jobs");
        }
        let digest = Sha256::digest(value.to_string().as_bytes());
        hex::encode(digest)[..16].to_string()
    }

    pub fn results_dir(&self) -> PathBuf {
        self.output_dir.join(self.hash())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(json: &str) -> Result<ExperimentSpec> {
        ExperimentSpec::from_json(json)
    }

    #[test]
    fn defaults_follow_task() {
        let s = spec(r#"{"task": "TASK1", "fakeddit_manifest": "fd.tsv"}"#).unwrap();
        assert_eq!(s.arities, vec![2, 3, 6]);
        assert_eq!(s.repetitions, 5);
        assert_eq!(s.families.len(), 5);
        assert_eq!(s.columns().len(), 3);
        let s = spec(r#"{"task": "TASK2", "fakeddit_manifest": "fd.tsv", "real411_manifest": "r.ndjson"}"#).unwrap();
        assert_eq!(s.arities, vec![2]);
        assert_eq!(s.columns().iter().map(|c| c.label()).collect::<Vec<_>>(), ["Non-Local", "Mixed", "Local"]);
    }

    #[test]
    fn invalid_specs_are_config_errors() {
        for bad in [
            r#"{"task": "TASK1", "fakeddit_manifest": "f", "families": ["SVM"]}"#,
            r#"{"task": "TASK2", "fakeddit_manifest": "f", "real411_manifest": "r", "arities": [3]}"#,
            r#"{"task": "TASK2", "fakeddit_manifest": "f"}"#,
            r#"{"task": "TASK1", "fakeddit_manifest": "f", "repetitions": 0}"#,
            r#"{"task": "TASK1", "fakeddit_manifest": "f", "colour": "red"}"#,
            r#"{"task": "TASK1", "fakeddit_manifest": "f", "training": {"MMIC": {"learning_rate": -1}}}"#,
        ] {
            assert!(matches!(spec(bad), Err(Error::Config(_))), "{bad}");
        }
    }

    #[test]
    fn overrides_layer_over_family_defaults() {
        let s = spec(r#"{"task": "TASK1", "fakeddit_manifest": "f", "training": {"MMIC": {"batch_size": 4}}}"#).unwrap();
        let c = s.train_config(ModelFamily::Mmic).unwrap();
        assert_eq!((c.batch_size, c.learning_rate), (4, 5e-6));
        assert_eq!(s.train_config(ModelFamily::ImageOnly).unwrap().learning_rate, 1e-3);
    }

    #[test]
    fn hash_ignores_output_location() {
        let a = spec(r#"{"task": "TASK1", "fakeddit_manifest": "f", "output_dir": "a", "jobs": 3}"#).unwrap();
        let b = spec(r#"{"task": "TASK1", "fakeddit_manifest": "f", "output_dir": "b"}"#).unwrap();
        let c = spec(r#"{"task": "TASK1", "fakeddit_manifest": "f", "base_seed": 1}"#).unwrap();
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.hash(), c.hash());
    }

    #[test]
    fn shipped_configs_parse() {
        for text in [
            include_str!("../../../../configs/task1.json"),
            include_str!("../../../../configs/task2.json"),
            include_str!("../../../../configs/cpu_smoke.json"),
        ] {
            spec(text).unwrap();
        }
    }
}
