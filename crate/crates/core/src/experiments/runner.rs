use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::report::{emit_report, Format, ResultTable};
use super::{Column, ExperimentSpec, Phase, Task};
use crate::corpus::{
    binarize_labels, filter_real411, load_manifest, load_real411_export, DatasetView, RowError, Source,
};
use crate::error::{Error, Result};
use crate::metrics::MetricReport;
use crate::models::ModelFamily;
use crate::sampler::{build_combination, carve_validation, split_holdout, write_split_assignment, SplitSpec};
use crate::trainer::{evaluate_model, train};

/// Identity of one training-and-evaluation run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RunKey {
    pub phase: Phase,
    pub column: Column,
    pub family: ModelFamily,
    pub repetition: usize,
}

impl RunKey {
    pub fn dir_name(&self) -> String {
        format!(
            "{}-{}-{}-rep{}",
            self.phase.label().to_ascii_lowercase(),
            self.column.slug(),
            self.family.tag(),
            self.repetition
        )
    }
}

/// Outcome of one run, as stored in `runs/<name>/summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub key: RunKey,
    pub split_seed: u64,
    pub train_seed: u64,
    pub train_size: usize,
    pub validation_size: usize,
    pub test_size: usize,
    pub retained_epoch: Option<usize>,
    pub report: Option<MetricReport>,
    pub error: Option<String>,
}

#[derive(Debug)]
pub struct ExperimentOutcome {
    pub table: ResultTable,
    pub results_dir: PathBuf,
    pub files: Vec<PathBuf>,
}

struct Corpora {
    fakeddit: DatasetView,
    real411: Option<DatasetView>,
}

fn log_row_errors(path: &Path, errors: &[RowError]) {
    for e in errors.iter().take(20) {
        tracing::warn!(file = %path.display(), line = e.line, id = ?e.id, "{}", e.message);
    }
    if errors.len() > 20 {
        tracing::warn!(file = %path.display(), "{} further row errors", errors.len() - 20);
    }
}

fn load_corpora(spec: &ExperimentSpec) -> Result<Corpora> {
    let loaded = load_manifest(&spec.fakeddit_manifest, Source::Fakeddit)?;
    log_row_errors(&spec.fakeddit_manifest, &loaded.errors);
    let fakeddit = loaded.view;
    let real411 = match &spec.real411_manifest {
        Some(path) => {
            let is_export = matches!(
                path.extension().and_then(|e| e.to_str()),
                Some("ndjson" | "jsonl")
            );
            let loaded = if is_export {
                load_real411_export(path, spec.verdict_mapping)?
            } else {
                load_manifest(path, Source::Real411)?
            };
            log_row_errors(path, &loaded.errors);
            let filtered = filter_real411(&loaded.view)?;
            log_row_errors(path, &filtered.rejected);
            Some(filtered.view)
        }
        None => None,
    };
    Ok(Corpora { fakeddit, real411 })
}

fn binary(view: &DatasetView) -> Result<DatasetView> {
    binarize_labels(view).map_err(|errors| {
        Error::Validation(format!(
            "{} samples lack a usable binary label, first: {}",
            errors.len(),
            errors[0].message
        ))
    })
}

/// Train and test views for one run, before validation carving.
fn run_views(spec: &ExperimentSpec, corpora: &Corpora, key: &RunKey, split_seed: u64) -> Result<(DatasetView, DatasetView)> {
    match key.column {
        Column::Arity(arity) => {
            let view = if arity == 2 {
                binary(&corpora.fakeddit)?
            } else {
                corpora.fakeddit.with_arity(arity)?
            };
            split_holdout(&view, &SplitSpec::new(spec.train_fraction, split_seed, spec.stratified)?)
        }
        Column::Mode(mode) => {
            let real411 = corpora
                .real411
                .as_ref()
                .ok_or_else(|| Error::Config("Task 2 requires a Real411 manifest".into()))?;
            let real411 = binary(real411)?;
            let (local_train, local_test) = split_holdout(
                &real411,
                &SplitSpec::new(spec.local_train_fraction, split_seed, spec.stratified)?,
            )?;
            // Every Fakeddit sample is available for training in Task 2.
            let non_local = binary(&corpora.fakeddit)?.with_split(crate::corpus::SplitTag::Train);
            Ok((build_combination(&non_local, &local_train, mode)?, local_test))
        }
    }
}

fn seeds(spec: &ExperimentSpec, key: &RunKey) -> (u64, u64) {
    let rep = key.repetition as u64;
    let train_seed = spec.base_seed.wrapping_add(rep);
    let split_seed = match key.phase {
        Phase::Cv => train_seed,
        Phase::Test => spec.base_seed,
    };
    (split_seed, train_seed)
}

fn execute(spec: &ExperimentSpec, corpora: &Corpora, key: RunKey, runs_dir: &Path) -> RunSummary {
    let (split_seed, train_seed) = seeds(spec, &key);
    let mut summary = RunSummary {
        key,
        split_seed,
        train_seed,
        train_size: 0,
        validation_size: 0,
        test_size: 0,
        retained_epoch: None,
        report: None,
        error: None,
    };
    let dir = runs_dir.join(key.dir_name());
    let result = (|| -> Result<()> {
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let (train_view, test_view) = run_views(spec, corpora, &key, split_seed)?;
        let mut config = spec.train_config(key.family)?;
        config.seed = train_seed;
        let (fit, val) = carve_validation(&train_view, config.validation_fraction, train_seed)?;
        summary.train_size = fit.len();
        summary.validation_size = val.len();
        summary.test_size = test_view.len();
        write_split_assignment(&dir.join("split.json"), &[&fit, &val, &test_view])?;
        tracing::info!(run = %key.dir_name(), train = fit.len(), val = val.len(), test = test_view.len(), "run started");
        let (model, trace) = train(key.family, &fit, &val, &config, &spec.models)?;
        trace.save(&dir.join("trace.json"))?;
        summary.retained_epoch = Some(trace.retained_epoch);
        if spec.save_checkpoints {
            model.save(&dir.join("checkpoint"))?;
        }
        let evaluation = evaluate_model(&model, &test_view, config.batch_size)?;
        let report = evaluation.report(test_view.arity())?;
        let path = dir.join("report.json");
        std::fs::write(&path, serde_json::to_string_pretty(&report)?).map_err(|e| Error::io(&path, e))?;
        summary.report = Some(report);
        Ok(())
    })();
    if let Err(e) = result {
        tracing::warn!(run = %key.dir_name(), error = %e, "run failed; its cell will be incomplete");
        summary.error = Some(e.to_string());
    }
    if let Ok(json) = serde_json::to_string_pretty(&summary) {
        let _ = std::fs::create_dir_all(&dir);
        if let Err(e) = std::fs::write(dir.join("summary.json"), json) {
            tracing::warn!(run = %key.dir_name(), error = %e, "could not write run summary");
        }
    }
    summary
}

fn plan(spec: &ExperimentSpec) -> Vec<RunKey> {
    let mut keys = Vec::new();
    for &phase in &spec.phases {
        for column in spec.columns() {
            for &family in &spec.families {
                for repetition in 0..spec.repetitions {
                    keys.push(RunKey {
                        phase,
                        column,
                        family,
                        repetition,
                    });
                }
            }
        }
    }
    keys
}

/// Runs every (phase, column, family, repetition) of `spec`, writes the run
/// artifacts under `results/<spec hash>/` and emits the table and plot.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentOutcome> {
    spec.validate()?;
    let results_dir = spec.results_dir();
    let runs_dir = results_dir.join("runs");
    std::fs::create_dir_all(&runs_dir).map_err(|e| Error::io(&runs_dir, e))?;
    let spec_path = results_dir.join("spec.json");
    std::fs::write(&spec_path, serde_json::to_string_pretty(spec)?).map_err(|e| Error::io(&spec_path, e))?;

    let corpora = load_corpora(spec)?;
    let keys = plan(spec);
    tracing::info!(runs = keys.len(), dir = %results_dir.display(), "experiment started");
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(spec.jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let summaries: Vec<RunSummary> =
        pool.install(|| keys.par_iter().map(|&k| execute(spec, &corpora, k, &runs_dir)).collect());

    let table = ResultTable::build(spec, summaries)?;
    let files = emit_report(&table, &results_dir, &Format::ALL)?;
    Ok(ExperimentOutcome {
        table,
        results_dir,
        files,
    })
}

pub fn run_task1(spec: &ExperimentSpec) -> Result<ExperimentOutcome> {
    if spec.task != Task::Task1 {
        return Err(Error::Config("run_task1 requires a TASK1 spec".into()));
    }
    run_experiment(spec)
}

pub fn run_task2(spec: &ExperimentSpec) -> Result<ExperimentOutcome> {
    if spec.task != Task::Task2 {
        return Err(Error::Config("run_task2 requires a TASK2 spec".into()));
    }
    run_experiment(spec)
}

/// Rebuilds the table of a results directory from its stored run summaries.
pub fn rebuild_table(results_dir: &Path) -> Result<ResultTable> {
    let spec_path = results_dir.join("spec.json");
    let text = std::fs::read_to_string(&spec_path).map_err(|e| Error::io(&spec_path, e))?;
    let spec = ExperimentSpec::from_json(&text)?;
    let mut summaries = Vec::new();
    let runs_dir = results_dir.join("runs");
    for key in plan(&spec) {
        let path = runs_dir.join(key.dir_name()).join("summary.json");
        match std::fs::read_to_string(&path) {
            Ok(text) => summaries.push(serde_json::from_str(&text)?),
            Err(_) => tracing::warn!(run = %key.dir_name(), "no stored summary; cell will be incomplete"),
        }
    }
    ResultTable::build(&spec, summaries)
}
