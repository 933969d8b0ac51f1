use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;

use mmic::corpus::{load_manifest, load_real411_export, validate_dataset, ImageStatus, Sample, Source, VerdictMapping};
use mmic::experiments::{emit_report, rebuild_table, run_experiment, ExperimentSpec, Format};
use mmic::trainer::TrainedModel;
use mmic::Error;

/// Multimodal misinformation detection experiments.
#[derive(Debug, Parser)]
#[command(name = "mmic", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Load a manifest and report label counts, duplicates, missing images and row errors.
    Validate {
        /// Tab-separated manifest, or a Real411 `.ndjson`/`.jsonl` export.
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value = "FAKEDDIT")]
        source: Source,
        /// Write the report here instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run every phase, column, family and repetition of an experiment spec.
    Run {
        #[arg(long)]
        spec: PathBuf,
        /// Overrides the spec's output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Number of runs trained concurrently.
        #[arg(long)]
        jobs: Option<usize>,
        /// Overrides the spec's base seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Classify one sample with a saved checkpoint and print its label and scores.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        text: String,
        #[arg(long)]
        image: Option<PathBuf>,
    },
    /// Re-emit the table and plot of a finished experiment from its stored runs.
    Report {
        /// Spec whose results directory to read; `--out` and `--seed` apply as for `run`.
        #[arg(long, conflicts_with = "results")]
        spec: Option<PathBuf>,
        /// Results directory to read directly.
        #[arg(long)]
        results: Option<PathBuf>,
        /// With `--results`, where to write the files (defaults to the results directory).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Output formats; all of them when omitted.
        #[arg(long, value_delimiter = ',')]
        format: Vec<Format>,
    },
}

#[derive(Debug)]
struct Failure {
    code: u8,
    kind: String,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Io { .. } | Error::Config(_) | Error::Json(_) => 2,
            Error::Validation(_) | Error::Load(_) | Error::Csv(_) => 3,
            Error::Image { .. } => 4,
            _ => 5,
        };
        Failure {
            code,
            kind: e.kind().to_string(),
            message: e.to_string(),
        }
    }
}

impl Failure {
    fn new(code: u8, kind: &str, message: impl Into<String>) -> Self {
        Failure {
            code,
            kind: kind.into(),
            message: message.into(),
        }
    }

    fn report(&self) -> ExitCode {
        let line = serde_json::json!({
            "error": self.kind,
            "message": self.message,
            "exit_code": self.code,
        });
        eprintln!("{line}");
        ExitCode::from(self.code)
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn write_json(value: &impl Serialize, out: Option<&Path>) -> CliResult<()> {
    let json = serde_json::to_string_pretty(value).map_err(Error::from)?;
    match out {
        Some(path) => std::fs::write(path, json + "\n")
            .map_err(|e| Failure::new(2, "io", format!("cannot write {}: {e}", path.display()))),
        None => {
            println!("{json}");
            Ok(())
        }
    }
}

fn validate(manifest: &Path, source: Source, out: Option<&Path>) -> CliResult<()> {
    let is_export = matches!(manifest.extension().and_then(|e| e.to_str()), Some("ndjson" | "jsonl"));
    let loaded = if is_export {
        load_real411_export(manifest, VerdictMapping::default())?
    } else {
        load_manifest(manifest, source)?
    };
    let report = validate_dataset(&loaded.view).with_row_errors(&loaded.errors);
    if !loaded.errors.is_empty() {
        tracing::warn!(rows = loaded.errors.len(), "some rows were rejected; see row_errors");
    }
    write_json(&report, out)
}

fn load_spec(path: &Path, out: Option<PathBuf>, seed: Option<u64>, jobs: Option<usize>) -> CliResult<ExperimentSpec> {
    let mut spec = ExperimentSpec::load(path)?;
    if let Some(out) = out {
        spec.output_dir = out;
    }
    if let Some(seed) = seed {
        spec.base_seed = seed;
    }
    if let Some(jobs) = jobs {
        spec.jobs = jobs;
    }
    spec.validate()?;
    Ok(spec)
}

fn run(spec: &ExperimentSpec) -> CliResult<()> {
    let outcome = run_experiment(spec)?;
    let incomplete = outcome.table.incomplete_cells();
    if incomplete > 0 {
        tracing::warn!(cells = incomplete, "some cells are incomplete; see runs/*/summary.json");
    }
    write_json(
        &serde_json::json!({
            "results_dir": outcome.results_dir,
            "files": outcome.files,
            "incomplete_cells": incomplete,
        }),
        None,
    )
}

fn predict(checkpoint: &Path, text: &str, image: Option<&Path>) -> CliResult<()> {
    let model = TrainedModel::load(checkpoint)?;
    let family = model.family();
    let image = match image {
        Some(path) if !family.uses_image() => {
            tracing::warn!(%family, image = %path.display(), "checkpoint does not use images; ignoring --image");
            ImageStatus::Missing
        }
        Some(path) => ImageStatus::Present(path.to_path_buf()),
        None if family.uses_image() => {
            return Err(Failure::new(4, "image", format!("a {family} checkpoint needs --image")));
        }
        None => ImageStatus::Missing,
    };
    let sample = Sample {
        id: "input".into(),
        text: text.into(),
        image_ref: String::new(),
        label2: None,
        label3: None,
        label6: None,
        source: Source::Fakeddit,
        category: None,
        image,
    };
    let (predictions, excluded) = model.predict(&[&sample], 1)?;
    let Some(Some(prediction)) = predictions.into_iter().next() else {
        let reason = excluded
            .into_iter()
            .next()
            .map(|x| x.reason)
            .unwrap_or_else(|| "input could not be prepared".into());
        return Err(Failure::new(4, "image", reason));
    };
    write_json(
        &serde_json::json!({
            "label": prediction.label,
            "scores": prediction.probabilities(),
        }),
        None,
    )
}

fn report(results_dir: &Path, out: &Path, formats: &[Format]) -> CliResult<()> {
    let table = rebuild_table(results_dir)?;
    let formats = if formats.is_empty() { &Format::ALL[..] } else { formats };
    let files = emit_report(&table, out, formats)?;
    write_json(
        &serde_json::json!({
            "files": files,
            "incomplete_cells": table.incomplete_cells(),
        }),
        None,
    )
}

fn dispatch(command: Command) -> CliResult<()> {
    match command {
        Command::Validate { manifest, source, out } => validate(&manifest, source, out.as_deref()),
        Command::Run { spec, out, jobs, seed } => run(&load_spec(&spec, out, seed, jobs)?),
        Command::Predict { checkpoint, text, image } => predict(&checkpoint, &text, image.as_deref()),
        Command::Report {
            spec,
            results,
            out,
            seed,
            format,
        } => match (spec, results) {
            (Some(spec), _) => {
                let dir = load_spec(&spec, out, seed, None)?.results_dir();
                report(&dir, &dir, &format)
            }
            (None, Some(dir)) => {
                let dest = out.unwrap_or_else(|| dir.clone());
                report(&dir, &dest, &format)
            }
            (None, None) => Err(Failure::new(2, "usage", "report needs --spec or --results")),
        },
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => return Failure::new(2, "usage", e.to_string().trim_end()).report(),
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => failure.report(),
    }
}
