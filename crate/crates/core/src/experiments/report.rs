use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::runner::RunSummary;
use super::{Column, ExperimentSpec, Phase, Task};
use crate::error::{Error, Result};
use crate::metrics::MetricReport;
use crate::models::ModelFamily;
use crate::preprocess::CLEANING_RULES_VERSION;

/// Mean and population standard deviation of the headline F1 of `runs`.
pub fn aggregate(runs: &[MetricReport]) -> Result<(f64, f64)> {
    let values: Vec<f64> = runs.iter().map(|r| r.headline_f1).collect();
    aggregate_values(&values)
}

pub fn aggregate_values(values: &[f64]) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(Error::Validation("cannot aggregate zero runs".into()));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Ok((mean, var.sqrt()))
}

/// One (phase, family, column) entry of a result table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub phase: Phase,
    pub family: ModelFamily,
    pub column: Column,
    /// Mean headline F1; absent unless every repetition succeeded.
    pub mean: Option<f64>,
    /// Population standard deviation, reported for CV cells only.
    pub std: Option<f64>,
    pub runs: Vec<RunSummary>,
}

impl Cell {
    pub fn is_complete(&self) -> bool {
        self.mean.is_some()
    }

    /// Headline F1 of each successful run, in repetition order.
    pub fn run_values(&self) -> Vec<f64> {
        self.runs
            .iter()
            .filter_map(|r| r.report.as_ref().map(|m| m.headline_f1))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultTable {
    pub task: Task,
    pub spec_hash: String,
    pub cleaning_rules: String,
    pub repetitions: usize,
    pub phases: Vec<Phase>,
    pub families: Vec<ModelFamily>,
    pub columns: Vec<Column>,
    pub cells: Vec<Cell>,
}

impl ResultTable {
    pub fn build(spec: &ExperimentSpec, mut summaries: Vec<RunSummary>) -> Result<Self> {
        summaries.sort_by_key(|s| s.key);
        let columns = spec.columns();
        let mut cells = Vec::new();
        for &phase in &spec.phases {
            for &family in &spec.families {
                for &column in &columns {
                    let runs: Vec<RunSummary> = summaries
                        .iter()
                        .filter(|s| s.key.phase == phase && s.key.family == family && s.key.column == column)
                        .cloned()
                        .collect();
                    let reports: Vec<MetricReport> = runs.iter().filter_map(|r| r.report.clone()).collect();
                    let (mean, std) = if reports.len() == spec.repetitions {
                        let (m, s) = aggregate(&reports)?;
                        (Some(m), (phase == Phase::Cv).then_some(s))
                    } else {
                        (None, None)
                    };
                    cells.push(Cell {
                        phase,
                        family,
                        column,
                        mean,
                        std,
                        runs,
                    });
                }
            }
        }
        Ok(Self {
            task: spec.task,
            spec_hash: spec.hash(),
            cleaning_rules: CLEANING_RULES_VERSION.to_string(),
            repetitions: spec.repetitions,
            phases: spec.phases.clone(),
            families: spec.families.clone(),
            columns,
            cells,
        })
    }

    pub fn cell(&self, phase: Phase, family: ModelFamily, column: Column) -> Option<&Cell> {
        self.cells
            .iter()
            .find(|c| c.phase == phase && c.family == family && c.column == column)
    }

    pub fn incomplete_cells(&self) -> usize {
        self.cells.iter().filter(|c| !c.is_complete()).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
    Svg,
}

impl Format {
    pub const ALL: [Format; 3] = [Self::Csv, Self::Json, Self::Svg];
}

impl std::str::FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(Self::Csv),
            "json" => Ok(Self::Json),
            "svg" => Ok(Self::Svg),
            other => Err(Error::Config(format!("unknown report format `{other}`"))),
        }
    }
}

const INCOMPLETE: &str = "—";

fn format_cell(cell: Option<&Cell>) -> String {
    match cell {
        Some(Cell {
            mean: Some(m), std: Some(s), ..
        }) => format!("{m:.4} ({s:.4})"),
        Some(Cell { mean: Some(m), .. }) => format!("{m:.4}"),
        _ => INCOMPLETE.to_string(),
    }
}

/// Phase, model and one column per arity or combination mode; CV cells carry
/// the standard deviation in parentheses.
pub fn render_csv(table: &ResultTable) -> Result<String> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["phase".to_string(), "model".to_string()];
    header.extend(table.columns.iter().map(|c| c.label()));
    writer.write_record(&header)?;
    for &phase in &table.phases {
        for &family in &table.families {
            let mut row = vec![phase.label().to_string(), family.display_name().to_string()];
            row.extend(table.columns.iter().map(|&c| format_cell(table.cell(phase, family, c))));
            writer.write_record(&row)?;
        }
    }
    let bytes = writer
        .into_inner()
        .map_err(|e| Error::Load(format!("csv buffer: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

const PALETTE: [&str; 5] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd"];

/// Line plot of mean F1 per family across the table's columns, one panel
/// per phase.
pub fn render_svg(table: &ResultTable) -> String {
    let (pw, ph) = (420.0, 300.0);
    let (ml, mr, mt, mb) = (50.0, 20.0, 40.0, 45.0);
    let legend_h = 22.0 * table.families.len().div_ceil(3) as f64;
    let width = pw * table.phases.len().max(1) as f64;
    let height = ph + legend_h;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let n = table.columns.len();
    for (p, &phase) in table.phases.iter().enumerate() {
        let x0 = p as f64 * pw + ml;
        let plot_w = pw - ml - mr;
        let plot_h = ph - mt - mb;
        let x_at = |i: usize| {
            if n <= 1 {
                x0 + plot_w / 2.0
            } else {
                x0 + plot_w * i as f64 / (n - 1) as f64
            }
        };
        let y_at = |v: f64| mt + plot_h * (1.0 - v.clamp(0.0, 1.0));
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="22" text-anchor="middle" font-weight="bold">Task {} ({})</text>"#,
            x0 + plot_w / 2.0,
            table.task.number(),
            phase.label()
        );
        for tick in 0..=5 {
            let v = tick as f64 / 5.0;
            let y = y_at(v);
            let _ = writeln!(
                svg,
                r##"<line x1="{x0}" y1="{y}" x2="{}" y2="{y}" stroke="#dddddd"/><text x="{}" y="{}" text-anchor="end">{v:.1}</text>"##,
                x0 + plot_w,
                x0 - 6.0,
                y + 4.0
            );
        }
        for (i, c) in table.columns.iter().enumerate() {
            let _ = writeln!(
                svg,
                r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
                x_at(i),
                mt + plot_h + 18.0,
                c.label()
            );
        }
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" text-anchor="middle" transform="rotate(-90 {} {})">F1</text>"#,
            x0 - 36.0,
            mt + plot_h / 2.0,
            x0 - 36.0,
            mt + plot_h / 2.0
        );
        for (f, &family) in table.families.iter().enumerate() {
            let colour = PALETTE[f % PALETTE.len()];
            let points: Vec<(f64, f64)> = table
                .columns
                .iter()
                .enumerate()
                .filter_map(|(i, &c)| table.cell(phase, family, c).and_then(|cell| cell.mean).map(|m| (x_at(i), y_at(m))))
                .collect();
            if points.len() > 1 {
                let path: Vec<String> = points.iter().map(|(x, y)| format!("{x:.1},{y:.1}")).collect();
                let _ = writeln!(
                    svg,
                    r#"<polyline points="{}" fill="none" stroke="{colour}" stroke-width="2"/>"#,
                    path.join(" ")
                );
            }
            for (x, y) in points {
                let _ = writeln!(svg, r#"<circle cx="{x:.1}" cy="{y:.1}" r="3.5" fill="{colour}"/>"#);
            }
        }
    }
    for (f, family) in table.families.iter().enumerate() {
        let x = 20.0 + (f % 3) as f64 * 140.0;
        let y = ph + 22.0 * (f / 3) as f64;
        let colour = PALETTE[f % PALETTE.len()];
        let _ = writeln!(
            svg,
            r#"<rect x="{x}" y="{}" width="14" height="4" fill="{colour}"/><text x="{}" y="{}">{}</text>"#,
            y - 4.0,
            x + 20.0,
            y + 1.0,
            family.display_name()
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn write(path: PathBuf, contents: &str) -> Result<PathBuf> {
    std::fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// Writes `table.csv`, `table.json` and `plot_task{1,2}.svg` into `dir`.
pub fn emit_report(table: &ResultTable, dir: &Path, formats: &[Format]) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    for format in formats {
        let file = match format {
            Format::Csv => write(dir.join("table.csv"), &render_csv(table)?)?,
            Format::Json => write(dir.join("table.json"), &serde_json::to_string_pretty(table)?)?,
            Format::Svg => write(dir.join(format!("plot_task{}.svg", table.task.number())), &render_svg(table))?,
        };
        files.push(file);
    }
    Ok(files)
}

pub fn load_table(path: &Path) -> Result<ResultTable> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}
