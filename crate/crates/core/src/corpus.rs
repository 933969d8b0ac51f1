//! Dataset manifests, the Real411 raw export, category filtering and label
//! collapsing.
//!
//! A [`DatasetView`] is an immutable, ordered collection of shared
//! [`Sample`]s. Derived views (filters, splits, combinations) hold `Arc`
//! clones of the same samples and never mutate them.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Manifest column order, written and expected in this order.
pub const MANIFEST_COLUMNS: [&str; 8] = [
    "id",
    "text",
    "image_path",
    "label2",
    "label3",
    "label6",
    "source",
    "category",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Source {
    Fakeddit,
    Real411,
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Source::Fakeddit => "FAKEDDIT",
            Source::Real411 => "REAL411",
        })
    }
}

impl FromStr for Source {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "FAKEDDIT" => Ok(Source::Fakeddit),
            "REAL411" => Ok(Source::Real411),
            other => Err(Error::Config(format!("unknown source `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Provenance {
    Fakeddit,
    Real411,
    Combined,
}

impl From<Source> for Provenance {
    fn from(source: Source) -> Self {
        match source {
            Source::Fakeddit => Provenance::Fakeddit,
            Source::Real411 => Provenance::Real411,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SplitTag {
    Full,
    Train,
    Validation,
    Test,
}

/// Real411 complaint categories.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Real411Category {
    Misinformation,
    HateSpeech,
    IncitementToViolence,
    Harassment,
    TrueContent,
}

impl Real411Category {
    /// Parses a category string, tolerating case, spaces and hyphens.
    pub fn parse(raw: &str) -> Option<Self> {
        let norm: String = raw
            .trim()
            .to_lowercase()
            .chars()
            .map(|c| if c == ' ' || c == '-' { '_' } else { c })
            .collect();
        match norm.as_str() {
            "misinformation" => Some(Self::Misinformation),
            "hate_speech" => Some(Self::HateSpeech),
            "incitement_to_violence" | "incitement" => Some(Self::IncitementToViolence),
            "harassment" => Some(Self::Harassment),
            "true_content" | "true" => Some(Self::TrueContent),
            _ => None,
        }
    }

    pub fn is_retained(self) -> bool {
        matches!(self, Self::Misinformation | Self::TrueContent)
    }
}

/// Whether a sample's image could be located on disk at load time.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum ImageStatus {
    Present(PathBuf),
    #[default]
    Missing,
}

/// One social-media item.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sample {
    pub id: String,
    pub text: String,
    pub image_ref: String,
    pub label2: Option<u8>,
    pub label3: Option<u8>,
    pub label6: Option<u8>,
    pub source: Source,
    pub category: Option<String>,
    #[serde(skip)]
    pub image: ImageStatus,
}

impl Sample {
    /// Label at the given arity. The binary label falls back to collapsing
    /// the 6-way label when no explicit binary label was provided.
    pub fn label(&self, arity: usize) -> Option<usize> {
        match arity {
            2 => self
                .label2
                .or_else(|| self.label6.map(|l| u8::from(l != 0)))
                .map(usize::from),
            3 => self.label3.map(usize::from),
            6 => self.label6.map(usize::from),
            _ => None,
        }
    }

    pub fn image_path(&self) -> Option<&Path> {
        match &self.image {
            ImageStatus::Present(p) => Some(p),
            ImageStatus::Missing => None,
        }
    }

    pub fn has_image(&self) -> bool {
        matches!(self.image, ImageStatus::Present(_))
    }

    fn check_invariants(&self) -> std::result::Result<(), String> {
        if let Some(l) = self.label2 {
            if l > 1 {
                return Err(format!("label2 out of range: {l}"));
            }
        }
        if let Some(l) = self.label3 {
            if l > 2 {
                return Err(format!("label3 out of range: {l}"));
            }
        }
        if let Some(l6) = self.label6 {
            if l6 > 5 {
                return Err(format!("label6 out of range: {l6}"));
            }
            if let Some(l2) = self.label2 {
                if (l6 == 0) != (l2 == 0) {
                    return Err(format!("label6 = {l6} contradicts label2 = {l2}"));
                }
            }
        }
        Ok(())
    }
}

/// Ordered, immutable collection of samples with provenance and split identity.
#[derive(Debug, Clone)]
pub struct DatasetView {
    samples: Vec<Arc<Sample>>,
    provenance: Provenance,
    split: SplitTag,
    arity: usize,
}

impl DatasetView {
    /// Builds a view, enforcing unique ids and a label at `arity` on every sample.
    pub fn new(
        samples: Vec<Arc<Sample>>,
        provenance: Provenance,
        split: SplitTag,
        arity: usize,
    ) -> Result<Self> {
        if !matches!(arity, 2 | 3 | 6) {
            return Err(Error::Config(format!("unsupported arity {arity}")));
        }
        let mut seen = HashSet::with_capacity(samples.len());
        for s in &samples {
            if !seen.insert(s.id.as_str()) {
                return Err(Error::Validation(format!("duplicate sample id `{}`", s.id)));
            }
            if s.label(arity).is_none() {
                return Err(Error::Validation(format!(
                    "sample `{}` has no label at arity {arity}",
                    s.id
                )));
            }
        }
        Ok(Self {
            samples,
            provenance,
            split,
            arity,
        })
    }

    pub fn empty(provenance: Provenance, split: SplitTag, arity: usize) -> Self {
        Self {
            samples: Vec::new(),
            provenance,
            split,
            arity,
        }
    }

    pub fn samples(&self) -> &[Arc<Sample>] {
        &self.samples
    }

    pub fn iter(&self) -> impl Iterator<Item = &Sample> {
        self.samples.iter().map(|s| s.as_ref())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn split(&self) -> SplitTag {
        self.split
    }

    pub fn arity(&self) -> usize {
        self.arity
    }

    /// Labels at the view's arity, order-aligned with the samples.
    pub fn labels(&self) -> Vec<usize> {
        self.iter()
            .map(|s| s.label(self.arity).expect("label checked at construction"))
            .collect()
    }

    pub fn ids(&self) -> Vec<&str> {
        self.iter().map(|s| s.id.as_str()).collect()
    }

    /// Same samples re-tagged with another split identity.
    pub fn with_split(&self, split: SplitTag) -> Self {
        Self {
            split,
            ..self.clone()
        }
    }

    /// Same samples viewed at another arity; fails if any sample lacks that label.
    pub fn with_arity(&self, arity: usize) -> Result<Self> {
        Self::new(self.samples.clone(), self.provenance, self.split, arity)
    }

    /// Subset preserving relative order.
    pub fn select(&self, indices: &[usize], split: SplitTag) -> Self {
        Self {
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
            provenance: self.provenance,
            split,
            arity: self.arity,
        }
    }

    /// Subset of samples satisfying `keep`, preserving order.
    pub fn filter(&self, mut keep: impl FnMut(&Sample) -> bool) -> Self {
        Self {
            samples: self.samples.iter().filter(|s| keep(s)).cloned().collect(),
            ..self.clone()
        }
    }
}

/// A manifest or export row that could not be admitted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowError {
    /// 1-based line number in the source file (header is line 1 for manifests).
    pub line: usize,
    pub id: Option<String>,
    pub message: String,
}

/// Result of loading a file: the admitted view plus per-row diagnostics.
#[derive(Debug, Clone)]
pub struct LoadOutcome {
    pub view: DatasetView,
    pub errors: Vec<RowError>,
}

fn parse_optional_label(field: &str, name: &str) -> std::result::Result<Option<u8>, String> {
    let field = field.trim();
    if field.is_empty() {
        return Ok(None);
    }
    field
        .parse::<u8>()
        .map(Some)
        .map_err(|_| format!("{name} is not a small non-negative integer: `{field}`"))
}

fn resolve_image(image_ref: &str, base_dir: &Path) -> ImageStatus {
    let trimmed = image_ref.trim();
    if trimmed.is_empty() || trimmed.contains("://") {
        return ImageStatus::Missing;
    }
    let path = Path::new(trimmed);
    let path = if path.is_absolute() {
        path.to_path_buf()
    } else {
        base_dir.join(path)
    };
    if path.is_file() {
        ImageStatus::Present(path)
    } else {
        ImageStatus::Missing
    }
}

/// Loads a tab-separated manifest. Malformed rows are collected as
/// [`RowError`]s and skipped; a missing file or zero admitted rows is fatal.
pub fn load_manifest(path: &Path, source_kind: Source) -> Result<LoadOutcome> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .has_headers(true)
        .flexible(true)
        .from_reader(file);

    let headers = reader.headers()?.clone();
    let mut column = BTreeMap::new();
    for (i, name) in headers.iter().enumerate() {
        column.insert(name.trim().to_string(), i);
    }
    for required in ["id", "text", "image_path"] {
        if !column.contains_key(required) {
            return Err(Error::Load(format!(
                "{}: manifest header lacks required column `{required}`",
                path.display()
            )));
        }
    }

    let mut samples = Vec::new();
    let mut errors = Vec::new();
    let mut seen = HashSet::new();

    for (row, record) in reader.records().enumerate() {
        let line = row + 2;
        let record = match record {
            Ok(r) => r,
            Err(e) => {
                errors.push(RowError {
                    line,
                    id: None,
                    message: e.to_string(),
                });
                continue;
            }
        };
        let id = record.get(column["id"]).map(|s| s.trim().to_string());
        if record.len() != headers.len() {
            errors.push(RowError {
                line,
                id,
                message: format!(
                    "expected {} fields, found {}",
                    headers.len(),
                    record.len()
                ),
            });
            continue;
        }
        match parse_manifest_row(&record, &column, source_kind, &base_dir) {
            Ok(sample) => {
                if !seen.insert(sample.id.clone()) {
                    errors.push(RowError {
                        line,
                        id: Some(sample.id.clone()),
                        message: format!("duplicate id `{}`", sample.id),
                    });
                    continue;
                }
                samples.push(Arc::new(sample));
            }
            Err(message) => errors.push(RowError { line, id, message }),
        }
    }

    if samples.is_empty() {
        return Err(Error::Validation(format!(
            "{}: no valid rows ({} row errors)",
            path.display(),
            errors.len()
        )));
    }
    let view = DatasetView::new(samples, source_kind.into(), SplitTag::Full, 2)?;
    Ok(LoadOutcome { view, errors })
}

fn parse_manifest_row(
    record: &csv::StringRecord,
    column: &BTreeMap<String, usize>,
    source_kind: Source,
    base_dir: &Path,
) -> std::result::Result<Sample, String> {
    let field = |name: &str| -> String {
        column
            .get(name)
            .and_then(|&i| record.get(i))
            .unwrap_or("")
            .to_string()
    };
    let id = field("id").trim().to_string();
    if id.is_empty() {
        return Err("empty id".into());
    }
    let source_field = field("source");
    let source_field = source_field.trim();
    let source = if source_field.is_empty() {
        source_kind
    } else {
        let parsed: Source = source_field.parse().map_err(|e: Error| e.to_string())?;
        if parsed != source_kind {
            return Err(format!("source `{parsed}` does not match expected `{source_kind}`"));
        }
        parsed
    };
    let category = Some(field("category").trim().to_string()).filter(|c| !c.is_empty());
    let image_ref = field("image_path");
    let sample = Sample {
        id,
        text: field("text"),
        image: resolve_image(&image_ref, base_dir),
        image_ref,
        label2: parse_optional_label(&field("label2"), "label2")?,
        label3: parse_optional_label(&field("label3"), "label3")?,
        label6: parse_optional_label(&field("label6"), "label6")?,
        source,
        category,
    };
    sample.check_invariants()?;
    if sample.label(2).is_none() {
        return Err("row carries neither label2 nor label6".into());
    }
    Ok(sample)
}

/// Writes samples as a manifest with the canonical column order.
pub fn write_manifest<'a>(path: &Path, samples: impl IntoIterator<Item = &'a Sample>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut writer = csv::WriterBuilder::new()
        .delimiter(b'\t')
        .from_writer(file);
    writer.write_record(MANIFEST_COLUMNS)?;
    let opt = |l: Option<u8>| l.map(|v| v.to_string()).unwrap_or_default();
    for s in samples {
        writer.write_record([
            s.id.as_str(),
            s.text.as_str(),
            s.image_ref.as_str(),
            &opt(s.label2),
            &opt(s.label3),
            &opt(s.label6),
            &s.source.to_string(),
            s.category.as_deref().unwrap_or(""),
        ])?;
    }
    writer.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// How Real411 verdicts map onto the binary truth label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerdictMapping {
    pub valid: u8,
    pub invalid: u8,
}

impl Default for VerdictMapping {
    fn default() -> Self {
        Self { valid: 1, invalid: 0 }
    }
}

#[derive(Debug, Deserialize)]
struct Real411Record {
    complaint_id: serde_json::Value,
    text: String,
    #[serde(default)]
    image_path: Option<String>,
    category: String,
    verdict: String,
}

/// Loads the newline-delimited JSON Real411 export.
pub fn load_real411_export(path: &Path, mapping: VerdictMapping) -> Result<LoadOutcome> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut samples = Vec::new();
    let mut errors = Vec::new();
    let mut seen = HashSet::new();

    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: Real411Record = match serde_json::from_str(&line) {
            Ok(r) => r,
            Err(e) => {
                errors.push(RowError {
                    line: line_no,
                    id: None,
                    message: e.to_string(),
                });
                continue;
            }
        };
        let id = match &record.complaint_id {
            serde_json::Value::String(s) => s.clone(),
            other => other.to_string(),
        };
        let label2 = match record.verdict.trim().to_ascii_lowercase().as_str() {
            "valid" => mapping.valid,
            "invalid" => mapping.invalid,
            other => {
                errors.push(RowError {
                    line: line_no,
                    id: Some(id),
                    message: format!("unknown verdict `{other}`"),
                });
                continue;
            }
        };
        if !seen.insert(id.clone()) {
            errors.push(RowError {
                line: line_no,
                message: format!("duplicate id `{id}`"),
                id: Some(id),
            });
            continue;
        }
        let image_ref = record.image_path.unwrap_or_default();
        samples.push(Arc::new(Sample {
            id,
            text: record.text,
            image: resolve_image(&image_ref, &base_dir),
            image_ref,
            label2: Some(label2),
            label3: None,
            label6: None,
            source: Source::Real411,
            category: Some(record.category),
        }));
    }

    if samples.is_empty() {
        return Err(Error::Validation(format!(
            "{}: no valid records ({} row errors)",
            path.display(),
            errors.len()
        )));
    }
    let view = DatasetView::new(samples, Provenance::Real411, SplitTag::Full, 2)?;
    Ok(LoadOutcome { view, errors })
}

/// Result of [`filter_real411`].
#[derive(Debug, Clone)]
pub struct FilterOutcome {
    pub view: DatasetView,
    pub rejected: Vec<RowError>,
    pub warnings: Vec<String>,
}

/// Keeps only true-content and misinformation samples; hate speech,
/// incitement and harassment are dropped. Unknown categories are reported.
pub fn filter_real411(view: &DatasetView) -> Result<FilterOutcome> {
    if view.provenance() != Provenance::Real411 {
        return Err(Error::Config(format!(
            "filter_real411 expects a REAL411 view, got {:?}",
            view.provenance()
        )));
    }
    let mut rejected = Vec::new();
    let mut kept = Vec::new();
    for (i, s) in view.samples().iter().enumerate() {
        let category = s.category.as_deref().unwrap_or("");
        match Real411Category::parse(category) {
            Some(c) if c.is_retained() => kept.push(i),
            Some(_) => {}
            None => rejected.push(RowError {
                line: i + 1,
                id: Some(s.id.clone()),
                message: format!("unknown Real411 category `{category}`"),
            }),
        }
    }
    let mut warnings = Vec::new();
    if kept.is_empty() {
        let msg = format!("no samples of {} remain after category filtering", view.len());
        tracing::warn!("{msg}");
        warnings.push(msg);
    }
    Ok(FilterOutcome {
        view: view.select(&kept, view.split()),
        rejected,
        warnings,
    })
}

/// Collapses the five misinformation types into one class. Returns an arity-2
/// view in which every sample carries an explicit `label2`.
pub fn binarize_labels(view: &DatasetView) -> std::result::Result<DatasetView, Vec<RowError>> {
    let mut out = Vec::with_capacity(view.len());
    let mut errors = Vec::new();
    for (i, s) in view.samples().iter().enumerate() {
        let collapsed = s.label6.map(|l| u8::from(l != 0)).or(s.label2);
        match collapsed {
            Some(l) if s.label2 == Some(l) => out.push(s.clone()),
            Some(l) => {
                let mut updated = Sample::clone(s);
                updated.label2 = Some(l);
                out.push(Arc::new(updated));
            }
            None => errors.push(RowError {
                line: i + 1,
                id: Some(s.id.clone()),
                message: "sample has neither label6 nor label2".into(),
            }),
        }
    }
    if !errors.is_empty() {
        return Err(errors);
    }
    Ok(DatasetView {
        samples: out,
        provenance: view.provenance(),
        split: view.split(),
        arity: 2,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TextLengthStats {
    pub min: usize,
    pub max: usize,
    pub mean: f64,
    pub median: f64,
}

/// Descriptive report over a view; never mutates it.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub total: usize,
    pub arity: usize,
    pub label_counts: BTreeMap<usize, usize>,
    pub duplicate_ids: Vec<String>,
    pub missing_images: Vec<String>,
    /// Text length in whitespace-delimited words.
    pub text_length: TextLengthStats,
    pub row_errors: Vec<RowError>,
}

impl ValidationReport {
    /// Attaches loader diagnostics; duplicate-id rows are also listed as duplicates.
    pub fn with_row_errors(mut self, errors: &[RowError]) -> Self {
        for e in errors {
            if e.message.starts_with("duplicate id") {
                if let Some(id) = &e.id {
                    if !self.duplicate_ids.contains(id) {
                        self.duplicate_ids.push(id.clone());
                    }
                }
            }
        }
        self.row_errors.extend_from_slice(errors);
        self
    }
}

pub fn validate_dataset(view: &DatasetView) -> ValidationReport {
    validate_samples(view.iter(), view.arity())
}

/// Report over an arbitrary sample sequence, which may contain duplicates.
pub fn validate_samples<'a>(samples: impl IntoIterator<Item = &'a Sample>, arity: usize) -> ValidationReport {
    let mut report = ValidationReport {
        arity,
        ..Default::default()
    };
    let mut seen = HashSet::new();
    let mut lengths = Vec::new();
    for s in samples {
        report.total += 1;
        if let Some(l) = s.label(arity) {
            *report.label_counts.entry(l).or_default() += 1;
        }
        if !seen.insert(s.id.as_str()) && !report.duplicate_ids.contains(&s.id) {
            report.duplicate_ids.push(s.id.clone());
        }
        if !s.has_image() {
            report.missing_images.push(s.id.clone());
        }
        lengths.push(s.text.split_whitespace().count());
    }
    if !lengths.is_empty() {
        lengths.sort_unstable();
        let n = lengths.len();
        report.text_length = TextLengthStats {
            min: lengths[0],
            max: lengths[n - 1],
            mean: lengths.iter().sum::<usize>() as f64 / n as f64,
            median: if n % 2 == 1 {
                lengths[n / 2] as f64
            } else {
                (lengths[n / 2 - 1] + lengths[n / 2]) as f64 / 2.0
            },
        };
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn sample(id: &str, label2: Option<u8>, label6: Option<u8>) -> Sample {
        Sample {
            id: id.into(),
            text: format!("text {id}"),
            image_ref: String::new(),
            label2,
            label3: None,
            label6,
            source: Source::Fakeddit,
            category: None,
            image: ImageStatus::Missing,
        }
    }

    fn real411(id: &str, category: &str) -> Arc<Sample> {
        Arc::new(Sample {
            source: Source::Real411,
            category: Some(category.into()),
            ..sample(id, Some(u8::from(category == "misinformation")), None)
        })
    }

    fn real411_view(samples: Vec<Arc<Sample>>) -> DatasetView {
        DatasetView::new(samples, Provenance::Real411, SplitTag::Full, 2).unwrap()
    }

    const HEADER: &str = "id\ttext\timage_path\tlabel2\tlabel3\tlabel6\tsource\tcategory\n";

    #[test]
    fn loads_well_formed_manifest_in_order() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.tsv");
        let mut f = File::create(&path).unwrap();
        f.write_all(HEADER.as_bytes()).unwrap();
        for i in 0..6 {
            let l6 = i % 6;
            writeln!(f, "s{i}\tpost number {i}\timg{i}.png\t\t{}\t{l6}\tFAKEDDIT\t", i % 3).unwrap();
        }
        drop(f);
        let out = load_manifest(&path, Source::Fakeddit).unwrap();
        assert_eq!(out.view.len(), 6);
        assert_eq!(out.view.provenance(), Provenance::Fakeddit);
        assert!(out.errors.is_empty());
        assert_eq!(out.view.ids(), vec!["s0", "s1", "s2", "s3", "s4", "s5"]);
        // images do not exist: retained but flagged
        assert!(out.view.iter().all(|s| !s.has_image()));
        assert_eq!(out.view.labels(), vec![0, 1, 1, 1, 1, 1]);
    }

    #[test]
    fn short_row_becomes_row_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.tsv");
        let mut f = File::create(&path).unwrap();
        f.write_all(HEADER.as_bytes()).unwrap();
        for i in 0..6 {
            if i == 3 {
                writeln!(f, "s{i}\timg.png\t1\t\t\tFAKEDDIT\t").unwrap();
            } else {
                writeln!(f, "s{i}\tsome text\timg.png\t1\t\t\tFAKEDDIT\t").unwrap();
            }
        }
        drop(f);
        let out = load_manifest(&path, Source::Fakeddit).unwrap();
        assert_eq!(out.view.len(), 5);
        assert_eq!(out.errors.len(), 1);
        assert_eq!(out.errors[0].line, 5);
        assert_eq!(out.errors[0].id.as_deref(), Some("s3"));
    }

    #[test]
    fn missing_file_and_no_valid_rows_are_fatal() {
        let dir = tempfile::tempdir().unwrap();
        let err = load_manifest(&dir.path().join("absent.tsv"), Source::Fakeddit).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));

        let path = dir.path().join("bad.tsv");
        std::fs::write(&path, format!("{HEADER}x\tonly two\n")).unwrap();
        let err = load_manifest(&path, Source::Fakeddit).unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
    }

    #[test]
    fn contradictory_labels_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.tsv");
        std::fs::write(
            &path,
            format!("{HEADER}a\tt\t\t0\t\t3\t\t\nb\tt\t\t1\t\t3\t\t\n"),
        )
        .unwrap();
        let out = load_manifest(&path, Source::Fakeddit).unwrap();
        assert_eq!(out.view.ids(), vec!["b"]);
        assert!(out.errors[0].message.contains("contradicts"));
    }

    #[test]
    fn real411_filter_keeps_true_and_misinformation() {
        let view = real411_view(vec![
            real411("a", "misinformation"),
            real411("b", "harassment"),
            real411("c", "misinformation"),
        ]);
        let out = filter_real411(&view).unwrap();
        assert_eq!(out.view.ids(), vec!["a", "c"]);
        assert!(out.warnings.is_empty());
    }

    #[test]
    fn real411_filter_only_hate_speech_warns() {
        let view = real411_view(vec![real411("a", "hate_speech"), real411("b", "Hate Speech")]);
        let out = filter_real411(&view).unwrap();
        assert!(out.view.is_empty());
        assert_eq!(out.warnings.len(), 1);
    }

    #[test]
    fn real411_filter_reports_unknown_category() {
        let view = real411_view(vec![real411("a", "true_content"), real411("b", "spam")]);
        let out = filter_real411(&view).unwrap();
        assert_eq!(out.view.ids(), vec!["a"]);
        assert_eq!(out.rejected.len(), 1);
        assert_eq!(out.rejected[0].id.as_deref(), Some("b"));
    }

    #[test]
    fn binarize_collapses_six_way_labels() {
        let samples = (0..6u8)
            .map(|l| Arc::new(sample(&format!("s{l}"), None, Some(l))))
            .collect();
        let view = DatasetView::new(samples, Provenance::Fakeddit, SplitTag::Full, 6).unwrap();
        let bin = binarize_labels(&view).unwrap();
        assert_eq!(bin.arity(), 2);
        let l2: Vec<_> = bin.iter().map(|s| s.label2.unwrap()).collect();
        assert_eq!(l2, vec![0, 1, 1, 1, 1, 1]);
        // satire/parody coded as 3
        assert_eq!(bin.samples()[3].label2, Some(1));
    }

    #[test]
    fn binarize_rejects_unlabelled_sample() {
        let view = DatasetView {
            samples: vec![Arc::new(sample("x", None, None))],
            provenance: Provenance::Fakeddit,
            split: SplitTag::Full,
            arity: 2,
        };
        let errs = binarize_labels(&view).unwrap_err();
        assert_eq!(errs.len(), 1);
    }

    #[test]
    fn validation_report_counts() {
        let samples = vec![
            Arc::new(sample("a", Some(0), None)),
            Arc::new(sample("b", Some(1), None)),
            Arc::new(sample("c", Some(1), None)),
        ];
        let view = DatasetView::new(samples, Provenance::Fakeddit, SplitTag::Full, 2).unwrap();
        let r = validate_dataset(&view);
        assert_eq!(r.total, 3);
        assert_eq!(r.label_counts, BTreeMap::from([(0, 1), (1, 2)]));
        assert_eq!(r.missing_images.len(), 3);
        assert_eq!(r.text_length.min, 2);
    }

    #[test]
    fn validation_report_empty_and_duplicates() {
        let empty = DatasetView::empty(Provenance::Fakeddit, SplitTag::Full, 2);
        let r = validate_dataset(&empty);
        assert_eq!(r.total, 0);
        assert!(r.label_counts.is_empty());
        assert_eq!(r.text_length, TextLengthStats::default());

        let a = sample("a", Some(0), None);
        let b = sample("b", Some(1), None);
        let r = validate_samples([&a, &b, &a], 2);
        assert_eq!(r.duplicate_ids, vec!["a".to_string()]);
    }

    #[test]
    fn view_rejects_duplicates() {
        let s = Arc::new(sample("a", Some(0), None));
        let err = DatasetView::new(vec![s.clone(), s], Provenance::Fakeddit, SplitTag::Full, 2);
        assert!(err.is_err());
    }

    #[test]
    fn real411_export_parses_and_maps_verdicts() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.jsonl");
        std::fs::write(
            &path,
            concat!(
                r#"{"complaint_id": 7, "text": "a", "image_path": "", "category": "misinformation", "verdict": "valid"}"#,
                "\n",
                r#"{"complaint_id": "8", "text": "b", "image_path": null, "category": "harassment", "verdict": "invalid"}"#,
                "\n",
                "not json\n",
                r#"{"complaint_id": "9", "text": "c", "category": "true_content", "verdict": "maybe"}"#,
                "\n"
            ),
        )
        .unwrap();
        let out = load_real411_export(&path, VerdictMapping::default()).unwrap();
        assert_eq!(out.view.ids(), vec!["7", "8"]);
        assert_eq!(out.view.labels(), vec![1, 0]);
        assert_eq!(out.errors.len(), 2);

        let flipped = VerdictMapping { valid: 0, invalid: 1 };
        let out = load_real411_export(&path, flipped).unwrap();
        assert_eq!(out.view.labels(), vec![0, 1]);
    }
    fn labelled(i: usize, l6: u8, with_label2: bool) -> Sample {
        Sample {
            text: format!("post {i} says \"quoted\", with tabs\tand commas"),
            image_ref: if i % 2 == 0 { format!("missing/{i}.png") } else { String::new() },
            label3: Some(l6.min(2)),
            category: (i % 3 == 0).then(|| "misc".to_string()),
            ..sample(&format!("p{i}"), with_label2.then_some(u8::from(l6 != 0)), Some(l6))
        }
    }

    proptest::proptest! {
        #[test]
        fn filter_count_matches_brute_force(cats in proptest::collection::vec(0usize..5, 1..60)) {
            const NAMES: [&str; 5] = ["misinformation", "true_content", "hate_speech", "incitement_to_violence", "harassment"];
            let samples: Vec<Arc<Sample>> = cats.iter().enumerate().map(|(i, &c)| real411(&format!("r{i}"), NAMES[c])).collect();
            let out = filter_real411(&real411_view(samples)).unwrap();
            let expected = cats.iter().filter(|&&c| c < 2).count();
            proptest::prop_assert_eq!(out.view.len(), expected);
            proptest::prop_assert!(out.view.iter().all(|s| matches!(s.category.as_deref(), Some("misinformation" | "true_content"))));
        }

        #[test]
        fn binarize_is_idempotent(labels in proptest::collection::vec((0u8..6, proptest::bool::ANY), 1..40)) {
            let samples = labels.iter().enumerate().map(|(i, &(l6, l2))| Arc::new(labelled(i, l6, l2))).collect();
            let v = DatasetView::new(samples, Provenance::Fakeddit, SplitTag::Full, 2).unwrap();
            let once = binarize_labels(&v).unwrap();
            let twice = binarize_labels(&once).unwrap();
            proptest::prop_assert_eq!(once.samples(), twice.samples());
            proptest::prop_assert_eq!(once.arity(), 2);
        }

        #[test]
        fn manifest_round_trip(labels in proptest::collection::vec((0u8..6, proptest::bool::ANY), 1..30)) {
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("m.tsv");
            let samples: Vec<Sample> = labels.iter().enumerate().map(|(i, &(l6, l2))| labelled(i, l6, l2)).collect();
            write_manifest(&path, &samples).unwrap();
            let loaded = load_manifest(&path, Source::Fakeddit).unwrap();
            proptest::prop_assert!(loaded.errors.is_empty());
            let back: Vec<Sample> = loaded.view.iter().cloned().collect();
            proptest::prop_assert_eq!(back, samples);
        }
    }
}
