//! Vocabulary harmonization, clinical alignment and corpus deduplication.

use std::collections::{BTreeMap, BTreeSet};

use chrono::{DateTime, Datelike, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::schema::{
    canonical_serialize, parse_annotation_line, parse_dataset_meta_line, validate_catalog, AnnotationEntry,
    AnnotationType, DatasetRecord, Diagnostic, Parsed, ValidationReport,
};
use crate::vocab::{
    clinical_applications_for, fold_term, AnatomyPath, ClinicalApplication, Dimension, Modality, ModalityTerm,
    TaskCode, VocabError, Vocabulary,
};

pub const MANIFEST_VERSION: &str = "fuseatlas.manifest.v1";

/// Earliest admissible release year.
pub const MIN_YEAR: i32 = 1990;

const HINTS_FIELD: &str = "(hints)";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum HarmonizeError {
    #[error("record has no tasks; clinical alignment requires at least one")]
    EmptyTasks,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarmonizedRecord {
    pub base: DatasetRecord,
    pub modalities: BTreeSet<ModalityTerm>,
    pub dimensions: BTreeSet<Dimension>,
    pub tasks: BTreeSet<TaskCode>,
    pub anatomy_paths: Vec<AnatomyPath>,
    pub clinical_applications: BTreeSet<ClinicalApplication>,
    pub release_year: Option<i32>,
    pub org_tokens: BTreeSet<String>,
    pub notes: Option<String>,
    /// Alias resolutions and fallbacks applied while harmonizing.
    #[serde(default)]
    pub vocab_log: Vec<String>,
    /// Annotation types seen in the dataset's annotation entries.
    #[serde(default)]
    pub annotation_types: BTreeSet<AnnotationType>,
}

impl HarmonizedRecord {
    pub fn name(&self) -> &str {
        &self.base.dataset_name
    }

    pub fn modality_codes(&self) -> BTreeSet<Modality> {
        self.modalities.iter().map(|m| m.code).collect()
    }

    pub fn anatomy_roots(&self) -> BTreeSet<&str> {
        self.anatomy_paths.iter().map(AnatomyPath::root).collect()
    }

    /// `valid_image_n.total`, with unknown read as zero.
    pub fn image_count(&self) -> u64 {
        self.base.valid_image_n.total.unwrap_or(0)
    }

    pub fn is_labeled(&self) -> bool {
        self.base.label_presence.is_labeled()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HarmonizeOptions {
    /// Promote unmapped-modality diagnostics to errors.
    pub strict: bool,
    /// Latest admissible release year.
    pub max_year: i32,
}

impl HarmonizeOptions {
    pub fn for_timestamp(generated_at: &DateTime<Utc>, strict: bool) -> Self {
        HarmonizeOptions {
            strict,
            max_year: generated_at.year() + 1,
        }
    }
}

/// Organization strings split on `,` and `;`, trimmed and case-folded.
pub fn org_tokens(organizations: &[String]) -> BTreeSet<String> {
    organizations
        .iter()
        .flat_map(|o| o.split([',', ';']))
        .map(fold_term)
        .filter(|t| !t.is_empty() && t != "na")
        .collect()
}

/// Union of the clinical applications of every task.
pub fn align_clinical(rec: &HarmonizedRecord) -> Result<BTreeSet<ClinicalApplication>, HarmonizeError> {
    align_tasks(&rec.tasks)
}

fn align_tasks(tasks: &BTreeSet<TaskCode>) -> Result<BTreeSet<ClinicalApplication>, HarmonizeError> {
    if tasks.is_empty() {
        return Err(HarmonizeError::EmptyTasks);
    }
    Ok(tasks
        .iter()
        .flat_map(|t| clinical_applications_for(*t).iter().copied())
        .collect())
}

pub fn harmonize_record(
    raw: &DatasetRecord,
    vocab: &Vocabulary,
    opts: HarmonizeOptions,
    line_no: usize,
) -> Result<Parsed<HarmonizedRecord>, ValidationReport> {
    let mut errors = Vec::new();
    let mut warnings = Vec::new();
    let mut log = Vec::new();

    let mut modalities = BTreeSet::new();
    for term in &raw.modality_primary {
        match vocab.normalize_modality(term) {
            Ok(found) => {
                if found.unmapped {
                    let msg = format!("unmapped modality '{term}' degraded to OTHER");
                    log.push(msg.clone());
                    let d = if opts.strict {
                        Diagnostic::error("modality_primary", msg, line_no)
                    } else {
                        Diagnostic::warning("modality_primary", msg, line_no)
                    };
                    if d.is_error() { errors.push(d) } else { warnings.push(d) }
                }
                modalities.insert(found.term);
            }
            Err(e) => errors.push(Diagnostic::error("modality_primary", e.to_string(), line_no)),
        }
    }
    if raw.modality_primary.is_empty() {
        errors.push(Diagnostic::error("modality_primary", "no primary modality", line_no));
    }

    let dimensions = match raw.dimension.as_deref() {
        Some(d) => match vocab.normalize_dimension(d) {
            Ok(set) => set,
            Err(e) => {
                errors.push(Diagnostic::error("dimension", e.to_string(), line_no));
                BTreeSet::new()
            }
        },
        None => {
            warnings.push(Diagnostic::warning("dimension", "dimension unknown", line_no));
            BTreeSet::new()
        }
    };

    let mut context_texts: Vec<&str> = raw.anatomical_structure.iter().map(String::as_str).collect();
    if let Some(d) = &raw.disease {
        context_texts.push(d);
    }
    let ctx = vocab.task_context_for(&context_texts);
    let mut tasks = BTreeSet::new();
    for term in &raw.task_type {
        match vocab.normalize_task_in(term, ctx) {
            Ok(found) => {
                if let Some(note) = found.note {
                    log.push(note);
                }
                tasks.insert(found.task);
            }
            Err(e @ VocabError::UnknownTask(_)) => {
                errors.push(Diagnostic::error("task_type", e.to_string(), line_no))
            }
            Err(e) => errors.push(Diagnostic::error("task_type", e.to_string(), line_no)),
        }
    }
    if raw.task_type.is_empty() {
        errors.push(Diagnostic::error("task_type", "no task type", line_no));
    }

    let mut anatomy_paths: Vec<AnatomyPath> = Vec::new();
    for term in &raw.anatomical_structure {
        for path in vocab.classify_anatomy_all(term) {
            if path.root() == "Unknown" && !term.trim().eq_ignore_ascii_case("na") {
                log.push(format!("anatomy '{}' -> Unknown", path.source_term));
            }
            if !anatomy_paths.iter().any(|p| p.levels == path.levels) {
                anatomy_paths.push(path);
            }
        }
    }
    if anatomy_paths.is_empty() {
        anatomy_paths.push(AnatomyPath::unknown("NA"));
    }
    // A known region makes a bare Unknown entry redundant.
    if anatomy_paths.len() > 1 {
        anatomy_paths.retain(|p| p.root() != "Unknown");
    }

    let release_year = raw.release_date.map(|d| d.year);
    if let Some(y) = release_year {
        if !(MIN_YEAR..=opts.max_year).contains(&y) {
            errors.push(Diagnostic::error(
                "release_date",
                format!("release year {y} outside [{MIN_YEAR}, {}]", opts.max_year),
                line_no,
            ));
        }
    }

    if !errors.is_empty() {
        let mut report = ValidationReport::from_diagnostics(errors);
        report.extend(warnings);
        return Err(report);
    }
    let clinical_applications = align_tasks(&tasks).expect("tasks checked non-empty");
    Ok(Parsed {
        value: HarmonizedRecord {
            base: raw.clone(),
            modalities,
            dimensions,
            tasks,
            anatomy_paths,
            clinical_applications,
            release_year,
            org_tokens: org_tokens(&raw.organization),
            notes: raw.notes.clone(),
            vocab_log: log,
            annotation_types: BTreeSet::new(),
        },
        warnings,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DuplicateReason {
    ExactName,
    SameHomepage,
    DeclaredOverlap,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DuplicateAction {
    Dropped,
    /// Both records retained; the pair is reported for review.
    Flagged,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DuplicateEntry {
    pub kept: String,
    pub dropped: String,
    pub reason: DuplicateReason,
    pub action: DuplicateAction,
    pub detail: String,
}

const DUPLICATE_SUFFIXES: [&str; 3] = ["(duplicate)", "(copy)", "(mirror)"];

/// Case-folded, whitespace-collapsed name with a trailing duplicate marker
/// such as `(Duplicate)` removed.
pub fn normalized_name(name: &str) -> String {
    let mut folded = fold_term(name);
    loop {
        let before = folded.len();
        for suffix in DUPLICATE_SUFFIXES {
            if let Some(stripped) = folded.strip_suffix(suffix) {
                folded = stripped.trim_end().to_string();
            }
        }
        if folded.len() == before {
            return folded;
        }
    }
}

fn normalized_homepage(url: &str) -> String {
    let u = url.trim().to_ascii_lowercase();
    let u = u
        .strip_prefix("https://")
        .or_else(|| u.strip_prefix("http://"))
        .unwrap_or(&u);
    let u = u.strip_prefix("www.").unwrap_or(u);
    u.trim_end_matches('/').to_string()
}

/// Keep order: labeled/mixed first, then more images, then name, then the
/// canonical line as a final total-order tie break.
fn keep_order(a: &HarmonizedRecord, b: &HarmonizedRecord) -> std::cmp::Ordering {
    b.is_labeled()
        .cmp(&a.is_labeled())
        .then_with(|| b.image_count().cmp(&a.image_count()))
        .then_with(|| a.name().cmp(b.name()))
        .then_with(|| canonical_serialize(&a.base).cmp(&canonical_serialize(&b.base)))
}

/// Collapses normalized-name duplicates and flags same-homepage and declared
/// overlap pairs. Output records are sorted by name; the report is sorted.
pub fn dedupe(
    records: Vec<HarmonizedRecord>,
    overlap_hints: &[(String, String)],
) -> (Vec<HarmonizedRecord>, Vec<DuplicateEntry>) {
    let mut groups: BTreeMap<String, Vec<HarmonizedRecord>> = BTreeMap::new();
    for r in records {
        groups.entry(normalized_name(r.name())).or_default().push(r);
    }

    let mut report = Vec::new();
    let mut kept = Vec::with_capacity(groups.len());
    for (key, mut members) in groups {
        members.sort_by(keep_order);
        let mut it = members.into_iter();
        let winner = it.next().expect("groups are non-empty");
        for loser in it {
            let detail = if loser.name() == winner.name() {
                "identical dataset_name".to_string()
            } else {
                format!("same name after case folding and suffix stripping: '{key}'")
            };
            report.push(DuplicateEntry {
                kept: winner.name().to_string(),
                dropped: loser.name().to_string(),
                reason: DuplicateReason::ExactName,
                action: DuplicateAction::Dropped,
                detail,
            });
        }
        kept.push(winner);
    }
    kept.sort_by(|a, b| a.name().cmp(b.name()));

    let mut by_homepage: BTreeMap<String, Vec<&str>> = BTreeMap::new();
    for r in &kept {
        if let Some(url) = &r.base.homepage_url {
            by_homepage.entry(normalized_homepage(url)).or_default().push(r.name());
        }
    }
    for (url, names) in &by_homepage {
        for (i, a) in names.iter().enumerate() {
            for b in &names[i + 1..] {
                report.push(DuplicateEntry {
                    kept: a.to_string(),
                    dropped: b.to_string(),
                    reason: DuplicateReason::SameHomepage,
                    action: DuplicateAction::Flagged,
                    detail: format!("shared homepage {url}"),
                });
            }
        }
    }

    let by_norm: BTreeMap<String, &str> = kept.iter().map(|r| (normalized_name(r.name()), r.name())).collect();
    let mut flagged = BTreeSet::new();
    for (a, b) in overlap_hints {
        let (Some(na), Some(nb)) = (by_norm.get(&normalized_name(a)), by_norm.get(&normalized_name(b))) else {
            continue;
        };
        if na == nb || !flagged.insert((*na, *nb)) {
            continue;
        }
        report.push(DuplicateEntry {
            kept: na.to_string(),
            dropped: nb.to_string(),
            reason: DuplicateReason::DeclaredOverlap,
            action: DuplicateAction::Flagged,
            detail: format!("declared overlap: '{a}' and '{b}'"),
        });
    }

    report.sort();
    report.dedup();
    (kept, report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CatalogManifest {
    pub version: String,
    pub vocab_version: String,
    pub generated_at: String,
    pub datasets: Vec<HarmonizedRecord>,
    pub duplicate_report: Vec<DuplicateEntry>,
}

impl CatalogManifest {
    pub fn get(&self, name: &str) -> Option<&HarmonizedRecord> {
        self.datasets
            .binary_search_by(|r| r.name().cmp(name))
            .ok()
            .map(|i| &self.datasets[i])
    }

    pub fn names(&self) -> BTreeSet<String> {
        self.datasets.iter().map(|r| r.name().to_string()).collect()
    }
}

/// Formats a build timestamp the way it is stamped into manifests.
pub fn format_timestamp(ts: &DateTime<Utc>) -> String {
    ts.to_rfc3339_opts(SecondsFormat::Secs, true)
}

/// Parses `name_a<TAB>name_b` lines. Blank lines and `#` comments are skipped.
pub fn parse_overlap_hints(text: &str) -> Result<Vec<(String, String)>, ValidationReport> {
    let mut out = Vec::new();
    let mut report = ValidationReport::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.strip_suffix('\r').unwrap_or(line);
        if line.trim().is_empty() || line.trim_start().starts_with('#') {
            continue;
        }
        let parts: Vec<&str> = line.split('\t').map(str::trim).collect();
        match parts.as_slice() {
            [a, b] if !a.is_empty() && !b.is_empty() => out.push((a.to_string(), b.to_string())),
            _ => report.push(Diagnostic::error(
                HINTS_FIELD,
                "expected exactly two tab-separated dataset names",
                i + 1,
            )),
        }
    }
    if report.ok() {
        Ok(out)
    } else {
        Err(report)
    }
}

#[derive(Debug, Clone)]
pub struct BuildOptions<'a> {
    pub vocab: &'a Vocabulary,
    pub generated_at: DateTime<Utc>,
    pub strict: bool,
}

#[derive(Debug, Clone)]
pub struct BuildOutput {
    pub manifest: CatalogManifest,
    /// Every diagnostic produced along the way (errors exclude the offending
    /// records in non-strict mode).
    pub report: ValidationReport,
}

fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l))
        .filter(|(_, l)| !l.trim().is_empty())
}

/// parse → validate → harmonize → dedupe → sort → stamp. In strict mode any
/// error-severity diagnostic fails the build with the aggregated report.
pub fn build_catalog(
    meta_text: &str,
    annotation_texts: &[&str],
    overlap_hints: &[(String, String)],
    opts: &BuildOptions<'_>,
) -> Result<BuildOutput, ValidationReport> {
    let mut report = ValidationReport::new();

    let mut records: Vec<DatasetRecord> = Vec::new();
    let mut record_lines = Vec::new();
    for (line_no, line) in content_lines(meta_text) {
        match parse_dataset_meta_line(line, line_no) {
            Ok(p) => {
                report.extend(p.warnings);
                records.push(p.value);
                record_lines.push(line_no);
            }
            Err(r) => report.extend(r.diagnostics),
        }
    }

    let mut annotations: Vec<AnnotationEntry> = Vec::new();
    let mut annotation_lines = Vec::new();
    for text in annotation_texts {
        for (line_no, line) in content_lines(text) {
            match parse_annotation_line(line, line_no) {
                Ok(p) => {
                    report.extend(p.warnings);
                    annotations.push(p.value);
                    annotation_lines.push(line_no);
                }
                Err(r) => report.extend(r.diagnostics),
            }
        }
    }

    // Catalog checks number lines by list position; map back to file lines.
    for mut d in validate_catalog(&records, &annotations).diagnostics {
        let table = if d.field.starts_with("record.") || d.field == "tasks" {
            &annotation_lines
        } else {
            &record_lines
        };
        if let Some(line) = table.get(d.line_no.wrapping_sub(1)) {
            d.line_no = *line;
        }
        report.push(d);
    }

    let hopts = HarmonizeOptions::for_timestamp(&opts.generated_at, opts.strict);
    let mut harmonized = Vec::with_capacity(records.len());
    for (rec, line_no) in records.iter().zip(&record_lines) {
        match harmonize_record(rec, opts.vocab, hopts, *line_no) {
            Ok(p) => {
                report.extend(p.warnings);
                harmonized.push(p.value);
            }
            Err(r) => report.extend(r.diagnostics),
        }
    }

    let mut types: BTreeMap<&str, BTreeSet<AnnotationType>> = BTreeMap::new();
    for a in &annotations {
        if let Some(t) = a.media_geometry.annotation_type {
            types.entry(a.record.dataset_name.as_str()).or_default().insert(t);
        }
    }
    for h in &mut harmonized {
        if let Some(t) = types.get(h.name()) {
            h.annotation_types.extend(t.iter().copied());
        }
    }

    if opts.strict && !report.ok() {
        return Err(report);
    }

    let (datasets, duplicate_report) = dedupe(harmonized, overlap_hints);
    Ok(BuildOutput {
        manifest: CatalogManifest {
            version: MANIFEST_VERSION.to_string(),
            vocab_version: opts.vocab.version().to_string(),
            generated_at: format_timestamp(&opts.generated_at),
            datasets,
            duplicate_report,
        },
        report,
    })
}
