//! Line-delimited metadata files: dataset-level `data-meta.jsonl` records and
//! per-media `annotations_{task}.jsonl` entries.

mod annotation;
mod canonical;
mod catalog;
mod meta;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use annotation::{
    parse_annotation_line, AnnotationEntry, AnnotationType, ContextBlock, MediaGeometry,
    RecordBlock, TaskPayload,
};
pub use canonical::{canonical_serialize, format_real, round_sig6};
pub use catalog::validate_catalog;
pub use meta::{
    parse_dataset_meta_bytes, parse_dataset_meta_line, ClassCount, CountSpec, DatasetRecord,
    LabelPresence, ReleaseDate, Splits, EXTENSION_FIELDS, META_FIELDS,
};

/// Field name used for diagnostics that concern the whole line (syntax errors,
/// non-object records).
pub const RECORD_FIELD: &str = "(record)";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Diagnostic {
    pub severity: Severity,
    pub field: String,
    pub message: String,
    pub line_no: usize,
}

impl Diagnostic {
    pub fn error(field: impl Into<String>, message: impl Into<String>, line_no: usize) -> Self {
        Diagnostic {
            severity: Severity::Error,
            field: field.into(),
            message: message.into(),
            line_no,
        }
    }

    pub fn warning(field: impl Into<String>, message: impl Into<String>, line_no: usize) -> Self {
        Diagnostic {
            severity: Severity::Warning,
            field: field.into(),
            message: message.into(),
            line_no,
        }
    }

    pub fn is_error(&self) -> bool {
        self.severity == Severity::Error
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sev = match self.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        write!(f, "{sev} line {} [{}]: {}", self.line_no, self.field, self.message)
    }
}

/// Aggregated diagnostics. `ok()` holds iff there is no error-severity entry.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub diagnostics: Vec<Diagnostic>,
}

impl ValidationReport {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_diagnostics(diagnostics: Vec<Diagnostic>) -> Self {
        ValidationReport { diagnostics }
    }

    pub fn ok(&self) -> bool {
        !self.diagnostics.iter().any(Diagnostic::is_error)
    }

    pub fn push(&mut self, d: Diagnostic) {
        self.diagnostics.push(d);
    }

    pub fn extend(&mut self, ds: impl IntoIterator<Item = Diagnostic>) {
        self.diagnostics.extend(ds);
    }

    pub fn errors(&self) -> impl Iterator<Item = &Diagnostic> {
        self.diagnostics.iter().filter(|d| d.is_error())
    }

    pub fn warnings(&self) -> impl Iterator<Item = &Diagnostic> {
        self.diagnostics.iter().filter(|d| !d.is_error())
    }

    pub fn error_count(&self) -> usize {
        self.errors().count()
    }

    pub fn warning_count(&self) -> usize {
        self.warnings().count()
    }
}

/// A successfully decoded value with any non-fatal diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct Parsed<T> {
    pub value: T,
    pub warnings: Vec<Diagnostic>,
}
