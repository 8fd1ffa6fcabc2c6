use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::{Diagnostic, Parsed, ValidationReport, RECORD_FIELD};
use crate::vocab::split_terms;

/// The sixteen dataset-level fields, in wire order.
pub const META_FIELDS: [&str; 16] = [
    "dataset_name",
    "release_date",
    "homepage_url",
    "organization",
    "challenge_series",
    "license",
    "dataset_description",
    "modality_primary",
    "modality_secondary",
    "anatomical_structure",
    "disease",
    "data_volume",
    "valid_image_n",
    "label_presence",
    "task_type",
    "num_classes_per_task",
];

/// Optional keys beyond the sixteen core fields.
pub const EXTENSION_FIELDS: [&str; 3] = ["storage_size_gb", "dimension", "notes"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ReleaseDate {
    pub year: i32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub month: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub day: Option<u32>,
}

impl ReleaseDate {
    /// Accepts `YYYY`, `YYYY-MM` or `YYYY-MM-DD`.
    pub fn parse(raw: &str) -> Option<ReleaseDate> {
        let parts: Vec<&str> = raw.trim().split('-').collect();
        let digits = |s: &str, n: usize| s.len() == n && s.bytes().all(|b| b.is_ascii_digit());
        match parts.as_slice() {
            [y] if digits(y, 4) => Some(ReleaseDate {
                year: y.parse().ok()?,
                month: None,
                day: None,
            }),
            [y, m] if digits(y, 4) && digits(m, 2) => {
                let month: u32 = m.parse().ok()?;
                (1..=12).contains(&month).then_some(ReleaseDate {
                    year: y.parse().ok()?,
                    month: Some(month),
                    day: None,
                })
            }
            [y, m, d] if digits(y, 4) && digits(m, 2) && digits(d, 2) => {
                let (year, month, day) = (y.parse().ok()?, m.parse().ok()?, d.parse().ok()?);
                NaiveDate::from_ymd_opt(year, month, day)?;
                Some(ReleaseDate {
                    year,
                    month: Some(month),
                    day: Some(day),
                })
            }
            _ => None,
        }
    }
}

impl fmt::Display for ReleaseDate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04}", self.year)?;
        if let Some(m) = self.month {
            write!(f, "-{m:02}")?;
            if let Some(d) = self.day {
                write!(f, "-{d:02}")?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Splits {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub val: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test: Option<u64>,
}

impl Splits {
    /// Sum of the splits that are present.
    pub fn known_sum(&self) -> u64 {
        [self.train, self.val, self.test].iter().flatten().sum()
    }

    pub fn is_empty(&self) -> bool {
        self.train.is_none() && self.val.is_none() && self.test.is_none()
    }
}

/// A sample count with optional train/val/test breakdown.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CountSpec {
    pub total: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub splits: Option<Splits>,
}

impl CountSpec {
    pub fn total(n: u64) -> Self {
        CountSpec {
            total: Some(n),
            splits: None,
        }
    }

    /// `Some((sum, total))` when the present splits do not add up to the total.
    pub fn split_mismatch(&self) -> Option<(u64, u64)> {
        let total = self.total?;
        let splits = self.splits.as_ref()?;
        let sum = splits.known_sum();
        (sum != total).then_some((sum, total))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelPresence {
    Labeled,
    Unlabeled,
    Mixed,
}

impl LabelPresence {
    pub fn as_str(self) -> &'static str {
        match self {
            LabelPresence::Labeled => "labeled",
            LabelPresence::Unlabeled => "unlabeled",
            LabelPresence::Mixed => "mixed",
        }
    }

    /// `mixed` carries usable annotations, so it counts as labeled.
    pub fn is_labeled(self) -> bool {
        !matches!(self, LabelPresence::Unlabeled)
    }

    pub fn parse(raw: &str) -> Option<Self> {
        match raw.trim().to_ascii_lowercase().as_str() {
            "labeled" => Some(LabelPresence::Labeled),
            "unlabeled" => Some(LabelPresence::Unlabeled),
            "mixed" => Some(LabelPresence::Mixed),
            _ => None,
        }
    }
}

/// Per-task class count plus any extra settings carried alongside it.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassCount {
    pub num_classes: Option<u64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub settings: BTreeMap<String, Value>,
}

/// One dataset's metadata row as read from `data-meta.jsonl`. Vocabulary
/// fields hold the raw terms; normalization happens during harmonization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub dataset_name: String,
    pub release_date: Option<ReleaseDate>,
    pub homepage_url: Option<String>,
    pub organization: Vec<String>,
    pub challenge_series: Option<String>,
    pub license: Option<String>,
    pub dataset_description: Option<String>,
    pub modality_primary: BTreeSet<String>,
    pub modality_secondary: Option<String>,
    pub anatomical_structure: Vec<String>,
    pub disease: Option<String>,
    pub data_volume: CountSpec,
    pub valid_image_n: CountSpec,
    pub label_presence: LabelPresence,
    pub task_type: BTreeSet<String>,
    pub num_classes_per_task: BTreeMap<String, ClassCount>,
    pub storage_size_gb: Option<f64>,
    pub dimension: Option<String>,
    pub notes: Option<String>,
}

impl DatasetRecord {
    /// A record with every optional field unknown.
    pub fn new(name: impl Into<String>, label_presence: LabelPresence) -> Self {
        DatasetRecord {
            dataset_name: name.into(),
            release_date: None,
            homepage_url: None,
            organization: Vec::new(),
            challenge_series: None,
            license: None,
            dataset_description: None,
            modality_primary: BTreeSet::new(),
            modality_secondary: None,
            anatomical_structure: Vec::new(),
            disease: None,
            data_volume: CountSpec::default(),
            valid_image_n: CountSpec::default(),
            label_presence,
            task_type: BTreeSet::new(),
            num_classes_per_task: BTreeMap::new(),
            storage_size_gb: None,
            dimension: None,
            notes: None,
        }
    }
}

pub fn parse_dataset_meta_bytes(
    bytes: &[u8],
    line_no: usize,
) -> Result<Parsed<DatasetRecord>, ValidationReport> {
    match std::str::from_utf8(bytes) {
        Ok(text) => parse_dataset_meta_line(text, line_no),
        Err(e) => Err(ValidationReport::from_diagnostics(vec![Diagnostic::error(
            RECORD_FIELD,
            format!("invalid UTF-8: {e}"),
            line_no,
        )])),
    }
}

pub fn parse_dataset_meta_line(
    text: &str,
    line_no: usize,
) -> Result<Parsed<DatasetRecord>, ValidationReport> {
    let text = text.strip_suffix('\r').unwrap_or(text);
    let value: Value = match serde_json::from_str(text) {
        Ok(v) => v,
        Err(e) => {
            return Err(ValidationReport::from_diagnostics(vec![Diagnostic::error(
                RECORD_FIELD,
                format!("malformed JSON: {e}"),
                line_no,
            )]))
        }
    };
    let Value::Object(obj) = value else {
        return Err(ValidationReport::from_diagnostics(vec![Diagnostic::error(
            RECORD_FIELD,
            "record must be a JSON object",
            line_no,
        )]));
    };

    let mut r = FieldReader::new(&obj, line_no);
    for key in obj.keys() {
        if !META_FIELDS.contains(&key.as_str()) && !EXTENSION_FIELDS.contains(&key.as_str()) {
            r.warn(key, format!("unknown field '{key}' ignored"));
        }
    }

    let dataset_name = r.required_name();
    let release_date = r.release_date();
    let homepage_url = r.homepage_url();
    let organization = r.string_list("organization", false);
    let challenge_series = r.opt_string("challenge_series");
    let license = r.opt_string("license");
    let dataset_description = r.opt_string("dataset_description");
    let modality_primary = r.term_set("modality_primary");
    let modality_secondary = r.opt_string("modality_secondary");
    let anatomical_structure = r.string_list("anatomical_structure", true);
    let disease = r.opt_string("disease");
    let data_volume = r.count_spec("data_volume");
    let valid_image_n = r.count_spec("valid_image_n");
    let label_presence = r.label_presence();
    let task_type = r.term_set("task_type");
    let num_classes_per_task = r.class_counts();
    let storage_size_gb = r.storage();
    let dimension = r.dimension();
    let notes = r.opt_string("notes");

    if let (Some(valid), Some(volume)) = (valid_image_n.total, data_volume.total) {
        if valid > volume {
            r.error(
                "valid_image_n",
                format!("valid_image_n total {valid} exceeds data_volume total {volume}"),
            );
        }
    }

    let FieldReader {
        errors, warnings, ..
    } = r;
    match (dataset_name, label_presence) {
        (Some(dataset_name), Some(label_presence)) if errors.is_empty() => Ok(Parsed {
            value: DatasetRecord {
                dataset_name,
                release_date,
                homepage_url,
                organization,
                challenge_series,
                license,
                dataset_description,
                modality_primary,
                modality_secondary,
                anatomical_structure,
                disease,
                data_volume,
                valid_image_n,
                label_presence,
                task_type,
                num_classes_per_task,
                storage_size_gb,
                dimension,
                notes,
            },
            warnings,
        }),
        _ => {
            let mut report = ValidationReport::from_diagnostics(errors);
            report.extend(warnings);
            Err(report)
        }
    }
}

fn is_na(s: &str) -> bool {
    let t = s.trim();
    t.is_empty() || t.eq_ignore_ascii_case("na")
}

fn json_kind(v: &Value) -> &'static str {
    match v {
        Value::Null => "null",
        Value::Bool(_) => "boolean",
        Value::Number(_) => "number",
        Value::String(_) => "string",
        Value::Array(_) => "array",
        Value::Object(_) => "object",
    }
}

fn looks_like_doi(s: &str) -> bool {
    let s = s.trim();
    let body = s
        .strip_prefix("doi:")
        .or_else(|| s.strip_prefix("DOI:"))
        .unwrap_or(s);
    body.starts_with("10.") && body.contains('/') && !body.contains(char::is_whitespace)
}

struct FieldReader<'a> {
    obj: &'a Map<String, Value>,
    line_no: usize,
    errors: Vec<Diagnostic>,
    warnings: Vec<Diagnostic>,
}

impl<'a> FieldReader<'a> {
    fn new(obj: &'a Map<String, Value>, line_no: usize) -> Self {
        FieldReader {
            obj,
            line_no,
            errors: Vec::new(),
            warnings: Vec::new(),
        }
    }

    fn error(&mut self, field: &str, message: impl Into<String>) {
        self.errors
            .push(Diagnostic::error(field, message, self.line_no));
    }

    fn warn(&mut self, field: &str, message: impl Into<String>) {
        self.warnings
            .push(Diagnostic::warning(field, message, self.line_no));
    }

    /// Present and non-null.
    fn get(&self, field: &str) -> Option<&'a Value> {
        self.obj.get(field).filter(|v| !v.is_null())
    }

    fn required_name(&mut self) -> Option<String> {
        match self.get("dataset_name") {
            None => {
                self.error("dataset_name", "missing required field");
                None
            }
            Some(Value::String(s)) if !s.trim().is_empty() => Some(s.trim().to_string()),
            Some(Value::String(_)) => {
                self.error("dataset_name", "must not be empty");
                None
            }
            Some(v) => {
                self.error("dataset_name", format!("expected a string, got {}", json_kind(v)));
                None
            }
        }
    }

    fn opt_string(&mut self, field: &str) -> Option<String> {
        match self.get(field)? {
            Value::String(s) if is_na(s) => None,
            Value::String(s) => Some(s.clone()),
            v => {
                self.error(field, format!("expected a string, got {}", json_kind(v)));
                None
            }
        }
    }

    fn release_date(&mut self) -> Option<ReleaseDate> {
        match self.get("release_date")? {
            Value::String(s) if is_na(s) => None,
            Value::String(s) => {
                let parsed = ReleaseDate::parse(s);
                if parsed.is_none() {
                    self.error(
                        "release_date",
                        format!("'{s}' is not YYYY, YYYY-MM, YYYY-MM-DD or NA"),
                    );
                }
                parsed
            }
            Value::Number(n) => match n.as_u64().filter(|y| (1000..=9999).contains(y)) {
                Some(y) => Some(ReleaseDate {
                    year: y as i32,
                    month: None,
                    day: None,
                }),
                None => {
                    self.error("release_date", format!("'{n}' is not a four-digit year"));
                    None
                }
            },
            v => {
                self.error("release_date", format!("expected a date string, got {}", json_kind(v)));
                None
            }
        }
    }

    fn homepage_url(&mut self) -> Option<String> {
        let raw = self.opt_string("homepage_url")?;
        let trimmed = raw.trim();
        let valid_url = url::Url::parse(trimmed)
            .map(|u| matches!(u.scheme(), "http" | "https" | "ftp") && u.has_host())
            .unwrap_or(false);
        if valid_url || looks_like_doi(trimmed) {
            Some(raw)
        } else {
            self.error("homepage_url", format!("'{raw}' is not an absolute URL or DOI"));
            None
        }
    }

    /// String or array of strings, kept in order. `split` breaks a bare
    /// string on commas.
    fn string_list(&mut self, field: &str, split: bool) -> Vec<String> {
        match self.get(field) {
            None => Vec::new(),
            Some(Value::String(s)) if is_na(s) => Vec::new(),
            Some(Value::String(s)) if split => split_terms(s),
            Some(Value::String(s)) => vec![s.clone()],
            Some(Value::Array(items)) => {
                let mut out = Vec::with_capacity(items.len());
                for (i, item) in items.iter().enumerate() {
                    match item {
                        Value::String(s) if !s.trim().is_empty() => out.push(s.clone()),
                        Value::String(_) => self.error(field, format!("entry {i} is empty")),
                        v => self.error(
                            field,
                            format!("entry {i}: expected a string, got {}", json_kind(v)),
                        ),
                    }
                }
                out
            }
            Some(v) => {
                self.error(
                    field,
                    format!("expected a string or array of strings, got {}", json_kind(v)),
                );
                Vec::new()
            }
        }
    }

    /// Raw vocabulary terms: comma-split, trimmed, deduplicated, sorted.
    fn term_set(&mut self, field: &str) -> BTreeSet<String> {
        let raw = match self.get(field) {
            None => return BTreeSet::new(),
            Some(Value::String(s)) => vec![s.clone()],
            Some(Value::Array(_)) => self.string_list(field, false),
            Some(v) => {
                self.error(
                    field,
                    format!("expected a string or array of strings, got {}", json_kind(v)),
                );
                return BTreeSet::new();
            }
        };
        raw.iter().flat_map(|s| split_terms(s)).collect()
    }

    fn count(&mut self, field: &str, v: &Value) -> Option<u64> {
        match v {
            Value::Null => None,
            Value::Number(n) => match n.as_u64() {
                Some(n) => Some(n),
                None => {
                    self.error(field, format!("'{n}' is not a non-negative integer"));
                    None
                }
            },
            Value::String(s) if is_na(s) => None,
            Value::String(s) => {
                self.error(field, format!("'{s}' is not an integer count"));
                None
            }
            v => {
                self.error(field, format!("expected an integer, got {}", json_kind(v)));
                None
            }
        }
    }

    fn count_spec(&mut self, field: &str) -> CountSpec {
        match self.get(field) {
            None => CountSpec::default(),
            Some(Value::Object(map)) => {
                let mut spec = CountSpec::default();
                let mut splits = Splits::default();
                let mut any_split = false;
                for (key, v) in map {
                    let sub = format!("{field}.{key}");
                    match key.as_str() {
                        "total" => spec.total = self.count(field, v),
                        "train" => {
                            splits.train = self.count(field, v);
                            any_split |= splits.train.is_some();
                        }
                        "val" => {
                            splits.val = self.count(field, v);
                            any_split |= splits.val.is_some();
                        }
                        "test" => {
                            splits.test = self.count(field, v);
                            any_split |= splits.test.is_some();
                        }
                        _ => self.warn(&sub, format!("unknown key '{key}' in {field} ignored")),
                    }
                }
                if any_split {
                    spec.splits = Some(splits);
                }
                spec
            }
            Some(v) => CountSpec {
                total: self.count(field, v),
                splits: None,
            },
        }
    }

    fn label_presence(&mut self) -> Option<LabelPresence> {
        match self.get("label_presence") {
            None => {
                self.error("label_presence", "missing required field");
                None
            }
            Some(Value::String(s)) => {
                let parsed = LabelPresence::parse(s);
                if parsed.is_none() {
                    self.error(
                        "label_presence",
                        format!("'{s}' is not one of labeled, unlabeled, mixed"),
                    );
                }
                parsed
            }
            Some(v) => {
                self.error("label_presence", format!("expected a string, got {}", json_kind(v)));
                None
            }
        }
    }

    fn class_counts(&mut self) -> BTreeMap<String, ClassCount> {
        const FIELD: &str = "num_classes_per_task";
        let mut out = BTreeMap::new();
        let map = match self.get(FIELD) {
            None => return out,
            Some(Value::String(s)) if is_na(s) => return out,
            Some(Value::Object(map)) => map,
            Some(v) => {
                self.error(FIELD, format!("expected an object, got {}", json_kind(v)));
                return out;
            }
        };
        for (task, v) in map {
            let entry = match v {
                Value::Object(inner) => {
                    let mut cc = ClassCount::default();
                    for (k, iv) in inner {
                        if k == "num_classes" {
                            cc.num_classes = self.count(FIELD, iv);
                        } else {
                            cc.settings.insert(k.clone(), iv.clone());
                        }
                    }
                    cc
                }
                other => ClassCount {
                    num_classes: self.count(FIELD, other),
                    settings: BTreeMap::new(),
                },
            };
            out.insert(task.clone(), entry);
        }
        out
    }

    fn storage(&mut self) -> Option<f64> {
        const FIELD: &str = "storage_size_gb";
        match self.get(FIELD)? {
            Value::String(s) if is_na(s) => None,
            Value::Number(n) => match n.as_f64().filter(|x| x.is_finite() && *x >= 0.0) {
                Some(x) => Some(super::canonical::round_sig6(x)),
                None => {
                    self.error(FIELD, format!("'{n}' is not a non-negative number"));
                    None
                }
            },
            v => {
                self.error(FIELD, format!("expected a number, got {}", json_kind(v)));
                None
            }
        }
    }

    fn dimension(&mut self) -> Option<String> {
        match self.get("dimension")? {
            Value::String(s) if is_na(s) => None,
            Value::String(s) => Some(s.clone()),
            Value::Array(_) => {
                let items = self.string_list("dimension", false);
                (!items.is_empty()).then(|| items.join(", "))
            }
            v => {
                self.error("dimension", format!("expected a string, got {}", json_kind(v)));
                None
            }
        }
    }
}
