//! Controlled vocabularies: modality codes, dimensions, task categories,
//! clinical applications and the hierarchical anatomy table.
//!
//! Tables are loaded from a plain-text mapping file. Each non-comment line is
//! `raw_term<TAB>code[<TAB>qualifier]`, grouped under `[modality]`, `[task]`,
//! `[anatomy]` and `[measurement]` section headers. The SHA-256 of the file
//! content is the vocabulary version stamped into manifests.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// The vocabulary file compiled into the binary.
pub const BUILTIN_VOCAB: &str = include_str!("../assets/vocab.tsv");

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum VocabError {
    #[error("invalid input: empty term")]
    InvalidInput,
    #[error("invalid dimension token '{0}'")]
    InvalidDimensionToken(String),
    #[error("unknown task '{0}'")]
    UnknownTask(String),
    #[error("vocabulary line {line}: {message}")]
    Table { line: usize, message: String },
    #[error("cannot read vocabulary file: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Modality {
    Xray,
    Ct,
    Mri,
    Ultrasound,
    Pet,
    Pathology,
    Endoscopy,
    Fundus,
    Dermoscopy,
    Mammography,
    Ffa,
    Oct,
    Microscopy,
    Infrared,
    Ecg,
    Eeg,
    Emg,
    Dsa,
    Cbct,
    Octa,
    Rgb,
    Other,
}

impl Modality {
    pub const ALL: [Modality; 22] = [
        Modality::Xray,
        Modality::Ct,
        Modality::Mri,
        Modality::Ultrasound,
        Modality::Pet,
        Modality::Pathology,
        Modality::Endoscopy,
        Modality::Fundus,
        Modality::Dermoscopy,
        Modality::Mammography,
        Modality::Ffa,
        Modality::Oct,
        Modality::Microscopy,
        Modality::Infrared,
        Modality::Ecg,
        Modality::Eeg,
        Modality::Emg,
        Modality::Dsa,
        Modality::Cbct,
        Modality::Octa,
        Modality::Rgb,
        Modality::Other,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Xray => "XRAY",
            Modality::Ct => "CT",
            Modality::Mri => "MRI",
            Modality::Ultrasound => "ULTRASOUND",
            Modality::Pet => "PET",
            Modality::Pathology => "PATHOLOGY",
            Modality::Endoscopy => "ENDOSCOPY",
            Modality::Fundus => "FUNDUS",
            Modality::Dermoscopy => "DERMOSCOPY",
            Modality::Mammography => "MAMMOGRAPHY",
            Modality::Ffa => "FFA",
            Modality::Oct => "OCT",
            Modality::Microscopy => "MICROSCOPY",
            Modality::Infrared => "INFRARED",
            Modality::Ecg => "ECG",
            Modality::Eeg => "EEG",
            Modality::Emg => "EMG",
            Modality::Dsa => "DSA",
            Modality::Cbct => "CBCT",
            Modality::Octa => "OCTA",
            Modality::Rgb => "RGB",
            Modality::Other => "OTHER",
        }
    }

    /// Short label used in human-readable summary tables.
    pub fn display_label(self) -> &'static str {
        match self {
            Modality::Xray => "X-ray",
            Modality::Mri => "MR",
            Modality::Ultrasound => "US",
            Modality::Pathology => "Pathology",
            Modality::Endoscopy => "Endoscopy",
            Modality::Fundus => "Fundus",
            Modality::Dermoscopy => "Dermoscopy",
            Modality::Mammography => "Mammography",
            Modality::Microscopy => "Microscopy",
            Modality::Infrared => "Infrared",
            Modality::Other => "Other",
            other => other.as_str(),
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Modality {
    type Err = String;

    /// Parses a canonical code (`"CT"`, `"MRI"`, ...). Aliases are not accepted here.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Modality::ALL
            .iter()
            .copied()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| s.to_string())
    }
}

/// A modality code plus an optional protocol refinement (e.g. `WSI`, `T1`).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ModalityTerm {
    pub code: Modality,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subtype: Option<String>,
}

/// Result of a modality lookup. `unmapped` is the diagnostic for terms that
/// fell through the alias table and degraded to `OTHER`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModalityLookup {
    pub term: ModalityTerm,
    pub unmapped: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Dimension {
    #[serde(rename = "2D")]
    D2,
    #[serde(rename = "3D")]
    D3,
    #[serde(rename = "VIDEO")]
    Video,
}

impl Dimension {
    pub const ALL: [Dimension; 3] = [Dimension::D2, Dimension::D3, Dimension::Video];

    pub fn as_str(self) -> &'static str {
        match self {
            Dimension::D2 => "2D",
            Dimension::D3 => "3D",
            Dimension::Video => "VIDEO",
        }
    }

    fn from_token(token: &str) -> Option<Dimension> {
        match token.trim().to_ascii_lowercase().as_str() {
            "2d" | "d2" => Some(Dimension::D2),
            "3d" | "d3" => Some(Dimension::D3),
            "video" => Some(Dimension::Video),
            _ => None,
        }
    }
}

impl fmt::Display for Dimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Dimension {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Dimension::from_token(s).ok_or_else(|| s.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskCode {
    Segmentation,
    Classification,
    Registration,
    Generation,
    Detection,
    Tracking,
    Reconstruction,
    Regression,
    Localization,
    Vqa,
    Captioning,
    ReportGeneration,
}

impl TaskCode {
    pub const ALL: [TaskCode; 12] = [
        TaskCode::Segmentation,
        TaskCode::Classification,
        TaskCode::Registration,
        TaskCode::Generation,
        TaskCode::Detection,
        TaskCode::Tracking,
        TaskCode::Reconstruction,
        TaskCode::Regression,
        TaskCode::Localization,
        TaskCode::Vqa,
        TaskCode::Captioning,
        TaskCode::ReportGeneration,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskCode::Segmentation => "segmentation",
            TaskCode::Classification => "classification",
            TaskCode::Registration => "registration",
            TaskCode::Generation => "generation",
            TaskCode::Detection => "detection",
            TaskCode::Tracking => "tracking",
            TaskCode::Reconstruction => "reconstruction",
            TaskCode::Regression => "regression",
            TaskCode::Localization => "localization",
            TaskCode::Vqa => "vqa",
            TaskCode::Captioning => "captioning",
            TaskCode::ReportGeneration => "report_generation",
        }
    }
}

impl fmt::Display for TaskCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskCode {
    type Err = String;

    /// Canonical lowercase name only.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TaskCode::ALL
            .iter()
            .copied()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| s.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClinicalApplication {
    Diagnosis,
    SeverityGrading,
    TreatmentResponse,
    LesionDelineation,
    VolumetricQuantification,
    TherapyPlanning,
    DiseaseScreening,
    BiomarkerQuantification,
    Other,
}

/// Alias context for ambiguous task abbreviations such as `Reg`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TaskContext {
    #[default]
    Default,
    /// The record's disease/structure text names a measurement target.
    Measurement,
}

impl TaskContext {
    fn key(self) -> Option<&'static str> {
        match self {
            TaskContext::Default => None,
            TaskContext::Measurement => Some("measurement"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaskLookup {
    pub task: TaskCode,
    /// Set when an alias (rather than the canonical name) produced the code.
    pub note: Option<String>,
}

/// Top-level anatomy regions. Every path starts with one of these.
pub const ANATOMY_ROOTS: [&str; 11] = [
    "Eye",
    "Brain",
    "HeadNeck",
    "Thorax",
    "Abdomen",
    "Pelvis",
    "Musculoskeletal",
    "Skin",
    "Cell",
    "FullBody",
    "Unknown",
];

/// Canonical spelling of a root label, matched case-insensitively.
pub fn canonical_root(label: &str) -> Option<&'static str> {
    let label = label.trim();
    ANATOMY_ROOTS
        .iter()
        .copied()
        .find(|r| r.eq_ignore_ascii_case(label))
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct AnatomyPath {
    pub levels: Vec<String>,
    pub source_term: String,
}

impl AnatomyPath {
    pub fn unknown(source_term: &str) -> Self {
        AnatomyPath {
            levels: vec!["Unknown".to_string()],
            source_term: source_term.to_string(),
        }
    }

    pub fn root(&self) -> &str {
        &self.levels[0]
    }

    pub fn leaf(&self) -> &str {
        self.levels.last().map(String::as_str).unwrap_or("Unknown")
    }
}

/// Case-folded, whitespace-collapsed lookup key.
pub fn fold_term(raw: &str) -> String {
    raw.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

/// Splits on commas that are not inside parentheses.
pub fn split_terms(raw: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut depth = 0usize;
    let mut buf = String::new();
    for ch in raw.chars() {
        match ch {
            '(' => {
                depth += 1;
                buf.push(ch);
            }
            ')' => {
                depth = depth.saturating_sub(1);
                buf.push(ch);
            }
            ',' if depth == 0 => {
                out.push(std::mem::take(&mut buf));
            }
            _ => buf.push(ch),
        }
    }
    out.push(buf);
    out.into_iter()
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .collect()
}

/// Splits `Base (qual)` or `Base:qual` into base and qualifier.
fn split_qualifier(raw: &str) -> Option<(&str, &str)> {
    let raw = raw.trim();
    if let Some(stripped) = raw.strip_suffix(')') {
        if let Some(open) = stripped.rfind('(') {
            let base = stripped[..open].trim();
            let qual = stripped[open + 1..].trim();
            if !base.is_empty() && !qual.is_empty() {
                return Some((base, qual));
            }
        }
    }
    if let Some((base, qual)) = raw.split_once(':') {
        let (base, qual) = (base.trim(), qual.trim());
        if !base.is_empty() && !qual.is_empty() {
            return Some((base, qual));
        }
    }
    None
}

#[derive(Debug, Clone)]
pub struct Vocabulary {
    version: String,
    modalities: HashMap<String, ModalityTerm>,
    tasks: HashMap<String, TaskCode>,
    context_tasks: HashMap<(String, String), TaskCode>,
    anatomy: HashMap<String, Vec<String>>,
    measurement_keywords: Vec<String>,
}

#[derive(Clone, Copy, PartialEq)]
enum Section {
    None,
    Modality,
    Task,
    Anatomy,
    Measurement,
}

impl Vocabulary {
    /// The vocabulary compiled into the crate.
    pub fn builtin() -> &'static Vocabulary {
        static BUILTIN: OnceLock<Vocabulary> = OnceLock::new();
        BUILTIN.get_or_init(|| {
            Vocabulary::parse(BUILTIN_VOCAB).expect("builtin vocabulary table is well-formed")
        })
    }

    pub fn from_path(path: &Path) -> Result<Vocabulary, VocabError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| VocabError::Io(format!("{}: {e}", path.display())))?;
        Vocabulary::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Vocabulary, VocabError> {
        let digest = Sha256::digest(text.as_bytes());
        let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
        let mut vocab = Vocabulary {
            version: format!("sha256:{hex}"),
            modalities: HashMap::new(),
            tasks: HashMap::new(),
            context_tasks: HashMap::new(),
            anatomy: HashMap::new(),
            measurement_keywords: Vec::new(),
        };
        let mut section = Section::None;
        for (idx, line) in text.lines().enumerate() {
            let line_no = idx + 1;
            let err = |message: String| VocabError::Table {
                line: line_no,
                message,
            };
            let trimmed = line.trim_end_matches('\r');
            if trimmed.trim().is_empty() || trimmed.trim_start().starts_with('#') {
                continue;
            }
            if let Some(name) = trimmed
                .trim()
                .strip_prefix('[')
                .and_then(|s| s.strip_suffix(']'))
            {
                section = match name {
                    "modality" => Section::Modality,
                    "task" => Section::Task,
                    "anatomy" => Section::Anatomy,
                    "measurement" => Section::Measurement,
                    other => return Err(err(format!("unknown section [{other}]"))),
                };
                continue;
            }
            let cols: Vec<&str> = trimmed.split('\t').collect();
            match section {
                Section::None => return Err(err("entry before any section header".into())),
                Section::Measurement => {
                    vocab.measurement_keywords.push(fold_term(cols[0]));
                }
                _ if cols.len() < 2 || cols.len() > 3 => {
                    return Err(err(format!("expected 2 or 3 tab-separated columns, got {}", cols.len())));
                }
                Section::Modality => {
                    let code = Modality::from_str(cols[1].trim())
                        .map_err(|c| err(format!("unknown modality code '{c}'")))?;
                    let subtype = cols.get(2).map(|s| s.trim().to_string()).filter(|s| !s.is_empty());
                    if subtype.is_some() && split_qualifier(cols[0]).is_none() {
                        return Err(err(format!(
                            "subtype on unqualified term '{}'",
                            cols[0].trim()
                        )));
                    }
                    vocab
                        .modalities
                        .insert(fold_term(cols[0]), ModalityTerm { code, subtype });
                }
                Section::Task => {
                    let task = TaskCode::from_str(cols[1].trim())
                        .map_err(|c| err(format!("unknown task code '{c}'")))?;
                    match cols.get(2).map(|s| s.trim()).filter(|s| !s.is_empty()) {
                        Some(ctx) => {
                            vocab
                                .context_tasks
                                .insert((fold_term(cols[0]), ctx.to_string()), task);
                        }
                        None => {
                            vocab.tasks.insert(fold_term(cols[0]), task);
                        }
                    }
                }
                Section::Anatomy => {
                    let levels: Vec<String> = cols[1]
                        .split('|')
                        .map(|s| s.trim().to_string())
                        .collect();
                    if levels.iter().any(String::is_empty) {
                        return Err(err("empty anatomy level".into()));
                    }
                    let Some(root) = canonical_root(&levels[0]) else {
                        return Err(err(format!("'{}' is not an anatomy root", levels[0])));
                    };
                    if root != levels[0] {
                        return Err(err(format!("root must be spelled '{root}'")));
                    }
                    if levels.windows(2).any(|w| w[0] == w[1]) {
                        return Err(err("duplicate consecutive anatomy labels".into()));
                    }
                    vocab.anatomy.insert(fold_term(cols[0]), levels);
                }
            }
        }
        vocab.close_anatomy()?;
        Ok(vocab)
    }

    /// Makes every root and every leaf label resolvable to its own path, so
    /// classifying a leaf reproduces the leaf.
    fn close_anatomy(&mut self) -> Result<(), VocabError> {
        for root in ANATOMY_ROOTS {
            self.anatomy
                .entry(fold_term(root))
                .or_insert_with(|| vec![root.to_string()]);
        }
        let entries: Vec<Vec<String>> = self.anatomy.values().cloned().collect();
        for levels in entries {
            let leaf = levels.last().cloned().unwrap_or_default();
            match self.anatomy.get(&fold_term(&leaf)) {
                None => {
                    self.anatomy.insert(fold_term(&leaf), levels);
                }
                Some(existing) if existing.last() != Some(&leaf) => {
                    return Err(VocabError::Table {
                        line: 0,
                        message: format!(
                            "leaf '{leaf}' is also an alias for '{}'",
                            existing.join(" > ")
                        ),
                    });
                }
                Some(_) => {}
            }
        }
        Ok(())
    }

    pub fn version(&self) -> &str {
        &self.version
    }

    pub fn modality_terms(&self) -> impl Iterator<Item = &str> {
        self.modalities.keys().map(String::as_str)
    }

    pub fn anatomy_terms(&self) -> impl Iterator<Item = (&str, &[String])> {
        self.anatomy.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    pub fn normalize_modality(&self, raw: &str) -> Result<ModalityLookup, VocabError> {
        let trimmed = raw.trim();
        if trimmed.is_empty() {
            return Err(VocabError::InvalidInput);
        }
        if let Some(term) = self.modalities.get(&fold_term(trimmed)) {
            return Ok(ModalityLookup {
                term: term.clone(),
                unmapped: false,
            });
        }
        if let Some((base, qual)) = split_qualifier(trimmed) {
            if let Some(term) = self.modalities.get(&fold_term(base)) {
                return Ok(ModalityLookup {
                    term: ModalityTerm {
                        code: term.code,
                        subtype: Some(qual.to_string()),
                    },
                    unmapped: false,
                });
            }
        }
        Ok(ModalityLookup {
            term: ModalityTerm {
                code: Modality::Other,
                subtype: Some(trimmed.to_string()),
            },
            unmapped: true,
        })
    }

    /// Splits on separators `,` `+` `/` and maps each token.
    pub fn normalize_dimension(&self, raw: &str) -> Result<BTreeSet<Dimension>, VocabError> {
        if raw.trim().is_empty() {
            return Err(VocabError::InvalidInput);
        }
        let mut out = BTreeSet::new();
        for token in raw.split([',', '+', '/']) {
            let token = token.trim();
            if token.is_empty() {
                continue;
            }
            let dim = Dimension::from_token(token)
                .ok_or_else(|| VocabError::InvalidDimensionToken(token.to_string()))?;
            out.insert(dim);
        }
        if out.is_empty() {
            return Err(VocabError::InvalidInput);
        }
        Ok(out)
    }

    /// Total: unknown terms and `NA` map to `[Unknown]`.
    pub fn classify_anatomy(&self, raw: &str) -> AnatomyPath {
        let key = fold_term(raw);
        if key.is_empty() || key == "na" {
            return AnatomyPath::unknown(raw);
        }
        match self.anatomy.get(&key) {
            Some(levels) => AnatomyPath {
                levels: levels.clone(),
                source_term: raw.to_string(),
            },
            None => AnatomyPath::unknown(raw),
        }
    }

    /// One path per comma-separated term, deduplicated by levels.
    pub fn classify_anatomy_all(&self, raw: &str) -> Vec<AnatomyPath> {
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for term in split_terms(raw) {
            let path = self.classify_anatomy(&term);
            if seen.insert(path.levels.clone()) {
                out.push(path);
            }
        }
        if out.is_empty() {
            out.push(AnatomyPath::unknown(raw));
        }
        out
    }

    pub fn normalize_task(&self, raw: &str) -> Result<TaskLookup, VocabError> {
        self.normalize_task_in(raw, TaskContext::Default)
    }

    pub fn normalize_task_in(&self, raw: &str, ctx: TaskContext) -> Result<TaskLookup, VocabError> {
        let trimmed = raw.trim();
        if trimmed.is_empty() {
            return Err(VocabError::InvalidInput);
        }
        let key = fold_term(trimmed);
        if let Ok(task) = TaskCode::from_str(&key.replace(' ', "_")) {
            return Ok(TaskLookup { task, note: None });
        }
        let ambiguous = self.context_tasks.keys().any(|(term, _)| *term == key);
        if let Some(ctx_key) = ctx.key() {
            if let Some(task) = self.context_tasks.get(&(key.clone(), ctx_key.to_string())) {
                return Ok(TaskLookup {
                    task: *task,
                    note: Some(format!("task '{trimmed}' -> {task} ({ctx_key} context)")),
                });
            }
        }
        match self.tasks.get(&key) {
            Some(task) => {
                let note = if ambiguous {
                    format!("task '{trimmed}' -> {task} (default context)")
                } else {
                    format!("task '{trimmed}' -> {task}")
                };
                Ok(TaskLookup {
                    task: *task,
                    note: Some(note),
                })
            }
            None => Err(VocabError::UnknownTask(trimmed.to_string())),
        }
    }

    /// Measurement context when any keyword appears as a whole word sequence.
    pub fn task_context_for(&self, texts: &[&str]) -> TaskContext {
        let haystack = format!(
            " {} ",
            texts
                .iter()
                .map(|t| {
                    t.chars()
                        .map(|c| if c.is_alphanumeric() { c } else { ' ' })
                        .collect::<String>()
                })
                .collect::<Vec<_>>()
                .join(" ")
        );
        let haystack = fold_term(&haystack);
        let haystack = format!(" {haystack} ");
        if self
            .measurement_keywords
            .iter()
            .any(|kw| haystack.contains(&format!(" {kw} ")))
        {
            TaskContext::Measurement
        } else {
            TaskContext::Default
        }
    }
}

/// Static task → clinical application table.
pub fn clinical_applications_for(task: TaskCode) -> &'static [ClinicalApplication] {
    use ClinicalApplication::*;
    match task {
        TaskCode::Classification => &[Diagnosis, SeverityGrading, TreatmentResponse],
        TaskCode::Segmentation => &[LesionDelineation, VolumetricQuantification, TherapyPlanning],
        TaskCode::Detection => &[DiseaseScreening],
        TaskCode::Regression => &[BiomarkerQuantification],
        _ => &[Other],
    }
}
