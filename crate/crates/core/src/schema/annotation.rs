use std::collections::BTreeMap;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use super::{Diagnostic, Parsed, ValidationReport, RECORD_FIELD};
use crate::vocab::{Dimension, TaskCode};

const BLOCKS: [&str; 4] = ["record", "context", "media_geometry", "tasks"];
const CONTEXT_KEYS: [&str; 7] = ["subject_id", "age", "sex", "site", "modality", "anatomy", "free_text"];
const GEOMETRY_OPTIONAL: [&str; 6] = [
    "pixel_spacing",
    "orientation",
    "slice_index",
    "frame_index",
    "timestamp",
    "camera",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnnotationType {
    Landmark,
    Mask,
    Box,
    Polygon,
    Keypoints,
    ClassLabel,
    Text,
    Other,
}

impl AnnotationType {
    pub const ALL: [AnnotationType; 8] = [
        AnnotationType::Landmark,
        AnnotationType::Mask,
        AnnotationType::Box,
        AnnotationType::Polygon,
        AnnotationType::Keypoints,
        AnnotationType::ClassLabel,
        AnnotationType::Text,
        AnnotationType::Other,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AnnotationType::Landmark => "landmark",
            AnnotationType::Mask => "mask",
            AnnotationType::Box => "box",
            AnnotationType::Polygon => "polygon",
            AnnotationType::Keypoints => "keypoints",
            AnnotationType::ClassLabel => "class_label",
            AnnotationType::Text => "text",
            AnnotationType::Other => "other",
        }
    }
}

impl FromStr for AnnotationType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = s.trim().to_ascii_lowercase();
        AnnotationType::ALL
            .iter()
            .copied()
            .find(|t| t.as_str() == key)
            .ok_or_else(|| s.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordBlock {
    pub dataset_name: String,
    pub image_path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_id: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ContextBlock {
    pub subject_id: Option<String>,
    pub age: Option<String>,
    pub sex: Option<String>,
    pub site: Option<String>,
    pub modality: Option<String>,
    pub anatomy: Option<String>,
    #[serde(default)]
    pub extra: BTreeMap<String, Value>,
    pub free_text: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MediaGeometry {
    pub task_type: TaskCode,
    pub leaf_task: String,
    pub annotation_type: Option<AnnotationType>,
    pub dimension: Option<Dimension>,
    /// `pixel_spacing`, `orientation`, `slice_index`, `frame_index`,
    /// `timestamp`, `camera` — kept verbatim when present.
    #[serde(default)]
    pub optional: BTreeMap<String, Value>,
}

/// A task payload. `schema_variant` is kept verbatim; every other key is
/// carried untouched in `fields`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TaskPayload {
    pub schema_variant: Option<String>,
    pub fields: BTreeMap<String, Value>,
}

impl TaskPayload {
    /// Length of the first array-valued field, e.g. the number of boxes.
    pub fn item_count(&self) -> Option<usize> {
        self.fields
            .values()
            .find_map(|v| v.as_array().map(Vec::len))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationEntry {
    pub record: RecordBlock,
    pub context: ContextBlock,
    pub media_geometry: MediaGeometry,
    pub tasks: BTreeMap<String, TaskPayload>,
}

impl AnnotationEntry {
    /// Payload for the declared task type.
    pub fn primary_payload(&self) -> Option<&TaskPayload> {
        self.tasks.get(self.media_geometry.task_type.as_str())
    }
}

struct Ctx {
    line_no: usize,
    errors: Vec<Diagnostic>,
    warnings: Vec<Diagnostic>,
}

impl Ctx {
    fn error(&mut self, field: &str, msg: impl Into<String>) {
        self.errors.push(Diagnostic::error(field, msg, self.line_no));
    }

    fn warn(&mut self, field: &str, msg: impl Into<String>) {
        self.warnings.push(Diagnostic::warning(field, msg, self.line_no));
    }

    /// String or number rendered as text; `NA`/null/empty are unknown.
    fn scalar(&mut self, field: &str, v: Option<&Value>) -> Option<String> {
        match v? {
            Value::Null => None,
            Value::String(s) if s.trim().is_empty() || s.trim().eq_ignore_ascii_case("na") => None,
            Value::String(s) => Some(s.clone()),
            Value::Number(n) => Some(n.to_string()),
            _ => {
                self.error(field, "expected a string or number");
                None
            }
        }
    }

    fn required_str(&mut self, field: &str, v: Option<&Value>) -> Option<String> {
        match v {
            Some(Value::String(s)) if !s.trim().is_empty() => Some(s.trim().to_string()),
            Some(Value::String(_)) => {
                self.error(field, "must not be empty");
                None
            }
            None | Some(Value::Null) => {
                self.error(field, "missing required field");
                None
            }
            Some(_) => {
                self.error(field, "expected a string");
                None
            }
        }
    }
}

fn object<'a>(ctx: &mut Ctx, field: &str, v: Option<&'a Value>, required: bool) -> Option<&'a Map<String, Value>> {
    match v {
        Some(Value::Object(m)) => Some(m),
        None | Some(Value::Null) => {
            if required {
                ctx.error(field, format!("missing {field} block"));
            }
            None
        }
        Some(_) => {
            ctx.error(field, format!("{field} block must be an object"));
            None
        }
    }
}

pub fn parse_annotation_line(text: &str, line_no: usize) -> Result<Parsed<AnnotationEntry>, ValidationReport> {
    let text = text.strip_suffix('\r').unwrap_or(text);
    let fail = |msg: String| {
        Err(ValidationReport::from_diagnostics(vec![Diagnostic::error(
            RECORD_FIELD,
            msg,
            line_no,
        )]))
    };
    let value: Value = match serde_json::from_str(text) {
        Ok(v) => v,
        Err(e) => return fail(format!("malformed JSON: {e}")),
    };
    let Value::Object(obj) = value else {
        return fail("annotation must be a JSON object".to_string());
    };
    let mut ctx = Ctx {
        line_no,
        errors: Vec::new(),
        warnings: Vec::new(),
    };
    for key in obj.keys() {
        if !BLOCKS.contains(&key.as_str()) {
            ctx.warn(key, format!("unknown block '{key}' ignored"));
        }
    }

    let record = object(&mut ctx, "record", obj.get("record"), true).and_then(|m| {
        let dataset_name = ctx.required_str("record.dataset_name", m.get("dataset_name"));
        let image_path = ctx.required_str("record.image_path", m.get("image_path"));
        let sample_id = ctx.scalar("record.sample_id", m.get("sample_id"));
        Some(RecordBlock {
            dataset_name: dataset_name?,
            image_path: image_path?,
            sample_id,
        })
    });

    let mut context = ContextBlock::default();
    if let Some(m) = object(&mut ctx, "context", obj.get("context"), false) {
        context.subject_id = ctx.scalar("context.subject_id", m.get("subject_id"));
        context.age = ctx.scalar("context.age", m.get("age"));
        context.sex = ctx.scalar("context.sex", m.get("sex"));
        context.site = ctx.scalar("context.site", m.get("site"));
        context.modality = ctx.scalar("context.modality", m.get("modality"));
        context.anatomy = ctx.scalar("context.anatomy", m.get("anatomy"));
        context.free_text = ctx.scalar("context.free_text", m.get("free_text"));
        for (k, v) in m {
            if k == "extra" {
                match v {
                    Value::Object(extra) => context
                        .extra
                        .extend(extra.iter().map(|(k, v)| (k.clone(), v.clone()))),
                    Value::Null => {}
                    _ => ctx.error("context.extra", "extra must be an object"),
                }
            } else if !CONTEXT_KEYS.contains(&k.as_str()) {
                context.extra.insert(k.clone(), v.clone());
            }
        }
    }

    let geometry = object(&mut ctx, "media_geometry", obj.get("media_geometry"), true).and_then(|m| {
        let task_type = match m.get("task_type") {
            Some(Value::String(s)) => match TaskCode::from_str(&s.trim().to_ascii_lowercase()) {
                Ok(t) => Some(t),
                Err(_) => {
                    ctx.error("media_geometry.task_type", format!("'{s}' is not one of the 12 task categories"));
                    None
                }
            },
            None | Some(Value::Null) => {
                ctx.error("media_geometry.task_type", "missing required field");
                None
            }
            Some(_) => {
                ctx.error("media_geometry.task_type", "expected a string");
                None
            }
        };
        let leaf_task = ctx.scalar("media_geometry.leaf_task", m.get("leaf_task"));
        let annotation_type = ctx
            .scalar("media_geometry.annotation_type", m.get("annotation_type"))
            .and_then(|s| match AnnotationType::from_str(&s) {
                Ok(t) => Some(t),
                Err(_) => {
                    ctx.error("media_geometry.annotation_type", format!("'{s}' is not a known annotation type"));
                    None
                }
            });
        let dimension = ctx
            .scalar("media_geometry.dimension", m.get("dimension"))
            .and_then(|s| match Dimension::from_str(&s) {
                Ok(d) => Some(d),
                Err(_) => {
                    ctx.error("media_geometry.dimension", format!("'{s}' is not a single dimension value"));
                    None
                }
            });
        let mut optional = BTreeMap::new();
        for (k, v) in m {
            if GEOMETRY_OPTIONAL.contains(&k.as_str()) {
                if !v.is_null() {
                    optional.insert(k.clone(), v.clone());
                }
            } else if !matches!(k.as_str(), "task_type" | "leaf_task" | "annotation_type" | "dimension") {
                ctx.warn(&format!("media_geometry.{k}"), format!("unknown key '{k}' ignored"));
            }
        }
        let task_type = task_type?;
        Some(MediaGeometry {
            task_type,
            leaf_task: leaf_task.unwrap_or_else(|| task_type.as_str().to_string()),
            annotation_type,
            dimension,
            optional,
        })
    });

    let mut tasks = BTreeMap::new();
    if let Some(m) = object(&mut ctx, "tasks", obj.get("tasks"), true) {
        for (name, payload) in m {
            match payload {
                Value::Object(p) => {
                    let mut tp = TaskPayload::default();
                    for (k, v) in p {
                        if k == "schema_variant" {
                            match v {
                                Value::String(s) => tp.schema_variant = Some(s.clone()),
                                Value::Null => {}
                                _ => ctx.error(&format!("tasks.{name}.schema_variant"), "expected a string"),
                            }
                        } else {
                            tp.fields.insert(k.clone(), v.clone());
                        }
                    }
                    tasks.insert(name.clone(), tp);
                }
                _ => ctx.error(&format!("tasks.{name}"), "task payload must be an object"),
            }
        }
        if let Some(g) = &geometry {
            if !m.contains_key(g.task_type.as_str()) {
                ctx.error("tasks", format!("task payload missing for declared task_type '{}'", g.task_type));
            }
        }
    }

    match (record, geometry) {
        (Some(record), Some(media_geometry)) if ctx.errors.is_empty() => Ok(Parsed {
            value: AnnotationEntry {
                record,
                context,
                media_geometry,
                tasks,
            },
            warnings: ctx.warnings,
        }),
        _ => {
            let mut report = ValidationReport::from_diagnostics(ctx.errors);
            report.extend(ctx.warnings);
            Err(report)
        }
    }
}
