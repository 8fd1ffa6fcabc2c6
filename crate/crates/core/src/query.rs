//! Declarative recipes and faceted search over a manifest.
//!
//! Every predicate is evaluated per dataset and combined by conjunction, so
//! results never depend on catalog order.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::harmonize::{CatalogManifest, HarmonizedRecord};
use crate::schema::{Diagnostic, Parsed};
use crate::vocab::{canonical_root, Dimension, Modality, TaskCode, ANATOMY_ROOTS};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RecipeError {
    #[error("recipe parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("recipe field '{field}': invalid value {value}: {message}")]
    Field { field: String, value: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FacetError {
    #[error("unknown facet axis '{0}'")]
    UnknownAxis(String),
    #[error("facet '{axis}': invalid value '{value}'")]
    InvalidValue { axis: String, value: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelFilter {
    #[default]
    Any,
    LabeledOnly,
}

/// How a recipe set is compared with a dataset's set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SetMatch {
    /// At least one shared value.
    #[default]
    Intersect,
    /// Every dataset value is in the recipe set.
    Subset,
}

/// Selection criteria. Set-valued fields keep their declared order (it sets
/// group priority in blueprints); empty means "any".
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct FilterRecipe {
    pub dimensions: Vec<Dimension>,
    pub modalities: Vec<Modality>,
    pub tasks: Vec<TaskCode>,
    pub anatomy_roots: Vec<String>,
    pub licenses_allow: Vec<String>,
    pub min_valid_image_n: u64,
    pub year_range: Option<(i32, i32)>,
    pub label_presence: LabelFilter,
    pub allow_3d_as_2d_sources: bool,
    pub text_query: Option<String>,
    pub set_match: SetMatch,
    /// Carried into blueprints; not enforced.
    pub per_dataset_cap: Option<u64>,
}

fn push_unique<T: PartialEq>(v: &mut Vec<T>, x: T) {
    if !v.contains(&x) {
        v.push(x);
    }
}

fn field_err(field: &str, value: &Value, message: impl Into<String>) -> RecipeError {
    RecipeError::Field {
        field: field.to_string(),
        value: value.to_string(),
        message: message.into(),
    }
}

fn enum_list<T: PartialEq>(
    field: &str,
    v: &Value,
    parse: impl Fn(&str) -> Option<T>,
) -> Result<Vec<T>, RecipeError> {
    let Value::Array(items) = v else {
        return Err(field_err(field, v, "expected an array"));
    };
    let mut out = Vec::new();
    for item in items {
        let parsed = item
            .as_str()
            .and_then(&parse)
            .ok_or_else(|| field_err(field, item, "not a recognised member"))?;
        push_unique(&mut out, parsed);
    }
    Ok(out)
}

impl FilterRecipe {
    /// The recipe wire document. The optional `set_match` and
    /// `per_dataset_cap` keys appear only when set.
    pub fn to_value(&self) -> Value {
        let mut m = Map::new();
        m.insert("dimensions".into(), json!(self.dimensions.iter().map(|d| d.as_str()).collect::<Vec<_>>()));
        m.insert("modalities".into(), json!(self.modalities.iter().map(|d| d.as_str()).collect::<Vec<_>>()));
        m.insert("tasks".into(), json!(self.tasks.iter().map(|d| d.as_str()).collect::<Vec<_>>()));
        m.insert("anatomy_roots".into(), json!(self.anatomy_roots));
        m.insert("licenses_allow".into(), json!(self.licenses_allow));
        m.insert("min_valid_image_n".into(), json!(self.min_valid_image_n));
        m.insert("year_range".into(), self.year_range.map_or(Value::Null, |(a, b)| json!([a, b])));
        m.insert("label_presence".into(), json!(self.label_presence));
        m.insert("allow_3d_as_2d_sources".into(), json!(self.allow_3d_as_2d_sources));
        m.insert("text_query".into(), json!(self.text_query.as_deref().unwrap_or("")));
        if self.set_match != SetMatch::Intersect {
            m.insert("set_match".into(), json!(self.set_match));
        }
        if let Some(cap) = self.per_dataset_cap {
            m.insert("per_dataset_cap".into(), json!(cap));
        }
        Value::Object(m)
    }
}

impl Serialize for FilterRecipe {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.to_value().serialize(s)
    }
}

/// Decodes a recipe document. Absent keys take defaults; unknown keys come
/// back as warnings.
pub fn parse_recipe(text: &str) -> Result<Parsed<FilterRecipe>, RecipeError> {
    let value: Value = serde_json::from_str(text).map_err(|e| RecipeError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    let Value::Object(obj) = value else {
        return Err(RecipeError::Parse {
            line: 1,
            column: 1,
            message: "recipe must be a JSON object".into(),
        });
    };
    let mut recipe = FilterRecipe::default();
    let mut warnings = Vec::new();
    for (key, v) in &obj {
        if v.is_null() && key != "year_range" && key != "per_dataset_cap" && key != "text_query" {
            continue;
        }
        match key.as_str() {
            "dimensions" => recipe.dimensions = enum_list(key, v, |s| Dimension::from_str(s).ok())?,
            "modalities" => {
                recipe.modalities = enum_list(key, v, |s| Modality::from_str(&s.trim().to_ascii_uppercase()).ok())?
            }
            "tasks" => recipe.tasks = enum_list(key, v, |s| TaskCode::from_str(&s.trim().to_ascii_lowercase()).ok())?,
            "anatomy_roots" => {
                recipe.anatomy_roots = enum_list(key, v, |s| canonical_root(s).map(str::to_string))?
            }
            "licenses_allow" => {
                recipe.licenses_allow = enum_list(key, v, |s| {
                    let t = s.trim();
                    (!t.is_empty()).then(|| t.to_string())
                })?
            }
            "min_valid_image_n" => {
                recipe.min_valid_image_n = v.as_u64().ok_or_else(|| field_err(key, v, "expected a non-negative integer"))?
            }
            "year_range" => {
                recipe.year_range = match v {
                    Value::Null => None,
                    Value::Array(a) if a.len() == 2 => {
                        let year = |x: &Value| x.as_i64().and_then(|y| i32::try_from(y).ok());
                        let (Some(lo), Some(hi)) = (year(&a[0]), year(&a[1])) else {
                            return Err(field_err(key, v, "expected [min_year, max_year] integers"));
                        };
                        if lo > hi {
                            return Err(field_err(key, v, "min_year exceeds max_year"));
                        }
                        Some((lo, hi))
                    }
                    _ => return Err(field_err(key, v, "expected null or [min_year, max_year]")),
                }
            }
            "label_presence" => {
                recipe.label_presence = match v.as_str() {
                    Some("any") => LabelFilter::Any,
                    Some("labeled_only") => LabelFilter::LabeledOnly,
                    _ => return Err(field_err(key, v, "expected \"any\" or \"labeled_only\"")),
                }
            }
            "allow_3d_as_2d_sources" => {
                recipe.allow_3d_as_2d_sources = v.as_bool().ok_or_else(|| field_err(key, v, "expected a boolean"))?
            }
            "text_query" => {
                recipe.text_query = match v {
                    Value::Null => None,
                    Value::String(s) if s.trim().is_empty() => None,
                    Value::String(s) => Some(s.clone()),
                    _ => return Err(field_err(key, v, "expected a string")),
                }
            }
            "set_match" => {
                recipe.set_match = match v.as_str() {
                    Some("intersect") => SetMatch::Intersect,
                    Some("subset") => SetMatch::Subset,
                    _ => return Err(field_err(key, v, "expected \"intersect\" or \"subset\"")),
                }
            }
            "per_dataset_cap" => {
                recipe.per_dataset_cap = match v {
                    Value::Null => None,
                    _ => Some(v.as_u64().ok_or_else(|| field_err(key, v, "expected a non-negative integer"))?),
                }
            }
            _ => warnings.push(Diagnostic::warning(key, format!("unknown recipe key '{key}' ignored"), 0)),
        }
    }
    Ok(Parsed { value: recipe, warnings })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SelectionFlag {
    /// Selected only because 3D volumes may be sliced into 2D images.
    #[serde(rename = "projected_3d_source")]
    Projected3dSource,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Provenance {
    Recipe { recipe: FilterRecipe },
    Facets { facets: BTreeMap<String, Vec<String>>, text: Option<String> },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SelectionSet {
    pub names: BTreeSet<String>,
    pub provenance: Provenance,
    pub flags: BTreeMap<String, BTreeSet<SelectionFlag>>,
}

impl SelectionSet {
    /// Every dataset in the manifest.
    pub fn all(manifest: &CatalogManifest) -> Self {
        evaluate_recipe(&FilterRecipe::default(), manifest)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    /// Selected records in name order.
    pub fn records<'m>(&self, manifest: &'m CatalogManifest) -> Vec<&'m HarmonizedRecord> {
        self.names.iter().filter_map(|n| manifest.get(n)).collect()
    }
}

fn set_matches<T: Ord>(wanted: &[T], have: &BTreeSet<T>, mode: SetMatch) -> bool {
    if wanted.is_empty() {
        return true;
    }
    match mode {
        SetMatch::Intersect => wanted.iter().any(|w| have.contains(w)),
        SetMatch::Subset => !have.is_empty() && have.iter().all(|h| wanted.contains(h)),
    }
}

/// `Some(projected)` when the dimension predicate holds.
fn dimension_match(recipe: &FilterRecipe, rec: &HarmonizedRecord) -> Option<bool> {
    if recipe.dimensions.is_empty() {
        return Some(false);
    }
    if set_matches(&recipe.dimensions, &rec.dimensions, recipe.set_match) {
        return Some(false);
    }
    let projectable = recipe.allow_3d_as_2d_sources
        && recipe.dimensions.contains(&Dimension::D2)
        && rec.dimensions.contains(&Dimension::D3);
    if !projectable {
        return None;
    }
    if recipe.set_match == SetMatch::Subset {
        let projected: BTreeSet<Dimension> = rec
            .dimensions
            .iter()
            .map(|d| if *d == Dimension::D3 { Dimension::D2 } else { *d })
            .collect();
        return set_matches(&recipe.dimensions, &projected, SetMatch::Subset).then_some(true);
    }
    Some(true)
}

fn searchable_text(rec: &HarmonizedRecord) -> String {
    let b = &rec.base;
    let mut parts: Vec<&str> = vec![&b.dataset_name];
    parts.extend(b.dataset_description.as_deref());
    parts.extend(b.organization.iter().map(String::as_str));
    parts.extend(b.disease.as_deref());
    parts.extend(b.challenge_series.as_deref());
    parts.join("\n").to_lowercase()
}

/// Every predicate except dimensions.
fn other_predicates_hold(recipe: &FilterRecipe, rec: &HarmonizedRecord) -> bool {
    if !set_matches(&recipe.modalities, &rec.modality_codes(), recipe.set_match) {
        return false;
    }
    if !set_matches(&recipe.tasks, &rec.tasks, recipe.set_match) {
        return false;
    }
    let roots: BTreeSet<String> = rec.anatomy_roots().into_iter().map(str::to_string).collect();
    if !set_matches(&recipe.anatomy_roots, &roots, recipe.set_match) {
        return false;
    }
    if !recipe.licenses_allow.is_empty() {
        let license = rec.base.license.as_deref().unwrap_or("NA").trim();
        if !recipe.licenses_allow.iter().any(|l| l.eq_ignore_ascii_case(license)) {
            return false;
        }
    }
    if rec.image_count() < recipe.min_valid_image_n {
        return false;
    }
    if let Some((lo, hi)) = recipe.year_range {
        match rec.release_year {
            Some(y) if (lo..=hi).contains(&y) => {}
            _ => return false,
        }
    }
    if recipe.label_presence == LabelFilter::LabeledOnly && !rec.is_labeled() {
        return false;
    }
    if let Some(q) = &recipe.text_query {
        if !searchable_text(rec).contains(&q.to_lowercase()) {
            return false;
        }
    }
    true
}

/// `Some(flags)` when `rec` satisfies every predicate of `recipe`.
pub fn matches(recipe: &FilterRecipe, rec: &HarmonizedRecord) -> Option<BTreeSet<SelectionFlag>> {
    let projected = dimension_match(recipe, rec)?;
    if !other_predicates_hold(recipe, rec) {
        return None;
    }
    let mut flags = BTreeSet::new();
    if projected {
        flags.insert(SelectionFlag::Projected3dSource);
    }
    Some(flags)
}

pub fn evaluate_recipe(recipe: &FilterRecipe, manifest: &CatalogManifest) -> SelectionSet {
    let mut names = BTreeSet::new();
    let mut flags = BTreeMap::new();
    for rec in &manifest.datasets {
        if let Some(f) = matches(recipe, rec) {
            names.insert(rec.name().to_string());
            if !f.is_empty() {
                flags.insert(rec.name().to_string(), f);
            }
        }
    }
    SelectionSet {
        names,
        provenance: Provenance::Recipe { recipe: recipe.clone() },
        flags,
    }
}

/// Filterable axes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    Dimension,
    Modality,
    Task,
    AnatomyRoot,
    LabelPresence,
    Year,
}

pub const UNKNOWN_VALUE: &str = "unknown";

impl Axis {
    pub const ALL: [Axis; 6] = [
        Axis::Dimension,
        Axis::Modality,
        Axis::Task,
        Axis::AnatomyRoot,
        Axis::LabelPresence,
        Axis::Year,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Axis::Dimension => "dimension",
            Axis::Modality => "modality",
            Axis::Task => "task",
            Axis::AnatomyRoot => "anatomy_root",
            Axis::LabelPresence => "label_presence",
            Axis::Year => "year",
        }
    }

    /// The closed value list for enumerated axes; `None` for `year`.
    pub fn domain(self) -> Option<Vec<&'static str>> {
        match self {
            Axis::Dimension => Some(Dimension::ALL.iter().map(|d| d.as_str()).collect()),
            Axis::Modality => Some(Modality::ALL.iter().map(|d| d.as_str()).collect()),
            Axis::Task => Some(TaskCode::ALL.iter().map(|d| d.as_str()).collect()),
            Axis::AnatomyRoot => Some(ANATOMY_ROOTS.to_vec()),
            Axis::LabelPresence => Some(vec!["labeled", "unlabeled", "mixed"]),
            Axis::Year => None,
        }
    }

    /// Values a record carries on this axis, in canonical order. A record
    /// with nothing to show carries `unknown`.
    pub fn values_of(self, rec: &HarmonizedRecord) -> Vec<String> {
        let vals: Vec<String> = match self {
            Axis::Dimension => rec.dimensions.iter().map(|d| d.as_str().to_string()).collect(),
            Axis::Modality => rec.modality_codes().iter().map(|d| d.as_str().to_string()).collect(),
            Axis::Task => rec.tasks.iter().map(|d| d.as_str().to_string()).collect(),
            Axis::AnatomyRoot => {
                let roots = rec.anatomy_roots();
                ANATOMY_ROOTS
                    .iter()
                    .filter(|r| roots.contains(*r))
                    .map(|r| r.to_string())
                    .collect()
            }
            Axis::LabelPresence => vec![rec.base.label_presence.as_str().to_string()],
            Axis::Year => rec.release_year.map(|y| y.to_string()).into_iter().collect(),
        };
        if vals.is_empty() {
            vec![UNKNOWN_VALUE.to_string()]
        } else {
            vals
        }
    }

    /// The recipe's declared order for this axis, if any.
    pub fn recipe_order(self, recipe: &FilterRecipe) -> Vec<String> {
        match self {
            Axis::Dimension => recipe.dimensions.iter().map(|d| d.as_str().to_string()).collect(),
            Axis::Modality => recipe.modalities.iter().map(|d| d.as_str().to_string()).collect(),
            Axis::Task => recipe.tasks.iter().map(|d| d.as_str().to_string()).collect(),
            Axis::AnatomyRoot => recipe.anatomy_roots.clone(),
            Axis::LabelPresence | Axis::Year => Vec::new(),
        }
    }

    /// Exclusive attribution: the first value the record carries in the
    /// recipe's declared order, else its first value in canonical order.
    pub fn attribute(self, rec: &HarmonizedRecord, recipe: Option<&FilterRecipe>) -> String {
        let carried = self.values_of(rec);
        if let Some(r) = recipe {
            if let Some(v) = self.recipe_order(r).into_iter().find(|v| carried.contains(v)) {
                return v;
            }
        }
        carried.into_iter().next().expect("values_of is non-empty")
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Axis {
    type Err = FacetError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Axis::ALL
            .iter()
            .copied()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| FacetError::UnknownAxis(s.to_string()))
    }
}

fn parse_year_facet(value: &str) -> Option<(i32, i32)> {
    let v = value.trim();
    let (lo, hi) = match v.split_once('-') {
        Some((a, b)) => (a.trim().parse().ok()?, b.trim().parse().ok()?),
        None => {
            let y = v.parse().ok()?;
            (y, y)
        }
    };
    (lo <= hi).then_some((lo, hi))
}

/// The recipe a facet state stands for: each axis fills the matching recipe
/// set, `label_presence` takes `any` or `labeled_only`, `year` values
/// (`YYYY` or `YYYY-YYYY`) widen to one inclusive range, and the text fills
/// `text_query`.
pub fn induce(facets: &BTreeMap<String, Vec<String>>, text: Option<&str>) -> Result<FilterRecipe, FacetError> {
    let mut recipe = FilterRecipe::default();
    for (axis_name, values) in facets {
        let axis = Axis::from_str(axis_name)?;
        let bad = |v: &str| FacetError::InvalidValue {
            axis: axis_name.clone(),
            value: v.to_string(),
        };
        for v in values {
            match axis {
                Axis::Dimension => push_unique(&mut recipe.dimensions, Dimension::from_str(v).map_err(|_| bad(v))?),
                Axis::Modality => push_unique(
                    &mut recipe.modalities,
                    Modality::from_str(&v.trim().to_ascii_uppercase()).map_err(|_| bad(v))?,
                ),
                Axis::Task => push_unique(
                    &mut recipe.tasks,
                    TaskCode::from_str(&v.trim().to_ascii_lowercase()).map_err(|_| bad(v))?,
                ),
                Axis::AnatomyRoot => {
                    push_unique(&mut recipe.anatomy_roots, canonical_root(v).ok_or_else(|| bad(v))?.to_string())
                }
                Axis::LabelPresence => match v.as_str() {
                    "any" => {}
                    "labeled_only" => recipe.label_presence = LabelFilter::LabeledOnly,
                    _ => return Err(bad(v)),
                },
                Axis::Year => {
                    let (lo, hi) = parse_year_facet(v).ok_or_else(|| bad(v))?;
                    recipe.year_range = Some(match recipe.year_range {
                        Some((a, b)) => (a.min(lo), b.max(hi)),
                        None => (lo, hi),
                    });
                }
            }
        }
    }
    recipe.text_query = text.filter(|t| !t.trim().is_empty()).map(str::to_string);
    Ok(recipe)
}

pub fn facet_filter(
    facets: &BTreeMap<String, Vec<String>>,
    text: Option<&str>,
    manifest: &CatalogManifest,
) -> Result<SelectionSet, FacetError> {
    let recipe = induce(facets, text)?;
    let mut sel = evaluate_recipe(&recipe, manifest);
    sel.provenance = Provenance::Facets {
        facets: facets.clone(),
        text: recipe.text_query.clone(),
    };
    Ok(sel)
}

/// Per-axis value tallies over a selection. Enumerated axes list every
/// member (zero when absent); multi-valued axes count a dataset once per
/// value it carries.
pub fn facet_counts(manifest: &CatalogManifest, selection: &SelectionSet) -> BTreeMap<String, BTreeMap<String, usize>> {
    let mut out = BTreeMap::new();
    for axis in Axis::ALL {
        let mut counts: BTreeMap<String, usize> = axis
            .domain()
            .unwrap_or_default()
            .into_iter()
            .map(|v| (v.to_string(), 0))
            .collect();
        for rec in selection.records(manifest) {
            for v in axis.values_of(rec) {
                *counts.entry(v).or_insert(0) += 1;
            }
        }
        out.insert(axis.as_str().to_string(), counts);
    }
    out
}
