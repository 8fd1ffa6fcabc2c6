//! Fusion blueprints: a selection grouped along one axis, with per-group
//! summaries, compatibility flags and sampling-weight hints.
//!
//! A dataset carrying several values on the grouping axis is attributed to
//! exactly one group, so group counts and image sums partition the totals.
//! The winner is the first value in the recipe's declared order for that
//! axis, falling back to canonical enum order; each such choice is listed in
//! `attribution_notes`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::harmonize::{CatalogManifest, HarmonizedRecord};
use crate::query::{evaluate_recipe, Axis, FilterRecipe, SelectionFlag, SelectionSet};
use crate::schema::{round_sig6, AnnotationType, LabelPresence};
use crate::vocab::{Modality, TaskCode};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FusionError {
    #[error("labeled_ratio is undefined for an empty group")]
    EmptyGroup,
    #[error("unsupported group axis '{0}' (expected modality, task, anatomy_root or dimension)")]
    UnsupportedAxis(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum WeightError {
    #[error("temperature must be positive and finite, got {0}")]
    Temperature(f64),
    #[error("group '{0}' has no images")]
    EmptyGroup(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupAxis {
    Modality,
    Task,
    AnatomyRoot,
    Dimension,
}

impl GroupAxis {
    pub fn axis(self) -> Axis {
        match self {
            GroupAxis::Modality => Axis::Modality,
            GroupAxis::Task => Axis::Task,
            GroupAxis::AnatomyRoot => Axis::AnatomyRoot,
            GroupAxis::Dimension => Axis::Dimension,
        }
    }
}

impl FromStr for GroupAxis {
    type Err = FusionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "modality" => Ok(GroupAxis::Modality),
            "task" => Ok(GroupAxis::Task),
            "anatomy_root" => Ok(GroupAxis::AnatomyRoot),
            "dimension" => Ok(GroupAxis::Dimension),
            other => Err(FusionError::UnsupportedAxis(other.to_string())),
        }
    }
}

impl fmt::Display for GroupAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.axis().as_str())
    }
}

/// Three-decimal rendering of `k / n`, rounded half up with exact integer
/// arithmetic.
pub fn export_ratio(k: u64, n: u64) -> String {
    assert!(n > 0 && k <= n, "ratio needs 0 <= k <= n, n > 0");
    let (k, n) = (k as u128, n as u128);
    let thousandths = (2 * k * 1000 + n) / (2 * n);
    format!("{}.{:03}", thousandths / 1000, thousandths % 1000)
}

/// Fraction of members that are labeled or mixed.
pub fn labeled_ratio(members: &[&HarmonizedRecord]) -> Result<f64, FusionError> {
    if members.is_empty() {
        return Err(FusionError::EmptyGroup);
    }
    let k = members.iter().filter(|m| m.is_labeled()).count();
    Ok(k as f64 / members.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub key: String,
    /// Display form of the key (e.g. `MR` for `MRI`).
    pub label: String,
    pub n_datasets: usize,
    pub sum_image: u64,
    pub n_orgs: usize,
    /// Exact fraction; `None` for an empty group.
    pub labeled_ratio: Option<f64>,
    /// `labeled_ratio` at three decimals, half up.
    pub labeled_ratio_3dp: Option<String>,
    pub n_labeled: usize,
    pub n_mixed: usize,
    pub n_unlabeled: usize,
    /// Sum of known `storage_size_gb` (unknown counts as zero).
    pub storage_gb: f64,
    pub storage_known: usize,
    pub members: Vec<String>,
}

impl GroupSummary {
    pub fn from_members(key: &str, label: &str, members: &[&HarmonizedRecord]) -> Self {
        let mut sorted: Vec<&HarmonizedRecord> = members.to_vec();
        sorted.sort_by(|a, b| a.name().cmp(b.name()));
        let count = |lp: LabelPresence| sorted.iter().filter(|m| m.base.label_presence == lp).count();
        let (n_labeled, n_mixed, n_unlabeled) = (
            count(LabelPresence::Labeled),
            count(LabelPresence::Mixed),
            count(LabelPresence::Unlabeled),
        );
        let orgs: BTreeSet<&str> = sorted.iter().flat_map(|m| m.org_tokens.iter().map(String::as_str)).collect();
        let known: Vec<f64> = sorted.iter().filter_map(|m| m.base.storage_size_gb).collect();
        let n = sorted.len() as u64;
        GroupSummary {
            key: key.to_string(),
            label: label.to_string(),
            n_datasets: sorted.len(),
            sum_image: sorted.iter().map(|m| m.image_count()).sum(),
            n_orgs: orgs.len(),
            labeled_ratio: labeled_ratio(&sorted).ok(),
            labeled_ratio_3dp: (n > 0).then(|| export_ratio((n_labeled + n_mixed) as u64, n)),
            n_labeled,
            n_mixed,
            n_unlabeled,
            storage_gb: round_sig6(known.iter().sum()),
            storage_known: known.len(),
            members: sorted.iter().map(|m| m.name().to_string()).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CompatibilityKind {
    MixedAnnotationTypes,
    MixedDimensions,
    ProtocolHeterogeneity,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompatibilityFlag {
    pub group_key: String,
    pub flag: CompatibilityKind,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributionNote {
    pub dataset: String,
    pub values: Vec<String>,
    pub attributed_to: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FusionBlueprint {
    pub recipe: FilterRecipe,
    pub group_axis: GroupAxis,
    pub groups: Vec<GroupSummary>,
    pub totals: GroupSummary,
    pub compatibility: Vec<CompatibilityFlag>,
    pub attribution_notes: Vec<AttributionNote>,
    /// Datasets admitted only through 3D-to-2D projection.
    pub projected_3d_sources: Vec<String>,
    /// Recipe pass-through; not enforced.
    pub per_dataset_cap: Option<u64>,
}

impl FusionBlueprint {
    /// Pretty JSON with a trailing newline.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("blueprint serializes");
        s.push('\n');
        s
    }
}

/// Label geometry implied by a task when no annotation entries are known.
fn implied_annotation(task: TaskCode) -> Option<AnnotationType> {
    match task {
        TaskCode::Segmentation => Some(AnnotationType::Mask),
        TaskCode::Detection | TaskCode::Tracking => Some(AnnotationType::Box),
        TaskCode::Classification => Some(AnnotationType::ClassLabel),
        TaskCode::Localization => Some(AnnotationType::Landmark),
        TaskCode::Vqa | TaskCode::Captioning | TaskCode::ReportGeneration => Some(AnnotationType::Text),
        _ => None,
    }
}

fn annotation_set(rec: &HarmonizedRecord) -> BTreeSet<AnnotationType> {
    if !rec.annotation_types.is_empty() {
        return rec.annotation_types.clone();
    }
    rec.tasks.iter().filter_map(|t| implied_annotation(*t)).collect()
}

fn render_set<T>(set: &BTreeSet<T>, f: impl Fn(&T) -> &str) -> String {
    let parts: Vec<&str> = set.iter().map(f).collect();
    format!("{{{}}}", parts.join(", "))
}

/// Flags for one group. `protocol_heterogeneity` applies to modality groups
/// only; `NA` secondary modalities are ignored.
pub fn compatibility_flags(group_key: &str, members: &[&HarmonizedRecord], axis: GroupAxis) -> Vec<CompatibilityFlag> {
    let mut out = Vec::new();
    if members.len() < 2 {
        return out;
    }
    let flag = |flag, detail| CompatibilityFlag {
        group_key: group_key.to_string(),
        flag,
        detail,
    };

    let ann: BTreeSet<BTreeSet<AnnotationType>> =
        members.iter().map(|m| annotation_set(m)).filter(|s| !s.is_empty()).collect();
    if ann.len() > 1 {
        let sets: Vec<String> = ann.iter().map(|s| render_set(s, |t| t.as_str())).collect();
        out.push(flag(
            CompatibilityKind::MixedAnnotationTypes,
            format!("members carry label geometries {}", sets.join(" vs ")),
        ));
    }

    let dims: BTreeSet<_> = members.iter().map(|m| m.dimensions.clone()).collect();
    if dims.len() > 1 {
        let sets: Vec<String> = dims.iter().map(|s| render_set(s, |d| d.as_str())).collect();
        out.push(flag(
            CompatibilityKind::MixedDimensions,
            format!("member dimension sets differ: {}", sets.join(" vs ")),
        ));
    }

    if axis == GroupAxis::Modality {
        let protocols: BTreeSet<&str> = members
            .iter()
            .filter_map(|m| m.base.modality_secondary.as_deref())
            .map(str::trim)
            .filter(|s| !s.is_empty() && !s.eq_ignore_ascii_case("na"))
            .collect();
        if protocols.len() > 1 {
            let list: Vec<&str> = protocols.into_iter().collect();
            out.push(flag(
                CompatibilityKind::ProtocolHeterogeneity,
                format!("modality_secondary values differ: {}", list.join(", ")),
            ));
        }
    }
    out
}

fn display_label(axis: GroupAxis, key: &str) -> String {
    match axis {
        GroupAxis::Modality => Modality::from_str(key)
            .map(|m| m.display_label().to_string())
            .unwrap_or_else(|_| key.to_string()),
        _ => key.to_string(),
    }
}

/// Group order: recipe-declared values, then the axis domain, then anything
/// else (e.g. `unknown`) alphabetically.
fn group_order(axis: GroupAxis, recipe: &FilterRecipe) -> Vec<String> {
    let mut order = axis.axis().recipe_order(recipe);
    for v in axis.axis().domain().unwrap_or_default() {
        if !order.iter().any(|o| o == v) {
            order.push(v.to_string());
        }
    }
    order
}

/// Groups an existing selection.
pub fn blueprint_for_selection(
    recipe: &FilterRecipe,
    selection: &SelectionSet,
    manifest: &CatalogManifest,
    axis: GroupAxis,
) -> FusionBlueprint {
    let records = selection.records(manifest);
    let mut buckets: BTreeMap<String, Vec<&HarmonizedRecord>> = BTreeMap::new();
    let mut notes = Vec::new();
    for rec in &records {
        let key = axis.axis().attribute(rec, Some(recipe));
        let carried = axis.axis().values_of(rec);
        if carried.len() > 1 {
            notes.push(AttributionNote {
                dataset: rec.name().to_string(),
                values: carried,
                attributed_to: key.clone(),
            });
        }
        buckets.entry(key).or_default().push(rec);
    }

    let mut ordered_keys = group_order(axis, recipe);
    let extras: Vec<String> = buckets.keys().filter(|k| !ordered_keys.contains(k)).cloned().collect();
    ordered_keys.extend(extras);

    let mut groups = Vec::new();
    let mut compatibility = Vec::new();
    for key in ordered_keys {
        let Some(members) = buckets.get(&key) else { continue };
        groups.push(GroupSummary::from_members(&key, &display_label(axis, &key), members));
        compatibility.extend(compatibility_flags(&key, members, axis));
    }

    let projected_3d_sources = selection
        .flags
        .iter()
        .filter(|(_, f)| f.contains(&SelectionFlag::Projected3dSource))
        .map(|(n, _)| n.clone())
        .collect();

    FusionBlueprint {
        recipe: recipe.clone(),
        group_axis: axis,
        groups,
        totals: GroupSummary::from_members("total", "Total", &records),
        compatibility,
        attribution_notes: notes,
        projected_3d_sources,
        per_dataset_cap: recipe.per_dataset_cap,
    }
}

pub fn build_blueprint(recipe: &FilterRecipe, manifest: &CatalogManifest, axis: GroupAxis) -> FusionBlueprint {
    let selection = evaluate_recipe(recipe, manifest);
    blueprint_for_selection(recipe, &selection, manifest, axis)
}

/// `w_i ∝ sum_image_i^(1/T)`, normalized. Computed in log space so large
/// counts and small temperatures do not overflow.
pub fn sampling_weights(groups: &[GroupSummary], temperature: f64) -> Result<BTreeMap<String, f64>, WeightError> {
    if !(temperature.is_finite() && temperature > 0.0) {
        return Err(WeightError::Temperature(temperature));
    }
    if let Some(g) = groups.iter().find(|g| g.sum_image == 0) {
        return Err(WeightError::EmptyGroup(g.key.clone()));
    }
    let logs: Vec<f64> = groups.iter().map(|g| (g.sum_image as f64).ln() / temperature).collect();
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let raw: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = raw.iter().sum();
    Ok(groups.iter().zip(raw).map(|(g, w)| (g.key.clone(), w / total)).collect())
}

/// Plain-text table in the order axis, n_datasets, sum_image, n_orgs,
/// labeled_ratio; columns joined by two spaces, integers unseparated.
pub fn render_table(bp: &FusionBlueprint) -> String {
    let mut out = format!("{}  n_datasets  sum_image  n_orgs  labeled_ratio\n", bp.group_axis);
    let row = |g: &GroupSummary| {
        format!(
            "{}  {}  {}  {}  {}\n",
            g.label,
            g.n_datasets,
            g.sum_image,
            g.n_orgs,
            g.labeled_ratio_3dp.as_deref().unwrap_or("NA")
        )
    };
    for g in &bp.groups {
        out.push_str(&row(g));
    }
    out.push_str(&row(&bp.totals));
    out
}
