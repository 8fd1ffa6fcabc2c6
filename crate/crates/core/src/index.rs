//! Static exports: the manifest document, audit tables and distribution
//! statistics.

use std::collections::BTreeMap;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::harmonize::{CatalogManifest, DuplicateEntry, HarmonizedRecord, MANIFEST_VERSION};
use crate::query::{induce, Axis, FilterRecipe, Provenance, SelectionSet};

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("I/O error on {path}: {message}")]
    Io { path: String, message: String },
    #[error("cannot decode manifest: {0}")]
    Decode(String),
    #[error("manifest version mismatch: expected {expected}, found {found}")]
    Version { expected: String, found: String },
    #[error("unsupported statistics axis '{0}' (expected dimension, modality, task, anatomy_root or label_presence)")]
    Axis(String),
}

pub type FacetIndex = BTreeMap<String, BTreeMap<String, Vec<String>>>;

/// The `manifest.json` document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestDocument {
    pub version: String,
    pub vocab_version: String,
    pub generated_at: String,
    pub datasets: Vec<HarmonizedRecord>,
    /// axis → value → dataset names carrying that value.
    pub facet_index: FacetIndex,
    pub duplicate_report: Vec<DuplicateEntry>,
}

pub fn facet_index(manifest: &CatalogManifest) -> FacetIndex {
    let mut out = FacetIndex::new();
    for axis in Axis::ALL {
        let by_value = out.entry(axis.as_str().to_string()).or_default();
        for rec in &manifest.datasets {
            for v in axis.values_of(rec) {
                by_value.entry(v).or_default().push(rec.name().to_string());
            }
        }
    }
    out
}

/// Canonical manifest bytes: pretty JSON, sorted maps, trailing newline.
pub fn manifest_json(manifest: &CatalogManifest) -> String {
    let doc = ManifestDocument {
        version: manifest.version.clone(),
        vocab_version: manifest.vocab_version.clone(),
        generated_at: manifest.generated_at.clone(),
        datasets: manifest.datasets.clone(),
        facet_index: facet_index(manifest),
        duplicate_report: manifest.duplicate_report.clone(),
    };
    let mut s = serde_json::to_string_pretty(&doc).expect("manifest serializes");
    s.push('\n');
    s
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<usize, IndexError> {
    std::fs::write(path, bytes).map_err(|e| IndexError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    Ok(bytes.len())
}

/// Writes `manifest.json`; returns the number of bytes written.
pub fn export_manifest(manifest: &CatalogManifest, path: &Path) -> Result<usize, IndexError> {
    write_file(path, manifest_json(manifest).as_bytes())
}

pub fn load_manifest(text: &str) -> Result<CatalogManifest, IndexError> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| IndexError::Decode(e.to_string()))?;
    let found = value.get("version").and_then(|v| v.as_str()).unwrap_or("");
    if found != MANIFEST_VERSION {
        return Err(IndexError::Version {
            expected: MANIFEST_VERSION.to_string(),
            found: found.to_string(),
        });
    }
    let doc: ManifestDocument = serde_json::from_value(value).map_err(|e| IndexError::Decode(e.to_string()))?;
    Ok(CatalogManifest {
        version: doc.version,
        vocab_version: doc.vocab_version,
        generated_at: doc.generated_at,
        datasets: doc.datasets,
        duplicate_report: doc.duplicate_report,
    })
}

pub fn read_manifest(path: &Path) -> Result<CatalogManifest, IndexError> {
    let text = std::fs::read_to_string(path).map_err(|e| IndexError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    load_manifest(&text)
}

pub const AUDIT_COLUMNS: [&str; 10] = [
    "name",
    "dimension",
    "modality",
    "task",
    "organ",
    "images",
    "year",
    "organization",
    "license",
    "link",
];

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct AuditRow {
    pub name: String,
    pub dimension: String,
    pub modality: String,
    pub task: String,
    pub organ: String,
    pub images: String,
    pub year: String,
    pub organization: String,
    pub license: String,
    pub link: String,
}

fn join_or_na<I: IntoIterator<Item = String>>(items: I) -> String {
    let v: Vec<String> = items.into_iter().collect();
    if v.is_empty() {
        "NA".to_string()
    } else {
        v.join("; ")
    }
}

impl AuditRow {
    pub fn from_record(rec: &HarmonizedRecord) -> Self {
        let b = &rec.base;
        AuditRow {
            name: b.dataset_name.clone(),
            dimension: join_or_na(rec.dimensions.iter().map(|d| d.as_str().to_string())),
            modality: join_or_na(rec.modalities.iter().map(|m| match &m.subtype {
                Some(s) => format!("{} ({s})", m.code),
                None => m.code.to_string(),
            })),
            task: join_or_na(rec.tasks.iter().map(|t| t.as_str().to_string())),
            organ: rec
                .anatomy_paths
                .first()
                .map_or_else(|| "Unknown".to_string(), |p| p.leaf().to_string()),
            images: b.valid_image_n.total.map_or_else(|| "NA".to_string(), |n| n.to_string()),
            year: rec.release_year.map_or_else(|| "NA".to_string(), |y| y.to_string()),
            organization: join_or_na(b.organization.iter().cloned()),
            license: b.license.clone().unwrap_or_else(|| "NA".to_string()),
            link: b.homepage_url.clone().unwrap_or_else(|| "NA".to_string()),
        }
    }

    fn fields(&self) -> [&str; 10] {
        [
            &self.name,
            &self.dimension,
            &self.modality,
            &self.task,
            &self.organ,
            &self.images,
            &self.year,
            &self.organization,
            &self.license,
            &self.link,
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AuditFormat {
    Csv,
    Json,
}

impl FromStr for AuditFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(AuditFormat::Csv),
            "json" => Ok(AuditFormat::Json),
            other => Err(format!("unknown format '{other}' (expected csv or json)")),
        }
    }
}

/// Rows for the selection, sorted by name.
pub fn audit_rows(selection: &SelectionSet, manifest: &CatalogManifest) -> Vec<AuditRow> {
    selection.records(manifest).into_iter().map(AuditRow::from_record).collect()
}

/// CSV (RFC 4180 quoting, LF line ends, header always present) or a JSON
/// array of rows.
pub fn export_audit(selection: &SelectionSet, manifest: &CatalogManifest, format: AuditFormat) -> Vec<u8> {
    let rows = audit_rows(selection, manifest);
    match format {
        AuditFormat::Csv => {
            let mut w = csv::WriterBuilder::new()
                .has_headers(false)
                .terminator(csv::Terminator::Any(b'\n'))
                .from_writer(Vec::new());
            w.write_record(AUDIT_COLUMNS).expect("in-memory write");
            for r in &rows {
                w.write_record(r.fields()).expect("in-memory write");
            }
            w.into_inner().expect("in-memory flush")
        }
        AuditFormat::Json => {
            let mut s = serde_json::to_string_pretty(&rows).expect("rows serialize");
            s.push('\n');
            s.into_bytes()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bin {
    pub value: String,
    pub dataset_count: usize,
    pub image_sum: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Histogram {
    pub axis: String,
    pub bins: Vec<Bin>,
}

/// The recipe behind a selection, used for attribution order.
fn selection_recipe(selection: &SelectionSet) -> Option<FilterRecipe> {
    match &selection.provenance {
        Provenance::Recipe { recipe } => Some(recipe.clone()),
        Provenance::Facets { facets, text } => induce(facets, text.as_deref()).ok(),
    }
}

/// Per-value dataset counts (once per carried value) and image sums under
/// exclusive attribution. Bins are sorted by value.
pub fn distribution(selection: &SelectionSet, manifest: &CatalogManifest, axis: &str) -> Result<Histogram, IndexError> {
    let axis = match Axis::from_str(axis) {
        Ok(Axis::Year) | Err(_) => return Err(IndexError::Axis(axis.to_string())),
        Ok(a) => a,
    };
    let recipe = selection_recipe(selection);
    let mut bins: BTreeMap<String, (usize, u64)> = BTreeMap::new();
    for rec in selection.records(manifest) {
        for v in axis.values_of(rec) {
            bins.entry(v).or_default().0 += 1;
        }
        let winner = axis.attribute(rec, recipe.as_ref());
        bins.entry(winner).or_default().1 += rec.image_count();
    }
    Ok(Histogram {
        axis: axis.as_str().to_string(),
        bins: bins
            .into_iter()
            .map(|(value, (dataset_count, image_sum))| Bin {
                value,
                dataset_count,
                image_sum,
            })
            .collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct YearBin {
    pub year: i32,
    pub image_sum: u64,
    pub dataset_count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct UnknownBucket {
    pub image_sum: u64,
    pub dataset_count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct YearlyTotals {
    /// Ascending by year.
    pub years: Vec<YearBin>,
    pub unknown: UnknownBucket,
}

pub fn yearly_totals(selection: &SelectionSet, manifest: &CatalogManifest) -> YearlyTotals {
    let mut by_year: BTreeMap<i32, YearBin> = BTreeMap::new();
    let mut unknown = UnknownBucket::default();
    for rec in selection.records(manifest) {
        match rec.release_year {
            Some(y) => {
                let bin = by_year.entry(y).or_insert(YearBin { year: y, ..Default::default() });
                bin.image_sum += rec.image_count();
                bin.dataset_count += 1;
            }
            None => {
                unknown.image_sum += rec.image_count();
                unknown.dataset_count += 1;
            }
        }
    }
    YearlyTotals {
        years: by_year.into_values().collect(),
        unknown,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harmonize::{harmonize_record, HarmonizeOptions};
    use crate::query::{evaluate_recipe, FilterRecipe};
    use crate::schema::{CountSpec, DatasetRecord, LabelPresence, ReleaseDate};
    use crate::vocab::Vocabulary;

    fn rec(name: &str, year: Option<&str>, n: u64) -> HarmonizedRecord {
        let mut r = DatasetRecord::new(name, LabelPresence::Labeled);
        r.dimension = Some("2D".into());
        r.modality_primary = ["CT".to_string()].into();
        r.task_type = ["Cls".to_string()].into();
        r.valid_image_n = CountSpec::total(n);
        r.release_date = year.and_then(ReleaseDate::parse);
        let opts = HarmonizeOptions { strict: false, max_year: 2026 };
        harmonize_record(&r, Vocabulary::builtin(), opts, 1).unwrap().value
    }

    fn manifest(mut datasets: Vec<HarmonizedRecord>) -> CatalogManifest {
        datasets.sort_by(|a, b| a.name().cmp(b.name()));
        CatalogManifest {
            version: MANIFEST_VERSION.into(),
            vocab_version: "test".into(),
            generated_at: "2025-01-01T00:00:00Z".into(),
            datasets,
            duplicate_report: vec![],
        }
    }

    #[test]
    fn yearly() {
        let m = manifest(vec![rec("A", Some("2018"), 100), rec("B", Some("2018"), 50), rec("C", None, 10)]);
        let y = yearly_totals(&SelectionSet::all(&m), &m);
        assert_eq!(y.years, vec![YearBin { year: 2018, image_sum: 150, dataset_count: 2 }]);
        assert_eq!(y.unknown, UnknownBucket { image_sum: 10, dataset_count: 1 });
        let none = evaluate_recipe(&FilterRecipe { min_valid_image_n: 1000, ..Default::default() }, &m);
        assert_eq!(yearly_totals(&none, &m), YearlyTotals::default());
    }

    #[test]
    fn single_dataset_histogram() {
        let m = manifest(vec![rec("A", None, 100)]);
        let h = distribution(&SelectionSet::all(&m), &m, "modality").unwrap();
        assert_eq!(h.bins, vec![Bin { value: "CT".into(), dataset_count: 1, image_sum: 100 }]);
        assert!(matches!(distribution(&SelectionSet::all(&m), &m, "colour"), Err(IndexError::Axis(_))));
    }

    #[test]
    fn empty_csv_is_header_only() {
        let m = manifest(vec![]);
        let bytes = export_audit(&SelectionSet::all(&m), &m, AuditFormat::Csv);
        assert_eq!(
            String::from_utf8(bytes).unwrap(),
            "name,dimension,modality,task,organ,images,year,organization,license,link\n"
        );
    }

    #[test]
    fn csv_quotes_commas() {
        let mut a = rec("Set, with comma", Some("2020"), 5);
        a.base.organization = vec!["Org \"Q\"".into(), "Other".into()];
        let m = manifest(vec![a]);
        let text = String::from_utf8(export_audit(&SelectionSet::all(&m), &m, AuditFormat::Csv)).unwrap();
        let line = text.lines().nth(1).unwrap();
        assert_eq!(line, "\"Set, with comma\",2D,CT,classification,Unknown,5,2020,\"Org \"\"Q\"\"; Other\",NA,NA");
        assert!(!text.contains('\r'));
    }

    #[test]
    fn manifest_round_trip() {
        let m = manifest(vec![rec("A", Some("2018"), 100), rec("C", None, 10)]);
        let text = manifest_json(&m);
        assert!(text.ends_with("}\n"));
        assert_eq!(load_manifest(&text).unwrap(), m);
        let bad = text.replacen(MANIFEST_VERSION, "other.v0", 1);
        assert!(matches!(load_manifest(&bad), Err(IndexError::Version { .. })));
    }

    #[test]
    fn facet_index_lists_members() {
        let m = manifest(vec![rec("A", Some("2018"), 100), rec("C", None, 10)]);
        let idx = facet_index(&m);
        assert_eq!(idx["modality"]["CT"], vec!["A", "C"]);
        assert_eq!(idx["year"]["2018"], vec!["A"]);
        assert_eq!(idx["year"]["unknown"], vec!["C"]);
    }
}
