//! Property checks shared by the focused test files and the acceptance run.
//! Each returns `Err(description)` on the first counterexample.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::Rng;
use serde_json::{Map, Value};

use fuseatlas::harmonize::{dedupe, parse_overlap_hints, DuplicateAction, DuplicateReason};
use fuseatlas::index::{
    distribution, export_audit, export_manifest, manifest_json, read_manifest, yearly_totals, AuditFormat, AuditRow,
};
use fuseatlas::query::{evaluate_recipe, facet_filter, induce, Axis, SelectionSet};
use fuseatlas::schema::{parse_dataset_meta_bytes, parse_dataset_meta_line, EXTENSION_FIELDS, META_FIELDS, RECORD_FIELD};

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

/// A value the named field rejects.
fn poison(field: &str) -> Value {
    match field {
        "data_volume" | "valid_image_n" => Value::from("many"),
        "num_classes_per_task" => Value::from(vec![1, 2]),
        "release_date" => Value::from("someday"),
        "homepage_url" => Value::from("not a url"),
        "label_presence" => Value::from("partially"),
        _ => Value::from(vec![Value::Bool(true)]),
    }
}

fn known_field(field: &str) -> bool {
    let head = field.split('.').next().unwrap_or_default();
    field == RECORD_FIELD || META_FIELDS.contains(&head) || EXTENSION_FIELDS.contains(&head)
}

fn mutate_bytes(line: &str, rng: &mut rand::rngs::StdRng) -> Vec<u8> {
    let mut b = line.as_bytes().to_vec();
    for _ in 0..rng.gen_range(1..4) {
        if b.is_empty() {
            break;
        }
        let i = rng.gen_range(0..b.len());
        match rng.gen_range(0..5) {
            0 => b.truncate(i),
            1 => {
                b.remove(i);
            }
            2 => b.insert(i, *b"{}[]\",:0x\\\xff".choose(rng).unwrap()),
            3 => b[i] = rng.gen(),
            _ => {
                let j = rng.gen_range(0..b.len());
                b.swap(i, j);
            }
        }
    }
    b
}

#[derive(Debug)]
pub struct FuzzSummary {
    pub lines: usize,
    pub rejected: usize,
    pub fields_poisoned: usize,
}

/// Mutates corpus lines `count` times: half get one field replaced by a
/// value it must reject, half get random byte edits. Every rejected line must
/// carry an error naming a field on the right line; a poisoned line must name
/// the poisoned field.
pub fn fuzz_meta_lines(count: usize, seed: u64) -> Result<FuzzSummary, String> {
    let corpus = super::fixture("catalog_2d_meta.jsonl");
    let bases: Vec<&str> = corpus.lines().collect();
    let mut rng = super::rng(seed);
    let mut rejected = 0;
    let mut poisoned = BTreeSet::new();
    for n in 0..count {
        let base = bases[n % bases.len()];
        let line_no = n + 1;
        if rng.gen_bool(0.5) {
            let field = META_FIELDS[rng.gen_range(0..META_FIELDS.len())];
            let mut obj: Map<String, Value> = serde_json::from_str(base).map_err(|e| e.to_string())?;
            obj.insert(field.to_string(), poison(field));
            let line = Value::Object(obj).to_string();
            let Err(report) = parse_dataset_meta_line(&line, line_no) else {
                return Err(format!("poisoned {field} accepted: {line}"));
            };
            ensure!(
                report.errors().any(|d| d.field == field && d.line_no == line_no),
                "no diagnostic names {field}: {report:?}"
            );
            poisoned.insert(field);
            rejected += 1;
        } else {
            let bytes = mutate_bytes(base, &mut rng);
            if let Err(report) = parse_dataset_meta_bytes(&bytes, line_no) {
                rejected += 1;
                ensure!(
                    report.errors().any(|d| known_field(&d.field) && d.line_no == line_no),
                    "unstructured report for {:?}: {report:?}",
                    String::from_utf8_lossy(&bytes)
                );
            }
        }
    }
    ensure!(poisoned.len() == META_FIELDS.len(), "only {} fields were poisoned", poisoned.len());
    Ok(FuzzSummary {
        lines: count,
        rejected,
        fields_poisoned: poisoned.len(),
    })
}

pub fn monotone(seed: u64) -> Result<(), String> {
    let m = super::catalog();
    let mut rng = super::rng(seed);
    let loose = super::random_recipe(&mut rng);
    let tight = super::tighten(&loose, &mut rng);
    let a = evaluate_recipe(&loose, m).names;
    let b = evaluate_recipe(&tight, m).names;
    ensure!(b.is_subset(&a), "tightening {loose:?} to {tight:?} added {:?}", b.difference(&a).collect::<Vec<_>>());
    Ok(())
}

pub fn conjunction(seed: u64) -> Result<(), String> {
    let m = super::catalog();
    let mut rng = super::rng(seed);
    let whole = super::random_recipe(&mut rng);
    let (a, b) = super::split_recipe(&whole, &mut rng);
    let both: BTreeSet<String> = evaluate_recipe(&a, m)
        .names
        .intersection(&evaluate_recipe(&b, m).names)
        .cloned()
        .collect();
    ensure!(evaluate_recipe(&whole, m).names == both, "conjunction fails for {whole:?}");
    Ok(())
}

/// Shuffles the 57-record fixture, rebuilds, and compares bytes and one
/// random selection.
pub fn order_independent(seed: u64) -> Result<(), String> {
    let meta = super::fixture("composition_meta.jsonl");
    let mut rng = super::rng(seed);
    let shuffled = super::build(&super::shuffled_lines(&meta, &mut rng), "");
    let reference = super::composition();
    ensure!(manifest_json(&shuffled) == manifest_json(reference), "manifest bytes differ (seed {seed})");
    let recipe = super::random_recipe(&mut rng);
    ensure!(
        evaluate_recipe(&recipe, &shuffled) == evaluate_recipe(&recipe, reference),
        "selection differs for {recipe:?}"
    );
    Ok(())
}

pub fn modes_agree(seed: u64) -> Result<(), String> {
    let m = super::catalog();
    let mut rng = super::rng(seed);
    let (facets, text) = super::random_facets(&mut rng, m);
    let via_facets = facet_filter(&facets, text.as_deref(), m).map_err(|e| e.to_string())?;
    let recipe = induce(&facets, text.as_deref()).map_err(|e| e.to_string())?;
    let via_recipe = evaluate_recipe(&recipe, m);
    ensure!(
        via_facets.names == via_recipe.names && via_facets.flags == via_recipe.flags,
        "facet state {facets:?} / {text:?} disagrees with its recipe"
    );
    Ok(())
}

/// Bin sums over every axis and the yearly totals equal the selection total,
/// for `count` random recipes with non-empty selections.
pub fn conservation(count: usize, seed: u64) -> Result<(), String> {
    let m = super::catalog();
    let mut rng = super::rng(seed);
    let selections = std::iter::repeat_with(|| evaluate_recipe(&super::random_recipe(&mut rng), m))
        .filter(|s| !s.is_empty())
        .take(count);
    for (i, sel) in selections.enumerate() {
        let total: u64 = sel.records(m).iter().map(|r| r.image_count()).sum();
        for axis in Axis::ALL.into_iter().filter(|a| *a != Axis::Year) {
            let h = distribution(&sel, m, axis.as_str()).map_err(|e| e.to_string())?;
            let binned: u64 = h.bins.iter().map(|b| b.image_sum).sum();
            ensure!(binned == total, "recipe {i}, axis {}: bins {binned} ≠ total {total}", axis.as_str());
        }
        let years = yearly_totals(&sel, m);
        let by_year: u64 = years.years.iter().map(|y| y.image_sum).sum::<u64>() + years.unknown.image_sum;
        ensure!(by_year == total, "recipe {i}: years {by_year} ≠ total {total}");
        let counted: usize = years.years.iter().map(|y| y.dataset_count).sum::<usize>() + years.unknown.dataset_count;
        ensure!(counted == sel.len(), "recipe {i}: year counts {counted} ≠ {}", sel.len());
    }
    Ok(())
}

fn row_bag(rows: Vec<AuditRow>) -> BTreeMap<AuditRow, usize> {
    let mut bag = BTreeMap::new();
    for r in rows {
        *bag.entry(r).or_insert(0) += 1;
    }
    bag
}

/// Manifest reload, permuted-build bytes and CSV/JSON audit agreement.
pub fn round_trip() -> Result<(), String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("manifest.json");
    let m = super::catalog();
    export_manifest(m, &path).map_err(|e| e.to_string())?;
    let back = read_manifest(&path).map_err(|e| e.to_string())?;
    ensure!(&back == m, "reloaded manifest differs");

    let meta = super::fixture("catalog_2d_meta.jsonl");
    let hints = super::fixture("overlap_hints.tsv");
    let a = super::build(&super::shuffled_lines(&meta, &mut super::rng(1)), &hints);
    let b = super::build(&super::shuffled_lines(&meta, &mut super::rng(2)), &hints);
    ensure!(manifest_json(&a) == manifest_json(&b), "permuted builds differ");

    let sel = SelectionSet::all(m);
    let from_csv: Vec<AuditRow> = csv::Reader::from_reader(export_audit(&sel, m, AuditFormat::Csv).as_slice())
        .deserialize()
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    let from_json: Vec<AuditRow> =
        serde_json::from_slice(&export_audit(&sel, m, AuditFormat::Json)).map_err(|e| e.to_string())?;
    ensure!(from_csv.len() == sel.len(), "csv has {} rows for {} datasets", from_csv.len(), sel.len());
    ensure!(row_bag(from_csv) == row_bag(from_json), "csv and json rows differ");
    Ok(())
}

/// The marked duplicate collapses, the declared overlap is flagged with both
/// records kept, and a second dedupe pass changes nothing.
pub fn dedup() -> Result<(), String> {
    let m = super::catalog();
    ensure!(m.get("ImageCLEF 2016").is_some(), "ImageCLEF 2016 missing");
    ensure!(m.get("ImageCLEF 2016 (Duplicate)").is_none(), "marked duplicate kept");
    ensure!(
        m.duplicate_report.iter().any(|e| e.kept == "ImageCLEF 2016"
            && e.dropped == "ImageCLEF 2016 (Duplicate)"
            && e.action == DuplicateAction::Dropped),
        "no report entry for the marked duplicate"
    );
    ensure!(m.get("OCT2017").is_some() && m.get("MedMNIST").is_some(), "overlap pair not retained");
    ensure!(
        m.duplicate_report.iter().any(|e| {
            let pair = [e.kept.as_str(), e.dropped.as_str()];
            e.reason == DuplicateReason::DeclaredOverlap
                && e.action == DuplicateAction::Flagged
                && pair.contains(&"OCT2017")
                && pair.contains(&"MedMNIST")
        }),
        "no declared_overlap flag for OCT2017/MedMNIST"
    );
    let hints = parse_overlap_hints(&super::fixture("overlap_hints.tsv")).map_err(|r| format!("{r:?}"))?;
    let (again, _) = dedupe(m.datasets.clone(), &hints);
    ensure!(again == m.datasets, "dedupe is not idempotent");
    Ok(())
}
