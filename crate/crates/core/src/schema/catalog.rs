use std::collections::{BTreeMap, BTreeSet};

use super::annotation::AnnotationEntry;
use super::meta::{CountSpec, DatasetRecord};
use super::{Diagnostic, ValidationReport};

/// Cross-record checks over a parsed catalog. Line numbers are 1-based
/// positions in the respective input lists. Every problem is reported; the
/// pass never stops early.
pub fn validate_catalog(records: &[DatasetRecord], annotations: &[AnnotationEntry]) -> ValidationReport {
    let mut report = ValidationReport::new();
    let mut seen: BTreeMap<&str, usize> = BTreeMap::new();

    for (i, r) in records.iter().enumerate() {
        let line = i + 1;
        let name = r.dataset_name.as_str();
        if name.trim().is_empty() {
            report.push(Diagnostic::error("dataset_name", "must not be empty", line));
        }
        let count = seen.entry(name).or_insert(0);
        *count += 1;
        if *count == 2 {
            report.push(Diagnostic::error(
                "dataset_name",
                format!("duplicate dataset_name '{name}'"),
                line,
            ));
        }
        for (field, spec) in [("data_volume", &r.data_volume), ("valid_image_n", &r.valid_image_n)] {
            check_splits(&mut report, field, spec, line);
        }
        if let (Some(valid), Some(volume)) = (r.valid_image_n.total, r.data_volume.total) {
            if valid > volume {
                report.push(Diagnostic::error(
                    "valid_image_n",
                    format!("valid_image_n total {valid} exceeds data_volume total {volume}"),
                    line,
                ));
            }
        }
        if let Some(gb) = r.storage_size_gb {
            if !(gb.is_finite() && gb >= 0.0) {
                report.push(Diagnostic::error("storage_size_gb", "must be a non-negative number", line));
            }
        }
    }

    let names: BTreeSet<&str> = seen.keys().copied().collect();
    for (i, a) in annotations.iter().enumerate() {
        let line = i + 1;
        if !names.contains(a.record.dataset_name.as_str()) {
            report.push(Diagnostic::error(
                "record.dataset_name",
                format!("dangling reference to unknown dataset '{}'", a.record.dataset_name),
                line,
            ));
        }
        if a.primary_payload().is_none() {
            report.push(Diagnostic::error(
                "tasks",
                format!("task payload missing for declared task_type '{}'", a.media_geometry.task_type),
                line,
            ));
        }
    }
    report
}

fn check_splits(report: &mut ValidationReport, field: &str, spec: &CountSpec, line: usize) {
    if let Some((sum, total)) = spec.split_mismatch() {
        report.push(Diagnostic::warning(
            field,
            format!("SplitMismatch: splits sum to {sum} but total is {total} ({sum} \u{2260} {total})"),
            line,
        ));
    }
}
