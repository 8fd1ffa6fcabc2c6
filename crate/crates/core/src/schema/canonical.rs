//! Canonical single-line rendering of a [`DatasetRecord`].
//!
//! Keys appear in wire order (the sixteen core fields, then the extension
//! keys that are set). Set-valued fields are sorted, unknown scalars render as
//! `"NA"`, counts are always objects, and reals carry at most six significant
//! digits with no trailing zeros.

use serde_json::Value;

use super::meta::{ClassCount, CountSpec, DatasetRecord};

/// Rounds to six significant digits (the precision kept for reals).
pub fn round_sig6(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    format!("{x:.5e}").parse().unwrap_or(x)
}

/// Plain decimal, at most six significant digits, no trailing zeros, no
/// exponent. `1.5` → `1.5`, `2.0` → `2`, `0.000123456789` → `0.000123457`.
pub fn format_real(x: f64) -> String {
    if !x.is_finite() {
        return "0".to_string();
    }
    if x == 0.0 {
        return "0".to_string();
    }
    let sci = format!("{:.5e}", x.abs());
    let (mantissa, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    let digits: String = mantissa.chars().filter(|c| *c != '.').collect();
    let digits = digits.trim_end_matches('0');
    let digits = if digits.is_empty() { "0" } else { digits };

    // value = 0.d1d2d3... × 10^(exp+1)
    let point = exp + 1;
    let mut out = String::new();
    if x < 0.0 {
        out.push('-');
    }
    if point <= 0 {
        out.push_str("0.");
        out.extend(std::iter::repeat_n('0', (-point) as usize));
        out.push_str(digits);
    } else if point as usize >= digits.len() {
        out.push_str(digits);
        out.extend(std::iter::repeat_n('0', point as usize - digits.len()));
    } else {
        out.push_str(&digits[..point as usize]);
        out.push('.');
        out.push_str(&digits[point as usize..]);
    }
    out
}

fn json_str(s: &str) -> String {
    serde_json::to_string(s).expect("string serialization is infallible")
}

fn opt_str(s: &Option<String>) -> String {
    json_str(s.as_deref().unwrap_or("NA"))
}

fn str_array<'a>(items: impl IntoIterator<Item = &'a String>) -> String {
    let parts: Vec<String> = items.into_iter().map(|s| json_str(s)).collect();
    format!("[{}]", parts.join(","))
}

fn opt_u64(v: Option<u64>) -> String {
    v.map_or_else(|| "null".to_string(), |n| n.to_string())
}

fn count_spec(c: &CountSpec) -> String {
    let mut parts = vec![format!("\"total\":{}", opt_u64(c.total))];
    if let Some(s) = &c.splits {
        for (key, v) in [("train", s.train), ("val", s.val), ("test", s.test)] {
            if let Some(n) = v {
                parts.push(format!("\"{key}\":{n}"));
            }
        }
    }
    format!("{{{}}}", parts.join(","))
}

fn class_count(c: &ClassCount) -> String {
    if c.settings.is_empty() {
        return opt_u64(c.num_classes);
    }
    // Settings keys are sorted; num_classes goes first.
    let mut parts = vec![format!("\"num_classes\":{}", opt_u64(c.num_classes))];
    for (k, v) in &c.settings {
        parts.push(format!("{}:{}", json_str(k), canonical_value(v)));
    }
    format!("{{{}}}", parts.join(","))
}

/// Compact JSON with object keys sorted at every depth.
fn canonical_value(v: &Value) -> String {
    match v {
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            let parts: Vec<String> = keys
                .into_iter()
                .map(|k| format!("{}:{}", json_str(k), canonical_value(&map[k])))
                .collect();
            format!("{{{}}}", parts.join(","))
        }
        Value::Array(items) => {
            let parts: Vec<String> = items.iter().map(canonical_value).collect();
            format!("[{}]", parts.join(","))
        }
        other => other.to_string(),
    }
}

/// One line, no trailing newline. `parse_dataset_meta_line` of the output
/// yields a record equal to `record`.
pub fn canonical_serialize(record: &DatasetRecord) -> String {
    let mut fields: Vec<(&str, String)> = vec![
        ("dataset_name", json_str(&record.dataset_name)),
        (
            "release_date",
            json_str(
                &record
                    .release_date
                    .map_or_else(|| "NA".to_string(), |d| d.to_string()),
            ),
        ),
        ("homepage_url", opt_str(&record.homepage_url)),
        ("organization", str_array(&record.organization)),
        ("challenge_series", opt_str(&record.challenge_series)),
        ("license", opt_str(&record.license)),
        ("dataset_description", opt_str(&record.dataset_description)),
        ("modality_primary", str_array(&record.modality_primary)),
        ("modality_secondary", opt_str(&record.modality_secondary)),
        ("anatomical_structure", str_array(&record.anatomical_structure)),
        ("disease", opt_str(&record.disease)),
        ("data_volume", count_spec(&record.data_volume)),
        ("valid_image_n", count_spec(&record.valid_image_n)),
        ("label_presence", json_str(record.label_presence.as_str())),
        ("task_type", str_array(&record.task_type)),
    ];
    let classes: Vec<String> = record
        .num_classes_per_task
        .iter()
        .map(|(k, v)| format!("{}:{}", json_str(k), class_count(v)))
        .collect();
    fields.push(("num_classes_per_task", format!("{{{}}}", classes.join(","))));
    if let Some(gb) = record.storage_size_gb {
        fields.push(("storage_size_gb", format_real(gb)));
    }
    if let Some(d) = &record.dimension {
        fields.push(("dimension", json_str(d)));
    }
    if let Some(n) = &record.notes {
        fields.push(("notes", json_str(n)));
    }
    let body: Vec<String> = fields
        .into_iter()
        .map(|(k, v)| format!("\"{k}\":{v}"))
        .collect();
    format!("{{{}}}", body.join(","))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::{parse_dataset_meta_line, LabelPresence, Splits};

    #[test]
    fn real_formatting() {
        assert_eq!(format_real(1.5), "1.5");
        assert_eq!(format_real(2.0), "2");
        assert_eq!(format_real(0.000123456789), "0.000123457");
        assert_eq!(format_real(1234567.0), "1234570");
        assert_eq!(format_real(120.25), "120.25");
        assert_eq!(format_real(0.0), "0");
        assert_eq!(format_real(-3.25), "-3.25");
    }

    #[test]
    fn round_sig6_is_idempotent() {
        for x in [0.1, 1.0 / 3.0, 123456.789, 9.999995, 1e-9, 7.0e15] {
            let r = round_sig6(x);
            assert_eq!(round_sig6(r), r);
            let back: f64 = format_real(r).parse().unwrap();
            assert_eq!(back, r, "x = {x}");
        }
    }

    #[test]
    fn modalities_are_sorted() {
        let mut r = DatasetRecord::new("X", LabelPresence::Labeled);
        r.modality_primary.insert("MRI".into());
        r.modality_primary.insert("CT".into());
        let line = canonical_serialize(&r);
        assert!(line.contains(r#""modality_primary":["CT","MRI"]"#), "{line}");
    }

    #[test]
    fn key_order_is_fixed() {
        let a = r#"{"label_presence":"labeled","dataset_name":"A","task_type":"Seg, Cls","valid_image_n":{"test":1,"total":3,"train":2}}"#;
        let b = r#"{"valid_image_n":{"train":2,"total":3,"test":1},"task_type":["Cls","Seg"],"dataset_name":"A","label_presence":"labeled"}"#;
        let ra = parse_dataset_meta_line(a, 1).unwrap().value;
        let rb = parse_dataset_meta_line(b, 1).unwrap().value;
        assert_eq!(canonical_serialize(&ra), canonical_serialize(&rb));
    }

    #[test]
    fn round_trip_with_every_field_set() {
        let mut r = DatasetRecord::new("Full, \"quoted\"", LabelPresence::Mixed);
        r.release_date = crate::schema::ReleaseDate::parse("2021-07-04");
        r.homepage_url = Some("https://example.org/a?b=c".into());
        r.organization = vec!["Org A".into(), "Org B".into()];
        r.challenge_series = Some("MICCAI".into());
        r.license = Some("CC BY 4.0".into());
        r.dataset_description = Some("line\nbreak, comma".into());
        r.modality_primary.insert("Fundus".into());
        r.modality_secondary = Some("T1".into());
        r.anatomical_structure = vec!["Retina".into(), "Optic Disc".into()];
        r.disease = Some("Glaucoma".into());
        r.data_volume = CountSpec {
            total: Some(10),
            splits: Some(Splits { train: Some(7), val: None, test: Some(3) }),
        };
        r.valid_image_n = CountSpec::total(9);
        r.task_type.insert("Cls".into());
        r.num_classes_per_task.insert(
            "classification".into(),
            ClassCount {
                num_classes: Some(4),
                settings: [("multi_label".to_string(), Value::Bool(true))].into(),
            },
        );
        r.num_classes_per_task.insert("segmentation".into(), ClassCount::default());
        r.storage_size_gb = Some(round_sig6(12.3456789));
        r.dimension = Some("2D".into());
        r.notes = Some("n".into());
        let line = canonical_serialize(&r);
        assert!(!line.contains('\n'));
        let back = parse_dataset_meta_line(&line, 1).unwrap();
        assert!(back.warnings.is_empty());
        assert_eq!(back.value, r);
    }
}
