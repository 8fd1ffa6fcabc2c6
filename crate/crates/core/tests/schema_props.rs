mod common;

use std::collections::BTreeMap;

use proptest::collection::{btree_map, btree_set, vec};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;
use serde_json::{Map, Value};

use fuseatlas::schema::{
    canonical_serialize, parse_dataset_meta_line, validate_catalog, ClassCount, CountSpec,
    DatasetRecord, LabelPresence, ReleaseDate, round_sig6, Severity, Splits, ValidationReport,
};

fn text() -> impl Strategy<Value = String> {
    // Prefixed so a generated value can never read as the "NA" sentinel.
    "[A-Za-z0-9][A-Za-z0-9 ,.()-]{0,24}".prop_map(|s| format!("x{}", s.trim_end()))
}

fn term() -> impl Strategy<Value = String> {
    "[A-Za-z][A-Za-z0-9]{0,8}"
}

fn release_date() -> impl Strategy<Value = Option<ReleaseDate>> {
    prop_oneof![
        Just(None),
        (1990i32..2031).prop_map(|year| Some(ReleaseDate { year, month: None, day: None })),
        (1990i32..2031, 1u32..13).prop_map(|(year, m)| Some(ReleaseDate { year, month: Some(m), day: None })),
        (1990i32..2031, 1u32..13, 1u32..29).prop_map(|(year, m, d)| Some(ReleaseDate {
            year,
            month: Some(m),
            day: Some(d)
        })),
    ]
}

fn splits() -> impl Strategy<Value = Option<Splits>> {
    proptest::option::of(
        (
            proptest::option::of(0u64..100_000),
            proptest::option::of(0u64..100_000),
            proptest::option::of(0u64..100_000),
        )
            .prop_filter("at least one split", |(a, b, c)| a.or(*b).or(*c).is_some())
            .prop_map(|(train, val, test)| Splits { train, val, test }),
    )
}

fn counts() -> impl Strategy<Value = (CountSpec, CountSpec)> {
    (proptest::option::of(0u64..10_000_000), any::<bool>(), splits(), splits()).prop_flat_map(
        |(volume, valid_known, vs, ns)| {
            let valid = match (volume, valid_known) {
                (Some(v), true) => (0..=v).prop_map(Some).boxed(),
                (None, true) => (0u64..10_000_000).prop_map(Some).boxed(),
                _ => Just(None).boxed(),
            };
            valid.prop_map(move |n| {
                (
                    CountSpec { total: volume, splits: vs },
                    CountSpec { total: n, splits: ns },
                )
            })
        },
    )
}

fn class_count() -> impl Strategy<Value = ClassCount> {
    let setting = prop_oneof![
        any::<i32>().prop_map(Value::from),
        any::<bool>().prop_map(Value::from),
        term().prop_map(Value::from),
    ];
    (proptest::option::of(0u64..1000), btree_map("[a-z_]{1,8}", setting, 0..3))
        .prop_filter("num_classes is not a setting", |(_, s)| !s.contains_key("num_classes"))
        .prop_map(|(num_classes, settings)| ClassCount { num_classes, settings })
}

prop_compose! {
    fn record()(
        name in text(),
        release_date in release_date(),
        homepage in proptest::option::of("[a-z]{1,10}".prop_map(|p| format!("https://example.org/{p}"))),
        organization in vec(text(), 0..3),
        challenge_series in proptest::option::of(text()),
        license in proptest::option::of(text()),
        description in proptest::option::of(text()),
        modality in btree_set(term(), 0..3),
        modality_secondary in proptest::option::of(text()),
        anatomy in vec(text(), 0..3),
        disease in proptest::option::of(text()),
        (data_volume, valid_image_n) in counts(),
        label in prop_oneof![Just(LabelPresence::Labeled), Just(LabelPresence::Unlabeled), Just(LabelPresence::Mixed)],
        tasks in btree_set(term(), 0..4),
        classes in btree_map(term(), class_count(), 0..3),
        storage in proptest::option::of((0u64..10_000_000).prop_map(|n| round_sig6(n as f64 / 1000.0))),
        dimension in proptest::option::of(prop_oneof![Just("2D"), Just("3D"), Just("2D+3D"), Just("Video")]),
        notes in proptest::option::of(text()),
    ) -> DatasetRecord {
        let mut r = DatasetRecord::new(name, label);
        r.release_date = release_date;
        r.homepage_url = homepage;
        r.organization = organization;
        r.challenge_series = challenge_series;
        r.license = license;
        r.dataset_description = description;
        r.modality_primary = modality;
        r.modality_secondary = modality_secondary;
        r.anatomical_structure = anatomy;
        r.disease = disease;
        r.data_volume = data_volume;
        r.valid_image_n = valid_image_n;
        r.task_type = tasks;
        r.num_classes_per_task = classes;
        r.storage_size_gb = storage;
        r.dimension = dimension.map(str::to_string);
        r.notes = notes;
        r
    }
}

/// Re-emits a JSON object with its top-level keys in `order`.
fn with_key_order(obj: &Map<String, Value>, order: &[String]) -> String {
    let parts: Vec<String> = order
        .iter()
        .map(|k| format!("{}:{}", Value::from(k.as_str()), obj[k]))
        .collect();
    format!("{{{}}}", parts.join(","))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn canonical_round_trip(rec in record()) {
        let line = canonical_serialize(&rec);
        let parsed = parse_dataset_meta_line(&line, 1).map_err(|r| TestCaseError::fail(format!("{r:?}")))?;
        prop_assert_eq!(&parsed.value, &rec);
        prop_assert_eq!(canonical_serialize(&parsed.value), line);
    }

    #[test]
    fn key_order_is_irrelevant(rec in record(), seed in any::<u64>()) {
        let line = canonical_serialize(&rec);
        let obj: Map<String, Value> = serde_json::from_str(&line).unwrap();
        let mut keys: Vec<String> = obj.keys().cloned().collect();
        keys.shuffle(&mut common::rng(seed));
        let permuted = with_key_order(&obj, &keys);
        let a = parse_dataset_meta_line(&line, 1).unwrap();
        let b = parse_dataset_meta_line(&permuted, 1).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn catalog_validation_ignores_order(seed in any::<u64>()) {
        let mut rng = common::rng(seed);
        let text = common::fixture("catalog_2d_meta.jsonl");
        let mut records: Vec<DatasetRecord> = text
            .lines()
            .filter_map(|l| parse_dataset_meta_line(l, 0).ok())
            .map(|p| p.value)
            .collect();
        // Inject a duplicate name so there is something to report.
        let dup = records[rng.gen_range(0..records.len())].clone();
        records.push(dup);
        let before = diagnostic_bag(&validate_catalog(&records, &[]));
        records.shuffle(&mut rng);
        let after = diagnostic_bag(&validate_catalog(&records, &[]));
        prop_assert_eq!(before, after);
    }
}

/// Diagnostics without line numbers, as a multiset.
fn diagnostic_bag(report: &ValidationReport) -> BTreeMap<(bool, String, String), usize> {
    let mut bag = BTreeMap::new();
    for d in &report.diagnostics {
        *bag.entry((d.severity == Severity::Error, d.field.clone(), d.message.clone())).or_insert(0) += 1;
    }
    bag
}

#[test]
fn fuzzed_lines_never_panic_and_name_a_field() {
    let summary = common::checks::fuzz_meta_lines(10_000, 0x5eed).unwrap();
    assert!(summary.rejected > 5_000, "{summary:?}");
}
