#![allow(dead_code)]

pub mod checks;

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;
use std::sync::OnceLock;

use chrono::{DateTime, TimeZone, Utc};
use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};

use fuseatlas::harmonize::{build_catalog, parse_overlap_hints, BuildOptions, CatalogManifest};
use fuseatlas::query::{Axis, FilterRecipe, LabelFilter, SetMatch};
use fuseatlas::vocab::{Dimension, Modality, TaskCode, Vocabulary, ANATOMY_ROOTS};

pub fn fixture_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn fixture(name: &str) -> String {
    std::fs::read_to_string(fixture_path(name)).unwrap_or_else(|e| panic!("fixture {name}: {e}"))
}

pub fn fixed_time() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2025, 1, 1, 0, 0, 0).unwrap()
}

pub fn build(meta: &str, hints: &str) -> CatalogManifest {
    let hints = parse_overlap_hints(hints).expect("hints parse");
    let opts = BuildOptions {
        vocab: Vocabulary::builtin(),
        generated_at: fixed_time(),
        strict: false,
    };
    build_catalog(meta, &[], &hints, &opts).expect("non-strict build").manifest
}

/// The 2D catalog corpus with the overlap hints applied, built once.
pub fn catalog() -> &'static CatalogManifest {
    static M: OnceLock<CatalogManifest> = OnceLock::new();
    M.get_or_init(|| build(&fixture("catalog_2d_meta.jsonl"), &fixture("overlap_hints.tsv")))
}

pub fn composition() -> &'static CatalogManifest {
    static M: OnceLock<CatalogManifest> = OnceLock::new();
    M.get_or_init(|| build(&fixture("composition_meta.jsonl"), ""))
}

pub fn shuffled_lines(text: &str, rng: &mut StdRng) -> String {
    let mut lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
    lines.shuffle(rng);
    let mut out = lines.join("\n");
    out.push('\n');
    out
}

fn pick_some<T: Clone>(rng: &mut StdRng, pool: &[T], max: usize) -> Vec<T> {
    let k = rng.gen_range(1..=max.min(pool.len()));
    pool.choose_multiple(rng, k).cloned().collect()
}

// Modalities and tasks that actually occur in the corpus, so random recipes
// select something often enough to be interesting.
const COMMON_MODALITIES: [Modality; 8] = [
    Modality::Ct,
    Modality::Mri,
    Modality::Xray,
    Modality::Fundus,
    Modality::Ultrasound,
    Modality::Pathology,
    Modality::Endoscopy,
    Modality::Dermoscopy,
];
const TEXT_PROBES: [&str; 6] = ["chest", "retina", "challenge", "kaggle", "tumor", "cell"];

/// A random recipe; each predicate is left open about half the time.
pub fn random_recipe(rng: &mut StdRng) -> FilterRecipe {
    let mut r = FilterRecipe::default();
    if rng.gen_bool(0.5) {
        r.dimensions = pick_some(rng, &Dimension::ALL, 2);
        r.allow_3d_as_2d_sources = rng.gen_bool(0.3);
    }
    if rng.gen_bool(0.5) {
        let pool: &[Modality] = if rng.gen_bool(0.8) { &COMMON_MODALITIES } else { &Modality::ALL };
        r.modalities = pick_some(rng, pool, 3);
    }
    if rng.gen_bool(0.5) {
        r.tasks = pick_some(rng, &TaskCode::ALL, 4);
    }
    if rng.gen_bool(0.3) {
        r.anatomy_roots = pick_some(rng, &ANATOMY_ROOTS.map(String::from), 3);
    }
    if rng.gen_bool(0.1) {
        r.licenses_allow = pick_some(rng, &["CC BY 4.0".to_string(), "unspecified".to_string()], 2);
    }
    r.min_valid_image_n = *[0u64, 0, 100, 1_000, 10_000].choose(rng).unwrap();
    if rng.gen_bool(0.3) {
        let lo = rng.gen_range(2000..=2022);
        r.year_range = Some((lo, rng.gen_range(lo..=2025)));
    }
    if rng.gen_bool(0.3) {
        r.label_presence = LabelFilter::LabeledOnly;
    }
    if rng.gen_bool(0.15) {
        r.text_query = Some(TEXT_PROBES.choose(rng).unwrap().to_string());
    }
    if rng.gen_bool(0.2) {
        r.set_match = SetMatch::Subset;
    }
    r
}

/// Drops elements from a non-singleton list, or fills an open one.
fn narrow<T: Clone + PartialEq>(rng: &mut StdRng, v: &mut Vec<T>, pool: &[T]) {
    if v.is_empty() {
        *v = pick_some(rng, pool, 3);
    } else if v.len() >= 2 {
        let i = rng.gen_range(0..v.len());
        v.remove(i);
    }
}

/// A recipe whose selection can only be a subset of `r`'s.
pub fn tighten(r: &FilterRecipe, rng: &mut StdRng) -> FilterRecipe {
    let mut t = r.clone();
    match rng.gen_range(0..10) {
        0 => t.min_valid_image_n = t.min_valid_image_n.saturating_add(rng.gen_range(1..5_000)),
        1 => t.label_presence = LabelFilter::LabeledOnly,
        2 => {
            t.year_range = Some(match t.year_range {
                Some((lo, hi)) => {
                    let mid = lo + (hi - lo) / 2;
                    if rng.gen_bool(0.5) {
                        (lo, mid)
                    } else {
                        (mid, hi)
                    }
                }
                None => (2015, 2020),
            })
        }
        3 => narrow(rng, &mut t.modalities, &COMMON_MODALITIES),
        4 => narrow(rng, &mut t.tasks, &TaskCode::ALL),
        5 => narrow(rng, &mut t.dimensions, &Dimension::ALL),
        6 => narrow(rng, &mut t.anatomy_roots, &ANATOMY_ROOTS.map(String::from)),
        7 => t.allow_3d_as_2d_sources = false,
        8 => {
            // Lengthening a substring query only narrows it.
            let q = t.text_query.take().unwrap_or_default();
            t.text_query = Some(format!("{q}{}", ["a", "e", " ", "chest"].choose(rng).unwrap()));
        }
        _ => narrow(rng, &mut t.licenses_allow, &["CC BY 4.0".to_string(), "unspecified".to_string()]),
    }
    t
}

/// Splits `r` into two recipes constraining disjoint predicates whose
/// conjunction is `r`.
pub fn split_recipe(r: &FilterRecipe, rng: &mut StdRng) -> (FilterRecipe, FilterRecipe) {
    let mut a = FilterRecipe {
        set_match: r.set_match,
        ..Default::default()
    };
    let mut b = a.clone();
    macro_rules! route {
        ($($f:ident),*) => {$(
            if rng.gen_bool(0.5) { a.$f = r.$f.clone(); } else { b.$f = r.$f.clone(); }
        )*};
    }
    // The projection switch only has meaning next to the dimension list.
    if rng.gen_bool(0.5) {
        a.dimensions = r.dimensions.clone();
        a.allow_3d_as_2d_sources = r.allow_3d_as_2d_sources;
    } else {
        b.dimensions = r.dimensions.clone();
        b.allow_3d_as_2d_sources = r.allow_3d_as_2d_sources;
    }
    route!(modalities, tasks, anatomy_roots, licenses_allow, min_valid_image_n, year_range, label_presence, text_query);
    (a, b)
}

/// A random facet state drawn from the values present in `manifest`.
pub fn random_facets(rng: &mut StdRng, manifest: &CatalogManifest) -> (BTreeMap<String, Vec<String>>, Option<String>) {
    let mut facets = BTreeMap::new();
    for axis in Axis::ALL {
        if !rng.gen_bool(0.35) {
            continue;
        }
        let values: Vec<String> = match axis {
            Axis::LabelPresence => vec![["any", "labeled_only"].choose(rng).unwrap().to_string()],
            Axis::Year => {
                let lo = rng.gen_range(2000..=2024);
                if rng.gen_bool(0.5) {
                    vec![lo.to_string()]
                } else {
                    vec![format!("{lo}-{}", rng.gen_range(lo..=2025))]
                }
            }
            _ => {
                let present: BTreeSet<String> = manifest
                    .datasets
                    .iter()
                    .flat_map(|r| axis.values_of(r))
                    .filter(|v| v != fuseatlas::query::UNKNOWN_VALUE)
                    .collect();
                let present: Vec<String> = present.into_iter().collect();
                pick_some(rng, &present, 3)
            }
        };
        facets.insert(axis.as_str().to_string(), values);
    }
    let text = rng.gen_bool(0.15).then(|| TEXT_PROBES.choose(rng).unwrap().to_string());
    (facets, text)
}

pub fn rng(seed: u64) -> StdRng {
    StdRng::seed_from_u64(seed)
}
