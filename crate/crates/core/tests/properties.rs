use std::collections::{BTreeMap, BTreeSet};

use chrono::NaiveDate;
use fairhub_core::deid::{
    deidentify_bundle, derive_date_shift, generalize_zip, transform_age, DateShiftScope, DeidKey, DeidSettings,
    DEFAULT_RESTRICTED_ZIP3,
};
use fairhub_core::dictionary::{parse_dictionary, serialize_dictionary};
use fairhub_core::harmonize::{apply_mappings, HarmonizeOptions};
use fairhub_core::metadata::{parse_metadata, serialize_metadata, AccessTier};
use fairhub_core::piiscan::mask;
use fairhub_core::pipeline::store::{parse_manifest, persistent_id, serialize_manifest, Manifest, ManifestEntry};
use fairhub_core::samples;
use fairhub_core::synth::synth_study_metadata;
use fairhub_core::tabledata::{parse_table, MissingPolicy};
use fairhub_core::{DataDictionary, Datatype, EnumerationEntry, FileBundle, FileMetadata, Table, VariableSpec};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn key_from(bytes: &[u8]) -> DeidKey {
    DeidKey::new(bytes.to_vec()).unwrap()
}

fn date_bundle(dates: &[NaiveDate], ids: &[String]) -> FileBundle {
    let rows = dates.iter().zip(ids).map(|(d, id)| vec![id.clone(), d.format("%Y-%m-%d").to_string()]).collect();
    let table = Table::new(vec!["participant_id".into(), "visit_date".into()], rows).unwrap();
    let dictionary = DataDictionary::new(
        "visits.csv",
        vec![
            VariableSpec::new("participant_id", "Participant", Datatype::String),
            VariableSpec::new("visit_date", "Visit", Datatype::Date),
        ],
    );
    FileBundle { table, dictionary, file_metadata: FileMetadata::new("phs000123", "visits.csv", 1) }
}

fn date_settings(scope: DateShiftScope) -> DeidSettings {
    DeidSettings {
        date_shift_scope: scope,
        id_column: Some("participant_id".into()),
        date_columns: ["visit_date".to_string()].into(),
        ..Default::default()
    }
}

fn shifted_dates(b: &FileBundle) -> Vec<NaiveDate> {
    b.table.column(1).map(|c| NaiveDate::parse_from_str(c, "%Y-%m-%d").unwrap()).collect()
}

fn arb_date() -> impl Strategy<Value = NaiveDate> {
    (0i64..40_000).prop_map(|d| NaiveDate::from_ymd_opt(1950, 1, 1).unwrap() + chrono::Duration::days(d))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn study_shift_keeps_every_interval(
        dates in prop::collection::vec(arb_date(), 2..12),
        key in prop::collection::vec(any::<u8>(), 16..40),
    ) {
        let ids: Vec<String> = (0..dates.len()).map(|i| format!("P{i:06}")).collect();
        let b = date_bundle(&dates, &ids);
        let cfg = date_settings(DateShiftScope::PerStudy).with_key(key_from(&key));
        let (out, rep) = deidentify_bundle(&b, &cfg, &MissingPolicy::default()).unwrap();
        let shifted = shifted_dates(&out);
        for i in 0..dates.len() {
            for j in 0..dates.len() {
                prop_assert_eq!((dates[j] - dates[i]).num_days(), (shifted[j] - shifted[i]).num_days());
            }
        }
        let offset = (shifted[0] - dates[0]).num_days();
        prop_assert!((1..=180).contains(&offset.abs()));
        prop_assert_eq!(rep.shift_offsets.values().copied().collect::<Vec<_>>(), vec![offset]);
    }

    #[test]
    fn participant_shift_keeps_intervals_within_a_participant(
        dates in prop::collection::vec(arb_date(), 2..12),
        who in prop::collection::vec(0u8..3, 12),
        key in prop::collection::vec(any::<u8>(), 16..40),
    ) {
        let ids: Vec<String> = who.iter().take(dates.len()).map(|w| format!("P{w:06}")).collect();
        let b = date_bundle(&dates, &ids);
        let cfg = date_settings(DateShiftScope::PerParticipant).with_key(key_from(&key));
        let (out, rep) = deidentify_bundle(&b, &cfg, &MissingPolicy::default()).unwrap();
        let shifted = shifted_dates(&out);
        for i in 0..dates.len() {
            for j in 0..dates.len() {
                if ids[i] == ids[j] {
                    prop_assert_eq!((dates[j] - dates[i]).num_days(), (shifted[j] - shifted[i]).num_days());
                }
            }
        }
        for label in rep.shift_offsets.keys() {
            prop_assert!(!ids.iter().any(|id| label.contains(id.as_str())));
        }
    }

    #[test]
    fn ages_follow_the_bands(age in 0.0f64..130.0, subject in "[A-Z0-9:]{1,12}", key in prop::collection::vec(any::<u8>(), 16..40)) {
        let out = transform_age(age, &subject, &key_from(&key)).unwrap();
        let years = age.round() as i64;
        if age < 1.0 {
            prop_assert_eq!(out, 0);
        } else if years >= 90 {
            prop_assert_eq!(out, 90);
        } else if years >= 21 {
            prop_assert!(out == years + 2 || out == years - 2);
        } else {
            prop_assert_eq!(out, years);
        }
    }

    #[test]
    fn zips_generalize_or_zero(zip in "[0-9]{5}", restricted in prop::collection::btree_set("[0-9]{3}", 0..20)) {
        let (out, _) = generalize_zip(&zip, &restricted);
        if restricted.contains(&zip[..3]) {
            prop_assert_eq!(out, "000");
        } else {
            prop_assert_eq!(out, &zip[..3]);
        }
    }

    #[test]
    fn malformed_zips_zero(zip in "[0-9A-Za-z -]{0,9}") {
        prop_assume!(!(zip.len() == 5 && zip.bytes().all(|b| b.is_ascii_digit())));
        let restricted: BTreeSet<String> = DEFAULT_RESTRICTED_ZIP3.iter().map(|s| s.to_string()).collect();
        prop_assert_eq!(generalize_zip(&zip, &restricted).0, "000");
    }

    #[test]
    fn same_key_same_bytes(seed in any::<u64>(), key in prop::collection::vec(any::<u8>(), 16..40)) {
        let b = synth_bundle(seed);
        let cfg = fairhub_core::synth::synth_deid_settings().with_key(key_from(&key));
        let (x, rx) = deidentify_bundle(&b, &cfg, &MissingPolicy::default()).unwrap();
        let (y, ry) = deidentify_bundle(&b, &cfg, &MissingPolicy::default()).unwrap();
        prop_assert_eq!(x.table.to_csv(), y.table.to_csv());
        prop_assert_eq!(rx, ry);
    }
}

fn synth_bundle(seed: u64) -> FileBundle {
    let spec = fairhub_core::synth::SynthSpec { rows_per_bundle: 12, extra_variables: 0, ..fairhub_core::synth::SynthSpec::new(seed) };
    fairhub_core::synth::generate(&spec).unwrap().studies.remove(0).bundles.remove(0).bundle
}

#[test]
fn offsets_cover_the_full_range_across_keys() {
    let mut seen = BTreeSet::new();
    for k in 0u32..5000 {
        let key = key_from(&[k.to_be_bytes().as_slice(), &[7u8; 28]].concat());
        seen.insert(derive_date_shift("phs000123", &key));
    }
    let want: BTreeSet<i64> = (-180..=-1).chain(1..=180).collect();
    assert_eq!(seen, want);
}

fn arb_text() -> impl Strategy<Value = String> {
    "[A-Za-z0-9][A-Za-z0-9 ,;:'\"=()/.-]{0,14}[A-Za-z0-9)]"
}

fn arb_variable() -> impl Strategy<Value = VariableSpec> {
    let kind = prop::sample::select(Datatype::ALL.to_vec());
    (
        "[a-z_][a-z0-9_]{0,10}",
        arb_text(),
        kind,
        prop::option::of("[a-z%/]{1,6}"),
        any::<bool>(),
        prop::option::of(prop::sample::select(vec![r"\d{5}", "[A-Z]+", r"P\d{6}"])),
        prop::collection::btree_map("[0-9A-Za-z]{1,3}", arb_text(), 1..5),
        prop::option::of(-1e6f64..1e6),
        prop::option::of(0f64..1e6),
    )
        .prop_map(|(id, label, datatype, units, required, pattern, codes, lo, span)| {
            let mut v = VariableSpec::new(id, label, datatype).required(required);
            v.units = units;
            v.pattern = pattern.map(str::to_string);
            if datatype == Datatype::Enum {
                v.enumeration = codes.into_iter().map(|(c, l)| EnumerationEntry::new(c, l)).collect();
            }
            if datatype.is_numeric() {
                v.min = lo;
                v.max = span.map(|s| lo.unwrap_or(0.0) + s);
            }
            v
        })
}

fn arb_dictionary() -> impl Strategy<Value = DataDictionary> {
    prop::collection::vec(arb_variable(), 1..12).prop_map(|vars| {
        let mut seen = BTreeSet::new();
        let vars = vars.into_iter().filter(|v| seen.insert(v.id.clone())).collect();
        DataDictionary::new("dict.csv", vars)
    })
}

fn arb_manifest() -> impl Strategy<Value = Manifest> {
    (
        "phs[0-9]{6}",
        prop::collection::btree_map("[a-z0-9_-]{1,10}\\.csv", 1u32..20, 0..5),
        prop::collection::btree_map("[a-z0-9_/.-]{1,30}", (any::<[u8; 32]>(), any::<u64>()), 0..12),
    )
        .prop_map(|(accession, versions, files)| Manifest {
            accession,
            versions,
            files: files
                .into_iter()
                .map(|(path, (h, size))| ManifestEntry { path, sha256: hex_of(&h), size })
                .collect(),
        })
}

fn hex_of(b: &[u8]) -> String {
    b.iter().map(|x| format!("{x:02x}")).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn dictionary_csv_round_trips(d in arb_dictionary()) {
        prop_assert!(fairhub_core::dictionary::validate_dictionary(&d).is_empty());
        let bytes = serialize_dictionary(&d);
        let back = parse_dictionary(&bytes, "dict.csv").unwrap();
        prop_assert_eq!(&back, &d);
        prop_assert_eq!(serialize_dictionary(&back), bytes);
    }

    #[test]
    fn study_metadata_json_round_trips(seed in any::<u64>(), public in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tier = if public { AccessTier::Public } else { AccessTier::Controlled };
        let m = synth_study_metadata(&mut rng, "phs000321", tier);
        let inst = m.to_instance();
        let tpl = samples::study_template();
        prop_assert!(fairhub_core::metadata::validate_metadata(&inst, &tpl, &samples::term_registry()).is_empty());
        let bytes = serialize_metadata(&inst, &tpl);
        let back = parse_metadata(&bytes, "study.json").unwrap();
        prop_assert_eq!(&back, &inst);
        prop_assert_eq!(fairhub_core::StudyMetadata::from_instance(&back).unwrap(), m);
        prop_assert_eq!(serialize_metadata(&back, &tpl), bytes);
    }

    #[test]
    fn manifests_round_trip(m in arb_manifest()) {
        let bytes = serialize_manifest(&m);
        let back = parse_manifest(&bytes).unwrap();
        prop_assert_eq!(&back, &m);
        prop_assert_eq!(serialize_manifest(&back), bytes.clone());
        prop_assert_eq!(persistent_id(&bytes).len(), "local:".len() + 12);
    }

    #[test]
    fn tables_round_trip(header in prop::collection::btree_set("[a-z_]{1,8}", 1..6), cells in prop::collection::vec(".{0,12}", 0..60)) {
        let header: Vec<String> = header.into_iter().collect();
        let w = header.len();
        let rows: Vec<Vec<String>> = cells.chunks(w).filter(|c| c.len() == w).map(|c| c.to_vec()).collect();
        let t = Table::new(header, rows).unwrap();
        let back = parse_table(&t.to_csv(), "t.csv").unwrap();
        prop_assert_eq!(back, t);
    }

    #[test]
    fn masking_keeps_length_and_ends(s in "[ -~]{3,30}") {
        let m = mask(&s);
        prop_assert_eq!(m.chars().count(), s.chars().count());
        prop_assert_eq!(m.chars().next(), s.chars().next());
        prop_assert_eq!(m.chars().last(), s.chars().last());
        prop_assert!(m.chars().skip(1).take(s.len() - 2).all(|c| c == '*'));
    }

    #[test]
    fn education_codes_follow_the_value_map(codes in prop::collection::vec(prop::sample::select(vec!["1", "2", "3", "4", "5", "6", "7", "99", ""]), 1..40)) {
        let rows: Vec<Vec<String>> = codes
            .iter()
            .enumerate()
            .map(|(i, c)| vec![format!("P{:06}", i + 1), c.to_string(), "50".into()])
            .collect();
        let header = vec!["participant_id".into(), "edu_years_of_school".into(), "custom_score".into()];
        let t = Table::new(header, rows).unwrap();
        let m = samples::education_mapping();
        let vm: &BTreeMap<String, String> = &m.mappings[0].value_map;
        let (h, _, rep) =
            apply_mappings(&t, &samples::education_dictionary(), &samples::codebook(), &m, &HarmonizeOptions::default()).unwrap();
        let col = h.column_index("nih_education").unwrap();
        for (c, out) in codes.iter().zip(h.column(col)) {
            let want = if c.is_empty() { "" } else { vm[*c].as_str() };
            prop_assert_eq!(out, want);
        }
        prop_assert_eq!(rep.values_remapped, codes.iter().filter(|c| !c.is_empty()).count());
    }
}
