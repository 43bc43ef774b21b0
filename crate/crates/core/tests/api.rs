mod common;

use std::fs;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use common::{submission, test_key};
use fairhub_core::catalog::Query;
use fairhub_core::pipeline::api::{router, Api};
use fairhub_core::pipeline::{run_pipeline, BundleConfig, PipelineConfig, Resources};
use fairhub_core::samples;
use fairhub_core::synth::SynthSpec;
use serde_json::Value;

/// The sample study, submitted and stored under `root/store`.
fn sample_store(root: &Path) -> std::path::PathBuf {
    let study = root.join("submission");
    let bundle = study.join("bundles/education");
    fs::create_dir_all(&bundle).unwrap();
    fs::create_dir_all(study.join("docs")).unwrap();
    fs::write(study.join("study.json"), samples::STUDY_PHS002920_JSON).unwrap();
    fs::write(study.join("docs/protocol.txt"), "Protocol summary.\n").unwrap();
    fs::write(bundle.join("data.csv"), samples::EDUCATION_DATA_CSV).unwrap();
    fs::write(bundle.join("dict.csv"), samples::EDUCATION_DICT_CSV).unwrap();
    let meta = serde_json::to_vec_pretty(&samples::education_bundle().file_metadata).unwrap();
    fs::write(bundle.join("meta.json"), meta).unwrap();
    fs::write(root.join("mapping.json"), samples::EDUCATION_MAPPING_JSON).unwrap();

    let mut cfg = PipelineConfig::new(root.join("store"));
    cfg.default_bundle = BundleConfig { mapping: Some(root.join("mapping.json")), ..Default::default() };
    cfg.default_bundle.deid.id_column = Some("participant_id".into());
    let res = Resources::load(&cfg).unwrap();
    let out = run_pipeline(&study, &cfg, &res, Some(&test_key())).unwrap();
    assert!(out.report.accepted(), "{}", out.report.render_text(10));
    cfg.store_root
}

fn get(api: &Api, path: &str, query: &str) -> (u16, Value) {
    let r = api.handle("GET", path, query);
    (r.status, r.json_body())
}

#[test]
fn sample_study_is_served() {
    let dir = tempfile::tempdir().unwrap();
    let api = Api::load(&sample_store(dir.path())).unwrap();

    let (status, body) = get(&api, "/studies/phs002920", "");
    assert_eq!(status, 200);
    assert_eq!(body["metadata"]["program"], "RADx-UP");
    assert_eq!(body["metadata"]["nih_institute"], "NLM");
    assert_eq!(body["metadata"]["estimated_cohort_size"], 128);
    assert!(body["persistent_id"].as_str().unwrap().starts_with("local:"));
    assert_eq!(body["documents"], serde_json::json!(["protocol.txt"]));
    let files = body["files"].as_array().unwrap();
    let names: Vec<&str> = files.iter().map(|f| f["file_name"].as_str().unwrap()).collect();
    assert_eq!(names, ["education-data.csv", "education-data_harmonized.csv"]);
    assert!(files.iter().all(|f| f["downloadable"] == false));

    let (status, body) = get(&api, "/studies/phs002920/files/education-data_harmonized.csv", "");
    assert_eq!(status, 200);
    assert_eq!(body["harmonized"], true);

    let r = api.handle("GET", "/studies/phs002920/files/education-data_harmonized.csv/dictionary", "");
    assert_eq!(r.status, 200);
    assert!(String::from_utf8(r.body).unwrap().contains("nih_education"));

    let r = api.handle("GET", "/studies/phs002920/metadata", "format=yaml");
    assert_eq!(r.status, 200);
    assert!(String::from_utf8(r.body).unwrap().contains("program: RADx-UP"));

    let r = api.handle("GET", "/studies/phs002920/docs/protocol.txt", "");
    assert_eq!((r.status, r.body.as_slice()), (200, b"Protocol summary.\n".as_slice()));
}

#[test]
fn controlled_data_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let api = Api::load(&sample_store(dir.path())).unwrap();
    let (status, body) = get(&api, "/studies/phs002920/files/education-data.csv/data", "");
    assert_eq!(status, 403);
    assert_eq!(body["error"], "CONTROLLED_ACCESS");
    assert_eq!(body["message"], "request via access process");
}

#[test]
fn public_data_downloads() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SynthSpec {
        rows_per_bundle: 20,
        extra_variables: 7,
        access_tier: Some(fairhub_core::metadata::AccessTier::Public),
        ..SynthSpec::new(3)
    };
    let sub = submission(&spec, dir.path());
    assert!(run_pipeline(&sub.study_dir(0), &sub.cfg, &sub.res, Some(&test_key())).unwrap().report.accepted());
    let api = Api::load(&sub.cfg.store_root).unwrap();
    let acc = &sub.corpus.studies[0].accession;
    let r = api.handle("GET", &format!("/studies/{acc}/files/file01.csv/data"), "");
    assert_eq!(r.status, 200);
    assert_eq!(r.content_type, fairhub_core::pipeline::api::CSV);
    assert_eq!(String::from_utf8(r.body).unwrap().lines().count(), 21);
}

#[test]
fn errors_have_codes() {
    let dir = tempfile::tempdir().unwrap();
    let api = Api::load(&sample_store(dir.path())).unwrap();
    assert_eq!(get(&api, "/studies/phs999999", "").0, 404);
    assert_eq!(get(&api, "/studies/phs002920/files/nope.csv", "").0, 404);
    assert_eq!(get(&api, "/studies/phs002920/docs/secret.txt", "").0, 404);
    assert_eq!(get(&api, "/nowhere", "").0, 404);
    assert_eq!(api.handle("POST", "/studies", "").status, 405);
    let (s, b) = get(&api, "/studies", "filter=colour%3Dred");
    assert_eq!((s, b["error"].as_str().unwrap()), (400, "QRY_BAD_FIELD"));
    let (s, b) = get(&api, "/studies", "limit=0");
    assert_eq!((s, b["error"].as_str().unwrap()), (400, "QRY_BAD_VALUE"));
    let (s, b) = get(&api, "/facets", "field=program&stack_by=study_domains");
    assert_eq!((s, b["error"].as_str().unwrap()), (400, "QRY_BAD_FIELD"));
}

#[test]
fn search_and_facets_match_the_catalog() {
    let dir = tempfile::tempdir().unwrap();
    let store = sample_store(dir.path());
    let spec = SynthSpec { n_studies: 6, rows_per_bundle: 10, extra_variables: 7, ..SynthSpec::new(21) };
    let mut sub = submission(&spec, &dir.path().join("synth"));
    sub.cfg.store_root = store.clone();
    for i in 0..spec.n_studies {
        assert!(run_pipeline(&sub.study_dir(i), &sub.cfg, &sub.res, Some(&test_key())).unwrap().report.accepted());
    }
    let api = Api::load(&store).unwrap();
    assert_eq!(api.index().len(), 7);

    let (_, body) = get(&api, "/studies", "text=testing&filter=program%3DRADx-UP&sort=-cohort_size&limit=3");
    let q = Query::from_params([("text", "testing"), ("filter", "program=RADx-UP"), ("sort", "-cohort_size"), ("limit", "3")])
        .unwrap();
    let direct = api.index().search(&q).unwrap();
    assert_eq!(body["total"], direct.total);
    let got: Vec<&str> = body["results"].as_array().unwrap().iter().map(|r| r["accession"].as_str().unwrap()).collect();
    let want: Vec<&str> = direct.hits.iter().map(|h| h.accession()).collect();
    assert_eq!(got, want);
    assert!(got.contains(&"phs002920"));

    let records = api.index().records().to_vec();
    let (total, page) = common::oracle_search(&records, &q);
    assert_eq!((total, page.iter().map(String::as_str).collect::<Vec<_>>()), (direct.total, want));

    let (_, body) = get(&api, "/facets", "field=program&stack_by=nih_institute");
    let rows = body["rows"].as_array().unwrap();
    let sum: u64 = rows.iter().map(|r| r["total"].as_u64().unwrap()).sum();
    assert_eq!(sum, 7);
    for r in rows {
        let stacked: u64 = r["stacks"].as_object().unwrap().values().map(|v| v.as_u64().unwrap()).sum();
        assert_eq!(stacked, r["total"].as_u64().unwrap());
    }
    let csv = api.handle("GET", "/facets", "field=program&format=csv");
    assert_eq!(csv.content_type, fairhub_core::pipeline::api::CSV);
    assert!(String::from_utf8(csv.body).unwrap().starts_with("program,total\n"));

    let (_, body) = get(&api, "/autocomplete", "prefix=Sa&k=5");
    let want = common::oracle_autocomplete(&records, "Sa", 5);
    let got: Vec<String> = serde_json::from_value(body["suggestions"].clone()).unwrap();
    assert_eq!(got, want);
}

#[test]
fn http_server_answers() {
    let dir = tempfile::tempdir().unwrap();
    let api = Arc::new(Api::load(&sample_store(dir.path())).unwrap());
    let rt = tokio::runtime::Runtime::new().unwrap();
    let listener = rt.block_on(tokio::net::TcpListener::bind("127.0.0.1:0")).unwrap();
    let addr = listener.local_addr().unwrap();
    rt.spawn(async move { axum::serve(listener, router(api)).await.unwrap() });

    let fetch = |path: &str| {
        let mut s = std::net::TcpStream::connect(addr).unwrap();
        write!(s, "GET {path} HTTP/1.1\r\nHost: localhost\r\nConnection: close\r\n\r\n").unwrap();
        let mut out = String::new();
        s.read_to_string(&mut out).unwrap();
        out
    };
    let health = fetch("/health");
    assert!(health.starts_with("HTTP/1.1 200"), "{health}");
    assert!(health.contains("\"studies\":1"));
    assert!(fetch("/studies/phs002920/files/education-data.csv/data").starts_with("HTTP/1.1 403"));
    assert!(fetch("/studies/zzz").starts_with("HTTP/1.1 404"));
}
