//! Read-only HTTP API over a study store.
//!
//! Routing is a plain function of (method, path, query) so it can be tested
//! without a socket; [`serve`] puts it behind axum.

use std::collections::BTreeMap;
use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Serialize;
use serde_json::{json, Value};

use super::ingest::{DATA_FILE, DICT_FILE, DOCS_DIR};
use super::store::{self, FileKind, StoreError, StoredStudy};
use crate::catalog::{CatalogError, FacetField, Index, Query};
use crate::metadata::{serialize_metadata, serialize_metadata_yaml, AccessTier, StudyMetadata};
use crate::samples;

pub const JSON: &str = "application/json";
pub const CSV: &str = "text/csv; charset=utf-8";
pub const YAML: &str = "application/yaml";

pub const DEFAULT_SUGGESTIONS: usize = 10;
pub const MAX_SUGGESTIONS: usize = 100;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ApiResponse {
    pub status: u16,
    pub content_type: &'static str,
    pub body: Vec<u8>,
}

impl ApiResponse {
    fn json(status: u16, v: &impl Serialize) -> Self {
        let mut body = serde_json::to_vec(v).expect("response serializes");
        body.push(b'\n');
        ApiResponse { status, content_type: JSON, body }
    }

    fn ok(v: &impl Serialize) -> Self {
        ApiResponse::json(200, v)
    }

    fn error(status: u16, code: &str, message: impl Into<String>) -> Self {
        ApiResponse::json(status, &json!({ "error": code, "message": message.into() }))
    }

    fn not_found(what: impl Into<String>) -> Self {
        ApiResponse::error(404, "NOT_FOUND", what)
    }

    fn bad_query(e: CatalogError) -> Self {
        ApiResponse::error(400, e.code(), e.to_string())
    }

    pub fn json_body(&self) -> Value {
        serde_json::from_slice(&self.body).unwrap_or(Value::Null)
    }
}

#[derive(Debug, Serialize)]
struct FileEntry<'a> {
    file_name: &'a str,
    kind: FileKind,
    version: u32,
    records: Option<usize>,
    variables: usize,
    deid_applied: bool,
    harmonized: bool,
    downloadable: bool,
}

#[derive(Debug, Serialize)]
struct SearchPage<'a> {
    total: usize,
    offset: usize,
    limit: usize,
    results: Vec<&'a StudyMetadata>,
}

/// An immutable snapshot of the store.
pub struct Api {
    root: PathBuf,
    index: Index,
    studies: BTreeMap<String, StoredStudy>,
}

fn content_type_for(name: &str) -> &'static str {
    match name.rsplit_once('.').map(|(_, e)| e.to_ascii_lowercase()).as_deref() {
        Some("pdf") => "application/pdf",
        Some("txt") | Some("md") => "text/plain; charset=utf-8",
        Some("csv") => CSV,
        Some("json") => JSON,
        _ => "application/octet-stream",
    }
}

impl Api {
    /// Loads every stored study. The search index comes from `catalog.json`
    /// when present, so answers match the catalog the pipeline wrote.
    pub fn load(root: &Path) -> Result<Api, StoreError> {
        if !root.is_dir() {
            let source = std::io::Error::new(std::io::ErrorKind::NotFound, "store root is not a directory");
            return Err(StoreError::Io { path: root.to_path_buf(), source });
        }
        let studies: BTreeMap<String, StoredStudy> =
            store::load_all(root)?.into_iter().map(|s| (s.metadata.accession.clone(), s)).collect();
        let records = if root.join(store::CATALOG_FILE).exists() {
            store::read_catalog(root)?.records
        } else {
            studies.values().map(StoredStudy::record).collect()
        };
        let index = Index::build(records).map_err(|e| StoreError::Corrupt {
            path: root.join(store::CATALOG_FILE),
            message: e.to_string(),
        })?;
        Ok(Api { root: root.to_path_buf(), index, studies })
    }

    pub fn index(&self) -> &Index {
        &self.index
    }

    pub fn handle(&self, method: &str, path: &str, query: &str) -> ApiResponse {
        if method != "GET" {
            return ApiResponse::error(405, "METHOD_NOT_ALLOWED", "the API is read-only");
        }
        let params: Vec<(String, String)> =
            url::form_urlencoded::parse(query.as_bytes()).map(|(k, v)| (k.into_owned(), v.into_owned())).collect();
        let segs: Vec<&str> = path.trim_matches('/').split('/').filter(|s| !s.is_empty()).collect();
        match segs.as_slice() {
            ["health"] => ApiResponse::ok(&json!({ "status": "ok", "studies": self.index.len() })),
            ["studies"] => self.search(&params),
            ["studies", acc] => self.overview(acc),
            ["studies", acc, "metadata"] => self.metadata(acc, &params),
            ["studies", acc, "docs", name] => self.doc(acc, name),
            ["studies", acc, "files", name] => self.file_metadata(acc, name),
            ["studies", acc, "files", name, "dictionary"] => self.file_bytes(acc, name, DICT_FILE, false),
            ["studies", acc, "files", name, "data"] => self.file_bytes(acc, name, DATA_FILE, true),
            ["facets"] => self.facets(&params),
            ["autocomplete"] => self.autocomplete(&params),
            _ => ApiResponse::not_found(format!("no route for {path}")),
        }
    }

    fn study(&self, acc: &str) -> Result<&StoredStudy, ApiResponse> {
        self.studies.get(acc).ok_or_else(|| ApiResponse::not_found(format!("unknown study {acc}")))
    }

    fn search(&self, params: &[(String, String)]) -> ApiResponse {
        let q = match Query::from_params(params.iter().map(|(k, v)| (k.as_str(), v.as_str()))) {
            Ok(q) => q,
            Err(e) => return ApiResponse::bad_query(e),
        };
        match self.index.search(&q) {
            Ok(r) => ApiResponse::ok(&SearchPage {
                total: r.total,
                offset: q.offset,
                limit: q.limit,
                results: r.hits.iter().map(|h| &h.metadata).collect(),
            }),
            Err(e) => ApiResponse::bad_query(e),
        }
    }

    fn overview(&self, acc: &str) -> ApiResponse {
        let s = match self.study(acc) {
            Ok(s) => s,
            Err(r) => return r,
        };
        let public = s.metadata.access_tier == AccessTier::Public;
        let files: Vec<FileEntry> = s
            .files
            .iter()
            .map(|f| FileEntry {
                file_name: &f.metadata.file_name,
                kind: f.kind,
                version: f.metadata.version,
                records: f.metadata.summary.as_ref().map(|x| x.n_records),
                variables: f.variables.len(),
                deid_applied: f.metadata.deid_applied,
                harmonized: f.metadata.harmonized,
                downloadable: public,
            })
            .collect();
        ApiResponse::ok(&json!({
            "accession": acc,
            "persistent_id": s.persistent_id,
            "metadata": s.study,
            "documents": s.docs,
            "files": files,
        }))
    }

    fn metadata(&self, acc: &str, params: &[(String, String)]) -> ApiResponse {
        let s = match self.study(acc) {
            Ok(s) => s,
            Err(r) => return r,
        };
        let tpl = samples::study_template();
        match params.iter().find(|(k, _)| k == "format").map(|(_, v)| v.as_str()) {
            None | Some("json") => ApiResponse { status: 200, content_type: JSON, body: serialize_metadata(&s.study, &tpl) },
            Some("yaml") => {
                ApiResponse { status: 200, content_type: YAML, body: serialize_metadata_yaml(&s.study, &tpl).into_bytes() }
            }
            Some(other) => ApiResponse::error(400, "QRY_BAD_VALUE", format!("unknown format {other:?}")),
        }
    }

    fn doc(&self, acc: &str, name: &str) -> ApiResponse {
        let s = match self.study(acc) {
            Ok(s) => s,
            Err(r) => return r,
        };
        if !s.docs.iter().any(|d| d == name) {
            return ApiResponse::not_found(format!("no document {name} in {acc}"));
        }
        self.read(store::study_dir(&self.root, acc).join(DOCS_DIR).join(name), content_type_for(name))
    }

    fn file_metadata(&self, acc: &str, name: &str) -> ApiResponse {
        match self.study(acc) {
            Ok(s) => match s.file(name) {
                Some(f) => ApiResponse::ok(&f.metadata),
                None => ApiResponse::not_found(format!("no file {name} in {acc}")),
            },
            Err(r) => r,
        }
    }

    fn file_bytes(&self, acc: &str, name: &str, part: &str, gated: bool) -> ApiResponse {
        let s = match self.study(acc) {
            Ok(s) => s,
            Err(r) => return r,
        };
        let Some(f) = s.file(name) else {
            return ApiResponse::not_found(format!("no file {name} in {acc}"));
        };
        if gated && s.metadata.access_tier == AccessTier::Controlled {
            return ApiResponse::json(
                403,
                &json!({
                    "error": "CONTROLLED_ACCESS",
                    "message": "request via access process",
                    "accession": acc,
                    "file_name": name,
                }),
            );
        }
        self.read(store::study_dir(&self.root, acc).join(&f.dir).join(part), CSV)
    }

    fn read(&self, path: PathBuf, content_type: &'static str) -> ApiResponse {
        match fs::read(&path) {
            Ok(body) => ApiResponse { status: 200, content_type, body },
            Err(e) => ApiResponse::error(500, "STORE_READ", e.to_string()),
        }
    }

    fn facets(&self, params: &[(String, String)]) -> ApiResponse {
        let mut field = None;
        let mut stack_by = None;
        let mut csv = false;
        let mut rest = Vec::new();
        for (k, v) in params {
            let parsed = match k.as_str() {
                "field" => v.parse().map(|f| field = Some(f)),
                "stack_by" => v.parse().map(|f: FacetField| stack_by = Some(f)),
                "format" => match v.as_str() {
                    "csv" => {
                        csv = true;
                        Ok(())
                    }
                    "json" => Ok(()),
                    _ => Err(CatalogError::BadValue(format!("format {v:?}"))),
                },
                _ => {
                    rest.push((k.as_str(), v.as_str()));
                    Ok(())
                }
            };
            if let Err(e) = parsed {
                return ApiResponse::bad_query(e);
            }
        }
        let Some(field) = field else {
            return ApiResponse::bad_query(CatalogError::BadField("field is required".into()));
        };
        let hist = Query::from_params(rest).and_then(|q| {
            if q == Query::default() {
                self.index.facet_histogram(field, stack_by)
            } else {
                self.index.facet_histogram_for(field, stack_by, &q)
            }
        });
        match hist {
            Ok(h) if csv => ApiResponse { status: 200, content_type: CSV, body: h.to_csv() },
            Ok(h) => ApiResponse::ok(&h),
            Err(e) => ApiResponse::bad_query(e),
        }
    }

    fn autocomplete(&self, params: &[(String, String)]) -> ApiResponse {
        let mut prefix = "";
        let mut k = DEFAULT_SUGGESTIONS;
        for (key, v) in params {
            match key.as_str() {
                "prefix" => prefix = v,
                "k" => match v.parse::<usize>() {
                    Ok(n) if (1..=MAX_SUGGESTIONS).contains(&n) => k = n,
                    _ => return ApiResponse::error(400, "QRY_BAD_VALUE", format!("k must be in 1..={MAX_SUGGESTIONS}")),
                },
                other => return ApiResponse::bad_query(CatalogError::BadField(other.to_string())),
            }
        }
        ApiResponse::ok(&json!({ "prefix": prefix, "suggestions": self.index.autocomplete(prefix, k) }))
    }
}

async fn dispatch(
    axum::extract::State(api): axum::extract::State<Arc<Api>>,
    method: axum::http::Method,
    uri: axum::http::Uri,
) -> axum::response::Response {
    use axum::response::IntoResponse;
    let r = api.handle(method.as_str(), uri.path(), uri.query().unwrap_or(""));
    let status = axum::http::StatusCode::from_u16(r.status).unwrap_or(axum::http::StatusCode::INTERNAL_SERVER_ERROR);
    (status, [(axum::http::header::CONTENT_TYPE, r.content_type)], r.body).into_response()
}

pub fn router(api: Arc<Api>) -> axum::Router {
    axum::Router::new().fallback(dispatch).with_state(api)
}

/// Serves until Ctrl-C.
pub async fn serve(api: Arc<Api>, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(api))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
