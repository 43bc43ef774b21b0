use std::fmt::Display;
use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use fairhub_core::catalog::{FacetField, Index, Query};
use fairhub_core::deid::{deidentify_bundle, DeidKey, DeidSettings};
use fairhub_core::dictionary::{parse_dictionary, serialize_dictionary, validate_dictionary};
use fairhub_core::harmonize::{
    both_versions, parse_codebook, parse_mapping_csv, parse_mapping_set, validate_mappings, Codebook, HarmonizeOptions,
    MappingSet, Strictness,
};
use fairhub_core::issue::{has_errors, Issue};
use fairhub_core::metadata::{
    load_term_registry, parse_metadata, parse_template, serialize_metadata, validate_metadata, Template, TermRegistry,
};
use fairhub_core::piiscan::{builtin_detectors, is_blocking, scan_table};
use fairhub_core::pipeline::api::{serve, Api};
use fairhub_core::pipeline::store;
use fairhub_core::pipeline::{run_pipeline, PipelineConfig, Resources};
use fairhub_core::samples;
use fairhub_core::synth::{synth_generate, SynthSpec};
use fairhub_core::tabledata::{parse_table, validate_against_dictionary, MissingPolicy, ValidationOptions};
use fairhub_core::{DataDictionary, FileBundle, FileMetadata, Severity, Table};

const KEY_ENV: &str = "FAIRHUB_DEID_KEY";

const EXIT_ISSUES: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_IO: u8 = 3;

#[derive(Parser)]
#[command(name = "fairhub", version, about = "Curate study file bundles for a FAIR data hub")]
struct Cli {
    /// Output format for issues and reports.
    #[arg(long, global = true, value_enum, default_value_t = Format::Text)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Data dictionary checks.
    Dict {
        #[command(subcommand)]
        command: DictCommand,
    },
    /// Data file checks against a dictionary.
    Bundle {
        #[command(subcommand)]
        command: BundleCommand,
    },
    /// Scan a data file for likely identifiers.
    Scan {
        data: PathBuf,
    },
    /// De-identify a bundle. The key is read from FAIRHUB_DEID_KEY (hex).
    Deid(DeidArgs),
    /// Map a bundle onto common data elements.
    Harmonize(HarmonizeArgs),
    /// Metadata instance checks.
    Metadata {
        #[command(subcommand)]
        command: MetadataCommand,
    },
    /// Catalog building and queries over a store.
    Catalog {
        #[command(subcommand)]
        command: CatalogCommand,
    },
    /// Run the curation pipeline.
    Pipeline {
        #[command(subcommand)]
        command: PipelineCommand,
    },
    /// Generate synthetic studies with a ledger of injected defects.
    Synth(SynthArgs),
    /// Serve the read-only HTTP API over a store.
    Serve {
        #[arg(long)]
        store: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
    },
}

#[derive(Subcommand)]
enum DictCommand {
    Validate { dict: PathBuf },
}

#[derive(Args)]
struct BundleFilesArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    dict: PathBuf,
    /// Extra cell values to treat as missing (repeatable).
    #[arg(long = "missing")]
    missing: Vec<String>,
}

#[derive(Subcommand)]
enum BundleCommand {
    Validate(BundleFilesArgs),
}

#[derive(Args)]
struct DeidArgs {
    #[command(flatten)]
    files: BundleFilesArgs,
    #[arg(long)]
    meta: PathBuf,
    /// De-identification settings (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Directory for data.csv, dict.csv and meta.json.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct HarmonizeArgs {
    #[command(flatten)]
    files: BundleFilesArgs,
    #[arg(long)]
    meta: PathBuf,
    /// Mapping set, JSON or CSV (by extension).
    #[arg(long)]
    mapping: PathBuf,
    /// Codebook JSON; the bundled sample codebook when omitted.
    #[arg(long)]
    codebook: Option<PathBuf>,
    /// Blank uncovered values with a warning instead of failing.
    #[arg(long)]
    lenient: bool,
    /// Directory for the harmonized data.csv, dict.csv and meta.json.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum MetadataKind {
    Study,
    File,
}

#[derive(Subcommand)]
enum MetadataCommand {
    Validate {
        instance: PathBuf,
        #[arg(long, value_enum, default_value_t = MetadataKind::Study)]
        kind: MetadataKind,
        /// Template JSON; the bundled template for `kind` when omitted.
        #[arg(long)]
        template: Option<PathBuf>,
        /// Term registry (JSON lines); the bundled registry when omitted.
        #[arg(long)]
        terms: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum CatalogCommand {
    /// Rebuild catalog.json from the stored studies.
    Index {
        #[arg(long)]
        store: PathBuf,
    },
    Search {
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        text: Option<String>,
        /// field=value; repeatable. Values of one field are OR-ed, fields AND-ed.
        #[arg(long)]
        filter: Vec<String>,
        /// Field, optionally `-field` or `field:desc`.
        #[arg(long)]
        sort: Option<String>,
        #[arg(long, default_value_t = 0)]
        offset: usize,
        #[arg(long, default_value_t = fairhub_core::catalog::DEFAULT_LIMIT)]
        limit: usize,
    },
    Facets {
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        field: String,
        #[arg(long)]
        stack_by: Option<String>,
        /// Wide CSV instead of JSON.
        #[arg(long)]
        csv: bool,
    },
}

#[derive(Subcommand)]
enum PipelineCommand {
    Run {
        study: PathBuf,
        #[arg(long)]
        config: PathBuf,
        /// Also write the JSON feedback report here.
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

#[derive(Args)]
struct SynthArgs {
    /// Generator spec (JSON). Flags below are ignored when given.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    studies: usize,
    #[arg(long, default_value_t = 1)]
    bundles: usize,
    #[arg(long, default_value_t = 100)]
    rows: usize,
    #[arg(long, default_value_t = 10)]
    extra_variables: usize,
    #[arg(long)]
    out: PathBuf,
}

/// A failure with the exit code it maps to.
struct Fail(u8, String);

impl Fail {
    fn config(msg: impl Display) -> Fail {
        Fail(EXIT_CONFIG, msg.to_string())
    }

    fn io(path: &Path, e: impl Display) -> Fail {
        Fail(EXIT_IO, format!("{}: {e}", path.display()))
    }
}

type Res = Result<u8, Fail>;

fn read(path: &Path) -> Result<Vec<u8>, Fail> {
    fs::read(path).map_err(|e| Fail::io(path, e))
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), Fail> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Fail::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Fail::io(path, e))
}

fn json<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("serializable")
}

fn name_of(path: &Path) -> String {
    path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_else(|| path.display().to_string())
}

/// Parse failures of an input file are reported like any other issue.
fn parsed<T>(r: Result<T, Vec<Issue>>, format: Format) -> Result<T, u8> {
    r.map_err(|issues| {
        print_issues(&issues, format);
        EXIT_ISSUES
    })
}

fn print_issues(issues: &[Issue], format: Format) {
    match format {
        Format::Json => println!("{}", json(&issues)),
        Format::Text => {
            for i in issues {
                println!("{i}");
            }
            let errors = issues.iter().filter(|i| i.is_error()).count();
            eprintln!("{errors} errors, {} warnings", issues.len() - errors);
        }
    }
}

fn report(issues: &[Issue], format: Format) -> u8 {
    print_issues(issues, format);
    if has_errors(issues) {
        EXIT_ISSUES
    } else {
        0
    }
}

macro_rules! parse_or_exit {
    ($e:expr, $format:expr) => {
        match parsed($e, $format) {
            Ok(v) => v,
            Err(code) => return Ok(code),
        }
    };
}

fn load_bundle(args: &BundleFilesArgs, meta: &Path, format: Format) -> Result<Result<FileBundle, u8>, Fail> {
    let table = match parsed(parse_table(&read(&args.data)?, &name_of(&args.data)), format) {
        Ok(t) => t,
        Err(c) => return Ok(Err(c)),
    };
    let dictionary = match parsed(parse_dictionary(&read(&args.dict)?, &name_of(&args.dict)), format) {
        Ok(d) => d,
        Err(c) => return Ok(Err(c)),
    };
    let instance = match parsed(parse_metadata(&read(meta)?, &name_of(meta)), format) {
        Ok(i) => i,
        Err(c) => return Ok(Err(c)),
    };
    let file_metadata: FileMetadata = serde_json::from_value(serde_json::Value::Object(instance))
        .map_err(|e| Fail::config(format!("{}: {e}", meta.display())))?;
    Ok(Ok(FileBundle { table, dictionary, file_metadata }))
}

fn write_bundle(out: &Path, b: &FileBundle) -> Result<(), Fail> {
    write(&out.join("data.csv"), &b.table.to_csv())?;
    write(&out.join("dict.csv"), &serialize_dictionary(&b.dictionary))?;
    let meta = serde_json::to_value(&b.file_metadata).expect("serializable");
    let serde_json::Value::Object(instance) = meta else { unreachable!("records serialize to objects") };
    write(&out.join("meta.json"), &serialize_metadata(&instance, &samples::file_template()))
}

fn missing_policy(args: &BundleFilesArgs) -> MissingPolicy {
    MissingPolicy::with_sentinels(args.missing.iter().cloned())
}

fn dict_validate(path: &Path, format: Format) -> Res {
    let d: DataDictionary = parse_or_exit!(parse_dictionary(&read(path)?, &name_of(path)), format);
    Ok(report(&validate_dictionary(&d), format))
}

fn bundle_validate(args: &BundleFilesArgs, format: Format) -> Res {
    let t: Table = parse_or_exit!(parse_table(&read(&args.data)?, &name_of(&args.data)), format);
    let d = parse_or_exit!(parse_dictionary(&read(&args.dict)?, &name_of(&args.dict)), format);
    let opts = ValidationOptions { missing: missing_policy(args), file: name_of(&args.data) };
    Ok(report(&validate_against_dictionary(&t, &d, &opts), format))
}

fn scan(path: &Path, format: Format) -> Res {
    let t = parse_or_exit!(parse_table(&read(path)?, &name_of(path)), format);
    let detectors = builtin_detectors();
    let findings = scan_table(&t, &detectors);
    match format {
        Format::Json => println!("{}", json(&findings)),
        Format::Text => {
            for f in &findings {
                let sev = if is_blocking(f, &detectors) { Severity::Error } else { Severity::Warning };
                println!("{}", f.to_issue(&name_of(path), sev));
            }
            eprintln!("{} findings", findings.len());
        }
    }
    Ok(if findings.iter().any(|f| is_blocking(f, &detectors)) { EXIT_ISSUES } else { 0 })
}

/// The key never comes from the command line.
fn key_from_env() -> Result<DeidKey, Fail> {
    let hex = std::env::var(KEY_ENV).map_err(|_| Fail::config(format!("{KEY_ENV} is not set")))?;
    DeidKey::from_hex(hex.trim()).map_err(|e| Fail::config(format!("{KEY_ENV}: {e}")))
}

fn deid(args: &DeidArgs, format: Format) -> Res {
    let key = key_from_env()?;
    let settings: DeidSettings = serde_json::from_slice(&read(&args.config)?)
        .map_err(|e| Fail::config(format!("{}: {e}", args.config.display())))?;
    let b = match load_bundle(&args.files, &args.meta, format)? {
        Ok(b) => b,
        Err(code) => return Ok(code),
    };
    match deidentify_bundle(&b, &settings.with_key(key), &missing_policy(&args.files)) {
        Ok((out, rep)) => {
            write_bundle(&args.out, &out)?;
            let counts = fairhub_core::pipeline::BundleDeidSummary::from(&rep);
            match format {
                Format::Json => println!("{}", json(&counts)),
                Format::Text => {
                    println!("{}", json(&counts));
                    for w in &rep.warnings {
                        println!("{w}");
                    }
                }
            }
            Ok(0)
        }
        Err(issues) => Ok(report(&issues, format)),
    }
}

fn load_codebook(path: Option<&Path>) -> Result<Codebook, Fail> {
    match path {
        Some(p) => parse_codebook(&read(p)?).map_err(|e| Fail::config(issues_line(p, &e))),
        None => Ok(samples::codebook()),
    }
}

fn issues_line(path: &Path, issues: &[Issue]) -> String {
    let text: Vec<String> = issues.iter().map(ToString::to_string).collect();
    format!("{}: {}", path.display(), text.join("; "))
}

fn load_mapping(path: &Path) -> Result<MappingSet, Fail> {
    let raw = read(path)?;
    let is_csv = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    let parsed = if is_csv {
        let scope = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        parse_mapping_csv(&raw, &scope)
    } else {
        parse_mapping_set(&raw)
    };
    parsed.map_err(|e| Fail::config(issues_line(path, &e)))
}

fn harmonize(args: &HarmonizeArgs, format: Format) -> Res {
    let cb = load_codebook(args.codebook.as_deref())?;
    let m = load_mapping(&args.mapping)?;
    let b = match load_bundle(&args.files, &args.meta, format)? {
        Ok(b) => b,
        Err(code) => return Ok(code),
    };
    let static_issues = validate_mappings(&b.dictionary, &cb, &m);
    if has_errors(&static_issues) {
        return Ok(report(&static_issues, format));
    }
    let strictness = if args.lenient { Strictness::Lenient } else { Strictness::Strict };
    let opts = HarmonizeOptions { strictness, missing: missing_policy(&args.files) };
    match both_versions(&b, &cb, &m, &opts) {
        Ok(pair) => {
            write_bundle(&args.out, &pair.harmonized)?;
            match format {
                Format::Json => println!("{}", json(&pair.report)),
                Format::Text => {
                    let r = &pair.report;
                    println!(
                        "{}: {} mapped, {} passed through, {} dropped, {} values remapped",
                        pair.harmonized.file_metadata.file_name,
                        r.variables_mapped,
                        r.variables_passed_through,
                        r.variables_dropped,
                        r.values_remapped
                    );
                    for w in &r.warnings {
                        println!("{w}");
                    }
                }
            }
            Ok(0)
        }
        Err(issues) => Ok(report(&issues, format)),
    }
}

fn load_template(path: Option<&Path>, fallback: fn() -> Template) -> Result<Template, Fail> {
    match path {
        Some(p) => parse_template(&read(p)?).map_err(|e| Fail::config(issues_line(p, &e))),
        None => Ok(fallback()),
    }
}

fn load_terms(path: Option<&Path>) -> Result<TermRegistry, Fail> {
    match path {
        Some(p) => load_term_registry(&read(p)?, &name_of(p)).map_err(|e| Fail::config(issues_line(p, &e))),
        None => Ok(samples::term_registry()),
    }
}

fn metadata_validate(
    instance: &Path,
    kind: MetadataKind,
    template: Option<&Path>,
    terms: Option<&Path>,
    format: Format,
) -> Res {
    let fallback = match kind {
        MetadataKind::Study => samples::study_template,
        MetadataKind::File => samples::file_template,
    };
    let tpl = load_template(template, fallback)?;
    let reg = load_terms(terms)?;
    let inst = parse_or_exit!(parse_metadata(&read(instance)?, &name_of(instance)), format);
    let mut issues = validate_metadata(&inst, &tpl, &reg);
    for i in &mut issues {
        i.location.file = name_of(instance);
    }
    Ok(report(&issues, format))
}

fn store_fail(e: store::StoreError) -> Fail {
    match e {
        store::StoreError::Io { path, source } => Fail::io(&path, source),
        other => Fail::config(other),
    }
}

fn catalog_index(root: &Path) -> Res {
    let catalog = store::write_catalog(root).map_err(store_fail)?;
    println!("indexed {} studies into {}", catalog.records.len(), root.join(store::CATALOG_FILE).display());
    Ok(0)
}

fn open_index(root: &Path) -> Result<Index, Fail> {
    Ok(Api::load(root).map_err(store_fail)?.index().clone())
}

fn catalog_search(
    root: &Path,
    text: Option<&str>,
    filters: &[String],
    sort: Option<&str>,
    offset: usize,
    limit: usize,
    format: Format,
) -> Res {
    let offset = offset.to_string();
    let limit = limit.to_string();
    let mut params: Vec<(&str, &str)> = vec![("offset", &offset), ("limit", &limit)];
    params.extend(text.map(|t| ("text", t)));
    params.extend(filters.iter().map(|f| ("filter", f.as_str())));
    params.extend(sort.map(|s| ("sort", s)));
    let q = Query::from_params(params).map_err(|e| Fail::config(format!("{}: {e}", e.code())))?;
    let idx = open_index(root)?;
    let r = idx.search(&q).map_err(|e| Fail::config(format!("{}: {e}", e.code())))?;
    match format {
        Format::Json => {
            let results: Vec<_> = r.hits.iter().map(|h| &h.metadata).collect();
            println!("{}", json(&serde_json::json!({ "total": r.total, "results": results })));
        }
        Format::Text => {
            for h in &r.hits {
                println!("{}\t{}\t{}", h.accession(), h.metadata.program, h.metadata.title);
            }
            eprintln!("{} of {} studies", r.hits.len(), r.total);
        }
    }
    Ok(0)
}

fn catalog_facets(root: &Path, field: &str, stack_by: Option<&str>, csv: bool) -> Res {
    let bad = |e: fairhub_core::catalog::CatalogError| Fail::config(format!("{}: {e}", e.code()));
    let field: FacetField = field.parse().map_err(bad)?;
    let stack_by: Option<FacetField> = stack_by.map(str::parse).transpose().map_err(bad)?;
    let h = open_index(root)?.facet_histogram(field, stack_by).map_err(bad)?;
    if csv {
        print!("{}", String::from_utf8_lossy(&h.to_csv()));
    } else {
        println!("{}", json(&h));
    }
    Ok(0)
}

fn pipeline_run(study: &Path, config: &Path, report_path: Option<&Path>, format: Format) -> Res {
    let cfg = PipelineConfig::load(config).map_err(|e| match e {
        fairhub_core::pipeline::ConfigError::Io { path, source } => Fail::io(&path, source),
        other => Fail::config(other),
    })?;
    let res = Resources::load(&cfg).map_err(Fail::config)?;
    let key = if cfg.stages.deid && cfg.deid_mode == fairhub_core::pipeline::DeidMode::Transform {
        Some(key_from_env()?)
    } else {
        None
    };
    let out = run_pipeline(study, &cfg, &res, key.as_ref()).map_err(|e| match e {
        fairhub_core::pipeline::PipelineError::Io { path, source } => Fail::io(&path, source),
        fairhub_core::pipeline::PipelineError::Store(s) => store_fail(s),
        other => Fail::config(other),
    })?;
    let bytes = out.report.to_json();
    if let Some(p) = report_path {
        write(p, &bytes)?;
    }
    match format {
        Format::Json => print!("{}", String::from_utf8_lossy(&bytes)),
        Format::Text => print!("{}", out.report.render_text(20)),
    }
    Ok(if out.report.accepted() { 0 } else { EXIT_ISSUES })
}

fn synth(args: &SynthArgs) -> Res {
    let spec = match &args.spec {
        Some(p) => serde_json::from_slice(&read(p)?).map_err(|e| Fail::config(format!("{}: {e}", p.display())))?,
        None => SynthSpec {
            n_studies: args.studies,
            bundles_per_study: args.bundles,
            rows_per_bundle: args.rows,
            extra_variables: args.extra_variables,
            ..SynthSpec::new(args.seed)
        },
    };
    spec.validate().map_err(Fail::config)?;
    let corpus = synth_generate(&spec, &args.out).map_err(|e| Fail(EXIT_IO, e))?;
    println!(
        "wrote {} studies and {} ledger entries to {}",
        corpus.studies.len(),
        corpus.ledger.len(),
        args.out.display()
    );
    Ok(0)
}

fn serve_store(root: &Path, addr: SocketAddr) -> Res {
    let api = Arc::new(Api::load(root).map_err(store_fail)?);
    let rt = tokio::runtime::Runtime::new().map_err(|e| Fail(EXIT_IO, e.to_string()))?;
    eprintln!("serving {} studies on http://{addr}", api.index().len());
    rt.block_on(serve(api, addr)).map_err(|e| Fail(EXIT_IO, format!("{addr}: {e}")))?;
    Ok(0)
}

fn run(cli: Cli) -> Res {
    let f = cli.format;
    match cli.command {
        Command::Dict { command: DictCommand::Validate { dict } } => dict_validate(&dict, f),
        Command::Bundle { command: BundleCommand::Validate(args) } => bundle_validate(&args, f),
        Command::Scan { data } => scan(&data, f),
        Command::Deid(args) => deid(&args, f),
        Command::Harmonize(args) => harmonize(&args, f),
        Command::Metadata { command: MetadataCommand::Validate { instance, kind, template, terms } } => {
            metadata_validate(&instance, kind, template.as_deref(), terms.as_deref(), f)
        }
        Command::Catalog { command } => match command {
            CatalogCommand::Index { store } => catalog_index(&store),
            CatalogCommand::Search { store, text, filter, sort, offset, limit } => {
                catalog_search(&store, text.as_deref(), &filter, sort.as_deref(), offset, limit, f)
            }
            CatalogCommand::Facets { store, field, stack_by, csv } => {
                catalog_facets(&store, &field, stack_by.as_deref(), csv)
            }
        },
        Command::Pipeline { command: PipelineCommand::Run { study, config, report } } => {
            pipeline_run(&study, &config, report.as_deref(), f)
        }
        Command::Synth(args) => synth(&args),
        Command::Serve { store, addr } => serve_store(&store, addr),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(Fail(code, msg)) => {
            eprintln!("fairhub: {msg}");
            ExitCode::from(code)
        }
    }
}
