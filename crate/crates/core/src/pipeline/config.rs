use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::deid::{DeidConfig, DeidKey, DeidSettings};
use crate::harmonize::{parse_codebook, parse_mapping_set, Codebook, MappingSet, Strictness};
use crate::issue::Issue;
use crate::metadata::{load_term_registry, parse_template, Template, TermRegistry};
use crate::samples;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageToggles {
    #[serde(default = "on")]
    pub scan: bool,
    #[serde(default = "on")]
    pub deid: bool,
    #[serde(default = "on")]
    pub validate: bool,
    #[serde(default = "on")]
    pub metadata: bool,
    #[serde(default = "on")]
    pub harmonize: bool,
    #[serde(default = "on")]
    pub store: bool,
    #[serde(default = "on")]
    pub index: bool,
}

fn on() -> bool {
    true
}

impl Default for StageToggles {
    fn default() -> Self {
        StageToggles { scan: true, deid: true, validate: true, metadata: true, harmonize: true, store: true, index: true }
    }
}

/// Whether the pipeline de-identifies submissions or only checks that they
/// arrived de-identified.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DeidMode {
    #[default]
    Transform,
    VerifyOnly,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BundleConfig {
    #[serde(default)]
    pub deid: DeidSettings,
    /// Mapping set to harmonize this bundle with; none means no harmonized
    /// version.
    #[serde(default)]
    pub mapping: Option<PathBuf>,
}

/// The pipeline config file. Relative paths resolve against the file's
/// directory. Resource paths left out fall back to the bundled samples.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default)]
    pub stages: StageToggles,
    #[serde(default)]
    pub deid_mode: DeidMode,
    #[serde(default)]
    pub harmonization: Strictness,
    #[serde(default)]
    pub codebook: Option<PathBuf>,
    #[serde(default)]
    pub study_template: Option<PathBuf>,
    #[serde(default)]
    pub file_template: Option<PathBuf>,
    #[serde(default)]
    pub term_registry: Option<PathBuf>,
    pub store_root: PathBuf,
    #[serde(default)]
    pub missing_sentinels: Vec<String>,
    /// Used for bundles without their own entry.
    #[serde(default)]
    pub default_bundle: BundleConfig,
    /// Keyed by bundle directory name.
    #[serde(default)]
    pub bundles: BTreeMap<String, BundleConfig>,
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Invalid { path: PathBuf, message: String },
}

fn invalid(path: &Path, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { path: path.to_path_buf(), message: message.into() }
}

fn issues_text(issues: &[Issue]) -> String {
    issues.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

impl PipelineConfig {
    /// A config with every stage on and bundled resources.
    pub fn new(store_root: impl Into<PathBuf>) -> Self {
        PipelineConfig {
            stages: StageToggles::default(),
            deid_mode: DeidMode::default(),
            harmonization: Strictness::default(),
            codebook: None,
            study_template: None,
            file_template: None,
            term_registry: None,
            store_root: store_root.into(),
            missing_sentinels: Vec::new(),
            default_bundle: BundleConfig::default(),
            bundles: BTreeMap::new(),
        }
    }

    pub fn parse(raw: &[u8], base: &Path) -> Result<Self, String> {
        let mut cfg: PipelineConfig = serde_json::from_slice(raw).map_err(|e| e.to_string())?;
        let abs = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for p in [&mut cfg.codebook, &mut cfg.study_template, &mut cfg.file_template, &mut cfg.term_registry]
            .into_iter()
            .flatten()
        {
            abs(p);
        }
        abs(&mut cfg.store_root);
        for b in std::iter::once(&mut cfg.default_bundle).chain(cfg.bundles.values_mut()) {
            if let Some(p) = &mut b.mapping {
                abs(p);
            }
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let raw = fs::read(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
        let base = path.parent().unwrap_or(Path::new("."));
        PipelineConfig::parse(&raw, base).map_err(|m| invalid(path, m))
    }

    pub fn bundle_config(&self, stem: &str) -> &BundleConfig {
        self.bundles.get(stem).unwrap_or(&self.default_bundle)
    }

    fn bundle_configs(&self) -> impl Iterator<Item = (&str, &BundleConfig)> {
        std::iter::once(("default_bundle", &self.default_bundle)).chain(self.bundles.iter().map(|(k, v)| (k.as_str(), v)))
    }
}

/// Everything a run reads besides the study itself.
#[derive(Debug, Clone)]
pub struct Resources {
    pub codebook: Codebook,
    pub study_template: Template,
    pub file_template: Template,
    pub terms: TermRegistry,
    pub mappings: HashMap<PathBuf, MappingSet>,
}

fn read(path: &Path) -> Result<Vec<u8>, ConfigError> {
    fs::read(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })
}

impl Resources {
    /// Loads and checks every referenced resource and each bundle's
    /// de-identification settings.
    pub fn load(cfg: &PipelineConfig) -> Result<Resources, ConfigError> {
        let codebook = match &cfg.codebook {
            Some(p) => parse_codebook(&read(p)?).map_err(|e| invalid(p, issues_text(&e)))?,
            None => samples::codebook(),
        };
        let template = |p: &Option<PathBuf>, fallback: fn() -> Template| match p {
            Some(p) => parse_template(&read(p)?).map_err(|e| invalid(p, issues_text(&e))),
            None => Ok(fallback()),
        };
        let study_template = template(&cfg.study_template, samples::study_template)?;
        let file_template = template(&cfg.file_template, samples::file_template)?;
        let terms = match &cfg.term_registry {
            Some(p) => {
                load_term_registry(&read(p)?, &p.display().to_string()).map_err(|e| invalid(p, issues_text(&e)))?
            }
            None => samples::term_registry(),
        };
        let mut mappings = HashMap::new();
        for (name, b) in cfg.bundle_configs() {
            if let Some(p) = &b.mapping {
                if !mappings.contains_key(p) {
                    let m = parse_mapping_set(&read(p)?).map_err(|e| invalid(p, issues_text(&e)))?;
                    mappings.insert(p.clone(), m);
                }
            }
            // A placeholder key: only the table-independent checks run here.
            let probe: DeidConfig = b.deid.clone().with_key(DeidKey::new(vec![0u8; 32]).expect("32-byte key"));
            let problems = probe.validate();
            if !problems.is_empty() {
                return Err(invalid(Path::new(name), issues_text(&problems)));
            }
        }
        if cfg.store_root.exists() && !cfg.store_root.is_dir() {
            return Err(invalid(&cfg.store_root, "store root is not a directory"));
        }
        Ok(Resources { codebook, study_template, file_template, terms, mappings })
    }
}
