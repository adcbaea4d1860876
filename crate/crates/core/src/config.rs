//! Run configuration, read from a single TOML file.
//!
//! Relative paths are resolved against the directory holding the config
//! file. Command-line flags are applied on top with [`RunConfig::apply`].

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::alignment::Thresholds;
use crate::corpus::{CorpusFiles, RaterAggregation, Scale};
use crate::gateway::{GatewayConfig, GatewaySettings};
use crate::model::FitParams;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("invalid config {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("{what} file not found: {}", path.display())]
    MissingInput { what: &'static str, path: PathBuf },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub submissions: PathBuf,
    #[serde(default)]
    pub ratings: Option<PathBuf>,
    #[serde(default)]
    pub criteria: Option<PathBuf>,
    /// Without a catalog file the built-in one is used.
    #[serde(default)]
    pub catalog: Option<PathBuf>,
    #[serde(default = "default_cache_dir")]
    pub cache_dir: PathBuf,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// New submissions scored by `predict`.
    #[serde(default)]
    pub predict_input: Option<PathBuf>,
}

fn default_cache_dir() -> PathBuf {
    PathBuf::from("cache")
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GatewaySection {
    #[serde(default = "default_gateway_kind")]
    pub kind: String,
    #[serde(default)]
    pub stub_fixtures: Option<PathBuf>,
    #[serde(flatten)]
    pub config: GatewayConfig,
}

fn default_gateway_kind() -> String {
    "http".to_string()
}

impl Default for GatewaySection {
    fn default() -> Self {
        Self {
            kind: default_gateway_kind(),
            stub_fixtures: None,
            config: GatewayConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSection {
    #[serde(default = "default_learner")]
    pub kind: String,
    #[serde(flatten)]
    pub params: FitParams,
}

fn default_learner() -> String {
    "tree".to_string()
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            kind: default_learner(),
            params: FitParams::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Markdown,
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportSection {
    #[serde(default = "all_formats")]
    pub formats: Vec<ReportFormat>,
}

fn all_formats() -> Vec<ReportFormat> {
    vec![ReportFormat::Markdown, ReportFormat::Csv, ReportFormat::Json]
}

impl Default for ReportSection {
    fn default() -> Self {
        Self { formats: all_formats() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub paths: Paths,
    #[serde(default)]
    pub scale: Scale,
    #[serde(default)]
    pub rater_aggregation: RaterAggregation,
    #[serde(default)]
    pub gateway: GatewaySection,
    #[serde(default)]
    pub thresholds: Thresholds,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub report: ReportSection,
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub stub_fixtures: Option<PathBuf>,
    pub gateway: Option<String>,
    pub learner: Option<String>,
    pub format: Option<ReportFormat>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg: RunConfig = toml::from_str(&text).map_err(|e| ConfigError::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.resolve_paths(base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml_str(text: &str, base: &Path) -> Result<Self, ConfigError> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: PathBuf::from("<string>"),
            message: e.to_string(),
        })?;
        cfg.resolve_paths(base);
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        let p = &mut self.paths;
        fix(&mut p.submissions);
        fix(&mut p.cache_dir);
        fix(&mut p.output_dir);
        for path in [&mut p.ratings, &mut p.criteria, &mut p.catalog, &mut p.predict_input]
            .into_iter()
            .flatten()
        {
            fix(path);
        }
        if let Some(f) = &mut self.gateway.stub_fixtures {
            fix(f);
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.thresholds
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.model
            .params
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.gateway
            .config
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(())
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(f) = &o.stub_fixtures {
            self.gateway.kind = "stub".to_string();
            self.gateway.stub_fixtures = Some(f.clone());
        }
        if let Some(g) = &o.gateway {
            self.gateway.kind = g.clone();
        }
        if let Some(l) = &o.learner {
            self.model.kind = l.clone();
        }
        if let Some(f) = o.format {
            self.report.formats = vec![f];
        }
    }

    /// Fails on the first configured input file that does not exist.
    pub fn check_inputs(&self) -> Result<(), ConfigError> {
        let p = &self.paths;
        let inputs = [
            ("submissions", Some(&p.submissions)),
            ("ratings", p.ratings.as_ref()),
            ("criteria", p.criteria.as_ref()),
            ("catalog", p.catalog.as_ref()),
        ];
        for (what, path) in inputs {
            if let Some(path) = path {
                if !path.is_file() {
                    return Err(ConfigError::MissingInput {
                        what,
                        path: path.clone(),
                    });
                }
            }
        }
        Ok(())
    }

    pub fn corpus_files(&self) -> CorpusFiles {
        let mut files = CorpusFiles::new(&self.paths.submissions).with_scale(self.scale);
        if let Some(r) = &self.paths.ratings {
            files = files.with_ratings(r);
        }
        if let Some(c) = &self.paths.criteria {
            files = files.with_criteria(c);
        }
        files
    }

    pub fn gateway_settings(&self) -> GatewaySettings {
        GatewaySettings {
            config: self.gateway.config.clone(),
            stub_fixtures: self.gateway.stub_fixtures.clone(),
        }
    }
}
