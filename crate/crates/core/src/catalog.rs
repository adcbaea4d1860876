//! Indicator specifications and prompt rendering.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Submission;

pub const PLACEHOLDER: &str = "{{text}}";

/// Output-format instruction appended to every binary prompt.
pub const BINARY_SUFFIX: &str = "Respond exclusively with YES for yes and NO for no.";

/// Output-format instruction appended to every list prompt.
pub const LIST_SUFFIX: &str = "Do not list any errors. Return the list in JSON format {key:data}";

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("duplicate indicator id `{0}`")]
    DuplicateIndicatorId(String),
    #[error("indicator `{id}`: prompt template must contain `{{{{text}}}}` exactly once (found {found})")]
    MissingPlaceholder { id: String, found: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IndicatorKind {
    Binary,
    List,
}

impl IndicatorKind {
    pub const ALL: [IndicatorKind; 2] = [IndicatorKind::Binary, IndicatorKind::List];

    pub fn suffix(self) -> &'static str {
        match self {
            IndicatorKind::Binary => BINARY_SUFFIX,
            IndicatorKind::List => LIST_SUFFIX,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            IndicatorKind::Binary => "binary",
            IndicatorKind::List => "list",
        }
    }
}

impl std::fmt::Display for IndicatorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndicatorSpec {
    pub id: String,
    pub name: String,
    pub kind: IndicatorKind,
    pub prompt_template: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intended_criterion: Option<String>,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub description: String,
}

impl IndicatorSpec {
    pub fn validate(&self) -> Result<(), CatalogError> {
        let found = self.prompt_template.matches(PLACEHOLDER).count();
        if found != 1 {
            return Err(CatalogError::MissingPlaceholder {
                id: self.id.clone(),
                found,
            });
        }
        Ok(())
    }

    /// Substitutes the submission text and appends the kind's format
    /// instruction after one blank line.
    pub fn render(&self, text: &str) -> String {
        let (head, tail) = self
            .prompt_template
            .split_once(PLACEHOLDER)
            .unwrap_or((self.prompt_template.as_str(), ""));
        let suffix = self.kind.suffix();
        let mut out = String::with_capacity(head.len() + text.len() + tail.len() + suffix.len() + 2);
        out.push_str(head);
        out.push_str(text);
        out.push_str(tail);
        out.push_str("\n\n");
        out.push_str(suffix);
        out
    }
}

pub fn render_prompt(spec: &IndicatorSpec, submission: &Submission) -> String {
    spec.render(&submission.text)
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize)]
#[serde(transparent)]
pub struct Catalog {
    indicators: Vec<IndicatorSpec>,
}

impl Catalog {
    pub fn new(indicators: Vec<IndicatorSpec>) -> Result<Self, CatalogError> {
        let mut seen = HashSet::new();
        for spec in &indicators {
            if !seen.insert(spec.id.as_str()) {
                return Err(CatalogError::DuplicateIndicatorId(spec.id.clone()));
            }
            spec.validate()?;
        }
        Ok(Self { indicators })
    }

    pub fn indicators(&self) -> &[IndicatorSpec] {
        &self.indicators
    }

    pub fn len(&self) -> usize {
        self.indicators.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indicators.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&IndicatorSpec> {
        self.indicators.iter().find(|s| s.id == id)
    }

    pub fn ids(&self) -> Vec<String> {
        self.indicators.iter().map(|s| s.id.clone()).collect()
    }

    pub fn kind_counts(&self) -> BTreeMap<IndicatorKind, usize> {
        let mut counts: BTreeMap<IndicatorKind, usize> = IndicatorKind::ALL.iter().map(|k| (*k, 0)).collect();
        for s in &self.indicators {
            *counts.entry(s.kind).or_default() += 1;
        }
        counts
    }

    /// Restricts the catalog to `ids`, keeping catalog order.
    pub fn subset(&self, ids: &[String]) -> Catalog {
        Catalog {
            indicators: self
                .indicators
                .iter()
                .filter(|s| ids.contains(&s.id))
                .cloned()
                .collect(),
        }
    }
}

pub fn load_catalog(path: &Path) -> Result<Catalog, CatalogError> {
    let f = File::open(path).map_err(|source| CatalogError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let specs: Vec<IndicatorSpec> = serde_json::from_reader(BufReader::new(f)).map_err(|e| CatalogError::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })?;
    Catalog::new(specs)
}

pub fn save_catalog(catalog: &Catalog, path: &Path) -> Result<(), CatalogError> {
    let io = |source| CatalogError::Io {
        path: path.to_path_buf(),
        source,
    };
    let json = serde_json::to_string_pretty(catalog).expect("catalog serializes");
    std::fs::write(path, json + "\n").map_err(io)
}

const SOCIO: &str = "sociolinguistic_appropriateness";

// Starter set reconstructed from the criteria descriptions of the feedback
// grid (chiefly sociolinguistic appropriateness). It is not the original
// study's indicator set, which was never published; extend it with a
// catalog file.
const DEFAULT_INDICATORS: &[(&str, &str, IndicatorKind, &str, Option<&str>)] = &[
    (
        "form_of_address",
        "Form of address",
        IndicatorKind::Binary,
        "Does this text use a form of address? Text: {{text}}",
        Some(SOCIO),
    ),
    (
        "formality",
        "Formal register",
        IndicatorKind::Binary,
        "Is this text written in a formal register? Text: {{text}}",
        Some(SOCIO),
    ),
    (
        "polite_expressions",
        "Polite expressions",
        IndicatorKind::List,
        "List all polite expressions in this text: {{text}}",
        Some(SOCIO),
    ),
    (
        "neutral_register",
        "Neutral register",
        IndicatorKind::Binary,
        "Is this text written in a neutral register, neither too familiar nor too formal? Text: {{text}}",
        Some(SOCIO),
    ),
    (
        "common_expressions",
        "Common means of expression",
        IndicatorKind::List,
        "List all common everyday expressions used in this text: {{text}}",
        Some(SOCIO),
    ),
    (
        "values_and_beliefs",
        "Values and beliefs",
        IndicatorKind::List,
        "List all statements in this text that express values, attitudes or beliefs: {{text}}",
        Some(SOCIO),
    ),
    (
        "adjectives",
        "Descriptive adjectives",
        IndicatorKind::List,
        "List all adjectives used to describe impressions or feelings in this text: {{text}}",
        Some("information_description"),
    ),
    (
        "relative_pronouns",
        "Relative pronouns",
        IndicatorKind::List,
        "List all relative pronouns in this text: {{text}}",
        Some("morphosyntax"),
    ),
    (
        "connectors",
        "Connectors",
        IndicatorKind::List,
        "List all connectors and linking words in this text: {{text}}",
        Some("coherence_cohesion"),
    ),
    (
        "recommendation",
        "Recommendation given",
        IndicatorKind::Binary,
        "Does this text recommend a movie to the reader? Text: {{text}}",
        Some("general_mediation"),
    ),
];

/// A starter catalog covering the politeness-convention and register
/// indicators plus a few task-level ones.
pub fn default_catalog() -> Catalog {
    let specs = DEFAULT_INDICATORS
        .iter()
        .map(|(id, name, kind, template, crit)| IndicatorSpec {
            id: id.to_string(),
            name: name.to_string(),
            kind: *kind,
            prompt_template: template.to_string(),
            intended_criterion: crit.map(str::to_string),
            description: "reconstructed starter indicator".to_string(),
        })
        .collect();
    Catalog::new(specs).expect("default catalog is valid")
}
