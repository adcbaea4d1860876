//! Submissions, rubric ratings and the criteria grid.
//!
//! A corpus is loaded from up to three files: submissions (json-lines or
//! csv), ratings (csv or json-lines) and an optional criteria file (json).
//! Everything is validated on load and immutable afterwards.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::table::{parse_optional_number, LabeledMatrix};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: u64, message: String },
    #[error("integrity: {0}")]
    Integrity(#[from] IntegrityError),
    #[error("unknown criterion `{0}`")]
    UnknownCriterion(String),
}

#[derive(Debug, Error, PartialEq)]
pub enum IntegrityError {
    #[error("duplicate submission id `{0}`")]
    DuplicateSubmission(String),
    #[error("submission `{0}` has empty text")]
    EmptyText(String),
    #[error("rating references unknown submission `{0}`")]
    DanglingRating(String),
    #[error("duplicate rating for submission `{submission_id}` by rater `{rater_id}`")]
    DuplicateRating { submission_id: String, rater_id: String },
    #[error("score {score} for `{submission_id}`/`{criterion}` outside scale [{min}, {max}]")]
    ScoreOutOfScale {
        submission_id: String,
        criterion: String,
        score: f64,
        min: f64,
        max: f64,
    },
    #[error("rating uses unknown criterion `{0}`")]
    UnknownCriterion(String),
    #[error("duplicate criterion id `{0}`")]
    DuplicateCriterion(String),
    #[error("invalid scale [{0}, {1}]")]
    InvalidScale(f64, f64),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Submission {
    pub id: String,
    pub text: String,
    #[serde(default)]
    pub task_id: String,
    #[serde(default)]
    pub language_code: String,
}

impl Submission {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            text: text.into(),
            task_id: String::new(),
            language_code: String::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CriterionId {
    pub id: String,
    pub display_name: String,
    /// 1-based position in the grid.
    #[serde(default)]
    pub ordinal: u32,
}

const GRID: [(&str, &str); 10] = [
    ("consideration_of_task", "Consideration of the task"),
    ("sociolinguistic_appropriateness", "Sociolinguistic appropriateness"),
    ("information_description", "Information and description skills"),
    ("general_mediation", "General mediation skills"),
    ("coherence_cohesion", "Coherence and cohesion"),
    ("vocabulary_range", "Range of vocabulary"),
    ("vocabulary_mastery", "Mastery of vocabulary"),
    ("spelling_mastery", "Mastery of spelling"),
    ("grammatical_correctness", "Grammatical correctness"),
    ("morphosyntax", "Morphosyntax"),
];

/// The ten-criterion feedback grid used for the B1 writing tasks.
pub fn default_criteria() -> Vec<CriterionId> {
    GRID.iter()
        .enumerate()
        .map(|(i, (id, name))| CriterionId {
            id: id.to_string(),
            display_name: name.to_string(),
            ordinal: i as u32 + 1,
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scale {
    pub min: f64,
    pub max: f64,
}

impl Default for Scale {
    fn default() -> Self {
        Self { min: 0.0, max: 4.0 }
    }
}

impl Scale {
    pub fn contains(&self, v: f64) -> bool {
        v >= self.min && v <= self.max
    }

    fn validate(&self) -> Result<(), IntegrityError> {
        if !(self.min.is_finite() && self.max.is_finite() && self.min <= self.max) {
            return Err(IntegrityError::InvalidScale(self.min, self.max));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RubricRating {
    pub submission_id: String,
    pub rater_id: String,
    /// Criterion id -> score. Unrated criteria are absent.
    pub scores: BTreeMap<String, f64>,
    pub scale_min: f64,
    pub scale_max: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RaterAggregation {
    #[default]
    Mean,
    Median,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    submissions: Vec<Submission>,
    ratings: Vec<RubricRating>,
    criteria: Vec<CriterionId>,
}

impl Corpus {
    /// Validates and builds a corpus. Submission text is trimmed.
    pub fn new(
        submissions: Vec<Submission>,
        ratings: Vec<RubricRating>,
        criteria: Vec<CriterionId>,
    ) -> Result<Self, IntegrityError> {
        let mut seen_crit = HashSet::new();
        for c in &criteria {
            if !seen_crit.insert(c.id.as_str()) {
                return Err(IntegrityError::DuplicateCriterion(c.id.clone()));
            }
        }
        let mut ids = HashSet::new();
        let mut subs = Vec::with_capacity(submissions.len());
        for mut s in submissions {
            if !ids.insert(s.id.clone()) {
                return Err(IntegrityError::DuplicateSubmission(s.id));
            }
            let trimmed = s.text.trim();
            if trimmed.is_empty() {
                return Err(IntegrityError::EmptyText(s.id));
            }
            if trimmed.len() != s.text.len() {
                s.text = trimmed.to_string();
            }
            subs.push(s);
        }
        let mut pairs = HashSet::new();
        for r in &ratings {
            if !ids.contains(&r.submission_id) {
                return Err(IntegrityError::DanglingRating(r.submission_id.clone()));
            }
            if !pairs.insert((r.submission_id.as_str(), r.rater_id.as_str())) {
                return Err(IntegrityError::DuplicateRating {
                    submission_id: r.submission_id.clone(),
                    rater_id: r.rater_id.clone(),
                });
            }
            Scale {
                min: r.scale_min,
                max: r.scale_max,
            }
            .validate()?;
            for (crit, &score) in &r.scores {
                if !seen_crit.contains(crit.as_str()) {
                    return Err(IntegrityError::UnknownCriterion(crit.clone()));
                }
                if !(score.is_finite() && score >= r.scale_min && score <= r.scale_max) {
                    return Err(IntegrityError::ScoreOutOfScale {
                        submission_id: r.submission_id.clone(),
                        criterion: crit.clone(),
                        score,
                        min: r.scale_min,
                        max: r.scale_max,
                    });
                }
            }
        }
        Ok(Self {
            submissions: subs,
            ratings,
            criteria,
        })
    }

    pub fn submissions(&self) -> &[Submission] {
        &self.submissions
    }

    pub fn ratings(&self) -> &[RubricRating] {
        &self.ratings
    }

    pub fn criteria(&self) -> &[CriterionId] {
        &self.criteria
    }

    pub fn criterion_ids(&self) -> Vec<String> {
        self.criteria.iter().map(|c| c.id.clone()).collect()
    }

    pub fn submission_ids(&self) -> Vec<String> {
        self.submissions.iter().map(|s| s.id.clone()).collect()
    }

    /// Submissions x criteria, aggregating multiple raters by mean.
    pub fn rating_matrix(&self, criteria: &[String]) -> Result<LabeledMatrix, CorpusError> {
        self.rating_matrix_with(criteria, RaterAggregation::Mean)
    }

    pub fn rating_matrix_with(
        &self,
        criteria: &[String],
        aggregation: RaterAggregation,
    ) -> Result<LabeledMatrix, CorpusError> {
        for c in criteria {
            if !self.criteria.iter().any(|k| &k.id == c) {
                return Err(CorpusError::UnknownCriterion(c.clone()));
            }
        }
        let mut by_sub: HashMap<&str, Vec<&RubricRating>> = HashMap::new();
        for r in &self.ratings {
            by_sub.entry(r.submission_id.as_str()).or_default().push(r);
        }
        let mut m = LabeledMatrix::new(self.submission_ids(), criteria.to_vec());
        for (i, s) in self.submissions.iter().enumerate() {
            let Some(rs) = by_sub.get(s.id.as_str()) else {
                continue;
            };
            for (j, c) in criteria.iter().enumerate() {
                let scores: Vec<f64> = rs.iter().filter_map(|r| r.scores.get(c).copied()).collect();
                m.values[i][j] = aggregate(&scores, aggregation);
            }
        }
        Ok(m)
    }
}

fn aggregate(scores: &[f64], how: RaterAggregation) -> Option<f64> {
    if scores.is_empty() {
        return None;
    }
    match how {
        RaterAggregation::Mean => Some(scores.iter().sum::<f64>() / scores.len() as f64),
        RaterAggregation::Median => {
            let mut s = scores.to_vec();
            s.sort_by(f64::total_cmp);
            let n = s.len();
            Some(if n % 2 == 1 {
                s[n / 2]
            } else {
                (s[n / 2 - 1] + s[n / 2]) / 2.0
            })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TableFormat {
    JsonLines,
    Csv,
}

impl TableFormat {
    /// `.csv` is csv, everything else json-lines.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("csv") => TableFormat::Csv,
            _ => TableFormat::JsonLines,
        }
    }
}

/// Locations of the files making up a corpus.
#[derive(Debug, Clone)]
pub struct CorpusFiles {
    pub submissions: PathBuf,
    pub submissions_format: TableFormat,
    pub ratings: Option<PathBuf>,
    pub ratings_format: TableFormat,
    pub criteria: Option<PathBuf>,
    pub scale: Scale,
}

impl CorpusFiles {
    pub fn new(submissions: impl Into<PathBuf>) -> Self {
        let submissions = submissions.into();
        Self {
            submissions_format: TableFormat::from_path(&submissions),
            submissions,
            ratings: None,
            ratings_format: TableFormat::Csv,
            criteria: None,
            scale: Scale::default(),
        }
    }

    pub fn with_ratings(mut self, ratings: impl Into<PathBuf>) -> Self {
        let ratings = ratings.into();
        self.ratings_format = TableFormat::from_path(&ratings);
        self.ratings = Some(ratings);
        self
    }

    pub fn with_criteria(mut self, criteria: impl Into<PathBuf>) -> Self {
        self.criteria = Some(criteria.into());
        self
    }

    pub fn with_scale(mut self, scale: Scale) -> Self {
        self.scale = scale;
        self
    }
}

pub fn load_corpus(files: &CorpusFiles) -> Result<Corpus, CorpusError> {
    files.scale.validate()?;
    let criteria = match &files.criteria {
        Some(p) => load_criteria(p)?,
        None => default_criteria(),
    };
    let submissions = load_submissions(&files.submissions, files.submissions_format)?;
    let ratings = match &files.ratings {
        Some(p) => load_ratings(p, files.ratings_format, files.scale)?,
        None => Vec::new(),
    };
    Ok(Corpus::new(submissions, ratings, criteria)?)
}

/// Writes the three corpus files so that `load_corpus` reproduces `corpus`.
pub fn save_corpus(corpus: &Corpus, files: &CorpusFiles) -> Result<(), CorpusError> {
    save_submissions(corpus.submissions(), &files.submissions, files.submissions_format)?;
    if let Some(p) = &files.ratings {
        save_ratings(corpus, p, files.ratings_format)?;
    }
    if let Some(p) = &files.criteria {
        let f = create(p)?;
        serde_json::to_writer_pretty(f, corpus.criteria()).map_err(|e| parse_err(p, 0, e))?;
    }
    Ok(())
}

#[derive(Deserialize)]
struct CriterionRecord {
    id: String,
    display_name: String,
}

pub fn load_criteria(path: &Path) -> Result<Vec<CriterionId>, CorpusError> {
    let f = open(path)?;
    let recs: Vec<CriterionRecord> =
        serde_json::from_reader(BufReader::new(f)).map_err(|e| parse_err(path, e.line() as u64, e))?;
    Ok(recs
        .into_iter()
        .enumerate()
        .map(|(i, r)| CriterionId {
            id: r.id,
            display_name: r.display_name,
            ordinal: i as u32 + 1,
        })
        .collect())
}

pub fn load_submissions(path: &Path, format: TableFormat) -> Result<Vec<Submission>, CorpusError> {
    let f = open(path)?;
    match format {
        TableFormat::JsonLines => {
            let mut out = Vec::new();
            for (i, line) in BufReader::new(f).lines().enumerate() {
                let line = line.map_err(|e| io_err(path, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                let s: Submission = serde_json::from_str(&line).map_err(|e| parse_err(path, i as u64 + 1, e))?;
                out.push(s);
            }
            Ok(out)
        }
        TableFormat::Csv => {
            let mut r = csv::Reader::from_reader(f);
            let mut out = Vec::new();
            for rec in r.deserialize::<Submission>() {
                let s = rec.map_err(|e| csv_err(path, e))?;
                out.push(s);
            }
            Ok(out)
        }
    }
}

fn save_submissions(subs: &[Submission], path: &Path, format: TableFormat) -> Result<(), CorpusError> {
    let mut f = create(path)?;
    match format {
        TableFormat::JsonLines => {
            for s in subs {
                let line = serde_json::to_string(s).map_err(|e| parse_err(path, 0, e))?;
                writeln!(f, "{line}").map_err(|e| io_err(path, e))?;
            }
        }
        TableFormat::Csv => {
            let mut w = csv::Writer::from_writer(f);
            // header is emitted by serialize, but not for an empty slice
            if subs.is_empty() {
                w.write_record(["id", "text", "task_id", "language_code"])
                    .map_err(|e| csv_err(path, e))?;
            }
            for s in subs {
                w.serialize(s).map_err(|e| csv_err(path, e))?;
            }
            w.flush().map_err(|e| io_err(path, e))?;
        }
    }
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct RatingRecord {
    submission_id: String,
    rater_id: String,
    scores: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    scale_min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    scale_max: Option<f64>,
}

/// Reads ratings. In csv, every column other than `submission_id`,
/// `rater_id`, `scale_min` and `scale_max` is a criterion id; empty cells
/// are unrated.
pub fn load_ratings(path: &Path, format: TableFormat, scale: Scale) -> Result<Vec<RubricRating>, CorpusError> {
    let f = open(path)?;
    match format {
        TableFormat::JsonLines => {
            let mut out = Vec::new();
            for (i, line) in BufReader::new(f).lines().enumerate() {
                let line = line.map_err(|e| io_err(path, e))?;
                if line.trim().is_empty() {
                    continue;
                }
                let r: RatingRecord = serde_json::from_str(&line).map_err(|e| parse_err(path, i as u64 + 1, e))?;
                out.push(RubricRating {
                    submission_id: r.submission_id,
                    rater_id: r.rater_id,
                    scores: r.scores,
                    scale_min: r.scale_min.unwrap_or(scale.min),
                    scale_max: r.scale_max.unwrap_or(scale.max),
                });
            }
            Ok(out)
        }
        TableFormat::Csv => {
            let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(f);
            let header = r.headers().map_err(|e| csv_err(path, e))?.clone();
            let col = |name: &str| header.iter().position(|h| h == name);
            let (Some(sub_col), Some(rater_col)) = (col("submission_id"), col("rater_id")) else {
                return Err(CorpusError::Parse {
                    path: path.to_path_buf(),
                    line: 1,
                    message: "header must contain submission_id and rater_id".into(),
                });
            };
            let min_col = col("scale_min");
            let max_col = col("scale_max");
            let fixed = [Some(sub_col), Some(rater_col), min_col, max_col];
            let crit_cols: Vec<(usize, String)> = header
                .iter()
                .enumerate()
                .filter(|(i, _)| !fixed.contains(&Some(*i)))
                .map(|(i, h)| (i, h.to_string()))
                .collect();
            let mut out = Vec::new();
            for rec in r.records() {
                let rec = rec.map_err(|e| csv_err(path, e))?;
                let line = rec.position().map(|p| p.line()).unwrap_or(0);
                let num = |i: usize| {
                    parse_optional_number(rec.get(i).unwrap_or("")).map_err(|message| CorpusError::Parse {
                        path: path.to_path_buf(),
                        line,
                        message,
                    })
                };
                let mut scores = BTreeMap::new();
                for (i, crit) in &crit_cols {
                    if let Some(v) = num(*i)? {
                        scores.insert(crit.clone(), v);
                    }
                }
                let scale_min = match min_col {
                    Some(i) => num(i)?.unwrap_or(scale.min),
                    None => scale.min,
                };
                let scale_max = match max_col {
                    Some(i) => num(i)?.unwrap_or(scale.max),
                    None => scale.max,
                };
                out.push(RubricRating {
                    submission_id: rec[sub_col].to_string(),
                    rater_id: rec[rater_col].to_string(),
                    scores,
                    scale_min,
                    scale_max,
                });
            }
            Ok(out)
        }
    }
}

fn save_ratings(corpus: &Corpus, path: &Path, format: TableFormat) -> Result<(), CorpusError> {
    let mut f = create(path)?;
    match format {
        TableFormat::JsonLines => {
            for r in corpus.ratings() {
                let rec = RatingRecord {
                    submission_id: r.submission_id.clone(),
                    rater_id: r.rater_id.clone(),
                    scores: r.scores.clone(),
                    scale_min: Some(r.scale_min),
                    scale_max: Some(r.scale_max),
                };
                let line = serde_json::to_string(&rec).map_err(|e| parse_err(path, 0, e))?;
                writeln!(f, "{line}").map_err(|e| io_err(path, e))?;
            }
        }
        TableFormat::Csv => {
            let mut w = csv::Writer::from_writer(f);
            let crits = corpus.criterion_ids();
            let mut header = vec!["submission_id".to_string(), "rater_id".to_string()];
            header.extend(crits.iter().cloned());
            header.push("scale_min".into());
            header.push("scale_max".into());
            w.write_record(&header).map_err(|e| csv_err(path, e))?;
            for r in corpus.ratings() {
                let mut rec = vec![r.submission_id.clone(), r.rater_id.clone()];
                rec.extend(
                    crits
                        .iter()
                        .map(|c| r.scores.get(c).map(|v| format!("{v}")).unwrap_or_default()),
                );
                rec.push(format!("{}", r.scale_min));
                rec.push(format!("{}", r.scale_max));
                w.write_record(&rec).map_err(|e| csv_err(path, e))?;
            }
            w.flush().map_err(|e| io_err(path, e))?;
        }
    }
    Ok(())
}

fn open(path: &Path) -> Result<File, CorpusError> {
    File::open(path).map_err(|e| io_err(path, e))
}

fn create(path: &Path) -> Result<File, CorpusError> {
    File::create(path).map_err(|e| io_err(path, e))
}

fn io_err(path: &Path, source: std::io::Error) -> CorpusError {
    CorpusError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn parse_err(path: &Path, line: u64, e: impl std::fmt::Display) -> CorpusError {
    CorpusError::Parse {
        path: path.to_path_buf(),
        line,
        message: e.to_string(),
    }
}

fn csv_err(path: &Path, e: csv::Error) -> CorpusError {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    parse_err(path, line, e)
}
