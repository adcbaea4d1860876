//! The six commands behind the `indalign` binary.
//!
//! Every command reads its inputs from the run config and the output
//! directory, writes its artifacts there, and returns a short text summary
//! for the terminal. Errors carry a stable process exit code.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::alignment::{align, filter_indicators, summarize, AlignmentError, AlignmentMatrix, RetainedIndicator};
use crate::catalog::{default_catalog, load_catalog, Catalog, CatalogError, IndicatorKind};
use crate::config::{ConfigError, ReportFormat, RunConfig};
use crate::corpus::{load_corpus, load_submissions, Corpus, CorpusError, CriterionId, TableFormat};
use crate::extraction::{extract_submissions, AuditLog, CellStatus, DirCache, ExtractionError};
use crate::gateway::{Gateway, GatewayError, GatewayRegistry};
use crate::model::{
    evaluate_loo, Explanation, FeatureMatrix, FitParams, LearnerRegistry, LooReport, ModelError, TrainedModel,
};
use crate::report::{render_csv, render_json, render_markdown};
use crate::table::{LabeledMatrix, TableError};

pub const MATRIX_FILE: &str = "indicator_matrix.csv";
pub const AUDIT_FILE: &str = "extraction_audit.jsonl";
pub const ALIGNMENT_FILE: &str = "alignment.csv";
pub const REPORT_MD_FILE: &str = "alignment_report.md";
pub const REPORT_JSON_FILE: &str = "alignment_report.json";
pub const SUMMARY_TXT_FILE: &str = "summary.txt";
pub const SUMMARY_JSON_FILE: &str = "summary.json";
pub const RETAINED_FILE: &str = "retained_indicators.json";
pub const MODELS_DIR: &str = "models";
pub const TRAINING_FILE: &str = "training_report.json";
pub const PREDICTIONS_FILE: &str = "predictions.json";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Extraction(#[from] ExtractionError),
    #[error(transparent)]
    Alignment(#[from] AlignmentError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("{}: {source}", path.display())]
    Table { path: PathBuf, source: TableError },
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}: {message}", path.display())]
    Json { path: PathBuf, message: String },
    #[error("{what} not found at {}; {hint}", path.display())]
    MissingArtifact {
        what: &'static str,
        path: PathBuf,
        hint: &'static str,
    },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("nothing to model: {0}")]
    EmptyModelInput(String),
}

impl PipelineError {
    /// 0 ok, 2 validation, 3 gateway, 4 shape mismatch, 5 empty model input, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_)
            | PipelineError::Corpus(_)
            | PipelineError::Catalog(_)
            | PipelineError::MissingArtifact { .. } => 2,
            PipelineError::Gateway(
                GatewayError::UnknownKind(_) | GatewayError::Config(_) | GatewayError::Fixture { .. },
            ) => 2,
            PipelineError::Gateway(_) | PipelineError::Extraction(ExtractionError::Abort(..)) => 3,
            PipelineError::Alignment(AlignmentError::RowMismatch { .. }) | PipelineError::Shape(_) => 4,
            PipelineError::Alignment(AlignmentError::InvalidThresholds(_)) => 2,
            PipelineError::Model(ModelError::UnknownKind(_) | ModelError::InvalidParams(_)) => 2,
            PipelineError::EmptyModelInput(_) => 5,
            _ => 1,
        }
    }
}

type Result<T> = std::result::Result<T, PipelineError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    fs::write(path, contents).map_err(io_err(path))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("pipeline artifacts serialize");
    write_file(path, text + "\n")
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| PipelineError::Json {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

fn require(path: PathBuf, what: &'static str, hint: &'static str) -> Result<PathBuf> {
    if path.exists() {
        Ok(path)
    } else {
        Err(PipelineError::MissingArtifact { what, path, hint })
    }
}

fn read_matrix(path: &Path) -> Result<LabeledMatrix> {
    let f = fs::File::open(path).map_err(io_err(path))?;
    LabeledMatrix::read_csv(std::io::BufReader::new(f)).map_err(|source| PipelineError::Table {
        path: path.to_path_buf(),
        source,
    })
}

/// Criterion ids may contain anything; file names should not.
fn model_file_name(criterion_id: &str) -> String {
    let safe: String = criterion_id
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect();
    format!("{safe}.json")
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IngestReport {
    pub submissions: usize,
    pub indicators: usize,
    pub binary: usize,
    pub list: usize,
    pub criteria: usize,
    pub ratings: usize,
}

impl IngestReport {
    pub fn render(&self) -> String {
        format!(
            "{} submissions, {} indicators ({} binary / {} list), {} criteria\n{} rating records\n",
            self.submissions, self.indicators, self.binary, self.list, self.criteria, self.ratings
        )
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExtractReport {
    pub submissions: usize,
    pub indicators: usize,
    pub ok: usize,
    pub unparseable: usize,
    pub transport_failed: usize,
    pub gateway_calls: usize,
    pub cache_hits: usize,
}

impl ExtractReport {
    pub fn render(&self) -> String {
        format!(
            "{} x {} cells: {} ok, {} unparseable, {} transport_failed\n{} gateway calls, {} cache hits\n",
            self.submissions,
            self.indicators,
            self.ok,
            self.unparseable,
            self.transport_failed,
            self.gateway_calls,
            self.cache_hits
        )
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CriterionTraining {
    pub criterion_id: String,
    pub rows: usize,
    /// `None` when the criterion had fewer than two complete rows.
    pub loo: Option<LooReport>,
    pub model_file: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    pub learner: String,
    pub params: FitParams,
    pub feature_ids: Vec<String>,
    pub criteria: Vec<CriterionTraining>,
}

impl TrainReport {
    pub fn render(&self) -> String {
        let mut s = format!(
            "{} model(s) on {} retained indicator(s)\n",
            self.learner,
            self.feature_ids.len()
        );
        for c in &self.criteria {
            match &c.loo {
                Some(l) => s.push_str(&format!(
                    "{}: n = {}, LOO MAE {:.4}, RMSE {:.4}\n",
                    c.criterion_id, c.rows, l.mae, l.rmse
                )),
                None => s.push_str(&format!("{}: skipped, {} complete row(s)\n", c.criterion_id, c.rows)),
            }
        }
        s
    }
}

/// One trained criterion model on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub criterion_id: String,
    pub learner: String,
    pub feature_ids: Vec<String>,
    pub params: FitParams,
    pub training_rows: usize,
    pub model: TrainedModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CriterionPrediction {
    Scored { prediction: f64, explanation: Explanation },
    Failed { error: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubmissionPrediction {
    pub submission_id: String,
    pub criteria: BTreeMap<String, CriterionPrediction>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictReport {
    pub predictions: Vec<SubmissionPrediction>,
}

impl PredictReport {
    pub fn render(&self) -> String {
        let mut s = String::new();
        for p in &self.predictions {
            s.push_str(&format!("{}\n", p.submission_id));
            for (crit, pred) in &p.criteria {
                match pred {
                    CriterionPrediction::Scored {
                        prediction,
                        explanation,
                    } => {
                        s.push_str(&format!("  {crit}: {prediction:.3}\n"));
                        if let Explanation::Tree(t) = explanation {
                            for step in &t.steps {
                                s.push_str(&format!("    {step}\n"));
                            }
                        }
                    }
                    CriterionPrediction::Failed { error } => s.push_str(&format!("  {crit}: error: {error}\n")),
                }
            }
        }
        s
    }
}

pub struct Pipeline {
    config: RunConfig,
    gateways: GatewayRegistry,
    learners: LearnerRegistry,
}

impl Pipeline {
    pub fn new(config: RunConfig) -> Self {
        Self {
            config,
            gateways: GatewayRegistry::default(),
            learners: LearnerRegistry::default(),
        }
    }

    pub fn with_registries(config: RunConfig, gateways: GatewayRegistry, learners: LearnerRegistry) -> Self {
        Self {
            config,
            gateways,
            learners,
        }
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    fn out(&self, name: &str) -> PathBuf {
        self.config.paths.output_dir.join(name)
    }

    fn load_inputs(&self) -> Result<(Corpus, Catalog)> {
        self.config.check_inputs()?;
        let catalog = match &self.config.paths.catalog {
            Some(p) => load_catalog(p)?,
            None => default_catalog(),
        };
        let corpus = load_corpus(&self.config.corpus_files())?;
        Ok((corpus, catalog))
    }

    fn gateway(&self) -> Result<std::sync::Arc<dyn Gateway>> {
        Ok(self
            .gateways
            .build(&self.config.gateway.kind, &self.config.gateway_settings())?)
    }

    /// Criteria in grid order.
    fn criteria(corpus: &Corpus) -> Vec<CriterionId> {
        let mut c = corpus.criteria().to_vec();
        c.sort_by_key(|c| c.ordinal);
        c
    }

    pub fn ingest(&self) -> Result<IngestReport> {
        let (corpus, catalog) = self.load_inputs()?;
        let kinds = catalog.kind_counts();
        Ok(IngestReport {
            submissions: corpus.submissions().len(),
            indicators: catalog.len(),
            binary: kinds.get(&IndicatorKind::Binary).copied().unwrap_or(0),
            list: kinds.get(&IndicatorKind::List).copied().unwrap_or(0),
            criteria: corpus.criteria().len(),
            ratings: corpus.ratings().len(),
        })
    }

    pub fn extract(&self) -> Result<ExtractReport> {
        let (corpus, catalog) = self.load_inputs()?;
        let gateway = self.gateway()?;
        let cache_dir = &self.config.paths.cache_dir;
        let cache = DirCache::open(cache_dir).map_err(io_err(cache_dir))?;
        fs::create_dir_all(&self.config.paths.output_dir).map_err(io_err(&self.config.paths.output_dir))?;
        let mut audit = AuditLog::append_to(&self.out(AUDIT_FILE))?;
        let outcome = extract_submissions(
            corpus.submissions(),
            &catalog,
            gateway.as_ref(),
            &cache,
            Some(&mut audit),
        )?;
        outcome.matrix.write_csv(&self.out(MATRIX_FILE))?;
        let counts = outcome.matrix.status_counts();
        let count = |s: CellStatus| counts.get(&s).copied().unwrap_or(0);
        Ok(ExtractReport {
            submissions: outcome.matrix.submission_ids.len(),
            indicators: outcome.matrix.indicator_ids.len(),
            ok: count(CellStatus::Ok),
            unparseable: count(CellStatus::Unparseable),
            transport_failed: count(CellStatus::TransportFailed),
            gateway_calls: outcome.gateway_calls,
            cache_hits: outcome.cache_hits,
        })
    }

    /// Correlates the extracted matrix with the ratings and writes the
    /// alignment table, the rendered reports and the summary.
    pub fn align(&self) -> Result<String> {
        let (corpus, catalog) = self.load_inputs()?;
        let t = &self.config.thresholds;
        let matrix_path = require(
            self.out(MATRIX_FILE),
            "indicator matrix",
            "run `indalign extract` first",
        )?;
        let indicators = read_matrix(&matrix_path)?;
        let criteria = Self::criteria(&corpus);
        let criterion_ids: Vec<String> = criteria.iter().map(|c| c.id.clone()).collect();
        let ratings = corpus.rating_matrix_with(&criterion_ids, self.config.rater_aggregation)?;
        let alignment = align(&indicators, &ratings)?;

        let mut buf = Vec::new();
        alignment.write_csv(t, &mut buf)?;
        write_file(&self.out(ALIGNMENT_FILE), buf)?;
        self.write_reports(&alignment, &catalog, &criteria)?;

        let summary = summarize(&alignment, &catalog, t);
        let text = summary.render_text();
        write_file(&self.out(SUMMARY_TXT_FILE), &text)?;
        write_json(&self.out(SUMMARY_JSON_FILE), &summary)?;
        write_json(&self.out(RETAINED_FILE), &filter_indicators(&alignment, t))?;
        Ok(text)
    }

    fn write_reports(&self, alignment: &AlignmentMatrix, catalog: &Catalog, criteria: &[CriterionId]) -> Result<()> {
        let t = &self.config.thresholds;
        for format in &self.config.report.formats {
            match format {
                ReportFormat::Markdown => write_file(
                    &self.out(REPORT_MD_FILE),
                    render_markdown(alignment, catalog, criteria, t),
                )?,
                ReportFormat::Json => write_file(&self.out(REPORT_JSON_FILE), render_json(alignment, t))?,
                // alignment.csv is always written
                ReportFormat::Csv => {}
            }
        }
        Ok(())
    }

    /// Re-renders the alignment report from `alignment.csv` in the first
    /// configured format.
    pub fn report(&self) -> Result<String> {
        let (corpus, catalog) = self.load_inputs()?;
        let t = &self.config.thresholds;
        let path = require(
            self.out(ALIGNMENT_FILE),
            "alignment table",
            "run `indalign align` first",
        )?;
        let f = fs::File::open(&path).map_err(io_err(&path))?;
        let alignment = AlignmentMatrix::read_csv(std::io::BufReader::new(f))?;
        let criteria = Self::criteria(&corpus);
        self.write_reports(&alignment, &catalog, &criteria)?;
        let format = self
            .config
            .report
            .formats
            .first()
            .copied()
            .unwrap_or(ReportFormat::Markdown);
        Ok(match format {
            ReportFormat::Markdown => render_markdown(&alignment, &catalog, &criteria, t),
            ReportFormat::Csv => render_csv(&alignment, t),
            ReportFormat::Json => render_json(&alignment, t),
        })
    }

    fn retained_ids(&self) -> Result<Vec<String>> {
        let path = require(
            self.out(RETAINED_FILE),
            "retained indicator list",
            "run `indalign align` first",
        )?;
        let retained: Vec<RetainedIndicator> = read_json(&path)?;
        Ok(retained.into_iter().map(|r| r.indicator_id).collect())
    }

    pub fn train(&self) -> Result<TrainReport> {
        let (corpus, _) = self.load_inputs()?;
        let learner = self.learners.get(&self.config.model.kind)?;
        let params = self.config.model.params;
        let feature_ids = self.retained_ids()?;
        if feature_ids.is_empty() {
            return Err(PipelineError::EmptyModelInput(
                "no indicator passed the interest threshold".into(),
            ));
        }
        let matrix_path = require(
            self.out(MATRIX_FILE),
            "indicator matrix",
            "run `indalign extract` first",
        )?;
        let indicators = read_matrix(&matrix_path)?;
        let features = indicators
            .select_columns(&feature_ids)
            .map_err(|e| PipelineError::Shape(e.to_string()))?;
        let criteria = Self::criteria(&corpus);
        let criterion_ids: Vec<String> = criteria.iter().map(|c| c.id.clone()).collect();
        let ratings = corpus.rating_matrix_with(&criterion_ids, self.config.rater_aggregation)?;
        if features.row_ids != ratings.row_ids {
            return Err(PipelineError::Shape(format!(
                "indicator matrix has {} rows, ratings have {}",
                features.n_rows(),
                ratings.n_rows()
            )));
        }

        let models_dir = self.out(MODELS_DIR);
        let mut report = TrainReport {
            learner: learner.name().to_string(),
            params,
            feature_ids: feature_ids.clone(),
            criteria: Vec::new(),
        };
        for (c, criterion_id) in criterion_ids.iter().enumerate() {
            let mut x = FeatureMatrix {
                feature_ids: feature_ids.clone(),
                rows: Vec::new(),
            };
            let mut y = Vec::new();
            for (r, row) in features.values.iter().enumerate() {
                let (Some(target), Some(values)) =
                    (ratings.values[r][c], row.iter().copied().collect::<Option<Vec<f64>>>())
                else {
                    continue;
                };
                x.rows.push(values);
                y.push(target);
            }
            if y.len() < 2 {
                report.criteria.push(CriterionTraining {
                    criterion_id: criterion_id.clone(),
                    rows: y.len(),
                    loo: None,
                    model_file: None,
                });
                continue;
            }
            let loo = evaluate_loo(&x, &y, &params, learner)?;
            let model = learner.fit(&x, &y, &params)?;
            let name = model_file_name(criterion_id);
            write_json(
                &models_dir.join(&name),
                &ModelFile {
                    criterion_id: criterion_id.clone(),
                    learner: learner.name().to_string(),
                    feature_ids: feature_ids.clone(),
                    params,
                    training_rows: y.len(),
                    model,
                },
            )?;
            report.criteria.push(CriterionTraining {
                criterion_id: criterion_id.clone(),
                rows: y.len(),
                loo: Some(loo),
                model_file: Some(format!("{MODELS_DIR}/{name}")),
            });
        }
        if report.criteria.iter().all(|c| c.loo.is_none()) {
            return Err(PipelineError::EmptyModelInput(
                "no criterion has two or more fully observed rows".into(),
            ));
        }
        write_json(&self.out(TRAINING_FILE), &report)?;
        Ok(report)
    }

    /// Extracts the retained indicators for the submissions in `input`
    /// (or the configured predict input) and scores them with every model.
    pub fn predict(&self, input: Option<&Path>) -> Result<PredictReport> {
        let training_path = require(
            self.out(TRAINING_FILE),
            "trained model index",
            "run `indalign train` first",
        )?;
        let training: TrainReport = read_json(&training_path)?;
        let mut models = Vec::new();
        for c in &training.criteria {
            if let Some(rel) = &c.model_file {
                let path = require(self.out(rel), "model file", "run `indalign train` first")?;
                models.push(read_json::<ModelFile>(&path)?);
            }
        }

        let input = input
            .map(Path::to_path_buf)
            .or_else(|| self.config.paths.predict_input.clone())
            .ok_or_else(|| {
                ConfigError::Invalid("no submissions to score: set paths.predict_input or pass --input".into())
            })?;
        if !input.is_file() {
            return Err(ConfigError::MissingInput {
                what: "prediction input",
                path: input,
            }
            .into());
        }
        let submissions = load_submissions(&input, TableFormat::from_path(&input))?;
        let submissions = Corpus::new(submissions, Vec::new(), Vec::new())
            .map_err(CorpusError::from)?
            .submissions()
            .to_vec();

        let full = match &self.config.paths.catalog {
            Some(p) => load_catalog(p)?,
            None => default_catalog(),
        };
        let catalog = full.subset(&training.feature_ids);
        let gateway = self.gateway()?;
        let cache_dir = &self.config.paths.cache_dir;
        let cache = DirCache::open(cache_dir).map_err(io_err(cache_dir))?;
        fs::create_dir_all(&self.config.paths.output_dir).map_err(io_err(&self.config.paths.output_dir))?;
        let mut audit = AuditLog::append_to(&self.out(AUDIT_FILE))?;
        let outcome = extract_submissions(&submissions, &catalog, gateway.as_ref(), &cache, Some(&mut audit))?;

        let mut predictions = Vec::new();
        for row in &outcome.matrix.cells {
            let features: BTreeMap<String, f64> = row
                .iter()
                .filter_map(|c| c.value.map(|v| (c.indicator_id.clone(), v)))
                .collect();
            let mut criteria = BTreeMap::new();
            for m in &models {
                let result = match m.model.explain(&features) {
                    Ok(explanation) => CriterionPrediction::Scored {
                        prediction: explanation.prediction(),
                        explanation,
                    },
                    Err(e) => CriterionPrediction::Failed { error: e.to_string() },
                };
                criteria.insert(m.criterion_id.clone(), result);
            }
            predictions.push(SubmissionPrediction {
                submission_id: row.first().map(|c| c.submission_id.clone()).unwrap_or_default(),
                criteria,
            });
        }
        let report = PredictReport { predictions };
        write_json(&self.out(PREDICTIONS_FILE), &report)?;
        Ok(report)
    }
}
