//! Catalog x corpus extraction into an [`IndicatorMatrix`].

use std::collections::HashMap;
use std::fs::OpenOptions;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::catalog::{Catalog, IndicatorKind, IndicatorSpec};
use crate::corpus::{Corpus, Submission};
use crate::gateway::{prompt_hash, Gateway};
use crate::parse::parse_response;
use crate::table::LabeledMatrix;

#[derive(Debug, Error)]
pub enum ExtractionError {
    #[error("gateway unreachable for all {0} cells; last error: {1}")]
    Abort(usize, String),
    #[error("unknown indicator `{0}`")]
    UnknownIndicator(String),
    #[error("io error at {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellStatus {
    Ok,
    Unparseable,
    TransportFailed,
}

impl CellStatus {
    pub const ALL: [CellStatus; 3] = [CellStatus::Ok, CellStatus::Unparseable, CellStatus::TransportFailed];

    pub fn as_str(self) -> &'static str {
        match self {
            CellStatus::Ok => "ok",
            CellStatus::Unparseable => "unparseable",
            CellStatus::TransportFailed => "transport_failed",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndicatorCell {
    pub submission_id: String,
    pub indicator_id: String,
    /// Present iff `status` is `Ok`.
    pub value: Option<f64>,
    pub status: CellStatus,
    pub raw_response: String,
    pub prompt_hash: String,
    /// Completions spent on this cell in this run; 0 when served from cache.
    pub attempt: u32,
    pub cached: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndicatorMatrix {
    pub submission_ids: Vec<String>,
    pub indicator_ids: Vec<String>,
    /// Row-major, `submission_ids.len() x indicator_ids.len()`.
    pub cells: Vec<Vec<IndicatorCell>>,
}

impl IndicatorMatrix {
    pub fn column(&self, indicator_id: &str) -> Result<Vec<Option<f64>>, ExtractionError> {
        let j = self
            .indicator_ids
            .iter()
            .position(|i| i == indicator_id)
            .ok_or_else(|| ExtractionError::UnknownIndicator(indicator_id.to_string()))?;
        Ok(self.cells.iter().map(|row| row[j].value).collect())
    }

    pub fn values(&self) -> LabeledMatrix {
        LabeledMatrix {
            row_ids: self.submission_ids.clone(),
            col_ids: self.indicator_ids.clone(),
            values: self
                .cells
                .iter()
                .map(|row| row.iter().map(|c| c.value).collect())
                .collect(),
        }
    }

    pub fn status_counts(&self) -> HashMap<CellStatus, usize> {
        let mut counts: HashMap<CellStatus, usize> = CellStatus::ALL.iter().map(|s| (*s, 0)).collect();
        for c in self.cells.iter().flatten() {
            *counts.entry(c.status).or_default() += 1;
        }
        counts
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), ExtractionError> {
        let f = std::fs::File::create(path).map_err(|source| io_err(path, source))?;
        self.values()
            .write_csv("submission_id", BufWriter::new(f))
            .map_err(|e| io_err(path, std::io::Error::other(e.to_string())))
    }
}

/// What the cache remembers about one completed cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CachedCell {
    pub model_name: String,
    pub prompt_hash: String,
    pub raw_response: String,
    pub status: CellStatus,
    pub value: Option<f64>,
}

pub fn cache_key(model_name: &str, prompt_hash: &str) -> String {
    let mut h = Sha256::new();
    h.update(model_name.as_bytes());
    h.update([0u8]);
    h.update(prompt_hash.as_bytes());
    hex::encode(h.finalize())
}

/// Must tolerate concurrent access to distinct keys.
pub trait CacheStore: Send + Sync {
    fn get(&self, key: &str) -> Option<CachedCell>;
    fn put(&self, key: &str, cell: &CachedCell) -> std::io::Result<()>;
}

#[derive(Debug, Default)]
pub struct MemoryCache {
    entries: Mutex<HashMap<String, CachedCell>>,
}

impl MemoryCache {
    pub fn len(&self) -> usize {
        self.entries.lock().map(|m| m.len()).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl CacheStore for MemoryCache {
    fn get(&self, key: &str) -> Option<CachedCell> {
        self.entries.lock().ok()?.get(key).cloned()
    }

    fn put(&self, key: &str, cell: &CachedCell) -> std::io::Result<()> {
        self.entries
            .lock()
            .map_err(|_| std::io::Error::other("cache lock poisoned"))?
            .insert(key.to_string(), cell.clone());
        Ok(())
    }
}

/// One JSON file per key under a directory.
#[derive(Debug, Clone)]
pub struct DirCache {
    root: PathBuf,
}

impl DirCache {
    pub fn open(root: impl Into<PathBuf>) -> std::io::Result<Self> {
        let root = root.into();
        std::fs::create_dir_all(&root)?;
        Ok(Self { root })
    }

    fn path(&self, key: &str) -> PathBuf {
        self.root.join(format!("{key}.json"))
    }
}

impl CacheStore for DirCache {
    fn get(&self, key: &str) -> Option<CachedCell> {
        let data = std::fs::read(self.path(key)).ok()?;
        serde_json::from_slice(&data).ok()
    }

    fn put(&self, key: &str, cell: &CachedCell) -> std::io::Result<()> {
        let tmp = self.root.join(format!(".{key}.{:?}.tmp", std::thread::current().id()));
        let json = serde_json::to_vec_pretty(cell).map_err(std::io::Error::other)?;
        std::fs::write(&tmp, json)?;
        std::fs::rename(tmp, self.path(key))
    }
}

#[derive(Debug, Serialize)]
struct AuditRecord<'a> {
    submission_id: &'a str,
    indicator_id: &'a str,
    prompt_hash: &'a str,
    prompt: &'a str,
    raw_response: &'a str,
    status: CellStatus,
    value: Option<f64>,
    attempt: u32,
    cached: bool,
}

/// Append-only json-lines log of every cell outcome.
pub struct AuditLog {
    out: Box<dyn Write + Send>,
}

impl AuditLog {
    pub fn append_to(path: &Path) -> Result<Self, ExtractionError> {
        let f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|source| io_err(path, source))?;
        Ok(Self {
            out: Box::new(BufWriter::new(f)),
        })
    }

    pub fn to_writer(out: impl Write + Send + 'static) -> Self {
        Self { out: Box::new(out) }
    }

    fn record(&mut self, cell: &IndicatorCell, prompt: &str) -> std::io::Result<()> {
        let rec = AuditRecord {
            submission_id: &cell.submission_id,
            indicator_id: &cell.indicator_id,
            prompt_hash: &cell.prompt_hash,
            prompt,
            raw_response: &cell.raw_response,
            status: cell.status,
            value: cell.value,
            attempt: cell.attempt,
            cached: cell.cached,
        };
        serde_json::to_writer(&mut self.out, &rec).map_err(std::io::Error::other)?;
        self.out.write_all(b"\n")
    }

    fn flush(&mut self) -> std::io::Result<()> {
        self.out.flush()
    }
}

#[derive(Debug, Clone)]
pub struct ExtractionOutcome {
    pub matrix: IndicatorMatrix,
    /// Completions issued during this run.
    pub gateway_calls: usize,
    pub cache_hits: usize,
}

/// Queries one cell, re-asking once if the response does not parse.
fn query_cell(gateway: &dyn Gateway, kind: IndicatorKind, prompt: &str) -> (CachedCell, u32, Option<String>) {
    let hash = prompt_hash(prompt);
    let mut spent = 0;
    let mut raw = String::new();
    for _ in 0..2 {
        match gateway.complete(prompt) {
            Ok(resp) => {
                spent += resp.attempt;
                match parse_response(kind, &resp.text) {
                    Ok(parsed) => {
                        return (
                            CachedCell {
                                model_name: gateway.model_name().to_string(),
                                prompt_hash: hash,
                                raw_response: resp.text,
                                status: CellStatus::Ok,
                                value: Some(parsed.value.as_f64()),
                            },
                            spent,
                            None,
                        )
                    }
                    Err(_) => raw = resp.text,
                }
            }
            Err(e) => {
                spent += 1;
                return (
                    CachedCell {
                        model_name: gateway.model_name().to_string(),
                        prompt_hash: hash,
                        raw_response: String::new(),
                        status: CellStatus::TransportFailed,
                        value: None,
                    },
                    spent,
                    Some(e.to_string()),
                );
            }
        }
    }
    (
        CachedCell {
            model_name: gateway.model_name().to_string(),
            prompt_hash: hash,
            raw_response: raw,
            status: CellStatus::Unparseable,
            value: None,
        },
        spent,
        None,
    )
}

struct Job<'a> {
    row: usize,
    col: usize,
    submission: &'a Submission,
    spec: &'a IndicatorSpec,
}

/// Runs every (submission, indicator) pair through `gateway`.
///
/// Cells already in `cache` under the same model and prompt are reused.
/// Transport failures are not cached. Work is spread over
/// `gateway.max_concurrency()` threads but the matrix and audit log are
/// assembled in corpus x catalog order.
pub fn extract_all(
    corpus: &Corpus,
    catalog: &Catalog,
    gateway: &dyn Gateway,
    cache: &dyn CacheStore,
    audit: Option<&mut AuditLog>,
) -> Result<ExtractionOutcome, ExtractionError> {
    extract_submissions(corpus.submissions(), catalog, gateway, cache, audit)
}

pub fn extract_submissions(
    submissions: &[Submission],
    catalog: &Catalog,
    gateway: &dyn Gateway,
    cache: &dyn CacheStore,
    audit: Option<&mut AuditLog>,
) -> Result<ExtractionOutcome, ExtractionError> {
    let calls_before = gateway.calls();
    let jobs: Vec<Job> = submissions
        .iter()
        .enumerate()
        .flat_map(|(row, submission)| {
            catalog.indicators().iter().enumerate().map(move |(col, spec)| Job {
                row,
                col,
                submission,
                spec,
            })
        })
        .collect();

    let slots: Vec<Mutex<Option<(IndicatorCell, String)>>> = jobs.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let hits = AtomicUsize::new(0);
    let failures = Mutex::new((0usize, None::<String>));
    let workers = gateway.max_concurrency().clamp(1, jobs.len().max(1));

    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(job) = jobs.get(i) else { break };
                let prompt = job.spec.render(&job.submission.text);
                let hash = prompt_hash(&prompt);
                let key = cache_key(gateway.model_name(), &hash);
                let (entry, attempt, cached) = match cache.get(&key) {
                    Some(c) if c.prompt_hash == hash && c.model_name == gateway.model_name() => {
                        hits.fetch_add(1, Ordering::Relaxed);
                        (c, 0, true)
                    }
                    _ => {
                        let (entry, spent, err) = query_cell(gateway, job.spec.kind, &prompt);
                        if let Some(e) = err {
                            let mut f = failures.lock().unwrap_or_else(|p| p.into_inner());
                            f.0 += 1;
                            f.1 = Some(e);
                        } else {
                            // a failed cache write only costs a re-query next run
                            let _ = cache.put(&key, &entry);
                        }
                        (entry, spent, false)
                    }
                };
                let cell = IndicatorCell {
                    submission_id: job.submission.id.clone(),
                    indicator_id: job.spec.id.clone(),
                    value: entry.value,
                    status: entry.status,
                    raw_response: entry.raw_response,
                    prompt_hash: hash,
                    attempt,
                    cached,
                };
                *slots[i].lock().unwrap_or_else(|p| p.into_inner()) = Some((cell, prompt));
            });
        }
    });

    let (failed, last_error) = failures.into_inner().unwrap_or_else(|p| p.into_inner());
    let hits = hits.into_inner();
    let needed = jobs.len() - hits;
    if needed > 0 && failed == needed && hits == 0 {
        return Err(ExtractionError::Abort(failed, last_error.unwrap_or_default()));
    }

    let n_cols = catalog.len();
    let mut cells: Vec<Vec<IndicatorCell>> = (0..submissions.len()).map(|_| Vec::with_capacity(n_cols)).collect();
    let mut audit = audit;
    for (job, slot) in jobs.iter().zip(slots) {
        let (cell, prompt) = slot
            .into_inner()
            .unwrap_or_else(|p| p.into_inner())
            .expect("every job fills its slot");
        if let Some(log) = audit.as_deref_mut() {
            log.record(&cell, &prompt)
                .map_err(|e| io_err(Path::new("<audit>"), e))?;
        }
        debug_assert_eq!(cells[job.row].len(), job.col);
        cells[job.row].push(cell);
    }
    if let Some(log) = audit {
        log.flush().map_err(|e| io_err(Path::new("<audit>"), e))?;
    }

    Ok(ExtractionOutcome {
        matrix: IndicatorMatrix {
            submission_ids: submissions.iter().map(|s| s.id.clone()).collect(),
            indicator_ids: catalog.ids(),
            cells,
        },
        gateway_calls: gateway.calls() - calls_before,
        cache_hits: hits,
    })
}

fn io_err(path: &Path, source: std::io::Error) -> ExtractionError {
    ExtractionError::Io {
        path: path.to_path_buf(),
        source,
    }
}
