//! Indicator x criterion correlation grid, tiering and summary figures.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{Catalog, IndicatorKind};
use crate::stats::{complete_pairs, p_value_two_tailed, pearson_complete};
use crate::table::{format_number, parse_optional_number, LabeledMatrix};

#[derive(Debug, Error)]
pub enum AlignmentError {
    #[error("row mismatch: indicator rows {indicator_rows} vs rating rows {rating_rows}")]
    RowMismatch { indicator_rows: usize, rating_rows: usize },
    #[error("invalid thresholds: {0}")]
    InvalidThresholds(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("line {line}: {message}")]
    Malformed { line: u64, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelationCell {
    pub pcc: Option<f64>,
    pub p: Option<f64>,
    /// Pairwise-complete sample size.
    pub n: usize,
}

impl CorrelationCell {
    pub const UNDEFINED: CorrelationCell = CorrelationCell {
        pcc: None,
        p: None,
        n: 0,
    };

    pub fn from_columns(x: &[Option<f64>], y: &[Option<f64>]) -> CorrelationCell {
        let Ok((xs, ys)) = complete_pairs(x, y) else {
            return Self::UNDEFINED;
        };
        let n = xs.len();
        match pearson_complete(&xs, &ys) {
            Some(r) => CorrelationCell {
                pcc: Some(r),
                p: p_value_two_tailed(r, n).ok(),
                n,
            },
            None => CorrelationCell { pcc: None, p: None, n },
        }
    }

    pub fn abs_pcc(&self) -> Option<f64> {
        self.pcc.map(f64::abs)
    }

    pub fn is_defined(&self) -> bool {
        self.pcc.is_some() && self.p.is_some()
    }

    pub fn tier(&self, t: &Thresholds) -> Option<Tier> {
        let (r, p) = (self.pcc?.abs(), self.p?);
        let significant = p <= t.alpha;
        if r >= t.very_high && significant {
            Some(Tier::VeryHigh)
        } else if r >= t.high && significant {
            Some(Tier::High)
        } else if r >= t.interest {
            Some(Tier::Interest)
        } else {
            None
        }
    }

    /// |pcc| >= high with p <= alpha.
    pub fn is_relevant(&self, t: &Thresholds) -> bool {
        matches!(self.tier(t), Some(Tier::High | Tier::VeryHigh))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Thresholds {
    pub interest: f64,
    pub high: f64,
    pub very_high: f64,
    pub alpha: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            interest: 0.5,
            high: 0.70,
            very_high: 0.8,
            alpha: 0.01,
        }
    }
}

impl Thresholds {
    pub fn validate(&self) -> Result<(), AlignmentError> {
        let ok = 0.0 < self.interest
            && self.interest <= self.high
            && self.high <= self.very_high
            && self.very_high <= 1.0
            && 0.0 < self.alpha
            && self.alpha < 1.0;
        if ok {
            Ok(())
        } else {
            Err(AlignmentError::InvalidThresholds(format!("{self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tier {
    Interest,
    High,
    VeryHigh,
}

impl Tier {
    pub fn as_str(self) -> &'static str {
        match self {
            Tier::Interest => "interest",
            Tier::High => "high",
            Tier::VeryHigh => "very_high",
        }
    }
}

impl fmt::Display for Tier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentMatrix {
    pub indicator_ids: Vec<String>,
    pub criterion_ids: Vec<String>,
    /// `cells[i][c]` for indicator i and criterion c.
    pub cells: Vec<Vec<CorrelationCell>>,
}

impl AlignmentMatrix {
    pub fn cell(&self, indicator_id: &str, criterion_id: &str) -> Option<&CorrelationCell> {
        let i = self.indicator_ids.iter().position(|x| x == indicator_id)?;
        let c = self.criterion_ids.iter().position(|x| x == criterion_id)?;
        Some(&self.cells[i][c])
    }

    pub fn write_csv<W: Write>(&self, thresholds: &Thresholds, out: W) -> Result<(), AlignmentError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["indicator_id", "criterion_id", "pcc", "p", "n", "tier"])?;
        for (i, row) in self.indicator_ids.iter().zip(&self.cells) {
            for (c, cell) in self.criterion_ids.iter().zip(row) {
                let num = |v: Option<f64>| v.map(format_number).unwrap_or_default();
                w.write_record([
                    i.as_str(),
                    c.as_str(),
                    &num(cell.pcc),
                    &num(cell.p),
                    &cell.n.to_string(),
                    cell.tier(thresholds).map(Tier::as_str).unwrap_or(""),
                ])?;
            }
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    /// Inverse of `write_csv`; the `tier` column is recomputed, not read.
    pub fn read_csv<R: Read>(input: R) -> Result<AlignmentMatrix, AlignmentError> {
        let mut r = csv::Reader::from_reader(input);
        let mut indicators: Vec<String> = Vec::new();
        let mut criteria: Vec<String> = Vec::new();
        let mut entries: BTreeMap<(usize, usize), CorrelationCell> = BTreeMap::new();
        for rec in r.records() {
            let rec = rec?;
            let line = rec.position().map(|p| p.line()).unwrap_or(0);
            let malformed = |message: String| AlignmentError::Malformed { line, message };
            let field = |k: usize| rec.get(k).unwrap_or("");
            let idx = |ids: &mut Vec<String>, v: &str| match ids.iter().position(|x| x == v) {
                Some(p) => p,
                None => {
                    ids.push(v.to_string());
                    ids.len() - 1
                }
            };
            let i = idx(&mut indicators, field(0));
            let c = idx(&mut criteria, field(1));
            let pcc = parse_optional_number(field(2)).map_err(&malformed)?;
            let p = parse_optional_number(field(3)).map_err(&malformed)?;
            let n = field(4)
                .trim()
                .parse::<usize>()
                .map_err(|e| malformed(format!("bad n: {e}")))?;
            entries.insert((i, c), CorrelationCell { pcc, p, n });
        }
        let cells = (0..indicators.len())
            .map(|i| {
                (0..criteria.len())
                    .map(|c| entries.get(&(i, c)).copied().unwrap_or(CorrelationCell::UNDEFINED))
                    .collect()
            })
            .collect();
        Ok(AlignmentMatrix {
            indicator_ids: indicators,
            criterion_ids: criteria,
            cells,
        })
    }
}

/// Correlates every indicator column with every criterion column.
///
/// Both matrices must list the same submissions in the same order.
pub fn align(indicators: &LabeledMatrix, ratings: &LabeledMatrix) -> Result<AlignmentMatrix, AlignmentError> {
    if indicators.row_ids != ratings.row_ids {
        return Err(AlignmentError::RowMismatch {
            indicator_rows: indicators.n_rows(),
            rating_rows: ratings.n_rows(),
        });
    }
    let criterion_cols: Vec<Vec<Option<f64>>> = (0..ratings.n_cols()).map(|c| ratings.column(c)).collect();
    let cells = (0..indicators.n_cols())
        .into_par_iter()
        .map(|i| {
            let x = indicators.column(i);
            criterion_cols
                .iter()
                .map(|y| CorrelationCell::from_columns(&x, y))
                .collect()
        })
        .collect();
    Ok(AlignmentMatrix {
        indicator_ids: indicators.col_ids.clone(),
        criterion_ids: ratings.col_ids.clone(),
        cells,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetainedIndicator {
    pub indicator_id: String,
    pub tier: Tier,
    /// Highest |pcc| among the cells that reach `tier`.
    pub best_criterion: String,
    pub best_cell: CorrelationCell,
    /// Every criterion whose cell reaches `tier`, grid order.
    pub tier_criteria: Vec<String>,
}

/// Keeps indicators whose best cell reaches at least the interest tier.
pub fn filter_indicators(alignment: &AlignmentMatrix, thresholds: &Thresholds) -> Vec<RetainedIndicator> {
    alignment
        .indicator_ids
        .iter()
        .zip(&alignment.cells)
        .filter_map(|(id, row)| {
            let tier = row.iter().filter_map(|c| c.tier(thresholds)).max()?;
            let mut best: Option<(usize, &CorrelationCell)> = None;
            let mut tier_criteria = Vec::new();
            for (c, cell) in row.iter().enumerate() {
                if cell.tier(thresholds) != Some(tier) {
                    continue;
                }
                tier_criteria.push(alignment.criterion_ids[c].clone());
                let better = match best {
                    None => true,
                    Some((_, b)) => cell.abs_pcc() > b.abs_pcc(),
                };
                if better {
                    best = Some((c, cell));
                }
            }
            let (c, cell) = best.expect("tier came from some cell");
            Some(RetainedIndicator {
                indicator_id: id.clone(),
                tier,
                best_criterion: alignment.criterion_ids[c].clone(),
                best_cell: *cell,
                tier_criteria,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Fraction {
    pub count: usize,
    pub total: usize,
}

impl Fraction {
    pub fn new(count: usize, total: usize) -> Self {
        Self { count, total }
    }

    pub fn share(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.count as f64 / self.total as f64
        }
    }

    pub fn percent(&self) -> u32 {
        (self.share() * 100.0).round() as u32
    }
}

/// Renders as `44/63 (70%)`.
impl fmt::Display for Fraction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{} ({}%)", self.count, self.total, self.percent())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KindSummary {
    pub retained: Fraction,
    pub high_or_above: Fraction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentSummary {
    pub thresholds: Thresholds,
    /// Indicators at the interest tier or above, out of all indicators.
    pub retained: Fraction,
    pub high_or_above: Fraction,
    pub very_high: Fraction,
    pub by_kind: BTreeMap<IndicatorKind, KindSummary>,
    /// Cells with |pcc| >= high and p <= alpha.
    pub relevant_cells: usize,
    /// Cells with |pcc| >= very_high and p <= alpha.
    pub very_high_cells: usize,
    /// Over indicators with at least one relevant cell.
    pub median_criteria_per_indicator: f64,
    /// Over all criteria.
    pub median_indicators_per_criterion: f64,
    /// High-tier indicators whose best cell is their intended criterion.
    pub intended_hits: Fraction,
}

fn median(values: &mut [usize]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.sort_unstable();
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2] as f64
    } else {
        (values[n / 2 - 1] + values[n / 2]) as f64 / 2.0
    }
}

pub fn summarize(alignment: &AlignmentMatrix, catalog: &Catalog, thresholds: &Thresholds) -> AlignmentSummary {
    let retained = filter_indicators(alignment, thresholds);
    let total = alignment.indicator_ids.len();
    let kind_of = |id: &str| catalog.get(id).map(|s| s.kind);
    let at_least = |t: Tier| retained.iter().filter(|r| r.tier >= t).count();

    let mut by_kind = BTreeMap::new();
    for kind in IndicatorKind::ALL {
        let kind_total = alignment
            .indicator_ids
            .iter()
            .filter(|id| kind_of(id) == Some(kind))
            .count();
        let in_kind = |t: Tier| {
            retained
                .iter()
                .filter(|r| r.tier >= t && kind_of(&r.indicator_id) == Some(kind))
                .count()
        };
        by_kind.insert(
            kind,
            KindSummary {
                retained: Fraction::new(in_kind(Tier::Interest), kind_total),
                high_or_above: Fraction::new(in_kind(Tier::High), kind_total),
            },
        );
    }

    let relevant: Vec<Vec<bool>> = alignment
        .cells
        .iter()
        .map(|row| row.iter().map(|c| c.is_relevant(thresholds)).collect())
        .collect();
    let relevant_cells = relevant.iter().flatten().filter(|b| **b).count();
    let very_high_cells = alignment
        .cells
        .iter()
        .flatten()
        .filter(|c| c.tier(thresholds) == Some(Tier::VeryHigh))
        .count();

    let mut per_indicator: Vec<usize> = relevant
        .iter()
        .map(|row| row.iter().filter(|b| **b).count())
        .filter(|&k| k > 0)
        .collect();
    let mut per_criterion: Vec<usize> = (0..alignment.criterion_ids.len())
        .map(|c| relevant.iter().filter(|row| row[c]).count())
        .collect();

    let aligned: Vec<&RetainedIndicator> = retained.iter().filter(|r| r.tier >= Tier::High).collect();
    let hits = aligned
        .iter()
        .filter(|r| {
            catalog
                .get(&r.indicator_id)
                .and_then(|s| s.intended_criterion.as_deref())
                == Some(r.best_criterion.as_str())
        })
        .count();

    AlignmentSummary {
        thresholds: *thresholds,
        retained: Fraction::new(retained.len(), total),
        high_or_above: Fraction::new(at_least(Tier::High), total),
        very_high: Fraction::new(at_least(Tier::VeryHigh), total),
        by_kind,
        relevant_cells,
        very_high_cells,
        median_criteria_per_indicator: median(&mut per_indicator),
        median_indicators_per_criterion: median(&mut per_criterion),
        intended_hits: Fraction::new(hits, aligned.len()),
    }
}

impl AlignmentSummary {
    pub fn render_text(&self) -> String {
        let t = &self.thresholds;
        let mut s = String::new();
        let mut line = |l: String| {
            s.push_str(&l);
            s.push('\n');
        };
        line(format!(
            "Retained indicators (|PCC| >= {}): {}",
            t.interest, self.retained
        ));
        for (kind, k) in &self.by_kind {
            line(format!("  {kind}: {}", k.retained));
        }
        line(format!(
            "High tier (|PCC| >= {}, p <= {}, two-tailed): {}",
            t.high, t.alpha, self.high_or_above
        ));
        for (kind, k) in &self.by_kind {
            line(format!("  {kind}: {}", k.high_or_above));
        }
        line(format!(
            "Very high tier (|PCC| >= {}, p <= {}): {}",
            t.very_high, t.alpha, self.very_high
        ));
        line(format!(
            "Relevant correlations: {} cells ({} at |PCC| >= {})",
            self.relevant_cells, self.very_high_cells, t.very_high
        ));
        line(format!(
            "Median criteria per aligned indicator: {}",
            self.median_criteria_per_indicator
        ));
        line(format!(
            "Median aligned indicators per criterion: {}",
            self.median_indicators_per_criterion
        ));
        line(format!("Intended-criterion hits: {}", self.intended_hits));
        s
    }
}
