//! Alignment report rendering.
//!
//! The markdown table marks significant cells in bold, appends `*` for the
//! high tier and `**` for the very-high tier, and puts cells below the
//! interest threshold in parentheses.

use std::fmt::Write as _;

use serde::Serialize;

use crate::alignment::{AlignmentMatrix, CorrelationCell, Thresholds, Tier};
use crate::catalog::Catalog;
use crate::corpus::CriterionId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportCellStyle {
    None,
    Significant,
    HighTier,
    VeryHighTier,
    Dimmed,
}

impl ReportCellStyle {
    pub fn of(cell: &CorrelationCell, t: &Thresholds) -> ReportCellStyle {
        let (Some(r), Some(p)) = (cell.pcc, cell.p) else {
            return ReportCellStyle::None;
        };
        if r.abs() < t.interest {
            return ReportCellStyle::Dimmed;
        }
        match cell.tier(t) {
            Some(Tier::VeryHigh) => ReportCellStyle::VeryHighTier,
            Some(Tier::High) => ReportCellStyle::HighTier,
            _ if p <= t.alpha => ReportCellStyle::Significant,
            _ => ReportCellStyle::None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ReportCellStyle::None => "none",
            ReportCellStyle::Significant => "significant",
            ReportCellStyle::HighTier => "high_tier",
            ReportCellStyle::VeryHighTier => "very_high_tier",
            ReportCellStyle::Dimmed => "dimmed",
        }
    }
}

/// Markdown text for one cell; empty when the correlation is undefined.
pub fn render_cell(cell: &CorrelationCell, t: &Thresholds) -> String {
    let Some(r) = cell.pcc else {
        return String::new();
    };
    let v = format!("{r:.2}");
    match ReportCellStyle::of(cell, t) {
        ReportCellStyle::Dimmed => format!("({v})"),
        ReportCellStyle::None => v,
        ReportCellStyle::Significant => format!("**{v}**"),
        ReportCellStyle::HighTier => format!("**{v}** *"),
        ReportCellStyle::VeryHighTier => format!("**{v}** **"),
    }
}

fn display_name<'a>(criteria: &'a [CriterionId], id: &'a str) -> &'a str {
    criteria
        .iter()
        .find(|c| c.id == id)
        .map_or(id, |c| c.display_name.as_str())
}

pub fn render_markdown(
    alignment: &AlignmentMatrix,
    catalog: &Catalog,
    criteria: &[CriterionId],
    t: &Thresholds,
) -> String {
    let mut out = String::from("# Indicator alignment\n\n");
    out.push_str("| Indicator | Kind |");
    for c in &alignment.criterion_ids {
        let _ = write!(out, " {} |", display_name(criteria, c));
    }
    out.push_str("\n|---|---|");
    out.push_str(&"---:|".repeat(alignment.criterion_ids.len()));
    out.push('\n');
    for (id, row) in alignment.indicator_ids.iter().zip(&alignment.cells) {
        let (name, kind) = catalog
            .get(id)
            .map_or((id.as_str(), ""), |s| (s.name.as_str(), s.kind.as_str()));
        let _ = write!(out, "| {name} | {kind} |");
        for cell in row {
            let _ = write!(out, " {} |", render_cell(cell, t));
        }
        out.push('\n');
    }
    let _ = write!(
        out,
        "\nCells show Pearson r. Bold: p <= {alpha} (two-tailed). \
         `*`: |r| >= {high} and p <= {alpha}. `**`: |r| >= {vh} and p <= {alpha}. \
         Parentheses: |r| < {interest}. Blank: undefined.\n",
        alpha = t.alpha,
        high = t.high,
        vh = t.very_high,
        interest = t.interest,
    );
    out
}

#[derive(Serialize)]
struct JsonCell<'a> {
    indicator_id: &'a str,
    criterion_id: &'a str,
    pcc: Option<f64>,
    p: Option<f64>,
    n: usize,
    tier: Option<Tier>,
    style: ReportCellStyle,
}

pub fn render_json(alignment: &AlignmentMatrix, t: &Thresholds) -> String {
    let mut cells = Vec::new();
    for (ind, row) in alignment.indicator_ids.iter().zip(&alignment.cells) {
        for (crit, cell) in alignment.criterion_ids.iter().zip(row) {
            cells.push(JsonCell {
                indicator_id: ind,
                criterion_id: crit,
                pcc: cell.pcc,
                p: cell.p,
                n: cell.n,
                tier: cell.tier(t),
                style: ReportCellStyle::of(cell, t),
            });
        }
    }
    serde_json::to_string_pretty(&cells).expect("report cells serialize") + "\n"
}

pub fn render_csv(alignment: &AlignmentMatrix, t: &Thresholds) -> String {
    let mut buf = Vec::new();
    alignment
        .write_csv(t, &mut buf)
        .expect("writing csv to memory does not fail");
    String::from_utf8(buf).expect("csv is utf-8")
}
