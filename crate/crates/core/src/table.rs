//! Row/column labeled numeric matrix with explicit missing cells.
//!
//! Used for both the teacher rating matrix (submissions x criteria) and the
//! numeric view of extracted indicators (submissions x indicators).

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TableError {
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Malformed { line: u64, message: String },
    #[error("unknown column `{0}`")]
    UnknownColumn(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledMatrix {
    pub row_ids: Vec<String>,
    pub col_ids: Vec<String>,
    /// Row-major; `None` is a missing cell.
    pub values: Vec<Vec<Option<f64>>>,
}

impl LabeledMatrix {
    pub fn new(row_ids: Vec<String>, col_ids: Vec<String>) -> Self {
        let values = vec![vec![None; col_ids.len()]; row_ids.len()];
        Self {
            row_ids,
            col_ids,
            values,
        }
    }

    pub fn n_rows(&self) -> usize {
        self.row_ids.len()
    }

    pub fn n_cols(&self) -> usize {
        self.col_ids.len()
    }

    pub fn col_index(&self, id: &str) -> Option<usize> {
        self.col_ids.iter().position(|c| c == id)
    }

    pub fn row_index(&self, id: &str) -> Option<usize> {
        self.row_ids.iter().position(|r| r == id)
    }

    pub fn column(&self, j: usize) -> Vec<Option<f64>> {
        self.values.iter().map(|row| row[j]).collect()
    }

    pub fn column_by_id(&self, id: &str) -> Result<Vec<Option<f64>>, TableError> {
        let j = self
            .col_index(id)
            .ok_or_else(|| TableError::UnknownColumn(id.to_string()))?;
        Ok(self.column(j))
    }

    /// Keeps only the named columns, in the order given.
    pub fn select_columns(&self, ids: &[String]) -> Result<LabeledMatrix, TableError> {
        let idx = ids
            .iter()
            .map(|id| self.col_index(id).ok_or_else(|| TableError::UnknownColumn(id.clone())))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(LabeledMatrix {
            row_ids: self.row_ids.clone(),
            col_ids: ids.to_vec(),
            values: self
                .values
                .iter()
                .map(|row| idx.iter().map(|&j| row[j]).collect())
                .collect(),
        })
    }

    /// CSV with a leading `row_key` column; empty cells are missing.
    pub fn write_csv<W: Write>(&self, row_key: &str, out: W) -> Result<(), TableError> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = Vec::with_capacity(self.n_cols() + 1);
        header.push(row_key.to_string());
        header.extend(self.col_ids.iter().cloned());
        w.write_record(&header)?;
        for (id, row) in self.row_ids.iter().zip(&self.values) {
            let mut rec = Vec::with_capacity(row.len() + 1);
            rec.push(id.clone());
            rec.extend(row.iter().map(|v| v.map(format_number).unwrap_or_default()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<LabeledMatrix, TableError> {
        let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
        let header = r.headers()?.clone();
        if header.is_empty() {
            return Err(TableError::Malformed {
                line: 1,
                message: "empty header".into(),
            });
        }
        let col_ids: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
        let mut row_ids = Vec::new();
        let mut values = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let line = rec.position().map(|p| p.line()).unwrap_or(0);
            row_ids.push(rec.get(0).unwrap_or_default().to_string());
            let mut row = Vec::with_capacity(col_ids.len());
            for field in rec.iter().skip(1) {
                row.push(parse_optional_number(field).map_err(|message| TableError::Malformed { line, message })?);
            }
            values.push(row);
        }
        Ok(LabeledMatrix {
            row_ids,
            col_ids,
            values,
        })
    }
}

/// Shortest round-trip decimal; integral values print without a fraction.
pub fn format_number(v: f64) -> String {
    format!("{v}")
}

pub(crate) fn parse_optional_number(field: &str) -> Result<Option<f64>, String> {
    let field = field.trim();
    if field.is_empty() {
        return Ok(None);
    }
    field
        .parse::<f64>()
        .map(Some)
        .map_err(|_| format!("not a number: `{field}`"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip_keeps_missing_cells() {
        let mut m = LabeledMatrix::new(vec!["s1".into(), "s2".into()], vec!["a".into(), "b".into()]);
        m.values[0][0] = Some(2.0);
        m.values[1][1] = Some(0.5);
        let mut buf = Vec::new();
        m.write_csv("submission_id", &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf.clone()).unwrap(),
            "submission_id,a,b\ns1,2,\ns2,,0.5\n"
        );
        let back = LabeledMatrix::read_csv(&buf[..]).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn select_unknown_column_fails() {
        let m = LabeledMatrix::new(vec!["s1".into()], vec!["a".into()]);
        assert!(matches!(
            m.select_columns(&["zz".into()]),
            Err(TableError::UnknownColumn(c)) if c == "zz"
        ));
    }
}
