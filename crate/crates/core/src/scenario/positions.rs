use crate::error::{MsraError, Result};
use nalgebra::DMatrix;
use std::path::Path;

pub const COLUMN_SUM_TOL: f64 = 1e-9;

/// Clearing positions: members × underlyings, in contracts.
#[derive(Clone, Debug, PartialEq)]
pub struct Positions {
    pub members: Vec<String>,
    pub tickers: Vec<String>,
    pub matrix: DMatrix<f64>,
}

impl Positions {
    /// Validates shapes and the clearing identity (every column sums to 0).
    pub fn new(members: Vec<String>, tickers: Vec<String>, matrix: DMatrix<f64>) -> Result<Self> {
        if matrix.nrows() != members.len() || matrix.ncols() != tickers.len() {
            return Err(MsraError::invalid(format!(
                "positions matrix is {}x{} but there are {} members and {} tickers",
                matrix.nrows(),
                matrix.ncols(),
                members.len(),
                tickers.len()
            )));
        }
        if members.is_empty() || tickers.is_empty() {
            return Err(MsraError::invalid("positions need at least one member and one ticker"));
        }
        for (j, ticker) in tickers.iter().enumerate() {
            let sum: f64 = matrix.column(j).iter().sum();
            if sum.abs() > COLUMN_SUM_TOL {
                return Err(MsraError::ColumnSum {
                    ticker: ticker.clone(),
                    sum,
                });
            }
        }
        Ok(Positions {
            members,
            tickers,
            matrix,
        })
    }

    pub fn n_members(&self) -> usize {
        self.members.len()
    }

    pub fn n_underlyings(&self) -> usize {
        self.tickers.len()
    }
}

/// Reads a positions CSV: a header row of tickers (the first header cell
/// names the label column), then one row per member with its label first.
pub fn load_positions(path: impl AsRef<Path>) -> Result<Positions> {
    let text = std::fs::read_to_string(path)?;
    parse_positions(&text)
}

pub fn parse_positions(text: &str) -> Result<Positions> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut records = reader.records();
    let header = records
        .next()
        .ok_or_else(|| MsraError::Parse {
            row: 1,
            column: 1,
            message: "empty positions file".into(),
        })?
        .map_err(|e| csv_parse_error(e, 1))?;
    let width = header.len();
    if width < 2 {
        return Err(MsraError::Parse {
            row: 1,
            column: 1,
            message: "header needs a label column and at least one ticker".into(),
        });
    }
    let tickers: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let mut members = Vec::new();
    let mut values = Vec::new();
    for (i, rec) in records.enumerate() {
        let row = i + 2;
        let rec = rec.map_err(|e| csv_parse_error(e, row))?;
        if rec.len() == 1 && rec[0].is_empty() {
            continue;
        }
        if rec.len() != width {
            return Err(MsraError::Parse {
                row,
                column: rec.len().min(width) + 1,
                message: format!("expected {width} fields, found {}", rec.len()),
            });
        }
        members.push(rec[0].to_string());
        for (j, cell) in rec.iter().enumerate().skip(1) {
            let v: f64 = cell.parse().map_err(|_| MsraError::Parse {
                row,
                column: j + 1,
                message: format!("not a number: {cell:?}"),
            })?;
            if !v.is_finite() {
                return Err(MsraError::Parse {
                    row,
                    column: j + 1,
                    message: format!("not finite: {cell:?}"),
                });
            }
            values.push(v);
        }
    }
    let matrix = DMatrix::from_row_slice(members.len(), tickers.len(), &values);
    Positions::new(members, tickers, matrix)
}

fn csv_parse_error(e: csv::Error, row: usize) -> MsraError {
    MsraError::Parse {
        row,
        column: 0,
        message: e.to_string(),
    }
}
