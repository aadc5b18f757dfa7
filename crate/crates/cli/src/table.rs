//! CSV tables with a fixed column schema; every row is checked against it
//! before anything is written.

use std::path::Path;

use crate::error::{CliError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Col {
    Text,
    /// Non-negative integer.
    Count,
    /// Finite float.
    Number,
    /// Float in `[0, 1]`.
    Fraction,
    /// `0` or `1`.
    Flag,
}

impl Col {
    fn check(self, cell: &str) -> bool {
        match self {
            Col::Text => !cell.contains(['\n', '\r']),
            Col::Count => cell.parse::<u64>().is_ok(),
            Col::Number => cell.parse::<f64>().is_ok_and(f64::is_finite),
            Col::Fraction => cell.parse::<f64>().is_ok_and(|x| (0.0..=1.0).contains(&x)),
            Col::Flag => cell == "0" || cell == "1",
        }
    }
}

#[derive(Clone, Debug)]
pub struct Table {
    columns: Vec<(String, Col)>,
    rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(columns: &[(&str, Col)]) -> Self {
        Self {
            columns: columns.iter().map(|(n, c)| (n.to_string(), *c)).collect(),
            rows: Vec::new(),
        }
    }

    pub fn header(&self) -> Vec<&str> {
        self.columns.iter().map(|(n, _)| n.as_str()).collect()
    }

    pub fn rows(&self) -> &[Vec<String>] {
        &self.rows
    }

    /// Empty cells stand for missing values in any non-text column.
    pub fn push(&mut self, row: Vec<String>) -> Result<()> {
        if row.len() != self.columns.len() {
            return Err(CliError::Runtime(format!(
                "csv row has {} cells, schema has {}",
                row.len(),
                self.columns.len()
            )));
        }
        for ((name, col), cell) in self.columns.iter().zip(&row) {
            if !(cell.is_empty() || col.check(cell)) {
                return Err(CliError::Runtime(format!("csv column {name}: `{cell}` is not a valid {col:?}")));
            }
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(self.header())?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        w.flush()?;
        Ok(())
    }
}
