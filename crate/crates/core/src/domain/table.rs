use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::DomainError;

/// One cell of a data table. Serialized as a bare number, string or `null`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Cell {
    Num(f64),
    Text(String),
    Missing,
}

impl Cell {
    /// Classifies a raw text field: empty is missing, parseable is numeric.
    pub fn parse(raw: &str) -> Cell {
        let t = raw.trim();
        if t.is_empty() {
            Cell::Missing
        } else if let Ok(v) = t.parse::<f64>() {
            Cell::Num(v)
        } else {
            Cell::Text(t.to_string())
        }
    }

    pub fn is_missing(&self) -> bool {
        matches!(self, Cell::Missing)
    }

    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Cell::Num(v) => Some(*v),
            Cell::Text(t) => t.trim().parse().ok(),
            Cell::Missing => None,
        }
    }
}

/// Column-labelled records plus the category encoders written by preprocessing.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DataTable {
    columns: Vec<String>,
    rows: Vec<Vec<Cell>>,
    #[serde(default)]
    pub encoders: BTreeMap<String, Vec<String>>,
}

impl DataTable {
    pub fn new(columns: Vec<String>, rows: Vec<Vec<Cell>>) -> Result<Self, DomainError> {
        let m = columns.len();
        if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != m) {
            return Err(DomainError::RaggedRow { row: i, expected: m, found: r.len() });
        }
        Ok(Self { columns, rows, encoders: BTreeMap::new() })
    }

    /// Numeric table built from column vectors of equal length.
    pub fn from_numeric(names: &[String], columns: &[Vec<f64>]) -> Self {
        let n = columns.first().map_or(0, Vec::len);
        let rows = (0..n)
            .map(|i| columns.iter().map(|c| Cell::Num(c[i])).collect())
            .collect();
        Self { columns: names.to_vec(), rows, encoders: BTreeMap::new() }
    }

    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    pub fn rows(&self) -> &[Vec<Cell>] {
        &self.rows
    }

    /// `(M, N)`: column count and row count.
    pub fn shape(&self) -> (usize, usize) {
        (self.columns.len(), self.rows.len())
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn column(&self, idx: usize) -> impl Iterator<Item = &Cell> + '_ {
        self.rows.iter().map(move |r| &r[idx])
    }

    pub fn decode(&self, column: &str, code: f64) -> Option<&str> {
        let cats = self.encoders.get(column)?;
        if code < 0.0 || libm::floor(code) != code {
            return None;
        }
        cats.get(code as usize).map(String::as_str)
    }

    pub fn has_missing(&self) -> bool {
        self.rows.iter().flatten().any(Cell::is_missing)
    }

    /// Numeric view; fails on the first cell that is missing or not a number.
    pub fn numeric(&self) -> Result<NumericData, DomainError> {
        let mut cols = alloc::vec![Vec::with_capacity(self.rows.len()); self.columns.len()];
        for row in &self.rows {
            for (j, cell) in row.iter().enumerate() {
                match cell.as_f64() {
                    Some(v) if v.is_finite() => cols[j].push(v),
                    _ => return Err(DomainError::NonNumeric(self.columns[j].clone())),
                }
            }
        }
        Ok(NumericData { names: self.columns.clone(), columns: cols })
    }

    /// Named numeric values of one row, skipping non-numeric cells.
    pub fn row_values(&self, i: usize) -> Option<BTreeMap<String, f64>> {
        let row = self.rows.get(i)?;
        Some(
            self.columns
                .iter()
                .zip(row)
                .filter_map(|(name, c)| c.as_f64().map(|v| (name.clone(), v)))
                .collect(),
        )
    }
}

/// Column-major numeric matrix with column names.
#[derive(Debug, Clone, PartialEq)]
pub struct NumericData {
    names: Vec<String>,
    columns: Vec<Vec<f64>>,
}

impl NumericData {
    pub fn new(names: Vec<String>, columns: Vec<Vec<f64>>) -> Result<Self, DomainError> {
        if names.len() != columns.len() {
            return Err(DomainError::RaggedRow { row: 0, expected: names.len(), found: columns.len() });
        }
        let n = columns.first().map_or(0, Vec::len);
        if let Some(c) = columns.iter().find(|c| c.len() != n) {
            return Err(DomainError::RaggedRow { row: 0, expected: n, found: c.len() });
        }
        Ok(Self { names, columns })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn n_rows(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn column(&self, j: usize) -> &[f64] {
        &self.columns[j]
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        self.columns.iter().map(|c| c[i]).collect()
    }

    pub fn row_map(&self, i: usize) -> BTreeMap<String, f64> {
        self.names.iter().cloned().zip(self.columns.iter().map(|c| c[i])).collect()
    }

    pub fn select_rows(&self, rows: &[usize]) -> NumericData {
        NumericData {
            names: self.names.clone(),
            columns: self
                .columns
                .iter()
                .map(|c| rows.iter().map(|&i| c[i]).collect())
                .collect(),
        }
    }

    pub fn select_columns(&self, names: &[&str]) -> Result<NumericData, DomainError> {
        let mut cols = Vec::with_capacity(names.len());
        for n in names {
            let j = self.index(n).ok_or_else(|| DomainError::UnknownVariable((*n).into()))?;
            cols.push(self.columns[j].clone());
        }
        Ok(NumericData { names: names.iter().map(|s| (*s).into()).collect(), columns: cols })
    }

    pub fn into_table(self) -> DataTable {
        DataTable::from_numeric(&self.names, &self.columns)
    }
}
