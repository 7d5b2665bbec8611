//! Header-row CSV tables. Floats are written as `{:.16e}` (17 significant
//! digits, exact round trip); missing values are empty cells.

use std::path::Path;

use crate::error::{Error, Result};

/// One table cell.
#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Num(f64),
    Int(i64),
    Text(String),
    Empty,
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::Num(v) => format!("{v:.16e}"),
            Cell::Int(v) => v.to_string(),
            Cell::Text(s) => s.clone(),
            Cell::Empty => String::new(),
        }
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Num(v)
    }
}

impl From<Option<f64>> for Cell {
    fn from(v: Option<f64>) -> Self {
        v.map_or(Cell::Empty, Cell::Num)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

/// In-memory table; rows as rendered strings once read back.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Table {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: Into<String>>(headers: impl IntoIterator<Item = S>) -> Self {
        Self { headers: headers.into_iter().map(Into::into).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        assert_eq!(row.len(), self.headers.len(), "row width must match the header");
        self.rows.push(row.iter().map(Cell::render).collect());
    }

    pub fn to_csv_bytes(&self) -> Result<Vec<u8>> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        w.write_record(&self.headers)?;
        for row in &self.rows {
            w.write_record(row)?;
        }
        w.into_inner().map_err(|e| Error::Io(e.to_string()))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv_bytes()?)?;
        Ok(())
    }

    pub fn from_reader(r: impl std::io::Read) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
        let headers = rdr.headers()?.iter().map(str::to_string).collect();
        let rows = rdr
            .records()
            .map(|rec| rec.map(|r| r.iter().map(str::to_string).collect()))
            .collect::<std::result::Result<_, _>>()?;
        Ok(Self { headers, rows })
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_reader(std::fs::File::open(path)?)
    }

    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::InvalidInput(format!("missing column `{name}`")))
    }

    /// Numeric column; empty cells become `None`.
    pub fn column_f64(&self, name: &str) -> Result<Vec<Option<f64>>> {
        let k = self.column_index(name)?;
        self.rows
            .iter()
            .map(|row| {
                let s = row[k].as_str();
                if s.is_empty() {
                    Ok(None)
                } else {
                    s.parse()
                        .map(Some)
                        .map_err(|_| Error::InvalidInput(format!("column `{name}`: `{s}` is not a number")))
                }
            })
            .collect()
    }

    pub fn column_str(&self, name: &str) -> Result<Vec<&str>> {
        let k = self.column_index(name)?;
        Ok(self.rows.iter().map(|row| row[k].as_str()).collect())
    }
}

/// Drop-test observations: columns `h_mm` and `outcome` (cross, circle, triangle).
pub fn read_observations(path: &Path) -> Result<Vec<crate::droptest::Observation>> {
    let t = Table::read(path)?;
    let h = t.column_f64("h_mm")?;
    let outcome = t.column_str("outcome")?;
    h.into_iter()
        .zip(outcome)
        .enumerate()
        .map(|(i, (h, o))| {
            let h_mm = h.ok_or_else(|| Error::InvalidInput(format!("observation {}: missing h_mm", i + 1)))?;
            let outcome = serde_json::from_value(serde_json::Value::String(o.to_lowercase()))
                .map_err(|_| Error::InvalidInput(format!("observation {}: unknown outcome `{o}`", i + 1)))?;
            Ok(crate::droptest::Observation { h_mm, outcome })
        })
        .collect()
}
