//! Typed tabular data: schema inference, CSV I/O, and the value encodings
//! (min-max normalization, label codes) shared by every sampler and metric.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Distinct-value count above which an all-integer column is treated as numerical.
pub const CATEGORICAL_MAX_DISTINCT: usize = 10;

#[derive(Debug, Error)]
pub enum TableError {
    #[error("header is empty")]
    EmptyHeader,
    #[error("duplicate column name `{0}`")]
    DuplicateColumn(String),
    #[error("empty column name at position {0}")]
    EmptyColumnName(usize),
    #[error("no sample rows to infer a schema from")]
    NoSampleRows,
    #[error("table has no complete rows")]
    EmptyTable,
    #[error("header mismatch: expected {expected:?}, found {found:?}")]
    HeaderMismatch {
        expected: Vec<String>,
        found: Vec<String>,
    },
    #[error("row {row}: expected {expected} fields, found {found}")]
    RaggedRow {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("row {row}, column `{column}`: cannot parse `{cell}` as a finite number")]
    Parse {
        row: usize,
        column: String,
        cell: String,
    },
    #[error("row {row}, column `{column}`: value kind does not match the schema")]
    KindMismatch { row: usize, column: String },
    #[error("unknown column `{0}`")]
    UnknownColumn(String),
    #[error("category `{value}` is outside the support of column `{column}`")]
    UnknownCategory { column: String, value: String },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Numerical,
    Categorical,
}

impl fmt::Display for FeatureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FeatureKind::Numerical => f.write_str("numerical"),
            FeatureKind::Categorical => f.write_str("categorical"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Feature {
    pub name: String,
    pub kind: FeatureKind,
}

/// Ordered, uniquely named feature list. Order is the source column order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schema {
    features: Vec<Feature>,
}

impl Schema {
    pub fn new(features: Vec<Feature>) -> Result<Self, TableError> {
        if features.is_empty() {
            return Err(TableError::EmptyHeader);
        }
        let mut seen = HashSet::new();
        for (i, f) in features.iter().enumerate() {
            if f.name.is_empty() {
                return Err(TableError::EmptyColumnName(i));
            }
            if !seen.insert(f.name.as_str()) {
                return Err(TableError::DuplicateColumn(f.name.clone()));
            }
        }
        Ok(Self { features })
    }

    pub fn features(&self) -> &[Feature] {
        &self.features
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.features.iter().map(|f| f.name.as_str())
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.features.iter().position(|f| f.name == name)
    }

    pub fn kind(&self, column: usize) -> FeatureKind {
        self.features[column].kind
    }

    pub fn name(&self, column: usize) -> &str {
        &self.features[column].name
    }

    /// Stable digest of names and kinds, used to bind model artifacts to a dataset.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for f in &self.features {
            h.update(f.name.as_bytes());
            h.update([0u8]);
            h.update(f.kind.to_string().as_bytes());
            h.update([b'\n']);
        }
        hex_digest(h)
    }
}

pub(crate) fn hex_digest(h: Sha256) -> String {
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Lowercase hex SHA-256 of `data`.
pub fn sha256_hex(data: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(data);
    hex_digest(h)
}

/// A single cell. Numbers are always finite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Value {
    Number(f64),
    Category(String),
}

impl Value {
    pub fn as_number(&self) -> Option<f64> {
        match self {
            Value::Number(x) => Some(*x),
            Value::Category(_) => None,
        }
    }

    pub fn as_category(&self) -> Option<&str> {
        match self {
            Value::Category(s) => Some(s),
            Value::Number(_) => None,
        }
    }

    pub fn kind(&self) -> FeatureKind {
        match self {
            Value::Number(_) => FeatureKind::Numerical,
            Value::Category(_) => FeatureKind::Categorical,
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            // `Display` for f64 prints the shortest string that parses back to the same bits.
            Value::Number(x) => write!(f, "{x}"),
            Value::Category(s) => f.write_str(s),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    schema: Schema,
    rows: Vec<Vec<Value>>,
}

impl Table {
    /// Validates shape and kinds. An empty row list is rejected.
    pub fn new(schema: Schema, rows: Vec<Vec<Value>>) -> Result<Self, TableError> {
        if rows.is_empty() {
            return Err(TableError::EmptyTable);
        }
        for (r, row) in rows.iter().enumerate() {
            if row.len() != schema.len() {
                return Err(TableError::RaggedRow {
                    row: r,
                    expected: schema.len(),
                    found: row.len(),
                });
            }
            for (c, v) in row.iter().enumerate() {
                if v.kind() != schema.kind(c) {
                    return Err(TableError::KindMismatch {
                        row: r,
                        column: schema.name(c).to_string(),
                    });
                }
                if let Value::Number(x) = v {
                    if !x.is_finite() {
                        return Err(TableError::Parse {
                            row: r,
                            column: schema.name(c).to_string(),
                            cell: x.to_string(),
                        });
                    }
                }
            }
        }
        Ok(Self { schema, rows })
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn rows(&self) -> &[Vec<Value>] {
        &self.rows
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_cols(&self) -> usize {
        self.schema.len()
    }

    pub fn value(&self, row: usize, column: usize) -> &Value {
        &self.rows[row][column]
    }

    pub fn column(&self, column: usize) -> impl Iterator<Item = &Value> + '_ {
        self.rows.iter().map(move |r| &r[column])
    }

    /// Numeric column values; panics if the column is categorical.
    pub fn numeric_column(&self, column: usize) -> Vec<f64> {
        self.column(column)
            .map(|v| v.as_number().expect("numerical column"))
            .collect()
    }

    /// New table holding the given rows (by index) of this one.
    pub fn select_rows(&self, indices: &[usize]) -> Result<Table, TableError> {
        let rows = indices.iter().map(|&i| self.rows[i].clone()).collect();
        Table::new(self.schema.clone(), rows)
    }

    pub fn into_rows(self) -> Vec<Vec<Value>> {
        self.rows
    }
}

fn parse_number(cell: &str) -> Option<f64> {
    cell.trim().parse::<f64>().ok().filter(|x| x.is_finite())
}

/// Decides each column's kind from raw string cells. Empty cells are ignored.
///
/// A column is numerical iff every non-missing cell parses as a finite number
/// and it either has more than [`CATEGORICAL_MAX_DISTINCT`] distinct values or
/// holds a non-integer value. `hints` override the inferred kind by name.
pub fn infer_schema(
    header: &[String],
    sample_rows: &[Vec<String>],
    hints: &HashMap<String, FeatureKind>,
) -> Result<Schema, TableError> {
    if header.is_empty() {
        return Err(TableError::EmptyHeader);
    }
    if sample_rows.is_empty() {
        return Err(TableError::NoSampleRows);
    }
    let mut features = Vec::with_capacity(header.len());
    for (c, name) in header.iter().enumerate() {
        let kind = match hints.get(name) {
            Some(k) => *k,
            None => infer_column_kind(sample_rows.iter().filter_map(|r| r.get(c)).map(String::as_str)),
        };
        features.push(Feature {
            name: name.clone(),
            kind,
        });
    }
    Schema::new(features)
}

fn infer_column_kind<'a>(cells: impl Iterator<Item = &'a str>) -> FeatureKind {
    let mut distinct: HashSet<u64> = HashSet::new();
    let mut non_integer = false;
    for cell in cells {
        if cell.trim().is_empty() {
            continue;
        }
        let Some(x) = parse_number(cell) else {
            return FeatureKind::Categorical;
        };
        if x.fract() != 0.0 {
            non_integer = true;
        }
        // -0.0 and 0.0 are the same value
        distinct.insert((x + 0.0).to_bits());
    }
    if non_integer || distinct.len() > CATEGORICAL_MAX_DISTINCT {
        FeatureKind::Numerical
    } else {
        FeatureKind::Categorical
    }
}

/// Header plus raw string records, exactly as in the file.
pub fn read_raw_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>), TableError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path)?;
    let header: Vec<String> = reader.headers()?.iter().map(|s| s.trim().to_string()).collect();
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        rows.push(rec.iter().map(str::to_string).collect());
    }
    Ok((header, rows))
}

/// Outcome of [`load_csv`]: the table and the number of rows dropped for missing cells.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub table: Table,
    pub dropped_rows: usize,
}

/// Reads a CSV whose header must equal the schema's names, typing every cell.
///
/// Rows with any empty cell are dropped and counted; if no complete row
/// remains the load fails with [`TableError::EmptyTable`].
pub fn load_csv(path: &Path, schema: &Schema) -> Result<Loaded, TableError> {
    let (header, raw) = read_raw_csv(path)?;
    let expected: Vec<String> = schema.names().map(str::to_string).collect();
    if header != expected {
        return Err(TableError::HeaderMismatch {
            expected,
            found: header,
        });
    }
    table_from_raw(schema, raw)
}

/// Types raw string rows against `schema`, dropping rows with missing cells.
pub fn table_from_raw(schema: &Schema, raw: Vec<Vec<String>>) -> Result<Loaded, TableError> {
    let mut rows = Vec::with_capacity(raw.len());
    let mut dropped = 0;
    for (r, rec) in raw.into_iter().enumerate() {
        if rec.len() != schema.len() {
            return Err(TableError::RaggedRow {
                row: r,
                expected: schema.len(),
                found: rec.len(),
            });
        }
        if rec.iter().any(|c| c.trim().is_empty()) {
            dropped += 1;
            continue;
        }
        let mut row = Vec::with_capacity(rec.len());
        for (c, cell) in rec.into_iter().enumerate() {
            row.push(match schema.kind(c) {
                FeatureKind::Numerical => match parse_number(&cell) {
                    Some(x) => Value::Number(x),
                    None => {
                        return Err(TableError::Parse {
                            row: r,
                            column: schema.name(c).to_string(),
                            cell,
                        })
                    }
                },
                FeatureKind::Categorical => Value::Category(cell),
            });
        }
        rows.push(row);
    }
    if dropped > 0 {
        log::warn!("dropped {dropped} row(s) with missing values");
    }
    Ok(Loaded {
        table: Table::new(schema.clone(), rows)?,
        dropped_rows: dropped,
    })
}

/// Infers the schema from the whole file, then loads it.
pub fn load_csv_inferred(
    path: &Path,
    hints: &HashMap<String, FeatureKind>,
) -> Result<Loaded, TableError> {
    let (header, raw) = read_raw_csv(path)?;
    if raw.is_empty() {
        return Err(TableError::EmptyTable);
    }
    let schema = infer_schema(&header, &raw, hints)?;
    table_from_raw(&schema, raw)
}

pub fn write_csv(table: &Table, path: &Path) -> Result<(), TableError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(table.schema().names())?;
    for row in table.rows() {
        w.write_record(row.iter().map(|v| v.to_string()))?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ColumnStats {
    Numerical { min: f64, max: f64 },
    Categorical { support: Vec<String> },
}

/// Per-column min/max and label-encoder supports fitted on a table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NormStats {
    columns: Vec<ColumnStats>,
    #[serde(skip)]
    codes: Vec<HashMap<String, u32>>,
}

impl PartialEq for NormStats {
    fn eq(&self, other: &Self) -> bool {
        self.columns == other.columns
    }
}

impl NormStats {
    pub fn fit(table: &Table) -> Self {
        let mut columns = Vec::with_capacity(table.n_cols());
        for c in 0..table.n_cols() {
            columns.push(match table.schema().kind(c) {
                FeatureKind::Numerical => {
                    let (mut min, mut max) = (f64::INFINITY, f64::NEG_INFINITY);
                    for v in table.column(c) {
                        let x = v.as_number().unwrap();
                        min = min.min(x);
                        max = max.max(x);
                    }
                    ColumnStats::Numerical { min, max }
                }
                FeatureKind::Categorical => {
                    let mut seen = HashSet::new();
                    let mut support = Vec::new();
                    for v in table.column(c) {
                        let s = v.as_category().unwrap();
                        if seen.insert(s) {
                            support.push(s.to_string());
                        }
                    }
                    ColumnStats::Categorical { support }
                }
            });
        }
        Self::from_columns(columns)
    }

    pub fn from_columns(columns: Vec<ColumnStats>) -> Self {
        let codes = columns
            .iter()
            .map(|c| match c {
                ColumnStats::Categorical { support } => support
                    .iter()
                    .enumerate()
                    .map(|(i, s)| (s.clone(), i as u32))
                    .collect(),
                ColumnStats::Numerical { .. } => HashMap::new(),
            })
            .collect();
        Self { columns, codes }
    }

    /// Rebuilds lookup tables after deserialization.
    pub fn reindex(self) -> Self {
        Self::from_columns(self.columns)
    }

    pub fn columns(&self) -> &[ColumnStats] {
        &self.columns
    }

    pub fn column(&self, column: usize) -> &ColumnStats {
        &self.columns[column]
    }

    /// `(min, max)` of a numerical column.
    pub fn bounds(&self, column: usize) -> (f64, f64) {
        match &self.columns[column] {
            ColumnStats::Numerical { min, max } => (*min, *max),
            ColumnStats::Categorical { .. } => panic!("column {column} is categorical"),
        }
    }

    /// Min-max normalization; a constant column maps everything to 0.
    pub fn normalize(&self, column: usize, x: f64) -> f64 {
        let (min, max) = self.bounds(column);
        if max > min {
            (x - min) / (max - min)
        } else {
            0.0
        }
    }

    pub fn support(&self, column: usize) -> &[String] {
        match &self.columns[column] {
            ColumnStats::Categorical { support } => support,
            ColumnStats::Numerical { .. } => panic!("column {column} is numerical"),
        }
    }

    pub fn code(&self, column: usize, category: &str) -> Option<u32> {
        self.codes[column].get(category).copied()
    }

    pub fn decode(&self, column: usize, code: u32) -> &str {
        &self.support(column)[code as usize]
    }
}
