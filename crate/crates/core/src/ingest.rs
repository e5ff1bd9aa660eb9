//! Tabular input and the temporal/spatial aggregation that brings
//! component-model data to model resolution.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use chrono::{Datelike, Duration, NaiveDate};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("line {line}, column `{column}`: `{value}` is not a number")]
    NotNumeric { line: usize, column: String, value: String },
    #[error("table has no data rows")]
    Empty,
    #[error("unparseable date `{0}`")]
    BadDate(String),
    #[error("missing value for time key `{0}`")]
    MissingValue(String),
    #[error("unknown {what} `{value}`")]
    UnknownOption { what: &'static str, value: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColumnKind {
    Numeric,
    Text,
}

/// Required columns and their kinds. Columns not named here are kept as text.
#[derive(Debug, Clone, Default)]
pub struct Schema {
    pub columns: Vec<(String, ColumnKind)>,
}

impl Schema {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn numeric(mut self, name: &str) -> Self {
        self.columns.push((name.to_string(), ColumnKind::Numeric));
        self
    }

    pub fn text(mut self, name: &str) -> Self {
        self.columns.push((name.to_string(), ColumnKind::Text));
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Number(f64),
    Text(String),
    /// Empty cell in a numeric column.
    Missing,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub columns: Vec<String>,
    pub kinds: Vec<ColumnKind>,
    pub rows: Vec<Vec<Value>>,
}

impl Dataset {
    pub fn column_index(&self, name: &str) -> Result<usize, IngestError> {
        self.columns.iter().position(|c| c == name).ok_or_else(|| IngestError::MissingColumn(name.to_string()))
    }

    pub fn numeric_column(&self, name: &str) -> Result<Vec<Option<f64>>, IngestError> {
        let i = self.column_index(name)?;
        self.rows
            .iter()
            .enumerate()
            .map(|(r, row)| match &row[i] {
                Value::Number(v) => Ok(Some(*v)),
                Value::Missing => Ok(None),
                Value::Text(t) => parse_number(t, r + 2, name),
            })
            .collect()
    }

    pub fn text_column(&self, name: &str) -> Result<Vec<String>, IngestError> {
        let i = self.column_index(name)?;
        Ok(self
            .rows
            .iter()
            .map(|row| match &row[i] {
                Value::Number(v) => v.to_string(),
                Value::Text(t) => t.clone(),
                Value::Missing => String::new(),
            })
            .collect())
    }
}

fn parse_number(raw: &str, line: usize, column: &str) -> Result<Option<f64>, IngestError> {
    let t = raw.trim();
    if t.is_empty() {
        return Ok(None);
    }
    t.parse::<f64>().map(Some).map_err(|_| IngestError::NotNumeric {
        line,
        column: column.to_string(),
        value: raw.to_string(),
    })
}

pub fn read_table<R: Read>(reader: R, schema: &Schema) -> Result<Dataset, IngestError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).comment(Some(b'#')).from_reader(reader);
    let columns: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let mut kinds = vec![ColumnKind::Text; columns.len()];
    for (name, kind) in &schema.columns {
        let i = columns.iter().position(|c| c == name).ok_or_else(|| IngestError::MissingColumn(name.clone()))?;
        kinds[i] = *kind;
    }
    let mut rows = Vec::new();
    for (r, record) in rdr.records().enumerate() {
        let record = record?;
        let line = record.position().map_or(r + 2, |p| p.line() as usize);
        let row = record
            .iter()
            .zip(&kinds)
            .zip(&columns)
            .map(|((cell, kind), name)| match kind {
                ColumnKind::Text => Ok(Value::Text(cell.to_string())),
                ColumnKind::Numeric => Ok(parse_number(cell, line, name)?.map_or(Value::Missing, Value::Number)),
            })
            .collect::<Result<Vec<_>, IngestError>>()?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(IngestError::Empty);
    }
    Ok(Dataset { columns, kinds, rows })
}

pub fn read_table_path(path: &Path, schema: &Schema) -> Result<Dataset, IngestError> {
    read_table(std::fs::File::open(path)?, schema)
}

/// Writes `dataset` as CSV; numbers use the shortest round-tripping form.
pub fn write_table<W: Write>(dataset: &Dataset, writer: W) -> Result<(), IngestError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(&dataset.columns)?;
    for row in &dataset.rows {
        w.write_record(row.iter().map(|v| match v {
            Value::Number(x) => x.to_string(),
            Value::Text(t) => t.clone(),
            Value::Missing => String::new(),
        }))?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Window {
    /// Seven-day windows starting on the series' first date.
    Weekly,
    /// Calendar months.
    Monthly,
    /// Calendar years.
    Annual,
}

impl std::str::FromStr for Window {
    type Err = IngestError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "weekly" => Ok(Window::Weekly),
            "monthly" => Ok(Window::Monthly),
            "annual" => Ok(Window::Annual),
            other => Err(IngestError::UnknownOption { what: "window", value: other.to_string() }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AggOp {
    Sum,
    Mean,
}

impl std::str::FromStr for AggOp {
    type Err = IngestError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sum" => Ok(AggOp::Sum),
            "mean" => Ok(AggOp::Mean),
            other => Err(IngestError::UnknownOption { what: "op", value: other.to_string() }),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowValue {
    pub index: usize,
    pub start: NaiveDate,
    /// `None` marks a window with no observed values.
    pub value: Option<f64>,
    /// Window not fully covered by the series, or containing missing values.
    pub partial: bool,
}

pub fn parse_date(s: &str) -> Result<NaiveDate, IngestError> {
    NaiveDate::parse_from_str(s.trim(), "%Y-%m-%d").map_err(|_| IngestError::BadDate(s.to_string()))
}

fn month_start(year: i32, month0: i64) -> NaiveDate {
    let y = year + (month0.div_euclid(12)) as i32;
    let m = month0.rem_euclid(12) as u32 + 1;
    NaiveDate::from_ymd_opt(y, m, 1).expect("valid month")
}

/// Groups dated values into consecutive windows and reduces each by `op`.
pub fn aggregate_temporal<S: AsRef<str>>(
    series: &[(S, Option<f64>)],
    window: Window,
    op: AggOp,
) -> Result<Vec<WindowValue>, IngestError> {
    let mut dated =
        series.iter().map(|(d, v)| Ok((parse_date(d.as_ref())?, *v))).collect::<Result<Vec<_>, IngestError>>()?;
    if dated.is_empty() {
        return Err(IngestError::Empty);
    }
    dated.sort_by_key(|(d, _)| *d);
    let first = dated[0].0;
    let last = dated[dated.len() - 1].0;

    let index_of = |d: NaiveDate| -> usize {
        match window {
            Window::Weekly => ((d - first).num_days() / 7) as usize,
            Window::Monthly => {
                ((d.year() - first.year()) as i64 * 12 + d.month0() as i64 - first.month0() as i64) as usize
            }
            Window::Annual => (d.year() - first.year()) as usize,
        }
    };
    // [start, end) of window i
    let bounds = |i: usize| -> (NaiveDate, NaiveDate) {
        match window {
            Window::Weekly => {
                let s = first + Duration::days(7 * i as i64);
                (s, s + Duration::days(7))
            }
            Window::Monthly => {
                let m0 = first.month0() as i64 + i as i64;
                (month_start(first.year(), m0), month_start(first.year(), m0 + 1))
            }
            Window::Annual => {
                let y = first.year() + i as i32;
                (NaiveDate::from_ymd_opt(y, 1, 1).unwrap(), NaiveDate::from_ymd_opt(y + 1, 1, 1).unwrap())
            }
        }
    };

    let n = index_of(last) + 1;
    let mut present: Vec<Vec<f64>> = vec![Vec::new(); n];
    let mut missing = vec![false; n];
    for (d, v) in &dated {
        let i = index_of(*d);
        match v {
            Some(x) => present[i].push(*x),
            None => missing[i] = true,
        }
    }

    Ok((0..n)
        .map(|i| {
            let (start, end) = bounds(i);
            let partial = start < first || end > last + Duration::days(1) || missing[i];
            let vals = &present[i];
            let value = if vals.is_empty() {
                None
            } else {
                let sum: f64 = vals.iter().sum();
                Some(match op {
                    AggOp::Sum => sum,
                    AggOp::Mean => sum / vals.len() as f64,
                })
            };
            WindowValue { index: i, start, value, partial }
        })
        .collect())
}

fn sort_keys(keys: &mut [String]) {
    if keys.iter().all(|k| k.parse::<f64>().is_ok()) {
        keys.sort_by(|a, b| a.parse::<f64>().unwrap().total_cmp(&b.parse::<f64>().unwrap()));
    } else {
        keys.sort();
    }
}

/// Unweighted mean over all cells sharing a time key, sorted by time key
/// (numerically when every key is a number).
pub fn aggregate_spatial<S: AsRef<str>>(rows: &[(S, S, f64)]) -> Result<Vec<(String, f64)>, IngestError> {
    if rows.is_empty() {
        return Err(IngestError::Empty);
    }
    let mut groups: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for (key, _cell, v) in rows {
        groups.entry(key.as_ref().to_string()).or_default().push(*v);
    }
    let mut keys: Vec<String> = groups.keys().cloned().collect();
    sort_keys(&mut keys);
    Ok(keys
        .into_iter()
        .map(|k| {
            let vals = groups.get_mut(&k).unwrap();
            // fixed summation order makes the result independent of row order
            vals.sort_by(f64::total_cmp);
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            (k, mean)
        })
        .collect())
}

/// Spatial aggregation over dataset columns.
pub fn aggregate_spatial_dataset(
    dataset: &Dataset,
    time_column: &str,
    cell_column: &str,
    value_column: &str,
) -> Result<Vec<(String, f64)>, IngestError> {
    let keys = dataset.text_column(time_column)?;
    let cells = dataset.text_column(cell_column)?;
    let values = dataset.numeric_column(value_column)?;
    let rows = keys
        .iter()
        .zip(&cells)
        .zip(&values)
        .map(|((k, c), v)| v.map(|v| (k.as_str(), c.as_str(), v)).ok_or_else(|| IngestError::MissingValue(k.clone())))
        .collect::<Result<Vec<_>, _>>()?;
    aggregate_spatial(&rows)
}
