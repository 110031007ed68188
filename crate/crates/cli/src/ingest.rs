//! CSV ingestion: header row of variable names, optional leading date column.

use std::io::{Read, Write};
use std::path::Path;

use hsvar_core::reduced_form::Dataset;
use nalgebra::DMatrix;

use crate::error::{CliError, CliResult, StageExt};

/// Raw table: `values` is `n x rows` (variables in rows).
#[derive(Debug, Clone, PartialEq)]
pub struct CsvTable {
    pub names: Vec<String>,
    pub dates: Option<Vec<String>>,
    pub values: DMatrix<f64>,
}

/// Last period of regime 1, either a 0-based data row or a date label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BreakSpec {
    Row(usize),
    Date(String),
}

impl BreakSpec {
    pub fn parse(s: &str) -> BreakSpec {
        match s.trim().parse::<usize>() {
            Ok(r) => BreakSpec::Row(r),
            Err(_) => BreakSpec::Date(s.trim().to_string()),
        }
    }
}

impl std::fmt::Display for BreakSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BreakSpec::Row(r) => write!(f, "{r}"),
            BreakSpec::Date(d) => f.write_str(d),
        }
    }
}

fn is_date_header(h: &str) -> bool {
    matches!(h.trim().to_ascii_lowercase().as_str(), "date" | "time" | "period" | "month" | "quarter" | "year")
}

fn parse_cell(cell: &str, row: usize, column: usize) -> CliResult<f64> {
    let c = cell.trim();
    if c.is_empty() || c.eq_ignore_ascii_case("na") || c.eq_ignore_ascii_case("nan") {
        return Err(CliError::MissingValue { row, column });
    }
    match c.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(CliError::Parse { row, column, message: format!("not a number: {c:?}") }),
    }
}

/// Reads a table. Rows and columns in errors are 1-based file positions.
pub fn read_table<R: Read>(reader: R) -> CliResult<CsvTable> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(false).from_reader(reader);
    let csv_err = |e: csv::Error| {
        let row = e.position().map(|p| p.line() as usize).unwrap_or(0);
        CliError::Parse { row, column: 0, message: e.to_string() }
    };
    let headers: Vec<String> = rdr.headers().map_err(csv_err)?.iter().map(|h| h.trim().to_string()).collect();
    let records: Vec<csv::StringRecord> = rdr.records().collect::<Result<_, _>>().map_err(csv_err)?;
    if headers.is_empty() || records.is_empty() {
        return Err(CliError::Parse { row: 1, column: 1, message: "empty table".into() });
    }
    let has_date = is_date_header(&headers[0])
        || records[0].get(0).map(|c| c.trim().parse::<f64>().is_err() && !c.trim().is_empty()).unwrap_or(false);
    let first = usize::from(has_date);
    let names = headers[first..].to_vec();
    if names.is_empty() {
        return Err(CliError::Parse { row: 1, column: 1, message: "no numeric columns".into() });
    }
    let n = names.len();
    let mut values = DMatrix::zeros(n, records.len());
    let mut dates = has_date.then(Vec::new);
    for (t, rec) in records.iter().enumerate() {
        let row = t + 2;
        if let Some(d) = dates.as_mut() {
            d.push(rec.get(0).unwrap_or("").trim().to_string());
        }
        for i in 0..n {
            let cell = rec.get(first + i).unwrap_or("");
            values[(i, t)] = parse_cell(cell, row, first + i + 1)?;
        }
    }
    Ok(CsvTable { names, dates, values })
}

pub fn read_table_file(path: &Path) -> CliResult<CsvTable> {
    let f = std::fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    read_table(f)
}

/// Writes a table back out; floats use the shortest exact representation.
pub fn write_table<W: Write>(table: &CsvTable, writer: W) -> CliResult<()> {
    let mut w = csv::Writer::from_writer(writer);
    let io = |e: csv::Error| CliError::Config(format!("csv write: {e}"));
    let mut header: Vec<String> = Vec::new();
    if table.dates.is_some() {
        header.push("date".into());
    }
    header.extend(table.names.iter().cloned());
    w.write_record(&header).map_err(io)?;
    for t in 0..table.values.ncols() {
        let mut rec: Vec<String> = Vec::new();
        if let Some(d) = &table.dates {
            rec.push(d[t].clone());
        }
        rec.extend((0..table.values.nrows()).map(|i| format!("{:?}", table.values[(i, t)])));
        w.write_record(&rec).map_err(io)?;
    }
    w.flush().map_err(|e| CliError::Config(format!("csv write: {e}")))
}

/// Data row (0-based) holding the last period of regime 1.
pub fn resolve_break(table: &CsvTable, spec: &BreakSpec) -> CliResult<usize> {
    match spec {
        BreakSpec::Row(r) => Ok(*r),
        BreakSpec::Date(d) => table
            .dates
            .as_ref()
            .and_then(|ds| ds.iter().position(|x| x == d))
            .ok_or_else(|| CliError::BreakOutOfRange(format!("date {d:?} not found in the date column"))),
    }
}

/// Builds the dataset: the first `lags` rows are presample and the break
/// row is the last period of regime 1.
pub fn to_dataset(table: &CsvTable, lags: usize, brk: &BreakSpec) -> CliResult<Dataset> {
    let row = resolve_break(table, brk)?;
    let rows = table.values.ncols();
    if lags == 0 || lags >= rows {
        return Err(CliError::Config(format!("lag order {lags} incompatible with {rows} rows")));
    }
    // estimation periods in regime 1
    let tb = (row + 1).checked_sub(lags).unwrap_or(0);
    let t = rows - lags;
    if !(tb > 1 && tb < t) {
        return Err(CliError::BreakOutOfRange(format!(
            "{brk} gives {tb} regime-1 periods out of {t}; need 1 < T_B < T"
        )));
    }
    Dataset::from_full(&table.values, lags, tb, table.names.clone()).stage("ingest")
}

pub fn ingest_csv(path: &Path, lags: usize, brk: &BreakSpec) -> CliResult<Dataset> {
    to_dataset(&read_table_file(path)?, lags, brk)
}
