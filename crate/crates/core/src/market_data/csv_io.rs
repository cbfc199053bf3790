use std::collections::BTreeMap;
use std::collections::HashMap;
use std::path::Path;

use chrono::NaiveDate;

use super::{PriceRow, StockSeries};
use crate::error::{Error, Result};

/// Maps logical fields to CSV header names. The `symbol` column is optional;
/// without one, every row in a file belongs to the symbol named after the
/// file stem.
#[derive(Clone, Debug)]
pub struct CsvSchema {
    pub date: String,
    pub open: String,
    pub high: String,
    pub low: String,
    pub close: String,
    pub adj_close: String,
    pub volume: String,
    pub symbol: Option<String>,
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self {
            date: "date".into(),
            open: "open".into(),
            high: "high".into(),
            low: "low".into(),
            close: "close".into(),
            adj_close: "adj_close".into(),
            volume: "volume".into(),
            symbol: None,
        }
    }
}

/// Counters from one ingestion pass.
#[derive(Clone, Debug, Default)]
pub struct IngestReport {
    pub rows_read: usize,
    pub rows_dropped: usize,
    pub series_count: usize,
    /// Symbols whose rows were all dropped.
    pub symbols_skipped: Vec<String>,
}

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn csv_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Csv {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

fn column_index(path: &Path, headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| Error::MissingColumn {
            path: path.to_path_buf(),
            column: name.to_string(),
        })
}

fn parse_price(field: &str) -> Option<f64> {
    let v: f64 = field.trim().parse().ok()?;
    (v.is_finite() && v > 0.0).then_some(v)
}

fn parse_volume(field: &str) -> Option<f64> {
    let v: f64 = field.trim().parse().ok()?;
    (v.is_finite() && v >= 0.0).then_some(v)
}

/// Load one CSV file into per-symbol series. Rows with a missing or
/// non-positive price (or negative volume) are dropped and counted; rows out
/// of order are sorted; duplicate dates within a symbol are an error.
pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<Vec<StockSeries>> {
    load_csv_with_report(path, schema).map(|(series, _)| series)
}

pub fn load_csv_with_report(
    path: impl AsRef<Path>,
    schema: &CsvSchema,
) -> Result<(Vec<StockSeries>, IngestReport)> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_err(path, e.to_string()))?;
    let headers = reader
        .headers()
        .map_err(|e| csv_err(path, e.to_string()))?
        .clone();

    let date_idx = column_index(path, &headers, &schema.date)?;
    let open_idx = column_index(path, &headers, &schema.open)?;
    let high_idx = column_index(path, &headers, &schema.high)?;
    let low_idx = column_index(path, &headers, &schema.low)?;
    let close_idx = column_index(path, &headers, &schema.close)?;
    let adj_idx = column_index(path, &headers, &schema.adj_close)?;
    let vol_idx = column_index(path, &headers, &schema.volume)?;
    // An explicit mapping must resolve; otherwise auto-detect a `symbol`
    // column and fall back to the file stem.
    let symbol_idx = match &schema.symbol {
        Some(name) => Some(column_index(path, &headers, name)?),
        None => headers.iter().position(|h| h.trim() == "symbol"),
    };
    let default_symbol = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "UNKNOWN".to_string());

    let mut report = IngestReport::default();
    let mut by_symbol: BTreeMap<String, Vec<PriceRow>> = BTreeMap::new();

    for record in reader.records() {
        let record = record.map_err(|e| csv_err(path, e.to_string()))?;
        report.rows_read += 1;
        let date_field = record.get(date_idx).unwrap_or("");
        let date: NaiveDate = date_field
            .parse()
            .map_err(|_| csv_err(path, format!("unparsable date `{date_field}`")))?;
        let symbol = symbol_idx
            .and_then(|i| record.get(i))
            .filter(|s| !s.is_empty())
            .map(|s| s.to_string())
            .unwrap_or_else(|| default_symbol.clone());

        let parsed = (|| {
            Some(PriceRow {
                date,
                open: parse_price(record.get(open_idx)?)?,
                high: parse_price(record.get(high_idx)?)?,
                low: parse_price(record.get(low_idx)?)?,
                close: parse_price(record.get(close_idx)?)?,
                adj_close: parse_price(record.get(adj_idx)?)?,
                volume: parse_volume(record.get(vol_idx)?)?,
            })
        })();
        match parsed {
            Some(row) => by_symbol.entry(symbol).or_default().push(row),
            None => {
                report.rows_dropped += 1;
                by_symbol.entry(symbol).or_default();
            }
        }
    }

    let mut series = Vec::new();
    for (symbol, mut rows) in by_symbol {
        if rows.is_empty() {
            report.symbols_skipped.push(symbol);
            continue;
        }
        rows.sort_by_key(|r| r.date);
        for pair in rows.windows(2) {
            if pair[0].date == pair[1].date {
                return Err(Error::DuplicateDate {
                    symbol,
                    date: pair[0].date,
                });
            }
        }
        let listing_date = rows[0].date;
        series.push(StockSeries::new(symbol, listing_date, rows)?);
    }
    report.series_count = series.len();
    Ok((series, report))
}

/// Load the optional `symbol,listing_date` sidecar.
pub fn load_listing_dates(path: impl AsRef<Path>) -> Result<HashMap<String, NaiveDate>> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_err(path, e.to_string()))?;
    let headers = reader
        .headers()
        .map_err(|e| csv_err(path, e.to_string()))?
        .clone();
    let sym_idx = column_index(path, &headers, "symbol")?;
    let date_idx = column_index(path, &headers, "listing_date")?;

    let mut out = HashMap::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_err(path, e.to_string()))?;
        let symbol = record.get(sym_idx).unwrap_or("").to_string();
        let field = record.get(date_idx).unwrap_or("");
        let date: NaiveDate = field
            .parse()
            .map_err(|_| csv_err(path, format!("unparsable listing date `{field}`")))?;
        out.insert(symbol, date);
    }
    Ok(out)
}

/// Write series to a single CSV with a symbol column, in the same layout
/// `load_csv` reads back.
pub fn write_csv(path: impl AsRef<Path>, series: &[StockSeries]) -> Result<()> {
    let path = path.as_ref();
    let mut writer = csv::Writer::from_path(path).map_err(|e| csv_err(path, e.to_string()))?;
    writer
        .write_record([
            "symbol",
            "date",
            "open",
            "high",
            "low",
            "close",
            "adj_close",
            "volume",
        ])
        .map_err(|e| csv_err(path, e.to_string()))?;
    for s in series {
        for row in &s.rows {
            writer
                .write_record([
                    s.symbol.as_str(),
                    &row.date.to_string(),
                    &row.open.to_string(),
                    &row.high.to_string(),
                    &row.low.to_string(),
                    &row.close.to_string(),
                    &row.adj_close.to_string(),
                    &row.volume.to_string(),
                ])
                .map_err(|e| csv_err(path, e.to_string()))?;
        }
    }
    writer.flush().map_err(|e| io_err(path, e))?;
    Ok(())
}

/// Write the `symbol,listing_date` sidecar for a set of series.
pub fn write_listing_sidecar(path: impl AsRef<Path>, series: &[StockSeries]) -> Result<()> {
    let path = path.as_ref();
    let mut writer = csv::Writer::from_path(path).map_err(|e| csv_err(path, e.to_string()))?;
    writer
        .write_record(["symbol", "listing_date"])
        .map_err(|e| csv_err(path, e.to_string()))?;
    for s in series {
        writer
            .write_record([s.symbol.as_str(), &s.listing_date.to_string()])
            .map_err(|e| csv_err(path, e.to_string()))?;
    }
    writer.flush().map_err(|e| io_err(path, e))?;
    Ok(())
}

/// Apply sidecar listing dates where present.
pub fn apply_listing_dates(series: &mut [StockSeries], dates: &HashMap<String, NaiveDate>) {
    for s in series.iter_mut() {
        if let Some(date) = dates.get(&s.symbol) {
            s.listing_date = *date;
        }
    }
}
