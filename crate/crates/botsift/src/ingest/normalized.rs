//! The normalized CSV schema shared by every pipeline stage.
//!
//! Schema is bit-exact: header `timestamp,ip,method,path,query,status,
//! user_agent,referer`, RFC-4180 quoting, ISO-8601 UTC timestamps with a
//! `Z` suffix, empty user-agent serialized as an empty field. Only
//! anonymized records may be written.

use std::io::{Read, Write};

use chrono::{DateTime, SecondsFormat, Utc};
use thiserror::Error;

use super::{normalize_referer, LogRecord, ParseError, Provenance};

pub const NORMALIZED_HEADER: [&str; 8] = [
    "timestamp",
    "ip",
    "method",
    "path",
    "query",
    "status",
    "user_agent",
    "referer",
];

#[derive(Debug, Error)]
pub enum WriteError {
    #[error("record {index} is not anonymized; refusing to write raw addresses")]
    RawRecord { index: usize },
    #[error("csv write: {0}")]
    Csv(#[from] csv::Error),
}

/// Write records as normalized CSV. Returns the number of rows written.
pub fn write_normalized<W: Write>(
    records: impl IntoIterator<Item = LogRecord>,
    sink: W,
) -> Result<u64, WriteError> {
    let mut writer = new_writer(sink);
    let mut count = 0u64;
    for (index, record) in records.into_iter().enumerate() {
        if record.provenance != Provenance::Anonymized {
            return Err(WriteError::RawRecord { index });
        }
        write_record(&mut writer, &record)?;
        count += 1;
    }
    writer.flush().map_err(csv::Error::from)?;
    Ok(count)
}

/// A CSV writer with the schema header already emitted, for streaming use.
pub fn new_writer<W: Write>(sink: W) -> csv::Writer<W> {
    let mut writer = csv::WriterBuilder::new().from_writer(sink);
    writer
        .write_record(NORMALIZED_HEADER)
        .expect("writing the schema header");
    writer
}

/// Append one anonymized record to an open normalized-CSV writer.
pub fn write_record<W: Write>(
    writer: &mut csv::Writer<W>,
    record: &LogRecord,
) -> Result<(), WriteError> {
    debug_assert_eq!(record.provenance, Provenance::Anonymized);
    writer.write_record([
        record
            .timestamp
            .to_rfc3339_opts(SecondsFormat::Secs, true)
            .as_str(),
        record.client_ip.to_string().as_str(),
        &record.method,
        &record.path,
        &record.query,
        record.status.to_string().as_str(),
        &record.user_agent,
        record.referer.as_deref().unwrap_or(""),
    ])?;
    Ok(())
}

/// Read a whole normalized CSV back into records. Inverse of
/// [`write_normalized`].
pub fn read_normalized<R: Read>(source: R) -> Result<Vec<LogRecord>, ParseError> {
    let mut out = Vec::new();
    for record in iter_normalized(source)? {
        out.push(record?);
    }
    Ok(out)
}

/// Streaming reader over a normalized CSV; validates the header up front.
pub fn iter_normalized<R: Read>(
    source: R,
) -> Result<impl Iterator<Item = Result<LogRecord, ParseError>>, ParseError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(source);
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| ParseError::SchemaMismatch {
            found: format!("unreadable header: {e}"),
        })?
        .iter()
        .map(str::to_string)
        .collect();
    if header != NORMALIZED_HEADER {
        return Err(ParseError::SchemaMismatch {
            found: header.join(","),
        });
    }
    Ok(reader
        .into_records()
        .enumerate()
        .map(|(i, row)| parse_row(i as u64 + 2, row)))
}

fn parse_row(
    line_number: u64,
    row: Result<csv::StringRecord, csv::Error>,
) -> Result<LogRecord, ParseError> {
    let bad = |reason: String| ParseError::BadRow { line_number, reason };
    let row = row.map_err(|e| bad(e.to_string()))?;
    if row.len() != NORMALIZED_HEADER.len() {
        return Err(bad(format!("expected 8 fields, found {}", row.len())));
    }
    let field = |i: usize| row.get(i).unwrap_or("");

    let timestamp = DateTime::parse_from_rfc3339(field(0))
        .map(|t| t.with_timezone(&Utc))
        .map_err(|e| bad(format!("bad timestamp {:?}: {e}", field(0))))?;
    let client_ip = field(1)
        .parse()
        .map_err(|e| bad(format!("bad ip {:?}: {e}", field(1))))?;
    let status: u16 = field(5)
        .parse()
        .map_err(|_| bad(format!("bad status {:?}", field(5))))?;
    if !(100..=599).contains(&status) {
        return Err(bad(format!("status {status} out of range")));
    }

    Ok(LogRecord {
        timestamp,
        client_ip,
        provenance: Provenance::Anonymized,
        method: field(2).to_string(),
        path: field(3).to_string(),
        query: field(4).to_string(),
        status,
        user_agent: field(6).to_string(),
        referer: normalize_referer(Some(field(7).to_string())),
    })
}
