//! Streaming parsers turning raw check-in files into [`CheckinRecord`]s.
//!
//! One code path, many schemas: the canonical layout is the five-column
//! tab-separated form `user TAB iso8601-time TAB lat TAB lon TAB venue`
//! shipped by the Brightkite and Gowalla dumps; every other layout is
//! described by a [`ColumnSchema`]. Tab-separated sources are split
//! verbatim (those dumps never quote fields); any other delimiter goes
//! through a quoting-aware CSV reader.
//!
//! Malformed lines are counted and sampled, not fatal: real dumps contain
//! a handful of corrupt rows. Records missing coordinates are accepted
//! with `lat`/`lon` unset; records missing user, time or venue are
//! rejected. If the rejected fraction ends up above the threshold
//! (default 1%), iteration ends with an error quoting the first rejects,
//! so unbounded silent dropping cannot skew downstream counts.

use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use chrono::{DateTime, NaiveDateTime, TimeZone, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CheckinRecord, Key};

/// Reject at most this fraction of lines before the stream errors out.
pub const DEFAULT_REJECT_THRESHOLD: f64 = 0.01;

/// How many rejected lines are quoted in the threshold error.
const REJECT_SAMPLE: usize = 10;

/// How a raw column holds the check-in timestamp.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TimeFormat {
    /// RFC 3339 / ISO-8601 with offset, e.g. `2010-10-19T23:55:27Z`.
    Iso8601,
    /// Unix seconds.
    EpochSeconds,
    /// A chrono strftime pattern for a naive timestamp, read as UTC.
    Pattern(String),
}

impl TimeFormat {
    fn parse(&self, field: &str) -> Option<DateTime<Utc>> {
        match self {
            TimeFormat::Iso8601 => {
                DateTime::parse_from_rfc3339(field).ok().map(|t| t.with_timezone(&Utc))
            }
            TimeFormat::EpochSeconds => {
                let secs: i64 = field.parse().ok()?;
                Utc.timestamp_opt(secs, 0).single()
            }
            TimeFormat::Pattern(pattern) => NaiveDateTime::parse_from_str(field, pattern)
                .ok()
                .map(|t| Utc.from_utc_datetime(&t)),
        }
    }
}

/// Column mapping for one raw layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSchema {
    pub delimiter: char,
    pub has_header: bool,
    pub user: usize,
    pub time: usize,
    pub venue: usize,
    #[serde(default)]
    pub lat: Option<usize>,
    #[serde(default)]
    pub lon: Option<usize>,
    pub time_format: TimeFormat,
}

impl ColumnSchema {
    /// The five-column tab-separated layout of the Brightkite and Gowalla
    /// dumps: `user TAB time TAB lat TAB lon TAB venue`.
    pub fn canonical() -> ColumnSchema {
        ColumnSchema {
            delimiter: '\t',
            has_header: false,
            user: 0,
            time: 1,
            venue: 4,
            lat: Some(2),
            lon: Some(3),
            time_format: TimeFormat::Iso8601,
        }
    }

    /// Weeplaces CSV: `userid,placeid,datetime,lat,lon,city,category` with
    /// a header row and naive `%Y-%m-%d %H:%M:%S` timestamps.
    pub fn weeplaces() -> ColumnSchema {
        ColumnSchema {
            delimiter: ',',
            has_header: true,
            user: 0,
            time: 2,
            venue: 1,
            lat: Some(3),
            lon: Some(4),
            time_format: TimeFormat::Pattern("%Y-%m-%d %H:%M:%S".into()),
        }
    }

    /// Built-in layout by dataset name. Foursquare dumps circulate in
    /// several column orders, so that one deliberately has no preset and
    /// must be described by an explicit schema file.
    pub fn by_name(name: &str) -> Option<ColumnSchema> {
        match name.to_ascii_lowercase().as_str() {
            "canonical" | "brightkite" | "gowalla" => Some(ColumnSchema::canonical()),
            "weeplaces" => Some(ColumnSchema::weeplaces()),
            _ => None,
        }
    }

    pub const KNOWN_FORMATS: [&'static str; 4] =
        ["canonical", "brightkite", "gowalla", "weeplaces"];

    pub fn validate(&self) -> Result<()> {
        let mut indices = vec![("user", self.user), ("time", self.time), ("venue", self.venue)];
        if let Some(lat) = self.lat {
            indices.push(("lat", lat));
        }
        if let Some(lon) = self.lon {
            indices.push(("lon", lon));
        }
        for (i, a) in indices.iter().enumerate() {
            for b in &indices[i + 1..] {
                if a.1 == b.1 {
                    return Err(Error::Schema(format!(
                        "{} and {} both map to column {}",
                        a.0, b.0, a.1
                    )));
                }
            }
        }
        if !self.delimiter.is_ascii() {
            return Err(Error::Schema(format!(
                "delimiter {:?} is not an ASCII character",
                self.delimiter
            )));
        }
        Ok(())
    }
}

/// Summary statistics over one parsed stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub checkin_count: u64,
    pub unique_users: u64,
    pub unique_venues: u64,
    pub date_min: Option<DateTime<Utc>>,
    pub date_max: Option<DateTime<Utc>>,
    pub rejected_lines: u64,
}

enum Rows {
    /// Hand-split lines; tab-separated dumps carry no quoting.
    Lines { reader: Box<dyn BufRead + Send>, delimiter: char, lineno: u64 },
    Csv(csv::StringRecordsIntoIter<Box<dyn Read + Send>>),
}

impl Rows {
    /// Next raw row as (line number, fields); `Ok(None)` at end of input.
    fn next_row(&mut self) -> Result<Option<(u64, Vec<String>)>> {
        match self {
            Rows::Lines { reader, delimiter, lineno } => {
                let mut line = String::new();
                if reader.read_line(&mut line)? == 0 {
                    return Ok(None);
                }
                *lineno += 1;
                let trimmed = line.trim_end_matches(['\n', '\r']);
                Ok(Some((*lineno, trimmed.split(*delimiter).map(str::to_owned).collect())))
            }
            Rows::Csv(records) => match records.next() {
                None => Ok(None),
                Some(Err(e)) => match e.kind() {
                    csv::ErrorKind::Io(_) => Err(Error::InvalidInput(format!("csv read: {e}"))),
                    // Structurally broken row (bad quoting, ...): surface it
                    // as an unparseable row so it counts as a reject.
                    _ => {
                        let line = e.position().map_or(0, csv::Position::line);
                        Ok(Some((line, Vec::new())))
                    }
                },
                Some(Ok(record)) => {
                    let line = record.position().map_or(0, csv::Position::line);
                    Ok(Some((line, record.iter().map(str::to_owned).collect())))
                }
            },
        }
    }
}

/// Iterator over parsed records; counts rejects as it goes.
///
/// Yields `Err` once and stops on an unreadable source or, at end of
/// input, when the rejected fraction exceeded the threshold.
pub struct RecordReader {
    rows: Rows,
    schema: ColumnSchema,
    threshold: f64,
    skip_header: bool,
    accepted: u64,
    rejected: u64,
    samples: Vec<String>,
    done: bool,
}

impl RecordReader {
    pub fn rejected_lines(&self) -> u64 {
        self.rejected
    }

    pub fn accepted_lines(&self) -> u64 {
        self.accepted
    }

    fn parse_row(&self, fields: &[String]) -> std::result::Result<CheckinRecord, &'static str> {
        let required = |idx: usize, what: &'static str| -> std::result::Result<&str, &'static str> {
            match fields.get(idx).map(String::as_str) {
                None | Some("") => Err(what),
                Some(s) => Ok(s),
            }
        };
        let user = required(self.schema.user, "missing user")?;
        let venue = required(self.schema.venue, "missing venue")?;
        let time = required(self.schema.time, "missing time")?;
        let time = self.schema.time_format.parse(time).ok_or("unparseable time")?;
        let coord = |idx: Option<usize>| {
            idx.and_then(|i| fields.get(i)).and_then(|s| s.parse::<f64>().ok())
        };
        Ok(CheckinRecord {
            user: Key::parse(user),
            time,
            venue: Key::parse(venue),
            lat: coord(self.schema.lat),
            lon: coord(self.schema.lon),
        })
    }

    /// End-of-stream bookkeeping: error if too much was rejected.
    fn finish(&mut self) -> Result<()> {
        let total = self.accepted + self.rejected;
        if self.rejected as f64 > self.threshold * total as f64 {
            return Err(Error::RejectRatio {
                rejected: self.rejected,
                total,
                ratio: 100.0 * self.rejected as f64 / total as f64,
                threshold: 100.0 * self.threshold,
                sample: self.samples.join("\n"),
            });
        }
        Ok(())
    }
}

impl Iterator for RecordReader {
    type Item = Result<CheckinRecord>;

    fn next(&mut self) -> Option<Result<CheckinRecord>> {
        if self.done {
            return None;
        }
        loop {
            let row = match self.rows.next_row() {
                Err(e) => {
                    self.done = true;
                    return Some(Err(e));
                }
                Ok(None) => {
                    self.done = true;
                    return match self.finish() {
                        Ok(()) => None,
                        Err(e) => Some(Err(e)),
                    };
                }
                Ok(Some(row)) => row,
            };
            if std::mem::take(&mut self.skip_header) {
                continue;
            }
            match self.parse_row(&row.1) {
                Ok(record) => {
                    self.accepted += 1;
                    return Some(Ok(record));
                }
                Err(reason) => {
                    self.rejected += 1;
                    if self.samples.len() < REJECT_SAMPLE {
                        let sep = self.schema.delimiter.to_string();
                        let mut shown = row.1.join(&sep);
                        let mut cut = shown.len().min(120);
                        while !shown.is_char_boundary(cut) {
                            cut -= 1;
                        }
                        shown.truncate(cut);
                        self.samples.push(format!("line {}: {reason}: {shown:?}", row.0));
                    }
                }
            }
        }
    }
}

/// Parses the canonical five-column tab-separated layout.
pub fn parse_canonical<R: BufRead + Send + 'static>(source: R, threshold: f64) -> RecordReader {
    parse_with_schema(source, ColumnSchema::canonical(), threshold)
        .expect("canonical schema is valid")
}

/// Parses any layout described by a validated [`ColumnSchema`].
pub fn parse_with_schema<R: BufRead + Send + 'static>(
    source: R,
    schema: ColumnSchema,
    threshold: f64,
) -> Result<RecordReader> {
    schema.validate()?;
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::Config(format!(
            "reject threshold {threshold} outside [0, 1]"
        )));
    }
    let rows = if schema.delimiter == '\t' {
        Rows::Lines { reader: Box::new(source), delimiter: schema.delimiter, lineno: 0 }
    } else {
        Rows::Csv(
            csv::ReaderBuilder::new()
                .delimiter(schema.delimiter as u8)
                .has_headers(false)
                .flexible(true)
                .from_reader(Box::new(source) as Box<dyn Read + Send>)
                .into_records(),
        )
    };
    Ok(RecordReader {
        rows,
        skip_header: schema.has_header,
        schema,
        threshold,
        accepted: 0,
        rejected: 0,
        samples: Vec::new(),
        done: false,
    })
}

/// Opens a file (gzip-decompressed when the name ends in `.gz`) with the
/// given schema.
pub fn open_records(
    path: &Path,
    schema: ColumnSchema,
    threshold: f64,
) -> Result<RecordReader> {
    let file = File::open(path)
        .map_err(|e| std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))?;
    let source: Box<dyn BufRead + Send> = if path.extension().is_some_and(|e| e == "gz") {
        Box::new(BufReader::new(flate2::read::MultiGzDecoder::new(file)))
    } else {
        Box::new(BufReader::new(file))
    };
    parse_with_schema(source, schema, threshold)
}

/// Exact counts and date range over a record stream, single pass.
pub fn summarize(
    records: impl IntoIterator<Item = Result<CheckinRecord>>,
) -> Result<DatasetSummary> {
    use std::collections::HashSet;
    let mut users: HashSet<Key> = HashSet::new();
    let mut venues: HashSet<Key> = HashSet::new();
    let mut summary = DatasetSummary {
        checkin_count: 0,
        unique_users: 0,
        unique_venues: 0,
        date_min: None,
        date_max: None,
        rejected_lines: 0,
    };
    for record in records {
        let record = record?;
        summary.checkin_count += 1;
        summary.date_min = Some(summary.date_min.map_or(record.time, |m| m.min(record.time)));
        summary.date_max = Some(summary.date_max.map_or(record.time, |m| m.max(record.time)));
        users.insert(record.user);
        venues.insert(record.venue);
    }
    summary.unique_users = users.len() as u64;
    summary.unique_venues = venues.len() as u64;
    Ok(summary)
}

/// Summarizes a file in one pass, including the rejected-line count.
pub fn summarize_file(
    path: &Path,
    schema: ColumnSchema,
    threshold: f64,
) -> Result<DatasetSummary> {
    let mut reader = open_records(path, schema, threshold)?;
    let mut summary = summarize(&mut reader)?;
    summary.rejected_lines = reader.rejected_lines();
    Ok(summary)
}

/// Reads a whole file into memory; returns the records and the reject count.
pub fn read_all(
    path: &Path,
    schema: ColumnSchema,
    threshold: f64,
) -> Result<(Vec<CheckinRecord>, u64)> {
    let mut reader = open_records(path, schema, threshold)?;
    let mut records = Vec::new();
    for record in &mut reader {
        records.push(record?);
    }
    Ok((records, reader.rejected_lines()))
}
