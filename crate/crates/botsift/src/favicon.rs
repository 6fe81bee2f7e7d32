//! The favicon heuristic: per-(anonymized IP, UTC day) tracking of
//! favicon retrieval and overall activity.
//!
//! Headless crawlers rarely fetch favicons, so a favicon request marks a
//! client as likely-non-bot for that day. A rotating favicon URL
//! (`/favicon.ico?v=DATE`) defeats caching; when a rotation parameter is
//! configured, only requests carrying the current day's value count and
//! stale revalidations are tallied separately. A configurable marker
//! endpoint (an authenticated action such as `POST /course/`) gives an
//! independent estimate of authenticated users.
//!
//! Ledger building is a commutative-monoid aggregation: shards built over
//! disjoint record subsets merge associatively into the same ledger.

use std::collections::BTreeMap;
use std::io::Write;
use std::net::IpAddr;

use chrono::NaiveDate;
use thiserror::Error;

use crate::ingest::{LogRecord, Provenance};

#[derive(Debug, Error)]
pub enum FaviconError {
    #[error("ledger only accepts anonymized records")]
    RawRecord,
    #[error("csv write: {0}")]
    Csv(#[from] csv::Error),
}

/// What counts as a favicon request: a GET or HEAD whose decoded path
/// starts with the prefix and, when a rotation parameter is configured,
/// whose query carries the record's own UTC day as that parameter.
/// Any status below 500 counts — a 404 still proves the client asked.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FaviconMatcher {
    pub path_prefix: String,
    pub rotation_param: Option<String>,
}

impl Default for FaviconMatcher {
    fn default() -> Self {
        Self {
            path_prefix: "/favicon.ico".into(),
            rotation_param: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum FaviconHit {
    Fresh,
    Stale,
    No,
}

impl FaviconMatcher {
    fn check(&self, record: &LogRecord, day: NaiveDate) -> FaviconHit {
        if record.method != "GET" && record.method != "HEAD" {
            return FaviconHit::No;
        }
        if record.status >= 500 || !record.path.starts_with(&self.path_prefix) {
            return FaviconHit::No;
        }
        match &self.rotation_param {
            None => FaviconHit::Fresh,
            Some(param) => {
                let expected = day.format("%Y-%m-%d").to_string();
                let value = record
                    .query
                    .split('&')
                    .filter_map(|kv| kv.split_once('='))
                    .find(|(k, _)| k == param)
                    .map(|(_, v)| v);
                match value {
                    Some(v) if v == expected => FaviconHit::Fresh,
                    // Cache revalidation of an earlier day's URL.
                    _ => FaviconHit::Stale,
                }
            }
        }
    }
}

/// An authenticated action whose success proxies for a logged-in human.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MarkerEndpoint {
    pub path_prefix: String,
    pub method: String,
    pub success_statuses: Vec<u16>,
}

impl MarkerEndpoint {
    fn matches(&self, record: &LogRecord) -> bool {
        record.method == self.method
            && record.path.starts_with(&self.path_prefix)
            && self.success_statuses.contains(&record.status)
    }
}

/// Per-(IP, day) activity.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LedgerEntry {
    pub request_count: u64,
    pub favicon_seen: bool,
    /// Favicon-path requests whose rotation value was not the current
    /// day's (stale cache revalidations). Not proof of rendering.
    pub stale_favicon_requests: u64,
    pub post_to_marker: bool,
}

/// Result of [`FaviconLedger::likely_non_bot`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FaviconSignal {
    LikelyNonBot,
    Unknown,
}

/// Which daily unique-IP series to extract.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeriesSelector {
    TotalIps,
    FaviconIps,
    MarkerPostIps,
}

/// The per-(anonymized IP, UTC day) ledger.
#[derive(Debug, Clone, Default)]
pub struct FaviconLedger {
    matcher: FaviconMatcher,
    marker: Option<MarkerEndpoint>,
    entries: BTreeMap<(NaiveDate, IpAddr), LedgerEntry>,
}

impl FaviconLedger {
    pub fn new(matcher: FaviconMatcher, marker: Option<MarkerEndpoint>) -> Self {
        Self {
            matcher,
            marker,
            entries: BTreeMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = (&(NaiveDate, IpAddr), &LedgerEntry)> {
        self.entries.iter()
    }

    /// Fold one record into the ledger. Day boundaries are UTC calendar
    /// days.
    pub fn ingest(&mut self, record: &LogRecord) -> Result<(), FaviconError> {
        if record.provenance != Provenance::Anonymized {
            return Err(FaviconError::RawRecord);
        }
        let day = record.timestamp.date_naive();
        let entry = self.entries.entry((day, record.client_ip)).or_default();
        entry.request_count += 1;
        match self.matcher.check(record, day) {
            FaviconHit::Fresh => entry.favicon_seen = true,
            FaviconHit::Stale => entry.stale_favicon_requests += 1,
            FaviconHit::No => {}
        }
        if self.marker.as_ref().is_some_and(|m| m.matches(record)) {
            entry.post_to_marker = true;
        }
        Ok(())
    }

    /// Merge another shard built with the same configuration: counts add,
    /// booleans OR.
    pub fn merge(&mut self, other: FaviconLedger) {
        for (key, incoming) in other.entries {
            let entry = self.entries.entry(key).or_default();
            entry.request_count += incoming.request_count;
            entry.stale_favicon_requests += incoming.stale_favicon_requests;
            entry.favicon_seen |= incoming.favicon_seen;
            entry.post_to_marker |= incoming.post_to_marker;
        }
    }

    pub fn likely_non_bot(&self, ip: IpAddr, day: NaiveDate) -> FaviconSignal {
        match self.entries.get(&(day, ip)) {
            Some(entry) if entry.favicon_seen => FaviconSignal::LikelyNonBot,
            _ => FaviconSignal::Unknown,
        }
    }

    /// Daily unique-IP counts for the selected predicate, one point per
    /// day across the ledger's full day range (zero-count days included).
    pub fn daily_series(&self, selector: SeriesSelector) -> Vec<(NaiveDate, u64)> {
        let (Some(first), Some(last)) = (
            self.entries.keys().next().map(|(d, _)| *d),
            self.entries.keys().next_back().map(|(d, _)| *d),
        ) else {
            return Vec::new();
        };
        let mut counts: BTreeMap<NaiveDate, u64> = BTreeMap::new();
        let mut day = first;
        while day <= last {
            counts.insert(day, 0);
            day += chrono::Duration::days(1);
        }
        for ((day, _ip), entry) in &self.entries {
            let selected = match selector {
                SeriesSelector::TotalIps => entry.request_count > 0,
                SeriesSelector::FaviconIps => entry.favicon_seen,
                SeriesSelector::MarkerPostIps => entry.post_to_marker,
            };
            if selected {
                *counts.get_mut(day).expect("day range covers all entries") += 1;
            }
        }
        counts.into_iter().collect()
    }

    /// Export as CSV: `day,ip,requests,favicon_seen,marker_post`.
    pub fn write_csv<W: Write>(&self, sink: W) -> Result<(), FaviconError> {
        let mut writer = csv::Writer::from_writer(sink);
        writer.write_record(["day", "ip", "requests", "favicon_seen", "marker_post"])?;
        for ((day, ip), entry) in &self.entries {
            writer.write_record([
                day.format("%Y-%m-%d").to_string(),
                ip.to_string(),
                entry.request_count.to_string(),
                entry.favicon_seen.to_string(),
                entry.post_to_marker.to_string(),
            ])?;
        }
        writer.flush().map_err(csv::Error::from)?;
        Ok(())
    }
}
