//! Passive bot detection for web server logs.
//!
//! The pipeline: raw access logs are anonymized (prefix-preserving IP
//! anonymization) and normalized into a common CSV schema, then analyzed
//! two ways — a user-agent rule cascade that flags bots, and a favicon
//! ledger that marks likely-human clients. An evaluation harness computes
//! the descriptive tables, histograms, overlap counts and confusion
//! matrices used to judge detection quality against labelled traffic.

pub mod anon;
pub mod detect;
pub mod evaluate;
pub mod favicon;
pub mod ingest;
pub mod refdata;
pub mod report;
pub mod stats;
pub mod useragent;

pub use anon::{AnonKey, Anonymizer};
pub use detect::{classify, DetectionConfig, Reason, Verdict};
pub use favicon::{FaviconLedger, FaviconMatcher, MarkerEndpoint};
pub use ingest::{LineParser, LogRecord, ParseError, Provenance, RawLine, SourceFormat};
pub use useragent::{parse_user_agent, BrowserFamily, OsFamily, ParsedUserAgent};
