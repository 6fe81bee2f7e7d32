//! Access-log parsing and normalization.
//!
//! Four input formats are supported: Caddy's JSON access log, the Apache
//! and NGINX Combined Log Format (identical grammar, distinct format ids
//! for diagnostics), and the HAProxy HTTP log. Parsed lines become
//! [`LogRecord`]s, which round-trip losslessly through the normalized CSV
//! schema.
//!
//! Parsing is per-line and stateless; hostile input must never panic.
//! Malformed request lines inside an otherwise valid log line are kept as
//! signal: the method becomes `-` and the raw request line is stored in
//! the path field.

mod caddy;
mod combined;
mod haproxy;
mod normalized;

pub use normalized::{read_normalized, write_normalized, NORMALIZED_HEADER};

use std::fmt;
use std::net::IpAddr;

use chrono::{DateTime, Utc};
use thiserror::Error;

/// Which grammar a raw line claims to follow.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SourceFormat {
    CaddyJson,
    ApacheCombined,
    NginxCombined,
    HaproxyHttp,
}

impl SourceFormat {
    pub fn as_str(&self) -> &'static str {
        match self {
            SourceFormat::CaddyJson => "caddy-json",
            SourceFormat::ApacheCombined => "apache-combined",
            SourceFormat::NginxCombined => "nginx-combined",
            SourceFormat::HaproxyHttp => "haproxy-http",
        }
    }
}

impl fmt::Display for SourceFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for SourceFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "caddy-json" => Ok(SourceFormat::CaddyJson),
            "apache-combined" => Ok(SourceFormat::ApacheCombined),
            "nginx-combined" => Ok(SourceFormat::NginxCombined),
            "haproxy-http" => Ok(SourceFormat::HaproxyHttp),
            other => Err(format!("unknown log format {other:?}")),
        }
    }
}

/// One line of raw log input, without its terminator.
#[derive(Debug, Clone, Copy)]
pub struct RawLine<'a> {
    pub source_format: SourceFormat,
    pub line_number: u64,
    pub text: &'a [u8],
}

/// Whether a record's client IP is still the real address or has been
/// anonymized. Nothing leaves the pipeline un-anonymized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Raw,
    Anonymized,
}

/// One normalized HTTP request.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LogRecord {
    /// UTC, second resolution.
    pub timestamp: DateTime<Utc>,
    pub client_ip: IpAddr,
    pub provenance: Provenance,
    pub method: String,
    /// Percent-decoded path. For malformed request lines this holds the
    /// raw request line verbatim (with method `-`).
    pub path: String,
    /// Raw query string, possibly empty.
    pub query: String,
    pub status: u16,
    /// Empty string stands for an absent header (the literal `-`).
    pub user_agent: String,
    pub referer: Option<String>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ParseError {
    #[error("{format} line {line_number}: {reason}")]
    MalformedLine {
        format: SourceFormat,
        line_number: u64,
        reason: String,
    },
    #[error("haproxy line {line_number}: capture slot {slot} holds no User-Agent")]
    MissingUaCapture { line_number: u64, slot: usize },
    #[error("normalized CSV schema mismatch: found header {found:?}")]
    SchemaMismatch { found: String },
    #[error("normalized CSV row {line_number}: {reason}")]
    BadRow { line_number: u64, reason: String },
}

impl ParseError {
    pub fn line_number(&self) -> Option<u64> {
        match self {
            ParseError::MalformedLine { line_number, .. }
            | ParseError::MissingUaCapture { line_number, .. }
            | ParseError::BadRow { line_number, .. } => Some(*line_number),
            ParseError::SchemaMismatch { .. } => None,
        }
    }
}

/// A configured per-format line parser. Stateless and pure: the same
/// `RawLine` always produces the same result, so lines can be parsed from
/// any number of threads.
#[derive(Debug, Clone)]
pub enum LineParser {
    CaddyJson,
    ApacheCombined,
    NginxCombined,
    /// HAProxy does not log the User-Agent by default; the operator must
    /// say which captured-header slot carries it.
    HaproxyHttp {
        ua_slot: usize,
        referer_slot: Option<usize>,
    },
}

impl LineParser {
    /// Build the parser for a format. For HAProxy the user-agent capture
    /// slot is mandatory configuration, checked here rather than per line.
    pub fn for_format(
        format: SourceFormat,
        haproxy_ua_slot: Option<usize>,
        haproxy_referer_slot: Option<usize>,
    ) -> Result<Self, String> {
        match format {
            SourceFormat::CaddyJson => Ok(LineParser::CaddyJson),
            SourceFormat::ApacheCombined => Ok(LineParser::ApacheCombined),
            SourceFormat::NginxCombined => Ok(LineParser::NginxCombined),
            SourceFormat::HaproxyHttp => match haproxy_ua_slot {
                Some(ua_slot) => Ok(LineParser::HaproxyHttp {
                    ua_slot,
                    referer_slot: haproxy_referer_slot,
                }),
                None => Err(
                    "haproxy-http input needs the User-Agent capture slot (--haproxy-ua-slot)"
                        .into(),
                ),
            },
        }
    }

    pub fn format(&self) -> SourceFormat {
        match self {
            LineParser::CaddyJson => SourceFormat::CaddyJson,
            LineParser::ApacheCombined => SourceFormat::ApacheCombined,
            LineParser::NginxCombined => SourceFormat::NginxCombined,
            LineParser::HaproxyHttp { .. } => SourceFormat::HaproxyHttp,
        }
    }

    /// Parse one raw line into a [`LogRecord`] with `Raw` provenance.
    pub fn parse(&self, raw: &RawLine<'_>) -> Result<LogRecord, ParseError> {
        let malformed = |reason: String| ParseError::MalformedLine {
            format: self.format(),
            line_number: raw.line_number,
            reason,
        };
        let text = std::str::from_utf8(raw.text)
            .map_err(|e| malformed(format!("not valid UTF-8: {e}")))?;
        if text.trim().is_empty() {
            return Err(malformed("empty line".into()));
        }
        match self {
            LineParser::CaddyJson => caddy::parse(text).map_err(malformed),
            LineParser::ApacheCombined | LineParser::NginxCombined => {
                combined::parse(text).map_err(malformed)
            }
            LineParser::HaproxyHttp {
                ua_slot,
                referer_slot,
            } => haproxy::parse(text, *ua_slot, *referer_slot).map_err(|e| match e {
                haproxy::HaproxyError::Malformed(reason) => malformed(reason),
                haproxy::HaproxyError::MissingUaCapture(slot) => ParseError::MissingUaCapture {
                    line_number: raw.line_number,
                    slot,
                },
            }),
        }
    }
}

/// Split a request target into (decoded path, raw query).
pub(crate) fn split_target(target: &str) -> (String, String) {
    match target.split_once('?') {
        Some((path, query)) => (percent_decode(path), query.to_string()),
        None => (percent_decode(target), String::new()),
    }
}

/// Percent-decode, leaving invalid escape sequences untouched. Decoded
/// bytes that do not form valid UTF-8 become replacement characters.
pub(crate) fn percent_decode(s: &str) -> String {
    if !s.contains('%') {
        return s.to_string();
    }
    let bytes = s.as_bytes();
    let mut out = Vec::with_capacity(bytes.len());
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'%' && i + 3 <= bytes.len() {
            let hex = &bytes[i + 1..i + 3];
            if let Ok(h) = std::str::from_utf8(hex) {
                if let Ok(v) = u8::from_str_radix(h, 16) {
                    out.push(v);
                    i += 3;
                    continue;
                }
            }
            out.push(bytes[i]);
            i += 1;
        } else {
            out.push(bytes[i]);
            i += 1;
        }
    }
    String::from_utf8_lossy(&out).into_owned()
}

/// Interpret an HTTP request line. Lines that are not three
/// space-separated tokens, or whose target is neither origin-form nor
/// `*`, are hostile-traffic signal: method `-`, raw line kept as path.
pub(crate) fn interpret_request_line(request_line: &str) -> (String, String, String) {
    let mut parts = request_line.split(' ');
    if let (Some(method), Some(target), Some(_proto), None) =
        (parts.next(), parts.next(), parts.next(), parts.next())
    {
        if !method.is_empty() && (target.starts_with('/') || target == "*") {
            let (path, query) = split_target(target);
            return (method.to_string(), path, query);
        }
    }
    ("-".to_string(), request_line.to_string(), String::new())
}

pub(crate) fn normalize_referer(referer: Option<String>) -> Option<String> {
    match referer {
        Some(r) if r.is_empty() || r == "-" => None,
        other => other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    fn raw(format: SourceFormat, text: &str) -> RawLine<'_> {
        RawLine {
            source_format: format,
            line_number: 1,
            text: text.as_bytes(),
        }
    }

    #[test]
    fn apache_combined_example() {
        let parser = LineParser::ApacheCombined;
        let line = r#"127.0.0.1 - - [10/Oct/2024:13:55:36 +0200] "GET /index.html HTTP/1.1" 200 2326 "-" "curl/8.5.0""#;
        let record = parser.parse(&raw(SourceFormat::ApacheCombined, line)).unwrap();
        assert_eq!(
            record.timestamp,
            Utc.with_ymd_and_hms(2024, 10, 10, 11, 55, 36).unwrap()
        );
        assert_eq!(record.client_ip, "127.0.0.1".parse::<IpAddr>().unwrap());
        assert_eq!(record.provenance, Provenance::Raw);
        assert_eq!(record.method, "GET");
        assert_eq!(record.path, "/index.html");
        assert_eq!(record.query, "");
        assert_eq!(record.status, 200);
        assert_eq!(record.user_agent, "curl/8.5.0");
        assert_eq!(record.referer, None);
    }

    #[test]
    fn empty_line_is_malformed() {
        for parser in [
            LineParser::CaddyJson,
            LineParser::ApacheCombined,
            LineParser::HaproxyHttp {
                ua_slot: 0,
                referer_slot: None,
            },
        ] {
            let err = parser.parse(&raw(parser.format(), "")).unwrap_err();
            assert!(matches!(err, ParseError::MalformedLine { .. }), "{err}");
        }
    }

    #[test]
    fn caddy_missing_user_agent_header() {
        let parser = LineParser::CaddyJson;
        let line = r#"{"ts":1727784000.25,"request":{"remote_ip":"192.0.2.9","method":"GET","uri":"/a?b=1","headers":{}},"status":404}"#;
        let record = parser.parse(&raw(SourceFormat::CaddyJson, line)).unwrap();
        assert_eq!(record.user_agent, "");
        assert_eq!(record.path, "/a");
        assert_eq!(record.query, "b=1");
        assert_eq!(record.status, 404);
    }

    #[test]
    fn malformed_request_line_is_kept_as_signal() {
        let parser = LineParser::NginxCombined;
        let line = r#"203.0.113.7 - - [01/Jan/2025:00:00:00 +0000] "\x16\x03\x01" 400 0 "-" "-""#;
        let record = parser.parse(&raw(SourceFormat::NginxCombined, line)).unwrap();
        assert_eq!(record.method, "-");
        assert_eq!(record.path, "\u{16}\u{3}\u{1}");
        assert_eq!(record.user_agent, "");
    }

    #[test]
    fn asterisk_target_is_accepted() {
        let (method, path, query) = interpret_request_line("OPTIONS * HTTP/1.0");
        assert_eq!((method.as_str(), path.as_str(), query.as_str()), ("OPTIONS", "*", ""));
    }

    #[test]
    fn non_origin_target_falls_back() {
        let (method, path, _) = interpret_request_line("GET http://evil.example/ HTTP/1.1");
        assert_eq!(method, "-");
        assert_eq!(path, "GET http://evil.example/ HTTP/1.1");
    }

    #[test]
    fn percent_decoding() {
        assert_eq!(percent_decode("/a%20b"), "/a b");
        assert_eq!(percent_decode("/a%2fb"), "/a/b");
        assert_eq!(percent_decode("/a%zzb"), "/a%zzb");
        assert_eq!(percent_decode("/plain"), "/plain");
        assert_eq!(percent_decode("%"), "%");
    }

    #[test]
    fn haproxy_requires_ua_slot_at_startup() {
        let err = LineParser::for_format(SourceFormat::HaproxyHttp, None, None).unwrap_err();
        assert!(err.contains("haproxy"));
        assert!(LineParser::for_format(SourceFormat::HaproxyHttp, Some(0), None).is_ok());
    }
}
