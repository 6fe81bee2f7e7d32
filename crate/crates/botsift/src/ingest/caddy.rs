//! Caddy structured (JSON) access-log parser.
//!
//! Field paths follow Caddy's default JSON encoder: `ts` (unix seconds),
//! `request.remote_ip` falling back to `request.remote_addr`,
//! `request.method`, `request.uri`, `status`, and the first value of
//! `request.headers."User-Agent"`.

use std::collections::HashMap;
use std::net::IpAddr;

use chrono::{DateTime, Utc};
use serde::Deserialize;

use super::{normalize_referer, split_target, LogRecord, Provenance};

#[derive(Deserialize)]
struct Entry {
    ts: Option<serde_json::Value>,
    status: Option<i64>,
    request: Option<Request>,
}

#[derive(Deserialize)]
struct Request {
    remote_ip: Option<String>,
    // Older Caddy releases log "ip:port" under remote_addr instead.
    remote_addr: Option<String>,
    method: Option<String>,
    uri: Option<String>,
    #[serde(default)]
    headers: HashMap<String, Vec<String>>,
}

pub(super) fn parse(text: &str) -> Result<LogRecord, String> {
    let entry: Entry = serde_json::from_str(text).map_err(|e| format!("bad JSON: {e}"))?;
    let request = entry.request.ok_or("missing request object")?;

    let timestamp = parse_ts(entry.ts.as_ref().ok_or("missing ts")?)?;

    let addr_text = request
        .remote_ip
        .or(request.remote_addr)
        .ok_or("missing request.remote_ip / request.remote_addr")?;
    let client_ip = parse_remote(&addr_text)?;

    let status = entry.status.ok_or("missing status")?;
    let status = u16::try_from(status)
        .ok()
        .filter(|s| (100..=599).contains(s))
        .ok_or("status out of range")?;

    let method = request.method.unwrap_or_else(|| "-".to_string());
    let uri = request.uri.ok_or("missing request.uri")?;
    let (path, query) = if uri.starts_with('/') || uri == "*" {
        split_target(&uri)
    } else {
        // Non-origin-form target: kept verbatim as hostile-traffic signal.
        (uri.clone(), String::new())
    };

    let header = |name: &str| -> Option<String> {
        request
            .headers
            .iter()
            .find(|(k, _)| k.eq_ignore_ascii_case(name))
            .and_then(|(_, v)| v.first())
            .cloned()
    };
    let user_agent = header("User-Agent").filter(|ua| ua != "-").unwrap_or_default();
    let referer = normalize_referer(header("Referer"));

    Ok(LogRecord {
        timestamp,
        client_ip,
        provenance: Provenance::Raw,
        method,
        path,
        query,
        status,
        user_agent,
        referer,
    })
}

fn parse_ts(value: &serde_json::Value) -> Result<DateTime<Utc>, String> {
    match value {
        serde_json::Value::Number(n) => {
            let secs = n.as_f64().ok_or("ts is not a number")?;
            if !secs.is_finite() || secs.abs() > 1e15 {
                return Err(format!("ts {secs} out of range"));
            }
            // Second resolution: fractional part dropped.
            DateTime::<Utc>::from_timestamp(secs.floor() as i64, 0).ok_or("ts out of range".into())
        }
        serde_json::Value::String(s) => DateTime::parse_from_rfc3339(s)
            .map(|t| truncate_to_seconds(t.with_timezone(&Utc)))
            .map_err(|e| format!("bad ts {s:?}: {e}")),
        other => Err(format!("unsupported ts value {other}")),
    }
}

fn truncate_to_seconds(t: DateTime<Utc>) -> DateTime<Utc> {
    DateTime::from_timestamp(t.timestamp(), 0).unwrap_or(t)
}

fn parse_remote(text: &str) -> Result<IpAddr, String> {
    if let Ok(ip) = text.parse() {
        return Ok(ip);
    }
    // "ip:port", including "[v6]:port".
    if let Ok(sock) = text.parse::<std::net::SocketAddr>() {
        return Ok(sock.ip());
    }
    if let Some((host, _port)) = text.rsplit_once(':') {
        if let Ok(ip) = host.parse() {
            return Ok(ip);
        }
    }
    Err(format!("bad remote address {text:?}"))
}
