//! HAProxy HTTP log parser.
//!
//! Grammar (after the optional syslog prefix):
//! `client_ip:port [accept_date] frontend backend/server Tq/Tw/Tc/Tr/Tt
//!  status bytes capt_req_cookie capt_resp_cookie term_state
//!  actconn/feconn/beconn/srv_conn/retries srv_queue/backend_queue
//!  {captured request headers} {captured response headers} "request"`
//!
//! HAProxy logs no timezone offset; accept dates are taken as UTC. The
//! operator declares which captured-header slot carries the User-Agent,
//! since HAProxy does not log it by default.

use std::net::IpAddr;

use chrono::{DateTime, NaiveDateTime, Utc};

use super::{interpret_request_line, normalize_referer, LogRecord, Provenance};

pub(super) enum HaproxyError {
    Malformed(String),
    MissingUaCapture(usize),
}

pub(super) fn parse(
    line: &str,
    ua_slot: usize,
    referer_slot: Option<usize>,
) -> Result<LogRecord, HaproxyError> {
    let malformed = |reason: String| HaproxyError::Malformed(reason);

    // Drop the syslog prefix ("... haproxy[pid]: ") when present.
    let mut rest = match line.find("]: ") {
        Some(idx) => &line[idx + 3..],
        None => line,
    };
    rest = rest.trim_start();

    let addr_tok = take_token(&mut rest).ok_or_else(|| malformed("missing client address".into()))?;
    let client_ip = parse_client_addr(addr_tok).map_err(malformed)?;

    let date_text =
        take_bracketed(&mut rest).ok_or_else(|| malformed("missing [accept date]".into()))?;
    let timestamp = parse_accept_date(&date_text).map_err(malformed)?;

    let _frontend = take_token(&mut rest).ok_or_else(|| malformed("missing frontend".into()))?;
    let backend = take_token(&mut rest).ok_or_else(|| malformed("missing backend/server".into()))?;
    if !backend.contains('/') {
        return Err(malformed(format!("bad backend/server token {backend:?}")));
    }
    let timers = take_token(&mut rest).ok_or_else(|| malformed("missing timers".into()))?;
    if timers.split('/').count() != 5 {
        return Err(malformed(format!("bad timer field {timers:?}")));
    }

    let status_tok = take_token(&mut rest).ok_or_else(|| malformed("missing status".into()))?;
    let status: i32 = status_tok
        .parse()
        .map_err(|_| malformed(format!("bad status {status_tok:?}")))?;
    // Aborted transfers log -1; out of range for a normalized record.
    let status =
        u16::try_from(status)
            .ok()
            .filter(|s| (100..=599).contains(s))
            .ok_or_else(|| malformed(format!("status {status} out of range")))?;

    let _bytes = take_token(&mut rest).ok_or_else(|| malformed("missing bytes".into()))?;
    let _req_cookie = take_token(&mut rest).ok_or_else(|| malformed("missing request cookie".into()))?;
    let _resp_cookie =
        take_token(&mut rest).ok_or_else(|| malformed("missing response cookie".into()))?;
    let _term_state = take_token(&mut rest).ok_or_else(|| malformed("missing termination state".into()))?;
    let conns = take_token(&mut rest).ok_or_else(|| malformed("missing connection counts".into()))?;
    if conns.split('/').count() != 5 {
        return Err(malformed(format!("bad connection counts {conns:?}")));
    }
    let queues = take_token(&mut rest).ok_or_else(|| malformed("missing queue counts".into()))?;
    if queues.split('/').count() != 2 {
        return Err(malformed(format!("bad queue counts {queues:?}")));
    }

    // Captured request headers: the only place a User-Agent can live.
    let req_captures = take_braced(&mut rest);
    let _resp_captures = take_braced(&mut rest);
    let slots: Vec<&str> = match &req_captures {
        Some(block) => block.split('|').collect(),
        None => Vec::new(),
    };
    let ua_value = slots.get(ua_slot).ok_or(HaproxyError::MissingUaCapture(ua_slot))?;
    let user_agent = ua_value.trim().to_string();
    let referer = referer_slot
        .and_then(|slot| slots.get(slot))
        .map(|v| v.trim().to_string());

    let request_line =
        take_quoted(&mut rest).ok_or_else(|| malformed("missing quoted request".into()))?;
    let (method, path, query) = if request_line == "<BADREQ>" {
        ("-".to_string(), request_line, String::new())
    } else {
        interpret_request_line(&request_line)
    };

    Ok(LogRecord {
        timestamp,
        client_ip,
        provenance: Provenance::Raw,
        method,
        path,
        query,
        status,
        user_agent,
        referer: normalize_referer(referer),
    })
}

fn parse_client_addr(tok: &str) -> Result<IpAddr, String> {
    // "ip:port"; IPv6 addresses contain colons themselves.
    if let Some((host, _port)) = tok.rsplit_once(':') {
        if let Ok(ip) = host.trim_matches(['[', ']']).parse() {
            return Ok(ip);
        }
    }
    tok.parse().map_err(|e| format!("bad client address {tok:?}: {e}"))
}

fn parse_accept_date(text: &str) -> Result<DateTime<Utc>, String> {
    use chrono::Timelike;
    let naive = NaiveDateTime::parse_from_str(text, "%d/%b/%Y:%H:%M:%S%.3f")
        .map_err(|e| format!("bad accept date {text:?}: {e}"))?;
    // Second resolution, taken as UTC.
    let naive = naive.with_nanosecond(0).unwrap_or(naive);
    Ok(DateTime::from_naive_utc_and_offset(naive, Utc))
}

fn take_token<'a>(rest: &mut &'a str) -> Option<&'a str> {
    *rest = rest.trim_start_matches(' ');
    if rest.is_empty() {
        return None;
    }
    let end = rest.find(' ').unwrap_or(rest.len());
    let (tok, tail) = rest.split_at(end);
    *rest = tail;
    Some(tok)
}

fn take_bracketed(rest: &mut &str) -> Option<String> {
    *rest = rest.trim_start_matches(' ');
    let inner = rest.strip_prefix('[')?;
    let end = inner.find(']')?;
    let value = inner[..end].to_string();
    *rest = &inner[end + 1..];
    Some(value)
}

fn take_braced(rest: &mut &str) -> Option<String> {
    let trimmed = rest.trim_start_matches(' ');
    let inner = trimmed.strip_prefix('{')?;
    let end = inner.find('}')?;
    let value = inner[..end].to_string();
    *rest = &inner[end + 1..];
    Some(value)
}

fn take_quoted(rest: &mut &str) -> Option<String> {
    let trimmed = rest.trim_start_matches(' ');
    let inner = trimmed.strip_prefix('"')?;
    let end = inner.rfind('"')?;
    Some(inner[..end].to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    const LINE: &str = "Aug  9 10:00:04 lb1 haproxy[2831]: 203.0.113.17:51234 \
        [09/Aug/2024:10:00:04.123] web~ app/srv1 10/0/30/69/109 200 2750 - - ---- \
        1/1/1/1/0 0/0 {Mozilla/5.0 (X11; Linux x86_64)|https://example.org/} \
        {text/html} \"GET /index.html?x=1 HTTP/1.1\"";

    #[test]
    fn typical_line_with_captures() {
        let record = parse(LINE, 0, Some(1)).unwrap();
        assert_eq!(record.client_ip, "203.0.113.17".parse::<IpAddr>().unwrap());
        assert_eq!(
            record.timestamp,
            Utc.with_ymd_and_hms(2024, 8, 9, 10, 0, 4).unwrap()
        );
        assert_eq!(record.method, "GET");
        assert_eq!(record.path, "/index.html");
        assert_eq!(record.query, "x=1");
        assert_eq!(record.status, 200);
        assert_eq!(record.user_agent, "Mozilla/5.0 (X11; Linux x86_64)");
        assert_eq!(record.referer.as_deref(), Some("https://example.org/"));
    }

    #[test]
    fn missing_capture_slot_is_a_distinct_error() {
        match parse(LINE, 5, None) {
            Err(HaproxyError::MissingUaCapture(5)) => {}
            _ => panic!("expected MissingUaCapture"),
        }
        // No capture block at all.
        let no_block = "Aug  9 10:00:04 lb1 haproxy[2831]: 203.0.113.17:51234 \
            [09/Aug/2024:10:00:04.123] web app/srv1 10/0/30/69/109 200 2750 - - ---- \
            1/1/1/1/0 0/0 \"GET / HTTP/1.1\"";
        match parse(no_block, 0, None) {
            Err(HaproxyError::MissingUaCapture(0)) => {}
            _ => panic!("expected MissingUaCapture"),
        }
    }

    #[test]
    fn empty_slot_means_absent_header() {
        let line = "haproxy[1]: 10.0.0.1:1 [09/Aug/2024:10:00:04.000] f b/s 0/0/0/0/1 \
            404 0 - - ---- 0/0/0/0/0 0/0 {|r} {} \"GET / HTTP/1.1\"";
        let record = parse(line, 0, Some(1)).unwrap();
        assert_eq!(record.user_agent, "");
        assert_eq!(record.referer.as_deref(), Some("r"));
    }

    #[test]
    fn badreq_and_aborts() {
        let line = "haproxy[1]: 10.0.0.1:1 [09/Aug/2024:10:00:04.000] f b/s 0/0/0/0/1 \
            400 0 - - PR-- 0/0/0/0/0 0/0 {ua} \"<BADREQ>\"";
        let record = parse(line, 0, None).unwrap();
        assert_eq!(record.method, "-");
        assert_eq!(record.path, "<BADREQ>");

        let aborted = "haproxy[1]: 10.0.0.1:1 [09/Aug/2024:10:00:04.000] f b/s 0/0/0/0/1 \
            -1 0 - - CC-- 0/0/0/0/0 0/0 {ua} \"GET / HTTP/1.1\"";
        assert!(matches!(
            parse(aborted, 0, None),
            Err(HaproxyError::Malformed(_))
        ));
    }

    #[test]
    fn ipv6_client() {
        let line = "haproxy[1]: 2001:db8::7:40000 [09/Aug/2024:10:00:04.000] f b/s 0/0/0/0/1 \
            200 0 - - ---- 0/0/0/0/0 0/0 {ua} \"GET / HTTP/1.1\"";
        let record = parse(line, 0, None).unwrap();
        assert_eq!(record.client_ip, "2001:db8::7".parse::<IpAddr>().unwrap());
    }
}
