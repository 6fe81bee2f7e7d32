//! Combined Log Format parser, shared by Apache httpd and NGINX:
//! `%h %l %u %t "%r" %>s %b "referer" "user-agent"`.

use chrono::{DateTime, Utc};

use super::{interpret_request_line, normalize_referer, LogRecord, Provenance};

pub(super) fn parse(line: &str) -> Result<LogRecord, String> {
    let mut rest = line.trim_end_matches(['\r', '\n']);

    let host = take_token(&mut rest).ok_or("missing host field")?;
    let client_ip = host
        .parse()
        .map_err(|e| format!("bad client address {host:?}: {e}"))?;
    let _ident = take_token(&mut rest).ok_or("missing ident field")?;
    let _user = take_token(&mut rest).ok_or("missing user field")?;

    let timestamp_text = take_bracketed(&mut rest).ok_or("missing [timestamp]")?;
    let timestamp = parse_clf_timestamp(&timestamp_text)?;

    let request_line = take_quoted(&mut rest).ok_or("missing quoted request line")?;
    let (method, path, query) = interpret_request_line(&request_line);

    let status_tok = take_token(&mut rest).ok_or("missing status field")?;
    let status: u16 = status_tok
        .parse()
        .map_err(|_| format!("bad status {status_tok:?}"))?;
    if !(100..=599).contains(&status) {
        return Err(format!("status {status} out of range"));
    }

    // Body size is unused by any heuristic; accept "-" or digits.
    let body = take_token(&mut rest).ok_or("missing body-size field")?;
    if body != "-" && body.parse::<u64>().is_err() {
        return Err(format!("bad body size {body:?}"));
    }

    let referer = take_quoted(&mut rest).ok_or("missing quoted referer")?;
    let user_agent = take_quoted(&mut rest).ok_or("missing quoted user-agent")?;
    if !rest.trim().is_empty() {
        return Err(format!("trailing content {:?}", rest.trim()));
    }

    Ok(LogRecord {
        timestamp,
        client_ip,
        provenance: Provenance::Raw,
        method,
        path,
        query,
        status,
        user_agent: if user_agent == "-" {
            String::new()
        } else {
            user_agent
        },
        referer: normalize_referer(Some(referer)),
    })
}

fn parse_clf_timestamp(text: &str) -> Result<DateTime<Utc>, String> {
    DateTime::parse_from_str(text, "%d/%b/%Y:%H:%M:%S %z")
        .map(|t| t.with_timezone(&Utc))
        .map_err(|e| format!("bad timestamp {text:?}: {e}"))
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

/// Take a double-quoted field, decoding the backslash escapes Apache and
/// NGINX emit (`\"`, `\\`, `\xHH`, `\n`, `\t`, `\r`). Unknown escapes are
/// kept verbatim.
fn take_quoted(rest: &mut &str) -> Option<String> {
    *rest = rest.trim_start_matches(' ');
    let inner = rest.strip_prefix('"')?;
    let bytes = inner.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        match bytes[i] {
            b'"' => {
                *rest = &inner[i + 1..];
                return Some(String::from_utf8_lossy(&out).into_owned());
            }
            b'\\' if i + 1 < bytes.len() => {
                match bytes[i + 1] {
                    b'"' => out.push(b'"'),
                    b'\\' => out.push(b'\\'),
                    b'n' => out.push(b'\n'),
                    b't' => out.push(b'\t'),
                    b'r' => out.push(b'\r'),
                    b'x' if i + 3 < bytes.len() => {
                        if let Ok(v) = u8::from_str_radix(
                            std::str::from_utf8(&bytes[i + 2..i + 4]).unwrap_or(""),
                            16,
                        ) {
                            out.push(v);
                            i += 4;
                            continue;
                        }
                        out.extend_from_slice(&bytes[i..i + 2]);
                    }
                    other => {
                        out.push(b'\\');
                        out.push(other);
                    }
                }
                i += 2;
                continue;
            }
            b => out.push(b),
        }
        i += 1;
    }
    None // unterminated quote
}

/// Serialize a record back into a Combined Log Format line. Inverse of
/// [`parse`] up to field defaults; used to check that parsing retracts.
#[cfg(test)]
pub(crate) fn to_line(record: &LogRecord) -> String {
    let ts = record.timestamp.format("%d/%b/%Y:%H:%M:%S %z");
    let request = if record.method == "-" {
        escape_quoted(&record.path)
    } else {
        let target = if record.query.is_empty() {
            encode_target(&record.path)
        } else {
            format!("{}?{}", encode_target(&record.path), record.query)
        };
        format!("{} {} HTTP/1.1", record.method, target)
    };
    format!(
        "{} - - [{}] \"{}\" {} - \"{}\" \"{}\"",
        record.client_ip,
        ts,
        request,
        record.status,
        escape_quoted(record.referer.as_deref().unwrap_or("-")),
        escape_quoted(if record.user_agent.is_empty() {
            "-"
        } else {
            &record.user_agent
        }),
    )
}

#[cfg(test)]
fn escape_quoted(s: &str) -> String {
    let mut out = String::new();
    for b in s.bytes() {
        match b {
            b'"' => out.push_str("\\\""),
            b'\\' => out.push_str("\\\\"),
            b'\n' => out.push_str("\\n"),
            b'\t' => out.push_str("\\t"),
            b'\r' => out.push_str("\\r"),
            // Byte-wise escaping; \xHH round-trips multi-byte characters.
            0x00..=0x1f | 0x7f..=0xff => out.push_str(&format!("\\x{b:02x}")),
            _ => out.push(b as char),
        }
    }
    out
}

#[cfg(test)]
fn encode_target(path: &str) -> String {
    let mut out = String::new();
    for b in path.bytes() {
        match b {
            b' ' | b'"' | b'\\' | b'%' | b'?' | 0x00..=0x1f | 0x7f..=0xff => {
                out.push_str(&format!("%{b:02X}"))
            }
            _ => out.push(b as char),
        }
    }
    out
}
