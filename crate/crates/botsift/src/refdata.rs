//! Reference data consumed by the detection rules: bot-name lists, the
//! browser/OS release-date database, the frozen reduced-platform tokens,
//! and known-bot IP lists.
//!
//! Everything here is loaded once, validated, and then shared immutably
//! across threads.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::io::Read;
use std::net::IpAddr;

use chrono::NaiveDate;
use serde_json::Value;
use thiserror::Error;

use crate::ingest::{LogRecord, Provenance};

/// Bundled release-date snapshot; refresh by pointing the loader at a
/// newer file of the same schema.
pub const BUNDLED_RELEASE_DB: &str = include_str!("../data/release_db.csv");

/// Bundled bot-name list in `robots-json` format.
pub const BUNDLED_ROBOTS_JSON: &str = include_str!("../data/robots.json");

#[derive(Debug, Error)]
pub enum RefDataError {
    #[error("entry {index}: {reason}")]
    Format { index: usize, reason: String },
    #[error("release dates not monotone for family {family} at version {version}")]
    NonMonotone { family: String, version: String },
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("known-bot IP lookup requires a pre-anonymization address")]
    AnonymizedLookup,
}

// ---------------------------------------------------------------------------
// Bot lists

/// Input format for [`load_bot_list`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BotListFormat {
    /// JSON map of bot name to metadata object.
    RobotsJson,
    /// One match token per line, `#` comments.
    PlainNames,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BotEntry {
    pub match_token: String,
    pub bot_name: String,
    pub operator: Option<String>,
}

/// A list of known bot identifiers, matched case-insensitively as
/// substrings of the raw user-agent.
#[derive(Debug, Clone, Default)]
pub struct BotList {
    // Sorted longest-token-first (then lexicographic) so lookups are
    // deterministic under overlapping tokens.
    entries: Vec<BotEntry>,
    lowered: Vec<String>,
}

impl BotList {
    pub fn new(mut entries: Vec<BotEntry>) -> Self {
        let mut seen = HashSet::new();
        entries.retain(|e| seen.insert(e.match_token.to_ascii_lowercase()));
        entries.sort_by(|a, b| {
            b.match_token
                .len()
                .cmp(&a.match_token.len())
                .then_with(|| a.match_token.cmp(&b.match_token))
        });
        let lowered = entries
            .iter()
            .map(|e| e.match_token.to_ascii_lowercase())
            .collect();
        Self { entries, lowered }
    }

    pub fn bundled() -> Self {
        load_bot_list(BUNDLED_ROBOTS_JSON.as_bytes(), BotListFormat::RobotsJson)
            .expect("bundled robots.json is well-formed")
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[BotEntry] {
        &self.entries
    }

    /// First matching entry under the longest-token-then-lexicographic
    /// tie-break, or None.
    pub fn find_match(&self, ua: &str) -> Option<&BotEntry> {
        if ua.is_empty() {
            return None;
        }
        let hay = ua.to_ascii_lowercase();
        self.lowered
            .iter()
            .position(|tok| hay.contains(tok.as_str()))
            .map(|i| &self.entries[i])
    }
}

/// Load a bot list from either supported format, deduplicating by match
/// token.
pub fn load_bot_list<R: Read>(mut source: R, format: BotListFormat) -> Result<BotList, RefDataError> {
    let mut text = String::new();
    source.read_to_string(&mut text)?;
    let mut entries = Vec::new();
    match format {
        BotListFormat::RobotsJson => {
            let doc: Value = serde_json::from_str(&text).map_err(|e| RefDataError::Format {
                index: 0,
                reason: e.to_string(),
            })?;
            let map = doc.as_object().ok_or_else(|| RefDataError::Format {
                index: 0,
                reason: "expected a top-level JSON object".into(),
            })?;
            for (index, (name, meta)) in map.iter().enumerate() {
                if name.trim().is_empty() {
                    return Err(RefDataError::Format {
                        index,
                        reason: "empty bot name".into(),
                    });
                }
                let operator = meta
                    .get("operator")
                    .and_then(Value::as_str)
                    .map(str::to_string);
                entries.push(BotEntry {
                    match_token: name.clone(),
                    bot_name: name.clone(),
                    operator,
                });
            }
        }
        BotListFormat::PlainNames => {
            for line in text.lines() {
                let line = line.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                entries.push(BotEntry {
                    match_token: line.to_string(),
                    bot_name: line.to_string(),
                    operator: None,
                });
            }
        }
    }
    Ok(BotList::new(entries))
}

// ---------------------------------------------------------------------------
// Release database

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReleaseEntry {
    pub release: NaiveDate,
    pub eol: Option<NaiveDate>,
}

/// Release dates for browser majors and OS version tokens, plus the
/// per-family floor majors from which Chromium lineages send reduced
/// user-agents.
#[derive(Debug, Clone, Default)]
pub struct ReleaseDatabase {
    browser_releases: BTreeMap<String, BTreeMap<u32, ReleaseEntry>>,
    os_releases: BTreeMap<String, BTreeMap<String, ReleaseEntry>>,
    reduction_floors: BTreeMap<String, u32>,
}

impl ReleaseDatabase {
    pub fn bundled() -> Self {
        load_release_db(BUNDLED_RELEASE_DB.as_bytes()).expect("bundled release db is valid")
    }

    pub fn browser(&self, family_key: &str, major: u32) -> Option<ReleaseEntry> {
        let per_family = match self.browser_releases.get(family_key) {
            Some(m) => m,
            // Chrome Mobile tracks desktop Chrome's schedule.
            None if family_key == "chrome-mobile" => self.browser_releases.get("chrome")?,
            None => return None,
        };
        per_family.get(&major).copied()
    }

    /// Release date of the next major actually present in the database
    /// (skipped majors are skipped here too).
    pub fn successor_release(&self, family_key: &str, major: u32) -> Option<NaiveDate> {
        let per_family = match self.browser_releases.get(family_key) {
            Some(m) => m,
            None if family_key == "chrome-mobile" => self.browser_releases.get("chrome")?,
            None => return None,
        };
        per_family
            .range(major + 1..)
            .next()
            .map(|(_, e)| e.release)
    }

    pub fn os(&self, family_key: &str, version_token: &str) -> Option<ReleaseEntry> {
        self.os_releases.get(family_key)?.get(version_token).copied()
    }

    /// Whether any entry of the OS family was released after this one.
    pub fn os_superseded(&self, family_key: &str, entry: ReleaseEntry) -> bool {
        self.os_releases
            .get(family_key)
            .is_some_and(|m| m.values().any(|e| e.release > entry.release))
    }

    /// Floor major from which the family sends reduced user-agents, if it
    /// does at all.
    pub fn reduction_floor(&self, family_key: &str) -> Option<u32> {
        self.reduction_floors.get(family_key).copied()
    }

    pub fn browser_families(&self) -> impl Iterator<Item = &str> {
        self.browser_releases.keys().map(String::as_str)
    }
}

/// Load and validate a release database from CSV
/// (`kind,family,version,release_date,eol_date`).
pub fn load_release_db<R: Read>(source: R) -> Result<ReleaseDatabase, RefDataError> {
    let mut reader = csv::ReaderBuilder::new().from_reader(source);
    let mut db = ReleaseDatabase::default();
    for (index, row) in reader.records().enumerate() {
        let row = row.map_err(|e| RefDataError::Format {
            index,
            reason: e.to_string(),
        })?;
        let field = |i: usize| row.get(i).unwrap_or("").trim().to_string();
        let (kind, family, version) = (field(0), field(1), field(2));
        let parse_date = |s: &str| -> Result<Option<NaiveDate>, RefDataError> {
            if s.is_empty() {
                return Ok(None);
            }
            NaiveDate::parse_from_str(s, "%Y-%m-%d")
                .map(Some)
                .map_err(|e| RefDataError::Format {
                    index,
                    reason: format!("bad date {s:?}: {e}"),
                })
        };
        let release = parse_date(&field(3))?;
        let eol = parse_date(&field(4))?;
        match kind.as_str() {
            "browser" => {
                let major: u32 = version.parse().map_err(|_| RefDataError::Format {
                    index,
                    reason: format!("bad browser major {version:?}"),
                })?;
                let release = release.ok_or_else(|| RefDataError::Format {
                    index,
                    reason: "browser rows need a release date".into(),
                })?;
                db.browser_releases
                    .entry(family)
                    .or_default()
                    .insert(major, ReleaseEntry { release, eol });
            }
            "os" => {
                let release = release.ok_or_else(|| RefDataError::Format {
                    index,
                    reason: "os rows need a release date".into(),
                })?;
                db.os_releases
                    .entry(family)
                    .or_default()
                    .insert(version, ReleaseEntry { release, eol });
            }
            "reduction_floor" => {
                let major: u32 = version.parse().map_err(|_| RefDataError::Format {
                    index,
                    reason: format!("bad reduction floor {version:?}"),
                })?;
                db.reduction_floors.insert(family, major);
            }
            other => {
                return Err(RefDataError::Format {
                    index,
                    reason: format!("unknown kind {other:?}"),
                })
            }
        }
    }
    for (family, per_major) in &db.browser_releases {
        let mut prev: Option<(u32, NaiveDate)> = None;
        for (major, entry) in per_major {
            if let Some((_, prev_date)) = prev {
                if entry.release <= prev_date {
                    return Err(RefDataError::NonMonotone {
                        family: family.clone(),
                        version: major.to_string(),
                    });
                }
            }
            prev = Some((*major, entry.release));
        }
    }
    Ok(db)
}

// ---------------------------------------------------------------------------
// Frozen platform tokens

/// Platform tokens sent by reduced user-agents. Reduced Android strings
/// carry a `Linux; ` prefix in front of the frozen value, which is
/// normalized away by [`FrozenPlatformTokens::matches`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrozenPlatformTokens {
    tokens: BTreeSet<String>,
}

impl Default for FrozenPlatformTokens {
    fn default() -> Self {
        let tokens = [
            "Android 10; K",
            "Macintosh; Intel Mac OS X 10_15_7",
            "Windows NT 10.0; Win64; x64",
            "X11; CrOS x86_64 14541.0.0",
            "X11; Linux x86_64",
        ]
        .into_iter()
        .map(str::to_string)
        .collect();
        Self { tokens }
    }
}

impl FrozenPlatformTokens {
    pub fn new(tokens: impl IntoIterator<Item = String>) -> Self {
        Self {
            tokens: tokens.into_iter().collect(),
        }
    }

    pub fn tokens(&self) -> &BTreeSet<String> {
        &self.tokens
    }

    pub fn matches(&self, platform_token: &str) -> bool {
        if self.tokens.contains(platform_token) {
            return true;
        }
        platform_token
            .strip_prefix("Linux; ")
            .is_some_and(|t| self.tokens.contains(t))
    }
}

// ---------------------------------------------------------------------------
// Known-bot IP lists

/// A set of CIDR blocks. Membership is tested by masking the address at
/// each prefix length present in the set, so lookups stay cheap even for
/// large lists.
#[derive(Debug, Clone, Default)]
pub struct KnownBotIps {
    v4: HashMap<u8, HashSet<u32>>,
    v6: HashMap<u8, HashSet<u128>>,
    len: usize,
}

impl KnownBotIps {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn insert_block(&mut self, ip: IpAddr, prefix_len: u8) -> Result<(), RefDataError> {
        match ip {
            IpAddr::V4(v4) => {
                if prefix_len > 32 {
                    return Err(RefDataError::Format {
                        index: 0,
                        reason: format!("IPv4 prefix length {prefix_len} out of range"),
                    });
                }
                let masked = mask_v4(u32::from(v4), prefix_len);
                self.v4.entry(prefix_len).or_default().insert(masked);
            }
            IpAddr::V6(v6) => {
                if prefix_len > 128 {
                    return Err(RefDataError::Format {
                        index: 0,
                        reason: format!("IPv6 prefix length {prefix_len} out of range"),
                    });
                }
                let masked = mask_v6(u128::from(v6), prefix_len);
                self.v6.entry(prefix_len).or_default().insert(masked);
            }
        }
        self.len += 1;
        Ok(())
    }

    pub fn contains(&self, ip: IpAddr) -> bool {
        match ip {
            IpAddr::V4(v4) => {
                let bits = u32::from(v4);
                self.v4
                    .iter()
                    .any(|(len, set)| set.contains(&mask_v4(bits, *len)))
            }
            IpAddr::V6(v6) => {
                let bits = u128::from(v6);
                self.v6
                    .iter()
                    .any(|(len, set)| set.contains(&mask_v6(bits, *len)))
            }
        }
    }

    /// Membership check on a log record; only valid before anonymization,
    /// since reputation lists speak about real addresses.
    pub fn check_record(&self, record: &LogRecord) -> Result<bool, RefDataError> {
        if record.provenance != Provenance::Raw {
            return Err(RefDataError::AnonymizedLookup);
        }
        Ok(self.contains(record.client_ip))
    }
}

fn mask_v4(bits: u32, len: u8) -> u32 {
    if len == 0 {
        0
    } else {
        bits & (u32::MAX << (32 - len))
    }
}

fn mask_v6(bits: u128, len: u8) -> u128 {
    if len == 0 {
        0
    } else {
        bits & (u128::MAX << (128 - len))
    }
}

/// Check an IP against a known-bot list.
pub fn is_known_bot_ip(ip: IpAddr, db: &KnownBotIps) -> bool {
    db.contains(ip)
}

/// Load CIDR blocks, one per line; bare addresses are taken as host
/// routes. `#` comments and blank lines are skipped.
pub fn load_known_bot_ips<R: Read>(mut source: R) -> Result<KnownBotIps, RefDataError> {
    let mut text = String::new();
    source.read_to_string(&mut text)?;
    let mut db = KnownBotIps::default();
    for (index, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (addr_part, len_part) = match line.split_once('/') {
            Some((a, l)) => (a, Some(l)),
            None => (line, None),
        };
        let ip: IpAddr = addr_part.parse().map_err(|e| RefDataError::Format {
            index,
            reason: format!("bad address {addr_part:?}: {e}"),
        })?;
        let prefix_len = match len_part {
            Some(l) => l.parse().map_err(|_| RefDataError::Format {
                index,
                reason: format!("bad prefix length {l:?}"),
            })?,
            None => {
                if ip.is_ipv4() {
                    32
                } else {
                    128
                }
            }
        };
        db.insert_block(ip, prefix_len)
            .map_err(|e| match e {
                RefDataError::Format { reason, .. } => RefDataError::Format { index, reason },
                other => other,
            })?;
    }
    Ok(db)
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDate;

    fn date(s: &str) -> NaiveDate {
        NaiveDate::parse_from_str(s, "%Y-%m-%d").unwrap()
    }

    #[test]
    fn robots_json_keeps_every_name() {
        let list = BotList::bundled();
        assert!(list.find_match("ChatGPT-User/1.0").is_some());
        assert_eq!(
            list.find_match("ChatGPT-User/1.0").unwrap().bot_name,
            "ChatGPT-User"
        );
        assert!(list.find_match("curl/8.5.0").is_none());
    }

    #[test]
    fn empty_and_duplicate_lists() {
        let list = load_bot_list("".as_bytes(), BotListFormat::PlainNames).unwrap();
        assert!(list.is_empty());
        let list = load_bot_list(
            "SuperBot\nSuperBot\n# comment\n\n".as_bytes(),
            BotListFormat::PlainNames,
        )
        .unwrap();
        assert_eq!(list.len(), 1);
    }

    #[test]
    fn bundled_release_dates_match_known_anchors() {
        let db = ReleaseDatabase::bundled();
        let chrome39 = db.browser("chrome", 39).unwrap();
        assert_eq!(chrome39.release, date("2014-11-18"));
        let firefox47 = db.browser("firefox", 47).unwrap();
        assert_eq!(firefox47.release, date("2016-06-07"));
        assert!(db.browser("chrome", 82).is_none());
        // The successor of a skipped major is the next one present.
        assert_eq!(
            db.successor_release("chrome", 81),
            Some(date("2020-05-19"))
        );
        assert_eq!(db.reduction_floor("chrome"), Some(110));
        assert_eq!(db.reduction_floor("firefox"), None);
    }

    #[test]
    fn non_monotone_release_db_is_rejected() {
        let csv = "kind,family,version,release_date,eol_date\n\
                   browser,chrome,49,2016-03-02,\n\
                   browser,chrome,50,2016-01-01,\n";
        match load_release_db(csv.as_bytes()) {
            Err(RefDataError::NonMonotone { family, .. }) => assert_eq!(family, "chrome"),
            other => panic!("expected NonMonotone, got {other:?}"),
        }
    }

    #[test]
    fn frozen_tokens_default_set() {
        let frozen = FrozenPlatformTokens::default();
        assert_eq!(frozen.tokens().len(), 5);
        assert!(frozen.matches("Windows NT 10.0; Win64; x64"));
        assert!(frozen.matches("Android 10; K"));
        assert!(frozen.matches("Linux; Android 10; K"));
        assert!(!frozen.matches("Windows NT 10.0; Win64; x64; Surface Pro 9"));
        assert!(!frozen.matches("Linux; Android 14; Pixel 8"));
    }

    #[test]
    fn known_bot_ip_membership() {
        let db = load_known_bot_ips("10.0.0.0/8\n".as_bytes()).unwrap();
        assert!(db.contains("10.0.0.5".parse().unwrap()));
        assert!(!db.contains("11.0.0.5".parse().unwrap()));
        let empty = KnownBotIps::default();
        assert!(!empty.contains("10.0.0.5".parse().unwrap()));
    }

    #[test]
    fn known_bot_ip_agrees_with_linear_scan() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let mut blocks: Vec<(u32, u8)> = Vec::new();
        let mut db = KnownBotIps::default();
        for _ in 0..64 {
            let addr: u32 = rng.gen();
            let len: u8 = rng.gen_range(0..=32);
            blocks.push((mask_v4(addr, len), len));
            db.insert_block(IpAddr::V4(addr.into()), len).unwrap();
        }
        for _ in 0..1000 {
            let probe: u32 = rng.gen();
            let linear = blocks
                .iter()
                .any(|(prefix, len)| mask_v4(probe, *len) == *prefix);
            assert_eq!(db.contains(IpAddr::V4(probe.into())), linear);
        }
    }

    #[test]
    fn lookup_requires_raw_provenance() {
        use chrono::{TimeZone, Utc};
        let db = load_known_bot_ips("10.0.0.0/8\n".as_bytes()).unwrap();
        let mut record = LogRecord {
            timestamp: Utc.with_ymd_and_hms(2024, 9, 1, 0, 0, 0).unwrap(),
            client_ip: "10.1.2.3".parse().unwrap(),
            provenance: Provenance::Raw,
            method: "GET".into(),
            path: "/".into(),
            query: String::new(),
            status: 200,
            user_agent: String::new(),
            referer: None,
        };
        assert_eq!(db.check_record(&record).unwrap(), true);
        record.provenance = Provenance::Anonymized;
        assert!(matches!(
            db.check_record(&record),
            Err(RefDataError::AnonymizedLookup)
        ));
    }
}
