//! The user-agent rule cascade.
//!
//! A user-agent is a bot when any rule fires: it matches the bot regex
//! set, it matches a known-bot list entry, it lacks the `Mozilla/5.0`
//! prefix, it claims a browser or OS version deprecated longer than the
//! configured window, or (full mode) it claims platform details a
//! reduced user-agent would not carry. All rules are evaluated so the
//! verdict carries the complete reason set; the boolean outcome equals
//! the short-circuit cascade's.

use std::collections::BTreeSet;
use std::fmt;

use chrono::NaiveDate;
use regex::RegexSet;

use crate::refdata::{BotList, FrozenPlatformTokens, ReleaseDatabase};
use crate::useragent::{has_mozilla5_prefix_token, parse_user_agent, ParsedUserAgent};

/// Why a user-agent was flagged. Order is fixed; exports join reasons in
/// this order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Reason {
    RegexBot,
    ListBot,
    NonMozillaPrefix,
    DeprecatedBrowser,
    DeprecatedOs,
    UaReductionViolation,
}

impl Reason {
    pub const ALL: [Reason; 6] = [
        Reason::RegexBot,
        Reason::ListBot,
        Reason::NonMozillaPrefix,
        Reason::DeprecatedBrowser,
        Reason::DeprecatedOs,
        Reason::UaReductionViolation,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Reason::RegexBot => "regex-bot",
            Reason::ListBot => "list-bot",
            Reason::NonMozillaPrefix => "non-mozilla-prefix",
            Reason::DeprecatedBrowser => "deprecated-browser",
            Reason::DeprecatedOs => "deprecated-os",
            Reason::UaReductionViolation => "ua-reduction-violation",
        }
    }
}

impl fmt::Display for Reason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Reason {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Reason::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| format!("unknown reason {s:?}"))
    }
}

/// Classification of one user-agent string.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Verdict {
    pub ua: String,
    pub is_bot: bool,
    pub reasons: BTreeSet<Reason>,
    pub matched_bot_name: Option<String>,
}

impl Verdict {
    /// Reasons joined with `|` in fixed enum order.
    pub fn reasons_joined(&self) -> String {
        self.reasons
            .iter()
            .map(Reason::as_str)
            .collect::<Vec<_>>()
            .join("|")
    }
}

/// Default word patterns for the bot regex, case-insensitive substrings.
pub const DEFAULT_BOT_PATTERNS: [&str; 4] = ["bot", "crawler", "spider", "crawling"];

/// Everything the rules need, assembled once and shared immutably.
pub struct DetectionConfig {
    /// How long a version must have been superseded before it flags.
    pub deprecation_window_days: i64,
    /// Support window assumed for OS versions with no recorded
    /// end-of-life date.
    pub os_support_window_days: i64,
    /// Explicit evaluation date; never implicit wall clock.
    pub reference_date: NaiveDate,
    pub enable_reduction_check: bool,
    pub bot_list: BotList,
    pub release_db: ReleaseDatabase,
    pub frozen_tokens: FrozenPlatformTokens,
    regex_set: RegexSet,
}

impl DetectionConfig {
    pub const DEFAULT_DEPRECATION_WINDOW_DAYS: i64 = 2 * 365;
    pub const DEFAULT_OS_SUPPORT_WINDOW_DAYS: i64 = 4 * 365;

    /// Bundled reference data, default windows, reduction check on.
    pub fn new(reference_date: NaiveDate) -> Self {
        Self {
            deprecation_window_days: Self::DEFAULT_DEPRECATION_WINDOW_DAYS,
            os_support_window_days: Self::DEFAULT_OS_SUPPORT_WINDOW_DAYS,
            reference_date,
            enable_reduction_check: true,
            bot_list: BotList::bundled(),
            release_db: ReleaseDatabase::bundled(),
            frozen_tokens: FrozenPlatformTokens::default(),
            regex_set: Self::compile_patterns(&[]).expect("default patterns compile"),
        }
    }

    /// Same configuration with the reduction check off, matching the
    /// plain short-circuit cascade.
    pub fn strict(reference_date: NaiveDate) -> Self {
        Self {
            enable_reduction_check: false,
            ..Self::new(reference_date)
        }
    }

    /// Extend the default regex patterns with extra ones.
    pub fn with_extra_patterns(mut self, extra: &[String]) -> Result<Self, regex::Error> {
        self.regex_set = Self::compile_patterns(extra)?;
        Ok(self)
    }

    fn compile_patterns(extra: &[String]) -> Result<RegexSet, regex::Error> {
        let patterns: Vec<String> = DEFAULT_BOT_PATTERNS
            .iter()
            .map(|p| format!("(?i){p}"))
            .chain(extra.iter().map(|p| format!("(?i){p}")))
            .collect();
        RegexSet::new(patterns)
    }

    fn deprecation_cutoff(&self) -> NaiveDate {
        self.reference_date - chrono::Duration::days(self.deprecation_window_days)
    }
}

/// Case-insensitive pattern membership.
pub fn is_bot_by_regex(ua: &str, config: &DetectionConfig) -> bool {
    !ua.is_empty() && config.regex_set.is_match(ua)
}

/// Name of the first matching bot-list entry (longest match token wins,
/// then lexicographic).
pub fn is_bot_by_list<'c>(ua: &str, config: &'c DetectionConfig) -> Option<&'c str> {
    config
        .bot_list
        .find_match(ua)
        .map(|entry| entry.bot_name.as_str())
}

/// Deprecation reasons for the claimed browser and OS versions. Unknown
/// families or versions contribute nothing.
pub fn has_deprecated_version(p: &ParsedUserAgent, config: &DetectionConfig) -> BTreeSet<Reason> {
    let mut out = BTreeSet::new();
    let cutoff = config.deprecation_cutoff();

    if let (Some(family), Some(major)) = (&p.browser_family, p.browser_major) {
        let key = family.db_key();
        if let Some(entry) = config.release_db.browser(&key, major) {
            // A version counts as deprecated once superseded; the release
            // of the next shipped major is its deprecation date, with the
            // recorded end-of-life as fallback for the newest entries.
            let deprecated_since = config
                .release_db
                .successor_release(&key, major)
                .or(entry.eol);
            if deprecated_since.is_some_and(|d| d < cutoff) {
                out.insert(Reason::DeprecatedBrowser);
            }
        }
    }

    // A frozen platform token is a reduction artifact: it claims nothing
    // about the real OS, so it cannot be a deprecated one.
    let frozen = p
        .platform_token
        .as_deref()
        .is_some_and(|t| config.frozen_tokens.matches(t));
    if !frozen {
        if let (Some(os), Some(version)) = (&p.os_family, &p.os_version) {
            let key = os.db_key();
            if let Some(token) = normalize_os_version(&key, version) {
                if let Some(entry) = config.release_db.os(&key, &token) {
                    let deprecated_since = entry.eol.or_else(|| {
                        config
                            .release_db
                            .os_superseded(&key, entry)
                            .then(|| entry.release + chrono::Duration::days(config.os_support_window_days))
                    });
                    if deprecated_since.is_some_and(|d| d < cutoff) {
                        out.insert(Reason::DeprecatedOs);
                    }
                }
            }
        }
    }
    out
}

/// Map a claimed OS version to the release-database token: Android by
/// major, macOS/iOS with underscores normalized and macOS 10.x kept at
/// minor precision, Windows on the `NT x.y` token.
fn normalize_os_version(os_key: &str, version: &str) -> Option<String> {
    match os_key {
        "windows" => Some(version.to_string()),
        "android" | "ios" => {
            let dotted = version.replace('_', ".");
            dotted.split('.').next().map(str::to_string)
        }
        "macos" => {
            let dotted = version.replace('_', ".");
            let mut parts = dotted.split('.');
            let major = parts.next()?;
            if major == "10" {
                let minor = parts.next()?;
                Some(format!("10.{minor}"))
            } else {
                Some(major.to_string())
            }
        }
        _ => Some(version.to_string()),
    }
}

/// True when the browser lineage sends reduced user-agents from this
/// major on, but the platform token is not one of the frozen values.
pub fn violates_ua_reduction(p: &ParsedUserAgent, config: &DetectionConfig) -> bool {
    let (Some(family), Some(major)) = (&p.browser_family, p.browser_major) else {
        return false;
    };
    let Some(floor) = config.release_db.reduction_floor(&family.db_key()) else {
        return false;
    };
    if major < floor {
        return false;
    }
    match p.platform_token.as_deref() {
        Some(token) => !config.frozen_tokens.matches(token),
        None => true,
    }
}

/// Classify one user-agent string: the union of all triggered rules.
pub fn classify(ua: &str, config: &DetectionConfig) -> Verdict {
    let parsed = parse_user_agent(ua);
    classify_parsed(&parsed, config)
}

/// Classification when the caller already parsed the string.
pub fn classify_parsed(p: &ParsedUserAgent, config: &DetectionConfig) -> Verdict {
    let mut reasons = BTreeSet::new();
    let mut matched_bot_name = None;

    if is_bot_by_regex(&p.raw, config) {
        reasons.insert(Reason::RegexBot);
    }
    if let Some(name) = is_bot_by_list(&p.raw, config) {
        reasons.insert(Reason::ListBot);
        matched_bot_name = Some(name.to_string());
    }
    if !has_mozilla5_prefix_token(&p.raw) {
        reasons.insert(Reason::NonMozillaPrefix);
    }
    reasons.extend(has_deprecated_version(p, config));
    if config.enable_reduction_check && violates_ua_reduction(p, config) {
        reasons.insert(Reason::UaReductionViolation);
    }

    Verdict {
        ua: p.raw.clone(),
        is_bot: !reasons.is_empty(),
        reasons,
        matched_bot_name,
    }
}

/// A per-thread memo over [`classify`]; cached and uncached verdicts are
/// identical because classification is pure.
pub struct MemoClassifier<'c> {
    config: &'c DetectionConfig,
    cache: std::collections::HashMap<String, Verdict>,
}

impl<'c> MemoClassifier<'c> {
    pub fn new(config: &'c DetectionConfig) -> Self {
        Self {
            config,
            cache: std::collections::HashMap::new(),
        }
    }

    pub fn classify(&mut self, ua: &str) -> &Verdict {
        if !self.cache.contains_key(ua) {
            let verdict = classify(ua, self.config);
            self.cache.insert(ua.to_string(), verdict);
        }
        &self.cache[ua]
    }

    pub fn len(&self) -> usize {
        self.cache.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cache.is_empty()
    }
}
