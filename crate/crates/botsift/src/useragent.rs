//! User-agent string parsing.
//!
//! Extracts the facts the detection rules need from the conventional
//! four-part anatomy of a browser user-agent: the `Mozilla/5.0`
//! compatibility token, the parenthesized platform token, the rendering
//! engine product, and the browser product. Parsing is total: any byte
//! sequence yields a `ParsedUserAgent`, with unrecognized parts left
//! absent.

use std::fmt;

/// Browser families the detection rules know about.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BrowserFamily {
    Chrome,
    ChromeMobile,
    Firefox,
    Safari,
    Edge,
    Opera,
    Msie,
    Other(String),
}

impl BrowserFamily {
    /// Canonical key used by the release database.
    pub fn db_key(&self) -> String {
        match self {
            BrowserFamily::Chrome => "chrome".into(),
            BrowserFamily::ChromeMobile => "chrome-mobile".into(),
            BrowserFamily::Firefox => "firefox".into(),
            BrowserFamily::Safari => "safari".into(),
            BrowserFamily::Edge => "edge".into(),
            BrowserFamily::Opera => "opera".into(),
            BrowserFamily::Msie => "msie".into(),
            BrowserFamily::Other(name) => format!("other:{}", name.to_ascii_lowercase()),
        }
    }
}

impl fmt::Display for BrowserFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BrowserFamily::Chrome => write!(f, "Chrome"),
            BrowserFamily::ChromeMobile => write!(f, "Chrome Mobile"),
            BrowserFamily::Firefox => write!(f, "Firefox"),
            BrowserFamily::Safari => write!(f, "Safari"),
            BrowserFamily::Edge => write!(f, "Edge"),
            BrowserFamily::Opera => write!(f, "Opera"),
            BrowserFamily::Msie => write!(f, "MSIE"),
            BrowserFamily::Other(name) => write!(f, "{name}"),
        }
    }
}

/// Operating-system families recognized in platform tokens.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum OsFamily {
    Windows,
    MacOs,
    Android,
    Ios,
    Linux,
    ChromeOs,
    Other(String),
}

impl OsFamily {
    /// Canonical key used by the release database.
    pub fn db_key(&self) -> String {
        match self {
            OsFamily::Windows => "windows".into(),
            OsFamily::MacOs => "macos".into(),
            OsFamily::Android => "android".into(),
            OsFamily::Ios => "ios".into(),
            OsFamily::Linux => "linux".into(),
            OsFamily::ChromeOs => "chromeos".into(),
            OsFamily::Other(name) => format!("other:{}", name.to_ascii_lowercase()),
        }
    }
}

impl fmt::Display for OsFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OsFamily::Windows => write!(f, "Windows"),
            OsFamily::MacOs => write!(f, "macOS"),
            OsFamily::Android => write!(f, "Android"),
            OsFamily::Ios => write!(f, "iOS"),
            OsFamily::Linux => write!(f, "Linux"),
            OsFamily::ChromeOs => write!(f, "ChromeOS"),
            OsFamily::Other(name) => write!(f, "{name}"),
        }
    }
}

/// Structured facts extracted from a single user-agent string.
///
/// `raw` is preserved verbatim so every classification reason can be
/// explained against the original string.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedUserAgent {
    pub raw: String,
    pub has_mozilla5_prefix: bool,
    /// Content of the first parenthesized group, e.g.
    /// `Macintosh; Intel Mac OS X 10_15_7`.
    pub platform_token: Option<String>,
    pub browser_family: Option<BrowserFamily>,
    pub browser_major: Option<u32>,
    pub browser_full_version: Option<String>,
    pub os_family: Option<OsFamily>,
    pub os_version: Option<String>,
    /// Rendering-engine product, e.g. `AppleWebKit/605.1.15`.
    pub engine_token: Option<String>,
}

const MOZILLA5: &str = "Mozilla/5.0";

/// True when `ua` starts with the literal 11 characters `Mozilla/5.0`
/// followed by end-of-string or a non-alphanumeric character.
///
/// The boundary requirement keeps trivially gamed prefixes such as
/// `Mozilla/5.00` from qualifying.
pub fn has_mozilla5_prefix_token(ua: &str) -> bool {
    match ua.strip_prefix(MOZILLA5) {
        None => false,
        Some(rest) => match rest.chars().next() {
            None => true,
            Some(c) => !c.is_alphanumeric(),
        },
    }
}

/// Parse a user-agent string. Total: never fails, unrecognized strings
/// yield a value with all optional fields absent.
pub fn parse_user_agent(ua: &str) -> ParsedUserAgent {
    let platform_token = first_paren_group(ua);
    let products = scan_products(ua);
    let bare_tokens = scan_bare_tokens(ua);
    let platform_segments: Vec<&str> = platform_token
        .as_deref()
        .map(|p| p.split(';').map(str::trim).collect())
        .unwrap_or_default();

    let engine_token = find_engine(&products, &platform_segments);
    let (browser_family, browser_full_version) =
        detect_browser(&products, &bare_tokens, &platform_segments);
    let browser_major = browser_full_version.as_deref().and_then(leading_integer);
    let (os_family, os_version) = detect_os(&platform_segments);

    ParsedUserAgent {
        raw: ua.to_string(),
        has_mozilla5_prefix: ua.starts_with(MOZILLA5),
        platform_token,
        browser_family,
        browser_major,
        browser_full_version,
        os_family,
        os_version,
        engine_token,
    }
}

/// Major Android version claimed by the platform token, when the OS is
/// Android.
pub fn extract_android_version(p: &ParsedUserAgent) -> Option<u32> {
    if p.os_family != Some(OsFamily::Android) {
        return None;
    }
    p.os_version.as_deref().and_then(leading_integer)
}

/// Marketing name for a Windows `NT x.y` version token, for reporting.
/// Deprecation logic stays on the NT token itself.
pub fn windows_marketing_name(nt_token: &str) -> &str {
    match nt_token {
        "NT 5.0" => "2000",
        "NT 5.1" => "XP",
        "NT 5.2" => "XP x64",
        "NT 6.0" => "Vista",
        "NT 6.1" => "7",
        "NT 6.2" => "8",
        "NT 6.3" => "8.1",
        "NT 10.0" => "10/11",
        other => other,
    }
}

fn leading_integer(s: &str) -> Option<u32> {
    let digits: String = s.chars().take_while(|c| c.is_ascii_digit()).collect();
    if digits.is_empty() {
        None
    } else {
        // Saturate instead of failing on absurdly long digit runs.
        Some(digits.parse().unwrap_or(u32::MAX))
    }
}

fn first_paren_group(ua: &str) -> Option<String> {
    let start = ua.find('(')?;
    let inner = &ua[start + 1..];
    let mut depth = 1usize;
    for (i, c) in inner.char_indices() {
        match c {
            '(' => depth += 1,
            ')' => {
                depth -= 1;
                if depth == 0 {
                    return Some(inner[..i].trim().to_string());
                }
            }
            _ => {}
        }
    }
    // Unclosed group: take what is there.
    let rest = inner.trim();
    if rest.is_empty() {
        None
    } else {
        Some(rest.to_string())
    }
}

#[derive(Debug)]
struct Product {
    name: String,
    version: String,
}

/// `Name/version` tokens outside parenthesized groups, in order.
fn scan_products(ua: &str) -> Vec<Product> {
    let mut products = Vec::new();
    for tok in tokens_outside_parens(ua) {
        let tok = tok.trim_matches(|c| c == ';' || c == ',');
        if let Some((name, version)) = tok.split_once('/') {
            if !name.is_empty() {
                products.push(Product {
                    name: name.to_string(),
                    version: version.to_string(),
                });
            }
        }
    }
    products
}

fn scan_bare_tokens(ua: &str) -> Vec<String> {
    tokens_outside_parens(ua)
        .into_iter()
        .filter(|t| !t.contains('/'))
        .map(|t| t.trim_matches(|c| c == ';' || c == ',').to_string())
        .collect()
}

fn tokens_outside_parens(ua: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut depth = 0usize;
    let mut start: Option<usize> = None;
    for (i, c) in ua.char_indices() {
        match c {
            '(' => {
                if depth == 0 {
                    if let Some(s) = start.take() {
                        out.push(&ua[s..i]);
                    }
                }
                depth += 1;
            }
            ')' => depth = depth.saturating_sub(1),
            c if c.is_whitespace() => {
                if depth == 0 {
                    if let Some(s) = start.take() {
                        out.push(&ua[s..i]);
                    }
                }
            }
            _ => {
                if depth == 0 && start.is_none() {
                    start = Some(i);
                }
            }
        }
    }
    if let Some(s) = start {
        out.push(&ua[s..]);
    }
    out.into_iter().filter(|t| !t.is_empty()).collect()
}

const ENGINE_NAMES: &[&str] = &["AppleWebKit", "WebKit", "Gecko", "Trident", "Presto", "Blink"];

fn find_engine(products: &[Product], platform_segments: &[&str]) -> Option<String> {
    for p in products {
        if ENGINE_NAMES.iter().any(|e| p.name.eq_ignore_ascii_case(e)) {
            return Some(format!("{}/{}", p.name, p.version));
        }
    }
    // Trident lives inside the platform token on MSIE user-agents.
    for seg in platform_segments {
        if let Some((name, version)) = seg.split_once('/') {
            if ENGINE_NAMES.iter().any(|e| name.eq_ignore_ascii_case(e)) {
                return Some(format!("{name}/{version}"));
            }
        }
    }
    None
}

/// Product names that never identify the browser itself.
const NON_BROWSER_PRODUCTS: &[&str] = &[
    "Mozilla",
    "AppleWebKit",
    "WebKit",
    "Gecko",
    "Trident",
    "Presto",
    "Blink",
    "KHTML",
    "Version",
    "Safari",
    "Mobile",
];

fn detect_browser(
    products: &[Product],
    bare_tokens: &[String],
    platform_segments: &[&str],
) -> (Option<BrowserFamily>, Option<String>) {
    let find = |name: &str| -> Option<&Product> {
        products.iter().find(|p| p.name.eq_ignore_ascii_case(name))
    };

    for edge in ["Edg", "Edge", "EdgA", "EdgiOS"] {
        if let Some(p) = find(edge) {
            return (Some(BrowserFamily::Edge), Some(p.version.clone()));
        }
    }
    if let Some(p) = find("OPR") {
        return (Some(BrowserFamily::Opera), Some(p.version.clone()));
    }
    if let Some(p) = find("Opera") {
        let version = find("Version").map_or_else(|| p.version.clone(), |v| v.version.clone());
        return (Some(BrowserFamily::Opera), Some(version));
    }
    if let Some(p) = find("CriOS") {
        return (Some(BrowserFamily::ChromeMobile), Some(p.version.clone()));
    }
    if let Some(p) = find("Chrome") {
        let mobile = bare_tokens.iter().any(|t| t == "Mobile");
        let family = if mobile {
            BrowserFamily::ChromeMobile
        } else {
            BrowserFamily::Chrome
        };
        return (Some(family), Some(p.version.clone()));
    }
    if let Some(p) = find("FxiOS").or_else(|| find("Firefox")) {
        return (Some(BrowserFamily::Firefox), Some(p.version.clone()));
    }
    // MSIE advertises itself inside the platform token.
    for seg in platform_segments {
        if let Some(v) = seg.strip_prefix("MSIE ") {
            return (Some(BrowserFamily::Msie), Some(v.trim().to_string()));
        }
    }
    if platform_segments.iter().any(|s| *s == "Trident/7.0") {
        if let Some(rv) = platform_segments
            .iter()
            .find_map(|s| s.strip_prefix("rv:"))
        {
            return (Some(BrowserFamily::Msie), Some(rv.trim().to_string()));
        }
    }
    if find("Safari").is_some() {
        let version = find("Version").map(|v| v.version.clone());
        return (Some(BrowserFamily::Safari), version);
    }
    // First product that is not engine/compatibility machinery names the
    // client, e.g. curl/8.5.0 or Googlebot/2.1.
    if let Some(p) = products.iter().find(|p| {
        !NON_BROWSER_PRODUCTS
            .iter()
            .any(|n| p.name.eq_ignore_ascii_case(n))
    }) {
        return (
            Some(BrowserFamily::Other(p.name.clone())),
            Some(p.version.clone()),
        );
    }
    // Classic crawler pattern: "Mozilla/x.0 (compatible; Name/version; ...)".
    let mut segs = platform_segments.iter();
    while let Some(seg) = segs.next() {
        if seg.eq_ignore_ascii_case("compatible") {
            if let Some((name, version)) = segs.next().and_then(|s| s.split_once('/')) {
                if !name.is_empty() {
                    return (
                        Some(BrowserFamily::Other(name.trim().to_string())),
                        Some(version.trim().to_string()),
                    );
                }
            }
        }
    }
    (None, None)
}

fn detect_os(platform_segments: &[&str]) -> (Option<OsFamily>, Option<String>) {
    let mut windows: Option<Option<String>> = None;
    let mut macos: Option<Option<String>> = None;
    let mut ios: Option<Option<String>> = None;
    let mut android: Option<Option<String>> = None;
    let mut linux = false;
    let mut chromeos: Option<Option<String>> = None;

    for seg in platform_segments {
        if let Some(rest) = seg.strip_prefix("Windows NT ") {
            let v = rest.split_whitespace().next().unwrap_or("");
            windows = Some(Some(format!("NT {v}")));
        } else if *seg == "Windows" {
            windows.get_or_insert(None);
        } else if let Some(idx) = seg.find("Mac OS X") {
            let v = seg[idx + "Mac OS X".len()..].trim();
            if seg.contains("like Mac OS X") {
                // iOS: "CPU iPhone OS 16_6 like Mac OS X".
                let vi = seg
                    .split_whitespace()
                    .find(|t| t.chars().next().is_some_and(|c| c.is_ascii_digit()));
                ios = Some(vi.map(str::to_string));
            } else {
                macos = Some(if v.is_empty() { None } else { Some(v.to_string()) });
            }
        } else if *seg == "Macintosh" {
            macos.get_or_insert(None);
        } else if *seg == "iPhone" || *seg == "iPad" || *seg == "iPod" {
            ios.get_or_insert(None);
        } else if let Some(rest) = seg.strip_prefix("Android") {
            let v = rest.trim();
            let v = v.split_whitespace().next().unwrap_or("");
            android = Some(if v.is_empty() { None } else { Some(v.to_string()) });
        } else if let Some(rest) = seg.strip_prefix("CrOS ") {
            let v = rest
                .split_whitespace()
                .find(|t| t.chars().next().is_some_and(|c| c.is_ascii_digit()));
            chromeos = Some(v.map(str::to_string));
        } else if seg.starts_with("Linux") || *seg == "Ubuntu" {
            linux = true;
        }
    }

    if let Some(v) = android {
        return (Some(OsFamily::Android), v);
    }
    if let Some(v) = ios {
        return (Some(OsFamily::Ios), v);
    }
    if let Some(v) = windows {
        return (Some(OsFamily::Windows), v);
    }
    if let Some(v) = macos {
        return (Some(OsFamily::MacOs), v);
    }
    if let Some(v) = chromeos {
        return (Some(OsFamily::ChromeOs), v);
    }
    if linux {
        return (Some(OsFamily::Linux), None);
    }
    (None, None)
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAFARI_MAC: &str = "Mozilla/5.0 (Macintosh; Intel Mac OS X 10_15_7) \
        AppleWebKit/605.1.15 (KHTML, like Gecko) Version/26.3.1 Safari/605.1.15";
    const FIREFOX_47: &str =
        "Mozilla/5.0 (Windows NT 6.1; Win64; x64; rv:47.0) Gecko/20100101 Firefox/47.0";

    #[test]
    fn safari_on_mac() {
        let p = parse_user_agent(SAFARI_MAC);
        assert!(p.has_mozilla5_prefix);
        assert_eq!(
            p.platform_token.as_deref(),
            Some("Macintosh; Intel Mac OS X 10_15_7")
        );
        assert_eq!(p.browser_family, Some(BrowserFamily::Safari));
        assert_eq!(p.browser_major, Some(26));
        assert_eq!(p.browser_full_version.as_deref(), Some("26.3.1"));
        assert_eq!(p.os_family, Some(OsFamily::MacOs));
        assert_eq!(p.os_version.as_deref(), Some("10_15_7"));
        assert_eq!(p.engine_token.as_deref(), Some("AppleWebKit/605.1.15"));
    }

    #[test]
    fn firefox_on_windows7() {
        let p = parse_user_agent(FIREFOX_47);
        assert!(p.has_mozilla5_prefix);
        assert_eq!(p.browser_family, Some(BrowserFamily::Firefox));
        assert_eq!(p.browser_major, Some(47));
        assert_eq!(p.os_family, Some(OsFamily::Windows));
        assert_eq!(p.os_version.as_deref(), Some("NT 6.1"));
    }

    #[test]
    fn empty_string_yields_all_absent() {
        let p = parse_user_agent("");
        assert!(!p.has_mozilla5_prefix);
        assert_eq!(p.platform_token, None);
        assert_eq!(p.browser_family, None);
        assert_eq!(p.browser_major, None);
        assert_eq!(p.os_family, None);
        assert_eq!(p.engine_token, None);
    }

    #[test]
    fn android_major_extraction() {
        let p = parse_user_agent(
            "Mozilla/5.0 (Linux; Android 10; K) AppleWebKit/537.36 \
             (KHTML, like Gecko) Chrome/139.0.0.0 Mobile Safari/537.36",
        );
        assert_eq!(p.os_family, Some(OsFamily::Android));
        assert_eq!(extract_android_version(&p), Some(10));
        assert_eq!(p.browser_family, Some(BrowserFamily::ChromeMobile));

        let p = parse_user_agent(
            "Mozilla/5.0 (Linux; Android 4.4.2; SM-T230 Build/KOT49H) AppleWebKit/537.36 \
             (KHTML, like Gecko) Version/4.0 Chrome/30.0.0.0 Safari/537.36",
        );
        assert_eq!(extract_android_version(&p), Some(4));

        let p = parse_user_agent(SAFARI_MAC);
        assert_eq!(extract_android_version(&p), None);
    }

    #[test]
    fn prefix_flag_is_plain_starts_with() {
        assert!(parse_user_agent("Mozilla/5.00 (weird)").has_mozilla5_prefix);
        assert!(!has_mozilla5_prefix_token("Mozilla/5.00 (weird)"));
        assert!(has_mozilla5_prefix_token("Mozilla/5.0"));
        assert!(has_mozilla5_prefix_token("Mozilla/5.0 (X11; Linux x86_64)"));
        assert!(!has_mozilla5_prefix_token("mozilla/5.0 (X11)"));
        assert!(!has_mozilla5_prefix_token("curl/8.5.0"));
    }

    // Expected (family, major) pairs for a corpus of strings seen in real
    // traffic.
    #[test]
    fn fixture_corpus_families() {
        let cases: &[(&str, Option<BrowserFamily>, Option<u32>)] = &[
            (
                "Mozilla/5.0 (Windows NT 10.0; Win64; x64) AppleWebKit/537.36 \
                 (KHTML, like Gecko) Chrome/139.0.0.0 Safari/537.36",
                Some(BrowserFamily::Chrome),
                Some(139),
            ),
            (
                "Mozilla/5.0 (Windows NT 10.0; Win64; x64) AppleWebKit/537.36 \
                 (KHTML, like Gecko) Chrome/142.0.0.0 Safari/537.36 Edg/142.0.0.0",
                Some(BrowserFamily::Edge),
                Some(142),
            ),
            (
                "Mozilla/5.0 (X11; Linux x86_64) AppleWebKit/537.36 (KHTML, like Gecko) \
                 Chrome/120.0.0.0 Safari/537.36 OPR/106.0.0.0",
                Some(BrowserFamily::Opera),
                Some(106),
            ),
            (
                "Opera/9.80 (Windows NT 6.1) Presto/2.12.388 Version/12.16",
                Some(BrowserFamily::Opera),
                Some(12),
            ),
            (
                "Mozilla/5.0 (iPhone; CPU iPhone OS 17_5 like Mac OS X) AppleWebKit/605.1.15 \
                 (KHTML, like Gecko) CriOS/126.0.6478.54 Mobile/15E148 Safari/604.1",
                Some(BrowserFamily::ChromeMobile),
                Some(126),
            ),
            (
                "Mozilla/4.0 (compatible; MSIE 8.0; Windows NT 5.1; Trident/4.0)",
                Some(BrowserFamily::Msie),
                Some(8),
            ),
            (
                "Mozilla/5.0 (Windows NT 10.0; WOW64; Trident/7.0; rv:11.0) like Gecko",
                Some(BrowserFamily::Msie),
                Some(11),
            ),
            ("curl/8.5.0", Some(BrowserFamily::Other("curl".into())), Some(8)),
            (
                "Googlebot/2.1 (+http://www.google.com/bot.html)",
                Some(BrowserFamily::Other("Googlebot".into())),
                Some(2),
            ),
            (
                "Mozilla/5.0 (compatible; bingbot/2.0; +http://www.bing.com/bingbot.htm)",
                Some(BrowserFamily::Other("bingbot".into())),
                Some(2),
            ),
            (
                "Apache-CXF/3.5.8",
                Some(BrowserFamily::Other("Apache-CXF".into())),
                Some(3),
            ),
            (
                "check_http/v2.3.1 (monitoring-plugins 2.3.1)",
                Some(BrowserFamily::Other("check_http".into())),
                None,
            ),
            ("-", None, None),
            ("Mozilla/5.0", None, None),
        ];
        for (ua, family, major) in cases {
            let p = parse_user_agent(ua);
            assert_eq!(&p.browser_family, family, "family for {ua:?}");
            assert_eq!(&p.browser_major, major, "major for {ua:?}");
        }
    }

    #[test]
    fn os_detection() {
        let cases: &[(&str, Option<OsFamily>, Option<&str>)] = &[
            (
                "Mozilla/5.0 (X11; CrOS x86_64 14541.0.0) AppleWebKit/537.36 \
                 (KHTML, like Gecko) Chrome/139.0.0.0 Safari/537.36",
                Some(OsFamily::ChromeOs),
                Some("14541.0.0"),
            ),
            (
                "Mozilla/5.0 (X11; Linux x86_64) AppleWebKit/537.36 (KHTML, like Gecko) \
                 Chrome/139.0.0.0 Safari/537.36",
                Some(OsFamily::Linux),
                None,
            ),
            (
                "Mozilla/5.0 (iPad; CPU OS 16_6 like Mac OS X) AppleWebKit/605.1.15 \
                 (KHTML, like Gecko) Version/16.6 Mobile/15E148 Safari/604.1",
                Some(OsFamily::Ios),
                Some("16_6"),
            ),
            ("curl/8.5.0", None, None),
        ];
        for (ua, family, version) in cases {
            let p = parse_user_agent(ua);
            assert_eq!(&p.os_family, family, "os for {ua:?}");
            assert_eq!(p.os_version.as_deref(), *version, "os version for {ua:?}");
        }
    }

    #[test]
    fn windows_marketing_names() {
        assert_eq!(windows_marketing_name("NT 5.1"), "XP");
        assert_eq!(windows_marketing_name("NT 6.1"), "7");
        assert_eq!(windows_marketing_name("NT 10.0"), "10/11");
        assert_eq!(windows_marketing_name("NT 4.0"), "NT 4.0");
    }

    #[test]
    fn parse_is_deterministic_and_preserves_raw() {
        for ua in [SAFARI_MAC, FIREFOX_47, "", "curl/8.5.0", "(((("] {
            let a = parse_user_agent(ua);
            let b = parse_user_agent(&a.raw);
            assert_eq!(a, b);
            assert_eq!(a.raw, ua);
        }
    }
}
