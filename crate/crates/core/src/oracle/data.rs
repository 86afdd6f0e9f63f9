//! Payload lists and stack-trace signatures, with the built-in defaults.

use std::path::Path;

use regex::Regex;
use serde::Deserialize;

const SQLI: &str = include_str!("../../data/sqli.txt");
const XSS: &str = include_str!("../../data/xss.txt");
const STACK_TRACES: &str = include_str!("../../data/stacktrace_patterns.json");

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("cannot read {path}: {message}")]
    Read { path: String, message: String },
    #[error("{path} holds no entries")]
    Empty { path: String },
    #[error("pattern `{name}` does not compile: {message}")]
    Pattern { name: String, message: String },
}

/// One entry per non-blank line; lines starting with `#` are comments.
pub fn parse_lines(text: &str) -> Vec<String> {
    text.lines()
        .map(|l| l.trim_end_matches('\r'))
        .filter(|l| !l.trim().is_empty() && !l.starts_with('#'))
        .map(str::to_string)
        .collect()
}

pub fn load_lines(path: &Path) -> Result<Vec<String>, DataError> {
    let text = std::fs::read_to_string(path).map_err(|e| DataError::Read {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    let lines = parse_lines(&text);
    if lines.is_empty() {
        return Err(DataError::Empty {
            path: path.display().to_string(),
        });
    }
    Ok(lines)
}

pub fn default_sqli_payloads() -> Vec<String> {
    parse_lines(SQLI)
}

pub fn default_xss_payloads() -> Vec<String> {
    parse_lines(XSS)
}

/// Fills the `{sleep}`, `{sleep_hms}` and `{blob}` slots of a sleep payload.
pub fn render_sqli(template: &str, sleep_seconds: f64) -> String {
    let whole = sleep_seconds.ceil().max(0.0) as u64;
    let hms = format!("{}:{:02}:{:02}", whole / 3600, (whole / 60) % 60, whole % 60);
    let blob = (sleep_seconds.max(0.0) * 100_000_000.0).round() as u64;
    template
        .replace("{sleep_hms}", &hms)
        .replace("{sleep}", &format!("{sleep_seconds:.2}"))
        .replace("{blob}", &blob.to_string())
}

#[derive(Debug, Deserialize)]
struct NamedPattern {
    name: String,
    pattern: String,
}

/// Named regular expressions recognizing leaked stack traces.
#[derive(Debug, Clone)]
pub struct StackTracePatterns {
    patterns: Vec<(String, Regex)>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StackTraceMatch {
    pub pattern: String,
    pub excerpt: String,
}

impl StackTracePatterns {
    pub fn from_json(text: &str) -> Result<Self, DataError> {
        let named: Vec<NamedPattern> = serde_json::from_str(text).map_err(|e| DataError::Read {
            path: "stack-trace patterns".into(),
            message: e.to_string(),
        })?;
        let mut patterns = Vec::with_capacity(named.len());
        for p in named {
            let re = Regex::new(&p.pattern).map_err(|e| DataError::Pattern {
                name: p.name.clone(),
                message: e.to_string(),
            })?;
            patterns.push((p.name, re));
        }
        Ok(Self { patterns })
    }

    pub fn load(path: &Path) -> Result<Self, DataError> {
        let text = std::fs::read_to_string(path).map_err(|e| DataError::Read {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_json(&text)
    }

    pub fn len(&self) -> usize {
        self.patterns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patterns.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.patterns.iter().map(|(n, _)| n.as_str())
    }

    /// First pattern, in file order, that matches `body`.
    pub fn find(&self, body: &str) -> Option<StackTraceMatch> {
        self.patterns.iter().find_map(|(name, re)| {
            re.find(body).map(|m| StackTraceMatch {
                pattern: name.clone(),
                excerpt: m.as_str().chars().take(160).collect(),
            })
        })
    }
}

impl Default for StackTracePatterns {
    fn default() -> Self {
        Self::from_json(STACK_TRACES).expect("built-in stack-trace patterns compile")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_have_sixteen_payloads_each() {
        assert_eq!(default_sqli_payloads().len(), 16);
        assert_eq!(default_xss_payloads().len(), 16);
        assert_eq!(default_xss_payloads()[0], "<img src=x onerror=alert('XSS')>");
    }

    #[test]
    fn sleep_templates_render() {
        assert_eq!(render_sqli("' OR SLEEP({sleep})-- -", 5.0), "' OR SLEEP(5.00)-- -");
        assert_eq!(
            render_sqli("'; WAITFOR DELAY '{sleep_hms}'-- -", 5.0),
            "'; WAITFOR DELAY '0:00:05'-- -"
        );
        assert!(render_sqli("RANDOMBLOB({blob})", 5.0).contains("500000000"));
    }

    #[test]
    fn comments_and_blank_lines_are_skipped() {
        assert_eq!(parse_lines("# c\n\na\r\n b\n"), vec!["a", " b"]);
    }

    #[test]
    fn plain_error_is_not_a_trace() {
        let p = StackTracePatterns::default();
        assert!(p.find("internal error").is_none());
        assert!(p.find(r#"{"message":"Internal Server Error","status":500}"#).is_none());
    }
}
