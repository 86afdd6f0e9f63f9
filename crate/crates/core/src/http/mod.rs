//! HTTP actions, executed calls, test cases and the executor that runs them.

mod executor;
mod transport;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::schema::EndpointId;

pub use executor::{verify_statuses, verify_timings, Executor, ExecutorConfig, ExecutorError, TestRun};
pub use transport::{
    HttpTransport, PreparedRequest, RawResponse, Transport, TransportError, TransportOptions,
};

/// Expected status of a call: an exact code or a class such as `2xx`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StatusExpectation {
    Exact(u16),
    Class(u8),
}

impl StatusExpectation {
    pub fn matches(self, status: u16) -> bool {
        match self {
            StatusExpectation::Exact(code) => code == status,
            StatusExpectation::Class(class) => status / 100 == class as u16,
        }
    }
}

impl fmt::Display for StatusExpectation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StatusExpectation::Exact(code) => write!(f, "{code}"),
            StatusExpectation::Class(class) => write!(f, "{class}xx"),
        }
    }
}

impl Serialize for StatusExpectation {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            StatusExpectation::Exact(code) => s.serialize_u16(*code),
            StatusExpectation::Class(_) => s.collect_str(self),
        }
    }
}

impl<'de> Deserialize<'de> for StatusExpectation {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Code(u16),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Code(c) => Ok(StatusExpectation::Exact(c)),
            Raw::Text(t) => {
                let t = t.trim();
                if let Some(class) = t.strip_suffix("xx").or_else(|| t.strip_suffix("XX")) {
                    class
                        .parse::<u8>()
                        .ok()
                        .filter(|c| (1..=5).contains(c))
                        .map(StatusExpectation::Class)
                        .ok_or_else(|| serde::de::Error::custom(format!("bad status class `{t}`")))
                } else {
                    t.parse::<u16>()
                        .map(StatusExpectation::Exact)
                        .map_err(serde::de::Error::custom)
                }
            }
        }
    }
}

/// Wall-clock assertion attached to a call, used by timing-based oracles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum TimingExpectation {
    LessThanMs(f64),
    GreaterThanMs(f64),
}

impl TimingExpectation {
    pub fn holds(self, duration_ms: f64) -> bool {
        match self {
            TimingExpectation::LessThanMs(limit) => duration_ms < limit,
            TimingExpectation::GreaterThanMs(limit) => duration_ms > limit,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", tag = "kind", content = "value")]
pub enum BodyContent {
    Json(serde_json::Value),
    Form(Vec<(String, String)>),
    Text(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Body {
    pub media_type: String,
    pub content: BodyContent,
}

impl Body {
    pub fn json(value: serde_json::Value) -> Self {
        Self {
            media_type: "application/json".into(),
            content: BodyContent::Json(value),
        }
    }

    pub fn render(&self) -> String {
        match &self.content {
            BodyContent::Json(v) => v.to_string(),
            BodyContent::Form(fields) => url::form_urlencoded::Serializer::new(String::new())
                .extend_pairs(fields.iter())
                .finish(),
            BodyContent::Text(t) => t.clone(),
        }
    }

    /// Top-level field value as text, for JSON objects and forms.
    pub fn field(&self, name: &str) -> Option<String> {
        match &self.content {
            BodyContent::Json(v) => v.get(name).map(scalar_text),
            BodyContent::Form(fields) => fields
                .iter()
                .find(|(k, _)| k == name)
                .map(|(_, v)| v.clone()),
            BodyContent::Text(_) => None,
        }
    }

    /// Sets a field addressed by a dotted path. Returns false when the
    /// path does not exist on this body.
    pub fn set_field(&mut self, path: &str, value: &str) -> bool {
        match &mut self.content {
            BodyContent::Json(v) => {
                let mut cur = v;
                let parts: Vec<&str> = path.split('.').collect();
                for part in &parts[..parts.len() - 1] {
                    match cur.get_mut(*part) {
                        Some(next) => cur = next,
                        None => return false,
                    }
                }
                let Some(obj) = cur.as_object_mut() else {
                    return false;
                };
                let last = parts[parts.len() - 1];
                let Some(slot) = obj.get_mut(last) else {
                    return false;
                };
                *slot = match slot {
                    serde_json::Value::Number(_) => value
                        .parse::<i64>()
                        .map(serde_json::Value::from)
                        .or_else(|_| value.parse::<f64>().map(serde_json::Value::from))
                        .unwrap_or_else(|_| serde_json::Value::String(value.to_string())),
                    _ => serde_json::Value::String(value.to_string()),
                };
                true
            }
            BodyContent::Form(fields) => match fields.iter_mut().find(|(k, _)| k == path) {
                Some((_, v)) => {
                    *v = value.to_string();
                    true
                }
                None => false,
            },
            BodyContent::Text(_) => false,
        }
    }
}

pub(crate) fn scalar_text(v: &serde_json::Value) -> String {
    match v {
        serde_json::Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// One HTTP call on a schema endpoint, made as a named identity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct HttpAction {
    pub endpoint: EndpointId,
    pub identity: String,
    #[serde(default)]
    pub path_args: BTreeMap<String, String>,
    #[serde(default)]
    pub query: Vec<(String, String)>,
    #[serde(default)]
    pub headers: Vec<(String, String)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub body: Option<Body>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected_status: Option<StatusExpectation>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timing: Option<TimingExpectation>,
}

impl HttpAction {
    pub fn new(endpoint: EndpointId, identity: impl Into<String>) -> Self {
        Self {
            endpoint,
            identity: identity.into(),
            path_args: BTreeMap::new(),
            query: Vec::new(),
            headers: Vec::new(),
            body: None,
            expected_status: None,
            timing: None,
        }
    }

    pub fn with_arg(mut self, name: &str, value: impl Into<String>) -> Self {
        self.path_args.insert(name.to_string(), value.into());
        self
    }

    pub fn expecting(mut self, status: StatusExpectation) -> Self {
        self.expected_status = Some(status);
        self
    }

    /// Concrete path with placeholders substituted (percent-encoded).
    pub fn concrete_path(&self) -> String {
        let mut path = self.endpoint.path.clone();
        for (name, value) in &self.path_args {
            let encoded: String =
                url::form_urlencoded::byte_serialize(value.as_bytes()).collect();
            path = path.replace(&format!("{{{name}}}"), &encoded.replace('+', "%20"));
        }
        path
    }

    pub fn query_value(&self, name: &str) -> Option<&str> {
        self.query
            .iter()
            .find(|(k, _)| k == name)
            .map(|(_, v)| v.as_str())
    }

    pub fn set_query(&mut self, name: &str, value: &str) {
        match self.query.iter_mut().find(|(k, _)| k == name) {
            Some((_, v)) => *v = value.to_string(),
            None => self.query.push((name.to_string(), value.to_string())),
        }
    }

    pub fn header_value(&self, name: &str) -> Option<&str> {
        self.headers
            .iter()
            .find(|(k, _)| k.eq_ignore_ascii_case(name))
            .map(|(_, v)| v.as_str())
    }

    pub fn set_header(&mut self, name: &str, value: &str) {
        match self
            .headers
            .iter_mut()
            .find(|(k, _)| k.eq_ignore_ascii_case(name))
        {
            Some((_, v)) => *v = value.to_string(),
            None => self.headers.push((name.to_string(), value.to_string())),
        }
    }

    pub fn slot_exists(&self, slot: &Slot) -> bool {
        match slot {
            Slot::PathArg(name) => self.endpoint.placeholders().contains(name),
            Slot::QueryParam(name) => self.query_value(name).is_some(),
            Slot::BodyField(path) => self
                .body
                .as_ref()
                .is_some_and(|b| b.clone().set_field(path, "")),
        }
    }

    pub fn set_slot(&mut self, slot: &Slot, value: &str) -> bool {
        match slot {
            Slot::PathArg(name) => {
                self.path_args.insert(name.clone(), value.to_string());
                true
            }
            Slot::QueryParam(name) => {
                self.set_query(name, value);
                true
            }
            Slot::BodyField(path) => self.body.as_mut().is_some_and(|b| b.set_field(path, value)),
        }
    }
}

impl fmt::Display for HttpAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}) {} {}", self.identity, self.endpoint.verb, self.concrete_path())
    }
}

/// Where a dynamic value is read from in a source response.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", tag = "from", content = "field")]
pub enum Extractor {
    /// Last path segment of the `Location` header.
    LocationHeader,
    /// Dotted path into a JSON response body.
    BodyField(String),
}

/// Where an extracted value is written in a target action.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", tag = "slot", content = "name")]
pub enum Slot {
    PathArg(String),
    QueryParam(String),
    BodyField(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Binding {
    pub source_call_index: usize,
    pub extractor: Extractor,
    pub target_call_index: usize,
    pub target_slot: Slot,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", tag = "kind", content = "oracle")]
pub enum Provenance {
    BaseFuzzing,
    /// 0 marks tests created while synthesizing 403 scenarios.
    SecuritySynthesis(u16),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct TestCase {
    pub calls: Vec<HttpAction>,
    #[serde(default)]
    pub bindings: Vec<Binding>,
    pub provenance: Provenance,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum TestCaseError {
    #[error("a test case needs at least one call")]
    Empty,
    #[error("binding {0} does not point backwards inside the test")]
    BindingOrder(usize),
    #[error("binding {0} targets a slot missing on call {1}")]
    MissingSlot(usize, usize),
}

impl TestCase {
    pub fn new(calls: Vec<HttpAction>, provenance: Provenance) -> Self {
        Self {
            calls,
            bindings: Vec::new(),
            provenance,
        }
    }

    pub fn validate(&self) -> Result<(), TestCaseError> {
        if self.calls.is_empty() {
            return Err(TestCaseError::Empty);
        }
        for (i, b) in self.bindings.iter().enumerate() {
            if b.source_call_index >= b.target_call_index || b.target_call_index >= self.calls.len()
            {
                return Err(TestCaseError::BindingOrder(i));
            }
            if !self.calls[b.target_call_index].slot_exists(&b.target_slot) {
                return Err(TestCaseError::MissingSlot(i, b.target_call_index));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.calls.len()
    }

    pub fn is_empty(&self) -> bool {
        self.calls.is_empty()
    }

    pub fn last(&self) -> &HttpAction {
        self.calls.last().expect("test cases are never empty")
    }

    pub fn last_mut(&mut self) -> &mut HttpAction {
        self.calls.last_mut().expect("test cases are never empty")
    }

    pub fn bindings_into(&self, target: usize) -> impl Iterator<Item = &Binding> {
        self.bindings
            .iter()
            .filter(move |b| b.target_call_index == target)
    }
}

/// One executed action with what the server answered.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ExecutedCall {
    /// The action as sent, with bindings applied.
    pub action: HttpAction,
    pub status: u16,
    #[serde(default)]
    pub response_headers: BTreeMap<String, String>,
    #[serde(default)]
    pub response_body: String,
    #[serde(default)]
    pub body_truncated: bool,
    pub duration_ms: f64,
    #[serde(default)]
    pub timed_out: bool,
}

impl ExecutedCall {
    pub fn is_success(&self) -> bool {
        !self.timed_out && (200..300).contains(&self.status)
    }

    pub fn header(&self, name: &str) -> Option<&str> {
        self.response_headers
            .get(&name.to_ascii_lowercase())
            .map(String::as_str)
    }

    /// Reads a dynamic value for a binding.
    pub fn extract(&self, extractor: &Extractor) -> Option<String> {
        match extractor {
            Extractor::LocationHeader => {
                let loc = self.header("location")?;
                let path = loc.split(['?', '#']).next().unwrap_or(loc);
                let seg = path.trim_end_matches('/').rsplit('/').next()?;
                (!seg.is_empty()).then(|| {
                    url::form_urlencoded::parse(format!("x={seg}").as_bytes())
                        .next()
                        .map(|(_, v)| v.into_owned())
                        .unwrap_or_else(|| seg.to_string())
                })
            }
            Extractor::BodyField(path) => {
                let json: serde_json::Value = serde_json::from_str(&self.response_body).ok()?;
                let mut cur = &json;
                for part in path.split('.') {
                    cur = cur.get(part)?;
                }
                match cur {
                    serde_json::Value::Null
                    | serde_json::Value::Array(_)
                    | serde_json::Value::Object(_) => None,
                    v => Some(scalar_text(v)),
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::Verb;

    #[test]
    fn status_expectation_matching() {
        assert!(StatusExpectation::Class(2).matches(204));
        assert!(!StatusExpectation::Class(2).matches(301));
        assert!(StatusExpectation::Exact(403).matches(403));
        assert!(!StatusExpectation::Exact(403).matches(401));
    }

    #[test]
    fn status_expectation_serde() {
        let v: Vec<StatusExpectation> = serde_json::from_str(r#"[201, "2xx", "404"]"#).unwrap();
        assert_eq!(
            v,
            vec![
                StatusExpectation::Exact(201),
                StatusExpectation::Class(2),
                StatusExpectation::Exact(404)
            ]
        );
        assert_eq!(serde_json::to_string(&v).unwrap(), r#"[201,"2xx",404]"#);
        assert!(serde_json::from_str::<StatusExpectation>(r#""9xx""#).is_err());
    }

    #[test]
    fn concrete_path_substitutes_and_encodes() {
        let a = HttpAction::new(EndpointId::new(Verb::Get, "/items/{id}/tags/{tag}"), "FOO")
            .with_arg("id", "42")
            .with_arg("tag", "a b/c");
        assert_eq!(a.concrete_path(), "/items/42/tags/a%20b%2Fc");
    }

    #[test]
    fn location_extraction_takes_last_segment() {
        let mut call = ExecutedCall {
            action: HttpAction::new(EndpointId::new(Verb::Post, "/items"), "FOO"),
            status: 201,
            response_headers: BTreeMap::from([("location".into(), "/items/42".into())]),
            response_body: r#"{"id": 7, "nested": {"key": "x"}}"#.into(),
            body_truncated: false,
            duration_ms: 1.0,
            timed_out: false,
        };
        assert_eq!(call.extract(&Extractor::LocationHeader).as_deref(), Some("42"));
        assert_eq!(call.extract(&Extractor::BodyField("id".into())).as_deref(), Some("7"));
        assert_eq!(
            call.extract(&Extractor::BodyField("nested.key".into())).as_deref(),
            Some("x")
        );
        assert_eq!(call.extract(&Extractor::BodyField("missing".into())), None);
        call.response_headers
            .insert("location".into(), "http://h/items/99?x=1".into());
        assert_eq!(call.extract(&Extractor::LocationHeader).as_deref(), Some("99"));
    }

    #[test]
    fn body_field_updates_keep_numbers_numeric() {
        let mut b = Body::json(serde_json::json!({"id": 1, "name": "x", "inner": {"k": "v"}}));
        assert!(b.set_field("id", "42"));
        assert!(b.set_field("inner.k", "w"));
        assert!(!b.set_field("nope", "1"));
        assert_eq!(b.render(), r#"{"id":42,"name":"x","inner":{"k":"w"}}"#);
    }

    #[test]
    fn validate_rejects_forward_bindings() {
        let get = HttpAction::new(EndpointId::new(Verb::Get, "/items/{id}"), "FOO").with_arg("id", "1");
        let post = HttpAction::new(EndpointId::new(Verb::Post, "/items"), "FOO");
        let mut t = TestCase::new(vec![post, get], Provenance::BaseFuzzing);
        t.bindings.push(Binding {
            source_call_index: 1,
            extractor: Extractor::LocationHeader,
            target_call_index: 0,
            target_slot: Slot::PathArg("id".into()),
        });
        assert_eq!(t.validate(), Err(TestCaseError::BindingOrder(0)));
        t.bindings[0].source_call_index = 0;
        t.bindings[0].target_call_index = 1;
        assert_eq!(t.validate(), Ok(()));
        assert_eq!(
            TestCase::new(vec![], Provenance::BaseFuzzing).validate(),
            Err(TestCaseError::Empty)
        );
    }
}
