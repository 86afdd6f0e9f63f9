//! Normalized view of an OpenAPI v3 document.
//!
//! The loader keeps only what the fuzzer and the oracles need: the declared
//! operations, their inputs with constraints, declared response codes, and
//! the URL path hierarchy used for ancestor lookups.

mod load;
mod tree;

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use regex::Regex;
use serde::{Deserialize, Serialize};

pub use load::{load_schema, load_schema_from_source, SchemaFormat};
pub use tree::PathNode;

#[derive(Debug, thiserror::Error)]
pub enum SchemaError {
    #[error("cannot parse schema document at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("unsupported OpenAPI version `{0}`, only 3.x documents are accepted")]
    UnsupportedVersion(String),
    #[error("external reference `{0}` is not supported, only internal `#/...` references resolve")]
    ExternalRef(String),
    #[error("unresolvable reference `{0}`")]
    DanglingRef(String),
    #[error("invalid schema at {location}: {message}")]
    Invalid { location: String, message: String },
    #[error("path `{0}` is not declared in the schema")]
    UndeclaredPath(String),
    #[error("cannot read schema source `{source_name}`: {message}")]
    Source { source_name: String, message: String },
}

/// HTTP methods an endpoint can be declared with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Verb {
    Get,
    Post,
    Put,
    Patch,
    Delete,
    Head,
    Options,
}

impl Verb {
    pub const ALL: [Verb; 7] = [
        Verb::Get,
        Verb::Post,
        Verb::Put,
        Verb::Patch,
        Verb::Delete,
        Verb::Head,
        Verb::Options,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Verb::Get => "GET",
            Verb::Post => "POST",
            Verb::Put => "PUT",
            Verb::Patch => "PATCH",
            Verb::Delete => "DELETE",
            Verb::Head => "HEAD",
            Verb::Options => "OPTIONS",
        }
    }

    /// PUT, PATCH and DELETE: the verbs that alter an existing resource.
    pub fn is_modification(self) -> bool {
        matches!(self, Verb::Put | Verb::Patch | Verb::Delete)
    }

    pub fn may_store_input(self) -> bool {
        matches!(self, Verb::Post | Verb::Put | Verb::Patch)
    }
}

impl fmt::Display for Verb {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Verb {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let upper = s.trim().to_ascii_uppercase();
        Verb::ALL
            .into_iter()
            .find(|v| v.as_str() == upper)
            .ok_or_else(|| format!("unknown HTTP verb `{s}`"))
    }
}

/// One schema operation: a verb on a path template.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EndpointId {
    pub verb: Verb,
    pub path: String,
}

impl EndpointId {
    pub fn new(verb: Verb, path: impl Into<String>) -> Self {
        Self {
            verb,
            path: path.into(),
        }
    }

    /// Placeholder names in order of appearance.
    pub fn placeholders(&self) -> Vec<String> {
        path_placeholders(&self.path)
    }
}

impl fmt::Display for EndpointId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.verb, self.path)
    }
}

pub fn path_placeholders(path: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut rest = path;
    while let Some(start) = rest.find('{') {
        let Some(len) = rest[start..].find('}') else {
            break;
        };
        out.push(rest[start + 1..start + len].to_string());
        rest = &rest[start + len + 1..];
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum ParamLocation {
    Path,
    Query,
    Header,
    BodyField,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum ValueKind {
    String,
    Integer,
    Number,
    Boolean,
    Array,
    Object,
}

/// Input constraints as declared in the schema.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Constraints {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min_length: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_length: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pattern: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub enum_values: Vec<serde_json::Value>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub minimum: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub maximum: Option<f64>,
}

impl Constraints {
    pub fn is_empty(&self) -> bool {
        *self == Constraints::default()
    }

    /// Whether `value` would be accepted as a string input.
    pub fn accepts_str(&self, value: &str) -> bool {
        let len = value.chars().count();
        if self.min_length.is_some_and(|min| len < min) {
            return false;
        }
        if self.max_length.is_some_and(|max| len > max) {
            return false;
        }
        if !self.enum_values.is_empty()
            && !self
                .enum_values
                .iter()
                .any(|e| e.as_str().is_some_and(|s| s == value))
        {
            return false;
        }
        if let Some(pattern) = &self.pattern {
            match Regex::new(pattern) {
                Ok(re) => {
                    if !re.is_match(value) {
                        return false;
                    }
                }
                Err(_) => return false,
            }
        }
        true
    }

    pub fn accepts_number(&self, value: f64) -> bool {
        !(self.minimum.is_some_and(|m| value < m) || self.maximum.is_some_and(|m| value > m))
    }

    /// Bounds that contradict each other, if any.
    pub(crate) fn inconsistency(&self) -> Option<String> {
        if let (Some(min), Some(max)) = (self.min_length, self.max_length) {
            if min > max {
                return Some(format!("minLength {min} exceeds maxLength {max}"));
            }
        }
        if let (Some(min), Some(max)) = (self.minimum, self.maximum) {
            if min > max {
                return Some(format!("minimum {min} exceeds maximum {max}"));
            }
        }
        None
    }
}

/// Structured value schema for request bodies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ValueSchema {
    pub kind: ValueKind,
    #[serde(default, skip_serializing_if = "Constraints::is_empty")]
    pub constraints: Constraints,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub properties: Vec<(String, ValueSchema)>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub required: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub items: Option<Box<ValueSchema>>,
}

impl ValueSchema {
    pub fn scalar(kind: ValueKind) -> Self {
        Self {
            kind,
            constraints: Constraints::default(),
            properties: Vec::new(),
            required: Vec::new(),
            items: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ParamSpec {
    pub name: String,
    pub location: ParamLocation,
    pub value_kind: ValueKind,
    #[serde(default)]
    pub constraints: Constraints,
    pub required: bool,
    /// Nested structure for object/array body fields.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schema: Option<ValueSchema>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RequestBodySpec {
    pub media_type: String,
    pub schema: ValueSchema,
    pub required: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct EndpointSpec {
    pub id: EndpointId,
    pub parameters: Vec<ParamSpec>,
    pub body: Option<RequestBodySpec>,
    pub declared_responses: BTreeSet<u16>,
}

impl EndpointSpec {
    pub fn param(&self, location: ParamLocation, name: &str) -> Option<&ParamSpec> {
        self.parameters
            .iter()
            .find(|p| p.location == location && p.name == name)
    }

    pub fn params_at(&self, location: ParamLocation) -> impl Iterator<Item = &ParamSpec> {
        self.parameters.iter().filter(move |p| p.location == location)
    }
}

/// Loaded schema. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct SchemaModel {
    endpoints: Vec<EndpointSpec>,
    nodes: Vec<PathNode>,
    warnings: Vec<String>,
    source: String,
}

impl SchemaModel {
    pub(crate) fn new(endpoints: Vec<EndpointSpec>, warnings: Vec<String>) -> Self {
        let nodes = tree::build(&endpoints);
        Self {
            endpoints,
            nodes,
            warnings,
            source: String::new(),
        }
    }

    pub fn with_source(mut self, source: impl Into<String>) -> Self {
        self.source = source.into();
        self
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn endpoints(&self) -> &[EndpointSpec] {
        &self.endpoints
    }

    pub fn endpoint(&self, id: &EndpointId) -> Option<&EndpointSpec> {
        self.endpoints.iter().find(|e| &e.id == id)
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn is_empty(&self) -> bool {
        self.endpoints.is_empty()
    }

    /// Declared path templates in declaration order.
    pub fn paths(&self) -> Vec<&str> {
        let mut seen = Vec::<&str>::new();
        for e in &self.endpoints {
            if !seen.contains(&e.id.path.as_str()) {
                seen.push(&e.id.path);
            }
        }
        seen
    }

    pub fn path_nodes(&self) -> &[PathNode] {
        &self.nodes
    }

    pub fn node(&self, path: &str) -> Option<&PathNode> {
        self.nodes.iter().find(|n| n.template == path)
    }

    pub fn declared_verbs(&self, path: &str) -> Vec<Verb> {
        self.node(path).map(|n| n.endpoints.clone()).unwrap_or_default()
    }

    pub fn is_declared(&self, verb: Verb, path: &str) -> bool {
        self.declared_verbs(path).contains(&verb)
    }

    /// GET endpoint on the declared ancestor closest to the root, if any.
    pub fn top_get_ancestor(&self, path: &str) -> Result<Option<EndpointId>, SchemaError> {
        if self.node(path).is_none() {
            return Err(SchemaError::UndeclaredPath(path.to_string()));
        }
        Ok(tree::ancestors(path)
            .into_iter()
            .find(|a| self.is_declared(Verb::Get, a))
            .map(|a| EndpointId::new(Verb::Get, a)))
    }

    /// Verbs advertised by an `Allow` header that the schema does not declare
    /// on `path`. OPTIONS and HEAD are never reported.
    pub fn undeclared_verbs(&self, path: &str, allow: &[Verb]) -> Vec<Verb> {
        let declared = self.declared_verbs(path);
        let mut out = Vec::new();
        for v in allow {
            if matches!(v, Verb::Options | Verb::Head) || declared.contains(v) || out.contains(v) {
                continue;
            }
            out.push(*v);
        }
        out
    }
}

/// Parses an `Allow` header value, ignoring tokens that are not known verbs.
pub fn parse_allow_header(value: &str) -> Vec<Verb> {
    value
        .split(',')
        .filter_map(|t| t.trim().parse::<Verb>().ok())
        .collect()
}
