use std::collections::BTreeSet;
use std::path::Path;

use serde_json::Value;

use super::{
    path_placeholders, Constraints, EndpointId, EndpointSpec, ParamLocation, ParamSpec,
    RequestBodySpec, SchemaError, SchemaModel, ValueKind, ValueSchema, Verb,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SchemaFormat {
    Json,
    Yaml,
}

const MAX_REF_DEPTH: usize = 32;

/// Parses an OpenAPI v3 document.
pub fn load_schema(document: &[u8], format: SchemaFormat) -> Result<SchemaModel, SchemaError> {
    let root = parse_document(document, format)?;
    Loader::new(&root).run()
}

/// Loads a schema from a local file or an HTTP(S) URL. The format is
/// inferred from the extension; anything that is not `.yaml`/`.yml` is
/// tried as JSON first.
pub fn load_schema_from_source(source: &str) -> Result<SchemaModel, SchemaError> {
    let source_err = |message: String| SchemaError::Source {
        source_name: source.to_string(),
        message,
    };
    let bytes = if source.starts_with("http://") || source.starts_with("https://") {
        let resp = reqwest::blocking::get(source).map_err(|e| source_err(e.to_string()))?;
        if !resp.status().is_success() {
            return Err(source_err(format!("HTTP status {}", resp.status())));
        }
        resp.bytes()
            .map_err(|e| source_err(e.to_string()))?
            .to_vec()
    } else {
        std::fs::read(Path::new(source)).map_err(|e| source_err(e.to_string()))?
    };
    let lower = source.to_ascii_lowercase();
    let model = if lower.ends_with(".yaml") || lower.ends_with(".yml") {
        load_schema(&bytes, SchemaFormat::Yaml)?
    } else {
        match load_schema(&bytes, SchemaFormat::Json) {
            Err(SchemaError::Parse { .. }) => load_schema(&bytes, SchemaFormat::Yaml)?,
            other => other?,
        }
    };
    Ok(model.with_source(source))
}

fn parse_document(document: &[u8], format: SchemaFormat) -> Result<Value, SchemaError> {
    match format {
        SchemaFormat::Json => serde_json::from_slice(document).map_err(|e| SchemaError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        }),
        SchemaFormat::Yaml => {
            let yaml: serde_yaml::Value =
                serde_yaml::from_slice(document).map_err(|e| {
                    let (line, column) = e
                        .location()
                        .map(|l| (l.line(), l.column()))
                        .unwrap_or((0, 0));
                    SchemaError::Parse {
                        line,
                        column,
                        message: e.to_string(),
                    }
                })?;
            Ok(yaml_to_json(yaml))
        }
    }
}

/// YAML allows non-string keys (`200:` in responses); JSON does not.
pub(crate) fn yaml_to_json(v: serde_yaml::Value) -> Value {
    use serde_yaml::Value as Y;
    match v {
        Y::Null => Value::Null,
        Y::Bool(b) => Value::Bool(b),
        Y::Number(n) => {
            if let Some(i) = n.as_i64() {
                Value::from(i)
            } else if let Some(u) = n.as_u64() {
                Value::from(u)
            } else {
                n.as_f64()
                    .and_then(serde_json::Number::from_f64)
                    .map(Value::Number)
                    .unwrap_or(Value::Null)
            }
        }
        Y::String(s) => Value::String(s),
        Y::Sequence(seq) => Value::Array(seq.into_iter().map(yaml_to_json).collect()),
        Y::Mapping(map) => {
            let mut out = serde_json::Map::new();
            for (k, v) in map {
                let key = match k {
                    Y::String(s) => s,
                    Y::Number(n) => n.to_string(),
                    Y::Bool(b) => b.to_string(),
                    other => serde_yaml::to_string(&other)
                        .unwrap_or_default()
                        .trim()
                        .to_string(),
                };
                out.insert(key, yaml_to_json(v));
            }
            Value::Object(out)
        }
        Y::Tagged(t) => yaml_to_json(t.value),
    }
}

struct Loader<'a> {
    root: &'a Value,
    warnings: Vec<String>,
}

impl<'a> Loader<'a> {
    fn new(root: &'a Value) -> Self {
        Self {
            root,
            warnings: Vec::new(),
        }
    }

    fn run(mut self) -> Result<SchemaModel, SchemaError> {
        let version = if let Some(v) = self.root.get("openapi") {
            v.as_str().map(str::to_string).unwrap_or_else(|| v.to_string())
        } else if let Some(v) = self.root.get("swagger") {
            return Err(SchemaError::UnsupportedVersion(
                v.as_str().map(str::to_string).unwrap_or_else(|| v.to_string()),
            ));
        } else {
            return Err(SchemaError::Invalid {
                location: "/".into(),
                message: "missing `openapi` version field".into(),
            });
        };
        if !version.starts_with("3.") {
            return Err(SchemaError::UnsupportedVersion(version));
        }

        let mut endpoints = Vec::new();
        let paths = self.root.get("paths").and_then(Value::as_object);
        match paths {
            Some(paths) if !paths.is_empty() => {
                for (path, item) in paths {
                    self.load_path(path, item, &mut endpoints)?;
                }
            }
            _ => self.warnings.push("empty schema".into()),
        }
        Ok(SchemaModel::new(endpoints, self.warnings))
    }

    fn resolve(&self, mut v: &'a Value) -> Result<&'a Value, SchemaError> {
        for _ in 0..MAX_REF_DEPTH {
            let Some(r) = v.get("$ref").and_then(Value::as_str) else {
                return Ok(v);
            };
            let Some(pointer) = r.strip_prefix('#') else {
                return Err(SchemaError::ExternalRef(r.to_string()));
            };
            v = self
                .root
                .pointer(pointer)
                .ok_or_else(|| SchemaError::DanglingRef(r.to_string()))?;
        }
        Err(SchemaError::DanglingRef("reference chain too deep".into()))
    }

    fn load_path(
        &mut self,
        path: &str,
        item: &'a Value,
        out: &mut Vec<EndpointSpec>,
    ) -> Result<(), SchemaError> {
        let location = format!("/paths/{path}");
        if !path.starts_with('/') {
            return Err(SchemaError::Invalid {
                location,
                message: "path must begin with `/`".into(),
            });
        }
        let placeholders = path_placeholders(path);
        for (i, p) in placeholders.iter().enumerate() {
            if placeholders[..i].contains(p) {
                return Err(SchemaError::Invalid {
                    location,
                    message: format!("placeholder `{p}` appears twice"),
                });
            }
        }
        let item = self.resolve(item)?;
        let shared = item
            .get("parameters")
            .and_then(Value::as_array)
            .map(Vec::as_slice)
            .unwrap_or(&[]);
        let Some(ops) = item.as_object() else {
            return Ok(());
        };
        for (key, op) in ops {
            let verb = match key.parse::<Verb>() {
                Ok(v) => v,
                Err(_) => {
                    if key == "trace" {
                        self.warnings
                            .push(format!("{location}: TRACE operations are ignored"));
                    }
                    continue;
                }
            };
            let id = EndpointId::new(verb, path);
            let spec = self.load_operation(&id, &placeholders, shared, op)?;
            out.push(spec);
        }
        Ok(())
    }

    fn load_operation(
        &mut self,
        id: &EndpointId,
        placeholders: &[String],
        shared: &'a [Value],
        op: &'a Value,
    ) -> Result<EndpointSpec, SchemaError> {
        let location = format!("{id}");
        let mut params: Vec<ParamSpec> = Vec::new();
        let own = op
            .get("parameters")
            .and_then(Value::as_array)
            .map(Vec::as_slice)
            .unwrap_or(&[]);
        for raw in shared.iter().chain(own.iter()) {
            let p = self.resolve(raw)?;
            let Some(spec) = self.load_parameter(&location, p)? else {
                continue;
            };
            // operation-level parameters override path-level ones
            params.retain(|q| !(q.name == spec.name && q.location == spec.location));
            params.push(spec);
        }
        for ph in placeholders {
            if !params
                .iter()
                .any(|p| p.location == ParamLocation::Path && &p.name == ph)
            {
                self.warnings.push(format!(
                    "{location}: placeholder `{ph}` has no path parameter, treating it as a string"
                ));
                params.push(ParamSpec {
                    name: ph.clone(),
                    location: ParamLocation::Path,
                    value_kind: ValueKind::String,
                    constraints: Constraints::default(),
                    required: true,
                    schema: None,
                });
            }
        }

        let mut body = None;
        if let Some(rb) = op.get("requestBody") {
            let rb = self.resolve(rb)?;
            body = self.load_body(&location, rb)?;
            if let Some(b) = &body {
                if b.schema.kind == ValueKind::Object {
                    for (name, field) in &b.schema.properties {
                        params.push(ParamSpec {
                            name: name.clone(),
                            location: ParamLocation::BodyField,
                            value_kind: field.kind,
                            constraints: field.constraints.clone(),
                            required: b.schema.required.contains(name),
                            schema: matches!(field.kind, ValueKind::Object | ValueKind::Array)
                                .then(|| field.clone()),
                        });
                    }
                }
            }
        }

        let declared_responses: BTreeSet<u16> = op
            .get("responses")
            .and_then(Value::as_object)
            .map(|r| r.keys().filter_map(|k| k.parse().ok()).collect())
            .unwrap_or_default();

        Ok(EndpointSpec {
            id: id.clone(),
            parameters: params,
            body,
            declared_responses,
        })
    }

    fn load_parameter(
        &mut self,
        location: &str,
        p: &'a Value,
    ) -> Result<Option<ParamSpec>, SchemaError> {
        let name = p
            .get("name")
            .and_then(Value::as_str)
            .ok_or_else(|| SchemaError::Invalid {
                location: location.to_string(),
                message: "parameter without a name".into(),
            })?;
        let loc = match p.get("in").and_then(Value::as_str) {
            Some("path") => ParamLocation::Path,
            Some("query") => ParamLocation::Query,
            Some("header") => ParamLocation::Header,
            Some(other) => {
                self.warnings.push(format!(
                    "{location}: parameter `{name}` in `{other}` is not supported"
                ));
                return Ok(None);
            }
            None => {
                return Err(SchemaError::Invalid {
                    location: location.to_string(),
                    message: format!("parameter `{name}` has no `in`"),
                })
            }
        };
        let schema = match p.get("schema") {
            Some(s) => self.value_schema(&format!("{location} parameter {name}"), s)?,
            None => ValueSchema::scalar(ValueKind::String),
        };
        let required =
            loc == ParamLocation::Path || p.get("required").and_then(Value::as_bool) == Some(true);
        Ok(Some(ParamSpec {
            name: name.to_string(),
            location: loc,
            value_kind: schema.kind,
            constraints: schema.constraints.clone(),
            required,
            schema: matches!(schema.kind, ValueKind::Object | ValueKind::Array).then_some(schema),
        }))
    }

    fn load_body(
        &mut self,
        location: &str,
        rb: &'a Value,
    ) -> Result<Option<RequestBodySpec>, SchemaError> {
        let Some(content) = rb.get("content").and_then(Value::as_object) else {
            return Ok(None);
        };
        let required = rb.get("required").and_then(Value::as_bool).unwrap_or(false);
        let chosen = content
            .iter()
            .find(|(mt, _)| mt.starts_with("application/json") || mt.ends_with("+json"))
            .or_else(|| {
                content
                    .iter()
                    .find(|(mt, _)| mt.starts_with("application/x-www-form-urlencoded"))
            });
        let Some((media_type, media)) = chosen else {
            let kinds: Vec<&str> = content.keys().map(String::as_str).collect();
            self.warnings.push(format!(
                "{location}: request body media types {kinds:?} are not handled (multipart and others are skipped)"
            ));
            return Ok(None);
        };
        let schema = match media.get("schema") {
            Some(s) => self.value_schema(&format!("{location} body"), s)?,
            None => ValueSchema::scalar(ValueKind::Object),
        };
        Ok(Some(RequestBodySpec {
            media_type: media_type.clone(),
            schema,
            required,
        }))
    }

    fn value_schema(&mut self, location: &str, v: &'a Value) -> Result<ValueSchema, SchemaError> {
        let mut v = self.resolve(v)?;
        for key in ["oneOf", "anyOf"] {
            if let Some(first) = v.get(key).and_then(Value::as_array).and_then(|a| a.first()) {
                self.warnings.push(format!(
                    "{location}: `{key}` alternatives reduced to the first one"
                ));
                v = self.resolve(first)?;
            }
        }
        if let Some(parts) = v.get("allOf").and_then(Value::as_array) {
            let mut merged = ValueSchema::scalar(ValueKind::Object);
            for part in parts {
                let s = self.value_schema(location, part)?;
                if s.kind == ValueKind::Object {
                    merged.properties.extend(s.properties);
                    merged.required.extend(s.required);
                } else {
                    return Ok(s);
                }
            }
            return Ok(merged);
        }

        let kind = match v.get("type") {
            Some(Value::String(t)) => type_kind(t),
            // 3.1 style `type: [string, "null"]`
            Some(Value::Array(ts)) => ts
                .iter()
                .filter_map(Value::as_str)
                .find(|t| *t != "null")
                .and_then(type_kind),
            _ => None,
        };
        let kind = kind.unwrap_or_else(|| {
            if v.get("properties").is_some() {
                ValueKind::Object
            } else if v.get("items").is_some() {
                ValueKind::Array
            } else {
                ValueKind::String
            }
        });

        let mut constraints = Constraints {
            min_length: v.get("minLength").and_then(Value::as_u64).map(|n| n as usize),
            max_length: v.get("maxLength").and_then(Value::as_u64).map(|n| n as usize),
            pattern: v.get("pattern").and_then(Value::as_str).map(str::to_string),
            enum_values: v
                .get("enum")
                .and_then(Value::as_array)
                .cloned()
                .unwrap_or_default(),
            minimum: v.get("minimum").and_then(Value::as_f64),
            maximum: v.get("maximum").and_then(Value::as_f64),
        };
        let step = if kind == ValueKind::Integer { 1.0 } else { f64::EPSILON };
        if let Some(x) = v.get("exclusiveMinimum").and_then(Value::as_f64) {
            constraints.minimum = Some(x + step);
        } else if v.get("exclusiveMinimum").and_then(Value::as_bool) == Some(true) {
            constraints.minimum = constraints.minimum.map(|m| m + step);
        }
        if let Some(x) = v.get("exclusiveMaximum").and_then(Value::as_f64) {
            constraints.maximum = Some(x - step);
        } else if v.get("exclusiveMaximum").and_then(Value::as_bool) == Some(true) {
            constraints.maximum = constraints.maximum.map(|m| m - step);
        }
        if let Some(msg) = constraints.inconsistency() {
            return Err(SchemaError::Invalid {
                location: location.to_string(),
                message: msg,
            });
        }
        if let Some(p) = &constraints.pattern {
            if regex::Regex::new(p).is_err() {
                self.warnings
                    .push(format!("{location}: pattern `{p}` is not a supported regex, ignored"));
                constraints.pattern = None;
            }
        }
        if !constraints.enum_values.is_empty() {
            let before = constraints.enum_values.len();
            let check = Constraints {
                enum_values: Vec::new(),
                ..constraints.clone()
            };
            constraints.enum_values.retain(|e| match e {
                Value::String(s) => kind != ValueKind::String || check.accepts_str(s),
                Value::Number(n) => n.as_f64().is_some_and(|x| check.accepts_number(x)),
                _ => true,
            });
            if constraints.enum_values.len() != before {
                self.warnings.push(format!(
                    "{location}: enum members violating the other constraints were dropped"
                ));
            }
        }

        let mut schema = ValueSchema {
            kind,
            constraints,
            properties: Vec::new(),
            required: Vec::new(),
            items: None,
        };
        match kind {
            ValueKind::Object => {
                if let Some(props) = v.get("properties").and_then(Value::as_object) {
                    for (name, p) in props {
                        let field = self.value_schema(&format!("{location}.{name}"), p)?;
                        schema.properties.push((name.clone(), field));
                    }
                }
                schema.required = v
                    .get("required")
                    .and_then(Value::as_array)
                    .map(|r| r.iter().filter_map(Value::as_str).map(str::to_string).collect())
                    .unwrap_or_default();
            }
            ValueKind::Array => {
                if let Some(items) = v.get("items") {
                    schema.items = Some(Box::new(
                        self.value_schema(&format!("{location}[]"), items)?,
                    ));
                }
            }
            _ => {}
        }
        Ok(schema)
    }
}

fn type_kind(t: &str) -> Option<ValueKind> {
    Some(match t {
        "string" => ValueKind::String,
        "integer" => ValueKind::Integer,
        "number" => ValueKind::Number,
        "boolean" => ValueKind::Boolean,
        "array" => ValueKind::Array,
        "object" => ValueKind::Object,
        _ => return None,
    })
}
