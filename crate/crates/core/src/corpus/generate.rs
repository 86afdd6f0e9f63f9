//! Input values drawn from schema constraints.

use std::collections::HashMap;

use rand::distr::{Alphanumeric, Distribution};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

use crate::http::{Body, BodyContent, HttpAction};
use crate::schema::{Constraints, EndpointSpec, ParamLocation, ParamSpec, ValueKind, ValueSchema};

/// Attempts allowed to produce a string matching a `pattern`.
pub const PATTERN_ATTEMPTS: usize = 100;

const RESERVED_HEADERS: [&str; 3] = ["authorization", "content-type", "accept"];

#[derive(Debug, Clone, thiserror::Error, PartialEq, Eq)]
pub enum GenerationError {
    #[error("no value matching pattern `{pattern}` for `{param}` after {PATTERN_ATTEMPTS} attempts")]
    Pattern { param: String, pattern: String },
}

/// Seeded generator. Enum members are handed out round-robin per parameter.
pub struct InputGenerator {
    rng: ChaCha8Rng,
    enum_cursor: HashMap<String, usize>,
}

impl InputGenerator {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            enum_cursor: HashMap::new(),
        }
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    fn next_enum(&mut self, key: &str, members: &[Value]) -> Value {
        let cursor = self.enum_cursor.entry(key.to_string()).or_insert(0);
        let v = members[*cursor % members.len()].clone();
        *cursor += 1;
        v
    }

    pub fn string(&mut self, key: &str, c: &Constraints) -> Result<String, GenerationError> {
        if !c.enum_values.is_empty() {
            return Ok(crate::http::scalar_text(&self.next_enum(key, &c.enum_values)));
        }
        if let Some(pattern) = &c.pattern {
            let trimmed = pattern.trim_start_matches('^').trim_end_matches('$');
            if let Ok(gen) = rand_regex::Regex::compile(trimmed, 16) {
                for _ in 0..PATTERN_ATTEMPTS {
                    let s: String = gen.sample(&mut self.rng);
                    if c.accepts_str(&s) {
                        return Ok(s);
                    }
                }
            }
            return Err(GenerationError::Pattern {
                param: key.to_string(),
                pattern: pattern.clone(),
            });
        }
        let min = c.min_length.unwrap_or(1);
        let max = c.max_length.unwrap_or(min + 11).max(min);
        let len = match self.rng.random_range(0..4) {
            0 => min,
            1 => max,
            _ => self.rng.random_range(min..=max),
        };
        Ok((&mut self.rng)
            .sample_iter(Alphanumeric)
            .take(len)
            .map(char::from)
            .collect())
    }

    pub fn integer(&mut self, key: &str, c: &Constraints) -> i64 {
        if !c.enum_values.is_empty() {
            return self.next_enum(key, &c.enum_values).as_i64().unwrap_or(0);
        }
        let lo = c.minimum.map(|m| m.ceil() as i64).unwrap_or(0);
        let hi = c
            .maximum
            .map(|m| m.floor() as i64)
            .unwrap_or(lo.saturating_add(100_000))
            .max(lo);
        match self.rng.random_range(0..6) {
            0 if c.minimum.is_some() => lo,
            1 if c.maximum.is_some() => hi,
            _ => self.rng.random_range(lo..=hi),
        }
    }

    pub fn number(&mut self, key: &str, c: &Constraints) -> f64 {
        if !c.enum_values.is_empty() {
            return self.next_enum(key, &c.enum_values).as_f64().unwrap_or(0.0);
        }
        let lo = c.minimum.unwrap_or(0.0);
        let hi = c.maximum.unwrap_or(lo + 1000.0).max(lo);
        if hi > lo {
            self.rng.random_range(lo..=hi)
        } else {
            lo
        }
    }

    pub fn value(&mut self, key: &str, schema: &ValueSchema) -> Result<Value, GenerationError> {
        Ok(match schema.kind {
            ValueKind::String => Value::String(self.string(key, &schema.constraints)?),
            ValueKind::Integer => Value::from(self.integer(key, &schema.constraints)),
            ValueKind::Number => serde_json::Number::from_f64(self.number(key, &schema.constraints))
                .map(Value::Number)
                .unwrap_or(Value::from(0)),
            ValueKind::Boolean => Value::Bool(self.rng.random_bool(0.5)),
            ValueKind::Array => {
                let n = self.rng.random_range(1..=2);
                let mut items = Vec::with_capacity(n);
                if let Some(item) = &schema.items {
                    for _ in 0..n {
                        items.push(self.value(&format!("{key}[]"), item)?);
                    }
                }
                Value::Array(items)
            }
            ValueKind::Object => {
                let mut obj = serde_json::Map::new();
                for (name, field) in &schema.properties {
                    obj.insert(name.clone(), self.value(&format!("{key}.{name}"), field)?);
                }
                Value::Object(obj)
            }
        })
    }

    fn param_text(&mut self, key: &str, p: &ParamSpec) -> Result<String, GenerationError> {
        Ok(match (&p.schema, p.value_kind) {
            (Some(schema), _) => self.value(key, schema)?.to_string(),
            (None, ValueKind::String) => self.string(key, &p.constraints)?,
            (None, ValueKind::Integer) => self.integer(key, &p.constraints).to_string(),
            (None, ValueKind::Number) => self.number(key, &p.constraints).to_string(),
            (None, ValueKind::Boolean) => self.rng.random_bool(0.5).to_string(),
            (None, _) => String::new(),
        })
    }

    /// A fresh action on `spec` with every declared input filled in.
    pub fn action(&mut self, spec: &EndpointSpec, identity: &str) -> Result<HttpAction, GenerationError> {
        let mut action = HttpAction::new(spec.id.clone(), identity);
        for p in &spec.parameters {
            let key = format!("{} {:?} {}", spec.id, p.location, p.name);
            match p.location {
                ParamLocation::Path => {
                    let v = self.param_text(&key, p)?;
                    action.path_args.insert(p.name.clone(), v);
                }
                ParamLocation::Query => {
                    let v = self.param_text(&key, p)?;
                    action.query.push((p.name.clone(), v));
                }
                ParamLocation::Header => {
                    if RESERVED_HEADERS.contains(&p.name.to_ascii_lowercase().as_str()) {
                        continue;
                    }
                    let v = self.param_text(&key, p)?;
                    action.headers.push((p.name.clone(), v));
                }
                ParamLocation::BodyField => {}
            }
        }
        if let Some(body) = &spec.body {
            let key = format!("{} body", spec.id);
            let value = self.value(&key, &body.schema)?;
            let content = if body.media_type.starts_with("application/x-www-form-urlencoded") {
                let fields = match value {
                    Value::Object(map) => map
                        .into_iter()
                        .map(|(k, v)| (k, crate::http::scalar_text(&v)))
                        .collect(),
                    _ => Vec::new(),
                };
                BodyContent::Form(fields)
            } else {
                BodyContent::Json(value)
            };
            action.body = Some(Body {
                media_type: body.media_type.clone(),
                content,
            });
        }
        Ok(action)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn enum_values_round_robin() {
        let mut g = InputGenerator::new(1);
        let c = Constraints {
            enum_values: vec!["a".into(), "b".into(), "c".into()],
            ..Default::default()
        };
        let got: Vec<String> = (0..4).map(|_| g.string("k", &c).unwrap()).collect();
        assert_eq!(got, ["a", "b", "c", "a"]);
    }

    #[test]
    fn strings_respect_length_bounds() {
        let mut g = InputGenerator::new(7);
        let c = Constraints {
            min_length: Some(3),
            max_length: Some(5),
            ..Default::default()
        };
        for _ in 0..200 {
            let s = g.string("k", &c).unwrap();
            assert!((3..=5).contains(&s.len()), "{s}");
        }
    }

    #[test]
    fn pattern_strings_match() {
        let mut g = InputGenerator::new(3);
        let c = Constraints {
            pattern: Some("^[a-f]{4}-[0-9]{2}$".into()),
            ..Default::default()
        };
        for _ in 0..50 {
            assert!(c.accepts_str(&g.string("k", &c).unwrap()));
        }
    }

    #[test]
    fn impossible_pattern_is_reported() {
        let mut g = InputGenerator::new(3);
        let c = Constraints {
            pattern: Some("^[a-z]{10}$".into()),
            max_length: Some(4),
            ..Default::default()
        };
        assert!(matches!(g.string("k", &c), Err(GenerationError::Pattern { .. })));
    }

    #[test]
    fn integers_respect_bounds() {
        let mut g = InputGenerator::new(9);
        let c = Constraints {
            minimum: Some(5.0),
            maximum: Some(9.0),
            ..Default::default()
        };
        for _ in 0..200 {
            assert!((5..=9).contains(&g.integer("k", &c)));
        }
    }

    #[test]
    fn same_seed_same_values() {
        let c = Constraints::default();
        let a: Vec<String> = {
            let mut g = InputGenerator::new(11);
            (0..10).map(|_| g.string("k", &c).unwrap()).collect()
        };
        let b: Vec<String> = {
            let mut g = InputGenerator::new(11);
            (0..10).map(|_| g.string("k", &c).unwrap()).collect()
        };
        assert_eq!(a, b);
    }
}
