use std::collections::{BTreeMap, HashSet};

use rand::distr::Alphanumeric;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::http::{Slot, TestCase};
use crate::schema::{Constraints, ParamLocation, SchemaModel, ValueKind};

use super::TestPool;

/// Renames concrete resource ids so a composed test does not collide with
/// resources left behind by earlier tests. Within one test the renaming is
/// consistent, so calls that shared an id still share it. Only integer and
/// free-form string path parameters are renamed; values filled in by a
/// binding are left alone.
pub struct Freshener {
    rng: ChaCha8Rng,
    used: HashSet<String>,
}

impl Freshener {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            used: HashSet::new(),
        }
    }

    /// Marks every path value seen in `pool` as taken.
    pub fn avoid_pool(&mut self, pool: &TestPool) {
        for e in pool.entries() {
            for c in &e.executed {
                self.used.extend(c.action.path_args.values().cloned());
            }
        }
    }

    fn fresh_value(&mut self, kind: ValueKind, c: &Constraints) -> Option<String> {
        for _ in 0..64 {
            let candidate = match kind {
                ValueKind::Integer => {
                    let lo = c.minimum.map(|m| m.ceil() as i64).unwrap_or(1);
                    let hi = c
                        .maximum
                        .map(|m| m.floor() as i64)
                        .unwrap_or(i64::from(i32::MAX));
                    if hi < lo {
                        return None;
                    }
                    self.rng.random_range(lo..=hi).to_string()
                }
                _ => {
                    let min = c.min_length.unwrap_or(1);
                    let max = c.max_length.unwrap_or(usize::MAX).max(min);
                    let len = 10.clamp(min, max);
                    (&mut self.rng)
                        .sample_iter(Alphanumeric)
                        .take(len)
                        .map(char::from)
                        .collect()
                }
            };
            if !self.used.contains(&candidate) {
                self.used.insert(candidate.clone());
                return Some(candidate);
            }
        }
        None
    }

    /// Without a schema, values that parse as integers are renamed to
    /// integers and every other value to a string of the same length.
    pub fn freshen(&mut self, test: &TestCase, schema: Option<&SchemaModel>) -> TestCase {
        let mut out = test.clone();
        let mut renamed: BTreeMap<String, String> = BTreeMap::new();
        for (i, call) in out.calls.iter_mut().enumerate() {
            let names: Vec<String> = call.path_args.keys().cloned().collect();
            for name in names {
                let slot = Slot::PathArg(name.clone());
                if test.bindings_into(i).any(|b| b.target_slot == slot) {
                    continue;
                }
                let old = call.path_args[&name].clone();
                let (kind, constraints) = match schema {
                    Some(schema) => {
                        let Some(p) = schema
                            .endpoint(&call.endpoint)
                            .and_then(|s| s.param(ParamLocation::Path, &name))
                        else {
                            continue;
                        };
                        let c = &p.constraints;
                        let freshenable = match p.value_kind {
                            ValueKind::Integer => c.enum_values.is_empty(),
                            ValueKind::String => c.enum_values.is_empty() && c.pattern.is_none(),
                            _ => false,
                        };
                        if !freshenable {
                            continue;
                        }
                        (p.value_kind, p.constraints.clone())
                    }
                    None if old.parse::<i64>().is_ok() => (ValueKind::Integer, Constraints::default()),
                    None => (
                        ValueKind::String,
                        Constraints {
                            min_length: Some(old.len().max(1)),
                            max_length: Some(old.len().max(1)),
                            ..Default::default()
                        },
                    ),
                };
                let new = match renamed.get(&old) {
                    Some(n) => n.clone(),
                    None => match self.fresh_value(kind, &constraints) {
                        Some(n) => {
                            renamed.insert(old.clone(), n.clone());
                            n
                        }
                        None => continue,
                    },
                };
                call.path_args.insert(name, new);
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::http::{HttpAction, Provenance};
    use crate::schema::{load_schema, EndpointId, SchemaFormat, Verb};

    const DOC: &str = r#"{"openapi":"3.0.0","info":{"title":"t","version":"1"},"paths":{
      "/r/{id}":{"parameters":[{"name":"id","in":"path","required":true,"schema":{"type":"integer"}}],
        "put":{"responses":{"201":{"description":"x"}}},
        "get":{"responses":{"200":{"description":"x"}}}},
      "/k/{kind}":{"get":{"parameters":[{"name":"kind","in":"path","required":true,
        "schema":{"type":"string","enum":["a","b"]}}],"responses":{"200":{"description":"x"}}}}}}"#;

    #[test]
    fn renames_consistently_and_skips_enums() {
        let schema = load_schema(DOC.as_bytes(), SchemaFormat::Json).unwrap();
        let put = HttpAction::new(EndpointId::new(Verb::Put, "/r/{id}"), "FOO").with_arg("id", "5");
        let get = HttpAction::new(EndpointId::new(Verb::Get, "/r/{id}"), "BAR").with_arg("id", "5");
        let other = HttpAction::new(EndpointId::new(Verb::Get, "/r/{id}"), "BAR").with_arg("id", "6");
        let kind = HttpAction::new(EndpointId::new(Verb::Get, "/k/{kind}"), "BAR").with_arg("kind", "a");
        let t = TestCase::new(vec![put, get, other, kind], Provenance::BaseFuzzing);
        let mut f = Freshener::new(1);
        let a = f.freshen(&t, Some(&schema));
        assert_eq!(a.calls[0].path_args["id"], a.calls[1].path_args["id"]);
        assert_ne!(a.calls[0].path_args["id"], "5");
        assert_ne!(a.calls[0].path_args["id"], a.calls[2].path_args["id"]);
        assert_eq!(a.calls[3].path_args["kind"], "a");
        let b = f.freshen(&t, Some(&schema));
        assert_ne!(a.calls[0].path_args["id"], b.calls[0].path_args["id"]);
    }

    #[test]
    fn untyped_renaming_keeps_shape() {
        let get = HttpAction::new(EndpointId::new(Verb::Get, "/x/{a}/{b}"), "FOO")
            .with_arg("a", "17")
            .with_arg("b", "abc");
        let t = TestCase::new(vec![get], Provenance::BaseFuzzing);
        let out = Freshener::new(2).freshen(&t, None);
        assert!(out.calls[0].path_args["a"].parse::<i64>().is_ok());
        assert_ne!(out.calls[0].path_args["a"], "17");
        assert_eq!(out.calls[0].path_args["b"].len(), 3);
    }
}
