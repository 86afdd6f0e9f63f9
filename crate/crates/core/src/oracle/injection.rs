//! Payload injection oracles: time-based SQL injection and XSS.

use serde_json::Value;

use crate::corpus::{concat_and_bind, slice_prefix, IdentityFilter, Query, StatusFilter};
use crate::http::{BodyContent, HttpAction, Provenance, TestCase, TimingExpectation};
use crate::schema::{Constraints, EndpointId, EndpointSpec, ParamLocation, ValueKind, ValueSchema, Verb};

use super::{render_sqli, Engine, FaultCode, OracleResult};

fn json_at<'v>(v: &'v Value, path: &str) -> Option<&'v Value> {
    path.split('.').try_fold(v, |cur, part| cur.get(part))
}

fn string_fields<'s>(schema: &'s ValueSchema, prefix: &str, out: &mut Vec<(String, &'s Constraints)>) {
    for (name, field) in &schema.properties {
        let path = if prefix.is_empty() {
            name.clone()
        } else {
            format!("{prefix}.{name}")
        };
        match field.kind {
            ValueKind::String => out.push((path, &field.constraints)),
            ValueKind::Object => string_fields(field, &path, out),
            _ => {}
        }
    }
}

/// Rewrites every string input of `action` (query, header and body) for
/// which `rewrite` yields a value. Returns how many inputs changed.
fn rewrite_strings(
    spec: &EndpointSpec,
    action: &mut HttpAction,
    rewrite: &dyn Fn(&str, &Constraints) -> Option<String>,
) -> usize {
    let mut changed = 0;
    for (location, entries) in [
        (ParamLocation::Query, &mut action.query),
        (ParamLocation::Header, &mut action.headers),
    ] {
        for (name, value) in entries.iter_mut() {
            let Some(p) = spec.param(location, name) else {
                continue;
            };
            if p.value_kind != ValueKind::String {
                continue;
            }
            if let Some(new) = rewrite(value, &p.constraints) {
                *value = new;
                changed += 1;
            }
        }
    }
    let (Some(body), Some(body_spec)) = (action.body.as_mut(), spec.body.as_ref()) else {
        return changed;
    };
    let mut fields = Vec::new();
    string_fields(&body_spec.schema, "", &mut fields);
    for (path, constraints) in fields {
        let current = match &body.content {
            BodyContent::Json(v) => json_at(v, &path).and_then(Value::as_str).map(str::to_string),
            BodyContent::Form(_) => body.field(&path),
            BodyContent::Text(_) => None,
        };
        let Some(current) = current else {
            continue;
        };
        if let Some(new) = rewrite(&current, constraints) {
            if body.set_field(&path, &new) {
                changed += 1;
            }
        }
    }
    changed
}

impl Engine<'_> {
    fn injectable_endpoints(&self) -> Vec<EndpointSpec> {
        self.schema
            .endpoints()
            .iter()
            .filter(|e| self.allowed(&e.id))
            .cloned()
            .collect()
    }

    /// Appends a sleep payload to every string input of a fast successful
    /// call and flags the endpoint when the call then takes longer than
    /// the sleep.
    pub(super) fn sql_injection(&mut self) -> OracleResult {
        let baseline_ms = self.config.sqli_baseline_max_ms;
        let sleep_s = self.config.sqli_sleep_seconds;
        for spec in self.injectable_endpoints() {
            let q = Query::new(&spec.id, StatusFilter::Class(2), IdentityFilter::Any).faster_than(baseline_ms);
            let Some(t1) = self.pool.find(&q) else {
                continue;
            };
            let mut base = slice_prefix(self.pool.entry(t1.entry), t1.call)?;
            base.last_mut().timing = Some(TimingExpectation::LessThanMs(baseline_ms));
            for template in self.config.sqli_payloads.clone() {
                let payload = render_sqli(&template, sleep_s);
                let mut y = base.last().clone();
                y.expected_status = None;
                y.timing = Some(TimingExpectation::GreaterThanMs(sleep_s * 1000.0));
                let extend = |old: &str, c: &Constraints| {
                    let s = format!("{old}{payload}");
                    c.accepts_str(&s).then_some(s)
                };
                if rewrite_strings(&spec, &mut y, &extend) == 0 {
                    continue;
                }
                let test = concat_and_bind(&base, &TestCase::new(vec![y], Provenance::SecuritySynthesis(200)), true)?;
                let (sent, run) = self.execute(&test)?;
                if !run.is_complete(&sent) {
                    continue;
                }
                let n = run.calls.len();
                let (x, y) = (&run.calls[n - 2], &run.calls[n - 1]);
                if !x.timed_out && x.duration_ms < baseline_ms && y.duration_ms > sleep_s * 1000.0 {
                    let evidence = format!(
                        "{} took {:.0} ms; with payload {payload:?} it took {:.0} ms",
                        spec.id, x.duration_ms, y.duration_ms
                    );
                    self.report(FaultCode::SqlInjection, &spec.id, n - 1, evidence, sent, Some(&run));
                    break;
                }
            }
        }
        Ok(())
    }

    /// GET used to read back what a modifying call stored: the same path
    /// if it has a GET, else the parent collection.
    fn read_back(&self, ep: &EndpointId) -> Option<EndpointId> {
        if !ep.verb.may_store_input() {
            return None;
        }
        let same = EndpointId::new(Verb::Get, ep.path.clone());
        if self.schema.endpoint(&same).is_some() {
            return Some(same);
        }
        let trimmed = ep.path.trim_end_matches('/');
        let parent = &trimmed[..trimmed.rfind('/')?];
        [parent.to_string(), format!("{parent}/")]
            .into_iter()
            .map(|p| EndpointId::new(Verb::Get, p))
            .find(|e| !e.path.is_empty() && self.schema.endpoint(e).is_some())
    }

    /// Puts XSS payloads in string inputs and looks for them, unescaped,
    /// in the response or in a later read of the stored resource.
    pub(super) fn cross_site_scripting(&mut self) -> OracleResult {
        for spec in self.injectable_endpoints() {
            let Some(t1) = self
                .pool
                .find(&Query::new(&spec.id, StatusFilter::Class(2), IdentityFilter::Any))
            else {
                continue;
            };
            let base = slice_prefix(self.pool.entry(t1.entry), t1.call)?;
            let target = base.len() - 1;
            let read_back = self.read_back(&spec.id);
            for payload in self.config.xss_payloads.clone() {
                let mut test = base.clone();
                test.provenance = Provenance::SecuritySynthesis(201);
                let x = test.last_mut();
                x.expected_status = None;
                let replace = |_: &str, c: &Constraints| c.accepts_str(&payload).then(|| payload.clone());
                if rewrite_strings(&spec, x, &replace) == 0 {
                    continue;
                }
                if let Some(get) = &read_back {
                    let call = HttpAction::new(get.clone(), test.last().identity.clone());
                    test = concat_and_bind(&test, &TestCase::new(vec![call], test.provenance), true)?;
                }
                let (sent, run) = self.execute(&test)?;
                let Some(x) = run.calls.get(target) else {
                    continue;
                };
                if !x.is_success() {
                    continue;
                }
                let found = if x.response_body.contains(&payload) {
                    Some((target, "in the response"))
                } else {
                    run.calls
                        .get(target + 1)
                        .filter(|g| g.response_body.contains(&payload))
                        .map(|_| (target + 1, "when read back"))
                };
                if let Some((flagged, where_)) = found {
                    let evidence = format!("payload {payload:?} sent to {} comes back unescaped {where_}", spec.id);
                    self.report(FaultCode::CrossSiteScripting, &spec.id, flagged, evidence, sent, Some(&run));
                    break;
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::{load_schema, SchemaFormat};

    const DOC: &str = r#"{"openapi":"3.0.0","info":{"title":"t","version":"1"},"paths":{
      "/login":{"post":{"parameters":[{"name":"mode","in":"query","schema":{"type":"string","maxLength":10}},
                                      {"name":"n","in":"query","schema":{"type":"integer"}}],
        "requestBody":{"content":{"application/json":{"schema":{"type":"object","properties":{
          "username":{"type":"string"},"age":{"type":"integer"},
          "meta":{"type":"object","properties":{"note":{"type":"string","maxLength":5}}}}}}}},
        "responses":{"200":{"description":"x"}}}}}}"#;

    #[test]
    fn rewrites_only_compatible_strings() {
        let schema = load_schema(DOC.as_bytes(), SchemaFormat::Json).unwrap();
        let spec = &schema.endpoints()[0];
        let mut a = HttpAction::new(spec.id.clone(), "FOO");
        a.query = vec![("mode".into(), "x".into()), ("n".into(), "3".into())];
        a.body = Some(crate::http::Body::json(serde_json::json!({
            "username": "bob", "age": 3, "meta": {"note": "hi"}
        })));
        let n = rewrite_strings(spec, &mut a, &|old, c| {
            let s = format!("{old}' OR SLEEP(5)");
            c.accepts_str(&s).then_some(s)
        });
        assert_eq!(n, 1);
        assert_eq!(a.query_value("mode"), Some("x"));
        assert_eq!(a.query_value("n"), Some("3"));
        assert_eq!(a.body.as_ref().unwrap().field("username").unwrap(), "bob' OR SLEEP(5)");
    }
}
