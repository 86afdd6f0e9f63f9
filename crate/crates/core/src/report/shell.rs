//! Bash scripts driving curl, one per fault.

use std::fmt::Write;

use crate::auth::{AuthIdentity, IdentityKind, TokenSource};
use crate::http::{Extractor, TimingExpectation};
use crate::oracle::Fault;

use super::{identity, logins, marked_call, numeric_slot, path_and_query};

const PRELUDE: &str = r#"set -u
WORK=$(mktemp -d)
trap 'rm -rf "$WORK"' EXIT
FAILED=0

expect_status() {
  if [[ "$3" != ${2//x/?} ]]; then
    echo "call $1: expected status $2, got $3" >&2
    FAILED=1
  fi
}

now_ms() { date +%s%3N; }

location_id() {
  grep -i '^location:' "$1" | tail -n 1 | tr -d '\r' | sed 's/^[^:]*: *//; s/[?#].*//; s:/*$::; s:.*/::'
}

body_field() {
  sed -n "s/.*\"$2\" *: *\"\{0,1\}\([^\",}]*\).*/\1/p" "$1" | head -n 1
}

header_value() {
  grep -i "^$2:" "$1" | tail -n 1 | tr -d '\r' | sed 's/^[^:]*: *//'
}
"#;

fn sq(s: &str) -> String {
    format!("'{}'", s.replace('\'', r"'\''"))
}

/// Splices a shell variable into single-quoted text.
fn var(name: &str) -> String {
    format!("'\"${{{name}}}\"'")
}

fn url_expr(base_var: &str, absolute_or_path: &str) -> String {
    if absolute_or_path.starts_with("http://") || absolute_or_path.starts_with("https://") {
        sq(absolute_or_path)
    } else {
        format!("\"${base_var}\"{}", sq(absolute_or_path))
    }
}

fn token_var(name: &str) -> String {
    let clean: String = name
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_uppercase() } else { '_' })
        .collect();
    format!("TOKEN_{clean}")
}

fn last_segment(path: &str) -> &str {
    path.rsplit('.').next().unwrap_or(path)
}

fn ms(limit: f64) -> i64 {
    limit.round() as i64
}

pub(super) fn render(fault: &Fault, name: &str, identities: &[AuthIdentity], base_url: &str) -> String {
    let test = &fault.test;
    let mut out = String::new();
    let _ = writeln!(out, "#!/usr/bin/env bash");
    let _ = writeln!(out, "# {} on {}: {}", fault.code, fault.endpoint, fault.evidence.replace('\n', " "));
    let _ = writeln!(out, "BASE_URL=\"${{BASE_URL:-{base_url}}}\"");
    out.push_str(PRELUDE);

    for (n, id) in logins(test, identities).into_iter().enumerate() {
        let recipe = id.login().expect("logins() only yields login identities");
        let file = format!("$WORK/login_{n}");
        let _ = writeln!(out, "\n# login as {}", id.name);
        let mut cmd = format!(
            "S=$(curl -s -o \"{file}\" -D \"{file}.h\" -w '%{{http_code}}' -X {}",
            recipe.method
        );
        if !recipe.payload.is_empty() {
            let _ = write!(
                cmd,
                " -H {} --data-binary {}",
                sq(&format!("Content-Type: {}", recipe.content_type)),
                sq(&recipe.payload)
            );
        }
        let _ = write!(cmd, " {})", url_expr("BASE_URL", &recipe.endpoint));
        let _ = writeln!(out, "{cmd}");
        let _ = writeln!(out, "expect_status login \"2xx\" \"$S\"");
        let field = &recipe.token.field;
        let extract = match recipe.token.extract_from {
            TokenSource::Body => format!("body_field \"{file}\" {}", sq(last_segment(field))),
            TokenSource::Header => format!("header_value \"{file}.h\" {}", sq(field)),
        };
        let _ = writeln!(out, "{}=$({extract})", token_var(&id.name));
    }

    for i in 0..test.calls.len() {
        let original = &test.calls[i];
        let (action, marks) = marked_call(test, i);
        let _ = writeln!(out, "\n# call {i}: ({}) {}", action.identity, action.endpoint);
        for (marker, b) in &marks {
            let src = b.source_call_index;
            let extract = match &b.extractor {
                Extractor::LocationHeader => format!("location_id \"$WORK/h_{src}\""),
                Extractor::BodyField(path) => format!("body_field \"$WORK/b_{src}\" {}", sq(last_segment(path))),
            };
            let _ = writeln!(out, "{}=$({extract})", marker.trim_matches('_'));
        }

        let mut cmd = format!(
            "S_{i}=$(curl -s -o \"$WORK/b_{i}\" -D \"$WORK/h_{i}\" -w '%{{http_code}}' -X {}",
            action.endpoint.verb
        );
        for (k, v) in &action.headers {
            let _ = write!(cmd, " -H {}", sq(&format!("{k}: {v}")));
        }
        match identity(identities, &action.identity).map(|id| &id.kind) {
            Some(IdentityKind::StaticHeaders { headers }) => {
                for (k, v) in headers {
                    let _ = write!(cmd, " -H {}", sq(&format!("{k}: {v}")));
                }
            }
            Some(IdentityKind::LoginFlow { login }) => {
                let header = format!("{}: {}", crate::auth::TOKEN_HEADER, login.render_header("__TOKEN__"));
                let _ = write!(cmd, " -H {}", sq(&header).replace("__TOKEN__", &var(&token_var(&action.identity))));
            }
            _ => {}
        }
        if let Some(body) = &action.body {
            let _ = write!(
                cmd,
                " -H {} --data-binary {}",
                sq(&format!("Content-Type: {}", body.media_type)),
                sq(&body.render())
            );
        }
        let _ = write!(cmd, " {})", url_expr("BASE_URL", &path_and_query(&action)));
        for (marker, b) in &marks {
            let v = var(marker.trim_matches('_'));
            if numeric_slot(original, b) {
                cmd = cmd.replace(&format!("\"{marker}\""), &v);
            }
            cmd = cmd.replace(marker.as_str(), &v);
        }

        if action.timing.is_some() {
            let _ = writeln!(out, "T0=$(now_ms)");
        }
        if i == fault.flagged_call_index {
            let _ = writeln!(out, "# {}", fault.code.comment());
        }
        let _ = writeln!(out, "{cmd}");
        if let Some(t) = action.timing {
            let _ = writeln!(out, "ELAPSED_{i}=$(( $(now_ms) - T0 ))");
            let (test_op, words, limit) = match t {
                TimingExpectation::LessThanMs(l) => ("-ge", "less than", l),
                TimingExpectation::GreaterThanMs(l) => ("-le", "greater than", l),
            };
            let limit = ms(limit);
            let _ = writeln!(
                out,
                "if [ \"$ELAPSED_{i}\" {test_op} {limit} ]; then echo \"call {i}: elapsed ${{ELAPSED_{i}}} ms should be {words} {limit} ms\" >&2; FAILED=1; fi"
            );
        }
        if let Some(e) = action.expected_status {
            let _ = writeln!(out, "expect_status {i} \"{e}\" \"$S_{i}\"");
        }
    }

    let _ = writeln!(out, "\nif [ \"$FAILED\" -eq 0 ]; then echo \"PASS {name}\"; else echo \"FAIL {name}\"; fi");
    let _ = writeln!(out, "exit \"$FAILED\"");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::http::{Binding, HttpAction, Provenance, Slot, StatusExpectation, TestCase};
    use crate::oracle::FaultCode;
    use crate::schema::{EndpointId, Verb};

    #[test]
    fn comment_sits_right_before_flagged_call() {
        let f = super::super::tests::sample_fault();
        let ids = vec![AuthIdentity::with_headers("FOO", &[("Authorization", "FOO")])];
        let text = render(&f, "t", &ids, "http://h");
        let lines: Vec<&str> = text.lines().collect();
        let at = lines.iter().position(|l| *l == "# Fault206. Missed Authorization Checks.").unwrap();
        assert!(lines[at + 1].starts_with("S_2=$(curl"));
        assert!(text.contains("-H 'Authorization: FOO'"));
        assert!(text.contains("expect_status 1 \"403\" \"$S_1\""));
    }

    #[test]
    fn timing_and_bindings_are_rendered() {
        let post = HttpAction::new(EndpointId::new(Verb::Post, "/r"), "FOO")
            .expecting(StatusExpectation::Exact(201));
        let mut get = HttpAction::new(EndpointId::new(Verb::Get, "/r/{id}"), "FOO")
            .with_arg("id", "1")
            .expecting(StatusExpectation::Class(2));
        get.timing = Some(TimingExpectation::LessThanMs(2000.0));
        let mut slow = get.clone();
        slow.timing = Some(TimingExpectation::GreaterThanMs(5000.0));
        let mut test = TestCase::new(vec![post, get, slow], Provenance::SecuritySynthesis(200));
        test.bindings.push(Binding {
            source_call_index: 0,
            extractor: Extractor::LocationHeader,
            target_call_index: 1,
            target_slot: Slot::PathArg("id".into()),
        });
        let f = Fault {
            code: FaultCode::SqlInjection,
            label: FaultCode::SqlInjection.label().into(),
            endpoint: EndpointId::new(Verb::Get, "/r/{id}"),
            flagged_call_index: 2,
            evidence: "slow".into(),
            test,
        };
        let text = render(&f, "t", &[], "http://h");
        assert!(text.contains("B1_0=$(location_id \"$WORK/h_0\")"));
        assert!(text.contains("\"$BASE_URL\"'/r/'\"${B1_0}\"'')"));
        assert!(text.contains("should be less than 2000 ms"));
        assert!(text.contains("should be greater than 5000 ms"));
        assert!(text.contains("expect_status 1 \"2xx\""));
    }

    #[test]
    fn quotes_survive() {
        assert_eq!(sq("it's"), r"'it'\''s'");
    }
}
