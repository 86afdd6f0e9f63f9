//! Plain request-per-block text, in the style of editor HTTP clients.

use std::fmt::Write;

use crate::auth::{AuthIdentity, IdentityKind, TokenSource, TOKEN_HEADER};
use crate::http::Extractor;
use crate::oracle::Fault;

use super::{identity, logins, marked_call, path_and_query, test_name};

fn url(target: &str) -> String {
    if target.starts_with("http://") || target.starts_with("https://") {
        target.to_string()
    } else {
        format!("{{{{baseUrl}}}}{target}")
    }
}

pub(super) fn render(faults: &[Fault], identities: &[AuthIdentity], base_url: &str) -> String {
    let mut out = format!("@baseUrl = {base_url}\n");
    for (t, fault) in faults.iter().enumerate() {
        let name = test_name(t, fault);
        let test = &fault.test;
        let _ = writeln!(out, "\n# {name}: {} on {}: {}", fault.code, fault.endpoint, fault.evidence.replace('\n', " "));
        for id in logins(test, identities) {
            let recipe = id.login().expect("logins() only yields login identities");
            let source = match recipe.token.extract_from {
                TokenSource::Body => "response body field",
                TokenSource::Header => "response header",
            };
            let _ = writeln!(out, "\n### {name} login as {}", id.name);
            let _ = writeln!(out, "# token_{} = {source} `{}`", id.name, recipe.token.field);
            let _ = writeln!(out, "# expected status: 2xx");
            let _ = writeln!(out, "{} {}", recipe.method, url(&recipe.endpoint));
            if !recipe.payload.is_empty() {
                let _ = writeln!(out, "Content-Type: {}\n\n{}", recipe.content_type, recipe.payload);
            }
        }
        for i in 0..test.calls.len() {
            let (action, marks) = marked_call(test, i);
            let _ = writeln!(out, "\n### {name} call {i}");
            let mut target = path_and_query(&action);
            let mut body = action.body.as_ref().map(|b| b.render());
            for (marker, b) in &marks {
                let var = format!("{{{{{}}}}}", marker.trim_matches('_').to_lowercase());
                let from = match &b.extractor {
                    Extractor::LocationHeader => "last segment of the Location header".to_string(),
                    Extractor::BodyField(p) => format!("response body field `{p}`"),
                };
                let _ = writeln!(out, "# {var} = {from} of call {}", b.source_call_index);
                target = target.replace(marker.as_str(), &var);
                body = body.map(|s| s.replace(marker.as_str(), &var));
            }
            if let Some(e) = action.expected_status {
                let _ = writeln!(out, "# expected status: {e}");
            }
            if let Some(t) = action.timing {
                let _ = writeln!(out, "# expected timing: {t:?}");
            }
            if i == fault.flagged_call_index {
                let _ = writeln!(out, "# {}", fault.code.comment());
            }
            let _ = writeln!(out, "{} {}", action.endpoint.verb, url(&target));
            for (k, v) in &action.headers {
                let _ = writeln!(out, "{k}: {v}");
            }
            match identity(identities, &action.identity).map(|id| &id.kind) {
                Some(IdentityKind::StaticHeaders { headers }) => {
                    for (k, v) in headers {
                        let _ = writeln!(out, "{k}: {v}");
                    }
                }
                Some(IdentityKind::LoginFlow { login }) => {
                    let token = format!("{{{{token_{}}}}}", action.identity);
                    let _ = writeln!(out, "{TOKEN_HEADER}: {}", login.render_header(&token));
                }
                _ => {}
            }
            if let (Some(b), Some(text)) = (&action.body, body) {
                let _ = writeln!(out, "Content-Type: {}\n\n{text}", b.media_type);
            }
        }
    }
    out
}
