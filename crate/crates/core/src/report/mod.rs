//! Fault report and re-executable test suites.

mod httpfile;
mod plan;
mod shell;

use std::path::{Path, PathBuf};

use chrono::{SecondsFormat, Utc};
use serde::{Deserialize, Serialize};

use crate::auth::AuthIdentity;
use crate::http::{Binding, Body, BodyContent, HttpAction, Slot, TestCase};
use crate::oracle::{Fault, PhaseStats};

pub use plan::{replay_plan, JsonPlan, PlanTest, ReplayError, ReplayOutcome, TestVerdict};

pub const FORMAT_VERSION: u32 = 1;
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error("cannot write {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("cannot serialize report: {0}")]
    Json(#[from] serde_json::Error),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ReportError + '_ {
    move |source| ReportError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct FaultReport {
    pub format_version: u32,
    pub target_base_url: String,
    pub schema_source: String,
    pub run_seed: u64,
    pub tool_version: String,
    pub faults: Vec<Fault>,
    pub phase_stats: PhaseStats,
    /// UTC, ISO-8601.
    pub generated_at: String,
}

impl FaultReport {
    /// Sorts `faults` by code and endpoint.
    pub fn new(
        target_base_url: &str,
        schema_source: &str,
        run_seed: u64,
        mut faults: Vec<Fault>,
        phase_stats: PhaseStats,
    ) -> Self {
        faults.sort_by(|a, b| (a.code, &a.endpoint).cmp(&(b.code, &b.endpoint)));
        Self {
            format_version: FORMAT_VERSION,
            target_base_url: target_base_url.to_string(),
            schema_source: schema_source.to_string(),
            run_seed,
            tool_version: TOOL_VERSION.to_string(),
            faults,
            phase_stats,
            generated_at: Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true),
        }
    }
}

pub fn write_report(report: &FaultReport, path: &Path) -> Result<(), ReportError> {
    let text = serde_json::to_string_pretty(report)?;
    std::fs::write(path, text + "\n").map_err(io_err(path))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SuiteFormat {
    JsonPlan,
    Shell,
    HttpFile,
}

impl SuiteFormat {
    pub const ALL: [SuiteFormat; 3] = [SuiteFormat::JsonPlan, SuiteFormat::Shell, SuiteFormat::HttpFile];

    pub fn name(self) -> &'static str {
        match self {
            SuiteFormat::JsonPlan => "json-plan",
            SuiteFormat::Shell => "shell",
            SuiteFormat::HttpFile => "httpfile",
        }
    }
}

impl std::str::FromStr for SuiteFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        SuiteFormat::ALL
            .into_iter()
            .find(|f| f.name() == s.trim())
            .ok_or_else(|| format!("unknown suite format `{s}` (expected json-plan, shell or httpfile)"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmittedSuite {
    pub format: SuiteFormat,
    /// (file name, content)
    pub files: Vec<(String, String)>,
}

impl EmittedSuite {
    /// Writes every file under `dir` and returns the written paths.
    pub fn write_to(&self, dir: &Path) -> Result<Vec<PathBuf>, ReportError> {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        let mut written = Vec::new();
        for (name, content) in &self.files {
            let path = dir.join(name);
            std::fs::write(&path, content).map_err(io_err(&path))?;
            #[cfg(unix)]
            if self.format == SuiteFormat::Shell {
                use std::os::unix::fs::PermissionsExt;
                std::fs::set_permissions(&path, std::fs::Permissions::from_mode(0o755)).map_err(io_err(&path))?;
            }
            written.push(path);
        }
        Ok(written)
    }
}

/// Copy of call `i` whose bound slots hold markers, with the binding
/// behind each marker.
fn marked_call(test: &TestCase, i: usize) -> (HttpAction, Vec<(String, &Binding)>) {
    let mut action = test.calls[i].clone();
    let mut marks = Vec::new();
    for (k, b) in test.bindings_into(i).enumerate() {
        let marker = format!("__B{i}_{k}__");
        if action.set_slot(&b.target_slot, &marker) {
            marks.push((marker, b));
        }
    }
    (action, marks)
}

/// True when the original value at a body-field slot is a JSON number,
/// so the bound value must be spliced in without quotes.
fn numeric_slot(original: &HttpAction, b: &Binding) -> bool {
    let Slot::BodyField(path) = &b.target_slot else {
        return false;
    };
    let Some(Body {
        content: BodyContent::Json(v),
        ..
    }) = &original.body
    else {
        return false;
    };
    path.split('.')
        .try_fold(v, |cur, p| cur.get(p))
        .is_some_and(|v| v.is_number())
}

fn path_and_query(action: &HttpAction) -> String {
    let mut out = action.concrete_path();
    if !action.query.is_empty() {
        out.push('?');
        out.push_str(
            &url::form_urlencoded::Serializer::new(String::new())
                .extend_pairs(action.query.iter())
                .finish(),
        );
    }
    out
}

fn identity<'a>(identities: &'a [AuthIdentity], name: &str) -> Option<&'a AuthIdentity> {
    identities.iter().find(|i| i.name == name)
}

/// Login-flow identities used by `test`, in order of first use.
fn logins<'a>(test: &TestCase, identities: &'a [AuthIdentity]) -> Vec<&'a AuthIdentity> {
    let mut out: Vec<&AuthIdentity> = Vec::new();
    for c in &test.calls {
        if let Some(id) = identity(identities, &c.identity) {
            if id.login().is_some() && !out.iter().any(|o| o.name == id.name) {
                out.push(id);
            }
        }
    }
    out
}

/// Test name used by every format, one per fault.
fn test_name(i: usize, fault: &Fault) -> String {
    format!("test_{:02}_f{}_{}", i + 1, fault.code.code(), slug(&fault.endpoint.to_string()))
}

fn slug(s: &str) -> String {
    let mut out = String::new();
    for c in s.chars() {
        if c.is_ascii_alphanumeric() {
            out.push(c.to_ascii_lowercase());
        } else if !out.ends_with('_') {
            out.push('_');
        }
    }
    out.trim_matches('_').to_string()
}

/// Renders one test per fault. `identities` supplies the headers and
/// login recipes the shell and httpfile formats inline.
pub fn emit_suite(
    faults: &[Fault],
    identities: &[AuthIdentity],
    base_url: &str,
    format: SuiteFormat,
) -> EmittedSuite {
    let files = match format {
        SuiteFormat::JsonPlan => {
            let plan = JsonPlan::from_faults(faults, identities, base_url);
            vec![("plan.json".to_string(), plan.to_json())]
        }
        SuiteFormat::Shell => faults
            .iter()
            .enumerate()
            .map(|(i, f)| (format!("{}.sh", test_name(i, f)), shell::render(f, &test_name(i, f), identities, base_url)))
            .collect(),
        SuiteFormat::HttpFile => vec![("faults.http".to_string(), httpfile::render(faults, identities, base_url))],
    };
    EmittedSuite { format, files }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::http::{HttpAction, Provenance, StatusExpectation, TestCase};
    use crate::oracle::{FaultCode, OracleStats};
    use crate::schema::{EndpointId, Verb};

    pub(super) fn sample_fault() -> Fault {
        let ep = EndpointId::new(Verb::Put, "/api/forbiddendelete/resources/{id}");
        let put = HttpAction::new(ep.clone(), "FOO")
            .with_arg("id", "7")
            .expecting(StatusExpectation::Exact(201));
        let del = HttpAction::new(EndpointId::new(Verb::Delete, ep.path.clone()), "BAR")
            .with_arg("id", "7")
            .expecting(StatusExpectation::Exact(403));
        let put2 = HttpAction::new(ep.clone(), "BAR")
            .with_arg("id", "7")
            .expecting(StatusExpectation::Exact(204));
        Fault {
            code: FaultCode::MissedAuthorizationChecks,
            label: FaultCode::MissedAuthorizationChecks.label().into(),
            endpoint: ep,
            flagged_call_index: 2,
            evidence: "BAR may PUT what it may not DELETE".into(),
            test: TestCase::new(vec![put, del, put2], Provenance::SecuritySynthesis(206)),
        }
    }

    #[test]
    fn report_keys_are_ordered() {
        let stats = PhaseStats {
            per_oracle: vec![OracleStats {
                code: 206,
                new_tests_executed: 3,
                elapsed_ms: 12.5,
            }],
            total_elapsed_ms: 12.9,
            truncated: false,
        };
        let r = FaultReport::new("http://x", "schema.json", 4, vec![sample_fault()], stats);
        let v = serde_json::to_value(&r).unwrap();
        let keys: Vec<&str> = v.as_object().unwrap().keys().map(String::as_str).collect();
        assert_eq!(
            keys,
            [
                "formatVersion",
                "targetBaseUrl",
                "schemaSource",
                "runSeed",
                "toolVersion",
                "faults",
                "phaseStats",
                "generatedAt"
            ]
        );
        let f = &v["faults"][0];
        assert_eq!(f["code"], 206);
        assert_eq!(f["endpoint"]["verb"], "PUT");
        assert_eq!(f["endpoint"]["path"], "/api/forbiddendelete/resources/{id}");
        assert_eq!(f["flaggedCallIndex"], 2);
        assert_eq!(v["phaseStats"]["perOracle"][0]["newTestsExecuted"], 3);
        assert!(v["generatedAt"].as_str().unwrap().ends_with('Z'));
    }

    #[test]
    fn empty_report_has_empty_fault_list() {
        let r = FaultReport::new("http://x", "s", 0, vec![], PhaseStats::default());
        let v = serde_json::to_value(&r).unwrap();
        assert_eq!(v["faults"], serde_json::json!([]));
    }

    #[test]
    fn one_file_or_test_per_fault() {
        let faults = vec![sample_fault(), sample_fault()];
        let ids = vec![
            AuthIdentity::with_headers("FOO", &[("Authorization", "FOO")]),
            AuthIdentity::with_headers("BAR", &[("Authorization", "BAR")]),
            AuthIdentity::anonymous(),
        ];
        let shell = emit_suite(&faults, &ids, "http://x", SuiteFormat::Shell);
        assert_eq!(shell.files.len(), 2);
        let plan = emit_suite(&faults, &ids, "http://x", SuiteFormat::JsonPlan);
        let parsed = JsonPlan::parse(&plan.files[0].1).unwrap();
        assert_eq!(parsed.tests.len(), 2);
        let http = emit_suite(&[], &ids, "http://x", SuiteFormat::HttpFile);
        assert!(!http.files[0].1.contains("###"));
    }
}
