//! Security phase: composes, executes and re-verifies scenarios on top of
//! the fuzzing pool, and reports faults.

mod data;
mod injection;
mod probes;
mod scenarios;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::time::{Duration, Instant};

use regex::Regex;
use serde::{Deserialize, Serialize};
use tracing::{info, warn};

pub use data::{
    default_sqli_payloads, default_xss_payloads, load_lines, parse_lines, render_sqli, DataError,
    StackTraceMatch, StackTracePatterns,
};

use crate::corpus::{CompositionError, Freshener, InputGenerator, TestPool};
use crate::http::{verify_statuses, Executor, ExecutorError, StatusExpectation, TestCase, TestRun};
use crate::schema::{EndpointId, SchemaModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u16", into = "u16")]
pub enum FaultCode {
    Status500,
    SchemaMismatch,
    SqlInjection,
    CrossSiteScripting,
    ExistenceLeakage,
    NotRecognizedAuthentication,
    MissedAuthorizationChecks,
    IgnoreAnonymous,
    AnonymousModifications,
    LeakedStackTrace,
    HiddenAccessible,
}

impl FaultCode {
    pub const ALL: [FaultCode; 11] = [
        FaultCode::Status500,
        FaultCode::SchemaMismatch,
        FaultCode::SqlInjection,
        FaultCode::CrossSiteScripting,
        FaultCode::ExistenceLeakage,
        FaultCode::NotRecognizedAuthentication,
        FaultCode::MissedAuthorizationChecks,
        FaultCode::IgnoreAnonymous,
        FaultCode::AnonymousModifications,
        FaultCode::LeakedStackTrace,
        FaultCode::HiddenAccessible,
    ];

    /// The nine security oracles, in the order the phase runs them.
    pub const SECURITY: [FaultCode; 9] = [
        FaultCode::NotRecognizedAuthentication,
        FaultCode::ExistenceLeakage,
        FaultCode::MissedAuthorizationChecks,
        FaultCode::AnonymousModifications,
        FaultCode::IgnoreAnonymous,
        FaultCode::LeakedStackTrace,
        FaultCode::HiddenAccessible,
        FaultCode::SqlInjection,
        FaultCode::CrossSiteScripting,
    ];

    pub fn code(self) -> u16 {
        match self {
            FaultCode::Status500 => 100,
            FaultCode::SchemaMismatch => 101,
            FaultCode::SqlInjection => 200,
            FaultCode::CrossSiteScripting => 201,
            FaultCode::ExistenceLeakage => 204,
            FaultCode::NotRecognizedAuthentication => 205,
            FaultCode::MissedAuthorizationChecks => 206,
            FaultCode::IgnoreAnonymous => 900,
            FaultCode::AnonymousModifications => 901,
            FaultCode::LeakedStackTrace => 902,
            FaultCode::HiddenAccessible => 903,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            FaultCode::Status500 => "HTTP Status 500",
            FaultCode::SchemaMismatch => "schema mismatch",
            FaultCode::SqlInjection => "SQL Injection (SQLi)",
            FaultCode::CrossSiteScripting => "Cross-Site Scripting (XSS)",
            FaultCode::ExistenceLeakage => "Existence Leakage",
            FaultCode::NotRecognizedAuthentication => "Not Recognized Authentication",
            FaultCode::MissedAuthorizationChecks => "Missed Authorization Checks",
            FaultCode::IgnoreAnonymous => "Ignore Anonymous",
            FaultCode::AnonymousModifications => "Anonymous Modifications",
            FaultCode::LeakedStackTrace => "Leaked Stack Trace",
            FaultCode::HiddenAccessible => "Hidden Accessible",
        }
    }

    /// The comment placed before the call that shows the fault.
    pub fn comment(self) -> String {
        format!("Fault{}. {}.", self.code(), self.label())
    }

    pub fn is_security(self) -> bool {
        (200..=903).contains(&self.code())
    }
}

impl From<FaultCode> for u16 {
    fn from(c: FaultCode) -> u16 {
        c.code()
    }
}

impl TryFrom<u16> for FaultCode {
    type Error = String;

    fn try_from(v: u16) -> Result<Self, String> {
        FaultCode::ALL
            .into_iter()
            .find(|c| c.code() == v)
            .ok_or_else(|| format!("unknown fault code {v}"))
    }
}

impl fmt::Display for FaultCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "F{}", self.code())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Fault {
    pub code: FaultCode,
    pub label: String,
    pub endpoint: EndpointId,
    pub flagged_call_index: usize,
    pub evidence: String,
    pub test: TestCase,
}

#[derive(Debug, Clone)]
pub struct SecurityConfig {
    pub enabled: BTreeSet<FaultCode>,
    pub sqli_sleep_seconds: f64,
    pub sqli_baseline_max_ms: f64,
    pub sqli_payloads: Vec<String>,
    pub xss_payloads: Vec<String>,
    pub stack_trace_patterns: StackTracePatterns,
    pub phase_time_budget: Option<Duration>,
    pub seed: u64,
    /// Paths matching these never receive POST, PUT, PATCH or DELETE.
    pub deny: Vec<Regex>,
    /// Candidate scenarios tried per oracle question before giving up.
    pub attempts: usize,
}

impl Default for SecurityConfig {
    fn default() -> Self {
        Self {
            enabled: FaultCode::SECURITY.into_iter().collect(),
            sqli_sleep_seconds: 5.0,
            sqli_baseline_max_ms: 2000.0,
            sqli_payloads: default_sqli_payloads(),
            xss_payloads: default_xss_payloads(),
            stack_trace_patterns: StackTracePatterns::default(),
            phase_time_budget: None,
            seed: 0,
            deny: Vec::new(),
            attempts: 3,
        }
    }
}

#[derive(Debug, Clone, thiserror::Error, PartialEq)]
pub enum ConfigError {
    #[error("SQLi sleep ({sleep_ms} ms) must exceed the baseline limit ({baseline_ms} ms)")]
    SleepBelowBaseline { sleep_ms: f64, baseline_ms: f64 },
    #[error("{0} is enabled but its payload list is empty")]
    NoPayloads(FaultCode),
}

impl SecurityConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.sqli_sleep_seconds * 1000.0 <= self.sqli_baseline_max_ms {
            return Err(ConfigError::SleepBelowBaseline {
                sleep_ms: self.sqli_sleep_seconds * 1000.0,
                baseline_ms: self.sqli_baseline_max_ms,
            });
        }
        if self.is_enabled(FaultCode::SqlInjection) && self.sqli_payloads.is_empty() {
            return Err(ConfigError::NoPayloads(FaultCode::SqlInjection));
        }
        if self.is_enabled(FaultCode::CrossSiteScripting) && self.xss_payloads.is_empty() {
            return Err(ConfigError::NoPayloads(FaultCode::CrossSiteScripting));
        }
        Ok(())
    }

    pub fn is_enabled(&self, code: FaultCode) -> bool {
        self.enabled.contains(&code)
    }

    pub fn set_enabled(&mut self, code: FaultCode, on: bool) {
        if on {
            self.enabled.insert(code);
        } else {
            self.enabled.remove(&code);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct OracleStats {
    /// Fault code of the oracle; 0 is the 403-synthesis step.
    pub code: u16,
    pub new_tests_executed: usize,
    pub elapsed_ms: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PhaseStats {
    pub per_oracle: Vec<OracleStats>,
    pub total_elapsed_ms: f64,
    #[serde(skip)]
    pub truncated: bool,
}

impl PhaseStats {
    pub fn tests_for(&self, code: u16) -> usize {
        self.per_oracle
            .iter()
            .filter(|s| s.code == code)
            .map(|s| s.new_tests_executed)
            .sum()
    }
}

pub struct SecurityOutcome {
    pub faults: Vec<Fault>,
    pub stats: PhaseStats,
    /// The input pool plus the tests added by 403 synthesis.
    pub pool: TestPool,
}

#[derive(Debug, thiserror::Error)]
enum OracleError {
    #[error("security phase time budget exhausted")]
    Budget,
    #[error(transparent)]
    Executor(#[from] ExecutorError),
    #[error(transparent)]
    Composition(#[from] CompositionError),
}

type OracleResult = Result<(), OracleError>;

/// State shared by the oracles while the phase runs.
struct Engine<'a> {
    schema: &'a SchemaModel,
    executor: &'a Executor,
    config: &'a SecurityConfig,
    pool: TestPool,
    fresh: Freshener,
    gen: InputGenerator,
    deadline: Option<Instant>,
    tests: usize,
    faults: BTreeMap<(FaultCode, EndpointId), Fault>,
}

impl Engine<'_> {
    fn users(&self) -> Vec<String> {
        self.executor.users().map(|u| u.name.clone()).collect()
    }

    fn anonymous(&self) -> String {
        self.executor.anonymous_name().to_string()
    }

    fn allowed(&self, endpoint: &EndpointId) -> bool {
        crate::corpus::is_allowed(&self.config.deny, endpoint)
    }

    fn check_deadline(&self) -> OracleResult {
        match self.deadline {
            Some(d) if Instant::now() >= d => Err(OracleError::Budget),
            _ => Ok(()),
        }
    }

    /// Runs `test` on fresh resource ids. Returns the test as sent.
    fn execute(&mut self, test: &TestCase) -> Result<(TestCase, TestRun), OracleError> {
        self.check_deadline()?;
        let sent = self.fresh.freshen(test, Some(self.schema));
        let run = self.executor.run_test_case(&sent)?;
        self.tests += 1;
        Ok((sent, run))
    }

    fn has_fault(&self, code: FaultCode, endpoint: &EndpointId) -> bool {
        self.faults.contains_key(&(code, endpoint.clone()))
    }

    /// Records a fault unless one with the same code and endpoint exists.
    /// Expected statuses of the reproduction become the observed ones.
    fn report(
        &mut self,
        code: FaultCode,
        endpoint: &EndpointId,
        flagged: usize,
        evidence: String,
        mut test: TestCase,
        run: Option<&TestRun>,
    ) {
        if self.has_fault(code, endpoint) {
            return;
        }
        if let Some(run) = run {
            for (call, got) in test.calls.iter_mut().zip(&run.calls) {
                if !got.timed_out {
                    call.expected_status = Some(StatusExpectation::Exact(got.status));
                }
            }
        }
        info!(%code, %endpoint, "{evidence}");
        self.faults.insert(
            (code, endpoint.clone()),
            Fault {
                code,
                label: code.label().to_string(),
                endpoint: endpoint.clone(),
                flagged_call_index: flagged,
                evidence,
                test,
            },
        );
    }

    fn run_oracle(&mut self, code: FaultCode) -> OracleResult {
        match code {
            FaultCode::NotRecognizedAuthentication => self.not_recognized_authentication(),
            FaultCode::ExistenceLeakage => self.existence_leakage(),
            FaultCode::MissedAuthorizationChecks => self.missed_authorization_checks(),
            FaultCode::AnonymousModifications => self.anonymous_modifications(),
            FaultCode::IgnoreAnonymous => self.ignore_anonymous(),
            FaultCode::LeakedStackTrace => self.leaked_stack_trace(),
            FaultCode::HiddenAccessible => self.hidden_accessible(),
            FaultCode::SqlInjection => self.sql_injection(),
            FaultCode::CrossSiteScripting => self.cross_site_scripting(),
            FaultCode::Status500 => self.status_500(),
            FaultCode::SchemaMismatch => Ok(()),
        }
    }
}

fn verified(test: &TestCase, run: &TestRun) -> bool {
    run.is_complete(test) && verify_statuses(test, &run.calls)
}

/// Runs 403 synthesis and then every enabled oracle in fixed order.
/// Oracle failures are logged and do not stop the phase.
pub fn run_security_phase(
    pool: TestPool,
    schema: &SchemaModel,
    executor: &Executor,
    config: &SecurityConfig,
) -> SecurityOutcome {
    let phase_start = Instant::now();
    let mut engine = Engine {
        schema,
        executor,
        config,
        fresh: Freshener::new(config.seed ^ 0x5eed_f2e5),
        gen: InputGenerator::new(config.seed ^ 0x0dd5_eed5),
        pool,
        deadline: config.phase_time_budget.map(|b| phase_start + b),
        tests: 0,
        faults: BTreeMap::new(),
    };
    engine.fresh.avoid_pool(&engine.pool);

    let mut order: Vec<Option<FaultCode>> = vec![None];
    order.extend(
        FaultCode::SECURITY
            .into_iter()
            .chain([FaultCode::Status500])
            .filter(|c| config.is_enabled(*c))
            .map(Some),
    );
    let mut stats = PhaseStats::default();
    // Rows are measured back to back from the phase start, so setup time
    // lands in the first row and the rows add up to the total.
    let mut mark = phase_start;
    for step in order {
        if engine.check_deadline().is_err() {
            warn!("security phase budget exhausted; skipping the remaining oracles");
            stats.truncated = true;
            break;
        }
        engine.tests = 0;
        let outcome = match step {
            None => engine
                .executor
                .refresh_credentials()
                .map_err(OracleError::from)
                .and_then(|()| engine.synthesize_403()),
            Some(code) => engine.run_oracle(code),
        };
        let name = step.map_or("403 synthesis".to_string(), |c| c.to_string());
        match outcome {
            Ok(()) => {}
            Err(OracleError::Budget) => {
                warn!("{name} stopped: security phase budget exhausted");
                stats.truncated = true;
            }
            Err(e) => warn!("{name} aborted: {e}"),
        }
        let now = Instant::now();
        stats.per_oracle.push(OracleStats {
            code: step.map_or(0, FaultCode::code),
            new_tests_executed: engine.tests,
            elapsed_ms: (now - mark).as_secs_f64() * 1000.0,
        });
        mark = now;
    }
    stats.total_elapsed_ms = phase_start.elapsed().as_secs_f64() * 1000.0;
    SecurityOutcome {
        faults: engine.faults.into_values().collect(),
        stats,
        pool: engine.pool,
    }
}
