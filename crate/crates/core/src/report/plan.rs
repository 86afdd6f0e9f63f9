use serde::{Deserialize, Serialize};

use crate::auth::AuthIdentity;
use crate::corpus::Freshener;
use crate::http::{verify_statuses, verify_timings, Executor, ExecutorError, TestCase};
use crate::oracle::Fault;

use super::{test_name, FORMAT_VERSION};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct FaultComment {
    pub call_index: usize,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PlanTest {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fault_code: Option<u16>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fault_comment: Option<FaultComment>,
    pub test: TestCase,
}

/// Suite format read back by `replay`. Identities travel with the plan
/// so login-flow users log in again before each test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct JsonPlan {
    pub format_version: u32,
    pub base_url: String,
    pub identities: Vec<AuthIdentity>,
    pub tests: Vec<PlanTest>,
}

#[derive(Debug, thiserror::Error)]
pub enum ReplayError {
    #[error("cannot parse plan: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("unsupported plan format version {0}")]
    Version(u32),
    #[error("test `{name}` is malformed: {reason}")]
    Malformed { name: String, reason: String },
    #[error("test `{name}`: {source}")]
    Executor {
        name: String,
        source: ExecutorError,
    },
}

impl JsonPlan {
    pub fn from_faults(faults: &[Fault], identities: &[AuthIdentity], base_url: &str) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            base_url: base_url.to_string(),
            identities: identities.to_vec(),
            tests: faults
                .iter()
                .enumerate()
                .map(|(i, f)| PlanTest {
                    name: test_name(i, f),
                    fault_code: Some(f.code.code()),
                    fault_comment: Some(FaultComment {
                        call_index: f.flagged_call_index,
                        text: f.code.comment(),
                    }),
                    test: f.test.clone(),
                })
                .collect(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plan values are always serializable") + "\n"
    }

    pub fn parse(text: &str) -> Result<Self, ReplayError> {
        let plan: JsonPlan = serde_json::from_str(text)?;
        if plan.format_version != FORMAT_VERSION {
            return Err(ReplayError::Version(plan.format_version));
        }
        for t in &plan.tests {
            t.test.validate().map_err(|e| ReplayError::Malformed {
                name: t.name.clone(),
                reason: e.to_string(),
            })?;
        }
        Ok(plan)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TestVerdict {
    pub name: String,
    pub passed: bool,
    /// Observed status per executed call.
    pub statuses: Vec<u16>,
    pub detail: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReplayOutcome {
    pub verdicts: Vec<TestVerdict>,
}

impl ReplayOutcome {
    pub fn all_passed(&self) -> bool {
        self.verdicts.iter().all(|v| v.passed)
    }
}

/// Runs every test of `plan`. With `fresh_ids`, path ids are renamed to
/// unused values first (seeded by the given value) so the plan can run
/// against a server that still holds the resources of an earlier run.
pub fn replay_plan(plan: &JsonPlan, executor: &Executor, fresh_ids: Option<u64>) -> Result<ReplayOutcome, ReplayError> {
    let mut fresh = fresh_ids.map(Freshener::new);
    let mut outcome = ReplayOutcome::default();
    for t in &plan.tests {
        let exec_err = |source| ReplayError::Executor {
            name: t.name.clone(),
            source,
        };
        executor.refresh_credentials().map_err(exec_err)?;
        let test = match fresh.as_mut() {
            Some(f) => f.freshen(&t.test, None),
            None => t.test.clone(),
        };
        let run = executor.run_test_case(&test).map_err(exec_err)?;
        let statuses: Vec<u16> = run.calls.iter().map(|c| c.status).collect();
        let (passed, detail) = if let Some(reason) = &run.unbindable {
            (false, reason.clone())
        } else if !verify_statuses(&test, &run.calls) {
            let expected: Vec<String> = test
                .calls
                .iter()
                .map(|c| c.expected_status.map_or("-".into(), |s| s.to_string()))
                .collect();
            (false, format!("expected statuses {expected:?}, got {statuses:?}"))
        } else if !verify_timings(&test, &run.calls) {
            let took: Vec<String> = run.calls.iter().map(|c| format!("{:.0} ms", c.duration_ms)).collect();
            (false, format!("timing assertion failed; durations {took:?}"))
        } else {
            (true, String::new())
        };
        outcome.verdicts.push(TestVerdict {
            name: t.name.clone(),
            passed,
            statuses,
            detail,
        });
    }
    Ok(outcome)
}
