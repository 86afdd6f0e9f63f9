use std::collections::HashMap;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use tracing::debug;

use super::transport::{HttpTransport, PreparedRequest, Transport, TransportError, TransportOptions};
use super::{ExecutedCall, HttpAction, TestCase};
use crate::auth::{self, AuthError, AuthIdentity, ResolvedCredential};

#[derive(Debug, thiserror::Error)]
pub enum ExecutorError {
    #[error("transport error on {call}: {source}")]
    Transport {
        call: String,
        #[source]
        source: TransportError,
    },
    #[error(transparent)]
    Auth(#[from] AuthError),
    #[error("call {call} lacks a value for placeholder `{placeholder}`")]
    MissingPathArg { call: String, placeholder: String },
}

#[derive(Debug, Clone)]
pub struct ExecutorConfig {
    pub base_url: String,
    pub timeout: Duration,
    pub body_cap: usize,
    pub http_proxy: Option<String>,
}

impl ExecutorConfig {
    pub fn new(base_url: impl Into<String>) -> Self {
        let defaults = TransportOptions::default();
        Self {
            base_url: base_url.into(),
            timeout: defaults.timeout,
            body_cap: defaults.body_cap,
            http_proxy: defaults.http_proxy,
        }
    }
}

/// Outcome of running a test case. `calls` holds one entry per executed
/// call; when a binding could not be extracted the run stops early and
/// `unbindable` says why.
#[derive(Debug, Clone, PartialEq)]
pub struct TestRun {
    pub calls: Vec<ExecutedCall>,
    pub unbindable: Option<String>,
}

impl TestRun {
    pub fn last(&self) -> Option<&ExecutedCall> {
        self.calls.last()
    }

    pub fn is_complete(&self, test: &TestCase) -> bool {
        self.unbindable.is_none() && self.calls.len() == test.calls.len()
    }
}

/// Runs actions against one target. Calls are strictly sequential.
pub struct Executor {
    base_url: String,
    transport: Box<dyn Transport>,
    identities: Vec<AuthIdentity>,
    credentials: Mutex<HashMap<String, ResolvedCredential>>,
    executed: Mutex<usize>,
}

impl Executor {
    pub fn new(config: &ExecutorConfig, identities: Vec<AuthIdentity>) -> Result<Self, ExecutorError> {
        let transport = HttpTransport::new(&TransportOptions {
            timeout: config.timeout,
            body_cap: config.body_cap,
            http_proxy: config.http_proxy.clone(),
        })
        .map_err(|source| ExecutorError::Transport {
            call: "client setup".into(),
            source,
        })?;
        Ok(Self::with_transport(&config.base_url, Box::new(transport), identities))
    }

    pub fn with_transport(
        base_url: &str,
        transport: Box<dyn Transport>,
        mut identities: Vec<AuthIdentity>,
    ) -> Self {
        if !identities.iter().any(AuthIdentity::is_anonymous) {
            identities.push(AuthIdentity::anonymous());
        }
        Self {
            base_url: base_url.trim_end_matches('/').to_string(),
            transport,
            identities,
            credentials: Mutex::new(HashMap::new()),
            executed: Mutex::new(0),
        }
    }

    pub fn base_url(&self) -> &str {
        &self.base_url
    }

    pub fn identities(&self) -> &[AuthIdentity] {
        &self.identities
    }

    pub fn identity(&self, name: &str) -> Option<&AuthIdentity> {
        self.identities.iter().find(|i| i.name == name)
    }

    /// Non-anonymous identities in configuration order.
    pub fn users(&self) -> impl Iterator<Item = &AuthIdentity> {
        self.identities.iter().filter(|i| !i.is_anonymous())
    }

    pub fn anonymous_name(&self) -> &str {
        self.identities
            .iter()
            .find(|i| i.is_anonymous())
            .map(|i| i.name.as_str())
            .unwrap_or(auth::ANONYMOUS)
    }

    /// Number of HTTP calls sent so far, login calls excluded.
    pub fn calls_executed(&self) -> usize {
        *self.executed.lock().unwrap()
    }

    /// Cached credential for `name`, resolving it on first use.
    pub fn credentials(&self, name: &str) -> Result<ResolvedCredential, ExecutorError> {
        let mut cache = self.credentials.lock().unwrap();
        if let Some(c) = cache.get(name) {
            return Ok(c.clone());
        }
        let identity = self
            .identity(name)
            .ok_or_else(|| AuthError::UnknownIdentity(name.to_string()))?;
        let resolved = auth::resolve(identity, self.transport.as_ref(), &self.base_url)?;
        cache.insert(name.to_string(), resolved.clone());
        Ok(resolved)
    }

    /// Drops cached tokens and logs every identity in again.
    pub fn refresh_credentials(&self) -> Result<(), ExecutorError> {
        self.credentials.lock().unwrap().clear();
        let names: Vec<String> = self.identities.iter().map(|i| i.name.clone()).collect();
        for name in names {
            self.credentials(&name)?;
        }
        Ok(())
    }

    pub fn prepare(
        &self,
        action: &HttpAction,
        credentials: &ResolvedCredential,
    ) -> Result<PreparedRequest, ExecutorError> {
        for ph in action.endpoint.placeholders() {
            if !action.path_args.contains_key(&ph) {
                return Err(ExecutorError::MissingPathArg {
                    call: action.to_string(),
                    placeholder: ph,
                });
            }
        }
        let mut url = format!("{}{}", self.base_url, action.concrete_path());
        if !action.query.is_empty() {
            let q = url::form_urlencoded::Serializer::new(String::new())
                .extend_pairs(action.query.iter())
                .finish();
            url.push('?');
            url.push_str(&q);
        }
        let mut headers: Vec<(String, String)> = vec![("Accept".into(), "*/*".into())];
        headers.extend(action.headers.iter().cloned());
        headers.extend(credentials.headers.iter().map(|(k, v)| (k.clone(), v.clone())));
        Ok(PreparedRequest {
            method: action.endpoint.verb.to_string(),
            url,
            headers,
            body: action
                .body
                .as_ref()
                .map(|b| (b.media_type.clone(), b.render())),
        })
    }

    /// Sends one action with explicit credentials. Timeouts come back as a
    /// call flagged `timed_out`; other transport failures are errors.
    pub fn execute_with(
        &self,
        action: &HttpAction,
        credentials: &ResolvedCredential,
    ) -> Result<ExecutedCall, ExecutorError> {
        let request = self.prepare(action, credentials)?;
        *self.executed.lock().unwrap() += 1;
        let start = Instant::now();
        let outcome = self.transport.send(&request);
        let duration_ms = start.elapsed().as_secs_f64() * 1000.0;
        match outcome {
            Ok(resp) => Ok(ExecutedCall {
                action: action.clone(),
                status: resp.status,
                response_headers: resp.headers,
                response_body: String::from_utf8_lossy(&resp.body).into_owned(),
                body_truncated: resp.truncated,
                duration_ms,
                timed_out: false,
            }),
            Err(TransportError::Timeout) => Ok(ExecutedCall {
                action: action.clone(),
                status: 0,
                response_headers: Default::default(),
                response_body: String::new(),
                body_truncated: false,
                duration_ms,
                timed_out: true,
            }),
            Err(source) => Err(ExecutorError::Transport {
                call: action.to_string(),
                source,
            }),
        }
    }

    pub fn execute(&self, action: &HttpAction) -> Result<ExecutedCall, ExecutorError> {
        let creds = self.credentials(&action.identity)?;
        self.execute_with(action, &creds)
    }

    /// Runs the calls of `test` in order, applying each binding right
    /// before its target call from the recorded source response.
    pub fn run_test_case(&self, test: &TestCase) -> Result<TestRun, ExecutorError> {
        let mut calls: Vec<ExecutedCall> = Vec::with_capacity(test.calls.len());
        for (i, template) in test.calls.iter().enumerate() {
            let mut action = template.clone();
            for b in test.bindings_into(i) {
                let value = calls
                    .get(b.source_call_index)
                    .and_then(|src| src.extract(&b.extractor));
                let applied = value
                    .as_deref()
                    .is_some_and(|v| action.set_slot(&b.target_slot, v));
                if !applied {
                    let reason = format!(
                        "cannot bind {:?} of call {} from {:?} of call {}",
                        b.target_slot, i, b.extractor, b.source_call_index
                    );
                    debug!("{reason}");
                    return Ok(TestRun {
                        calls,
                        unbindable: Some(reason),
                    });
                }
            }
            calls.push(self.execute(&action)?);
        }
        Ok(TestRun {
            calls,
            unbindable: None,
        })
    }
}

/// True iff every call that carries an expected status got it.
pub fn verify_statuses(test: &TestCase, observed: &[ExecutedCall]) -> bool {
    if observed.len() != test.calls.len() {
        return false;
    }
    test.calls.iter().zip(observed).all(|(expected, got)| {
        match expected.expected_status {
            None => true,
            Some(_) if got.timed_out => false,
            Some(e) => e.matches(got.status),
        }
    })
}

/// True iff every call that carries a timing expectation met it.
pub fn verify_timings(test: &TestCase, observed: &[ExecutedCall]) -> bool {
    observed.len() == test.calls.len()
        && test
            .calls
            .iter()
            .zip(observed)
            .all(|(expected, got)| expected.timing.is_none_or(|t| t.holds(got.duration_ms)))
}
