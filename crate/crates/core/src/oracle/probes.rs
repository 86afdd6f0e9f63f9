//! Oracles that inspect responses or probe undeclared verbs.

use std::collections::BTreeMap;

use tracing::debug;

use crate::corpus::{slice_prefix, CallRef, IdentityFilter, Query, StatusFilter};
use crate::http::{HttpAction, Provenance, TestCase};
use crate::schema::{parse_allow_header, EndpointId, ParamLocation, Verb};

use super::{verified, Engine, FaultCode, OracleResult};

/// Statuses that count as properly refusing an undeclared verb.
const HIDDEN_VERB_REFUSALS: [u16; 3] = [403, 405, 501];

impl Engine<'_> {
    /// For each endpoint, the call with the shortest 500 response body.
    fn server_errors(&self) -> BTreeMap<EndpointId, CallRef> {
        let mut best: BTreeMap<EndpointId, CallRef> = BTreeMap::new();
        for ep in self.schema.endpoints().iter().map(|e| &e.id) {
            for r in self.pool.find_all(&Query::new(ep, StatusFilter::Exact(500), IdentityFilter::Any)) {
                let len = self.pool.call(r).response_body.len();
                match best.get(ep) {
                    Some(b) if self.pool.call(*b).response_body.len() <= len => {}
                    _ => {
                        best.insert(ep.clone(), r);
                    }
                }
            }
        }
        best
    }

    /// Re-runs a pool slice on fresh ids; keeps the fresh form if it
    /// reproduces, else the original slice.
    fn confirmed_slice(&mut self, code: FaultCode, ep: &EndpointId, r: CallRef, evidence: String) -> OracleResult {
        let test = slice_prefix(self.pool.entry(r.entry), r.call)?;
        let (sent, run) = self.execute(&test)?;
        if verified(&sent, &run) {
            self.report(code, ep, r.call, evidence, sent, Some(&run));
        } else {
            self.report(code, ep, r.call, evidence, test, None);
        }
        Ok(())
    }

    /// One representative 500 body per endpoint, scanned for stack traces.
    pub(super) fn leaked_stack_trace(&mut self) -> OracleResult {
        for (ep, r) in self.server_errors() {
            let body = &self.pool.call(r).response_body;
            if let Some(m) = self.config.stack_trace_patterns.find(body) {
                let evidence = format!("500 response of {ep} contains a {} stack trace: {}", m.pattern, m.excerpt);
                self.confirmed_slice(FaultCode::LeakedStackTrace, &ep, r, evidence)?;
            }
        }
        Ok(())
    }

    pub(super) fn status_500(&mut self) -> OracleResult {
        for (ep, r) in self.server_errors() {
            let evidence = format!("{ep} answered 500");
            self.confirmed_slice(FaultCode::Status500, &ep, r, evidence)?;
        }
        Ok(())
    }

    /// Concrete values for the placeholders of `path`.
    fn path_args_for(&mut self, path: &str) -> BTreeMap<String, String> {
        let mut args = BTreeMap::new();
        let specs: Vec<_> = self.schema.endpoints().iter().filter(|e| e.id.path == path).collect();
        for p in specs.iter().flat_map(|s| s.params_at(ParamLocation::Path)) {
            if args.contains_key(&p.name) {
                continue;
            }
            let v = match p.value_kind {
                crate::schema::ValueKind::Integer => self.gen.integer(&p.name, &p.constraints).to_string(),
                _ => self.gen.string(&p.name, &p.constraints).unwrap_or_else(|_| "1".into()),
            };
            args.insert(p.name.clone(), v);
        }
        args
    }

    /// Asks OPTIONS for the allowed verbs and calls each verb the schema
    /// does not declare, anonymously first and then as each user.
    pub(super) fn hidden_accessible(&mut self) -> OracleResult {
        let mut identities = vec![self.anonymous()];
        identities.extend(self.users());
        for path in self.schema.paths().into_iter().map(str::to_string).collect::<Vec<_>>() {
            let args = self.path_args_for(&path);
            let options_ep = EndpointId::new(Verb::Options, path.clone());
            for who in &identities {
                let mut options = HttpAction::new(options_ep.clone(), who.clone());
                options.path_args = args.clone();
                let probe = TestCase::new(vec![options.clone()], Provenance::SecuritySynthesis(903));
                let (_, run) = self.execute(&probe)?;
                let Some(allow) = run.last().and_then(|c| c.header("allow")).map(parse_allow_header) else {
                    debug!(%path, %who, "OPTIONS without Allow header, path skipped");
                    break;
                };
                for verb in self.schema.undeclared_verbs(&path, &allow) {
                    let ep = EndpointId::new(verb, path.clone());
                    if self.has_fault(FaultCode::HiddenAccessible, &ep) || !self.allowed(&ep) {
                        continue;
                    }
                    let mut hidden = HttpAction::new(ep.clone(), who.clone());
                    hidden.path_args = args.clone();
                    let test = TestCase::new(vec![options.clone(), hidden], Provenance::SecuritySynthesis(903));
                    let (sent, run) = self.execute(&test)?;
                    let Some(got) = run.calls.get(1) else {
                        continue;
                    };
                    if !got.timed_out && !HIDDEN_VERB_REFUSALS.contains(&got.status) {
                        let evidence = format!(
                            "{verb} on {path} is not in the schema, yet OPTIONS advertises it and it answered {}",
                            got.status
                        );
                        self.report(FaultCode::HiddenAccessible, &ep, 1, evidence, sent, Some(&run));
                    }
                }
            }
        }
        Ok(())
    }
}
