//! Oracles built from authentication and authorization scenarios.

use tracing::debug;

use crate::corpus::{
    concat_and_bind, creators, slice_prefix, slice_solo, CallRef, Creator, IdentityFilter,
    PoolEntry, Query, StatusFilter,
};
use crate::http::{Binding, Extractor, Provenance, Slot, StatusExpectation, TestCase};
use crate::schema::{EndpointId, Verb};

use super::{verified, Engine, FaultCode, OracleResult};

const TRIO: [Verb; 3] = [Verb::Delete, Verb::Put, Verb::Patch];

/// True when some earlier 2xx call by another identity addressed the same
/// resource as the last call, so a 403 there is about someone else's
/// resource and not a missing one.
fn targets_existing_resource(test: &TestCase) -> bool {
    let k = test.len() - 1;
    let last = test.last();
    let placeholders = last.endpoint.placeholders();
    let bound_from: Vec<usize> = test.bindings_into(k).map(|b| b.source_call_index).collect();
    test.calls[..k].iter().enumerate().any(|(i, c)| {
        let ok = matches!(c.expected_status, Some(StatusExpectation::Exact(s)) if (200..300).contains(&s));
        let same = bound_from.contains(&i)
            || (c.endpoint.path == last.endpoint.path
                && placeholders
                    .iter()
                    .all(|p| c.path_args.get(p) == last.path_args.get(p)));
        ok && same && c.identity != last.identity
    })
}

impl Engine<'_> {
    fn prefix(&self, r: CallRef) -> Result<TestCase, super::OracleError> {
        Ok(slice_prefix(self.pool.entry(r.entry), r.call)?)
    }

    fn first(&self, q: Query) -> Vec<CallRef> {
        let mut all = self.pool.find_all(&q);
        all.truncate(self.config.attempts);
        all
    }

    /// 403 calls matching `q`, those whose own prefix created the denied
    /// resource first. A 403 on a resource made by some earlier, unrelated
    /// test does not reproduce once ids are freshened.
    fn self_contained_denials(&self, q: Query) -> Result<Vec<CallRef>, super::OracleError> {
        let mut scored = Vec::new();
        for r in self.pool.find_all(&q) {
            scored.push((!targets_existing_resource(&self.prefix(r)?), r));
        }
        scored.sort_by_key(|(outside, _)| *outside);
        Ok(scored.into_iter().map(|(_, r)| r).take(self.config.attempts).collect())
    }

    /// For each endpoint lacking a 403 but showing a 401, replays a
    /// successful authenticated call as every other user, keeping the runs
    /// that come back 403.
    pub(super) fn synthesize_403(&mut self) -> OracleResult {
        let users = self.users();
        if users.len() < 2 {
            debug!("403 synthesis needs two users");
            return Ok(());
        }
        let endpoints: Vec<EndpointId> = self
            .schema
            .endpoints()
            .iter()
            .map(|e| e.id.clone())
            .filter(|e| self.allowed(e))
            .collect();
        for ep in endpoints {
            if self.pool.find(&Query::new(&ep, StatusFilter::Exact(403), IdentityFilter::Any)).is_some() {
                continue;
            }
            if self.pool.find(&Query::new(&ep, StatusFilter::Exact(401), IdentityFilter::Any)).is_none() {
                debug!(%ep, "no 401 seen, endpoint likely unauthenticated");
                continue;
            }
            let candidates = self.first(Query::new(&ep, StatusFilter::Class(2), IdentityFilter::Authenticated));
            'candidates: for r in candidates {
                let owner = self.pool.call(r).action.identity.clone();
                for other in users.iter().filter(|u| **u != owner) {
                    let mut test = self.prefix(r)?;
                    let k = test.len() - 1;
                    let mut dup = test.last().clone();
                    dup.identity = other.clone();
                    dup.expected_status = None;
                    let inherited: Vec<Binding> = test
                        .bindings_into(k)
                        .map(|b| Binding {
                            target_call_index: k + 1,
                            ..b.clone()
                        })
                        .collect();
                    test.calls.push(dup);
                    test.bindings.extend(inherited);
                    test.provenance = Provenance::SecuritySynthesis(0);
                    let (sent, run) = self.execute(&test)?;
                    if run.is_complete(&sent) && run.last().is_some_and(|c| c.status == 403) {
                        self.pool.push(PoolEntry {
                            test: sent,
                            executed: run.calls,
                        });
                        break 'candidates;
                    }
                }
            }
        }
        Ok(())
    }

    /// A user gets 401 on X although the same credentials work on Y, and Y
    /// does check credentials.
    pub(super) fn not_recognized_authentication(&mut self) -> OracleResult {
        let endpoints: Vec<EndpointId> = self.schema.endpoints().iter().map(|e| e.id.clone()).collect();
        for x in &endpoints {
            let t1s = self.first(Query::new(x, StatusFilter::Exact(401), IdentityFilter::Authenticated));
            'x: for t1 in t1s {
                let a = self.pool.call(t1).action.identity.clone();
                let mut attempts = 0;
                for y in endpoints.iter().filter(|y| *y != x) {
                    let t2 = self.pool.find(&Query::new(y, StatusFilter::Class(2), IdentityFilter::Named(a.clone())));
                    let t3 = self.pool.find(&Query::new(y, StatusFilter::AnyOf(vec![401, 403]), IdentityFilter::Any));
                    let (Some(t2), Some(t3)) = (t2, t3) else {
                        continue;
                    };
                    if attempts == self.config.attempts {
                        break;
                    }
                    attempts += 1;
                    let head = concat_and_bind(&self.prefix(t3)?, &self.prefix(t2)?, false)?;
                    let k = concat_and_bind(&head, &self.prefix(t1)?, false)?;
                    let (sent, run) = self.execute(&k)?;
                    if verified(&sent, &run) {
                        let last = sent.len() - 1;
                        let status2 = run.calls[head.len() - 1].status;
                        self.report(
                            FaultCode::NotRecognizedAuthentication,
                            x,
                            last,
                            format!("{a} gets 401 on {x}, yet the same credentials got {status2} on {y}, which rejects bad credentials"),
                            sent,
                            Some(&run),
                        );
                        break 'x;
                    }
                }
            }
        }
        Ok(())
    }

    /// A GET answers 403 for an existing resource and 404 for a missing
    /// one, revealing which ids exist.
    pub(super) fn existence_leakage(&mut self) -> OracleResult {
        let gets: Vec<EndpointId> = self
            .schema
            .endpoints()
            .iter()
            .filter(|e| e.id.verb == Verb::Get)
            .map(|e| e.id.clone())
            .collect();
        let anonymous = self.anonymous();
        for x in gets {
            let t1s = self.self_contained_denials(Query::new(&x, StatusFilter::Exact(403), IdentityFilter::Any))?;
            let t2s = self.first(Query::new(&x, StatusFilter::Exact(404), IdentityFilter::Any));
            let mut pairs: Vec<(usize, usize)> = (0..t1s.len())
                .flat_map(|i| (0..t2s.len()).map(move |j| (i, j)))
                .collect();
            pairs.sort_by_key(|&(i, j)| (i + j, i));
            let pairs: Vec<(CallRef, CallRef)> = pairs
                .into_iter()
                .take(self.config.attempts)
                .map(|(i, j)| (t1s[i], t2s[j]))
                .collect();
            for (t1, t2) in pairs {
                let mut k = concat_and_bind(&self.prefix(t1)?, &self.prefix(t2)?, false)?;
                let flagged = k.len() - 1;
                let a = k.last().identity.clone();
                let ancestor = if a == anonymous {
                    None
                } else {
                    self.schema.top_get_ancestor(&x.path).ok().flatten()
                };
                if let Some(anc) = &ancestor {
                    let mut call = crate::http::HttpAction::new(anc.clone(), a.clone());
                    for p in anc.placeholders() {
                        if let Some(v) = k.last().path_args.get(&p) {
                            call.path_args.insert(p, v.clone());
                        }
                    }
                    call.expected_status = Some(StatusExpectation::Exact(404));
                    k = concat_and_bind(&k, &TestCase::new(vec![call], k.provenance), true)?;
                }
                let (sent, run) = self.execute(&k)?;
                if verified(&sent, &run) {
                    let evidence = match &ancestor {
                        None => format!("{x} answers 403 for a protected resource and 404 for a missing one"),
                        Some(anc) => format!("{x} answers 403 and 404 by existence while {anc} also answers 404"),
                    };
                    self.report(FaultCode::ExistenceLeakage, &x, flagged, evidence, sent, Some(&run));
                    break;
                }
                if ancestor.is_some() && run.is_complete(&sent) {
                    debug!(%x, "ancestor GET did not answer 404, inconclusive");
                }
            }
        }
        Ok(())
    }

    /// Tests that create a resource at `target` as `owner` and then call
    /// `target` on it as `actor`. One variant per way of reading the id.
    fn creation_attempts(&mut self, target: &EndpointId, owner: &str, actor: &str) -> Vec<TestCase> {
        let mut out = Vec::new();
        let Some(spec) = self.schema.endpoint(target) else {
            return out;
        };
        for creator in creators(self.schema, target) {
            let creator_id = match &creator {
                Creator::SamePath(ep) | Creator::Collection { endpoint: ep, .. } => ep.clone(),
            };
            if !self.allowed(&creator_id) {
                continue;
            }
            let Some(creator_spec) = self.schema.endpoint(&creator_id) else {
                continue;
            };
            let (Ok(first), Ok(mut second)) = (self.gen.action(creator_spec, owner), self.gen.action(spec, actor)) else {
                continue;
            };
            for (k, v) in &first.path_args {
                if second.path_args.contains_key(k) {
                    second.path_args.insert(k.clone(), v.clone());
                }
            }
            let test = TestCase::new(vec![first, second], Provenance::SecuritySynthesis(FaultCode::MissedAuthorizationChecks.code()));
            match creator {
                Creator::SamePath(_) => out.push(test),
                Creator::Collection { slot, .. } => {
                    for extractor in [Extractor::LocationHeader, Extractor::BodyField("id".into())] {
                        let mut t = test.clone();
                        t.bindings.push(Binding {
                            source_call_index: 0,
                            extractor,
                            target_call_index: 1,
                            target_slot: Slot::PathArg(slot.clone()),
                        });
                        out.push(t);
                    }
                }
            }
        }
        out
    }

    /// A user denied one of DELETE/PUT/PATCH on a resource is allowed
    /// another of them on the same resource.
    pub(super) fn missed_authorization_checks(&mut self) -> OracleResult {
        let users = self.users();
        for path in self.schema.paths().into_iter().map(str::to_string).collect::<Vec<_>>() {
            let trio: Vec<Verb> = TRIO
                .into_iter()
                .filter(|v| self.schema.is_declared(*v, &path) && self.allowed(&EndpointId::new(*v, path.clone())))
                .collect();
            if trio.len() < 2 {
                continue;
            }
            for v in &trio {
                let ep = EndpointId::new(*v, path.clone());
                let mut denied: Vec<TestCase> = Vec::new();
                for r in self.pool.find_all(&Query::new(&ep, StatusFilter::Exact(403), IdentityFilter::Authenticated)) {
                    let c = self.prefix(r)?;
                    if targets_existing_resource(&c) {
                        denied.push(c);
                    }
                    if denied.len() == self.config.attempts {
                        break;
                    }
                }
                if denied.is_empty() {
                    'create: for owner in &users {
                        for actor in users.iter().filter(|u| *u != owner) {
                            for attempt in self.creation_attempts(&ep, owner, actor) {
                                let (sent, run) = self.execute(&attempt)?;
                                if run.is_complete(&sent) && run.last().is_some_and(|c| c.status == 403) {
                                    let mut c = sent;
                                    for (call, got) in c.calls.iter_mut().zip(&run.calls) {
                                        call.expected_status = Some(StatusExpectation::Exact(got.status));
                                    }
                                    denied.push(c);
                                    break 'create;
                                }
                            }
                        }
                    }
                }
                if denied.is_empty() {
                    debug!(%ep, "no denied modification available");
                    continue;
                }
                for v2 in trio.iter().filter(|w| *w != v) {
                    let ep2 = EndpointId::new(*v2, path.clone());
                    let allowed = self.first(Query::new(&ep2, StatusFilter::Class(2), IdentityFilter::Authenticated));
                    let mut attempts = 0;
                    'pair: for ck in &denied {
                        let a = ck.last().identity.clone();
                        for tj in &allowed {
                            if self.has_fault(FaultCode::MissedAuthorizationChecks, &ep2) || attempts == self.config.attempts {
                                break 'pair;
                            }
                            let mut tail = slice_solo(self.pool.entry(tj.entry), tj.call)?;
                            tail.calls[0].identity = a.clone();
                            tail.calls[0].expected_status = Some(StatusExpectation::Class(2));
                            let z = match concat_and_bind(ck, &tail, true) {
                                Ok(z) => z,
                                Err(e) => {
                                    debug!(%ep2, "not applicable: {e}");
                                    continue;
                                }
                            };
                            attempts += 1;
                            let (sent, run) = self.execute(&z)?;
                            if verified(&sent, &run) {
                                let last = sent.len() - 1;
                                let status = run.calls[last].status;
                                self.report(
                                    FaultCode::MissedAuthorizationChecks,
                                    &ep2,
                                    last,
                                    format!("{a} is denied {v} on the resource but gets {status} on {v2}"),
                                    sent,
                                    Some(&run),
                                );
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Pool scan: DELETE, PUT or PATCH succeeding without credentials.
    /// An anonymous PUT answered 201 is not flagged. The reproduction is
    /// re-run once on fresh ids and kept in that form when it verifies.
    pub(super) fn anonymous_modifications(&mut self) -> OracleResult {
        let endpoints: Vec<EndpointId> = self
            .schema
            .endpoints()
            .iter()
            .filter(|e| e.id.verb.is_modification())
            .map(|e| e.id.clone())
            .collect();
        for ep in endpoints {
            let hits: Vec<CallRef> = self
                .pool
                .find_all(&Query::new(&ep, StatusFilter::Class(2), IdentityFilter::Anonymous))
                .into_iter()
                .filter(|r| !(ep.verb == Verb::Put && self.pool.call(*r).status == 201))
                .collect();
            let Some(first) = hits.first().copied() else {
                continue;
            };
            let status = self.pool.call(first).status;
            let evidence = format!("{ep} answered {status} to a request without credentials");
            let mut confirmed = None;
            for r in hits.iter().take(self.config.attempts) {
                let (sent, run) = self.execute(&self.prefix(*r)?)?;
                if verified(&sent, &run) {
                    confirmed = Some((r.call, sent, run));
                    break;
                }
            }
            match confirmed {
                Some((k, sent, run)) => {
                    self.report(FaultCode::AnonymousModifications, &ep, k, evidence, sent, Some(&run))
                }
                None => {
                    let test = self.prefix(first)?;
                    self.report(FaultCode::AnonymousModifications, &ep, first.call, evidence, test, None)
                }
            }
        }
        Ok(())
    }

    /// An endpoint that denies some authenticated user still serves
    /// requests without any credentials.
    pub(super) fn ignore_anonymous(&mut self) -> OracleResult {
        let endpoints: Vec<EndpointId> = self
            .schema
            .endpoints()
            .iter()
            .map(|e| e.id.clone())
            .filter(|e| self.allowed(e))
            .collect();
        let anonymous = self.anonymous();
        for ep in endpoints {
            let t1s = self.first(Query::new(&ep, StatusFilter::AnyOf(vec![401, 403]), IdentityFilter::Authenticated));
            if t1s.is_empty() {
                continue;
            }
            let t2s = self.first(Query::new(&ep, StatusFilter::Class(2), IdentityFilter::Anonymous));
            let t3s = self.first(Query::new(&ep, StatusFilter::Class(2), IdentityFilter::Authenticated));
            let mut attempts = 0;
            'ep: for t1 in &t1s {
                for t2 in &t2s {
                    if attempts == self.config.attempts {
                        break 'ep;
                    }
                    attempts += 1;
                    let k = concat_and_bind(&self.prefix(*t1)?, &self.prefix(*t2)?, false)?;
                    let (sent, run) = self.execute(&k)?;
                    if verified(&sent, &run) {
                        let last = sent.len() - 1;
                        let status = run.calls[last].status;
                        self.report(
                            FaultCode::IgnoreAnonymous,
                            &ep,
                            last,
                            format!("{ep} denies an authenticated user yet answers {status} without credentials"),
                            sent,
                            Some(&run),
                        );
                        break 'ep;
                    }
                }
                for t3 in &t3s {
                    if attempts == self.config.attempts {
                        break 'ep;
                    }
                    attempts += 1;
                    let mut c3 = self.prefix(*t3)?;
                    let last = c3.last_mut();
                    last.identity = anonymous.clone();
                    last.expected_status = Some(StatusExpectation::Class(2));
                    let k = concat_and_bind(&self.prefix(*t1)?, &c3, false)?;
                    let (sent, run) = self.execute(&k)?;
                    if verified(&sent, &run) {
                        let last = sent.len() - 1;
                        let status = run.calls[last].status;
                        self.report(
                            FaultCode::IgnoreAnonymous,
                            &ep,
                            last,
                            format!("{ep} denies an authenticated user yet answers {status} once credentials are dropped"),
                            sent,
                            Some(&run),
                        );
                        break 'ep;
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::http::HttpAction;

    fn call(verb: Verb, who: &str, id: &str, status: u16) -> HttpAction {
        HttpAction::new(EndpointId::new(verb, "/r/{id}"), who)
            .with_arg("id", id)
            .expecting(StatusExpectation::Exact(status))
    }

    #[test]
    fn existing_resource_guard() {
        let owned = TestCase::new(
            vec![call(Verb::Put, "BAR", "5", 201), call(Verb::Delete, "FOO", "5", 403)],
            Provenance::BaseFuzzing,
        );
        assert!(targets_existing_resource(&owned));
        let missing = TestCase::new(vec![call(Verb::Delete, "FOO", "5", 403)], Provenance::BaseFuzzing);
        assert!(!targets_existing_resource(&missing));
        let other_id = TestCase::new(
            vec![call(Verb::Put, "BAR", "6", 201), call(Verb::Delete, "FOO", "5", 403)],
            Provenance::BaseFuzzing,
        );
        assert!(!targets_existing_resource(&other_id));
    }
}
