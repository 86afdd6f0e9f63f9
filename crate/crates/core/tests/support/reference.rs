//! Brute-force model of slicing and binding. A test is flattened into the
//! calls it would send, where each bound slot is represented symbolically
//! by the call and extractor that feed it.

#![allow(dead_code)]

use std::collections::BTreeMap;

use apiguard_core::corpus::PoolEntry;
use apiguard_core::http::{Extractor, Slot, StatusExpectation, TestCase};

#[derive(Debug, Clone, PartialEq)]
pub enum Arg {
    Lit(String),
    From(usize, Extractor),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlatCall {
    pub endpoint: String,
    pub identity: String,
    pub args: BTreeMap<String, Arg>,
    pub expected: Option<StatusExpectation>,
}

fn slot_key(slot: &Slot) -> String {
    match slot {
        Slot::PathArg(n) => format!("path:{n}"),
        Slot::QueryParam(n) => format!("query:{n}"),
        Slot::BodyField(n) => format!("body:{n}"),
    }
}

pub fn flatten(test: &TestCase) -> Vec<FlatCall> {
    let mut out: Vec<FlatCall> = test
        .calls
        .iter()
        .map(|c| FlatCall {
            endpoint: c.endpoint.to_string(),
            identity: c.identity.clone(),
            args: c
                .path_args
                .iter()
                .map(|(k, v)| (format!("path:{k}"), Arg::Lit(v.clone())))
                .chain(c.query.iter().map(|(k, v)| (format!("query:{k}"), Arg::Lit(v.clone()))))
                .chain(c.body.iter().map(|b| ("body".to_string(), Arg::Lit(b.render()))))
                .collect(),
            expected: c.expected_status,
        })
        .collect();
    for b in &test.bindings {
        out[b.target_call_index]
            .args
            .insert(slot_key(&b.target_slot), Arg::From(b.source_call_index, b.extractor.clone()));
    }
    out
}

pub fn prefix(entry: &PoolEntry, k: usize) -> Option<Vec<FlatCall>> {
    if k >= entry.executed.len() {
        return None;
    }
    let mut calls = flatten(&entry.test);
    calls.truncate(k + 1);
    for (c, got) in calls.iter_mut().zip(&entry.executed) {
        c.expected = (!got.timed_out).then_some(StatusExpectation::Exact(got.status));
    }
    Some(calls)
}

fn placeholders(endpoint: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut rest = endpoint;
    while let Some(open) = rest.find('{') {
        let Some(close) = rest[open..].find('}') else { break };
        out.push(rest[open + 1..open + close].to_string());
        rest = &rest[open + close + 1..];
    }
    out
}

/// `None` when binding is impossible because a tail placeholder is
/// missing from the head's last call.
pub fn concat(head: &TestCase, tail: &TestCase, bind: bool) -> Option<Vec<FlatCall>> {
    let h = flatten(head);
    let shift = h.len();
    let mut t = flatten(tail);
    for c in &mut t {
        for a in c.args.values_mut() {
            if let Arg::From(i, _) = a {
                *i += shift;
            }
        }
    }
    if bind {
        let last = h.last()?;
        let last_placeholders = placeholders(&last.endpoint);
        for c in &mut t {
            for p in placeholders(&c.endpoint) {
                if !last_placeholders.contains(&p) {
                    return None;
                }
                let key = format!("path:{p}");
                match last.args.get(&key) {
                    Some(v) => c.args.insert(key, v.clone()),
                    None => c.args.remove(&key),
                };
            }
        }
    }
    Some(h.into_iter().chain(t).collect())
}
