use crate::http::{Binding, Extractor, Slot, StatusExpectation, TestCase};

use super::PoolEntry;

#[derive(Debug, Clone, thiserror::Error, PartialEq, Eq)]
pub enum CompositionError {
    #[error("cannot compose an empty test")]
    Empty,
    #[error("slice index {index} is past the {executed} executed calls")]
    OutOfRange { index: usize, executed: usize },
    #[error("placeholder `{placeholder}` of {endpoint} has no counterpart in the head target")]
    PlaceholderMismatch { placeholder: String, endpoint: String },
}

fn observed(status: u16, timed_out: bool) -> Option<StatusExpectation> {
    (!timed_out).then_some(StatusExpectation::Exact(status))
}

/// Calls `0..=k` of an executed test. Each call now expects the status it
/// got; bindings that stay inside the prefix are kept.
pub fn slice_prefix(entry: &PoolEntry, k: usize) -> Result<TestCase, CompositionError> {
    if k >= entry.executed.len() || k >= entry.test.calls.len() {
        return Err(CompositionError::OutOfRange {
            index: k,
            executed: entry.executed.len(),
        });
    }
    let calls = entry.test.calls[..=k]
        .iter()
        .zip(&entry.executed)
        .map(|(template, got)| {
            let mut a = template.clone();
            a.expected_status = observed(got.status, got.timed_out);
            a.timing = None;
            a
        })
        .collect();
    let bindings = entry
        .test
        .bindings
        .iter()
        .filter(|b| b.target_call_index <= k)
        .cloned()
        .collect();
    Ok(TestCase {
        calls,
        bindings,
        provenance: entry.test.provenance,
    })
}

/// Call `k` alone, with the concrete values it was sent with.
pub fn slice_solo(entry: &PoolEntry, k: usize) -> Result<TestCase, CompositionError> {
    let got = entry.executed.get(k).ok_or(CompositionError::OutOfRange {
        index: k,
        executed: entry.executed.len(),
    })?;
    let mut a = got.action.clone();
    a.expected_status = observed(got.status, got.timed_out);
    a.timing = None;
    Ok(TestCase::new(vec![a], entry.test.provenance))
}

fn append(head: &TestCase, tail: &TestCase) -> Result<TestCase, CompositionError> {
    if head.is_empty() || tail.is_empty() {
        return Err(CompositionError::Empty);
    }
    let shift = head.len();
    let mut out = head.clone();
    out.calls.extend(tail.calls.iter().cloned());
    out.bindings.extend(tail.bindings.iter().map(|b| Binding {
        source_call_index: b.source_call_index + shift,
        target_call_index: b.target_call_index + shift,
        ..b.clone()
    }));
    Ok(out)
}

/// `head` followed by `tail`. With `bind`, every tail call is pointed at
/// the resource of the head's last call: each placeholder takes the head
/// target's value, and a value the head obtained dynamically is extracted
/// again from the same source call.
pub fn concat_and_bind(head: &TestCase, tail: &TestCase, bind: bool) -> Result<TestCase, CompositionError> {
    let mut out = append(head, tail)?;
    if !bind {
        return Ok(out);
    }
    let h = head.len() - 1;
    let source = &head.calls[h];
    let source_placeholders = source.endpoint.placeholders();
    for g in head.len()..out.len() {
        for p in out.calls[g].endpoint.placeholders() {
            if !source_placeholders.contains(&p) {
                return Err(CompositionError::PlaceholderMismatch {
                    placeholder: p,
                    endpoint: out.calls[g].endpoint.to_string(),
                });
            }
            let slot = Slot::PathArg(p.clone());
            match source.path_args.get(&p) {
                Some(v) => {
                    out.calls[g].path_args.insert(p.clone(), v.clone());
                }
                None => {
                    out.calls[g].path_args.remove(&p);
                }
            }
            out.bindings
                .retain(|b| !(b.target_call_index == g && b.target_slot == slot));
            let inherited: Vec<Binding> = head
                .bindings_into(h)
                .filter(|b| b.target_slot == slot)
                .map(|b| Binding {
                    target_call_index: g,
                    ..b.clone()
                })
                .collect();
            out.bindings.extend(inherited);
        }
    }
    Ok(out)
}

/// `head` followed by `tail`, where the head's last call created a
/// resource: the tail's last call gets `slot` from the creation response
/// and its other placeholders from the head's last call.
pub fn concat_with_created(
    head: &TestCase,
    tail: &TestCase,
    extractor: Extractor,
    slot: &str,
) -> Result<TestCase, CompositionError> {
    let mut out = append(head, tail)?;
    let h = head.len() - 1;
    let g = out.len() - 1;
    let creator = head.calls[h].clone();
    for p in out.calls[g].endpoint.placeholders() {
        if p == slot {
            continue;
        }
        let Some(v) = creator.path_args.get(&p) else {
            return Err(CompositionError::PlaceholderMismatch {
                placeholder: p,
                endpoint: out.calls[g].endpoint.to_string(),
            });
        };
        out.calls[g].path_args.insert(p.clone(), v.clone());
    }
    let target_slot = Slot::PathArg(slot.to_string());
    out.bindings
        .retain(|b| !(b.target_call_index == g && b.target_slot == target_slot));
    out.bindings.push(Binding {
        source_call_index: h,
        extractor,
        target_call_index: g,
        target_slot,
    });
    Ok(out)
}
