use std::collections::BTreeSet;
use std::time::{Duration, Instant};

use regex::Regex;
use tracing::{debug, info, warn};

use crate::http::{Binding, Executor, ExecutorError, Extractor, HttpAction, Provenance, Slot, TestCase};
use crate::schema::{EndpointId, EndpointSpec, SchemaModel, Verb};

use super::{InputGenerator, PoolEntry, TestPool};

/// Hard stop for base fuzzing, whatever the budget.
pub const MAX_ROUNDS: usize = 200;

#[derive(Debug, Clone)]
pub struct FuzzConfig {
    pub seed: u64,
    pub budget: Duration,
    /// Paths matching any of these never receive POST, PUT, PATCH or DELETE.
    pub deny: Vec<Regex>,
    pub max_rounds: usize,
}

impl FuzzConfig {
    pub fn new(seed: u64, budget: Duration) -> Self {
        Self {
            seed,
            budget,
            deny: Vec::new(),
            max_rounds: MAX_ROUNDS,
        }
    }

    pub fn allows(&self, endpoint: &EndpointId) -> bool {
        is_allowed(&self.deny, endpoint)
    }
}

pub(crate) fn is_allowed(deny: &[Regex], endpoint: &EndpointId) -> bool {
    matches!(endpoint.verb, Verb::Get | Verb::Head | Verb::Options)
        || !deny.iter().any(|r| r.is_match(&endpoint.path))
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FuzzStats {
    pub rounds: usize,
    pub tests: usize,
    pub calls: usize,
    pub saturated: bool,
    pub warnings: Vec<String>,
}

#[derive(Debug, thiserror::Error)]
pub enum FuzzError {
    #[error(transparent)]
    Executor(#[from] ExecutorError),
}

pub(crate) enum Creator {
    /// PUT on the same path creates the resource under the id we choose.
    SamePath(EndpointId),
    /// POST on the parent collection; the new id comes back in the response.
    Collection { endpoint: EndpointId, slot: String },
}

pub(crate) fn creators(schema: &SchemaModel, target: &EndpointId) -> Vec<Creator> {
    let mut out = Vec::new();
    let placeholders = target.placeholders();
    let Some(last) = placeholders.last() else {
        return out;
    };
    if target.path.ends_with(&format!("{{{last}}}")) {
        let parent = &target.path[..target.path.len() - last.len() - 2];
        for candidate in [parent.trim_end_matches('/').to_string(), parent.to_string()] {
            let ep = EndpointId::new(Verb::Post, candidate);
            if !ep.path.is_empty() && schema.endpoint(&ep).is_some() {
                out.push(Creator::Collection {
                    endpoint: ep,
                    slot: last.clone(),
                });
                break;
            }
        }
    }
    let put = EndpointId::new(Verb::Put, target.path.clone());
    if schema.endpoint(&put).is_some() {
        out.push(Creator::SamePath(put));
    }
    out
}

struct Fuzzer<'a> {
    schema: &'a SchemaModel,
    executor: &'a Executor,
    gen: InputGenerator,
    pool: TestPool,
    stats: FuzzStats,
    broken: BTreeSet<EndpointId>,
}

impl Fuzzer<'_> {
    fn generate(&mut self, spec: &EndpointSpec, identity: &str) -> Option<HttpAction> {
        if self.broken.contains(&spec.id) {
            return None;
        }
        match self.gen.action(spec, identity) {
            Ok(a) => Some(a),
            Err(e) => {
                let msg = format!("skipping {}: {e}", spec.id);
                warn!("{msg}");
                self.stats.warnings.push(msg);
                self.broken.insert(spec.id.clone());
                None
            }
        }
    }

    fn record(&mut self, test: TestCase, executed: Vec<crate::http::ExecutedCall>) {
        self.stats.tests += 1;
        self.stats.calls += executed.len();
        self.pool.push(PoolEntry { test, executed });
    }

    fn single(&mut self, spec: &EndpointSpec, identity: &str) -> Result<(), FuzzError> {
        let Some(action) = self.generate(spec, identity) else {
            return Ok(());
        };
        let got = self.executor.execute(&action)?;
        self.record(TestCase::new(vec![action], Provenance::BaseFuzzing), vec![got]);
        Ok(())
    }

    fn chained(
        &mut self,
        creator: &Creator,
        spec: &EndpointSpec,
        owner: &str,
        identity: &str,
    ) -> Result<(), FuzzError> {
        let creator_id = match creator {
            Creator::SamePath(ep) | Creator::Collection { endpoint: ep, .. } => ep,
        };
        let Some(creator_spec) = self.schema.endpoint(creator_id) else {
            return Ok(());
        };
        let Some(first) = self.generate(creator_spec, owner) else {
            return Ok(());
        };
        let Some(mut second) = self.generate(spec, identity) else {
            return Ok(());
        };
        for (k, v) in &first.path_args {
            if second.path_args.contains_key(k) {
                second.path_args.insert(k.clone(), v.clone());
            }
        }
        let created = self.executor.execute(&first)?;
        let mut test = TestCase::new(vec![first], Provenance::BaseFuzzing);
        if let Creator::Collection { slot, .. } = creator {
            let extractor = [Extractor::LocationHeader, Extractor::BodyField("id".into())]
                .into_iter()
                .find_map(|x| created.extract(&x).map(|v| (x, v)));
            let Some((extractor, value)) = extractor.filter(|_| created.is_success()) else {
                self.record(test, vec![created]);
                return Ok(());
            };
            second.path_args.insert(slot.clone(), value);
            test.bindings.push(Binding {
                source_call_index: 0,
                extractor,
                target_call_index: 1,
                target_slot: Slot::PathArg(slot.clone()),
            });
        }
        let got = self.executor.execute(&second)?;
        test.calls.push(second);
        self.record(test, vec![created, got]);
        Ok(())
    }
}

/// Round-based random testing of every endpoint as every identity. Each
/// round tries, per endpoint and identity, one call on a freshly created
/// resource and one call with random arguments. Stops when the budget is
/// spent, or once a full round after the warm-up adds no new
/// (endpoint, status, identity) combination.
pub fn base_fuzz(
    schema: &SchemaModel,
    executor: &Executor,
    config: &FuzzConfig,
) -> Result<(TestPool, FuzzStats), FuzzError> {
    let start = Instant::now();
    let identities: Vec<String> = executor.identities().iter().map(|i| i.name.clone()).collect();
    let users: Vec<String> = executor.users().map(|i| i.name.clone()).collect();
    let owners = if users.is_empty() {
        vec![executor.anonymous_name().to_string()]
    } else {
        users
    };
    let warm_up = identities.len().max(1);
    let mut f = Fuzzer {
        schema,
        executor,
        gen: InputGenerator::new(config.seed),
        pool: TestPool::new(executor.anonymous_name()),
        stats: FuzzStats::default(),
        broken: BTreeSet::new(),
    };
    let endpoints: Vec<&EndpointSpec> = schema
        .endpoints()
        .iter()
        .filter(|e| config.allows(&e.id))
        .collect();
    let out_of_time = |s: &Instant| s.elapsed() >= config.budget;

    'rounds: for round in 0..config.max_rounds {
        if out_of_time(&start) {
            break;
        }
        let before = f.pool.key_count();
        for spec in &endpoints {
            let options: Vec<Creator> = creators(schema, &spec.id)
                .into_iter()
                .filter(|c| match c {
                    Creator::SamePath(ep) | Creator::Collection { endpoint: ep, .. } => config.allows(ep),
                })
                .collect();
            for (u_idx, identity) in identities.iter().enumerate() {
                if out_of_time(&start) {
                    break 'rounds;
                }
                if !options.is_empty() {
                    let owner = &owners[(round + u_idx) % owners.len()];
                    let creator = &options[round % options.len()];
                    f.chained(creator, spec, owner, identity)?;
                }
                if out_of_time(&start) {
                    break 'rounds;
                }
                f.single(spec, identity)?;
            }
        }
        f.stats.rounds = round + 1;
        let new_keys = f.pool.key_count() - before;
        debug!(round, new_keys, "base fuzzing round done");
        if round + 1 >= warm_up && new_keys == 0 {
            f.stats.saturated = true;
            break;
        }
    }
    info!(
        rounds = f.stats.rounds,
        tests = f.stats.tests,
        saturated = f.stats.saturated,
        "base fuzzing finished"
    );
    Ok((f.pool, f.stats))
}
