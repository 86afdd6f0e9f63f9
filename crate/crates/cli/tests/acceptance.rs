//! End-to-end acceptance run against the bundled fixtures. Prints one line
//! per criterion and exits non-zero if any of them fails.

mod common;

#[path = "../../core/tests/support/reference.rs"]
mod reference;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::thread;
use std::time::Instant;

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use apiguard_core::corpus::{concat_and_bind, slice_prefix, InputGenerator, PoolEntry};
use apiguard_core::http::{Binding, Executor, ExecutorConfig, Extractor, Provenance, Slot, TestCase, TimingExpectation};
use apiguard_core::oracle::PhaseStats;
use apiguard_core::report::JsonPlan;
use apiguard_core::schema::{load_schema, SchemaFormat, SchemaModel};
use apiguard_fixtures::{Fixture, FixtureKind, FixtureOptions};

use common::{fuzz, replay, FuzzRun};

const SEEDS: std::ops::RangeInclusive<u64> = 1..=10;
const SECURITY_CODES: [u16; 9] = [200, 201, 204, 205, 206, 900, 901, 902, 903];
const RANDOM_CASES: usize = 1000;

struct SeedRun {
    seed: u64,
    run: FuzzRun,
    replay_exit: i32,
}

impl SeedRun {
    fn stats(&self) -> Option<&PhaseStats> {
        self.run.report.as_ref().map(|r| &r.phase_stats)
    }
}

struct Verdict {
    name: &'static str,
    passed: bool,
    detail: String,
}

fn schema_of(kind: FixtureKind) -> SchemaModel {
    load_schema(kind.spec().schema.as_bytes(), SchemaFormat::Json).unwrap()
}

fn run_fixture(kind: FixtureKind, dir: PathBuf, options: FixtureOptions, replay_plans: bool) -> Vec<SeedRun> {
    SEEDS
        .map(|seed| {
            let mut fx = Fixture::start_with(kind, options).unwrap();
            let run = fuzz(&fx, &dir, seed, &["--budget-seconds", "30", "--emit", "json-plan,shell"]);
            fx.stop();
            let replay_exit = if replay_plans && run.plan().exists() {
                let fresh = Fixture::start_with(kind, options).unwrap();
                common::code(&replay(&run.plan(), &fresh.base_url()))
            } else {
                -1
            };
            SeedRun { seed, run, replay_exit }
        })
        .collect()
}

fn seeded_detection(runs: &BTreeMap<FixtureKind, Vec<SeedRun>>) -> Verdict {
    let mut misses = Vec::new();
    let mut hits = 0;
    for kind in FixtureKind::SEEDED {
        let want = kind.spec().seeded_fault.unwrap();
        for r in &runs[&kind] {
            if r.run.codes().contains(&want) {
                hits += 1;
            } else {
                misses.push(format!("{} seed {} (exit {})", kind.spec().name, r.seed, r.run.exit));
            }
        }
    }
    Verdict {
        name: "seeded detection",
        passed: misses.is_empty(),
        detail: format!("{hits}/{} runs detected the seeded fault; missed: {misses:?}", FixtureKind::SEEDED.len() * SEEDS.count()),
    }
}

fn false_positives(runs: &[SeedRun]) -> Verdict {
    let bad: Vec<String> = runs
        .iter()
        .filter(|r| r.run.exit != 0 || r.run.codes().iter().any(|c| (200..=903).contains(c)))
        .map(|r| format!("seed {} exit {} codes {:?}", r.seed, r.run.exit, r.run.codes()))
        .collect();
    Verdict {
        name: "false positives on the correct fixture",
        passed: bad.is_empty(),
        detail: format!("{} clean runs of {}; offending: {bad:?}", runs.len() - bad.len(), runs.len()),
    }
}

fn sqli_timing(runs: &[SeedRun], quiet: &[SeedRun]) -> Verdict {
    let mut problems = Vec::new();
    let mut baseline_max: f64 = 0.0;
    let mut injected_min = f64::MAX;
    for r in runs {
        let Ok(text) = std::fs::read_to_string(r.run.plan()) else {
            problems.push(format!("seed {}: no plan", r.seed));
            continue;
        };
        let plan = JsonPlan::parse(&text).unwrap();
        let Some(t) = plan.tests.iter().find(|t| t.fault_code == Some(200)) else {
            problems.push(format!("seed {}: no F200 test", r.seed));
            continue;
        };
        let timings: Vec<_> = t.test.calls.iter().map(|c| c.timing).collect();
        if timings != [Some(TimingExpectation::LessThanMs(2000.0)), Some(TimingExpectation::GreaterThanMs(5000.0))] {
            problems.push(format!("seed {}: thresholds {timings:?}", r.seed));
            continue;
        }
        let fx = Fixture::start(FixtureKind::SqlInjection).unwrap();
        let executor = Executor::new(&ExecutorConfig::new(fx.base_url()), plan.identities.clone()).unwrap();
        executor.refresh_credentials().unwrap();
        let got = executor.run_test_case(&t.test).unwrap();
        let (base, inj) = (got.calls[0].duration_ms, got.calls[1].duration_ms);
        baseline_max = baseline_max.max(base);
        injected_min = injected_min.min(inj);
        if base >= 2000.0 || inj <= 5000.0 {
            problems.push(format!("seed {}: baseline {base:.0} ms, injected {inj:.0} ms", r.seed));
        }
    }
    for r in quiet {
        if r.run.exit == 1 || r.run.codes().contains(&200) {
            problems.push(format!("sleep off, seed {}: exit {} codes {:?}", r.seed, r.run.exit, r.run.codes()));
        }
    }
    Verdict {
        name: "SQLi timing gate",
        passed: problems.is_empty(),
        detail: format!(
            "re-executed baseline max {baseline_max:.0} ms, injected min {injected_min:.0} ms; {} sleep-off runs; problems: {problems:?}",
            quiet.len()
        ),
    }
}

fn overhead(runs: &BTreeMap<FixtureKind, Vec<SeedRun>>) -> Verdict {
    let mut problems = Vec::new();
    let mut worst: f64 = 0.0;
    let mut worst_gap: f64 = 0.0;
    for (kind, list) in runs {
        for r in list {
            let Some(s) = r.stats() else {
                problems.push(format!("{} seed {}: no report", kind.spec().name, r.seed));
                continue;
            };
            let sum: f64 = s.per_oracle.iter().map(|o| o.elapsed_ms).sum();
            let gap = (sum - s.total_elapsed_ms).abs();
            worst = worst.max(s.total_elapsed_ms);
            worst_gap = worst_gap.max(gap);
            if s.total_elapsed_ms >= 60000.0 || gap > 1.0 {
                problems.push(format!("{} seed {}: total {:.1} ms, gap {gap:.3}", kind.spec().name, r.seed, s.total_elapsed_ms));
            }
        }
    }
    Verdict {
        name: "overhead accounting",
        passed: problems.is_empty(),
        detail: format!("largest phase total {worst:.0} ms, largest per-oracle gap {worst_gap:.3} ms; problems: {problems:?}"),
    }
}

fn linear_budget(runs: &BTreeMap<FixtureKind, Vec<SeedRun>>) -> Verdict {
    let mut problems = Vec::new();
    let mut peak = (0usize, 0usize);
    for (kind, list) in runs {
        let limit = schema_of(*kind).endpoints().len() * 16;
        for r in list {
            let Some(s) = r.stats() else { continue };
            for code in [200, 201] {
                let n = s.tests_for(code);
                if n * peak.1.max(1) > peak.0 * limit.max(1) {
                    peak = (n, limit);
                }
                if n > limit {
                    problems.push(format!("{} seed {}: F{code} ran {n} > {limit}", kind.spec().name, r.seed));
                }
            }
        }
    }
    Verdict {
        name: "linear test budget",
        passed: problems.is_empty(),
        detail: format!("highest usage {} of {} allowed; problems: {problems:?}", peak.0, peak.1),
    }
}

fn shell_passes(script: &Path, kind: FixtureKind) -> bool {
    let fx = Fixture::start(kind).unwrap();
    Command::new("bash")
        .arg(script)
        .env("BASE_URL", fx.base_url())
        .output()
        .is_ok_and(|o| o.status.success())
}

fn round_trip(runs: &BTreeMap<FixtureKind, Vec<SeedRun>>) -> Verdict {
    let mut failed = Vec::new();
    let mut replayed = 0;
    for (kind, list) in runs {
        for r in list.iter().filter(|r| r.run.plan().exists()) {
            replayed += 1;
            if r.replay_exit != 0 {
                failed.push(format!("{} seed {} exit {}", kind.spec().name, r.seed, r.replay_exit));
            }
        }
    }
    let mut checked = Vec::new();
    for kind in [FixtureKind::MissedAuthorizationChecks, FixtureKind::SqlInjection, FixtureKind::CrossSiteScripting] {
        let dir = runs[&kind][0].run.out_dir.join("shell");
        let script = std::fs::read_dir(&dir).ok().and_then(|mut d| d.next()).and_then(Result::ok).map(|e| e.path());
        match script {
            Some(s) if shell_passes(&s, kind) => checked.push(s.file_name().unwrap().to_string_lossy().into_owned()),
            Some(s) => failed.push(format!("shell {}", s.display())),
            None => failed.push(format!("no shell script for {}", kind.spec().name)),
        }
    }
    Verdict {
        name: "suite round-trip",
        passed: failed.is_empty() && replayed > 0,
        detail: format!("{replayed} plans replayed, shell scripts checked: {checked:?}; failures: {failed:?}"),
    }
}

fn isolation(runs: &BTreeMap<FixtureKind, Vec<SeedRun>>) -> Verdict {
    let mut leaks = Vec::new();
    for kind in FixtureKind::SEEDED {
        let want = kind.spec().seeded_fault.unwrap();
        for r in &runs[&kind] {
            let other: Vec<u16> = r.run.codes().into_iter().filter(|c| SECURITY_CODES.contains(c) && *c != want).collect();
            if !other.is_empty() {
                leaks.push(format!("{} seed {}: {other:?}", kind.spec().name, r.seed));
            }
        }
    }
    Verdict {
        name: "oracle isolation",
        passed: leaks.is_empty(),
        detail: format!("cross-triggered codes: {leaks:?}"),
    }
}

fn random_test(rng: &mut StdRng, gen: &mut InputGenerator, schema: &SchemaModel, who: &[String]) -> TestCase {
    let n = rng.random_range(1..=5);
    let calls = (0..n)
        .map(|_| {
            let spec = &schema.endpoints()[rng.random_range(0..schema.endpoints().len())];
            let identity = &who[rng.random_range(0..who.len())];
            gen.action(spec, identity).unwrap()
        })
        .collect();
    let mut test = TestCase::new(calls, Provenance::BaseFuzzing);
    for target in 1..n {
        if rng.random_bool(0.5) && test.calls[target].endpoint.placeholders().contains(&"id".to_string()) {
            test.bindings.push(Binding {
                source_call_index: rng.random_range(0..target),
                extractor: if rng.random_bool(0.5) { Extractor::LocationHeader } else { Extractor::BodyField("id".into()) },
                target_call_index: target,
                target_slot: Slot::PathArg("id".into()),
            });
        }
    }
    test
}

fn slicing_equivalence() -> Verdict {
    let mut rng = StdRng::seed_from_u64(2024);
    let mut gen = InputGenerator::new(2024);
    let kinds = [FixtureKind::Correct, FixtureKind::MissedAuthorizationChecks, FixtureKind::CrossSiteScripting];
    let mut mismatches = Vec::new();
    let (mut prefixes, mut concats, mut errors) = (0, 0, 0);
    for case in 0..RANDOM_CASES {
        let kind = kinds[case % kinds.len()];
        let fx = Fixture::start(kind).unwrap();
        let schema = schema_of(kind);
        let identities = apiguard_core::auth::load_auth_config(kind.spec().auth.as_bytes()).unwrap();
        let who: Vec<String> = identities.iter().map(|i| i.name.clone()).collect();
        let executor = Executor::new(&ExecutorConfig::new(fx.base_url()), identities).unwrap();
        let mut entries = Vec::new();
        for _ in 0..2 {
            let test = random_test(&mut rng, &mut gen, &schema, &who);
            let run = executor.run_test_case(&test).unwrap();
            entries.push(PoolEntry { test, executed: run.calls });
        }
        let k = rng.random_range(0..5);
        let sliced = slice_prefix(&entries[0], k);
        let want = reference::prefix(&entries[0], k);
        prefixes += 1;
        let head = match (&sliced, want) {
            (Ok(got), Some(want)) if reference::flatten(got) == want => got.clone(),
            (Err(_), None) => {
                errors += 1;
                entries[0].test.clone()
            }
            _ => {
                mismatches.push(format!("case {case}: prefix {k}"));
                continue;
            }
        };
        let bind = rng.random_bool(0.5);
        concats += 1;
        match (concat_and_bind(&head, &entries[1].test, bind), reference::concat(&head, &entries[1].test, bind)) {
            (Ok(got), Some(want)) if reference::flatten(&got) == want => {}
            (Err(_), None) => errors += 1,
            _ => mismatches.push(format!("case {case}: concat bind={bind}")),
        }
    }
    Verdict {
        name: "slicing and binding equivalence",
        passed: mismatches.is_empty(),
        detail: format!(
            "{RANDOM_CASES} cases ({prefixes} prefixes, {concats} concatenations, {errors} agreed rejections); mismatches: {mismatches:?}"
        ),
    }
}

fn main() {
    let started = Instant::now();
    let work = tempfile::tempdir().unwrap();
    let kinds: Vec<FixtureKind> = FixtureKind::ALL.into_iter().filter(|k| *k != FixtureKind::Login).collect();

    let mut handles: Vec<_> = kinds
        .iter()
        .map(|&kind| {
            let dir = work.path().join(kind.spec().name);
            (Some(kind), thread::spawn(move || run_fixture(kind, dir, FixtureOptions::default(), true)))
        })
        .collect();
    let quiet_dir = work.path().join("sql_injection_quiet");
    handles.push((
        None,
        thread::spawn(move || run_fixture(FixtureKind::SqlInjection, quiet_dir, FixtureOptions { sqli_sleep: None }, false)),
    ));
    let mut runs = BTreeMap::new();
    let mut quiet = Vec::new();
    for (kind, h) in handles {
        let r = h.join().expect("fixture thread");
        match kind {
            Some(k) => {
                runs.insert(k, r);
            }
            None => quiet = r,
        }
    }

    let verdicts = [
        seeded_detection(&runs),
        false_positives(&runs[&FixtureKind::Correct]),
        sqli_timing(&runs[&FixtureKind::SqlInjection], &quiet),
        overhead(&runs),
        linear_budget(&runs),
        round_trip(&runs),
        isolation(&runs),
        slicing_equivalence(),
    ];
    let mut all = true;
    for (i, v) in verdicts.iter().enumerate() {
        all &= v.passed;
        let mark = if v.passed { "PASS" } else { "FAIL" };
        println!("criterion {} ({}): {mark} ({})", i + 1, v.name, v.detail);
    }
    println!("acceptance finished in {:.0} s", started.elapsed().as_secs_f64());
    if !all {
        std::process::exit(1);
    }
}
