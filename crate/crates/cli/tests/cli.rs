mod common;

use std::process::Command;

use apiguard_core::corpus::TestPool;
use apiguard_fixtures::{Fixture, FixtureKind, FixtureOptions};
use tempfile::tempdir;

use common::{apiguard, code, fuzz, replay};

#[test]
fn unreadable_schema_is_an_error() {
    let dir = tempdir().unwrap();
    let schema = dir.path().join("bad.json");
    std::fs::write(&schema, "{ not json").unwrap();
    let auth = dir.path().join("auth.yaml");
    std::fs::write(&auth, apiguard_fixtures::USERS_YAML).unwrap();
    let out = apiguard(&[
        "fuzz", "--schema", schema.to_str().unwrap(), "--base-url", "http://127.0.0.1:9",
        "--auth", auth.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 1);
}

#[test]
fn clean_target_exits_zero() {
    let dir = tempdir().unwrap();
    let fx = Fixture::start(FixtureKind::Correct).unwrap();
    let run = fuzz(&fx, dir.path(), 1, &["--budget-seconds", "10"]);
    assert_eq!(run.exit, 0, "{}", run.stderr);
    assert!(run.codes().is_empty());
    assert!(run.plan().exists());
}

#[test]
fn faults_exit_two_and_replay_until_the_server_is_gone() {
    let dir = tempdir().unwrap();
    let mut fx = Fixture::start(FixtureKind::MissedAuthorizationChecks).unwrap();
    let run = fuzz(&fx, dir.path(), 2, &["--emit", "json-plan,shell,httpfile"]);
    assert_eq!(run.exit, 2, "{}", run.stderr);
    assert_eq!(run.codes(), vec![206]);
    fx.stop();
    assert!(run.out_dir.join("httpfile").join("faults.http").exists());

    let mut fresh = Fixture::start(FixtureKind::MissedAuthorizationChecks).unwrap();
    let out = replay(&run.plan(), &fresh.base_url());
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stdout));

    let restarted = Fixture::start(FixtureKind::MissedAuthorizationChecks).unwrap();
    let script = std::fs::read_dir(run.out_dir.join("shell")).unwrap().next().unwrap().unwrap().path();
    let status = Command::new("bash")
        .arg(&script)
        .env("BASE_URL", restarted.base_url())
        .output()
        .unwrap();
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stdout));

    let gone = fresh.base_url();
    fresh.stop();
    assert_eq!(code(&replay(&run.plan(), &gone)), 1);
}

#[test]
fn sqli_plan_fails_when_sleep_is_off() {
    let dir = tempdir().unwrap();
    let fx = Fixture::start(FixtureKind::SqlInjection).unwrap();
    let run = fuzz(&fx, dir.path(), 3, &[]);
    assert_eq!(run.codes(), vec![200], "{}", run.stderr);
    let quiet = Fixture::start_with(FixtureKind::SqlInjection, FixtureOptions { sqli_sleep: None }).unwrap();
    let out = replay(&run.plan(), &quiet.base_url());
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stdout).contains("FAIL"));
}

#[test]
fn saved_corpus_reproduces_the_fault() {
    let dir = tempdir().unwrap();
    let corpus = dir.path().join("corpus.json");
    let fx = Fixture::start(FixtureKind::IgnoreAnonymous).unwrap();
    let first = fuzz(&fx, &dir.path().join("a"), 4, &["--corpus-out", corpus.to_str().unwrap()]);
    assert_eq!(first.codes(), vec![900]);
    drop(fx);

    let fx = Fixture::start(FixtureKind::IgnoreAnonymous).unwrap();
    let other = fuzz(&fx, &dir.path().join("b"), 4, &["--corpus-in", corpus.to_str().unwrap()]);
    assert_eq!(other.exit, 1, "a corpus from another base URL must be rejected");
    drop(fx);

    // The corpus records its base URL, so the server has to listen there again.

    let text = std::fs::read_to_string(&corpus).unwrap();
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    let url = v["targetBaseUrl"].as_str().unwrap().trim_start_matches("http://").to_string();
    let fx = Fixture::start_on(FixtureKind::IgnoreAnonymous, FixtureOptions::default(), &url).unwrap();
    let again = fuzz(&fx, &dir.path().join("c"), 4, &["--corpus-in", corpus.to_str().unwrap()]);
    assert_eq!(again.codes(), vec![900], "{}", again.stderr);
    let (a, b) = (&first.report.unwrap().faults[0], &again.report.unwrap().faults[0]);
    assert_eq!(a.endpoint, b.endpoint);
}

#[test]
fn empty_corpus_leaves_only_probing() {
    let dir = tempdir().unwrap();
    let corpus = dir.path().join("empty.json");
    let fx = Fixture::start(FixtureKind::HiddenAccessible).unwrap();
    TestPool::new("anonymous").save(&corpus, &fx.base_url(), 0).unwrap();
    let run = fuzz(&fx, dir.path(), 5, &["--corpus-in", corpus.to_str().unwrap()]);
    assert_eq!(run.codes(), vec![903], "{}", run.stderr);

    let fx = Fixture::start(FixtureKind::NotRecognizedAuthentication).unwrap();
    let corpus = dir.path().join("empty2.json");
    TestPool::new("anonymous").save(&corpus, &fx.base_url(), 0).unwrap();
    let run = fuzz(&fx, &dir.path().join("x"), 5, &["--corpus-in", corpus.to_str().unwrap()]);
    assert_eq!(run.exit, 0, "{}", run.stderr);
}

#[test]
fn fixture_listing_names_every_fixture() {
    let out = apiguard(&["fixture", "--list"]);
    assert_eq!(code(&out), 0);
    let text = String::from_utf8_lossy(&out.stdout);
    for k in FixtureKind::ALL {
        assert!(text.contains(k.spec().name));
    }
}
