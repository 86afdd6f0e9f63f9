#![allow(dead_code)]

use std::time::Duration;

use apiguard_core::auth::load_auth_config;
use apiguard_core::corpus::{base_fuzz, FuzzConfig, TestPool};
use apiguard_core::http::{Executor, ExecutorConfig};
use apiguard_core::oracle::{run_security_phase, SecurityConfig, SecurityOutcome};
use apiguard_core::schema::{load_schema, SchemaFormat, SchemaModel};
use apiguard_fixtures::{Fixture, FixtureKind};

pub struct Target {
    pub fixture: Fixture,
    pub schema: SchemaModel,
    pub executor: Executor,
}

pub fn target(kind: FixtureKind) -> Target {
    let fixture = Fixture::start(kind).expect("fixture starts");
    let spec = *fixture.spec();
    let schema = load_schema(spec.schema.as_bytes(), SchemaFormat::Json).unwrap();
    let identities = load_auth_config(spec.auth.as_bytes()).unwrap();
    let mut config = ExecutorConfig::new(fixture.base_url());
    config.timeout = Duration::from_secs(10);
    let executor = Executor::new(&config, identities).unwrap();
    executor.refresh_credentials().unwrap();
    Target { fixture, schema, executor }
}

impl Target {
    pub fn fuzz(&self, seed: u64) -> TestPool {
        base_fuzz(&self.schema, &self.executor, &FuzzConfig::new(seed, Duration::from_secs(30)))
            .unwrap()
            .0
    }

    pub fn security(&self, pool: TestPool, seed: u64) -> SecurityOutcome {
        let config = SecurityConfig { seed, ..SecurityConfig::default() };
        run_security_phase(pool, &self.schema, &self.executor, &config)
    }
}
