//! Orchestration behind the `apiguard` binary: fuzz, run the security
//! phase, write the report and suites; or replay an emitted plan.

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use anyhow::{bail, ensure, Context, Result};
use regex::Regex;
use tracing::{info, warn};

use apiguard_core::auth::load_auth_config;
use apiguard_core::corpus::{base_fuzz, CorpusFile, FuzzConfig, FuzzStats, TestPool};
use apiguard_core::http::{Executor, ExecutorConfig};
use apiguard_core::oracle::{run_security_phase, FaultCode, SecurityConfig};
use apiguard_core::report::{emit_suite, replay_plan, write_report, FaultReport, JsonPlan, ReplayOutcome, SuiteFormat};
use apiguard_core::schema::{load_schema_from_source, SchemaModel};

pub const EXIT_CLEAN: u8 = 0;
pub const EXIT_ERROR: u8 = 1;
pub const EXIT_FAULTS: u8 = 2;

/// Extra time granted to the executor on top of the SQLi sleep.
const TIMEOUT_MARGIN: Duration = Duration::from_secs(5);

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SecurityBudget {
    Seconds(f64),
    /// Share of the fuzzing budget, in (0, 100].
    Percent(f64),
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub schema: String,
    pub base_url: String,
    pub auth: PathBuf,
    pub budget: Duration,
    pub seed: u64,
    /// Per-oracle switches applied on top of the defaults.
    pub oracles: Vec<(FaultCode, bool)>,
    pub sqli_sleep_seconds: f64,
    pub sqli_baseline_max_ms: f64,
    pub security_budget: Option<SecurityBudget>,
    pub out_dir: PathBuf,
    pub emit: Vec<SuiteFormat>,
    pub corpus_in: Option<PathBuf>,
    pub corpus_out: Option<PathBuf>,
    pub deny_paths: Vec<String>,
}

impl RunConfig {
    pub fn new(schema: impl Into<String>, base_url: impl Into<String>, auth: impl Into<PathBuf>) -> Self {
        Self {
            schema: schema.into(),
            base_url: base_url.into(),
            auth: auth.into(),
            budget: Duration::from_secs(30),
            seed: 0,
            oracles: Vec::new(),
            sqli_sleep_seconds: 5.0,
            sqli_baseline_max_ms: 2000.0,
            security_budget: None,
            out_dir: PathBuf::from("apiguard-out"),
            emit: vec![SuiteFormat::JsonPlan],
            corpus_in: None,
            corpus_out: None,
            deny_paths: Vec::new(),
        }
    }

    fn phase_budget(&self) -> Result<Option<Duration>> {
        match self.security_budget {
            None => Ok(None),
            Some(SecurityBudget::Seconds(s)) => {
                ensure!(s > 0.0 && s.is_finite(), "security budget must be positive");
                Ok(Some(Duration::from_secs_f64(s)))
            }
            Some(SecurityBudget::Percent(p)) => {
                ensure!(p > 0.0 && p <= 100.0, "security budget percentage must be in (0, 100]");
                Ok(Some(self.budget.mul_f64(p / 100.0)))
            }
        }
    }

    fn security_config(&self, deny: Vec<Regex>) -> Result<SecurityConfig> {
        let mut c = SecurityConfig {
            sqli_sleep_seconds: self.sqli_sleep_seconds,
            sqli_baseline_max_ms: self.sqli_baseline_max_ms,
            phase_time_budget: self.phase_budget()?,
            seed: self.seed,
            deny,
            ..SecurityConfig::default()
        };
        for (code, on) in &self.oracles {
            c.set_enabled(*code, *on);
        }
        c.validate()?;
        Ok(c)
    }
}

/// Parses `200=off`, `F903=on` and the like.
pub fn parse_oracle_switch(s: &str) -> Result<(FaultCode, bool)> {
    let (code, state) = s.split_once('=').context("expected <code>=on|off")?;
    let code = code.trim().trim_start_matches(['F', 'f']);
    let code: u16 = code.parse().with_context(|| format!("bad fault code `{code}`"))?;
    let code = FaultCode::try_from(code).map_err(anyhow::Error::msg)?;
    let on = match state.trim().to_ascii_lowercase().as_str() {
        "on" | "true" | "1" => true,
        "off" | "false" | "0" => false,
        other => bail!("expected on or off, got `{other}`"),
    };
    Ok((code, on))
}

#[derive(Debug)]
pub struct RunOutcome {
    pub report: FaultReport,
    /// `None` when the pool came from `--corpus-in`.
    pub fuzz_stats: Option<FuzzStats>,
    pub report_path: PathBuf,
    pub suite_files: Vec<PathBuf>,
    pub elapsed: Duration,
}

impl RunOutcome {
    pub fn exit_code(&self) -> u8 {
        if self.report.faults.is_empty() {
            EXIT_CLEAN
        } else {
            EXIT_FAULTS
        }
    }
}

fn load_corpus(path: &Path, base_url: &str, schema: &SchemaModel) -> Result<TestPool> {
    let file = CorpusFile::load(path)?;
    ensure!(
        file.target_base_url.trim_end_matches('/') == base_url.trim_end_matches('/'),
        "corpus {} was recorded against {}, not {}",
        path.display(),
        file.target_base_url,
        base_url
    );
    for e in &file.entries {
        for c in &e.test.calls {
            ensure!(
                schema.endpoint(&c.endpoint).is_some(),
                "corpus endpoint {} is not in the schema",
                c.endpoint
            );
        }
    }
    Ok(file.into_pool())
}

/// Full run: base fuzzing (or a loaded corpus), security phase, report
/// and suites.
pub fn run_fuzz(cfg: &RunConfig) -> Result<RunOutcome> {
    let started = Instant::now();
    ensure!(cfg.corpus_in.is_some() || !cfg.budget.is_zero(), "fuzzing budget must be positive");
    let schema = load_schema_from_source(&cfg.schema).with_context(|| format!("loading schema {}", cfg.schema))?;
    for w in schema.warnings() {
        warn!("schema: {w}");
    }
    ensure!(!schema.is_empty(), "schema {} declares no endpoints", cfg.schema);
    let auth_doc = std::fs::read(&cfg.auth).with_context(|| format!("reading auth config {}", cfg.auth.display()))?;
    let identities = load_auth_config(&auth_doc).with_context(|| format!("parsing auth config {}", cfg.auth.display()))?;
    let deny: Vec<Regex> = cfg
        .deny_paths
        .iter()
        .map(|d| Regex::new(d).with_context(|| format!("bad deny-path pattern `{d}`")))
        .collect::<Result<_>>()?;
    let security = cfg.security_config(deny.clone())?;

    let mut exec_cfg = ExecutorConfig::new(&cfg.base_url);
    exec_cfg.timeout = exec_cfg
        .timeout
        .max(Duration::from_secs_f64(cfg.sqli_sleep_seconds) + TIMEOUT_MARGIN);
    let executor = Executor::new(&exec_cfg, identities)?;
    executor
        .refresh_credentials()
        .with_context(|| format!("resolving credentials against {}", cfg.base_url))?;

    let (pool, fuzz_stats) = match &cfg.corpus_in {
        Some(path) => (load_corpus(path, &cfg.base_url, &schema)?, None),
        None => {
            let mut fuzz = FuzzConfig::new(cfg.seed, cfg.budget);
            fuzz.deny = deny;
            let (pool, stats) = base_fuzz(&schema, &executor, &fuzz)?;
            info!(tests = stats.tests, calls = stats.calls, rounds = stats.rounds, "base fuzzing done");
            (pool, Some(stats))
        }
    };
    if let Some(out) = &cfg.corpus_out {
        if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        pool.save(out, &cfg.base_url, cfg.seed)
            .with_context(|| format!("writing corpus {}", out.display()))?;
    }

    let outcome = run_security_phase(pool, &schema, &executor, &security);
    info!(
        faults = outcome.faults.len(),
        elapsed_ms = outcome.stats.total_elapsed_ms,
        "security phase done"
    );
    let report = FaultReport::new(&cfg.base_url, &cfg.schema, cfg.seed, outcome.faults, outcome.stats);

    std::fs::create_dir_all(&cfg.out_dir).with_context(|| format!("creating {}", cfg.out_dir.display()))?;
    let report_path = cfg.out_dir.join("report.json");
    write_report(&report, &report_path)?;
    let mut suite_files = Vec::new();
    for format in &cfg.emit {
        let suite = emit_suite(&report.faults, executor.identities(), &cfg.base_url, *format);
        suite_files.extend(suite.write_to(&cfg.out_dir.join(format.name()))?);
    }
    Ok(RunOutcome {
        report,
        fuzz_stats,
        report_path,
        suite_files,
        elapsed: started.elapsed(),
    })
}

/// Replays a json-plan. `base_url` overrides the URL stored in the plan.
pub fn run_replay(plan_path: &Path, base_url: Option<&str>, fresh_ids: Option<u64>) -> Result<ReplayOutcome> {
    let text = std::fs::read_to_string(plan_path).with_context(|| format!("reading plan {}", plan_path.display()))?;
    let plan = JsonPlan::parse(&text)?;
    let exec_cfg = ExecutorConfig::new(base_url.unwrap_or(&plan.base_url));
    let executor = Executor::new(&exec_cfg, plan.identities.clone())?;
    Ok(replay_plan(&plan, &executor, fresh_ids)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn oracle_switches() {
        assert_eq!(parse_oracle_switch("200=off").unwrap(), (FaultCode::SqlInjection, false));
        assert_eq!(parse_oracle_switch("F100=on").unwrap(), (FaultCode::Status500, true));
        assert!(parse_oracle_switch("200").is_err());
        assert!(parse_oracle_switch("777=on").is_err());
        assert!(parse_oracle_switch("200=maybe").is_err());
    }

    #[test]
    fn percent_budget_scales_fuzz_budget() {
        let mut c = RunConfig::new("s", "http://x", "a");
        c.security_budget = Some(SecurityBudget::Percent(50.0));
        assert_eq!(c.phase_budget().unwrap(), Some(Duration::from_secs(15)));
        c.security_budget = Some(SecurityBudget::Percent(150.0));
        assert!(c.phase_budget().is_err());
    }
}
