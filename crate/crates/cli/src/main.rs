use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use tracing_subscriber::EnvFilter;

use apiguard::{parse_oracle_switch, run_fuzz, run_replay, RunConfig, SecurityBudget, EXIT_CLEAN, EXIT_ERROR};
use apiguard_core::oracle::FaultCode;
use apiguard_core::report::SuiteFormat;
use apiguard_fixtures::{Fixture, FixtureKind, FixtureOptions};

/// Black-box REST API fuzzer with security oracles.
#[derive(Parser)]
#[command(name = "apiguard", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
#[allow(clippy::large_enum_variant)]
enum Command {
    /// Fuzz a target (or load a corpus), run the security oracles, write
    /// the report and test suites. Exits 0 without faults, 2 with faults.
    Fuzz(FuzzArgs),
    /// Re-run an emitted json-plan. Exits 0 iff every assertion holds.
    Replay(ReplayArgs),
    /// Serve one of the bundled mock APIs until interrupted.
    Fixture(FixtureArgs),
}

#[derive(Args)]
struct FuzzArgs {
    /// OpenAPI document: file path or http(s) URL.
    #[arg(long)]
    schema: String,
    #[arg(long)]
    base_url: String,
    /// Auth config YAML.
    #[arg(long)]
    auth: PathBuf,
    #[arg(long, default_value_t = 30.0)]
    budget_seconds: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Turn an oracle on or off, e.g. `--oracle 200=off` or `--oracle 100=on`.
    #[arg(long = "oracle", value_parser = parse_switch)]
    oracles: Vec<(FaultCode, bool)>,
    #[arg(long, default_value_t = 5.0)]
    sqli_sleep_seconds: f64,
    #[arg(long, default_value_t = 2000.0)]
    sqli_baseline_max_ms: f64,
    #[arg(long, conflicts_with = "security_budget_percent")]
    security_budget_seconds: Option<f64>,
    #[arg(long)]
    security_budget_percent: Option<f64>,
    /// Comma-separated suite formats: json-plan, shell, httpfile.
    #[arg(long, value_delimiter = ',', default_value = "json-plan")]
    emit: Vec<SuiteFormat>,
    /// Skip fuzzing and run the security phase on a saved corpus.
    #[arg(long)]
    corpus_in: Option<PathBuf>,
    #[arg(long)]
    corpus_out: Option<PathBuf>,
    #[arg(long, default_value = "apiguard-out")]
    out_dir: PathBuf,
    /// Regex on path templates that must never receive modifying calls.
    #[arg(long = "deny-path")]
    deny_paths: Vec<String>,
}

#[derive(Args)]
struct ReplayArgs {
    plan: PathBuf,
    /// Overrides the base URL recorded in the plan.
    #[arg(long)]
    base_url: Option<String>,
    /// Rename path ids to unused values first, for servers that kept the
    /// state of an earlier run.
    #[arg(long)]
    fresh_ids: bool,
}

#[derive(Args)]
struct FixtureArgs {
    /// correct, existence_leakage, sql_injection, ... (see --list)
    #[arg(required_unless_present = "list")]
    name: Option<String>,
    #[arg(long, default_value_t = 0)]
    port: u16,
    /// Make the SQL injection fixture ignore sleep payloads.
    #[arg(long)]
    no_sqli_sleep: bool,
    /// Write the fixture's schema and auth config into this directory.
    #[arg(long)]
    write_assets: Option<PathBuf>,
    #[arg(long)]
    list: bool,
}

fn parse_switch(s: &str) -> Result<(FaultCode, bool), String> {
    parse_oracle_switch(s).map_err(|e| e.to_string())
}

fn fuzz(args: FuzzArgs) -> Result<u8> {
    let mut cfg = RunConfig::new(args.schema, args.base_url, args.auth);
    anyhow::ensure!(
        args.budget_seconds.is_finite() && args.budget_seconds > 0.0,
        "--budget-seconds must be positive"
    );
    cfg.budget = Duration::from_secs_f64(args.budget_seconds);
    cfg.seed = args.seed;
    cfg.oracles = args.oracles;
    cfg.sqli_sleep_seconds = args.sqli_sleep_seconds;
    cfg.sqli_baseline_max_ms = args.sqli_baseline_max_ms;
    cfg.security_budget = args
        .security_budget_seconds
        .map(SecurityBudget::Seconds)
        .or(args.security_budget_percent.map(SecurityBudget::Percent));
    cfg.emit = args.emit;
    cfg.corpus_in = args.corpus_in;
    cfg.corpus_out = args.corpus_out;
    cfg.out_dir = args.out_dir;
    cfg.deny_paths = args.deny_paths;
    let outcome = run_fuzz(&cfg)?;
    for f in &outcome.report.faults {
        println!("{} {} on {}: {}", f.code, f.label, f.endpoint, f.evidence);
    }
    println!(
        "{} fault(s); report at {}",
        outcome.report.faults.len(),
        outcome.report_path.display()
    );
    Ok(outcome.exit_code())
}

fn replay(args: ReplayArgs) -> Result<u8> {
    let seed = args.fresh_ids.then(|| {
        std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map_or(0, |d| d.as_nanos() as u64)
    });
    let outcome = run_replay(&args.plan, args.base_url.as_deref(), seed)?;
    for v in &outcome.verdicts {
        if v.passed {
            println!("PASS {}", v.name);
        } else {
            println!("FAIL {}: {}", v.name, v.detail);
        }
    }
    Ok(if outcome.all_passed() { EXIT_CLEAN } else { EXIT_ERROR })
}

fn fixture(args: FixtureArgs) -> Result<u8> {
    if args.list {
        for k in FixtureKind::ALL {
            let s = k.spec();
            match s.seeded_fault {
                Some(code) => println!("{:32} F{code}", s.name),
                None => println!("{:32} -", s.name),
            }
        }
        return Ok(EXIT_CLEAN);
    }
    let name = args.name.unwrap_or_default();
    let kind = FixtureKind::from_name(&name).ok_or_else(|| anyhow::anyhow!("unknown fixture `{name}`"))?;
    let spec = kind.spec();
    if let Some(dir) = &args.write_assets {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(format!("{}.json", spec.name)), spec.schema)?;
        std::fs::write(dir.join(format!("{}.yaml", spec.name)), spec.auth)?;
    }
    let options = FixtureOptions {
        sqli_sleep: (!args.no_sqli_sleep).then_some(FixtureOptions::default().sqli_sleep).flatten(),
    };
    let fx = Fixture::start_on(kind, options, &format!("127.0.0.1:{}", args.port))?;
    println!("{} listening on {}", spec.name, fx.base_url());
    loop {
        std::thread::park();
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Fuzz(a) => fuzz(a),
        Command::Replay(a) => replay(a),
        Command::Fixture(a) => fixture(a),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_ERROR)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn budgets_conflict() {
        let r = Cli::try_parse_from([
            "apiguard", "fuzz", "--schema", "s", "--base-url", "u", "--auth", "a",
            "--security-budget-seconds", "5", "--security-budget-percent", "10",
        ]);
        assert!(r.is_err());
    }

    #[test]
    fn emit_list_parses() {
        let cli = Cli::try_parse_from([
            "apiguard", "fuzz", "--schema", "s", "--base-url", "u", "--auth", "a",
            "--emit", "json-plan,shell,httpfile", "--oracle", "F200=off",
        ])
        .unwrap();
        let Command::Fuzz(a) = cli.command else { panic!() };
        assert_eq!(a.emit, SuiteFormat::ALL.to_vec());
        assert_eq!(a.oracles, vec![(FaultCode::SqlInjection, false)]);
    }
}
