//! In-process mock APIs, each with one seeded security fault, plus a
//! fault-free API and a login-flow API.
//!
//! Every fixture listens on an ephemeral local port and keeps its state in
//! memory, so stopping and starting one gives a clean server.
//!
//! ```no_run
//! use apiguard_fixtures::{Fixture, FixtureKind};
//!
//! let mut fx = Fixture::start(FixtureKind::ExistenceLeakage).unwrap();
//! println!("{} at {}", fx.spec().name, fx.base_url());
//! fx.stop();
//! ```

mod app;

use std::net::{SocketAddr, TcpListener};
use std::thread::JoinHandle;
use std::time::Duration;

use tokio::sync::oneshot;

pub use app::TRACE_MARKER;

/// Users shared by every fixture except the login one.
pub const USERS_YAML: &str = include_str!("../assets/users.yaml");
pub const LOGIN_YAML: &str = include_str!("../assets/login.yaml");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FixtureKind {
    Correct,
    NotRecognizedAuthentication,
    ExistenceLeakage,
    MissedAuthorizationChecks,
    AnonymousModifications,
    IgnoreAnonymous,
    LeakedStackTrace,
    HiddenAccessible,
    SqlInjection,
    CrossSiteScripting,
    Login,
}

#[derive(Debug, Clone, Copy)]
pub struct FixtureSpec {
    pub kind: FixtureKind,
    pub name: &'static str,
    pub seeded_fault: Option<u16>,
    pub schema: &'static str,
    pub auth: &'static str,
}

impl FixtureKind {
    pub const ALL: [FixtureKind; 11] = [
        FixtureKind::Correct,
        FixtureKind::NotRecognizedAuthentication,
        FixtureKind::ExistenceLeakage,
        FixtureKind::MissedAuthorizationChecks,
        FixtureKind::AnonymousModifications,
        FixtureKind::IgnoreAnonymous,
        FixtureKind::LeakedStackTrace,
        FixtureKind::HiddenAccessible,
        FixtureKind::SqlInjection,
        FixtureKind::CrossSiteScripting,
        FixtureKind::Login,
    ];

    /// The nine fixtures that carry a security fault.
    pub const SEEDED: [FixtureKind; 9] = [
        FixtureKind::NotRecognizedAuthentication,
        FixtureKind::ExistenceLeakage,
        FixtureKind::MissedAuthorizationChecks,
        FixtureKind::AnonymousModifications,
        FixtureKind::IgnoreAnonymous,
        FixtureKind::LeakedStackTrace,
        FixtureKind::HiddenAccessible,
        FixtureKind::SqlInjection,
        FixtureKind::CrossSiteScripting,
    ];

    pub fn spec(self) -> FixtureSpec {
        macro_rules! spec {
            ($name:literal, $code:expr) => {
                FixtureSpec {
                    kind: self,
                    name: $name,
                    seeded_fault: $code,
                    schema: include_str!(concat!("../assets/", $name, ".json")),
                    auth: USERS_YAML,
                }
            };
        }
        match self {
            FixtureKind::Correct => spec!("correct", None),
            FixtureKind::NotRecognizedAuthentication => spec!("not_recognized_authentication", Some(205)),
            FixtureKind::ExistenceLeakage => spec!("existence_leakage", Some(204)),
            FixtureKind::MissedAuthorizationChecks => spec!("missed_authorization_checks", Some(206)),
            FixtureKind::AnonymousModifications => spec!("anonymous_modifications", Some(901)),
            FixtureKind::IgnoreAnonymous => spec!("ignore_anonymous", Some(900)),
            FixtureKind::LeakedStackTrace => spec!("leaked_stack_trace", Some(902)),
            FixtureKind::HiddenAccessible => spec!("hidden_accessible", Some(903)),
            FixtureKind::SqlInjection => spec!("sql_injection", Some(200)),
            FixtureKind::CrossSiteScripting => spec!("cross_site_scripting", Some(201)),
            FixtureKind::Login => FixtureSpec {
                auth: LOGIN_YAML,
                ..spec!("login", None)
            },
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.spec().name == name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixtureOptions {
    /// Delay applied by the SQL injection fixture when a query carries a
    /// sleep payload whose duration it cannot read. `None` turns the
    /// sleeping off entirely.
    pub sqli_sleep: Option<Duration>,
}

impl Default for FixtureOptions {
    fn default() -> Self {
        Self {
            sqli_sleep: Some(Duration::from_secs(5)),
        }
    }
}

/// A running fixture. Dropping it stops the server.
pub struct Fixture {
    spec: FixtureSpec,
    addr: SocketAddr,
    shutdown: Option<oneshot::Sender<()>>,
    thread: Option<JoinHandle<()>>,
}

impl Fixture {
    pub fn start(kind: FixtureKind) -> std::io::Result<Self> {
        Self::start_with(kind, FixtureOptions::default())
    }

    pub fn start_with(kind: FixtureKind, options: FixtureOptions) -> std::io::Result<Self> {
        Self::start_on(kind, options, "127.0.0.1:0")
    }

    /// Binds `addr` explicitly, e.g. to restart on a known port.
    pub fn start_on(kind: FixtureKind, options: FixtureOptions, addr: &str) -> std::io::Result<Self> {
        let listener = TcpListener::bind(addr)?;
        listener.set_nonblocking(true)?;
        let addr = listener.local_addr()?;
        let runtime = tokio::runtime::Builder::new_multi_thread()
            .worker_threads(2)
            .enable_all()
            .build()?;
        let (tx, rx) = oneshot::channel::<()>();
        let router = app::router(kind, options);
        let thread = std::thread::Builder::new()
            .name(format!("fixture-{}", kind.spec().name))
            .spawn(move || {
                runtime.block_on(async move {
                    let listener = tokio::net::TcpListener::from_std(listener).expect("listener registers with tokio");
                    let _ = axum::serve(listener, router)
                        .with_graceful_shutdown(async {
                            let _ = rx.await;
                        })
                        .await;
                });
                runtime.shutdown_timeout(Duration::from_millis(200));
            })?;
        Ok(Self {
            spec: kind.spec(),
            addr,
            shutdown: Some(tx),
            thread: Some(thread),
        })
    }

    pub fn spec(&self) -> &FixtureSpec {
        &self.spec
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn base_url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Stops the server and drops its state. Calling it again does nothing.
    pub fn stop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }

    pub fn is_running(&self) -> bool {
        self.thread.is_some()
    }
}

impl Drop for Fixture {
    fn drop(&mut self) {
        self.stop();
    }
}
