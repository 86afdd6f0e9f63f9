use std::collections::HashMap;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::{header, HeaderMap, HeaderValue, Method, StatusCode, Uri};
use axum::response::{IntoResponse, Response};
use axum::Router;
use regex::Regex;
use serde_json::{json, Value};

use crate::{FixtureKind, FixtureOptions};

/// Exception line of the trace the stack-trace fixture leaks.
pub const TRACE_MARKER: &str = "java.lang.NullPointerException";

const ITEM_COUNT: i64 = 20;

#[derive(Debug, Clone, PartialEq)]
enum Caller {
    Anonymous,
    User(String),
    Invalid,
}

fn caller(headers: &HeaderMap) -> Caller {
    let Some(raw) = headers.get(header::AUTHORIZATION) else {
        return Caller::Anonymous;
    };
    match raw.to_str().unwrap_or("").trim() {
        "FOO" => Caller::User("FOO".into()),
        "BAR" => Caller::User("BAR".into()),
        other => match other.strip_prefix("Bearer tok-") {
            Some(name) if !name.is_empty() => Caller::User(name.to_string()),
            _ => Caller::Invalid,
        },
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Op {
    CreateResource,
    GetResource,
    PutResource,
    DeleteResource,
    Reports,
    AdminStats,
    Item,
    CreateProduct,
    ListProducts,
    ProductOptions,
    Search,
    AddComment,
    ListComments,
    Token,
    Me,
}

/// How the shared resource API misbehaves in a given fixture.
#[derive(Debug, Clone, Copy, Default)]
struct Flaws {
    /// No credentials checked at all; missing resources answer 404.
    open: bool,
    /// Missing resources answer 404 instead of 403.
    missing_is_404: bool,
    /// PUT skips the ownership check that DELETE applies.
    put_skips_owner: bool,
}

struct Resource {
    owner: String,
    name: String,
}

#[derive(Default)]
struct Store {
    resources: HashMap<i64, Resource>,
    next_id: i64,
    products: Vec<String>,
    comments: Vec<String>,
}

struct App {
    routes: Vec<(Method, &'static str, Op)>,
    flaws: Flaws,
    options: FixtureOptions,
    store: Mutex<Store>,
}

fn routes(kind: FixtureKind) -> (Vec<(Method, &'static str, Op)>, Flaws) {
    const R: &str = "/api/resources/{id}";
    let shared = vec![(Method::GET, R, Op::GetResource), (Method::PUT, R, Op::PutResource)];
    let with = |extra: Vec<(Method, &'static str, Op)>| shared.iter().cloned().chain(extra).collect::<Vec<_>>();
    match kind {
        FixtureKind::Correct => (
            with(vec![
                (Method::DELETE, R, Op::DeleteResource),
                (Method::POST, "/api/resources", Op::CreateResource),
            ]),
            Flaws::default(),
        ),
        FixtureKind::NotRecognizedAuthentication => (with(vec![(Method::GET, "/api/reports", Op::Reports)]), Flaws::default()),
        FixtureKind::ExistenceLeakage => (
            shared,
            Flaws {
                missing_is_404: true,
                ..Flaws::default()
            },
        ),
        FixtureKind::MissedAuthorizationChecks => {
            const F: &str = "/api/forbiddendelete/resources/{id}";
            (
                vec![(Method::PUT, F, Op::PutResource), (Method::DELETE, F, Op::DeleteResource)],
                Flaws {
                    put_skips_owner: true,
                    ..Flaws::default()
                },
            )
        }
        FixtureKind::AnonymousModifications => (
            with(vec![(Method::DELETE, R, Op::DeleteResource)]),
            Flaws {
                open: true,
                ..Flaws::default()
            },
        ),
        FixtureKind::IgnoreAnonymous => (with(vec![(Method::GET, "/api/admin/stats", Op::AdminStats)]), Flaws::default()),
        FixtureKind::LeakedStackTrace => (with(vec![(Method::GET, "/api/items/{id}", Op::Item)]), Flaws::default()),
        FixtureKind::HiddenAccessible => (
            vec![
                (Method::POST, "/api/products", Op::CreateProduct),
                (Method::GET, "/api/products", Op::ListProducts),
                (Method::OPTIONS, "/api/products", Op::ProductOptions),
            ],
            Flaws::default(),
        ),
        FixtureKind::SqlInjection => (with(vec![(Method::GET, "/api/search", Op::Search)]), Flaws::default()),
        FixtureKind::CrossSiteScripting => (
            with(vec![
                (Method::POST, "/api/comments", Op::AddComment),
                (Method::GET, "/api/comments", Op::ListComments),
            ]),
            Flaws::default(),
        ),
        FixtureKind::Login => (
            vec![(Method::POST, "/azuread/token", Op::Token), (Method::GET, "/api/me", Op::Me)],
            Flaws::default(),
        ),
    }
}

pub(crate) fn router(kind: FixtureKind, options: FixtureOptions) -> Router {
    let (routes, flaws) = routes(kind);
    let app = Arc::new(App {
        routes,
        flaws,
        options,
        store: Mutex::new(Store {
            next_id: 1_000_000,
            ..Store::default()
        }),
    });
    Router::new().fallback(dispatch).with_state(app)
}

/// Matches `path` against a template, returning the `{id}` segment if any.
fn matches(template: &str, path: &str) -> Option<Option<String>> {
    let t: Vec<&str> = template.trim_matches('/').split('/').collect();
    let p: Vec<&str> = path.trim_matches('/').split('/').collect();
    if t.len() != p.len() {
        return None;
    }
    let mut id = None;
    for (a, b) in t.iter().zip(&p) {
        if a.starts_with('{') {
            id = Some(b.to_string());
        } else if a != b {
            return None;
        }
    }
    Some(id)
}

fn json_response(status: StatusCode, body: Value) -> Response {
    (status, [(header::CONTENT_TYPE, "application/json")], body.to_string()).into_response()
}

fn status(code: StatusCode) -> Response {
    let text = code.canonical_reason().unwrap_or("");
    json_response(code, json!({ "error": text }))
}

async fn dispatch(State(app): State<Arc<App>>, method: Method, uri: Uri, headers: HeaderMap, body: Bytes) -> Response {
    let path = uri.path();
    let on_path: Vec<&(Method, &str, Op)> = app.routes.iter().filter(|r| matches(r.1, path).is_some()).collect();
    if on_path.is_empty() {
        return status(StatusCode::NOT_FOUND);
    }
    let Some((_, template, op)) = on_path.iter().find(|r| r.0 == method).copied() else {
        let mut allow: Vec<&str> = on_path.iter().map(|r| r.0.as_str()).collect();
        allow.dedup();
        let mut resp = status(StatusCode::METHOD_NOT_ALLOWED);
        resp.headers_mut()
            .insert(header::ALLOW, HeaderValue::from_str(&allow.join(",")).expect("verbs are ascii"));
        return resp;
    };
    let id = matches(template, path).flatten();
    let query: HashMap<String, String> = url_query(uri.query().unwrap_or(""));
    let who = caller(&headers);
    handle(&app, *op, id, &query, &who, &body).await
}

fn url_query(q: &str) -> HashMap<String, String> {
    form_pairs(q.as_bytes())
}

fn form_pairs(raw: &[u8]) -> HashMap<String, String> {
    url::form_urlencoded::parse(raw).into_owned().collect()
}

fn escape_html(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '&' => out.push_str("&amp;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&#x27;"),
            c => out.push(c),
        }
    }
    out
}

fn json_field(body: &[u8], field: &str) -> Option<String> {
    let v: Value = serde_json::from_slice(body).ok()?;
    v.get(field)?.as_str().map(str::to_string)
}

fn stack_trace(id: i64) -> String {
    format!(
        "{TRACE_MARKER}: Cannot invoke \"com.example.catalog.Item.getPrice()\" because \"item\" is null\n\
         \tat com.example.catalog.ItemService.priceOf(ItemService.java:87)\n\
         \tat com.example.catalog.ItemController.getItem(ItemController.java:41)\n\
         \tat java.base/jdk.internal.reflect.DirectMethodHandleAccessor.invoke(DirectMethodHandleAccessor.java:103)\n\
         \tat java.base/java.lang.reflect.Method.invoke(Method.java:580)\n\
         \tat org.springframework.web.method.support.InvocableHandlerMethod.doInvoke(InvocableHandlerMethod.java:255)\n\
         \tat org.springframework.web.servlet.DispatcherServlet.doDispatch(DispatcherServlet.java:1089)\n\
         \tat org.apache.catalina.core.ApplicationFilterChain.doFilter(ApplicationFilterChain.java:166)\n\
         \t... 42 more (item {id})\n"
    )
}

/// Seconds a sleep payload asks for, if it carries one.
fn requested_sleep(input: &str) -> Option<Option<f64>> {
    static PATTERNS: std::sync::OnceLock<[Regex; 3]> = std::sync::OnceLock::new();
    let [sleep, waitfor, blob] = PATTERNS.get_or_init(|| {
        [
            Regex::new(r"(?i)sleep\s*\(\s*([0-9]+(?:\.[0-9]+)?)").unwrap(),
            Regex::new(r"(?i)waitfor\s+delay\s+'(\d+):(\d+):(\d+)'").unwrap(),
            Regex::new(r"(?i)randomblob\s*\(").unwrap(),
        ]
    });
    if let Some(c) = sleep.captures(input) {
        return Some(c[1].parse().ok());
    }
    if let Some(c) = waitfor.captures(input) {
        let n = |i: usize| c[i].parse::<f64>().unwrap_or(0.0);
        return Some(Some(n(1) * 3600.0 + n(2) * 60.0 + n(3)));
    }
    blob.is_match(input).then_some(None)
}

async fn handle(
    app: &App,
    op: Op,
    id: Option<String>,
    query: &HashMap<String, String>,
    who: &Caller,
    body: &[u8],
) -> Response {
    let user = match who {
        Caller::User(u) => Some(u.clone()),
        _ => None,
    };
    let needs_auth = !matches!(op, Op::CreateProduct | Op::ListProducts | Op::ProductOptions | Op::Token | Op::AdminStats)
        && !(app.flaws.open && matches!(op, Op::GetResource | Op::PutResource | Op::DeleteResource));
    if needs_auth && user.is_none() {
        return status(StatusCode::UNAUTHORIZED);
    }
    let id = match id.map(|s| s.parse::<i64>()) {
        Some(Ok(n)) => Some(n),
        Some(Err(_)) => return status(StatusCode::BAD_REQUEST),
        None => None,
    };
    let flaws = app.flaws;
    match op {
        Op::CreateResource => {
            let Some(name) = json_field(body, "name") else {
                return status(StatusCode::BAD_REQUEST);
            };
            let mut store = app.store.lock().unwrap();
            store.next_id += 1;
            let new = store.next_id;
            store.resources.insert(
                new,
                Resource {
                    owner: user.unwrap_or_default(),
                    name,
                },
            );
            let mut resp = json_response(StatusCode::CREATED, json!({ "id": new }));
            resp.headers_mut().insert(
                header::LOCATION,
                HeaderValue::from_str(&format!("/api/resources/{new}")).expect("ascii"),
            );
            resp
        }
        Op::GetResource => {
            let id = id.expect("route has an id");
            let store = app.store.lock().unwrap();
            match store.resources.get(&id) {
                Some(r) if flaws.open || Some(&r.owner) == user.as_ref() => {
                    json_response(StatusCode::OK, json!({ "id": id, "name": escape_html(&r.name) }))
                }
                Some(_) => status(StatusCode::FORBIDDEN),
                None if flaws.open || flaws.missing_is_404 => status(StatusCode::NOT_FOUND),
                None => status(StatusCode::FORBIDDEN),
            }
        }
        Op::PutResource => {
            let id = id.expect("route has an id");
            let Some(name) = json_field(body, "name") else {
                return status(StatusCode::BAD_REQUEST);
            };
            let mut store = app.store.lock().unwrap();
            let caller_name = user.unwrap_or_else(|| "anonymous".into());
            match store.resources.get_mut(&id) {
                None => {
                    store.resources.insert(
                        id,
                        Resource {
                            owner: caller_name,
                            name,
                        },
                    );
                    status(StatusCode::CREATED)
                }
                Some(r) if flaws.open => {
                    r.name = name;
                    json_response(StatusCode::OK, json!({ "id": id }))
                }
                Some(r) if r.owner == caller_name || flaws.put_skips_owner => {
                    r.name = name;
                    StatusCode::NO_CONTENT.into_response()
                }
                Some(_) => status(StatusCode::FORBIDDEN),
            }
        }
        Op::DeleteResource => {
            let id = id.expect("route has an id");
            let mut store = app.store.lock().unwrap();
            let owned = store
                .resources
                .get(&id)
                .map(|r| flaws.open || Some(&r.owner) == user.as_ref());
            match owned {
                Some(true) => {
                    store.resources.remove(&id);
                    StatusCode::NO_CONTENT.into_response()
                }
                None if flaws.open => status(StatusCode::NOT_FOUND),
                _ => status(StatusCode::FORBIDDEN),
            }
        }
        Op::Reports => json_response(StatusCode::UNAUTHORIZED, json!({ "error": "unrecognized credentials" })),
        Op::AdminStats => match who {
            Caller::Invalid => status(StatusCode::UNAUTHORIZED),
            Caller::User(u) if u != "BAR" => status(StatusCode::FORBIDDEN),
            _ => {
                let n = app.store.lock().unwrap().resources.len();
                json_response(StatusCode::OK, json!({ "resources": n, "users": 2 }))
            }
        },
        Op::Item => {
            let id = id.expect("route has an id");
            if (1..=ITEM_COUNT).contains(&id) {
                json_response(StatusCode::OK, json!({ "id": id, "price": id * 100 }))
            } else {
                (StatusCode::INTERNAL_SERVER_ERROR, [(header::CONTENT_TYPE, "text/plain")], stack_trace(id)).into_response()
            }
        }
        Op::CreateProduct => {
            let Some(name) = json_field(body, "name") else {
                return status(StatusCode::BAD_REQUEST);
            };
            let mut store = app.store.lock().unwrap();
            store.products.push(name);
            json_response(StatusCode::CREATED, json!({ "id": store.products.len() }))
        }
        Op::ListProducts => {
            let store = app.store.lock().unwrap();
            let list: Vec<Value> = store
                .products
                .iter()
                .enumerate()
                .map(|(i, n)| json!({ "id": i + 1, "name": escape_html(n) }))
                .collect();
            json_response(StatusCode::OK, Value::Array(list))
        }
        Op::ProductOptions => {
            let mut resp = StatusCode::NO_CONTENT.into_response();
            resp.headers_mut()
                .insert(header::ALLOW, HeaderValue::from_static("GET, POST, OPTIONS"));
            resp
        }
        Op::Search => {
            let Some(q) = query.get("q") else {
                return status(StatusCode::BAD_REQUEST);
            };
            if let (Some(requested), Some(default)) = (requested_sleep(q), app.options.sqli_sleep) {
                let secs = requested.unwrap_or(default.as_secs_f64()).clamp(0.0, 30.0);
                tokio::time::sleep(Duration::from_secs_f64(secs)).await;
            }
            json_response(StatusCode::OK, json!({ "query": escape_html(q), "results": [] }))
        }
        Op::AddComment => {
            let Some(text) = json_field(body, "text") else {
                return status(StatusCode::BAD_REQUEST);
            };
            let mut store = app.store.lock().unwrap();
            store.comments.push(text);
            json_response(StatusCode::CREATED, json!({ "id": store.comments.len() }))
        }
        Op::ListComments => {
            let store = app.store.lock().unwrap();
            let list: Vec<Value> = store
                .comments
                .iter()
                .enumerate()
                .map(|(i, t)| json!({ "id": i + 1, "text": t }))
                .collect();
            json_response(StatusCode::OK, Value::Array(list))
        }
        Op::Token => {
            let form = form_pairs(body);
            match form.get("name").filter(|n| !n.is_empty()) {
                Some(name) => {
                    let token = format!("tok-{name}");
                    let mut resp =
                        json_response(StatusCode::OK, json!({ "access_token": token, "token_type": "Bearer" }));
                    if let Ok(v) = HeaderValue::from_str(&token) {
                        resp.headers_mut().insert("x-access-token", v);
                    }
                    resp
                }
                None => status(StatusCode::BAD_REQUEST),
            }
        }
        Op::Me => json_response(StatusCode::OK, json!({ "name": user })),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn template_matching() {
        assert_eq!(matches("/api/resources/{id}", "/api/resources/7"), Some(Some("7".into())));
        assert_eq!(matches("/api/resources", "/api/resources/"), Some(None));
        assert_eq!(matches("/api/resources/{id}", "/api/resources"), None);
    }

    #[test]
    fn sleep_signatures() {
        assert_eq!(requested_sleep("x' AND SLEEP(5.00)-- "), Some(Some(5.0)));
        assert_eq!(requested_sleep("1; SELECT pg_sleep(3)"), Some(Some(3.0)));
        assert_eq!(requested_sleep("'; WAITFOR DELAY '0:00:05'--"), Some(Some(5.0)));
        assert_eq!(requested_sleep("AND 1=LIKE('ABCDEFG',UPPER(HEX(RANDOMBLOB(500000000))))"), Some(None));
        assert_eq!(requested_sleep("plain words"), None);
    }

    #[test]
    fn form_decoding() {
        let f = form_pairs(b"name=Vei+leder&grant_type=client%5Fcredentials");
        assert_eq!(f["name"], "Vei leder");
        assert_eq!(f["grant_type"], "client_credentials");
    }
}
