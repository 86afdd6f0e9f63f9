//! Authentication identities and how they turn into request headers.
//!
//! Config format (YAML):
//!
//! ```yaml
//! auth:
//!   - name: FOO
//!     headers:
//!       Authorization: FOO
//!   - name: Veileder
//!     login:
//!       endpoint: /azuread/token
//!       method: POST
//!       contentType: application/x-www-form-urlencoded
//!       payload: name=Veileder&grant_type=client_credentials
//!       token:
//!         extractFrom: body
//!         field: access_token
//!         headerTemplate: "Bearer {token}"
//! ```
//!
//! The anonymous identity is always added implicitly.

use std::collections::BTreeMap;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::http::{PreparedRequest, Transport, TransportError};
use crate::schema::Verb;

pub const ANONYMOUS: &str = "anonymous";
pub const TOKEN_PLACEHOLDER: &str = "{token}";
/// Header that receives the rendered login token.
pub const TOKEN_HEADER: &str = "Authorization";

#[derive(Debug, thiserror::Error)]
pub enum AuthError {
    #[error("cannot parse auth config: {0}")]
    Parse(String),
    #[error("at least one user required")]
    NoUsers,
    #[error("duplicate identity name `{0}`")]
    DuplicateName(String),
    #[error("identity name `{0}` is reserved")]
    ReservedName(String),
    #[error("identity `{0}` must declare exactly one of `headers` or `login`")]
    AmbiguousKind(String),
    #[error("identity `{0}` declares an empty header map")]
    EmptyHeaders(String),
    #[error("malformed login recipe for `{name}`: {reason}")]
    MalformedLogin { name: String, reason: String },
    #[error("login for `{name}` failed: {reason}")]
    LoginFailed { name: String, reason: String },
    #[error("login for `{name}` returned no token in `{field}`")]
    TokenMissing { name: String, field: String },
    #[error("unknown identity `{0}`")]
    UnknownIdentity(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TokenSource {
    Body,
    Header,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct TokenExtractor {
    pub extract_from: TokenSource,
    pub field: String,
    pub header_template: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct LoginRecipe {
    pub endpoint: String,
    #[serde(default = "default_login_method")]
    pub method: Verb,
    pub content_type: String,
    #[serde(default)]
    pub payload: String,
    pub token: TokenExtractor,
}

fn default_login_method() -> Verb {
    Verb::Post
}

impl LoginRecipe {
    fn check(&self, name: &str) -> Result<(), AuthError> {
        let bad = |reason: &str| AuthError::MalformedLogin {
            name: name.to_string(),
            reason: reason.to_string(),
        };
        if self.endpoint.trim().is_empty() {
            return Err(bad("empty endpoint"));
        }
        let field = self.token.field.trim();
        if field.is_empty() || field.contains([',', ' ']) {
            return Err(bad("token field must name exactly one field"));
        }
        if self.token.header_template.matches(TOKEN_PLACEHOLDER).count() != 1 {
            return Err(bad("headerTemplate must contain {token} exactly once"));
        }
        Ok(())
    }

    /// Absolute login URL; relative endpoints hang off the target base URL.
    pub fn url(&self, base_url: &str) -> String {
        if self.endpoint.starts_with("http://") || self.endpoint.starts_with("https://") {
            self.endpoint.clone()
        } else {
            format!(
                "{}/{}",
                base_url.trim_end_matches('/'),
                self.endpoint.trim_start_matches('/')
            )
        }
    }

    pub fn render_header(&self, token: &str) -> String {
        self.token.header_template.replace(TOKEN_PLACEHOLDER, token)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", tag = "kind")]
pub enum IdentityKind {
    Anonymous,
    StaticHeaders { headers: BTreeMap<String, String> },
    LoginFlow { login: LoginRecipe },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuthIdentity {
    pub name: String,
    #[serde(flatten)]
    pub kind: IdentityKind,
}

impl AuthIdentity {
    pub fn anonymous() -> Self {
        Self {
            name: ANONYMOUS.into(),
            kind: IdentityKind::Anonymous,
        }
    }

    pub fn with_headers(name: &str, headers: &[(&str, &str)]) -> Self {
        Self {
            name: name.into(),
            kind: IdentityKind::StaticHeaders {
                headers: headers
                    .iter()
                    .map(|(k, v)| (k.to_string(), v.to_string()))
                    .collect(),
            },
        }
    }

    pub fn is_anonymous(&self) -> bool {
        matches!(self.kind, IdentityKind::Anonymous)
    }

    pub fn login(&self) -> Option<&LoginRecipe> {
        match &self.kind {
            IdentityKind::LoginFlow { login } => Some(login),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ResolvedCredential {
    pub identity: String,
    pub headers: BTreeMap<String, String>,
    pub obtained_at: DateTime<Utc>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    #[serde(default)]
    auth: Vec<RawEntry>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEntry {
    name: String,
    #[serde(default)]
    headers: Option<BTreeMap<String, String>>,
    #[serde(default)]
    login: Option<LoginRecipe>,
}

/// Parses the auth config. The result lists the declared users in file
/// order followed by the anonymous identity.
pub fn load_auth_config(document: &[u8]) -> Result<Vec<AuthIdentity>, AuthError> {
    let file: ConfigFile =
        serde_yaml::from_slice(document).map_err(|e| AuthError::Parse(e.to_string()))?;
    if file.auth.is_empty() {
        return Err(AuthError::NoUsers);
    }
    let mut out: Vec<AuthIdentity> = Vec::with_capacity(file.auth.len() + 1);
    for entry in file.auth {
        let name = entry.name.trim().to_string();
        if name.eq_ignore_ascii_case(ANONYMOUS) {
            return Err(AuthError::ReservedName(name));
        }
        if out.iter().any(|i| i.name == name) {
            return Err(AuthError::DuplicateName(name));
        }
        let kind = match (entry.headers, entry.login) {
            (Some(headers), None) => {
                if headers.is_empty() {
                    return Err(AuthError::EmptyHeaders(name));
                }
                IdentityKind::StaticHeaders { headers }
            }
            (None, Some(login)) => {
                login.check(&name)?;
                IdentityKind::LoginFlow { login }
            }
            _ => return Err(AuthError::AmbiguousKind(name)),
        };
        out.push(AuthIdentity { name, kind });
    }
    out.push(AuthIdentity::anonymous());
    Ok(out)
}

/// Builds the request a login recipe sends.
pub fn login_request(recipe: &LoginRecipe, base_url: &str) -> PreparedRequest {
    PreparedRequest {
        method: recipe.method.to_string(),
        url: recipe.url(base_url),
        headers: vec![("Accept".into(), "*/*".into())],
        body: (!recipe.payload.is_empty() || recipe.method != Verb::Get)
            .then(|| (recipe.content_type.clone(), recipe.payload.clone())),
    }
}

/// Turns an identity into concrete headers, running its login call when
/// it has one.
pub fn resolve(
    identity: &AuthIdentity,
    sink: &dyn Transport,
    base_url: &str,
) -> Result<ResolvedCredential, AuthError> {
    let headers = match &identity.kind {
        IdentityKind::Anonymous => BTreeMap::new(),
        IdentityKind::StaticHeaders { headers } => headers.clone(),
        IdentityKind::LoginFlow { login } => {
            let failed = |reason: String| AuthError::LoginFailed {
                name: identity.name.clone(),
                reason,
            };
            let resp = sink
                .send(&login_request(login, base_url))
                .map_err(|e: TransportError| failed(e.to_string()))?;
            if !(200..300).contains(&resp.status) {
                return Err(failed(format!("status {}", resp.status)));
            }
            let token = match login.token.extract_from {
                TokenSource::Header => resp.headers.get(&login.token.field.to_ascii_lowercase()).cloned(),
                TokenSource::Body => serde_json::from_slice::<serde_json::Value>(&resp.body)
                    .ok()
                    .and_then(|v| {
                        let mut cur = &v;
                        for part in login.token.field.split('.') {
                            cur = cur.get(part)?;
                        }
                        cur.as_str()
                            .map(str::to_string)
                            .or_else(|| cur.is_number().then(|| cur.to_string()))
                    }),
            };
            let token = token.ok_or_else(|| AuthError::TokenMissing {
                name: identity.name.clone(),
                field: login.token.field.clone(),
            })?;
            BTreeMap::from([(TOKEN_HEADER.to_string(), login.render_header(&token))])
        }
    };
    Ok(ResolvedCredential {
        identity: identity.name.clone(),
        headers,
        obtained_at: Utc::now(),
    })
}
