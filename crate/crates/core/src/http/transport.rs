use std::collections::BTreeMap;
use std::io::Read;
use std::time::Duration;

/// A fully rendered request, ready to send.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedRequest {
    pub method: String,
    pub url: String,
    pub headers: Vec<(String, String)>,
    pub body: Option<(String, String)>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RawResponse {
    pub status: u16,
    /// Lower-cased header names.
    pub headers: BTreeMap<String, String>,
    pub body: Vec<u8>,
    pub truncated: bool,
}

#[derive(Debug, Clone, thiserror::Error, PartialEq, Eq)]
pub enum TransportError {
    #[error("request timed out")]
    Timeout,
    #[error("cannot connect: {0}")]
    Connect(String),
    #[error("transport failure: {0}")]
    Other(String),
}

/// Sends one request and reads the complete (capped) response.
pub trait Transport: Send {
    fn send(&self, request: &PreparedRequest) -> Result<RawResponse, TransportError>;
}

#[derive(Debug, Clone)]
pub struct TransportOptions {
    pub timeout: Duration,
    pub body_cap: usize,
    /// Proxy URL for plain-HTTP targets; loopback hosts always bypass it.
    pub http_proxy: Option<String>,
}

impl Default for TransportOptions {
    fn default() -> Self {
        Self {
            timeout: Duration::from_secs(10),
            body_cap: 1 << 20,
            http_proxy: std::env::var("HTTP_PROXY")
                .or_else(|_| std::env::var("http_proxy"))
                .ok()
                .filter(|s| !s.is_empty()),
        }
    }
}

/// HTTP/1.1 transport. Redirects are never followed.
pub struct HttpTransport {
    client: reqwest::blocking::Client,
    body_cap: usize,
}

impl HttpTransport {
    pub fn new(options: &TransportOptions) -> Result<Self, TransportError> {
        let mut builder = reqwest::blocking::Client::builder()
            .redirect(reqwest::redirect::Policy::none())
            .timeout(options.timeout)
            .no_proxy();
        if let Some(proxy_url) = &options.http_proxy {
            let mut bypass = String::from("localhost,127.0.0.1,::1");
            if let Ok(extra) = std::env::var("NO_PROXY").or_else(|_| std::env::var("no_proxy")) {
                bypass.push(',');
                bypass.push_str(&extra);
            }
            let proxy = reqwest::Proxy::http(proxy_url.as_str())
                .map_err(|e| TransportError::Other(format!("invalid HTTP_PROXY: {e}")))?
                .no_proxy(reqwest::NoProxy::from_string(&bypass));
            builder = builder.proxy(proxy);
        }
        let client = builder
            .build()
            .map_err(|e| TransportError::Other(e.to_string()))?;
        Ok(Self {
            client,
            body_cap: options.body_cap,
        })
    }
}

fn classify(e: reqwest::Error) -> TransportError {
    if e.is_timeout() {
        TransportError::Timeout
    } else if e.is_connect() {
        TransportError::Connect(e.to_string())
    } else {
        TransportError::Other(e.to_string())
    }
}

impl Transport for HttpTransport {
    fn send(&self, request: &PreparedRequest) -> Result<RawResponse, TransportError> {
        let method = reqwest::Method::from_bytes(request.method.as_bytes())
            .map_err(|e| TransportError::Other(e.to_string()))?;
        let mut rb = self.client.request(method, &request.url);
        for (k, v) in &request.headers {
            rb = rb.header(k, v);
        }
        if let Some((content_type, body)) = &request.body {
            rb = rb
                .header(reqwest::header::CONTENT_TYPE, content_type)
                .body(body.clone());
        }
        let resp = rb.send().map_err(classify)?;
        let status = resp.status().as_u16();
        let mut headers = BTreeMap::new();
        for (k, v) in resp.headers() {
            let value = String::from_utf8_lossy(v.as_bytes()).into_owned();
            headers
                .entry(k.as_str().to_ascii_lowercase())
                .and_modify(|existing: &mut String| {
                    existing.push_str(", ");
                    existing.push_str(&value);
                })
                .or_insert(value);
        }
        let mut body = Vec::new();
        let mut limited = resp.take(self.body_cap as u64 + 1);
        limited.read_to_end(&mut body).map_err(|e| {
            if e.kind() == std::io::ErrorKind::TimedOut
                || e.to_string().to_ascii_lowercase().contains("timed out")
            {
                TransportError::Timeout
            } else {
                TransportError::Other(e.to_string())
            }
        })?;
        let truncated = body.len() > self.body_cap;
        body.truncate(self.body_cap);
        Ok(RawResponse {
            status,
            headers,
            body,
            truncated,
        })
    }
}
