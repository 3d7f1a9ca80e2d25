//! Chat-completions network client.
//!
//! One client covers the hosted model families the harness targets: the
//! endpoint URL, model name, and any vendor-specific options are
//! configuration. Requests are retried on transient failures (transport
//! errors, 429, 5xx) with monotone non-decreasing backoff; the API key is
//! read from an environment variable and never appears in config files.

use std::time::{Duration, Instant};

use serde_json::{json, Map, Value};

use super::{Backend, BackendError, GenRequest, GenResult, Role};

#[derive(Debug, Clone)]
pub struct HttpConfig {
    pub url: String,
    pub model: String,
    /// Environment variable holding the API key; empty or unset sends no
    /// auth header (local endpoints).
    pub api_key_env: String,
    /// Header carrying the key. "Authorization" gets the usual
    /// `Bearer <key>` form, any other name gets the raw key.
    pub auth_header: String,
    pub timeout: Duration,
    pub max_retries: u32,
    pub backoff_base: Duration,
    /// Extra body fields merged verbatim into every request.
    pub vendor_options: Map<String, Value>,
}

impl Default for HttpConfig {
    fn default() -> Self {
        HttpConfig {
            url: "http://127.0.0.1:8080/v1/chat/completions".to_string(),
            model: "heart-eval".to_string(),
            api_key_env: "HEART_API_KEY".to_string(),
            auth_header: "Authorization".to_string(),
            timeout: Duration::from_secs(120),
            max_retries: 3,
            backoff_base: Duration::from_millis(500),
            vendor_options: Map::new(),
        }
    }
}

pub struct HttpBackend {
    config: HttpConfig,
    agent: ureq::Agent,
    api_key: Option<String>,
    id: String,
}

impl HttpBackend {
    pub fn new(config: HttpConfig) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        let api_key = std::env::var(&config.api_key_env)
            .ok()
            .filter(|k| !k.is_empty());
        let id = format!("http:{}:{}", config.url, config.model);
        HttpBackend {
            config,
            agent,
            api_key,
            id,
        }
    }

    fn body_for(&self, request: &GenRequest) -> String {
        let messages: Vec<Value> = request
            .messages
            .iter()
            .map(|m| {
                json!({
                    "role": match m.role {
                        Role::System => "system",
                        Role::User => "user",
                        Role::Assistant => "assistant",
                    },
                    "content": m.content,
                })
            })
            .collect();
        let mut body = Map::new();
        body.insert("model".to_string(), json!(self.config.model));
        body.insert("messages".to_string(), json!(messages));
        body.insert("temperature".to_string(), json!(request.params.temperature));
        body.insert("top_p".to_string(), json!(request.params.top_p));
        body.insert("max_tokens".to_string(), json!(request.params.max_tokens));
        if let Some(thinking) = request.params.thinking_enabled {
            body.insert("thinking_enabled".to_string(), json!(thinking));
        }
        for (k, v) in &self.config.vendor_options {
            body.insert(k.clone(), v.clone());
        }
        Value::Object(body).to_string()
    }

    fn backoff_for(&self, attempt: u32, retry_after: Option<Duration>) -> Duration {
        let exp = self.config.backoff_base.saturating_mul(1u32 << attempt.min(8));
        retry_after.map_or(exp, |ra| ra.max(exp))
    }
}

fn parse_retry_after(res: &ureq::http::Response<ureq::Body>) -> Option<Duration> {
    res.headers()
        .get("retry-after")
        .and_then(|v| v.to_str().ok())
        .and_then(|v| v.trim().parse::<u64>().ok())
        .map(Duration::from_secs)
}

fn extract_content(raw: &str) -> Result<String, BackendError> {
    let value: Value = serde_json::from_str(raw)
        .map_err(|e| BackendError::MalformedResponse(format!("invalid JSON: {e}")))?;
    value
        .pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .map(str::to_string)
        .ok_or_else(|| {
            BackendError::MalformedResponse(
                "response has no choices[0].message.content".to_string(),
            )
        })
}

impl Backend for HttpBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn generate(&self, request: &GenRequest) -> Result<GenResult, BackendError> {
        request.validate()?;
        let body = self.body_for(request);
        let start = Instant::now();
        let max_attempts = self.config.max_retries + 1;
        let mut last_rate_limit: Option<Option<Duration>> = None;
        let mut last_error = String::new();
        for attempt in 1..=max_attempts {
            if attempt > 1 {
                let retry_after = last_rate_limit.flatten();
                std::thread::sleep(self.backoff_for(attempt - 2, retry_after));
            }
            let mut req = self
                .agent
                .post(&self.config.url)
                .header("content-type", "application/json");
            if let Some(key) = &self.api_key {
                let value = if self.config.auth_header.eq_ignore_ascii_case("authorization") {
                    format!("Bearer {key}")
                } else {
                    key.clone()
                };
                req = req.header(&self.config.auth_header, &value);
            }
            match req.send(&body) {
                Ok(mut res) => {
                    let status = res.status().as_u16();
                    if (200..300).contains(&status) {
                        let raw = res.body_mut().read_to_string().map_err(|e| {
                            BackendError::MalformedResponse(format!("body read failed: {e}"))
                        })?;
                        return Ok(GenResult {
                            text: extract_content(&raw)?,
                            backend_id: self.id.clone(),
                            latency: start.elapsed(),
                            attempt_count: attempt,
                        });
                    }
                    if status == 429 {
                        let retry_after = parse_retry_after(&res);
                        last_rate_limit = Some(retry_after);
                        last_error = "HTTP 429".to_string();
                        if attempt == max_attempts {
                            return Err(BackendError::RateLimited {
                                retry_after,
                                attempts: attempt,
                            });
                        }
                        continue;
                    }
                    if (500..600).contains(&status) {
                        last_rate_limit = None;
                        last_error = format!("HTTP {status}");
                        if attempt == max_attempts {
                            return Err(BackendError::Transport {
                                message: last_error,
                                attempts: attempt,
                            });
                        }
                        continue;
                    }
                    // Remaining 4xx are permanent; retrying cannot help.
                    return Err(BackendError::Transport {
                        message: format!("HTTP {status}"),
                        attempts: attempt,
                    });
                }
                Err(e) => {
                    last_rate_limit = None;
                    last_error = e.to_string();
                    if attempt == max_attempts {
                        return Err(BackendError::Transport {
                            message: last_error,
                            attempts: attempt,
                        });
                    }
                }
            }
        }
        Err(BackendError::Transport {
            message: last_error,
            attempts: max_attempts,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{ChatMessage, GenParams, RequestTags};
    use std::io::{Read, Write};
    use std::net::TcpListener;
    use std::sync::mpsc;

    /// Minimal HTTP/1.1 server serving a fixed sequence of responses, one
    /// connection each; captures request bodies.
    fn serve(responses: Vec<(u16, String)>) -> (String, mpsc::Receiver<String>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let (tx, rx) = mpsc::channel();
        std::thread::spawn(move || {
            for (status, body) in responses {
                let (mut stream, _) = listener.accept().unwrap();
                let mut buf = Vec::new();
                let mut chunk = [0u8; 4096];
                let header_end = loop {
                    let n = stream.read(&mut chunk).unwrap();
                    buf.extend_from_slice(&chunk[..n]);
                    if let Some(pos) = buf.windows(4).position(|w| w == b"\r\n\r\n") {
                        break pos + 4;
                    }
                };
                let headers = String::from_utf8_lossy(&buf[..header_end]).to_string();
                let content_length: usize = headers
                    .lines()
                    .find_map(|l| l.to_ascii_lowercase().strip_prefix("content-length:")
                        .map(|v| v.trim().parse().unwrap()))
                    .unwrap_or(0);
                while buf.len() < header_end + content_length {
                    let n = stream.read(&mut chunk).unwrap();
                    buf.extend_from_slice(&chunk[..n]);
                }
                let req_body =
                    String::from_utf8_lossy(&buf[header_end..header_end + content_length])
                        .to_string();
                tx.send(req_body).unwrap();
                let reason = if status == 200 { "OK" } else { "X" };
                let response = format!(
                    "HTTP/1.1 {status} {reason}\r\ncontent-length: {}\r\ncontent-type: application/json\r\nconnection: close\r\n\r\n{body}",
                    body.len(),
                );
                stream.write_all(response.as_bytes()).unwrap();
            }
        });
        (format!("http://{addr}/v1/chat/completions"), rx)
    }

    fn ok_body(content: &str) -> String {
        serde_json::json!({
            "choices": [{"message": {"role": "assistant", "content": content}}]
        })
        .to_string()
    }

    fn request_with_cue(cue: &str) -> GenRequest {
        GenRequest {
            messages: vec![ChatMessage::user(format!("question text {cue}"))],
            params: GenParams::default(),
            tags: RequestTags {
                task_id: "t1".to_string(),
                iteration: 1,
                prompt_id: "happy-1".to_string(),
                strategy: "heart:hsur->sa->hsur->sa".to_string(),
            },
        }
    }

    fn test_config(url: String) -> HttpConfig {
        HttpConfig {
            url,
            backoff_base: Duration::from_millis(1),
            ..HttpConfig::default()
        }
    }

    #[test]
    fn success_parses_first_choice() {
        let (url, _rx) = serve(vec![(200, ok_body("So the final answer is \\boxed{4}."))]);
        let backend = HttpBackend::new(test_config(url));
        let out = backend.generate(&request_with_cue("cue")).unwrap();
        assert_eq!(out.text, "So the final answer is \\boxed{4}.");
        assert_eq!(out.attempt_count, 1);
    }

    #[test]
    fn retries_transient_5xx_then_succeeds() {
        let (url, _rx) = serve(vec![
            (500, "{}".to_string()),
            (503, "{}".to_string()),
            (200, ok_body("ok")),
        ]);
        let backend = HttpBackend::new(test_config(url));
        let out = backend.generate(&request_with_cue("cue")).unwrap();
        assert_eq!(out.attempt_count, 3);
    }

    #[test]
    fn rate_limit_surfaces_retry_after() {
        let (url, _rx) = serve(vec![
            (429, "{}".to_string()),
            (429, "{}".to_string()),
            (429, "{}".to_string()),
            (429, "{}".to_string()),
        ]);
        let mut config = test_config(url);
        config.max_retries = 3;
        let backend = HttpBackend::new(config);
        match backend.generate(&request_with_cue("cue")).unwrap_err() {
            BackendError::RateLimited { attempts, .. } => assert_eq!(attempts, 4),
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn exhausted_retries_yield_transport_error() {
        let (url, _rx) = serve(vec![
            (500, "{}".to_string()),
            (500, "{}".to_string()),
            (500, "{}".to_string()),
            (500, "{}".to_string()),
        ]);
        let backend = HttpBackend::new(test_config(url));
        match backend.generate(&request_with_cue("cue")).unwrap_err() {
            BackendError::Transport { attempts, .. } => assert_eq!(attempts, 4),
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn malformed_response_is_not_retried() {
        let (url, _rx) = serve(vec![(200, "{\"unexpected\": true}".to_string())]);
        let backend = HttpBackend::new(test_config(url));
        assert!(matches!(
            backend.generate(&request_with_cue("cue")).unwrap_err(),
            BackendError::MalformedResponse(_)
        ));
    }

    #[test]
    fn outbound_payload_carries_content_verbatim() {
        let cue = "That\u{2019}s not quite right, but I\u{2019}m confident you can get there.";
        let (url, rx) = serve(vec![(200, ok_body("ok"))]);
        let backend = HttpBackend::new(test_config(url));
        backend.generate(&request_with_cue(cue)).unwrap();
        let sent = rx.recv().unwrap();
        let body: serde_json::Value = serde_json::from_str(&sent).unwrap();
        let content = body["messages"][0]["content"].as_str().unwrap();
        assert!(content.contains(cue));
        assert_eq!(body["temperature"].as_f64().unwrap(), 0.7);
        assert_eq!(body["top_p"].as_f64().unwrap(), 0.2);
    }

    #[test]
    fn backoff_is_monotone() {
        let backend = HttpBackend::new(HttpConfig::default());
        let mut prev = Duration::ZERO;
        for attempt in 0..6 {
            let d = backend.backoff_for(attempt, None);
            assert!(d >= prev);
            prev = d;
        }
    }
}
