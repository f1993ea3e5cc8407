//! OpenAI-compatible chat-completions client.

use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{ChatMessage, ChatRequest, ChatResponse, Provider, ProviderError, Usage};

pub const API_KEY_ENV: &str = "PMIG_API_KEY";
pub const BASE_URL_ENV: &str = "PMIG_BASE_URL";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpConfig {
    pub max_in_flight: usize,
    pub max_retries: u32,
    /// First retry delay; doubles on each further retry.
    pub backoff_base: Duration,
    pub timeout: Duration,
}

impl Default for HttpConfig {
    fn default() -> Self {
        Self {
            max_in_flight: 4,
            max_retries: 3,
            backoff_base: Duration::from_secs(1),
            timeout: Duration::from_secs(60),
        }
    }
}

struct Gate {
    in_flight: Mutex<usize>,
    freed: Condvar,
    cap: usize,
}

struct Permit<'a>(&'a Gate);

impl Gate {
    fn acquire(&self) -> Permit<'_> {
        let mut n = self.in_flight.lock().unwrap_or_else(|e| e.into_inner());
        while *n >= self.cap {
            n = self.freed.wait(n).unwrap_or_else(|e| e.into_inner());
        }
        *n += 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        let mut n = self.0.in_flight.lock().unwrap_or_else(|e| e.into_inner());
        *n -= 1;
        self.0.freed.notify_one();
    }
}

pub struct HttpProvider {
    endpoint: String,
    api_key: Option<String>,
    config: HttpConfig,
    agent: ureq::Agent,
    gate: Gate,
}

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    messages: &'a [ChatMessage],
    temperature: f64,
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
    usage: Option<WireUsage>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireMessage,
}

#[derive(Deserialize)]
struct WireMessage {
    content: Option<String>,
}

#[derive(Deserialize)]
struct WireUsage {
    prompt_tokens: u64,
    completion_tokens: u64,
}

enum Attempt {
    Done(Result<ChatResponse, ProviderError>),
    Retry(ProviderError),
}

impl HttpProvider {
    pub fn new(base_url: &str, api_key: Option<String>, config: HttpConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(config.timeout))
            .build()
            .into();
        let cap = config.max_in_flight.max(1);
        Self {
            endpoint: format!("{}/chat/completions", base_url.trim_end_matches('/')),
            api_key,
            config,
            agent,
            gate: Gate {
                in_flight: Mutex::new(0),
                freed: Condvar::new(),
                cap,
            },
        }
    }

    /// Base URL from the argument or `PMIG_BASE_URL`; key from `PMIG_API_KEY`.
    pub fn from_env(base_url: Option<&str>, config: HttpConfig) -> Result<Self, ProviderError> {
        let base = match base_url.filter(|b| !b.is_empty()) {
            Some(b) => b.to_string(),
            None => std::env::var(BASE_URL_ENV)
                .map_err(|_| ProviderError::InvalidRequest(format!("no base URL given and {BASE_URL_ENV} is unset")))?,
        };
        let key = std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty());
        if key.is_none() {
            log::warn!("{API_KEY_ENV} is unset; sending requests without a bearer token");
        }
        Ok(Self::new(&base, key, config))
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    fn attempt(&self, request: &ChatRequest) -> Attempt {
        let body = WireRequest {
            model: &request.model_tag,
            messages: &request.messages,
            temperature: request.temperature,
        };
        let mut call = self.agent.post(&self.endpoint);
        if let Some(key) = &self.api_key {
            call = call.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = match call.send_json(&body) {
            Ok(r) => r,
            Err(e) => return Attempt::Done(Err(ProviderError::NetworkError(e.to_string()))),
        };
        let status = resp.status().as_u16();
        match status {
            200..=299 => {}
            401 | 403 => return Attempt::Done(Err(ProviderError::AuthError(status))),
            429 => return Attempt::Retry(ProviderError::RateLimited(self.config.max_retries + 1)),
            500..=599 => return Attempt::Retry(ProviderError::NetworkError(format!("server returned HTTP {status}"))),
            _ => {
                let text = resp.body_mut().read_to_string().unwrap_or_default();
                return Attempt::Done(Err(ProviderError::NetworkError(format!("HTTP {status}: {}", text.trim()))));
            }
        }
        let wire: WireResponse = match resp.body_mut().read_json() {
            Ok(w) => w,
            Err(e) => return Attempt::Done(Err(ProviderError::MalformedResponse(e.to_string()))),
        };
        let Some(content) = wire.choices.into_iter().next().and_then(|c| c.message.content) else {
            return Attempt::Done(Err(ProviderError::MalformedResponse("no message content in first choice".into())));
        };
        let usage = match wire.usage {
            Some(u) => Usage {
                input_tokens: u.prompt_tokens,
                output_tokens: u.completion_tokens,
            },
            None => {
                log::warn!("response carries no usage object; approximating token counts");
                Usage::approximate(request.messages.iter().map(|m| m.content.as_str()), &content)
            }
        };
        Attempt::Done(Ok(ChatResponse { content, usage }))
    }
}

impl Provider for HttpProvider {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, ProviderError> {
        request.validate()?;
        let _permit = self.gate.acquire();
        let mut delay = self.config.backoff_base;
        let mut retries = 0;
        loop {
            match self.attempt(request) {
                Attempt::Done(r) => return r,
                Attempt::Retry(err) if retries >= self.config.max_retries => return Err(err),
                Attempt::Retry(err) => {
                    log::debug!("retrying after {err} in {delay:?}");
                    thread::sleep(delay);
                    delay *= 2;
                    retries += 1;
                }
            }
        }
    }
}
