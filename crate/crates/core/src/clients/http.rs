//! OpenAI-compatible HTTP backend.
//!
//! * generation: `POST {base}/v1/chat/completions`
//! * embedding:  `POST {base}/v1/embeddings`
//! * scoring:    `POST {base}/v1/completions` with `echo` and `logprobs`,
//!   reading back the log-probabilities of the echoed target region.
//!
//! Requests go through a [`Transport`] so recorded fixtures can stand in for
//! a live server. Failed requests are retried with exponential backoff and
//! full jitter.

use std::collections::{HashMap, VecDeque};
use std::path::Path;
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{Backend, Embedder, Generator, SamplingParams, TokenScorer, TokenScores};
use crate::corpus::Document;
use crate::error::ClientError;
use crate::text::{count_tokens, raw_tokens, TokenRule};

pub const ENV_API_BASE: &str = "MODEL_API_BASE";
pub const ENV_API_KEY: &str = "MODEL_API_KEY";

pub const CHAT_PATH: &str = "/v1/chat/completions";
pub const EMBEDDINGS_PATH: &str = "/v1/embeddings";
pub const COMPLETIONS_PATH: &str = "/v1/completions";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpReply {
    pub status: u16,
    pub body: String,
}

pub trait Transport: Send + Sync {
    fn post_json(
        &self,
        url: &str,
        headers: &[(String, String)],
        body: &Value,
        timeout: Duration,
    ) -> Result<HttpReply, ClientError>;
}

/// Live transport backed by a blocking reqwest client.
pub struct ReqwestTransport {
    client: reqwest::blocking::Client,
}

impl ReqwestTransport {
    pub fn new() -> Result<Self, ClientError> {
        let client = reqwest::blocking::Client::builder()
            .build()
            .map_err(|e| ClientError::Config(e.to_string()))?;
        Ok(ReqwestTransport { client })
    }
}

impl Transport for ReqwestTransport {
    fn post_json(
        &self,
        url: &str,
        headers: &[(String, String)],
        body: &Value,
        timeout: Duration,
    ) -> Result<HttpReply, ClientError> {
        let mut req = self.client.post(url).timeout(timeout).json(body);
        for (k, v) in headers {
            req = req.header(k, v);
        }
        let resp = req.send().map_err(|e| ClientError::Transport(e.to_string()))?;
        let status = resp.status().as_u16();
        let body = resp.text().map_err(|e| ClientError::Transport(e.to_string()))?;
        Ok(HttpReply { status, body })
    }
}

/// A request as seen by [`ReplayTransport`].
#[derive(Debug, Clone, PartialEq)]
pub struct RecordedRequest {
    pub url: String,
    pub headers: Vec<(String, String)>,
    pub body: Value,
}

/// On-disk fixture halves. The request file pins what the client must send;
/// the response file holds what the server answered.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FixtureRequest {
    pub endpoint: String,
    pub body: Value,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FixtureResponse {
    pub endpoint: String,
    #[serde(default = "ok_status")]
    pub status: u16,
    pub body: Value,
}

fn ok_status() -> u16 {
    200
}

#[derive(Debug, Clone)]
enum Scripted {
    Reply(HttpReply),
    Fail(String),
}

/// Replays scripted responses per endpoint path (FIFO) and records every
/// request. Fixture request bodies are also queued per endpoint; a request
/// that does not contain the next expected body fails.
#[derive(Default)]
pub struct ReplayTransport {
    queues: Mutex<HashMap<String, VecDeque<Scripted>>>,
    expected: Mutex<HashMap<String, VecDeque<Value>>>,
    requests: Mutex<Vec<RecordedRequest>>,
}

impl ReplayTransport {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push_reply(&self, endpoint: &str, status: u16, body: impl Into<String>) -> &Self {
        self.push(endpoint, Scripted::Reply(HttpReply { status, body: body.into() }))
    }

    pub fn push_transport_failure(&self, endpoint: &str, message: &str) -> &Self {
        self.push(endpoint, Scripted::Fail(message.to_string()))
    }

    fn push(&self, endpoint: &str, item: Scripted) -> &Self {
        self.queues
            .lock()
            .unwrap()
            .entry(endpoint.to_string())
            .or_default()
            .push_back(item);
        self
    }

    /// Loads a `<name>.request.json` / `<name>.response.json` pair.
    pub fn load_fixture(&self, dir: impl AsRef<Path>, name: &str) -> Result<&Self, ClientError> {
        let dir = dir.as_ref();
        let read = |suffix: &str| -> Result<String, ClientError> {
            let p = dir.join(format!("{name}.{suffix}.json"));
            std::fs::read_to_string(&p)
                .map_err(|e| ClientError::Config(format!("{}: {e}", p.display())))
        };
        let req: FixtureRequest = serde_json::from_str(&read("request")?)
            .map_err(|e| ClientError::Config(format!("fixture {name} request: {e}")))?;
        let resp: FixtureResponse = serde_json::from_str(&read("response")?)
            .map_err(|e| ClientError::Config(format!("fixture {name} response: {e}")))?;
        self.expected
            .lock()
            .unwrap()
            .entry(req.endpoint.clone())
            .or_default()
            .push_back(req.body);
        Ok(self.push_reply(&resp.endpoint, resp.status, resp.body.to_string()))
    }

    pub fn requests(&self) -> Vec<RecordedRequest> {
        self.requests.lock().unwrap().clone()
    }
}

/// True when every field of `pattern` is present in `value` with an equal
/// value, recursively for objects. Arrays and scalars compare exactly.
pub fn json_subset(pattern: &Value, value: &Value) -> bool {
    match (pattern, value) {
        (Value::Object(p), Value::Object(v)) => p
            .iter()
            .all(|(k, pv)| v.get(k).is_some_and(|vv| json_subset(pv, vv))),
        _ => pattern == value,
    }
}

fn endpoint_of(url: &str) -> &str {
    url.find("/v1/").map(|i| &url[i..]).unwrap_or(url)
}

impl Transport for ReplayTransport {
    fn post_json(
        &self,
        url: &str,
        headers: &[(String, String)],
        body: &Value,
        _timeout: Duration,
    ) -> Result<HttpReply, ClientError> {
        self.requests.lock().unwrap().push(RecordedRequest {
            url: url.to_string(),
            headers: headers.to_vec(),
            body: body.clone(),
        });
        let endpoint = endpoint_of(url);
        let expected = self
            .expected
            .lock()
            .unwrap()
            .get_mut(endpoint)
            .and_then(VecDeque::pop_front);
        if let Some(expected) = expected {
            if !json_subset(&expected, body) {
                return Err(ClientError::InvalidRequest(format!(
                    "request to {endpoint} does not match fixture: sent {body}, recorded {expected}"
                )));
            }
        }
        let next = self
            .queues
            .lock()
            .unwrap()
            .get_mut(endpoint)
            .and_then(VecDeque::pop_front);
        match next {
            Some(Scripted::Reply(r)) => Ok(r),
            Some(Scripted::Fail(m)) => Err(ClientError::Transport(m)),
            None => Err(ClientError::Transport(format!("no recorded response for {endpoint}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub max_retries: u32,
    pub base_delay_ms: u64,
    pub max_delay_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_retries: 3,
            base_delay_ms: 250,
            max_delay_ms: 8_000,
        }
    }
}

impl RetryPolicy {
    /// Full jitter: uniform in `[0, min(max, base * 2^attempt)]`.
    pub fn delay(&self, attempt: u32, rng: &mut impl Rng) -> Duration {
        let ceiling = self
            .base_delay_ms
            .saturating_mul(1u64 << attempt.min(32))
            .min(self.max_delay_ms);
        Duration::from_millis(rng.random_range(0..=ceiling))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HttpConfig {
    pub base_url: String,
    #[serde(skip)]
    pub api_key: Option<String>,
    pub chat_model: String,
    pub embed_model: String,
    pub score_model: String,
    pub timeout_secs: u64,
    pub retry: RetryPolicy,
    pub max_context_tokens: usize,
    /// Whether `/v1/completions` honours `echo` with `logprobs`.
    pub echo_supported: bool,
    /// Alternative scoring endpoint taking `{model, context, target}` and
    /// returning `{"logprobs": [...]}`. Required when echo is unsupported.
    pub score_endpoint: Option<String>,
    pub parallelism: usize,
    pub seed: u64,
}

impl Default for HttpConfig {
    fn default() -> Self {
        HttpConfig {
            base_url: String::new(),
            api_key: None,
            chat_model: "default".into(),
            embed_model: "default".into(),
            score_model: "default".into(),
            timeout_secs: 60,
            retry: RetryPolicy::default(),
            max_context_tokens: 4096,
            echo_supported: true,
            score_endpoint: None,
            parallelism: 4,
            seed: 0,
        }
    }
}

impl HttpConfig {
    /// Fills the base URL and key from `MODEL_API_BASE` / `MODEL_API_KEY`.
    pub fn with_env(mut self) -> Result<Self, ClientError> {
        let base = std::env::var(ENV_API_BASE)
            .map_err(|_| ClientError::Config(format!("{ENV_API_BASE} is not set")))?;
        self.base_url = base;
        self.api_key = std::env::var(ENV_API_KEY).ok().filter(|k| !k.is_empty());
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), ClientError> {
        if self.base_url.trim().is_empty() {
            return Err(ClientError::Config("base URL is empty".into()));
        }
        if !self.echo_supported && self.score_endpoint.is_none() {
            return Err(ClientError::Config(
                "backend without echo support needs a scoring endpoint".into(),
            ));
        }
        if self.max_context_tokens == 0 || self.parallelism == 0 {
            return Err(ClientError::Config(
                "max_context_tokens and parallelism must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Counting semaphore bounding in-flight requests.
struct Gate {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Gate {
    fn new(n: usize) -> Self {
        Gate { free: Mutex::new(n), cv: Condvar::new() }
    }

    fn run<T>(&self, f: impl FnOnce() -> T) -> T {
        {
            let mut free = self.free.lock().unwrap();
            while *free == 0 {
                free = self.cv.wait(free).unwrap();
            }
            *free -= 1;
        }
        let out = f();
        *self.free.lock().unwrap() += 1;
        self.cv.notify_one();
        out
    }
}

type Sleeper = dyn Fn(Duration) + Send + Sync;

struct Inner {
    config: HttpConfig,
    transport: Arc<dyn Transport>,
    gate: Gate,
    rng: Mutex<ChaCha8Rng>,
    sleeper: Box<Sleeper>,
    /// Embedding width observed on the first successful call.
    dim: Mutex<Option<usize>>,
}

#[derive(Clone)]
pub struct HttpBackend {
    inner: Arc<Inner>,
}

impl HttpBackend {
    pub fn new(config: HttpConfig, transport: Arc<dyn Transport>) -> Result<Self, ClientError> {
        config.validate()?;
        let rng = Mutex::new(ChaCha8Rng::seed_from_u64(config.seed));
        Ok(HttpBackend {
            inner: Arc::new(Inner {
                gate: Gate::new(config.parallelism),
                config,
                transport,
                rng,
                sleeper: Box::new(std::thread::sleep),
                dim: Mutex::new(None),
            }),
        })
    }

    /// Live backend over reqwest.
    pub fn connect(config: HttpConfig) -> Result<Self, ClientError> {
        Self::new(config, Arc::new(ReqwestTransport::new()?))
    }

    /// Replaces the sleep used between retries (tests record delays here).
    pub fn with_sleeper(self, sleeper: impl Fn(Duration) + Send + Sync + 'static) -> Self {
        let inner = Arc::try_unwrap(self.inner)
            .unwrap_or_else(|_| panic!("with_sleeper must be called before the backend is shared"));
        HttpBackend {
            inner: Arc::new(Inner { sleeper: Box::new(sleeper), ..inner }),
        }
    }

    pub fn config(&self) -> &HttpConfig {
        &self.inner.config
    }

    fn headers(&self) -> Vec<(String, String)> {
        let mut h = vec![("Content-Type".to_string(), "application/json".to_string())];
        if let Some(key) = &self.inner.config.api_key {
            h.push(("Authorization".to_string(), format!("Bearer {key}")));
        }
        h
    }

    fn url(&self, path: &str) -> String {
        format!("{}{}", self.inner.config.base_url.trim_end_matches('/'), path)
    }

    /// POSTs with retries and returns the parsed JSON body.
    pub fn post(&self, path: &str, body: &Value) -> Result<Value, ClientError> {
        let cfg = &self.inner.config;
        let url = self.url(path);
        let headers = self.headers();
        let timeout = Duration::from_secs(cfg.timeout_secs);
        let mut attempt = 0u32;
        loop {
            let result = self.inner.gate.run(|| {
                self.inner
                    .transport
                    .post_json(&url, &headers, body, timeout)
                    .and_then(|reply| {
                        if (200..300).contains(&reply.status) {
                            Ok(reply.body)
                        } else {
                            Err(ClientError::Status { status: reply.status, body: reply.body })
                        }
                    })
            });
            match result {
                Ok(text) => {
                    return serde_json::from_str(&text)
                        .map_err(|e| ClientError::Malformed(format!("{path}: {e}")))
                }
                Err(e) if e.is_retryable() && attempt < cfg.retry.max_retries => {
                    let delay = cfg.retry.delay(attempt, &mut *self.inner.rng.lock().unwrap());
                    (self.inner.sleeper)(delay);
                    attempt += 1;
                }
                Err(e) if e.is_retryable() => {
                    return Err(ClientError::RetriesExhausted {
                        attempts: attempt + 1,
                        last: Box::new(e),
                    })
                }
                Err(e) => return Err(e),
            }
        }
    }
}

fn malformed(what: &str) -> ClientError {
    ClientError::Malformed(what.to_string())
}

/// Extracts `choices[].message.content` in choice-index order.
pub fn parse_chat_response(body: &Value) -> Result<Vec<String>, ClientError> {
    let choices = body["choices"].as_array().ok_or_else(|| malformed("missing choices"))?;
    let mut out: Vec<(u64, String)> = choices
        .iter()
        .enumerate()
        .map(|(pos, c)| {
            let idx = c["index"].as_u64().unwrap_or(pos as u64);
            let text = c["message"]["content"]
                .as_str()
                .ok_or_else(|| malformed("choice without message content"))?;
            Ok((idx, text.to_string()))
        })
        .collect::<Result<_, ClientError>>()?;
    out.sort_by_key(|(i, _)| *i);
    Ok(out.into_iter().map(|(_, t)| t).collect())
}

/// Extracts `data[].embedding` in input-index order.
pub fn parse_embeddings_response(body: &Value) -> Result<Vec<Vec<f64>>, ClientError> {
    let data = body["data"].as_array().ok_or_else(|| malformed("missing data"))?;
    let mut out: Vec<(u64, Vec<f64>)> = data
        .iter()
        .enumerate()
        .map(|(pos, item)| {
            let idx = item["index"].as_u64().unwrap_or(pos as u64);
            let v = item["embedding"]
                .as_array()
                .ok_or_else(|| malformed("item without embedding"))?
                .iter()
                .map(|x| x.as_f64().ok_or_else(|| malformed("non-numeric embedding entry")))
                .collect::<Result<Vec<_>, _>>()?;
            Ok((idx, v))
        })
        .collect::<Result<_, ClientError>>()?;
    out.sort_by_key(|(i, _)| *i);
    Ok(out.into_iter().map(|(_, v)| v).collect())
}

/// Reads the echoed log-probabilities for tokens that start in
/// `[target_start, prompt_end)`, offsets in characters. A token's start is
/// its first non-whitespace character, since tokenizers attach the leading
/// space to the following word. Tokens with a null log-probability (the
/// first token of a prompt) are skipped.
pub fn parse_echo_logprobs(
    body: &Value,
    target_start: usize,
    prompt_end: usize,
) -> Result<Vec<f64>, ClientError> {
    let lp = &body["choices"][0]["logprobs"];
    let offsets = lp["text_offset"].as_array().ok_or_else(|| malformed("missing text_offset"))?;
    let values = lp["token_logprobs"]
        .as_array()
        .ok_or_else(|| malformed("missing token_logprobs"))?;
    if offsets.len() != values.len() {
        return Err(malformed("text_offset and token_logprobs differ in length"));
    }
    let tokens = lp["tokens"].as_array();
    let mut out = Vec::new();
    for (i, (off, v)) in offsets.iter().zip(values).enumerate() {
        let mut off = off.as_u64().ok_or_else(|| malformed("non-integer text_offset"))? as usize;
        if let Some(tok) = tokens.and_then(|t| t.get(i)).and_then(Value::as_str) {
            let lead = tok.chars().take_while(|c| c.is_whitespace()).count();
            if lead < tok.chars().count() {
                off += lead;
            }
        }
        if off < target_start || off >= prompt_end {
            continue;
        }
        if let Some(x) = v.as_f64() {
            out.push(x);
        }
    }
    Ok(out)
}

impl TokenScorer for HttpBackend {
    fn max_context_tokens(&self) -> usize {
        self.inner.config.max_context_tokens
    }

    fn score_tokens(&self, context: &str, target: &str) -> Result<TokenScores, ClientError> {
        let cfg = &self.inner.config;
        // Token counts are estimated locally; the server tokenizer is unknown.
        let target_tokens = count_tokens(target, TokenRule::CjkChar);
        let budget = cfg.max_context_tokens.saturating_sub(target_tokens);
        let ctx_words = raw_tokens(context, TokenRule::CjkChar);
        let truncated = ctx_words.len() > budget;
        let context: String = if truncated {
            let keep = &ctx_words[ctx_words.len() - budget..];
            match keep.first() {
                Some(first) => {
                    let start = first.as_ptr() as usize - context.as_ptr() as usize;
                    context[start..].to_string()
                }
                None => String::new(),
            }
        } else {
            context.to_string()
        };

        if let Some(path) = &cfg.score_endpoint {
            let body = json!({ "model": cfg.score_model, "context": context, "target": target });
            let resp = self.post(path, &body)?;
            let logprobs = resp["logprobs"]
                .as_array()
                .ok_or_else(|| malformed("missing logprobs"))?
                .iter()
                .map(|x| x.as_f64().ok_or_else(|| malformed("non-numeric logprob")))
                .collect::<Result<Vec<_>, _>>()?;
            return Ok(TokenScores { logprobs, truncated });
        }

        let sep = if context.is_empty()
            || context.ends_with(char::is_whitespace)
            || target.starts_with(char::is_whitespace)
        {
            ""
        } else {
            " "
        };
        let prompt = format!("{context}{sep}{target}");
        let target_start = context.chars().count() + sep.chars().count();
        let prompt_end = prompt.chars().count();
        let body = json!({
            "model": cfg.score_model,
            "prompt": prompt,
            "max_tokens": 1,
            "temperature": 0,
            "echo": true,
            "logprobs": 0,
        });
        let resp = self.post(COMPLETIONS_PATH, &body)?;
        let logprobs = parse_echo_logprobs(&resp, target_start, prompt_end)?;
        Ok(TokenScores { logprobs, truncated })
    }
}

impl Embedder for HttpBackend {
    /// Zero until the first embedding call has fixed the width.
    fn dimension(&self) -> usize {
        self.inner.dim.lock().unwrap().unwrap_or(0)
    }

    fn embed_texts(&self, texts: &[&str]) -> Result<Vec<Vec<f64>>, ClientError> {
        let body = json!({ "model": self.inner.config.embed_model, "input": texts });
        let resp = self.post(EMBEDDINGS_PATH, &body)?;
        let vectors = parse_embeddings_response(&resp)?;
        if let Some(first) = vectors.first() {
            let mut dim = self.inner.dim.lock().unwrap();
            match *dim {
                None => *dim = Some(first.len()),
                Some(d) if d != first.len() => {
                    return Err(ClientError::Malformed(format!(
                        "embedding width changed from {d} to {}",
                        first.len()
                    )))
                }
                _ => {}
            }
        }
        Ok(vectors)
    }
}

impl Generator for HttpBackend {
    fn generate(&self, prompt: &str, params: &SamplingParams) -> Result<Vec<String>, ClientError> {
        let mut body = json!({
            "model": self.inner.config.chat_model,
            "messages": [{ "role": "user", "content": prompt }],
            "temperature": params.temperature,
            "top_p": params.top_p,
            "n": params.n,
        });
        if let Some(seed) = params.seed {
            body["seed"] = json!(seed);
        }
        let resp = self.post(CHAT_PATH, &body)?;
        parse_chat_response(&resp)
    }
}

impl Backend for HttpBackend {
    fn kind(&self) -> &'static str {
        "http"
    }

    fn scorer_for(&self, _doc: &Document) -> Arc<dyn TokenScorer> {
        Arc::new(self.clone())
    }

    fn embedder(&self) -> Arc<dyn Embedder> {
        Arc::new(self.clone())
    }

    fn generator(&self) -> Arc<dyn Generator> {
        Arc::new(self.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config() -> HttpConfig {
        HttpConfig {
            base_url: "http://model.test".into(),
            api_key: Some("sk-test".into()),
            retry: RetryPolicy { max_retries: 2, base_delay_ms: 100, max_delay_ms: 1_000 },
            ..Default::default()
        }
    }

    #[test]
    fn rejects_backend_without_scoring_route() {
        let cfg = HttpConfig { echo_supported: false, ..config() };
        let err = HttpBackend::new(cfg, Arc::new(ReplayTransport::new())).err().unwrap();
        assert!(matches!(err, ClientError::Config(_)));
        let cfg = HttpConfig { base_url: "".into(), ..config() };
        assert!(HttpBackend::new(cfg, Arc::new(ReplayTransport::new())).is_err());
    }

    #[test]
    fn full_jitter_stays_under_ceiling() {
        let p = RetryPolicy { max_retries: 5, base_delay_ms: 100, max_delay_ms: 500 };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for attempt in 0..6 {
            let ceiling = (100u64 << attempt).min(500);
            for _ in 0..50 {
                assert!(p.delay(attempt, &mut rng) <= Duration::from_millis(ceiling));
            }
        }
    }

    #[test]
    fn client_errors_are_not_retried() {
        let t = Arc::new(ReplayTransport::new());
        t.push_reply(CHAT_PATH, 400, "{\"error\":\"bad\"}");
        let b = HttpBackend::new(config(), t.clone()).unwrap().with_sleeper(|_| {});
        let err = b.generate("hi", &SamplingParams::default()).unwrap_err();
        assert!(matches!(err, ClientError::Status { status: 400, .. }));
        assert_eq!(t.requests().len(), 1);
    }

    #[test]
    fn echo_region_selection() {
        let body = json!({"choices": [{"logprobs": {
            "text_offset": [0, 3, 6, 10],
            "token_logprobs": [null, -1.0, -2.0, -0.5],
        }}]});
        assert_eq!(parse_echo_logprobs(&body, 6, 10).unwrap(), vec![-2.0]);
        assert_eq!(parse_echo_logprobs(&body, 0, 10).unwrap(), vec![-1.0, -2.0]);
    }

    #[test]
    fn echo_leading_space_belongs_to_the_word() {
        // "The cat sat": target "sat" starts at 8, its token " sat" at 7
        let body = json!({"choices": [{"logprobs": {
            "tokens": ["The", " cat", " sat"],
            "text_offset": [0, 3, 7],
            "token_logprobs": [null, -1.0, -2.0],
        }}]});
        assert_eq!(parse_echo_logprobs(&body, 8, 11).unwrap(), vec![-2.0]);
    }
}
