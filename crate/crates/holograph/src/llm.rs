//! Oracle backed by an OpenAI-compatible chat-completions endpoint.

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::{Duration, Instant};

use holograph_core::error::{Error, Result};
use holograph_core::experiment::LlmSpec;
use holograph_core::query::{
    answer_from_reply, parse_reply, render_prompt, Budget, Oracle, OracleAnswer, QueryCandidate, REPROMPT,
    SYSTEM_PROMPT,
};
use serde::Serialize;
use serde_json::{json, Value};

use crate::CliResult;

pub const DEFAULT_RETRIES: u32 = 3;
pub const DEFAULT_BACKOFF: Duration = Duration::from_millis(500);

#[derive(Debug, Clone, Serialize)]
struct Message {
    role: &'static str,
    content: String,
}

#[derive(Serialize)]
struct AuditEntry<'a> {
    timestamp: String,
    model: &'a str,
    query: &'a QueryCandidate,
    attempt: u32,
    request: &'a Value,
    status: Option<u16>,
    response: Option<Value>,
    error: Option<String>,
    prompt_tokens: u64,
    completion_tokens: u64,
    total_tokens: u64,
    latency_ms: u128,
}

struct Reply {
    text: String,
    prompt_tokens: u64,
    completion_tokens: u64,
    total_tokens: u64,
    body: Value,
}

pub struct LlmOracle {
    url: String,
    model: String,
    api_key: Option<String>,
    temperature: f64,
    max_tokens: u64,
    names: Vec<String>,
    agent: ureq::Agent,
    audit: Option<BufWriter<File>>,
    retries: u32,
    backoff: Duration,
}

impl LlmOracle {
    /// `names[i]` is the variable name used in prompts for index `i`. The
    /// API key is read from `spec.api_key_env`; an unset variable sends no
    /// `Authorization` header.
    pub fn new(spec: &LlmSpec, model: &str, names: Vec<String>) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(spec.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        LlmOracle {
            url: format!("{}/chat/completions", spec.base_url.trim_end_matches('/')),
            model: model.to_string(),
            api_key: std::env::var(&spec.api_key_env).ok().filter(|k| !k.is_empty()),
            temperature: spec.temperature,
            max_tokens: spec.max_tokens,
            names,
            agent,
            audit: None,
            retries: DEFAULT_RETRIES,
            backoff: DEFAULT_BACKOFF,
        }
    }

    /// Appends one JSON line per request attempt to `path`.
    pub fn with_audit(mut self, path: &Path) -> CliResult<Self> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        self.audit = Some(BufWriter::new(OpenOptions::new().create(true).append(true).open(path)?));
        Ok(self)
    }

    pub fn with_retry(mut self, retries: u32, backoff: Duration) -> Self {
        self.retries = retries;
        self.backoff = backoff;
        self
    }

    pub fn model(&self) -> &str {
        &self.model
    }

    fn name(&self, i: usize) -> String {
        self.names.get(i).cloned().unwrap_or_else(|| format!("X{i}"))
    }

    fn attempt(&self, body: &Value) -> std::result::Result<(u16, Value), String> {
        let mut req = self.agent.post(&self.url).header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", format!("Bearer {key}"));
        }
        let mut resp = req.send_json(body).map_err(|e| e.to_string())?;
        let status = resp.status().as_u16();
        let text = resp.body_mut().read_to_string().map_err(|e| e.to_string())?;
        let value: Value = serde_json::from_str(&text).map_err(|e| format!("status {status}: bad body: {e}"))?;
        Ok((status, value))
    }

    fn complete(&mut self, query: &QueryCandidate, messages: &[Message]) -> Result<Reply> {
        let body = json!({
            "model": self.model,
            "messages": messages,
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
        });
        let mut last_error = String::new();
        for attempt in 0..=self.retries {
            if attempt > 0 {
                std::thread::sleep(self.backoff * 2u32.saturating_pow(attempt - 1));
            }
            let start = Instant::now();
            let outcome = self.attempt(&body);
            let latency_ms = start.elapsed().as_millis();
            let (status, parsed) = match outcome {
                Ok((status, value)) if (200..300).contains(&status) => match extract(&value) {
                    Some(reply) => (Some(status), Ok(reply)),
                    None => (Some(status), Err((Some(value), "response has no message content".to_string()))),
                },
                Ok((status, value)) => (Some(status), Err((Some(value), format!("HTTP status {status}")))),
                Err(e) => (None, Err((None, e))),
            };
            match parsed {
                Ok(reply) => {
                    log(&mut self.audit, &AuditEntry {
                        timestamp: chrono::Utc::now().to_rfc3339(),
                        model: &self.model,
                        query,
                        attempt,
                        request: &body,
                        status,
                        response: Some(reply.body.clone()),
                        error: None,
                        prompt_tokens: reply.prompt_tokens,
                        completion_tokens: reply.completion_tokens,
                        total_tokens: reply.total_tokens,
                        latency_ms,
                    });
                    return Ok(reply);
                }
                Err((response, error)) => {
                    log(&mut self.audit, &AuditEntry {
                        timestamp: chrono::Utc::now().to_rfc3339(),
                        model: &self.model,
                        query,
                        attempt,
                        request: &body,
                        status,
                        response,
                        error: Some(error.clone()),
                        prompt_tokens: 0,
                        completion_tokens: 0,
                        total_tokens: 0,
                        latency_ms,
                    });
                    last_error = error;
                }
            }
        }
        Err(Error::OracleUnavailable(format!("{} attempts failed, last: {last_error}", self.retries + 1)))
    }
}

fn log(audit: &mut Option<BufWriter<File>>, entry: &AuditEntry<'_>) {
    if let Some(f) = audit.as_mut() {
        let ok = serde_json::to_writer(&mut *f, entry).is_ok() && f.write_all(b"\n").is_ok();
        if !ok || f.flush().is_err() {
            eprintln!("warning: could not write LLM audit entry");
        }
    }
}

fn extract(body: &Value) -> Option<Reply> {
    let text = body.pointer("/choices/0/message/content")?.as_str()?.to_string();
    let usage = body.get("usage");
    let field = |k: &str| usage.and_then(|u| u.get(k)).and_then(Value::as_u64).unwrap_or(0);
    let (prompt_tokens, completion_tokens) = (field("prompt_tokens"), field("completion_tokens"));
    let total_tokens = usage
        .and_then(|u| u.get("total_tokens"))
        .and_then(Value::as_u64)
        .unwrap_or(prompt_tokens + completion_tokens);
    Some(Reply { text, prompt_tokens, completion_tokens, total_tokens, body: body.clone() })
}

impl Oracle for LlmOracle {
    /// One budgeted query; a reply without a verdict gets a single reprompt
    /// within the same reservation.
    fn ask(&mut self, query: &QueryCandidate, budget: &mut Budget) -> Result<OracleAnswer> {
        budget.reserve()?;
        let (a, b) = (self.name(query.i), self.name(query.j));
        let mut messages = vec![
            Message { role: "system", content: SYSTEM_PROMPT.to_string() },
            Message { role: "user", content: render_prompt(query.kind, &a, &b) },
        ];
        let first = self.complete(query, &messages)?;
        budget.record_tokens(first.total_tokens);
        let mut tokens = first.total_tokens;
        let mut raw = first.text;
        let mut parsed = parse_reply(&raw);
        if parsed.is_none() {
            messages.push(Message { role: "assistant", content: raw.clone() });
            messages.push(Message { role: "user", content: REPROMPT.to_string() });
            let second = self.complete(query, &messages)?;
            budget.record_tokens(second.total_tokens);
            tokens += second.total_tokens;
            raw = second.text;
            parsed = parse_reply(&raw);
        }
        Ok(answer_from_reply(parsed, tokens, &raw))
    }
}
