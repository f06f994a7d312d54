//! Chat-completion client for LLM-backed planning and scoring.
//!
//! Requests are `POST {"model", "messages", "temperature"}` with a bearer
//! token read from the environment variable named in the config. Transient
//! failures (timeouts, transport errors, 429 and 5xx) are retried with
//! exponential backoff; at most `max_in_flight` requests run at once.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use hecg_core::correction::ReplanRequest;
use hecg_core::env::parse_script;
use hecg_core::planner::{
    PlanOutput, Planner, PlannerError, ScoreQuery, ScorerError, SemanticScorer, StubPlanner, StubScorer,
};
use hecg_core::ActionScript;
use log::{debug, warn};
use regex::Regex;
use serde::{Deserialize, Serialize};

pub const DEFAULT_PLAN_TEMPLATE: &str = include_str!("../templates/plan.txt");
pub const DEFAULT_SCORE_TEMPLATE: &str = include_str!("../templates/score.txt");

#[derive(Debug, thiserror::Error)]
pub enum LlmError {
    #[error("request timed out")]
    Timeout,
    #[error("malformed reply: {reason}")]
    MalformedReply { reason: String, reply: String },
    #[error("authentication failed: {0}")]
    AuthFailure(String),
    #[error("server answered with status {0}")]
    Status(u16),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("cannot read template {path}: {source}")]
    Template { path: PathBuf, source: std::io::Error },
}

impl LlmError {
    fn is_transient(&self) -> bool {
        match self {
            LlmError::Timeout | LlmError::Transport(_) => true,
            LlmError::Status(s) => *s == 429 || *s >= 500,
            _ => false,
        }
    }

    fn malformed(reason: impl Into<String>, reply: &str) -> Self {
        let reason = reason.into();
        warn!("malformed reply ({reason}): {reply}");
        LlmError::MalformedReply { reason, reply: reply.to_string() }
    }
}

fn default_token_env() -> String {
    "HECG_API_KEY".into()
}
fn default_timeout() -> u64 {
    30
}
fn default_in_flight() -> usize {
    4
}
fn default_retries() -> u32 {
    3
}
fn default_backoff() -> u64 {
    500
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HttpConfig {
    /// Full URL of the chat-completion endpoint.
    pub endpoint: String,
    pub model: String,
    /// Environment variable holding the bearer token.
    #[serde(default = "default_token_env")]
    pub token_env: String,
    #[serde(default)]
    pub temperature: f64,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
    #[serde(default = "default_retries")]
    pub retries: u32,
    /// Delay before the first retry; doubled for each further one.
    #[serde(default = "default_backoff")]
    pub backoff_ms: u64,
    #[serde(default)]
    pub plan_template: Option<PathBuf>,
    #[serde(default)]
    pub score_template: Option<PathBuf>,
}

impl HttpConfig {
    pub fn new(endpoint: &str, model: &str) -> Self {
        serde_json::from_value(serde_json::json!({ "endpoint": endpoint, "model": model }))
            .expect("minimal http config parses")
    }
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: Vec<Message<'a>>,
    temperature: f64,
}

#[derive(Serialize)]
struct Message<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ReplyMessage,
}

#[derive(Deserialize)]
struct ReplyMessage {
    content: String,
}

/// Counting semaphore bounding in-flight requests.
struct Gate {
    free: Mutex<usize>,
    cv: Condvar,
}

struct Permit<'a>(&'a Gate);

impl Gate {
    fn new(n: usize) -> Self {
        Gate { free: Mutex::new(n.max(1)), cv: Condvar::new() }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().unwrap_or_else(|e| e.into_inner());
        while *free == 0 {
            free = self.cv.wait(free).unwrap_or_else(|e| e.into_inner());
        }
        *free -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.0.cv.notify_one();
    }
}

pub struct ChatClient {
    http: reqwest::blocking::Client,
    cfg: HttpConfig,
    gate: Gate,
}

impl ChatClient {
    pub fn new(cfg: HttpConfig) -> Result<Self, LlmError> {
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(cfg.timeout_secs))
            .build()
            .map_err(|e| LlmError::Transport(e.to_string()))?;
        let gate = Gate::new(cfg.max_in_flight);
        Ok(ChatClient { http, cfg, gate })
    }

    pub fn config(&self) -> &HttpConfig {
        &self.cfg
    }

    /// Sends one user message and returns the reply text.
    pub fn complete(&self, prompt: &str) -> Result<String, LlmError> {
        let token = std::env::var(&self.cfg.token_env)
            .map_err(|_| LlmError::AuthFailure(format!("environment variable {} is not set", self.cfg.token_env)))?;
        let body = ChatRequest {
            model: &self.cfg.model,
            messages: vec![Message { role: "user", content: prompt }],
            temperature: self.cfg.temperature,
        };
        let mut attempt = 0;
        loop {
            let res = {
                let _permit = self.gate.acquire();
                self.send(&token, &body)
            };
            match res {
                Err(e) if e.is_transient() && attempt < self.cfg.retries => {
                    let wait = self.cfg.backoff_ms.saturating_mul(1 << attempt.min(16));
                    debug!("attempt {} failed ({e}); retrying in {wait} ms", attempt + 1);
                    std::thread::sleep(Duration::from_millis(wait));
                    attempt += 1;
                }
                r => return r,
            }
        }
    }

    fn send(&self, token: &str, body: &ChatRequest<'_>) -> Result<String, LlmError> {
        let transport =
            |e: reqwest::Error| if e.is_timeout() { LlmError::Timeout } else { LlmError::Transport(e.to_string()) };
        let resp = self.http.post(&self.cfg.endpoint).bearer_auth(token).json(body).send().map_err(transport)?;
        let status = resp.status().as_u16();
        if status == 401 || status == 403 {
            return Err(LlmError::AuthFailure(format!("status {status}")));
        }
        if !resp.status().is_success() {
            return Err(LlmError::Status(status));
        }
        let text = resp.text().map_err(transport)?;
        let parsed: ChatResponse = serde_json::from_str(&text)
            .map_err(|e| LlmError::malformed(format!("not a chat completion: {e}"), &text))?;
        parsed
            .choices
            .into_iter()
            .next()
            .map(|c| c.message.content)
            .ok_or_else(|| LlmError::malformed("no choices", &text))
    }
}

/// Substitutes `{name}` placeholders; unknown placeholders are left as is.
pub fn render(template: &str, vars: &BTreeMap<&str, String>) -> String {
    let re = Regex::new(r"\{(\w+)\}").expect("valid regex");
    re.replace_all(template, |c: &regex::Captures<'_>| vars.get(&c[1]).cloned().unwrap_or_else(|| c[0].to_string()))
        .into_owned()
}

pub fn load_template(path: Option<&Path>, default: &str) -> Result<String, LlmError> {
    match path {
        None => Ok(default.to_string()),
        Some(p) => std::fs::read_to_string(p).map_err(|source| LlmError::Template { path: p.into(), source }),
    }
}

/// Plan lines of a reply: every line that starts with `[` after an optional
/// list marker (`1.`, `2)`, `-`, `*`), parsed as an action script.
pub fn parse_plan(reply: &str) -> Result<Vec<ActionScript>, LlmError> {
    let marker = Regex::new(r"^\s*(?:\d+[.)]|[-*])?\s*").expect("valid regex");
    let mut plan = Vec::new();
    for line in reply.lines() {
        let body = marker.replace(line, "");
        let body = body.trim_end();
        if !body.starts_with('[') {
            continue;
        }
        let a = parse_script(body).map_err(|e| LlmError::malformed(format!("line {body:?}: {e}"), reply))?;
        plan.push(a);
    }
    if plan.is_empty() {
        return Err(LlmError::malformed("no plan lines", reply));
    }
    Ok(plan)
}

/// The first number in the reply that lies in `[0, 1]`.
pub fn extract_score(reply: &str) -> Result<f64, LlmError> {
    let num = Regex::new(r"-?(?:\d+(?:\.\d+)?|\.\d+)").expect("valid regex");
    let found = num.find_iter(reply).filter_map(|m| m.as_str().parse::<f64>().ok()).find(|x| (0.0..=1.0).contains(x));
    found.ok_or_else(|| LlmError::malformed("no number in [0, 1]", reply))
}

fn lines<T: ToString>(items: impl IntoIterator<Item = T>) -> String {
    let v: Vec<String> = items.into_iter().map(|x| format!("- {}", x.to_string())).collect();
    if v.is_empty() {
        "- none".into()
    } else {
        v.join("\n")
    }
}

pub struct HttpPlanner {
    client: Arc<ChatClient>,
    template: String,
}

impl HttpPlanner {
    pub fn new(client: Arc<ChatClient>) -> Result<Self, LlmError> {
        let template = load_template(client.config().plan_template.as_deref(), DEFAULT_PLAN_TEMPLATE)?;
        Ok(HttpPlanner { client, template })
    }

    pub fn prompt(&self, request: &ReplanRequest) -> String {
        let vars = BTreeMap::from([
            ("goals", lines(&request.goals)),
            ("state", lines(request.world.all_predicates())),
            ("banned", lines(&request.banned)),
        ]);
        render(&self.template, &vars)
    }
}

impl Planner for HttpPlanner {
    fn generate(&self, request: &ReplanRequest) -> Result<PlanOutput, PlannerError> {
        let reply = self.client.complete(&self.prompt(request)).map_err(|e| match e {
            LlmError::MalformedReply { .. } => PlannerError::Rejected(e.to_string()),
            _ => PlannerError::Unavailable(e.to_string()),
        })?;
        let plan = parse_plan(&reply).map_err(|e| PlannerError::Rejected(e.to_string()))?;
        Ok(PlanOutput { plan, options: BTreeMap::new() })
    }
}

pub struct HttpScorer {
    client: Arc<ChatClient>,
    template: String,
}

impl HttpScorer {
    pub fn new(client: Arc<ChatClient>) -> Result<Self, LlmError> {
        let template = load_template(client.config().score_template.as_deref(), DEFAULT_SCORE_TEMPLATE)?;
        Ok(HttpScorer { client, template })
    }

    pub fn prompt(&self, q: &ScoreQuery<'_>) -> String {
        let action = q.target.action.as_ref().map(|a| a.to_string()).unwrap_or_else(|| "the end of the plan".into());
        let error = q.belief.last_error.as_ref().map(|c| c.kind.name().to_string()).unwrap_or_else(|| "none".into());
        let vars = BTreeMap::from([
            ("goals", lines(&q.belief.goals)),
            ("state", lines(&q.observation)),
            ("banned", "- none".to_string()),
            ("error", error),
            ("edge", q.edge.kind.as_str().to_string()),
            ("action", action),
        ]);
        render(&self.template, &vars)
    }
}

impl SemanticScorer for HttpScorer {
    fn score(&self, q: &ScoreQuery<'_>) -> Result<f64, ScorerError> {
        let reply = self.client.complete(&self.prompt(q)).map_err(|e| ScorerError::Unavailable(e.to_string()))?;
        extract_score(&reply).map_err(|e| ScorerError::Unavailable(e.to_string()))
    }
}

/// Answers with the stub whenever the wrapped backend fails.
pub struct Fallback<T>(pub T);

impl<T: Planner> Planner for Fallback<T> {
    fn generate(&self, request: &ReplanRequest) -> Result<PlanOutput, PlannerError> {
        self.0.generate(request).or_else(|e| {
            warn!("planner failed ({e}); using the stub planner");
            StubPlanner.generate(request)
        })
    }
}

impl<T: SemanticScorer> SemanticScorer for Fallback<T> {
    fn score(&self, q: &ScoreQuery<'_>) -> Result<f64, ScorerError> {
        self.0.score(q).or_else(|e| {
            warn!("scorer failed ({e}); using the stub scorer");
            StubScorer.score(q)
        })
    }
}
