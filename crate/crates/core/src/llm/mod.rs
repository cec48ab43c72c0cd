//! Completion providers, cost metering and the record/replay store.
//!
//! Agents never talk to a provider directly. They call a [`Meter`], which
//! forwards to the session's [`Gateway`] and keeps a running total of what
//! the calls cost so the controller can charge the session.

pub mod normalize;
pub mod recording;

use std::collections::{BTreeMap, VecDeque};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};

pub use normalize::{normalize_prompt, normalize_prompt_with, normalize_text, prompt_digest, raw_prompt, NormalizationRules};
pub use recording::{Recording, RecordingEntry, RecordingHeader, RecordingWriter, ReplayMiss};

pub const PLATFORM_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn new(role: Role, content: impl Into<String>) -> Self {
        ChatMessage {
            role,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompletionRequest {
    pub messages: Vec<ChatMessage>,
    /// Empty means "the gateway's model".
    pub model: String,
    pub temperature: f64,
    pub max_tokens: Option<u32>,
    /// Versioned name of the calling agent, e.g. `codeact@1`. Part of the
    /// prompt identity so a prompt-format change misses the recording.
    pub agent: Option<String>,
}

impl CompletionRequest {
    pub fn new(messages: Vec<ChatMessage>) -> Self {
        CompletionRequest {
            messages,
            model: String::new(),
            temperature: 0.0,
            max_tokens: None,
            agent: None,
        }
    }

    pub fn with_agent(mut self, agent: impl Into<String>) -> Self {
        self.agent = Some(agent.into());
        self
    }

    fn validate(&self) -> Result<(), LlmError> {
        if self.messages.is_empty() {
            return Err(LlmError::InvalidRequest("no messages".into()));
        }
        if self.messages.iter().skip(1).any(|m| m.role == Role::System) {
            return Err(LlmError::InvalidRequest("a system message may only come first".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub input_tokens: u64,
    pub output_tokens: u64,
}

impl Usage {
    /// Roughly four characters per token, rounded up.
    pub fn estimate(prompt: &str, response: &str) -> Usage {
        let tokens = |s: &str| (s.chars().count() as u64).div_ceil(4);
        Usage {
            input_tokens: tokens(prompt),
            output_tokens: tokens(response),
        }
    }
}

/// What a provider returns before pricing.
#[derive(Debug, Clone, PartialEq)]
pub struct ProviderResponse {
    pub text: String,
    pub usage: Usage,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub text: String,
    pub usage: Usage,
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LlmError {
    #[error("no recorded response for prompt {digest}{}", nearest_hint(.nearest_digest, .nearest_distance))]
    ReplayMiss {
        digest: String,
        nearest_digest: Option<String>,
        nearest_distance: Option<usize>,
    },
    #[error("provider error: {0}")]
    Provider(String),
    #[error("scripted responses exhausted after {0} calls")]
    ScriptExhausted(usize),
    #[error("recording: {0}")]
    Recording(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("llm configuration: {0}")]
    Config(String),
}

fn nearest_hint(digest: &Option<String>, distance: &Option<usize>) -> String {
    match (digest, distance) {
        (Some(d), Some(n)) => format!(" (nearest recorded prompt {d}, edit distance {n})"),
        _ => " (recording is empty)".into(),
    }
}

impl From<ReplayMiss> for LlmError {
    fn from(m: ReplayMiss) -> Self {
        LlmError::ReplayMiss {
            digest: m.digest,
            nearest_digest: m.nearest_digest,
            nearest_distance: m.nearest_distance,
        }
    }
}

pub trait Provider: Send + Sync {
    fn complete(&self, request: &CompletionRequest) -> Result<ProviderResponse, LlmError>;
}

/// Returns a fixed sequence of responses, one per call.
#[derive(Debug, Default)]
pub struct ScriptedProvider {
    queue: Mutex<VecDeque<String>>,
    served: Mutex<usize>,
}

#[derive(Deserialize)]
struct ScriptFile {
    responses: Vec<String>,
}

impl ScriptedProvider {
    pub fn new<S: Into<String>>(responses: impl IntoIterator<Item = S>) -> Self {
        ScriptedProvider {
            queue: Mutex::new(responses.into_iter().map(Into::into).collect()),
            served: Mutex::new(0),
        }
    }

    /// Reads a TOML document with a `responses` string array.
    pub fn load(path: &Path) -> Result<Self, LlmError> {
        let text = std::fs::read_to_string(path).map_err(|e| LlmError::Config(format!("{}: {e}", path.display())))?;
        let file: ScriptFile =
            toml::from_str(&text).map_err(|e| LlmError::Config(format!("{}: {e}", path.display())))?;
        Ok(Self::new(file.responses))
    }

    pub fn remaining(&self) -> usize {
        self.queue.lock().unwrap_or_else(|p| p.into_inner()).len()
    }
}

impl Provider for ScriptedProvider {
    fn complete(&self, request: &CompletionRequest) -> Result<ProviderResponse, LlmError> {
        let mut served = self.served.lock().unwrap_or_else(|p| p.into_inner());
        let text = self
            .queue
            .lock()
            .unwrap_or_else(|p| p.into_inner())
            .pop_front()
            .ok_or(LlmError::ScriptExhausted(*served))?;
        *served += 1;
        Ok(ProviderResponse {
            usage: Usage::estimate(&raw_prompt(request), &text),
            text,
        })
    }
}

/// Answers from a recording and never changes it.
#[derive(Debug, Clone)]
pub struct ReplayProvider {
    recording: Arc<Recording>,
}

impl ReplayProvider {
    pub fn new(recording: Recording) -> Self {
        ReplayProvider {
            recording: Arc::new(recording),
        }
    }

    pub fn load(path: &Path) -> Result<Self, LlmError> {
        Ok(Self::new(Recording::load(path)?))
    }

    pub fn recording(&self) -> &Recording {
        &self.recording
    }
}

impl Provider for ReplayProvider {
    fn complete(&self, request: &CompletionRequest) -> Result<ProviderResponse, LlmError> {
        let entry = self.recording.lookup(request)?;
        Ok(ProviderResponse {
            text: entry.response.clone(),
            usage: entry.usage,
        })
    }
}

/// Speaks the common chat-completions JSON schema over HTTP.
#[derive(Debug, Clone)]
pub struct LiveProvider {
    endpoint: String,
    api_key: Option<String>,
    model: String,
    timeout: Duration,
}

impl LiveProvider {
    pub fn new(endpoint: impl Into<String>, api_key: Option<String>, model: impl Into<String>) -> Self {
        LiveProvider {
            endpoint: endpoint.into(),
            api_key,
            model: model.into(),
            timeout: Duration::from_secs(300),
        }
    }

    fn url(&self) -> String {
        let base = self.endpoint.trim_end_matches('/');
        if base.ends_with("/chat/completions") {
            base.to_string()
        } else {
            format!("{base}/chat/completions")
        }
    }
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
    #[serde(default)]
    usage: Option<ChatUsage>,
}

#[derive(Deserialize)]
struct ChatChoice {
    message: ChatChoiceMessage,
}

#[derive(Deserialize)]
struct ChatChoiceMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct ChatUsage {
    prompt_tokens: u64,
    completion_tokens: u64,
}

impl Provider for LiveProvider {
    fn complete(&self, request: &CompletionRequest) -> Result<ProviderResponse, LlmError> {
        let model = if request.model.is_empty() { &self.model } else { &request.model };
        let mut body = serde_json::json!({
            "model": model,
            "messages": request.messages,
            "temperature": request.temperature,
        });
        if let Some(max) = request.max_tokens {
            body["max_tokens"] = max.into();
        }
        let client = reqwest::blocking::Client::builder()
            .timeout(self.timeout)
            .build()
            .map_err(|e| LlmError::Provider(e.to_string()))?;
        let mut call = client.post(self.url()).json(&body);
        if let Some(key) = &self.api_key {
            call = call.bearer_auth(key);
        }
        let response = call.send().map_err(|e| LlmError::Provider(e.to_string()))?;
        let status = response.status();
        if !status.is_success() {
            let text = response.text().unwrap_or_default();
            return Err(LlmError::Provider(format!("HTTP {status}: {}", text.trim())));
        }
        let parsed: ChatResponse = response.json().map_err(|e| LlmError::Provider(e.to_string()))?;
        let text = parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| LlmError::Provider("response has no message content".into()))?;
        let usage = match parsed.usage {
            Some(u) => Usage {
                input_tokens: u.prompt_tokens,
                output_tokens: u.completion_tokens,
            },
            None => Usage::estimate(&raw_prompt(request), &text),
        };
        Ok(ProviderResponse { text, usage })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelPrice {
    pub input_per_1k: f64,
    pub output_per_1k: f64,
}

/// Per-model token prices. Models not listed are free.
///
/// ```toml
/// [models."gpt-4o"]
/// input_per_1k = 0.005
/// output_per_1k = 0.015
/// ```
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PriceTable {
    #[serde(default)]
    pub models: BTreeMap<String, ModelPrice>,
}

impl PriceTable {
    pub fn parse(text: &str) -> Result<Self, LlmError> {
        let table: PriceTable = toml::from_str(text).map_err(|e| LlmError::Config(e.to_string()))?;
        for (model, p) in &table.models {
            if !(p.input_per_1k.is_finite() && p.input_per_1k >= 0.0 && p.output_per_1k.is_finite() && p.output_per_1k >= 0.0) {
                return Err(LlmError::Config(format!("price for {model} must be finite and nonnegative")));
            }
        }
        Ok(table)
    }

    pub fn load(path: &Path) -> Result<Self, LlmError> {
        let text = std::fs::read_to_string(path).map_err(|e| LlmError::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn with_price(mut self, model: impl Into<String>, input_per_1k: f64, output_per_1k: f64) -> Self {
        self.models.insert(model.into(), ModelPrice { input_per_1k, output_per_1k });
        self
    }

    pub fn cost(&self, model: &str, usage: Usage) -> f64 {
        let p = self.models.get(model).copied().unwrap_or_default();
        usage.input_tokens as f64 / 1000.0 * p.input_per_1k + usage.output_tokens as f64 / 1000.0 * p.output_per_1k
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LlmMode {
    Live,
    Record,
    Replay,
    Scripted,
}

impl LlmMode {
    pub fn as_str(self) -> &'static str {
        match self {
            LlmMode::Live => "live",
            LlmMode::Record => "record",
            LlmMode::Replay => "replay",
            LlmMode::Scripted => "scripted",
        }
    }
}

impl FromStr for LlmMode {
    type Err = LlmError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "live" => Ok(LlmMode::Live),
            "record" => Ok(LlmMode::Record),
            "replay" => Ok(LlmMode::Replay),
            "scripted" => Ok(LlmMode::Scripted),
            other => Err(LlmError::Config(format!(
                "unknown llm mode {other:?}; expected live, record, replay or scripted"
            ))),
        }
    }
}

/// Everything needed to construct a gateway.
#[derive(Debug, Clone)]
pub struct LlmSettings {
    pub mode: LlmMode,
    pub model: String,
    /// Recording to read in replay mode or write in record mode.
    pub recording: Option<PathBuf>,
    /// TOML response script for scripted mode.
    pub script: Option<PathBuf>,
    pub endpoint: Option<String>,
    pub api_key: Option<String>,
    pub prices: PriceTable,
}

impl LlmSettings {
    pub fn new(mode: LlmMode) -> Self {
        LlmSettings {
            mode,
            model: "gpt-4o".into(),
            recording: None,
            script: None,
            endpoint: None,
            api_key: None,
            prices: PriceTable::default(),
        }
    }
}

/// A provider plus pricing and optional recording.
#[derive(Clone)]
pub struct Gateway {
    provider: Arc<dyn Provider>,
    prices: PriceTable,
    model: String,
    recorder: Option<Arc<RecordingWriter>>,
}

impl std::fmt::Debug for Gateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Gateway")
            .field("model", &self.model)
            .field("recording", &self.recorder.is_some())
            .finish()
    }
}

impl Gateway {
    pub fn new(provider: Arc<dyn Provider>, model: impl Into<String>) -> Self {
        Gateway {
            provider,
            prices: PriceTable::default(),
            model: model.into(),
            recorder: None,
        }
    }

    pub fn scripted<S: Into<String>>(responses: impl IntoIterator<Item = S>) -> Self {
        Gateway::new(Arc::new(ScriptedProvider::new(responses)), "scripted")
    }

    pub fn with_prices(mut self, prices: PriceTable) -> Self {
        self.prices = prices;
        self
    }

    /// Appends every completed call to `writer`.
    pub fn recording_to(mut self, writer: Arc<RecordingWriter>) -> Self {
        self.recorder = Some(writer);
        self
    }

    pub fn from_settings(settings: &LlmSettings) -> Result<Self, LlmError> {
        let need = |p: &Option<PathBuf>, what: &str| {
            p.clone()
                .ok_or_else(|| LlmError::Config(format!("{} mode needs a {what} path", settings.mode.as_str())))
        };
        let live = || match &settings.endpoint {
            Some(ep) => Ok(LiveProvider::new(ep.clone(), settings.api_key.clone(), settings.model.clone())),
            None => Err(LlmError::Config(format!(
                "{} mode needs an endpoint (AK_LLM_ENDPOINT)",
                settings.mode.as_str()
            ))),
        };
        let gateway = match settings.mode {
            LlmMode::Scripted => {
                Gateway::new(Arc::new(ScriptedProvider::load(&need(&settings.script, "script")?)?), &settings.model)
            }
            LlmMode::Replay => {
                Gateway::new(Arc::new(ReplayProvider::load(&need(&settings.recording, "recording")?)?), &settings.model)
            }
            LlmMode::Live => Gateway::new(Arc::new(live()?), &settings.model),
            LlmMode::Record => {
                let path = need(&settings.recording, "recording")?;
                let writer = RecordingWriter::create(
                    &path,
                    RecordingHeader {
                        model: settings.model.clone(),
                        platform_version: PLATFORM_VERSION.into(),
                    },
                )?;
                Gateway::new(Arc::new(live()?), &settings.model).recording_to(Arc::new(writer))
            }
        };
        Ok(gateway.with_prices(settings.prices.clone()))
    }

    pub fn model(&self) -> &str {
        &self.model
    }

    pub fn complete(&self, request: &CompletionRequest) -> Result<Completion, LlmError> {
        request.validate()?;
        let response = self.provider.complete(request)?;
        let model = if request.model.is_empty() { &self.model } else { &request.model };
        let cost = self.prices.cost(model, response.usage);
        if let Some(writer) = &self.recorder {
            let normalized = normalize_prompt(request);
            writer.append(RecordingEntry {
                prompt_digest: prompt_digest(&normalized),
                normalized_prompt: normalized,
                raw_prompt: raw_prompt(request),
                response: response.text.clone(),
                usage: response.usage,
                unit_cost: cost,
            })?;
        }
        Ok(Completion {
            text: response.text,
            usage: response.usage,
            cost,
        })
    }
}

/// Counts the cost of calls made through it.
#[derive(Debug)]
pub struct Meter<'a> {
    gateway: &'a Gateway,
    spent: Mutex<(f64, u32)>,
}

impl<'a> Meter<'a> {
    pub fn new(gateway: &'a Gateway) -> Self {
        Meter {
            gateway,
            spent: Mutex::new((0.0, 0)),
        }
    }

    pub fn complete(&self, request: &CompletionRequest) -> Result<Completion, LlmError> {
        let completion = self.gateway.complete(request)?;
        let mut spent = self.spent.lock().unwrap_or_else(|p| p.into_inner());
        spent.0 += completion.cost;
        spent.1 += 1;
        Ok(completion)
    }

    pub fn cost(&self) -> f64 {
        self.spent.lock().unwrap_or_else(|p| p.into_inner()).0
    }

    pub fn calls(&self) -> u32 {
        self.spent.lock().unwrap_or_else(|p| p.into_inner()).1
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req(text: &str) -> CompletionRequest {
        CompletionRequest::new(vec![
            ChatMessage::new(Role::System, "sys"),
            ChatMessage::new(Role::User, text),
        ])
    }

    #[test]
    fn scripted_in_order_then_exhausted() {
        let g = Gateway::scripted(["a", "b"]);
        assert_eq!(g.complete(&req("x")).unwrap().text, "a");
        assert_eq!(g.complete(&req("x")).unwrap().text, "b");
        assert_eq!(g.complete(&req("x")), Err(LlmError::ScriptExhausted(2)));
    }

    #[test]
    fn scripted_finish_costs_nothing_at_zero_price() {
        let g = Gateway::scripted(["<finish></finish>"]);
        let c = g.complete(&req("x")).unwrap();
        assert_eq!(c.text, "<finish></finish>");
        assert_eq!(c.cost, 0.0);
    }

    #[test]
    fn usage_estimate_rounds_up() {
        assert_eq!(Usage::estimate("abcde", ""), Usage { input_tokens: 2, output_tokens: 0 });
    }

    #[test]
    fn price_table_cost() {
        let prices = PriceTable::parse("[models.m]\ninput_per_1k = 0.5\noutput_per_1k = 2.0\n").unwrap();
        let u = Usage { input_tokens: 2000, output_tokens: 500 };
        assert!((prices.cost("m", u) - 2.0).abs() < 1e-12);
        assert_eq!(prices.cost("other", u), 0.0);
        assert!(PriceTable::parse("[models.m]\ninput_per_1k = -1\noutput_per_1k = 0\n").is_err());
    }

    #[test]
    fn invalid_requests() {
        let g = Gateway::scripted(["a"]);
        assert!(matches!(g.complete(&CompletionRequest::new(vec![])), Err(LlmError::InvalidRequest(_))));
        let late_system = CompletionRequest::new(vec![
            ChatMessage::new(Role::User, "u"),
            ChatMessage::new(Role::System, "s"),
        ]);
        assert!(matches!(g.complete(&late_system), Err(LlmError::InvalidRequest(_))));
    }

    #[test]
    fn record_then_replay() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rec.jsonl");
        let header = RecordingHeader { model: "m".into(), platform_version: PLATFORM_VERSION.into() };
        let writer = Arc::new(RecordingWriter::create(&path, header).unwrap());
        let prices = PriceTable::default().with_price("m", 1.0, 1.0);
        let rec = Gateway::new(Arc::new(ScriptedProvider::new(["one", "two"])), "m")
            .with_prices(prices.clone())
            .recording_to(writer);
        let first = rec.complete(&req("q1 at /tmp/abc")).unwrap();
        rec.complete(&req("q2")).unwrap();

        let replay = Gateway::new(Arc::new(ReplayProvider::load(&path).unwrap()), "m").with_prices(prices);
        assert_eq!(replay.complete(&req("q1 at /tmp/abc")).unwrap(), first);
        assert_eq!(replay.complete(&req("q1   at /tmp/zzz")).unwrap().text, "one");
        assert_eq!(replay.complete(&req("q2")).unwrap().text, "two");
        match replay.complete(&req("q3")) {
            Err(LlmError::ReplayMiss { nearest_distance: Some(1), nearest_digest: Some(_), .. }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn recording_rejects_tampered_digest() {
        let text = "{\"kind\":\"recording_header\",\"model\":\"m\",\"platform_version\":\"0\"}\n\
            {\"kind\":\"entry\",\"prompt_digest\":\"00\",\"normalized_prompt\":\"x\\n\",\"raw_prompt\":\"x\\n\",\"response\":\"r\",\"usage\":{\"input_tokens\":1,\"output_tokens\":1},\"unit_cost\":0.0}\n";
        assert!(matches!(Recording::parse(text, "t"), Err(LlmError::Recording(_))));
    }

    #[test]
    fn meter_accumulates() {
        let g = Gateway::new(Arc::new(ScriptedProvider::new(["aaaa", "bbbb"])), "m")
            .with_prices(PriceTable::default().with_price("m", 0.0, 1000.0));
        let m = Meter::new(&g);
        m.complete(&req("x")).unwrap();
        m.complete(&req("x")).unwrap();
        assert_eq!(m.calls(), 2);
        assert!((m.cost() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn modes_parse() {
        for m in [LlmMode::Live, LlmMode::Record, LlmMode::Replay, LlmMode::Scripted] {
            assert_eq!(m.as_str().parse::<LlmMode>().unwrap(), m);
        }
        assert!("cloud".parse::<LlmMode>().is_err());
    }
}
