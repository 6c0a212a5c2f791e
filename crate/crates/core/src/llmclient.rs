//! Chat-completion client for the two dataset augmentation steps:
//! summarizing long documents and collecting LLM stance annotations.
//!
//! Requests go through a [`ChatTransport`]. [`HttpTransport`] speaks the
//! common `{model, messages}` JSON chat-completion shape over HTTP POST;
//! [`ScriptedTransport`] replays a fixed transcript for tests and offline
//! runs. Replies to concurrent requests are merged by request index.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Instance;
use crate::labels::{AnnotationSet, StanceLabel};

pub const SUMMARIZE_SYSTEM_PROMPT: &str = "You are a professional summarizer. Create a concise and comprehensive summary of the provided text, as if it were an article. Limit the summary to a maximum of 800 words.";

pub const ANNOTATE_SYSTEM_PROMPT: &str = "You are an expert annotator, chosen for a task of annotating texts on subjective topics. Please annotate the following texts with one of these labels, according to your perspective. Please consider also the related query and title. Labels: 'Pro', 'Neutral', 'Against', 'Not-about'.";

/// Documents with more whitespace tokens than this are summarized.
pub const DEFAULT_SUMMARY_THRESHOLD: usize = 800;
pub const DEFAULT_ANNOTATORS: usize = 3;
/// Annotator id used for summarization calls in the audit log.
pub const SUMMARIZER_ID: &str = "summarizer";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TransportError {
    #[error("http error: {0}")]
    Http(String),
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("mock transcript: {0}")]
    Scripted(String),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ParseError {
    #[error("no stance label found in reply")]
    NoLabel,
    #[error("reply names several labels: {0:?}")]
    Ambiguous(Vec<StanceLabel>),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LlmError {
    #[error("request failed after {attempts} attempt(s): {source}")]
    Transport {
        attempts: usize,
        #[source]
        source: TransportError,
    },
    #[error("empty reply")]
    EmptyReply,
    #[error("unparseable reply: {0}")]
    Parse(#[from] ParseError),
    #[error("invalid endpoint config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndpointConfig {
    pub base_url: String,
    pub model_name: String,
    /// Never serialized; read from `api_key_env` by [`EndpointConfig::with_env_key`].
    #[serde(skip)]
    pub api_key: Option<String>,
    pub api_key_env: String,
    pub timeout: Duration,
    pub max_retries: usize,
    pub max_parallel: usize,
    pub backoff_initial: Duration,
    pub backoff_max: Duration,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        Self {
            base_url: "http://localhost:8000/v1".into(),
            model_name: "default".into(),
            api_key: None,
            api_key_env: "OPENAI_API_KEY".into(),
            timeout: Duration::from_secs(120),
            max_retries: 3,
            max_parallel: 3,
            backoff_initial: Duration::from_millis(500),
            backoff_max: Duration::from_secs(8),
        }
    }
}

impl EndpointConfig {
    pub fn with_env_key(mut self) -> Self {
        self.api_key = std::env::var(&self.api_key_env).ok().filter(|k| !k.is_empty());
        self
    }

    pub fn validate(&self) -> Result<(), LlmError> {
        if self.max_parallel == 0 {
            return Err(LlmError::Config("max_parallel must be at least 1".into()));
        }
        if self.model_name.is_empty() {
            return Err(LlmError::Config("model name is empty".into()));
        }
        Ok(())
    }

    /// Delay before retry number `retry` (0-based): doubling from
    /// `backoff_initial`, capped at `backoff_max`.
    pub fn backoff(&self, retry: usize) -> Duration {
        let factor = 1u32.checked_shl(retry.min(31) as u32).unwrap_or(u32::MAX);
        self.backoff_initial.saturating_mul(factor).min(self.backoff_max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

/// Request body as sent on the wire.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
}

impl ChatRequest {
    pub fn new(model: &str, system: &str, user: String) -> Self {
        Self {
            model: model.to_string(),
            messages: vec![
                ChatMessage {
                    role: Role::System,
                    content: system.to_string(),
                },
                ChatMessage {
                    role: Role::User,
                    content: user,
                },
            ],
        }
    }

    pub fn system_prompt(&self) -> Option<&str> {
        self.messages
            .iter()
            .find(|m| m.role == Role::System)
            .map(|m| m.content.as_str())
    }
}

/// Identifies a call for routing (mock) and audit purposes. Not sent on the wire.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RequestTag {
    pub instance_id: String,
    /// Annotator id, or [`SUMMARIZER_ID`].
    pub annotator_id: String,
    /// 1-based.
    pub attempt: usize,
}

pub trait ChatTransport: Send + Sync {
    /// Sends one request and returns the assistant reply text.
    fn send(&self, tag: &RequestTag, request: &ChatRequest) -> Result<String, TransportError>;
}

/// Lets several clients share one transport, e.g. a panel over one mock.
impl<T: ChatTransport + ?Sized> ChatTransport for Arc<T> {
    fn send(&self, tag: &RequestTag, request: &ChatRequest) -> Result<String, TransportError> {
        (**self).send(tag, request)
    }
}

/// JSON-over-HTTP chat-completion transport.
pub struct HttpTransport {
    agent: ureq::Agent,
    url: String,
    api_key: Option<String>,
}

impl HttpTransport {
    /// POSTs to `{base_url}/chat/completions` unless `base_url` already ends
    /// with that path.
    pub fn new(config: &EndpointConfig) -> Self {
        let base = config.base_url.trim_end_matches('/');
        let url = if base.ends_with("/chat/completions") {
            base.to_string()
        } else {
            format!("{base}/chat/completions")
        };
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            agent,
            url,
            api_key: config.api_key.clone(),
        }
    }

    pub fn url(&self) -> &str {
        &self.url
    }
}

#[derive(Deserialize)]
struct CompletionResponse {
    choices: Vec<CompletionChoice>,
}

#[derive(Deserialize)]
struct CompletionChoice {
    message: CompletionMessage,
}

#[derive(Deserialize)]
struct CompletionMessage {
    #[serde(default)]
    content: Option<String>,
}

impl ChatTransport for HttpTransport {
    fn send(&self, _tag: &RequestTag, request: &ChatRequest) -> Result<String, TransportError> {
        let body = serde_json::to_vec(request).map_err(|e| TransportError::Malformed(e.to_string()))?;
        let mut req = self.agent.post(&self.url).header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req
            .send(&body[..])
            .map_err(|e| TransportError::Http(e.to_string()))?;
        let status = resp.status();
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| TransportError::Http(e.to_string()))?;
        if !status.is_success() {
            return Err(TransportError::Http(format!("status {status}: {text}")));
        }
        let parsed: CompletionResponse =
            serde_json::from_str(&text).map_err(|e| TransportError::Malformed(e.to_string()))?;
        parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| TransportError::Malformed("no choices in response".into()))
    }
}

/// One scripted reply: the text, or a simulated transport failure.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScriptedReply {
    Reply(String),
    Failure { error: String },
}

/// Transcript file for [`ScriptedTransport`]:
///
/// ```json
/// {"summaries": {"d1": ["SUMMARY"]},
///  "annotations": {"d1": {"lm_1": ["Pro"], "lm_2": [{"error": "timeout"}, "Against"]}}}
/// ```
///
/// Each (instance, annotator) queue is consumed in order, one entry per attempt.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transcript {
    #[serde(default)]
    pub summaries: BTreeMap<String, Vec<ScriptedReply>>,
    #[serde(default)]
    pub annotations: BTreeMap<String, BTreeMap<String, Vec<ScriptedReply>>>,
}

/// A request as captured by [`ScriptedTransport`], including the exact
/// serialized body bytes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CapturedRequest {
    pub tag: RequestTag,
    pub body: Vec<u8>,
}

/// Deterministic transport replaying a [`Transcript`]. Replies are keyed by
/// (instance id, annotator id), so results do not depend on request order.
#[derive(Debug, Default)]
pub struct ScriptedTransport {
    queues: Mutex<HashMap<(String, String), VecDeque<ScriptedReply>>>,
    captured: Mutex<Vec<CapturedRequest>>,
}

impl ScriptedTransport {
    pub fn new(transcript: Transcript) -> Self {
        let mut queues = HashMap::new();
        for (id, replies) in transcript.summaries {
            queues.insert((id, SUMMARIZER_ID.to_string()), replies.into());
        }
        for (id, by_annotator) in transcript.annotations {
            for (annotator, replies) in by_annotator {
                queues.insert((id.clone(), annotator), replies.into());
            }
        }
        Self {
            queues: Mutex::new(queues),
            captured: Mutex::new(Vec::new()),
        }
    }

    /// Convenience: queue replies for one (instance, annotator) pair.
    pub fn push(&self, instance_id: &str, annotator_id: &str, reply: ScriptedReply) {
        self.queues
            .lock()
            .expect("mock lock")
            .entry((instance_id.to_string(), annotator_id.to_string()))
            .or_default()
            .push_back(reply);
    }

    /// Every request seen so far, sorted by tag.
    pub fn captured(&self) -> Vec<CapturedRequest> {
        let mut v = self.captured.lock().expect("mock lock").clone();
        v.sort_by(|a, b| a.tag.cmp(&b.tag));
        v
    }
}

impl ChatTransport for ScriptedTransport {
    fn send(&self, tag: &RequestTag, request: &ChatRequest) -> Result<String, TransportError> {
        let body = serde_json::to_vec(request).map_err(|e| TransportError::Malformed(e.to_string()))?;
        self.captured.lock().expect("mock lock").push(CapturedRequest {
            tag: tag.clone(),
            body,
        });
        let next = self
            .queues
            .lock()
            .expect("mock lock")
            .get_mut(&(tag.instance_id.clone(), tag.annotator_id.clone()))
            .and_then(VecDeque::pop_front);
        match next {
            Some(ScriptedReply::Reply(text)) => Ok(text),
            Some(ScriptedReply::Failure { error }) => Err(TransportError::Scripted(error)),
            None => Err(TransportError::Scripted(format!(
                "no reply left for {}/{}",
                tag.instance_id, tag.annotator_id
            ))),
        }
    }
}

/// Attempt accounting for one logical call.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct CallRecord {
    pub attempts: usize,
    pub backoffs: Vec<Duration>,
}

/// Whitespace-token count.
pub fn token_count(text: &str) -> usize {
    text.split_whitespace().count()
}

/// Finds stance labels in free text. Matching is case-insensitive on whole
/// words; `not-about` also matches `not about` and `not_about`. Succeeds
/// only if exactly one distinct label occurs.
pub fn parse_label(reply: &str) -> Result<StanceLabel, ParseError> {
    let lower = reply.to_lowercase();
    let tokens: Vec<&str> = lower
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .collect();
    let mut found = BTreeSet::new();
    let mut i = 0;
    while i < tokens.len() {
        match tokens[i] {
            "pro" => {
                found.insert(StanceLabel::Pro);
            }
            "against" => {
                found.insert(StanceLabel::Against);
            }
            "neutral" => {
                found.insert(StanceLabel::Neutral);
            }
            "notabout" => {
                found.insert(StanceLabel::NotAbout);
            }
            "not" if tokens.get(i + 1) == Some(&"about") => {
                found.insert(StanceLabel::NotAbout);
                i += 1;
            }
            _ => {}
        }
        i += 1;
    }
    let mut it = found.iter();
    match (it.next(), it.next()) {
        (None, _) => Err(ParseError::NoLabel),
        (Some(&l), None) => Ok(l),
        _ => Err(ParseError::Ambiguous(found.into_iter().collect())),
    }
}

/// Inputs for one annotation request.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnnotationRequest {
    pub instance_id: String,
    pub query: String,
    pub title: String,
    /// Summary when present, otherwise the document content.
    pub body: String,
}

impl AnnotationRequest {
    pub fn from_instance(inst: &Instance) -> Self {
        Self {
            instance_id: inst.id.clone(),
            query: inst.query.clone(),
            title: inst.title.clone(),
            body: inst.summary.clone().unwrap_or_else(|| inst.content.clone()),
        }
    }

    pub fn user_content(&self) -> String {
        format!("Query: {}\nTitle: {}\nText: {}", self.query, self.title, self.body)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SummaryOutcome {
    /// The document is at or below the token threshold.
    Unchanged,
    Summary { text: String, call: CallRecord },
}

/// One annotator's reply to an annotation request.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnnotatorReply {
    pub annotator_id: String,
    pub raw_reply: Option<String>,
    pub label: Result<StanceLabel, LlmError>,
    pub call: CallRecord,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnnotationOutcome {
    pub instance_id: String,
    /// In annotator order.
    pub replies: Vec<AnnotatorReply>,
}

impl AnnotationOutcome {
    /// Present only if every reply parsed to a label.
    pub fn annotation_set(&self) -> Option<AnnotationSet> {
        self.replies
            .iter()
            .map(|r| r.label.clone().ok().map(|l| (r.annotator_id.clone(), l)))
            .collect::<Option<Vec<_>>>()
            .map(AnnotationSet::new)
    }

    pub fn is_flagged(&self) -> bool {
        self.replies.iter().any(|r| r.label.is_err())
    }

    pub fn transport_error(&self) -> Option<&LlmError> {
        self.replies.iter().find_map(|r| match &r.label {
            Err(e @ LlmError::Transport { .. }) => Some(e),
            _ => None,
        })
    }

    pub fn audit_records(&self) -> Vec<AuditRecord> {
        self.replies
            .iter()
            .map(|r| AuditRecord {
                instance_id: self.instance_id.clone(),
                annotator_id: r.annotator_id.clone(),
                raw_reply: r.raw_reply.clone(),
                parsed_label: r.label.as_ref().ok().map(|l| l.as_str().to_string()),
                error: r.label.as_ref().err().map(ToString::to_string),
                attempts: r.call.attempts,
            })
            .collect()
    }
}

/// One line of the audit JSONL.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub instance_id: String,
    pub annotator_id: String,
    pub raw_reply: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub parsed_label: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub attempts: usize,
}

/// An endpoint configuration bound to a transport. One client stands for
/// one model; a panel of clients stands for a panel of LLM annotators.
pub struct LlmClient {
    config: EndpointConfig,
    transport: Box<dyn ChatTransport>,
}

impl LlmClient {
    pub fn new(config: EndpointConfig, transport: Box<dyn ChatTransport>) -> Result<Self, LlmError> {
        config.validate()?;
        Ok(Self { config, transport })
    }

    pub fn http(config: EndpointConfig) -> Result<Self, LlmError> {
        let transport = Box::new(HttpTransport::new(&config));
        Self::new(config, transport)
    }

    pub fn config(&self) -> &EndpointConfig {
        &self.config
    }

    /// Sends with up to `max_retries` retries on transport failure.
    pub fn send_with_retry(
        &self,
        instance_id: &str,
        annotator_id: &str,
        request: &ChatRequest,
    ) -> Result<(String, CallRecord), LlmError> {
        let mut call = CallRecord::default();
        loop {
            call.attempts += 1;
            let tag = RequestTag {
                instance_id: instance_id.to_string(),
                annotator_id: annotator_id.to_string(),
                attempt: call.attempts,
            };
            match self.transport.send(&tag, request) {
                Ok(text) => return Ok((text, call)),
                Err(e) if call.attempts > self.config.max_retries => {
                    return Err(LlmError::Transport {
                        attempts: call.attempts,
                        source: e,
                    })
                }
                Err(e) => {
                    let delay = self.config.backoff(call.attempts - 1);
                    log::warn!("{instance_id}/{annotator_id} attempt {} failed: {e}; retrying in {delay:?}", call.attempts);
                    call.backoffs.push(delay);
                    if !delay.is_zero() {
                        std::thread::sleep(delay);
                    }
                }
            }
        }
    }

    /// Summarizes title and content when together they exceed `threshold_tokens`.
    pub fn summarize(&self, instance: &Instance, threshold_tokens: usize) -> Result<SummaryOutcome, LlmError> {
        let document = if instance.title.is_empty() {
            instance.content.clone()
        } else {
            format!("{}\n\n{}", instance.title, instance.content)
        };
        if token_count(&document) <= threshold_tokens {
            return Ok(SummaryOutcome::Unchanged);
        }
        let request = ChatRequest::new(&self.config.model_name, SUMMARIZE_SYSTEM_PROMPT, document);
        let (text, call) = self.send_with_retry(&instance.id, SUMMARIZER_ID, &request)?;
        if text.trim().is_empty() {
            return Err(LlmError::EmptyReply);
        }
        Ok(SummaryOutcome::Summary { text, call })
    }

    fn annotate_one(&self, request: &AnnotationRequest, annotator_id: &str) -> AnnotatorReply {
        let chat = ChatRequest::new(&self.config.model_name, ANNOTATE_SYSTEM_PROMPT, request.user_content());
        match self.send_with_retry(&request.instance_id, annotator_id, &chat) {
            Ok((text, call)) => AnnotatorReply {
                annotator_id: annotator_id.to_string(),
                label: parse_label(&text).map_err(LlmError::from),
                raw_reply: Some(text),
                call,
            },
            Err(e) => AnnotatorReply {
                annotator_id: annotator_id.to_string(),
                raw_reply: None,
                call: CallRecord {
                    attempts: match &e {
                        LlmError::Transport { attempts, .. } => *attempts,
                        _ => 0,
                    },
                    backoffs: Vec::new(),
                },
                label: Err(e),
            },
        }
    }

    /// Issues `n_annotators` independent requests to this endpoint, with
    /// annotator ids `lm_1`, `lm_2`, ...
    pub fn annotate(&self, request: &AnnotationRequest, n_annotators: usize) -> AnnotationOutcome {
        let panel: Vec<&LlmClient> = std::iter::repeat_n(self, n_annotators).collect();
        annotate_panel(request, &panel)
    }
}

/// Annotates with one client per annotator (`lm_1` is `panel[0]`, ...).
/// At most `max_parallel` of the first client's config run at once.
pub fn annotate_panel(request: &AnnotationRequest, panel: &[&LlmClient]) -> AnnotationOutcome {
    let max_parallel = panel.first().map_or(1, |c| c.config.max_parallel.max(1));
    let ids: Vec<String> = (1..=panel.len()).map(|i| format!("lm_{i}")).collect();
    let mut replies: Vec<Option<AnnotatorReply>> = vec![None; panel.len()];
    let indices: Vec<usize> = (0..panel.len()).collect();
    for chunk in indices.chunks(max_parallel) {
        std::thread::scope(|s| {
            let handles: Vec<_> = chunk
                .iter()
                .map(|&i| {
                    let client = panel[i];
                    let id = &ids[i];
                    (i, s.spawn(move || client.annotate_one(request, id)))
                })
                .collect();
            for (i, h) in handles {
                replies[i] = Some(h.join().expect("annotation worker panicked"));
            }
        });
    }
    AnnotationOutcome {
        instance_id: request.instance_id.clone(),
        replies: replies.into_iter().map(|r| r.expect("every slot filled")).collect(),
    }
}
