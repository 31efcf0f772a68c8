//! Chat-completion clients: an HTTP client for OpenAI-style endpoints and a
//! scripted mock for deterministic runs.

use std::collections::HashMap;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::concepts::ConceptId;
use crate::error::{Error, Result};
use crate::http::{JsonClient, RetryPolicy};
use crate::io::read_jsonl;

/// Environment variable holding the bearer token for the LLM endpoint.
pub const LLM_API_KEY_ENV: &str = "LLM_API_KEY";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptStage {
    Expand,
    Label,
    Verify,
}

/// A rendered prompt plus the pipeline coordinates it was rendered for.
/// HTTP clients only send `text`; the mock uses the coordinates for lookup.
#[derive(Debug, Clone, PartialEq)]
pub struct Prompt {
    pub text: String,
    pub stage: PromptStage,
    pub concept: Option<ConceptId>,
    pub chunk_id: Option<String>,
}

impl Prompt {
    pub fn sha256(&self) -> String {
        prompt_sha256(&self.text)
    }
}

pub fn prompt_sha256(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

pub trait LlmClient: Send + Sync {
    fn complete(&self, prompt: &Prompt) -> Result<String>;
}

impl<T: LlmClient + ?Sized> LlmClient for &T {
    fn complete(&self, prompt: &Prompt) -> Result<String> {
        (**self).complete(prompt)
    }
}

impl<T: LlmClient + ?Sized> LlmClient for Box<T> {
    fn complete(&self, prompt: &Prompt) -> Result<String> {
        (**self).complete(prompt)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LlmSpec {
    pub endpoint: Option<String>,
    pub model: Option<String>,
    pub temperature: f64,
    pub retry: RetryPolicy,
}

impl Default for LlmSpec {
    fn default() -> Self {
        Self {
            endpoint: None,
            model: None,
            temperature: 0.0,
            retry: RetryPolicy::default(),
        }
    }
}

/// Client for `{"model", "messages", "temperature"}` chat endpoints.
pub struct HttpLlm {
    endpoint: String,
    model: String,
    temperature: f64,
    client: JsonClient,
}

impl HttpLlm {
    pub fn new(spec: &LlmSpec, api_key: Option<String>) -> Result<Self> {
        let endpoint = spec
            .endpoint
            .clone()
            .ok_or_else(|| Error::Config("llm.endpoint is required".into()))?;
        let model = spec
            .model
            .clone()
            .ok_or_else(|| Error::Config("llm.model is required".into()))?;
        Ok(Self {
            endpoint,
            model,
            temperature: spec.temperature,
            client: JsonClient::new(spec.retry.clone(), api_key),
        })
    }

    pub fn from_env(spec: &LlmSpec) -> Result<Self> {
        Self::new(spec, std::env::var(LLM_API_KEY_ENV).ok())
    }
}

impl LlmClient for HttpLlm {
    fn complete(&self, prompt: &Prompt) -> Result<String> {
        let body = json!({
            "model": self.model,
            "messages": [{"role": "user", "content": prompt.text}],
            "temperature": self.temperature,
        });
        let resp = self.client.post(&self.endpoint, &body)?;
        resp.pointer("/choices/0/message/content")
            .and_then(|v| v.as_str())
            .map(str::to_owned)
            .ok_or_else(|| Error::remote(format!("{}: response has no choices[0].message.content", self.endpoint)))
    }
}

/// One line of a mock script. Exactly one of `response` / `responses` is
/// expected; a sequence is served in order and its last element repeats.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_sha256: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stage: Option<PromptStage>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub concept_id: Option<ConceptId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chunk_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub responses: Vec<String>,
}

impl ScriptEntry {
    pub fn for_pair(stage: PromptStage, concept: ConceptId, chunk_id: &str, response: impl Into<String>) -> Self {
        Self {
            prompt_sha256: None,
            stage: Some(stage),
            concept_id: Some(concept),
            chunk_id: Some(chunk_id.to_owned()),
            response: Some(response.into()),
            responses: Vec::new(),
        }
    }

    fn replies(&self) -> Vec<String> {
        let mut out: Vec<String> = self.response.iter().cloned().collect();
        out.extend(self.responses.iter().cloned());
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
enum ScriptKey {
    Hash(String),
    Coords(Option<PromptStage>, Option<ConceptId>, Option<String>),
}

/// Deterministic LLM stand-in driven by a script.
///
/// Lookup order for a prompt: exact prompt hash, then (stage, concept,
/// chunk), (stage, concept), (stage), and finally a catch-all entry with no
/// keys at all. Unmatched prompts are a remote failure.
#[derive(Debug, Default)]
pub struct MockLlm {
    entries: HashMap<ScriptKey, Vec<String>>,
    served: Mutex<HashMap<ScriptKey, usize>>,
    calls: AtomicUsize,
}

impl MockLlm {
    pub fn new(entries: impl IntoIterator<Item = ScriptEntry>) -> Result<Self> {
        let mut map = HashMap::new();
        for (idx, entry) in entries.into_iter().enumerate() {
            let replies = entry.replies();
            if replies.is_empty() {
                return Err(Error::validation(format!("mock script entry {} has no response", idx + 1)));
            }
            let key = match entry.prompt_sha256 {
                Some(h) => ScriptKey::Hash(h),
                None => ScriptKey::Coords(entry.stage, entry.concept_id, entry.chunk_id),
            };
            map.insert(key, replies);
        }
        Ok(Self {
            entries: map,
            ..Self::default()
        })
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::new(read_jsonl::<ScriptEntry>(path)?)
    }

    /// Number of prompts answered so far.
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    fn lookup(&self, prompt: &Prompt) -> Option<(&ScriptKey, &Vec<String>)> {
        let stage = Some(prompt.stage);
        let candidates = [
            ScriptKey::Hash(prompt.sha256()),
            ScriptKey::Coords(stage, prompt.concept, prompt.chunk_id.clone()),
            ScriptKey::Coords(stage, prompt.concept, None),
            ScriptKey::Coords(stage, None, None),
            ScriptKey::Coords(None, None, None),
        ];
        candidates.iter().find_map(|k| self.entries.get_key_value(k))
    }
}

impl LlmClient for MockLlm {
    fn complete(&self, prompt: &Prompt) -> Result<String> {
        let (key, replies) = self.lookup(prompt).ok_or_else(|| {
            Error::remote(format!(
                "mock llm has no scripted response for {:?} concept={:?} chunk={:?}",
                prompt.stage, prompt.concept, prompt.chunk_id
            ))
        })?;
        let mut served = self.served.lock().unwrap();
        let n = served.entry(key.clone()).or_insert(0);
        let reply = replies[(*n).min(replies.len() - 1)].clone();
        *n += 1;
        self.calls.fetch_add(1, Ordering::SeqCst);
        Ok(reply)
    }
}
