//! Concept scorers: per-chunk classification over all 13 concepts.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tracing::warn;

use crate::concepts::{ConceptId, PerConcept, Registry};
use crate::corpus::Chunk;
use crate::error::{Error, Result};
use crate::http::{JsonClient, RetryPolicy};
use crate::io::{read_jsonl, write_jsonl};
use crate::parallel::bounded_map;
use crate::retrieval::{ranking_order, RankedEntry, RankedList};

pub const DEFAULT_THRESHOLD: f64 = 0.5;
pub const NEGATION_CUES: [&str; 3] = ["no evidence of", "denies", "negative for"];
/// Characters before a match searched for a negation cue.
pub const NEGATION_WINDOW_CHARS: usize = 40;

/// Per-concept output of one scorer call. When `scores` is present every
/// label equals `score >= threshold`.
#[derive(Debug, Clone, PartialEq)]
pub struct Classification {
    pub labels: PerConcept<bool>,
    pub scores: Option<PerConcept<f64>>,
}

impl Classification {
    pub fn from_labels(labels: PerConcept<bool>) -> Self {
        Self { labels, scores: None }
    }

    pub fn from_scores(scores: PerConcept<f64>, threshold: f64) -> Self {
        Self {
            labels: scores.map(|_, &s| s >= threshold),
            scores: Some(scores),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScorerInfo {
    pub name: String,
    pub version: String,
    /// Present for scorers that emit scores.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
}

/// A deployed concept classifier. Implementations are deterministic for a
/// fixed instance and total over the concept enumeration.
pub trait ConceptScorer: Send + Sync {
    fn info(&self) -> ScorerInfo;
    fn classify(&self, chunk_text: &str) -> Result<Classification>;
}

impl<T: ConceptScorer + ?Sized> ConceptScorer for &T {
    fn info(&self) -> ScorerInfo {
        (**self).info()
    }
    fn classify(&self, chunk_text: &str) -> Result<Classification> {
        (**self).classify(chunk_text)
    }
}

impl<T: ConceptScorer + ?Sized> ConceptScorer for Box<T> {
    fn info(&self) -> ScorerInfo {
        (**self).info()
    }
    fn classify(&self, chunk_text: &str) -> Result<Classification> {
        (**self).classify(chunk_text)
    }
}

fn negated(text: &str, match_start: usize) -> bool {
    let before = &text[..match_start];
    let window_start = before
        .char_indices()
        .rev()
        .nth(NEGATION_WINDOW_CHARS - 1)
        .map_or(0, |(i, _)| i);
    let window = before[window_start..].to_lowercase();
    NEGATION_CUES.iter().any(|cue| window.contains(cue))
}

/// True for a concept iff some pattern match is not preceded by a negation
/// cue within the window.
pub fn lexical_score(chunk_text: &str, registry: &Registry) -> PerConcept<bool> {
    PerConcept::from_fn(|id| {
        registry
            .get(id)
            .compiled_patterns()
            .iter()
            .any(|re| re.find_iter(chunk_text).any(|m| !negated(chunk_text, m.start())))
    })
}

pub struct LexicalScorer {
    registry: Registry,
}

impl LexicalScorer {
    pub fn new(registry: Registry) -> Self {
        Self { registry }
    }
}

impl ConceptScorer for LexicalScorer {
    fn info(&self) -> ScorerInfo {
        ScorerInfo {
            name: "lexical".into(),
            version: "v1".into(),
            threshold: None,
        }
    }

    fn classify(&self, chunk_text: &str) -> Result<Classification> {
        Ok(Classification::from_labels(lexical_score(chunk_text, &self.registry)))
    }
}

/// Adapter for a served classifier: POST `{"text"}`, reply
/// `{"labels": {...}, "scores": {...}?}`.
pub struct ExternalScorer {
    endpoint: String,
    threshold: f64,
    client: JsonClient,
}

impl ExternalScorer {
    pub fn new(endpoint: impl Into<String>, threshold: f64, retry: RetryPolicy) -> Result<Self> {
        if !(0.0..=1.0).contains(&threshold) {
            return Err(Error::Config(format!("scorer threshold {threshold} outside [0, 1]")));
        }
        Ok(Self {
            endpoint: endpoint.into(),
            threshold,
            client: JsonClient::new(retry, None),
        })
    }
}

/// Decodes a reply into a total classification. Scores win over labels.
pub fn parse_external_reply(reply: &Value, threshold: f64) -> Result<Classification> {
    let section = |key: &str| -> Result<Option<&serde_json::Map<String, Value>>> {
        match reply.get(key) {
            None | Some(Value::Null) => Ok(None),
            Some(Value::Object(m)) => Ok(Some(m)),
            Some(_) => Err(Error::remote(format!("scorer reply field {key:?} is not an object"))),
        }
    };
    let labels = section("labels")?;
    let scores = section("scores")?;
    for key in labels.iter().chain(scores.iter()).flat_map(|m| m.keys()) {
        if key.parse::<ConceptId>().is_err() {
            warn!(key, "ignoring unknown concept in scorer reply");
        }
    }
    let mut out_labels = PerConcept::from_fn(|_| false);
    let mut out_scores = PerConcept::from_fn(|_| f64::NAN);
    let mut all_scored = scores.is_some();
    for id in ConceptId::ALL {
        let score = scores.and_then(|m| m.get(id.as_str()));
        if let Some(s) = score {
            let s = s
                .as_f64()
                .filter(|s| (0.0..=1.0).contains(s))
                .ok_or_else(|| Error::remote(format!("scorer score for {id} is not a number in [0, 1]")))?;
            out_scores[id] = s;
            out_labels[id] = s >= threshold;
            continue;
        }
        all_scored = false;
        match labels.and_then(|m| m.get(id.as_str())) {
            Some(Value::Bool(b)) => out_labels[id] = *b,
            Some(_) => return Err(Error::remote(format!("scorer label for {id} is not a boolean"))),
            None => return Err(Error::remote(format!("scorer reply is missing concept {id}"))),
        }
    }
    Ok(Classification {
        labels: out_labels,
        scores: all_scored.then_some(out_scores),
    })
}

impl ConceptScorer for ExternalScorer {
    fn info(&self) -> ScorerInfo {
        ScorerInfo {
            name: format!("external:{}", self.endpoint),
            version: "v1".into(),
            threshold: Some(self.threshold),
        }
    }

    fn classify(&self, chunk_text: &str) -> Result<Classification> {
        let reply = self.client.post(&self.endpoint, &json!({ "text": chunk_text }))?;
        parse_external_reply(&reply, self.threshold)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub chunk_id: String,
    pub concept_id: ConceptId,
    pub predicted: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
}

/// Classifies every chunk; output is chunk order × concept order.
pub fn classify_corpus(scorer: &dyn ConceptScorer, chunks: &[Chunk], parallel: usize) -> Result<Vec<Prediction>> {
    let per_chunk = bounded_map(chunks, parallel, |c| scorer.classify(&c.text))?;
    let mut out = Vec::with_capacity(chunks.len() * ConceptId::COUNT);
    for (chunk, class) in chunks.iter().zip(per_chunk) {
        for id in ConceptId::ALL {
            out.push(Prediction {
                chunk_id: chunk.chunk_id.clone(),
                concept_id: id,
                predicted: class.labels[id],
                score: class.scores.as_ref().map(|s| s[id]),
            });
        }
    }
    Ok(out)
}

pub fn write_predictions(path: &Path, predictions: &[Prediction]) -> Result<()> {
    write_jsonl(path, predictions)
}

pub fn read_predictions(path: &Path) -> Result<Vec<Prediction>> {
    read_jsonl(path)
}

/// Positive predictions for one concept as a ranked list: distance is
/// `1 - score` (0 when unscored), ties broken by chunk id as in retrieval.
pub fn rank_by_score(predictions: &[Prediction], concept_id: ConceptId) -> RankedList {
    let mut best: HashMap<&str, f64> = HashMap::new();
    for p in predictions.iter().filter(|p| p.concept_id == concept_id && p.predicted) {
        let d = 1.0 - p.score.unwrap_or(1.0);
        best.entry(p.chunk_id.as_str()).and_modify(|x| *x = x.min(d)).or_insert(d);
    }
    let mut entries: Vec<RankedEntry> = best
        .into_iter()
        .map(|(id, distance)| RankedEntry {
            chunk_id: id.to_owned(),
            distance,
        })
        .collect();
    entries.sort_by(ranking_order);
    RankedList { concept_id, entries }
}
