//! Silver labeling: chain-of-thought LLM labels per (concept, chunk), a
//! regex filter against false positives, self-verification against false
//! negatives, and export of distillation training sets.

use std::collections::{HashMap, HashSet};
use std::fs::OpenOptions;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use tracing::warn;

use crate::concepts::{ConceptDef, ConceptId, PerConcept, Registry};
use crate::corpus::Chunk;
use crate::error::{Error, Result};
use crate::io::{read_jsonl, write_jsonl};
use crate::llm::{LlmClient, Prompt, PromptStage};
use crate::parallel::bounded_map;
use crate::prompts::{render, PromptTemplates};
use crate::retrieval::CandidateSet;

const REASK_SUFFIX: &str = "\n\nYour previous answer could not be parsed. Reply with only the fenced JSON block.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Raw,
    RegexFiltered,
    SelfVerified,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CotLabel {
    pub chunk_id: String,
    pub concept_id: ConceptId,
    pub reasoning: String,
    pub evidence_terms: Vec<String>,
    pub label: bool,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingInstance {
    pub chunk_id: String,
    pub text: String,
    pub concept_id: ConceptId,
    pub label: bool,
    pub rationale: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiConceptInstance {
    pub chunk_id: String,
    pub text: String,
    pub labels: PerConcept<bool>,
    pub rationale: String,
}

#[derive(Debug, Deserialize)]
struct LabelReply {
    #[serde(default)]
    reasoning: String,
    #[serde(default)]
    evidence_terms: Vec<String>,
    label: bool,
}

/// Extracts the structured block from a reply: the first fenced block if
/// present, otherwise the outermost braces.
fn parse_reply(raw: &str) -> Option<LabelReply> {
    let fenced = raw.find("```").and_then(|open| {
        let body = &raw[open + 3..];
        let body = body.find('\n').map(|nl| &body[nl + 1..]).unwrap_or(body);
        body.find("```").map(|close| &body[..close])
    });
    let candidate = fenced.or_else(|| {
        let (s, e) = (raw.find('{')?, raw.rfind('}')?);
        (s < e).then(|| &raw[s..=e])
    })?;
    serde_json::from_str(candidate.trim()).ok()
}

pub fn label_prompt(chunk: &Chunk, concept: &ConceptDef, templates: &PromptTemplates) -> Prompt {
    Prompt {
        text: render(
            &templates.label,
            &[
                ("concept_name", &concept.display_name),
                ("definition", &concept.definition),
                ("chunk_text", &chunk.text),
            ],
        ),
        stage: PromptStage::Label,
        concept: Some(concept.id),
        chunk_id: Some(chunk.chunk_id.clone()),
    }
}

pub fn verify_prompt(chunk: &Chunk, concept: &ConceptDef, spans: &[String], templates: &PromptTemplates) -> Prompt {
    let quoted: Vec<String> = spans.iter().map(|s| format!("- \"{s}\"")).collect();
    Prompt {
        text: render(
            &templates.verify,
            &[
                ("concept_name", &concept.display_name),
                ("definition", &concept.definition),
                ("matched_spans", &quoted.join("\n")),
                ("chunk_text", &chunk.text),
            ],
        ),
        stage: PromptStage::Verify,
        concept: Some(concept.id),
        chunk_id: Some(chunk.chunk_id.clone()),
    }
}

/// Asks once, re-asks once on an unparseable reply.
fn ask(llm: &dyn LlmClient, prompt: &Prompt) -> Result<LabelReply> {
    let first = llm.complete(prompt)?;
    if let Some(reply) = parse_reply(&first) {
        return Ok(reply);
    }
    let reask = Prompt {
        text: format!("{}{REASK_SUFFIX}", prompt.text),
        ..prompt.clone()
    };
    let second = llm.complete(&reask)?;
    parse_reply(&second).ok_or_else(|| {
        Error::validation(format!(
            "unparseable LLM reply for {:?}/{:?}; raw response: {second}",
            prompt.concept, prompt.chunk_id
        ))
    })
}

pub fn label_chunk(chunk: &Chunk, concept: &ConceptDef, llm: &dyn LlmClient, templates: &PromptTemplates) -> Result<CotLabel> {
    let reply = ask(llm, &label_prompt(chunk, concept, templates))?;
    Ok(CotLabel {
        chunk_id: chunk.chunk_id.clone(),
        concept_id: concept.id,
        reasoning: reply.reasoning,
        evidence_terms: reply.evidence_terms,
        label: reply.label,
        provenance: Provenance::Raw,
    })
}

fn occurs_in(term: &str, text_lower: &str) -> bool {
    let t = term.trim();
    !t.is_empty() && text_lower.contains(&t.to_lowercase())
}

/// Drops evidence terms absent from the chunk and turns positives with no
/// lexical support into negatives. Never turns a negative into a positive.
pub fn regex_filter(label: &CotLabel, chunk: &Chunk, concept: &ConceptDef) -> CotLabel {
    debug_assert_eq!(label.concept_id, concept.id);
    let mut out = label.clone();
    if !label.label {
        return out;
    }
    let lower = chunk.text.to_lowercase();
    let kept: Vec<String> = label.evidence_terms.iter().filter(|t| occurs_in(t, &lower)).cloned().collect();
    if !kept.is_empty() {
        out.evidence_terms = kept;
        return out;
    }
    let spans = concept.matched_spans(&chunk.text);
    if spans.is_empty() {
        out.label = false;
        out.evidence_terms.clear();
        out.provenance = Provenance::RegexFiltered;
    } else {
        out.evidence_terms = spans;
    }
    out
}

/// Re-asks the LLM about a negative whose chunk nonetheless matches one of
/// the concept's patterns. Never turns a positive into a negative.
pub fn self_verify(
    label: &CotLabel,
    chunk: &Chunk,
    concept: &ConceptDef,
    llm: &dyn LlmClient,
    templates: &PromptTemplates,
) -> CotLabel {
    if label.label || label.provenance == Provenance::SelfVerified {
        return label.clone();
    }
    let spans = concept.matched_spans(&chunk.text);
    if spans.is_empty() {
        return label.clone();
    }
    let reply = match ask(llm, &verify_prompt(chunk, concept, &spans, templates)) {
        Ok(r) => r,
        Err(e) => {
            warn!(chunk = %chunk.chunk_id, concept = %concept.id, "self-verification skipped: {e}");
            return label.clone();
        }
    };
    let mut out = label.clone();
    out.provenance = Provenance::SelfVerified;
    if reply.label {
        out.label = true;
        out.evidence_terms = spans;
        if !reply.reasoning.is_empty() {
            out.reasoning = reply.reasoning;
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LabelingOptions {
    pub parallel_requests: usize,
    /// Pairs per checkpoint flush.
    pub batch_size: usize,
}

impl Default for LabelingOptions {
    fn default() -> Self {
        Self {
            parallel_requests: 4,
            batch_size: 32,
        }
    }
}

type PairKey = (ConceptId, String);

fn read_checkpoint(path: &Path) -> Result<HashMap<PairKey, CotLabel>> {
    let mut done = HashMap::new();
    if !path.exists() {
        return Ok(done);
    }
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    // a crash can leave a partial final line; drop it so appends stay aligned
    let complete = match bytes.iter().rposition(|&b| b == b'\n') {
        Some(i) => i + 1,
        None => 0,
    };
    if complete < bytes.len() {
        warn!(path = %path.display(), "discarding truncated checkpoint tail");
        let f = OpenOptions::new().write(true).open(path).map_err(|e| Error::io(path, e))?;
        f.set_len(complete as u64).map_err(|e| Error::io(path, e))?;
    }
    for label in read_jsonl::<CotLabel>(path)? {
        done.insert((label.concept_id, label.chunk_id.clone()), label);
    }
    Ok(done)
}

fn append_checkpoint(path: &Path, labels: &[CotLabel]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut f = OpenOptions::new().create(true).append(true).open(path).map_err(|e| Error::io(path, e))?;
    let mut buf = Vec::new();
    for l in labels {
        serde_json::to_writer(&mut buf, l).map_err(|e| Error::validation(e.to_string()))?;
        buf.push(b'\n');
    }
    f.write_all(&buf).map_err(|e| Error::io(path, e))?;
    f.sync_data().map_err(|e| Error::io(path, e))
}

/// Labels one pair end-to-end: label, regex filter, self-verify.
pub fn label_pair(chunk: &Chunk, concept: &ConceptDef, llm: &dyn LlmClient, templates: &PromptTemplates) -> Result<CotLabel> {
    let raw = label_chunk(chunk, concept, llm, templates)?;
    let filtered = regex_filter(&raw, chunk, concept);
    Ok(self_verify(&filtered, chunk, concept, llm, templates))
}

/// Runs the labeling pipeline over every candidate pair in order.
///
/// With a checkpoint path, finished pairs are appended after every batch and
/// pairs already present are not sent to the LLM again.
pub fn run_labeling(
    candidates: &CandidateSet,
    chunks: &[Chunk],
    registry: &Registry,
    llm: &dyn LlmClient,
    templates: &PromptTemplates,
    checkpoint: Option<&Path>,
    options: LabelingOptions,
) -> Result<Vec<CotLabel>> {
    let by_id: HashMap<&str, &Chunk> = chunks.iter().map(|c| (c.chunk_id.as_str(), c)).collect();
    if let Some(p) = candidates.pairs.iter().find(|p| !by_id.contains_key(p.chunk_id.as_str())) {
        return Err(Error::validation(format!("candidate references unknown chunk {}", p.chunk_id)));
    }
    let mut done = match checkpoint {
        Some(path) => read_checkpoint(path)?,
        None => HashMap::new(),
    };
    let mut seen: HashSet<PairKey> = HashSet::new();
    let order: Vec<PairKey> = candidates
        .pairs
        .iter()
        .map(|p| (p.concept_id, p.chunk_id.clone()))
        .filter(|k| seen.insert(k.clone()))
        .collect();
    let pending: Vec<&PairKey> = order.iter().filter(|k| !done.contains_key(*k)).collect();

    for batch in pending.chunks(options.batch_size.max(1)) {
        let labels = bounded_map(batch, options.parallel_requests, |(concept, chunk_id)| {
            label_pair(by_id[chunk_id.as_str()], registry.get(*concept), llm, templates)
        })?;
        if let Some(path) = checkpoint {
            append_checkpoint(path, &labels)?;
        }
        for l in labels {
            done.insert((l.concept_id, l.chunk_id.clone()), l);
        }
    }
    Ok(order.into_iter().map(|k| done.remove(&k).expect("every pair labeled")).collect())
}

pub fn write_labels(path: &Path, labels: &[CotLabel]) -> Result<()> {
    write_jsonl(path, labels)
}

pub fn read_labels(path: &Path) -> Result<Vec<CotLabel>> {
    read_jsonl(path)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmitMode {
    /// One instance per (chunk, concept) label.
    Single,
    /// One instance per chunk with a label for every concept.
    Multi,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EmitSummary {
    pub written: usize,
    /// Multi mode: (chunk, concept) pairs that had no label and were written
    /// as negatives.
    pub defaulted: Vec<(String, ConceptId)>,
}

pub fn single_instances(labels: &[CotLabel], chunks: &[Chunk]) -> Result<Vec<TrainingInstance>> {
    let by_id: HashMap<&str, &Chunk> = chunks.iter().map(|c| (c.chunk_id.as_str(), c)).collect();
    labels
        .iter()
        .map(|l| {
            let chunk = by_id
                .get(l.chunk_id.as_str())
                .ok_or_else(|| Error::validation(format!("label references unknown chunk {}", l.chunk_id)))?;
            Ok(TrainingInstance {
                chunk_id: l.chunk_id.clone(),
                text: chunk.text.clone(),
                concept_id: l.concept_id,
                label: l.label,
                rationale: l.reasoning.clone(),
            })
        })
        .collect()
}

/// (chunk, concept) pairs with no label, emitted as false.
pub type Defaulted = Vec<(String, ConceptId)>;

/// Groups labels by chunk in order of first appearance.
pub fn multi_instances(labels: &[CotLabel], chunks: &[Chunk]) -> Result<(Vec<MultiConceptInstance>, Defaulted)> {
    let by_id: HashMap<&str, &Chunk> = chunks.iter().map(|c| (c.chunk_id.as_str(), c)).collect();
    let mut order: Vec<&str> = Vec::new();
    let mut grouped: HashMap<&str, PerConcept<Option<&CotLabel>>> = HashMap::new();
    for l in labels {
        let slot = grouped.entry(l.chunk_id.as_str()).or_insert_with(|| {
            order.push(l.chunk_id.as_str());
            PerConcept::default()
        });
        slot[l.concept_id].get_or_insert(l);
    }
    let mut defaulted = Vec::new();
    let mut out = Vec::with_capacity(order.len());
    for id in order {
        let chunk = by_id
            .get(id)
            .ok_or_else(|| Error::validation(format!("label references unknown chunk {id}")))?;
        let group = &grouped[id];
        let mut rationale = Vec::new();
        for (concept, label) in group.iter() {
            match label {
                Some(l) if !l.reasoning.is_empty() => rationale.push(format!("{concept}: {}", l.reasoning)),
                Some(_) => {}
                None => {
                    warn!(chunk = id, %concept, "no label for concept; writing false");
                    defaulted.push((id.to_owned(), concept));
                }
            }
        }
        out.push(MultiConceptInstance {
            chunk_id: id.to_owned(),
            text: chunk.text.clone(),
            labels: group.map(|_, l| l.is_some_and(|l| l.label)),
            rationale: rationale.join("\n"),
        });
    }
    Ok((out, defaulted))
}

pub fn emit_training_set(labels: &[CotLabel], chunks: &[Chunk], mode: EmitMode, path: &Path) -> Result<EmitSummary> {
    match mode {
        EmitMode::Single => {
            let rows = single_instances(labels, chunks)?;
            write_jsonl(path, &rows)?;
            Ok(EmitSummary {
                written: rows.len(),
                defaulted: Vec::new(),
            })
        }
        EmitMode::Multi => {
            let (rows, defaulted) = multi_instances(labels, chunks)?;
            write_jsonl(path, &rows)?;
            Ok(EmitSummary {
                written: rows.len(),
                defaulted,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{MockLlm, ScriptEntry};
    use crate::retrieval::Candidate;

    fn chunk(id: &str, text: &str) -> Chunk {
        Chunk {
            chunk_id: id.into(),
            patient_id: "p".into(),
            note_id: "n".into(),
            start_offset: 0,
            end_offset: text.len(),
            text: text.into(),
        }
    }

    fn reply(label: bool, terms: &[&str]) -> String {
        format!(
            "Let me think.\n```json\n{}\n```",
            serde_json::json!({"reasoning": "because", "evidence_terms": terms, "label": label})
        )
    }

    fn label(l: bool, terms: &[&str], provenance: Provenance) -> CotLabel {
        CotLabel {
            chunk_id: "c".into(),
            concept_id: ConceptId::TumorStaging,
            reasoning: "r".into(),
            evidence_terms: terms.iter().map(|s| s.to_string()).collect(),
            label: l,
            provenance,
        }
    }

    #[test]
    fn parse_reply_variants() {
        assert!(parse_reply(&reply(true, &["x"])).unwrap().label);
        let bare = r#"Answer: {"label": false}"#;
        let r = parse_reply(bare).unwrap();
        assert!(!r.label && r.evidence_terms.is_empty());
        assert!(parse_reply("no idea").is_none());
        assert!(parse_reply("```json\n{\"labl\": true}\n```").is_none());
    }

    #[test]
    fn label_chunk_follows_script() {
        let reg = Registry::builtin();
        let c = chunk("n#0", "Metastatic, stage IV disease.");
        let mock = MockLlm::new(vec![ScriptEntry::for_pair(PromptStage::Label, ConceptId::TumorStaging, "n#0", reply(true, &["stage IV"]))]).unwrap();
        let l = label_chunk(&c, reg.get(ConceptId::TumorStaging), &mock, &PromptTemplates::default()).unwrap();
        assert!(l.label);
        assert_eq!(l.evidence_terms, ["stage IV"]);
        assert_eq!(l.provenance, Provenance::Raw);

        let mock = MockLlm::new(vec![ScriptEntry::for_pair(PromptStage::Label, ConceptId::TumorStaging, "n#0", reply(false, &[]))]).unwrap();
        let l = label_chunk(&c, reg.get(ConceptId::TumorStaging), &mock, &PromptTemplates::default()).unwrap();
        assert!(!l.label && l.evidence_terms.is_empty());
    }

    #[test]
    fn unparseable_twice_is_an_error_with_raw_text() {
        let reg = Registry::builtin();
        let c = chunk("n#0", "text");
        let mock = MockLlm::new(vec![ScriptEntry {
            prompt_sha256: None,
            stage: Some(PromptStage::Label),
            concept_id: None,
            chunk_id: None,
            response: None,
            responses: vec!["garbage one".into(), "garbage two".into()],
        }])
        .unwrap();
        let err = label_chunk(&c, reg.get(ConceptId::Scores), &mock, &PromptTemplates::default()).unwrap_err();
        assert!(err.to_string().contains("garbage two"), "{err}");
        assert_eq!(mock.calls(), 2);
    }

    #[test]
    fn reask_recovers() {
        let reg = Registry::builtin();
        let c = chunk("n#0", "ECOG 1");
        let mock = MockLlm::new(vec![ScriptEntry {
            prompt_sha256: None,
            stage: Some(PromptStage::Label),
            concept_id: None,
            chunk_id: None,
            response: None,
            responses: vec!["oops".into(), reply(true, &["ECOG 1"])],
        }])
        .unwrap();
        assert!(label_chunk(&c, reg.get(ConceptId::Scores), &mock, &PromptTemplates::default()).unwrap().label);
    }

    #[test]
    fn regex_filter_rules() {
        let reg = Registry::builtin();
        let staging = reg.get(ConceptId::TumorStaging);

        let c = chunk("c", "Metastatic, stage IV disease.");
        let l = label(true, &["stage IV"], Provenance::Raw);
        assert_eq!(regex_filter(&l, &c, staging), l);

        let c = chunk("c", "Vital signs stable.");
        let out = regex_filter(&label(true, &["T3"], Provenance::Raw), &c, staging);
        assert!(!out.label && out.evidence_terms.is_empty());
        assert_eq!(out.provenance, Provenance::RegexFiltered);

        let c = chunk("c", "Pathologic staging T2N0M0 per report.");
        let out = regex_filter(&label(true, &["T2N0M0", "unicorn"], Provenance::Raw), &c, staging);
        assert!(out.label);
        assert_eq!(out.evidence_terms, ["T2N0M0"]);
        assert_eq!(out.provenance, Provenance::Raw);

        // no surviving terms but a pattern hit: keep the positive with the matched span
        let out = regex_filter(&label(true, &["unicorn"], Provenance::Raw), &c, staging);
        assert!(out.label);
        assert_eq!(out.evidence_terms, ["T2N0M0"]);

        let neg = label(false, &[], Provenance::Raw);
        assert_eq!(regex_filter(&neg, &c, staging), neg);
    }

    #[test]
    fn self_verify_rules() {
        let reg = Registry::builtin();
        let staging = reg.get(ConceptId::TumorStaging);
        let t = PromptTemplates::default();
        let confirm = MockLlm::new(vec![ScriptEntry::for_pair(PromptStage::Verify, ConceptId::TumorStaging, "c", reply(true, &[]))]).unwrap();
        let deny = MockLlm::new(vec![ScriptEntry::for_pair(PromptStage::Verify, ConceptId::TumorStaging, "c", reply(false, &[]))]).unwrap();

        let c = chunk("c", "Disease is now stage III after restaging.");
        let neg = label(false, &[], Provenance::Raw);
        let out = self_verify(&neg, &c, staging, &confirm, &t);
        assert!(out.label);
        assert_eq!(out.evidence_terms, ["stage III"]);
        assert_eq!(out.provenance, Provenance::SelfVerified);

        let out = self_verify(&neg, &c, staging, &deny, &t);
        assert!(!out.label);
        assert_eq!(out.provenance, Provenance::SelfVerified);
        assert_eq!(deny.calls(), 1);
        // verified negatives are not re-queried
        assert_eq!(self_verify(&out, &c, staging, &deny, &t), out);
        assert_eq!(deny.calls(), 1);

        let plain = chunk("c", "Vital signs stable.");
        let before = confirm.calls();
        assert_eq!(self_verify(&neg, &plain, staging, &confirm, &t), neg);
        assert_eq!(confirm.calls(), before);

        // transport failure passes the label through
        let empty = MockLlm::new(Vec::new()).unwrap();
        assert_eq!(self_verify(&neg, &c, staging, &empty, &t), neg);
    }

    fn six_pairs() -> (CandidateSet, Vec<Chunk>) {
        let chunks = vec![
            chunk("a", "ECOG 1, stage IIB."),
            chunk("b", "Vital signs stable."),
            chunk("c", "Karnofsky 80."),
        ];
        let pairs = ["a", "b", "c"]
            .iter()
            .flat_map(|id| {
                [ConceptId::Scores, ConceptId::TumorStaging].map(|concept| Candidate {
                    concept_id: concept,
                    chunk_id: id.to_string(),
                    distance: 0.5,
                })
            })
            .collect();
        (CandidateSet { per_concept_k: 3, pairs }, chunks)
    }

    #[test]
    fn run_labeling_applies_both_filters() {
        let (cands, chunks) = six_pairs();
        let reg = Registry::builtin();
        let mock = MockLlm::new(vec![
            ScriptEntry::for_pair(PromptStage::Label, ConceptId::Scores, "a", reply(true, &["ECOG 1"])),
            ScriptEntry::for_pair(PromptStage::Label, ConceptId::TumorStaging, "a", reply(false, &[])),
            ScriptEntry::for_pair(PromptStage::Verify, ConceptId::TumorStaging, "a", reply(true, &[])),
            ScriptEntry::for_pair(PromptStage::Label, ConceptId::Scores, "b", reply(true, &["ECOG"])),
            ScriptEntry::for_pair(PromptStage::Label, ConceptId::TumorStaging, "b", reply(false, &[])),
            ScriptEntry::for_pair(PromptStage::Label, ConceptId::Scores, "c", reply(true, &["Karnofsky"])),
            ScriptEntry::for_pair(PromptStage::Label, ConceptId::TumorStaging, "c", reply(false, &[])),
        ])
        .unwrap();
        let labels = run_labeling(&cands, &chunks, &reg, &mock, &PromptTemplates::default(), None, LabelingOptions::default()).unwrap();
        let got: Vec<(bool, Provenance)> = labels.iter().map(|l| (l.label, l.provenance)).collect();
        assert_eq!(
            got,
            [
                (true, Provenance::Raw),
                (true, Provenance::SelfVerified),
                (false, Provenance::RegexFiltered),
                (false, Provenance::Raw),
                (true, Provenance::Raw),
                (false, Provenance::Raw),
            ]
        );
        assert_eq!(labels[0].chunk_id, "a");
        assert_eq!(labels[1].concept_id, ConceptId::TumorStaging);
        assert_eq!(mock.calls(), 7);
    }

    #[test]
    fn run_labeling_empty_and_unknown_chunks() {
        let reg = Registry::builtin();
        let mock = MockLlm::new(Vec::new()).unwrap();
        let t = PromptTemplates::default();
        let empty = CandidateSet { per_concept_k: 1, pairs: vec![] };
        assert!(run_labeling(&empty, &[], &reg, &mock, &t, None, LabelingOptions::default()).unwrap().is_empty());
        let (cands, _) = six_pairs();
        let err = run_labeling(&cands, &[], &reg, &mock, &t, None, LabelingOptions::default()).unwrap_err();
        assert!(err.to_string().contains("unknown chunk"));
    }

    #[test]
    fn emit_modes() {
        let chunks = vec![chunk("x", "one"), chunk("y", "two")];
        let labels: Vec<CotLabel> = ["x", "y"]
            .iter()
            .flat_map(|id| {
                ConceptId::ALL.map(|c| CotLabel {
                    chunk_id: id.to_string(),
                    concept_id: c,
                    reasoning: String::new(),
                    evidence_terms: vec![],
                    label: c == ConceptId::Scores,
                    provenance: Provenance::Raw,
                })
            })
            .collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("train.jsonl");
        let s = emit_training_set(&labels, &chunks, EmitMode::Multi, &path).unwrap();
        assert_eq!(s.written, 2);
        let rows: Vec<MultiConceptInstance> = read_jsonl(&path).unwrap();
        assert_eq!(rows.len(), 2);
        assert!(rows[0].labels[ConceptId::Scores] && !rows[0].labels[ConceptId::FamilyHistory]);

        let s = emit_training_set(&labels, &chunks, EmitMode::Single, &path).unwrap();
        assert_eq!(s.written, 26);
        assert_eq!(read_jsonl::<TrainingInstance>(&path).unwrap().len(), 26);

        let partial: Vec<CotLabel> = labels.iter().filter(|l| !(l.chunk_id == "y" && l.concept_id == ConceptId::Scores)).cloned().collect();
        let s = emit_training_set(&partial, &chunks, EmitMode::Multi, &path).unwrap();
        assert_eq!(s.defaulted, [("y".to_owned(), ConceptId::Scores)]);
        let rows: Vec<MultiConceptInstance> = read_jsonl(&path).unwrap();
        assert!(!rows[1].labels[ConceptId::Scores]);
    }
}
