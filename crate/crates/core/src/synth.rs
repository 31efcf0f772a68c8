//! Deterministic synthetic notes with planted concept mentions and exact
//! ground truth.

use std::collections::HashMap;
use std::path::Path;

use chrono::{Days, NaiveDate};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::concepts::{ConceptId, PerConcept, Registry};
use crate::corpus::{Chunk, PatientNote};
use crate::error::{Error, Result};
use crate::evaluation::GoldAnnotation;
use crate::io::{read_jsonl, write_jsonl};
use crate::scoring::NEGATION_CUES;

const BUILTIN_TEMPLATES: &str = include_str!("../data/synth_templates_v1.toml");
const FILLER_PER_NOTE: std::ops::RangeInclusive<usize> = 3..=6;
const DISTRACTOR_DRAWS: usize = 2;
const SENTENCES_PER_PARAGRAPH: std::ops::RangeInclusive<usize> = 2..=4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub n_patients: usize,
    pub notes_per_patient: usize,
    /// Per-note probability of planting one mention of each concept.
    pub plant_rate: PerConcept<f64>,
    /// Per-draw probability of a distractor sentence; two draws per note.
    pub distractor_rate: f64,
    pub rng_seed: u64,
}

impl SynthSpec {
    pub fn uniform(n_patients: usize, notes_per_patient: usize, plant_rate: f64, distractor_rate: f64, rng_seed: u64) -> Self {
        Self {
            n_patients,
            notes_per_patient,
            plant_rate: PerConcept::from_fn(|_| plant_rate),
            distractor_rate,
            rng_seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_patients == 0 || self.notes_per_patient == 0 {
            return Err(Error::validation("n_patients and notes_per_patient must be positive"));
        }
        for (id, &p) in self.plant_rate.iter() {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::validation(format!("plant_rate for {id} is {p}, outside [0, 1]")));
            }
        }
        if !(0.0..=1.0).contains(&self.distractor_rate) {
            return Err(Error::validation(format!("distractor_rate {} outside [0, 1]", self.distractor_rate)));
        }
        Ok(())
    }
}

/// One planted mention; `text == note.text[start..end]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruthEntry {
    pub note_id: String,
    pub start: usize,
    pub end: usize,
    pub concept_id: ConceptId,
    pub text: String,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct BankFile {
    version: u32,
    filler: Vec<String>,
    distractors: Vec<String>,
    concepts: Vec<BankConcept>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct BankConcept {
    id: ConceptId,
    templates: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TemplateBank {
    pub version: u32,
    pub filler: Vec<String>,
    pub distractors: Vec<String>,
    pub templates: PerConcept<Vec<String>>,
}

impl TemplateBank {
    pub fn builtin() -> Self {
        Self::from_toml_str(BUILTIN_TEMPLATES).expect("builtin template bank is valid")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let file: BankFile = toml::from_str(text).map_err(|e| Error::Config(format!("template bank: {e}")))?;
        let mut templates: PerConcept<Option<Vec<String>>> = PerConcept::default();
        for c in file.concepts {
            if templates[c.id].replace(c.templates).is_some() {
                return Err(Error::Config(format!("template bank lists {} twice", c.id)));
            }
        }
        let mut out = PerConcept::default();
        for (id, t) in templates.iter() {
            match t {
                Some(t) if !t.is_empty() => out[id] = t.clone(),
                _ => return Err(Error::Config(format!("template bank has no templates for {id}"))),
            }
        }
        if file.filler.is_empty() {
            return Err(Error::Config("template bank has no filler sentences".into()));
        }
        Ok(Self {
            version: file.version,
            filler: file.filler,
            distractors: file.distractors,
            templates: out,
        })
    }

    /// Checks the bank against a registry: each template is a single
    /// sentence matching exactly its own concept with no negation cue, and
    /// each filler matches nothing.
    pub fn validate(&self, registry: &Registry) -> Result<()> {
        let inner_break = Regex::new(r"[.!?]\s|\n").expect("static regex");
        let single_sentence = |s: &str| !inner_break.is_match(s.trim_end()) && s.ends_with('.');
        let has_cue = |s: &str| {
            let l = s.to_lowercase();
            NEGATION_CUES.iter().any(|c| l.contains(c))
        };
        let hits = |s: &str| -> Vec<ConceptId> { registry.iter().filter(|d| d.matches(s)).map(|d| d.id).collect() };
        for s in &self.filler {
            if !single_sentence(s) || has_cue(s) || !hits(s).is_empty() {
                return Err(Error::validation(format!("filler sentence {s:?} is not neutral (matches {:?})", hits(s))));
            }
        }
        for (id, list) in self.templates.iter() {
            for s in list {
                if !single_sentence(s) || has_cue(s) || hits(s) != [id] {
                    return Err(Error::validation(format!("template {s:?} for {id} matches {:?}", hits(s))));
                }
            }
        }
        for s in &self.distractors {
            if !single_sentence(s) {
                return Err(Error::validation(format!("distractor {s:?} is not a single sentence")));
            }
        }
        Ok(())
    }
}

enum Sentence<'a> {
    Plain(&'a str),
    Planted(ConceptId, &'a str),
}

fn note_text(sentences: &[Sentence<'_>], rng: &mut ChaCha8Rng, note_id: &str, truth: &mut Vec<TruthEntry>) -> String {
    let mut text = String::new();
    let mut i = 0;
    while i < sentences.len() {
        let take = rng.random_range(SENTENCES_PER_PARAGRAPH).min(sentences.len() - i);
        if !text.is_empty() {
            text.push_str("\n\n");
        }
        for (j, s) in sentences[i..i + take].iter().enumerate() {
            if j > 0 {
                text.push(' ');
            }
            let start = text.len();
            let s = match s {
                Sentence::Plain(s) => s,
                Sentence::Planted(id, s) => {
                    truth.push(TruthEntry {
                        note_id: note_id.to_owned(),
                        start,
                        end: start + s.len(),
                        concept_id: *id,
                        text: (*s).to_owned(),
                    });
                    s
                }
            };
            text.push_str(s);
        }
        i += take;
    }
    text
}

fn generate_patient(spec: &SynthSpec, bank: &TemplateBank, patient: usize, seed: u64) -> (Vec<PatientNote>, Vec<TruthEntry>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let patient_id = format!("pt{:04}", patient + 1);
    let base = NaiveDate::from_ymd_opt(2020, 1, 1).expect("valid date") + Days::new(rng.random_range(0..365));
    let mut notes = Vec::with_capacity(spec.notes_per_patient);
    let mut truth = Vec::new();
    for n in 0..spec.notes_per_patient {
        let note_id = format!("{patient_id}-n{:02}", n + 1);
        let mut sentences: Vec<Sentence<'_>> = Vec::new();
        for _ in 0..rng.random_range(FILLER_PER_NOTE) {
            sentences.push(Sentence::Plain(bank.filler.choose(&mut rng).expect("non-empty filler")));
        }
        for id in ConceptId::ALL {
            let rate = spec.plant_rate[id];
            if rate > 0.0 && rng.random_bool(rate) {
                let t = bank.templates[id].choose(&mut rng).expect("non-empty templates");
                sentences.push(Sentence::Planted(id, t));
            }
        }
        if !bank.distractors.is_empty() && spec.distractor_rate > 0.0 {
            for _ in 0..DISTRACTOR_DRAWS {
                if rng.random_bool(spec.distractor_rate) {
                    sentences.push(Sentence::Plain(bank.distractors.choose(&mut rng).expect("non-empty distractors")));
                }
            }
        }
        sentences.shuffle(&mut rng);
        let text = note_text(&sentences, &mut rng, &note_id, &mut truth);
        let date = base + Days::new(14 * n as u64);
        notes.push(PatientNote {
            patient_id: patient_id.clone(),
            note_id,
            timestamp: Some(date.format("%Y-%m-%d").to_string()),
            text,
        });
    }
    (notes, truth)
}

/// Generates a corpus from `spec`. Each patient draws from its own
/// generator seeded from the master seed, so output does not depend on
/// scheduling.
pub fn generate_corpus(spec: &SynthSpec, bank: &TemplateBank) -> Result<(Vec<PatientNote>, Vec<TruthEntry>)> {
    spec.validate()?;
    let mut master = ChaCha8Rng::seed_from_u64(spec.rng_seed);
    let seeds: Vec<u64> = (0..spec.n_patients).map(|_| master.next_u64()).collect();
    let parts: Vec<_> = seeds
        .par_iter()
        .enumerate()
        .map(|(p, &seed)| generate_patient(spec, bank, p, seed))
        .collect();
    let mut notes = Vec::new();
    let mut truth = Vec::new();
    for (n, t) in parts {
        notes.extend(n);
        truth.extend(t);
    }
    Ok((notes, truth))
}

pub fn write_truth(path: &Path, truth: &[TruthEntry]) -> Result<()> {
    write_jsonl(path, truth)
}

pub fn read_truth(path: &Path) -> Result<Vec<TruthEntry>> {
    read_jsonl(path)
}

/// Judges every chunk for every concept: relevant iff a planted span of that
/// concept lies inside the chunk. A span not contained in any chunk is an
/// error.
pub fn truth_to_gold(truth: &[TruthEntry], chunks: &[Chunk]) -> Result<Vec<GoldAnnotation>> {
    let mut by_note: HashMap<&str, Vec<usize>> = HashMap::new();
    for (i, c) in chunks.iter().enumerate() {
        by_note.entry(c.note_id.as_str()).or_default().push(i);
    }
    let mut relevant: Vec<PerConcept<bool>> = vec![PerConcept::default(); chunks.len()];
    for t in truth {
        let owner = by_note
            .get(t.note_id.as_str())
            .and_then(|rows| rows.iter().find(|&&i| chunks[i].start_offset <= t.start && t.end <= chunks[i].end_offset))
            .ok_or_else(|| {
                Error::validation(format!(
                    "planted {} span {}..{} in note {} is not inside a single chunk",
                    t.concept_id, t.start, t.end, t.note_id
                ))
            })?;
        relevant[*owner][t.concept_id] = true;
    }
    Ok(chunks
        .iter()
        .zip(relevant)
        .flat_map(|(c, rel)| {
            ConceptId::ALL.map(|id| GoldAnnotation {
                chunk_id: c.chunk_id.clone(),
                concept_id: id,
                relevant: rel[id],
                annotator: Some("synth".into()),
            })
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{chunk_corpus, ChunkingConfig};

    #[test]
    fn builtin_bank_is_consistent_with_registry() {
        TemplateBank::builtin().validate(&Registry::builtin()).unwrap();
    }

    #[test]
    fn validation_catches_cross_matches() {
        let mut bank = TemplateBank::builtin();
        bank.templates[ConceptId::Scores].push("ECOG 1 after chemotherapy.".into());
        assert!(bank.validate(&Registry::builtin()).is_err());
        let mut bank = TemplateBank::builtin();
        bank.filler.push("Biopsy pending.".into());
        assert!(bank.validate(&Registry::builtin()).is_err());
    }

    #[test]
    fn deterministic_and_truth_offsets_exact() {
        let bank = TemplateBank::builtin();
        let spec = SynthSpec::uniform(4, 3, 0.5, 0.3, 42);
        let a = generate_corpus(&spec, &bank).unwrap();
        assert_eq!(a, generate_corpus(&spec, &bank).unwrap());
        let notes: HashMap<&str, &PatientNote> = a.0.iter().map(|n| (n.note_id.as_str(), n)).collect();
        for t in &a.1 {
            assert_eq!(&notes[t.note_id.as_str()].text[t.start..t.end], t.text);
        }
        assert_ne!(a, generate_corpus(&SynthSpec { rng_seed: 43, ..spec }, &bank).unwrap());
    }

    #[test]
    fn plant_rate_extremes() {
        let bank = TemplateBank::builtin();
        let (notes, truth) = generate_corpus(&SynthSpec::uniform(3, 2, 0.0, 0.0, 1), &bank).unwrap();
        assert_eq!(notes.len(), 6);
        assert!(truth.is_empty());
        let (notes, truth) = generate_corpus(&SynthSpec::uniform(2, 3, 1.0, 0.0, 1), &bank).unwrap();
        assert_eq!(notes.len(), 6);
        assert_eq!(truth.len(), 78);
    }

    #[test]
    fn invalid_specs() {
        let bank = TemplateBank::builtin();
        assert!(generate_corpus(&SynthSpec::uniform(0, 1, 0.5, 0.0, 1), &bank).is_err());
        assert!(generate_corpus(&SynthSpec::uniform(1, 1, 1.5, 0.0, 1), &bank).is_err());
        assert!(generate_corpus(&SynthSpec::uniform(1, 1, 0.5, -0.1, 1), &bank).is_err());
    }

    #[test]
    fn gold_from_truth() {
        let bank = TemplateBank::builtin();
        let (notes, truth) = generate_corpus(&SynthSpec::uniform(3, 2, 0.4, 0.0, 9), &bank).unwrap();
        let chunker = ChunkingConfig {
            max_chunk_chars: 200,
            min_chunk_chars: 20,
            ..ChunkingConfig::default()
        }
        .build()
        .unwrap();
        let chunks = chunk_corpus(&notes, &chunker).unwrap();
        let gold = truth_to_gold(&truth, &chunks).unwrap();
        assert_eq!(gold.len(), chunks.len() * 13);
        assert_eq!(gold.iter().filter(|g| g.relevant).count(), {
            let mut pairs: Vec<(&str, ConceptId)> = Vec::new();
            for t in &truth {
                let c = chunks.iter().find(|c| c.note_id == t.note_id && c.start_offset <= t.start && t.end <= c.end_offset).unwrap();
                pairs.push((c.chunk_id.as_str(), t.concept_id));
            }
            pairs.sort();
            pairs.dedup();
            pairs.len()
        });
    }

    #[test]
    fn straddling_span_is_an_error() {
        let chunks = vec![
            Chunk {
                chunk_id: "n#0".into(),
                patient_id: "p".into(),
                note_id: "n".into(),
                start_offset: 0,
                end_offset: 10,
                text: "x".repeat(10),
            },
            Chunk {
                chunk_id: "n#1".into(),
                patient_id: "p".into(),
                note_id: "n".into(),
                start_offset: 11,
                end_offset: 30,
                text: "x".repeat(19),
            },
        ];
        let t = |start, end| TruthEntry {
            note_id: "n".into(),
            start,
            end,
            concept_id: ConceptId::Scores,
            text: String::new(),
        };
        let gold = truth_to_gold(&[t(12, 20)], &chunks).unwrap();
        assert!(gold.iter().any(|g| g.chunk_id == "n#1" && g.concept_id == ConceptId::Scores && g.relevant));
        assert_eq!(gold.iter().filter(|g| g.relevant).count(), 1);
        assert!(truth_to_gold(&[t(5, 15)], &chunks).is_err());
        assert!(truth_to_gold(&[TruthEntry { note_id: "zz".into(), ..t(0, 1) }], &chunks).is_err());
    }
}
