//! The thirteen oncology retrieval concepts, their lexical patterns and
//! expanded query sets.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::ops::{Index, IndexMut};
use std::path::Path;
use std::str::FromStr;
use std::sync::OnceLock;

use regex::{Regex, RegexBuilder};
use serde::de::Deserializer;
use serde::ser::{SerializeMap, Serializer};
use serde::{Deserialize, Serialize};
use tracing::warn;

use crate::error::{Error, Result};
use crate::io::read_jsonl;
use crate::llm::{LlmClient, Prompt, PromptStage};
use crate::prompts::{render, PromptTemplates};

const DEFAULT_REGISTRY: &str = include_str!("../data/registry_v1.toml");
const DEFAULT_QUERY_SETS: &str = include_str!("../data/query_sets_v1.jsonl");

/// Target number of expanded queries per concept.
pub const DEFAULT_QUERY_COUNT: usize = 30;
/// Extra LLM rounds allowed when an expansion yields too few unique lines.
pub const EXPANSION_RETRIES: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConceptId {
    CurrentDiagnosis,
    DiseaseStatus,
    TumorCharacteristics,
    TumorStaging,
    CombinedStage,
    TreatmentOutcomes,
    TreatmentTypes,
    BiomarkersAssessed,
    SurgicalInterventions,
    DiagnosticAssessments,
    DiagnosisDate,
    FamilyHistory,
    Scores,
}

impl ConceptId {
    pub const COUNT: usize = 13;

    /// Enumeration order, used for every deterministic iteration.
    pub const ALL: [ConceptId; 13] = [
        ConceptId::CurrentDiagnosis,
        ConceptId::DiseaseStatus,
        ConceptId::TumorCharacteristics,
        ConceptId::TumorStaging,
        ConceptId::CombinedStage,
        ConceptId::TreatmentOutcomes,
        ConceptId::TreatmentTypes,
        ConceptId::BiomarkersAssessed,
        ConceptId::SurgicalInterventions,
        ConceptId::DiagnosticAssessments,
        ConceptId::DiagnosisDate,
        ConceptId::FamilyHistory,
        ConceptId::Scores,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ConceptId::CurrentDiagnosis => "current_diagnosis",
            ConceptId::DiseaseStatus => "disease_status",
            ConceptId::TumorCharacteristics => "tumor_characteristics",
            ConceptId::TumorStaging => "tumor_staging",
            ConceptId::CombinedStage => "combined_stage",
            ConceptId::TreatmentOutcomes => "treatment_outcomes",
            ConceptId::TreatmentTypes => "treatment_types",
            ConceptId::BiomarkersAssessed => "biomarkers_assessed",
            ConceptId::SurgicalInterventions => "surgical_interventions",
            ConceptId::DiagnosticAssessments => "diagnostic_assessments",
            ConceptId::DiagnosisDate => "diagnosis_date",
            ConceptId::FamilyHistory => "family_history",
            ConceptId::Scores => "scores",
        }
    }

    pub fn ordinal(self) -> usize {
        self as usize
    }
}

impl fmt::Display for ConceptId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ConceptId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ConceptId::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::validation(format!("unknown concept id {s:?}")))
    }
}

/// A value for every concept, indexed by [`ConceptId`]. Serializes as a JSON
/// object keyed by concept id in enumeration order.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PerConcept<T>([T; 13]);

impl<T> PerConcept<T> {
    pub fn from_fn(mut f: impl FnMut(ConceptId) -> T) -> Self {
        PerConcept(std::array::from_fn(|i| f(ConceptId::ALL[i])))
    }

    pub fn iter(&self) -> impl Iterator<Item = (ConceptId, &T)> {
        ConceptId::ALL.into_iter().zip(self.0.iter())
    }

    pub fn values(&self) -> impl Iterator<Item = &T> {
        self.0.iter()
    }

    pub fn map<U>(&self, mut f: impl FnMut(ConceptId, &T) -> U) -> PerConcept<U> {
        PerConcept::from_fn(|c| f(c, &self[c]))
    }
}

impl<T: Default> Default for PerConcept<T> {
    fn default() -> Self {
        PerConcept::from_fn(|_| T::default())
    }
}

impl<T> Index<ConceptId> for PerConcept<T> {
    type Output = T;

    fn index(&self, c: ConceptId) -> &T {
        &self.0[c.ordinal()]
    }
}

impl<T> IndexMut<ConceptId> for PerConcept<T> {
    fn index_mut(&mut self, c: ConceptId) -> &mut T {
        &mut self.0[c.ordinal()]
    }
}

impl<T: Serialize> Serialize for PerConcept<T> {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let mut map = serializer.serialize_map(Some(ConceptId::COUNT))?;
        for (c, v) in self.iter() {
            map.serialize_entry(c.as_str(), v)?;
        }
        map.end()
    }
}

impl<'de, T: Deserialize<'de>> Deserialize<'de> for PerConcept<T> {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let mut raw: BTreeMap<ConceptId, T> = BTreeMap::deserialize(deserializer)?;
        if let Some(missing) = ConceptId::ALL.into_iter().find(|c| !raw.contains_key(c)) {
            return Err(serde::de::Error::custom(format!("missing concept {missing}")));
        }
        Ok(PerConcept::from_fn(|c| raw.remove(&c).expect("checked above")))
    }
}

/// One concept definition with its compiled patterns.
#[derive(Debug, Clone)]
pub struct ConceptDef {
    pub id: ConceptId,
    pub display_name: String,
    pub definition: String,
    pub patterns: Vec<String>,
    pub seed_queries: Vec<String>,
    compiled: Vec<Regex>,
}

impl PartialEq for ConceptDef {
    fn eq(&self, other: &Self) -> bool {
        self.raw() == other.raw()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConceptDef {
    id: String,
    display_name: String,
    definition: String,
    #[serde(default)]
    patterns: Vec<String>,
    #[serde(default)]
    seed_queries: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRegistry {
    concepts: Vec<RawConceptDef>,
}

pub fn compile_pattern(pattern: &str) -> std::result::Result<Regex, regex::Error> {
    RegexBuilder::new(pattern).case_insensitive(true).build()
}

impl ConceptDef {
    pub fn new(
        id: ConceptId,
        display_name: impl Into<String>,
        definition: impl Into<String>,
        patterns: Vec<String>,
        seed_queries: Vec<String>,
    ) -> Result<Self> {
        let definition = definition.into();
        if definition.trim().is_empty() {
            return Err(Error::validation(format!("concept {id}: empty definition")));
        }
        if seed_queries.iter().all(|q| q.trim().is_empty()) {
            return Err(Error::validation(format!("concept {id}: no seed queries")));
        }
        let compiled = patterns
            .iter()
            .map(|p| {
                compile_pattern(p).map_err(|e| Error::validation(format!("concept {id}: invalid pattern {p:?}: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            id,
            display_name: display_name.into(),
            definition,
            patterns,
            seed_queries,
            compiled,
        })
    }

    pub fn compiled_patterns(&self) -> &[Regex] {
        &self.compiled
    }

    pub fn matches(&self, text: &str) -> bool {
        self.compiled.iter().any(|r| r.is_match(text))
    }

    /// Distinct matched spans in order of first occurrence.
    pub fn matched_spans(&self, text: &str) -> Vec<String> {
        let mut hits: Vec<(usize, &str)> = self
            .compiled
            .iter()
            .flat_map(|r| r.find_iter(text).map(|m| (m.start(), m.as_str())))
            .collect();
        hits.sort();
        let mut seen = HashSet::new();
        hits.into_iter()
            .filter(|(_, s)| seen.insert(s.to_lowercase()))
            .map(|(_, s)| s.to_owned())
            .collect()
    }

    fn raw(&self) -> RawConceptDef {
        RawConceptDef {
            id: self.id.as_str().to_owned(),
            display_name: self.display_name.clone(),
            definition: self.definition.clone(),
            patterns: self.patterns.clone(),
            seed_queries: self.seed_queries.clone(),
        }
    }
}

/// All thirteen concept definitions. Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct Registry {
    defs: PerConcept<ConceptDef>,
}

impl Registry {
    /// The registry shipped with the crate.
    pub fn builtin() -> Self {
        static BUILTIN: OnceLock<Registry> = OnceLock::new();
        BUILTIN
            .get_or_init(|| Self::from_toml_str(DEFAULT_REGISTRY).expect("shipped registry is valid"))
            .clone()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Validation(msg) => Error::Validation(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let raw: RawRegistry = toml::from_str(text).map_err(|e| Error::validation(format!("registry: {e}")))?;
        let mut found: BTreeMap<ConceptId, ConceptDef> = BTreeMap::new();
        for def in raw.concepts {
            let id: ConceptId = def
                .id
                .parse()
                .map_err(|_| Error::validation(format!("registry: unexpected concept {:?}", def.id)))?;
            let parsed = ConceptDef::new(id, def.display_name, def.definition, def.patterns, def.seed_queries)?;
            if found.insert(id, parsed).is_some() {
                return Err(Error::validation(format!("registry: concept {id} defined twice")));
            }
        }
        let missing: Vec<&str> = ConceptId::ALL
            .into_iter()
            .filter(|c| !found.contains_key(c))
            .map(ConceptId::as_str)
            .collect();
        if !missing.is_empty() {
            return Err(Error::validation(format!("registry: missing concept(s) {}", missing.join(", "))));
        }
        Ok(Self {
            defs: PerConcept::from_fn(|c| found.remove(&c).expect("checked above")),
        })
    }

    pub fn to_toml_string(&self) -> String {
        let raw = RawRegistry {
            concepts: self.defs.values().map(ConceptDef::raw).collect(),
        };
        toml::to_string(&raw).expect("registry serializes")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_atomic(path, self.to_toml_string().as_bytes())
    }

    pub fn get(&self, id: ConceptId) -> &ConceptDef {
        &self.defs[id]
    }

    pub fn iter(&self) -> impl Iterator<Item = &ConceptDef> {
        self.defs.values()
    }
}

/// Deduplicated query phrasings for one concept.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuerySet {
    pub concept_id: ConceptId,
    pub queries: Vec<String>,
}

impl QuerySet {
    /// Trims, drops empties and removes case-insensitive duplicates, keeping
    /// the first spelling. Returns the set and the number of duplicates.
    pub fn dedup(concept_id: ConceptId, queries: impl IntoIterator<Item = String>) -> (Self, usize) {
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        let mut dups = 0;
        for q in queries {
            let q = q.trim().to_owned();
            if q.is_empty() {
                continue;
            }
            if seen.insert(q.to_lowercase()) {
                out.push(q);
            } else {
                dups += 1;
            }
        }
        (Self { concept_id, queries: out }, dups)
    }

    pub fn new(concept_id: ConceptId, queries: impl IntoIterator<Item = String>) -> Result<Self> {
        let (set, _) = Self::dedup(concept_id, queries);
        if set.queries.is_empty() {
            return Err(Error::validation(format!("query set for {concept_id} is empty")));
        }
        Ok(set)
    }

    pub fn len(&self) -> usize {
        self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queries.is_empty()
    }
}

pub type QuerySets = PerConcept<QuerySet>;

/// Strips list markers such as `1.`, `2)`, `-`, `*` and surrounding quotes.
fn clean_query_line(line: &str) -> String {
    let mut s = line.trim();
    let digits = s.chars().take_while(char::is_ascii_digit).count();
    if digits > 0 && matches!(s[digits..].chars().next(), Some('.') | Some(')')) {
        s = &s[digits + 1..];
    }
    s = s.trim_start_matches(['-', '*', '•']).trim();
    s.trim_matches('"').trim().to_owned()
}

pub fn expansion_prompt(concept: &ConceptDef, templates: &PromptTemplates, count: usize) -> Prompt {
    let seeds: Vec<String> = concept.seed_queries.iter().map(|q| format!("- {q}")).collect();
    let text = render(
        &templates.expand,
        &[
            ("concept_name", &concept.display_name),
            ("definition", &concept.definition),
            ("seed_queries", &seeds.join("\n")),
            ("count", &count.to_string()),
        ],
    );
    Prompt {
        text,
        stage: PromptStage::Expand,
        concept: Some(concept.id),
        chunk_id: None,
    }
}

/// Asks the LLM for `count` query phrasings of `concept`, one per line,
/// re-asking up to [`EXPANSION_RETRIES`] times while unique lines are short.
pub fn expand_queries(
    concept: &ConceptDef,
    llm: &dyn LlmClient,
    templates: &PromptTemplates,
    count: usize,
) -> Result<QuerySet> {
    if count == 0 {
        return Err(Error::validation("query count must be at least 1"));
    }
    let prompt = expansion_prompt(concept, templates, count);
    let mut collected: Vec<String> = Vec::new();
    for _ in 0..=EXPANSION_RETRIES {
        let reply = llm.complete(&prompt)?;
        collected.extend(reply.lines().map(clean_query_line));
        let (set, _) = QuerySet::dedup(concept.id, collected.clone());
        if set.len() >= count {
            return Ok(QuerySet {
                concept_id: concept.id,
                queries: set.queries.into_iter().take(count).collect(),
            });
        }
    }
    let (set, _) = QuerySet::dedup(concept.id, collected);
    Err(Error::validation(format!(
        "concept {}: only {} unique queries after {} attempts (wanted {count})",
        concept.id,
        set.len(),
        EXPANSION_RETRIES + 1
    )))
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct QuerySetRecord {
    concept_id: String,
    queries: Vec<String>,
}

fn query_sets_from_records(records: Vec<QuerySetRecord>, origin: &str) -> Result<QuerySets> {
    let mut found: BTreeMap<ConceptId, QuerySet> = BTreeMap::new();
    for rec in records {
        let id: ConceptId = rec.concept_id.parse()?;
        let (set, dups) = QuerySet::dedup(id, rec.queries);
        if set.is_empty() {
            return Err(Error::validation(format!("{origin}: empty query list for {id}")));
        }
        if dups > 0 {
            warn!(concept = %id, dups, "{origin}: removed duplicate queries");
        }
        if found.insert(id, set).is_some() {
            return Err(Error::validation(format!("{origin}: concept {id} listed twice")));
        }
    }
    let missing: Vec<&str> = ConceptId::ALL
        .into_iter()
        .filter(|c| !found.contains_key(c))
        .map(ConceptId::as_str)
        .collect();
    if !missing.is_empty() {
        return Err(Error::validation(format!("{origin}: missing concept(s) {}", missing.join(", "))));
    }
    Ok(PerConcept::from_fn(|c| found.remove(&c).expect("checked above")))
}

/// Loads curated query sets from a JSON Lines file, bypassing the LLM.
pub fn static_query_sets(path: &Path) -> Result<QuerySets> {
    let records = read_jsonl::<QuerySetRecord>(path)?;
    query_sets_from_records(records, &path.display().to_string())
}

/// The curated query sets shipped with the crate.
pub fn builtin_query_sets() -> QuerySets {
    let records = DEFAULT_QUERY_SETS
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).expect("shipped query sets parse"))
        .collect();
    query_sets_from_records(records, "builtin").expect("shipped query sets are valid")
}

pub fn query_sets_to_records(sets: &QuerySets) -> Vec<QuerySet> {
    sets.values().cloned().collect()
}
