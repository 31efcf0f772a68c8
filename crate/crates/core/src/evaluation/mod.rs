//! Gold judgments, confusion counts, per-concept and macro metrics, k-sweeps,
//! gold-candidate construction, latency benchmarking and report rendering.
//!
//! Metrics are pooled over judged pairs only: a prediction whose
//! (chunk, concept) pair has no gold judgment is counted as unjudged and
//! excluded from every denominator.

mod candidates;
mod latency;
pub mod reference;
mod render;
mod sweep;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::concepts::{ConceptId, PerConcept};
use crate::corpus::Chunk;
use crate::error::{Error, Result};
use crate::io::{read_jsonl, write_jsonl};
use crate::retrieval::RankedList;
use crate::scoring::Prediction;

pub use candidates::{build_gold_candidates, GoldCandidate, GoldCandidates, Selection};
pub use latency::{bench_latency, nearest_rank, LatencyReport, LatencySample};
pub use render::{render_comparison, render_latency, render_latency_samples, render_sweep, write_comparison, Rendered, SystemColumn};
pub use sweep::{k_sweep_eval, SweepPoint, SweepReport};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GoldAnnotation {
    pub chunk_id: String,
    pub concept_id: ConceptId,
    pub relevant: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annotator: Option<String>,
}

/// Reads a gold file and rejects duplicate (chunk, concept) judgments.
pub fn load_gold(path: &Path) -> Result<Vec<GoldAnnotation>> {
    let gold: Vec<GoldAnnotation> = read_jsonl(path)?;
    check_gold_unique(&gold)?;
    Ok(gold)
}

pub fn write_gold(path: &Path, gold: &[GoldAnnotation]) -> Result<()> {
    check_gold_unique(gold)?;
    write_jsonl(path, gold)
}

fn check_gold_unique(gold: &[GoldAnnotation]) -> Result<()> {
    let mut seen = HashSet::with_capacity(gold.len());
    for g in gold {
        if !seen.insert((g.chunk_id.as_str(), g.concept_id)) {
            return Err(Error::validation(format!("duplicate gold judgment for ({}, {})", g.chunk_id, g.concept_id)));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
    /// Distinct predicted chunks with no gold judgment; not part of the
    /// other four counts.
    pub unjudged: u64,
}

impl ConfusionCounts {
    pub fn judged(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn precision(&self) -> Option<f64> {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> Option<f64> {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn f1(&self) -> Option<f64> {
        f1(self.precision()?, self.recall()?)
    }
}

impl std::ops::AddAssign for ConfusionCounts {
    fn add_assign(&mut self, o: Self) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
        self.tn += o.tn;
        self.unjudged += o.unjudged;
    }
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

/// Harmonic mean; undefined when `p + r == 0`.
pub fn f1(p: f64, r: f64) -> Option<f64> {
    (p + r > 0.0).then(|| 2.0 * p * r / (p + r))
}

struct GoldIndex<'a> {
    by_concept: PerConcept<HashMap<&'a str, bool>>,
}

impl<'a> GoldIndex<'a> {
    fn new(gold: &'a [GoldAnnotation]) -> Self {
        let mut by_concept: PerConcept<HashMap<&str, bool>> = PerConcept::default();
        for g in gold {
            by_concept[g.concept_id].insert(g.chunk_id.as_str(), g.relevant);
        }
        Self { by_concept }
    }

    fn confusion(&self, predicted: &HashSet<&str>, concept_id: ConceptId, within: Option<&HashSet<&str>>) -> ConfusionCounts {
        let judged = &self.by_concept[concept_id];
        let in_scope = |id: &str| within.is_none_or(|w| w.contains(id));
        let mut c = ConfusionCounts::default();
        for (&chunk, &relevant) in judged.iter().filter(|(id, _)| in_scope(id)) {
            match (predicted.contains(chunk), relevant) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
        c.unjudged = predicted.iter().filter(|id| in_scope(id) && !judged.contains_key(*id)).count() as u64;
        c
    }
}

fn predicted_set(predictions: &[Prediction], concept_id: ConceptId) -> HashSet<&str> {
    predictions
        .iter()
        .filter(|p| p.concept_id == concept_id && p.predicted)
        .map(|p| p.chunk_id.as_str())
        .collect()
}

/// Judged pairs without a prediction count as not predicted.
pub fn compute_confusion(predictions: &[Prediction], gold: &[GoldAnnotation], concept_id: ConceptId) -> ConfusionCounts {
    GoldIndex::new(gold).confusion(&predicted_set(predictions, concept_id), concept_id, None)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    /// Positives are the top-k chunks of a ranking.
    TopK,
    /// Every chunk is judged by a classifier.
    ClassifyAll,
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Regime::TopK => "top-k",
            Regime::ClassifyAll => "classify-all",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptMetrics {
    pub concept_id: ConceptId,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub counts: ConfusionCounts,
}

impl ConceptMetrics {
    pub fn from_counts(concept_id: ConceptId, counts: ConfusionCounts) -> Self {
        Self {
            concept_id,
            precision: counts.precision(),
            recall: counts.recall(),
            f1: counts.f1(),
            counts,
        }
    }
}

/// Unweighted means over the concepts where each value is defined.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Overall {
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
}

fn mean_defined(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let (sum, n) = values.flatten().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

pub fn macro_average(per_concept: &[ConceptMetrics]) -> Overall {
    Overall {
        precision: mean_defined(per_concept.iter().map(|m| m.precision)),
        recall: mean_defined(per_concept.iter().map(|m| m.recall)),
        f1: mean_defined(per_concept.iter().map(|m| m.f1)),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub scorer: String,
    pub regime: Regime,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    /// Concept enumeration order, always 13 entries.
    pub per_concept: Vec<ConceptMetrics>,
    pub overall: Overall,
}

impl MetricsReport {
    pub fn concept(&self, id: ConceptId) -> &ConceptMetrics {
        &self.per_concept[id.ordinal()]
    }
}

pub fn compute_report(
    predictions: &[Prediction],
    gold: &[GoldAnnotation],
    scorer: &str,
    regime: Regime,
    k: Option<usize>,
) -> Result<MetricsReport> {
    if gold.is_empty() {
        return Err(Error::validation("gold set is empty"));
    }
    let index = GoldIndex::new(gold);
    let per_concept: Vec<ConceptMetrics> = ConceptId::ALL
        .into_iter()
        .map(|id| ConceptMetrics::from_counts(id, index.confusion(&predicted_set(predictions, id), id, None)))
        .collect();
    if per_concept.iter().all(|m| m.counts.judged() == 0) {
        return Err(Error::validation("no judged pairs for any concept"));
    }
    let overall = macro_average(&per_concept);
    Ok(MetricsReport {
        scorer: scorer.to_owned(),
        regime,
        k,
        per_concept,
        overall,
    })
}

/// Positive predictions for the first `k` entries of each ranked list.
pub fn predictions_from_ranked(ranked: &[RankedList], k: usize) -> Vec<Prediction> {
    ranked
        .iter()
        .flat_map(|list| {
            list.entries.iter().take(k).map(|e| Prediction {
                chunk_id: e.chunk_id.clone(),
                concept_id: list.concept_id,
                predicted: true,
                score: None,
            })
        })
        .collect()
}

/// Confusion counts restricted to each patient's chunks, keyed by patient.
pub fn per_patient_breakdown(
    predictions: &[Prediction],
    gold: &[GoldAnnotation],
    chunks: &[Chunk],
) -> BTreeMap<String, PerConcept<ConfusionCounts>> {
    let mut by_patient: BTreeMap<&str, HashSet<&str>> = BTreeMap::new();
    for c in chunks {
        by_patient.entry(c.patient_id.as_str()).or_default().insert(c.chunk_id.as_str());
    }
    let index = GoldIndex::new(gold);
    let predicted: PerConcept<HashSet<&str>> = PerConcept::from_fn(|id| predicted_set(predictions, id));
    by_patient
        .into_iter()
        .map(|(patient, ids)| {
            let counts = PerConcept::from_fn(|id| index.confusion(&predicted[id], id, Some(&ids)));
            (patient.to_owned(), counts)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pred(id: &str, concept: ConceptId) -> Prediction {
        Prediction {
            chunk_id: id.into(),
            concept_id: concept,
            predicted: true,
            score: None,
        }
    }

    fn gold(id: &str, concept: ConceptId, relevant: bool) -> GoldAnnotation {
        GoldAnnotation {
            chunk_id: id.into(),
            concept_id: concept,
            relevant,
            annotator: None,
        }
    }

    const C: ConceptId = ConceptId::TumorStaging;

    #[test]
    fn hand_count() {
        let g: Vec<_> = (1..=8).map(|i| gold(&format!("c{i}"), C, i <= 4)).collect();
        let p: Vec<_> = ["c1", "c2", "c5", "c6"].iter().map(|id| pred(id, C)).collect();
        let c = compute_confusion(&p, &g, C);
        assert_eq!((c.tp, c.fp, c.fn_, c.tn, c.unjudged), (2, 2, 2, 2, 0));
        assert_eq!(c.precision(), Some(0.5));
        assert_eq!(c.recall(), Some(0.5));
        assert_eq!(c.f1(), Some(0.5));

        let exact: Vec<_> = (1..=4).map(|i| pred(&format!("c{i}"), C)).collect();
        let c = compute_confusion(&exact, &g, C);
        assert_eq!((c.precision(), c.recall()), (Some(1.0), Some(1.0)));

        let c = compute_confusion(&[], &g, C);
        assert_eq!(c.recall(), Some(0.0));
        assert_eq!(c.precision(), None);
        assert_eq!(c.f1(), None);
    }

    #[test]
    fn unjudged_predictions_are_excluded() {
        let g = vec![gold("a", C, true)];
        let p = vec![pred("a", C), pred("zz", C), pred("a", ConceptId::Scores)];
        let c = compute_confusion(&p, &g, C);
        assert_eq!((c.tp, c.fp, c.unjudged, c.judged()), (1, 0, 1, 1));
    }

    #[test]
    fn zero_recall_and_precision_leaves_f1_undefined() {
        let g = vec![gold("a", C, true), gold("b", C, false)];
        let c = compute_confusion(&[pred("b", C)], &g, C);
        assert_eq!((c.precision(), c.recall(), c.f1()), (Some(0.0), Some(0.0), None));
    }

    #[test]
    fn report_macro_average_skips_undefined() {
        let mut g = vec![gold("a", C, true), gold("b", C, false)];
        g.push(gold("a", ConceptId::Scores, false));
        let p = vec![pred("a", C), pred("b", C)];
        let r = compute_report(&p, &g, "t", Regime::ClassifyAll, None).unwrap();
        assert_eq!(r.per_concept.len(), 13);
        assert_eq!(r.concept(C).precision, Some(0.5));
        // scores has a judgment but no positives on either side
        assert_eq!(r.concept(ConceptId::Scores).precision, None);
        assert_eq!(r.concept(ConceptId::Scores).recall, None);
        assert_eq!(r.overall.precision, Some(0.5));
        assert_eq!(r.overall.recall, Some(1.0));
    }

    #[test]
    fn report_errors() {
        assert!(compute_report(&[], &[], "t", Regime::TopK, Some(5)).is_err());
    }

    #[test]
    fn reference_macro_average_reproduces_overall_row() {
        for sys in reference::COMPARISON {
            let (p, r) = reference::macro_average(&sys);
            assert!((p - sys.overall.0).abs() <= 0.01, "{}: {p}", sys.name);
            assert!((r - sys.overall.1).abs() <= 0.01, "{}: {r}", sys.name);
        }
    }

    #[test]
    fn per_patient_split() {
        let chunks: Vec<Chunk> = [("a", "p1"), ("b", "p2")]
            .iter()
            .map(|(id, p)| Chunk {
                chunk_id: id.to_string(),
                patient_id: p.to_string(),
                note_id: "n".into(),
                start_offset: 0,
                end_offset: 0,
                text: String::new(),
            })
            .collect();
        let g = vec![gold("a", C, true), gold("b", C, true)];
        let out = per_patient_breakdown(&[pred("a", C)], &g, &chunks);
        assert_eq!(out["p1"][C].tp, 1);
        assert_eq!(out["p2"][C].fn_, 1);
    }

    #[test]
    fn gold_duplicates_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.jsonl");
        assert!(write_gold(&path, &[gold("a", C, true), gold("a", C, false)]).is_err());
        write_gold(&path, &[gold("a", C, true)]).unwrap();
        assert_eq!(load_gold(&path).unwrap().len(), 1);
    }
}
