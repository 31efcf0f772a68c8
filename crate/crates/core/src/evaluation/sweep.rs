use serde::{Deserialize, Serialize};

use super::{macro_average, ConceptMetrics, GoldIndex, GoldAnnotation, Overall};
use crate::concepts::ConceptId;
use crate::error::{Error, Result};
use crate::retrieval::RankedList;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub k: usize,
    pub per_concept: Vec<ConceptMetrics>,
    pub overall: Overall,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub scorer: String,
    pub points: Vec<SweepPoint>,
}

/// Metrics at each prefix cutoff of every concept's ranking. Concepts
/// without a ranked list are reported with no positives.
pub fn k_sweep_eval(ranked: &[RankedList], gold: &[GoldAnnotation], ks: &[usize], scorer: &str) -> Result<SweepReport> {
    if ks.is_empty() {
        return Err(Error::validation("at least one k is required"));
    }
    if ks[0] == 0 || ks.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::validation(format!("k values must be positive and strictly ascending, got {ks:?}")));
    }
    let index = GoldIndex::new(gold);
    let points = ks
        .iter()
        .map(|&k| {
            let per_concept: Vec<ConceptMetrics> = ConceptId::ALL
                .into_iter()
                .map(|id| {
                    let prefix = ranked
                        .iter()
                        .filter(|l| l.concept_id == id)
                        .flat_map(|l| l.entries.iter().take(k).map(|e| e.chunk_id.as_str()))
                        .collect();
                    ConceptMetrics::from_counts(id, index.confusion(&prefix, id, None))
                })
                .collect();
            let overall = macro_average(&per_concept);
            SweepPoint { k, per_concept, overall }
        })
        .collect();
    Ok(SweepReport {
        scorer: scorer.to_owned(),
        points,
    })
}
