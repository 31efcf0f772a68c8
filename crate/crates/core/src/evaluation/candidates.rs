use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tracing::warn;

use crate::concepts::{ConceptId, QuerySets};
use crate::corpus::Chunk;
use crate::embedding::Embedder;
use crate::error::Result;
use crate::retrieval::{build_index, concept_distances, embed_queries, ranking_order, RankedEntry};

pub const SIMILAR_PER_CONCEPT: usize = 2;
pub const RANDOM_PER_CONCEPT: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    Similar,
    Random,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldCandidate {
    pub patient_id: String,
    pub concept_id: ConceptId,
    pub chunk_id: String,
    pub selection: Selection,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GoldCandidates {
    pub candidates: Vec<GoldCandidate>,
    /// Patients with too few chunks, with their chunk counts.
    pub skipped: Vec<(String, usize)>,
}

/// Per patient (sorted by id) and concept: the two chunks nearest the
/// concept's queries, then two distinct others drawn uniformly from a
/// generator seeded with `seed`.
pub fn build_gold_candidates(chunks: &[Chunk], query_sets: &QuerySets, embedder: &dyn Embedder, seed: u64) -> Result<GoldCandidates> {
    let needed = SIMILAR_PER_CONCEPT + RANDOM_PER_CONCEPT;
    let mut out = GoldCandidates::default();
    if chunks.is_empty() {
        return Ok(out);
    }
    let index = build_index(chunks, embedder)?;
    let mut distances = Vec::with_capacity(ConceptId::COUNT);
    for id in ConceptId::ALL {
        let queries = embed_queries(&query_sets[id], embedder)?;
        distances.push(concept_distances(&index, &queries)?);
    }

    let mut by_patient: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, c) in chunks.iter().enumerate() {
        by_patient.entry(c.patient_id.as_str()).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (patient, rows) in by_patient {
        if rows.len() < needed {
            warn!(patient, chunks = rows.len(), "patient skipped: fewer than {needed} chunks");
            out.skipped.push((patient.to_owned(), rows.len()));
            continue;
        }
        for id in ConceptId::ALL {
            let mut ranked: Vec<(usize, RankedEntry)> = rows
                .iter()
                .map(|&i| {
                    (
                        i,
                        RankedEntry {
                            chunk_id: chunks[i].chunk_id.clone(),
                            distance: distances[id.ordinal()][i],
                        },
                    )
                })
                .collect();
            ranked.sort_by(|a, b| ranking_order(&a.1, &b.1));
            let push = |out: &mut GoldCandidates, row: usize, selection| {
                out.candidates.push(GoldCandidate {
                    patient_id: patient.to_owned(),
                    concept_id: id,
                    chunk_id: chunks[row].chunk_id.clone(),
                    selection,
                });
            };
            for (row, _) in &ranked[..SIMILAR_PER_CONCEPT] {
                push(&mut out, *row, Selection::Similar);
            }
            let rest = &ranked[SIMILAR_PER_CONCEPT..];
            for pick in rand::seq::index::sample(&mut rng, rest.len(), RANDOM_PER_CONCEPT) {
                push(&mut out, rest[pick].0, Selection::Random);
            }
        }
    }
    Ok(out)
}
