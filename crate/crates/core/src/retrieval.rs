//! Exact-scan chunk index, per-concept ranking with min-aggregation over
//! expanded queries, and candidate harvesting.

use std::cmp::Ordering;
use std::collections::HashSet;
use std::io::{Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::concepts::{ConceptId, QuerySet, QuerySets};
use crate::corpus::Chunk;
use crate::embedding::{cosine_distance, Embedder, EmbeddingVector};
use crate::error::{Error, Result};
use crate::io::{read_jsonl, write_atomic_with, write_jsonl};

const CACHE_MAGIC: &[u8; 8] = b"CLRIDX01";

#[derive(Debug, Clone, PartialEq)]
pub struct IndexEntry {
    pub chunk_id: String,
    pub patient_id: String,
    pub note_id: String,
    pub vector: EmbeddingVector,
}

/// Embedded chunk collection. Vectors are stored at `f32` precision so a
/// cached index ranks identically to a freshly built one.
#[derive(Debug, Clone, PartialEq)]
pub struct ChunkIndex {
    entries: Vec<IndexEntry>,
    dim: usize,
    fingerprint: String,
    corpus_digest: [u8; 32],
}

/// SHA-256 over chunk ids and texts, in order.
pub fn corpus_digest(chunks: &[Chunk]) -> [u8; 32] {
    let mut h = Sha256::new();
    for c in chunks {
        h.update(c.chunk_id.as_bytes());
        h.update([0]);
        h.update(c.text.as_bytes());
        h.update([0]);
    }
    h.finalize().into()
}

pub fn build_index(chunks: &[Chunk], embedder: &dyn Embedder) -> Result<ChunkIndex> {
    if chunks.is_empty() {
        return Err(Error::validation("cannot build an index over zero chunks"));
    }
    let mut seen = HashSet::with_capacity(chunks.len());
    for c in chunks {
        if !seen.insert(c.chunk_id.as_str()) {
            return Err(Error::validation(format!("duplicate chunk id {}", c.chunk_id)));
        }
    }
    let texts: Vec<&str> = chunks.iter().map(|c| c.text.as_str()).collect();
    let vectors = embedder.embed_batch(&texts)?;
    if vectors.len() != chunks.len() {
        return Err(Error::remote(format!("embedder returned {} vectors for {} chunks", vectors.len(), chunks.len())));
    }
    let dim = embedder.dim();
    let entries = chunks
        .iter()
        .zip(vectors)
        .map(|(c, v)| {
            if v.dim() != dim {
                return Err(Error::remote(format!("chunk {} embedded with dim {} (expected {dim})", c.chunk_id, v.dim())));
            }
            Ok(IndexEntry {
                chunk_id: c.chunk_id.clone(),
                patient_id: c.patient_id.clone(),
                note_id: c.note_id.clone(),
                vector: v.quantized()?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ChunkIndex {
        entries,
        dim,
        fingerprint: embedder.fingerprint(),
        corpus_digest: corpus_digest(chunks),
    })
}

fn put_str(w: &mut dyn Write, s: &str) -> std::io::Result<()> {
    w.write_all(&(s.len() as u32).to_le_bytes())?;
    w.write_all(s.as_bytes())
}

fn read_u32(r: &mut dyn Read) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_str(r: &mut dyn Read) -> std::io::Result<String> {
    let len = read_u32(r)? as usize;
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    String::from_utf8(buf).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
}

impl ChunkIndex {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn corpus_digest(&self) -> &[u8; 32] {
        &self.corpus_digest
    }

    pub fn entries(&self) -> &[IndexEntry] {
        &self.entries
    }

    /// Writes the cache file: magic, dim, fingerprint, corpus digest, count,
    /// then per entry the three ids and `dim` little-endian `f32`s.
    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic_with(path, |w| {
            w.write_all(CACHE_MAGIC)?;
            w.write_all(&(self.dim as u32).to_le_bytes())?;
            put_str(w, &self.fingerprint)?;
            w.write_all(&self.corpus_digest)?;
            w.write_all(&(self.entries.len() as u64).to_le_bytes())?;
            for e in &self.entries {
                put_str(w, &e.chunk_id)?;
                put_str(w, &e.patient_id)?;
                put_str(w, &e.note_id)?;
                for &v in e.vector.values() {
                    w.write_all(&(v as f32).to_le_bytes())?;
                }
            }
            Ok(())
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = std::io::BufReader::new(file);
        let bad = |msg: &str| Error::validation(format!("{}: corrupt index cache: {msg}", path.display()));
        let io = |e: std::io::Error| Error::io(path, e);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(io)?;
        if &magic != CACHE_MAGIC {
            return Err(bad("bad magic"));
        }
        let dim = read_u32(&mut r).map_err(io)? as usize;
        let fingerprint = read_str(&mut r).map_err(io)?;
        let mut corpus_digest = [0u8; 32];
        r.read_exact(&mut corpus_digest).map_err(io)?;
        let mut count = [0u8; 8];
        r.read_exact(&mut count).map_err(io)?;
        let count = u64::from_le_bytes(count) as usize;
        let mut entries = Vec::with_capacity(count.min(1 << 20));
        let mut buf = vec![0u8; dim * 4];
        for _ in 0..count {
            let chunk_id = read_str(&mut r).map_err(io)?;
            let patient_id = read_str(&mut r).map_err(io)?;
            let note_id = read_str(&mut r).map_err(io)?;
            r.read_exact(&mut buf).map_err(io)?;
            let values = buf
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
                .collect();
            entries.push(IndexEntry {
                chunk_id,
                patient_id,
                note_id,
                vector: EmbeddingVector::new(values).map_err(|_| bad("zero vector"))?,
            });
        }
        let mut rest = [0u8; 1];
        if r.read(&mut rest).map_err(io)? != 0 {
            return Err(bad("trailing bytes"));
        }
        Ok(Self {
            entries,
            dim,
            fingerprint,
            corpus_digest,
        })
    }

    /// Loads a cache and rejects it unless it was built by the same embedder
    /// over the same chunks.
    pub fn load_fresh(path: &Path, embedder: &dyn Embedder, chunks: &[Chunk]) -> Result<Self> {
        let index = Self::load(path)?;
        if index.fingerprint != embedder.fingerprint() {
            return Err(Error::validation(format!(
                "{}: stale index cache (built with {:?}, current embedder {:?})",
                path.display(),
                index.fingerprint,
                embedder.fingerprint()
            )));
        }
        if index.corpus_digest != corpus_digest(chunks) {
            return Err(Error::validation(format!("{}: stale index cache (chunks changed)", path.display())));
        }
        Ok(index)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedEntry {
    pub chunk_id: String,
    pub distance: f64,
}

/// Chunks ordered by ascending concept distance, ties by chunk id.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedList {
    pub concept_id: ConceptId,
    pub entries: Vec<RankedEntry>,
}

pub fn ranking_order(a: &RankedEntry, b: &RankedEntry) -> Ordering {
    a.distance.total_cmp(&b.distance).then_with(|| a.chunk_id.cmp(&b.chunk_id))
}

pub fn embed_queries(query_set: &QuerySet, embedder: &dyn Embedder) -> Result<Vec<EmbeddingVector>> {
    if query_set.is_empty() {
        return Err(Error::validation(format!("query set for {} is empty", query_set.concept_id)));
    }
    let texts: Vec<&str> = query_set.queries.iter().map(String::as_str).collect();
    embedder.embed_batch(&texts)
}

/// Concept distance of every index entry (in index order): the minimum
/// cosine distance to any of the query vectors.
pub fn concept_distances(index: &ChunkIndex, queries: &[EmbeddingVector]) -> Result<Vec<f64>> {
    if queries.is_empty() {
        return Err(Error::validation("at least one query vector is required"));
    }
    index
        .entries
        .par_iter()
        .map(|e| {
            queries
                .iter()
                .map(|q| cosine_distance(q, &e.vector))
                .try_fold(f64::INFINITY, |best, d| d.map(|d| best.min(d)))
        })
        .collect()
}

/// Ranks the whole index against pre-embedded queries and keeps the top `k`.
pub fn rank_with_vectors(index: &ChunkIndex, concept_id: ConceptId, queries: &[EmbeddingVector], k: usize) -> Result<RankedList> {
    if index.is_empty() {
        return Err(Error::validation("index is empty"));
    }
    if k == 0 {
        return Err(Error::validation("k must be at least 1"));
    }
    let distances = concept_distances(index, queries)?;
    let mut entries: Vec<RankedEntry> = index
        .entries
        .iter()
        .zip(distances)
        .map(|(e, distance)| RankedEntry {
            chunk_id: e.chunk_id.clone(),
            distance,
        })
        .collect();
    entries.par_sort_unstable_by(ranking_order);
    entries.truncate(k);
    Ok(RankedList { concept_id, entries })
}

pub fn assign_chunks_to_concept(index: &ChunkIndex, query_set: &QuerySet, embedder: &dyn Embedder, k: usize) -> Result<RankedList> {
    if index.is_empty() {
        return Err(Error::validation("index is empty"));
    }
    let queries = embed_queries(query_set, embedder)?;
    rank_with_vectors(index, query_set.concept_id, &queries, k)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub concept_id: ConceptId,
    pub chunk_id: String,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    pub per_concept_k: usize,
    pub pairs: Vec<Candidate>,
}

impl CandidateSet {
    pub fn save(&self, path: &Path) -> Result<()> {
        write_jsonl(path, &self.pairs)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let pairs: Vec<Candidate> = read_jsonl(path)?;
        let mut per_concept = [0usize; ConceptId::COUNT];
        for p in &pairs {
            per_concept[p.concept_id.ordinal()] += 1;
        }
        Ok(Self {
            per_concept_k: per_concept.into_iter().max().unwrap_or(0),
            pairs,
        })
    }
}

/// The top `per_concept_k` chunks for every concept, in concept enumeration
/// order. A chunk may appear under several concepts.
pub fn harvest_candidates(index: &ChunkIndex, query_sets: &QuerySets, embedder: &dyn Embedder, per_concept_k: usize) -> Result<CandidateSet> {
    if per_concept_k == 0 {
        return Err(Error::validation("per_concept_k must be at least 1"));
    }
    if index.is_empty() {
        return Err(Error::validation("index is empty"));
    }
    let mut pairs = Vec::new();
    for concept in ConceptId::ALL {
        let ranked = assign_chunks_to_concept(index, &query_sets[concept], embedder, per_concept_k)?;
        pairs.extend(ranked.entries.into_iter().map(|e| Candidate {
            concept_id: concept,
            chunk_id: e.chunk_id,
            distance: e.distance,
        }));
    }
    Ok(CandidateSet { per_concept_k, pairs })
}

/// Nested prefixes of `ranked` for each cutoff, clamped to the list length.
pub fn k_sweep_rank<'a>(ranked: &'a RankedList, ks: &[usize]) -> Vec<(usize, &'a [RankedEntry])> {
    ks.iter().map(|&k| (k, &ranked.entries[..k.min(ranked.entries.len())])).collect()
}
