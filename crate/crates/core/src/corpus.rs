//! Patient notes and their decomposition into offset-addressed chunks.

use std::collections::HashSet;
use std::path::Path;

use rayon::prelude::*;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{read_jsonl, write_jsonl};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatientNote {
    pub patient_id: String,
    pub note_id: String,
    #[serde(default)]
    pub timestamp: Option<String>,
    pub text: String,
}

/// A contiguous fragment of one note. `text` is exactly
/// `note.text[start_offset..end_offset]` (byte offsets).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Chunk {
    pub chunk_id: String,
    pub patient_id: String,
    pub note_id: String,
    pub start_offset: usize,
    pub end_offset: usize,
    pub text: String,
}

pub fn chunk_id(note_id: &str, ordinal: usize) -> String {
    format!("{note_id}#{ordinal}")
}

pub const BLANK_LINE: &str = r"\n\s*\n";
pub const SENTENCE_END: &str = r"[.!?]\s+";
pub const NEWLINE: &str = r"\n";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChunkingConfig {
    pub max_chunk_chars: usize,
    pub min_chunk_chars: usize,
    /// Boundary regexes in priority order. A fragment ends where a match
    /// ends; surrounding whitespace is trimmed from every fragment.
    pub separators: Vec<String>,
}

impl Default for ChunkingConfig {
    fn default() -> Self {
        Self {
            max_chunk_chars: 1000,
            min_chunk_chars: 50,
            separators: vec![BLANK_LINE.into(), SENTENCE_END.into(), NEWLINE.into()],
        }
    }
}

/// A validated [`ChunkingConfig`] with compiled separators.
#[derive(Debug, Clone)]
pub struct Chunker {
    max: usize,
    min: usize,
    separators: Vec<Regex>,
}

impl ChunkingConfig {
    pub fn build(&self) -> Result<Chunker> {
        if self.max_chunk_chars == 0 {
            return Err(Error::Config("max_chunk_chars must be positive".into()));
        }
        if self.min_chunk_chars >= self.max_chunk_chars {
            return Err(Error::Config(format!(
                "min_chunk_chars ({}) must be below max_chunk_chars ({})",
                self.min_chunk_chars, self.max_chunk_chars
            )));
        }
        if self.separators.is_empty() {
            return Err(Error::Config("at least one separator is required".into()));
        }
        let separators = self
            .separators
            .iter()
            .map(|s| Regex::new(s).map_err(|e| Error::Config(format!("invalid separator {s:?}: {e}"))))
            .collect::<Result<_>>()?;
        Ok(Chunker {
            max: self.max_chunk_chars,
            min: self.min_chunk_chars,
            separators,
        })
    }
}

fn char_len(s: &str) -> usize {
    s.chars().count()
}

/// Narrows `[start, end)` so it neither begins nor ends with whitespace.
fn trim_range(text: &str, start: usize, end: usize) -> (usize, usize) {
    let slice = &text[start..end];
    let lead = slice.len() - slice.trim_start().len();
    let trail = slice.len() - slice.trim_end().len();
    if lead == slice.len() {
        return (start, start);
    }
    (start + lead, end - trail)
}

impl Chunker {
    /// Splits `text` into trimmed, non-overlapping byte ranges.
    pub fn split(&self, text: &str) -> Vec<(usize, usize)> {
        let mut fragments = Vec::new();
        self.split_range(text, 0, text.len(), 0, &mut fragments);
        self.merge_short(text, fragments)
    }

    fn split_range(&self, text: &str, start: usize, end: usize, level: usize, out: &mut Vec<(usize, usize)>) {
        let (start, end) = trim_range(text, start, end);
        if start == end {
            return;
        }
        if char_len(&text[start..end]) <= self.max {
            out.push((start, end));
            return;
        }
        for (lev, sep) in self.separators.iter().enumerate().skip(level) {
            let mut points: Vec<usize> = sep
                .find_iter(&text[start..end])
                .map(|m| start + m.end())
                .filter(|&p| p > start && p < end)
                .collect();
            points.dedup();
            if points.is_empty() {
                continue;
            }
            let mut prev = start;
            for p in points.into_iter().chain(std::iter::once(end)) {
                self.split_range(text, prev, p, lev + 1, out);
                prev = p;
            }
            return;
        }
        self.hard_split(text, start, end, out);
    }

    fn hard_split(&self, text: &str, start: usize, end: usize, out: &mut Vec<(usize, usize)>) {
        let mut piece_start = start;
        let mut count = 0;
        for (i, _) in text[start..end].char_indices() {
            if count == self.max {
                let (s, e) = trim_range(text, piece_start, start + i);
                if s < e {
                    out.push((s, e));
                }
                piece_start = start + i;
                count = 0;
            }
            count += 1;
        }
        let (s, e) = trim_range(text, piece_start, end);
        if s < e {
            out.push((s, e));
        }
    }

    /// Merges fragments shorter than `min` into their successor (or, for the
    /// last fragment, its predecessor) whenever the merged span fits `max`.
    fn merge_short(&self, text: &str, fragments: Vec<(usize, usize)>) -> Vec<(usize, usize)> {
        let fits = |s: usize, e: usize| char_len(&text[s..e]) <= self.max;
        let short = |s: usize, e: usize| char_len(&text[s..e]) < self.min;
        let mut merged: Vec<(usize, usize)> = Vec::with_capacity(fragments.len());
        let mut iter = fragments.into_iter().peekable();
        while let Some((s, mut e)) = iter.next() {
            while short(s, e) {
                match iter.peek() {
                    Some(&(_, next_end)) if fits(s, next_end) => {
                        e = next_end;
                        iter.next();
                    }
                    _ => break,
                }
            }
            merged.push((s, e));
        }
        if merged.len() >= 2 {
            let (ls, le) = merged[merged.len() - 1];
            let (ps, _) = merged[merged.len() - 2];
            if short(ls, le) && fits(ps, le) {
                merged.pop();
                merged.last_mut().expect("len >= 2").1 = le;
            }
        }
        merged
    }
}

pub fn chunk_note(note: &PatientNote, chunker: &Chunker) -> Vec<Chunk> {
    chunker
        .split(&note.text)
        .into_iter()
        .enumerate()
        .map(|(ordinal, (start, end))| Chunk {
            chunk_id: chunk_id(&note.note_id, ordinal),
            patient_id: note.patient_id.clone(),
            note_id: note.note_id.clone(),
            start_offset: start,
            end_offset: end,
            text: note.text[start..end].to_owned(),
        })
        .collect()
}

/// Chunks every note, preserving note order.
pub fn chunk_corpus(notes: &[PatientNote], chunker: &Chunker) -> Result<Vec<Chunk>> {
    let per_note: Vec<Vec<Chunk>> = notes.par_iter().map(|n| chunk_note(n, chunker)).collect();
    let chunks: Vec<Chunk> = per_note.into_iter().flatten().collect();
    let mut seen = HashSet::with_capacity(chunks.len());
    for c in &chunks {
        if !seen.insert(c.chunk_id.as_str()) {
            return Err(Error::validation(format!("duplicate chunk id {}", c.chunk_id)));
        }
    }
    Ok(chunks)
}

fn valid_timestamp(ts: &str) -> bool {
    use chrono::{DateTime, NaiveDate, NaiveDateTime};
    NaiveDate::parse_from_str(ts, "%Y-%m-%d").is_ok()
        || DateTime::parse_from_rfc3339(ts).is_ok()
        || NaiveDateTime::parse_from_str(ts, "%Y-%m-%dT%H:%M:%S").is_ok()
}

/// Reads notes from a JSON Lines file, one note per line.
pub fn ingest_notes(path: &Path) -> Result<Vec<PatientNote>> {
    let notes: Vec<PatientNote> = read_jsonl(path)?;
    let mut seen = HashSet::with_capacity(notes.len());
    for note in &notes {
        if !seen.insert(note.note_id.as_str()) {
            return Err(Error::validation(format!("{}: duplicate note_id {:?}", path.display(), note.note_id)));
        }
        if let Some(ts) = &note.timestamp {
            if !valid_timestamp(ts) {
                return Err(Error::validation(format!(
                    "{}: note {:?} has invalid timestamp {ts:?}",
                    path.display(),
                    note.note_id
                )));
            }
        }
    }
    Ok(notes)
}

pub fn write_notes(path: &Path, notes: &[PatientNote]) -> Result<()> {
    write_jsonl(path, notes)
}

pub fn read_chunks(path: &Path) -> Result<Vec<Chunk>> {
    let chunks: Vec<Chunk> = read_jsonl(path)?;
    let mut seen = HashSet::with_capacity(chunks.len());
    for c in &chunks {
        if !seen.insert(c.chunk_id.as_str()) {
            return Err(Error::validation(format!("{}: duplicate chunk id {}", path.display(), c.chunk_id)));
        }
        if c.end_offset <= c.start_offset || c.end_offset - c.start_offset != c.text.len() {
            return Err(Error::validation(format!(
                "{}: chunk {} has offsets inconsistent with its text",
                path.display(),
                c.chunk_id
            )));
        }
    }
    Ok(chunks)
}

pub fn write_chunks(path: &Path, chunks: &[Chunk]) -> Result<()> {
    write_jsonl(path, chunks)
}
