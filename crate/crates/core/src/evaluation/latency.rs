use std::collections::BTreeMap;
use std::sync::atomic::{AtomicBool, Ordering};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::corpus::Chunk;
use crate::error::{Error, Result};
use crate::parallel::bounded_map;
use crate::scoring::ConceptScorer;

static BENCH_RUNNING: AtomicBool = AtomicBool::new(false);

struct BenchGuard;

impl BenchGuard {
    fn acquire() -> Result<Self> {
        if BENCH_RUNNING.swap(true, Ordering::SeqCst) {
            return Err(Error::validation("another latency benchmark is running in this process"));
        }
        Ok(Self)
    }
}

impl Drop for BenchGuard {
    fn drop(&mut self) {
        BENCH_RUNNING.store(false, Ordering::SeqCst);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencySample {
    pub patient_id: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub scorer: String,
    pub samples: Vec<LatencySample>,
    pub mean: f64,
    pub p50: f64,
    pub p95: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f1: Option<f64>,
}

impl LatencyReport {
    pub fn patients(&self) -> usize {
        self.samples.len()
    }

    pub fn with_f1(mut self, f1: Option<f64>) -> Self {
        self.f1 = f1;
        self
    }
}

/// Nearest-rank percentile of pre-sorted values, `q` in (0, 1].
pub fn nearest_rank(sorted: &[f64], q: f64) -> f64 {
    let rank = (q * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

/// Wall-clock time to classify all of each patient's chunks, patients in
/// id order. `parallel` must match the production setting being measured.
pub fn bench_latency(scorer: &dyn ConceptScorer, chunks: &[Chunk], parallel: usize) -> Result<LatencyReport> {
    let _guard = BenchGuard::acquire()?;
    let mut by_patient: BTreeMap<&str, Vec<&Chunk>> = BTreeMap::new();
    for c in chunks {
        by_patient.entry(c.patient_id.as_str()).or_default().push(c);
    }
    if by_patient.is_empty() {
        return Err(Error::validation("latency benchmark needs at least one patient"));
    }
    let mut samples = Vec::with_capacity(by_patient.len());
    for (patient, rows) in by_patient {
        let start = Instant::now();
        bounded_map(&rows, parallel, |c| scorer.classify(&c.text))?;
        samples.push(LatencySample {
            patient_id: patient.to_owned(),
            seconds: start.elapsed().as_secs_f64(),
        });
    }
    let mut sorted: Vec<f64> = samples.iter().map(|s| s.seconds).collect();
    sorted.sort_by(f64::total_cmp);
    Ok(LatencyReport {
        scorer: scorer.info().name,
        mean: sorted.iter().sum::<f64>() / sorted.len() as f64,
        p50: nearest_rank(&sorted, 0.50),
        p95: nearest_rank(&sorted, 0.95),
        samples,
        f1: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::concepts::Registry;
    use crate::scoring::LexicalScorer;

    #[test]
    fn nearest_rank_values() {
        let v: Vec<f64> = (1..=20).map(f64::from).collect();
        assert_eq!(nearest_rank(&v, 0.5), 10.0);
        assert_eq!(nearest_rank(&v, 0.95), 19.0);
        assert_eq!(nearest_rank(&[3.0], 0.95), 3.0);
    }

    #[test]
    fn lexical_bench_shape() {
        let chunks: Vec<Chunk> = (0..20)
            .flat_map(|p| {
                (0..3).map(move |i| Chunk {
                    chunk_id: format!("p{p:02}#{i}"),
                    patient_id: format!("p{p:02}"),
                    note_id: format!("p{p:02}"),
                    start_offset: 0,
                    end_offset: 0,
                    text: "ECOG 1, stage II, CT chest".into(),
                })
            })
            .collect();
        let r = bench_latency(&LexicalScorer::new(Registry::builtin()), &chunks, 1).unwrap();
        assert_eq!(r.patients(), 20);
        assert!(r.p50 <= r.p95 && r.mean >= 0.0);
        assert_eq!(r.scorer, "lexical");
        assert!(bench_latency(&LexicalScorer::new(Registry::builtin()), &[], 1).is_err());
    }
}
