mod common;

use clinret::concepts::{ConceptId, QuerySet, Registry};
use clinret::corpus::{chunk_note, ChunkingConfig, PatientNote};
use clinret::embedding::{cosine_distance, Embedder, EmbeddingVector, LocalEmbedder};
use clinret::labeling::{regex_filter, self_verify, CotLabel, Provenance};
use clinret::llm::{MockLlm, PromptStage, ScriptEntry};
use clinret::prompts::PromptTemplates;
use clinret::retrieval::{assign_chunks_to_concept, build_index, concept_distances, embed_queries};
use clinret::scoring::{classify_corpus, LexicalScorer};
use common::{chunk, reply};
use proptest::prelude::*;

fn vector(dim: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-100.0f64..100.0, dim).prop_filter("non-zero", |v| v.iter().any(|x| x.abs() > 1e-6))
}

proptest! {
    #[test]
    fn cosine_symmetric_scale_invariant_bounded((a, b) in (1usize..32).prop_flat_map(|d| (vector(d), vector(d))), scale in 0.001f64..1000.0) {
        let va = EmbeddingVector::new(a.clone()).unwrap();
        let vb = EmbeddingVector::new(b).unwrap();
        let d = cosine_distance(&va, &vb).unwrap();
        prop_assert_eq!(d, cosine_distance(&vb, &va).unwrap());
        prop_assert!((0.0..=2.0).contains(&d));
        let scaled = EmbeddingVector::new(a.iter().map(|x| x * scale).collect()).unwrap();
        prop_assert!((cosine_distance(&scaled, &vb).unwrap() - d).abs() < 1e-9);
    }
}

fn note_text() -> impl Strategy<Value = String> {
    let piece = prop_oneof![
        "[a-z]{1,12}",
        Just(" ".to_owned()),
        Just(". ".to_owned()),
        Just("\n".to_owned()),
        Just("\n\n".to_owned()),
        Just("é".to_owned()),
        Just("日本".to_owned()),
        Just("!? ".to_owned()),
        Just("\t \n  \n".to_owned()),
    ];
    prop::collection::vec(piece, 0..120).prop_map(|v| v.concat())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn chunker_covers_every_non_whitespace_byte_once(text in note_text(), max in 8usize..200, min_frac in 0usize..4) {
        let cfg = ChunkingConfig { max_chunk_chars: max, min_chunk_chars: max * min_frac / 8, ..ChunkingConfig::default() };
        let note = PatientNote { patient_id: "p".into(), note_id: "n".into(), timestamp: None, text: text.clone() };
        let chunks = chunk_note(&note, &cfg.build().unwrap());
        let mut covered = vec![0u8; text.len()];
        let mut prev_end = 0;
        for c in &chunks {
            prop_assert_eq!(&text[c.start_offset..c.end_offset], c.text.as_str());
            prop_assert!(c.text.chars().count() <= max);
            prop_assert!(c.start_offset >= prev_end);
            prev_end = c.end_offset;
            for b in &mut covered[c.start_offset..c.end_offset] { *b += 1; }
        }
        for (i, ch) in text.char_indices() {
            if !ch.is_whitespace() {
                prop_assert_eq!(covered[i], 1, "byte {} ({:?})", i, ch);
            }
        }
    }
}

fn small_corpus() -> impl Strategy<Value = (Vec<String>, Vec<String>)> {
    let word = prop::sample::select(vec!["stage", "ecog", "tumor", "biopsy", "mother", "cancer", "scan", "iv", "grade", "plan", "ct"]);
    let text = prop::collection::vec(word, 1..8).prop_map(|w| w.join(" "));
    (prop::collection::vec(text.clone(), 1..30), prop::collection::vec(text, 2..8))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn ranking_ignores_query_order_and_more_queries_never_increase_distance((texts, queries) in small_corpus(), k in 1usize..40, rot in 0usize..8) {
        let e = LocalEmbedder::new(32).unwrap();
        let chunks: Vec<_> = texts.iter().enumerate().map(|(i, t)| chunk(&format!("n{i}#0"), "p", t)).collect();
        let idx = build_index(&chunks, &e).unwrap();
        let qs = QuerySet { concept_id: ConceptId::Scores, queries: queries.clone() };
        let mut rotated = queries.clone();
        let r = rot % rotated.len();
        rotated.rotate_left(r);
        let qs_rot = QuerySet { concept_id: ConceptId::Scores, queries: rotated };
        prop_assert_eq!(
            assign_chunks_to_concept(&idx, &qs, &e, k).unwrap(),
            assign_chunks_to_concept(&idx, &qs_rot, &e, k).unwrap()
        );

        let fewer = QuerySet { concept_id: ConceptId::Scores, queries: queries[..queries.len() - 1].to_vec() };
        let d_all = concept_distances(&idx, &embed_queries(&qs, &e).unwrap()).unwrap();
        let d_fewer = concept_distances(&idx, &embed_queries(&fewer, &e).unwrap()).unwrap();
        for (a, b) in d_all.iter().zip(&d_fewer) {
            prop_assert!(a <= b);
        }
    }
}

fn sentence() -> impl Strategy<Value = &'static str> {
    prop::sample::select(vec![
        "Staging: T2N1M0, stage IIB.",
        "ECOG performance status is 1.",
        "Vital signs within normal limits.",
        "Mentions stage fright before public speaking.",
        "No evidence of metastatic disease.",
        "Underwent right hemicolectomy last spring.",
        "Lives at home with spouse.",
        "CT chest, abdomen and pelvis ordered.",
    ])
}

fn term() -> impl Strategy<Value = String> {
    prop::sample::select(vec!["stage IIB", "ECOG", "hemicolectomy", "unicorn", "", "CT chest", "stage"]).prop_map(str::to_owned)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn filter_and_verify_are_directional_and_idempotent(
        sentences in prop::collection::vec(sentence(), 1..5),
        concept_ord in 0usize..13,
        initial in any::<bool>(),
        terms in prop::collection::vec(term(), 0..3),
        provenance in prop::sample::select(vec![Provenance::Raw, Provenance::RegexFiltered, Provenance::SelfVerified]),
        confirm in any::<bool>(),
    ) {
        let reg = Registry::builtin();
        let concept = ConceptId::ALL[concept_ord];
        let def = reg.get(concept);
        let c = chunk("n#0", "p", &sentences.join(" "));
        let label = CotLabel {
            chunk_id: c.chunk_id.clone(),
            concept_id: concept,
            reasoning: "r".into(),
            evidence_terms: terms,
            label: initial,
            provenance,
        };
        let filtered = regex_filter(&label, &c, def);
        prop_assert!(!(filtered.label && !label.label), "regex_filter flipped false to true");
        if filtered.label {
            prop_assert!(!filtered.evidence_terms.is_empty());
        }
        prop_assert_eq!(&regex_filter(&filtered, &c, def), &filtered);

        let mock = MockLlm::new(vec![ScriptEntry::for_pair(PromptStage::Verify, concept, "n#0", reply(confirm, &[]))]).unwrap();
        let t = PromptTemplates::default();
        let verified = self_verify(&label, &c, def, &mock, &t);
        prop_assert!(!(label.label && !verified.label), "self_verify flipped true to false");
        let calls = mock.calls();
        prop_assert_eq!(&self_verify(&verified, &c, def, &mock, &t), &verified);
        // a changed label is never re-queried
        if verified != label {
            prop_assert_eq!(mock.calls(), calls);
        }
    }

    #[test]
    fn predictions_cover_every_chunk_and_concept(texts in prop::collection::vec(prop::sample::select(vec!["ECOG 1", "", "stage IV", "plan"]), 0..20)) {
        let chunks: Vec<_> = texts.iter().enumerate().map(|(i, t)| chunk(&format!("n{i}#0"), "p", t)).collect();
        let s = LexicalScorer::new(Registry::builtin());
        let preds = classify_corpus(&s, &chunks, 2).unwrap();
        prop_assert_eq!(preds.len(), chunks.len() * 13);
        for (i, p) in preds.iter().enumerate() {
            prop_assert_eq!(&p.chunk_id, &chunks[i / 13].chunk_id);
            prop_assert_eq!(p.concept_id, ConceptId::ALL[i % 13]);
        }
    }
}

#[test]
fn local_embedder_is_deterministic() {
    let e = LocalEmbedder::new(64).unwrap();
    assert_eq!(e.embed("Stage IIB").unwrap(), e.embed("stage iib").unwrap());
    assert_eq!(e.embed_batch(&["a", "bb"]).unwrap(), vec![e.embed("a").unwrap(), e.embed("bb").unwrap()]);
}
