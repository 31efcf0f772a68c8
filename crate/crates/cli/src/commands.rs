use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clinret::concepts::{expand_queries, query_sets_to_records};
use clinret::corpus::{chunk_corpus, ingest_notes, read_chunks, write_chunks, write_notes};
use clinret::embedding::Embedder;
use clinret::evaluation::{
    bench_latency, build_gold_candidates, compute_report, k_sweep_eval, load_gold, per_patient_breakdown, predictions_from_ranked,
    render_comparison, render_latency, render_latency_samples, render_sweep, write_comparison, write_gold, LatencyReport, MetricsReport,
    Regime,
};
use clinret::io::{write_atomic, write_jsonl};
use clinret::labeling::{emit_training_set, read_labels, run_labeling, write_labels, EmitMode, LabelingOptions, Provenance};
use clinret::llm::{HttpLlm, LlmClient, MockLlm};
use clinret::retrieval::{build_index, harvest_candidates, rank_with_vectors, embed_queries, CandidateSet, ChunkIndex, RankedList};
use clinret::scoring::{classify_corpus, read_predictions, write_predictions, ConceptScorer, ExternalScorer, LexicalScorer, ScorerInfo};
use clinret::synth::{generate_corpus, read_truth, truth_to_gold, write_truth};
use clinret::{ConceptId, Error, Result};
use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::{Command, EmitModeArg, LlmArgs, ScorerChoice};

pub struct Context {
    pub cfg: PipelineConfig,
    pub dry_run: bool,
    pub output: Option<PathBuf>,
}

impl Context {
    fn out(&self, default: PathBuf) -> PathBuf {
        self.output.clone().unwrap_or(default)
    }
}

/// What a stage reads and writes; printed verbatim by `--dry-run`.
struct Plan {
    stage: &'static str,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    notes: Vec<String>,
}

impl Plan {
    fn new(stage: &'static str) -> Self {
        Self {
            stage,
            inputs: Vec::new(),
            outputs: Vec::new(),
            notes: Vec::new(),
        }
    }

    fn input(mut self, p: &Path) -> Self {
        self.inputs.push(p.to_path_buf());
        self
    }

    fn output(mut self, p: &Path) -> Self {
        self.outputs.push(p.to_path_buf());
        self
    }

    fn note(mut self, n: impl Into<String>) -> Self {
        self.notes.push(n.into());
        self
    }

    fn render(&self) -> String {
        let mut s = format!("plan: {}\n", self.stage);
        for p in &self.inputs {
            let _ = writeln!(s, "  read   {}", p.display());
        }
        for p in &self.outputs {
            let _ = writeln!(s, "  write  {}", p.display());
        }
        for n in &self.notes {
            let _ = writeln!(s, "  note   {n}");
        }
        s
    }

    /// Prints the plan on a dry run (returning `false`), otherwise checks
    /// that every input exists.
    fn start(&self, ctx: &Context) -> Result<bool> {
        if ctx.dry_run {
            print!("{}", self.render());
            return Ok(false);
        }
        for p in &self.inputs {
            if !p.exists() {
                return Err(Error::io(p, std::io::Error::new(std::io::ErrorKind::NotFound, "required input does not exist")));
            }
        }
        Ok(true)
    }
}

pub fn dispatch(ctx: &Context, command: &Command) -> Result<()> {
    match command {
        Command::Ingest { input } => ingest(ctx, input),
        Command::Chunk => chunk(ctx),
        Command::Expand(llm) => expand(ctx, llm),
        Command::Index => index(ctx),
        Command::Harvest {
            per_concept_k,
            gold_candidates,
        } => harvest(ctx, *per_concept_k, *gold_candidates),
        Command::Label(llm) => label(ctx, llm),
        Command::EmitTrain { mode } => emit_train(ctx, *mode),
        Command::Score(s) => score(ctx, &s.scorer),
        Command::Eval { k, baselines } => eval(ctx, *k, *baselines),
        Command::Sweep { ks } => sweep(ctx, ks),
        Command::Bench(s) => bench(ctx, &s.scorer),
        Command::Synth => synth(ctx),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| Error::validation(e.to_string()))?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::parse(path, e.line(), e.to_string()))
}

fn llm(ctx: &Context, args: &LlmArgs) -> Result<Box<dyn LlmClient>> {
    Ok(match &args.mock_llm {
        Some(p) => Box::new(MockLlm::from_file(p)?),
        None => Box::new(HttpLlm::from_env(&ctx.cfg.llm)?),
    })
}

fn scorer(ctx: &Context, choice: &ScorerChoice) -> Result<Box<dyn ConceptScorer>> {
    Ok(match choice {
        ScorerChoice::Lexical => Box::new(LexicalScorer::new(ctx.cfg.registry()?)),
        ScorerChoice::External(url) => Box::new(ExternalScorer::new(url.clone(), ctx.cfg.scorer_threshold, ctx.cfg.llm.retry.clone())?),
    })
}

fn ingest(ctx: &Context, input: &Path) -> Result<()> {
    let out = ctx.out(ctx.cfg.notes());
    if !Plan::new("ingest").input(input).output(&out).start(ctx)? {
        return Ok(());
    }
    let notes = ingest_notes(input)?;
    write_notes(&out, &notes)?;
    println!("ingested {} notes into {}", notes.len(), out.display());
    Ok(())
}

fn chunk(ctx: &Context) -> Result<()> {
    let (notes_path, truth) = (ctx.cfg.notes(), ctx.cfg.truth());
    let (out, gold) = (ctx.out(ctx.cfg.chunks()), ctx.cfg.gold());
    let has_truth = truth.exists();
    let mut plan = Plan::new("chunk").input(&notes_path).output(&out).note(format!(
        "max_chunk_chars={} min_chunk_chars={}",
        ctx.cfg.chunking.max_chunk_chars, ctx.cfg.chunking.min_chunk_chars
    ));
    if has_truth {
        plan = plan.input(&truth).output(&gold);
    }
    if !plan.start(ctx)? {
        return Ok(());
    }
    let notes = ingest_notes(&notes_path)?;
    let chunks = chunk_corpus(&notes, &ctx.cfg.chunking.build()?)?;
    write_chunks(&out, &chunks)?;
    println!("wrote {} chunks from {} notes to {}", chunks.len(), notes.len(), out.display());
    if has_truth {
        let judged = truth_to_gold(&read_truth(&truth)?, &chunks)?;
        write_gold(&gold, &judged)?;
        println!("wrote {} gold judgments to {}", judged.len(), gold.display());
    }
    Ok(())
}

fn expand(ctx: &Context, args: &LlmArgs) -> Result<()> {
    let out = ctx.out(ctx.cfg.query_sets_output());
    let mut plan = Plan::new("expand").output(&out).note(format!("{} queries per concept", ctx.cfg.query_count));
    if let Some(m) = &args.mock_llm {
        plan = plan.input(m);
    }
    if !plan.start(ctx)? {
        return Ok(());
    }
    let (registry, templates, client) = (ctx.cfg.registry()?, ctx.cfg.prompts()?, llm(ctx, args)?);
    let mut sets = Vec::with_capacity(ConceptId::COUNT);
    for def in registry.iter() {
        sets.push(expand_queries(def, client.as_ref(), &templates, ctx.cfg.query_count)?);
    }
    let sets = clinret::PerConcept::from_fn(|id| sets[id.ordinal()].clone());
    write_jsonl(&out, &query_sets_to_records(&sets))?;
    println!("wrote {} query sets to {}", ConceptId::COUNT, out.display());
    Ok(())
}

fn index(ctx: &Context) -> Result<()> {
    let (chunks_path, out) = (ctx.cfg.chunks(), ctx.out(ctx.cfg.index()));
    let embedder = ctx.cfg.embedder.build()?;
    let plan = Plan::new("index").input(&chunks_path).output(&out).note(format!("embedder {}", embedder.fingerprint()));
    if !plan.start(ctx)? {
        return Ok(());
    }
    let chunks = read_chunks(&chunks_path)?;
    let idx = build_index(&chunks, embedder.as_ref())?;
    idx.save(&out)?;
    println!("indexed {} chunks (dim {}) into {}", idx.len(), idx.dim(), out.display());
    Ok(())
}

fn load_index(ctx: &Context, embedder: &dyn Embedder) -> Result<(Vec<clinret::Chunk>, ChunkIndex)> {
    let chunks = read_chunks(&ctx.cfg.chunks())?;
    let idx = ChunkIndex::load_fresh(&ctx.cfg.index(), embedder, &chunks)?;
    Ok((chunks, idx))
}

fn harvest(ctx: &Context, per_concept_k: Option<usize>, gold_candidates: bool) -> Result<()> {
    let embedder = ctx.cfg.embedder.build()?;
    let k = per_concept_k.unwrap_or(ctx.cfg.per_concept_k);
    let (_, qs_origin) = ctx.cfg.query_sets()?;
    if gold_candidates {
        let out = ctx.out(ctx.cfg.gold_candidates());
        let plan = Plan::new("harvest --gold-candidates")
            .input(&ctx.cfg.chunks())
            .output(&out)
            .note(format!("query sets: {qs_origin}; seed {}", ctx.cfg.rng_seed));
        if !plan.start(ctx)? {
            return Ok(());
        }
        let chunks = read_chunks(&ctx.cfg.chunks())?;
        let (qs, _) = ctx.cfg.query_sets()?;
        let built = build_gold_candidates(&chunks, &qs, embedder.as_ref(), ctx.cfg.rng_seed)?;
        write_jsonl(&out, &built.candidates)?;
        for (patient, n) in &built.skipped {
            eprintln!("skipped patient {patient}: only {n} chunks");
        }
        println!("wrote {} gold candidates to {}", built.candidates.len(), out.display());
        return Ok(());
    }
    let out = ctx.out(ctx.cfg.candidates());
    let plan = Plan::new("harvest")
        .input(&ctx.cfg.chunks())
        .input(&ctx.cfg.index())
        .output(&out)
        .note(format!("per_concept_k={k}; query sets: {qs_origin}"));
    if !plan.start(ctx)? {
        return Ok(());
    }
    if k == 0 {
        return Err(Error::validation("--per-concept-k must be at least 1"));
    }
    let (_, idx) = load_index(ctx, embedder.as_ref())?;
    let (qs, _) = ctx.cfg.query_sets()?;
    let set = harvest_candidates(&idx, &qs, embedder.as_ref(), k)?;
    set.save(&out)?;
    println!("wrote {} candidate pairs to {}", set.pairs.len(), out.display());
    Ok(())
}

fn label(ctx: &Context, args: &LlmArgs) -> Result<()> {
    let (cands, chunks_path, checkpoint) = (ctx.cfg.candidates(), ctx.cfg.chunks(), ctx.cfg.checkpoint());
    let out = ctx.out(ctx.cfg.labels());
    let mut plan = Plan::new("label")
        .input(&cands)
        .input(&chunks_path)
        .output(&checkpoint)
        .output(&out)
        .note(format!(
            "parallel_requests={} batch={}",
            ctx.cfg.parallel_requests, ctx.cfg.label_batch_size
        ));
    if let Some(m) = &args.mock_llm {
        plan = plan.input(m);
    }
    if !plan.start(ctx)? {
        return Ok(());
    }
    let client = llm(ctx, args)?;
    let labels = run_labeling(
        &CandidateSet::load(&cands)?,
        &read_chunks(&chunks_path)?,
        &ctx.cfg.registry()?,
        client.as_ref(),
        &ctx.cfg.prompts()?,
        Some(&checkpoint),
        LabelingOptions {
            parallel_requests: ctx.cfg.parallel_requests,
            batch_size: ctx.cfg.label_batch_size,
        },
    )?;
    write_labels(&out, &labels)?;
    let positives = labels.iter().filter(|l| l.label).count();
    let filtered = labels.iter().filter(|l| l.provenance == Provenance::RegexFiltered).count();
    let verified = labels.iter().filter(|l| l.provenance == Provenance::SelfVerified).count();
    println!(
        "wrote {} labels ({positives} positive, {filtered} regex-filtered, {verified} self-verified) to {}",
        labels.len(),
        out.display()
    );
    Ok(())
}

fn emit_train(ctx: &Context, mode: EmitModeArg) -> Result<()> {
    let (labels, chunks) = (ctx.cfg.labels(), ctx.cfg.chunks());
    let out = ctx.out(ctx.cfg.training());
    if !Plan::new("emit-train").input(&labels).input(&chunks).output(&out).start(ctx)? {
        return Ok(());
    }
    let mode = match mode {
        EmitModeArg::Single => EmitMode::Single,
        EmitModeArg::Multi => EmitMode::Multi,
    };
    let summary = emit_training_set(&read_labels(&labels)?, &read_chunks(&chunks)?, mode, &out)?;
    println!("wrote {} training instances to {}", summary.written, out.display());
    if !summary.defaulted.is_empty() {
        eprintln!("{} (chunk, concept) pairs had no label and were written as false", summary.defaulted.len());
    }
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct PredictionsMeta {
    scorer: ScorerInfo,
    regime: Regime,
}

fn meta_path(predictions: &Path) -> PathBuf {
    predictions.with_extension("meta.json")
}

fn score(ctx: &Context, choice: &ScorerChoice) -> Result<()> {
    let chunks = ctx.cfg.chunks();
    let out = ctx.out(ctx.cfg.predictions());
    let s = scorer(ctx, choice)?;
    let plan = Plan::new("score")
        .input(&chunks)
        .output(&out)
        .output(&meta_path(&out))
        .note(format!("scorer {}", s.info().name));
    if !plan.start(ctx)? {
        return Ok(());
    }
    let preds = classify_corpus(s.as_ref(), &read_chunks(&chunks)?, ctx.cfg.parallel_requests)?;
    write_predictions(&out, &preds)?;
    write_json(
        &meta_path(&out),
        &PredictionsMeta {
            scorer: s.info(),
            regime: Regime::ClassifyAll,
        },
    )?;
    println!("wrote {} predictions to {}", preds.len(), out.display());
    Ok(())
}

fn ranked_all(ctx: &Context, embedder: &dyn Embedder, idx: &ChunkIndex, k: usize) -> Result<Vec<RankedList>> {
    let (qs, _) = ctx.cfg.query_sets()?;
    ConceptId::ALL
        .into_iter()
        .map(|id| rank_with_vectors(idx, id, &embed_queries(&qs[id], embedder)?, k))
        .collect()
}

fn eval(ctx: &Context, k: Option<usize>, baselines: bool) -> Result<()> {
    let gold_path = ctx.cfg.gold();
    let reports = ctx.out(ctx.cfg.reports());
    let preds_path = ctx.cfg.predictions();
    let latency_path = reports.join("latency.json");
    let mut plan = Plan::new("eval").input(&gold_path);
    plan = match k {
        Some(k) => plan.input(&ctx.cfg.chunks()).input(&ctx.cfg.index()).note(format!("regime top-k, k={k}")),
        None => plan.input(&preds_path).note("regime classify-all"),
    };
    for f in ["report.json", "comparison.txt", "comparison.csv", "per_patient.csv"] {
        plan = plan.output(&reports.join(f));
    }
    if baselines {
        plan = plan.note("with reference systems");
    }
    if !plan.start(ctx)? {
        return Ok(());
    }
    let gold = load_gold(&gold_path)?;
    let (report, predictions) = match k {
        Some(0) => return Err(Error::validation("--k must be at least 1")),
        Some(k) => {
            let embedder = ctx.cfg.embedder.build()?;
            let (_, idx) = load_index(ctx, embedder.as_ref())?;
            let preds = predictions_from_ranked(&ranked_all(ctx, embedder.as_ref(), &idx, k)?, k);
            (compute_report(&preds, &gold, &embedder.fingerprint(), Regime::TopK, Some(k))?, preds)
        }
        None => {
            let preds = read_predictions(&preds_path)?;
            let meta = meta_path(&preds_path);
            let (name, regime) = if meta.exists() {
                let m: PredictionsMeta = read_json(&meta)?;
                (m.scorer.name, m.regime)
            } else {
                ("predictions".to_owned(), Regime::ClassifyAll)
            };
            (compute_report(&preds, &gold, &name, regime, None)?, preds)
        }
    };
    let latency: Vec<LatencyReport> = if latency_path.exists() { vec![read_json(&latency_path)?] } else { Vec::new() };
    let rendered = render_comparison(std::slice::from_ref(&report), &latency, baselines)?;
    write_json(&reports.join("report.json"), &report)?;
    write_comparison(&rendered, &reports.join("comparison.txt"), &reports.join("comparison.csv"))?;

    let chunks_path = ctx.cfg.chunks();
    let mut per_patient = String::from("patient_id,concept,tp,fp,fn,tn\n");
    if chunks_path.exists() {
        for (patient, counts) in per_patient_breakdown(&predictions, &gold, &read_chunks(&chunks_path)?) {
            for (id, c) in counts.iter() {
                let _ = writeln!(per_patient, "{patient},{id},{},{},{},{}", c.tp, c.fp, c.fn_, c.tn);
            }
        }
    }
    write_atomic(&reports.join("per_patient.csv"), per_patient.as_bytes())?;
    print!("{}", rendered.text);
    Ok(())
}

fn sweep(ctx: &Context, ks: &[usize]) -> Result<()> {
    let reports = ctx.out(ctx.cfg.reports());
    let plan = Plan::new("sweep")
        .input(&ctx.cfg.gold())
        .input(&ctx.cfg.chunks())
        .input(&ctx.cfg.index())
        .output(&reports.join("sweep.txt"))
        .output(&reports.join("sweep.csv"))
        .note(format!("ks={ks:?}"));
    if !plan.start(ctx)? {
        return Ok(());
    }
    let max_k = *ks.iter().max().ok_or_else(|| Error::validation("--ks must not be empty"))?;
    let gold = load_gold(&ctx.cfg.gold())?;
    let embedder = ctx.cfg.embedder.build()?;
    let (_, idx) = load_index(ctx, embedder.as_ref())?;
    let ranked = ranked_all(ctx, embedder.as_ref(), &idx, max_k.max(1))?;
    let report = k_sweep_eval(&ranked, &gold, ks, &embedder.fingerprint())?;
    let rendered = render_sweep(&report);
    write_atomic(&reports.join("sweep.txt"), rendered.text.as_bytes())?;
    write_atomic(&reports.join("sweep.csv"), rendered.csv.as_bytes())?;
    print!("{}", rendered.text);
    Ok(())
}

fn bench(ctx: &Context, choice: &ScorerChoice) -> Result<()> {
    let reports = ctx.out(ctx.cfg.reports());
    let s = scorer(ctx, choice)?;
    let mut plan = Plan::new("bench")
        .input(&ctx.cfg.chunks())
        .note(format!("scorer {}; parallel_requests={}", s.info().name, ctx.cfg.parallel_requests));
    for f in ["latency.json", "latency_samples.csv", "latency.txt", "latency.csv"] {
        plan = plan.output(&reports.join(f));
    }
    if !plan.start(ctx)? {
        return Ok(());
    }
    let mut report = bench_latency(s.as_ref(), &read_chunks(&ctx.cfg.chunks())?, ctx.cfg.parallel_requests)?;
    let metrics = reports.join("report.json");
    if metrics.exists() {
        let m: MetricsReport = read_json(&metrics)?;
        if m.scorer == report.scorer {
            report = report.with_f1(m.overall.f1);
        }
    }
    let (text, csv) = render_latency(std::slice::from_ref(&report), true);
    write_json(&reports.join("latency.json"), &report)?;
    write_atomic(&reports.join("latency_samples.csv"), render_latency_samples(std::slice::from_ref(&report)).as_bytes())?;
    write_atomic(&reports.join("latency.txt"), text.as_bytes())?;
    write_atomic(&reports.join("latency.csv"), csv.as_bytes())?;
    print!("{text}");
    Ok(())
}

fn synth(ctx: &Context) -> Result<()> {
    let (out, truth) = (ctx.out(ctx.cfg.notes()), ctx.cfg.truth());
    let spec = ctx.cfg.synth.spec(ctx.cfg.rng_seed);
    let plan = Plan::new("synth").output(&out).output(&truth).note(format!(
        "{} patients x {} notes, seed {}, distractor_rate {}",
        spec.n_patients, spec.notes_per_patient, spec.rng_seed, spec.distractor_rate
    ));
    if !plan.start(ctx)? {
        return Ok(());
    }
    let (notes, planted) = generate_corpus(&spec, &ctx.cfg.templates()?)?;
    write_notes(&out, &notes)?;
    write_truth(&truth, &planted)?;
    println!("wrote {} notes to {} and {} planted mentions to {}", notes.len(), out.display(), planted.len(), truth.display());
    Ok(())
}
